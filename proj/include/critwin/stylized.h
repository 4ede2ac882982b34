// Copyright 2026 The Critwin Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Stylized linear-attention model of memorization versus reasoning.
//
//   f(k, i, j) = M_ij e_k + (u_j^T W2 u_i) W1 e_k
//
// One lookup matrix M_ij per training pair (memorization path) and two shared
// matrices W1, W2 (reasoning path). Targets are key embeddings:
// y_ijk = e_{pi_j(pi_i(k))}. Embeddings are fixed.
//
// Conventions:
//   G_e = E^T E is the K x K Gram of the key embeddings (columns of E), so
//   orthonormal keys give G_e = I and sigma_e = lambda_min(G_e).
//   L_ij = sum_k 0.5 |f(k,i,j) - y_ijk|^2 is the per-pair loss and the data
//   loss is its mean over training pairs.
//   m = mean_ij |M_ij|_F and r = |W1|_F |W2|_F.
//
// The flow is gradient flow on L with the M block preconditioned by |P|:
//   dM_ij/dt = -|P| grad_{M_ij} L = -grad_{M_ij} L_ij - |P| lambda M_ij,
//   dW/dt    = -grad_W L          = -grad_W mean_ij L_ij - lambda W.
// Its fixed points are the stationary points of L, the memorization rate is
// sigma_e and the reasoning rate c_r gamma^2 sigma_e.

#ifndef CRITWIN_STYLIZED_H_
#define CRITWIN_STYLIZED_H_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <vector>

#include "critwin/anchor_task.h"
#include "critwin/common.h"

namespace critwin {

inline constexpr int kMaxHessianDim = 16;

struct StylizedSpec {
  int d = 16;
  int num_keys = 4;
  int num_anchors = 4;
  double train_pair_fraction = 0.75;
  double gamma = 0.5;
  // Every anchor permutation is the identity, so all pairs share one
  // composition and the reasoning path alone can fit the data.
  bool shared_composition = false;
  uint64_t seed = 0;  // task permutations, split and embeddings
};

struct StylizedConfig {
  int d = 0;
  double gamma = 0.0;
  Matrix keys;     // d x K, column k is e_k
  Matrix anchors;  // d x M, column i is u_i
  std::vector<std::vector<int>> permutations;
  std::vector<AnchorPair> train_pairs;
  std::vector<Matrix> targets;  // per train pair, d x K

  int num_keys() const { return static_cast<int>(keys.cols()); }
  int num_anchors() const { return static_cast<int>(anchors.cols()); }
  int num_pairs() const { return static_cast<int>(train_pairs.size()); }
};

namespace internal {

inline Vector SymmetricEigenvalues(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(a, Eigen::EigenvaluesOnly);
  Check(solver.info() == Eigen::Success, "eigensolver failed");
  return solver.eigenvalues();
}

inline Matrix UnitColumns(int d, int n, Rng& rng) {
  Matrix m = GaussianMatrix(d, n, 1.0, rng);
  for (int c = 0; c < n; ++c) {
    const double norm = m.col(c).norm();
    Check(norm > 0.0, "embedding draw produced a zero vector");
    m.col(c) /= norm;
  }
  return m;
}

}  // namespace internal

inline Vector KeyGramEigenvalues(const StylizedConfig& c) {
  return internal::SymmetricEigenvalues(c.keys.transpose() * c.keys);
}

inline double SigmaE(const StylizedConfig& c) { return KeyGramEigenvalues(c).minCoeff(); }
inline double SigmaEMax(const StylizedConfig& c) { return KeyGramEigenvalues(c).maxCoeff(); }
inline double SigmaU(const StylizedConfig& c) {
  return internal::SymmetricEigenvalues(c.anchors.transpose() * c.anchors).minCoeff();
}

// Builds the per-pair targets and checks that both Gram matrices are
// positive definite.
inline StylizedConfig FinalizeStylizedConfig(StylizedConfig c) {
  Check(c.d >= 1, "stylized: d must be >= 1");
  Check(c.keys.rows() == c.d && c.anchors.rows() == c.d, "stylized: embeddings must have d rows");
  Check(c.num_keys() >= 2 && c.num_anchors() >= 2, "stylized: need K >= 2 and M >= 2");
  Check(static_cast<int>(c.permutations.size()) == c.num_anchors(),
        "stylized: one permutation per anchor");
  for (const auto& p : c.permutations) {
    Check(internal::IsPermutation(p, c.num_keys()), "stylized: permutation is not a bijection");
  }
  Check(!c.train_pairs.empty(), "stylized: no training pairs");
  Check(c.gamma >= 0.0, "stylized: gamma must be >= 0");
  const double tol = 1e-10;
  Check(SigmaE(c) > tol, "stylized: key Gram matrix is degenerate (need K <= d, independent keys)");
  Check(SigmaU(c) > tol,
        "stylized: anchor Gram matrix is degenerate (need M <= d, independent anchors)");
  c.targets.clear();
  for (const AnchorPair& p : c.train_pairs) {
    Check(p.first >= 0 && p.first < c.num_anchors() && p.second >= 0 &&
              p.second < c.num_anchors(),
          "stylized: pair index out of range");
    Matrix y(c.d, c.num_keys());
    for (int k = 0; k < c.num_keys(); ++k) {
      y.col(k) = c.keys.col(c.permutations[p.second][c.permutations[p.first][k]]);
    }
    c.targets.push_back(std::move(y));
  }
  return c;
}

// Task structure from the anchor generator, unit-norm Gaussian embeddings.
inline StylizedConfig MakeStylizedConfig(const StylizedSpec& spec) {
  TaskSpec ts;
  ts.num_keys = spec.num_keys;
  ts.num_anchors = spec.num_anchors;
  ts.train_pair_fraction = spec.train_pair_fraction;
  ts.seed = spec.seed;
  const AnchorTask task = GenerateAnchorTask(ts);
  StylizedConfig c;
  c.d = spec.d;
  c.gamma = spec.gamma;
  c.permutations = task.permutations;
  if (spec.shared_composition) {
    for (std::vector<int>& p : c.permutations) std::iota(p.begin(), p.end(), 0);
  }
  c.train_pairs = task.train_pairs;
  Rng rng = MakeRng(spec.seed, kStreamStylizedEmbeddings);
  c.keys = internal::UnitColumns(spec.d, spec.num_keys, rng);
  c.anchors = internal::UnitColumns(spec.d, spec.num_anchors, rng);
  return FinalizeStylizedConfig(std::move(c));
}

// Same task, caller-supplied embeddings (d x K keys, d x M anchors).
inline StylizedConfig WithEmbeddings(StylizedConfig c, Matrix keys, Matrix anchors) {
  c.keys = std::move(keys);
  c.anchors = std::move(anchors);
  c.d = static_cast<int>(c.keys.rows());
  return FinalizeStylizedConfig(std::move(c));
}

struct StylizedParams {
  std::vector<Matrix> m;  // one d x d matrix per training pair
  Matrix w1;
  Matrix w2;

  StylizedParams ZerosLike() const {
    StylizedParams z = *this;
    for (Matrix& x : z.m) x.setZero();
    z.w1.setZero();
    z.w2.setZero();
    return z;
  }
};

inline StylizedParams ZeroStylizedParams(const StylizedConfig& c) {
  StylizedParams p;
  p.m.assign(c.num_pairs(), Matrix::Zero(c.d, c.d));
  p.w1 = Matrix::Zero(c.d, c.d);
  p.w2 = Matrix::Zero(c.d, c.d);
  return p;
}

// Entries i.i.d. N(0, gamma^2 / d). W1 and W2 are drawn first, so they do not
// depend on the number of pairs.
inline StylizedParams InitStylized(const StylizedConfig& c, uint64_t seed) {
  Rng rng = MakeRng(seed, kStreamStylizedInit);
  const double stddev = c.gamma / std::sqrt(static_cast<double>(c.d));
  StylizedParams p;
  p.w1 = GaussianMatrix(c.d, c.d, stddev, rng);
  p.w2 = GaussianMatrix(c.d, c.d, stddev, rng);
  for (int q = 0; q < c.num_pairs(); ++q) p.m.push_back(GaussianMatrix(c.d, c.d, stddev, rng));
  return p;
}

// c_ij = u_j^T W2 u_i.
inline double Coupling(const StylizedConfig& c, const Matrix& w2, int i, int j) {
  Check(i >= 0 && i < c.num_anchors() && j >= 0 && j < c.num_anchors(),
        "coupling: anchor index out of range");
  return c.anchors.col(j).dot(w2 * c.anchors.col(i));
}

inline double Coupling(const StylizedConfig& c, const StylizedParams& p, int i, int j) {
  return Coupling(c, p.w2, i, j);
}

inline int PairIndex(const StylizedConfig& c, int i, int j) {
  const auto it = std::lower_bound(c.train_pairs.begin(), c.train_pairs.end(), AnchorPair{i, j});
  if (it == c.train_pairs.end() || !(*it == AnchorPair{i, j})) return -1;
  return static_cast<int>(it - c.train_pairs.begin());
}

// Pairs outside the training set have no lookup matrix and use the
// reasoning path alone.
inline Vector StylizedForward(const StylizedConfig& c, const StylizedParams& p, int k, int i, int j) {
  Check(k >= 0 && k < c.num_keys(), "stylized_forward: key index out of range");
  const double coupling = Coupling(c, p, i, j);
  Vector out = coupling * (p.w1 * c.keys.col(k));
  const int q = PairIndex(c, i, j);
  if (q >= 0) out += p.m[q] * c.keys.col(k);
  return out;
}

struct StylizedLossGrad {
  double loss = 0.0;
  double data_loss = 0.0;
  StylizedParams grads;
};

// L = mean_pairs sum_k 0.5 |f - y|^2 + (lambda / 2) |theta|^2, with exact
// gradients. With per_pair_scale the M-block gradients (data and decay) are
// multiplied by |P|, the flow's preconditioner.
inline StylizedLossGrad ComputeStylizedLossGrad(const StylizedConfig& c, const StylizedParams& p,
                                                double lambda, bool per_pair_scale = false) {
  Check(c.num_pairs() > 0, "stylized_loss_grad: empty data");
  const double inv_pairs = 1.0 / c.num_pairs();
  StylizedLossGrad out;
  out.grads = p.ZerosLike();
  const Matrix w1e = p.w1 * c.keys;
  double data = 0.0;
  for (int q = 0; q < c.num_pairs(); ++q) {
    const AnchorPair& pair = c.train_pairs[q];
    const double coupling = Coupling(c, p.w2, pair.first, pair.second);
    const Matrix residual = p.m[q] * c.keys + coupling * w1e - c.targets[q];
    data += 0.5 * residual.squaredNorm();
    const Matrix g = residual * c.keys.transpose();
    out.grads.m[q] = (per_pair_scale ? 1.0 : inv_pairs) * g;
    out.grads.w1 += (coupling * inv_pairs) * g;
    const double dcoupling = (g.array() * p.w1.array()).sum() * inv_pairs;
    out.grads.w2 += dcoupling * (c.anchors.col(pair.second) * c.anchors.col(pair.first).transpose());
  }
  out.data_loss = data * inv_pairs;
  double norm = p.w1.squaredNorm() + p.w2.squaredNorm();
  for (const Matrix& x : p.m) norm += x.squaredNorm();
  out.loss = out.data_loss + 0.5 * lambda * norm;
  if (lambda != 0.0) {
    const double m_decay = per_pair_scale ? lambda * c.num_pairs() : lambda;
    for (int q = 0; q < c.num_pairs(); ++q) out.grads.m[q] += m_decay * p.m[q];
    out.grads.w1 += lambda * p.w1;
    out.grads.w2 += lambda * p.w2;
  }
  return out;
}

struct OrderParams {
  double m = 0.0;
  double r = 0.0;
};

inline OrderParams ComputeOrderParams(const StylizedParams& p) {
  OrderParams o;
  for (const Matrix& x : p.m) o.m += x.norm();
  if (!p.m.empty()) o.m /= static_cast<double>(p.m.size());
  o.r = p.w1.norm() * p.w2.norm();
  return o;
}

// lambda(t) = lambda on [start, end), zero elsewhere, in flow time.
struct FlowSchedule {
  double lambda = 0.0;
  double start = 0.0;
  double end = 0.0;

  static FlowSchedule None() { return {}; }
  static FlowSchedule Constant(double lambda) {
    return {lambda, 0.0, std::numeric_limits<double>::infinity()};
  }
  static FlowSchedule Window(double lambda, double start, double end) {
    return {lambda, start, end};
  }
  double At(double t) const { return (t >= start && t < end) ? lambda : 0.0; }
};

struct FlowOptions {
  double dt = 0.05;          // upper bound; also capped by 0.1 / max(lambda_max(G_e), |P| lambda)
  double t_end = 100.0;
  double sample_every = 1.0;
  bool freeze_m = false;
  bool freeze_w1 = false;
  bool freeze_w2 = false;
  double blowup = 1e6;
  int max_halvings = 8;
};

struct OrderParamTrajectory {
  std::vector<double> times;
  std::vector<double> m;
  std::vector<double> r;
  std::vector<double> loss;    // data loss
  std::vector<double> lambda;
  double dt = 0.0;
  bool blew_up = false;
};

struct FlowResult {
  OrderParamTrajectory trajectory;
  StylizedParams final_params;
};

inline double FlowStepSize(const StylizedConfig& c, const FlowSchedule& s, double user_dt) {
  Check(user_dt > 0.0, "flow: dt must be > 0");
  const double stiff = std::max(SigmaEMax(c), s.lambda * c.num_pairs());
  return std::min(user_dt, 0.1 / stiff);
}

// Explicit Euler on the block-preconditioned flow, starting from `init`.
inline FlowResult IntegrateFlow(const StylizedConfig& c, const StylizedParams& init,
                                const FlowSchedule& schedule, const FlowOptions& opt) {
  Check(opt.t_end >= 0.0, "flow: t_end must be >= 0");
  Check(opt.sample_every > 0.0, "flow: sample_every must be > 0");
  double dt = FlowStepSize(c, schedule, opt.dt);
  FlowResult result;
  OrderParamTrajectory& traj = result.trajectory;
  StylizedParams p = init;

  auto record = [&](double t, double data_loss) {
    const OrderParams o = ComputeOrderParams(p);
    traj.times.push_back(t);
    traj.m.push_back(o.m);
    traj.r.push_back(o.r);
    traj.loss.push_back(data_loss);
    traj.lambda.push_back(schedule.At(t));
  };

  double t = 0.0;
  double next_sample = 0.0;
  int halvings = 0;
  while (true) {
    const double lambda = schedule.At(t);
    const StylizedLossGrad lg = ComputeStylizedLossGrad(c, p, lambda, /*per_pair_scale=*/true);
    if (t >= next_sample - 1e-9 * opt.sample_every) {
      record(t, lg.data_loss);
      next_sample += opt.sample_every;
    }
    if (t >= opt.t_end - 1e-12 * std::max(1.0, opt.t_end)) break;
    const double h = std::min(dt, opt.t_end - t);
    StylizedParams next = p;
    if (!opt.freeze_m) {
      for (int q = 0; q < c.num_pairs(); ++q) next.m[q] -= h * lg.grads.m[q];
    }
    if (!opt.freeze_w1) next.w1 -= h * lg.grads.w1;
    if (!opt.freeze_w2) next.w2 -= h * lg.grads.w2;
    const OrderParams o = ComputeOrderParams(next);
    if (!std::isfinite(o.m) || !std::isfinite(o.r) || o.m > opt.blowup || o.r > opt.blowup) {
      if (halvings < opt.max_halvings) {
        dt *= 0.5;
        ++halvings;
        continue;
      }
      traj.blew_up = true;
      break;
    }
    p = std::move(next);
    t += h;
  }
  traj.dt = dt;
  result.final_params = std::move(p);
  return result;
}

inline FlowResult IntegrateFlow(const StylizedConfig& c, const FlowSchedule& schedule,
                                const FlowOptions& opt, uint64_t seed) {
  return IntegrateFlow(c, InitStylized(c, seed), schedule, opt);
}

// Rate of exp approach to `plateau`: least-squares slope of
// log |plateau - x(t)| over samples whose approach fraction
// (x - x0) / (plateau - x0) lies in [band_lo, band_hi].
inline double FitRate(const std::vector<double>& times, const std::vector<double>& values,
                      double plateau, double band_lo = 0.0, double band_hi = 0.5) {
  Check(times.size() == values.size() && !times.empty(), "fit_rate: malformed trajectory");
  Check(0.0 <= band_lo && band_lo < band_hi && band_hi < 1.0, "fit_rate: bad approach band");
  const double gap0 = plateau - values.front();
  Check(gap0 != 0.0, "fit_rate: trajectory starts at the plateau");
  const double dir = gap0 > 0 ? 1.0 : -1.0;
  std::vector<double> ts;
  std::vector<double> ys;
  double prev = values.front();
  for (size_t n = 0; n < values.size(); ++n) {
    const double frac = (values[n] - values.front()) / gap0;
    if (frac < band_lo) {
      prev = values[n];
      continue;
    }
    if (frac > band_hi) break;
    Check(dir * (values[n] - prev) >= -1e-12 * std::abs(gap0),
          "fit_rate: slice is not monotone toward the plateau");
    prev = values[n];
    ts.push_back(times[n]);
    ys.push_back(std::log(dir * (plateau - values[n])));
  }
  Check(ts.size() >= 3, "fit_rate: fewer than 3 samples in the approach band");
  const double n = static_cast<double>(ts.size());
  double mt = 0, my = 0;
  for (size_t q = 0; q < ts.size(); ++q) {
    mt += ts[q];
    my += ys[q];
  }
  mt /= n;
  my /= n;
  double sxy = 0, sxx = 0;
  for (size_t q = 0; q < ts.size(); ++q) {
    sxy += (ts[q] - mt) * (ys[q] - my);
    sxx += (ts[q] - mt) * (ts[q] - mt);
  }
  Check(sxx > 0.0, "fit_rate: degenerate time grid");
  return -sxy / sxx;
}

// c_r = (1 / (d |P|)) sum_{(i,j) in P} |u_i|^2 |u_j|^2.
inline double CouplingConstant(const StylizedConfig& c) {
  double total = 0.0;
  for (const AnchorPair& p : c.train_pairs) {
    total += c.anchors.col(p.first).squaredNorm() * c.anchors.col(p.second).squaredNorm();
  }
  return total / (static_cast<double>(c.d) * c.num_pairs());
}

// S(W2) = mean over training pairs of c_ij^2.
inline double CouplingMoment(const StylizedConfig& c, const Matrix& w2) {
  double total = 0.0;
  for (const AnchorPair& p : c.train_pairs) {
    const double v = Coupling(c, w2, p.first, p.second);
    total += v * v;
  }
  return total / c.num_pairs();
}

inline double ExpectedCouplingMoment(const StylizedConfig& c) {
  return c.gamma * c.gamma * CouplingConstant(c);
}

struct MonteCarloEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  int64_t samples = 0;
};

inline MonteCarloEstimate CouplingMomentMc(const StylizedConfig& c, int64_t n_samples, uint64_t seed) {
  Check(n_samples >= 1000, "coupling_moment_mc: need at least 1000 samples");
  Rng rng = MakeRng(seed, kStreamCouplingMc);
  const double stddev = c.gamma / std::sqrt(static_cast<double>(c.d));
  double sum = 0.0, sum_sq = 0.0;
  for (int64_t s = 0; s < n_samples; ++s) {
    const double v = CouplingMoment(c, GaussianMatrix(c.d, c.d, stddev, rng));
    sum += v;
    sum_sq += v * v;
  }
  MonteCarloEstimate e;
  e.samples = n_samples;
  e.mean = sum / n_samples;
  const double var = std::max(0.0, sum_sq / n_samples - e.mean * e.mean);
  e.std_error = std::sqrt(var * n_samples / (n_samples - 1.0) / n_samples);
  return e;
}

// Explicit G_e kron I_d (size K d), and its spectrum in ascending order.
inline Matrix MemorizationHessian(const StylizedConfig& c) {
  Check(c.d <= kMaxHessianDim, "memorization_hessian: d exceeds the explicit-construction guard");
  const Matrix g = c.keys.transpose() * c.keys;
  const int k = c.num_keys();
  Matrix h = Matrix::Zero(k * c.d, k * c.d);
  for (int a = 0; a < k; ++a) {
    for (int b = 0; b < k; ++b) {
      h.block(a * c.d, b * c.d, c.d, c.d) = g(a, b) * Matrix::Identity(c.d, c.d);
    }
  }
  return h;
}

inline std::vector<double> MemorizationHessianEigenvalues(const StylizedConfig& c) {
  const Vector ev = internal::SymmetricEigenvalues(MemorizationHessian(c));
  return {ev.data(), ev.data() + ev.size()};
}

struct HalfTimes {
  double t_m = 0.0;
  double t_r = 0.0;
};

// Flow-time half-completion times log 2 / mu_m and log 2 / mu_r.
inline HalfTimes ComputeHalfTimes(double gamma, double sigma_e, double c_r) {
  Check(sigma_e > 0.0 && c_r > 0.0, "half_times: sigma_e and c_r must be > 0");
  Check(gamma > 0.0, "half_times: gamma must be > 0");
  return {std::numbers::ln2 / sigma_e, std::numbers::ln2 / (c_r * gamma * gamma * sigma_e)};
}

inline HalfTimes ComputeHalfTimes(double gamma, const StylizedConfig& c) {
  return ComputeHalfTimes(gamma, SigmaE(c), CouplingConstant(c));
}

struct WindowPrediction {
  double sigma_e = 0.0;
  double sigma_u = 0.0;
  double c_r = 0.0;
  double delta = 0.0;
  double mu_m = 0.0;
  double mu_r = 0.0;
  double t1_steps = 0.0;
  double t2_steps = 0.0;
  bool t2_clamped = false;
};

// t1 = log(1/delta) / (eta sigma_e), t2 = log(1/delta) / (eta c_r gamma^2 sigma_e),
// with t2 clamped to total_steps (when positive). eta = 1 gives flow time.
inline WindowPrediction PredictWindow(double gamma, double eta, double delta,
                                      const StylizedConfig& c, double total_steps = 0.0) {
  Check(delta > 0.0 && delta < 0.5, "predict_window: delta must lie in (0, 1/2)");
  Check(eta > 0.0 && gamma > 0.0, "predict_window: eta and gamma must be > 0");
  WindowPrediction w;
  w.sigma_e = SigmaE(c);
  w.sigma_u = SigmaU(c);
  Check(w.sigma_e > 1e-10, "predict_window: degenerate key Gram matrix");
  w.c_r = CouplingConstant(c);
  w.delta = delta;
  w.mu_m = w.sigma_e;
  w.mu_r = w.c_r * gamma * gamma * w.sigma_e;
  const double log_inv = std::log(1.0 / delta);
  w.t1_steps = log_inv / (eta * w.mu_m);
  w.t2_steps = log_inv / (eta * w.mu_r);
  if (total_steps > 0.0 && w.t2_steps > total_steps) {
    w.t2_steps = total_steps;
    w.t2_clamped = true;
  }
  return w;
}

struct BasinOptions {
  double lambda = 0.1;
  double delta = 0.25;
  double t_end = 400.0;     // finite training horizon T, flow time
  int n_seeds = 24;
  double epsilon = 0.1;
  double r_plateau = 0.0;   // <= 0: measure with ReferencePlateau
  FlowOptions flow;         // dt and sampling; t_end is overridden
};

struct BasinCell {
  double gamma = 0.0;
  int successes = 0;
  int n_seeds = 0;
  double fraction = 0.0;
  double window_start = 0.0;
  double window_end = 0.0;
  bool window_clamped = false;
  double r_plateau = 0.0;
  std::vector<double> final_r;
};

namespace internal {

inline FlowResult BasinRun(StylizedConfig c, double gamma, const BasinOptions& opt, double t_end,
                           uint64_t seed, WindowPrediction* window) {
  c.gamma = gamma;
  const WindowPrediction w = PredictWindow(gamma, 1.0, opt.delta, c, t_end);
  if (window != nullptr) *window = w;
  FlowOptions fo = opt.flow;
  fo.t_end = t_end;
  fo.sample_every = t_end > 0.0 ? t_end : 1.0;
  const FlowSchedule schedule =
      FlowSchedule::Window(opt.lambda, std::min(w.t1_steps, t_end), w.t2_steps);
  return IntegrateFlow(c, schedule, fo, seed);
}

}  // namespace internal

// Final r of a reference successful run: the same windowed protocol at
// gamma = 1, seed 0, integrated to 4 T so that it has settled.
inline double ReferencePlateau(const StylizedConfig& c, const BasinOptions& opt) {
  const FlowResult res = internal::BasinRun(c, 1.0, opt, 4.0 * opt.t_end, 0, nullptr);
  Check(!res.trajectory.blew_up, "reference plateau run blew up");
  return res.trajectory.r.back();
}

inline std::vector<BasinCell> BasinMc(const StylizedConfig& base, const std::vector<double>& gammas,
                                      const BasinOptions& opt) {
  Check(opt.n_seeds >= 10, "basin_mc: need at least 10 seeds");
  Check(!gammas.empty(), "basin_mc: empty gamma list");
  Check(opt.t_end > 0.0, "basin_mc: horizon must be > 0");
  const double plateau = opt.r_plateau > 0.0 ? opt.r_plateau : ReferencePlateau(base, opt);
  std::vector<BasinCell> cells;
  for (double gamma : gammas) {
    BasinCell cell;
    cell.gamma = gamma;
    cell.n_seeds = opt.n_seeds;
    cell.r_plateau = plateau;
    for (int s = 0; s < opt.n_seeds; ++s) {
      WindowPrediction w;
      const FlowResult res =
          internal::BasinRun(base, gamma, opt, opt.t_end, static_cast<uint64_t>(s), &w);
      cell.window_start = std::min(w.t1_steps, opt.t_end);
      cell.window_end = w.t2_steps;
      cell.window_clamped = w.t2_clamped;
      const double r = res.trajectory.r.back();
      cell.final_r.push_back(r);
      if (!res.trajectory.blew_up && r >= (1.0 - opt.epsilon) * plateau) ++cell.successes;
    }
    cell.fraction = static_cast<double>(cell.successes) / cell.n_seeds;
    cells.push_back(std::move(cell));
  }
  return cells;
}

}  // namespace critwin

#endif  // CRITWIN_STYLIZED_H_
