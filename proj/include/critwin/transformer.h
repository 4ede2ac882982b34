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

// A small pre-norm transformer classifier with hand-written backward pass.
//
// Each block is x += Attn(LN1(x)); x += MLP(LN2(x)) with full (unmasked)
// softmax attention and an exact-erf GELU MLP of width mlp_mult * d. A final
// layer norm and an untied readout produce V logits from the last sequence
// position only. Linear maps are stored out x in (y = W x), so W_O W_V and
// W_Q^T W_K read the same as the usual column-vector formulas.
//
// The last block only evaluates the final query position: the other
// positions of the last block never reach the logits, and skipping them
// leaves the loss and every gradient unchanged.

#ifndef CRITWIN_TRANSFORMER_H_
#define CRITWIN_TRANSFORMER_H_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "critwin/anchor_task.h"
#include "critwin/common.h"

namespace critwin {

inline constexpr int kSeqLen = 3;
inline constexpr double kLayerNormEps = 1e-5;
inline constexpr int kCheckpointVersion = 1;

struct Arch {
  int n_layers = 2;
  int d_model = 64;
  int n_heads = 2;
  int mlp_mult = 4;
  int vocab = 24;
  int seq_len = kSeqLen;
  double init_scale = 0.8;  // gamma

  int head_dim() const { return d_model / n_heads; }
  int mlp_width() const { return mlp_mult * d_model; }
  friend bool operator==(const Arch&, const Arch&) = default;
};

inline void ValidateArch(const Arch& arch) {
  Check(arch.n_layers >= 1, "arch: n_layers must be >= 1");
  Check(arch.d_model >= 1 && arch.n_heads >= 1, "arch: d_model and n_heads must be positive");
  Check(arch.d_model % arch.n_heads == 0, "arch: d_model must be divisible by n_heads");
  Check(arch.mlp_mult >= 1, "arch: mlp_mult must be >= 1");
  Check(arch.vocab >= 2, "arch: vocab must be >= 2");
  Check(arch.seq_len == kSeqLen, "arch: seq_len must be 3 for the supported tasks");
  Check(arch.init_scale >= 0.0, "arch: init_scale must be >= 0");
}

// Weight decay applies to kWeight tensors only.
enum class TensorKind { kEmbedding, kWeight, kBias, kNorm };

inline std::string_view TensorKindName(TensorKind kind) {
  switch (kind) {
    case TensorKind::kEmbedding: return "embedding";
    case TensorKind::kWeight: return "weight";
    case TensorKind::kBias: return "bias";
    case TensorKind::kNorm: return "norm";
  }
  return "unknown";
}

inline TensorKind ParseTensorKind(std::string_view name) {
  if (name == "embedding") return TensorKind::kEmbedding;
  if (name == "weight") return TensorKind::kWeight;
  if (name == "bias") return TensorKind::kBias;
  if (name == "norm") return TensorKind::kNorm;
  throw Error("unknown tensor kind '" + std::string(name) + "'");
}

struct Tensor {
  std::string name;
  TensorKind kind = TensorKind::kWeight;
  Matrix value;
};

// Per-layer tensor slots, in storage order.
enum LayerSlot : int {
  kLn1Gain, kLn1Bias,
  kWq, kBq, kWk, kBk, kWv, kBv, kWo, kBo,
  kLn2Gain, kLn2Bias,
  kWin, kBin, kWout, kBout,
  kNumLayerSlots
};

// The full parameter set; gradients use the same type. Tensor names are the
// contract for selective decay, diagnostics and checkpoints.
class ModelParams {
 public:
  ModelParams() = default;

  // Builds zero-valued tensors of the right shapes (gains are zero too).
  explicit ModelParams(const Arch& arch) : arch_(arch) {
    ValidateArch(arch);
    const int d = arch.d_model;
    const int w = arch.mlp_width();
    Add("token_embedding", TensorKind::kEmbedding, arch.vocab, d);
    Add("position_embedding", TensorKind::kEmbedding, arch.seq_len, d);
    for (int l = 0; l < arch.n_layers; ++l) {
      const std::string p = "layers." + std::to_string(l) + ".";
      Add(p + "ln1.gain", TensorKind::kNorm, 1, d);
      Add(p + "ln1.bias", TensorKind::kNorm, 1, d);
      Add(p + "attn.w_q", TensorKind::kWeight, d, d);
      Add(p + "attn.b_q", TensorKind::kBias, 1, d);
      Add(p + "attn.w_k", TensorKind::kWeight, d, d);
      Add(p + "attn.b_k", TensorKind::kBias, 1, d);
      Add(p + "attn.w_v", TensorKind::kWeight, d, d);
      Add(p + "attn.b_v", TensorKind::kBias, 1, d);
      Add(p + "attn.w_o", TensorKind::kWeight, d, d);
      Add(p + "attn.b_o", TensorKind::kBias, 1, d);
      Add(p + "ln2.gain", TensorKind::kNorm, 1, d);
      Add(p + "ln2.bias", TensorKind::kNorm, 1, d);
      Add(p + "mlp.w_in", TensorKind::kWeight, w, d);
      Add(p + "mlp.b_in", TensorKind::kBias, 1, w);
      Add(p + "mlp.w_out", TensorKind::kWeight, d, w);
      Add(p + "mlp.b_out", TensorKind::kBias, 1, d);
    }
    Add("ln_f.gain", TensorKind::kNorm, 1, d);
    Add("ln_f.bias", TensorKind::kNorm, 1, d);
    Add("unembed.weight", TensorKind::kWeight, arch.vocab, d);
    Add("unembed.bias", TensorKind::kBias, 1, arch.vocab);
  }

  const Arch& arch() const { return arch_; }
  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  int size() const { return static_cast<int>(tensors_.size()); }

  Matrix& token_embedding() { return tensors_[0].value; }
  const Matrix& token_embedding() const { return tensors_[0].value; }
  Matrix& position_embedding() { return tensors_[1].value; }
  const Matrix& position_embedding() const { return tensors_[1].value; }
  Matrix& layer(int l, LayerSlot slot) { return tensors_[LayerIndex(l, slot)].value; }
  const Matrix& layer(int l, LayerSlot slot) const { return tensors_[LayerIndex(l, slot)].value; }
  Matrix& final_gain() { return tensors_[FinalIndex(0)].value; }
  const Matrix& final_gain() const { return tensors_[FinalIndex(0)].value; }
  Matrix& final_bias() { return tensors_[FinalIndex(1)].value; }
  const Matrix& final_bias() const { return tensors_[FinalIndex(1)].value; }
  Matrix& unembed() { return tensors_[FinalIndex(2)].value; }
  const Matrix& unembed() const { return tensors_[FinalIndex(2)].value; }
  Matrix& unembed_bias() { return tensors_[FinalIndex(3)].value; }
  const Matrix& unembed_bias() const { return tensors_[FinalIndex(3)].value; }

  const Tensor& Find(std::string_view name) const {
    for (const Tensor& t : tensors_) {
      if (t.name == name) return t;
    }
    throw Error("no tensor named '" + std::string(name) + "'");
  }
  Tensor& Find(std::string_view name) {
    return const_cast<Tensor&>(static_cast<const ModelParams&>(*this).Find(name));
  }

  ModelParams ZerosLike() const {
    ModelParams out = *this;
    for (Tensor& t : out.tensors_) t.value.setZero();
    return out;
  }

  int64_t NumScalars() const {
    int64_t n = 0;
    for (const Tensor& t : tensors_) n += t.value.size();
    return n;
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    if (!(a.arch_ == b.arch_) || a.tensors_.size() != b.tensors_.size()) return false;
    for (size_t i = 0; i < a.tensors_.size(); ++i) {
      const Tensor& x = a.tensors_[i];
      const Tensor& y = b.tensors_[i];
      if (x.name != y.name || x.kind != y.kind || x.value.rows() != y.value.rows() ||
          x.value.cols() != y.value.cols() || x.value != y.value) {
        return false;
      }
    }
    return true;
  }

 private:
  int LayerIndex(int l, LayerSlot slot) const { return 2 + l * kNumLayerSlots + slot; }
  int FinalIndex(int i) const { return 2 + arch_.n_layers * kNumLayerSlots + i; }
  void Add(std::string name, TensorKind kind, int rows, int cols) {
    tensors_.push_back({std::move(name), kind, Matrix::Zero(rows, cols)});
  }

  Arch arch_;
  std::vector<Tensor> tensors_;
};

// W_ij ~ N(0, gamma^2 / d_in) for every weight and embedding matrix (d_in is
// the column count: the input width of a linear map, d for an embedding
// table); biases and norm offsets zero, norm gains one.
inline ModelParams InitParams(const Arch& arch, uint64_t seed) {
  ModelParams params(arch);
  Rng rng = MakeRng(seed, kStreamModelInit);
  for (Tensor& t : params.tensors()) {
    switch (t.kind) {
      case TensorKind::kWeight:
      case TensorKind::kEmbedding: {
        const double stddev =
            arch.init_scale / std::sqrt(static_cast<double>(t.value.cols()));
        t.value = GaussianMatrix(t.value.rows(), t.value.cols(), stddev, rng);
        break;
      }
      case TensorKind::kBias:
        t.value.setZero();
        break;
      case TensorKind::kNorm:
        if (t.name.ends_with(".gain")) {
          t.value.setOnes();
        } else {
          t.value.setZero();
        }
        break;
    }
  }
  return params;
}

using Batch = std::span<const Example>;

namespace internal {

inline constexpr double kInvSqrt2 = 0.70710678118654752440;

inline double Gelu(double z) {
  return 0.5 * z * (1.0 + std::erf(z * kInvSqrt2));
}

inline double GeluGrad(double z) {
  const double cdf = 0.5 * (1.0 + std::erf(z * kInvSqrt2));
  const double pdf = std::exp(-0.5 * z * z) * kInvSqrt2 * std::numbers::inv_sqrtpi;
  return cdf + z * pdf;
}

struct LayerNormCache {
  Matrix xhat;
  Vector rstd;
};

inline Matrix LayerNormForward(const Matrix& x, const Matrix& gain, const Matrix& bias,
                               LayerNormCache* cache) {
  const int d = static_cast<int>(x.cols());
  cache->xhat.resize(x.rows(), d);
  cache->rstd.resize(x.rows());
  for (int r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    cache->rstd(r) = rstd;
    cache->xhat.row(r) = (x.row(r).array() - mean) * rstd;
  }
  Matrix y = cache->xhat.array().rowwise() * gain.row(0).array();
  y.rowwise() += bias.row(0);
  return y;
}

// Returns dL/dx; accumulates dL/dgain and dL/dbias.
inline Matrix LayerNormBackward(const Matrix& dy, const Matrix& gain,
                                const LayerNormCache& cache, Matrix* dgain, Matrix* dbias) {
  dgain->row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  dbias->row(0) += dy.colwise().sum();
  const Matrix dxhat = dy.array().rowwise() * gain.row(0).array();
  Matrix dx(dy.rows(), dy.cols());
  for (int r = 0; r < dy.rows(); ++r) {
    const double mean_dxhat = dxhat.row(r).mean();
    const double mean_dxhat_xhat = dxhat.row(r).dot(cache.xhat.row(r)) / dy.cols();
    dx.row(r) = cache.rstd(r) * (dxhat.row(r).array() - mean_dxhat -
                                 cache.xhat.row(r).array() * mean_dxhat_xhat);
  }
  return dx;
}

inline void AddBias(Matrix& y, const Matrix& bias) { y.rowwise() += bias.row(0); }

struct LayerCache {
  int num_queries = 0;  // query positions per example (the last ones)
  LayerNormCache ln1;
  Matrix h;        // LN1 output, all rows
  Matrix q, k, v;  // q: query rows only
  std::vector<double> probs;  // [batch][head][query][key]
  Matrix attn;     // concatenated head outputs, query rows
  LayerNormCache ln2;
  Matrix h2, z, g;
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  LayerNormCache ln_f;
  Matrix hf;
  Matrix logits;
};

inline int QueryRow(int example, int query, int num_queries, int seq_len) {
  return example * seq_len + (seq_len - num_queries) + query;
}

inline Matrix ForwardImpl(const ModelParams& params, Batch batch, ForwardCache* cache) {
  const Arch& arch = params.arch();
  const int b = static_cast<int>(batch.size());
  const int s = arch.seq_len;
  const int d = arch.d_model;
  const int nh = arch.n_heads;
  const int hd = arch.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Matrix x(b * s, d);
  for (int e = 0; e < b; ++e) {
    for (int p = 0; p < s; ++p) {
      const int tok = batch[e].tokens[p];
      Check(tok >= 0 && tok < arch.vocab, "forward: token id out of vocabulary");
      x.row(e * s + p) = params.token_embedding().row(tok) + params.position_embedding().row(p);
    }
  }

  cache->layers.assign(arch.n_layers, LayerCache{});
  for (int l = 0; l < arch.n_layers; ++l) {
    LayerCache& c = cache->layers[l];
    const int nq = (l == arch.n_layers - 1) ? 1 : s;
    c.num_queries = nq;
    c.h = LayerNormForward(x, params.layer(l, kLn1Gain), params.layer(l, kLn1Bias), &c.ln1);
    c.k = c.h * params.layer(l, kWk).transpose();
    AddBias(c.k, params.layer(l, kBk));
    c.v = c.h * params.layer(l, kWv).transpose();
    AddBias(c.v, params.layer(l, kBv));
    Matrix hq(b * nq, d);
    Matrix x_sel(b * nq, d);
    for (int e = 0; e < b; ++e) {
      for (int qi = 0; qi < nq; ++qi) {
        const int row = QueryRow(e, qi, nq, s);
        hq.row(e * nq + qi) = c.h.row(row);
        x_sel.row(e * nq + qi) = x.row(row);
      }
    }
    c.q = hq * params.layer(l, kWq).transpose();
    AddBias(c.q, params.layer(l, kBq));

    c.probs.assign(static_cast<size_t>(b) * nh * nq * s, 0.0);
    c.attn = Matrix::Zero(b * nq, d);
    for (int e = 0; e < b; ++e) {
      for (int h = 0; h < nh; ++h) {
        for (int qi = 0; qi < nq; ++qi) {
          double* p = &c.probs[((static_cast<size_t>(e) * nh + h) * nq + qi) * s];
          const auto qrow = c.q.row(e * nq + qi).segment(h * hd, hd);
          double max_score = -std::numeric_limits<double>::infinity();
          for (int kj = 0; kj < s; ++kj) {
            p[kj] = scale * qrow.dot(c.k.row(e * s + kj).segment(h * hd, hd));
            max_score = std::max(max_score, p[kj]);
          }
          double total = 0.0;
          for (int kj = 0; kj < s; ++kj) {
            p[kj] = std::exp(p[kj] - max_score);
            total += p[kj];
          }
          auto out = c.attn.row(e * nq + qi).segment(h * hd, hd);
          for (int kj = 0; kj < s; ++kj) {
            p[kj] /= total;
            out += p[kj] * c.v.row(e * s + kj).segment(h * hd, hd);
          }
        }
      }
    }
    Matrix o = c.attn * params.layer(l, kWo).transpose();
    AddBias(o, params.layer(l, kBo));
    Matrix x_mid = x_sel + o;

    c.h2 = LayerNormForward(x_mid, params.layer(l, kLn2Gain), params.layer(l, kLn2Bias), &c.ln2);
    c.z = c.h2 * params.layer(l, kWin).transpose();
    AddBias(c.z, params.layer(l, kBin));
    c.g = c.z.unaryExpr([](double v) { return Gelu(v); });
    Matrix mlp = c.g * params.layer(l, kWout).transpose();
    AddBias(mlp, params.layer(l, kBout));
    x = x_mid + mlp;
    Check(x.allFinite(), "forward: non-finite activations in layer " + std::to_string(l));
  }

  cache->hf = LayerNormForward(x, params.final_gain(), params.final_bias(), &cache->ln_f);
  Matrix logits = cache->hf * params.unembed().transpose();
  AddBias(logits, params.unembed_bias());
  Check(logits.allFinite(), "forward: non-finite logits");
  return logits;
}

}  // namespace internal

// Logits (B x V) read at the final sequence position.
inline Matrix Forward(const ModelParams& params, Batch batch) {
  internal::ForwardCache cache;
  return internal::ForwardImpl(params, batch, &cache);
}

struct LossAndGrad {
  double loss = 0.0;
  ModelParams grads;
};

// Mean cross-entropy at the final position and its exact gradient.
inline LossAndGrad ComputeLossAndGrad(const ModelParams& params, Batch batch) {
  Check(!batch.empty(), "loss_and_grad: empty batch");
  using internal::QueryRow;
  const Arch& arch = params.arch();
  const int b = static_cast<int>(batch.size());
  const int s = arch.seq_len;
  const int d = arch.d_model;
  const int nh = arch.n_heads;
  const int hd = arch.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  internal::ForwardCache cache;
  const Matrix logits = internal::ForwardImpl(params, batch, &cache);

  LossAndGrad out;
  out.grads = params.ZerosLike();
  ModelParams& g = out.grads;

  // Softmax cross-entropy.
  Matrix dlogits(b, arch.vocab);
  double loss = 0.0;
  for (int e = 0; e < b; ++e) {
    const int target = batch[e].target;
    Check(target >= 0 && target < arch.vocab, "loss_and_grad: target out of vocabulary");
    const double max_logit = logits.row(e).maxCoeff();
    const RowVector shifted = logits.row(e).array() - max_logit;
    const RowVector expd = shifted.array().exp();
    const double total = expd.sum();
    loss += std::log(total) - shifted(target);
    dlogits.row(e) = expd / total;
    dlogits(e, target) -= 1.0;
  }
  out.loss = loss / b;
  dlogits /= static_cast<double>(b);

  g.unembed() += dlogits.transpose() * cache.hf;
  g.unembed_bias().row(0) += dlogits.colwise().sum();
  Matrix dx = dlogits * params.unembed();
  dx = internal::LayerNormBackward(dx, params.final_gain(), cache.ln_f, &g.final_gain(),
                                   &g.final_bias());

  for (int l = arch.n_layers - 1; l >= 0; --l) {
    const internal::LayerCache& c = cache.layers[l];
    const int nq = c.num_queries;
    // dx holds dL/d(layer output) for the query rows.
    Matrix dx_mid = dx;
    g.layer(l, kWout) += dx.transpose() * c.g;
    g.layer(l, kBout).row(0) += dx.colwise().sum();
    Matrix dz = dx * params.layer(l, kWout);
    dz.array() *= c.z.unaryExpr([](double v) { return internal::GeluGrad(v); }).array();
    g.layer(l, kWin) += dz.transpose() * c.h2;
    g.layer(l, kBin).row(0) += dz.colwise().sum();
    const Matrix dh2 = dz * params.layer(l, kWin);
    dx_mid += internal::LayerNormBackward(dh2, params.layer(l, kLn2Gain), c.ln2,
                                          &g.layer(l, kLn2Gain), &g.layer(l, kLn2Bias));

    g.layer(l, kWo) += dx_mid.transpose() * c.attn;
    g.layer(l, kBo).row(0) += dx_mid.colwise().sum();
    const Matrix dattn = dx_mid * params.layer(l, kWo);

    Matrix dq = Matrix::Zero(b * nq, d);
    Matrix dk = Matrix::Zero(b * s, d);
    Matrix dv = Matrix::Zero(b * s, d);
    double dp[kSeqLen];
    for (int e = 0; e < b; ++e) {
      for (int h = 0; h < nh; ++h) {
        for (int qi = 0; qi < nq; ++qi) {
          const double* p = &c.probs[((static_cast<size_t>(e) * nh + h) * nq + qi) * s];
          const auto da = dattn.row(e * nq + qi).segment(h * hd, hd);
          double weighted = 0.0;
          for (int kj = 0; kj < s; ++kj) {
            dp[kj] = da.dot(c.v.row(e * s + kj).segment(h * hd, hd));
            weighted += p[kj] * dp[kj];
            dv.row(e * s + kj).segment(h * hd, hd) += p[kj] * da;
          }
          const auto qrow = c.q.row(e * nq + qi).segment(h * hd, hd);
          auto dqrow = dq.row(e * nq + qi).segment(h * hd, hd);
          for (int kj = 0; kj < s; ++kj) {
            const double ds = p[kj] * (dp[kj] - weighted) * scale;
            dqrow += ds * c.k.row(e * s + kj).segment(h * hd, hd);
            dk.row(e * s + kj).segment(h * hd, hd) += ds * qrow;
          }
        }
      }
    }

    Matrix hq(b * nq, d);
    for (int e = 0; e < b; ++e) {
      for (int qi = 0; qi < nq; ++qi) hq.row(e * nq + qi) = c.h.row(QueryRow(e, qi, nq, s));
    }
    g.layer(l, kWq) += dq.transpose() * hq;
    g.layer(l, kBq).row(0) += dq.colwise().sum();
    g.layer(l, kWk) += dk.transpose() * c.h;
    g.layer(l, kBk).row(0) += dk.colwise().sum();
    g.layer(l, kWv) += dv.transpose() * c.h;
    g.layer(l, kBv).row(0) += dv.colwise().sum();

    Matrix dh = dk * params.layer(l, kWk) + dv * params.layer(l, kWv);
    const Matrix dhq = dq * params.layer(l, kWq);
    for (int e = 0; e < b; ++e) {
      for (int qi = 0; qi < nq; ++qi) dh.row(QueryRow(e, qi, nq, s)) += dhq.row(e * nq + qi);
    }
    Matrix dx_in = internal::LayerNormBackward(dh, params.layer(l, kLn1Gain), c.ln1,
                                               &g.layer(l, kLn1Gain), &g.layer(l, kLn1Bias));
    for (int e = 0; e < b; ++e) {
      for (int qi = 0; qi < nq; ++qi) dx_in.row(QueryRow(e, qi, nq, s)) += dx_mid.row(e * nq + qi);
    }
    dx = std::move(dx_in);
  }

  for (int e = 0; e < b; ++e) {
    for (int p = 0; p < s; ++p) {
      g.token_embedding().row(batch[e].tokens[p]) += dx.row(e * s + p);
      g.position_embedding().row(p) += dx.row(e * s + p);
    }
  }
  return out;
}

// Index of the largest logit; ties resolve to the lowest token id.
inline int ArgmaxLowest(const Eigen::Ref<const RowVector>& row) {
  int best = 0;
  for (int i = 1; i < row.size(); ++i) {
    if (row(i) > row(best)) best = i;
  }
  return best;
}

inline double AccuracyFromLogits(const Matrix& logits, Batch examples) {
  int correct = 0;
  for (int e = 0; e < static_cast<int>(examples.size()); ++e) {
    if (ArgmaxLowest(logits.row(e)) == examples[e].target) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

inline double Accuracy(const ModelParams& params, Batch examples) {
  Check(!examples.empty(), "accuracy: empty example list");
  constexpr size_t kChunk = 512;
  int correct = 0;
  for (size_t start = 0; start < examples.size(); start += kChunk) {
    const Batch chunk = examples.subspan(start, std::min(kChunk, examples.size() - start));
    const Matrix logits = Forward(params, chunk);
    for (int e = 0; e < static_cast<int>(chunk.size()); ++e) {
      if (ArgmaxLowest(logits.row(e)) == chunk[e].target) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

// Mean cross-entropy without gradients.
inline double MeanLoss(const ModelParams& params, Batch examples) {
  Check(!examples.empty(), "loss: empty example list");
  constexpr size_t kChunk = 512;
  double total = 0.0;
  for (size_t start = 0; start < examples.size(); start += kChunk) {
    const Batch chunk = examples.subspan(start, std::min(kChunk, examples.size() - start));
    const Matrix logits = Forward(params, chunk);
    for (int e = 0; e < static_cast<int>(chunk.size()); ++e) {
      const double m = logits.row(e).maxCoeff();
      total += std::log((logits.row(e).array() - m).exp().sum()) + m -
               logits(e, chunk[e].target);
    }
  }
  return total / static_cast<double>(examples.size());
}

// ---------------------------------------------------------------------------
// Checkpoints (text, lossless):
//
//   critwin-checkpoint 1
//   arch <n_layers> <d_model> <n_heads> <mlp_mult> <vocab> <seq_len> <init_scale>
//   tensors <count>
//   tensor <name> <kind> <rows> <cols>
//   <rows lines of cols values, %.17g>
// ---------------------------------------------------------------------------

inline std::string SerializeCheckpoint(const ModelParams& params) {
  std::ostringstream out;
  out << std::setprecision(17);
  const Arch& a = params.arch();
  out << "critwin-checkpoint " << kCheckpointVersion << "\n";
  out << "arch " << a.n_layers << " " << a.d_model << " " << a.n_heads << " " << a.mlp_mult
      << " " << a.vocab << " " << a.seq_len << " " << a.init_scale << "\n";
  out << "tensors " << params.size() << "\n";
  for (const Tensor& t : params.tensors()) {
    out << "tensor " << t.name << " " << TensorKindName(t.kind) << " " << t.value.rows() << " "
        << t.value.cols() << "\n";
    for (int r = 0; r < t.value.rows(); ++r) {
      for (int c = 0; c < t.value.cols(); ++c) out << (c ? " " : "") << t.value(r, c);
      out << "\n";
    }
  }
  return out.str();
}

inline ModelParams ParseCheckpoint(const std::string& text) {
  std::istringstream in(text);
  std::string word;
  int version = 0;
  Check(static_cast<bool>(in >> word >> version) && word == "critwin-checkpoint",
        "checkpoint: bad header");
  Check(version == kCheckpointVersion, "checkpoint: unsupported version");
  Arch a;
  Check(static_cast<bool>(in >> word >> a.n_layers >> a.d_model >> a.n_heads >> a.mlp_mult >>
                          a.vocab >> a.seq_len >> a.init_scale) &&
            word == "arch",
        "checkpoint: bad arch line");
  ModelParams params(a);
  int count = 0;
  Check(static_cast<bool>(in >> word >> count) && word == "tensors", "checkpoint: bad count");
  Check(count == params.size(), "checkpoint: tensor count does not match arch");
  for (Tensor& t : params.tensors()) {
    std::string name, kind;
    int rows = 0, cols = 0;
    Check(static_cast<bool>(in >> word >> name >> kind >> rows >> cols) && word == "tensor",
          "checkpoint: bad tensor header");
    Check(name == t.name, "checkpoint: expected tensor '" + t.name + "', got '" + name + "'");
    Check(ParseTensorKind(kind) == t.kind, "checkpoint: kind mismatch for " + name);
    Check(rows == t.value.rows() && cols == t.value.cols(), "checkpoint: shape mismatch for " + name);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        Check(static_cast<bool>(in >> t.value(r, c)), "checkpoint: truncated tensor " + name);
      }
    }
  }
  return params;
}

}  // namespace critwin

#endif  // CRITWIN_TRANSFORMER_H_
