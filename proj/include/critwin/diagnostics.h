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

// Weight-only order parameters: the participation-ratio condensation index,
// cross-layer bridge alignment, squared weight norm, and the band verdict.

#ifndef CRITWIN_DIAGNOSTICS_H_
#define CRITWIN_DIAGNOSTICS_H_

#include <algorithm>
#include <limits>
#include <string_view>
#include <vector>

#include "critwin/common.h"
#include "critwin/transformer.h"

namespace critwin {

inline constexpr int kDefaultBridgeK = 8;

inline Vector SingularValues(const Matrix& w) {
  Eigen::JacobiSVD<Matrix> svd(w);
  return svd.singularValues();
}

// (sum s)^2 / sum s^2. A zero matrix is defined to have PR 1 and sets
// *degenerate.
inline double ParticipationRatio(const Matrix& w, bool* degenerate = nullptr) {
  const Vector s = SingularValues(w);
  const double sq = s.squaredNorm();
  if (degenerate != nullptr) *degenerate = (sq == 0.0);
  if (sq == 0.0) return 1.0;
  const double total = s.sum();
  return total * total / sq;
}

struct BridgeResult {
  double value = 0.0;
  int k_requested = 0;
  int k_used = 0;
  bool k_reduced = false;
};

namespace internal {

inline int NumericalRank(const Vector& s, Eigen::Index rows, Eigen::Index cols) {
  if (s.size() == 0 || s(0) == 0.0) return 0;
  const double tol =
      static_cast<double>(std::max(rows, cols)) * std::numeric_limits<double>::epsilon() * s(0);
  int rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > tol) ++rank;
  }
  return rank;
}

}  // namespace internal

// trace(P1 P2) / k for the leading-k left singular subspaces of a and b.
// k drops to the smaller numerical rank when needed; rank zero gives 0.
inline BridgeResult SubspaceAlignment(const Matrix& a, const Matrix& b, int k) {
  Check(a.rows() == b.rows(), "bridge: circuits must act on the same space");
  Check(k >= 1 && k <= a.rows(), "bridge: k must be in [1, d]");
  Eigen::JacobiSVD<Matrix> sa(a, Eigen::ComputeThinU);
  Eigen::JacobiSVD<Matrix> sb(b, Eigen::ComputeThinU);
  const int rank = std::min(internal::NumericalRank(sa.singularValues(), a.rows(), a.cols()),
                            internal::NumericalRank(sb.singularValues(), b.rows(), b.cols()));
  BridgeResult out;
  out.k_requested = k;
  out.k_used = std::min(k, rank);
  out.k_reduced = out.k_used < k;
  if (out.k_used == 0) return out;
  const Matrix overlap =
      sa.matrixU().leftCols(out.k_used).transpose() * sb.matrixU().leftCols(out.k_used);
  out.value = std::clamp(overlap.squaredNorm() / out.k_used, 0.0, 1.0);
  return out;
}

// Layer-1 OV circuit W_O W_V against layer-2 QK circuit W_Q^T W_K.
inline BridgeResult BridgeAlignment(const ModelParams& params, int k = kDefaultBridgeK) {
  Check(params.arch().n_layers >= 2, "bridge: model needs at least two layers");
  const Matrix ov = params.layer(0, kWo) * params.layer(0, kWv);
  const Matrix qk = params.layer(1, kWq).transpose() * params.layer(1, kWk);
  return SubspaceAlignment(ov, qk, k);
}

// Mean PR of the per-layer value matrices.
inline double CondensationIndex(const ModelParams& params, std::vector<double>* per_layer = nullptr,
                                bool* degenerate = nullptr) {
  const int layers = params.arch().n_layers;
  Check(layers >= 1, "condensation: model has no layers");
  double total = 0.0;
  bool any_degenerate = false;
  if (per_layer != nullptr) per_layer->clear();
  for (int l = 0; l < layers; ++l) {
    bool zero = false;
    const double pr = ParticipationRatio(params.layer(l, kWv), &zero);
    any_degenerate = any_degenerate || zero;
    if (per_layer != nullptr) per_layer->push_back(pr);
    total += pr;
  }
  if (degenerate != nullptr) *degenerate = any_degenerate;
  return total / layers;
}

inline double WeightNorm(const ModelParams& params) {
  double total = 0.0;
  for (const Tensor& t : params.tensors()) total += t.value.squaredNorm();
  return total;
}

struct DiagnosticsRecord {
  double condensation = 0.0;
  std::vector<double> layer_pr;
  bool pr_degenerate = false;
  BridgeResult bridge;  // value 0 and k_used 0 for single-layer models
  double weight_norm = 0.0;
};

inline DiagnosticsRecord ComputeDiagnostics(const ModelParams& params, int bridge_k = kDefaultBridgeK) {
  DiagnosticsRecord r;
  r.condensation = CondensationIndex(params, &r.layer_pr, &r.pr_degenerate);
  if (params.arch().n_layers >= 2) {
    r.bridge = BridgeAlignment(params, bridge_k);
  } else {
    r.bridge.k_requested = bridge_k;
  }
  r.weight_norm = WeightNorm(params);
  return r;
}

// Condensation bands are a categorical predictor: the reasoning regime sits
// at intermediate C, and both sides of the band fail.
struct CondensationBand {
  double lower = 28.0;
  double upper = 36.0;
};

enum class BandVerdict { kBelow, kInside, kAbove };

inline std::string_view BandVerdictName(BandVerdict v) {
  switch (v) {
    case BandVerdict::kBelow: return "below";
    case BandVerdict::kInside: return "inside";
    case BandVerdict::kAbove: return "above";
  }
  return "unknown";
}

inline BandVerdict ClassifyBand(double c, const CondensationBand& band = {}) {
  Check(band.lower < band.upper, "band: lower must be below upper");
  if (c < band.lower) return BandVerdict::kBelow;
  if (c > band.upper) return BandVerdict::kAbove;
  return BandVerdict::kInside;
}

}  // namespace critwin

#endif  // CRITWIN_DIAGNOSTICS_H_
