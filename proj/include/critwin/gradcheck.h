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


// Central finite-difference gradient checks over named tensors.

#ifndef CRITWIN_GRADCHECK_H_
#define CRITWIN_GRADCHECK_H_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "critwin/common.h"

namespace critwin {

struct GradCheckTensor {
  std::string name;
  Matrix* value = nullptr;       // perturbed in place and restored
  const Matrix* grad = nullptr;  // analytic gradient
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_tensor;
  int64_t coordinates = 0;
};

// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps
// coordinates whose true gradient is ~0 from dividing rounding noise by ~0.
inline double RelativeError(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Checks up to `per_tensor` random coordinates of each tensor (all of them
// when the tensor is smaller).
template <typename LossFn>
GradCheckResult CheckGradients(const std::vector<GradCheckTensor>& tensors, LossFn&& loss,
                               int per_tensor, Rng& rng, double step = 1e-5,
                               double floor = 1e-6) {
  GradCheckResult result;
  for (const GradCheckTensor& t : tensors) {
    Check(t.value != nullptr && t.grad != nullptr, "gradcheck: null tensor");
    Check(t.value->rows() == t.grad->rows() && t.value->cols() == t.grad->cols(),
          "gradcheck: gradient shape mismatch for " + t.name);
    const int64_t size = t.value->size();
    std::vector<int64_t> coords;
    if (size <= per_tensor) {
      for (int64_t c = 0; c < size; ++c) coords.push_back(c);
    } else {
      std::uniform_int_distribution<int64_t> pick(0, size - 1);
      for (int n = 0; n < per_tensor; ++n) coords.push_back(pick(rng));
    }
    for (int64_t c : coords) {
      double& x = t.value->data()[c];
      const double saved = x;
      x = saved + step;
      const double up = loss();
      x = saved - step;
      const double down = loss();
      x = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double err = RelativeError(t.grad->data()[c], numeric, floor);
      ++result.coordinates;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_tensor = t.name;
      }
    }
  }
  return result;
}

}  // namespace critwin

#endif  // CRITWIN_GRADCHECK_H_
