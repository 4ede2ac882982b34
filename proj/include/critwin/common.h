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

#ifndef CRITWIN_COMMON_H_
#define CRITWIN_COMMON_H_

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace critwin {

// Row-major so that a batch of token activations is a contiguous block of
// rows, one row per (example, position).
using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

// All failures surfaced by the library. The message names the violated
// constraint so CLI users can act on it directly.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

inline void Check(bool condition, const std::string& message) {
  if (!condition) throw Error(message);
}

// Every random stream in the project is an mt19937_64 seeded from a 64-bit
// seed plus a stream tag, so independent consumers (task split, init,
// minibatches) never share draws.
using Rng = std::mt19937_64;

inline Rng MakeRng(uint64_t seed, uint64_t stream) {
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                    static_cast<uint32_t>(stream),
                    static_cast<uint32_t>(stream >> 32)};
  return Rng(seq);
}

enum RngStream : uint64_t {
  kStreamTaskPermutations = 1,
  kStreamTaskSplit = 2,
  kStreamModelInit = 3,
  kStreamMinibatch = 4,
  kStreamStylizedInit = 5,
  kStreamStylizedEmbeddings = 6,
  kStreamCouplingMc = 7,
};

inline Matrix GaussianMatrix(int rows, int cols, double stddev, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = stddev * normal(rng);
  }
  return m;
}

}  // namespace critwin

#endif  // CRITWIN_COMMON_H_
