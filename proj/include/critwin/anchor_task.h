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

// Synthetic datasets: the anchor-function composition task with its
// held-out-pair split, and modular addition for the grokking contrast.
//
// Token layout (anchor task): keys are ids 0..K-1, anchor a_i is id K+i, so a
// target key id is directly a class of the V-way readout.
// Token layout (modular task): residues are ids 0..p-1 and '=' is id p.

#ifndef CRITWIN_ANCHOR_TASK_H_
#define CRITWIN_ANCHOR_TASK_H_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "critwin/common.h"

namespace critwin {

inline constexpr int kTaskFileVersion = 1;
inline constexpr int kMaxSplitAttempts = 1000;

struct TaskSpec {
  int num_keys = 16;      // K
  int num_anchors = 8;    // M
  double train_pair_fraction = 0.7;
  uint64_t seed = 0;
  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

struct AnchorPair {
  int first = 0;   // i: applied first
  int second = 0;  // j: applied second
  friend auto operator<=>(const AnchorPair&, const AnchorPair&) = default;
};

struct Example {
  std::array<int, 3> tokens{};
  int target = 0;
  friend bool operator==(const Example&, const Example&) = default;
};

struct AnchorTask {
  TaskSpec spec;
  std::vector<std::vector<int>> permutations;  // M bijections on 0..K-1
  std::vector<AnchorPair> train_pairs;         // sorted
  std::vector<AnchorPair> ood_pairs;           // sorted

  int num_keys() const { return spec.num_keys; }
  int num_anchors() const { return spec.num_anchors; }
  int vocabulary_size() const { return spec.num_keys + spec.num_anchors; }
  int AnchorToken(int anchor) const { return spec.num_keys + anchor; }
  // y = pi_j(pi_i(k)).
  int Compose(int key, const AnchorPair& pair) const {
    return permutations[pair.second][permutations[pair.first][key]];
  }
  friend bool operator==(const AnchorTask&, const AnchorTask&) = default;
};

enum class PairSet { kTrain, kOod };

struct ModularTaskSpec {
  int modulus = 23;
  double train_fraction = 0.4;
  uint64_t seed = 0;
  friend bool operator==(const ModularTaskSpec&, const ModularTaskSpec&) = default;
};

struct ModularTask {
  ModularTaskSpec spec;
  std::vector<Example> train;  // sorted by (a, b)
  std::vector<Example> test;   // sorted by (a, b)

  int vocabulary_size() const { return spec.modulus + 1; }
  int equals_token() const { return spec.modulus; }
  friend bool operator==(const ModularTask&, const ModularTask&) = default;
};

namespace internal {

// ceil(fraction * total) with a guard against 0.7 * 10 = 7.000000000000001.
inline int CeilCount(double fraction, int total) {
  const double raw = fraction * static_cast<double>(total);
  return static_cast<int>(std::ceil(raw - 1e-9));
}

inline bool CoversAllAnchors(const std::vector<AnchorPair>& pairs, int m) {
  std::vector<bool> as_first(m, false);
  std::vector<bool> as_second(m, false);
  for (const AnchorPair& p : pairs) {
    as_first[p.first] = true;
    as_second[p.second] = true;
  }
  return std::all_of(as_first.begin(), as_first.end(), [](bool b) { return b; }) &&
         std::all_of(as_second.begin(), as_second.end(), [](bool b) { return b; });
}

inline bool IsPermutation(const std::vector<int>& perm, int n) {
  if (static_cast<int>(perm.size()) != n) return false;
  std::vector<int> sorted = perm;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < n; ++i) {
    if (sorted[i] != i) return false;
  }
  return true;
}

}  // namespace internal

inline void ValidateTaskSpec(const TaskSpec& spec) {
  Check(spec.num_keys >= 2, "task spec: K must be >= 2");
  Check(spec.num_anchors >= 2, "task spec: M must be >= 2");
  Check(spec.train_pair_fraction > 0.0 && spec.train_pair_fraction <= 1.0,
        "task spec: train_pair_fraction must lie in (0, 1]");
}

inline AnchorTask GenerateAnchorTask(const TaskSpec& spec) {
  ValidateTaskSpec(spec);
  const int k = spec.num_keys;
  const int m = spec.num_anchors;
  AnchorTask task;
  task.spec = spec;

  Rng perm_rng = MakeRng(spec.seed, kStreamTaskPermutations);
  task.permutations.resize(m);
  for (auto& perm : task.permutations) {
    perm.resize(k);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), perm_rng);
  }

  std::vector<AnchorPair> all_pairs;
  all_pairs.reserve(m * m);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) all_pairs.push_back({i, j});
  }
  const int num_train = internal::CeilCount(spec.train_pair_fraction, m * m);
  // Every anchor must appear in both positions, which needs at least M
  // training pairs.
  Check(num_train >= m,
        "anchor coverage unsatisfiable: ceil(train_pair_fraction * M^2) = " +
            std::to_string(num_train) + " < M = " + std::to_string(m) +
            "; every anchor must appear in a training pair in each position");

  Rng split_rng = MakeRng(spec.seed, kStreamTaskSplit);
  for (int attempt = 0; attempt < kMaxSplitAttempts; ++attempt) {
    std::vector<AnchorPair> shuffled = all_pairs;
    std::shuffle(shuffled.begin(), shuffled.end(), split_rng);
    std::vector<AnchorPair> train(shuffled.begin(), shuffled.begin() + num_train);
    if (!internal::CoversAllAnchors(train, m)) continue;
    std::vector<AnchorPair> ood(shuffled.begin() + num_train, shuffled.end());
    std::sort(train.begin(), train.end());
    std::sort(ood.begin(), ood.end());
    task.train_pairs = std::move(train);
    task.ood_pairs = std::move(ood);
    return task;
  }
  throw Error("anchor coverage unsatisfiable: no split with every anchor in a "
              "training pair in each position after " +
              std::to_string(kMaxSplitAttempts) + " attempts");
}

inline std::vector<Example> Materialize(const AnchorTask& task, PairSet pair_set) {
  const std::vector<AnchorPair>& pairs =
      pair_set == PairSet::kTrain ? task.train_pairs : task.ood_pairs;
  Check(!pairs.empty(), std::string("materialize: ") +
                            (pair_set == PairSet::kTrain ? "train" : "ood") +
                            " pair set is empty");
  std::vector<Example> examples;
  examples.reserve(pairs.size() * task.num_keys());
  for (const AnchorPair& pair : pairs) {
    for (int key = 0; key < task.num_keys(); ++key) {
      Example ex;
      ex.tokens = {key, task.AnchorToken(pair.first), task.AnchorToken(pair.second)};
      ex.target = task.Compose(key, pair);
      examples.push_back(ex);
    }
  }
  return examples;
}

inline void ValidateModularSpec(const ModularTaskSpec& spec) {
  Check(spec.modulus >= 3, "modular spec: p must be >= 3");
  Check(spec.train_fraction > 0.0 && spec.train_fraction <= 1.0,
        "modular spec: train_fraction must lie in (0, 1]");
}

inline Example ModularExample(int a, int b, int p) {
  return Example{{a, b, p}, (a + b) % p};
}

namespace internal {

inline ModularTask ModularTaskFromTrainSet(const ModularTaskSpec& spec,
                                           std::vector<bool> in_train) {
  const int p = spec.modulus;
  ModularTask task;
  task.spec = spec;
  for (int a = 0; a < p; ++a) {
    for (int b = 0; b < p; ++b) {
      Example ex = ModularExample(a, b, p);
      (in_train[a * p + b] ? task.train : task.test).push_back(ex);
    }
  }
  return task;
}

}  // namespace internal

inline ModularTask GenerateModularTask(const ModularTaskSpec& spec) {
  ValidateModularSpec(spec);
  const int p = spec.modulus;
  std::vector<int> order(p * p);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = MakeRng(spec.seed, kStreamTaskSplit);
  std::shuffle(order.begin(), order.end(), rng);
  const int num_train = internal::CeilCount(spec.train_fraction, p * p);
  std::vector<bool> in_train(p * p, false);
  for (int n = 0; n < num_train; ++n) in_train[order[n]] = true;
  return internal::ModularTaskFromTrainSet(spec, std::move(in_train));
}

// ---------------------------------------------------------------------------
// Task files.
//
//   critwin-task 1
//   kind anchor
//   K <int>
//   M <int>
//   train_pair_fraction <double>
//   seed <uint64>
//   permutation <i> <K ints: image of keys 0..K-1>      (M lines)
//   train_pairs <n>
//   <i> <j>                                              (n lines)
//   ood_pairs <n>
//   <i> <j>                                              (n lines)
//
//   critwin-task 1
//   kind modular
//   p <int>
//   train_fraction <double>
//   seed <uint64>
//   train_pairs <n>
//   <a> <b>                                              (n lines)
//
// Doubles are written with 17 significant digits so files round-trip.
// ---------------------------------------------------------------------------

using TaskFile = std::variant<AnchorTask, ModularTask>;

inline std::string SerializeTask(const AnchorTask& task) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "critwin-task " << kTaskFileVersion << "\n";
  out << "kind anchor\n";
  out << "K " << task.spec.num_keys << "\n";
  out << "M " << task.spec.num_anchors << "\n";
  out << "train_pair_fraction " << task.spec.train_pair_fraction << "\n";
  out << "seed " << task.spec.seed << "\n";
  for (int i = 0; i < task.num_anchors(); ++i) {
    out << "permutation " << i;
    for (int v : task.permutations[i]) out << " " << v;
    out << "\n";
  }
  out << "train_pairs " << task.train_pairs.size() << "\n";
  for (const AnchorPair& p : task.train_pairs) out << p.first << " " << p.second << "\n";
  out << "ood_pairs " << task.ood_pairs.size() << "\n";
  for (const AnchorPair& p : task.ood_pairs) out << p.first << " " << p.second << "\n";
  return out.str();
}

inline std::string SerializeTask(const ModularTask& task) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "critwin-task " << kTaskFileVersion << "\n";
  out << "kind modular\n";
  out << "p " << task.spec.modulus << "\n";
  out << "train_fraction " << task.spec.train_fraction << "\n";
  out << "seed " << task.spec.seed << "\n";
  out << "train_pairs " << task.train.size() << "\n";
  for (const Example& ex : task.train) out << ex.tokens[0] << " " << ex.tokens[1] << "\n";
  return out.str();
}

namespace internal {

class TaskReader {
 public:
  explicit TaskReader(const std::string& text) : in_(text) {}

  void Expect(const std::string& keyword) {
    std::string word;
    Check(static_cast<bool>(in_ >> word) && word == keyword,
          "task file: expected '" + keyword + "'" + (word.empty() ? "" : ", got '" + word + "'"));
  }
  template <typename T>
  T Read(const std::string& what) {
    T value{};
    Check(static_cast<bool>(in_ >> value), "task file: could not read " + what);
    return value;
  }
  template <typename T>
  T Field(const std::string& keyword) {
    Expect(keyword);
    return Read<T>(keyword);
  }

 private:
  std::istringstream in_;
};

inline std::vector<AnchorPair> ReadPairs(TaskReader& reader, const std::string& keyword,
                                         int m) {
  const int n = reader.Field<int>(keyword);
  Check(n >= 0 && n <= m * m, "task file: bad " + keyword + " count");
  std::vector<AnchorPair> pairs(n);
  for (AnchorPair& p : pairs) {
    p.first = reader.Read<int>(keyword);
    p.second = reader.Read<int>(keyword);
    Check(p.first >= 0 && p.first < m && p.second >= 0 && p.second < m,
          "task file: anchor index out of range in " + keyword);
  }
  return pairs;
}

}  // namespace internal

inline TaskFile ParseTask(const std::string& text) {
  internal::TaskReader reader(text);
  reader.Expect("critwin-task");
  const int version = reader.Read<int>("version");
  Check(version == kTaskFileVersion,
        "task file: unsupported version " + std::to_string(version));
  const std::string kind = reader.Field<std::string>("kind");
  if (kind == "anchor") {
    AnchorTask task;
    task.spec.num_keys = reader.Field<int>("K");
    task.spec.num_anchors = reader.Field<int>("M");
    task.spec.train_pair_fraction = reader.Field<double>("train_pair_fraction");
    task.spec.seed = reader.Field<uint64_t>("seed");
    ValidateTaskSpec(task.spec);
    const int k = task.spec.num_keys;
    const int m = task.spec.num_anchors;
    task.permutations.resize(m);
    for (int i = 0; i < m; ++i) {
      Check(reader.Field<int>("permutation") == i, "task file: permutations out of order");
      task.permutations[i].resize(k);
      for (int& v : task.permutations[i]) v = reader.Read<int>("permutation entry");
      Check(internal::IsPermutation(task.permutations[i], k),
            "task file: permutation " + std::to_string(i) + " is not a bijection");
    }
    task.train_pairs = internal::ReadPairs(reader, "train_pairs", m);
    task.ood_pairs = internal::ReadPairs(reader, "ood_pairs", m);
    std::vector<AnchorPair> all = task.train_pairs;
    all.insert(all.end(), task.ood_pairs.begin(), task.ood_pairs.end());
    std::sort(all.begin(), all.end());
    Check(std::adjacent_find(all.begin(), all.end()) == all.end(),
          "task file: a pair appears twice or in both splits");
    Check(static_cast<int>(all.size()) == m * m, "task file: splits do not cover all M^2 pairs");
    std::sort(task.train_pairs.begin(), task.train_pairs.end());
    std::sort(task.ood_pairs.begin(), task.ood_pairs.end());
    return task;
  }
  if (kind == "modular") {
    ModularTaskSpec spec;
    spec.modulus = reader.Field<int>("p");
    spec.train_fraction = reader.Field<double>("train_fraction");
    spec.seed = reader.Field<uint64_t>("seed");
    ValidateModularSpec(spec);
    const int p = spec.modulus;
    const int n = reader.Field<int>("train_pairs");
    Check(n >= 0 && n <= p * p, "task file: bad train_pairs count");
    std::vector<bool> in_train(p * p, false);
    for (int e = 0; e < n; ++e) {
      const int a = reader.Read<int>("residue");
      const int b = reader.Read<int>("residue");
      Check(a >= 0 && a < p && b >= 0 && b < p, "task file: residue out of range");
      Check(!in_train[a * p + b], "task file: duplicate equation");
      in_train[a * p + b] = true;
    }
    return internal::ModularTaskFromTrainSet(spec, std::move(in_train));
  }
  throw Error("task file: unknown kind '" + kind + "'");
}

inline std::string SerializeTask(const TaskFile& task) {
  return std::visit([](const auto& t) { return SerializeTask(t); }, task);
}

inline std::string ReadTextFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  Check(in.good(), "cannot open '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

inline void WriteTextFile(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  Check(out.good(), "cannot write '" + path + "'");
  out << text;
  Check(out.good(), "write failed for '" + path + "'");
}

// Train/evaluation examples ready for the transformer, whatever the task.
struct TaskData {
  std::string kind;  // "anchor" or "modular"
  int vocabulary_size = 0;
  int seq_len = 3;
  std::vector<Example> train;
  std::vector<Example> eval;  // OOD pairs (anchor) or held-out equations
};

inline TaskData ToTaskData(const AnchorTask& task) {
  TaskData data;
  data.kind = "anchor";
  data.vocabulary_size = task.vocabulary_size();
  data.train = Materialize(task, PairSet::kTrain);
  if (!task.ood_pairs.empty()) data.eval = Materialize(task, PairSet::kOod);
  return data;
}

inline TaskData ToTaskData(const ModularTask& task) {
  TaskData data;
  data.kind = "modular";
  data.vocabulary_size = task.vocabulary_size();
  data.train = task.train;
  data.eval = task.test;
  return data;
}

inline TaskData ToTaskData(const TaskFile& task) {
  return std::visit([](const auto& t) { return ToTaskData(t); }, task);
}

}  // namespace critwin

#endif  // CRITWIN_ANCHOR_TASK_H_
