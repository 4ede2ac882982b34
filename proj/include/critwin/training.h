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

// Time-localized weight decay on top of AdamW or SGD with momentum.
//
// The decay term is applied outside the optimizer moments:
//
//   theta <- theta - lr * g_hat - lr * lambda_t * theta   (masked tensors)
//
// so the accumulated regularization is exactly sum_t lambda_t.

#ifndef CRITWIN_TRAINING_H_
#define CRITWIN_TRAINING_H_

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "critwin/anchor_task.h"
#include "critwin/common.h"
#include "critwin/diagnostics.h"
#include "critwin/transformer.h"

namespace critwin {

inline constexpr std::string_view kTrajectorySchema = "critwin.trajectory/1";
inline constexpr double kDivergenceLoss = 1e6;

enum class ScheduleKind { kNone, kConstant, kWindowed };

inline std::string_view ScheduleKindName(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::kNone: return "none";
    case ScheduleKind::kConstant: return "constant";
    case ScheduleKind::kWindowed: return "windowed";
  }
  return "unknown";
}

inline ScheduleKind ParseScheduleKind(std::string_view s) {
  if (s == "none") return ScheduleKind::kNone;
  if (s == "constant") return ScheduleKind::kConstant;
  if (s == "windowed") return ScheduleKind::kWindowed;
  throw Error("unknown schedule kind '" + std::string(s) + "'");
}

struct WDSchedule {
  ScheduleKind kind = ScheduleKind::kNone;
  double lambda = 0.0;
  int64_t t1 = 0;
  int64_t t2 = 0;
  int64_t total_steps = 0;

  static WDSchedule None(int64_t total) { return {ScheduleKind::kNone, 0.0, 0, 0, total}; }
  static WDSchedule Constant(double lambda, int64_t total) {
    return {ScheduleKind::kConstant, lambda, 0, total, total};
  }
  static WDSchedule Windowed(double lambda, int64_t t1, int64_t t2, int64_t total) {
    return {ScheduleKind::kWindowed, lambda, t1, t2, total};
  }
  friend bool operator==(const WDSchedule&, const WDSchedule&) = default;
};

inline void ValidateSchedule(const WDSchedule& s) {
  Check(s.total_steps >= 0, "schedule: T must be >= 0");
  Check(std::isfinite(s.lambda) && s.lambda >= 0.0, "schedule: lambda must be finite and >= 0");
  if (s.kind == ScheduleKind::kWindowed) {
    Check(0 <= s.t1 && s.t1 < s.t2 && s.t2 <= s.total_steps,
          "schedule: window must satisfy 0 <= t1 < t2 <= T");
  }
}

inline double LambdaAt(const WDSchedule& s, int64_t t) {
  Check(t >= 0 && t < s.total_steps, "lambda_at: step out of range [0, T)");
  switch (s.kind) {
    case ScheduleKind::kNone: return 0.0;
    case ScheduleKind::kConstant: return s.lambda;
    case ScheduleKind::kWindowed: return (s.t1 <= t && t < s.t2) ? s.lambda : 0.0;
  }
  return 0.0;
}

inline int64_t ActiveSteps(const WDSchedule& s) {
  switch (s.kind) {
    case ScheduleKind::kNone: return 0;
    case ScheduleKind::kConstant: return s.total_steps;
    case ScheduleKind::kWindowed: return s.t2 - s.t1;
  }
  return 0;
}

// Closed form: lambda times the integer count of active steps.
inline double Budget(const WDSchedule& s) {
  ValidateSchedule(s);
  return s.kind == ScheduleKind::kNone ? 0.0 : s.lambda * static_cast<double>(ActiveSteps(s));
}

// Step-by-step sum of lambda_at over [0, T). Steps are tallied per distinct
// value so the result is a product of a value and an integer count.
inline double SummedBudget(const WDSchedule& s) {
  ValidateSchedule(s);
  std::map<double, int64_t> counts;
  for (int64_t t = 0; t < s.total_steps; ++t) ++counts[LambdaAt(s, t)];
  double total = 0.0;
  for (const auto& [value, count] : counts) total += value * static_cast<double>(count);
  return total;
}

// "none", "constant,LAMBDA" or "windowed,LAMBDA,T1,T2".
inline WDSchedule ParseSchedule(std::string_view text, int64_t total) {
  std::vector<std::string> parts;
  std::stringstream ss{std::string(text)};
  for (std::string part; std::getline(ss, part, ',');) parts.push_back(part);
  Check(!parts.empty(), "schedule: empty specification");
  const ScheduleKind kind = ParseScheduleKind(parts[0]);
  WDSchedule s;
  try {
    switch (kind) {
      case ScheduleKind::kNone:
        Check(parts.size() == 1, "schedule: 'none' takes no arguments");
        s = WDSchedule::None(total);
        break;
      case ScheduleKind::kConstant:
        Check(parts.size() == 2, "schedule: expected constant,LAMBDA");
        s = WDSchedule::Constant(std::stod(parts[1]), total);
        break;
      case ScheduleKind::kWindowed:
        Check(parts.size() == 4, "schedule: expected windowed,LAMBDA,T1,T2");
        s = WDSchedule::Windowed(std::stod(parts[1]), std::stoll(parts[2]), std::stoll(parts[3]),
                                 total);
        break;
    }
  } catch (const std::logic_error&) {
    throw Error("schedule: malformed number in '" + std::string(text) + "'");
  }
  ValidateSchedule(s);
  return s;
}

enum class OptimizerKind { kAdamW, kSgd };

inline std::string_view OptimizerName(OptimizerKind k) {
  return k == OptimizerKind::kAdamW ? "adamw" : "sgd";
}

inline OptimizerKind ParseOptimizer(std::string_view s) {
  if (s == "adamw") return OptimizerKind::kAdamW;
  if (s == "sgd") return OptimizerKind::kSgd;
  throw Error("unknown optimizer '" + std::string(s) + "'");
}

struct OptConfig {
  OptimizerKind optimizer = OptimizerKind::kAdamW;
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double momentum = 0.9;
  int batch_size = 128;
  int64_t total_steps = 20000;
  friend bool operator==(const OptConfig&, const OptConfig&) = default;
};

inline void ValidateOptConfig(const OptConfig& c) {
  Check(c.lr > 0.0, "optimizer: learning rate must be > 0");
  Check(c.beta1 >= 0.0 && c.beta1 < 1.0 && c.beta2 >= 0.0 && c.beta2 < 1.0,
        "optimizer: betas must lie in [0, 1)");
  Check(c.eps > 0.0, "optimizer: eps must be > 0");
  Check(c.momentum >= 0.0 && c.momentum < 1.0, "optimizer: momentum must lie in [0, 1)");
  Check(c.batch_size >= 1, "optimizer: batch_size must be >= 1");
  Check(c.total_steps >= 0, "optimizer: T must be >= 0");
}

struct OptState {
  int64_t t = 0;
  ModelParams first;   // AdamW first moment, or SGD velocity
  ModelParams second;  // AdamW second moment; unused by SGD
};

inline OptState InitOptState(const ModelParams& params) {
  return {0, params.ZerosLike(), params.ZerosLike()};
}

// True for tensors that receive weight decay: weight matrices including the
// readout. Embeddings, norm parameters and biases are excluded.
inline std::vector<bool> DecayMask(const ModelParams& params) {
  std::vector<bool> mask;
  mask.reserve(params.size());
  for (const Tensor& t : params.tensors()) mask.push_back(t.kind == TensorKind::kWeight);
  return mask;
}

inline void Step(ModelParams& params, OptState& state, const ModelParams& grads, double lambda,
                 const std::vector<bool>& decay_mask, const OptConfig& config) {
  Check(grads.size() == params.size() && state.first.size() == params.size(),
        "step: grads and state must mirror params");
  Check(static_cast<int>(decay_mask.size()) == params.size(), "step: decay mask size mismatch");
  ++state.t;
  const double lr = config.lr;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
  for (int i = 0; i < params.size(); ++i) {
    Matrix& theta = params.tensors()[i].value;
    const Matrix& g = grads.tensors()[i].value;
    Matrix& m = state.first.tensors()[i].value;
    const double shrink = decay_mask[i] ? 1.0 - lr * lambda : 1.0;
    if (config.optimizer == OptimizerKind::kAdamW) {
      Matrix& v = state.second.tensors()[i].value;
      m = config.beta1 * m + (1.0 - config.beta1) * g;
      v = config.beta2 * v + (1.0 - config.beta2) * g.cwiseAbs2();
      theta = shrink * theta.array() -
              lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + config.eps);
    } else {
      m = config.momentum * m + g;
      theta = shrink * theta - lr * m;
    }
    Check(theta.allFinite(), "step: non-finite update in " + params.tensors()[i].name);
  }
}

struct CheckpointRecord {
  int64_t step = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double ood_acc = 0.0;  // held-out split: OOD pairs, or the modular test set
  double condensation = 0.0;
  std::vector<double> layer_pr;
  double bridge = 0.0;
  int bridge_k = 0;
  bool bridge_k_reduced = false;
  double weight_norm = 0.0;
  double lambda = 0.0;  // lambda of the update that produced this state
};

struct TrainConfig {
  Arch arch;
  OptConfig opt;
  WDSchedule schedule;
  uint64_t seed = 0;
  int checkpoint_every = 100;
  int bridge_k = kDefaultBridgeK;
  std::string label;
};

struct TrajectoryLog {
  TrainConfig config;
  std::string task_kind;
  int64_t train_size = 0;
  int64_t eval_size = 0;
  std::vector<CheckpointRecord> records;
  bool diverged = false;
  int64_t diverged_step = -1;
  std::string failure;

  const CheckpointRecord& final_record() const {
    Check(!records.empty(), "log: no checkpoint records");
    return records.back();
  }
};

// Steps 0, every multiple of `every`, floor(0.2 T) and T.
inline std::vector<int64_t> CheckpointSteps(int64_t total, int every) {
  Check(every >= 1, "checkpoint_every must be >= 1");
  std::set<int64_t> steps{0, total, total / 5};
  for (int64_t s = every; s < total; s += every) steps.insert(s);
  return {steps.begin(), steps.end()};
}

inline CheckpointRecord MakeRecord(const ModelParams& params, const TaskData& data, int64_t step,
                                   double lambda, int bridge_k) {
  CheckpointRecord r;
  r.step = step;
  r.lambda = lambda;
  r.train_loss = MeanLoss(params, data.train);
  r.train_acc = Accuracy(params, data.train);
  r.ood_acc = data.eval.empty() ? 0.0 : Accuracy(params, data.eval);
  const DiagnosticsRecord d = ComputeDiagnostics(params, bridge_k);
  r.condensation = d.condensation;
  r.layer_pr = d.layer_pr;
  r.bridge = d.bridge.value;
  r.bridge_k = d.bridge.k_used;
  r.bridge_k_reduced = d.bridge.k_reduced;
  r.weight_norm = d.weight_norm;
  return r;
}

struct TrainResult {
  TrajectoryLog log;
  ModelParams params;
};

inline TrainResult Train(const TaskData& data, const TrainConfig& config) {
  ValidateArch(config.arch);
  ValidateOptConfig(config.opt);
  ValidateSchedule(config.schedule);
  Check(config.schedule.total_steps == config.opt.total_steps,
        "train: schedule T must equal optimizer T");
  Check(config.arch.vocab == data.vocabulary_size, "train: arch vocab must match the task");
  Check(!data.train.empty(), "train: empty training set");

  TrainResult result;
  TrajectoryLog& log = result.log;
  log.config = config;
  log.task_kind = data.kind;
  log.train_size = static_cast<int64_t>(data.train.size());
  log.eval_size = static_cast<int64_t>(data.eval.size());

  ModelParams& params = result.params;
  params = InitParams(config.arch, config.seed);
  OptState state = InitOptState(params);
  const std::vector<bool> mask = DecayMask(params);
  Rng rng = MakeRng(config.seed, kStreamMinibatch);
  std::uniform_int_distribution<size_t> pick(0, data.train.size() - 1);

  const int64_t total = config.opt.total_steps;
  const std::vector<int64_t> checkpoints = CheckpointSteps(total, config.checkpoint_every);
  size_t next_checkpoint = 0;
  log.records.push_back(MakeRecord(params, data, 0, 0.0, config.bridge_k));
  ++next_checkpoint;

  std::vector<Example> batch(config.opt.batch_size);
  for (int64_t t = 0; t < total; ++t) {
    for (Example& e : batch) e = data.train[pick(rng)];
    const double lambda = LambdaAt(config.schedule, t);
    try {
      const LossAndGrad lg = ComputeLossAndGrad(params, batch);
      if (!std::isfinite(lg.loss) || lg.loss > kDivergenceLoss) {
        throw Error("training loss " + std::to_string(lg.loss) + " exceeds divergence threshold");
      }
      Step(params, state, lg.grads, lambda, mask, config.opt);
    } catch (const Error& e) {
      log.diverged = true;
      log.diverged_step = t;
      log.failure = e.what();
      return result;
    }
    if (next_checkpoint < checkpoints.size() && checkpoints[next_checkpoint] == t + 1) {
      log.records.push_back(MakeRecord(params, data, t + 1, lambda, config.bridge_k));
      ++next_checkpoint;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// JSON Lines log: one header object, one object per checkpoint, one summary.
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json ArchToJson(const Arch& a) {
  return {{"n_layers", a.n_layers}, {"d_model", a.d_model}, {"n_heads", a.n_heads},
          {"mlp_mult", a.mlp_mult}, {"vocab", a.vocab},     {"seq_len", a.seq_len},
          {"init_scale", a.init_scale}};
}

inline Arch ArchFromJson(const nlohmann::json& j) {
  Arch a;
  a.n_layers = j.at("n_layers").get<int>();
  a.d_model = j.at("d_model").get<int>();
  a.n_heads = j.at("n_heads").get<int>();
  a.mlp_mult = j.at("mlp_mult").get<int>();
  a.vocab = j.at("vocab").get<int>();
  a.seq_len = j.at("seq_len").get<int>();
  a.init_scale = j.at("init_scale").get<double>();
  return a;
}

inline nlohmann::ordered_json OptToJson(const OptConfig& o) {
  return {{"optimizer", OptimizerName(o.optimizer)}, {"lr", o.lr}, {"beta1", o.beta1},
          {"beta2", o.beta2}, {"eps", o.eps}, {"momentum", o.momentum},
          {"batch_size", o.batch_size}, {"total_steps", o.total_steps}};
}

inline OptConfig OptFromJson(const nlohmann::json& j) {
  OptConfig o;
  o.optimizer = ParseOptimizer(j.at("optimizer").get<std::string>());
  o.lr = j.at("lr").get<double>();
  o.beta1 = j.at("beta1").get<double>();
  o.beta2 = j.at("beta2").get<double>();
  o.eps = j.at("eps").get<double>();
  o.momentum = j.at("momentum").get<double>();
  o.batch_size = j.at("batch_size").get<int>();
  o.total_steps = j.at("total_steps").get<int64_t>();
  return o;
}

inline nlohmann::ordered_json ScheduleToJson(const WDSchedule& s) {
  return {{"kind", ScheduleKindName(s.kind)}, {"lambda", s.lambda}, {"t1", s.t1},
          {"t2", s.t2}, {"total_steps", s.total_steps}, {"budget", Budget(s)}};
}

inline WDSchedule ScheduleFromJson(const nlohmann::json& j) {
  WDSchedule s;
  s.kind = ParseScheduleKind(j.at("kind").get<std::string>());
  s.lambda = j.at("lambda").get<double>();
  s.t1 = j.at("t1").get<int64_t>();
  s.t2 = j.at("t2").get<int64_t>();
  s.total_steps = j.at("total_steps").get<int64_t>();
  ValidateSchedule(s);
  return s;
}

inline nlohmann::ordered_json RecordToJson(const CheckpointRecord& r) {
  return {{"type", "checkpoint"},       {"step", r.step},
          {"train_loss", r.train_loss}, {"train_acc", r.train_acc},
          {"ood_acc", r.ood_acc},       {"condensation", r.condensation},
          {"layer_pr", r.layer_pr},     {"bridge", r.bridge},
          {"bridge_k", r.bridge_k},     {"bridge_k_reduced", r.bridge_k_reduced},
          {"weight_norm", r.weight_norm}, {"lambda", r.lambda}};
}

inline CheckpointRecord RecordFromJson(const nlohmann::json& j) {
  CheckpointRecord r;
  r.step = j.at("step").get<int64_t>();
  r.train_loss = j.at("train_loss").get<double>();
  r.train_acc = j.at("train_acc").get<double>();
  r.ood_acc = j.at("ood_acc").get<double>();
  r.condensation = j.at("condensation").get<double>();
  r.layer_pr = j.at("layer_pr").get<std::vector<double>>();
  r.bridge = j.at("bridge").get<double>();
  r.bridge_k = j.at("bridge_k").get<int>();
  r.bridge_k_reduced = j.at("bridge_k_reduced").get<bool>();
  r.weight_norm = j.at("weight_norm").get<double>();
  r.lambda = j.at("lambda").get<double>();
  return r;
}

inline std::string SerializeLog(const TrajectoryLog& log) {
  const TrainConfig& c = log.config;
  nlohmann::ordered_json header = {
      {"type", "header"},
      {"schema", kTrajectorySchema},
      {"label", c.label},
      {"task_kind", log.task_kind},
      {"train_size", log.train_size},
      {"eval_size", log.eval_size},
      {"seed", c.seed},
      {"checkpoint_every", c.checkpoint_every},
      {"bridge_k", c.bridge_k},
      {"arch", ArchToJson(c.arch)},
      {"optimizer", OptToJson(c.opt)},
      {"schedule", ScheduleToJson(c.schedule)}};
  std::string out = header.dump() + "\n";
  for (const CheckpointRecord& r : log.records) out += RecordToJson(r).dump() + "\n";
  nlohmann::ordered_json summary = {{"type", "summary"},
                                    {"verdict", log.diverged ? "diverged" : "completed"},
                                    {"num_checkpoints", log.records.size()}};
  if (!log.records.empty()) {
    summary["final_step"] = log.records.back().step;
    summary["final_train_acc"] = log.records.back().train_acc;
    summary["final_ood_acc"] = log.records.back().ood_acc;
  }
  if (log.diverged) {
    summary["diverged_step"] = log.diverged_step;
    summary["failure"] = log.failure;
  }
  out += summary.dump() + "\n";
  return out;
}

inline TrajectoryLog ParseLog(const std::string& text) {
  TrajectoryLog log;
  std::istringstream in(text);
  std::string line;
  bool have_header = false;
  bool have_summary = false;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const nlohmann::json j = nlohmann::json::parse(line);
      const std::string type = j.at("type").get<std::string>();
      if (type == "header") {
        Check(j.at("schema").get<std::string>() == kTrajectorySchema,
              "log: schema version mismatch (expected " + std::string(kTrajectorySchema) + ")");
        TrainConfig& c = log.config;
        c.label = j.at("label").get<std::string>();
        c.seed = j.at("seed").get<uint64_t>();
        c.checkpoint_every = j.at("checkpoint_every").get<int>();
        c.bridge_k = j.at("bridge_k").get<int>();
        c.arch = ArchFromJson(j.at("arch"));
        c.opt = OptFromJson(j.at("optimizer"));
        c.schedule = ScheduleFromJson(j.at("schedule"));
        log.task_kind = j.at("task_kind").get<std::string>();
        log.train_size = j.at("train_size").get<int64_t>();
        log.eval_size = j.at("eval_size").get<int64_t>();
        have_header = true;
      } else if (type == "checkpoint") {
        Check(have_header, "log: checkpoint before header");
        CheckpointRecord r = RecordFromJson(j);
        Check(log.records.empty() || r.step > log.records.back().step,
              "log: checkpoint steps must increase");
        log.records.push_back(std::move(r));
      } else if (type == "summary") {
        log.diverged = j.at("verdict").get<std::string>() == "diverged";
        if (log.diverged) {
          log.diverged_step = j.at("diverged_step").get<int64_t>();
          log.failure = j.at("failure").get<std::string>();
        }
        have_summary = true;
      } else {
        throw Error("log: unknown record type '" + type + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("log: malformed JSON: ") + e.what());
  }
  Check(have_header, "log: missing header");
  Check(have_summary, "log: missing summary line (incomplete run)");
  return log;
}

}  // namespace critwin

#endif  // CRITWIN_TRAINING_H_
