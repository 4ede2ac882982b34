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


// Sweep runner: budget-matched schedules, experiment presets, a worker pool
// that writes one JSON Lines log per run, CSV summaries and the grokking
// comparison.

#ifndef CRITWIN_EXPERIMENTS_H_
#define CRITWIN_EXPERIMENTS_H_

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <tuple>
#include <vector>

#include <unistd.h>

#include "json.hpp"

#include "critwin/anchor_task.h"
#include "critwin/common.h"
#include "critwin/training.h"

namespace critwin {

inline constexpr std::string_view kSweepSchema = "critwin.sweep/1";
inline constexpr std::string_view kSummarySchema = "critwin.summary/1";
inline constexpr double kPaperBudget = 20.0;

// ---------------------------------------------------------------------------
// Budget-matched placements.
// ---------------------------------------------------------------------------

enum class WindowPosition { kEarly, kMiddle, kLate };

struct Placement {
  std::string label;
  WindowPosition position = WindowPosition::kEarly;
  int64_t width = 0;
};

struct NamedSchedule {
  std::string label;
  WDSchedule schedule;
};

// Early windows start at 0, middle windows are centred on T/2 and late
// windows end at T. lambda = budget / width must reproduce the budget
// exactly in floating point.
inline std::vector<NamedSchedule> BuildBudgetMatched(const std::vector<Placement>& placements,
                                                     double budget, int64_t total) {
  Check(budget >= 0.0 && std::isfinite(budget), "budget_matched: budget must be finite and >= 0");
  std::vector<NamedSchedule> out;
  for (const Placement& p : placements) {
    Check(p.width > 0 && p.width <= total,
          "budget_matched: width of '" + p.label + "' must lie in [1, T]");
    if (budget == 0.0) {
      out.push_back({p.label, WDSchedule::None(total)});
      continue;
    }
    const double lambda = budget / static_cast<double>(p.width);
    Check(lambda * static_cast<double>(p.width) == budget,
          "budget_matched: non-representable budget " + std::to_string(budget) + " for width " +
              std::to_string(p.width));
    int64_t start = 0;
    switch (p.position) {
      case WindowPosition::kEarly: start = 0; break;
      case WindowPosition::kMiddle: start = total / 2 - p.width / 2; break;
      case WindowPosition::kLate: start = total - p.width; break;
    }
    WDSchedule s = WDSchedule::Windowed(lambda, start, start + p.width, total);
    ValidateSchedule(s);
    Check(SummedBudget(s) == budget, "budget_matched: summed budget differs for '" + p.label + "'");
    out.push_back({p.label, s});
  }
  return out;
}

inline std::vector<Placement> BudgetControlPlacements() {
  return {{"early_narrow", WindowPosition::kEarly, 2000},
          {"early_wide", WindowPosition::kEarly, 5000},
          {"middle_narrow", WindowPosition::kMiddle, 2000},
          {"middle_wide", WindowPosition::kMiddle, 5000},
          {"late_narrow", WindowPosition::kLate, 2000},
          {"late_wide", WindowPosition::kLate, 5000}};
}

// Window endpoints scale linearly with T (floor), lambda is unchanged.
inline WDSchedule RescaleSchedule(const WDSchedule& s, int64_t new_total) {
  Check(new_total >= 0 && s.total_steps > 0, "rescale_schedule: totals must be positive");
  WDSchedule out = s;
  out.total_steps = new_total;
  if (s.kind == ScheduleKind::kConstant) out.t2 = new_total;
  if (s.kind == ScheduleKind::kWindowed) {
    out.t1 = s.t1 * new_total / s.total_steps;
    out.t2 = s.t2 * new_total / s.total_steps;
    if (out.t2 <= out.t1) return WDSchedule::None(new_total);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sweep specification.
// ---------------------------------------------------------------------------

struct TaskConfig {
  std::string kind = "anchor";  // "anchor" or "modular"
  TaskSpec anchor;
  ModularTaskSpec modular;
};

struct CellSpec {
  std::string label;
  TrainConfig config;  // seed and arch.vocab are filled per run
};

struct SweepSpec {
  std::string experiment = "custom";
  std::string preset = "desk";
  TaskConfig task;
  std::vector<uint64_t> seeds;
  std::vector<CellSpec> cells;
};

inline TaskData BuildTaskData(const TaskConfig& t, uint64_t seed) {
  if (t.kind == "anchor") {
    TaskSpec s = t.anchor;
    s.seed = seed;
    return ToTaskData(GenerateAnchorTask(s));
  }
  Check(t.kind == "modular", "task: unknown kind '" + t.kind + "'");
  ModularTaskSpec s = t.modular;
  s.seed = seed;
  return ToTaskData(GenerateModularTask(s));
}

inline int TaskVocabulary(const TaskConfig& t) {
  if (t.kind == "anchor") return t.anchor.num_keys + t.anchor.num_anchors;
  return t.modular.modulus + 1;
}

inline void ValidateSweep(const SweepSpec& s) {
  Check(!s.seeds.empty(), "sweep: empty seed list");
  Check(!s.cells.empty(), "sweep: empty grid");
  std::set<uint64_t> seeds(s.seeds.begin(), s.seeds.end());
  Check(seeds.size() == s.seeds.size(), "sweep: duplicate seeds");
  std::set<std::string> labels;
  for (const CellSpec& c : s.cells) {
    Check(!c.label.empty() && c.label.find_first_of("/\\ ") == std::string::npos,
          "sweep: cell labels must be non-empty without spaces or slashes");
    Check(labels.insert(c.label).second, "sweep: duplicate cell label '" + c.label + "'");
    ValidateOptConfig(c.config.opt);
    ValidateSchedule(c.config.schedule);
    Check(c.config.schedule.total_steps == c.config.opt.total_steps,
          "sweep: cell '" + c.label + "' schedule T differs from optimizer T");
  }
  if (s.experiment == "E2b") {
    std::optional<double> budget;
    for (const CellSpec& c : s.cells) {
      const double b = SummedBudget(c.config.schedule);
      if (!budget) budget = b;
      Check(b == *budget, "sweep: E2b cells must share the exact same budget");
    }
  }
}

inline nlohmann::ordered_json TrainConfigToJson(const TrainConfig& c) {
  return {{"arch", ArchToJson(c.arch)},
          {"optimizer", OptToJson(c.opt)},
          {"schedule", ScheduleToJson(c.schedule)},
          {"checkpoint_every", c.checkpoint_every},
          {"bridge_k", c.bridge_k}};
}

// `j` may omit fields; they default to `base`. A schedule may also be given
// in the short text form accepted by ParseSchedule.
inline TrainConfig TrainConfigFromJson(const nlohmann::json& j, const TrainConfig& base) {
  nlohmann::json merged = nlohmann::json(TrainConfigToJson(base));
  nlohmann::json patch = j;
  const bool text_schedule = patch.contains("schedule") && patch["schedule"].is_string();
  std::string schedule_text;
  if (text_schedule) {
    schedule_text = patch["schedule"].get<std::string>();
    patch.erase("schedule");
  }
  merged.merge_patch(patch);
  TrainConfig c;
  c.arch = ArchFromJson(merged.at("arch"));
  c.opt = OptFromJson(merged.at("optimizer"));
  c.checkpoint_every = merged.at("checkpoint_every").get<int>();
  c.bridge_k = merged.at("bridge_k").get<int>();
  if (text_schedule) {
    c.schedule = ParseSchedule(schedule_text, c.opt.total_steps);
  } else {
    nlohmann::json sj = merged.at("schedule");
    // A changed T without an explicit schedule T follows the optimizer.
    if (!(patch.contains("schedule") && patch["schedule"].contains("total_steps"))) {
      sj["total_steps"] = c.opt.total_steps;
    }
    c.schedule = ScheduleFromJson(sj);
  }
  return c;
}

inline std::string SerializeSweep(const SweepSpec& s) {
  nlohmann::ordered_json j;
  j["schema"] = kSweepSchema;
  j["experiment"] = s.experiment;
  j["preset"] = s.preset;
  nlohmann::ordered_json task = {{"kind", s.task.kind}};
  if (s.task.kind == "anchor") {
    task["num_keys"] = s.task.anchor.num_keys;
    task["num_anchors"] = s.task.anchor.num_anchors;
    task["train_pair_fraction"] = s.task.anchor.train_pair_fraction;
  } else {
    task["modulus"] = s.task.modular.modulus;
    task["train_fraction"] = s.task.modular.train_fraction;
  }
  j["task"] = task;
  j["seeds"] = s.seeds;
  nlohmann::ordered_json cells = nlohmann::ordered_json::array();
  for (const CellSpec& c : s.cells) {
    cells.push_back({{"label", c.label}, {"config", TrainConfigToJson(c.config)}});
  }
  j["cells"] = cells;
  return j.dump(2) + "\n";
}

// Accepts an optional "base" config that every cell's "config" patches.
inline SweepSpec ParseSweep(const std::string& text) {
  SweepSpec s;
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    Check(j.at("schema").get<std::string>() == kSweepSchema,
          "sweep: schema mismatch (expected " + std::string(kSweepSchema) + ")");
    s.experiment = j.value("experiment", "custom");
    s.preset = j.value("preset", "desk");
    const nlohmann::json& t = j.at("task");
    s.task.kind = t.at("kind").get<std::string>();
    if (s.task.kind == "anchor") {
      s.task.anchor.num_keys = t.value("num_keys", s.task.anchor.num_keys);
      s.task.anchor.num_anchors = t.value("num_anchors", s.task.anchor.num_anchors);
      s.task.anchor.train_pair_fraction =
          t.value("train_pair_fraction", s.task.anchor.train_pair_fraction);
    } else {
      Check(s.task.kind == "modular", "sweep: unknown task kind '" + s.task.kind + "'");
      s.task.modular.modulus = t.value("modulus", s.task.modular.modulus);
      s.task.modular.train_fraction = t.value("train_fraction", s.task.modular.train_fraction);
    }
    s.seeds = j.at("seeds").get<std::vector<uint64_t>>();
    TrainConfig base;
    if (j.contains("base")) base = TrainConfigFromJson(j.at("base"), base);
    for (const nlohmann::json& c : j.at("cells")) {
      CellSpec cell;
      cell.label = c.at("label").get<std::string>();
      cell.config = c.contains("config") ? TrainConfigFromJson(c.at("config"), base) : base;
      cell.config.label = cell.label;
      cell.config.arch.vocab = TaskVocabulary(s.task);
      s.cells.push_back(std::move(cell));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("sweep: malformed spec: ") + e.what());
  }
  ValidateSweep(s);
  return s;
}

// ---------------------------------------------------------------------------
// Presets. "paper" encodes the published grids; "desk" trims seeds.
// ---------------------------------------------------------------------------

enum class Scale { kDesk, kPaper };

inline Scale ParseScale(std::string_view s) {
  if (s == "desk") return Scale::kDesk;
  if (s == "paper") return Scale::kPaper;
  throw Error("unknown scale '" + std::string(s) + "' (expected desk|paper)");
}

namespace internal {

inline std::vector<uint64_t> SeedRange(int n) {
  std::vector<uint64_t> s(n);
  std::iota(s.begin(), s.end(), uint64_t{1});
  return s;
}

inline TrainConfig PresetBase(double gamma, int64_t total, int vocab) {
  TrainConfig c;
  c.arch.init_scale = gamma;
  c.arch.vocab = vocab;
  c.opt.total_steps = total;
  c.schedule = WDSchedule::None(total);
  c.checkpoint_every = 500;
  return c;
}

inline std::string FormatValue(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

inline CellSpec Cell(std::string label, TrainConfig c, const WDSchedule& s) {
  c.schedule = s;
  c.label = label;
  return {std::move(label), std::move(c)};
}

// Windows of width 5000 at the given onsets plus the full-budget constant
// and no-decay baselines.
inline std::vector<CellSpec> WindowScan(const TrainConfig& base, const std::vector<int64_t>& onsets,
                                        const std::string& prefix = "") {
  const int64_t total = base.opt.total_steps;
  std::vector<CellSpec> cells;
  for (int64_t s : onsets) {
    cells.push_back(Cell(prefix + "window_" + std::to_string(s), base,
                         WDSchedule::Windowed(4e-3, s, std::min(s + 5000, total), total)));
  }
  cells.push_back(Cell(prefix + "full_wd", base, WDSchedule::Constant(1e-3, total)));
  cells.push_back(Cell(prefix + "no_wd", base, WDSchedule::None(total)));
  return cells;
}

inline std::vector<int64_t> Onsets(int64_t first, int64_t last, int64_t step) {
  std::vector<int64_t> v;
  for (int64_t s = first; s <= last; s += step) v.push_back(s);
  return v;
}

}  // namespace internal

inline std::vector<std::string> PresetNames() {
  return {"E1", "E2a", "E2b", "E3", "E5", "E6", "E7", "E8", "E10", "E11"};
}

inline SweepSpec Preset(std::string_view experiment, Scale scale) {
  using internal::Cell;
  using internal::FormatValue;
  SweepSpec s;
  s.experiment = std::string(experiment);
  s.preset = scale == Scale::kDesk ? "desk" : "paper";
  const int vocab = TaskVocabulary(s.task);
  const bool desk = scale == Scale::kDesk;
  const int seeds3 = desk ? 2 : 3;
  if (experiment == "E1") {
    const TrainConfig base = internal::PresetBase(0.8, 15000, vocab);
    for (double g : {0.3, 0.5, 0.7, 0.8, 0.9, 1.1}) {
      for (double l : {0.0, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2}) {
        TrainConfig c = base;
        c.arch.init_scale = g;
        const WDSchedule sched = l == 0.0 ? WDSchedule::None(15000) : WDSchedule::Constant(l, 15000);
        s.cells.push_back(Cell("g" + FormatValue(g) + "_l" + FormatValue(l), c, sched));
      }
    }
    s.seeds = internal::SeedRange(seeds3);
  } else if (experiment == "E2a") {
    s.cells = internal::WindowScan(internal::PresetBase(0.8, 20000, vocab),
                                   internal::Onsets(0, 15000, 2500));
    s.seeds = internal::SeedRange(seeds3);
  } else if (experiment == "E2b") {
    const TrainConfig base = internal::PresetBase(0.8, 20000, vocab);
    for (const NamedSchedule& n : BuildBudgetMatched(BudgetControlPlacements(), kPaperBudget, 20000)) {
      s.cells.push_back(Cell(n.label, base, n.schedule));
    }
    s.seeds = internal::SeedRange(seeds3);
  } else if (experiment == "E3") {
    const TrainConfig base = internal::PresetBase(0.8, 15000, vocab);
    for (double l : {0.0, 3e-4, 1e-3, 3e-3, 1e-2}) {
      const WDSchedule sched = l == 0.0 ? WDSchedule::None(15000) : WDSchedule::Constant(l, 15000);
      s.cells.push_back(Cell("l" + FormatValue(l), base, sched));
    }
    s.seeds = internal::SeedRange(desk ? 3 : 8);
  } else if (experiment == "E5") {
    for (double g : {0.5, 0.8, 1.1}) {
      const auto cells = internal::WindowScan(internal::PresetBase(g, 20000, vocab),
                                              internal::Onsets(0, 15000, 2500),
                                              "g" + FormatValue(g) + "_");
      s.cells.insert(s.cells.end(), cells.begin(), cells.end());
    }
    s.seeds = internal::SeedRange(seeds3);
  } else if (experiment == "E6" || experiment == "E7") {
    const TrainConfig base = internal::PresetBase(0.8, 20000, vocab);
    const std::vector<int64_t> onsets =
        experiment == "E6" ? internal::Onsets(0, 6000, 500) : internal::Onsets(0, 1000, 100);
    for (int64_t o : onsets) {
      s.cells.push_back(Cell("onset_" + std::to_string(o), base,
                             WDSchedule::Windowed(4e-3, o, o + 5000, 20000)));
    }
    s.seeds = internal::SeedRange(experiment == "E6" ? seeds3 : (desk ? 2 : 4));
  } else if (experiment == "E8") {
    for (double g : {0.5, 0.7, 0.9, 1.1}) {
      s.cells.push_back(Cell("g" + FormatValue(g), internal::PresetBase(g, 20000, vocab),
                             WDSchedule::Windowed(4e-3, 5000, 10000, 20000)));
    }
    s.seeds = internal::SeedRange(desk ? 4 : 12);
  } else if (experiment == "E10") {
    TrainConfig base = internal::PresetBase(0.8, 20000, vocab);
    base.arch.n_layers = 4;
    s.cells = internal::WindowScan(base, {0, 2500, 5000, 7500, 15000});
    s.seeds = internal::SeedRange(seeds3);
  } else if (experiment == "E11") {
    for (OptimizerKind kind : {OptimizerKind::kAdamW, OptimizerKind::kSgd}) {
      TrainConfig base = internal::PresetBase(0.8, 20000, vocab);
      base.opt.optimizer = kind;
      if (kind == OptimizerKind::kSgd) base.opt.lr = 0.1;
      const std::string p = std::string(OptimizerName(kind)) + "_";
      s.cells.push_back(Cell(p + "no_wd", base, WDSchedule::None(20000)));
      s.cells.push_back(Cell(p + "early", base, WDSchedule::Windowed(4e-3, 0, 5000, 20000)));
      s.cells.push_back(Cell(p + "middle", base, WDSchedule::Windowed(4e-3, 5000, 10000, 20000)));
      s.cells.push_back(Cell(p + "late", base, WDSchedule::Windowed(4e-3, 15000, 20000, 20000)));
      s.cells.push_back(Cell(p + "full_wd", base, WDSchedule::Constant(1e-3, 20000)));
    }
    s.seeds = internal::SeedRange(seeds3);
  } else {
    throw Error("unknown preset '" + std::string(experiment) + "'");
  }
  ValidateSweep(s);
  return s;
}

// Shrinks T for every cell, rescaling window endpoints linearly.
inline SweepSpec ShrinkSweep(SweepSpec s, int64_t new_total) {
  Check(new_total >= 1, "shrink: T must be >= 1");
  for (CellSpec& c : s.cells) {
    c.config.schedule = RescaleSchedule(c.config.schedule, new_total);
    c.config.opt.total_steps = new_total;
  }
  ValidateSweep(s);
  return s;
}

// ---------------------------------------------------------------------------
// Sweep execution.
// ---------------------------------------------------------------------------

struct RunOutcome {
  std::string cell;
  uint64_t seed = 0;
  std::string path;
  bool ok = false;         // a log was written (it may record divergence)
  bool cached = false;     // an identical earlier log was reused
  std::string error;       // set when no log could be produced
  std::optional<TrajectoryLog> log;
};

inline std::string RunFileName(const std::string& cell, uint64_t seed) {
  return cell + "__seed" + std::to_string(seed) + ".jsonl";
}

inline TrainConfig RunConfig(const SweepSpec& spec, const CellSpec& cell, uint64_t seed) {
  TrainConfig c = cell.config;
  c.seed = seed;
  c.label = cell.label;
  c.arch.vocab = TaskVocabulary(spec.task);
  return c;
}

namespace internal {

inline std::optional<TrajectoryLog> CachedLog(const std::string& path, const TrainConfig& config,
                                              const std::string& task_kind) {
  if (!std::filesystem::exists(path)) return std::nullopt;
  try {
    TrajectoryLog log = ParseLog(ReadTextFile(path));
    if (log.task_kind != task_kind || log.config.seed != config.seed ||
        log.config.label != config.label ||
        nlohmann::json(TrainConfigToJson(log.config)) != nlohmann::json(TrainConfigToJson(config))) {
      return std::nullopt;
    }
    return log;
  } catch (const Error&) {
    return std::nullopt;
  }
}

}  // namespace internal

struct SweepOptions {
  int workers = 1;
  bool reuse = true;  // skip runs whose log already exists with an identical config
  std::function<void(const RunOutcome&)> on_done;  // called under a lock
};

// Runs every cell x seed; a failed or diverged run never aborts the sweep.
inline std::vector<RunOutcome> RunSweep(const SweepSpec& spec, const std::string& out_dir,
                                        const SweepOptions& opt = {}) {
  ValidateSweep(spec);
  Check(opt.workers >= 1, "sweep: workers must be >= 1");
  std::filesystem::create_directories(out_dir);
  WriteTextFile((std::filesystem::path(out_dir) / "sweep.json").string(), SerializeSweep(spec));

  std::vector<RunOutcome> outcomes;
  for (const CellSpec& cell : spec.cells) {
    for (uint64_t seed : spec.seeds) {
      RunOutcome o;
      o.cell = cell.label;
      o.seed = seed;
      o.path = (std::filesystem::path(out_dir) / RunFileName(cell.label, seed)).string();
      outcomes.push_back(std::move(o));
    }
  }
  std::map<std::string, const CellSpec*> by_label;
  for (const CellSpec& c : spec.cells) by_label[c.label] = &c;

  std::atomic<size_t> next{0};
  std::mutex mu;
  auto worker = [&] {
    for (size_t i = next++; i < outcomes.size(); i = next++) {
      RunOutcome& o = outcomes[i];
      const TrainConfig config = RunConfig(spec, *by_label.at(o.cell), o.seed);
      try {
        std::optional<TrajectoryLog> cached;
        if (opt.reuse) cached = internal::CachedLog(o.path, config, spec.task.kind);
        if (cached) {
          o.log = std::move(cached);
          o.cached = true;
        } else {
          const TaskData data = BuildTaskData(spec.task, o.seed);
          TrainResult r = Train(data, config);
          WriteTextFile(o.path, SerializeLog(r.log));
          o.log = std::move(r.log);
        }
        o.ok = true;
      } catch (const std::exception& e) {
        o.error = e.what();
      }
      if (opt.on_done) {
        std::lock_guard<std::mutex> lock(mu);
        opt.on_done(o);
      }
    }
  };
  const int n = std::min<int>(opt.workers, static_cast<int>(outcomes.size()));
  std::vector<std::thread> threads;
  for (int w = 1; w < n; ++w) threads.emplace_back(worker);
  worker();
  for (std::thread& t : threads) t.join();
  return outcomes;
}

// ---------------------------------------------------------------------------
// Summaries.
// ---------------------------------------------------------------------------

struct Stats {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double std = std::numeric_limits<double>::quiet_NaN();  // population
  double median = std::numeric_limits<double>::quiet_NaN();
};

inline Stats ComputeStats(std::vector<double> v) {
  Stats s;
  if (v.empty()) return s;
  const double n = static_cast<double>(v.size());
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(ss / n);
  std::sort(v.begin(), v.end());
  const size_t h = v.size() / 2;
  s.median = v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
  return s;
}

// Ranks with ties sharing their average rank.
inline std::vector<double> AverageRanks(const std::vector<double>& v) {
  std::vector<size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (size_t i = 0; i < idx.size();) {
    size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

// Pearson correlation of average ranks; NaN when either side is constant.
inline double SpearmanRho(const std::vector<double>& x, const std::vector<double>& y) {
  Check(x.size() == y.size(), "spearman: size mismatch");
  if (x.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const std::vector<double> rx = AverageRanks(x), ry = AverageRanks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

struct CellSummary {
  std::string label;
  std::string status;  // ok | partial | missing
  int n_runs = 0;      // logs found
  int n_expected = 0;  // seeds requested (0 when unknown)
  int n_diverged = 0;
  std::vector<uint64_t> seeds;       // completed runs, ascending
  std::vector<double> final_ood;     // per completed seed
  std::vector<double> final_train;
  Stats ood, train, condensation_02t, condensation_final, bridge_final, weight_norm_final;
};

struct SummaryTable {
  std::vector<CellSummary> cells;
  double spearman_c02_ood = std::numeric_limits<double>::quiet_NaN();
  int spearman_n = 0;
};

inline const CheckpointRecord* RecordAtOrBefore(const TrajectoryLog& log, int64_t step) {
  const CheckpointRecord* best = nullptr;
  for (const CheckpointRecord& r : log.records) {
    if (r.step <= step) best = &r;
  }
  return best;
}

struct ExpectedCell {
  std::string label;
  int n_seeds = 0;
};

// Aggregates final-step metrics per cell label. Diverged runs are counted
// but excluded from statistics. The result does not depend on log order.
inline SummaryTable Summarize(std::vector<TrajectoryLog> logs,
                              const std::vector<ExpectedCell>& expected = {}) {
  std::sort(logs.begin(), logs.end(), [](const TrajectoryLog& a, const TrajectoryLog& b) {
    return std::tie(a.config.label, a.config.seed) < std::tie(b.config.label, b.config.seed);
  });
  std::vector<std::string> order;
  for (const ExpectedCell& e : expected) order.push_back(e.label);
  for (const TrajectoryLog& l : logs) {
    if (std::find(order.begin(), order.end(), l.config.label) == order.end()) {
      order.push_back(l.config.label);
    }
  }
  if (expected.empty()) std::sort(order.begin(), order.end());

  SummaryTable table;
  std::vector<double> c02_all, ood_all;
  for (const std::string& label : order) {
    CellSummary cs;
    cs.label = label;
    for (const ExpectedCell& e : expected) {
      if (e.label == label) cs.n_expected = e.n_seeds;
    }
    std::vector<double> c02, cfin, bfin, wfin;
    for (const TrajectoryLog& l : logs) {
      if (l.config.label != label) continue;
      ++cs.n_runs;
      if (l.diverged || l.records.empty()) {
        ++cs.n_diverged;
        continue;
      }
      const CheckpointRecord& f = l.final_record();
      cs.seeds.push_back(l.config.seed);
      cs.final_ood.push_back(f.ood_acc);
      cs.final_train.push_back(f.train_acc);
      cfin.push_back(f.condensation);
      bfin.push_back(f.bridge);
      wfin.push_back(f.weight_norm);
      if (const CheckpointRecord* r = RecordAtOrBefore(l, l.config.opt.total_steps / 5)) {
        c02.push_back(r->condensation);
        c02_all.push_back(r->condensation);
        ood_all.push_back(f.ood_acc);
      }
    }
    cs.ood = ComputeStats(cs.final_ood);
    cs.train = ComputeStats(cs.final_train);
    cs.condensation_02t = ComputeStats(c02);
    cs.condensation_final = ComputeStats(cfin);
    cs.bridge_final = ComputeStats(bfin);
    cs.weight_norm_final = ComputeStats(wfin);
    const int completed = static_cast<int>(cs.seeds.size());
    if (completed == 0) {
      cs.status = "missing";
    } else if (cs.n_diverged > 0 || (cs.n_expected > 0 && completed < cs.n_expected)) {
      cs.status = "partial";
    } else {
      cs.status = "ok";
    }
    table.cells.push_back(std::move(cs));
  }
  table.spearman_n = static_cast<int>(c02_all.size());
  table.spearman_c02_ood = SpearmanRho(c02_all, ood_all);
  return table;
}

inline const CellSummary& FindCell(const SummaryTable& t, std::string_view label) {
  for (const CellSummary& c : t.cells) {
    if (c.label == label) return c;
  }
  throw Error("summary: no cell '" + std::string(label) + "'");
}

namespace internal {

inline std::string Num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace internal

inline std::string SummaryCsvHeader() {
  return "cell,status,n_runs,n_expected,n_diverged,ood_mean,ood_std,ood_median,train_mean,"
         "train_std,train_median,c02_mean,c_final_mean,bridge_final_mean,weight_norm_final_mean,"
         "ood_per_seed";
}

// Version-tagged CSV; the last line carries the Spearman statistic.
inline std::string SummaryToCsv(const SummaryTable& t) {
  using internal::Num;
  std::string out = "# " + std::string(kSummarySchema) + "\n" + SummaryCsvHeader() + "\n";
  for (const CellSummary& c : t.cells) {
    std::string per_seed;
    for (size_t i = 0; i < c.seeds.size(); ++i) {
      if (i) per_seed += ';';
      per_seed += std::to_string(c.seeds[i]) + ":" + Num(c.final_ood[i]);
    }
    out += c.label + "," + c.status + "," + std::to_string(c.n_runs) + "," +
           std::to_string(c.n_expected) + "," + std::to_string(c.n_diverged) + "," +
           Num(c.ood.mean) + "," + Num(c.ood.std) + "," + Num(c.ood.median) + "," +
           Num(c.train.mean) + "," + Num(c.train.std) + "," + Num(c.train.median) + "," +
           Num(c.condensation_02t.mean) + "," + Num(c.condensation_final.mean) + "," +
           Num(c.bridge_final.mean) + "," + Num(c.weight_norm_final.mean) + "," + per_seed + "\n";
  }
  out += "# spearman_c02_ood," + Num(t.spearman_c02_ood) + "," + std::to_string(t.spearman_n) + "\n";
  return out;
}

// Reads every *.jsonl log under `dir`. A sweep.json manifest, when present,
// names the expected cells so that absent ones are reported as missing.
inline SummaryTable SummarizeDirectory(const std::string& dir) {
  Check(std::filesystem::is_directory(dir), "summarize: not a directory: " + dir);
  std::vector<std::string> paths;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl") {
      paths.push_back(entry.path().string());
    }
  }
  std::sort(paths.begin(), paths.end());
  std::vector<TrajectoryLog> logs;
  for (const std::string& p : paths) {
    try {
      logs.push_back(ParseLog(ReadTextFile(p)));
    } catch (const Error& e) {
      throw Error(p + ": " + e.what());
    }
  }
  std::vector<ExpectedCell> expected;
  const std::filesystem::path manifest = std::filesystem::path(dir) / "sweep.json";
  if (std::filesystem::exists(manifest)) {
    const SweepSpec s = ParseSweep(ReadTextFile(manifest.string()));
    for (const CellSpec& c : s.cells) {
      expected.push_back({c.label, static_cast<int>(s.seeds.size())});
    }
  }
  Check(!logs.empty() || !expected.empty(), "summarize: no logs in " + dir);
  return Summarize(std::move(logs), expected);
}

// ---------------------------------------------------------------------------
// Grokking comparison on modular addition.
// ---------------------------------------------------------------------------

inline constexpr double kGrokThreshold = 0.95;

struct GrokSpec {
  ModularTaskSpec task;  // seed is taken from `seeds`
  Arch arch;
  OptConfig opt;
  std::vector<double> lambda_grid{0.01, 0.1, 0.3, 1.0, 3.0};
  double window_start_fraction = 0.1;
  double window_end_fraction = 0.6;
  std::vector<uint64_t> seeds{1};
  int checkpoint_every = 100;
};

inline GrokSpec GrokPreset(Scale scale) {
  GrokSpec g;
  // At p = 23 a 40% split (212 equations) does not reach 0.95 test accuracy
  // within 10^4 steps, so the desk preset trains on 60%.
  g.task.modulus = scale == Scale::kDesk ? 23 : 67;
  g.task.train_fraction = scale == Scale::kDesk ? 0.6 : 0.4;
  g.arch.d_model = scale == Scale::kDesk ? 32 : 128;
  g.arch.vocab = g.task.modulus + 1;
  g.arch.init_scale = 0.8;
  g.opt.total_steps = scale == Scale::kDesk ? 4000 : 6000;
  g.seeds = scale == Scale::kDesk ? std::vector<uint64_t>{1} : std::vector<uint64_t>{1, 2, 3};
  return g;
}

// First checkpoint whose held-out accuracy reaches the threshold.
inline std::optional<int64_t> GrokStep(const TrajectoryLog& log, double threshold = kGrokThreshold) {
  if (log.diverged) return std::nullopt;
  for (const CheckpointRecord& r : log.records) {
    if (r.ood_acc >= threshold) return r.step;
  }
  return std::nullopt;
}

struct GrokRow {
  std::string schedule;  // "constant" or "windowed"
  double lambda = 0.0;
  uint64_t seed = 0;
  std::optional<int64_t> grok_step;
  double final_test_acc = 0.0;
};

struct GrokTable {
  double lambda_star = std::numeric_limits<double>::quiet_NaN();
  std::vector<GrokRow> rows;
  // Median over seeds with "no grok" ranked last; nullopt when the median
  // run did not grok.
  std::optional<int64_t> constant_step;
  std::optional<int64_t> windowed_step;
  std::vector<TrajectoryLog> logs;
};

namespace internal {

inline std::optional<int64_t> MedianGrok(std::vector<std::optional<int64_t>> v) {
  if (v.empty()) return std::nullopt;
  constexpr int64_t kNever = std::numeric_limits<int64_t>::max();
  std::vector<int64_t> x;
  for (const auto& s : v) x.push_back(s.value_or(kNever));
  std::sort(x.begin(), x.end());
  const int64_t m = x[(x.size() - 1) / 2];
  if (m == kNever) return std::nullopt;
  return m;
}

}  // namespace internal

// Sweeps constant lambda over the grid, picks lambda* as the earliest median
// grok (ties go to the first grid value), then runs the window
// [start_fraction T, end_fraction T) at lambda*.
inline GrokTable GrokkingCompare(const GrokSpec& spec, int workers = 1) {
  Check(!spec.seeds.empty(), "grokking: empty seed list");
  Check(!spec.lambda_grid.empty(), "grokking: empty lambda grid");
  Check(0.0 <= spec.window_start_fraction && spec.window_start_fraction < spec.window_end_fraction &&
            spec.window_end_fraction <= 1.0,
        "grokking: bad window fractions");
  const int64_t total = spec.opt.total_steps;
  SweepSpec sweep;
  sweep.experiment = "E4";
  sweep.task.kind = "modular";
  sweep.task.modular = spec.task;
  sweep.seeds = spec.seeds;
  TrainConfig base;
  base.arch = spec.arch;
  base.arch.vocab = spec.task.modulus + 1;
  base.opt = spec.opt;
  base.checkpoint_every = spec.checkpoint_every;
  base.bridge_k = std::min(kDefaultBridgeK, spec.arch.d_model / spec.arch.n_heads);
  for (size_t i = 0; i < spec.lambda_grid.size(); ++i) {
    base.schedule = WDSchedule::Constant(spec.lambda_grid[i], total);
    sweep.cells.push_back({"constant_" + std::to_string(i), base});
  }

  GrokTable table;
  auto run_cells = [&](const SweepSpec& s, const std::string& kind,
                       const std::vector<double>& lambdas) {
    std::map<double, std::vector<std::optional<int64_t>>> by_lambda;
    std::vector<RunOutcome> outcomes;
    // Runs are kept in memory; nothing is written unless a caller asks.
    const std::string dir =
        (std::filesystem::temp_directory_path() / ("critwin_grok_" + std::to_string(::getpid())))
            .string();
    SweepOptions so;
    so.workers = workers;
    so.reuse = false;
    outcomes = RunSweep(s, dir, so);
    std::filesystem::remove_all(dir);
    for (size_t i = 0; i < outcomes.size(); ++i) {
      const RunOutcome& o = outcomes[i];
      Check(o.ok, "grokking: run failed: " + o.error);
      const size_t cell = i / s.seeds.size();
      GrokRow row;
      row.schedule = kind;
      row.lambda = lambdas[cell];
      row.seed = o.seed;
      row.grok_step = GrokStep(*o.log);
      row.final_test_acc = o.log->records.empty() ? 0.0 : o.log->records.back().ood_acc;
      by_lambda[row.lambda].push_back(row.grok_step);
      table.rows.push_back(row);
      table.logs.push_back(*o.log);
    }
    return by_lambda;
  };

  const auto constant = run_cells(sweep, "constant", spec.lambda_grid);
  std::optional<int64_t> best;
  double best_lambda = spec.lambda_grid.front();
  bool have = false;
  for (double l : spec.lambda_grid) {
    const std::optional<int64_t> m = internal::MedianGrok(constant.at(l));
    if (!have || (m && (!best || *m < *best))) {
      best = m;
      best_lambda = l;
      have = true;
    }
  }
  table.lambda_star = best_lambda;
  table.constant_step = best;

  SweepSpec windowed = sweep;
  windowed.cells.clear();
  const auto t1 = static_cast<int64_t>(spec.window_start_fraction * static_cast<double>(total));
  const auto t2 = static_cast<int64_t>(spec.window_end_fraction * static_cast<double>(total));
  base.schedule = t2 > t1 ? WDSchedule::Windowed(best_lambda, t1, t2, total) : WDSchedule::None(total);
  windowed.cells.push_back({"windowed", base});
  const auto win = run_cells(windowed, "windowed", {best_lambda});
  table.windowed_step = internal::MedianGrok(win.at(best_lambda));
  return table;
}

inline std::string GrokStepText(const std::optional<int64_t>& s) {
  return s ? std::to_string(*s) : "no grok";
}

}  // namespace critwin

#endif  // CRITWIN_EXPERIMENTS_H_
