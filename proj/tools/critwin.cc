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


// Command-line front end. Every subcommand writes JSON Lines to stdout (or
// to --out where a file is produced) and exits non-zero with a one-line
// message on error.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "critwin/anchor_task.h"
#include "critwin/diagnostics.h"
#include "critwin/experiments.h"
#include "critwin/stylized.h"
#include "critwin/training.h"
#include "critwin/transformer.h"

namespace critwin {
namespace {

using Json = nlohmann::ordered_json;

void Emit(const Json& j) { std::cout << j.dump() << "\n"; }

// ---------------------------------------------------------------------------
// gen-task
// ---------------------------------------------------------------------------

struct GenTaskArgs {
  TaskSpec anchor;
  int modulus = 0;
  double train_fraction = 0.4;
  std::string out;
};

void AddGenTask(CLI::App& app, GenTaskArgs& a) {
  CLI::App* c = app.add_subcommand("gen-task", "Generate an anchor-composition (or modular) task file");
  c->add_option("--K", a.anchor.num_keys, "number of keys");
  c->add_option("--M", a.anchor.num_anchors, "number of anchors");
  c->add_option("--fraction", a.anchor.train_pair_fraction, "fraction of ordered pairs used for training");
  c->add_option("--seed", a.anchor.seed, "generation seed");
  c->add_option("--modular", a.modulus, "generate modular addition mod P instead");
  c->add_option("--train-fraction", a.train_fraction, "modular: fraction of equations in training");
  c->add_option("--out", a.out, "output path")->required();
  c->callback([&a] {
    if (a.modulus > 0) {
      const ModularTask t = GenerateModularTask({a.modulus, a.train_fraction, a.anchor.seed});
      WriteTextFile(a.out, SerializeTask(t));
      Emit({{"type", "task"}, {"kind", "modular"}, {"path", a.out}, {"modulus", a.modulus},
            {"train", t.train.size()}, {"test", t.test.size()}});
      return;
    }
    const AnchorTask t = GenerateAnchorTask(a.anchor);
    WriteTextFile(a.out, SerializeTask(t));
    Emit({{"type", "task"}, {"kind", "anchor"}, {"path", a.out}, {"K", a.anchor.num_keys},
          {"M", a.anchor.num_anchors}, {"train_pairs", t.train_pairs.size()},
          {"ood_pairs", t.ood_pairs.size()}});
  });
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string task;
  std::string config;
  std::string schedule;
  int64_t steps = -1;
  uint64_t seed = 0;
  std::string label = "run";
  std::string out;
  std::string save_params;
};

void AddTrain(CLI::App& app, TrainArgs& a) {
  CLI::App* c = app.add_subcommand("train", "Train the transformer on a task file");
  c->add_option("--task", a.task, "task file from gen-task")->required();
  c->add_option("--config", a.config, "JSON config (arch, optimizer, schedule, ...); fields default");
  c->add_option("--schedule", a.schedule, "none | constant,LAMBDA | windowed,LAMBDA,T1,T2");
  c->add_option("--steps", a.steps, "override the optimizer step count T");
  c->add_option("--seed", a.seed, "init and minibatch seed");
  c->add_option("--label", a.label, "run label recorded in the log");
  c->add_option("--out", a.out, "JSON Lines log path")->required();
  c->add_option("--save-params", a.save_params, "write the final parameters as a checkpoint");
  c->callback([&a] {
    const TaskData data = ToTaskData(ParseTask(ReadTextFile(a.task)));
    TrainConfig base;
    base.arch.vocab = data.vocabulary_size;
    nlohmann::json patch = nlohmann::json::object();
    if (!a.config.empty()) {
      try {
        patch = nlohmann::json::parse(ReadTextFile(a.config));
      } catch (const nlohmann::json::exception& e) {
        throw Error("config: " + std::string(e.what()));
      }
    }
    if (a.steps >= 0) patch["optimizer"]["total_steps"] = a.steps;
    if (!a.schedule.empty()) patch["schedule"] = a.schedule;
    TrainConfig config = TrainConfigFromJson(patch, base);
    config.arch.vocab = data.vocabulary_size;
    config.seed = a.seed;
    config.label = a.label;
    const TrainResult r = Train(data, config);
    WriteTextFile(a.out, SerializeLog(r.log));
    if (!a.save_params.empty()) WriteTextFile(a.save_params, SerializeCheckpoint(r.params));
    Json s = {{"type", "summary"},
              {"verdict", r.log.diverged ? "diverged" : "completed"},
              {"log", a.out}};
    if (!r.log.records.empty()) {
      s["final_train_acc"] = r.log.records.back().train_acc;
      s["final_ood_acc"] = r.log.records.back().ood_acc;
      s["final_condensation"] = r.log.records.back().condensation;
    }
    Emit(s);
  });
}

// ---------------------------------------------------------------------------
// diagnose
// ---------------------------------------------------------------------------

struct DiagnoseArgs {
  std::string checkpoint;
  int k = kDefaultBridgeK;
};

void AddDiagnose(CLI::App& app, DiagnoseArgs& a) {
  CLI::App* c = app.add_subcommand("diagnose", "Condensation and bridge diagnostics of a checkpoint");
  c->add_option("--checkpoint", a.checkpoint, "checkpoint from train --save-params")->required();
  c->add_option("--k", a.k, "leading-k for bridge alignment");
  c->callback([&a] {
    const ModelParams p = ParseCheckpoint(ReadTextFile(a.checkpoint));
    const DiagnosticsRecord d = ComputeDiagnostics(p, a.k);
    Emit({{"type", "diagnostics"},
          {"condensation", d.condensation},
          {"band", BandVerdictName(ClassifyBand(d.condensation))},
          {"layer_pr", d.layer_pr},
          {"pr_degenerate", d.pr_degenerate},
          {"bridge", d.bridge.value},
          {"bridge_k", d.bridge.k_used},
          {"bridge_k_reduced", d.bridge.k_reduced},
          {"weight_norm", d.weight_norm}});
  });
}

// ---------------------------------------------------------------------------
// Stylized model: theory-sim, predict-window, basin-mc
// ---------------------------------------------------------------------------

void AddStylizedOptions(CLI::App* c, StylizedSpec& s) {
  c->add_option("--d", s.d, "embedding dimension");
  c->add_option("--K", s.num_keys, "number of keys");
  c->add_option("--M", s.num_anchors, "number of anchors");
  c->add_option("--fraction", s.train_pair_fraction, "training pair fraction");
  c->add_option("--gamma", s.gamma, "init scale");
  c->add_option("--seed", s.seed, "embedding and split seed");
  c->add_flag("--shared-composition", s.shared_composition,
              "identity permutations (targets equal keys)");
}

Json ConfigJson(const StylizedConfig& c) {
  return {{"d", c.d},
          {"K", c.num_keys()},
          {"M", c.num_anchors()},
          {"pairs", c.num_pairs()},
          {"gamma", c.gamma},
          {"sigma_e", SigmaE(c)},
          {"sigma_e_max", SigmaEMax(c)},
          {"c_r", CouplingConstant(c)}};
}

struct TheorySimArgs {
  StylizedSpec spec;
  std::string schedule = "none";
  double t_end = 100.0;
  double dt = 0.05;
  double sample_every = 1.0;
  uint64_t init_seed = 0;
};

void AddTheorySim(CLI::App& app, TheorySimArgs& a) {
  CLI::App* c = app.add_subcommand("theory-sim", "Integrate the stylized gradient flow");
  AddStylizedOptions(c, a.spec);
  c->add_option("--schedule", a.schedule, "none | constant,LAMBDA | windowed,LAMBDA,T1,T2 (flow time)");
  c->add_option("--t-end", a.t_end, "flow-time horizon");
  c->add_option("--dt", a.dt, "Euler step upper bound");
  c->add_option("--sample-every", a.sample_every, "trajectory sampling interval");
  c->add_option("--init-seed", a.init_seed, "parameter init seed");
  c->callback([&a] {
    const StylizedConfig cfg = MakeStylizedConfig(a.spec);
    // Flow windows are real-valued, so the integer step parser is not reused.
    FlowSchedule sched;
    std::vector<std::string> parts;
    std::stringstream ss(a.schedule);
    for (std::string p; std::getline(ss, p, ',');) parts.push_back(p);
    try {
      if (parts.size() == 1 && parts[0] == "none") {
        sched = FlowSchedule::None();
      } else if (parts.size() == 2 && parts[0] == "constant") {
        sched = FlowSchedule::Constant(std::stod(parts[1]));
      } else if (parts.size() == 4 && parts[0] == "windowed") {
        sched = FlowSchedule::Window(std::stod(parts[1]), std::stod(parts[2]), std::stod(parts[3]));
      } else {
        throw Error("theory-sim: bad schedule '" + a.schedule + "'");
      }
    } catch (const std::logic_error&) {
      throw Error("theory-sim: malformed number in '" + a.schedule + "'");
    }
    FlowOptions o;
    o.t_end = a.t_end;
    o.dt = a.dt;
    o.sample_every = a.sample_every;
    const FlowResult r = IntegrateFlow(cfg, sched, o, a.init_seed);
    const OrderParamTrajectory& t = r.trajectory;
    Json header = {{"type", "header"}, {"schema", "critwin.flow/1"}, {"config", ConfigJson(cfg)},
                   {"schedule", a.schedule}, {"dt", t.dt}};
    Emit(header);
    for (size_t i = 0; i < t.times.size(); ++i) {
      Emit({{"type", "checkpoint"},
            {"time", t.times[i]},
            {"m", t.m[i]},
            {"r", t.r[i]},
            {"train_loss", t.loss[i]},
            {"lambda", t.lambda[i]}});
    }
    Emit({{"type", "summary"},
          {"verdict", t.blew_up ? "diverged" : "completed"},
          {"final_m", t.m.back()},
          {"final_r", t.r.back()}});
  });
}

struct PredictArgs {
  StylizedSpec spec;
  double eta = 3e-3;
  double delta = 0.25;
  double total = 0.0;
};

void AddPredictWindow(CLI::App& app, PredictArgs& a) {
  CLI::App* c = app.add_subcommand("predict-window", "Predict the decay window [t1, t2)");
  AddStylizedOptions(c, a.spec);
  c->add_option("--eta", a.eta, "learning rate (flow time = eta * steps)");
  c->add_option("--delta", a.delta, "residual fraction, in (0, 1/2)");
  c->add_option("--T", a.total, "training horizon used to clamp t2 (0: none)");
  c->callback([&a] {
    const StylizedConfig cfg = MakeStylizedConfig(a.spec);
    const WindowPrediction w = PredictWindow(a.spec.gamma, a.eta, a.delta, cfg, a.total);
    Emit({{"type", "window"},
          {"gamma", a.spec.gamma},
          {"eta", a.eta},
          {"delta", w.delta},
          {"sigma_e", w.sigma_e},
          {"sigma_u", w.sigma_u},
          {"c_r", w.c_r},
          {"mu_m", w.mu_m},
          {"mu_r", w.mu_r},
          {"t1", w.t1_steps},
          {"t2", w.t2_steps},
          {"t2_clamped", w.t2_clamped}});
  });
}

struct BasinArgs {
  StylizedSpec spec;
  std::vector<double> gammas{0.25, 0.5, 1.0};
  BasinOptions opt;
};

void AddBasinMc(CLI::App& app, BasinArgs& a) {
  CLI::App* c = app.add_subcommand("basin-mc", "Monte Carlo basin fraction per init scale");
  AddStylizedOptions(c, a.spec);
  c->add_option("--gammas", a.gammas, "init scales")->delimiter(',');
  c->add_option("--n-seeds", a.opt.n_seeds, "seeds per gamma (>= 10)");
  c->add_option("--lambda", a.opt.lambda, "decay strength inside the predicted window");
  c->add_option("--delta", a.opt.delta, "window residual fraction");
  c->add_option("--T", a.opt.t_end, "flow-time horizon");
  c->add_option("--epsilon", a.opt.epsilon, "success tolerance on r_plateau");
  c->add_option("--r-plateau", a.opt.r_plateau, "reference r (<= 0: measure)");
  c->callback([&a] {
    const StylizedConfig cfg = MakeStylizedConfig(a.spec);
    for (const BasinCell& b : BasinMc(cfg, a.gammas, a.opt)) {
      Emit({{"type", "basin"},
            {"gamma", b.gamma},
            {"successes", b.successes},
            {"n_seeds", b.n_seeds},
            {"fraction", b.fraction},
            {"window_start", b.window_start},
            {"window_end", b.window_end},
            {"window_clamped", b.window_clamped},
            {"r_plateau", b.r_plateau},
            {"final_r", b.final_r}});
    }
  });
}

// ---------------------------------------------------------------------------
// sweep, summarize
// ---------------------------------------------------------------------------

struct SweepArgs {
  std::string spec;
  std::string preset;
  std::string scale = "desk";
  std::string out;
  int workers = 1;
  int64_t shrink_t = 0;
  bool no_reuse = false;
  bool dry_run = false;
};

void WriteSummary(const std::string& dir, const std::string& csv) {
  const SummaryTable t = SummarizeDirectory(dir);
  WriteTextFile(csv, SummaryToCsv(t));
  for (const CellSummary& c : t.cells) {
    Emit({{"type", "cell"},
          {"cell", c.label},
          {"status", c.status},
          {"n_runs", c.n_runs},
          {"n_diverged", c.n_diverged},
          {"ood_mean", c.ood.mean},
          {"ood_median", c.ood.median},
          {"c02_mean", c.condensation_02t.mean}});
  }
  Emit({{"type", "summary"}, {"csv", csv}, {"spearman_c02_ood", t.spearman_c02_ood},
        {"spearman_n", t.spearman_n}});
}

void AddSweep(CLI::App& app, SweepArgs& a) {
  CLI::App* c = app.add_subcommand("sweep", "Run a grid of training runs");
  CLI::Option* spec = c->add_option("--spec", a.spec, "sweep spec JSON");
  CLI::Option* preset = c->add_option("--preset", a.preset, "named preset: E1 E2a E2b E3 E5 E6 E7 E8 E10 E11");
  spec->excludes(preset);
  c->add_option("--scale", a.scale, "preset scale: desk | paper");
  c->add_option("--out", a.out, "output directory (one log per run)")->required();
  c->add_option("--workers", a.workers, "concurrent runs");
  c->add_option("--shrink-t", a.shrink_t, "rescale every cell to this T (windows scale linearly)");
  c->add_flag("--no-reuse", a.no_reuse, "rerun even when an identical log exists");
  c->add_flag("--dry-run", a.dry_run, "write sweep.json and exit");
  c->callback([&a] {
    Check(!a.spec.empty() || !a.preset.empty(), "sweep: one of --spec or --preset is required");
    SweepSpec s = a.spec.empty() ? Preset(a.preset, ParseScale(a.scale)) : ParseSweep(ReadTextFile(a.spec));
    if (a.shrink_t > 0) s = ShrinkSweep(std::move(s), a.shrink_t);
    ValidateSweep(s);
    if (a.dry_run) {
      std::filesystem::create_directories(a.out);
      WriteTextFile((std::filesystem::path(a.out) / "sweep.json").string(), SerializeSweep(s));
      Emit({{"type", "plan"}, {"cells", s.cells.size()}, {"seeds", s.seeds}});
      return;
    }
    SweepOptions o;
    o.workers = a.workers;
    o.reuse = !a.no_reuse;
    o.on_done = [](const RunOutcome& r) {
      Json j = {{"type", "run"}, {"cell", r.cell}, {"seed", r.seed}, {"ok", r.ok},
                {"cached", r.cached}, {"path", r.path}};
      if (!r.error.empty()) j["error"] = r.error;
      if (r.log && !r.log->records.empty()) {
        j["diverged"] = r.log->diverged;
        j["final_ood_acc"] = r.log->records.back().ood_acc;
      }
      Emit(j);
      std::cout.flush();
    };
    RunSweep(s, a.out, o);
    WriteSummary(a.out, (std::filesystem::path(a.out) / "summary.csv").string());
  });
}

struct SummarizeArgs {
  std::string in;
  std::string csv;
};

void AddSummarize(CLI::App& app, SummarizeArgs& a) {
  CLI::App* c = app.add_subcommand("summarize", "Aggregate a sweep directory into a CSV table");
  c->add_option("--in", a.in, "sweep output directory")->required();
  c->add_option("--csv", a.csv, "CSV output path")->required();
  c->callback([&a] { WriteSummary(a.in, a.csv); });
}

// ---------------------------------------------------------------------------
// grok
// ---------------------------------------------------------------------------

struct GrokArgs {
  std::string scale = "desk";
  int workers = 1;
  int64_t steps = 0;
  std::string out;
};

void AddGrok(CLI::App& app, GrokArgs& a) {
  CLI::App* c = app.add_subcommand("grok", "Constant vs windowed decay on modular addition");
  c->add_option("--scale", a.scale, "desk (p=23) | paper (p=67)");
  c->add_option("--workers", a.workers, "concurrent runs");
  c->add_option("--steps", a.steps, "override T");
  c->add_option("--out", a.out, "directory for per-run logs");
  c->callback([&a] {
    GrokSpec g = GrokPreset(ParseScale(a.scale));
    if (a.steps > 0) g.opt.total_steps = a.steps;
    const GrokTable t = GrokkingCompare(g, a.workers);
    if (!a.out.empty()) {
      std::filesystem::create_directories(a.out);
      for (size_t i = 0; i < t.logs.size(); ++i) {
        const GrokRow& r = t.rows[i];
        const std::string name = r.schedule + "_l" + internal::FormatValue(r.lambda);
        WriteTextFile((std::filesystem::path(a.out) / RunFileName(name, r.seed)).string(),
                      SerializeLog(t.logs[i]));
      }
    }
    for (const GrokRow& r : t.rows) {
      Emit({{"type", "grok"}, {"schedule", r.schedule}, {"lambda", r.lambda}, {"seed", r.seed},
            {"grok_step", GrokStepText(r.grok_step)}, {"final_test_acc", r.final_test_acc}});
    }
    Emit({{"type", "summary"},
          {"lambda_star", t.lambda_star},
          {"constant_grok_step", GrokStepText(t.constant_step)},
          {"windowed_grok_step", GrokStepText(t.windowed_step)}});
  });
}

}  // namespace
}  // namespace critwin

int main(int argc, char** argv) {
  using namespace critwin;
  CLI::App app{"critwin: critical-window weight decay experiments"};
  app.require_subcommand(1);
  GenTaskArgs gen;
  TrainArgs train;
  DiagnoseArgs diag;
  TheorySimArgs sim;
  PredictArgs predict;
  BasinArgs basin;
  SweepArgs sweep;
  SummarizeArgs summarize;
  GrokArgs grok;
  AddGenTask(app, gen);
  AddTrain(app, train);
  AddDiagnose(app, diag);
  AddTheorySim(app, sim);
  AddPredictWindow(app, predict);
  AddBasinMc(app, basin);
  AddSweep(app, sweep);
  AddSummarize(app, summarize);
  AddGrok(app, grok);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
