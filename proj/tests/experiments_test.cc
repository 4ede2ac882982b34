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


#include "critwin/experiments.h"

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <gtest/gtest.h>

namespace critwin {
namespace {

TEST(BudgetMatchedTest, EarlyMiddleLate) {
  const auto s = BuildBudgetMatched({{"early", WindowPosition::kEarly, 2000},
                                     {"middle", WindowPosition::kMiddle, 2000},
                                     {"late", WindowPosition::kLate, 2000}},
                                    20.0, 20000);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0].schedule, WDSchedule::Windowed(1e-2, 0, 2000, 20000));
  EXPECT_EQ(s[1].schedule, WDSchedule::Windowed(1e-2, 9000, 11000, 20000));
  EXPECT_EQ(s[2].schedule, WDSchedule::Windowed(1e-2, 18000, 20000, 20000));
  for (const NamedSchedule& n : s) EXPECT_EQ(SummedBudget(n.schedule), 20.0);
}

TEST(BudgetMatchedTest, WideWindowLambda) {
  const auto s = BuildBudgetMatched({{"w", WindowPosition::kMiddle, 5000}}, 20.0, 20000);
  EXPECT_EQ(s[0].schedule.lambda, 4e-3);
  EXPECT_EQ(s[0].schedule.t1, 7500);
  EXPECT_EQ(s[0].schedule.t2, 12500);
}

TEST(BudgetMatchedTest, ZeroBudgetGivesNone) {
  const auto s = BuildBudgetMatched({{"w", WindowPosition::kLate, 100}}, 0.0, 1000);
  EXPECT_EQ(s[0].schedule, WDSchedule::None(1000));
}

TEST(BudgetMatchedTest, Errors) {
  EXPECT_THROW(BuildBudgetMatched({{"w", WindowPosition::kEarly, 0}}, 20.0, 100), Error);
  EXPECT_THROW(BuildBudgetMatched({{"w", WindowPosition::kEarly, 200}}, 20.0, 100), Error);
  EXPECT_THROW(BuildBudgetMatched({{"w", WindowPosition::kEarly, 10}}, -1.0, 100), Error);
  // 0.1 / 11 * 11 != 0.1 in binary floating point.
  ASSERT_NE(0.1 / 11.0 * 11.0, 0.1);
  EXPECT_THROW(BuildBudgetMatched({{"w", WindowPosition::kEarly, 11}}, 0.1, 100), Error);
}

TEST(PresetTest, BudgetsAreExact) {
  for (const char* name : {"E2a", "E2b", "E6", "E7", "E11"}) {
    const SweepSpec s = Preset(name, Scale::kPaper);
    for (const CellSpec& c : s.cells) {
      if (c.config.schedule.kind == ScheduleKind::kNone) continue;
      EXPECT_EQ(SummedBudget(c.config.schedule), kPaperBudget) << name << " " << c.label;
      EXPECT_EQ(Budget(c.config.schedule), kPaperBudget) << name << " " << c.label;
    }
  }
}

TEST(PresetTest, Shapes) {
  EXPECT_EQ(Preset("E1", Scale::kPaper).cells.size(), 36u);
  EXPECT_EQ(Preset("E1", Scale::kPaper).seeds.size(), 3u);
  EXPECT_EQ(Preset("E1", Scale::kDesk).seeds.size(), 2u);
  EXPECT_EQ(Preset("E2a", Scale::kPaper).cells.size(), 9u);
  EXPECT_EQ(Preset("E2b", Scale::kPaper).cells.size(), 6u);
  EXPECT_EQ(Preset("E3", Scale::kPaper).seeds.size(), 8u);
  EXPECT_EQ(Preset("E6", Scale::kPaper).cells.size(), 13u);
  EXPECT_EQ(Preset("E7", Scale::kPaper).cells.size(), 11u);
  EXPECT_EQ(Preset("E8", Scale::kPaper).seeds.size(), 12u);
  EXPECT_EQ(Preset("E10", Scale::kPaper).cells[0].config.arch.n_layers, 4);
  EXPECT_EQ(Preset("E11", Scale::kPaper).cells.size(), 10u);
  for (const std::string& n : PresetNames()) {
    const SweepSpec s = Preset(n, Scale::kDesk);
    EXPECT_EQ(s.experiment, n);
    for (const CellSpec& c : s.cells) EXPECT_EQ(c.config.arch.vocab, 24) << n;
  }
  EXPECT_THROW(Preset("E99", Scale::kDesk), Error);
  EXPECT_THROW(ParseScale("huge"), Error);
}

TEST(PresetTest, E2aWindowsHaveEqualWidth) {
  for (const CellSpec& c : Preset("E2a", Scale::kPaper).cells) {
    if (c.config.schedule.kind != ScheduleKind::kWindowed) continue;
    EXPECT_EQ(c.config.schedule.t2 - c.config.schedule.t1, 5000) << c.label;
  }
}

TEST(RescaleTest, EndpointsScaleAndBudgetShrinks) {
  const WDSchedule s = RescaleSchedule(WDSchedule::Windowed(4e-3, 5000, 10000, 20000), 2000);
  EXPECT_EQ(s, WDSchedule::Windowed(4e-3, 500, 1000, 2000));
  EXPECT_EQ(RescaleSchedule(WDSchedule::Windowed(1.0, 0, 1, 20000), 10), WDSchedule::None(10));
  EXPECT_EQ(RescaleSchedule(WDSchedule::Constant(1e-3, 100), 10), WDSchedule::Constant(1e-3, 10));
  const SweepSpec shrunk = ShrinkSweep(Preset("E2b", Scale::kDesk), 2000);
  for (const CellSpec& c : shrunk.cells) EXPECT_EQ(c.config.opt.total_steps, 2000);
}

TEST(SweepSpecTest, ValidateErrors) {
  SweepSpec s = Preset("E3", Scale::kDesk);
  s.seeds.clear();
  EXPECT_THROW(ValidateSweep(s), Error);
  s = Preset("E3", Scale::kDesk);
  s.seeds.push_back(s.seeds.front());
  EXPECT_THROW(ValidateSweep(s), Error);
  s = Preset("E3", Scale::kDesk);
  s.cells.push_back(s.cells.front());
  EXPECT_THROW(ValidateSweep(s), Error);
  s = Preset("E3", Scale::kDesk);
  s.cells[0].config.opt.total_steps = 10;
  EXPECT_THROW(ValidateSweep(s), Error);
  s = Preset("E2b", Scale::kDesk);
  s.cells[0].config.schedule.lambda *= 2.0;
  EXPECT_THROW(ValidateSweep(s), Error);
}

TEST(SweepSpecTest, JsonRoundTrip) {
  const SweepSpec s = Preset("E2b", Scale::kDesk);
  const SweepSpec t = ParseSweep(SerializeSweep(s));
  EXPECT_EQ(SerializeSweep(t), SerializeSweep(s));
  ASSERT_EQ(t.cells.size(), s.cells.size());
  for (size_t i = 0; i < s.cells.size(); ++i) {
    EXPECT_EQ(t.cells[i].config.schedule, s.cells[i].config.schedule);
    EXPECT_EQ(t.cells[i].config.arch, s.cells[i].config.arch);
    EXPECT_EQ(t.cells[i].config.opt, s.cells[i].config.opt);
  }
}

TEST(SweepSpecTest, BasePatchAndTextSchedule) {
  const std::string text = R"({
    "schema": "critwin.sweep/1",
    "task": {"kind": "anchor", "num_keys": 8, "num_anchors": 4},
    "seeds": [3],
    "base": {"arch": {"d_model": 16}, "optimizer": {"total_steps": 100}},
    "cells": [
      {"label": "a", "config": {"schedule": "windowed,0.01,10,30"}},
      {"label": "b", "config": {"optimizer": {"optimizer": "sgd", "lr": 0.1}}}
    ]})";
  const SweepSpec s = ParseSweep(text);
  ASSERT_EQ(s.cells.size(), 2u);
  EXPECT_EQ(s.cells[0].config.arch.d_model, 16);
  EXPECT_EQ(s.cells[0].config.arch.vocab, 12);
  EXPECT_EQ(s.cells[0].config.schedule, WDSchedule::Windowed(0.01, 10, 30, 100));
  EXPECT_EQ(s.cells[1].config.opt.optimizer, OptimizerKind::kSgd);
  EXPECT_EQ(s.cells[1].config.opt.total_steps, 100);
  EXPECT_EQ(s.cells[1].config.schedule, WDSchedule::None(100));
  EXPECT_THROW(ParseSweep(R"({"schema": "critwin.sweep/0"})"), Error);
  EXPECT_THROW(ParseSweep("{"), Error);
}

TEST(StatsTest, MeanPopulationStdMedian) {
  const Stats one = ComputeStats({0.4});
  EXPECT_EQ(one.mean, 0.4);
  EXPECT_EQ(one.std, 0.0);
  EXPECT_EQ(one.median, 0.4);
  const Stats s = ComputeStats({1.0, 3.0, 2.0, 6.0});
  EXPECT_DOUBLE_EQ(s.mean, 3.0);
  EXPECT_DOUBLE_EQ(s.std, std::sqrt(3.5));
  EXPECT_DOUBLE_EQ(s.median, 2.5);
  EXPECT_TRUE(std::isnan(ComputeStats({}).mean));
}

TEST(SpearmanTest, TiesAndDegenerate) {
  EXPECT_DOUBLE_EQ(SpearmanRho({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0);
  EXPECT_DOUBLE_EQ(SpearmanRho({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0);
  // Ranks (1.5, 1.5, 3, 4) against (1, 2, 3, 4).
  EXPECT_NEAR(SpearmanRho({5, 5, 7, 9}, {1, 2, 3, 4}), 0.9486832980505138, 1e-12);
  EXPECT_EQ(AverageRanks({3, 1, 3, 2}), (std::vector<double>{3.5, 1, 3.5, 2}));
  EXPECT_TRUE(std::isnan(SpearmanRho({1, 1, 1}, {1, 2, 3})));
  EXPECT_TRUE(std::isnan(SpearmanRho({1}, {1})));
}

TrajectoryLog FakeLog(const std::string& label, uint64_t seed, double ood, double c02,
                      bool diverged = false) {
  TrajectoryLog l;
  l.config.label = label;
  l.config.seed = seed;
  l.config.opt.total_steps = 100;
  l.task_kind = "anchor";
  l.diverged = diverged;
  CheckpointRecord r0;
  r0.step = 0;
  CheckpointRecord r20;
  r20.step = 20;
  r20.condensation = c02;
  CheckpointRecord r100;
  r100.step = 100;
  r100.ood_acc = ood;
  r100.train_acc = 1.0;
  l.records = {r0, r20, r100};
  return l;
}

TEST(SummarizeTest, StatsStatusAndOrderIndependence) {
  std::vector<TrajectoryLog> logs = {FakeLog("b", 2, 0.2, 3.0), FakeLog("a", 1, 0.5, 1.0),
                                     FakeLog("a", 2, 0.7, 2.0), FakeLog("b", 1, 0.0, 4.0, true)};
  const std::vector<ExpectedCell> expected = {{"a", 2}, {"b", 2}, {"c", 2}};
  const SummaryTable t = Summarize(logs, expected);
  std::reverse(logs.begin(), logs.end());
  EXPECT_EQ(SummaryToCsv(Summarize(logs, expected)), SummaryToCsv(t));

  const CellSummary& a = FindCell(t, "a");
  EXPECT_EQ(a.status, "ok");
  EXPECT_DOUBLE_EQ(a.ood.mean, 0.6);
  EXPECT_NEAR(a.ood.std, 0.1, 1e-12);
  EXPECT_EQ(a.seeds, (std::vector<uint64_t>{1, 2}));
  const CellSummary& b = FindCell(t, "b");
  EXPECT_EQ(b.status, "partial");
  EXPECT_EQ(b.n_runs, 2);
  EXPECT_EQ(b.n_diverged, 1);
  EXPECT_DOUBLE_EQ(b.ood.mean, 0.2);
  EXPECT_EQ(FindCell(t, "c").status, "missing");
  EXPECT_THROW(FindCell(t, "d"), Error);
  // C(0.2T) = (1, 2, 3) against OOD = (0.5, 0.7, 0.2).
  EXPECT_EQ(t.spearman_n, 3);
  EXPECT_NEAR(t.spearman_c02_ood, -0.5, 1e-12);
}

TEST(SummarizeTest, CsvLayout) {
  const SummaryTable t = Summarize({FakeLog("a", 1, 0.5, 1.0)});
  const std::string csv = SummaryToCsv(t);
  EXPECT_EQ(csv.rfind("# critwin.summary/1\n" + SummaryCsvHeader() + "\n", 0), 0u);
  EXPECT_NE(csv.find("\na,ok,1,0,0,0.5,0,0.5,1,0,1,1,"), std::string::npos);
  EXPECT_NE(csv.find(",1:0.5\n"), std::string::npos);
  EXPECT_NE(csv.find("# spearman_c02_ood,nan,1\n"), std::string::npos);
}

class SweepRunTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = (std::filesystem::temp_directory_path() /
            ("critwin_sweep_test_" + std::to_string(::getpid())))
               .string();
    std::filesystem::remove_all(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }

  static SweepSpec TinySweep() {
    SweepSpec s;
    s.task.anchor = TaskSpec{8, 4, 0.75, 0};
    s.seeds = {1, 2};
    TrainConfig c;
    c.arch.d_model = 8;
    c.arch.n_heads = 2;
    c.opt.total_steps = 20;
    c.opt.batch_size = 16;
    c.checkpoint_every = 10;
    c.bridge_k = 4;
    c.schedule = WDSchedule::None(20);
    s.cells.push_back({"none", c});
    c.schedule = WDSchedule::Windowed(1e-2, 5, 15, 20);
    s.cells.push_back({"window", c});
    return s;
  }

  std::string dir_;
};

TEST_F(SweepRunTest, WritesLogsAndReusesThem) {
  const SweepSpec s = TinySweep();
  const std::vector<RunOutcome> first = RunSweep(s, dir_);
  ASSERT_EQ(first.size(), 4u);
  for (const RunOutcome& o : first) {
    EXPECT_TRUE(o.ok) << o.error;
    EXPECT_FALSE(o.cached);
    EXPECT_TRUE(std::filesystem::exists(o.path));
  }
  EXPECT_TRUE(std::filesystem::exists(std::filesystem::path(dir_) / "sweep.json"));
  SweepOptions two;
  two.workers = 2;
  const std::vector<RunOutcome> second = RunSweep(s, dir_, two);
  for (size_t i = 0; i < second.size(); ++i) {
    EXPECT_TRUE(second[i].cached);
    EXPECT_EQ(SerializeLog(*second[i].log), SerializeLog(*first[i].log));
  }
  const SummaryTable t = SummarizeDirectory(dir_);
  ASSERT_EQ(t.cells.size(), 2u);
  EXPECT_EQ(t.cells[0].label, "none");
  EXPECT_EQ(t.cells[0].status, "ok");
  EXPECT_EQ(t.cells[1].n_runs, 2);
}

TEST_F(SweepRunTest, ChangedConfigIsRerun) {
  SweepSpec s = TinySweep();
  RunSweep(s, dir_);
  s.cells[1].config.schedule.lambda = 2e-2;
  const std::vector<RunOutcome> again = RunSweep(s, dir_);
  EXPECT_TRUE(again[0].cached);
  EXPECT_FALSE(again[2].cached);
}

TEST_F(SweepRunTest, FailedRunDoesNotAbortSweep) {
  SweepSpec s = TinySweep();
  // ValidateSweep does not check the architecture, so this fails inside Train.
  s.cells[0].config.arch.mlp_mult = 0;
  const std::vector<RunOutcome> out = RunSweep(s, dir_);
  EXPECT_FALSE(out[0].ok);
  EXPECT_FALSE(out[0].error.empty());
  EXPECT_TRUE(out[2].ok);
  const SummaryTable t = SummarizeDirectory(dir_);
  EXPECT_EQ(FindCell(t, "none").status, "missing");
  EXPECT_EQ(FindCell(t, "window").status, "ok");
}

TEST(GrokTest, StepAndMedian) {
  TrajectoryLog l = FakeLog("x", 1, 0.96, 0.0);
  EXPECT_EQ(GrokStep(l), 100);
  l.records[1].ood_acc = 0.95;
  EXPECT_EQ(GrokStep(l), 20);
  l.diverged = true;
  EXPECT_EQ(GrokStep(l), std::nullopt);
  EXPECT_EQ(internal::MedianGrok({300, std::nullopt, 100}), 300);
  EXPECT_EQ(internal::MedianGrok({std::nullopt, std::nullopt, 100}), std::nullopt);
  EXPECT_EQ(GrokStepText(std::nullopt), "no grok");
}

TEST(GrokTest, ZeroStepsNeverGroks) {
  GrokSpec g = GrokPreset(Scale::kDesk);
  g.opt.total_steps = 0;
  g.lambda_grid = {0.1, 1.0};
  const GrokTable t = GrokkingCompare(g);
  EXPECT_EQ(t.lambda_star, 0.1);
  EXPECT_EQ(t.constant_step, std::nullopt);
  EXPECT_EQ(t.windowed_step, std::nullopt);
  EXPECT_EQ(t.rows.size(), 3u);
}

}  // namespace
}  // namespace critwin
