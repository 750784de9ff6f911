// Copyright 2026 The ddbh Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ddbh/harness.hpp"

namespace ddbh {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int count_lines(const std::string& s) {
  return static_cast<int>(std::count(s.begin(), s.end(), '\n'));
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("ddbh_test_" + name);
  fs::remove_all(dir);
  return dir;
}

ExperimentConfig small_preset(Preset which, int d = 3) {
  ExperimentConfig c;
  c.preset = which;
  c.local_dim = d;
  c.omega_grid = {0.3, 0.6};
  return c;
}

TEST(Config, DefaultGrid) {
  const std::vector<double> g = default_omega_grid();
  ASSERT_EQ(g.size(), 10u);
  EXPECT_DOUBLE_EQ(g.front(), 0.1);
  EXPECT_DOUBLE_EQ(g.back(), 1.0);
}

TEST(Config, Validation) {
  ExperimentConfig c = small_preset(Preset::UniformCase1);
  EXPECT_NO_THROW(c.validate());
  c.omega_grid = {};
  EXPECT_THROW(c.validate(), ArgumentError);
  c.omega_grid = {0.1, 0.3, 0.2};
  EXPECT_THROW(c.validate(), ArgumentError);
  c.omega_grid = {0.3, 0.2, 0.1};
  EXPECT_NO_THROW(c.validate());
  c.omega_grid = {0.1, 0.1};
  EXPECT_THROW(c.validate(), ArgumentError);

  ExperimentConfig custom;
  custom.preset.reset();
  custom.model = uniform_chain(2, 1.0, 1.0, 1.0, 0.0, 3);
  custom.sign = SignChoice::Lower;
  EXPECT_THROW(custom.validate(), ArgumentError);
}

TEST(Config, SignChoicesFollowFlip) {
  ExperimentConfig c = small_preset(Preset::DisorderedCase2, 5);
  EXPECT_EQ(c.model_for(SignChoice::Lower),
            table1_preset(Preset::DisorderedCase2, SignChoice::Lower, 5));
  c.flip_mode = FlipMode::FullNegation;
  const ModelParams lower = c.model_for(SignChoice::Lower);
  EXPECT_EQ(lower.hopping, (std::vector<double>{-1.0, 3.0}));
  EXPECT_EQ(c.signs().size(), 2u);
}

TEST(Config, FullNegationFlipsTheSweptDrive) {
  ExperimentConfig c = small_preset(Preset::UniformCase1, 3);
  c.flip_mode = FlipMode::FullNegation;
  EXPECT_DOUBLE_EQ(c.model_at(SignChoice::Upper, 0.3).drive, 0.3);
  EXPECT_DOUBLE_EQ(c.model_at(SignChoice::Lower, 0.3).drive, -0.3);
  c.flip_mode = FlipMode::NumberConserving;
  EXPECT_DOUBLE_EQ(c.model_at(SignChoice::Lower, 0.3).drive, 0.3);
}

TEST(Experiment, FullNegationStatesAreComplexConjugates) {
  ExperimentConfig c;
  c.preset.reset();
  c.model = uniform_chain(2, 1.0, 3.0, 1.0, 0.0, 3);
  c.flip_mode = FlipMode::FullNegation;
  c.omega_grid = {0.4, 0.8};
  c.bidirectional = false;
  const ExperimentResult res = run_experiment(c);
  ASSERT_TRUE(res.symmetry.has_value());
  ASSERT_EQ(res.symmetry->rows.size(), 2u);
  for (const SymmetryRow& row : res.symmetry->rows) {
    ASSERT_TRUE(row.trace_distance_conj.has_value());
    EXPECT_LT(*row.trace_distance_conj, 1e-8);
  }
}

TEST(Config, JsonRoundTrip) {
  ExperimentConfig c = small_preset(Preset::DisorderedCase1, 4);
  c.backend = BackendChoice::Both;
  c.flip_mode = FlipMode::NumberConserving;
  c.mpdo.chi = 20;
  c.mpdo.seed = 99;
  c.mpdo.order = TrotterOrder::Second;
  c.tolerances.mpdo_symmetry = 5e-4;
  c.bidirectional = false;
  const ExperimentConfig d = config_from_json(nlohmann::json::parse(to_json(c).dump()));
  EXPECT_EQ(d.preset, c.preset);
  EXPECT_EQ(d.local_dim, 4);
  EXPECT_EQ(d.omega_grid, c.omega_grid);
  EXPECT_EQ(d.backend, BackendChoice::Both);
  EXPECT_EQ(d.flip_mode, FlipMode::NumberConserving);
  EXPECT_EQ(d.mpdo.chi, 20);
  EXPECT_EQ(d.mpdo.seed, 99u);
  EXPECT_EQ(d.mpdo.order, TrotterOrder::Second);
  EXPECT_EQ(d.tolerances.mpdo_symmetry, 5e-4);
  EXPECT_FALSE(d.bidirectional);
}

TEST(Config, JsonCustomModelAndErrors) {
  const auto j = nlohmann::json::parse(R"({
    "model": {"n_sites": 2, "detuning": 1.0, "hopping": [0.5], "interaction": [2.0, 3.0],
              "local_dim": 3},
    "omega_grid": [0.2], "backend": "exact"})");
  const ExperimentConfig c = config_from_json(j);
  EXPECT_FALSE(c.preset);
  EXPECT_EQ(c.model.detuning, (std::vector<double>{1.0, 1.0}));
  EXPECT_EQ(c.model.interaction, (std::vector<double>{2.0, 3.0}));
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"backend": "gpu"})")), ArgumentError);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"omega_grid": "x"})")), ArgumentError);
  EXPECT_THROW(load_config("/nonexistent/ddbh.json"), IoError);
}

TEST(Config, OutputDirFromEnvironment) {
  ::setenv("DDBH_OUTPUT_DIR", "/tmp/ddbh_env_dir", 1);
  EXPECT_EQ(ExperimentConfig{}.output_dir, "/tmp/ddbh_env_dir");
  ::unsetenv("DDBH_OUTPUT_DIR");
  EXPECT_EQ(ExperimentConfig{}.output_dir, ".");
}

TEST(Emit, EmptyRowsGiveHeaderOnly) {
  ExperimentResult res;
  res.config = small_preset(Preset::UniformCase1, 5);
  const std::string csv = render_csv(res);
  EXPECT_EQ(csv,
            "omega,site,mean_n,p0,p1,p2,p3,p4,corr_123,backend,residual,sweep_direction,"
            "sign_choice\n");
}

TEST(RunExperiment, SinglePointWithoutFlip) {
  ExperimentConfig c = small_preset(Preset::UniformCase1);
  c.omega_grid = {0.5};
  c.bidirectional = false;
  const ExperimentResult res = run_experiment(c);
  EXPECT_EQ(res.chains.size(), 1u);
  EXPECT_FALSE(res.symmetry);
  EXPECT_EQ(res.exit_code(), 0);
  const PointResult& p = res.point(Backend::Exact, SignChoice::Upper, 0.5);
  EXPECT_EQ(p.nullspace_dim, 1);
  EXPECT_LT(p.row.residual, 1e-10);
  EXPECT_EQ(count_lines(render_csv(res)), 1 + 3);
}

TEST(RunExperiment, Case1SymmetryIsInvariantOnExactBackend) {
  ExperimentConfig c;
  c.preset = Preset::UniformCase1;
  c.omega_grid = {0.2, 0.4, 0.6, 0.8, 1.0};
  c.flip_mode = FlipMode::NumberConserving;
  const ExperimentResult res = run_experiment(c);
  ASSERT_TRUE(res.symmetry);
  const SymmetryVerdict* v = res.symmetry->verdict_for(Backend::Exact);
  ASSERT_NE(v, nullptr);
  EXPECT_EQ(v->verdict, "invariant");
  EXPECT_LT(v->max_dp, 1e-8);
  EXPECT_LT(v->max_d_corr, 1e-8);
  for (const SymmetryRow& r : res.symmetry->rows) {
    EXPECT_TRUE(r.invariant);
    ASSERT_TRUE(r.trace_distance_conj);
    EXPECT_LT(*r.trace_distance_conj, 1e-8);
  }
  EXPECT_EQ(res.exit_code(), 0);
  // Two sign choices, two directions, five drives, three sites.
  EXPECT_EQ(count_lines(render_csv(res)), 1 + 2 * 2 * 5 * 3);
}

TEST(RunExperiment, Case2IsNonInvariant) {
  ExperimentConfig c = small_preset(Preset::UniformCase2, 4);
  c.omega_grid = {0.4, 0.8};
  c.flip_mode = FlipMode::PartialUDelta;
  c.bidirectional = false;
  const ExperimentResult res = run_experiment(c);
  const SymmetryVerdict* v = res.symmetry->verdict_for(Backend::Exact);
  EXPECT_EQ(v->verdict, "non-invariant");
  EXPECT_GT(v->max_d_mean_first, 1e-2);
  EXPECT_FALSE(res.symmetry->rows.front().trace_distance_conj);
}

TEST(RunExperiment, NonConvergenceIsFlaggedAndRunContinues) {
  ExperimentConfig c = small_preset(Preset::UniformCase1);
  c.backend = BackendChoice::Mpdo;
  c.mpdo.chi = 4;
  c.mpdo.step_budget = 5;
  c.mpdo.check_interval = 5;
  c.bidirectional = false;
  const ExperimentResult res = run_experiment(c);
  EXPECT_FALSE(res.all_converged());
  EXPECT_EQ(res.exit_code(), 2);
  EXPECT_EQ(res.chain(Backend::Mpdo, SignChoice::Upper).size(), 2u);
  const auto summary = render_summary(res);
  EXPECT_EQ(summary["failed_points"].size(), 2u);
  EXPECT_EQ(summary["exit_code"], 2);
}

TEST(RunExperiment, BothBackendsAreCrossChecked) {
  ExperimentConfig c = small_preset(Preset::DisorderedCase1, 2);
  c.omega_grid = {0.5};
  c.backend = BackendChoice::Both;
  c.mpdo.chi = 16;
  c.bidirectional = false;
  const ExperimentResult res = run_experiment(c);
  bool found = false;
  for (const CrossCheck& chk : res.checks) {
    if (chk.name == "backend") {
      found = true;
      EXPECT_TRUE(chk.passed) << chk.max_deviation;
    }
  }
  EXPECT_TRUE(found);
  EXPECT_EQ(res.exit_code(), 0);
}

TEST(Emit, DeterministicBytes) {
  ExperimentConfig c = small_preset(Preset::DisorderedCase1, 2);
  c.backend = BackendChoice::Both;
  c.flip_mode = FlipMode::NumberConserving;
  c.mpdo.chi = 8;
  c.dump_dense = true;
  const fs::path a = scratch_dir("det_a");
  const fs::path b = scratch_dir("det_b");
  const EmittedFiles fa = emit(run_experiment(c), a, "run");
  const EmittedFiles fb = emit(run_experiment(c), b, "run");
  EXPECT_EQ(slurp(fa.csv), slurp(fb.csv));
  EXPECT_EQ(slurp(fa.summary), slurp(fb.summary));
  ASSERT_EQ(fa.dumps.size(), fb.dumps.size());
  EXPECT_EQ(fa.dumps.size(), 2u * 2u * 2u * 2u);
  for (std::size_t k = 0; k < fa.dumps.size(); ++k) EXPECT_EQ(slurp(fa.dumps[k]), slurp(fb.dumps[k]));
  const auto summary = nlohmann::json::parse(slurp(fa.summary));
  EXPECT_TRUE(summary.contains("symmetry"));
  EXPECT_EQ(summary["config"]["preset"], "disordered_case1");
}

TEST(Emit, DenseDumpRoundTrip) {
  ExperimentConfig c = small_preset(Preset::UniformCase1, 2);
  c.omega_grid = {0.5};
  c.bidirectional = false;
  c.dump_dense = true;
  const ExperimentResult res = run_experiment(c);
  const EmittedFiles f = emit(res, scratch_dir("dump"), "d");
  ASSERT_EQ(f.dumps.size(), 1u);
  EXPECT_EQ(fs::file_size(f.dumps[0]), 8u + 8u * 8u * 16u);
  const DensityMatrix back = read_dense_dump(f.dumps[0]);
  EXPECT_EQ(back.data, res.point(Backend::Exact, SignChoice::Upper, 0.5).rho->data);
}

TEST(Emit, UnwritablePathIsIoError) {
  ExperimentResult res;
  res.config = small_preset(Preset::UniformCase1);
  EXPECT_THROW(emit(res, "/dev/null/ddbh", "x"), IoError);
}

}  // namespace
}  // namespace ddbh
