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

// Command-line front end: solve, sweep, symmetry and presets subcommands.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ddbh/harness.hpp"

namespace {

struct Overrides {
  std::string config_path;
  std::string preset;
  std::string sign;
  std::optional<int> local_dim;
  std::optional<int> n_sites;
  std::vector<double> detuning;
  std::vector<double> hopping;
  std::vector<double> interaction;
  std::optional<double> dissipation;
  std::vector<double> omega_grid;
  std::string backend;
  std::optional<int> chi;
  std::optional<double> dt;
  std::optional<double> residual_threshold;
  std::optional<double> sv_log_tol;
  std::optional<int> check_interval;
  std::optional<int> step_budget;
  std::optional<std::uint64_t> seed;
  std::string order;
  std::string flip_mode;
  std::string output_dir;
  std::string output_stem;
  bool dump_dense = false;
  bool one_direction = false;
};

void add_common(CLI::App* app, Overrides& o) {
  app->add_option("--config", o.config_path, "JSON config file; flags override its values");
  app->add_option("--preset", o.preset,
                  "uniform_case1 | uniform_case2 | disordered_case1 | disordered_case2");
  app->add_option("--sign", o.sign, "upper | lower");
  app->add_option("--local-dim", o.local_dim, "Fock cutoff d for presets and custom models");
  app->add_option("--n-sites", o.n_sites, "chain length of a custom model");
  app->add_option("--detuning", o.detuning, "per-site detuning of a custom model");
  app->add_option("--hopping", o.hopping, "per-bond hopping of a custom model");
  app->add_option("--interaction", o.interaction, "per-site interaction of a custom model");
  app->add_option("--dissipation", o.dissipation, "loss rate gamma");
  app->add_option("--omega-grid", o.omega_grid, "drive values (strictly monotone)");
  app->add_option("--backend", o.backend, "exact | mpdo | both");
  app->add_option("--chi", o.chi, "MPDO bond dimension");
  app->add_option("--dt", o.dt, "Trotter time step");
  app->add_option("--residual-threshold", o.residual_threshold, "MPDO residual target");
  app->add_option("--sv-log-tol", o.sv_log_tol, "singular-value log10 change tolerance");
  app->add_option("--check-interval", o.check_interval, "steps between MPDO checkpoints");
  app->add_option("--step-budget", o.step_budget, "maximum Trotter steps per drive value");
  app->add_option("--seed", o.seed, "seed of the random initial MPDO");
  app->add_option("--order", o.order, "Trotter order used for convergence: second | fourth");
  app->add_option("--output-dir", o.output_dir, "output directory (default $DDBH_OUTPUT_DIR or .)");
  app->add_option("--output-stem", o.output_stem, "output file stem");
  app->add_flag("--dump-dense", o.dump_dense, "write dense NESS dumps per point");
  app->add_flag("--one-direction", o.one_direction, "skip the descending sweep");
}

template <typename T, typename Parse>
T parse_flag(const std::string& value, const char* what, Parse parse) {
  auto v = parse(value);
  if (!v) throw ddbh::ArgumentError(std::string("unknown ") + what + " '" + value + "'");
  return *v;
}

ddbh::ExperimentConfig build_config(const Overrides& o) {
  ddbh::ExperimentConfig c =
      o.config_path.empty() ? ddbh::ExperimentConfig{} : ddbh::load_config(o.config_path);
  if (!o.preset.empty()) {
    c.preset = parse_flag<ddbh::Preset>(o.preset, "preset", ddbh::parse_preset);
  }
  if (!o.sign.empty()) c.sign = parse_flag<ddbh::SignChoice>(o.sign, "sign", ddbh::parse_sign);
  if (o.local_dim) {
    c.local_dim = *o.local_dim;
    c.model.local_dim = *o.local_dim;
  }
  if (o.n_sites) {
    c.preset.reset();
    c.model.n_sites = *o.n_sites;
    const auto n = static_cast<std::size_t>(std::max(*o.n_sites, 1));
    c.model.detuning.assign(n, 0.0);
    c.model.hopping.assign(n - 1, 0.0);
    c.model.interaction.assign(n, 0.0);
  }
  auto fill = [](std::vector<double>& dst, const std::vector<double>& src) {
    if (src.size() == 1) {
      std::fill(dst.begin(), dst.end(), src.front());
    } else if (!src.empty()) {
      dst = src;
    }
  };
  fill(c.model.detuning, o.detuning);
  fill(c.model.hopping, o.hopping);
  fill(c.model.interaction, o.interaction);
  if (o.dissipation) c.model.dissipation = *o.dissipation;
  if (!o.omega_grid.empty()) c.omega_grid = o.omega_grid;
  if (!o.backend.empty()) {
    c.backend = parse_flag<ddbh::BackendChoice>(o.backend, "backend", ddbh::parse_backend);
  }
  if (o.chi) c.mpdo.chi = *o.chi;
  if (o.dt) c.mpdo.dt = *o.dt;
  if (o.residual_threshold) c.mpdo.residual_threshold = *o.residual_threshold;
  if (o.sv_log_tol) c.mpdo.sv_log_tol = *o.sv_log_tol;
  if (o.check_interval) c.mpdo.check_interval = *o.check_interval;
  if (o.step_budget) c.mpdo.step_budget = *o.step_budget;
  if (o.seed) c.mpdo.seed = *o.seed;
  if (!o.order.empty()) {
    c.mpdo.order = parse_flag<ddbh::TrotterOrder>(o.order, "order", ddbh::parse_trotter_order);
  }
  if (!o.flip_mode.empty()) {
    c.flip_mode = parse_flag<ddbh::FlipMode>(o.flip_mode, "flip mode", ddbh::parse_flip_mode);
  }
  if (!o.output_dir.empty()) c.output_dir = o.output_dir;
  if (!o.output_stem.empty()) c.output_stem = o.output_stem;
  if (o.dump_dense) c.dump_dense = true;
  if (o.one_direction) c.bidirectional = false;
  return c;
}

void print_report(const ddbh::ExperimentResult& res, const ddbh::EmittedFiles& files) {
  for (const auto& c : res.checks) {
    std::printf("check %-16s %-22s max_dev %.3e tol %.1e %s\n", c.name.c_str(), c.scope.c_str(),
                c.max_deviation, c.tolerance, c.passed ? "ok" : "FLAGGED");
  }
  if (res.symmetry) {
    for (const auto& v : res.symmetry->verdicts) {
      std::printf("symmetry %s (%s): %s  max|dP| %.3e  max|dcorr| %.3e  max|dn_1| %.3e\n",
                  std::string(to_string(v.backend)).c_str(),
                  std::string(to_string(res.symmetry->mode)).c_str(), v.verdict.c_str(),
                  v.max_dp, v.max_d_corr, v.max_d_mean_first);
    }
  }
  std::printf("wrote %s\nwrote %s\n", files.csv.string().c_str(), files.summary.string().c_str());
  if (!files.dumps.empty()) std::printf("wrote %zu dense dumps\n", files.dumps.size());
}

int run(const ddbh::ExperimentConfig& cfg) {
  const ddbh::ExperimentResult res = ddbh::run_experiment(cfg);
  const ddbh::EmittedFiles files = ddbh::emit(res);
  print_report(res, files);
  return res.exit_code();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Steady states of the driven-dissipative Bose-Hubbard chain"};
  app.require_subcommand(1);

  Overrides solve_o;
  double solve_omega = 0.5;
  CLI::App* solve = app.add_subcommand("solve", "NESS and observables at a single drive value");
  add_common(solve, solve_o);
  solve->add_option("--omega", solve_omega, "drive strength");

  Overrides sweep_o;
  CLI::App* sweep = app.add_subcommand("sweep", "bidirectional drive sweep for one sign choice");
  add_common(sweep, sweep_o);

  Overrides sym_o;
  CLI::App* sym = app.add_subcommand("symmetry", "sweep both sign choices and compare");
  add_common(sym, sym_o);
  sym->add_option("--flip-mode", sym_o.flip_mode,
                  "full_negation | number_conserving | partial_u_delta (default: preset's)");

  CLI::App* presets = app.add_subcommand("presets", "list the built-in trimer presets");

  CLI11_PARSE(app, argc, argv);

  try {
    if (presets->parsed()) {
      for (ddbh::Preset p : ddbh::kAllPresets) {
        std::printf("%-18s %-18s %s\n", std::string(to_string(p)).c_str(),
                    std::string(to_string(ddbh::preset_flip_mode(p))).c_str(),
                    std::string(ddbh::preset_description(p)).c_str());
      }
      return 0;
    }
    if (solve->parsed()) {
      ddbh::ExperimentConfig cfg = build_config(solve_o);
      cfg.omega_grid = {solve_omega};
      cfg.flip_mode.reset();
      cfg.bidirectional = false;
      return run(cfg);
    }
    if (sweep->parsed()) {
      ddbh::ExperimentConfig cfg = build_config(sweep_o);
      cfg.flip_mode.reset();
      return run(cfg);
    }
    ddbh::ExperimentConfig cfg = build_config(sym_o);
    if (!cfg.flip_mode) cfg.flip_mode = cfg.effective_flip();
    if (!cfg.flip_mode) throw ddbh::ArgumentError("symmetry needs --flip-mode or a preset");
    return run(cfg);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
