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

#ifndef DDBH_HARNESS_HPP
#define DDBH_HARNESS_HPP

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "ddbh/density_matrix.hpp"
#include "ddbh/errors.hpp"
#include "ddbh/exact_ness.hpp"
#include "ddbh/liouvillian.hpp"
#include "ddbh/model.hpp"
#include "ddbh/mpdo.hpp"
#include "ddbh/observables.hpp"

namespace ddbh {

inline constexpr const char* kVersion = "0.1.0";

enum class BackendChoice { Exact, Mpdo, Both };

inline std::string_view to_string(BackendChoice b) {
  switch (b) {
    case BackendChoice::Exact:
      return "exact";
    case BackendChoice::Mpdo:
      return "mpdo";
    case BackendChoice::Both:
      return "both";
  }
  return "?";
}

inline std::optional<BackendChoice> parse_backend(std::string_view s) {
  if (s == "exact") return BackendChoice::Exact;
  if (s == "mpdo") return BackendChoice::Mpdo;
  if (s == "both") return BackendChoice::Both;
  return std::nullopt;
}

inline std::string_view to_string(TrotterOrder o) {
  return o == TrotterOrder::Second ? "second" : "fourth";
}

inline std::optional<TrotterOrder> parse_trotter_order(std::string_view s) {
  if (s == "second" || s == "2") return TrotterOrder::Second;
  if (s == "fourth" || s == "4") return TrotterOrder::Fourth;
  return std::nullopt;
}

struct MpdoSettings {
  int chi = 15;
  double dt = 0.1;
  double residual_threshold = 1e-3;
  double sv_log_tol = 0.05;
  int check_interval = 100;
  int step_budget = 20000;
  std::uint64_t seed = 20260101;
  TrotterOrder order = TrotterOrder::Fourth;

  ConvergeOptions converge_options() const {
    ConvergeOptions o;
    o.dt = dt;
    o.residual_threshold = residual_threshold;
    o.sv_log_tol = sv_log_tol;
    o.check_interval = check_interval;
    o.step_budget = step_budget;
    o.order = order;
    return o;
  }
};

struct Tolerances {
  double exact_symmetry = 1e-8;
  double mpdo_symmetry = 1e-3;
  double exact_direction = 1e-8;
  double mpdo_direction = 1e-3;
  double backend_agreement = 1e-2;
  double non_invariance = 1e-2;
  double exact_residual = 1e-10;
  double trace = 1e-8;
  double hermiticity = 1e-8;
  double positivity = 1e-6;

  double symmetry(Backend b) const { return b == Backend::Exact ? exact_symmetry : mpdo_symmetry; }
  double direction(Backend b) const {
    return b == Backend::Exact ? exact_direction : mpdo_direction;
  }
};

// Drive values 0.1, 0.2, ..., 1.0.
inline std::vector<double> default_omega_grid() {
  std::vector<double> g;
  for (int k = 1; k <= 10; ++k) g.push_back(0.1 * k);
  return g;
}

inline std::string default_output_dir() {
  const char* env = std::getenv("DDBH_OUTPUT_DIR");
  return (env != nullptr && *env != '\0') ? std::string(env) : std::string(".");
}

struct ExperimentConfig {
  std::optional<Preset> preset;
  SignChoice sign = SignChoice::Upper;
  int local_dim = 5;  // used with presets
  ModelParams model;  // used without a preset
  std::vector<double> omega_grid = default_omega_grid();
  BackendChoice backend = BackendChoice::Exact;
  MpdoSettings mpdo;
  std::optional<FlipMode> flip_mode;  // set: run both sign choices and compare
  bool bidirectional = true;
  Tolerances tolerances;
  NullSpaceOptions nullspace;
  std::string output_dir = default_output_dir();
  std::string output_stem = "ddbh";
  bool dump_dense = false;

  void validate() const {
    if (omega_grid.empty()) throw ArgumentError("omega_grid must not be empty");
    const bool up = omega_grid.size() < 2 || omega_grid[1] > omega_grid[0];
    for (std::size_t k = 1; k < omega_grid.size(); ++k) {
      if (up ? !(omega_grid[k] > omega_grid[k - 1]) : !(omega_grid[k] < omega_grid[k - 1])) {
        throw ArgumentError("omega_grid must be strictly monotone");
      }
    }
    if (mpdo.chi < 1) throw ArgumentError("chi must be >= 1");
    if (!(mpdo.dt > 0.0)) throw ArgumentError("dt must be > 0");
    if (mpdo.check_interval < 1) throw ArgumentError("check_interval must be >= 1");
    if (mpdo.step_budget < 1) throw ArgumentError("step_budget must be >= 1");
    if (!preset && !flip_mode && sign == SignChoice::Lower) {
      throw ArgumentError("a lower sign choice for a custom model needs a flip_mode");
    }
    model_for(SignChoice::Upper).validate();
  }

  // Flip relating the sign choices: explicit flip_mode, else the preset's.
  std::optional<FlipMode> effective_flip() const {
    if (flip_mode) return flip_mode;
    if (preset) return preset_flip_mode(*preset);
    return std::nullopt;
  }

  ModelParams model_for(SignChoice s) const { return model_at(s, std::nullopt); }

  // Model at drive omega; the flip is applied after the drive is set.
  ModelParams model_at(SignChoice s, std::optional<double> omega) const {
    ModelParams p = preset ? table1_preset(*preset, SignChoice::Upper, local_dim) : model;
    if (omega) p.drive = *omega;
    if (s == SignChoice::Lower) {
      const auto flip = effective_flip();
      if (!flip) throw ArgumentError("no flip relates the sign choices");
      p = apply_flip(p, *flip);
    }
    return p;
  }

  std::vector<SignChoice> signs() const {
    if (flip_mode) return {SignChoice::Upper, SignChoice::Lower};
    return {sign};
  }

  std::vector<Backend> backends() const {
    switch (backend) {
      case BackendChoice::Exact:
        return {Backend::Exact};
      case BackendChoice::Mpdo:
        return {Backend::Mpdo};
      case BackendChoice::Both:
        return {Backend::Exact, Backend::Mpdo};
    }
    return {};
  }

  std::vector<SweepDirection> directions() const {
    if (bidirectional) return {SweepDirection::Ascending, SweepDirection::Descending};
    return {SweepDirection::Ascending};
  }

  std::vector<double> grid(SweepDirection d) const {
    std::vector<double> g = omega_grid;
    std::sort(g.begin(), g.end());
    if (d == SweepDirection::Descending) std::reverse(g.begin(), g.end());
    return g;
  }
};

// ---------------------------------------------------------------- JSON I/O

inline nlohmann::ordered_json to_json(const ModelParams& p) {
  nlohmann::ordered_json j;
  j["n_sites"] = p.n_sites;
  j["detuning"] = p.detuning;
  j["hopping"] = p.hopping;
  j["interaction"] = p.interaction;
  j["drive"] = p.drive;
  j["dissipation"] = p.dissipation;
  j["local_dim"] = p.local_dim;
  return j;
}

inline ModelParams model_from_json(const nlohmann::json& j) {
  ModelParams p;
  p.n_sites = j.value("n_sites", 1);
  auto vec = [&](const char* key, std::size_t n, double fill) {
    if (!j.contains(key)) return std::vector<double>(n, fill);
    const auto& v = j.at(key);
    if (v.is_number()) return std::vector<double>(n, v.get<double>());
    return v.get<std::vector<double>>();
  };
  const auto n = static_cast<std::size_t>(std::max(p.n_sites, 1));
  p.detuning = vec("detuning", n, 0.0);
  p.hopping = vec("hopping", n - 1, 0.0);
  p.interaction = vec("interaction", n, 0.0);
  p.drive = j.value("drive", 0.0);
  p.dissipation = j.value("dissipation", 1.0);
  p.local_dim = j.value("local_dim", 5);
  return p;
}

inline nlohmann::ordered_json to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json j;
  if (c.preset) {
    j["preset"] = std::string(to_string(*c.preset));
    j["local_dim"] = c.local_dim;
  } else {
    j["model"] = to_json(c.model);
  }
  j["sign"] = std::string(to_string(c.sign));
  j["omega_grid"] = c.omega_grid;
  j["backend"] = std::string(to_string(c.backend));
  j["flip_mode"] = c.flip_mode ? nlohmann::ordered_json(std::string(to_string(*c.flip_mode)))
                               : nlohmann::ordered_json(nullptr);
  j["bidirectional"] = c.bidirectional;
  nlohmann::ordered_json m;
  m["chi"] = c.mpdo.chi;
  m["dt"] = c.mpdo.dt;
  m["residual_threshold"] = c.mpdo.residual_threshold;
  m["sv_log_tol"] = c.mpdo.sv_log_tol;
  m["check_interval"] = c.mpdo.check_interval;
  m["step_budget"] = c.mpdo.step_budget;
  m["seed"] = c.mpdo.seed;
  m["order"] = std::string(to_string(c.mpdo.order));
  j["mpdo"] = m;
  const Tolerances& t = c.tolerances;
  j["tolerances"] = {{"exact_symmetry", t.exact_symmetry},
                     {"mpdo_symmetry", t.mpdo_symmetry},
                     {"exact_direction", t.exact_direction},
                     {"mpdo_direction", t.mpdo_direction},
                     {"backend_agreement", t.backend_agreement},
                     {"non_invariance", t.non_invariance},
                     {"exact_residual", t.exact_residual},
                     {"trace", t.trace},
                     {"hermiticity", t.hermiticity},
                     {"positivity", t.positivity}};
  j["output_stem"] = c.output_stem;
  j["dump_dense"] = c.dump_dense;
  return j;
}

template <typename Parse>
auto parse_or_throw(const nlohmann::json& j, const char* key, Parse parse) {
  const std::string s = j.at(key).get<std::string>();
  auto v = parse(s);
  if (!v) throw ArgumentError(std::string("unknown ") + key + " '" + s + "'");
  return *v;
}

// Keys mirror the ExperimentConfig fields; absent keys keep their defaults.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    if (j.contains("preset")) c.preset = parse_or_throw(j, "preset", parse_preset);
    if (j.contains("model")) c.model = model_from_json(j.at("model"));
    if (j.contains("local_dim")) c.local_dim = j.at("local_dim").get<int>();
    if (j.contains("sign")) c.sign = parse_or_throw(j, "sign", parse_sign);
    if (j.contains("omega_grid")) c.omega_grid = j.at("omega_grid").get<std::vector<double>>();
    if (j.contains("backend")) c.backend = parse_or_throw(j, "backend", parse_backend);
    if (j.contains("flip_mode") && !j.at("flip_mode").is_null()) {
      c.flip_mode = parse_or_throw(j, "flip_mode", parse_flip_mode);
    }
    if (j.contains("bidirectional")) c.bidirectional = j.at("bidirectional").get<bool>();
    if (j.contains("mpdo")) {
      const auto& m = j.at("mpdo");
      c.mpdo.chi = m.value("chi", c.mpdo.chi);
      c.mpdo.dt = m.value("dt", c.mpdo.dt);
      c.mpdo.residual_threshold = m.value("residual_threshold", c.mpdo.residual_threshold);
      c.mpdo.sv_log_tol = m.value("sv_log_tol", c.mpdo.sv_log_tol);
      c.mpdo.check_interval = m.value("check_interval", c.mpdo.check_interval);
      c.mpdo.step_budget = m.value("step_budget", c.mpdo.step_budget);
      c.mpdo.seed = m.value("seed", c.mpdo.seed);
      if (m.contains("order")) c.mpdo.order = parse_or_throw(m, "order", parse_trotter_order);
    }
    if (j.contains("tolerances")) {
      const auto& t = j.at("tolerances");
      Tolerances& o = c.tolerances;
      o.exact_symmetry = t.value("exact_symmetry", o.exact_symmetry);
      o.mpdo_symmetry = t.value("mpdo_symmetry", o.mpdo_symmetry);
      o.exact_direction = t.value("exact_direction", o.exact_direction);
      o.mpdo_direction = t.value("mpdo_direction", o.mpdo_direction);
      o.backend_agreement = t.value("backend_agreement", o.backend_agreement);
      o.non_invariance = t.value("non_invariance", o.non_invariance);
      o.exact_residual = t.value("exact_residual", o.exact_residual);
      o.trace = t.value("trace", o.trace);
      o.hermiticity = t.value("hermiticity", o.hermiticity);
      o.positivity = t.value("positivity", o.positivity);
    }
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("output_stem")) c.output_stem = j.at("output_stem").get<std::string>();
    if (j.contains("dump_dense")) c.dump_dense = j.at("dump_dense").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("malformed config: ") + e.what());
  }
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError("config file " + path + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

// ---------------------------------------------------------------- running

struct PointResult {
  ObservableRow row;
  std::optional<DensityMatrix> rho;  // dense state when the chain is small enough
  std::optional<StateDiagnostics> diag;
  int nullspace_dim = 0;  // exact backend only
  int steps = 0;          // MPDO backend only
  std::string failure;    // non-empty when the point did not converge
};

struct ChainKey {
  Backend backend;
  SignChoice sign;
  SweepDirection direction;

  auto tie() const { return std::tuple(backend, sign, direction); }
  bool operator<(const ChainKey& o) const { return tie() < o.tie(); }
  bool operator==(const ChainKey& o) const { return tie() == o.tie(); }
};

struct CrossCheck {
  std::string name;  // direction, backend, nullspace, convergence, cptp, exact_residual
  std::string scope;
  double max_deviation = 0.0;
  double tolerance = 0.0;
  bool passed = true;
};

struct SymmetryRow {
  double omega = 0.0;
  Backend backend = Backend::Exact;
  double max_dp = 0.0;         // max over sites and k of |P+ - P-|
  double d_corr = 0.0;         // |<n1 n2 n3>+ - <n1 n2 n3>-|
  double max_d_mean = 0.0;     // max over sites of |<n_l>+ - <n_l>-|
  double d_mean_first = 0.0;   // |<n_1>+ - <n_1>-|
  std::optional<double> trace_distance;       // T(rho+, rho-)
  std::optional<double> trace_distance_conj;  // T(rho+, conj(rho-)) up to parity gauge
  bool invariant = false;
};

struct SymmetryVerdict {
  Backend backend = Backend::Exact;
  std::string verdict;  // invariant, non-invariant or inconclusive
  double max_dp = 0.0;
  double max_d_corr = 0.0;
  double max_d_mean_first = 0.0;
  double tolerance = 0.0;
};

struct SymmetryReport {
  FlipMode mode = FlipMode::NumberConserving;
  std::vector<SymmetryRow> rows;
  std::vector<SymmetryVerdict> verdicts;

  const SymmetryVerdict* verdict_for(Backend b) const {
    for (const auto& v : verdicts) {
      if (v.backend == b) return &v;
    }
    return nullptr;
  }
};

struct ExperimentResult {
  ExperimentConfig config;
  std::map<ChainKey, std::vector<PointResult>> chains;  // points in sweep order
  std::vector<CrossCheck> checks;
  std::optional<SymmetryReport> symmetry;

  bool all_converged() const {
    for (const auto& [key, pts] : chains) {
      for (const auto& p : pts) {
        if (!p.row.converged) return false;
      }
    }
    return true;
  }

  bool all_checks_passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const CrossCheck& c) { return c.passed; });
  }

  // 0: everything converged and agreed; 2: completed with flags.
  int exit_code() const { return (all_converged() && all_checks_passed()) ? 0 : 2; }

  const std::vector<PointResult>& chain(Backend b, SignChoice s,
                                        SweepDirection d = SweepDirection::Ascending) const {
    const auto it = chains.find(ChainKey{b, s, d});
    if (it == chains.end()) throw ArgumentError("experiment has no such chain");
    return it->second;
  }

  // Ascending-chain point at the given drive.
  const PointResult& point(Backend b, SignChoice s, double omega,
                           SweepDirection d = SweepDirection::Ascending) const {
    for (const auto& p : chain(b, s, d)) {
      if (std::abs(p.row.omega - omega) < 1e-12) return p;
    }
    throw ArgumentError("experiment has no point at this drive");
  }
};

namespace detail {

inline ObservableRow failed_row(double omega, const ModelParams& p, Backend b) {
  ObservableRow row;
  row.omega = omega;
  row.backend = b;
  row.converged = false;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  row.corr_123 = nan;
  row.residual = nan;
  for (int l = 0; l < p.n_sites; ++l) {
    row.mean_n.push_back(nan);
    row.distributions.push_back({l, RealVector::Constant(p.local_dim, nan)});
  }
  return row;
}

inline bool dense_feasible(const ModelParams& p) {
  return chain_dim(p.local_dim, p.n_sites) <= kDefaultMaxHilbertDim;
}

inline std::vector<PointResult> run_exact_chain(const ExperimentConfig& cfg, SignChoice sign,
                                                SweepDirection dir) {
  std::vector<PointResult> out;
  std::optional<DensityMatrix> previous;
  const ModelParams base = cfg.model_for(sign);
  const ChainShape shape{base.n_sites, base.local_dim};
  for (double omega : cfg.grid(dir)) {
    const ModelParams p = cfg.model_at(sign, omega);
    PointResult pr;
    try {
      const SuperOp L = build_superop(p);
      NullSpaceOptions opt = cfg.nullspace;
      opt.tol = cfg.tolerances.exact_residual;
      NessSolveReport rep = steady_state(L, opt, previous ? &*previous : nullptr);
      pr.row = observe(rep.rho, shape, omega);
      pr.row.residual = rep.residual_norm;
      pr.nullspace_dim = rep.nullspace_dim;
      pr.diag = diagnostics(rep.rho);
      previous = rep.rho;
      pr.rho = std::move(rep.rho);
    } catch (const SolverFailure& e) {
      pr.row = failed_row(omega, p, Backend::Exact);
      pr.failure = e.what();
    }
    pr.row.backend = Backend::Exact;
    pr.row.sign = sign;
    pr.row.direction = dir;
    out.push_back(std::move(pr));
  }
  return out;
}

inline std::vector<PointResult> run_mpdo_chain(const ExperimentConfig& cfg, SignChoice sign,
                                               SweepDirection dir) {
  std::vector<PointResult> out;
  const ModelParams base = cfg.model_for(sign);
  MpdoState current = random_mpdo(base.n_sites, base.local_dim, cfg.mpdo.chi, cfg.mpdo.seed);
  const ConvergeOptions opt = cfg.mpdo.converge_options();
  for (double omega : cfg.grid(dir)) {
    const ModelParams p = cfg.model_at(sign, omega);
    auto [state, report] = converge_to_ness(current, p, opt);
    PointResult pr;
    pr.row = observe(state, omega);
    pr.row.residual = report.final_residual;
    pr.row.converged = report.converged;
    pr.steps = report.steps_taken;
    if (!report.converged) pr.failure = "step budget exhausted";
    if (dense_feasible(p)) {
      DensityMatrix rho = to_dense(state);
      pr.diag = diagnostics(rho);
      pr.rho = std::move(rho);
    }
    pr.row.backend = Backend::Mpdo;
    pr.row.sign = sign;
    pr.row.direction = dir;
    current = std::move(state);
    out.push_back(std::move(pr));
  }
  return out;
}

// Largest difference between two rows over mean occupations, distributions
// and the correlator.
inline double row_deviation(const ObservableRow& a, const ObservableRow& b) {
  double dev = std::abs(a.corr_123 - b.corr_123);
  for (std::size_t l = 0; l < a.mean_n.size(); ++l) {
    dev = std::max(dev, std::abs(a.mean_n[l] - b.mean_n[l]));
    dev = std::max(dev, (a.distributions[l].probabilities - b.distributions[l].probabilities)
                            .cwiseAbs()
                            .maxCoeff());
  }
  return std::isnan(dev) ? std::numeric_limits<double>::infinity() : dev;
}

inline const PointResult* find_point(const std::vector<PointResult>& pts, double omega) {
  for (const auto& p : pts) {
    if (std::abs(p.row.omega - omega) < 1e-12) return &p;
  }
  return nullptr;
}

inline std::string scope_of(Backend b, std::optional<SignChoice> s = std::nullopt) {
  std::string out(to_string(b));
  if (s) out += "/" + std::string(to_string(*s));
  return out;
}

// Diagonal (-1)^N on the chain; relates the number-conserving flip to a
// plain conjugation.
inline Matrix parity_gauge(const ChainShape& shape) {
  const std::int64_t dim = chain_dim(shape.local_dim, shape.n_sites);
  Matrix p = Matrix::Zero(dim, dim);
  for (std::int64_t i = 0; i < dim; ++i) {
    int total = 0;
    for (int l = 0; l < shape.n_sites; ++l) {
      total += occupation_of(static_cast<int>(i), l, shape.local_dim, shape.n_sites);
    }
    p(i, i) = (total % 2 == 0) ? 1.0 : -1.0;
  }
  return p;
}

inline void add_checks(ExperimentResult& res) {
  const ExperimentConfig& cfg = res.config;
  const Tolerances& tol = cfg.tolerances;
  for (Backend b : cfg.backends()) {
    for (SignChoice s : cfg.signs()) {
      const auto& asc = res.chain(b, s, SweepDirection::Ascending);
      if (cfg.bidirectional) {
        const auto& desc = res.chain(b, s, SweepDirection::Descending);
        double dev = 0.0;
        for (const auto& p : asc) {
          const PointResult* q = find_point(desc, p.row.omega);
          dev = std::max(dev, q ? row_deviation(p.row, q->row)
                                : std::numeric_limits<double>::infinity());
        }
        res.checks.push_back({"direction", scope_of(b, s), dev, tol.direction(b),
                              dev < tol.direction(b)});
      }
      std::size_t failed = 0;
      double worst_trace = 0.0;
      double worst_herm = 0.0;
      double worst_neg = 0.0;
      int worst_kernel = 1;
      double worst_residual = 0.0;
      for (SweepDirection d : cfg.directions()) {
        for (const auto& p : res.chain(b, s, d)) {
          if (!p.row.converged) ++failed;
          if (p.diag) {
            worst_trace = std::max(worst_trace, std::abs(p.diag->trace - 1.0));
            worst_herm = std::max(worst_herm, p.diag->hermiticity_defect);
            worst_neg = std::max(worst_neg, -p.diag->min_eigenvalue);
          }
          if (b == Backend::Exact && p.row.converged) {
            worst_kernel = std::max(worst_kernel, p.nullspace_dim);
            worst_residual = std::max(worst_residual, p.row.residual);
          }
        }
      }
      res.checks.push_back({"convergence", scope_of(b, s), static_cast<double>(failed), 0.0,
                            failed == 0});
      res.checks.push_back({"cptp_trace", scope_of(b, s), worst_trace, tol.trace,
                            worst_trace <= tol.trace});
      res.checks.push_back({"cptp_hermiticity", scope_of(b, s), worst_herm, tol.hermiticity,
                            worst_herm < tol.hermiticity});
      res.checks.push_back({"cptp_positivity", scope_of(b, s), worst_neg, tol.positivity,
                            worst_neg <= tol.positivity});
      if (b == Backend::Exact) {
        res.checks.push_back({"nullspace", scope_of(b, s), static_cast<double>(worst_kernel), 1.0,
                              worst_kernel == 1});
        res.checks.push_back({"exact_residual", scope_of(b, s), worst_residual,
                              tol.exact_residual, worst_residual < tol.exact_residual});
      }
    }
  }
  if (cfg.backend == BackendChoice::Both) {
    for (SignChoice s : cfg.signs()) {
      const auto& ex = res.chain(Backend::Exact, s);
      const auto& mp = res.chain(Backend::Mpdo, s);
      double dev = 0.0;
      for (const auto& p : ex) {
        const PointResult* q = find_point(mp, p.row.omega);
        dev = std::max(dev, q ? row_deviation(p.row, q->row)
                              : std::numeric_limits<double>::infinity());
      }
      res.checks.push_back({"backend", "exact-mpdo/" + std::string(to_string(s)), dev,
                            tol.backend_agreement, dev < tol.backend_agreement});
    }
  }
}

inline SymmetryReport build_symmetry(const ExperimentResult& res) {
  const ExperimentConfig& cfg = res.config;
  SymmetryReport rep;
  rep.mode = *cfg.flip_mode;
  const ModelParams base = cfg.model_for(SignChoice::Upper);
  const ChainShape shape{base.n_sites, base.local_dim};
  std::optional<Matrix> gauge;
  if (rep.mode == FlipMode::NumberConserving && dense_feasible(base)) gauge = parity_gauge(shape);
  for (Backend b : cfg.backends()) {
    const double tol = cfg.tolerances.symmetry(b);
    SymmetryVerdict v;
    v.backend = b;
    v.tolerance = tol;
    bool all_invariant = true;
    const auto& plus = res.chain(b, SignChoice::Upper);
    const auto& minus = res.chain(b, SignChoice::Lower);
    for (const auto& p : plus) {
      const PointResult* q = find_point(minus, p.row.omega);
      if (q == nullptr) continue;
      SymmetryRow row;
      row.omega = p.row.omega;
      row.backend = b;
      row.d_corr = std::abs(p.row.corr_123 - q->row.corr_123);
      for (std::size_t l = 0; l < p.row.mean_n.size(); ++l) {
        row.max_d_mean = std::max(row.max_d_mean, std::abs(p.row.mean_n[l] - q->row.mean_n[l]));
        row.max_dp = std::max(row.max_dp, (p.row.distributions[l].probabilities -
                                           q->row.distributions[l].probabilities)
                                              .cwiseAbs()
                                              .maxCoeff());
      }
      row.d_mean_first = std::abs(p.row.mean_n[0] - q->row.mean_n[0]);
      if (p.rho && q->rho) {
        row.trace_distance = trace_distance(*p.rho, *q->rho);
        if (rep.mode == FlipMode::FullNegation) {
          row.trace_distance_conj = trace_distance(*p.rho, conjugate_state(*q->rho));
        } else if (gauge) {
          const DensityMatrix mapped((*gauge * q->rho->data * *gauge).conjugate());
          row.trace_distance_conj = trace_distance(*p.rho, mapped);
        }
      }
      row.invariant = row.max_dp < tol && row.d_corr < tol;
      all_invariant = all_invariant && row.invariant;
      v.max_dp = std::max(v.max_dp, row.max_dp);
      v.max_d_corr = std::max(v.max_d_corr, row.d_corr);
      v.max_d_mean_first = std::max(v.max_d_mean_first, row.d_mean_first);
      rep.rows.push_back(row);
    }
    if (all_invariant) {
      v.verdict = "invariant";
    } else if (v.max_d_mean_first > cfg.tolerances.non_invariance) {
      v.verdict = "non-invariant";
    } else {
      v.verdict = "inconclusive";
    }
    rep.verdicts.push_back(v);
  }
  return rep;
}

}  // namespace detail

// Runs every (backend, sign choice, sweep direction) chain concurrently; the
// points within a chain are sequential and warm-started from their
// predecessor.
inline ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  ExperimentResult res;
  res.config = config;
  std::vector<std::pair<ChainKey, std::future<std::vector<PointResult>>>> jobs;
  for (Backend b : config.backends()) {
    for (SignChoice s : config.signs()) {
      for (SweepDirection d : config.directions()) {
        auto task = [&config, b, s, d] {
          return b == Backend::Exact ? detail::run_exact_chain(config, s, d)
                                     : detail::run_mpdo_chain(config, s, d);
        };
        jobs.emplace_back(ChainKey{b, s, d}, std::async(std::launch::async, task));
      }
    }
  }
  for (auto& [key, fut] : jobs) res.chains.emplace(key, fut.get());
  detail::add_checks(res);
  if (config.flip_mode) res.symmetry = detail::build_symmetry(res);
  return res;
}

// ---------------------------------------------------------------- output

inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12e", x);
  return buf;
}

inline std::string csv_header(int local_dim) {
  std::string h = "omega,site,mean_n";
  for (int k = 0; k < local_dim; ++k) h += ",p" + std::to_string(k);
  h += ",corr_123,backend,residual,sweep_direction,sign_choice\n";
  return h;
}

// Rows in a fixed order: sign choice, sweep direction, backend, drive (as
// swept), site. Probabilities are clipped at zero for reporting.
inline std::string render_csv(const ExperimentResult& res) {
  const int local_dim = res.config.preset ? res.config.local_dim : res.config.model.local_dim;
  std::string out = csv_header(local_dim);
  std::vector<ChainKey> keys;
  for (const auto& [key, pts] : res.chains) keys.push_back(key);
  std::sort(keys.begin(), keys.end(), [](const ChainKey& a, const ChainKey& b) {
    return std::tuple(a.sign, a.direction, a.backend) < std::tuple(b.sign, b.direction, b.backend);
  });
  for (const ChainKey& key : keys) {
    for (const auto& p : res.chains.at(key)) {
      const ObservableRow& r = p.row;
      for (std::size_t l = 0; l < r.mean_n.size(); ++l) {
        out += format_double(r.omega) + "," + std::to_string(l) + "," + format_double(r.mean_n[l]);
        const RealVector& pk = r.distributions[l].probabilities;
        for (Eigen::Index k = 0; k < pk.size(); ++k) {
          out += "," + format_double(std::isnan(pk(k)) ? pk(k) : std::max(pk(k), 0.0));
        }
        out += "," + format_double(r.corr_123) + "," + std::string(to_string(r.backend)) + "," +
               format_double(r.residual) + "," + std::string(to_string(r.direction)) + "," +
               std::string(to_string(r.sign)) + "\n";
      }
    }
  }
  return out;
}

inline nlohmann::ordered_json json_number(double x) {
  if (std::isfinite(x)) return x;
  return format_double(x);
}

inline nlohmann::ordered_json render_summary(const ExperimentResult& res) {
  nlohmann::ordered_json j;
  j["version"] = kVersion;
  j["eigen_version"] = std::to_string(EIGEN_WORLD_VERSION) + "." +
                       std::to_string(EIGEN_MAJOR_VERSION) + "." +
                       std::to_string(EIGEN_MINOR_VERSION);
  j["config"] = to_json(res.config);
  j["seed"] = res.config.mpdo.seed;
  j["all_converged"] = res.all_converged();
  j["all_checks_passed"] = res.all_checks_passed();
  j["exit_code"] = res.exit_code();
  auto& checks = j["checks"] = nlohmann::ordered_json::array();
  for (const auto& c : res.checks) {
    checks.push_back({{"name", c.name},
                      {"scope", c.scope},
                      {"max_deviation", json_number(c.max_deviation)},
                      {"tolerance", c.tolerance},
                      {"passed", c.passed}});
  }
  auto& fails = j["failed_points"] = nlohmann::ordered_json::array();
  for (const auto& [key, pts] : res.chains) {
    for (const auto& p : pts) {
      if (p.row.converged) continue;
      fails.push_back({{"backend", to_string(key.backend)},
                       {"sign_choice", to_string(key.sign)},
                       {"sweep_direction", to_string(key.direction)},
                       {"omega", p.row.omega},
                       {"reason", p.failure}});
    }
  }
  if (res.symmetry) {
    nlohmann::ordered_json s;
    s["flip_mode"] = std::string(to_string(res.symmetry->mode));
    auto& verdicts = s["verdicts"] = nlohmann::ordered_json::array();
    for (const auto& v : res.symmetry->verdicts) {
      verdicts.push_back({{"backend", to_string(v.backend)},
                          {"verdict", v.verdict},
                          {"tolerance", v.tolerance},
                          {"max_dp", json_number(v.max_dp)},
                          {"max_d_corr", json_number(v.max_d_corr)},
                          {"max_d_mean_first_site", json_number(v.max_d_mean_first)}});
    }
    auto& rows = s["rows"] = nlohmann::ordered_json::array();
    for (const auto& r : res.symmetry->rows) {
      nlohmann::ordered_json row{{"omega", r.omega},
                                 {"backend", to_string(r.backend)},
                                 {"max_dp", json_number(r.max_dp)},
                                 {"d_corr", json_number(r.d_corr)},
                                 {"max_d_mean", json_number(r.max_d_mean)},
                                 {"d_mean_first_site", json_number(r.d_mean_first)},
                                 {"invariant", r.invariant}};
      row["trace_distance"] =
          r.trace_distance ? json_number(*r.trace_distance) : nlohmann::ordered_json(nullptr);
      row["trace_distance_conj"] = r.trace_distance_conj ? json_number(*r.trace_distance_conj)
                                                         : nlohmann::ordered_json(nullptr);
      rows.push_back(row);
    }
    j["symmetry"] = s;
  }
  return j;
}

// Binary dump: uint64 dimension D, then D*D row-major (re, im) doubles.
inline void write_dense_dump(const DensityMatrix& rho, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const auto dim = static_cast<std::uint64_t>(rho.dim());
  out.write(reinterpret_cast<const char*>(&dim), sizeof dim);
  for (Eigen::Index r = 0; r < rho.dim(); ++r) {
    for (Eigen::Index c = 0; c < rho.dim(); ++c) {
      const double z[2] = {rho.data(r, c).real(), rho.data(r, c).imag()};
      out.write(reinterpret_cast<const char*>(z), sizeof z);
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

inline DensityMatrix read_dense_dump(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::uint64_t dim = 0;
  in.read(reinterpret_cast<char*>(&dim), sizeof dim);
  Matrix m(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      double z[2];
      in.read(reinterpret_cast<char*>(z), sizeof z);
      m(r, c) = Complex{z[0], z[1]};
    }
  }
  if (!in) throw IoError("truncated dump " + path.string());
  return DensityMatrix(std::move(m));
}

struct EmittedFiles {
  std::filesystem::path csv;
  std::filesystem::path summary;
  std::vector<std::filesystem::path> dumps;
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

// Writes <stem>.csv, <stem>_summary.json and, when requested, one dense dump
// per point.
inline EmittedFiles emit(const ExperimentResult& res, const std::filesystem::path& dir,
                         const std::string& stem) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string());
  EmittedFiles files;
  files.csv = dir / (stem + ".csv");
  files.summary = dir / (stem + "_summary.json");
  write_text(files.csv, render_csv(res));
  write_text(files.summary, render_summary(res).dump(2) + "\n");
  if (res.config.dump_dense) {
    for (const auto& [key, pts] : res.chains) {
      for (std::size_t k = 0; k < pts.size(); ++k) {
        if (!pts[k].rho) continue;
        const std::string name = stem + "_" + std::string(to_string(key.backend)) + "_" +
                                 std::string(to_string(key.sign)) + "_" +
                                 std::string(to_string(key.direction)) + "_" +
                                 std::to_string(k) + ".bin";
        files.dumps.push_back(dir / name);
        write_dense_dump(*pts[k].rho, files.dumps.back());
      }
    }
  }
  return files;
}

inline EmittedFiles emit(const ExperimentResult& res) {
  return emit(res, res.config.output_dir, res.config.output_stem);
}

}  // namespace ddbh

#endif  // DDBH_HARNESS_HPP
