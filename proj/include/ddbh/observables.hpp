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

#ifndef DDBH_OBSERVABLES_HPP
#define DDBH_OBSERVABLES_HPP

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "ddbh/density_matrix.hpp"
#include "ddbh/errors.hpp"
#include "ddbh/fock_ops.hpp"
#include "ddbh/mpdo.hpp"
#include "ddbh/types.hpp"

namespace ddbh {

// Shape of the chain a dense density matrix lives on.
struct ChainShape {
  int n_sites = 0;
  int local_dim = 0;
};

inline void check_shape(const DensityMatrix& rho, const ChainShape& shape) {
  if (shape.n_sites < 1) throw ArgumentError("n_sites must be >= 1");
  if (shape.local_dim < 2) throw InvalidDimension("local dimension must be >= 2");
  if (rho.dim() != chain_dim(shape.local_dim, shape.n_sites)) {
    throw ShapeError("density matrix dimension does not match the chain shape");
  }
}

struct NumberDistribution {
  int site = 0;
  RealVector probabilities;  // P(n = k), k = 0 .. d-1

  double mean() const {
    double m = 0.0;
    for (Eigen::Index k = 0; k < probabilities.size(); ++k) m += static_cast<double>(k) * probabilities(k);
    return m;
  }
};

// P(k) = tr(rho |k><k|_site), read off the diagonal.
inline NumberDistribution number_distribution(const DensityMatrix& rho, int site,
                                              const ChainShape& shape) {
  check_shape(rho, shape);
  detail::check_site(site, shape.n_sites);
  NumberDistribution out{site, RealVector::Zero(shape.local_dim)};
  for (Eigen::Index i = 0; i < rho.dim(); ++i) {
    const int k = occupation_of(static_cast<int>(i), site, shape.local_dim, shape.n_sites);
    out.probabilities(k) += rho.data(i, i).real();
  }
  return out;
}

inline NumberDistribution number_distribution(const MpdoState& state, int site) {
  detail::check_mpdo_site(state, site);
  NumberDistribution out{site, RealVector::Zero(state.local_dim)};
  for (int k = 0; k < state.local_dim; ++k) {
    out.probabilities(k) = mpdo_expectation(state, {{site, fock_projector(state.local_dim, k)}}).real();
  }
  return out;
}

inline void check_distinct(const std::vector<int>& sites) {
  const std::set<int> unique(sites.begin(), sites.end());
  if (unique.size() != sites.size()) throw ArgumentError("correlator sites must be distinct");
}

// tr(rho prod_s n_s).
inline double correlator(const DensityMatrix& rho, const std::vector<int>& sites,
                         const ChainShape& shape) {
  check_shape(rho, shape);
  check_distinct(sites);
  for (int s : sites) detail::check_site(s, shape.n_sites);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < rho.dim(); ++i) {
    double w = 1.0;
    for (int s : sites) w *= occupation_of(static_cast<int>(i), s, shape.local_dim, shape.n_sites);
    acc += w * rho.data(i, i).real();
  }
  return acc;
}

inline double correlator(const MpdoState& state, const std::vector<int>& sites) {
  check_distinct(sites);
  OperatorSpec ops;
  const Matrix n = local_ops(state.local_dim).number;
  for (int s : sites) ops.emplace_back(s, n);
  return mpdo_expectation(state, ops).real();
}

// Sites used for the reported three-site correlator: the first three sites,
// or every site on shorter chains.
inline std::vector<int> corr_sites(int n_sites) {
  std::vector<int> out;
  for (int s = 0; s < std::min(n_sites, 3); ++s) out.push_back(s);
  return out;
}

inline double mean_occupation(const DensityMatrix& rho, int site, const ChainShape& shape) {
  return number_distribution(rho, site, shape).mean();
}

inline double mean_occupation(const MpdoState& state, int site) {
  return mpdo_expectation(state, {{site, local_ops(state.local_dim).number}}).real();
}

inline DensityMatrix conjugate_state(const DensityMatrix& rho) {
  return DensityMatrix(rho.data.conjugate());
}

// Half the trace norm of the difference.
inline double trace_distance(const DensityMatrix& a, const DensityMatrix& b) {
  if (a.dim() != b.dim()) throw ShapeError("trace_distance needs equal dimensions");
  const Matrix diff = a.data - b.data;
  const Matrix herm = 0.5 * (diff + diff.adjoint());
  Eigen::SelfAdjointEigenSolver<Matrix> es(herm, Eigen::EigenvaluesOnly);
  return 0.5 * es.eigenvalues().cwiseAbs().sum();
}

struct StateDiagnostics {
  double trace = 0.0;
  double hermiticity_defect = 0.0;
  double min_eigenvalue = 0.0;
  double purity = 0.0;
};

inline StateDiagnostics diagnostics(const DensityMatrix& rho) {
  StateDiagnostics d;
  d.trace = rho.trace().real();
  d.hermiticity_defect = rho.hermiticity_defect();
  d.min_eigenvalue = rho.min_eigenvalue();
  d.purity = (rho.data * rho.data).trace().real();
  return d;
}

enum class Backend { Exact, Mpdo };
enum class SweepDirection { Ascending, Descending };

inline std::string_view to_string(Backend b) { return b == Backend::Exact ? "exact" : "mpdo"; }
inline std::string_view to_string(SweepDirection d) {
  return d == SweepDirection::Ascending ? "ascending" : "descending";
}

struct ObservableRow {
  double omega = 0.0;
  std::vector<double> mean_n;                     // per site
  std::vector<NumberDistribution> distributions;  // per site
  double corr_123 = 0.0;
  Backend backend = Backend::Exact;
  double residual = 0.0;
  SweepDirection direction = SweepDirection::Ascending;
  SignChoice sign = SignChoice::Upper;
  bool converged = true;
};

inline ObservableRow observe(const DensityMatrix& rho, const ChainShape& shape, double omega) {
  ObservableRow row;
  row.omega = omega;
  row.backend = Backend::Exact;
  for (int l = 0; l < shape.n_sites; ++l) {
    row.distributions.push_back(number_distribution(rho, l, shape));
    row.mean_n.push_back(row.distributions.back().mean());
  }
  row.corr_123 = correlator(rho, corr_sites(shape.n_sites), shape);
  return row;
}

inline ObservableRow observe(const MpdoState& state, double omega) {
  ObservableRow row;
  row.omega = omega;
  row.backend = Backend::Mpdo;
  for (int l = 0; l < state.n_sites; ++l) {
    row.distributions.push_back(number_distribution(state, l));
    row.mean_n.push_back(row.distributions.back().mean());
  }
  row.corr_123 = correlator(state, corr_sites(state.n_sites));
  return row;
}

}  // namespace ddbh

#endif  // DDBH_OBSERVABLES_HPP
