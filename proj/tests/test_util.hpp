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

#ifndef DDBH_TESTS_TEST_UTIL_HPP
#define DDBH_TESTS_TEST_UTIL_HPP

#include <random>
#include <vector>

#include "ddbh/density_matrix.hpp"
#include "ddbh/model.hpp"
#include "ddbh/types.hpp"

namespace ddbh::testing {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = Complex{g(rng), g(rng)};
  }
  return m;
}

// Full-rank density matrix A A^+ / tr(A A^+).
inline DensityMatrix random_density(Eigen::Index dim, std::mt19937_64& rng) {
  const Matrix a = random_matrix(dim, dim, rng);
  Matrix rho = a * a.adjoint();
  rho /= rho.trace();
  return DensityMatrix(rho);
}

inline ModelParams random_params(int n_sites, int local_dim, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::uniform_real_distribution<double> pos(0.2, 2.0);
  ModelParams p;
  p.n_sites = n_sites;
  p.local_dim = local_dim;
  for (int l = 0; l < n_sites; ++l) {
    p.detuning.push_back(u(rng));
    p.interaction.push_back(u(rng));
  }
  for (int l = 0; l + 1 < n_sites; ++l) p.hopping.push_back(u(rng));
  p.drive = u(rng);
  p.dissipation = pos(rng);
  return p;
}

// Kronecker product of per-site matrices, site 0 leftmost.
inline Matrix kron_chain(const std::vector<Matrix>& factors) {
  Matrix out = Matrix::Ones(1, 1);
  for (const Matrix& f : factors) {
    Matrix next(out.rows() * f.rows(), out.cols() * f.cols());
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      for (Eigen::Index c = 0; c < out.cols(); ++c) {
        next.block(r * f.rows(), c * f.cols(), f.rows(), f.cols()) = out(r, c) * f;
      }
    }
    out = std::move(next);
  }
  return out;
}

}  // namespace ddbh::testing

#endif  // DDBH_TESTS_TEST_UTIL_HPP
