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

#ifndef DDBH_DENSITY_MATRIX_HPP
#define DDBH_DENSITY_MATRIX_HPP

#include <Eigen/Eigenvalues>
#include <string>

#include "ddbh/errors.hpp"
#include "ddbh/types.hpp"

namespace ddbh {

// Dense density operator on the full chain Hilbert space, Fock basis,
// site 0 most significant.
struct DensityMatrix {
  Matrix data;

  DensityMatrix() = default;
  explicit DensityMatrix(Matrix m) : data(std::move(m)) {
    if (data.rows() != data.cols()) throw ShapeError("density matrix must be square");
  }

  Eigen::Index dim() const { return data.rows(); }
  Complex trace() const { return data.trace(); }

  double hermiticity_defect() const {
    if (data.size() == 0) return 0.0;
    return (data - data.adjoint()).cwiseAbs().maxCoeff();
  }

  double min_eigenvalue() const {
    const Matrix herm = 0.5 * (data + data.adjoint());
    Eigen::SelfAdjointEigenSolver<Matrix> es(herm, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
  }

  // Symmetrize to (rho + rho^+)/2 and scale to unit trace.
  void normalize() {
    data = 0.5 * (data + data.adjoint()).eval();
    const double tr = data.trace().real();
    if (!(tr != 0.0)) throw DegenerateState("density matrix has zero trace");
    data /= tr;
  }

  // Throws DegenerateState when any of the physical-state conditions fail.
  void validate(double herm_tol = 1e-10, double trace_tol = 1e-10,
                double positivity_tol = 1e-8) const {
    if (hermiticity_defect() > herm_tol) {
      throw DegenerateState("density matrix is not Hermitian");
    }
    if (std::abs(trace() - Complex{1.0, 0.0}) > trace_tol) {
      throw DegenerateState("density matrix trace is not 1");
    }
    if (min_eigenvalue() < -positivity_tol) {
      throw DegenerateState("density matrix has a negative eigenvalue");
    }
  }
};

inline DensityMatrix pure_state(const Vector& psi) {
  return DensityMatrix(Matrix(psi * psi.adjoint() / psi.squaredNorm()));
}

// |0...0><0...0| on a Hilbert space of dimension `dim`.
inline DensityMatrix vacuum_state(Eigen::Index dim) {
  Matrix m = Matrix::Zero(dim, dim);
  m(0, 0) = 1.0;
  return DensityMatrix(std::move(m));
}

}  // namespace ddbh

#endif  // DDBH_DENSITY_MATRIX_HPP
