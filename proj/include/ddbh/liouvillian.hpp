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

#ifndef DDBH_LIOUVILLIAN_HPP
#define DDBH_LIOUVILLIAN_HPP

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <unsupported/Eigen/KroneckerProduct>

#include "ddbh/density_matrix.hpp"
#include "ddbh/errors.hpp"
#include "ddbh/fock_ops.hpp"
#include "ddbh/model.hpp"
#include "ddbh/types.hpp"

namespace ddbh {

// Column stacking: vec(rho)[i + D j] = rho(i, j).
// Row stacking:    vec(rho)[i D + j] = rho(i, j).
enum class Stacking { ColumnStacking, RowStacking };

inline constexpr std::int64_t kDefaultMaxLiouvilleDim = 1'000'000;

struct VectorizedState {
  Vector data;
  Stacking stacking = Stacking::ColumnStacking;
};

struct SuperOp {
  Eigen::Index hilbert_dim = 0;  // D; the matrix is D^2 x D^2
  SparseMatrix matrix;
  Stacking stacking = Stacking::ColumnStacking;

  Eigen::Index dim() const { return matrix.rows(); }
};

inline VectorizedState vectorize(const Matrix& rho,
                                 Stacking stacking = Stacking::ColumnStacking) {
  if (rho.rows() != rho.cols()) throw ShapeError("vectorize expects a square matrix");
  VectorizedState v;
  v.stacking = stacking;
  if (stacking == Stacking::ColumnStacking) {
    v.data = Eigen::Map<const Vector>(rho.data(), rho.size());
  } else {
    const Matrix t = rho.transpose();
    v.data = Eigen::Map<const Vector>(t.data(), t.size());
  }
  return v;
}

inline VectorizedState vectorize(const DensityMatrix& rho,
                                 Stacking stacking = Stacking::ColumnStacking) {
  return vectorize(rho.data, stacking);
}

inline Matrix devectorize(const VectorizedState& v,
                          Stacking expected = Stacking::ColumnStacking) {
  if (v.stacking != expected) {
    throw ConventionError("vectorized state uses a different stacking convention");
  }
  const auto dim = static_cast<Eigen::Index>(
      std::llround(std::sqrt(static_cast<double>(v.data.size()))));
  if (dim * dim != v.data.size()) throw ShapeError("vector length is not a square");
  Matrix m = Eigen::Map<const Matrix>(v.data.data(), dim, dim);
  if (expected == Stacking::RowStacking) m.transposeInPlace();
  return m;
}

// Direct evaluation of -i[H, rho] + gamma sum_l D[b_l] rho with
// D[b] rho = b rho b^+ - (b^+ b rho + rho b^+ b)/2.
inline Matrix lindblad_rhs(const Matrix& hamiltonian,
                           const std::vector<Matrix>& jumps, double gamma,
                           const Matrix& rho) {
  Matrix out = -kI * (hamiltonian * rho - rho * hamiltonian);
  for (const Matrix& b : jumps) {
    const Matrix bdag = b.adjoint();
    const Matrix nb = bdag * b;
    out += gamma * (b * rho * bdag - 0.5 * (nb * rho + rho * nb));
  }
  return out;
}

inline std::vector<Matrix> loss_operators(const ModelParams& p) {
  const LocalOps ops = local_ops(p.local_dim);
  std::vector<Matrix> jumps;
  for (int l = 0; l < p.n_sites; ++l) {
    jumps.push_back(embed(ops.annihilate, l, p.n_sites, p.local_dim));
  }
  return jumps;
}

inline Matrix lindblad_rhs(const ModelParams& p, const Matrix& rho) {
  return lindblad_rhs(build_hamiltonian(p), loss_operators(p), p.dissipation, rho);
}

// Under column stacking
//   L = -i (I (x) H - H^T (x) I)
//       + gamma sum_l [ conj(b_l) (x) b_l - 1/2 I (x) n_l - 1/2 n_l^T (x) I ].
// Row stacking swaps the Kronecker factors.
inline SuperOp build_superop(const ModelParams& p,
                             Stacking stacking = Stacking::ColumnStacking,
                             std::int64_t max_liouville_dim = kDefaultMaxLiouvilleDim) {
  p.validate();
  const std::int64_t hilbert = chain_dim(p.local_dim, p.n_sites);
  if (hilbert * hilbert > max_liouville_dim) {
    throw SizeError("Liouville dimension " + std::to_string(hilbert * hilbert) +
                    " exceeds cap " + std::to_string(max_liouville_dim));
  }
  const SparseMatrix h = build_hamiltonian_sparse(p, hilbert);
  SparseMatrix id(hilbert, hilbert);
  id.setIdentity();

  // kron(A, B) with A acting on the column index of rho under column stacking.
  auto ordered = [&](const SparseMatrix& on_col, const SparseMatrix& on_row) {
    SparseMatrix out;
    if (stacking == Stacking::ColumnStacking) {
      out = Eigen::kroneckerProduct(on_col, on_row);
    } else {
      out = Eigen::kroneckerProduct(on_row, on_col);
    }
    return out;
  };

  const SparseMatrix ht = h.transpose();
  SparseMatrix l = -kI * (ordered(id, h) - ordered(ht, id));

  const LocalOps ops = local_ops(p.local_dim);
  for (int site = 0; site < p.n_sites; ++site) {
    const SparseMatrix b = embed_sparse(ops.annihilate, site, p.n_sites, p.local_dim);
    const SparseMatrix n = embed_sparse(ops.number, site, p.n_sites, p.local_dim);
    const SparseMatrix bc = b.conjugate();
    const SparseMatrix nt = n.transpose();
    l += p.dissipation *
         (ordered(bc, b) - 0.5 * ordered(id, n) - 0.5 * ordered(nt, id));
  }
  l.prune(Complex{0.0, 0.0});
  l.makeCompressed();

  SuperOp s;
  s.hilbert_dim = hilbert;
  s.matrix = std::move(l);
  s.stacking = stacking;
  return s;
}

inline VectorizedState apply(const SuperOp& superop, const VectorizedState& v) {
  if (v.stacking != superop.stacking) {
    throw ConventionError("state and superoperator stacking conventions differ");
  }
  if (v.data.size() != superop.dim()) {
    throw ShapeError("vector length " + std::to_string(v.data.size()) +
                     " does not match superoperator dimension " +
                     std::to_string(superop.dim()));
  }
  return VectorizedState{superop.matrix * v.data, v.stacking};
}

struct Residual {
  double expectation = 0.0;  // |<rho|L|rho>| / <rho|rho>
  double norm_ratio = 0.0;   // ||L rho|| / ||rho||
};

inline Residual residual_detail(const SuperOp& superop, const Matrix& rho) {
  const VectorizedState v = vectorize(rho, superop.stacking);
  const double norm2 = v.data.squaredNorm();
  if (!(norm2 > 0.0)) throw DegenerateState("residual of a zero state");
  const VectorizedState lv = apply(superop, v);
  Residual r;
  r.expectation = std::abs(v.data.dot(lv.data)) / norm2;
  r.norm_ratio = lv.data.norm() / std::sqrt(norm2);
  return r;
}

// Normalized expectation |<rho|L|rho>| / <rho|rho> in the vectorized inner
// product; vanishes at the steady state.
inline double residual(const SuperOp& superop, const DensityMatrix& rho) {
  return residual_detail(superop, rho.data).expectation;
}

}  // namespace ddbh

#endif  // DDBH_LIOUVILLIAN_HPP
