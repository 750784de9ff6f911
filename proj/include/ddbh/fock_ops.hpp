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

#ifndef DDBH_FOCK_OPS_HPP
#define DDBH_FOCK_OPS_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "ddbh/errors.hpp"
#include "ddbh/types.hpp"

namespace ddbh {

// Truncated single-site bosonic operators in the Fock basis |0>, ..., |d-1>.
// Every matrix has real entries.
struct LocalOps {
  int dim = 0;
  Matrix annihilate;
  Matrix create;
  Matrix number;
  Matrix identity;
};

inline LocalOps local_ops(int dim) {
  if (dim < 2) {
    throw InvalidDimension("local dimension must be >= 2, got " +
                           std::to_string(dim));
  }
  LocalOps ops;
  ops.dim = dim;
  ops.annihilate = Matrix::Zero(dim, dim);
  for (int j = 1; j < dim; ++j) {
    ops.annihilate(j - 1, j) = std::sqrt(static_cast<double>(j));
  }
  ops.create = ops.annihilate.adjoint();
  ops.number = ops.create * ops.annihilate;
  ops.identity = Matrix::Identity(dim, dim);
  return ops;
}

// |k><k| on one site.
inline Matrix fock_projector(int dim, int k) {
  if (k < 0 || k >= dim) {
    throw IndexError("Fock level " + std::to_string(k) + " outside 0.." +
                     std::to_string(dim - 1));
  }
  Matrix p = Matrix::Zero(dim, dim);
  p(k, k) = 1.0;
  return p;
}

// dim^n_sites, throwing SizeError if it does not fit.
inline std::int64_t chain_dim(int dim, int n_sites) {
  std::int64_t total = 1;
  for (int s = 0; s < n_sites; ++s) {
    if (total > std::numeric_limits<std::int32_t>::max() / dim) {
      throw SizeError("chain Hilbert space dimension overflows");
    }
    total *= dim;
  }
  return total;
}

// Site-ordering convention used throughout the library: site 0 is the
// leftmost (most significant) tensor factor, so a basis index reads
// i = i_0 d^{n-1} + i_1 d^{n-2} + ... + i_{n-1}.
inline int site_stride(int dim, int site, int n_sites) {
  return static_cast<int>(chain_dim(dim, n_sites - site - 1));
}

inline int occupation_of(int index, int site, int dim, int n_sites) {
  return (index / site_stride(dim, site, n_sites)) % dim;
}

namespace detail {

inline void check_site(int site, int n_sites) {
  if (n_sites < 1 || site < 0 || site >= n_sites) {
    throw IndexError("site " + std::to_string(site) + " outside chain of " +
                     std::to_string(n_sites) + " sites");
  }
}

}  // namespace detail

// I (x) ... (x) op (x) ... (x) I with op in the slot for `site`.
inline SparseMatrix embed_sparse(const Matrix& op, int site, int n_sites,
                                 int dim) {
  detail::check_site(site, n_sites);
  if (op.rows() != dim || op.cols() != dim) {
    throw ShapeError("embedded operator must be dim x dim");
  }
  const auto total = static_cast<int>(chain_dim(dim, n_sites));
  const int stride = site_stride(dim, site, n_sites);
  std::vector<Triplet> entries;
  for (int row = 0; row < total; ++row) {
    const int occ = (row / stride) % dim;
    const int base = row - occ * stride;
    for (int k = 0; k < dim; ++k) {
      const Complex v = op(occ, k);
      if (v != Complex{0.0, 0.0}) {
        entries.emplace_back(row, base + k * stride, v);
      }
    }
  }
  SparseMatrix out(total, total);
  out.setFromTriplets(entries.begin(), entries.end());
  return out;
}

inline Matrix embed(const Matrix& op, int site, int n_sites, int dim) {
  return Matrix(embed_sparse(op, site, n_sites, dim));
}

}  // namespace ddbh

#endif  // DDBH_FOCK_OPS_HPP
