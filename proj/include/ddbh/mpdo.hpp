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

#ifndef DDBH_MPDO_HPP
#define DDBH_MPDO_HPP

#include <Eigen/QR>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <unsupported/Eigen/MatrixFunctions>

#include "ddbh/density_matrix.hpp"
#include "ddbh/errors.hpp"
#include "ddbh/fock_ops.hpp"
#include "ddbh/liouvillian.hpp"
#include "ddbh/model.hpp"
#include "ddbh/types.hpp"

// Matrix product density operator. vec(rho) is written as a matrix product
// state over the doubled local space: the physical index of site l is
// p_l = i_l + d * j_l for the matrix element rho(i, j) (column stacking on
// each site), and sites are ordered with site 0 most significant, matching
// the chain Fock-basis convention.

namespace ddbh {

using RowMatrix = Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Rank-3 tensor A[a, p, b] stored row-major as a (left*phys) x right matrix.
struct SiteTensor {
  Eigen::Index left = 1;
  Eigen::Index phys = 1;
  Eigen::Index right = 1;
  RowMatrix data;

  SiteTensor() = default;
  SiteTensor(Eigen::Index l, Eigen::Index p, Eigen::Index r)
      : left(l), phys(p), right(r), data(RowMatrix::Zero(l * p, r)) {}

  Complex& operator()(Eigen::Index a, Eigen::Index p, Eigen::Index b) {
    return data(a * phys + p, b);
  }
  Complex operator()(Eigen::Index a, Eigen::Index p, Eigen::Index b) const {
    return data(a * phys + p, b);
  }

  // Same buffer viewed as left x (phys*right).
  Eigen::Map<const RowMatrix> as_right() const {
    return Eigen::Map<const RowMatrix>(data.data(), left, phys * right);
  }

  static SiteTensor from_left(RowMatrix m, Eigen::Index phys) {
    SiteTensor t;
    t.phys = phys;
    t.left = m.rows() / phys;
    t.right = m.cols();
    t.data = std::move(m);
    return t;
  }

  static SiteTensor from_right(const RowMatrix& m, Eigen::Index phys) {
    SiteTensor t;
    t.phys = phys;
    t.left = m.rows();
    t.right = m.cols() / phys;
    t.data = Eigen::Map<const RowMatrix>(m.data(), t.left * phys, t.right);
    return t;
  }
};

struct MpdoState {
  int n_sites = 0;
  int local_dim = 0;
  int chi_max = 1;
  std::vector<SiteTensor> site_tensors;
  std::vector<RealVector> bond_weights;  // n_sites - 1, descending, unit 2-norm
  // Orthogonality center; tensors left of it are left-orthonormal and tensors
  // right of it right-orthonormal whenever `canonical` is set.
  int center = 0;
  bool canonical = false;
  double last_discarded_weight = 0.0;  // largest over the most recent step

  Eigen::Index phys_dim() const { return static_cast<Eigen::Index>(local_dim) * local_dim; }
  int bond_dim(int bond) const {
    return static_cast<int>(site_tensors[bond].right);
  }
  int max_bond_dim() const {
    int m = 1;
    for (int b = 0; b + 1 < n_sites; ++b) m = std::max(m, bond_dim(b));
    return m;
  }
};

struct TruncationResult {
  RealVector kept;          // unnormalized singular values that survive
  double discarded_weight;  // sum of dropped s^2 over sum of all s^2
};

namespace detail {

// Doubled-space index p = i + d j of the local element rho(i, j).
inline int doubled_index(int i, int j, int d) { return i + d * j; }

inline void check_mpdo_site(const MpdoState& s, int site) {
  if (site < 0 || site >= s.n_sites) {
    throw IndexError("site " + std::to_string(site) + " outside MPDO of " +
                     std::to_string(s.n_sites) + " sites");
  }
}

inline void shift_center_right(MpdoState& s) {
  const int l = s.center;
  SiteTensor& a = s.site_tensors[l];
  SiteTensor& b = s.site_tensors[l + 1];
  Eigen::HouseholderQR<RowMatrix> qr(a.data);
  const Eigen::Index k = std::min(a.data.rows(), a.data.cols());
  RowMatrix q = qr.householderQ() * RowMatrix::Identity(a.data.rows(), k);
  RowMatrix r = qr.matrixQR().topRows(k).template triangularView<Eigen::Upper>();
  RowMatrix next = r * b.as_right();
  a = SiteTensor::from_left(std::move(q), a.phys);
  b = SiteTensor::from_right(next, b.phys);
  s.center = l + 1;
}

inline void shift_center_left(MpdoState& s) {
  const int l = s.center;
  SiteTensor& a = s.site_tensors[l];
  SiteTensor& prev = s.site_tensors[l - 1];
  const RowMatrix m = a.as_right();
  // m = R^+ Q^+ from the QR factorization of m^+.
  const RowMatrix madj = m.adjoint();
  Eigen::HouseholderQR<RowMatrix> qr(madj);
  const Eigen::Index k = std::min(madj.rows(), madj.cols());
  RowMatrix q = qr.householderQ() * RowMatrix::Identity(madj.rows(), k);
  RowMatrix r = qr.matrixQR().topRows(k).template triangularView<Eigen::Upper>();
  RowMatrix prev_new = prev.data * r.adjoint();
  RowMatrix qadj = q.adjoint();
  a = SiteTensor::from_right(qadj, a.phys);
  prev = SiteTensor::from_left(std::move(prev_new), prev.phys);
  s.center = l - 1;
}

// Truncate singular values to at most chi, dropping exact zeros relative to
// the largest value.
inline TruncationResult truncate(const RealVector& s, int chi, double cutoff) {
  const double total = s.squaredNorm();
  if (!(s.size() > 0 && s(0) > 0.0 && std::isfinite(total))) {
    throw DegenerateTruncation("bond has no nonzero singular value");
  }
  Eigen::Index keep = std::min<Eigen::Index>(s.size(), chi);
  while (keep > 1 && s(keep - 1) <= cutoff * s(0)) --keep;
  TruncationResult out;
  out.kept = s.head(keep);
  out.discarded_weight =
      keep < s.size() ? s.tail(s.size() - keep).squaredNorm() / total : 0.0;
  return out;
}

}  // namespace detail

inline void move_center(MpdoState& s, int target) {
  detail::check_mpdo_site(s, target);
  if (!s.canonical) {
    s.center = s.n_sites - 1;
    while (s.center > 0) detail::shift_center_left(s);
    s.canonical = true;
  }
  while (s.center < target) detail::shift_center_right(s);
  while (s.center > target) detail::shift_center_left(s);
}

struct SvdSplitOptions {
  double cutoff = 1e-14;  // relative to the largest singular value
};

// Splits a two-site block theta[(a, p), (q, b)] back into sites l and l+1,
// keeping at most chi singular values. The center lands on l+1 when
// `center_right`, else on l. Returns the discarded weight.
inline double split_two_site(MpdoState& s, int l, const RowMatrix& theta,
                             bool center_right, const SvdSplitOptions& opt = {}) {
  const Eigen::Index phys = s.phys_dim();
  Eigen::BDCSVD<RowMatrix> svd(theta, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const TruncationResult tr =
      detail::truncate(svd.singularValues(), s.chi_max, opt.cutoff);
  const Eigen::Index k = tr.kept.size();
  RowMatrix u = svd.matrixU().leftCols(k);
  RowMatrix vh = svd.matrixV().leftCols(k).adjoint();
  if (center_right) {
    vh = tr.kept.asDiagonal() * vh;
  } else {
    u = u * tr.kept.asDiagonal();
  }
  s.site_tensors[l] = SiteTensor::from_left(std::move(u), phys);
  s.site_tensors[l + 1] = SiteTensor::from_right(vh, phys);
  s.bond_weights[l] = tr.kept / tr.kept.norm();
  s.center = center_right ? l + 1 : l;
  return tr.discarded_weight;
}

// Full gauge sweep: right-orthonormalize everything, then sweep left to right
// with SVDs so every bond carries its exact (normalized) singular values.
// Ends with the center on the last site.
inline double canonicalize(MpdoState& s, const SvdSplitOptions& opt = {}) {
  s.canonical = false;
  move_center(s, 0);
  double discarded = 0.0;
  for (int l = 0; l + 1 < s.n_sites; ++l) {
    const RowMatrix theta = s.site_tensors[l].data * s.site_tensors[l + 1].as_right();
    discarded = std::max(discarded, split_two_site(s, l, theta, true, opt));
  }
  s.canonical = true;
  return discarded;
}

// Contraction against per-site covectors w_l (length d^2).
inline Complex contract_with(const MpdoState& s, const std::vector<Vector>& covectors) {
  RowMatrix env = RowMatrix::Ones(1, 1);
  for (int l = 0; l < s.n_sites; ++l) {
    const SiteTensor& a = s.site_tensors[l];
    RowMatrix reduced = RowMatrix::Zero(a.left, a.right);
    for (Eigen::Index p = 0; p < a.phys; ++p) {
      const Complex w = covectors[l](p);
      if (w == Complex{0.0, 0.0}) continue;
      for (Eigen::Index x = 0; x < a.left; ++x) reduced.row(x) += w * a.data.row(x * a.phys + p);
    }
    env = env * reduced;
  }
  return env(0, 0);
}

// Covector w with w . vec(rho_local) = tr(rho_local op).
inline Vector trace_covector(const Matrix& op) {
  const auto d = static_cast<int>(op.rows());
  Vector w(d * d);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) w(detail::doubled_index(i, j, d)) = op(j, i);
  }
  return w;
}

inline Complex mpdo_trace(const MpdoState& s) {
  const Vector w = trace_covector(Matrix::Identity(s.local_dim, s.local_dim));
  return contract_with(s, std::vector<Vector>(s.n_sites, w));
}

// Scales the state to unit trace; returns the trace before scaling.
inline Complex normalize_trace(MpdoState& s) {
  const Complex tr = mpdo_trace(s);
  if (!(std::abs(tr) > 1e-300) || !std::isfinite(std::abs(tr))) {
    throw DegenerateState("MPDO has vanishing trace");
  }
  const int target = s.canonical ? s.center : 0;
  s.site_tensors[target].data /= tr;
  return tr;
}

using OperatorSpec = std::vector<std::pair<int, Matrix>>;

// tr(rho prod_k op_k) / tr(rho) by contraction with the trace covector.
inline Complex mpdo_expectation(const MpdoState& s, const OperatorSpec& ops) {
  const Matrix id = Matrix::Identity(s.local_dim, s.local_dim);
  std::vector<Vector> covectors(s.n_sites, trace_covector(id));
  std::vector<bool> used(s.n_sites, false);
  for (const auto& [site, op] : ops) {
    detail::check_mpdo_site(s, site);
    if (used[site]) throw ArgumentError("operator spec repeats a site");
    if (op.rows() != s.local_dim || op.cols() != s.local_dim) {
      throw ShapeError("local operator must be d x d");
    }
    used[site] = true;
    covectors[site] = trace_covector(op);
  }
  const Complex norm = mpdo_trace(s);
  if (!(std::abs(norm) > 0.0)) throw DegenerateState("MPDO has vanishing trace");
  return contract_with(s, covectors) / norm;
}

// Contracted vector indexed by P = sum_l p_l (d^2)^(n-1-l).
inline Vector contract_vector(const MpdoState& s) {
  RowMatrix acc = RowMatrix::Ones(1, 1);  // (prefix index) x bond
  for (int l = 0; l < s.n_sites; ++l) {
    const SiteTensor& a = s.site_tensors[l];
    // acc: rows = prefix, cols = left bond.
    RowMatrix next(acc.rows() * a.phys, a.right);
    for (Eigen::Index r = 0; r < acc.rows(); ++r) {
      for (Eigen::Index p = 0; p < a.phys; ++p) {
        RowMatrix slice(a.left, a.right);
        for (Eigen::Index x = 0; x < a.left; ++x) slice.row(x) = a.data.row(x * a.phys + p);
        next.row(r * a.phys + p) = acc.row(r) * slice;
      }
    }
    acc = std::move(next);
  }
  return Eigen::Map<const Vector>(acc.data(), acc.size());
}

namespace detail {

// Maps the MPDO multi-index P to (row, col) of the chain density matrix.
inline std::pair<Eigen::Index, Eigen::Index> doubled_to_rowcol(Eigen::Index big_p, int n,
                                                               int d) {
  Eigen::Index row = 0;
  Eigen::Index col = 0;
  Eigen::Index stride = 1;
  const Eigen::Index d2 = static_cast<Eigen::Index>(d) * d;
  for (int l = n - 1; l >= 0; --l) {
    const Eigen::Index p = big_p % d2;
    big_p /= d2;
    row += (p % d) * stride;
    col += (p / d) * stride;
    stride *= d;
  }
  return {row, col};
}

}  // namespace detail

// Raw contraction to a D x D matrix, without symmetrization or normalization.
inline Matrix to_dense_raw(const MpdoState& s, std::int64_t max_dim = kDefaultMaxHilbertDim) {
  const std::int64_t dim = chain_dim(s.local_dim, s.n_sites);
  if (dim > max_dim) throw SizeError("MPDO too large to contract densely");
  const Vector v = contract_vector(s);
  Matrix rho(dim, dim);
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    const auto [r, c] = detail::doubled_to_rowcol(k, s.n_sites, s.local_dim);
    rho(r, c) = v(k);
  }
  return rho;
}

inline DensityMatrix to_dense(const MpdoState& s, std::int64_t max_dim = kDefaultMaxHilbertDim) {
  DensityMatrix rho(to_dense_raw(s, max_dim));
  rho.normalize();
  return rho;
}

// Successive-SVD decomposition of a dense operator, keeping at most chi
// singular values per bond.
inline MpdoState mpdo_from_dense(const Matrix& rho, int n_sites, int local_dim, int chi) {
  const std::int64_t dim = chain_dim(local_dim, n_sites);
  if (rho.rows() != dim || rho.cols() != dim) throw ShapeError("operator size does not match chain");
  if (chi < 1) throw ArgumentError("chi must be >= 1");
  MpdoState s;
  s.n_sites = n_sites;
  s.local_dim = local_dim;
  s.chi_max = chi;
  s.bond_weights.assign(std::max(0, n_sites - 1), RealVector::Ones(1));
  const Eigen::Index phys = s.phys_dim();
  Vector v(dim * dim);
  for (Eigen::Index k = 0; k < v.size(); ++k) {
    const auto [r, c] = detail::doubled_to_rowcol(k, n_sites, local_dim);
    v(k) = rho(r, c);
  }
  RowMatrix rest = Eigen::Map<const RowMatrix>(v.data(), 1, v.size());
  for (int l = 0; l + 1 < n_sites; ++l) {
    const Eigen::Index left = rest.rows();
    const Eigen::Index tail = rest.cols() / phys;
    RowMatrix m = Eigen::Map<const RowMatrix>(rest.data(), left * phys, tail);
    Eigen::BDCSVD<RowMatrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const TruncationResult tr = detail::truncate(svd.singularValues(), chi, 1e-14);
    const Eigen::Index k = tr.kept.size();
    RowMatrix u = svd.matrixU().leftCols(k);
    s.site_tensors.push_back(SiteTensor::from_left(std::move(u), phys));
    s.bond_weights[l] = tr.kept / tr.kept.norm();
    rest = tr.kept.asDiagonal() * svd.matrixV().leftCols(k).adjoint();
  }
  s.site_tensors.push_back(SiteTensor::from_right(rest, phys));
  s.center = n_sites - 1;
  s.canonical = true;
  return s;
}

// Random mixture of chi product states with random weights; Hermitian,
// positive and unit-trace by construction. Deterministic for a given seed.
inline MpdoState random_mpdo(int n_sites, int local_dim, int chi, std::uint64_t seed) {
  if (chi < 1) throw ArgumentError("chi must be >= 1");
  if (n_sites < 1) throw ArgumentError("n_sites must be >= 1");
  if (local_dim < 2) throw InvalidDimension("local_dim must be >= 2");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.1, 1.0);

  const int d = local_dim;
  const int terms = chi;
  std::vector<double> weight(terms);
  double wsum = 0.0;
  for (double& w : weight) wsum += (w = uniform(rng));
  for (double& w : weight) w /= wsum;

  // local[k][l] = vec(|phi><phi|) for term k on site l.
  std::vector<std::vector<Vector>> local(terms, std::vector<Vector>(n_sites));
  for (int k = 0; k < terms; ++k) {
    for (int l = 0; l < n_sites; ++l) {
      Vector phi(d);
      for (int i = 0; i < d; ++i) phi(i) = Complex{gauss(rng), gauss(rng)};
      phi.normalize();
      Vector v(d * d);
      for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) v(detail::doubled_index(i, j, d)) = phi(i) * std::conj(phi(j));
      }
      local[k][l] = std::move(v);
    }
  }

  MpdoState s;
  s.n_sites = n_sites;
  s.local_dim = d;
  s.chi_max = chi;
  s.bond_weights.assign(std::max(0, n_sites - 1), RealVector::Ones(1));
  const Eigen::Index phys = s.phys_dim();
  if (n_sites == 1) {
    SiteTensor t(1, phys, 1);
    for (int k = 0; k < terms; ++k) {
      for (Eigen::Index p = 0; p < phys; ++p) t(0, p, 0) += weight[k] * local[k][0](p);
    }
    s.site_tensors.push_back(std::move(t));
  } else {
    for (int l = 0; l < n_sites; ++l) {
      const Eigen::Index left = (l == 0) ? 1 : terms;
      const Eigen::Index right = (l == n_sites - 1) ? 1 : terms;
      SiteTensor t(left, phys, right);
      for (int k = 0; k < terms; ++k) {
        const Eigen::Index a = (l == 0) ? 0 : k;
        const Eigen::Index b = (l == n_sites - 1) ? 0 : k;
        const double scale = (l == 0) ? weight[k] : 1.0;
        for (Eigen::Index p = 0; p < phys; ++p) t(a, p, b) = scale * local[k][l](p);
      }
      s.site_tensors.push_back(std::move(t));
    }
  }
  canonicalize(s);
  normalize_trace(s);
  return s;
}

// Superoperator of rho -> -i[h, rho] + gamma sum_k D[jump_k] rho on k sites,
// in the doubled multi-index ordering used by the MPDO (site-major, each
// site p = i + d j).
inline Matrix local_superop(const Matrix& h, const std::vector<Matrix>& jumps, double gamma,
                            int k_sites, int d) {
  const auto hdim = static_cast<Eigen::Index>(chain_dim(d, k_sites));
  if (h.rows() != hdim || h.cols() != hdim) throw ShapeError("local Hamiltonian has wrong size");
  const Eigen::Index n = hdim * hdim;
  Matrix out(n, n);
  for (Eigen::Index col = 0; col < n; ++col) {
    const auto [i, j] = detail::doubled_to_rowcol(col, k_sites, d);
    Matrix x = Matrix::Zero(hdim, hdim);
    x(i, j) = 1.0;
    const Matrix y = lindblad_rhs(h, jumps, gamma, x);
    for (Eigen::Index row = 0; row < n; ++row) {
      const auto [r, c] = detail::doubled_to_rowcol(row, k_sites, d);
      out(row, col) = y(r, c);
    }
  }
  return out;
}

// Superoperator rho -> U rho U^+ in the same ordering.
inline Matrix conjugation_superop(const Matrix& u, int k_sites, int d) {
  const Eigen::Index hdim = u.rows();
  const Eigen::Index n = hdim * hdim;
  const Matrix ucc = u.conjugate();
  Matrix out(n, n);
  for (Eigen::Index col = 0; col < n; ++col) {
    const auto [i, j] = detail::doubled_to_rowcol(col, k_sites, d);
    for (Eigen::Index row = 0; row < n; ++row) {
      const auto [r, c] = detail::doubled_to_rowcol(row, k_sites, d);
      out(row, col) = u(r, i) * ucc(c, j);
    }
  }
  return out;
}

inline Matrix onsite_hamiltonian(const ModelParams& p, int site) {
  const LocalOps ops = local_ops(p.local_dim);
  const Matrix pair = ops.create * ops.create * ops.annihilate * ops.annihilate;
  return p.detuning[site] * ops.number + 0.5 * p.interaction[site] * pair +
         p.drive * (ops.create + ops.annihilate);
}

inline Matrix bond_hamiltonian(const ModelParams& p, int bond) {
  const LocalOps ops = local_ops(p.local_dim);
  const Matrix hop = Eigen::kroneckerProduct(ops.create, ops.annihilate).eval() +
                     Eigen::kroneckerProduct(ops.annihilate, ops.create).eval();
  return -p.hopping[bond] * hop;
}

// One-site Liouvillian of `site`: on-site Hamiltonian plus loss.
inline Matrix onsite_generator(const ModelParams& p, int site) {
  const LocalOps ops = local_ops(p.local_dim);
  return local_superop(onsite_hamiltonian(p, site), {ops.annihilate}, p.dissipation, 1,
                       p.local_dim);
}

inline Matrix bond_generator(const ModelParams& p, int bond) {
  return local_superop(bond_hamiltonian(p, bond), {}, 0.0, 2, p.local_dim);
}

enum class TrotterOrder { Second, Fourth };

// Second-order splitting exp(L dt) ~ A(dt/2) E(dt/2) O(dt) E(dt/2) A(dt/2),
// with A the product of one-site gates (detuning, interaction, drive, loss),
// E the even bonds (0,1), (2,3), ... and O the odd bonds. Hopping generates a
// unitary conjugation, so its gates are applied as rho -> U rho U^+ with
// U = exp(-i h t). The fourth-order variant is Suzuki's five-stage
// composition of second-order steps.
class TrotterPropagator {
 public:
  TrotterPropagator(const ModelParams& p, double dt, TrotterOrder order = TrotterOrder::Second)
      : params_(p), dt_(dt), order_(order) {
    p.validate();
    if (!(dt > 0.0)) throw ArgumentError("dt must be > 0");
    if (order == TrotterOrder::Second) {
      stages_.push_back(make_stage(1.0));
    } else {
      // Suzuki's fractal composition S(p)^2 S(1 - 4p) S(p)^2.
      const double p4 = 1.0 / (4.0 - std::cbrt(4.0));
      const Stage outer = make_stage(p4);
      stages_ = {outer, outer, make_stage(1.0 - 4.0 * p4), outer, outer};
    }
    const int d = p.local_dim;
    ket_index_.resize(static_cast<std::size_t>(d) * d * d * d);
    bra_index_.resize(ket_index_.size());
    for (int i1 = 0; i1 < d; ++i1) {
      for (int j1 = 0; j1 < d; ++j1) {
        for (int i2 = 0; i2 < d; ++i2) {
          for (int j2 = 0; j2 < d; ++j2) {
            const int pp = detail::doubled_index(i1, j1, d) * d * d + detail::doubled_index(i2, j2, d);
            ket_index_[pp] = i1 * d + i2;
            bra_index_[pp] = j1 * d + j2;
          }
        }
      }
    }
  }

  const ModelParams& params() const { return params_; }
  double dt() const { return dt_; }
  TrotterOrder order() const { return order_; }

  // One-site gate exp(l_site dt/2) of the (first) second-order stage.
  const Matrix& onsite_half_gate(int site) const { return stages_.front().onsite_half[site]; }
  // Hopping unitary of `bond` for the first stage (dt/2 on even bonds when odd
  // bonds exist, otherwise dt).
  const Matrix& bond_unitary(int bond) const { return stages_.front().bond_unitary[bond]; }

  // Returns the largest discarded weight among the step's truncations.
  double step(MpdoState& s) const {
    if (s.n_sites != params_.n_sites || s.local_dim != params_.local_dim) {
      throw ShapeError("MPDO does not match the model");
    }
    double discarded = 0.0;
    for (const Stage& st : stages_) discarded = std::max(discarded, strang(s, st));
    s.last_discarded_weight = discarded;
    return discarded;
  }

 private:
  struct Stage {
    std::vector<Matrix> onsite_half;
    std::vector<Matrix> bond_unitary;
  };

  Stage make_stage(double weight) const {
    const ModelParams& p = params_;
    const double h = weight * dt_;
    Stage st;
    for (int l = 0; l < p.n_sites; ++l) {
      st.onsite_half.push_back((onsite_generator(p, l) * (0.5 * h)).exp());
    }
    const bool has_odd = p.n_sites > 2;
    for (int b = 0; b + 1 < p.n_sites; ++b) {
      const double t = (b % 2 == 0 && has_odd) ? 0.5 * h : h;
      st.bond_unitary.push_back((bond_hamiltonian(p, b) * Complex{0.0, -t}).exp());
    }
    return st;
  }

  double strang(MpdoState& s, const Stage& st) const {
    apply_onsite(s, st);
    double discarded = 0.0;
    const int n = s.n_sites;
    for (int b = 0; b + 1 < n; b += 2) discarded = std::max(discarded, apply_bond(s, st, b, true));
    if (n > 2) {
      const int last_odd = (n - 2) % 2 == 1 ? n - 2 : n - 3;
      for (int b = last_odd; b >= 1; b -= 2) {
        discarded = std::max(discarded, apply_bond(s, st, b, false));
      }
      for (int b = 0; b + 1 < n; b += 2) discarded = std::max(discarded, apply_bond(s, st, b, true));
    }
    apply_onsite(s, st);
    return discarded;
  }

  static void apply_onsite(MpdoState& s, const Stage& st) {
    for (int l = 0; l < s.n_sites; ++l) {
      SiteTensor& a = s.site_tensors[l];
      const Matrix& g = st.onsite_half[l];
      RowMatrix out(a.data.rows(), a.data.cols());
      for (Eigen::Index x = 0; x < a.left; ++x) {
        out.middleRows(x * a.phys, a.phys) = g * a.data.middleRows(x * a.phys, a.phys);
      }
      a.data = std::move(out);
    }
    // Only the center tensor may change without spoiling the gauge.
    if (s.n_sites > 1) s.canonical = false;
  }

  double apply_bond(MpdoState& s, const Stage& st, int b, bool sweep_right) const {
    move_center(s, sweep_right ? b : b + 1);
    const SiteTensor& a = s.site_tensors[b];
    const SiteTensor& c = s.site_tensors[b + 1];
    const Eigen::Index pp = a.phys * c.phys;
    const Eigen::Index d2 = static_cast<Eigen::Index>(s.local_dim) * s.local_dim;
    const Eigen::Index right = c.right;
    const Matrix& u = st.bond_unitary[b];
    const Matrix uadj = u.adjoint();
    RowMatrix theta = a.data * c.as_right();  // (left*phys) x (phys*right)
    Matrix wide(d2, d2 * right);
    Matrix tall(d2 * right, d2);
    for (Eigen::Index x = 0; x < a.left; ++x) {
      // Rows of this block are the two-site doubled index, columns the right bond.
      Eigen::Map<RowMatrix> block(theta.data() + x * pp * right, pp, right);
      for (Eigen::Index k = 0; k < pp; ++k) {
        const Eigen::Index ket = ket_index_[k];
        const Eigen::Index bra = bra_index_[k];
        for (Eigen::Index r = 0; r < right; ++r) wide(ket, bra * right + r) = block(k, r);
      }
      wide = (u * wide).eval();
      for (Eigen::Index ket = 0; ket < d2; ++ket) {
        for (Eigen::Index bra = 0; bra < d2; ++bra) {
          for (Eigen::Index r = 0; r < right; ++r) tall(r * d2 + ket, bra) = wide(ket, bra * right + r);
        }
      }
      tall = (tall * uadj).eval();
      for (Eigen::Index k = 0; k < pp; ++k) {
        const Eigen::Index ket = ket_index_[k];
        const Eigen::Index bra = bra_index_[k];
        for (Eigen::Index r = 0; r < right; ++r) block(k, r) = tall(r * d2 + ket, bra);
      }
    }
    return split_two_site(s, b, theta, sweep_right);
  }

  ModelParams params_;
  double dt_;
  TrotterOrder order_;
  std::vector<Stage> stages_;
  std::vector<Eigen::Index> ket_index_;
  std::vector<Eigen::Index> bra_index_;
};

inline MpdoState trotter_step(const MpdoState& state, const ModelParams& params, double dt,
                             TrotterOrder order = TrotterOrder::Second) {
  MpdoState out = state;
  TrotterPropagator(params, dt, order).step(out);
  return out;
}

enum class ResidualRoute { Auto, Dense, Network };

// |<rho|L|rho>| / <rho|rho> for the MPDO vector. The dense route contracts
// to the full operator; the network route sums local-term expectations in
// mixed-canonical form and works for any chain length.
inline double mpdo_residual(const MpdoState& state, const ModelParams& params,
                            ResidualRoute route = ResidualRoute::Auto,
                            const SuperOp* superop = nullptr) {
  if (route == ResidualRoute::Auto) {
    route = (state.n_sites <= 3 && chain_dim(state.local_dim, state.n_sites) <= kDefaultMaxHilbertDim)
                ? ResidualRoute::Dense
                : ResidualRoute::Network;
  }
  if (route == ResidualRoute::Dense) {
    const Matrix rho = to_dense_raw(state);
    if (superop != nullptr) return residual_detail(*superop, rho).expectation;
    return residual_detail(build_superop(params), rho).expectation;
  }
  MpdoState s = state;
  move_center(s, 0);
  const double norm2 = s.site_tensors[0].data.squaredNorm();
  if (!(norm2 > 0.0)) throw DegenerateState("residual of a zero MPDO");
  Complex total{0.0, 0.0};
  for (int l = 0; l < s.n_sites; ++l) {
    move_center(s, l);
    const SiteTensor& a = s.site_tensors[l];
    const Matrix gen = onsite_generator(params, l);
    for (Eigen::Index x = 0; x < a.left; ++x) {
      const auto block = a.data.middleRows(x * a.phys, a.phys);
      total += (block.adjoint() * (gen * block)).trace();
    }
    if (l + 1 < s.n_sites) {
      const SiteTensor& c = s.site_tensors[l + 1];
      const RowMatrix theta = a.data * c.as_right();
      const Matrix bgen = bond_generator(params, l);
      const Eigen::Index pp = a.phys * c.phys;
      for (Eigen::Index x = 0; x < a.left; ++x) {
        Eigen::Map<const RowMatrix> block(theta.data() + x * pp * c.right, pp, c.right);
        total += (block.adjoint() * (bgen * block)).trace();
      }
    }
  }
  return std::abs(total) / norm2;
}

struct ConvergeOptions {
  double dt = 0.1;
  double residual_threshold = 1e-3;
  double sv_log_tol = 0.05;
  double sv_floor = 1e-12;  // singular values below this are not compared
  int check_interval = 100;  // steps between checkpoints
  int step_budget = 20000;
  TrotterOrder order = TrotterOrder::Fourth;
};

struct ConvergenceReport {
  double final_residual = 0.0;
  int steps_taken = 0;
  std::vector<RealVector> singular_value_history;  // first bond, per checkpoint
  bool converged = false;
  double discarded_weight_max = 0.0;
  double max_trace_drift = 0.0;  // |tr - 1| before checkpoint renormalization
  double last_sv_log_change = 0.0;
};

namespace detail {

// Largest |log10 s_now - log10 s_prev| over values above the floor; infinite
// when the number of such values differs.
inline double sv_log_change(const RealVector& now, const RealVector& prev, double floor) {
  auto count = [floor](const RealVector& v) {
    Eigen::Index c = 0;
    while (c < v.size() && v(c) >= floor) ++c;
    return c;
  };
  const Eigen::Index n = count(now);
  if (n != count(prev)) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    worst = std::max(worst, std::abs(std::log10(now(k)) - std::log10(prev(k))));
  }
  return worst;
}

}  // namespace detail

// Real-time Trotter evolution until the Liouvillian residual is below the
// threshold and the first-bond singular values have settled on a log scale.
inline std::pair<MpdoState, ConvergenceReport> converge_to_ness(MpdoState state,
                                                                const ModelParams& params,
                                                                const ConvergeOptions& opt = {}) {
  if (!(opt.residual_threshold > 0.0)) throw ArgumentError("residual_threshold must be > 0");
  if (opt.check_interval < 1) throw ArgumentError("check_interval must be >= 1");
  const TrotterPropagator prop(params, opt.dt, opt.order);
  std::optional<SuperOp> superop;
  if (state.n_sites <= 3 && chain_dim(state.local_dim, state.n_sites) <= kDefaultMaxHilbertDim) {
    superop = build_superop(params);
  }
  ConvergenceReport report;
  std::optional<RealVector> previous;
  for (int step = 1; step <= opt.step_budget; ++step) {
    report.discarded_weight_max = std::max(report.discarded_weight_max, prop.step(state));
    report.steps_taken = step;
    if (step % opt.check_interval != 0 && step != opt.step_budget) continue;

    report.discarded_weight_max = std::max(report.discarded_weight_max, canonicalize(state));
    const Complex tr = normalize_trace(state);
    report.max_trace_drift = std::max(report.max_trace_drift, std::abs(tr - Complex{1.0, 0.0}));
    report.final_residual = mpdo_residual(state, params, ResidualRoute::Auto,
                                          superop ? &*superop : nullptr);
    bool sv_settled = true;
    if (state.n_sites > 1) {
      const RealVector& sv = state.bond_weights[0];
      report.singular_value_history.push_back(sv);
      if (previous) {
        report.last_sv_log_change = detail::sv_log_change(sv, *previous, opt.sv_floor);
        sv_settled = report.last_sv_log_change < opt.sv_log_tol;
      } else {
        sv_settled = false;
      }
      previous = sv;
    }
    if (report.final_residual <= opt.residual_threshold && sv_settled) {
      report.converged = true;
      break;
    }
  }
  return {std::move(state), std::move(report)};
}

struct SweepPoint {
  double omega = 0.0;
  MpdoState state;
  ConvergenceReport report;
};

// Converges at each drive value in order, warm-starting from the previous
// point's converged state.
inline std::vector<SweepPoint> sweep_drive(const MpdoState& initial, ModelParams params,
                                           const std::vector<double>& omega_values,
                                           const ConvergeOptions& opt = {}) {
  if (omega_values.empty()) throw ArgumentError("omega_values must not be empty");
  std::vector<SweepPoint> out;
  MpdoState current = initial;
  for (double omega : omega_values) {
    params.drive = omega;
    auto [state, report] = converge_to_ness(current, params, opt);
    current = state;
    out.push_back(SweepPoint{omega, std::move(state), std::move(report)});
  }
  return out;
}

}  // namespace ddbh

#endif  // DDBH_MPDO_HPP
