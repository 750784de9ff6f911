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

#ifndef DDBH_EXACT_NESS_HPP
#define DDBH_EXACT_NESS_HPP

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/QR>
#include <Eigen/SVD>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <unsupported/Eigen/IterativeSolvers>

#include "ddbh/density_matrix.hpp"
#include "ddbh/errors.hpp"
#include "ddbh/liouvillian.hpp"
#include "ddbh/types.hpp"

namespace ddbh {

enum class NessMethod { NullSpace, TimeEvolution };

struct NessSolveReport {
  DensityMatrix rho;
  double residual = 0.0;       // |<rho|L|rho>| / <rho|rho>
  double residual_norm = 0.0;  // ||L rho|| / (||L||_F ||rho||)
  int nullspace_dim = 0;
  NessMethod method = NessMethod::NullSpace;
  int iterations = 0;
  double wall_time = 0.0;  // seconds

  bool unique() const { return nullspace_dim == 1; }
};

struct NullSpaceOptions {
  double tol = 1e-10;
  // Singular values of the bordered system below kernel_threshold * sigma_max
  // count as additional kernel directions of L.
  double kernel_threshold = 1e-10;
  // Incomplete-LU preconditioner for restarted GMRES.
  double ilu_droptol = 3e-2;
  int ilu_fill = 3;
  double krylov_tol = 1e-13;
  int krylov_restart = 100;
  int krylov_max_iterations = 3000;
  int spectrum_block = 2;
  int spectrum_iterations = 2;
  int power_iterations = 30;
  // Liouville dimension up to which a failed sparse solve falls back to a
  // dense singular value decomposition.
  Eigen::Index dense_fallback_dim = 1024;
};

namespace detail {

inline double frobenius_norm(const SparseMatrix& m) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < m.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(m, k); it; ++it) s += std::norm(it.value());
  }
  return std::sqrt(s);
}

// Deterministic pseudo-random block for subspace iterations.
inline Matrix probe_block(Eigen::Index rows, Eigen::Index cols) {
  Matrix x(rows, cols);
  std::uint64_t state = 0x9E3779B97F4A7C15ull;
  auto next = [&state]() {
    state ^= state << 13;
    state ^= state >> 7;
    state ^= state << 17;
    return static_cast<double>(state >> 11) * 0x1.0p-53 - 0.5;
  };
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) x(i, j) = Complex{next(), next()};
  }
  return x;
}

inline Matrix orthonormalize(const Matrix& x) {
  Eigen::HouseholderQR<Matrix> qr(x);
  return qr.householderQ() * Matrix::Identity(x.rows(), x.cols());
}

// L with its first row (the vacuum-population equation, redundant by trace
// preservation) replaced by the trace functional.
inline SparseMatrix bordered_liouvillian(const SuperOp& superop) {
  const Eigen::Index n = superop.dim();
  const Eigen::Index hd = superop.hilbert_dim;
  std::vector<Triplet> entries;
  entries.reserve(static_cast<std::size_t>(superop.matrix.nonZeros() + hd));
  for (Eigen::Index k = 0; k < superop.matrix.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(superop.matrix, k); it; ++it) {
      if (it.row() != 0) entries.emplace_back(it.row(), it.col(), it.value());
    }
  }
  for (Eigen::Index i = 0; i < hd; ++i) entries.emplace_back(0, i + hd * i, 1.0);
  SparseMatrix bordered(n, n);
  bordered.setFromTriplets(entries.begin(), entries.end());
  bordered.makeCompressed();
  return bordered;
}

// Dense route: kernel dimension from the singular values of L, state from
// the least-squares solution of the bordered system.
inline NessSolveReport dense_steady_state(const SuperOp& superop, const NullSpaceOptions& opt) {
  const Matrix dense(superop.matrix);
  Eigen::BDCSVD<Matrix> spectrum(dense);
  const RealVector sv = spectrum.singularValues();
  int kernel = 0;
  for (Eigen::Index j = 0; j < sv.size(); ++j) {
    if (sv(j) < opt.kernel_threshold * sv(0)) ++kernel;
  }
  const Matrix bordered(bordered_liouvillian(superop));
  Eigen::BDCSVD<Matrix> solver(bordered, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Vector rhs = Vector::Zero(bordered.rows());
  rhs(0) = 1.0;
  const Vector x = solver.solve(rhs);
  NessSolveReport report;
  report.rho = DensityMatrix(devectorize(VectorizedState{x, superop.stacking}, superop.stacking));
  report.rho.normalize();
  report.nullspace_dim = std::max(kernel, 1);
  return report;
}

}  // namespace detail

// Steady state of d vec(rho)/dt = L vec(rho) from the bordered system
// A v = e_0 (see bordered_liouvillian), solved by ILU-preconditioned GMRES.
// The kernel dimension of L is 1 plus the number of near-zero singular values
// of A, estimated by a few steps of block inverse iteration. A unit-trace
// initial guess (for instance a neighbouring drive's NESS) seeds the Krylov
// iteration.
inline NessSolveReport steady_state(const SuperOp& superop, const NullSpaceOptions& opt = {},
                                    const DensityMatrix* initial_guess = nullptr) {
  const auto start = std::chrono::steady_clock::now();
  const Eigen::Index n = superop.dim();
  const Eigen::Index hd = superop.hilbert_dim;
  if (n == 0 || hd * hd != n) throw ShapeError("superoperator has inconsistent dimension");

  const SparseMatrix bordered = detail::bordered_liouvillian(superop);
  Eigen::GMRES<SparseMatrix, Eigen::IncompleteLUT<Complex>> gmres;
  gmres.preconditioner().setDroptol(opt.ilu_droptol);
  gmres.preconditioner().setFillfactor(opt.ilu_fill);
  gmres.set_restart(opt.krylov_restart);
  gmres.setTolerance(opt.krylov_tol);
  gmres.setMaxIterations(opt.krylov_max_iterations);
  auto finish = [&](NessSolveReport report, int iterations) {
    const Residual r = residual_detail(superop, report.rho.data);
    report.method = NessMethod::NullSpace;
    report.residual = r.expectation;
    report.residual_norm = r.norm_ratio / detail::frobenius_norm(superop.matrix);
    report.iterations = iterations;
    report.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!(report.residual_norm <= opt.tol)) {
      throw SolverFailure("steady-state residual " + std::to_string(report.residual_norm) +
                          " above tolerance");
    }
    return report;
  };
  gmres.compute(bordered);
  if (gmres.info() != Eigen::Success) {
    if (n <= opt.dense_fallback_dim) return finish(detail::dense_steady_state(superop, opt), 0);
    throw SolverFailure("preconditioner setup for the bordered Liouvillian failed");
  }

  Vector rhs = Vector::Zero(n);
  rhs(0) = 1.0;
  Vector x;
  if (initial_guess != nullptr) {
    if (initial_guess->dim() != hd) throw ShapeError("initial guess has the wrong dimension");
    x = gmres.solveWithGuess(rhs, vectorize(*initial_guess, superop.stacking).data);
  } else {
    x = gmres.solve(rhs);
  }
  int iterations = static_cast<int>(gmres.iterations());
  if (!x.allFinite() || gmres.info() != Eigen::Success) {
    if (n <= opt.dense_fallback_dim) return finish(detail::dense_steady_state(superop, opt), 0);
    throw SolverFailure("steady-state Krylov solve did not converge");
  }

  NessSolveReport report;
  report.rho = DensityMatrix(devectorize(VectorizedState{x, superop.stacking},
                                         superop.stacking));
  report.rho.normalize();

  Vector p = detail::probe_block(n, 1).col(0);
  double sigma_max = 0.0;
  for (int it = 0; it < opt.power_iterations; ++it) {
    p.normalize();
    Vector q = bordered.adjoint() * (bordered * p);
    sigma_max = std::sqrt(q.norm());
    p = q;
  }
  // A solve that stalls means the bordered system is numerically singular.
  int kernel = 1;
  Matrix block = detail::orthonormalize(detail::probe_block(n, opt.spectrum_block));
  bool stalled = false;
  for (int it = 0; it < opt.spectrum_iterations && !stalled; ++it) {
    Matrix y(n, block.cols());
    for (Eigen::Index j = 0; j < block.cols(); ++j) {
      y.col(j) = gmres.solve(Vector(block.col(j)));
      iterations += static_cast<int>(gmres.iterations());
      if (gmres.info() != Eigen::Success || !y.col(j).allFinite()) stalled = true;
    }
    if (!stalled) block = detail::orthonormalize(y);
  }
  if (stalled) {
    kernel = 2;
  } else {
    const Matrix image = bordered * block;
    Eigen::JacobiSVD<Matrix> small(image);
    for (Eigen::Index j = 0; j < small.singularValues().size(); ++j) {
      if (small.singularValues()(j) < opt.kernel_threshold * sigma_max) ++kernel;
    }
  }
  report.nullspace_dim = kernel;
  return finish(std::move(report), iterations);
}

inline NessSolveReport steady_state(const SuperOp& superop, double tol) {
  NullSpaceOptions opt;
  opt.tol = tol;
  return steady_state(superop, opt);
}

namespace detail {

// One classical RK4 step on vec(rho) followed by Hermitian re-symmetrization
// and trace renormalization. Returns the pre-renormalization trace drift.
inline double rk4_step(const SuperOp& superop, Vector& v, double h) {
  const SparseMatrix& l = superop.matrix;
  const Eigen::Index d = superop.hilbert_dim;
  auto trace_of = [d](const Vector& w) {
    Complex t{0.0, 0.0};
    for (Eigen::Index i = 0; i < d; ++i) t += w(i + d * i);
    return t;
  };
  const Complex tr0 = trace_of(v);
  const Vector k1 = l * v;
  const Vector k2 = l * (v + 0.5 * h * k1);
  const Vector k3 = l * (v + 0.5 * h * k2);
  const Vector k4 = l * (v + h * k3);
  v += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  const Complex tr1 = trace_of(v);
  const double drift = std::abs(tr1 - tr0);

  Matrix rho = devectorize(VectorizedState{v, superop.stacking}, superop.stacking);
  rho = 0.5 * (rho + rho.adjoint()).eval();
  const double tr = rho.trace().real();
  if (!std::isfinite(tr) || tr == 0.0) throw InstabilityError("state trace vanished or diverged");
  rho /= tr;
  v = vectorize(rho, superop.stacking).data;
  return drift;
}

}  // namespace detail

struct EvolveOptions {
  double max_trace_drift = 1e-6;  // per step
  // Purity of a physical state is <= 1; growth beyond this signals blow-up.
  double max_purity = 1.0 + 1e-3;
};

// Fixed-step RK4 integration of the master equation from rho0 to t_final.
inline DensityMatrix evolve(const DensityMatrix& rho0, const SuperOp& superop,
                            double t_final, double dt, const EvolveOptions& opt = {}) {
  if (!(dt > 0.0)) throw ArgumentError("dt must be > 0");
  if (t_final < 0.0) throw ArgumentError("t_final must be >= 0");
  if (rho0.dim() != superop.hilbert_dim) throw ShapeError("state and superoperator sizes differ");
  const auto steps = static_cast<long>(std::max(0.0, std::ceil(t_final / dt - 1e-9)));
  if (steps == 0) return rho0;
  const double h = t_final / static_cast<double>(steps);
  Vector v = vectorize(rho0, superop.stacking).data;
  for (long s = 0; s < steps; ++s) {
    const double drift = detail::rk4_step(superop, v, h);
    if (!(drift <= opt.max_trace_drift)) {
      throw InstabilityError("trace drift " + std::to_string(drift) +
                             " per step; reduce dt");
    }
    if (!(v.squaredNorm() <= opt.max_purity)) {
      throw InstabilityError("integrator diverged; reduce dt");
    }
  }
  return DensityMatrix(devectorize(VectorizedState{v, superop.stacking}, superop.stacking));
}

struct EvolutionSolveOptions {
  double dt = 0.05;
  double tol = 1e-8;          // on ||L rho|| / ||rho||
  double check_every = 1.0;   // time units between residual checks
  double t_max = 1e4;
};

// Steady state by long-time integration; used as an independent cross-check
// of the null-space route.
inline NessSolveReport steady_state_by_evolution(const SuperOp& superop,
                                                 const DensityMatrix& rho0,
                                                 const EvolutionSolveOptions& opt = {}) {
  const auto start = std::chrono::steady_clock::now();
  DensityMatrix rho = rho0;
  double t = 0.0;
  int checks = 0;
  Residual r = residual_detail(superop, rho.data);
  while (r.norm_ratio > opt.tol) {
    if (t >= opt.t_max) throw SolverFailure("time evolution did not reach the steady state");
    rho = evolve(rho, superop, opt.check_every, opt.dt);
    t += opt.check_every;
    ++checks;
    r = residual_detail(superop, rho.data);
  }
  NessSolveReport report;
  report.rho = rho;
  report.rho.normalize();
  report.method = NessMethod::TimeEvolution;
  report.residual = r.expectation;
  report.residual_norm = r.norm_ratio / detail::frobenius_norm(superop.matrix);
  report.nullspace_dim = 0;  // not determined by this method
  report.iterations = checks;
  report.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace ddbh

#endif  // DDBH_EXACT_NESS_HPP
