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

#include <Eigen/Eigenvalues>

#include "ddbh/liouvillian.hpp"
#include "test_util.hpp"

namespace ddbh {
namespace {

using testing::random_density;
using testing::random_matrix;
using testing::random_params;

// -i[H, rho] + gamma sum_l (b rho b^+ - {b^+ b, rho}/2), written out directly.
Matrix master_equation_oracle(const ModelParams& p, const Matrix& rho) {
  const Matrix h = build_hamiltonian(p);
  Matrix out = Complex{0.0, -1.0} * (h * rho - rho * h);
  const LocalOps o = local_ops(p.local_dim);
  for (int l = 0; l < p.n_sites; ++l) {
    const Matrix b = embed(o.annihilate, l, p.n_sites, p.local_dim);
    out += p.dissipation * (b * rho * b.adjoint() -
                            0.5 * (b.adjoint() * b * rho + rho * b.adjoint() * b));
  }
  return out;
}

Matrix act(const SuperOp& s, const Matrix& rho) {
  return devectorize(apply(s, vectorize(rho, s.stacking)), s.stacking);
}

TEST(Vectorize, RoundTrip) {
  std::mt19937_64 rng(1);
  const Vector v = random_matrix(16, 1, rng);
  for (Stacking st : {Stacking::ColumnStacking, Stacking::RowStacking}) {
    const VectorizedState vs{v, st};
    EXPECT_EQ(vectorize(devectorize(vs, st), st).data, v);
  }
}

TEST(Vectorize, HalfIdentityColumnStacked) {
  const Matrix half = 0.5 * Matrix::Identity(2, 2);
  Vector expected(4);
  expected << 0.5, 0.0, 0.0, 0.5;
  EXPECT_EQ(vectorize(half).data, expected);
}

TEST(Vectorize, InnerProductIsHilbertSchmidt) {
  std::mt19937_64 rng(2);
  const Matrix a = random_matrix(5, 5, rng);
  const Matrix b = random_matrix(5, 5, rng);
  const Complex ip = vectorize(a).data.dot(vectorize(b).data);
  EXPECT_LT(std::abs(ip - (a.adjoint() * b).trace()), 1e-12);
}

TEST(Vectorize, ConventionMismatchIsCaught) {
  const VectorizedState v = vectorize(Matrix::Identity(2, 2), Stacking::RowStacking);
  EXPECT_THROW(devectorize(v, Stacking::ColumnStacking), ConventionError);
  EXPECT_THROW(devectorize(VectorizedState{Vector::Zero(5), Stacking::ColumnStacking}), ShapeError);
}

TEST(Superop, SingleExcitationDecay) {
  ModelParams p = uniform_chain(1, 0.0, 0.0, 0.0, 0.0, 2);
  const SuperOp s = build_superop(p);
  Matrix one = Matrix::Zero(2, 2);
  one(1, 1) = 1.0;
  Matrix expected = Matrix::Zero(2, 2);
  expected(0, 0) = 1.0;
  expected(1, 1) = -1.0;
  EXPECT_LT((act(s, one) - expected).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Superop, UndrivenVacuumIsKernelVector) {
  std::mt19937_64 rng(3);
  for (int n = 1; n <= 3; ++n) {
    ModelParams p = random_params(n, 3, rng);
    p.drive = 0.0;
    const SuperOp s = build_superop(p);
    const Matrix vac = vacuum_state(s.hilbert_dim).data;
    EXPECT_LT(act(s, vac).cwiseAbs().maxCoeff(), 1e-13);
  }
}

TEST(Superop, TrimerSparsity) {
  const ModelParams p = table1_preset(Preset::UniformCase1, SignChoice::Upper);
  const SuperOp s = build_superop(p);
  EXPECT_EQ(s.dim(), 15625);
  const double fill = static_cast<double>(s.matrix.nonZeros()) / (15625.0 * 15625.0);
  EXPECT_LT(fill, 0.01);
}

TEST(Superop, MatchesDirectMasterEquation) {
  std::mt19937_64 rng(4);
  for (int n = 1; n <= 3; ++n) {
    for (int d = 2; d <= 3; ++d) {
      const ModelParams p = random_params(n, d, rng);
      for (Stacking st : {Stacking::ColumnStacking, Stacking::RowStacking}) {
        const SuperOp s = build_superop(p, st);
        const Matrix rho = random_matrix(s.hilbert_dim, s.hilbert_dim, rng);
        EXPECT_LT((act(s, rho) - master_equation_oracle(p, rho)).cwiseAbs().maxCoeff(), 1e-12)
            << "n=" << n << " d=" << d;
      }
    }
  }
}

TEST(Superop, LibraryDirectEvaluationAgrees) {
  std::mt19937_64 rng(5);
  const ModelParams p = random_params(2, 3, rng);
  const Matrix rho = random_density(9, rng).data;
  EXPECT_LT((lindblad_rhs(p, rho) - master_equation_oracle(p, rho)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Superop, TraceAndHermiticityPreservation) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 6; ++trial) {
    const ModelParams p = random_params(1 + trial % 3, 2 + trial % 2, rng);
    const SuperOp s = build_superop(p);
    const Matrix a = random_matrix(s.hilbert_dim, s.hilbert_dim, rng);
    EXPECT_LT(std::abs(act(s, a).trace()), 1e-12);
    const Matrix herm = a + a.adjoint();
    const Matrix out = act(s, herm);
    EXPECT_LT((out - out.adjoint()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Superop, ConjugationSymmetry) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const ModelParams p = random_params(1 + trial % 3, 2 + trial % 3, rng);
    const SuperOp plus = build_superop(p);
    const SuperOp minus = build_superop(apply_flip(p, FlipMode::FullNegation));
    const Matrix rho = random_matrix(plus.hilbert_dim, plus.hilbert_dim, rng);
    const Matrix lhs = act(plus, rho).conjugate();
    const Matrix rhs = act(minus, rho.conjugate());
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Superop, SizeCap) {
  const ModelParams p = uniform_chain(5, 1.0, 1.0, 1.0, 0.1, 5);
  EXPECT_THROW(build_superop(p), SizeError);
}

TEST(Apply, ZeroAndDenseOracle) {
  std::mt19937_64 rng(8);
  const ModelParams p = random_params(2, 2, rng);
  const SuperOp s = build_superop(p);
  EXPECT_EQ(apply(s, VectorizedState{Vector::Zero(16)}).data, Vector::Zero(16));
  const Matrix dense(s.matrix);
  for (int trial = 0; trial < 5; ++trial) {
    const Vector v = random_matrix(16, 1, rng);
    EXPECT_LT((apply(s, VectorizedState{v}).data - dense * v).cwiseAbs().maxCoeff(), 1e-12);
  }
  EXPECT_THROW(apply(s, VectorizedState{Vector::Zero(9)}), ShapeError);
  EXPECT_THROW(apply(s, VectorizedState{Vector::Zero(16), Stacking::RowStacking}), ConventionError);
}

TEST(Residual, VacuumUndrivenIsZero) {
  const ModelParams p = uniform_chain(3, 1.0, 10.0, 1.0, 0.0, 3);
  const SuperOp s = build_superop(p);
  EXPECT_LT(residual(s, vacuum_state(s.hilbert_dim)), 1e-15);
}

// The drive maps the vacuum onto coherences orthogonal to it, so the
// normalized expectation vanishes there; the norm diagnostic exposes it.
TEST(Residual, VacuumDrivenIsFlaggedByNormDiagnostic) {
  ModelParams p = table1_preset(Preset::UniformCase1, SignChoice::Upper);
  p.drive = 0.5;
  const SuperOp s = build_superop(p);
  const Residual r = residual_detail(s, vacuum_state(s.hilbert_dim).data);
  EXPECT_LT(r.expectation, 1e-15);
  EXPECT_GT(r.norm_ratio, 1e-3);
}

TEST(Residual, NormalizedExpectationDefinition) {
  std::mt19937_64 rng(9);
  const ModelParams p = random_params(2, 3, rng);
  const SuperOp s = build_superop(p);
  const DensityMatrix rho = random_density(9, rng);
  const Matrix lr = master_equation_oracle(p, rho.data);
  const double norm2 = rho.data.squaredNorm();
  const double expected = std::abs((rho.data.adjoint() * lr).trace()) / norm2;
  const Residual r = residual_detail(s, rho.data);
  EXPECT_NEAR(r.expectation, expected, 1e-12);
  EXPECT_NEAR(r.norm_ratio, lr.norm() / std::sqrt(norm2), 1e-12);
  EXPECT_THROW(residual_detail(s, Matrix::Zero(9, 9)), DegenerateState);
}

}  // namespace
}  // namespace ddbh
