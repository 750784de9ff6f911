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

#include <cmath>

#include "ddbh/exact_ness.hpp"
#include "ddbh/observables.hpp"
#include "test_util.hpp"

namespace ddbh {
namespace {

using testing::kron_chain;
using testing::random_density;

double poisson(double mean, int k) {
  return std::exp(-mean) * std::pow(mean, k) / std::tgamma(k + 1.0);
}

// Coherent state |alpha> truncated to d levels and renormalized.
Matrix coherent(Complex alpha, int d) {
  Vector psi(d);
  for (int k = 0; k < d; ++k) psi(k) = std::pow(alpha, k) / std::sqrt(std::tgamma(k + 1.0));
  psi.normalize();
  return psi * psi.adjoint();
}

TEST(NumberDistribution, Vacuum) {
  const NumberDistribution p = number_distribution(vacuum_state(125), 1, {3, 5});
  RealVector expected = RealVector::Zero(5);
  expected(0) = 1.0;
  EXPECT_EQ(p.probabilities, expected);
  EXPECT_EQ(p.site, 1);
}

TEST(NumberDistribution, CoherentDrivenCavityIsPoissonian) {
  const ModelParams p = uniform_chain(1, 0.0, 0.0, 1.0, 0.4, 5);
  const NessSolveReport r = steady_state(build_superop(p));
  const NumberDistribution dist = number_distribution(r.rho, 0, {1, 5});
  EXPECT_NEAR(dist.probabilities(0), 0.8799, 1e-3);
  for (int k = 0; k < 5; ++k) EXPECT_NEAR(dist.probabilities(k), poisson(0.128, k), 1e-3);
}

TEST(NumberDistribution, MatchesProjectorTrace) {
  std::mt19937_64 rng(1);
  const DensityMatrix rho = random_density(27, rng);
  for (int site = 0; site < 3; ++site) {
    const NumberDistribution dist = number_distribution(rho, site, {3, 3});
    EXPECT_NEAR(dist.probabilities.sum(), 1.0, 1e-12);
    for (int k = 0; k < 3; ++k) {
      const double direct = (rho.data * embed(fock_projector(3, k), site, 3, 3)).trace().real();
      EXPECT_NEAR(dist.probabilities(k), direct, 1e-12);
    }
    const double n = (rho.data * embed(local_ops(3).number, site, 3, 3)).trace().real();
    EXPECT_NEAR(dist.mean(), n, 1e-10);
    EXPECT_NEAR(mean_occupation(rho, site, {3, 3}), n, 1e-10);
  }
}

TEST(NumberDistribution, Errors) {
  EXPECT_THROW(number_distribution(vacuum_state(27), 3, {3, 3}), IndexError);
  EXPECT_THROW(number_distribution(vacuum_state(27), 0, {2, 3}), ShapeError);
}

TEST(NumberDistribution, MpdoAgreesWithDense) {
  const MpdoState s = random_mpdo(3, 4, 6, 3);
  const DensityMatrix rho = to_dense(s);
  for (int site = 0; site < 3; ++site) {
    const RealVector a = number_distribution(s, site).probabilities;
    const RealVector b = number_distribution(rho, site, {3, 4}).probabilities;
    EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_NEAR(mean_occupation(s, site), mean_occupation(rho, site, {3, 4}), 1e-10);
  }
}

TEST(Correlator, VacuumIsZero) {
  EXPECT_EQ(correlator(vacuum_state(125), {0, 1, 2}, {3, 5}), 0.0);
}

TEST(Correlator, FactorizesOnProductStates) {
  std::vector<Matrix> f = {coherent({0.3, 0.1}, 5), coherent({-0.5, 0.2}, 5), coherent({0.7, 0.0}, 5)};
  const DensityMatrix rho(kron_chain(f));
  const Matrix n = local_ops(5).number;
  double product = 1.0;
  for (const Matrix& m : f) product *= (m * n).trace().real();
  EXPECT_NEAR(correlator(rho, {0, 1, 2}, {3, 5}), product, 1e-12);
}

TEST(Correlator, PermutationInvariantAndDistinctSites) {
  std::mt19937_64 rng(2);
  const DensityMatrix rho = random_density(27, rng);
  const double c = correlator(rho, {0, 1, 2}, {3, 3});
  EXPECT_NEAR(correlator(rho, {2, 0, 1}, {3, 3}), c, 1e-14);
  EXPECT_NEAR(correlator(rho, {1, 2, 0}, {3, 3}), c, 1e-14);
  const Matrix direct = embed(local_ops(3).number, 0, 3, 3) * embed(local_ops(3).number, 1, 3, 3) *
                        embed(local_ops(3).number, 2, 3, 3);
  EXPECT_NEAR((rho.data * direct).trace().real(), c, 1e-12);
  EXPECT_THROW(correlator(rho, {0, 0, 1}, {3, 3}), ArgumentError);
  EXPECT_THROW(correlator(random_mpdo(3, 3, 2, 1), {1, 1}), ArgumentError);
}

TEST(Correlator, MpdoAgreesWithDense) {
  const MpdoState s = random_mpdo(3, 4, 6, 4);
  EXPECT_NEAR(correlator(s, {0, 1, 2}), correlator(to_dense(s), {0, 1, 2}, {3, 4}), 1e-10);
}

TEST(Correlator, CorrelatorSites) {
  EXPECT_EQ(corr_sites(3), (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(corr_sites(5), (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(corr_sites(2), (std::vector<int>{0, 1}));
}

TEST(ConjugateState, RealStateUnchangedAndInvolution) {
  const DensityMatrix real = vacuum_state(4);
  EXPECT_EQ(conjugate_state(real).data, real.data);
  std::mt19937_64 rng(3);
  const DensityMatrix rho = random_density(9, rng);
  EXPECT_EQ(conjugate_state(conjugate_state(rho)).data, rho.data);
  EXPECT_NO_THROW(conjugate_state(rho).validate());
}

TEST(ConjugateState, ObservablesInvariant) {
  std::mt19937_64 rng(4);
  const DensityMatrix rho = random_density(27, rng);
  const DensityMatrix c = conjugate_state(rho);
  const ChainShape shape{3, 3};
  for (int l = 0; l < 3; ++l) {
    EXPECT_LT((number_distribution(rho, l, shape).probabilities -
               number_distribution(c, l, shape).probabilities)
                  .cwiseAbs()
                  .maxCoeff(),
              1e-15);
  }
  EXPECT_NEAR(correlator(rho, {0, 1, 2}, shape), correlator(c, {0, 1, 2}, shape), 1e-15);
  const StateDiagnostics a = diagnostics(rho);
  const StateDiagnostics b = diagnostics(c);
  EXPECT_NEAR(a.purity, b.purity, 1e-14);
  EXPECT_NEAR(a.min_eigenvalue, b.min_eigenvalue, 1e-12);
  EXPECT_NEAR(a.trace, b.trace, 1e-15);
}

TEST(TraceDistance, Basics) {
  std::mt19937_64 rng(5);
  const DensityMatrix rho = random_density(6, rng);
  EXPECT_NEAR(trace_distance(rho, rho), 0.0, 1e-15);
  Vector a = Vector::Zero(6), b = Vector::Zero(6);
  a(1) = 1.0;
  b(4) = 1.0;
  EXPECT_NEAR(trace_distance(pure_state(a), pure_state(b)), 1.0, 1e-14);
  EXPECT_THROW(trace_distance(rho, vacuum_state(5)), ShapeError);
}

TEST(TraceDistance, SymmetricAndBounded) {
  std::mt19937_64 rng(6);
  const DensityMatrix x = random_density(8, rng);
  const DensityMatrix y = random_density(8, rng);
  const double t = trace_distance(x, y);
  EXPECT_NEAR(t, trace_distance(y, x), 1e-14);
  EXPECT_GT(t, 0.0);
  EXPECT_LE(t, 1.0);
}

TEST(Diagnostics, VacuumAndMaximallyMixed) {
  const StateDiagnostics v = diagnostics(vacuum_state(5));
  EXPECT_EQ(v.trace, 1.0);
  EXPECT_EQ(v.hermiticity_defect, 0.0);
  EXPECT_NEAR(v.min_eigenvalue, 0.0, 1e-15);
  EXPECT_EQ(v.purity, 1.0);
  const StateDiagnostics m = diagnostics(DensityMatrix(Matrix::Identity(5, 5) / 5.0));
  EXPECT_NEAR(m.purity, 0.2, 1e-15);
}

TEST(Diagnostics, TrimerNessIsMixed) {
  ModelParams p = table1_preset(Preset::UniformCase1, SignChoice::Upper);
  p.drive = 0.5;
  const StateDiagnostics d = diagnostics(steady_state(build_superop(p)).rho);
  EXPECT_GT(d.purity, 0.0);
  EXPECT_LT(d.purity, 1.0);
}

TEST(Observe, RowConsistency) {
  std::mt19937_64 rng(7);
  const DensityMatrix rho = random_density(27, rng);
  const ObservableRow row = observe(rho, {3, 3}, 0.3);
  EXPECT_EQ(row.backend, Backend::Exact);
  EXPECT_EQ(row.omega, 0.3);
  ASSERT_EQ(row.mean_n.size(), 3u);
  for (int l = 0; l < 3; ++l) {
    EXPECT_NEAR(row.mean_n[l], row.distributions[l].mean(), 1e-12);
  }
  const ObservableRow mrow = observe(random_mpdo(3, 3, 3, 1), 0.2);
  EXPECT_EQ(mrow.backend, Backend::Mpdo);
  for (int l = 0; l < 3; ++l) EXPECT_NEAR(mrow.mean_n[l], mrow.distributions[l].mean(), 1e-8);
}

}  // namespace
}  // namespace ddbh
