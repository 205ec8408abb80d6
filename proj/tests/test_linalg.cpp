// Copyright 2026 The gapcollapse Authors.
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

#include <unsupported/Eigen/MatrixFunctions>

#include "gapcollapse/gap.hpp"
#include "gapcollapse/linalg.hpp"
#include "gapcollapse/serialize.hpp"
#include "test_util.hpp"

namespace gc = gapcollapse;
using gc::CMatrix;
using gc::CVector;
using gc::cplx;
using gc::testing::diag2;
using gc::testing::vec;

TEST(ValidateDensity, AcceptsMaximallyMixedAndPureProjector) {
  EXPECT_NO_THROW(gc::validate_density(CMatrix::Identity(2, 2) / 2.0));
  EXPECT_NO_THROW(gc::validate_density(diag2(1.0, 0.0)));
}

TEST(ValidateDensity, ReportsTraceViolation) {
  try {
    gc::validate_density(diag2(0.6, 0.6));
    FAIL() << "expected TraceNotOne";
  } catch (const gc::Error& e) {
    EXPECT_EQ(e.code(), gc::ErrorCode::TraceNotOne);
    EXPECT_NEAR(e.violation(), 0.2, 1e-12);
  }
}

TEST(ValidateDensity, RejectsNonHermitianAndNegative) {
  CMatrix m = diag2(0.5, 0.5);
  m(0, 1) = 0.1;
  try {
    gc::validate_density(m);
    FAIL();
  } catch (const gc::Error& e) {
    EXPECT_EQ(e.code(), gc::ErrorCode::NotHermitian);
    EXPECT_NEAR(e.violation(), 0.1, 1e-15);
  }
  try {
    gc::validate_density(diag2(1.2, -0.2));
    FAIL();
  } catch (const gc::Error& e) {
    EXPECT_EQ(e.code(), gc::ErrorCode::NotPositive);
    EXPECT_NEAR(e.violation(), 0.2, 1e-12);
  }
  EXPECT_THROW(gc::validate_density(CMatrix::Zero(2, 3)), gc::Error);
}

TEST(ValidateDensity, ToleratesRoundOffWithinBudget) {
  CMatrix m = diag2(0.5 + 4e-11, 0.5 - 4e-11);
  m(0, 1) = cplx(0.0, 5e-11);
  m(1, 0) = cplx(0.0, -4e-11);
  EXPECT_NO_THROW(gc::validate_density(m));
}

TEST(ValidateDensity, IsIdempotent) {
  gc::RngStream rng(7, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const gc::Index d = 1 + trial % 6;
    CMatrix g = gc::testing::ginibre(d, rng);
    CMatrix m = g * g.adjoint();
    m /= m.trace().real();
    // Break exact Hermiticity at the round-off level.
    m(0, d - 1) += cplx(1e-13, -2e-13);
    const gc::DensityMatrix once = gc::validate_density(m);
    const gc::DensityMatrix twice = gc::validate_density(once.matrix());
    EXPECT_EQ(once.matrix(), twice.matrix());
  }
}

TEST(SpectralDecompose, DiagonalInput) {
  const auto s = gc::spectral_decompose(gc::validate_density(diag2(0.3, 0.7)));
  EXPECT_NEAR(s.probabilities(0), 0.7, 1e-15);
  EXPECT_NEAR(s.probabilities(1), 0.3, 1e-15);
  EXPECT_NEAR(std::abs(s.eigenvectors(1, 0)), 1.0, 1e-15);
  EXPECT_NEAR(std::abs(s.eigenvectors(0, 1)), 1.0, 1e-15);
}

TEST(SpectralDecompose, RankOneFixesPhase) {
  const double r = 1.0 / std::sqrt(2.0);
  const gc::UnitState plus(vec({r, r}));
  const auto s = gc::spectral_decompose(gc::pure_projector(plus));
  EXPECT_NEAR(s.probabilities(0), 1.0, 1e-14);
  EXPECT_NEAR(s.probabilities(1), 0.0, 1e-14);
  EXPECT_NEAR((s.eigenvectors.col(0) - plus.amplitudes()).norm(), 0.0, 1e-14);
}

TEST(SpectralDecompose, OffDiagonalCouplingMatchesCharacteristicPolynomial) {
  CMatrix m(2, 2);
  m << 0.5, 0.25, 0.25, 0.5;
  // Roots of x^2 - tr x + det.
  const double tr = 1.0;
  const double det = 0.5 * 0.5 - 0.25 * 0.25;
  const double disc = std::sqrt(tr * tr - 4.0 * det);
  const double hi = 0.5 * (tr + disc);
  const double lo = 0.5 * (tr - disc);
  ASSERT_NEAR(hi, 0.75, 1e-15);
  const auto s = gc::spectral_decompose(gc::validate_density(m));
  EXPECT_NEAR(s.probabilities(0), hi, 1e-14);
  EXPECT_NEAR(s.probabilities(1), lo, 1e-14);
}

TEST(SpectralDecompose, ClampsTinyNegativeEigenvalues) {
  CMatrix m = CMatrix::Zero(3, 3);
  m(0, 0) = 0.6 + 5e-11;
  m(1, 1) = 0.4;
  m(2, 2) = -5e-11;
  const auto s = gc::spectral_decompose(gc::validate_density(m));
  EXPECT_EQ(s.probabilities(2), 0.0);
  EXPECT_NEAR(s.probabilities.sum(), 1.0, 1e-15);
}

TEST(SpectralDecompose, ReassemblyGramAndOrderingOnRandomInputs) {
  gc::RngStream rng(11, 3);
  for (int trial = 0; trial < 50; ++trial) {
    const gc::Index d = 1 + trial % 12;
    const gc::Index rank = 1 + trial % d;
    CMatrix g = CMatrix::Zero(d, d);
    g.leftCols(rank) = gc::testing::ginibre(d, rng).leftCols(rank);
    CMatrix m = g * g.adjoint();
    m /= m.trace().real();
    const auto rho = gc::validate_density(m);
    const auto s = gc::spectral_decompose(rho);
    EXPECT_NEAR(s.probabilities.sum(), 1.0, gc::tol::kSpectrumSum);
    EXPECT_LE((s.eigenvectors.adjoint() * s.eigenvectors - CMatrix::Identity(d, d)).norm(),
              gc::tol::kSpectrumSum);
    EXPECT_LE((s.reassemble() - rho.matrix()).norm(), gc::tol::kReassembly);
    for (gc::Index k = 1; k < d; ++k) EXPECT_GE(s.probabilities(k - 1), s.probabilities(k));
    EXPECT_GE(s.probabilities.minCoeff(), 0.0);
  }
}

TEST(PureProjector, Examples) {
  const double r = 1.0 / std::sqrt(2.0);
  EXPECT_EQ(gc::pure_projector(gc::UnitState::basis(2, 0)).matrix(), diag2(1.0, 0.0));

  CMatrix plus(2, 2);
  plus << 0.5, 0.5, 0.5, 0.5;
  EXPECT_NEAR((gc::pure_projector(gc::UnitState(vec({r, r}))).matrix() - plus).norm(), 0, 1e-15);

  CMatrix phase(2, 2);
  phase << cplx(0.5, 0), cplx(0, -0.5), cplx(0, 0.5), cplx(0.5, 0);
  const auto p = gc::pure_projector(gc::UnitState(vec({r, cplx(0, r)})));
  EXPECT_NEAR((p.matrix() - phase).norm(), 0, 1e-15);
}

TEST(PureProjector, TraceOneAndIdempotent) {
  gc::RngStream rng(5, 1);
  for (int trial = 0; trial < 30; ++trial) {
    const auto psi = gc::testing::uniform_sphere(1 + trial % 9, rng);
    const CMatrix p = gc::pure_projector(psi).matrix();
    EXPECT_NEAR(p.trace().real(), 1.0, 1e-10);
    EXPECT_LE((p * p - p).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(UnitState, RejectsUnnormalized) {
  EXPECT_THROW(gc::UnitState(vec({1.0, 1.0})), gc::Error);
  EXPECT_THROW(gc::UnitState::normalize(CVector::Zero(3)), gc::Error);
  EXPECT_NO_THROW(gc::UnitState(vec({1.0 + 5e-11, 0.0})));
}

TEST(HermitianPropagator, MatchesMatrixExponential) {
  gc::RngStream rng(3, 9);
  const CMatrix g = gc::testing::ginibre(5, rng);
  const CMatrix h = gc::hermitian_part(g);
  const double t = 0.73;
  const double hbar = 1.3;
  const gc::HermitianPropagator prop(h, hbar);
  const CMatrix ref = (cplx(0, -t / hbar) * h).exp();
  EXPECT_LE((prop.matrix(t) - ref).norm(), 1e-12);
  const CVector v = gc::testing::uniform_sphere(5, rng).amplitudes();
  EXPECT_LE((prop.apply(v, t) - ref * v).norm(), 1e-12);
  EXPECT_LE((prop.matrix(t).adjoint() * prop.matrix(t) - CMatrix::Identity(5, 5)).norm(), 1e-12);
}

TEST(Serialize, MatrixJsonRoundTripAndFlatForm) {
  gc::RngStream rng(1, 1);
  const CMatrix m = gc::testing::ginibre(3, rng);
  EXPECT_EQ(gc::io::matrix_from_json(gc::io::to_json(m)), m);

  const auto flat = nlohmann::json::parse("[[1,0],[0,-0.5],[0,0.5],[2,0]]");
  const CMatrix f = gc::io::matrix_from_json(flat);
  EXPECT_EQ(f(0, 1), cplx(0, -0.5));
  EXPECT_EQ(f(1, 0), cplx(0, 0.5));
  // Two rows of two reals cannot be a flat list (2 is not a square), so they
  // are rows.
  const CMatrix r = gc::io::matrix_from_json(nlohmann::json::parse("[[1,2],[3,4]]"));
  EXPECT_EQ(r(1, 0), cplx(3, 0));
  EXPECT_EQ(r(0, 1), cplx(2, 0));
  EXPECT_THROW(gc::io::matrix_from_json(nlohmann::json::parse("[[1,0],[2,0],[3,0]]")), gc::Error);
  EXPECT_EQ(gc::io::matrix_from_json(nlohmann::json::parse("[[1,2,3],[4,5,6],[7,8,9]]"))(2, 1),
            cplx(8, 0));
}
