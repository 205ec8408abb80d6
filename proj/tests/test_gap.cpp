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

#include <cmath>
#include <sstream>
#include <vector>

#include "gapcollapse/gap.hpp"
#include "gapcollapse/stat.hpp"
#include "test_util.hpp"

namespace gc = gapcollapse;
using gc::CMatrix;
using gc::CVector;
using gc::cplx;
using gc::testing::diag2;

namespace {

CMatrix empirical_covariance(const std::vector<CVector>& xs) {
  CMatrix c = CMatrix::Zero(xs.front().size(), xs.front().size());
  for (const auto& x : xs) c += x * x.adjoint();
  return c / static_cast<double>(xs.size());
}

}  // namespace

TEST(SampleG, RankOneSupport) {
  const auto rho = gc::validate_density(diag2(1.0, 0.0));
  const gc::GapSampler s(rho);
  gc::RngStream rng(1, 0);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(s.sample_g(rng).amplitudes(1), cplx(0.0, 0.0));
}

TEST(SampleG, CovarianceMatchesRho) {
  gc::RngStream rng(2, 0);
  const auto rho = gc::validate_density(diag2(0.7, 0.3));
  const gc::GapSampler s(rho);
  std::vector<CVector> xs;
  for (int i = 0; i < 100000; ++i) xs.push_back(s.sample_g(rng).amplitudes);
  EXPECT_LE((empirical_covariance(xs) - rho.matrix()).norm(), 0.02);

  // Isotropic case: per-component variance 1/d, real/imag parts 1/(2d) each.
  const gc::GapSampler iso(gc::maximally_mixed(4));
  double re2 = 0, im2 = 0, n2 = 0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    const CVector v = iso.sample_g(rng).amplitudes;
    re2 += v(2).real() * v(2).real();
    im2 += v(2).imag() * v(2).imag();
    n2 += v.squaredNorm();
  }
  EXPECT_NEAR(re2 / n, 0.125, 0.004);
  EXPECT_NEAR(im2 / n, 0.125, 0.004);
  EXPECT_NEAR(n2 / n, 1.0, 0.02);
}

TEST(SampleGa, PureStateNormIsGammaTwo) {
  gc::RngStream rng(3, 0);
  const double r = 1.0 / std::sqrt(2.0);
  const gc::UnitState phi(gc::testing::vec({r, cplx(0, r)}));
  const gc::GapSampler s(gc::pure_projector(phi));
  std::vector<double> cdf_values;
  for (int i = 0; i < 20000; ++i) {
    const CVector v = s.sample_ga(rng).amplitudes;
    const cplx overlap = phi.amplitudes().dot(v);
    ASSERT_NEAR(std::abs(overlap), v.norm(), 1e-12);  // v is proportional to phi
    // Size-biasing the Exp(1) law of |z|^2 gives density s e^{-s}.
    const double s2 = v.squaredNorm();
    cdf_values.push_back(1.0 - std::exp(-s2) * (1.0 + s2));
  }
  // Probability integral transform: KS distance of 20000 points; 1.63/sqrt(n) is the 1% level.
  EXPECT_LT(gc::ks_uniform_distance(cdf_values), 1.63 / std::sqrt(20000.0));
}

TEST(SampleGa, SecondMomentOfNormFollowsWick) {
  // Under G_rho: E|Phi|^2 = 1 and E|Phi|^4 = (sum p)^2 + sum p^2, so the
  // size-biased mean of |Phi|^2 is 1 + sum p^2 = 1.5 for rho = I/2.
  gc::RngStream rng(4, 0);
  const auto rho = gc::maximally_mixed(2);
  const gc::GapSampler s(rho);
  const int n = 100000;
  double ga = 0, g2 = 0, g4 = 0;
  for (int i = 0; i < n; ++i) {
    ga += s.sample_ga(rng).squared_norm();
    const double q = s.sample_g(rng).squared_norm();
    g2 += q;
    g4 += q * q;
  }
  const double wick = 1.0 + 0.5 * 0.5 * 2;
  EXPECT_NEAR(g4 / g2, wick, 0.03);  // brute-force ratio agrees with Wick
  EXPECT_NEAR(ga / n, wick, 0.02);
}

TEST(SampleGa, MixtureIndexFrequencies) {
  gc::RngStream rng(5, 0);
  const gc::GapSampler s(gc::validate_density(diag2(0.7, 0.3)));
  int zero = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) zero += s.sample_ga_indexed(rng).mixture_index == 0;
  EXPECT_NEAR(static_cast<double>(zero) / n, 0.7, 0.01);
}

TEST(SampleGap, RankOneGivesPhaseCircle) {
  gc::RngStream rng(6, 0);
  const auto phi = gc::testing::uniform_sphere(3, rng);
  const gc::GapSampler s(gc::pure_projector(phi));
  cplx mean_phase = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const cplx o = phi.amplitudes().dot(s.sample_gap(rng).amplitudes());
    ASSERT_NEAR(std::abs(o), 1.0, 1e-12);
    mean_phase += o;
  }
  EXPECT_LT(std::abs(mean_phase / static_cast<double>(n)), 0.03);
}

TEST(SampleGap, SecondMomentIdentity) {
  gc::RngStream rng(7, 0);
  const std::size_t m = 100000;
  const double bound = 5.0 / std::sqrt(static_cast<double>(m));
  for (gc::Index d : {2, 3, 6}) {
    const auto rho = gc::random_density_matrix(d, rng);
    const auto batch = gc::sample_gap_batch(rho, m, rng.substream(static_cast<std::uint64_t>(d)));
    const auto rep = gc::empirical_density(batch.states, rho.matrix());
    EXPECT_LE(*rep.frobenius_to_target, bound) << "d=" << d;
  }
}

TEST(SampleGap, UniformMomentsForMaximallyMixed) {
  // E|psi_k|^2 = 1/d, E|psi_k|^4 = 2/(d(d+1)); checked against both the closed
  // form and a brute-force normalized-Gaussian sampler.
  const gc::Index d = 4;
  const int n = 100000;
  const gc::GapSampler s(gc::maximally_mixed(d));
  gc::RngStream rng(8, 0);
  gc::RngStream oracle_rng(8, 1);
  double m2 = 0, m4 = 0, o2 = 0, o4 = 0;
  for (int i = 0; i < n; ++i) {
    const double a = std::norm(s.sample_gap(rng)[1]);
    const double b = std::norm(gc::testing::uniform_sphere(d, oracle_rng)[1]);
    m2 += a;
    m4 += a * a;
    o2 += b;
    o4 += b * b;
  }
  EXPECT_NEAR(m2 / n, 0.25, 0.003);
  EXPECT_NEAR(m4 / n, 2.0 / (d * (d + 1.0)), 0.002);
  EXPECT_NEAR(o4 / n, 2.0 / (d * (d + 1.0)), 0.002);
  EXPECT_NEAR(m4 / n, o4 / n, 0.003);
  EXPECT_NEAR(m2 / n, o2 / n, 0.004);
}

TEST(SampleGap, MaximallyMixedIsUniformOnSphere) {
  const gc::Index d = 4;
  const auto batch = gc::sample_gap_batch(gc::maximally_mixed(d), 2000, gc::RngStream(9, 0));
  const auto uniform = gc::testing::uniform_sphere_batch(d, 2000, gc::RngStream(9, 1));
  const auto rep = gc::mmd_two_sample(batch.states, uniform, 200, gc::RngStream(9, 2));
  EXPECT_GT(rep.permutation_p, 0.01);
}

TEST(SampleGap, UnitaryCovariance) {
  gc::RngStream rng(10, 0);
  const gc::Index d = 6;
  const auto rho = gc::random_density_matrix(d, rng);
  const CMatrix u = gc::testing::haar_unitary(d, rng);
  const auto rotated_rho = gc::validate_density(gc::hermitian_part(u * rho.matrix() * u.adjoint()));
  auto batch = gc::sample_gap_batch(rho, 5000, rng.substream(1));
  std::vector<gc::UnitState> rotated;
  for (const auto& s : batch.states) rotated.push_back(gc::UnitState::normalize(u * s.amplitudes()));
  const auto direct = gc::sample_gap_batch(rotated_rho, 5000, rng.substream(2));
  EXPECT_GT(gc::mmd_two_sample(rotated, direct.states, 200, rng.substream(3)).permutation_p, 0.01);
  // A non-trivial alternative is rejected: the unrotated ensemble.
  EXPECT_LT(gc::mmd_two_sample(batch.states, direct.states, 200, rng.substream(4)).permutation_p,
            0.01);
}

TEST(SampleGap, PhaseInvariance) {
  gc::RngStream rng(11, 0);
  const auto rho = gc::random_density_matrix(3, rng);
  const auto batch = gc::sample_gap_batch(rho, 500, rng.substream(1));
  const auto phi = gc::testing::uniform_sphere(3, rng);
  std::vector<gc::UnitState> rotated;
  for (const auto& s : batch.states) {
    const auto r = gc::UnitState::normalize(s.amplitudes() * std::polar(1.0, rng.phase()));
    EXPECT_NEAR(std::abs(phi.amplitudes().dot(r.amplitudes())),
                std::abs(phi.amplitudes().dot(s.amplitudes())), 1e-14);
    rotated.push_back(r);
  }
  // The kernel cannot tell the two lists apart: identical statistic for every split.
  EXPECT_EQ(gc::mmd_two_sample(batch.states, rotated, 200, rng.substream(2)).permutation_p, 1.0);
}

TEST(SampleGap, DeterministicAcrossWorkerCounts) {
  const auto rho = gc::random_density_matrix(5, *std::make_unique<gc::RngStream>(12, 0));
  const auto a = gc::sample_gap_batch(rho, 3000, gc::RngStream(12, 1), {1});
  const auto b = gc::sample_gap_batch(rho, 3000, gc::RngStream(12, 1), {4});
  for (std::size_t i = 0; i < a.count; ++i) ASSERT_EQ(a.states[i].amplitudes(), b.states[i].amplitudes());
}

TEST(SampleGap, DegenerateDrawIsReported) {
  try {
    gc::UnitState::normalize(CVector::Constant(2, 1e-200));
    FAIL();
  } catch (const gc::Error& e) {
    EXPECT_EQ(e.code(), gc::ErrorCode::DegenerateDraw);
  }
}

TEST(GapOracle, PureStateAndSecondMoment) {
  gc::RngStream rng(13, 0);
  const auto phi = gc::testing::uniform_sphere(2, rng);
  const gc::GapOracleSampler pure(gc::pure_projector(phi), 1000);
  for (int i = 0; i < 50; ++i) {
    EXPECT_NEAR(std::abs(phi.amplitudes().dot(pure.sample(rng).amplitudes())), 1.0, 1e-12);
  }
  const auto rho = gc::validate_density(diag2(0.7, 0.3));
  const auto states = gc::sample_gap_oracle_batch(rho, 10000, 10000, rng.substream(1));
  EXPECT_LE(*gc::empirical_density(states, rho.matrix()).frobenius_to_target, 0.05);
  EXPECT_THROW(gc::GapOracleSampler(rho, 999), gc::Error);
}

TEST(GapOracle, AgreesWithExactSamplerOffDiagonalRho) {
  gc::RngStream rng(14, 0);
  const auto rho = gc::random_density_matrix(4, rng);
  const auto exact = gc::sample_gap_batch(rho, 1500, rng.substream(1));
  const auto oracle = gc::sample_gap_oracle_batch(rho, 1500, 4000, rng.substream(2));
  EXPECT_GT(gc::mmd_two_sample(exact.states, oracle, 200, rng.substream(3)).permutation_p, 0.01);
}

TEST(GapBatch, CsvDump) {
  std::vector<gc::UnitState> states{gc::UnitState::basis(2, 0), gc::UnitState::basis(2, 1)};
  std::ostringstream os;
  gc::write_batch_csv(states, os);
  EXPECT_EQ(os.str(),
            "sample_index,component_index,re,im\n0,0,1.0,0.0\n0,1,0.0,0.0\n1,0,0.0,0.0\n1,1,1.0,0.0\n");
  std::ostringstream empty;
  gc::write_batch_csv({}, empty);
  EXPECT_EQ(empty.str(), "sample_index,component_index,re,im\n");
}
