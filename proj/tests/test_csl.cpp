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
#include <numbers>
#include <sstream>

#include "gapcollapse/csl.hpp"
#include "gapcollapse/stat.hpp"
#include "test_util.hpp"

namespace gc = gapcollapse;
using gc::CMatrix;
using gc::CVector;
using gc::cplx;

namespace {

gc::CslConfig make_cfg(int n, int m, double gamma, double sigma, double tau, double dt,
                       double hopping = 0.0, double a = 1.0) {
  gc::CslConfig cfg;
  cfg.particles = n;
  cfg.sites = m;
  cfg.spacing = a;
  cfg.gamma = gamma;
  cfg.sigma = sigma;
  cfg.tau = tau;
  cfg.dt = dt;
  cfg.hamiltonian = gc::tight_binding_hamiltonian(cfg.lattice(), hopping);
  cfg.auto_cells();
  return cfg;
}

CVector raw(const gc::CslModel& model, const gc::UnitState& psi, const gc::NoiseField& noise) {
  return gc::evolve_raw(psi, noise, model).amplitudes;
}

}  // namespace

TEST(DensityOperators, PeakRiemannSumAndAdditivity) {
  auto cfg = make_cfg(1, 3, 1.0, 0.5, 1.0, 0.1);
  // Put a cell centre exactly on site 0.
  cfg.cells = 81;
  cfg.cell_width = 0.125;
  const auto ops = gc::build_density_operators(cfg);
  EXPECT_EQ(ops.cells(), 81);
  const double peak = 1.0 / std::sqrt(2 * std::numbers::pi * 0.25);
  Eigen::Index c0 = 0;
  (ops.centers.array() - 0.0).abs().minCoeff(&c0);
  ASSERT_NEAR(ops.centers(c0), 0.0, 1e-12);
  EXPECT_NEAR(ops.values(c0, 0), peak, 1e-12);

  for (int n : {1, 2}) {
    auto c = make_cfg(n, 3, 1.0, 0.4, 1.0, 0.1, 0.0, 0.7);
    ASSERT_LE(c.cell_width, c.sigma / 4);
    const auto o = gc::build_density_operators(c);
    EXPECT_LT((o.total().array() - n).abs().maxCoeff(), 1e-4) << "N=" << n;
  }

  // Both particles on site 1 versus one particle there.
  auto one = make_cfg(1, 3, 1.0, 0.4, 1.0, 0.1);
  auto two = make_cfg(2, 3, 1.0, 0.4, 1.0, 0.1);
  const auto o1 = gc::build_density_operators(one);
  const auto o2 = gc::build_density_operators(two);
  const auto both = two.lattice().basis_index({1, 1});
  EXPECT_LT((o2.values.col(both) - 2.0 * o1.values.col(1)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Noise, MomentsAndIndependence) {
  auto cfg = make_cfg(1, 2, 0.3, 0.5, 1.0, 0.01);
  cfg.cells = 2;
  cfg.cell_width = 0.2;
  gc::RngStream rng(50, 0);
  const auto noise = gc::sample_noise(cfg, rng);
  std::vector<double> x0, x1;
  for (int r = 0; r < 500; ++r) {
    const auto nz = gc::sample_noise(cfg, rng);
    for (gc::Index s = 0; s < nz.steps(); ++s) {
      x0.push_back(nz.xi(0, s));
      x1.push_back(nz.xi(1, s));
    }
  }
  ASSERT_EQ(x0.size(), 50000u);
  const double var = 0.3 / (0.2 * 0.01);
  double m = 0, v = 0, cov = 0, s0 = 0, s1 = 0;
  const double n = 2.0 * x0.size();
  for (std::size_t k = 0; k < x0.size(); ++k) m += x0[k] + x1[k];
  m /= n;
  for (std::size_t k = 0; k < x0.size(); ++k) {
    v += (x0[k] - m) * (x0[k] - m) + (x1[k] - m) * (x1[k] - m);
    cov += x0[k] * x1[k];
    s0 += x0[k] * x0[k];
    s1 += x1[k] * x1[k];
  }
  v /= n - 1;
  EXPECT_NEAR(v / var, 1.0, 0.01);
  EXPECT_LT(std::abs(m), 3 * std::sqrt(var / n));
  EXPECT_LT(std::abs(cov / std::sqrt(s0 * s1)), 0.01);
}

TEST(EvolveRaw, ZeroGammaIsUnitary) {
  const auto cfg = make_cfg(2, 3, 0.0, 0.5, 1.0, 0.05, 0.8);
  const gc::CslModel model(cfg);
  gc::RngStream rng(51, 0);
  const auto psi = gc::testing::uniform_sphere(9, rng);
  const auto noise = gc::sample_noise(cfg, rng);  // identically zero at gamma = 0
  ASSERT_EQ(noise.xi.cwiseAbs().maxCoeff(), 0.0);
  const CVector out = raw(model, psi, noise);
  EXPECT_NEAR(out.norm(), 1.0, 1e-9);
  const CMatrix u = gc::HermitianPropagator(cfg.hamiltonian, 1.0).matrix(cfg.tau);
  EXPECT_LT((out - u * psi.amplitudes()).norm(), 1e-9);
  EXPECT_NEAR(gc::cooked_weight(psi, gc::sample_noise(cfg, rng), model), 1.0, 1e-9);
  EXPECT_LT((gc::physical_state(psi, noise, model).amplitudes() - u * psi.amplitudes()).norm(), 1e-9);
}

TEST(EvolveRaw, ScalarLogNormalCase) {
  // One cell, H = 0: the weight is exp(2 n_q sum_s xi_s dx dt - 2 gamma n_q^2 dx tau).
  auto cfg = make_cfg(1, 2, 0.4, 0.5, 1.0, 0.1);
  cfg.cells = 1;
  cfg.cell_width = 0.3;
  const gc::CslModel model(cfg);
  gc::RngStream rng(52, 0);
  const auto psi = gc::UnitState::basis(2, 0);
  const double nq = model.density().values(0, 0);
  double mean = 0;
  const int n = 20000;
  for (int r = 0; r < n; ++r) {
    const auto noise = gc::sample_noise(cfg, rng);
    const double w = gc::cooked_weight(psi, noise, model);
    const double oracle =
        std::exp(2 * nq * noise.xi.sum() * 0.3 * 0.1 - 2 * 0.4 * nq * nq * 0.3 * 1.0);
    ASSERT_NEAR(w / oracle, 1.0, 1e-12);
    mean += w;
  }
  EXPECT_NEAR(mean / n, 1.0, 0.03);
}

TEST(EvolveRaw, StrangSecondOrder) {
  const auto coarse = make_cfg(1, 3, 0.5, 0.5, 1.0, 0.1, 1.0);
  gc::RngStream rng(53, 0);
  const auto psi = gc::testing::uniform_sphere(3, rng);
  const auto noise = gc::sample_noise(coarse, rng);
  auto at = [&](int factor) {
    auto cfg = coarse;
    cfg.dt = coarse.dt / factor;
    return raw(gc::CslModel(cfg), psi, noise.refined(factor));
  };
  const CVector ref = at(16);
  const double e1 = (at(1) - ref).norm();
  const double e2 = (at(2) - ref).norm();
  ASSERT_GT(e2, 1e-10);
  EXPECT_NEAR(e1 / e2, 4.0, 1.0);
}

TEST(EvolveRaw, OverflowIsReported) {
  auto cfg = make_cfg(1, 2, 1.0, 0.1, 1.0, 0.5);
  const gc::CslModel model(cfg);
  auto noise = gc::sample_noise(cfg, *std::make_unique<gc::RngStream>(54, 0));
  noise.xi.setConstant(1e6);
  EXPECT_THROW(gc::evolve_raw(gc::UnitState::basis(2, 0), noise, model), gc::Error);
  // The log-scaled weight itself stays representable.
  EXPECT_TRUE(std::isinf(gc::cooked_weight(gc::UnitState::basis(2, 0), noise, model)));
}

TEST(CookedWeight, NormalizedOnAverageAndSmallGammaLimit) {
  const auto cfg = make_cfg(1, 3, 0.1, 0.5, 1.0, 0.1, 0.7);
  const gc::CslModel model(cfg);
  gc::RngStream rng(55, 0);
  const auto psi = gc::testing::uniform_sphere(3, rng);
  double mean = 0;
  const int n = 10000;
  for (int r = 0; r < n; ++r) mean += gc::cooked_weight(psi, gc::sample_noise(cfg, rng), model);
  EXPECT_NEAR(mean / n, 1.0, 0.03);

  // Same underlying standard normals, scaled by sqrt(gamma).
  gc::RngStream a(56, 0);
  const auto unit_noise = gc::sample_noise(make_cfg(1, 3, 1.0, 0.5, 1.0, 0.1, 0.7), a);
  double prev = 1e300;
  for (double g : {1e-1, 1e-2, 1e-3, 1e-4}) {
    const auto c = make_cfg(1, 3, g, 0.5, 1.0, 0.1, 0.7);
    gc::NoiseField nz{unit_noise.xi * std::sqrt(g)};
    const double dev = std::abs(gc::cooked_weight(psi, nz, gc::CslModel(c)) - 1.0);
    EXPECT_LT(dev, prev);
    prev = dev;
  }
  EXPECT_LT(prev, 0.05);
}

TEST(PhysicalState, TiltingAndDeterminism) {
  auto cfg = make_cfg(1, 2, 1.0, 0.3, 1.0, 0.1, 0.0, 2.0);
  const gc::CslModel model(cfg);
  gc::NoiseField noise{Eigen::MatrixXd::Zero(cfg.cells, cfg.steps())};
  Eigen::Index near1 = 0;
  (model.density().centers.array() - 2.0).abs().minCoeff(&near1);
  noise.xi.row(near1).setConstant(200.0);
  const gc::UnitState plus(gc::testing::vec({1 / std::sqrt(2.0), 1 / std::sqrt(2.0)}));
  const auto out = gc::physical_state(plus, noise, model);
  EXPECT_GT(std::abs(out[1]), 1 - 1e-9);

  gc::RngStream rng(57, 0);
  const auto nz = gc::sample_noise(cfg, rng);
  EXPECT_EQ(gc::physical_state(plus, nz, model).amplitudes(), gc::physical_state(plus, nz, model).amplitudes());

  noise.xi.setConstant(0.0);
  noise.xi.row(near1).setConstant(-1e4);
  EXPECT_THROW(gc::physical_state(gc::UnitState::basis(2, 1), noise, model), gc::Error);
}

TEST(SolutionOperator, MatchesVectorEvolution) {
  const auto cfg = make_cfg(1, 3, 0.6, 0.5, 1.0, 0.1, 0.9);
  const gc::CslModel model(cfg);
  gc::RngStream rng(58, 0);
  const auto psi = gc::testing::uniform_sphere(3, rng);
  const auto noise = gc::sample_noise(cfg, rng);
  const CMatrix l = gc::solution_operator(noise, model);
  const CVector v = raw(model, psi, noise);
  EXPECT_LT((l * psi.amplitudes() - v).norm(), 1e-10 * v.norm());
}

TEST(CookedEnsemble, ZeroGammaSelectsUniformly) {
  const auto cfg = make_cfg(1, 2, 0.0, 0.5, 1.0, 0.1, 0.5);
  const gc::CslModel model(cfg);
  const std::size_t count = 2000, pool = 20000;
  const auto out = gc::sample_cooked_ensemble(gc::maximally_mixed(2), model, count, pool,
                                              gc::RngStream(59, 0));
  std::vector<double> u;
  for (const auto& s : out) u.push_back((static_cast<double>(s.noise_id) + 0.5) / pool);
  EXPECT_LT(gc::ks_uniform_distance(u), 1.63 / std::sqrt(static_cast<double>(count)));
  EXPECT_THROW(gc::sample_cooked_ensemble(gc::maximally_mixed(2), model, count, pool - 1,
                                          gc::RngStream(59, 0)),
               gc::Error);
}

TEST(CookedEnsemble, SecondMomentIsChannelAction) {
  const auto cfg = make_cfg(1, 3, 0.8, 0.5, 1.0, 0.1, 0.8);
  const gc::CslModel model(cfg);
  gc::RngStream rng(60, 0);
  const auto rho = gc::random_density_matrix(3, rng);
  const auto out = gc::sample_cooked_ensemble(rho, model, 4000, 40000, rng.substream(1));
  std::vector<gc::UnitState> states;
  for (const auto& s : out) states.push_back(s.state);
  // Independent estimate of E_raw[L rho L^dagger] from fresh raw noises.
  CMatrix channel = CMatrix::Zero(3, 3);
  auto orng = rng.substream(2);
  const int n = 20000;
  for (int r = 0; r < n; ++r) {
    const CMatrix l = gc::solution_operator(gc::sample_noise(cfg, orng), model);
    channel += l * rho.matrix() * l.adjoint();
  }
  channel /= n;
  EXPECT_LE(*gc::empirical_density(states, channel).frobenius_to_target, 0.05);
}

TEST(CookedEnsemble, CommutingDecoherence) {
  const auto cfg = make_cfg(1, 2, 1.5, 0.5, 1.0, 0.1, 0.0, 1.0);
  const gc::CslModel model(cfg);
  const gc::UnitState plus(gc::testing::vec({1 / std::sqrt(2.0), 1 / std::sqrt(2.0)}));
  const auto rho = gc::pure_projector(plus);
  const auto out = gc::sample_cooked_ensemble(rho, model, 6000, 60000, gc::RngStream(61, 0));
  std::vector<gc::UnitState> states;
  for (const auto& s : out) states.push_back(s.state);
  const CMatrix emp = gc::empirical_density(states).second_moment;
  // E exp(sum_c (n_a + n_b) xi_c dx dt) over the Gaussian cell noise, times the
  // deterministic damping, evaluated per step from the density values.
  const auto& v = model.density().values;
  const double dx = cfg.cell_width, dt = cfg.dt, g = cfg.gamma;
  double log_f = 0;
  for (gc::Index c = 0; c < v.rows(); ++c) {
    const double sum = v(c, 0) + v(c, 1);
    const double var = g / (dx * dt) * (dx * dt) * (dx * dt);
    log_f += 0.5 * sum * sum * var - g * (v(c, 0) * v(c, 0) + v(c, 1) * v(c, 1)) * dx * dt;
  }
  const double f = std::exp(log_f * cfg.steps());
  EXPECT_NEAR(gc::csl_commuting_coherence_factor(cfg, model.density(), 0, 1, cfg.tau), f, 1e-12);
  ASSERT_GT(f, 0.2);
  ASSERT_LT(f, 0.8);
  EXPECT_NEAR(std::abs(emp(0, 1)) / (0.5 * f), 1.0, 0.05);
}

TEST(CslTheorem, FixedNoisePushforward) {
  const auto cfg = make_cfg(1, 3, 0.6, 0.5, 1.0, 0.1, 0.9);
  const gc::CslModel model(cfg);
  gc::RngStream rng(62, 0);
  const auto rho = gc::random_density_matrix(3, rng);
  const CMatrix l = gc::solution_operator(gc::sample_noise(cfg, rng), model);
  const std::size_t m = 40000;
  EXPECT_LE(gc::pushforward_identity_check(rho, l, m, rng.substream(1)).normalized_discrepancy,
            5.0 / std::sqrt(static_cast<double>(m)));
}

TEST(CslConfigJson, ParseAndNoiseCsv) {
  const auto cfg = gc::csl_config_from_json(nlohmann::json::parse(
      R"({"N": 1, "M": 2, "gamma": 0.5, "sigma": 0.4, "tau": 1.0, "dt": 0.25, "hopping": 0.3})"));
  EXPECT_NEAR(cfg.cell_width, 0.1, 1e-15);
  EXPECT_EQ(cfg.steps(), 4);
  const auto back = gc::csl_config_from_json(gc::to_json(cfg));
  EXPECT_EQ(back.cells, cfg.cells);
  EXPECT_THROW(gc::csl_config_from_json(nlohmann::json::parse(
                   R"({"N": 1, "M": 2, "gamma": 0.5, "sigma": 0.4, "tau": 1.0, "dt": 0.3})")),
               gc::Error);
  gc::NoiseField nz{Eigen::MatrixXd::Zero(2, 1)};
  nz.xi(1, 0) = -0.5;
  std::ostringstream os;
  gc::write_noise_csv(nz, os);
  EXPECT_EQ(os.str(), "cell,step,value\n0,0,0.0\n1,0,-0.5\n");
}
