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

#ifndef GAPCOLLAPSE_CSL_HPP
#define GAPCOLLAPSE_CSL_HPP

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <vector>

#include <nlohmann/json.hpp>

#include "gapcollapse/errors.hpp"
#include "gapcollapse/gap.hpp"
#include "gapcollapse/grw.hpp"
#include "gapcollapse/linalg.hpp"
#include "gapcollapse/parallel.hpp"
#include "gapcollapse/rng.hpp"
#include "gapcollapse/serialize.hpp"

namespace gapcollapse {

struct CslConfig {
  int particles = 1;
  int sites = 2;
  double spacing = 1.0;
  double gamma = 1.0;  // E[xi(x,t) xi(x',t')] = gamma delta(x-x') delta(t-t')
  double sigma = 1.0;  // smearing width of N(x)
  CMatrix hamiltonian;
  double tau = 1.0;
  double hbar = 1.0;
  double dt = 0.1;
  int cells = 1;           // noise cells, centred on the lattice
  double cell_width = 1.0;

  Lattice lattice() const { return Lattice(particles, sites, spacing); }
  Index dim() const { return lattice().dim(); }

  long steps() const { return std::lround(tau / dt); }

  double cell_center(int c) const {
    return lattice().center() + (c - 0.5 * (cells - 1)) * cell_width;
  }

  /// Picks cell_width = sigma / 4 and enough cells to pad the lattice by
  /// `padding_sigmas` widths on both sides.
  void auto_cells(double padding_sigmas = 6.0) {
    cell_width = sigma / 4.0;
    const double span = spacing * (sites - 1) + 2.0 * padding_sigmas * sigma;
    cells = static_cast<int>(std::ceil(span / cell_width)) + 1;
  }

  void validate() const {
    const Lattice lat = lattice();
    if (!(gamma >= 0.0) || !std::isfinite(gamma)) {
      throw Error(ErrorCode::InvalidArgument, "gamma must be finite and >= 0");
    }
    if (!(sigma > 0.0)) throw Error(ErrorCode::InvalidArgument, "sigma must be > 0");
    if (!(tau > 0.0)) throw Error(ErrorCode::InvalidArgument, "tau must be > 0");
    if (!(hbar > 0.0)) throw Error(ErrorCode::InvalidArgument, "hbar must be > 0");
    if (!(dt > 0.0)) throw Error(ErrorCode::InvalidArgument, "dt must be > 0");
    const double ratio = tau / dt;
    if (std::abs(ratio - std::round(ratio)) > 1e-9 * std::max(1.0, ratio) || steps() < 1) {
      throw Error(ErrorCode::InvalidArgument, "tau / dt must be a positive integer");
    }
    if (cells < 1) throw Error(ErrorCode::InvalidArgument, "need at least one noise cell");
    if (!(cell_width > 0.0)) throw Error(ErrorCode::InvalidArgument, "cell width must be > 0");
    if (hamiltonian.rows() != lat.dim() || hamiltonian.cols() != lat.dim()) {
      throw Error(ErrorCode::InvalidArgument, "Hamiltonian has wrong shape");
    }
    const double asym = max_abs(hamiltonian - hamiltonian.adjoint());
    if (asym > tol::kInput) {
      throw Error(ErrorCode::NotHermitian, "Hamiltonian is not Hermitian", asym);
    }
  }
};

/// Diagonals of the smeared number density N(x_c) for every noise cell:
/// values(c, q) = sum_i (2 pi sigma^2)^(-1/2) exp(-(q_i - x_c)^2 / 2 sigma^2).
struct NumberDensityOperators {
  Eigen::MatrixXd values;  // cells x d
  RVector centers;
  double cell_width = 1.0;

  Index cells() const noexcept { return values.rows(); }
  CMatrix matrix(Index c) const { return values.row(c).transpose().cast<cplx>().asDiagonal(); }
  /// sum_c N_c dx, which approximates N * I.
  RVector total() const { return values.colwise().sum().transpose() * cell_width; }
};

inline NumberDensityOperators build_density_operators(const CslConfig& cfg) {
  cfg.validate();
  const Lattice lat = cfg.lattice();
  NumberDensityOperators out;
  out.cell_width = cfg.cell_width;
  out.centers.resize(cfg.cells);
  out.values = Eigen::MatrixXd::Zero(cfg.cells, lat.dim());
  const double pref = 1.0 / std::sqrt(2.0 * std::numbers::pi * cfg.sigma * cfg.sigma);
  const double inv = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
  for (int c = 0; c < cfg.cells; ++c) {
    const double xc = cfg.cell_center(c);
    out.centers(c) = xc;
    for (int i = 1; i <= cfg.particles; ++i) {
      out.values.row(c) +=
          (((lat.positions(i).array() - xc).square() * -inv).exp() * pref).matrix().transpose();
    }
  }
  return out;
}

/// Cell-and-step block averages of the white noise field.
struct NoiseField {
  Eigen::MatrixXd xi;  // cells x steps

  Index cells() const noexcept { return xi.rows(); }
  Index steps() const noexcept { return xi.cols(); }

  /// Same piecewise-constant field on a grid with `factor` times more steps.
  NoiseField refined(int factor) const {
    NoiseField out;
    out.xi.resize(xi.rows(), xi.cols() * factor);
    for (Index s = 0; s < xi.cols(); ++s)
      for (int k = 0; k < factor; ++k) out.xi.col(s * factor + k) = xi.col(s);
    return out;
  }
};

/// i.i.d. Normal(0, gamma / (dx dt)) per cell and step.
inline NoiseField sample_noise(const CslConfig& cfg, RngStream& rng) {
  const double sd = std::sqrt(cfg.gamma / (cfg.cell_width * cfg.dt));
  NoiseField out;
  out.xi.resize(cfg.cells, cfg.steps());
  for (Index s = 0; s < out.xi.cols(); ++s)
    for (Index c = 0; c < out.xi.rows(); ++c) out.xi(c, s) = sd * rng.normal();
  return out;
}

/// L(x) psi stored as unit direction times exp(log_norm).
struct ScaledVector {
  CVector direction;
  double log_norm = 0.0;
};

/// Stratified solver for the noise-driven equation
///   d psi/dt = [-(i/hbar) H + sum_c N_c xi_c dx - gamma sum_c N_c^2 dx] psi.
/// The N_c commute, so each step's noise and damping part is an exact
/// diagonal exponential; H enters through Strang splitting (half step, diagonal
/// factor, half step).
class CslModel {
 public:
  explicit CslModel(CslConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    density_ = build_density_operators(cfg_);
    const HermitianPropagator prop(cfg_.hamiltonian, cfg_.hbar);
    unitary_ = !prop.is_zero();
    half_ = prop.matrix(0.5 * cfg_.dt);
    full_ = prop.matrix(cfg_.dt);
    coupling_ = density_.values * (cfg_.cell_width * cfg_.dt);
    damping_ = density_.values.array().square().colwise().sum().transpose() *
               (cfg_.gamma * cfg_.cell_width * cfg_.dt);
  }

  const CslConfig& config() const noexcept { return cfg_; }
  const NumberDensityOperators& density() const noexcept { return density_; }
  Index dim() const noexcept { return half_.rows(); }

  /// Exponent of the diagonal factor at step s, per configuration.
  RVector step_exponent(const NoiseField& noise, Index s) const {
    return coupling_.transpose() * noise.xi.col(s) - damping_;
  }

  ScaledVector evolve_scaled(const CVector& psi0, const NoiseField& noise) const {
    check_noise(noise);
    ScaledVector out{psi0, 0.0};
    CVector& v = out.direction;
    for (Index s = 0; s < noise.steps(); ++s) {
      if (unitary_) v = (s == 0 ? half_ : full_) * v;
      RVector e = step_exponent(noise, s);
      const double shift = e.maxCoeff();
      v.array() *= (e.array() - shift).exp().cast<cplx>();
      out.log_norm += shift;
      const double n = v.norm();
      if (!std::isfinite(n) || !std::isfinite(out.log_norm)) {
        throw Error(ErrorCode::NonFinite, "CSL evolution overflowed; reduce gamma * dt");
      }
      if (n < 1e-100 || n > 1e100) {
        v /= n;
        out.log_norm += std::log(n);
      }
    }
    if (unitary_) v = half_ * v;
    const double n = v.norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
      throw Error(ErrorCode::NonFinite, "CSL evolution lost the state");
    }
    v /= n;
    out.log_norm += std::log(n);
    return out;
  }

  /// The solution operator L(x) as a matrix times exp(log_scale).
  std::pair<CMatrix, double> solution_operator_scaled(const NoiseField& noise) const {
    check_noise(noise);
    CMatrix l = CMatrix::Identity(dim(), dim());
    double log_scale = 0.0;
    for (Index s = 0; s < noise.steps(); ++s) {
      if (unitary_) l = (s == 0 ? half_ : full_) * l;
      RVector e = step_exponent(noise, s);
      const double shift = e.maxCoeff();
      l = (e.array() - shift).exp().matrix().cast<cplx>().asDiagonal() * l;
      log_scale += shift;
      const double n = l.norm();
      if (!std::isfinite(n)) throw Error(ErrorCode::NonFinite, "CSL solution operator overflowed");
      if (n < 1e-100 || n > 1e100) {
        l /= n;
        log_scale += std::log(n);
      }
    }
    if (unitary_) l = half_ * l;
    return {std::move(l), log_scale};
  }

 private:
  void check_noise(const NoiseField& noise) const {
    if (noise.cells() != cfg_.cells || noise.steps() != cfg_.steps()) {
      throw Error(ErrorCode::InvalidArgument, "noise field does not match the CSL grid");
    }
    if (!noise.xi.allFinite()) throw Error(ErrorCode::NonFinite, "noise field has non-finite entries");
  }

  CslConfig cfg_;
  NumberDensityOperators density_;
  bool unitary_ = false;
  CMatrix half_;
  CMatrix full_;
  Eigen::MatrixXd coupling_;  // cells x d, N_c(q) dx dt
  RVector damping_;           // gamma sum_c N_c(q)^2 dx dt
};

inline RawVector evolve_raw(const UnitState& psi0, const NoiseField& noise, const CslModel& model) {
  const ScaledVector sv = model.evolve_scaled(psi0.amplitudes(), noise);
  if (sv.log_norm > 700.0) {
    throw Error(ErrorCode::NonFinite, "|L(x) psi| exceeds double range", sv.log_norm);
  }
  return RawVector(sv.direction * std::exp(sv.log_norm));
}

inline RawVector evolve_raw(const UnitState& psi0, const NoiseField& noise, const CslConfig& cfg) {
  return evolve_raw(psi0, noise, CslModel(cfg));
}

/// |L(x) psi0|^2
inline double cooked_weight(const UnitState& psi0, const NoiseField& noise, const CslModel& model) {
  return std::exp(2.0 * model.evolve_scaled(psi0.amplitudes(), noise).log_norm);
}

inline double cooked_weight(const UnitState& psi0, const NoiseField& noise, const CslConfig& cfg) {
  return cooked_weight(psi0, noise, CslModel(cfg));
}

/// L(x) psi0 / |L(x) psi0|
inline UnitState physical_state(const UnitState& psi0, const NoiseField& noise,
                                const CslModel& model) {
  const ScaledVector sv = model.evolve_scaled(psi0.amplitudes(), noise);
  if (2.0 * sv.log_norm < std::log(1e-150)) {
    throw Error(ErrorCode::DegenerateWeight, "cooked weight below 1e-150", 2.0 * sv.log_norm);
  }
  return UnitState::normalize(sv.direction);
}

inline UnitState physical_state(const UnitState& psi0, const NoiseField& noise, const CslConfig& cfg) {
  return physical_state(psi0, noise, CslModel(cfg));
}

inline CMatrix solution_operator(const NoiseField& noise, const CslModel& model) {
  auto [l, log_scale] = model.solution_operator_scaled(noise);
  if (log_scale > 700.0) throw Error(ErrorCode::NonFinite, "L(x) exceeds double range");
  return l * std::exp(log_scale);
}

struct CookedSample {
  std::size_t noise_id = 0;  // index into the raw pool; regenerate with base.substream(id)
  UnitState state;
};

/// Draws from the joint Born law of (noise, physical state) with
/// Psi ~ GAP_rho. A pool of raw noises is drawn once (noise k from
/// base.substream(k)); trajectory j draws Psi_j from base.substream(pool + j),
/// resamples a pool noise with probability proportional to |L_k Psi_j|^2 and
/// returns the physical state. Memory is O(pool * d^2).
inline std::vector<CookedSample> sample_cooked_ensemble(const DensityMatrix& rho,
                                                        const CslModel& model, std::size_t count,
                                                        std::size_t pool, const RngStream& base,
                                                        Workers workers = {}) {
  if (pool < 10 * count) {
    throw Error(ErrorCode::InvalidArgument, "pool must be at least 10 * count");
  }
  const Index d = model.dim();
  if (rho.dim() != d) throw Error(ErrorCode::InvalidArgument, "rho has wrong dimension");
  std::vector<CMatrix> ops(pool);
  std::vector<double> log_scale(pool);
  parallel_for(pool, workers, [&](std::size_t k) {
    RngStream rng = base.substream(k);
    const NoiseField noise = sample_noise(model.config(), rng);
    auto [l, ls] = model.solution_operator_scaled(noise);
    ops[k] = std::move(l);
    log_scale[k] = ls;
  });
  // Effect matrices G_k = L_k^dagger L_k as real feature rows, so that
  // |L_k psi|^2 = features.row(k) . f(psi psi^dagger).
  const double ref = *std::max_element(log_scale.begin(), log_scale.end());
  Eigen::MatrixXd features(static_cast<Index>(pool), d * d);
  for (std::size_t k = 0; k < pool; ++k) {
    const CMatrix g = ops[k].adjoint() * ops[k] * std::exp(2.0 * (log_scale[k] - ref));
    Index f = 0;
    for (Index a = 0; a < d; ++a) {
      features(static_cast<Index>(k), f++) = g(a, a).real();
      for (Index b = a + 1; b < d; ++b) {
        features(static_cast<Index>(k), f++) = 2.0 * g(a, b).real();
        features(static_cast<Index>(k), f++) = -2.0 * g(a, b).imag();
      }
    }
  }
  const GapSampler gap(rho);
  std::vector<CookedSample> out(count);
  parallel_for(count, workers, [&](std::size_t j) {
    RngStream rng = base.substream(pool + j);
    const UnitState psi = gap.sample_gap(rng);
    const CVector& v = psi.amplitudes();
    RVector p(d * d);
    Index f = 0;
    for (Index a = 0; a < d; ++a) {
      p(f++) = std::norm(v(a));
      for (Index b = a + 1; b < d; ++b) {
        // tr(G P) uses Re(G_ab P_ba) with P_ba = v_b conj(v_a).
        const cplx pba = v(b) * std::conj(v(a));
        p(f++) = pba.real();
        p(f++) = pba.imag();
      }
    }
    const RVector w = features * p;
    const double total = w.sum();
    const double u = rng.uniform() * total;
    double acc = 0.0;
    std::size_t pick = pool - 1;
    for (std::size_t k = 0; k < pool; ++k) {
      acc += w(static_cast<Index>(k));
      if (u < acc) {
        pick = k;
        break;
      }
    }
    out[j] = {pick, UnitState::normalize(ops[pick] * v)};
  });
  return out;
}

/// Closed-form coherence factor of the pooled density matrix for H = 0:
///   rho'(a, b) / rho(a, b) = exp(-(gamma dx tau / 2) sum_c (N_c(a) - N_c(b))^2).
inline double csl_commuting_coherence_factor(const CslConfig& cfg, const NumberDensityOperators& ops,
                                             Index a, Index b, double t) {
  const double s = (ops.values.col(a) - ops.values.col(b)).squaredNorm();
  return std::exp(-0.5 * cfg.gamma * cfg.cell_width * t * s);
}

// ---------------------------------------------------------------------------
// JSON config: GRW keys {N, M, a, sigma, tau, hbar, H | hopping} plus
// {gamma, dt, cells, cell_width}. Without cells/cell_width the grid is chosen
// by CslConfig::auto_cells.

inline CslConfig csl_config_from_json(const nlohmann::json& j) {
  CslConfig cfg;
  try {
    cfg.particles = j.at("N").get<int>();
    cfg.sites = j.at("M").get<int>();
    cfg.spacing = j.value("a", 1.0);
    cfg.gamma = j.at("gamma").get<double>();
    cfg.sigma = j.at("sigma").get<double>();
    cfg.tau = j.at("tau").get<double>();
    cfg.hbar = j.value("hbar", 1.0);
    cfg.dt = j.at("dt").get<double>();
    if (j.contains("cells") || j.contains("cell_width")) {
      cfg.cells = j.at("cells").get<int>();
      cfg.cell_width = j.at("cell_width").get<double>();
    } else {
      cfg.auto_cells();
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("CSL config: ") + e.what());
  }
  const Lattice lat = cfg.lattice();
  if (j.contains("H")) {
    cfg.hamiltonian = io::matrix_from_json(j.at("H"));
  } else {
    cfg.hamiltonian = tight_binding_hamiltonian(lat, j.value("hopping", 0.0));
  }
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigInvalid, e.what());
  }
  return cfg;
}

inline nlohmann::json to_json(const CslConfig& cfg) {
  return {{"N", cfg.particles},   {"M", cfg.sites},         {"a", cfg.spacing},
          {"gamma", cfg.gamma},    {"sigma", cfg.sigma},     {"tau", cfg.tau},
          {"hbar", cfg.hbar},      {"dt", cfg.dt},           {"cells", cfg.cells},
          {"cell_width", cfg.cell_width}, {"H", io::to_json(cfg.hamiltonian)}};
}

/// Noise dump: cell,step,value
inline void write_noise_csv(const NoiseField& noise, std::ostream& os, bool header = true) {
  if (header) os << "cell,step,value\n";
  for (Index s = 0; s < noise.steps(); ++s)
    for (Index c = 0; c < noise.cells(); ++c)
      os << c << ',' << s << ',' << io::csv_number(noise.xi(c, s)) << '\n';
}

}  // namespace gapcollapse

#endif  // GAPCOLLAPSE_CSL_HPP
