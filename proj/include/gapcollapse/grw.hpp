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

#ifndef GAPCOLLAPSE_GRW_HPP
#define GAPCOLLAPSE_GRW_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gapcollapse/errors.hpp"
#include "gapcollapse/linalg.hpp"
#include "gapcollapse/parallel.hpp"
#include "gapcollapse/rng.hpp"
#include "gapcollapse/serialize.hpp"

namespace gapcollapse {

/// N distinguishable particles on a 1D lattice of M sites at positions a*m.
/// Basis index of configuration (m_1, ..., m_N) is sum_i m_i M^(N-i), i.e.
/// particle 1 is the most significant digit.
class Lattice {
 public:
  Lattice(int particles, int sites, double spacing)
      : particles_(particles), sites_(sites), spacing_(spacing) {
    if (particles < 1) throw Error(ErrorCode::InvalidArgument, "need at least one particle");
    if (sites < 2) throw Error(ErrorCode::InvalidArgument, "need at least two lattice sites");
    if (!(spacing > 0.0)) throw Error(ErrorCode::InvalidArgument, "lattice spacing must be > 0");
    dim_ = 1;
    for (int i = 0; i < particles; ++i) {
      if (dim_ > kDefaultDimCap) break;
      dim_ *= sites;
    }
    if (dim_ > kDefaultDimCap) {
      throw Error(ErrorCode::InvalidArgument, "M^N exceeds the dimension cap");
    }
    positions_.assign(static_cast<std::size_t>(particles), RVector(dim_));
    for (Index b = 0; b < dim_; ++b) {
      Index rest = b;
      for (int i = particles - 1; i >= 0; --i) {
        positions_[static_cast<std::size_t>(i)](b) = spacing * static_cast<double>(rest % sites);
        rest /= sites;
      }
    }
  }

  int particles() const noexcept { return particles_; }
  int sites() const noexcept { return sites_; }
  double spacing() const noexcept { return spacing_; }
  Index dim() const noexcept { return dim_; }

  /// Position q_i of particle `i` (1-based) in every basis configuration.
  const RVector& positions(int particle) const {
    return positions_.at(static_cast<std::size_t>(particle - 1));
  }

  Index basis_index(const std::vector<int>& sites) const {
    Index b = 0;
    for (int m : sites) b = b * sites_ + m;
    return b;
  }

  double center() const noexcept { return 0.5 * spacing_ * (sites_ - 1); }

 private:
  int particles_;
  int sites_;
  double spacing_;
  Index dim_ = 1;
  std::vector<RVector> positions_;
};

/// Open-chain nearest-neighbour hopping -J sum (|m><m+1| + h.c.) acting on
/// every particle.
inline CMatrix tight_binding_hamiltonian(const Lattice& lat, double hopping) {
  const Index d = lat.dim();
  CMatrix h = CMatrix::Zero(d, d);
  Index stride = 1;
  for (int i = lat.particles(); i >= 1; --i) {
    for (Index b = 0; b < d; ++b) {
      const Index m = (b / stride) % lat.sites();
      if (m + 1 < lat.sites()) {
        h(b, b + stride) -= hopping;
        h(b + stride, b) -= hopping;
      }
    }
    stride *= lat.sites();
  }
  return h;
}

struct GrwConfig {
  int particles = 1;
  int sites = 2;
  double spacing = 1.0;
  double lambda = 0.1;  // collapse rate per particle
  double sigma = 1.0;   // collapse width
  CMatrix hamiltonian;
  double tau = 1.0;
  double hbar = 1.0;
  bool paper_literal_mu = false;

  Lattice lattice() const { return Lattice(particles, sites, spacing); }
  Index dim() const { return lattice().dim(); }
  double total_rate() const noexcept { return particles * lambda; }

  void validate() const {
    const Lattice lat = lattice();
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
      throw Error(ErrorCode::InvalidArgument, "lambda must be finite and >= 0");
    }
    if (!(sigma > 0.0)) throw Error(ErrorCode::InvalidArgument, "sigma must be > 0");
    if (!(tau > 0.0)) throw Error(ErrorCode::InvalidArgument, "tau must be > 0");
    if (!(hbar > 0.0)) throw Error(ErrorCode::InvalidArgument, "hbar must be > 0");
    if (hamiltonian.rows() != lat.dim() || hamiltonian.cols() != lat.dim()) {
      throw Error(ErrorCode::InvalidArgument,
                  "Hamiltonian must be " + std::to_string(lat.dim()) + " x " +
                      std::to_string(lat.dim()));
    }
    const double asym = max_abs(hamiltonian - hamiltonian.adjoint());
    if (asym > tol::kInput) {
      throw Error(ErrorCode::NotHermitian, "Hamiltonian is not Hermitian", asym);
    }
  }
};

struct CollapseEvent {
  double t = 0.0;
  double x = 0.0;
  int particle = 1;  // 1-based
};

struct GrwHistory {
  std::vector<CollapseEvent> events;

  std::size_t size() const noexcept { return events.size(); }
  bool empty() const noexcept { return events.empty(); }

  void validate(const GrwConfig& cfg) const {
    double prev = -std::numeric_limits<double>::infinity();
    for (const auto& e : events) {
      if (!(e.t > prev)) throw Error(ErrorCode::InvalidArgument, "event times must increase");
      if (e.t < 0.0 || e.t > cfg.tau) {
        throw Error(ErrorCode::InvalidArgument, "event time outside [0, tau]");
      }
      if (e.particle < 1 || e.particle > cfg.particles) {
        throw Error(ErrorCode::InvalidArgument, "particle label out of range");
      }
      prev = e.t;
    }
  }
};

struct GrwTrajectory {
  GrwHistory history;
  UnitState final_state;
  /// Log density of the history under the sampler that produced it, with
  /// respect to the same reference measure as history_log_density.
  double log_proposal_density = 0.0;
};

/// Precomputed pieces of a GRW model: lattice positions and the propagator.
class GrwModel {
 public:
  explicit GrwModel(GrwConfig cfg)
      : cfg_(std::move(cfg)), lattice_(cfg_.lattice()) {
    cfg_.validate();
    propagator_ = HermitianPropagator(cfg_.hamiltonian, cfg_.hbar);
    prefactor_ = std::pow(2.0 * std::numbers::pi * cfg_.sigma * cfg_.sigma, -0.25);
  }

  const GrwConfig& config() const noexcept { return cfg_; }
  const Lattice& lattice() const noexcept { return lattice_; }
  const HermitianPropagator& propagator() const noexcept { return propagator_; }
  Index dim() const noexcept { return lattice_.dim(); }

  /// Diagonal of C_i(x): (2 pi sigma^2)^(-1/4) exp(-(q_i - x)^2 / (4 sigma^2)).
  RVector collapse_diagonal(int particle, double x) const {
    const RVector& q = lattice_.positions(particle);
    const double inv = 1.0 / (4.0 * cfg_.sigma * cfg_.sigma);
    return ((q.array() - x).square() * -inv).exp() * prefactor_;
  }

  /// Density of the collapse center given the pre-collapse state, p(x) =
  /// |C_i(x) psi|^2 = sum_q |psi(q)|^2 Normal(x; q_i, sigma^2).
  double center_density(int particle, double x, const CVector& psi) const {
    return (collapse_diagonal(particle, x).array().square() * psi.array().abs2()).sum();
  }

  CVector evolve(const CVector& psi, double dt) const { return propagator_.apply(psi, dt); }

  /// log (N lambda)^n e^{-N lambda tau} N^{-n} (default) or the variant with
  /// e^{-N lambda t_n}(1 - e^{-N lambda (tau - t_n)}) in place of
  /// e^{-N lambda tau} for n >= 1 (paper_literal_mu).
  double log_raw_weight(const GrwHistory& hist, bool literal) const {
    const double rate = cfg_.total_rate();
    const auto n = static_cast<double>(hist.size());
    if (hist.empty()) return -rate * cfg_.tau;
    if (rate == 0.0) return -std::numeric_limits<double>::infinity();
    double out = n * std::log(rate) - n * std::log(static_cast<double>(cfg_.particles));
    if (!literal) return out - rate * cfg_.tau;
    const double tn = hist.events.back().t;
    return out - rate * tn + std::log1p(-std::exp(-rate * (cfg_.tau - tn)));
  }

 private:
  GrwConfig cfg_;
  Lattice lattice_;
  HermitianPropagator propagator_;
  double prefactor_ = 1.0;
};

/// C_i(x) as a dense diagonal matrix; `particle` is 1-based.
inline CMatrix collapse_matrix(int particle, double x, const GrwConfig& cfg) {
  const GrwModel model(cfg);
  if (particle < 1 || particle > cfg.particles) {
    throw Error(ErrorCode::InvalidArgument, "particle label out of range");
  }
  return model.collapse_diagonal(particle, x).cast<cplx>().asDiagonal();
}

/// Sequential GRW simulation: Poisson(N lambda) event times on [0, tau],
/// unitary evolution in between, uniform particle label, and a center drawn
/// exactly from |C_i(x) psi|^2 dx by first picking a configuration q with
/// probability |psi(q)|^2 and then x ~ Normal(q_i, sigma^2).
inline GrwTrajectory sample_history(const UnitState& psi0, const GrwModel& model,
                                    RngStream& rng) {
  const GrwConfig& cfg = model.config();
  if (psi0.dim() != model.dim()) {
    throw Error(ErrorCode::InvalidArgument, "initial state has wrong dimension");
  }
  const double rate = cfg.total_rate();
  const auto n_particles = static_cast<double>(cfg.particles);
  GrwTrajectory out;
  CVector psi = psi0.amplitudes();
  double t = 0.0;
  double log_q = -rate * cfg.tau;
  while (rate > 0.0) {
    const double next = t + rng.exponential(rate);
    if (next > cfg.tau) break;
    psi = model.evolve(psi, next - t);
    t = next;
    const int particle =
        1 + static_cast<int>(std::min<double>(n_particles - 1, std::floor(rng.uniform() * n_particles)));
    // Configuration with probability |psi(q)|^2.
    const double u = rng.uniform() * psi.squaredNorm();
    double acc = 0.0;
    Index q = psi.size() - 1;
    for (Index b = 0; b < psi.size(); ++b) {
      acc += std::norm(psi(b));
      if (u < acc) {
        q = b;
        break;
      }
    }
    const double x = model.lattice().positions(particle)(q) + cfg.sigma * rng.normal();
    log_q += std::log(rate) - std::log(n_particles) +
             std::log(model.center_density(particle, x, psi));
    psi.array() *= model.collapse_diagonal(particle, x).array().cast<cplx>();
    psi /= psi.norm();
    out.history.events.push_back({t, x, particle});
  }
  psi = model.evolve(psi, cfg.tau - t);
  out.final_state = UnitState::normalize(psi);
  out.log_proposal_density = log_q;
  return out;
}

inline GrwTrajectory sample_history(const UnitState& psi0, const GrwConfig& cfg, RngStream& rng) {
  return sample_history(psi0, GrwModel(cfg), rng);
}

/// L(x) = U(tau - t_n) C_{i_n}(x_n) ... C_{i_1}(x_1) U(t_1).
inline CMatrix history_operator(const GrwHistory& hist, const GrwModel& model) {
  const GrwConfig& cfg = model.config();
  hist.validate(cfg);
  const auto& prop = model.propagator();
  double t = 0.0;
  CMatrix l = CMatrix::Identity(model.dim(), model.dim());
  for (const auto& e : hist.events) {
    l = prop.matrix(e.t - t) * l;
    l = model.collapse_diagonal(e.particle, e.x).cast<cplx>().asDiagonal() * l;
    t = e.t;
  }
  return prop.matrix(cfg.tau - t) * l;
}

inline CMatrix history_operator(const GrwHistory& hist, const GrwConfig& cfg) {
  return history_operator(hist, GrwModel(cfg));
}

/// Log of the Born ("cooked") density of the history: raw weight of mu times
/// |L(x) psi0|^2. Centers carry Lebesgue measure, labels counting measure.
inline double history_log_density(const GrwHistory& hist, const UnitState& psi0,
                                  const GrwModel& model) {
  const CVector out = history_operator(hist, model) * psi0.amplitudes();
  return model.log_raw_weight(hist, model.config().paper_literal_mu) +
         std::log(out.squaredNorm());
}

inline double history_log_density(const GrwHistory& hist, const UnitState& psi0,
                                  const GrwConfig& cfg) {
  return history_log_density(hist, psi0, GrwModel(cfg));
}

/// Recomputes the cooked density with the rate factor moved from mu into
/// L(x) (square roots distributed over the segments and collapses, applied to
/// the vector step by step) and returns |log difference| against
/// history_log_density.
inline double footnote_equivalence_check(const GrwHistory& hist, const UnitState& psi0,
                                         const GrwModel& model) {
  const GrwConfig& cfg = model.config();
  hist.validate(cfg);
  const double rate = cfg.total_rate();
  const bool literal = cfg.paper_literal_mu;
  const auto n = static_cast<double>(hist.size());
  const double direct = history_log_density(hist, psi0, model);

  CVector psi = psi0.amplitudes();
  double t = 0.0;
  for (std::size_t k = 0; k < hist.size(); ++k) {
    const auto& e = hist.events[k];
    psi = model.evolve(psi, e.t - t) * std::exp(-0.5 * rate * (e.t - t));
    psi.array() *= model.collapse_diagonal(e.particle, e.x).array().cast<cplx>() * std::sqrt(rate);
    t = e.t;
  }
  psi = model.evolve(psi, cfg.tau - t);
  const double remaining = cfg.tau - t;
  if (!literal || hist.empty()) {
    psi *= std::exp(-0.5 * rate * remaining);
  } else {
    psi *= std::sqrt(-std::expm1(-rate * remaining));
  }
  const double folded = -n * std::log(static_cast<double>(cfg.particles)) + std::log(psi.squaredNorm());
  if (direct == folded) return 0.0;  // also covers matching infinities
  return std::abs(direct - folded);
}

inline double footnote_equivalence_check(const GrwHistory& hist, const UnitState& psi0,
                                         const GrwConfig& cfg) {
  return footnote_equivalence_check(hist, psi0, GrwModel(cfg));
}

/// Largest step accepted by master_equation_evolve.
inline double master_equation_max_step(const GrwConfig& cfg) {
  double limit = std::numeric_limits<double>::infinity();
  if (cfg.total_rate() > 0.0) limit = std::min(limit, 0.01 / cfg.total_rate());
  const double hnorm = HermitianPropagator(cfg.hamiltonian, cfg.hbar).spectral_radius();
  if (hnorm > 0.0) limit = std::min(limit, 0.01 * cfg.hbar / hnorm);
  return limit;
}

/// RK4 integration of
///   d rho/dt = -(i/hbar)[H, rho] + lambda sum_i (int dx C_i rho C_i^dagger - rho),
/// where the x-integral is the elementwise kernel exp(-(q_i - q_i')^2 / 8 sigma^2).
/// Integrates from 0 to `t_final` in equal steps no larger than `dt`.
inline DensityMatrix master_equation_evolve(const DensityMatrix& rho0, const GrwConfig& cfg,
                                            double dt, double t_final) {
  cfg.validate();
  if (rho0.dim() != cfg.dim()) {
    throw Error(ErrorCode::InvalidArgument, "rho0 has wrong dimension");
  }
  if (!(dt > 0.0)) throw Error(ErrorCode::InvalidArgument, "dt must be > 0");
  const double limit = master_equation_max_step(cfg);
  if (dt > limit * (1.0 + 1e-12)) {
    throw Error(ErrorCode::StepTooLarge,
                "dt = " + std::to_string(dt) + " exceeds " + std::to_string(limit), dt);
  }
  if (t_final < 0.0) throw Error(ErrorCode::InvalidArgument, "t_final must be >= 0");
  const Lattice lat = cfg.lattice();
  const Index d = lat.dim();
  // kernel(q, q') = sum_i exp(-(q_i - q_i')^2 / 8 sigma^2)
  Eigen::MatrixXd kernel = Eigen::MatrixXd::Zero(d, d);
  const double inv8s2 = 1.0 / (8.0 * cfg.sigma * cfg.sigma);
  for (int i = 1; i <= cfg.particles; ++i) {
    const RVector& q = lat.positions(i);
    for (Index a = 0; a < d; ++a)
      for (Index b = 0; b < d; ++b) kernel(a, b) += std::exp(-(q(a) - q(b)) * (q(a) - q(b)) * inv8s2);
  }
  const CMatrix kernel_c = kernel.cast<cplx>();
  const auto n_particles = static_cast<double>(cfg.particles);
  const CMatrix mih = cplx(0.0, -1.0 / cfg.hbar) * cfg.hamiltonian;
  auto generator = [&](const CMatrix& r) -> CMatrix {
    CMatrix out = mih * r - r * mih;
    out += cfg.lambda * (kernel_c.cwiseProduct(r) - n_particles * r);
    return out;
  };
  const auto steps =
      std::max<long>(t_final > 0.0 ? 1 : 0, static_cast<long>(std::ceil(t_final / dt - 1e-9)));
  const double h = steps > 0 ? t_final / static_cast<double>(steps) : 0.0;
  CMatrix r = rho0.matrix();
  for (long s = 0; s < steps; ++s) {
    const CMatrix k1 = generator(r);
    const CMatrix k2 = generator(r + 0.5 * h * k1);
    const CMatrix k3 = generator(r + 0.5 * h * k2);
    const CMatrix k4 = generator(r + h * k3);
    r += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  // RK4 is not positivity preserving: zero eigenvalues of a pure state drift
  // by ~1e-10 per unit time under the commutator alone.
  return DensityMatrix::validate(hermitian_part(r), kDefaultDimCap, tol::kIntegration);
}

inline DensityMatrix master_equation_evolve(const DensityMatrix& rho0, const GrwConfig& cfg,
                                            double dt) {
  return master_equation_evolve(rho0, cfg, dt, cfg.tau);
}

/// Closed-form coherence factor for H = 0:
///   rho(q, q', t) / rho(q, q', 0) = exp(-lambda t sum_i (1 - e^{-(q_i - q_i')^2 / 8 sigma^2})).
inline double grw_coherence_factor(const GrwConfig& cfg, Index a, Index b, double t) {
  const Lattice lat = cfg.lattice();
  double s = 0.0;
  for (int i = 1; i <= cfg.particles; ++i) {
    const double dq = lat.positions(i)(a) - lat.positions(i)(b);
    s += 1.0 - std::exp(-dq * dq / (8.0 * cfg.sigma * cfg.sigma));
  }
  return std::exp(-cfg.lambda * t * s);
}

struct CompletenessEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
  std::size_t count = 0;
};

inline CompletenessEstimate summarize_weights(const std::vector<double>& w) {
  CompletenessEstimate out;
  out.count = w.size();
  if (w.empty()) return out;
  double mean = 0.0;
  for (double x : w) mean += x;
  mean /= static_cast<double>(w.size());
  double var = 0.0;
  for (double x : w) var += (x - mean) * (x - mean);
  var /= std::max<double>(1.0, static_cast<double>(w.size()) - 1.0);
  out.mean = mean;
  out.standard_error = std::sqrt(var / static_cast<double>(w.size()));
  return out;
}

/// Monte Carlo estimate of int mu(dx) |L(x) psi|^2 using the sequential
/// sampler as proposal: the average of cooked density / sampler density.
/// The cooked density comes from history_operator, the sampler density from
/// the per-event center densities recorded during simulation.
inline CompletenessEstimate completeness_sequential(const UnitState& psi, const GrwModel& model,
                                                    std::size_t count, const RngStream& base,
                                                    Workers workers = {}) {
  std::vector<double> w(count);
  parallel_for(count, workers, [&](std::size_t j) {
    RngStream rng = base.substream(j);
    const GrwTrajectory tr = sample_history(psi, model, rng);
    w[j] = std::exp(history_log_density(tr.history, psi, model) - tr.log_proposal_density);
  });
  return summarize_weights(w);
}

/// Same integral with a proposal that ignores the quantum state: Poisson
/// event times, uniform labels, and centers from the equal-weight mixture of
/// Normal(site, 2 sigma^2) over lattice sites.
inline CompletenessEstimate completeness_importance(const UnitState& psi, const GrwModel& model,
                                                    std::size_t count, const RngStream& base,
                                                    Workers workers = {}) {
  const GrwConfig& cfg = model.config();
  const double rate = cfg.total_rate();
  const double s2 = 2.0 * cfg.sigma * cfg.sigma;
  const double norm = 1.0 / std::sqrt(2.0 * std::numbers::pi * s2);
  const int m_sites = cfg.sites;
  auto log_g = [&](double x) {
    double acc = 0.0;
    for (int m = 0; m < m_sites; ++m) {
      const double dx = x - cfg.spacing * m;
      acc += norm * std::exp(-dx * dx / (2.0 * s2));
    }
    return std::log(acc / m_sites);
  };
  std::vector<double> w(count);
  parallel_for(count, workers, [&](std::size_t j) {
    RngStream rng = base.substream(j);
    GrwHistory hist;
    double t = 0.0;
    double log_q = -rate * cfg.tau;
    while (rate > 0.0) {
      t += rng.exponential(rate);
      if (t > cfg.tau) break;
      const int particle = 1 + static_cast<int>(rng.uniform() * cfg.particles) % cfg.particles;
      const int site = static_cast<int>(rng.uniform() * m_sites) % m_sites;
      const double x = cfg.spacing * site + std::sqrt(s2) * rng.normal();
      log_q += std::log(rate) - std::log(static_cast<double>(cfg.particles)) + log_g(x);
      hist.events.push_back({t, x, particle});
    }
    w[j] = std::exp(history_log_density(hist, psi, model) - log_q);
  });
  return summarize_weights(w);
}

// ---------------------------------------------------------------------------
// JSON config: {N, M, a, lambda, sigma, tau, hbar, H | hopping, paper_literal_mu}

inline GrwConfig grw_config_from_json(const nlohmann::json& j) {
  GrwConfig cfg;
  try {
    cfg.particles = j.at("N").get<int>();
    cfg.sites = j.at("M").get<int>();
    cfg.spacing = j.value("a", 1.0);
    cfg.lambda = j.at("lambda").get<double>();
    cfg.sigma = j.at("sigma").get<double>();
    cfg.tau = j.at("tau").get<double>();
    cfg.hbar = j.value("hbar", 1.0);
    cfg.paper_literal_mu = j.value("paper_literal_mu", false);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("GRW config: ") + e.what());
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

inline nlohmann::json to_json(const GrwConfig& cfg) {
  return {{"N", cfg.particles},  {"M", cfg.sites},   {"a", cfg.spacing},
          {"lambda", cfg.lambda}, {"sigma", cfg.sigma}, {"tau", cfg.tau},
          {"hbar", cfg.hbar},     {"H", io::to_json(cfg.hamiltonian)},
          {"paper_literal_mu", cfg.paper_literal_mu}};
}

/// History dump: trajectory_id,event_index,t,x,i
inline void write_history_csv_header(std::ostream& os) { os << "trajectory_id,event_index,t,x,i\n"; }

inline void write_history_csv_rows(std::size_t trajectory, const GrwHistory& hist, std::ostream& os) {
  for (std::size_t k = 0; k < hist.size(); ++k) {
    const auto& e = hist.events[k];
    os << trajectory << ',' << k << ',' << io::csv_number(e.t) << ',' << io::csv_number(e.x) << ','
       << e.particle << '\n';
  }
}

}  // namespace gapcollapse

#endif  // GAPCOLLAPSE_GRW_HPP
