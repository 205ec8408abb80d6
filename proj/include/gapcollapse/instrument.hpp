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

#ifndef GAPCOLLAPSE_INSTRUMENT_HPP
#define GAPCOLLAPSE_INSTRUMENT_HPP

#include <algorithm>
#include <fstream>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gapcollapse/errors.hpp"
#include "gapcollapse/linalg.hpp"
#include "gapcollapse/rng.hpp"
#include "gapcollapse/serialize.hpp"

namespace gapcollapse {

inline constexpr double kCompletenessTolerance = 1e-8;
inline constexpr double kZeroBranch = 1e-12;

/// |sum_z L_z^dagger L_z - I|_F
inline double verify_completeness(std::span<const CMatrix> operators) {
  if (operators.empty()) {
    throw Error(ErrorCode::InvalidArgument, "instrument has no operators");
  }
  const Index d = operators.front().rows();
  CMatrix sum = CMatrix::Zero(d, d);
  for (const CMatrix& l : operators) {
    if (l.rows() != d || l.cols() != d) {
      throw Error(ErrorCode::InvalidArgument, "instrument operators must all be d x d");
    }
    sum.noalias() += l.adjoint() * l;
  }
  return (sum - CMatrix::Identity(d, d)).norm();
}

/// A family of collapse operators L_z, indexed by opaque labels, with
/// sum_z L_z^dagger L_z = I. Validated once at construction; immutable after.
class DiscreteInstrument {
 public:
  DiscreteInstrument(std::vector<std::string> labels, std::vector<CMatrix> operators)
      : labels_(std::move(labels)), ops_(std::move(operators)) {
    if (labels_.size() != ops_.size()) {
      throw Error(ErrorCode::InvalidArgument, "labels and operators differ in count");
    }
    std::unordered_set<std::string> seen;
    for (const auto& l : labels_) {
      if (!seen.insert(l).second) {
        throw Error(ErrorCode::InvalidArgument, "duplicate outcome label '" + l + "'");
      }
    }
    for (const CMatrix& l : ops_) {
      if (!l.allFinite()) throw Error(ErrorCode::NonFinite, "operator has non-finite entries");
    }
    residual_ = verify_completeness(ops_);
    if (residual_ > kCompletenessTolerance) {
      throw Error(ErrorCode::NotComplete,
                  "|sum L^dagger L - I|_F = " + std::to_string(residual_), residual_);
    }
    effects_.reserve(ops_.size());
    for (const CMatrix& l : ops_) effects_.push_back(l.adjoint() * l);
  }

  /// Labels "0", "1", ... in declaration order.
  static DiscreteInstrument with_index_labels(std::vector<CMatrix> operators) {
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < operators.size(); ++i) labels.push_back(std::to_string(i));
    return DiscreteInstrument(std::move(labels), std::move(operators));
  }

  std::size_t size() const noexcept { return ops_.size(); }
  Index dim() const noexcept { return ops_.front().rows(); }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  const std::vector<CMatrix>& operators() const noexcept { return ops_; }
  const CMatrix& op(std::size_t z) const { return ops_.at(z); }
  /// L_z^dagger L_z
  const CMatrix& effect(std::size_t z) const { return effects_.at(z); }
  double residual() const noexcept { return residual_; }

  std::size_t index_of(const std::string& label) const {
    const auto it = std::find(labels_.begin(), labels_.end(), label);
    if (it == labels_.end()) {
      throw Error(ErrorCode::InvalidArgument, "unknown outcome label '" + label + "'");
    }
    return static_cast<std::size_t>(it - labels_.begin());
  }

 private:
  std::vector<std::string> labels_;
  std::vector<CMatrix> ops_;
  std::vector<CMatrix> effects_;
  double residual_ = 0.0;
};

inline double verify_completeness(const DiscreteInstrument& inst) {
  return verify_completeness(std::span<const CMatrix>(inst.operators()));
}

/// Ideal measurement: L_alpha = P_alpha for a complete set of orthogonal
/// projectors.
inline DiscreteInstrument projective_instrument(std::vector<CMatrix> projectors,
                                                std::vector<std::string> labels = {}) {
  constexpr double eps = 1e-8;
  if (projectors.empty()) throw Error(ErrorCode::InvalidArgument, "no projectors given");
  const Index d = projectors.front().rows();
  for (std::size_t a = 0; a < projectors.size(); ++a) {
    const CMatrix& p = projectors[a];
    if (p.rows() != d || p.cols() != d) {
      throw Error(ErrorCode::InvalidArgument, "projectors must all be d x d");
    }
    const double herm = (p - p.adjoint()).norm();
    const double idem = (p * p - p).norm();
    if (herm > eps || idem > eps) {
      throw Error(ErrorCode::NotProjector,
                  "projector " + std::to_string(a) + " violates P = P^dagger = P^2",
                  std::max(herm, idem));
    }
  }
  CMatrix sum = CMatrix::Zero(d, d);
  for (const CMatrix& p : projectors) sum += p;
  const double incomplete = (sum - CMatrix::Identity(d, d)).norm();
  if (incomplete > eps) {
    throw Error(ErrorCode::NotComplete, "|sum P - I|_F = " + std::to_string(incomplete),
                incomplete);
  }
  for (std::size_t a = 0; a < projectors.size(); ++a) {
    for (std::size_t b = a + 1; b < projectors.size(); ++b) {
      const double overlap = (projectors[a] * projectors[b]).norm();
      if (overlap > eps) {
        throw Error(ErrorCode::NotOrthogonal,
                    "projectors " + std::to_string(a) + " and " + std::to_string(b) +
                        " overlap",
                    overlap);
      }
    }
  }
  if (labels.empty()) {
    return DiscreteInstrument::with_index_labels(std::move(projectors));
  }
  return DiscreteInstrument(std::move(labels), std::move(projectors));
}

struct OutcomeDistribution {
  std::vector<std::string> labels;
  std::vector<double> probabilities;
};

/// P(z) = |L_z psi|^2
inline OutcomeDistribution born_distribution(const DiscreteInstrument& inst,
                                             const UnitState& psi) {
  OutcomeDistribution out{inst.labels(), {}};
  out.probabilities.reserve(inst.size());
  for (std::size_t z = 0; z < inst.size(); ++z) {
    out.probabilities.push_back((inst.op(z) * psi.amplitudes()).squaredNorm());
  }
  return out;
}

/// Inverse-CDF draw over labels in declaration order; returns the outcome index.
inline std::size_t sample_outcome_index(const DiscreteInstrument& inst, const UnitState& psi,
                                        RngStream& rng) {
  const double u = rng.uniform();
  const CVector& v = psi.amplitudes();
  double acc = 0.0;
  std::size_t last_nonzero = 0;
  for (std::size_t z = 0; z < inst.size(); ++z) {
    const double p = v.dot(inst.effect(z) * v).real();
    if (p > 0.0) last_nonzero = z;
    acc += p;
    if (u < acc) return z;
  }
  // Round-off left u just above the total mass.
  return last_nonzero;
}

inline const std::string& sample_outcome(const DiscreteInstrument& inst, const UnitState& psi,
                                         RngStream& rng) {
  return inst.labels()[sample_outcome_index(inst, psi, rng)];
}

/// Psi' = L_z psi / |L_z psi|
inline UnitState collapse(const DiscreteInstrument& inst, const UnitState& psi, std::size_t z) {
  const CVector out = inst.op(z) * psi.amplitudes();
  const double n = out.norm();
  if (n <= kZeroBranch) {
    throw Error(ErrorCode::ZeroBranch,
                "outcome '" + inst.labels()[z] + "' has |L psi| = " + std::to_string(n), n);
  }
  return UnitState::normalize(out);
}

inline UnitState collapse(const DiscreteInstrument& inst, const UnitState& psi,
                          const std::string& label) {
  return collapse(inst, psi, inst.index_of(label));
}

/// rho'(z) = L rho L^dagger / tr[L rho L^dagger]
inline DensityMatrix posterior_density(const CMatrix& l, const DensityMatrix& rho) {
  const CMatrix unnorm = l * rho.matrix() * l.adjoint();
  const double w = unnorm.trace().real();
  if (!(w > kZeroBranch)) {
    throw Error(ErrorCode::ZeroBranch, "tr[L rho L^dagger] = " + std::to_string(w), w);
  }
  return DensityMatrix::validate(hermitian_part(unnorm) / w);
}

inline DensityMatrix posterior_density(const DiscreteInstrument& inst, const DensityMatrix& rho,
                                       std::size_t z) {
  return posterior_density(inst.op(z), rho);
}

inline DensityMatrix posterior_density(const DiscreteInstrument& inst, const DensityMatrix& rho,
                                       const std::string& label) {
  return posterior_density(inst, rho, inst.index_of(label));
}

/// tr[rho L_z^dagger L_z], the marginal probability of outcome z when the
/// input is drawn from any ensemble with density matrix rho.
inline double outcome_weight(const DiscreteInstrument& inst, const DensityMatrix& rho,
                             std::size_t z) {
  return (rho.matrix() * inst.effect(z)).trace().real();
}

/// sum_z L_z rho L_z^dagger
inline DensityMatrix channel_apply(const DiscreteInstrument& inst, const DensityMatrix& rho) {
  const Index d = rho.dim();
  CMatrix out = CMatrix::Zero(d, d);
  for (const CMatrix& l : inst.operators()) out.noalias() += l * rho.matrix() * l.adjoint();
  // Completeness holds to 1e-8, so restore unit trace exactly.
  out = hermitian_part(out);
  out /= out.trace().real();
  return DensityMatrix::validate(out);
}

// ---------------------------------------------------------------------------
// Instrument files: {"dim": d, "labels": [...], "operators": [matrix, ...]}

inline DiscreteInstrument instrument_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("operators")) {
    throw Error(ErrorCode::ConfigInvalid, "instrument needs an 'operators' array");
  }
  std::vector<CMatrix> ops;
  for (const auto& m : j.at("operators")) ops.push_back(io::matrix_from_json(m));
  if (j.contains("dim")) {
    const auto d = j.at("dim").get<Index>();
    for (const CMatrix& m : ops) {
      if (m.rows() != d || m.cols() != d) {
        throw Error(ErrorCode::ConfigInvalid, "operator shape disagrees with 'dim'");
      }
    }
  }
  if (!j.contains("labels")) return DiscreteInstrument::with_index_labels(std::move(ops));
  std::vector<std::string> labels;
  for (const auto& l : j.at("labels")) {
    labels.push_back(l.is_string() ? l.get<std::string>() : l.dump());
  }
  return DiscreteInstrument(std::move(labels), std::move(ops));
}

inline nlohmann::json to_json(const DiscreteInstrument& inst) {
  nlohmann::json ops = nlohmann::json::array();
  for (const CMatrix& m : inst.operators()) ops.push_back(io::to_json(m));
  return {{"dim", inst.dim()}, {"labels", inst.labels()}, {"operators", std::move(ops)}};
}

inline DiscreteInstrument load_instrument(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open instrument file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ConfigInvalid, path + ": " + e.what());
  }
  return instrument_from_json(j);
}

// ---------------------------------------------------------------------------
// Standard instruments used throughout the tests and experiments.

/// Computational-basis measurement on C^d.
inline DiscreteInstrument computational_basis_instrument(Index d) {
  std::vector<CMatrix> ps;
  for (Index k = 0; k < d; ++k) {
    CMatrix p = CMatrix::Zero(d, d);
    p(k, k) = 1.0;
    ps.push_back(std::move(p));
  }
  return projective_instrument(std::move(ps));
}

/// Qubit amplitude damping with decay probability eta.
inline DiscreteInstrument amplitude_damping_instrument(double eta) {
  if (eta < 0.0 || eta > 1.0) {
    throw Error(ErrorCode::InvalidArgument, "damping probability must lie in [0, 1]");
  }
  CMatrix l0 = CMatrix::Zero(2, 2);
  l0(0, 0) = 1.0;
  l0(1, 1) = std::sqrt(1.0 - eta);
  CMatrix l1 = CMatrix::Zero(2, 2);
  l1(0, 1) = std::sqrt(eta);
  return DiscreteInstrument::with_index_labels({std::move(l0), std::move(l1)});
}

/// Random k-outcome instrument on C^d: L_z = G_z S^{-1/2} with G_z complex
/// Ginibre matrices and S = sum_z G_z^dagger G_z.
inline DiscreteInstrument random_instrument(Index d, std::size_t outcomes, RngStream& rng) {
  std::vector<CMatrix> gs;
  CMatrix s = CMatrix::Zero(d, d);
  for (std::size_t z = 0; z < outcomes; ++z) {
    CMatrix g(d, d);
    for (Index i = 0; i < d; ++i)
      for (Index j = 0; j < d; ++j) g(i, j) = rng.complex_normal();
    s += g.adjoint() * g;
    gs.push_back(std::move(g));
  }
  Eigen::SelfAdjointEigenSolver<CMatrix> es(hermitian_part(s));
  const CMatrix inv_sqrt = es.operatorInverseSqrt();
  for (CMatrix& g : gs) g = g * inv_sqrt;
  return DiscreteInstrument::with_index_labels(std::move(gs));
}

}  // namespace gapcollapse

#endif  // GAPCOLLAPSE_INSTRUMENT_HPP
