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

#ifndef GAPCOLLAPSE_GAP_HPP
#define GAPCOLLAPSE_GAP_HPP

#include <algorithm>
#include <cstdint>
#include <ostream>
#include <random>
#include <vector>

#include "gapcollapse/errors.hpp"
#include "gapcollapse/linalg.hpp"
#include "gapcollapse/parallel.hpp"
#include "gapcollapse/rng.hpp"
#include "gapcollapse/serialize.hpp"

namespace gapcollapse {

/// Draws from G_rho, GA_rho and GAP_rho for a fixed density matrix.
///
/// G_rho is the mean-zero complex Gaussian with covariance rho: in the
/// eigenbasis of rho, Phi = sum_k sqrt(p_k) z_k e_k with z_k standard complex
/// normals. GA_rho = |.|^2 G_rho is sampled exactly as a mixture: since
/// |Phi|^2 = sum_k p_k |z_k|^2, GA_rho = sum_k p_k Q_k where Q_k size-biases
/// only component k, whose squared modulus then follows Gamma(2, p_k).
/// GAP_rho is the law of Phi / |Phi| with Phi ~ GA_rho.
class GapSampler {
 public:
  struct GaDraw {
    RawVector vector;
    Index mixture_index;  // component that was size-biased
  };

  explicit GapSampler(const DensityMatrix& rho)
      : rho_(rho), spec_(spectral_decompose(rho)) {
    const Index d = spec_.dim();
    sqrt_p_.resize(d);
    cumulative_.resize(static_cast<std::size_t>(d));
    double acc = 0.0;
    for (Index k = 0; k < d; ++k) {
      sqrt_p_(k) = std::sqrt(spec_.probabilities(k));
      acc += spec_.probabilities(k);
      cumulative_[static_cast<std::size_t>(k)] = acc;
    }
    // Eigenvalues are sorted descending, so the support is a prefix.
    support_ = 0;
    while (support_ < d && spec_.probabilities(support_) > 0.0) ++support_;
  }

  const DensityMatrix& rho() const noexcept { return rho_; }
  const SpectralDecomposition& spectrum() const noexcept { return spec_; }
  Index dim() const noexcept { return spec_.dim(); }

  RawVector sample_g(RngStream& rng) const {
    CVector coeffs = CVector::Zero(dim());
    for (Index k = 0; k < support_; ++k) coeffs(k) = sqrt_p_(k) * rng.complex_normal();
    return RawVector(spec_.eigenvectors * coeffs);
  }

  GaDraw sample_ga_indexed(RngStream& rng) const {
    const Index chosen = choose_component(rng.uniform());
    CVector coeffs = CVector::Zero(dim());
    for (Index k = 0; k < support_; ++k) {
      if (k == chosen) {
        // |z|^2 ~ Gamma(2, 1): sum of two unit exponentials.
        const double r2 = -std::log(rng.uniform_pos()) - std::log(rng.uniform_pos());
        coeffs(k) = sqrt_p_(k) * std::polar(std::sqrt(r2), rng.phase());
      } else {
        coeffs(k) = sqrt_p_(k) * rng.complex_normal();
      }
    }
    return {RawVector(spec_.eigenvectors * coeffs), chosen};
  }

  RawVector sample_ga(RngStream& rng) const { return sample_ga_indexed(rng).vector; }

  UnitState sample_gap(RngStream& rng) const {
    return UnitState::normalize(sample_ga(rng).amplitudes, 1e-150);
  }

 private:
  Index choose_component(double u) const {
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.begin() + support_, u);
    const auto k = static_cast<Index>(it - cumulative_.begin());
    return std::min(k, support_ - 1);
  }

  DensityMatrix rho_;
  SpectralDecomposition spec_;
  RVector sqrt_p_;
  std::vector<double> cumulative_;
  Index support_ = 0;
};

inline RawVector sample_g(const DensityMatrix& rho, RngStream& rng) {
  return GapSampler(rho).sample_g(rng);
}

inline RawVector sample_ga(const DensityMatrix& rho, RngStream& rng) {
  return GapSampler(rho).sample_ga(rng);
}

inline UnitState sample_gap(const DensityMatrix& rho, RngStream& rng) {
  return GapSampler(rho).sample_gap(rng);
}

/// Approximate GAP_rho sampler by self-normalized importance resampling.
///
/// Draws `pool` vectors from G_rho, picks one with probability proportional to
/// its squared norm, and projects it to the sphere. The Gaussian draws use a
/// pivoted LDL^T factor of rho rather than its eigendecomposition, so nothing
/// is shared with GapSampler.
class GapOracleSampler {
 public:
  GapOracleSampler(const DensityMatrix& rho, std::size_t pool) : pool_(pool) {
    if (pool < 1000) {
      throw Error(ErrorCode::InvalidArgument, "oracle pool must be at least 1000");
    }
    Eigen::LDLT<CMatrix> ldlt(rho.matrix());
    if (ldlt.info() != Eigen::Success) {
      throw Error(ErrorCode::DecompositionFailure, "LDLT of rho failed");
    }
    const Index d = rho.dim();
    RVector diag = ldlt.vectorD().real().cwiseMax(0.0).cwiseSqrt();
    CMatrix lower = ldlt.matrixL();
    // rho = P^T L D L^* P, so Phi = P^T L sqrt(D) z has covariance rho.
    factor_ = ldlt.transpositionsP().transpose() * (lower * diag.cast<cplx>().asDiagonal());
    dim_ = d;
  }

  UnitState sample(RngStream& rng) const {
    CMatrix z(dim_, static_cast<Index>(pool_));
    for (Index s = 0; s < z.cols(); ++s) {
      for (Index k = 0; k < dim_; ++k) z(k, s) = rng.complex_normal();
    }
    const CMatrix draws = factor_ * z;
    const RVector weights = draws.colwise().squaredNorm().transpose();
    std::vector<double> cumulative(pool_);
    double acc = 0.0;
    for (std::size_t s = 0; s < pool_; ++s) {
      acc += weights(static_cast<Index>(s));
      cumulative[s] = acc;
    }
    const double u = rng.uniform() * acc;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    if (it == cumulative.end()) --it;
    return UnitState::normalize(draws.col(it - cumulative.begin()));
  }

 private:
  std::size_t pool_;
  Index dim_ = 0;
  CMatrix factor_;
};

inline UnitState sample_gap_oracle(const DensityMatrix& rho, RngStream& rng, std::size_t pool) {
  return GapOracleSampler(rho, pool).sample(rng);
}

/// Random full-rank density matrix G G^dagger / tr(G G^dagger), G complex Ginibre.
inline DensityMatrix random_density_matrix(Index d, RngStream& rng) {
  CMatrix g(d, d);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < d; ++j) g(i, j) = rng.complex_normal();
  CMatrix r = g * g.adjoint();
  r /= r.trace().real();
  return DensityMatrix::validate(hermitian_part(r));
}

struct GapSampleBatch {
  std::vector<UnitState> states;
  DensityMatrix rho;
  std::size_t count = 0;
};

/// `count` GAP_rho draws; draw i uses `base.substream(i)`.
inline GapSampleBatch sample_gap_batch(const DensityMatrix& rho, std::size_t count,
                                       const RngStream& base, Workers workers = {}) {
  const GapSampler sampler(rho);
  std::vector<UnitState> states(count);
  parallel_for(count, workers, [&](std::size_t i) {
    RngStream rng = base.substream(i);
    states[i] = sampler.sample_gap(rng);
  });
  return {std::move(states), rho, count};
}

inline std::vector<UnitState> sample_gap_oracle_batch(const DensityMatrix& rho, std::size_t count,
                                                      std::size_t pool, const RngStream& base,
                                                      Workers workers = {}) {
  const GapOracleSampler sampler(rho, pool);
  std::vector<UnitState> states(count);
  parallel_for(count, workers, [&](std::size_t i) {
    RngStream rng = base.substream(i);
    states[i] = sampler.sample(rng);
  });
  return states;
}

/// CSV dump: sample_index,component_index,re,im with a header row.
inline void write_batch_csv(const std::vector<UnitState>& states, std::ostream& os) {
  os << "sample_index,component_index,re,im\n";
  for (std::size_t s = 0; s < states.size(); ++s) {
    const CVector& v = states[s].amplitudes();
    for (Index k = 0; k < v.size(); ++k) {
      os << s << ',' << k << ',' << io::csv_number(v(k).real()) << ','
         << io::csv_number(v(k).imag()) << '\n';
    }
  }
}

}  // namespace gapcollapse

#endif  // GAPCOLLAPSE_GAP_HPP
