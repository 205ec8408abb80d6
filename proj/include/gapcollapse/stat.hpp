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

#ifndef GAPCOLLAPSE_STAT_HPP
#define GAPCOLLAPSE_STAT_HPP

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gapcollapse/errors.hpp"
#include "gapcollapse/gap.hpp"
#include "gapcollapse/instrument.hpp"
#include "gapcollapse/linalg.hpp"
#include "gapcollapse/parallel.hpp"
#include "gapcollapse/rng.hpp"

namespace gapcollapse {

/// Pass/fail thresholds for the statistical checks.
struct StatThresholds {
  double p_value = 0.01;          // two-sample tests pass when p > this
  double moment_factor = 5.0;     // moment distance tolerance is factor / sqrt(M)
  double marginal_factor = 4.0;   // |count - M tr[rho E_z]| <= factor sqrt(M)
  std::size_t bucket_threshold = 500;
  int permutations = 200;

  double moment_tolerance(std::size_t m) const {
    return moment_factor / std::sqrt(static_cast<double>(m));
  }
};

struct MomentReport {
  CMatrix second_moment;
  std::size_t sample_count = 0;
  std::optional<double> frobenius_to_target;
};

/// (1/M) sum_i |psi_i><psi_i|
inline MomentReport empirical_density(std::span<const UnitState> samples) {
  if (samples.size() < 2) {
    throw Error(ErrorCode::EmptySample, "need at least two samples, got " +
                                            std::to_string(samples.size()));
  }
  const Index d = samples.front().dim();
  CMatrix acc = CMatrix::Zero(d, d);
  for (const UnitState& s : samples) acc.noalias() += s.amplitudes() * s.amplitudes().adjoint();
  acc /= static_cast<double>(samples.size());
  return {hermitian_part(acc), samples.size(), std::nullopt};
}

inline MomentReport empirical_density(std::span<const UnitState> samples, const CMatrix& target) {
  MomentReport r = empirical_density(samples);
  r.frobenius_to_target = frobenius_distance(r.second_moment, target);
  return r;
}

/// Sum over i in [0, count) of v_i v_i^dagger, where fn(i, rng) returns v_i and
/// rng is base.substream(i). Fixed-size blocks are summed in order, so the
/// result does not depend on the worker count.
template <class Fn>
CMatrix accumulate_outer(std::size_t count, Index d, const RngStream& base, Workers workers, Fn&& fn) {
  constexpr std::size_t kBlock = 1024;
  const std::size_t blocks = (count + kBlock - 1) / kBlock;
  std::vector<CMatrix> partial(blocks, CMatrix::Zero(d, d));
  parallel_for(blocks, workers, [&](std::size_t b) {
    const std::size_t end = std::min(count, (b + 1) * kBlock);
    for (std::size_t i = b * kBlock; i < end; ++i) {
      RngStream rng = base.substream(i);
      const CVector v = fn(i, rng);
      partial[b].noalias() += v * v.adjoint();
    }
  });
  CMatrix total = CMatrix::Zero(d, d);
  for (const CMatrix& p : partial) total += p;
  return total;
}

// ---------------------------------------------------------------------------
// Two-sample test with the phase-invariant kernel k(psi, phi) = |<psi, phi>|^2.

struct TwoSampleReport {
  double mmd_statistic = 0.0;  // unbiased MMD^2
  double permutation_p = 1.0;
  int permutations = 0;
};

/// Real feature map with <f(psi), f(phi)> = |<psi, phi>|^2 (the kernel is
/// linear in |psi><psi|).
inline RVector projector_features(const CVector& v) {
  const Index d = v.size();
  RVector f(d * d);
  Index k = 0;
  constexpr double r2 = 1.41421356237309504880;
  for (Index a = 0; a < d; ++a) {
    f(k++) = std::norm(v(a));
    for (Index b = a + 1; b < d; ++b) {
      const cplx c = v(a) * std::conj(v(b));
      f(k++) = r2 * c.real();
      f(k++) = r2 * c.imag();
    }
  }
  return f;
}

namespace detail {

inline double unbiased_mmd2(const RVector& sum_x, double diag_x, double nx, const RVector& sum_y,
                            double diag_y, double ny) {
  const double xx = (sum_x.squaredNorm() - diag_x) / (nx * (nx - 1.0));
  const double yy = (sum_y.squaredNorm() - diag_y) / (ny * (ny - 1.0));
  const double xy = sum_x.dot(sum_y) / (nx * ny);
  return xx + yy - 2.0 * xy;
}

}  // namespace detail

/// Unbiased MMD^2 between A and B with a permutation p-value
/// (1 + #{perm >= observed}) / (1 + permutations). Permutation p uses stream
/// rng.substream(p). Each statistic costs O((|A| + |B|) d^2) through the
/// feature map instead of a Gram matrix.
inline TwoSampleReport mmd_two_sample(std::span<const UnitState> a, std::span<const UnitState> b,
                                      int permutations, const RngStream& rng, Workers workers = {}) {
  if (a.size() < 100 || b.size() < 100) {
    throw Error(ErrorCode::InvalidArgument, "two-sample test needs at least 100 states per side");
  }
  if (permutations < 200) {
    throw Error(ErrorCode::InvalidArgument, "need at least 200 permutations");
  }
  const Index d = a.front().dim();
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  const std::size_t total = n + m;
  const Index f = d * d;
  Eigen::MatrixXd z(f, static_cast<Index>(total));
  RVector self(static_cast<Index>(total));
  for (std::size_t i = 0; i < total; ++i) {
    const CVector& v = i < n ? a[i].amplitudes() : b[i - n].amplitudes();
    if (v.size() != d) throw Error(ErrorCode::InvalidArgument, "states differ in dimension");
    z.col(static_cast<Index>(i)) = projector_features(v);
    self(static_cast<Index>(i)) = z.col(static_cast<Index>(i)).squaredNorm();
  }
  const RVector sum_all = z.rowwise().sum();
  const double self_all = self.sum();
  const auto nx = static_cast<double>(n);
  const auto ny = static_cast<double>(m);

  const RVector sum_a = z.leftCols(static_cast<Index>(n)).rowwise().sum();
  const double self_a = self.head(static_cast<Index>(n)).sum();
  const double observed =
      detail::unbiased_mmd2(sum_a, self_a, nx, sum_all - sum_a, self_all - self_a, ny);

  std::vector<double> stats(static_cast<std::size_t>(permutations));
  parallel_for(stats.size(), workers, [&](std::size_t p) {
    RngStream prng = rng.substream(p);
    std::vector<Index> idx(total);
    std::iota(idx.begin(), idx.end(), Index{0});
    // Partial Fisher-Yates: the first n slots form the permuted "A" side.
    RVector sx = RVector::Zero(f);
    double selfx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto j = i + static_cast<std::size_t>(prng.uniform() * static_cast<double>(total - i));
      std::swap(idx[i], idx[std::min(j, total - 1)]);
      sx += z.col(idx[i]);
      selfx += self(idx[i]);
    }
    stats[p] = detail::unbiased_mmd2(sx, selfx, nx, sum_all - sx, self_all - selfx, ny);
  });
  constexpr double kTie = 1e-9;
  const auto exceed = std::count_if(stats.begin(), stats.end(),
                                    [&](double s) { return s >= observed - kTie; });
  TwoSampleReport out;
  out.mmd_statistic = observed;
  out.permutations = permutations;
  out.permutation_p = (1.0 + static_cast<double>(exceed)) / (1.0 + permutations);
  return out;
}

/// Kolmogorov-Smirnov distance of a sample from Uniform(0, 1).
inline double ks_uniform_distance(std::vector<double> values) {
  if (values.empty()) throw Error(ErrorCode::EmptySample, "no values");
  std::sort(values.begin(), values.end());
  const auto n = static_cast<double>(values.size());
  double dist = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double lo = static_cast<double>(i) / n;
    const double hi = static_cast<double>(i + 1) / n;
    dist = std::max({dist, std::abs(values[i] - lo), std::abs(hi - values[i])});
  }
  return dist;
}

// ---------------------------------------------------------------------------
// Pushforward identity
//   E_{GAP_rho}[ L Psi Psi^dagger L^dagger ] = tr[rho L^dagger L] E_{GAP_rho'}[ Psi' Psi'^dagger ]
// evaluated over all d^2 second-moment coordinate functions (real and
// imaginary parts of the entries of |psi><psi|).

struct PushforwardReport {
  double max_abs_discrepancy = 0.0;     // max over coordinates of |lhs - rhs|
  double normalized_discrepancy = 0.0;  // the same divided by tr[rho L^dagger L]
  double branch_weight = 0.0;           // tr[rho L^dagger L]
  CMatrix lhs;
  CMatrix rhs;
};

inline double max_coordinate_gap(const CMatrix& a, const CMatrix& b) {
  const CMatrix diff = a - b;
  return std::max(diff.real().cwiseAbs().maxCoeff(), diff.imag().cwiseAbs().maxCoeff());
}

/// Left side: GAP_rho draws pushed through L and weighted by |L Psi|^2
/// (draw i from rng.substream(0).substream(i)). Right side: fresh draws from
/// GAP_rho' scaled by tr[rho L^dagger L] (rng.substream(1)).
inline PushforwardReport pushforward_identity_check(const DensityMatrix& rho, const CMatrix& l,
                                                    std::size_t m, const RngStream& rng,
                                                    Workers workers = {}) {
  if (l.rows() != rho.dim() || l.cols() != rho.dim()) {
    throw Error(ErrorCode::InvalidArgument, "L must be d x d");
  }
  if (m < 1) throw Error(ErrorCode::InvalidArgument, "need at least one sample");
  const double weight = (rho.matrix() * l.adjoint() * l).trace().real();
  if (!(weight > 1e-10)) {
    throw Error(ErrorCode::ZeroBranch, "tr[rho L^dagger L] = " + std::to_string(weight), weight);
  }
  const DensityMatrix posterior = posterior_density(l, rho);
  const Index d = rho.dim();
  const GapSampler prior_sampler(rho);
  const GapSampler post_sampler(posterior);

  CMatrix lhs = accumulate_outer(m, d, rng.substream(0), workers, [&](std::size_t, RngStream& r) {
    // f(L Psi / |L Psi|) |L Psi|^2 with f = |.><.| is just L Psi Psi^dagger L^dagger.
    return CVector(l * prior_sampler.sample_gap(r).amplitudes());
  });
  lhs /= static_cast<double>(m);
  CMatrix rhs = accumulate_outer(m, d, rng.substream(1), workers, [&](std::size_t, RngStream& r) {
    return post_sampler.sample_gap(r).amplitudes();
  });
  rhs *= weight / static_cast<double>(m);

  PushforwardReport out;
  out.branch_weight = weight;
  out.max_abs_discrepancy = max_coordinate_gap(lhs, rhs);
  out.normalized_discrepancy = out.max_abs_discrepancy / weight;
  out.lhs = std::move(lhs);
  out.rhs = std::move(rhs);
  return out;
}

// ---------------------------------------------------------------------------
// Theorem suite for discrete instruments.

struct CollapseTrial {
  std::size_t outcome = 0;
  UnitState state;
};

/// M independent runs of: Psi ~ GAP_rho, Born outcome z, Psi' = collapse.
/// Trial i uses base.substream(i).
inline std::vector<CollapseTrial> run_collapse_trials(const DensityMatrix& rho,
                                                      const DiscreteInstrument& inst,
                                                      std::size_t m, const RngStream& base,
                                                      Workers workers = {}) {
  if (inst.dim() != rho.dim()) throw Error(ErrorCode::InvalidArgument, "dimension mismatch");
  const GapSampler sampler(rho);
  std::vector<CollapseTrial> trials(m);
  parallel_for(m, workers, [&](std::size_t i) {
    RngStream rng = base.substream(i);
    const UnitState psi = sampler.sample_gap(rng);
    const std::size_t z = sample_outcome_index(inst, psi, rng);
    trials[i] = {z, collapse(inst, psi, z)};
  });
  return trials;
}

struct LabelReport {
  std::string label;
  std::size_t count = 0;
  double expected_count = 0.0;
  double marginal_deviation = 0.0;  // |count - expected| / sqrt(M)
  bool marginal_ok = true;
  std::optional<TwoSampleReport> two_sample;
  std::optional<MomentReport> moments;  // frobenius_to_target is vs rho'(z)
  double moment_tolerance = 0.0;
  bool tested = false;  // bucket reached the threshold
  bool passed = true;
};

struct TheoremReport {
  std::vector<LabelReport> labels;
  std::size_t trials = 0;
  bool passed = true;
};

/// Buckets collapsed states by outcome and compares each bucket with fresh
/// GAP_rho'(z) draws. Streams: trials rng.substream(0), fresh draws
/// rng.substream(1).substream(z), permutations rng.substream(2).substream(z).
inline TheoremReport theorem_suite(const DensityMatrix& rho, const DiscreteInstrument& inst,
                                   std::size_t m, const RngStream& rng,
                                   const StatThresholds& th = {}, Workers workers = {}) {
  const auto trials = run_collapse_trials(rho, inst, m, rng.substream(0), workers);
  std::vector<std::vector<UnitState>> buckets(inst.size());
  for (const auto& t : trials) buckets[t.outcome].push_back(t.state);

  TheoremReport report;
  report.trials = m;
  const double sqrt_m = std::sqrt(static_cast<double>(m));
  for (std::size_t z = 0; z < inst.size(); ++z) {
    LabelReport lr;
    lr.label = inst.labels()[z];
    lr.count = buckets[z].size();
    lr.expected_count = outcome_weight(inst, rho, z) * static_cast<double>(m);
    lr.marginal_deviation = std::abs(static_cast<double>(lr.count) - lr.expected_count) / sqrt_m;
    lr.marginal_ok = lr.marginal_deviation <= th.marginal_factor;
    lr.passed = lr.marginal_ok;
    const double weight = outcome_weight(inst, rho, z);
    if (lr.count >= 2 && weight > kZeroBranch) {
      const DensityMatrix post = posterior_density(inst, rho, z);
      lr.moments = empirical_density(buckets[z], post.matrix());
      lr.moment_tolerance = th.moment_tolerance(lr.count);
      if (lr.count >= th.bucket_threshold) {
        lr.tested = true;
        const auto fresh =
            sample_gap_batch(post, lr.count, rng.substream(1).substream(z), workers);
        lr.two_sample = mmd_two_sample(buckets[z], fresh.states, th.permutations,
                                       rng.substream(2).substream(z), workers);
        lr.passed = lr.passed && lr.two_sample->permutation_p > th.p_value &&
                    *lr.moments->frobenius_to_target <= lr.moment_tolerance;
      }
    }
    report.passed = report.passed && lr.passed;
    report.labels.push_back(std::move(lr));
  }
  return report;
}

/// |pooled second moment of Psi' - sum_z L_z rho L_z^dagger|_F over M trials
/// (trial i uses rng.substream(i)).
inline double mixture_check(const DensityMatrix& rho, const DiscreteInstrument& inst,
                            std::size_t m, const RngStream& rng, Workers workers = {}) {
  const GapSampler sampler(rho);
  CMatrix pooled = accumulate_outer(m, rho.dim(), rng, workers, [&](std::size_t, RngStream& r) {
    const UnitState psi = sampler.sample_gap(r);
    const std::size_t z = sample_outcome_index(inst, psi, r);
    return collapse(inst, psi, z).amplitudes();
  });
  pooled /= static_cast<double>(m);
  return frobenius_distance(pooled, channel_apply(inst, rho).matrix());
}

inline nlohmann::json to_json(const TheoremReport& r) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& l : r.labels) {
    nlohmann::json e;
    e["count"] = l.count;
    e["expected_count"] = l.expected_count;
    e["p_value"] = l.two_sample ? nlohmann::json(l.two_sample->permutation_p) : nlohmann::json();
    e["mmd"] = l.two_sample ? nlohmann::json(l.two_sample->mmd_statistic) : nlohmann::json();
    e["frobenius_to_posterior"] = l.moments && l.moments->frobenius_to_target
                                      ? nlohmann::json(*l.moments->frobenius_to_target)
                                      : nlohmann::json();
    e["moment_tolerance"] = l.moment_tolerance;
    e["tested"] = l.tested;
    e["passed"] = l.passed;
    out[l.label] = std::move(e);
  }
  return out;
}

}  // namespace gapcollapse

#endif  // GAPCOLLAPSE_STAT_HPP
