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

#ifndef GAPCOLLAPSE_LINALG_HPP
#define GAPCOLLAPSE_LINALG_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <string>

#include "gapcollapse/errors.hpp"

namespace gapcollapse {

using cplx = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RVector = Eigen::VectorXd;
using Index = Eigen::Index;

namespace tol {
inline constexpr double kInput = 1e-10;       // Hermiticity, positivity, trace, unit norm
inline constexpr double kSpectrumSum = 1e-9;  // eigenvalue sum and eigenbasis Gram
inline constexpr double kReassembly = 1e-8;   // Frobenius error of Σ p |e><e|
inline constexpr double kIntegration = 1e-8;  // positivity and trace of ODE-integrated states
}  // namespace tol

inline constexpr Index kDefaultDimCap = 4096;

inline double frobenius_norm(const CMatrix& m) { return m.norm(); }

inline double frobenius_distance(const CMatrix& a, const CMatrix& b) {
  return (a - b).norm();
}

inline double max_abs(const CMatrix& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

inline CMatrix hermitian_part(const CMatrix& m) {
  return (m + m.adjoint()) * 0.5;
}

inline bool all_finite(const CMatrix& m) { return m.allFinite(); }

/// Validated density matrix: Hermitian, positive semidefinite, unit trace.
///
/// The stored matrix is the Hermitian part of the validated input, so
/// re-validating a DensityMatrix reproduces it bit for bit.
class DensityMatrix {
 public:
  static DensityMatrix validate(const CMatrix& m, Index dim_cap = kDefaultDimCap,
                                double tolerance = tol::kInput) {
    if (m.rows() != m.cols() || m.rows() == 0) {
      throw Error(ErrorCode::InvalidArgument,
                  "density matrix must be square and non-empty");
    }
    if (m.rows() > dim_cap) {
      throw Error(ErrorCode::InvalidArgument,
                  "dimension " + std::to_string(m.rows()) + " exceeds cap " +
                      std::to_string(dim_cap));
    }
    if (!m.allFinite()) {
      throw Error(ErrorCode::NonFinite, "density matrix has non-finite entries");
    }
    const double asym = max_abs(m - m.adjoint());
    if (asym > tol::kInput) {
      throw Error(ErrorCode::NotHermitian,
                  "max |A - A^dagger| = " + std::to_string(asym), asym);
    }
    CMatrix h = hermitian_part(m);
    Eigen::SelfAdjointEigenSolver<CMatrix> es(h, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) {
      throw Error(ErrorCode::DecompositionFailure, "eigenvalue solver failed");
    }
    const double min_eig = es.eigenvalues().minCoeff();
    if (min_eig < -tolerance) {
      throw Error(ErrorCode::NotPositive,
                  "min eigenvalue = " + std::to_string(min_eig), -min_eig);
    }
    const double tr_err = std::abs(h.trace().real() - 1.0);
    if (tr_err > tolerance) {
      throw Error(ErrorCode::TraceNotOne,
                  "|tr - 1| = " + std::to_string(tr_err), tr_err);
    }
    return DensityMatrix(std::move(h));
  }

  const CMatrix& matrix() const noexcept { return m_; }
  Index dim() const noexcept { return m_.rows(); }
  cplx operator()(Index i, Index j) const { return m_(i, j); }

 private:
  explicit DensityMatrix(CMatrix m) : m_(std::move(m)) {}
  CMatrix m_;
};

inline DensityMatrix validate_density(const CMatrix& m,
                                      Index dim_cap = kDefaultDimCap) {
  return DensityMatrix::validate(m, dim_cap);
}

inline DensityMatrix maximally_mixed(Index d) {
  return DensityMatrix::validate(CMatrix::Identity(d, d) / static_cast<double>(d));
}

/// Unnormalized complex vector (pre-projection draws, L(x)psi, ...).
struct RawVector {
  CVector amplitudes;

  RawVector() = default;
  explicit RawVector(CVector v) : amplitudes(std::move(v)) {
    if (!amplitudes.allFinite()) {
      throw Error(ErrorCode::NonFinite, "raw vector has non-finite entries");
    }
  }
  double norm() const { return amplitudes.norm(); }
  double squared_norm() const { return amplitudes.squaredNorm(); }
  Index dim() const noexcept { return amplitudes.size(); }
};

/// Point on the unit sphere of C^d.
class UnitState {
 public:
  UnitState() = default;

  explicit UnitState(CVector v) : v_(std::move(v)) {
    if (v_.size() == 0) {
      throw Error(ErrorCode::InvalidArgument, "empty state vector");
    }
    const double err = std::abs(v_.norm() - 1.0);
    if (!(err <= tol::kInput)) {
      throw Error(ErrorCode::NotUnitNorm, "| |psi| - 1 | = " + std::to_string(err), err);
    }
  }

  /// Normalizes `v`; throws DegenerateDraw when |v| < floor.
  static UnitState normalize(const CVector& v, double floor = 1e-150) {
    const double n = v.norm();
    if (!std::isfinite(n)) {
      throw Error(ErrorCode::NonFinite, "cannot normalize non-finite vector");
    }
    if (n < floor) {
      throw Error(ErrorCode::DegenerateDraw,
                  "norm " + std::to_string(n) + " below floor", n);
    }
    return UnitState(v / n, Unchecked{});
  }

  static UnitState basis(Index d, Index k) {
    CVector v = CVector::Zero(d);
    v(k) = 1.0;
    return UnitState(std::move(v), Unchecked{});
  }

  const CVector& amplitudes() const noexcept { return v_; }
  Index dim() const noexcept { return v_.size(); }
  cplx operator[](Index k) const { return v_(k); }

 private:
  struct Unchecked {};
  UnitState(CVector v, Unchecked) : v_(std::move(v)) {}
  CVector v_;
};

/// |psi><psi|
inline DensityMatrix pure_projector(const UnitState& psi) {
  return DensityMatrix::validate(psi.amplitudes() * psi.amplitudes().adjoint());
}

/// Eigen-decomposition of a density matrix, eigenvalues in descending order.
struct SpectralDecomposition {
  RVector probabilities;  // p_k >= 0, sum 1
  CMatrix eigenvectors;   // column k is e_k

  Index dim() const noexcept { return probabilities.size(); }

  CMatrix reassemble() const {
    return eigenvectors * probabilities.cast<cplx>().asDiagonal() *
           eigenvectors.adjoint();
  }
};

/// Multiplies `v` by the unit phase that makes its largest-modulus entry real
/// and positive. Pins eigenvector phases so decompositions are reproducible.
inline void fix_phase(Eigen::Ref<CVector> v) {
  Index arg = 0;
  v.cwiseAbs().maxCoeff(&arg);
  const double mag = std::abs(v(arg));
  if (mag > 0.0) v *= std::conj(v(arg)) / mag;
}

inline SpectralDecomposition spectral_decompose(const DensityMatrix& rho) {
  Eigen::SelfAdjointEigenSolver<CMatrix> es(rho.matrix());
  if (es.info() != Eigen::Success) {
    throw Error(ErrorCode::DecompositionFailure, "eigen solver did not converge");
  }
  const Index d = rho.dim();
  SpectralDecomposition out;
  out.probabilities.resize(d);
  out.eigenvectors.resize(d, d);
  for (Index k = 0; k < d; ++k) {
    // Eigen returns ascending order.
    const Index src = d - 1 - k;
    out.probabilities(k) = std::max(0.0, es.eigenvalues()(src));
    out.eigenvectors.col(k) = es.eigenvectors().col(src);
    fix_phase(out.eigenvectors.col(k));
  }
  const double total = out.probabilities.sum();
  if (!(total > 0.0)) {
    throw Error(ErrorCode::DecompositionFailure, "spectrum sums to zero");
  }
  out.probabilities /= total;
  return out;
}

/// exp(-i H t / hbar) for Hermitian H, via one eigendecomposition of H.
class HermitianPropagator {
 public:
  HermitianPropagator() = default;

  explicit HermitianPropagator(const CMatrix& hamiltonian, double hbar = 1.0)
      : hbar_(hbar) {
    if (hamiltonian.rows() != hamiltonian.cols()) {
      throw Error(ErrorCode::InvalidArgument, "Hamiltonian must be square");
    }
    zero_ = hamiltonian.cwiseAbs().maxCoeff() == 0.0;
    Eigen::SelfAdjointEigenSolver<CMatrix> es(hermitian_part(hamiltonian));
    if (es.info() != Eigen::Success) {
      throw Error(ErrorCode::DecompositionFailure, "Hamiltonian diagonalization failed");
    }
    energies_ = es.eigenvalues();
    basis_ = es.eigenvectors();
  }

  bool is_zero() const noexcept { return zero_; }
  Index dim() const noexcept { return basis_.rows(); }

  /// Largest |E|, i.e. the operator norm of H.
  double spectral_radius() const {
    return energies_.size() == 0 ? 0.0 : energies_.cwiseAbs().maxCoeff();
  }

  CMatrix matrix(double t) const {
    if (zero_) return CMatrix::Identity(dim(), dim());
    return basis_ * phases(t).asDiagonal() * basis_.adjoint();
  }

  CVector apply(const CVector& psi, double t) const {
    if (zero_ || t == 0.0) return psi;
    CVector coeffs = basis_.adjoint() * psi;
    coeffs.array() *= phases(t).array();
    return basis_ * coeffs;
  }

 private:
  CVector phases(double t) const {
    CVector ph(energies_.size());
    for (Index k = 0; k < energies_.size(); ++k) {
      ph(k) = std::polar(1.0, -energies_(k) * t / hbar_);
    }
    return ph;
  }

  double hbar_ = 1.0;
  bool zero_ = true;
  RVector energies_;
  CMatrix basis_;
};

}  // namespace gapcollapse

#endif  // GAPCOLLAPSE_LINALG_HPP
