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

#ifndef GAPCOLLAPSE_TESTS_TEST_UTIL_HPP
#define GAPCOLLAPSE_TESTS_TEST_UTIL_HPP

#include <cmath>
#include <vector>

#include "gapcollapse/linalg.hpp"
#include "gapcollapse/rng.hpp"

namespace gapcollapse::testing {

inline CMatrix diag2(double a, double b) {
  CMatrix m = CMatrix::Zero(2, 2);
  m(0, 0) = a;
  m(1, 1) = b;
  return m;
}

inline CVector vec(std::initializer_list<cplx> xs) {
  CVector v(static_cast<Index>(xs.size()));
  Index k = 0;
  for (cplx x : xs) v(k++) = x;
  return v;
}

inline CMatrix ginibre(Index d, RngStream& rng) {
  CMatrix g(d, d);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < d; ++j) g(i, j) = rng.complex_normal();
  return g;
}

/// Haar unitary from the QR decomposition of a Ginibre matrix, with the
/// phases of R's diagonal divided out.
inline CMatrix haar_unitary(Index d, RngStream& rng) {
  Eigen::HouseholderQR<CMatrix> qr(ginibre(d, rng));
  CMatrix q = qr.householderQ();
  const CMatrix r = qr.matrixQR();
  for (Index k = 0; k < d; ++k) q.col(k) *= r(k, k) / std::abs(r(k, k));
  return q;
}

/// Uniform point on the sphere of C^d: a normalized i.i.d. Gaussian vector.
inline UnitState uniform_sphere(Index d, RngStream& rng) {
  CVector v(d);
  for (Index k = 0; k < d; ++k) v(k) = cplx(rng.normal(), rng.normal());
  return UnitState::normalize(v);
}

inline std::vector<UnitState> uniform_sphere_batch(Index d, std::size_t n, RngStream rng) {
  std::vector<UnitState> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(uniform_sphere(d, rng));
  return out;
}

}  // namespace gapcollapse::testing

#endif  // GAPCOLLAPSE_TESTS_TEST_UTIL_HPP
