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

#ifndef GAPCOLLAPSE_SERIALIZE_HPP
#define GAPCOLLAPSE_SERIALIZE_HPP

#include <cmath>
#include <ostream>
#include <string>

#include <nlohmann/json.hpp>

#include "gapcollapse/errors.hpp"
#include "gapcollapse/linalg.hpp"

// Matrices and vectors travel as JSON arrays of [re, im] pairs. A matrix is a
// list of rows (row-major); a flat row-major list of d*d pairs is also read.
// A bare number is accepted wherever a pair is expected and means a real entry.

namespace gapcollapse::io {

using json = nlohmann::json;

inline json to_json(cplx z) { return json::array({z.real(), z.imag()}); }

inline cplx complex_from_json(const json& j) {
  if (j.is_number()) return {j.get<double>(), 0.0};
  if (j.is_array() && j.size() == 2 && j[0].is_number() && j[1].is_number()) {
    return {j[0].get<double>(), j[1].get<double>()};
  }
  throw Error(ErrorCode::ConfigInvalid, "expected [re, im] pair, got " + j.dump());
}

inline json to_json(const CVector& v) {
  json out = json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(to_json(v(i)));
  return out;
}

inline json to_json(const CMatrix& m) {
  json out = json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(to_json(m(r, c)));
    out.push_back(std::move(row));
  }
  return out;
}

inline CVector vector_from_json(const json& j) {
  if (!j.is_array()) throw Error(ErrorCode::ConfigInvalid, "vector must be a JSON array");
  CVector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Index>(i)) = complex_from_json(j[i]);
  return v;
}

inline CMatrix matrix_from_json(const json& j) {
  if (!j.is_array() || j.empty()) {
    throw Error(ErrorCode::ConfigInvalid, "matrix must be a non-empty JSON array");
  }
  // Matrices are square, so nested rows have as many entries as there are rows;
  // anything else is a flat list of complex entries.
  const bool nested = j[0].is_array() && j[0].size() == j.size();
  if (nested) {
    const auto rows = static_cast<Index>(j.size());
    const auto cols = static_cast<Index>(j[0].size());
    CMatrix m(rows, cols);
    for (Index r = 0; r < rows; ++r) {
      const json& row = j[static_cast<std::size_t>(r)];
      if (!row.is_array() || static_cast<Index>(row.size()) != cols) {
        throw Error(ErrorCode::ConfigInvalid, "ragged matrix rows");
      }
      for (Index c = 0; c < cols; ++c) m(r, c) = complex_from_json(row[static_cast<std::size_t>(c)]);
    }
    return m;
  }
  // Flat row-major list of d*d entries.
  const auto n = static_cast<Index>(j.size());
  const auto d = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(n))));
  if (d * d != n) {
    throw Error(ErrorCode::ConfigInvalid, "flat matrix length is not a perfect square");
  }
  CMatrix m(d, d);
  for (Index k = 0; k < n; ++k) m(k / d, k % d) = complex_from_json(j[static_cast<std::size_t>(k)]);
  return m;
}

/// Formats a double for CSV with round-trip precision.
inline std::string csv_number(double x) {
  return json(x).dump();
}

}  // namespace gapcollapse::io

#endif  // GAPCOLLAPSE_SERIALIZE_HPP
