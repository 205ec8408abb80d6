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

#ifndef GAPCOLLAPSE_HARNESS_HPP
#define GAPCOLLAPSE_HARNESS_HPP

// Experiment configs, orchestration and report emission for the command line
// tool. A config is a JSON object with a "kind" and kind-specific blocks; run()
// turns it into a RunReport whose body depends only on the config and the
// master seed.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/sha.h>

#include "gapcollapse/csl.hpp"
#include "gapcollapse/errors.hpp"
#include "gapcollapse/gap.hpp"
#include "gapcollapse/grw.hpp"
#include "gapcollapse/instrument.hpp"
#include "gapcollapse/linalg.hpp"
#include "gapcollapse/parallel.hpp"
#include "gapcollapse/rng.hpp"
#include "gapcollapse/serialize.hpp"
#include "gapcollapse/stat.hpp"

namespace gapcollapse::harness {

using nlohmann::json;

inline const std::vector<std::string>& experiment_kinds() {
  static const std::vector<std::string> kinds{"gap-sample", "theorem", "grw", "csl", "master-eq"};
  return kinds;
}

/// SHA-1 of the canonical (compact, key-sorted) config text, hashed as a git
/// blob so `git hash-object` on the same bytes gives the same id.
inline std::string config_hash(const json& config) {
  const std::string text = config.dump();
  const std::string blob = "blob " + std::to_string(text.size()) + '\0' + text;
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(blob.data()), blob.size(), digest);
  std::ostringstream os;
  for (unsigned char c : digest) os << std::hex << std::setw(2) << std::setfill('0') << int{c};
  return os.str();
}

/// Parses config text; syntax errors become ConfigInvalid with line and column.
inline json parse_config_text(const std::string& text, const std::string& origin = "config") {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, column = 0;
    const std::size_t end = std::min<std::size_t>(e.byte, text.size());
    for (std::size_t i = 0; i < end; ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 0;
      } else {
        ++column;
      }
    }
    throw Error(ErrorCode::ConfigInvalid, origin + ":" + std::to_string(line) + ":" +
                                              std::to_string(std::max<std::size_t>(column, 1)) +
                                              ": malformed JSON (" + e.what() + ")");
  }
}

inline json load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::ConfigInvalid, "cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

// ---------------------------------------------------------------------------
// Typed experiment configs

struct OracleSpec {
  std::size_t rho_index = 0;
  std::size_t pool = 10000;
  std::size_t samples = 5000;
  int permutations = 200;
};

struct GapSampleSpec {
  std::vector<DensityMatrix> rhos;
  std::size_t samples = 100000;
  std::optional<OracleSpec> oracle;
  bool dump_samples = false;
};

struct TheoremCase {
  std::string name;
  DensityMatrix rho;
  DiscreteInstrument instrument;
};

struct InstrumentPushforwardSpec {
  std::size_t pairs = 20;
  std::vector<Index> dims{2, 4};
  std::size_t outcomes = 3;
  std::size_t samples = 100000;
};

struct TheoremSpec {
  std::vector<TheoremCase> cases;
  std::size_t trials = 100000;
  StatThresholds thresholds;
  bool mixture = true;
  std::optional<InstrumentPushforwardSpec> pushforward;
};

struct FixedHistorySpec {
  std::size_t count = 5;  // histories or noise fields
  std::size_t samples = 100000;
};

struct GrwDecoherenceSpec {
  std::vector<double> times;
  std::size_t trajectories = 10000;
  Index a = 0;
  Index b = 1;
};

struct GrwSpec {
  GrwConfig cfg;
  UnitState psi0;
  std::size_t completeness_histories = 10000;
  std::size_t importance_histories = 40000;  // state-independent proposal, higher variance
  std::size_t trajectories = 10000;
  double master_dt = 0.0;  // 0 selects the largest stable step
  std::optional<GrwDecoherenceSpec> decoherence;
  std::size_t footnote_histories = 1000;
  std::optional<FixedHistorySpec> pushforward;
  bool dump_histories = false;
};

struct CslNormalizationSpec {
  std::size_t noises = 10000;
  int refine = 4;
};

struct CslEnsembleSpec {
  std::size_t count = 10000;
  std::size_t pool = 100000;
  std::size_t reference_noises = 20000;  // channel check only
  Index a = 0;
  Index b = 1;  // decoherence pair
};

struct CslSpec {
  CslConfig cfg;
  UnitState psi0;
  std::optional<CslNormalizationSpec> normalization;
  std::optional<CslEnsembleSpec> decoherence;
  std::optional<CslEnsembleSpec> channel;
  std::optional<FixedHistorySpec> pushforward;
  bool dump_noise = false;
};

struct MasterEqSpec {
  GrwConfig cfg;
  DensityMatrix rho0;
  std::vector<double> times;
  double dt = 0.0;
};

struct ExperimentConfig {
  std::string kind;
  std::uint64_t master_seed = 0;
  json echo;  // effective config, seed override applied
  std::variant<GapSampleSpec, TheoremSpec, GrwSpec, CslSpec, MasterEqSpec> spec;
};

namespace detail {

inline std::size_t count_field(const json& j, const char* key, std::size_t fallback) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 1) {
    throw Error(ErrorCode::ConfigInvalid, std::string("'") + key + "' must be an integer >= 1");
  }
  return v.get<std::size_t>();
}

inline const json& block(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_object()) {
    throw Error(ErrorCode::ConfigInvalid, std::string("missing object '") + key + "'");
  }
  return j.at(key);
}

/// Deterministic source of randomness used while interpreting a config
/// (random density matrices, random instruments, random initial states).
class SetupStreams {
 public:
  explicit SetupStreams(std::uint64_t seed) : base_(seed, 1) {}
  RngStream next() { return base_.substream(used_++); }

 private:
  RngStream base_;
  std::uint64_t used_ = 0;
};

/// Density matrix spec: a matrix, or {"maximally_mixed": d}, {"diag": [...]},
/// {"random": d}, {"pure": vector}.
inline DensityMatrix density_from_spec(const json& j, SetupStreams& setup) {
  if (j.is_array()) return validate_density(io::matrix_from_json(j));
  if (!j.is_object()) throw Error(ErrorCode::ConfigInvalid, "density spec must be a matrix or object");
  if (j.contains("maximally_mixed")) return maximally_mixed(j.at("maximally_mixed").get<Index>());
  if (j.contains("diag")) {
    const auto d = j.at("diag").get<std::vector<double>>();
    RVector v = Eigen::Map<const RVector>(d.data(), static_cast<Index>(d.size()));
    return validate_density(v.cast<cplx>().asDiagonal());
  }
  if (j.contains("random")) {
    RngStream rng = setup.next();
    return random_density_matrix(j.at("random").get<Index>(), rng);
  }
  if (j.contains("pure")) return pure_projector(UnitState::normalize(io::vector_from_json(j.at("pure"))));
  throw Error(ErrorCode::ConfigInvalid, "unknown density spec " + j.dump());
}

/// State spec: a vector, {"basis": k}, {"superposition": [k, ...]}, {"random": true}.
inline UnitState state_from_spec(const json& j, Index d, SetupStreams& setup) {
  UnitState out;
  if (j.is_array()) {
    out = UnitState::normalize(io::vector_from_json(j));
  } else if (j.is_object() && j.contains("basis")) {
    out = UnitState::basis(d, j.at("basis").get<Index>());
  } else if (j.is_object() && j.contains("superposition")) {
    CVector v = CVector::Zero(d);
    for (const auto& k : j.at("superposition")) v(k.get<Index>()) = 1.0;
    out = UnitState::normalize(v);
  } else if (j.is_object() && j.contains("random")) {
    RngStream rng = setup.next();
    CVector v(d);
    for (Index k = 0; k < d; ++k) v(k) = rng.complex_normal();
    out = UnitState::normalize(v);
  } else {
    throw Error(ErrorCode::ConfigInvalid, "unknown state spec " + j.dump());
  }
  if (out.dim() != d) throw Error(ErrorCode::ConfigInvalid, "initial state has wrong dimension");
  return out;
}

/// Instrument spec: {"type": "projective" | "computational" | "amplitude_damping"
/// | "random" | "file" | "explicit", ...}.
inline DiscreteInstrument instrument_from_spec(const json& j, SetupStreams& setup,
                                               const std::filesystem::path& base_dir) {
  const std::string type = j.value("type", j.contains("operators") ? "explicit" : "");
  if (type == "projective") {
    std::vector<CMatrix> ps;
    for (const auto& p : j.at("projectors")) ps.push_back(io::matrix_from_json(p));
    std::vector<std::string> labels;
    if (j.contains("labels")) labels = j.at("labels").get<std::vector<std::string>>();
    return projective_instrument(std::move(ps), std::move(labels));
  }
  if (type == "computational") return computational_basis_instrument(j.at("dim").get<Index>());
  if (type == "amplitude_damping") return amplitude_damping_instrument(j.at("eta").get<double>());
  if (type == "random") {
    RngStream rng = setup.next();
    return random_instrument(j.at("dim").get<Index>(), j.at("outcomes").get<std::size_t>(), rng);
  }
  if (type == "file") {
    std::filesystem::path p = j.at("path").get<std::string>();
    if (p.is_relative()) p = base_dir / p;
    if (!std::filesystem::exists(p)) {
      throw Error(ErrorCode::ConfigInvalid, "instrument file not found: " + p.string());
    }
    return load_instrument(p.string());
  }
  if (type == "explicit") return instrument_from_json(j);
  throw Error(ErrorCode::ConfigInvalid, "unknown instrument type '" + type + "'");
}

inline std::optional<FixedHistorySpec> fixed_history_spec(const json& j, const char* count_key) {
  if (!j.contains("pushforward")) return std::nullopt;
  const json& p = block(j, "pushforward");
  FixedHistorySpec s;
  s.count = count_field(p, count_key, s.count);
  s.samples = count_field(p, "samples", s.samples);
  return s;
}

inline GapSampleSpec parse_gap_sample(const json& j, SetupStreams& setup) {
  GapSampleSpec s;
  if (j.contains("rhos")) {
    for (const auto& r : j.at("rhos")) s.rhos.push_back(density_from_spec(r, setup));
  } else if (j.contains("rho")) {
    s.rhos.push_back(density_from_spec(j.at("rho"), setup));
  }
  if (s.rhos.empty()) throw Error(ErrorCode::ConfigInvalid, "gap-sample needs 'rho' or 'rhos'");
  s.samples = count_field(j, "samples", s.samples);
  if (s.samples < 2) throw Error(ErrorCode::ConfigInvalid, "'samples' must be >= 2");
  if (j.contains("oracle")) {
    const json& o = block(j, "oracle");
    OracleSpec os;
    os.rho_index = o.value("rho_index", std::size_t{0});
    os.pool = count_field(o, "pool", os.pool);
    os.samples = count_field(o, "samples", os.samples);
    os.permutations = static_cast<int>(count_field(o, "permutations", 200));
    if (os.rho_index >= s.rhos.size()) throw Error(ErrorCode::ConfigInvalid, "oracle.rho_index out of range");
    if (os.pool < 1000) throw Error(ErrorCode::ConfigInvalid, "oracle.pool must be >= 1000");
    if (os.samples < 100) throw Error(ErrorCode::ConfigInvalid, "oracle.samples must be >= 100");
    if (os.permutations < 200) throw Error(ErrorCode::ConfigInvalid, "oracle.permutations must be >= 200");
    s.oracle = os;
  }
  s.dump_samples = j.value("dump_samples", false);
  return s;
}

inline TheoremSpec parse_theorem(const json& j, SetupStreams& setup, const std::filesystem::path& base_dir) {
  TheoremSpec s;
  std::vector<json> cases;
  if (j.contains("cases")) {
    for (const auto& c : j.at("cases")) cases.push_back(c);
  } else if (j.contains("instrument")) {
    json c = {{"instrument", j.at("instrument")}};
    if (j.contains("rho")) c["rho"] = j.at("rho");
    cases.push_back(std::move(c));
  }
  for (std::size_t k = 0; k < cases.size(); ++k) {
    const json& c = cases[k];
    DiscreteInstrument inst = instrument_from_spec(block(c, "instrument"), setup, base_dir);
    DensityMatrix rho = c.contains("rho") ? density_from_spec(c.at("rho"), setup)
                                          : maximally_mixed(inst.dim());
    if (rho.dim() != inst.dim()) {
      throw Error(ErrorCode::ConfigInvalid, "case " + std::to_string(k) + ": rho and instrument differ in dimension");
    }
    s.cases.push_back({c.value("name", "case" + std::to_string(k)), std::move(rho), std::move(inst)});
  }
  s.trials = count_field(j, "trials", s.trials);
  s.thresholds.p_value = j.value("p_value", s.thresholds.p_value);
  s.thresholds.moment_factor = j.value("moment_factor", s.thresholds.moment_factor);
  s.thresholds.marginal_factor = j.value("marginal_factor", s.thresholds.marginal_factor);
  s.thresholds.bucket_threshold = count_field(j, "bucket_threshold", s.thresholds.bucket_threshold);
  s.thresholds.permutations = static_cast<int>(count_field(j, "permutations", 200));
  if (s.thresholds.permutations < 200) throw Error(ErrorCode::ConfigInvalid, "'permutations' must be >= 200");
  s.mixture = j.value("mixture", true);
  if (j.contains("pushforward")) {
    const json& p = block(j, "pushforward");
    InstrumentPushforwardSpec ps;
    ps.pairs = count_field(p, "pairs", ps.pairs);
    ps.samples = count_field(p, "samples", ps.samples);
    ps.outcomes = count_field(p, "outcomes", ps.outcomes);
    if (p.contains("dims")) ps.dims = p.at("dims").get<std::vector<Index>>();
    if (ps.dims.empty()) throw Error(ErrorCode::ConfigInvalid, "pushforward.dims is empty");
    s.pushforward = ps;
  }
  if (s.cases.empty() && !s.pushforward) {
    throw Error(ErrorCode::ConfigInvalid, "theorem needs 'instrument', 'cases' or 'pushforward'");
  }
  return s;
}

inline GrwSpec parse_grw(const json& j, SetupStreams& setup) {
  GrwSpec s;
  s.cfg = grw_config_from_json(block(j, "grw"));
  s.psi0 = state_from_spec(j.value("psi0", json{{"random", true}}), s.cfg.dim(), setup);
  s.completeness_histories = count_field(j, "completeness_histories", s.completeness_histories);
  s.importance_histories = count_field(j, "importance_histories", 4 * s.completeness_histories);
  s.trajectories = count_field(j, "trajectories", s.trajectories);
  if (s.trajectories < 2) throw Error(ErrorCode::ConfigInvalid, "'trajectories' must be >= 2");
  s.master_dt = j.value("master_dt", 0.0);
  if (j.contains("decoherence")) {
    const json& d = block(j, "decoherence");
    GrwDecoherenceSpec ds;
    ds.times = d.at("times").get<std::vector<double>>();
    ds.trajectories = count_field(d, "trajectories", ds.trajectories);
    if (d.contains("pair")) {
      const auto p = d.at("pair").get<std::vector<Index>>();
      if (p.size() != 2) throw Error(ErrorCode::ConfigInvalid, "decoherence.pair needs two indices");
      ds.a = p[0];
      ds.b = p[1];
    }
    if (ds.a == ds.b || ds.a < 0 || ds.b < 0 || ds.a >= s.cfg.dim() || ds.b >= s.cfg.dim()) {
      throw Error(ErrorCode::ConfigInvalid, "decoherence.pair must be two distinct basis indices");
    }
    for (double t : ds.times) {
      if (!(t > 0.0)) throw Error(ErrorCode::ConfigInvalid, "decoherence times must be > 0");
    }
    s.decoherence = ds;
  }
  s.footnote_histories = count_field(j, "footnote_histories", s.footnote_histories);
  s.pushforward = fixed_history_spec(j, "histories");
  s.dump_histories = j.value("dump_histories", false);
  return s;
}

inline CslEnsembleSpec csl_ensemble_spec(const json& b, Index d) {
  CslEnsembleSpec e;
  e.count = count_field(b, "count", e.count);
  e.pool = count_field(b, "pool", 10 * e.count);
  e.reference_noises = count_field(b, "reference_noises", e.reference_noises);
  if (e.count < 2) throw Error(ErrorCode::ConfigInvalid, "'count' must be >= 2");
  if (e.pool < 10 * e.count) throw Error(ErrorCode::ConfigInvalid, "'pool' must be >= 10 * count");
  e.b = d - 1;
  if (b.contains("pair")) {
    const auto p = b.at("pair").get<std::vector<Index>>();
    if (p.size() != 2) throw Error(ErrorCode::ConfigInvalid, "pair needs two indices");
    e.a = p[0];
    e.b = p[1];
  }
  if (e.a == e.b || e.a < 0 || e.b < 0 || e.a >= d || e.b >= d) {
    throw Error(ErrorCode::ConfigInvalid, "pair must be two distinct basis indices");
  }
  return e;
}

inline CslSpec parse_csl(const json& j, SetupStreams& setup) {
  CslSpec s;
  s.cfg = csl_config_from_json(block(j, "csl"));
  const Index d = s.cfg.dim();
  s.psi0 = state_from_spec(j.value("psi0", json{{"random", true}}), d, setup);
  if (j.contains("normalization")) {
    const json& n = block(j, "normalization");
    CslNormalizationSpec ns;
    ns.noises = count_field(n, "noises", ns.noises);
    ns.refine = static_cast<int>(count_field(n, "refine", 4));
    s.normalization = ns;
  }
  if (j.contains("decoherence")) s.decoherence = csl_ensemble_spec(block(j, "decoherence"), d);
  if (j.contains("channel")) s.channel = csl_ensemble_spec(block(j, "channel"), d);
  s.pushforward = fixed_history_spec(j, "noises");
  s.dump_noise = j.value("dump_noise", false);
  return s;
}

inline MasterEqSpec parse_master_eq(const json& j, SetupStreams& setup) {
  GrwConfig cfg = grw_config_from_json(block(j, "grw"));
  MasterEqSpec s{cfg, density_from_spec(j.at("rho0"), setup), {}, 0.0};
  if (s.rho0.dim() != s.cfg.dim()) throw Error(ErrorCode::ConfigInvalid, "rho0 has wrong dimension");
  s.times = j.value("times", std::vector<double>{s.cfg.tau});
  if (s.times.empty()) throw Error(ErrorCode::ConfigInvalid, "'times' is empty");
  for (double t : s.times) {
    if (!(t > 0.0)) throw Error(ErrorCode::ConfigInvalid, "times must be > 0");
  }
  const double limit = master_equation_max_step(s.cfg);
  s.dt = j.value("dt", std::isfinite(limit) ? limit : 0.01);
  if (!(s.dt > 0.0) || s.dt > limit * (1.0 + 1e-12)) {
    throw Error(ErrorCode::ConfigInvalid, "dt must be in (0, " + std::to_string(limit) + "]");
  }
  return s;
}

}  // namespace detail

/// Interprets a config object. `kind_hint` (the CLI subcommand) fills in a
/// missing "kind" and must agree with a present one; `seed_override`
/// replaces "master_seed". Relative file references resolve against base_dir.
inline ExperimentConfig parse_experiment(json config, const std::string& kind_hint = "",
                                         std::optional<std::uint64_t> seed_override = std::nullopt,
                                         const std::filesystem::path& base_dir = ".") {
  if (!config.is_object()) throw Error(ErrorCode::ConfigInvalid, "config must be a JSON object");
  try {
    if (!config.contains("kind")) {
      if (kind_hint.empty()) throw Error(ErrorCode::ConfigInvalid, "config has no 'kind'");
      config["kind"] = kind_hint;
    }
    const std::string kind = config.at("kind").get<std::string>();
    if (!kind_hint.empty() && kind != kind_hint) {
      throw Error(ErrorCode::ConfigInvalid, "config kind '" + kind + "' does not match '" + kind_hint + "'");
    }
    if (seed_override) config["master_seed"] = *seed_override;
    const json seed = config.value("master_seed", json());
    if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<std::int64_t>() >= 0)) {
      throw Error(ErrorCode::ConfigInvalid, "'master_seed' must be a non-negative integer (or pass --seed)");
    }
    ExperimentConfig out;
    out.kind = kind;
    out.master_seed = config.at("master_seed").get<std::uint64_t>();
    out.echo = config;
    detail::SetupStreams setup(out.master_seed);
    if (kind == "gap-sample") {
      out.spec = detail::parse_gap_sample(config, setup);
    } else if (kind == "theorem") {
      out.spec = detail::parse_theorem(config, setup, base_dir);
    } else if (kind == "grw") {
      out.spec = detail::parse_grw(config, setup);
    } else if (kind == "csl") {
      out.spec = detail::parse_csl(config, setup);
    } else if (kind == "master-eq") {
      out.spec = detail::parse_master_eq(config, setup);
    } else {
      throw Error(ErrorCode::ConfigInvalid, "unknown experiment kind '" + kind + "'");
    }
    return out;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("config: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ConfigInvalid) throw;
    throw Error(ErrorCode::ConfigInvalid, std::string("config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Reports

struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::string out_dir;  // empty: no files written
  unsigned threads = 1;
};

struct RunReport {
  json body = json::object();     // identical for identical config and seed
  json runtime = json::object();  // wall clock and worker count

  bool passed() const { return body.value("passed", false); }

  json to_json() const {
    json j = body;
    j["runtime"] = runtime;
    return j;
  }

  /// Names of the failing tests, for error messages.
  std::vector<std::string> failures() const {
    std::vector<std::string> out;
    if (!body.contains("tests")) return out;
    for (const auto& t : body.at("tests")) {
      if (t.at("verdict") != "pass") out.push_back(t.at("name").get<std::string>());
    }
    return out;
  }
};

/// Writes body["plot"] as CSV. A report without plot rows gives a header-only
/// file.
inline void emit_plot_data(const RunReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path);
  const json plot = report.body.value("plot", json::object());
  const json columns = plot.value("columns", json::array());
  for (std::size_t c = 0; c < columns.size(); ++c) out << (c ? "," : "") << columns[c].get<std::string>();
  out << '\n';
  for (const auto& row : plot.value("rows", json::array())) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out << ',';
      const json& v = row[c];
      if (v.is_string()) {
        out << v.get<std::string>();
      } else if (!v.is_null()) {
        out << v.dump();
      }
    }
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::IoFailure, "failed writing " + path);
}

namespace detail {

class Tests {
 public:
  void at_most(const std::string& name, double value, double tolerance) {
    add(name, value, tolerance, "<=", value <= tolerance);
  }
  void above(const std::string& name, double value, double threshold) {
    add(name, value, threshold, ">", value > threshold);
  }
  void below(const std::string& name, double value, double threshold) {
    add(name, value, threshold, "<", value < threshold);
  }
  void flag(const std::string& name, bool ok) { add(name, ok ? 1.0 : 0.0, 1.0, "==", ok); }

  json entries = json::array();
  bool passed = true;

 private:
  void add(const std::string& name, double value, double tolerance, const char* cmp, bool ok) {
    // NaN never passes
    ok = ok && !std::isnan(value);
    entries.push_back({{"name", name},
                       {"value", value},
                       {"tolerance", tolerance},
                       {"comparison", cmp},
                       {"verdict", ok ? "pass" : "fail"}});
    passed = passed && ok;
  }
};

struct Context {
  RngStream base;
  Workers workers;
  std::filesystem::path out_dir;  // empty: no dumps
  json results = json::object();
  json plot = {{"columns", json::array()}, {"rows", json::array()}};
  Tests tests;

  std::ofstream dump(const std::string& name) const {
    std::ofstream f(out_dir / name, std::ios::binary);
    if (!f) throw Error(ErrorCode::IoFailure, "cannot write " + (out_dir / name).string());
    return f;
  }
};

inline json estimate_json(const CompletenessEstimate& e) {
  return {{"mean", e.mean}, {"standard_error", e.standard_error}, {"count", e.count}};
}

inline void run_gap_sample(const GapSampleSpec& s, Context& ctx) {
  ctx.plot["columns"] = {"rho_index", "row", "col", "empirical_re", "empirical_im", "target_re", "target_im"};
  json per_rho = json::array();
  for (std::size_t r = 0; r < s.rhos.size(); ++r) {
    const DensityMatrix& rho = s.rhos[r];
    const auto batch = sample_gap_batch(rho, s.samples, ctx.base.substream(r), ctx.workers);
    const auto rep = empirical_density(batch.states, rho.matrix());
    const double tol = 5.0 / std::sqrt(static_cast<double>(s.samples));
    ctx.tests.at_most("second_moment[" + std::to_string(r) + "]", *rep.frobenius_to_target, tol);
    per_rho.push_back({{"dim", rho.dim()},
                       {"rho", io::to_json(rho.matrix())},
                       {"empirical_second_moment", io::to_json(rep.second_moment)},
                       {"frobenius_to_rho", *rep.frobenius_to_target}});
    for (Index a = 0; a < rho.dim(); ++a)
      for (Index b = 0; b < rho.dim(); ++b)
        ctx.plot["rows"].push_back({r, a, b, rep.second_moment(a, b).real(), rep.second_moment(a, b).imag(),
                                    rho.matrix()(a, b).real(), rho.matrix()(a, b).imag()});
    if (r == 0 && !ctx.out_dir.empty() && s.dump_samples) {
      auto f = ctx.dump("samples.csv");
      write_batch_csv(batch.states, f);
    }
  }
  ctx.results["second_moments"] = std::move(per_rho);
  if (s.oracle) {
    const OracleSpec& o = *s.oracle;
    const DensityMatrix& rho = s.rhos[o.rho_index];
    const RngStream stream = ctx.base.substream(1000);
    const auto exact = sample_gap_batch(rho, o.samples, stream.substream(0), ctx.workers);
    const auto oracle = sample_gap_oracle_batch(rho, o.samples, o.pool, stream.substream(1), ctx.workers);
    const auto t = mmd_two_sample(exact.states, oracle, o.permutations, stream.substream(2), ctx.workers);
    ctx.tests.above("oracle_two_sample_p", t.permutation_p, 0.01);
    ctx.results["oracle"] = {{"rho_index", o.rho_index},
                             {"pool", o.pool},
                             {"samples", o.samples},
                             {"mmd", t.mmd_statistic},
                             {"p_value", t.permutation_p},
                             {"permutations", t.permutations}};
  }
}

inline void run_theorem(const TheoremSpec& s, Context& ctx) {
  ctx.plot["columns"] = {"case", "label", "count", "expected_count", "p_value", "frobenius_to_posterior",
                         "moment_tolerance"};
  json cases = json::object();
  for (std::size_t k = 0; k < s.cases.size(); ++k) {
    const TheoremCase& c = s.cases[k];
    const RngStream stream = ctx.base.substream(k);
    const TheoremReport rep = theorem_suite(c.rho, c.instrument, s.trials, stream.substream(0),
                                            s.thresholds, ctx.workers);
    json entry = {{"labels", to_json(rep)}, {"trials", rep.trials}, {"instrument", to_json(c.instrument)},
                  {"rho", io::to_json(c.rho.matrix())}};
    for (const auto& l : rep.labels) {
      const std::string prefix = c.name + "/" + l.label;
      ctx.tests.at_most(prefix + "/marginal", l.marginal_deviation, s.thresholds.marginal_factor);
      if (l.tested) {
        ctx.tests.above(prefix + "/p_value", l.two_sample->permutation_p, s.thresholds.p_value);
        ctx.tests.at_most(prefix + "/moment", *l.moments->frobenius_to_target, l.moment_tolerance);
      }
      ctx.plot["rows"].push_back(
          {c.name, l.label, l.count, l.expected_count,
           l.two_sample ? json(l.two_sample->permutation_p) : json(),
           l.moments && l.moments->frobenius_to_target ? json(*l.moments->frobenius_to_target) : json(),
           l.moment_tolerance});
    }
    if (s.mixture) {
      const double dist = mixture_check(c.rho, c.instrument, s.trials, stream.substream(1), ctx.workers);
      const double tol = s.thresholds.moment_tolerance(s.trials);
      ctx.tests.at_most(c.name + "/mixture", dist, tol);
      entry["mixture_distance"] = dist;
    }
    cases[c.name] = std::move(entry);
  }
  ctx.results["cases"] = std::move(cases);

  if (s.pushforward) {
    const auto& p = *s.pushforward;
    const RngStream stream = ctx.base.substream(5000);
    json pairs = json::array();
    double worst = 0.0;
    const double tol = 5.0 / std::sqrt(static_cast<double>(p.samples));
    for (std::size_t k = 0; k < p.pairs; ++k) {
      const Index d = p.dims[k % p.dims.size()];
      RngStream setup = stream.substream(2 * k);
      const DensityMatrix rho = random_density_matrix(d, setup);
      const DiscreteInstrument inst = random_instrument(d, p.outcomes, setup);
      const auto rep = pushforward_identity_check(rho, inst.op(0), p.samples, stream.substream(2 * k + 1),
                                                  ctx.workers);
      worst = std::max(worst, rep.normalized_discrepancy);
      pairs.push_back({{"dim", d},
                       {"branch_weight", rep.branch_weight},
                       {"max_abs_discrepancy", rep.max_abs_discrepancy},
                       {"normalized_discrepancy", rep.normalized_discrepancy}});
    }
    ctx.tests.at_most("pushforward_identity", worst, tol);
    ctx.results["pushforward"] = {{"pairs", std::move(pairs)}, {"samples", p.samples}, {"tolerance", tol}};
  }
}

/// Samples a history with at least one collapse (histories with none make
/// L(x) unitary), unless the collapse rate is zero.
inline GrwHistory sample_nontrivial_history(const GrwModel& model, RngStream& rng) {
  const Index d = model.dim();
  for (int attempt = 0; attempt < 10000; ++attempt) {
    CVector v(d);
    for (Index k = 0; k < d; ++k) v(k) = rng.complex_normal();
    const auto tr = sample_history(UnitState::normalize(v), model, rng);
    if (!tr.history.empty() || model.config().total_rate() == 0.0) return tr.history;
  }
  throw Error(ErrorCode::ExperimentFailed, "could not sample a history with a collapse");
}

inline void run_grw(const GrwSpec& s, Context& ctx) {
  const GrwConfig& cfg = s.cfg;
  const GrwModel model(cfg);
  const Index d = model.dim();
  const bool trivial = cfg.total_rate() == 0.0;
  ctx.results["trivial_regime"] = trivial;
  ctx.results["dim"] = d;

  // Completeness under the default convention, with the literal variant reported.
  GrwConfig def_cfg = cfg;
  def_cfg.paper_literal_mu = false;
  GrwConfig lit_cfg = cfg;
  lit_cfg.paper_literal_mu = true;
  const GrwModel def_model(def_cfg), lit_model(lit_cfg);
  const RngStream cs = ctx.base.substream(0);
  const auto seq = completeness_sequential(s.psi0, def_model, s.completeness_histories, cs.substream(0), ctx.workers);
  const auto imp = completeness_importance(s.psi0, def_model, s.importance_histories, cs.substream(1), ctx.workers);
  ctx.tests.at_most("completeness_sequential", std::abs(seq.mean - 1.0), 0.02);
  // The state-independent proposal has heavy-tailed weights, so this
  // cross-check is gated in standard errors rather than absolutely. The floor
  // keeps roundoff-level spread (lambda = 0: every weight is 1) from counting.
  const double imp_z = std::abs(imp.mean - 1.0) / std::max(imp.standard_error, 1e-12);
  ctx.tests.at_most("completeness_importance_z", imp_z, 4.0);
  const auto lseq = completeness_sequential(s.psi0, lit_model, s.completeness_histories, cs.substream(0), ctx.workers);
  const auto limp = completeness_importance(s.psi0, lit_model, s.importance_histories, cs.substream(1), ctx.workers);
  const double r = cfg.total_rate() * cfg.tau;
  ctx.results["completeness"] = {
      {"default", {{"sequential", estimate_json(seq)}, {"importance", estimate_json(imp)}}},
      {"literal",
       {{"sequential", estimate_json(lseq)},
        {"importance", estimate_json(limp)},
        {"deviation_from_one", lseq.mean - 1.0},
        {"closed_form_mass", r - 1.0 + 2.0 * std::exp(-r)}}}};

  // Trajectory ensemble against the master equation.
  std::vector<GrwTrajectory> trajs(s.trajectories);
  const RngStream ts = ctx.base.substream(1);
  parallel_for(s.trajectories, ctx.workers, [&](std::size_t j) {
    RngStream rng = ts.substream(j);
    trajs[j] = sample_history(s.psi0, model, rng);
  });
  CMatrix emp = CMatrix::Zero(d, d);
  double events = 0.0;
  for (const auto& t : trajs) {
    emp.noalias() += t.final_state.amplitudes() * t.final_state.amplitudes().adjoint();
    events += static_cast<double>(t.history.size());
  }
  emp /= static_cast<double>(s.trajectories);
  const double dt = s.master_dt > 0.0 ? s.master_dt : master_equation_max_step(cfg);
  const double dt_used = std::isfinite(dt) ? dt : cfg.tau;
  const DensityMatrix me = master_equation_evolve(pure_projector(s.psi0), cfg, dt_used);
  const double remark2 = frobenius_distance(emp, me.matrix());
  ctx.tests.at_most("ensemble_vs_master_equation", remark2, 0.05);
  ctx.results["ensemble"] = {{"trajectories", s.trajectories},
                             {"mean_events", events / static_cast<double>(s.trajectories)},
                             {"expected_events", r},
                             {"frobenius_to_master_equation", remark2},
                             {"master_equation_dt", dt_used},
                             {"master_equation_rho", io::to_json(me.matrix())}};
  if (trivial) {
    const CVector target = model.propagator().apply(s.psi0.amplitudes(), cfg.tau);
    double worst = 0.0;
    for (const auto& t : trajs) {
      worst = std::max(worst, (t.final_state.amplitudes() - target).norm());
      if (!t.history.empty()) worst = std::numeric_limits<double>::infinity();
    }
    ctx.tests.at_most("unitary_final_state", worst, 1e-9);
    const CMatrix u = model.propagator().matrix(cfg.tau);
    const CMatrix rho_u = u * pure_projector(s.psi0).matrix() * u.adjoint();
    ctx.tests.at_most("unitary_master_equation", frobenius_distance(me.matrix(), rho_u), 1e-8);
  }
  if (!ctx.out_dir.empty() && s.dump_histories) {
    auto f = ctx.dump("histories.csv");
    write_history_csv_header(f);
    for (std::size_t j = 0; j < trajs.size(); ++j) write_history_csv_rows(j, trajs[j].history, f);
  }
  trajs.clear();

  // Off-diagonal decay for H = 0 from a two-site superposition.
  ctx.plot["columns"] = {"t", "abs_rho", "analytic_prediction", "master_equation"};
  if (s.decoherence) {
    const auto& dc = *s.decoherence;
    GrwConfig h0 = cfg;
    h0.hamiltonian = CMatrix::Zero(d, d);
    CVector v = CVector::Zero(d);
    v(dc.a) = v(dc.b) = 1.0;
    const UnitState psi = UnitState::normalize(v);
    json rows = json::array();
    double worst = 0.0;
    for (std::size_t k = 0; k < dc.times.size(); ++k) {
      GrwConfig ct = h0;
      ct.tau = dc.times[k];
      const GrwModel mt(ct);
      const RngStream st = ctx.base.substream(2).substream(k);
      const CMatrix rho_t = accumulate_outer(dc.trajectories, d, st, ctx.workers,
                                             [&](std::size_t, RngStream& rng) {
                                               return sample_history(psi, mt, rng).final_state.amplitudes();
                                             }) /
                            static_cast<double>(dc.trajectories);
      const double analytic = 0.5 * grw_coherence_factor(ct, dc.a, dc.b, ct.tau);
      const double limit = master_equation_max_step(ct);
      const DensityMatrix me_t =
          master_equation_evolve(pure_projector(psi), ct, std::isfinite(limit) ? limit : ct.tau);
      const double observed = std::abs(rho_t(dc.a, dc.b));
      const double rel = std::abs(observed - analytic) / analytic;
      worst = std::max(worst, rel);
      rows.push_back({{"t", ct.tau},
                      {"abs_rho", observed},
                      {"analytic_prediction", analytic},
                      {"master_equation", std::abs(me_t.matrix()(dc.a, dc.b))},
                      {"relative_error", rel}});
      ctx.plot["rows"].push_back({ct.tau, observed, analytic, std::abs(me_t.matrix()(dc.a, dc.b))});
    }
    ctx.tests.at_most("decoherence_relative_error", worst, 0.05);
    ctx.results["decoherence"] = {{"pair", {dc.a, dc.b}}, {"trajectories", dc.trajectories}, {"points", rows}};
  }

  // Footnote equivalence on sampled histories.
  {
    const RngStream fs = ctx.base.substream(3);
    std::vector<double> diffs(s.footnote_histories);
    std::vector<std::size_t> sizes(s.footnote_histories);
    parallel_for(s.footnote_histories, ctx.workers, [&](std::size_t j) {
      RngStream rng = fs.substream(j);
      const auto tr = sample_history(s.psi0, model, rng);
      diffs[j] = footnote_equivalence_check(tr.history, s.psi0, model);
      sizes[j] = tr.history.size();
    });
    double worst = 0.0;
    std::size_t max_events = 0;
    for (std::size_t j = 0; j < diffs.size(); ++j) {
      worst = std::max(worst, diffs[j]);
      max_events = std::max(max_events, sizes[j]);
    }
    ctx.tests.below("footnote_equivalence", worst, 1e-9);
    ctx.results["footnote"] = {{"histories", s.footnote_histories},
                               {"max_abs_log_difference", worst},
                               {"max_events", max_events}};
  }

  if (s.pushforward) {
    const auto& p = *s.pushforward;
    const RngStream ps = ctx.base.substream(4);
    const double tol = 5.0 / std::sqrt(static_cast<double>(p.samples));
    json items = json::array();
    double worst = 0.0;
    for (std::size_t k = 0; k < p.count; ++k) {
      RngStream setup = ps.substream(2 * k);
      const GrwHistory hist = sample_nontrivial_history(model, setup);
      const DensityMatrix rho = random_density_matrix(d, setup);
      const auto rep = pushforward_identity_check(rho, history_operator(hist, model), p.samples,
                                                  ps.substream(2 * k + 1), ctx.workers);
      worst = std::max(worst, rep.normalized_discrepancy);
      items.push_back({{"events", hist.size()},
                       {"branch_weight", rep.branch_weight},
                       {"max_abs_discrepancy", rep.max_abs_discrepancy},
                       {"normalized_discrepancy", rep.normalized_discrepancy}});
    }
    ctx.tests.at_most("fixed_history_pushforward", worst, tol);
    ctx.results["pushforward"] = {{"histories", std::move(items)}, {"samples", p.samples}, {"tolerance", tol}};
  }
}

inline void run_csl(const CslSpec& s, Context& ctx) {
  const CslConfig& cfg = s.cfg;
  const CslModel model(cfg);
  const Index d = model.dim();
  ctx.results["dim"] = d;
  ctx.results["grid"] = {{"cells", cfg.cells}, {"cell_width", cfg.cell_width}, {"steps", cfg.steps()}};
  ctx.plot["columns"] = {"series", "x", "value", "reference"};

  if (s.normalization) {
    const auto& n = *s.normalization;
    json per_dt = json::array();
    for (int level = 0; level < 2; ++level) {
      CslConfig c = cfg;
      if (level == 1) c.dt = cfg.dt / n.refine;
      const CslModel m(c);
      std::vector<double> w(n.noises);
      const RngStream ns = ctx.base.substream(0).substream(static_cast<std::uint64_t>(level));
      parallel_for(n.noises, ctx.workers, [&](std::size_t j) {
        RngStream rng = ns.substream(j);
        w[j] = cooked_weight(s.psi0, sample_noise(c, rng), m);
      });
      const auto est = summarize_weights(w);
      ctx.tests.at_most(level == 0 ? "normalization_dt" : "normalization_dt_refined", std::abs(est.mean - 1.0), 0.03);
      per_dt.push_back({{"dt", c.dt}, {"estimate", estimate_json(est)}});
      ctx.plot["rows"].push_back({"mean_cooked_weight", c.dt, est.mean, 1.0});
      if (level == 0 && !ctx.out_dir.empty() && s.dump_noise) {
        RngStream rng = ns.substream(0);
        auto f = ctx.dump("noise.csv");
        write_noise_csv(sample_noise(c, rng), f);
      }
    }
    ctx.results["normalization"] = std::move(per_dt);
  }

  if (s.decoherence) {
    const auto& e = *s.decoherence;
    CslConfig h0 = cfg;
    h0.hamiltonian = CMatrix::Zero(d, d);
    const CslModel m0(h0);
    CVector v = CVector::Zero(d);
    v(e.a) = v(e.b) = 1.0;
    const DensityMatrix rho = pure_projector(UnitState::normalize(v));
    const auto samples = sample_cooked_ensemble(rho, m0, e.count, e.pool, ctx.base.substream(1), ctx.workers);
    std::vector<UnitState> states;
    states.reserve(samples.size());
    for (const auto& cs : samples) states.push_back(cs.state);
    const CMatrix emp = empirical_density(states).second_moment;
    const double analytic = 0.5 * csl_commuting_coherence_factor(h0, m0.density(), e.a, e.b, h0.tau);
    const double observed = std::abs(emp(e.a, e.b));
    const double rel = std::abs(observed - analytic) / analytic;
    ctx.tests.at_most("decoherence_relative_error", rel, 0.05);
    ctx.results["decoherence"] = {{"pair", {e.a, e.b}},      {"count", e.count},
                                  {"pool", e.pool},          {"abs_rho", observed},
                                  {"analytic_prediction", analytic}, {"relative_error", rel}};
    ctx.plot["rows"].push_back({"abs_offdiagonal", h0.tau, observed, analytic});
  }

  if (s.channel) {
    const auto& e = *s.channel;
    const DensityMatrix rho = pure_projector(s.psi0);
    const RngStream cs = ctx.base.substream(2);
    const auto samples = sample_cooked_ensemble(rho, model, e.count, e.pool, cs.substream(0), ctx.workers);
    std::vector<UnitState> states;
    for (const auto& c : samples) states.push_back(c.state);
    // E_raw[L rho L^dagger] from an independent set of raw noises.
    const RngStream rs = cs.substream(1);
    const std::size_t blocks = (e.reference_noises + 1023) / 1024;
    std::vector<CMatrix> partial(blocks, CMatrix::Zero(d, d));
    parallel_for(blocks, ctx.workers, [&](std::size_t b) {
      for (std::size_t i = b * 1024; i < std::min(e.reference_noises, (b + 1) * 1024); ++i) {
        RngStream rng = rs.substream(i);
        const CMatrix l = solution_operator(sample_noise(cfg, rng), model);
        partial[b] += l * rho.matrix() * l.adjoint();
      }
    });
    CMatrix channel = CMatrix::Zero(d, d);
    for (const auto& p : partial) channel += p;
    channel /= static_cast<double>(e.reference_noises);
    const double dist = *empirical_density(states, channel).frobenius_to_target;
    ctx.tests.at_most("cooked_second_moment_vs_channel", dist, 0.05);
    ctx.results["channel"] = {{"count", e.count}, {"pool", e.pool}, {"reference_noises", e.reference_noises},
                              {"frobenius", dist}};
  }

  if (s.pushforward) {
    const auto& p = *s.pushforward;
    const RngStream ps = ctx.base.substream(3);
    const double tol = 5.0 / std::sqrt(static_cast<double>(p.samples));
    json items = json::array();
    double worst = 0.0;
    for (std::size_t k = 0; k < p.count; ++k) {
      RngStream setup = ps.substream(2 * k);
      const NoiseField noise = sample_noise(cfg, setup);
      const DensityMatrix rho = random_density_matrix(d, setup);
      const auto rep = pushforward_identity_check(rho, solution_operator(noise, model), p.samples,
                                                  ps.substream(2 * k + 1), ctx.workers);
      worst = std::max(worst, rep.normalized_discrepancy);
      items.push_back({{"branch_weight", rep.branch_weight},
                       {"max_abs_discrepancy", rep.max_abs_discrepancy},
                       {"normalized_discrepancy", rep.normalized_discrepancy}});
    }
    ctx.tests.at_most("fixed_noise_pushforward", worst, tol);
    ctx.results["pushforward"] = {{"noises", std::move(items)}, {"samples", p.samples}, {"tolerance", tol}};
  }
}

inline void run_master_eq(const MasterEqSpec& s, Context& ctx) {
  const GrwConfig& cfg = s.cfg;
  const Index d = cfg.dim();
  const bool h_zero = cfg.hamiltonian.cwiseAbs().maxCoeff() == 0.0;
  ctx.plot["columns"] = {"t", "a", "b", "abs_rho", "analytic_prediction"};
  json points = json::array();
  double worst_trace = 0.0, worst_rel = 0.0, worst_unitary = 0.0;
  const HermitianPropagator prop(cfg.hamiltonian, cfg.hbar);
  for (double t : s.times) {
    const DensityMatrix r = master_equation_evolve(s.rho0, cfg, s.dt, t);
    worst_trace = std::max(worst_trace, std::abs(r.matrix().trace().real() - 1.0));
    if (cfg.lambda == 0.0) {
      const CMatrix u = prop.matrix(t);
      worst_unitary = std::max(worst_unitary, frobenius_distance(r.matrix(), u * s.rho0.matrix() * u.adjoint()));
    }
    for (Index a = 0; a < d; ++a) {
      for (Index b = a + 1; b < d; ++b) {
        json analytic;
        if (h_zero) {
          const double pred = std::abs(s.rho0.matrix()(a, b)) * grw_coherence_factor(cfg, a, b, t);
          analytic = pred;
          if (pred > 1e-12) worst_rel = std::max(worst_rel, std::abs(std::abs(r.matrix()(a, b)) - pred) / pred);
        }
        ctx.plot["rows"].push_back({t, a, b, std::abs(r.matrix()(a, b)), analytic});
      }
    }
    points.push_back({{"t", t}, {"rho", io::to_json(r.matrix())}});
  }
  ctx.tests.at_most("trace_preserved", worst_trace, 1e-8);
  if (h_zero) ctx.tests.at_most("analytic_decay_relative_error", worst_rel, 1e-6);
  if (cfg.lambda == 0.0) ctx.tests.at_most("unitary_evolution", worst_unitary, 1e-8);
  ctx.results["dt"] = s.dt;
  ctx.results["points"] = std::move(points);
}

}  // namespace detail

/// Runs a parsed experiment. Statistical failures are reported through the
/// verdicts; numerical breakdowns become ExperimentFailed.
inline RunReport run(const ExperimentConfig& exp, const RunOptions& opts = {}) {
  const auto start = std::chrono::steady_clock::now();
  detail::Context ctx{RngStream(exp.master_seed, 0), Workers{std::max(1u, opts.threads)}, {}};
  if (!opts.out_dir.empty()) {
    ctx.out_dir = opts.out_dir;
    std::error_code ec;
    std::filesystem::create_directories(ctx.out_dir, ec);
    if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + opts.out_dir + ": " + ec.message());
  }
  try {
    std::visit(
        [&](const auto& spec) {
          using T = std::decay_t<decltype(spec)>;
          if constexpr (std::is_same_v<T, GapSampleSpec>) detail::run_gap_sample(spec, ctx);
          if constexpr (std::is_same_v<T, TheoremSpec>) detail::run_theorem(spec, ctx);
          if constexpr (std::is_same_v<T, GrwSpec>) detail::run_grw(spec, ctx);
          if constexpr (std::is_same_v<T, CslSpec>) detail::run_csl(spec, ctx);
          if constexpr (std::is_same_v<T, MasterEqSpec>) detail::run_master_eq(spec, ctx);
        },
        exp.spec);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::IoFailure || e.code() == ErrorCode::ExperimentFailed) throw;
    throw Error(ErrorCode::ExperimentFailed,
                exp.kind + " experiment aborted: [" + std::string(to_string(e.code())) + "] " + e.what());
  }
  RunReport report;
  report.body = {{"kind", exp.kind},
                 {"master_seed", exp.master_seed},
                 {"config", exp.echo},
                 {"config_hash", config_hash(exp.echo)},
                 {"tests", ctx.tests.entries},
                 {"passed", ctx.tests.passed},
                 {"results", ctx.results},
                 {"plot", ctx.plot}};
  report.runtime = {
      {"threads", ctx.workers.threads},
      {"wall_clock_seconds",
       std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()}};
  if (!ctx.out_dir.empty()) {
    std::ofstream f(ctx.out_dir / "report.json", std::ios::binary);
    if (!f) throw Error(ErrorCode::IoFailure, "cannot write report.json");
    f << report.to_json().dump(2) << '\n';
    emit_plot_data(report, (ctx.out_dir / "plot.csv").string());
  }
  return report;
}

inline RunReport run(const json& config, const RunOptions& opts = {}, const std::string& kind_hint = "",
                     const std::filesystem::path& base_dir = ".") {
  return run(parse_experiment(config, kind_hint, opts.seed, base_dir), opts);
}

}  // namespace gapcollapse::harness

#endif  // GAPCOLLAPSE_HARNESS_HPP
