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

// gapcollapse command line tool.
//
//   gapcollapse <gap-sample|theorem|grw|csl|master-eq> --config FILE
//       [--seed N] [--out-dir DIR] [--threads T]
//
// Prints the report JSON (pretty, sorted keys) on stdout. Exit status: 0 when
// every verdict passes, 1 on a failed test or aborted experiment, 2 on a
// config or usage error.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "gapcollapse/harness.hpp"

namespace {

constexpr int kExitPass = 0;
constexpr int kExitFail = 1;
constexpr int kExitConfig = 2;

struct Args {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::optional<unsigned> threads;
};

unsigned resolve_threads(const Args& args) {
  if (args.threads) return std::max(1u, *args.threads);
  if (const char* env = std::getenv("GAPCOLLAPSE_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v >= 1) return static_cast<unsigned>(v);
    } catch (const std::exception&) {
    }
    throw gapcollapse::Error(gapcollapse::ErrorCode::ConfigInvalid,
                             std::string("GAPCOLLAPSE_THREADS must be a positive integer, got '") + env + "'");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

int execute(const std::string& kind, const Args& args) {
  namespace gc = gapcollapse;
  try {
    const auto config = gc::harness::load_config_file(args.config);
    gc::harness::RunOptions opts;
    opts.seed = args.seed;
    opts.out_dir = args.out_dir;
    opts.threads = resolve_threads(args);
    const auto base_dir = std::filesystem::path(args.config).parent_path();
    const auto report = gc::harness::run(config, opts, kind, base_dir.empty() ? "." : base_dir);
    std::cout << report.to_json().dump(2) << '\n';
    if (report.passed()) return kExitPass;
    std::cerr << "gapcollapse: ExperimentFailed: failing tests:";
    for (const auto& name : report.failures()) std::cerr << ' ' << name;
    std::cerr << '\n';
    return kExitFail;
  } catch (const gc::Error& e) {
    std::cerr << "gapcollapse: " << e.what() << '\n';
    return e.code() == gc::ErrorCode::ConfigInvalid ? kExitConfig : kExitFail;
  } catch (const std::exception& e) {
    std::cerr << "gapcollapse: " << e.what() << '\n';
    return kExitFail;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian-adjusted-projected measures under collapse: experiments and checks"};
  app.require_subcommand(1);
  Args args;
  std::string chosen;
  for (const auto& kind : gapcollapse::harness::experiment_kinds()) {
    auto* sub = app.add_subcommand(kind, "run a " + kind + " experiment");
    sub->add_option("--config", args.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", args.seed, "master seed, overrides the config");
    sub->add_option("--out-dir", args.out_dir, "directory for report.json, plot.csv and dumps");
    sub->add_option("--threads", args.threads, "worker threads (default: GAPCOLLAPSE_THREADS or all cores)")
        ->check(CLI::PositiveNumber);
    sub->callback([&chosen, kind] { chosen = kind; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }
  return execute(chosen, args);
}
