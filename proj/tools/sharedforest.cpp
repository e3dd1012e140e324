// Copyright 2026 The sharedforest Authors. All Rights Reserved.
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//     http://www.apache.org/licenses/LICENSE-2.0
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Run configuration, posterior artifacts and the five commands behind the

// Command-line front end. Exit codes: 0 success, 1 configuration error,
// 2 data error, 3 numerical failure.

#include <iostream>

#include <CLI11.hpp>

#include "sharedforest/cli.hpp"

namespace cli = sharedforest::cli;

int main(int argc, char** argv) {
  CLI::App app{"Shared-forest Bayesian additive regression trees for mixed and hurdle responses"};
  std::string command;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> iters, burnin, thin, chains;
  std::optional<std::string> out;
  app.add_option("command", command, "fit | predict | simulate | diagnose | compare")
      ->required()
      ->check(CLI::IsMember(cli::command_names()));
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--seed", seed, "master seed (overrides the config)");
  app.add_option("--iters", iters, "total sweeps per chain, burn-in included");
  app.add_option("--burnin", burnin, "burn-in sweeps");
  app.add_option("--thin", thin, "keep every k-th sweep after burn-in");
  app.add_option("--chains", chains, "independent chains");
  app.add_option("--out", out, "output directory");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    cli::RunConfig cfg;
    if (!config_path.empty()) cfg = cli::parse_config(cli::read_json_file(config_path));
    if (!cfg.command.empty() && cfg.command != command)
      throw sharedforest::ConfigError("command: config says '" + cfg.command + "' but '" + command + "' was requested");
    cfg.command = command;
    if (seed) cfg.seed = *seed;
    if (iters) cfg.chain.iterations = *iters;
    if (burnin) cfg.chain.burnin = *burnin;
    if (thin) cfg.chain.thin = *thin;
    if (chains) cfg.chain.chains = *chains;
    if (out) cfg.out = *out;
    cli::run(cfg);
  } catch (const sharedforest::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
