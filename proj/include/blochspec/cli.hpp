#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "blochspec/run_config.hpp"

namespace blochspec {

struct CommandOptions {
  std::optional<std::string> config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  bool force = false;
};

// One subcommand against a validated config; returns the summary printed on stdout.
// Each writes its reports into cfg.out_dir.
nlohmann::json run_bands(const RunConfig& cfg, bool force);
nlohmann::json run_oracle_check(const RunConfig& cfg, bool force);
nlohmann::json run_singularities(const RunConfig& cfg, bool force);
nlohmann::json run_expand(const RunConfig& cfg, bool force);
nlohmann::json run_verify_asymptotics(const RunConfig& cfg, bool force);
// Built-in reference operators only; the config is not read.
nlohmann::json run_selfcheck(const std::string& out_dir, std::uint64_t seed);

// Exit 0 on success, 1 on a validation error, 2 on a numerical failure. Errors are
// written to `err` as one JSON object {"error", "message", "path", "exit_code", ...}.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace blochspec
