#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "gprn/config.hpp"

namespace gprn {

struct CliOptions {
  std::string command;
  std::filesystem::path config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::filesystem::path> out;
};

/// Loads the config, applies command-line overrides and dispatches. Returns
/// the process exit code; failures print a JSON error object to `err` and
/// return 2.
int run_cli(const CliOptions& options, std::ostream& out, std::ostream& err);

void cmd_fit(const RunConfig& config, std::ostream& out);
void cmd_predict(const RunConfig& config, std::ostream& out);
void cmd_metrics(const RunConfig& config, std::ostream& out);
void cmd_volatility(const RunConfig& config, std::ostream& out);
void cmd_select_q(const RunConfig& config, std::ostream& out);
void cmd_synth(const RunConfig& config, std::ostream& out);

/// Log verbosity from GPRN_LOG: 0 = quiet, 1 = info (default), 2 = debug.
int log_level();

}  // namespace gprn
