#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "evcp/error.hpp"
#include "evcp/evaluation.hpp"
#include "evcp/run_config.hpp"

namespace evcp {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumeric = 3;

/// Stage commands. Each writes <out>/<command>/run.json first and then its
/// outputs into the same directory; failures surface as evcp::Error.
void cmd_synth(const RunConfig& config, std::ostream& log);
void cmd_prepare(const RunConfig& config, std::ostream& log);
void cmd_cluster(const RunConfig& config, std::ostream& log);
void cmd_train(const RunConfig& config, std::ostream& log);
void cmd_evaluate(const RunConfig& config, std::ostream& log);
void cmd_ablate(const RunConfig& config, std::ostream& log);

/// Dispatches on config.command and maps failures to exit codes:
/// numeric -> 3, any other library error -> 2.
int run_command(const RunConfig& config, std::ostream& log, std::ostream& err);

/// Parses `args` (without the program name) and runs the command.
int run_cli(const std::vector<std::string>& args, std::ostream& log, std::ostream& err);

int exit_code_for(ErrorKind kind);

/// Prepared windows and structure under config.out, as the train, evaluate
/// and ablate stages see them.
ExperimentData load_experiment(const RunConfig& config);

}  // namespace evcp
