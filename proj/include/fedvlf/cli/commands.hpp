#pragma once

#include <exception>
#include <string>
#include <vector>

#include "fedvlf/cli/config.hpp"

namespace fedvlf::cli {

// Each command reads ctx.config, writes under ctx.out_dir and throws
// fedvlf::Error subclasses on failure.
void cmd_preprocess(const RunContext& ctx);
void cmd_train(const RunContext& ctx);
void cmd_federate(const RunContext& ctx);
void cmd_personalize(const RunContext& ctx);
void cmd_evaluate(const RunContext& ctx);
void cmd_commcost(const RunContext& ctx);
void cmd_diagnose(const RunContext& ctx);

void dispatch(const RunContext& ctx);

// 0 success, 2 config, 3 data, 4 numeric divergence, 5 I/O, 6 format, 1 other.
int exit_code(const std::exception& e);

// Full command line entry point; never throws.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

}  // namespace fedvlf::cli
