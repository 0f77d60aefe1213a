#pragma once

#include "avvp/config.hpp"

namespace avvp {

/// Exit codes: 0 success, 1 verification failure, 2 usage/input error,
/// 3 numeric failure.
int cli_main(int argc, const char* const* argv);

int cmd_synth(const RunConfig& cfg);
int cmd_train(const RunConfig& cfg);
int cmd_eval(const RunConfig& cfg);
int cmd_ablate(const RunConfig& cfg);
int cmd_verify(const RunConfig& cfg);

}  // namespace avvp
