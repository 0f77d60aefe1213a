#pragma once

#include <string>
#include <vector>

#include "avvp/data.hpp"
#include "avvp/model.hpp"
#include "avvp/train.hpp"

namespace avvp {

/// Merged configuration for CLI commands. Parsed from a plain-text key=value
/// file plus command-line overrides (overrides win); unknown keys are
/// rejected against the schema.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SynthConfig synth;

  std::string data_dir;
  std::string eval_dir;
  std::string out_dir = "out";
  std::string checkpoint;

  double eval_theta = 0.5;
  bool eval_oracle = false;      // debug: use ground truth as predictions
  int64_t synth_eval_videos = 0; // extra held-out split written by synth

  std::vector<int> stages = {1, 2, 3};

  std::vector<std::string> ablate_variants = {"full", "no_msg"};
  std::vector<uint64_t> ablate_seeds = {1, 2, 3};
  std::vector<double> ablate_mu;      // empty: use train.mu
  std::vector<int64_t> ablate_n_pairs;
  std::vector<int64_t> ablate_n_a;
  std::vector<int64_t> ablate_n_v;
  int64_t ablate_jobs = 1;

  std::string verify_fault;  // op name for the gradient-fault negative control
};

/// Apply one "key=value" assignment. Throws ConfigError on unknown keys or
/// unparsable values.
void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value);

/// Parse a config file: one key=value per line, '#' comments, blank lines.
void load_config_file(RunConfig& cfg, const std::string& path);

/// Names of all known keys (for help output).
std::vector<std::string> config_schema_keys();

std::vector<int> parse_stage_list(const std::string& s);

}  // namespace avvp
