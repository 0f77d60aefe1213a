#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "avvp/data.hpp"
#include "avvp/model.hpp"
#include "avvp/objectives.hpp"

namespace avvp {

struct TrainConfig {
  int64_t epochs = 40;
  double lr0 = 3e-4;
  double lr_decay = 0.1;
  int64_t lr_decay_every = 10;
  int64_t batch_size = 64;
  double mu = 0.5;
  int64_t n_pairs = 1;  // cross-audio pairs per video (N)
  double tau = 0.5;     // pseudo-label confidence threshold
  uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

/// Step schedule: lr0 * decay^(epoch / decay_every).
double lr_at(int64_t epoch, const TrainConfig& cfg);

struct AdamConfig {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

struct AdamState {
  std::vector<Array> m, v;
  int64_t step = 0;
  double lr = 0.0;  // last learning rate applied
  AdamConfig cfg;

  static AdamState init_like(const ModelParams& params);
};

/// One Adam update with bias correction. Validates every gradient is finite
/// before touching parameters or state; a numeric error aborts the whole step.
void adam_step(ModelParams& params, const std::vector<Array>& grads, AdamState& state, double lr);

struct Checkpoint {
  uint32_t version = 1;
  ModelConfig config;
  ModelParams params;
  AdamState opt;
  std::string rng_state;
  int32_t stage = 0;
  int64_t epoch = 0;  // epochs completed within the stage
};

void save_checkpoint(const Checkpoint& cp, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

struct EpochRecord {
  int32_t stage = 0;
  int64_t epoch = 0;
  double lr = 0.0;
  LossBreakdown loss;
};
using EpochLog = std::vector<EpochRecord>;

std::string format_epoch_line(const EpochRecord& rec);

/// Stage 1: classification loss only, Y_a = Y_v = Y.
Checkpoint train_stage1(const std::vector<VideoSample>& data, const ModelConfig& mcfg,
                        const TrainConfig& tcfg, EpochLog* log = nullptr,
                        const Checkpoint* resume = nullptr);

/// Per-class stage-2 rule: keep a class in a modality when its video-level
/// confidence clears tau; when both miss, assign the more confident side
/// (ties keep both). Classes absent from the union stay absent.
std::pair<uint8_t, uint8_t> pseudo_label_rule(double ptilde_a, double ptilde_v, double tau,
                                              bool in_union);

/// Stage 2: confidence-threshold denoising of the union label into
/// per-modality targets, preserving Y_a | Y_v == Y.
std::vector<WeakLabels> compute_pseudo_labels(const Checkpoint& cp,
                                              const std::vector<VideoSample>& data, double tau);

/// Stage 3: fresh initialization, classification loss on pseudo labels plus
/// the cross-audio consistency term with in-batch donors.
Checkpoint train_stage3(const std::vector<VideoSample>& data,
                        const std::vector<WeakLabels>& pseudo, const ModelConfig& mcfg,
                        const TrainConfig& tcfg, EpochLog* log = nullptr,
                        const Checkpoint* resume = nullptr);

}  // namespace avvp
