#pragma once

#include <cstdint>
#include <vector>

#include "avvp/model.hpp"
#include "avvp/rng.hpp"
#include "avvp/tensor.hpp"

namespace avvp {

/// Per-modality video-level targets. Equal to the union label in stage 1,
/// denoised in stage 3; the union invariant y_a | y_v == y always holds.
struct WeakLabels {
  std::vector<uint8_t> y;    // union, C entries
  std::vector<uint8_t> y_a;
  std::vector<uint8_t> y_v;

  void validate() const;  // throws ArgumentError on union violation
};

WeakLabels labels_from_union(const std::vector<uint8_t>& y);

/// Binary cross-entropy, mean over classes. Probabilities are clamped to
/// [1e-7, 1 - 1e-7] before the logs.
Tensor bce(Tape& tape, const Tensor& p, const std::vector<uint8_t>& y);

inline constexpr double kBceClamp = 1e-7;

struct ClassificationLoss {
  Tensor a, v, video, total;
};

ClassificationLoss classification_loss(Tape& tape, const PredictionTensors& preds,
                                       const WeakLabels& labels);

/// Mean over pairs of the squared Euclidean distance between each cross-audio
/// visual prediction and the original one. Gradient flows into both sides.
Tensor capc_loss(Tape& tape, const Tensor& ptilde_v_orig, const std::vector<Tensor>& ptilde_v_rand);

Tensor total_loss(const Tensor& cls_total, const Tensor& ccr, double mu);

/// Plain values of all loss terms for logging and reporting.
struct LossBreakdown {
  double cls_a = 0, cls_v = 0, cls_video = 0, cls_total = 0;
  double ccr = 0, total = 0;
  double mu = 0;
  int64_t n_pairs = 0;
};

/// For each video in a batch, pick n donor indices uniformly without
/// replacement from the other videos. Deterministic given the rng state.
std::vector<std::vector<int64_t>> sample_cross_audio_indices(int64_t batch_size, int64_t n, Rng& rng);

}  // namespace avvp
