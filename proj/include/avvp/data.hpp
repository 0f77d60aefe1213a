#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "avvp/array.hpp"
#include "avvp/rng.hpp"

namespace avvp {

/// Dense binary matrix (segments x classes), one byte per entry.
struct BinMat {
  int64_t rows = 0, cols = 0;
  std::vector<uint8_t> data;

  BinMat() = default;
  BinMat(int64_t r, int64_t c) : rows(r), cols(c), data(static_cast<size_t>(r * c), 0) {}

  uint8_t& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols + c)]; }
  uint8_t at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols + c)]; }
  bool operator==(const BinMat&) const = default;
};

BinMat binmat_and(const BinMat& a, const BinMat& b);

/// One video: per-segment feature sequences, the weak video-level label, and
/// (for evaluation data) per-segment ground truth for each modality.
struct VideoSample {
  std::string id;
  Array audio;   // [T, d_a]
  Array visual;  // [T, d_v]
  std::vector<uint8_t> label;  // C entries in {0,1}, union over modalities/time
  std::optional<BinMat> gt_audio;   // [T, C]
  std::optional<BinMat> gt_visual;  // [T, C]

  int64_t segments() const { return audio.shape.empty() ? 0 : audio.shape[0]; }
  int64_t classes() const { return static_cast<int64_t>(label.size()); }
};

struct SynthConfig {
  int64_t num_videos = 8;
  int64_t T = 10;
  int64_t C = 25;
  int64_t d_a = 128;
  int64_t d_v = 128;
  double p_audio_only = 0.25;
  double p_visual_only = 0.25;
  double p_both = 0.5;
  double events_per_video_mean = 1.64;
  double noise_sigma = 0.1;
  double noise_sigma_v = -1.0;  // visual-specific noise; < 0 means use noise_sigma
  int64_t min_event_len = 2;
  uint64_t seed = 0;

  void validate() const;  // throws ConfigError
  double visual_sigma() const { return noise_sigma_v < 0 ? noise_sigma : noise_sigma_v; }
};

/// Deterministic synthetic dataset: every class has fixed unit-norm feature
/// prototypes per modality; a segment's feature is the sum of the prototypes
/// of the events active in that modality plus Gaussian noise. "Both"-mode
/// events get independently jittered spans per modality that overlap by at
/// least one segment.
std::vector<VideoSample> generate_synthetic(const SynthConfig& cfg);

void write_dataset(const std::vector<VideoSample>& samples, const std::string& dir);
std::vector<VideoSample> read_dataset(const std::string& dir);

/// Deterministic epoch batching: a permutation of sample indices decided
/// solely by (seed, epoch), chunked; the final short batch is kept.
std::vector<std::vector<int64_t>> epoch_batches(int64_t num_samples, int64_t batch_size,
                                                uint64_t seed, int64_t epoch);

/// Pack C label bits into a hex string (class c in byte c/8, bit c%8).
std::string pack_label_bits(const std::vector<uint8_t>& label);
std::vector<uint8_t> unpack_label_bits(const std::string& hex, int64_t C);

}  // namespace avvp
