#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "avvp/data.hpp"
#include "avvp/model.hpp"

namespace avvp {

/// Inclusive segment span [start, end].
struct Span {
  int64_t start = 0, end = 0;
  bool operator==(const Span&) const = default;
};

/// Maximal runs of 1s, sorted and disjoint.
std::vector<Span> extract_events(const uint8_t* seq, int64_t T);
std::vector<Span> extract_events(const std::vector<uint8_t>& seq);

std::vector<uint8_t> spans_to_binary(const std::vector<Span>& spans, int64_t T);

/// IoU of inclusive spans, measured in segments.
double span_iou(const Span& a, const Span& b);

struct Counts {
  int64_t tp = 0, fp = 0, fn = 0;
  double f1() const {
    const int64_t denom = 2 * tp + fp + fn;
    return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  }
  Counts& operator+=(const Counts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

/// Threshold probabilities at theta (inclusive: p >= theta maps to 1).
BinMat binarize_matrix(const Array& probs, double theta);

struct BinaryParse {
  BinMat audio, visual, av;  // av = audio AND visual
};
BinaryParse binarize(const PredictionSet& preds, double theta);

/// Segment-level micro counts of one prediction/ground-truth pair.
Counts segment_counts(const BinMat& pred, const BinMat& gt);

/// Size of the maximum one-to-one matching between predicted and ground-truth
/// spans whose IoU is >= iou_thresh (maximum bipartite matching).
int64_t max_iou_matching(const std::vector<Span>& pred, const std::vector<Span>& gt,
                         double iou_thresh);

/// Event-level counts of one video: per class, extract spans on both sides,
/// match at IoU >= iou_thresh; matched pairs are TP, the rest FP/FN.
Counts event_counts(const BinMat& pred, const BinMat& gt, double iou_thresh = 0.5);

/// Arithmetic mean of the Audio / Visual / Audio-Visual scores.
double type_at_av(double audio_f, double visual_f, double av_f);

/// Micro-pooled counts over all audio and visual evaluations.
Counts event_at_av_counts(const Counts& audio, const Counts& visual);

struct LevelReport {
  Counts audio, visual, av;
  double audio_f = 0, visual_f = 0, av_f = 0;
  double type_at_av_f = 0;
  Counts event_at_av;
  double event_at_av_f = 0;
};

struct ExclusivityReport {
  // mean per-event segment F, absent when the group has no events
  std::optional<double> single_f, multi_f;
  std::optional<double> audio_single_f, visual_single_f;
  std::optional<double> audio_multi_f, visual_multi_f;
  int64_t n_single = 0, n_multi = 0;
};

struct EvalReport {
  LevelReport segment, event;
  ExclusivityReport exclusivity;
  double theta = 0.5;
  int64_t num_videos = 0;
};

/// Accumulates dataset-level micro counts and the per-event exclusivity split.
class Evaluator {
 public:
  explicit Evaluator(double theta = 0.5);

  /// Add one video given binary parses and ground truth.
  void add_parse(const BinaryParse& parse, const BinMat& gt_audio, const BinMat& gt_visual);

  /// Binarize predictions and add.
  void add(const PredictionSet& preds, const BinMat& gt_audio, const BinMat& gt_visual);

  EvalReport report() const;

 private:
  double theta_;
  int64_t num_videos_ = 0;
  Counts seg_a_, seg_v_, seg_av_;
  Counts ev_a_, ev_v_, ev_av_;
  // per-event instance F values, split by exclusivity and modality
  std::vector<double> single_f_[2];  // [0]=audio, [1]=visual
  std::vector<double> multi_f_[2];
};

std::string format_report_table(const EvalReport& r);

/// Line-oriented records: category level TP FP FN F (counts are '-' for
/// derived rows such as type_at_av and the exclusivity means).
std::string format_report_records(const EvalReport& r);

}  // namespace avvp
