#include "avvp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "avvp/error.hpp"

namespace avvp {

std::vector<Span> extract_events(const uint8_t* seq, int64_t T) {
  std::vector<Span> out;
  int64_t t = 0;
  while (t < T) {
    if (seq[t]) {
      const int64_t start = t;
      while (t + 1 < T && seq[t + 1]) ++t;
      out.push_back({start, t});
    }
    ++t;
  }
  return out;
}

std::vector<Span> extract_events(const std::vector<uint8_t>& seq) {
  return extract_events(seq.data(), static_cast<int64_t>(seq.size()));
}

std::vector<uint8_t> spans_to_binary(const std::vector<Span>& spans, int64_t T) {
  std::vector<uint8_t> out(static_cast<size_t>(T), 0);
  for (const Span& s : spans) {
    for (int64_t t = s.start; t <= s.end; ++t) out[static_cast<size_t>(t)] = 1;
  }
  return out;
}

double span_iou(const Span& a, const Span& b) {
  const int64_t inter_lo = std::max(a.start, b.start);
  const int64_t inter_hi = std::min(a.end, b.end);
  const int64_t inter = std::max<int64_t>(0, inter_hi - inter_lo + 1);
  const int64_t uni = (a.end - a.start + 1) + (b.end - b.start + 1) - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

BinMat binarize_matrix(const Array& probs, double theta) {
  if (theta <= 0.0 || theta >= 1.0) throw ArgumentError("binarize: theta must lie in (0,1)");
  BinMat out(probs.rows(), probs.cols());
  for (size_t i = 0; i < probs.data.size(); ++i) out.data[i] = probs.data[i] >= theta ? 1 : 0;
  return out;
}

BinaryParse binarize(const PredictionSet& preds, double theta) {
  BinaryParse p;
  p.audio = binarize_matrix(preds.p_a, theta);
  p.visual = binarize_matrix(preds.p_v, theta);
  p.av = binmat_and(p.audio, p.visual);
  return p;
}

Counts segment_counts(const BinMat& pred, const BinMat& gt) {
  if (pred.rows != gt.rows || pred.cols != gt.cols) {
    throw DimensionError("segment_counts: prediction " + std::to_string(pred.rows) + "x" +
                         std::to_string(pred.cols) + " vs ground truth " + std::to_string(gt.rows) +
                         "x" + std::to_string(gt.cols));
  }
  Counts c;
  for (size_t i = 0; i < pred.data.size(); ++i) {
    if (pred.data[i] && gt.data[i]) {
      ++c.tp;
    } else if (pred.data[i]) {
      ++c.fp;
    } else if (gt.data[i]) {
      ++c.fn;
    }
  }
  return c;
}

namespace {

// Kuhn's augmenting-path matching on the IoU admissibility graph.
bool try_augment(int64_t u, const std::vector<std::vector<int64_t>>& adj, std::vector<char>& used,
                 std::vector<int64_t>& match_of_gt) {
  for (int64_t v : adj[static_cast<size_t>(u)]) {
    if (used[static_cast<size_t>(v)]) continue;
    used[static_cast<size_t>(v)] = 1;
    if (match_of_gt[static_cast<size_t>(v)] < 0 ||
        try_augment(match_of_gt[static_cast<size_t>(v)], adj, used, match_of_gt)) {
      match_of_gt[static_cast<size_t>(v)] = u;
      return true;
    }
  }
  return false;
}

}  // namespace

int64_t max_iou_matching(const std::vector<Span>& pred, const std::vector<Span>& gt,
                         double iou_thresh) {
  std::vector<std::vector<int64_t>> adj(pred.size());
  for (size_t i = 0; i < pred.size(); ++i) {
    for (size_t j = 0; j < gt.size(); ++j) {
      if (span_iou(pred[i], gt[j]) >= iou_thresh) adj[i].push_back(static_cast<int64_t>(j));
    }
  }
  std::vector<int64_t> match_of_gt(gt.size(), -1);
  int64_t matched = 0;
  for (size_t u = 0; u < pred.size(); ++u) {
    std::vector<char> used(gt.size(), 0);
    if (try_augment(static_cast<int64_t>(u), adj, used, match_of_gt)) ++matched;
  }
  return matched;
}

Counts event_counts(const BinMat& pred, const BinMat& gt, double iou_thresh) {
  if (pred.rows != gt.rows || pred.cols != gt.cols) {
    throw DimensionError("event_counts: shape mismatch");
  }
  Counts c;
  std::vector<uint8_t> pcol(static_cast<size_t>(pred.rows)), gcol(static_cast<size_t>(gt.rows));
  for (int64_t cls = 0; cls < pred.cols; ++cls) {
    for (int64_t t = 0; t < pred.rows; ++t) {
      pcol[static_cast<size_t>(t)] = pred.at(t, cls);
      gcol[static_cast<size_t>(t)] = gt.at(t, cls);
    }
    const std::vector<Span> pe = extract_events(pcol);
    const std::vector<Span> ge = extract_events(gcol);
    const int64_t matched = max_iou_matching(pe, ge, iou_thresh);
    c.tp += matched;
    c.fp += static_cast<int64_t>(pe.size()) - matched;
    c.fn += static_cast<int64_t>(ge.size()) - matched;
  }
  return c;
}

double type_at_av(double audio_f, double visual_f, double av_f) {
  return (audio_f + visual_f + av_f) / 3.0;
}

Counts event_at_av_counts(const Counts& audio, const Counts& visual) {
  Counts c = audio;
  c += visual;
  return c;
}

// ---- dataset-level evaluator ---------------------------------------------------

Evaluator::Evaluator(double theta) : theta_(theta) {
  if (theta <= 0.0 || theta >= 1.0) throw ArgumentError("evaluator: theta must lie in (0,1)");
}

void Evaluator::add(const PredictionSet& preds, const BinMat& gt_audio, const BinMat& gt_visual) {
  add_parse(binarize(preds, theta_), gt_audio, gt_visual);
}

void Evaluator::add_parse(const BinaryParse& parse, const BinMat& gt_audio, const BinMat& gt_visual) {
  const BinMat gt_av = binmat_and(gt_audio, gt_visual);
  seg_a_ += segment_counts(parse.audio, gt_audio);
  seg_v_ += segment_counts(parse.visual, gt_visual);
  seg_av_ += segment_counts(parse.av, gt_av);
  ev_a_ += event_counts(parse.audio, gt_audio);
  ev_v_ += event_counts(parse.visual, gt_visual);
  ev_av_ += event_counts(parse.av, gt_av);
  ++num_videos_;

  // exclusivity split: an event instance is single-modality when its class has
  // no temporal overlap with the same class on the other modality
  const int64_t T = gt_audio.rows, C = gt_audio.cols;
  std::vector<uint8_t> track(static_cast<size_t>(T)), ptrack(static_cast<size_t>(T));
  for (int modality = 0; modality < 2; ++modality) {
    const BinMat& gt = modality == 0 ? gt_audio : gt_visual;
    const BinMat& other = modality == 0 ? gt_visual : gt_audio;
    const BinMat& pred = modality == 0 ? parse.audio : parse.visual;
    for (int64_t cls = 0; cls < C; ++cls) {
      bool any = false, overlap = false;
      for (int64_t t = 0; t < T; ++t) {
        track[static_cast<size_t>(t)] = gt.at(t, cls);
        ptrack[static_cast<size_t>(t)] = pred.at(t, cls);
        any = any || gt.at(t, cls);
        overlap = overlap || (gt.at(t, cls) && other.at(t, cls));
      }
      if (!any) continue;
      Counts tc;
      for (int64_t t = 0; t < T; ++t) {
        if (ptrack[static_cast<size_t>(t)] && track[static_cast<size_t>(t)]) {
          ++tc.tp;
        } else if (ptrack[static_cast<size_t>(t)]) {
          ++tc.fp;
        } else if (track[static_cast<size_t>(t)]) {
          ++tc.fn;
        }
      }
      const double f = tc.f1();
      const size_t n_instances = extract_events(track).size();
      auto& bucket = overlap ? multi_f_[modality] : single_f_[modality];
      for (size_t k = 0; k < n_instances; ++k) bucket.push_back(f);
    }
  }
}

namespace {

std::optional<double> mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::optional<double> mean_of2(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() && b.empty()) return std::nullopt;
  double s = 0.0;
  for (double x : a) s += x;
  for (double x : b) s += x;
  return s / static_cast<double>(a.size() + b.size());
}

LevelReport make_level(const Counts& a, const Counts& v, const Counts& av) {
  LevelReport r;
  r.audio = a;
  r.visual = v;
  r.av = av;
  r.audio_f = a.f1();
  r.visual_f = v.f1();
  r.av_f = av.f1();
  r.type_at_av_f = type_at_av(r.audio_f, r.visual_f, r.av_f);
  r.event_at_av = event_at_av_counts(a, v);
  r.event_at_av_f = r.event_at_av.f1();
  return r;
}

}  // namespace

EvalReport Evaluator::report() const {
  EvalReport r;
  r.theta = theta_;
  r.num_videos = num_videos_;
  r.segment = make_level(seg_a_, seg_v_, seg_av_);
  r.event = make_level(ev_a_, ev_v_, ev_av_);
  r.exclusivity.single_f = mean_of2(single_f_[0], single_f_[1]);
  r.exclusivity.multi_f = mean_of2(multi_f_[0], multi_f_[1]);
  r.exclusivity.audio_single_f = mean_of(single_f_[0]);
  r.exclusivity.visual_single_f = mean_of(single_f_[1]);
  r.exclusivity.audio_multi_f = mean_of(multi_f_[0]);
  r.exclusivity.visual_multi_f = mean_of(multi_f_[1]);
  r.exclusivity.n_single = static_cast<int64_t>(single_f_[0].size() + single_f_[1].size());
  r.exclusivity.n_multi = static_cast<int64_t>(multi_f_[0].size() + multi_f_[1].size());
  return r;
}

namespace {

std::string pct(double f) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", f * 100.0);
  return buf;
}

std::string opt_pct(const std::optional<double>& f) { return f ? pct(*f) : std::string("-"); }

void record_line(std::ostringstream& os, const std::string& category, const std::string& level,
                 const Counts& c, double f) {
  os << category << " " << level << " " << c.tp << " " << c.fp << " " << c.fn << " " << pct(f)
     << "\n";
}

void derived_line(std::ostringstream& os, const std::string& category, const std::string& level,
                  const std::optional<double>& f) {
  os << category << " " << level << " - - - " << opt_pct(f) << "\n";
}

}  // namespace

std::string format_report_table(const EvalReport& r) {
  std::ostringstream os;
  os << "F-scores (%) over " << r.num_videos << " videos, theta=" << r.theta << "\n";
  os << "              Audio  Visual  Audio-Visual  Type@AV  Event@AV\n";
  os << "  segment    " << pct(r.segment.audio_f) << "    " << pct(r.segment.visual_f) << "    "
     << pct(r.segment.av_f) << "          " << pct(r.segment.type_at_av_f) << "     "
     << pct(r.segment.event_at_av_f) << "\n";
  os << "  event      " << pct(r.event.audio_f) << "    " << pct(r.event.visual_f) << "    "
     << pct(r.event.av_f) << "          " << pct(r.event.type_at_av_f) << "     "
     << pct(r.event.event_at_av_f) << "\n";
  os << "per-event exclusivity split (mean segment F per event):\n";
  os << "  single-modality " << opt_pct(r.exclusivity.single_f) << " (" << r.exclusivity.n_single
     << " events; audio " << opt_pct(r.exclusivity.audio_single_f) << ", visual "
     << opt_pct(r.exclusivity.visual_single_f) << ")\n";
  os << "  multi-modality  " << opt_pct(r.exclusivity.multi_f) << " (" << r.exclusivity.n_multi
     << " events; audio " << opt_pct(r.exclusivity.audio_multi_f) << ", visual "
     << opt_pct(r.exclusivity.visual_multi_f) << ")\n";
  return os.str();
}

std::string format_report_records(const EvalReport& r) {
  std::ostringstream os;
  record_line(os, "audio", "segment", r.segment.audio, r.segment.audio_f);
  record_line(os, "visual", "segment", r.segment.visual, r.segment.visual_f);
  record_line(os, "audio_visual", "segment", r.segment.av, r.segment.av_f);
  derived_line(os, "type_at_av", "segment", r.segment.type_at_av_f);
  record_line(os, "event_at_av", "segment", r.segment.event_at_av, r.segment.event_at_av_f);
  record_line(os, "audio", "event", r.event.audio, r.event.audio_f);
  record_line(os, "visual", "event", r.event.visual, r.event.visual_f);
  record_line(os, "audio_visual", "event", r.event.av, r.event.av_f);
  derived_line(os, "type_at_av", "event", r.event.type_at_av_f);
  record_line(os, "event_at_av", "event", r.event.event_at_av, r.event.event_at_av_f);
  derived_line(os, "single_modality", "per_event", r.exclusivity.single_f);
  derived_line(os, "multi_modality", "per_event", r.exclusivity.multi_f);
  derived_line(os, "audio_single", "per_event", r.exclusivity.audio_single_f);
  derived_line(os, "visual_single", "per_event", r.exclusivity.visual_single_f);
  derived_line(os, "audio_multi", "per_event", r.exclusivity.audio_multi_f);
  derived_line(os, "visual_multi", "per_event", r.exclusivity.visual_multi_f);
  return os.str();
}

}  // namespace avvp
