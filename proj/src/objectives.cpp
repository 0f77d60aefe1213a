#include "avvp/objectives.hpp"

#include <numeric>

#include "avvp/error.hpp"

namespace avvp {

void WeakLabels::validate() const {
  if (y.size() != y_a.size() || y.size() != y_v.size()) {
    throw ArgumentError("weak labels: per-modality vectors must have the union's length");
  }
  for (size_t c = 0; c < y.size(); ++c) {
    if (((y_a[c] | y_v[c]) != 0) != (y[c] != 0)) {
      throw ArgumentError("weak labels: Y_a | Y_v != Y at class " + std::to_string(c));
    }
  }
}

WeakLabels labels_from_union(const std::vector<uint8_t>& y) {
  WeakLabels l;
  l.y = y;
  l.y_a = y;
  l.y_v = y;
  return l;
}

Tensor bce(Tape& tape, const Tensor& p, const std::vector<uint8_t>& y) {
  if (p.rank() != 1 || p.shape()[0] != static_cast<int64_t>(y.size())) {
    throw DimensionError("bce: prediction shape " + shape_str(p.shape()) + " does not match " +
                         std::to_string(y.size()) + " labels");
  }
  Array ypos(Shape{static_cast<int64_t>(y.size())});
  Array yneg(Shape{static_cast<int64_t>(y.size())});
  for (size_t c = 0; c < y.size(); ++c) {
    ypos.data[c] = y[c] ? 1.0 : 0.0;
    yneg.data[c] = y[c] ? 0.0 : 1.0;
  }
  Tensor pc = clamp(p, kBceClamp, 1.0 - kBceClamp);
  Tensor term = add(mul(tape.constant(std::move(ypos)), log(pc)),
                    mul(tape.constant(std::move(yneg)), log(affine(pc, -1.0, 1.0))));
  return scale(mean_all(term), -1.0);
}

ClassificationLoss classification_loss(Tape& tape, const PredictionTensors& preds,
                                       const WeakLabels& labels) {
  labels.validate();
  ClassificationLoss out;
  out.v = bce(tape, preds.ptilde_v, labels.y_v);
  out.a = bce(tape, preds.ptilde_a, labels.y_a);
  out.video = bce(tape, preds.ptilde_video, labels.y);
  out.total = add(add(out.v, out.a), out.video);
  return out;
}

Tensor capc_loss(Tape& tape, const Tensor& ptilde_v_orig, const std::vector<Tensor>& ptilde_v_rand) {
  (void)tape;
  if (ptilde_v_rand.empty()) throw ArgumentError("capc_loss: need at least one cross-audio pair");
  Tensor acc;
  for (const Tensor& pr : ptilde_v_rand) {
    Tensor diff = sub(pr, ptilde_v_orig);
    Tensor sq = sum_all(mul(diff, diff));
    acc = acc.valid() ? add(acc, sq) : sq;
  }
  return scale(acc, 1.0 / static_cast<double>(ptilde_v_rand.size()));
}

Tensor total_loss(const Tensor& cls_total, const Tensor& ccr, double mu) {
  if (mu < 0) throw ArgumentError("total_loss: mu must be nonnegative");
  return add(cls_total, scale(ccr, mu));
}

std::vector<std::vector<int64_t>> sample_cross_audio_indices(int64_t batch_size, int64_t n, Rng& rng) {
  if (n < 0) throw ArgumentError("cross-audio sampling: negative pair count");
  if (n >= 1 && batch_size < 2) {
    throw ArgumentError("cross-audio sampling: batch of " + std::to_string(batch_size) +
                        " has no other videos to draw from");
  }
  if (n > batch_size - 1) {
    throw ArgumentError("cross-audio sampling: cannot draw " + std::to_string(n) +
                        " distinct donors from a batch of " + std::to_string(batch_size));
  }
  std::vector<std::vector<int64_t>> out(static_cast<size_t>(batch_size));
  std::vector<int64_t> others(static_cast<size_t>(batch_size - 1));
  for (int64_t i = 0; i < batch_size; ++i) {
    int64_t k = 0;
    for (int64_t j = 0; j < batch_size; ++j) {
      if (j != i) others[static_cast<size_t>(k++)] = j;
    }
    // partial Fisher-Yates: the first n entries are a uniform sample without replacement
    for (int64_t s = 0; s < n; ++s) {
      const int64_t pick = rng.uniform_int(s, batch_size - 2);
      std::swap(others[static_cast<size_t>(s)], others[static_cast<size_t>(pick)]);
    }
    out[static_cast<size_t>(i)].assign(others.begin(), others.begin() + n);
  }
  return out;
}

}  // namespace avvp
