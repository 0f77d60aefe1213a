#include <doctest.h>

#include <cmath>
#include <set>

#include "avvp/objectives.hpp"

using namespace avvp;

namespace {

Tensor probs(Tape& t, std::vector<double> v, bool grad = false) {
  const int64_t n = static_cast<int64_t>(v.size());
  return t.leaf(Array(Shape{n}, std::move(v)), grad);
}

}  // namespace

TEST_CASE("bce closed forms") {
  Tape t;
  // perfect prediction after clamping
  CHECK(bce(t, probs(t, {1.0 - 1e-7, 1e-7}), {1, 0}).values()[0] <= 1e-6);
  // p=0.5, y=1, single class: ln 2
  CHECK(bce(t, probs(t, {0.5}), {1}).values()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // symmetry bce(p, y) == bce(1-p, 1-y)
  const double l1 = bce(t, probs(t, {0.3, 0.8, 0.6}), {1, 0, 1}).values()[0];
  const double l2 = bce(t, probs(t, {0.7, 0.2, 0.4}), {0, 1, 0}).values()[0];
  CHECK(l1 == doctest::Approx(l2).epsilon(1e-12));
  CHECK_THROWS_AS(bce(t, probs(t, {0.5, 0.5}), {1}), DimensionError);
}

TEST_CASE("bce clamps probabilities at the documented bound") {
  Tape t;
  // exact 0/1 inputs stay finite thanks to the 1e-7 clamp
  const double l = bce(t, probs(t, {1.0, 0.0}), {0, 1}).values()[0];
  CHECK(std::isfinite(l));
  CHECK(l == doctest::Approx(-std::log(kBceClamp)).epsilon(1e-6));
}

TEST_CASE("classification loss sums the three terms of the objective") {
  Tape t;
  PredictionTensors preds;
  preds.ptilde_a = probs(t, {0.5});
  preds.ptilde_v = probs(t, {0.5});
  preds.ptilde_video = probs(t, {0.5});
  const ClassificationLoss loss = classification_loss(t, preds, labels_from_union({1}));
  CHECK(loss.total.values()[0] == doctest::Approx(3.0 * std::log(2.0)).epsilon(1e-12));
  CHECK(loss.total.values()[0] ==
        doctest::Approx(loss.a.values()[0] + loss.v.values()[0] + loss.video.values()[0])
            .epsilon(1e-12));

  // perfect predictions
  PredictionTensors exact;
  exact.ptilde_a = probs(t, {1.0 - 1e-7, 1e-7});
  exact.ptilde_v = probs(t, {1.0 - 1e-7, 1e-7});
  exact.ptilde_video = probs(t, {1.0 - 1e-7, 1e-7});
  CHECK(classification_loss(t, exact, labels_from_union({1, 0})).total.values()[0] <= 3e-6);
}

TEST_CASE("classification loss decreases toward the labels") {
  Tape t;
  WeakLabels lab = labels_from_union({1, 0});
  double prev = 1e9;
  for (double p : {0.3, 0.5, 0.7, 0.9}) {
    PredictionTensors preds;
    preds.ptilde_a = probs(t, {p, 1.0 - p});
    preds.ptilde_v = probs(t, {0.5, 0.5});
    preds.ptilde_video = probs(t, {0.5, 0.5});
    const double l = classification_loss(t, preds, lab).total.values()[0];
    CHECK(l < prev);
    prev = l;
  }
}

TEST_CASE("classification loss is class-permutation equivariant") {
  Tape t;
  const std::vector<double> pa{0.2, 0.7, 0.4}, pv{0.6, 0.1, 0.9}, pvid{0.5, 0.3, 0.8};
  const std::vector<uint8_t> y{1, 0, 1};
  PredictionTensors preds;
  preds.ptilde_a = probs(t, pa);
  preds.ptilde_v = probs(t, pv);
  preds.ptilde_video = probs(t, pvid);
  const double base = classification_loss(t, preds, labels_from_union(y)).total.values()[0];

  const std::vector<size_t> perm{2, 0, 1};
  auto apply = [&perm](const std::vector<double>& v) {
    std::vector<double> out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = v[perm[i]];
    return out;
  };
  PredictionTensors permuted;
  permuted.ptilde_a = probs(t, apply(pa));
  permuted.ptilde_v = probs(t, apply(pv));
  permuted.ptilde_video = probs(t, apply(pvid));
  std::vector<uint8_t> ny(y.size());
  for (size_t i = 0; i < y.size(); ++i) ny[i] = y[perm[i]];
  const double moved = classification_loss(t, permuted, labels_from_union(ny)).total.values()[0];
  CHECK(base == doctest::Approx(moved).epsilon(1e-12));
}

TEST_CASE("weak label union invariant is enforced") {
  WeakLabels lab;
  lab.y = {1, 1, 0};
  lab.y_a = {1, 0, 0};
  lab.y_v = {0, 1, 0};
  CHECK_NOTHROW(lab.validate());
  lab.y_v = {0, 0, 0};
  CHECK_THROWS_AS(lab.validate(), ArgumentError);
  lab.y = {1, 0, 0};
  lab.y_v = {0, 0, 1};
  CHECK_THROWS_AS(lab.validate(), ArgumentError);
}

TEST_CASE("capc loss closed forms") {
  Tape t;
  Tensor orig = probs(t, {1.0, 0.0});
  CHECK(capc_loss(t, orig, {probs(t, {1.0, 0.0})}).values()[0] == 0.0);
  CHECK(capc_loss(t, orig, {probs(t, {0.0, 1.0})}).values()[0] == doctest::Approx(2.0).epsilon(1e-12));
  // duplicating an identical pair leaves the mean unchanged
  Tensor r = probs(t, {0.25, 0.5});
  const double one = capc_loss(t, orig, {r}).values()[0];
  const double two = capc_loss(t, orig, {r, probs(t, {0.25, 0.5})}).values()[0];
  CHECK(one == doctest::Approx(two).epsilon(1e-12));
  CHECK(one >= 0.0);
  CHECK_THROWS_AS(capc_loss(t, orig, {}), ArgumentError);
}

TEST_CASE("capc gradient flows into both prediction paths") {
  Array x(Shape{3}, {0.2, -0.4, 0.9});
  Array y(Shape{3}, {-0.5, 0.1, 0.3});
  const GradCheckReport rep = grad_check(
      [](Tape& t, const std::vector<Tensor>& in) {
        return capc_loss(t, sigmoid(in[0]), {sigmoid(in[1])});
      },
      {x, y});
  CHECK(rep.pass);

  Tape t;
  Tensor a = t.leaf(x, true);
  Tensor b = t.leaf(y, true);
  t.backward(capc_loss(t, sigmoid(a), {sigmoid(b)}));
  bool a_nonzero = false, b_nonzero = false;
  for (double g : a.grad().data) a_nonzero = a_nonzero || g != 0.0;
  for (double g : b.grad().data) b_nonzero = b_nonzero || g != 0.0;
  CHECK(a_nonzero);
  CHECK(b_nonzero);
}

TEST_CASE("total loss arithmetic") {
  Tape t;
  Tensor cls = t.constant_scalar(1.0);
  Tensor ccr = t.constant_scalar(0.4);
  CHECK(total_loss(cls, ccr, 0.0).values()[0] == 1.0);
  CHECK(total_loss(cls, ccr, 0.5).values()[0] == doctest::Approx(1.2).epsilon(1e-12));
  // linearity in mu
  const double l1 = total_loss(cls, ccr, 1.0).values()[0];
  const double l2 = total_loss(cls, ccr, 2.0).values()[0];
  CHECK(l2 - l1 == doctest::Approx(0.4).epsilon(1e-12));
  CHECK_THROWS_AS(total_loss(cls, ccr, -0.1), ArgumentError);
}

TEST_CASE("cross-audio sampling: forced swap, determinism, validation") {
  Rng rng(4);
  const auto pairs = sample_cross_audio_indices(2, 1, rng);
  CHECK(pairs[0] == std::vector<int64_t>{1});
  CHECK(pairs[1] == std::vector<int64_t>{0});

  Rng r1(9), r2(9);
  CHECK(sample_cross_audio_indices(8, 3, r1) == sample_cross_audio_indices(8, 3, r2));

  Rng r3(1);
  CHECK_THROWS_AS(sample_cross_audio_indices(1, 1, r3), ArgumentError);
  CHECK_THROWS_AS(sample_cross_audio_indices(4, 4, r3), ArgumentError);

  // never the video's own audio, and donors are distinct
  Rng r4(10);
  for (int round = 0; round < 50; ++round) {
    const auto draws = sample_cross_audio_indices(6, 3, r4);
    for (size_t i = 0; i < draws.size(); ++i) {
      std::set<int64_t> seen;
      for (int64_t d : draws[i]) {
        CHECK(d != static_cast<int64_t>(i));
        CHECK(seen.insert(d).second);
      }
    }
  }
}

TEST_CASE("cross-audio donors are uniform over the batch") {
  // 10,000 draws with batch 64: each donor's count is Binomial(10000, 1/63)
  Rng rng(20240607);
  std::vector<int64_t> counts(64, 0);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const auto pairs = sample_cross_audio_indices(64, 1, rng);
    counts[static_cast<size_t>(pairs[0][0])]++;
  }
  CHECK(counts[0] == 0);  // video 0 never donates to itself
  const double p = 1.0 / 63.0;
  const double mean = draws * p;
  const double sigma = std::sqrt(draws * p * (1.0 - p));
  for (size_t j = 1; j < counts.size(); ++j) {
    CHECK(std::abs(static_cast<double>(counts[j]) - mean) <= 3.0 * sigma);
  }
}
