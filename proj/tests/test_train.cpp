#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "avvp/train.hpp"
#include "avvp/verify.hpp"

namespace fs = std::filesystem;
using namespace avvp;

namespace {

SynthConfig tiny_synth(uint64_t seed) {
  SynthConfig cfg;
  cfg.num_videos = 8;
  cfg.T = 4;
  cfg.C = 3;
  cfg.d_a = 4;
  cfg.d_v = 4;
  cfg.min_event_len = 1;
  cfg.noise_sigma = 0.1;
  cfg.seed = seed;
  return cfg;
}

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.T = 4;
  cfg.C = 3;
  cfg.d = 8;
  cfg.d_a = 4;
  cfg.d_v = 4;
  return cfg;
}

TrainConfig fast_train(int64_t epochs, uint64_t seed) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 4;
  cfg.seed = seed;
  return cfg;
}

bool params_equal(const ModelParams& a, const ModelParams& b) {
  if (a.names != b.names) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a.values[i].data != b.values[i].data) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  TrainConfig cfg;
  CHECK(lr_at(0, cfg) == doctest::Approx(3e-4).epsilon(1e-15));
  CHECK(lr_at(9, cfg) == doctest::Approx(3e-4).epsilon(1e-15));
  CHECK(lr_at(10, cfg) == doctest::Approx(3e-5).epsilon(1e-12));
  CHECK(lr_at(39, cfg) == doctest::Approx(3e-7).epsilon(1e-12));
  for (int64_t e = 1; e < 45; ++e) CHECK(lr_at(e, cfg) <= lr_at(e - 1, cfg));
  CHECK_THROWS_AS(lr_at(-1, cfg), ArgumentError);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  ModelConfig mcfg = tiny_model();
  ModelParams params = init_params(mcfg, 3);
  const ModelParams before = params;
  AdamState st = AdamState::init_like(params);
  std::vector<Array> grads;
  for (const Array& p : params.values) grads.emplace_back(p.shape);
  adam_step(params, grads, st, 1e-3);
  CHECK(params_equal(params, before));
  CHECK(st.step == 1);
}

TEST_CASE("adam: closed-form first step and sign") {
  ModelParams params;
  params.add("w", Array(Shape{1}, {2.0}));
  AdamState st = AdamState::init_like(params);
  std::vector<Array> grads{Array(Shape{1}, {1.0})};
  adam_step(params, grads, st, 1e-3);
  // mhat = 1, vhat = 1 -> update = lr / (1 + eps)
  CHECK(params.values[0].data[0] == doctest::Approx(2.0 - 1e-3 / (1.0 + 1e-8)).epsilon(1e-15));

  ModelParams p2;
  p2.add("w", Array(Shape{1}, {0.5}));
  AdamState st2 = AdamState::init_like(p2);
  adam_step(p2, {Array(Shape{1}, {-2.5})}, st2, 1e-3);
  CHECK(p2.values[0].data[0] > 0.5);  // update opposes the gradient sign
}

TEST_CASE("adam: non-finite gradient aborts the step untouched") {
  ModelParams params;
  params.add("w", Array(Shape{2}, {1.0, 2.0}));
  AdamState st = AdamState::init_like(params);
  std::vector<Array> bad{Array(Shape{2})};
  bad[0].data[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(adam_step(params, bad, st, 1e-3), NumericError);
  CHECK(params.values[0].data == std::vector<double>{1.0, 2.0});
  CHECK(st.step == 0);
}

TEST_CASE("stage 1 training reduces the classification loss") {
  const auto data = generate_synthetic(tiny_synth(5));
  EpochLog log;
  train_stage1(data, tiny_model(), fast_train(6, 5), &log);
  REQUIRE(log.size() == 6);
  CHECK(log.back().loss.cls_total < log.front().loss.cls_total);
  CHECK(log.back().loss.ccr == 0.0);
  for (const EpochRecord& r : log) {
    CHECK(r.stage == 1);
    CHECK(r.loss.cls_total ==
          doctest::Approx(r.loss.cls_a + r.loss.cls_v + r.loss.cls_video).epsilon(1e-9));
  }
}

TEST_CASE("zero-epoch training returns the initialization") {
  const auto data = generate_synthetic(tiny_synth(6));
  const ModelConfig mcfg = tiny_model();
  const TrainConfig tcfg = fast_train(0, 6);
  const Checkpoint cp = train_stage1(data, mcfg, tcfg);
  CHECK(params_equal(cp.params, init_params(mcfg, 6)));
  CHECK(cp.epoch == 0);
}

TEST_CASE("same seed twice gives bit-identical training") {
  const auto data = generate_synthetic(tiny_synth(7));
  EpochLog l1, l2;
  const Checkpoint c1 = train_stage1(data, tiny_model(), fast_train(3, 7), &l1);
  const Checkpoint c2 = train_stage1(data, tiny_model(), fast_train(3, 7), &l2);
  CHECK(params_equal(c1.params, c2.params));
  REQUIRE(l1.size() == l2.size());
  for (size_t i = 0; i < l1.size(); ++i) {
    CHECK(format_epoch_line(l1[i]) == format_epoch_line(l2[i]));
  }
}

TEST_CASE("pseudo-label rule cases") {
  // both confidences clear tau: keep both
  CHECK(pseudo_label_rule(0.8, 0.7, 0.5, true) == std::make_pair(uint8_t{1}, uint8_t{1}));
  // absent from the union: always zero
  CHECK(pseudo_label_rule(0.9, 0.9, 0.5, false) == std::make_pair(uint8_t{0}, uint8_t{0}));
  // only audio clears tau
  CHECK(pseudo_label_rule(0.7, 0.2, 0.5, true) == std::make_pair(uint8_t{1}, uint8_t{0}));
  // both below tau: larger side wins
  CHECK(pseudo_label_rule(0.4, 0.2, 0.5, true) == std::make_pair(uint8_t{1}, uint8_t{0}));
  CHECK(pseudo_label_rule(0.1, 0.3, 0.5, true) == std::make_pair(uint8_t{0}, uint8_t{1}));
  // exact tie below tau keeps both (union must hold)
  CHECK(pseudo_label_rule(0.3, 0.3, 0.5, true) == std::make_pair(uint8_t{1}, uint8_t{1}));
  // threshold is inclusive
  CHECK(pseudo_label_rule(0.5, 0.1, 0.5, true) == std::make_pair(uint8_t{1}, uint8_t{0}));
}

TEST_CASE("pseudo labels keep the union invariant through the pipeline") {
  const auto data = generate_synthetic(tiny_synth(8));
  const Checkpoint cp = train_stage1(data, tiny_model(), fast_train(2, 8));
  const auto labels = compute_pseudo_labels(cp, data, 0.5);
  REQUIRE(labels.size() == data.size());
  for (size_t i = 0; i < labels.size(); ++i) {
    CHECK_NOTHROW(labels[i].validate());
    CHECK(labels[i].y == data[i].label);
  }
  CHECK_THROWS_AS(compute_pseudo_labels(cp, data, 0.0), ArgumentError);
}

TEST_CASE("stage 3 validates the union invariant before training") {
  const auto data = generate_synthetic(tiny_synth(9));
  std::vector<WeakLabels> bad;
  for (const VideoSample& s : data) {
    WeakLabels lab = labels_from_union(s.label);
    bad.push_back(lab);
  }
  // corrupt one modality vector
  for (size_t c = 0; c < bad[0].y.size(); ++c) {
    if (bad[0].y[c]) {
      bad[0].y_a[c] = 0;
      bad[0].y_v[c] = 0;
      break;
    }
  }
  CHECK_THROWS_AS(train_stage3(data, bad, tiny_model(), fast_train(1, 9)), ArgumentError);
}

TEST_CASE("stage 3 with mu=0 matches stage 1 on the same labels") {
  const auto data = generate_synthetic(tiny_synth(10));
  std::vector<WeakLabels> labels;
  for (const VideoSample& s : data) labels.push_back(labels_from_union(s.label));
  TrainConfig tcfg = fast_train(3, 10);
  tcfg.mu = 0.0;
  const Checkpoint c3 = train_stage3(data, labels, tiny_model(), tcfg);
  // the cross-audio passes contribute zero gradient when mu is zero, so the
  // parameter trajectory coincides with plain classification training
  const Checkpoint c1 = train_stage1(data, tiny_model(), tcfg);
  CHECK(params_equal(c3.params, c1.params));
}

TEST_CASE("stage 3 refuses cross-audio pairing with batch size one") {
  const auto data = generate_synthetic(tiny_synth(11));
  std::vector<WeakLabels> labels;
  for (const VideoSample& s : data) labels.push_back(labels_from_union(s.label));
  TrainConfig tcfg = fast_train(1, 11);
  tcfg.batch_size = 1;
  tcfg.n_pairs = 1;
  CHECK_THROWS_AS(train_stage3(data, labels, tiny_model(), tcfg), ArgumentError);
}

TEST_CASE("stage 3 loss decreases on a tiny run") {
  const auto data = generate_synthetic(tiny_synth(12));
  const Checkpoint s1 = train_stage1(data, tiny_model(), fast_train(4, 12));
  const auto pseudo = compute_pseudo_labels(s1, data, 0.5);
  EpochLog log;
  train_stage3(data, pseudo, tiny_model(), fast_train(6, 12), &log);
  REQUIRE(log.size() == 6);
  CHECK(log.back().loss.total < log.front().loss.total);
  for (const EpochRecord& r : log) {
    CHECK(r.loss.total ==
          doctest::Approx(r.loss.cls_total + 0.5 * r.loss.ccr).epsilon(1e-9));
  }
}

TEST_CASE("checkpoint save/load round trip and resume equivalence") {
  const fs::path dir = fs::temp_directory_path() / "avvp_train_test";
  fs::create_directories(dir);
  const auto data = generate_synthetic(tiny_synth(13));
  const ModelConfig mcfg = tiny_model();

  // uninterrupted 4-epoch run
  EpochLog full_log;
  const Checkpoint full = train_stage1(data, mcfg, fast_train(4, 13), &full_log);

  // 2 epochs, save, load, resume to 4
  EpochLog first_log;
  const Checkpoint half = train_stage1(data, mcfg, fast_train(2, 13), &first_log);
  const std::string path = (dir / "half.ckpt").string();
  save_checkpoint(half, path);
  const Checkpoint loaded = load_checkpoint(path);
  CHECK(params_equal(loaded.params, half.params));
  CHECK(loaded.rng_state == half.rng_state);
  CHECK(loaded.epoch == 2);

  EpochLog resumed_log;
  const Checkpoint resumed = train_stage1(data, mcfg, fast_train(4, 13), &resumed_log, &loaded);
  CHECK(params_equal(resumed.params, full.params));
  REQUIRE(first_log.size() + resumed_log.size() == full_log.size());
  for (size_t i = 0; i < resumed_log.size(); ++i) {
    CHECK(format_epoch_line(resumed_log[i]) == format_epoch_line(full_log[first_log.size() + i]));
  }

  // resume must match the stage
  CHECK_THROWS_AS(train_stage3(data, {}, mcfg, fast_train(4, 13), nullptr, &loaded), ArgumentError);
  fs::remove_all(dir);
}

TEST_CASE("stage 3 resume reproduces the cross-audio rng stream") {
  const auto data = generate_synthetic(tiny_synth(14));
  const ModelConfig mcfg = tiny_model();
  std::vector<WeakLabels> labels;
  for (const VideoSample& s : data) labels.push_back(labels_from_union(s.label));

  const Checkpoint full = train_stage3(data, labels, mcfg, fast_train(4, 14));
  const Checkpoint half = train_stage3(data, labels, mcfg, fast_train(2, 14));
  const Checkpoint resumed = train_stage3(data, labels, mcfg, fast_train(4, 14), nullptr, &half);
  CHECK(params_equal(resumed.params, full.params));
}

TEST_CASE("checkpoint format negatives") {
  const std::string tmp = (fs::temp_directory_path() / "avvp_ckpt_neg").string();
  fs::create_directories(tmp);
  for (const CheckResult& r : run_format_checks(tmp, 5, 321)) {
    INFO(r.name, ": ", r.detail);
    CHECK(r.pass);
  }
  fs::remove_all(tmp);
}
