#include <doctest.h>

#include <cmath>

#include "avvp/model.hpp"
#include "avvp/objectives.hpp"
#include "avvp/rng.hpp"
#include "avvp/verify.hpp"

using namespace avvp;

namespace {

Array rand_arr(Rng& rng, Shape s, double lo = -1.0, double hi = 1.0) {
  Array a(std::move(s));
  for (double& v : a.data) v = rng.uniform(lo, hi);
  return a;
}

// ---- straight-line reference (plain doubles, no tape) ------------------------

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Array& a) {
  Mat m(static_cast<size_t>(a.rows()), std::vector<double>(static_cast<size_t>(a.cols())));
  for (int64_t r = 0; r < a.rows(); ++r)
    for (int64_t c = 0; c < a.cols(); ++c) m[static_cast<size_t>(r)][static_cast<size_t>(c)] = a.at(r, c);
  return m;
}

Mat ref_matmul(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t k = 0; k < b.size(); ++k)
      for (size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

Mat ref_add(const Mat& a, const Mat& b) {
  Mat c = a;
  for (size_t i = 0; i < a.size(); ++i)
    for (size_t j = 0; j < a[0].size(); ++j) c[i][j] += b[i][j];
  return c;
}

Mat ref_softmax_rows(Mat x) {
  for (auto& row : x) {
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double s = 0;
    for (double& v : row) {
      v = std::exp(v - mx);
      s += v;
    }
    for (double& v : row) v /= s;
  }
  return x;
}

Mat ref_layer_norm(const Mat& x, const std::vector<double>& g, const std::vector<double>& b,
                   double eps) {
  Mat y = x;
  for (auto& row : y) {
    double mu = 0;
    for (double v : row) mu += v;
    mu /= static_cast<double>(row.size());
    double var = 0;
    for (double v : row) var += (v - mu) * (v - mu);
    var /= static_cast<double>(row.size());
    const double inv = 1.0 / std::sqrt(var + eps);
    for (size_t j = 0; j < row.size(); ++j) row[j] = (row[j] - mu) * inv * g[j] + b[j];
  }
  return y;
}

struct RefAttn {
  Mat wq, wk, wv, wo;
};

Mat ref_attention(const RefAttn& w, const Mat& q_in, const Mat& kv_in) {
  const Mat q = ref_matmul(q_in, w.wq);
  const Mat k = ref_matmul(kv_in, w.wk);
  const Mat v = ref_matmul(kv_in, w.wv);
  Mat scores(q.size(), std::vector<double>(k.size(), 0.0));
  const double scale = 1.0 / std::sqrt(static_cast<double>(q[0].size()));
  for (size_t i = 0; i < q.size(); ++i)
    for (size_t j = 0; j < k.size(); ++j) {
      double dot = 0;
      for (size_t e = 0; e < q[0].size(); ++e) dot += q[i][e] * k[j][e];
      scores[i][j] = dot * scale;
    }
  return ref_matmul(ref_matmul(ref_softmax_rows(scores), v), w.wo);
}

Mat ref_ffn(const Mat& x, const Mat& w1, const std::vector<double>& b1, const Mat& w2,
            const std::vector<double>& b2) {
  Mat h = ref_matmul(x, w1);
  for (auto& row : h)
    for (size_t j = 0; j < row.size(); ++j) row[j] = std::max(0.0, row[j] + b1[j]);
  Mat out = ref_matmul(h, w2);
  for (auto& row : out)
    for (size_t j = 0; j < row.size(); ++j) row[j] += b2[j];
  return out;
}

void check_close(const std::vector<double>& got, const Mat& want, double tol = 1e-12) {
  const size_t cols = want[0].size();
  REQUIRE(got.size() == want.size() * cols);
  for (size_t i = 0; i < want.size(); ++i)
    for (size_t j = 0; j < cols; ++j) CHECK(got[i * cols + j] == doctest::Approx(want[i][j]).epsilon(tol));
}

struct LayerFixture {
  Tape tape;
  Rng rng{23};
  int64_t T = 3, d = 4, K = 2;

  AttnWeights attn(RefAttn* ref) {
    AttnWeights w;
    Array q = rand_arr(rng, {d, d}), k = rand_arr(rng, {d, d});
    Array v = rand_arr(rng, {d, d}), o = rand_arr(rng, {d, d});
    ref->wq = to_mat(q);
    ref->wk = to_mat(k);
    ref->wv = to_mat(v);
    ref->wo = to_mat(o);
    w.wq = tape.leaf(q);
    w.wk = tape.leaf(k);
    w.wv = tape.leaf(v);
    w.wo = tape.leaf(o);
    return w;
  }
  FfnWeights ffn(Mat* w1, std::vector<double>* b1, Mat* w2, std::vector<double>* b2) {
    FfnWeights w;
    Array a1 = rand_arr(rng, {d, 2 * d}), ab1 = rand_arr(rng, {2 * d});
    Array a2 = rand_arr(rng, {2 * d, d}), ab2 = rand_arr(rng, {d});
    *w1 = to_mat(a1);
    *b1 = ab1.data;
    *w2 = to_mat(a2);
    *b2 = ab2.data;
    w.w1 = tape.leaf(a1);
    w.b1 = tape.leaf(ab1);
    w.w2 = tape.leaf(a2);
    w.b2 = tape.leaf(ab2);
    return w;
  }
  LnWeights ln(std::vector<double>* g, std::vector<double>* b) {
    Array ag = rand_arr(rng, {d}, 0.5, 1.5), ab = rand_arr(rng, {d}, -0.5, 0.5);
    *g = ag.data;
    *b = ab.data;
    LnWeights w;
    w.gamma = tape.leaf(ag);
    w.beta = tape.leaf(ab);
    return w;
  }
};

}  // namespace

TEST_CASE("tokenize zero features gives the positional embedding") {
  Tape t;
  const Array pe = sinusoidal_pe(4, 6);
  Tensor s = tokenize(t, t.leaf(Array(Shape{4, 3})), t.leaf(Array(Shape{3, 6})), t.leaf(pe));
  CHECK(s.values() == pe.data);
}

TEST_CASE("tokenize with identity projection and zero PE returns features") {
  Tape t;
  Rng rng(2);
  Array f = rand_arr(rng, {3, 2});
  Array eye(Shape{2, 2}, {1, 0, 0, 1});
  Tensor s = tokenize(t, t.leaf(f), t.leaf(eye), t.leaf(Array(Shape{3, 2})));
  CHECK(s.values() == f.data);
}

TEST_CASE("tokenize hand-computed case") {
  Tape t;
  Array f(Shape{3, 2}, {1, 2, 3, 4, 5, 6});
  Array w(Shape{2, 2}, {1, -1, 0.5, 2});
  Array pe(Shape{3, 2}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6});
  // row t: f[t]*W + pe[t]
  const std::vector<double> want{1 * 1 + 2 * 0.5 + 0.1, 1 * -1 + 2 * 2 + 0.2,
                                 3 * 1 + 4 * 0.5 + 0.3, 3 * -1 + 4 * 2 + 0.4,
                                 5 * 1 + 6 * 0.5 + 0.5, 5 * -1 + 6 * 2 + 0.6};
  const auto& got = tokenize(t, t.leaf(f), t.leaf(w), t.leaf(pe)).values();
  for (size_t i = 0; i < want.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));

  CHECK_THROWS_AS(tokenize(t, t.leaf(Array(Shape{2, 2})), t.leaf(w), t.leaf(pe)), DimensionError);
}

TEST_CASE("encoder layer matches the straight-line reference") {
  LayerFixture fx;
  RefAttn rattn;
  AttnWeights attn = fx.attn(&rattn);
  Mat w1, w2;
  std::vector<double> b1, b2, g1, be1, g2, be2;
  FfnWeights ffn = fx.ffn(&w1, &b1, &w2, &b2);
  LnWeights ln1 = fx.ln(&g1, &be1), ln2 = fx.ln(&g2, &be2);
  EncoderLayerWeights w{attn, ffn, ln1, ln2};

  Array s_arr = rand_arr(fx.rng, {fx.T, fx.d});
  Tensor out = encoder_layer(fx.tape, w, fx.tape.leaf(s_arr), 1);

  const Mat s = to_mat(s_arr);
  const Mat s1 = ref_layer_norm(ref_add(ref_attention(rattn, s, s), s), g1, be1, 1e-5);
  const Mat want = ref_layer_norm(ref_add(ref_ffn(s1, w1, b1, w2, b2), s1), g2, be2, 1e-5);
  check_close(out.values(), want, 1e-9);
}

TEST_CASE("single-token attention weight is exactly one") {
  LayerFixture fx;
  fx.T = 1;
  RefAttn rattn;
  AttnWeights attn = fx.attn(&rattn);
  Array s = rand_arr(fx.rng, {1, fx.d});
  std::vector<Array> probe;
  attention(fx.tape, attn, fx.tape.leaf(s), fx.tape.leaf(s), 1, &probe);
  REQUIRE(probe.size() == 1);
  CHECK(probe[0].data.size() == 1);
  CHECK(probe[0].data[0] == 1.0);
}

TEST_CASE("identical rows give uniform attention") {
  LayerFixture fx;
  RefAttn rattn;
  AttnWeights attn = fx.attn(&rattn);
  Array s(Shape{fx.T, fx.d});
  Rng rng(3);
  for (int64_t j = 0; j < fx.d; ++j) {
    const double v = rng.uniform(-1, 1);
    for (int64_t r = 0; r < fx.T; ++r) s.at(r, j) = v;
  }
  std::vector<Array> probe;
  attention(fx.tape, attn, fx.tape.leaf(s), fx.tape.leaf(s), 1, &probe);
  for (double w : probe[0].data) CHECK(w == doctest::Approx(1.0 / fx.T).epsilon(1e-12));
}

TEST_CASE("messengers: constant rows, zeros, and a hand case") {
  Tape t;
  Rng rng(4);
  const int64_t T = 4, d = 2;

  // constant rows -> every messenger equals tanh(v W)
  Array w_arr = rand_arr(rng, {d, d});
  Array s_const(Shape{T, d});
  for (int64_t r = 0; r < T; ++r) {
    s_const.at(r, 0) = 0.3;
    s_const.at(r, 1) = -0.8;
  }
  const auto& m = compute_messengers(t, t.leaf(s_const), t.leaf(w_arr), 2).values();
  const double e0 = std::tanh(0.3 * w_arr.at(0, 0) + -0.8 * w_arr.at(1, 0));
  const double e1 = std::tanh(0.3 * w_arr.at(0, 1) + -0.8 * w_arr.at(1, 1));
  for (int64_t r = 0; r < 2; ++r) {
    CHECK(m[static_cast<size_t>(r * 2)] == doctest::Approx(e0).epsilon(1e-12));
    CHECK(m[static_cast<size_t>(r * 2 + 1)] == doctest::Approx(e1).epsilon(1e-12));
  }

  // zero tokens -> zero messengers
  const auto& mz = compute_messengers(t, t.leaf(Array(Shape{T, d})), t.leaf(w_arr), 1).values();
  for (double v : mz) CHECK(v == 0.0);

  // hand case: T=4, n=2 chunks {0,1} and {2,3}
  Array s(Shape{4, 2}, {1, 0, 0, 1, 2, 2, -2, 0});
  Array w(Shape{2, 2}, {1, 0.5, -1, 0.25});
  const auto& mh = compute_messengers(t, t.leaf(s), t.leaf(w), 2).values();
  // chunk means: (0.5, 0.5) and (0, 1); then m = tanh(mean W)
  CHECK(mh[0] == doctest::Approx(std::tanh(0.5 * 1 + 0.5 * -1)).epsilon(1e-12));
  CHECK(mh[1] == doctest::Approx(std::tanh(0.5 * 0.5 + 0.5 * 0.25)).epsilon(1e-12));
  CHECK(mh[2] == doctest::Approx(std::tanh(0.0 * 1 + 1.0 * -1)).epsilon(1e-12));
  CHECK(mh[3] == doctest::Approx(std::tanh(0.0 * 0.5 + 1.0 * 0.25)).epsilon(1e-12));

  CHECK_THROWS_AS(compute_messengers(t, t.leaf(s), t.leaf(w), 5), ArgumentError);
  CHECK_THROWS_AS(compute_messengers(t, t.leaf(s), t.leaf(w), 0), ArgumentError);
}

TEST_CASE("decoder layer matches the straight-line reference") {
  LayerFixture fx;
  RefAttn rself, rcross;
  DecoderLayerWeights w;
  w.msa = fx.attn(&rself);
  w.mca = fx.attn(&rcross);
  Mat w1, w2;
  std::vector<double> b1, b2, g1, be1, g2, be2, g3, be3;
  w.ffn = fx.ffn(&w1, &b1, &w2, &b2);
  w.ln1 = fx.ln(&g1, &be1);
  w.ln2 = fx.ln(&g2, &be2);
  w.ln3 = fx.ln(&g3, &be3);

  Array r_arr = rand_arr(fx.rng, {fx.T, fx.d});
  Array ctx_arr = rand_arr(fx.rng, {fx.K, fx.d});
  Tensor out = decoder_layer(fx.tape, w, fx.tape.leaf(r_arr), fx.tape.leaf(ctx_arr), 1);

  const Mat r = to_mat(r_arr), ctx = to_mat(ctx_arr);
  const Mat r1 = ref_layer_norm(ref_add(ref_attention(rself, r, r), r), g1, be1, 1e-5);
  const Mat r2 = ref_layer_norm(ref_add(ref_attention(rcross, r1, ctx), r1), g2, be2, 1e-5);
  const Mat want = ref_layer_norm(ref_add(ref_ffn(r2, w1, b1, w2, b2), r2), g3, be3, 1e-5);
  check_close(out.values(), want, 1e-9);
}

TEST_CASE("single-messenger cross attention puts weight one everywhere") {
  LayerFixture fx;
  RefAttn rattn;
  AttnWeights attn = fx.attn(&rattn);
  Array q = rand_arr(fx.rng, {fx.T, fx.d});
  Array ctx = rand_arr(fx.rng, {1, fx.d});
  std::vector<Array> probe;
  attention(fx.tape, attn, fx.tape.leaf(q), fx.tape.leaf(ctx), 1, &probe);
  REQUIRE(probe.size() == 1);
  for (double w : probe[0].data) CHECK(w == 1.0);
}

TEST_CASE("identical context rows act as a single effective key") {
  LayerFixture fx;
  RefAttn rattn;
  AttnWeights attn = fx.attn(&rattn);
  Array q = rand_arr(fx.rng, {fx.T, fx.d});
  Array ctx(Shape{3, fx.d});
  for (int64_t j = 0; j < fx.d; ++j) {
    const double v = fx.rng.uniform(-1, 1);
    for (int64_t r = 0; r < 3; ++r) ctx.at(r, j) = v;
  }
  Array ctx1(Shape{1, fx.d});
  for (int64_t j = 0; j < fx.d; ++j) ctx1.at(0, j) = ctx.at(0, j);
  Tensor o3 = attention(fx.tape, attn, fx.tape.leaf(q), fx.tape.leaf(ctx), 1);
  Tensor o1 = attention(fx.tape, attn, fx.tape.leaf(q), fx.tape.leaf(ctx1), 1);
  for (size_t i = 0; i < o3.values().size(); ++i) {
    CHECK(o3.values()[i] == doctest::Approx(o1.values()[i]).epsilon(1e-12));
  }
}

TEST_CASE("classify: zero weights give 0.5, saturation is monotone, hand case") {
  Tape t;
  Rng rng(6);
  Array r = rand_arr(rng, {3, 4});
  for (double v : classify(t, t.leaf(r), t.leaf(Array(Shape{4, 2}))).values()) CHECK(v == 0.5);

  Array r1(Shape{1, 1}, {1.0});
  double prev = 0.0;
  for (double scale_w : {1.0, 3.0, 9.0, 27.0}) {
    const double p = classify(t, t.leaf(r1), t.leaf(Array(Shape{1, 1}, {scale_w}))).values()[0];
    CHECK(p > prev);
    prev = p;
  }
  CHECK(prev < 1.0);

  Array rh(Shape{1, 2}, {0.5, -1.0});
  Array wh(Shape{2, 2}, {1.0, 2.0, 0.5, -0.5});
  const auto& p = classify(t, t.leaf(rh), t.leaf(wh)).values();
  CHECK(p[0] == doctest::Approx(1.0 / (1.0 + std::exp(-(0.5 * 1.0 - 1.0 * 0.5)))).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(1.0 / (1.0 + std::exp(-(0.5 * 2.0 + 1.0 * 0.5)))).epsilon(1e-12));
}

TEST_CASE("video pooling: constant segments, uniform weights, convex bounds") {
  Tape t;
  Rng rng(8);
  const int64_t T = 5, C = 3, d = 4;

  // constant probabilities over time survive any pooling weights
  Array r_a = rand_arr(rng, {T, d}), r_v = rand_arr(rng, {T, d});
  Array tp_a = rand_arr(rng, {d, C}), tp_v = rand_arr(rng, {d, C}), mp = rand_arr(rng, {d, C});
  Array p_const(Shape{T, C});
  for (int64_t c = 0; c < C; ++c) {
    const double v = rng.uniform(0.1, 0.9);
    for (int64_t r = 0; r < T; ++r) p_const.at(r, c) = v;
  }
  PooledPredictions pooled =
      pool_video_level(t, t.leaf(p_const), t.leaf(p_const), t.leaf(r_a), t.leaf(r_v), t.leaf(tp_a),
                       t.leaf(tp_v), t.leaf(mp));
  for (int64_t c = 0; c < C; ++c) {
    CHECK(pooled.ptilde_a.values()[static_cast<size_t>(c)] ==
          doctest::Approx(p_const.at(0, c)).epsilon(1e-12));
    CHECK(pooled.ptilde_video.values()[static_cast<size_t>(c)] ==
          doctest::Approx(p_const.at(0, c)).epsilon(1e-12));
  }

  // zero pooling parameters -> temporal mean
  Array p_a = rand_arr(rng, {T, C}, 0.05, 0.95), p_v = rand_arr(rng, {T, C}, 0.05, 0.95);
  PooledPredictions uniform =
      pool_video_level(t, t.leaf(p_a), t.leaf(p_v), t.leaf(r_a), t.leaf(r_v),
                       t.leaf(Array(Shape{d, C})), t.leaf(Array(Shape{d, C})),
                       t.leaf(Array(Shape{d, C})));
  for (int64_t c = 0; c < C; ++c) {
    double mean = 0;
    for (int64_t r = 0; r < T; ++r) mean += p_a.at(r, c);
    mean /= static_cast<double>(T);
    CHECK(uniform.ptilde_a.values()[static_cast<size_t>(c)] == doctest::Approx(mean).epsilon(1e-12));
  }

  // convex-combination bounds on random inputs
  for (int draw = 0; draw < 50; ++draw) {
    Array pa = rand_arr(rng, {T, C}, 0.01, 0.99), pv = rand_arr(rng, {T, C}, 0.01, 0.99);
    Array ra = rand_arr(rng, {T, d}), rv = rand_arr(rng, {T, d});
    Array ta = rand_arr(rng, {d, C}), tv = rand_arr(rng, {d, C}), mm = rand_arr(rng, {d, C});
    PooledPredictions out = pool_video_level(t, t.leaf(pa), t.leaf(pv), t.leaf(ra), t.leaf(rv),
                                             t.leaf(ta), t.leaf(tv), t.leaf(mm));
    for (int64_t c = 0; c < C; ++c) {
      double lo = 1, hi = 0;
      for (int64_t r = 0; r < T; ++r) {
        lo = std::min(lo, pa.at(r, c));
        hi = std::max(hi, pa.at(r, c));
      }
      const double x = out.ptilde_a.values()[static_cast<size_t>(c)];
      CHECK(x >= lo - 1e-12);
      CHECK(x <= hi + 1e-12);
    }
  }
}

TEST_CASE("forward shapes at paper scale") {
  ModelConfig cfg;
  cfg.T = 10;
  cfg.C = 25;
  cfg.d = 32;
  cfg.d_a = 128;
  cfg.d_v = 64;
  const ModelParams params = init_params(cfg, 1);
  Rng rng(1);
  const PredictionSet p = forward_values(params, cfg, rand_arr(rng, {10, 128}), rand_arr(rng, {10, 64}));
  CHECK(p.p_a.shape == Shape{10, 25});
  CHECK(p.p_v.shape == Shape{10, 25});
  CHECK(p.ptilde_a.shape == Shape{25});
  CHECK(p.ptilde_video.shape == Shape{25});
}

TEST_CASE("zero classifier weights give probability one half everywhere") {
  ModelConfig cfg;
  cfg.T = 4;
  cfg.C = 3;
  cfg.d = 8;
  cfg.d_a = 5;
  cfg.d_v = 5;
  ModelParams params = init_params(cfg, 2);
  for (const char* name : {"a.cls.w", "v.cls.w"}) {
    Array& w = params.values[static_cast<size_t>(params.find(name))];
    std::fill(w.data.begin(), w.data.end(), 0.0);
  }
  Rng rng(2);
  const PredictionSet p = forward_values(params, cfg, rand_arr(rng, {4, 5}), rand_arr(rng, {4, 5}));
  for (double v : p.p_a.data) CHECK(v == 0.5);
  for (double v : p.p_v.data) CHECK(v == 0.5);
  for (double v : p.ptilde_video.data) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("messenger equivalence: tanh-fixed-point context matches raw tokens") {
  // with T=1 and n=1 the messenger is tanh(S W_msg); choosing W_msg so that
  // tanh(S W_msg) = S makes the full and no_msg decoder inputs coincide
  Tape t;
  Rng rng(13);
  const int64_t d = 4;
  const double c = 0.5;
  Array s(Shape{1, d});
  for (int64_t j = 0; j < d; ++j) s.at(0, j) = c;
  Array w_msg(Shape{d, d});
  const double w = std::atanh(c) / (c * static_cast<double>(d));
  std::fill(w_msg.data.begin(), w_msg.data.end(), w);

  Tensor msg = compute_messengers(t, t.leaf(s), t.leaf(w_msg), 1);
  for (int64_t j = 0; j < d; ++j) {
    CHECK(msg.values()[static_cast<size_t>(j)] == doctest::Approx(c).epsilon(1e-12));
  }

  LayerFixture fx;
  fx.T = 3;
  fx.d = d;
  RefAttn rs, rc;
  DecoderLayerWeights dw;
  dw.msa = fx.attn(&rs);
  dw.mca = fx.attn(&rc);
  Mat w1, w2;
  std::vector<double> b1, b2, g1, be1, g2, be2, g3, be3;
  dw.ffn = fx.ffn(&w1, &b1, &w2, &b2);
  dw.ln1 = fx.ln(&g1, &be1);
  dw.ln2 = fx.ln(&g2, &be2);
  dw.ln3 = fx.ln(&g3, &be3);
  Array r = rand_arr(fx.rng, {fx.T, d});
  Tensor msg_fx = compute_messengers(fx.tape, fx.tape.leaf(s), fx.tape.leaf(w_msg), 1);
  Tensor out_full = decoder_layer(fx.tape, dw, fx.tape.leaf(r), msg_fx, 1);
  Tensor out_nomsg = decoder_layer(fx.tape, dw, fx.tape.leaf(r), fx.tape.leaf(s), 1);
  for (size_t i = 0; i < out_full.values().size(); ++i) {
    CHECK(out_full.values()[i] == doctest::Approx(out_nomsg.values()[i]).epsilon(1e-9));
  }
}

TEST_CASE("all variants run, are deterministic, and reject unknown names") {
  ModelConfig cfg;
  cfg.T = 5;
  cfg.C = 4;
  cfg.d = 8;
  cfg.d_a = 6;
  cfg.d_v = 7;
  cfg.n_a = 2;
  cfg.n_v = 3;
  Rng rng(3);
  const Array a = rand_arr(rng, {5, 6}), v = rand_arr(rng, {5, 7});
  for (Variant var : {Variant::full, Variant::no_msg, Variant::han, Variant::han_ca, Variant::no_fa}) {
    cfg.variant = var;
    const ModelParams params = init_params(cfg, 7);
    const PredictionSet p1 = forward_values(params, cfg, a, v);
    const PredictionSet p2 = forward_values(params, cfg, a, v);
    CHECK(p1.p_a.data == p2.p_a.data);
    CHECK(p1.ptilde_video.data == p2.ptilde_video.data);
    CHECK(p1.p_a.shape == Shape{5, 4});
  }
  CHECK_THROWS_AS(variant_from_string("nope"), ArgumentError);
  CHECK(variant_from_string("han_ca") == Variant::han_ca);
}

TEST_CASE("multi-head attention keeps row sums and gradients") {
  ModelConfig cfg;
  cfg.T = 4;
  cfg.C = 2;
  cfg.d = 8;
  cfg.heads = 2;
  cfg.d_a = 3;
  cfg.d_v = 3;
  const ModelParams params = init_params(cfg, 5);
  Rng rng(5);
  ForwardProbe probe;
  forward_values(params, cfg, rand_arr(rng, {4, 3}), rand_arr(rng, {4, 3}), &probe);
  CHECK(probe.enc_self_audio.size() == 2);  // one per head
  for (const Array& m : probe.enc_self_audio) {
    for (int64_t r = 0; r < m.rows(); ++r) {
      double s = 0;
      for (int64_t c2 = 0; c2 < m.cols(); ++c2) s += m.at(r, c2);
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("messenger entries stay strictly inside (-1, 1)") {
  ModelConfig cfg;
  cfg.T = 6;
  cfg.C = 2;
  cfg.d = 8;
  cfg.d_a = 4;
  cfg.d_v = 4;
  cfg.n_a = 3;
  cfg.n_v = 2;
  Rng rng(9);
  for (int i = 0; i < 20; ++i) {
    const ModelParams params = init_params(cfg, 100 + static_cast<uint64_t>(i));
    ForwardProbe probe;
    forward_values(params, cfg, rand_arr(rng, {6, 4}, -3, 3), rand_arr(rng, {6, 4}, -3, 3), &probe);
    for (double m : probe.messengers_audio.data) CHECK((m > -1.0 && m < 1.0));
    for (double m : probe.messengers_visual.data) CHECK((m > -1.0 && m < 1.0));
  }
}

TEST_CASE("end-to-end gradient on a reduced tiny config") {
  // fast variant for the unit suite; the acceptance suite runs the full
  // T=4,C=3,d=8 configuration
  ModelConfig cfg;
  cfg.T = 3;
  cfg.C = 2;
  cfg.d = 4;
  cfg.d_a = 3;
  cfg.d_v = 3;
  cfg.ffn_mult = 2;
  const ModelParams params = init_params(cfg, 11);
  Rng rng(11);
  const Array a0 = rand_arr(rng, {3, 3}), v0 = rand_arr(rng, {3, 3});
  const Array a1 = rand_arr(rng, {3, 3}), v1 = rand_arr(rng, {3, 3});
  const std::vector<uint8_t> y0{1, 0}, y1{0, 1};

  TapeFn fn = [&](Tape& tape, const std::vector<Tensor>& leaves) {
    BoundModel bound = bind_model_from(tape, params, leaves, cfg);
    Tensor loss;
    const Array* feats[2][2] = {{&a0, &v0}, {&a1, &v1}};
    const std::vector<uint8_t>* ys[2] = {&y0, &y1};
    for (int i = 0; i < 2; ++i) {
      PredictionTensors p = forward(tape, bound, *feats[i][0], *feats[i][1]);
      WeakLabels lab = labels_from_union(*ys[i]);
      ClassificationLoss cls = classification_loss(tape, p, lab);
      PredictionTensors cross = forward(tape, bound, *feats[1 - i][0], *feats[i][1]);
      Tensor vid = total_loss(cls.total, capc_loss(tape, p.ptilde_v, {cross.ptilde_v}), 0.5);
      loss = loss.valid() ? add(loss, vid) : vid;
    }
    return scale(loss, 0.5);
  };
  const GradCheckReport rep = grad_check(fn, params.values, 1e-5, 1e-4);
  INFO("max rel err ", rep.max_rel_err);
  CHECK(rep.pass);
}
