#include "avvp/model.hpp"

#include <cmath>

#include "avvp/error.hpp"
#include "avvp/rng.hpp"

namespace avvp {

Variant variant_from_string(const std::string& s) {
  if (s == "full") return Variant::full;
  if (s == "no_msg") return Variant::no_msg;
  if (s == "han") return Variant::han;
  if (s == "han_ca") return Variant::han_ca;
  if (s == "no_fa") return Variant::no_fa;
  throw ArgumentError("unknown variant '" + s + "' (expected full, no_msg, han, han_ca or no_fa)");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_msg: return "no_msg";
    case Variant::han: return "han";
    case Variant::han_ca: return "han_ca";
    case Variant::no_fa: return "no_fa";
  }
  return "?";
}

void ModelConfig::validate() const {
  if (T < 1) throw ConfigError("model: T must be >= 1");
  if (C < 1) throw ConfigError("model: C must be >= 1");
  if (d < 1 || d_a < 1 || d_v < 1) throw ConfigError("model: dimensions must be >= 1");
  if (L < 1 || M < 1) throw ConfigError("model: L and M must be >= 1");
  if (heads < 1) throw ConfigError("model: heads must be >= 1");
  if (d % heads != 0) throw ConfigError("model: d must be divisible by heads");
  if (n_a < 1 || n_a > T || n_v < 1 || n_v > T) throw ConfigError("model: messenger counts must lie in [1, T]");
  if (ffn_mult < 1) throw ConfigError("model: ffn_mult must be >= 1");
}

void ModelParams::add(std::string name, Array value) {
  names.push_back(std::move(name));
  values.push_back(std::move(value));
}

int64_t ModelParams::find(const std::string& name) const {
  for (size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<int64_t>(i);
  }
  return -1;
}

const Array& ModelParams::at(const std::string& name) const {
  const int64_t i = find(name);
  if (i < 0) throw ArgumentError("unknown parameter '" + name + "'");
  return values[static_cast<size_t>(i)];
}

int64_t ModelParams::total_elements() const {
  int64_t n = 0;
  for (const Array& a : values) n += a.size();
  return n;
}

Array sinusoidal_pe(int64_t T, int64_t d) {
  Array pe(Shape{T, d});
  for (int64_t t = 0; t < T; ++t) {
    for (int64_t j = 0; j < d; ++j) {
      const int64_t pair = j / 2;
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(pair) / static_cast<double>(d));
      const double angle = static_cast<double>(t) * freq;
      pe.at(t, j) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

// ---- parameter layout --------------------------------------------------------
//
// init_params and bind_model must agree exactly on names, shapes and order, so
// both are driven by the same traversal over a parameter sink.

namespace {

struct ParamSink {
  virtual ~ParamSink() = default;
  virtual Tensor linear(const std::string& name, int64_t rows, int64_t cols) = 0;
  virtual Tensor zeros(const std::string& name, int64_t n) = 0;
  virtual Tensor ones(const std::string& name, int64_t n) = 0;
};

AttnWeights build_attn(ParamSink& sink, const std::string& prefix, int64_t d) {
  AttnWeights w;
  w.wq = sink.linear(prefix + ".wq", d, d);
  w.wk = sink.linear(prefix + ".wk", d, d);
  w.wv = sink.linear(prefix + ".wv", d, d);
  w.wo = sink.linear(prefix + ".wo", d, d);
  return w;
}

FfnWeights build_ffn(ParamSink& sink, const std::string& prefix, int64_t d, int64_t mult) {
  FfnWeights w;
  const int64_t f = d * mult;
  w.w1 = sink.linear(prefix + ".w1", d, f);
  w.b1 = sink.zeros(prefix + ".b1", f);
  w.w2 = sink.linear(prefix + ".w2", f, d);
  w.b2 = sink.zeros(prefix + ".b2", d);
  return w;
}

LnWeights build_ln(ParamSink& sink, const std::string& prefix, int64_t d) {
  LnWeights w;
  w.gamma = sink.ones(prefix + ".gamma", d);
  w.beta = sink.zeros(prefix + ".beta", d);
  return w;
}

BranchWeights build_branch(ParamSink& sink, const std::string& m, int64_t d_in,
                           const ModelConfig& cfg, bool with_msg) {
  BranchWeights b;
  b.tok = sink.linear(m + ".tok.w", d_in, cfg.d);
  const bool hybrid = cfg.variant == Variant::han || cfg.variant == Variant::han_ca;
  if (hybrid) {
    HybridLayerWeights h;
    h.msa = build_attn(sink, m + ".hyb.msa", cfg.d);
    h.mca = build_attn(sink, m + ".hyb.mca", cfg.d);
    h.ln1 = build_ln(sink, m + ".hyb.ln1", cfg.d);
    h.ffn = build_ffn(sink, m + ".hyb.ffn", cfg.d, cfg.ffn_mult);
    h.ln2 = build_ln(sink, m + ".hyb.ln2", cfg.d);
    b.hybrid = h;
  } else {
    for (int64_t l = 0; l < cfg.L; ++l) {
      const std::string p = m + ".enc" + std::to_string(l);
      EncoderLayerWeights e;
      e.msa = build_attn(sink, p + ".msa", cfg.d);
      e.ln1 = build_ln(sink, p + ".ln1", cfg.d);
      e.ffn = build_ffn(sink, p + ".ffn", cfg.d, cfg.ffn_mult);
      e.ln2 = build_ln(sink, p + ".ln2", cfg.d);
      b.enc.push_back(e);
    }
    if (with_msg) b.msg = sink.linear(m + ".msg.w", cfg.d, cfg.d);
    for (int64_t l = 0; l < cfg.M; ++l) {
      const std::string p = m + ".dec" + std::to_string(l);
      DecoderLayerWeights dw;
      dw.msa = build_attn(sink, p + ".msa", cfg.d);
      dw.ln1 = build_ln(sink, p + ".ln1", cfg.d);
      dw.mca = build_attn(sink, p + ".mca", cfg.d);
      dw.ln2 = build_ln(sink, p + ".ln2", cfg.d);
      dw.ffn = build_ffn(sink, p + ".ffn", cfg.d, cfg.ffn_mult);
      dw.ln3 = build_ln(sink, p + ".ln3", cfg.d);
      b.dec.push_back(dw);
    }
  }
  b.cls = sink.linear(m + ".cls.w", cfg.d, cfg.C);
  b.tpool = sink.linear(m + ".tpool.w", cfg.d, cfg.C);
  return b;
}

BoundModel build_model(ParamSink& sink, const ModelConfig& cfg) {
  BoundModel m;
  m.config = cfg;
  // a modality's msg weight condenses its own encoder output into the
  // messengers consumed by the other branch; only consumed sides exist
  const bool a_msg = cfg.variant == Variant::full;
  const bool v_msg = cfg.variant == Variant::full || cfg.variant == Variant::no_fa;
  m.audio = build_branch(sink, "a", cfg.d_a, cfg, a_msg);
  m.visual = build_branch(sink, "v", cfg.d_v, cfg, v_msg);
  m.mpool = sink.linear("mpool.w", cfg.d, cfg.C);
  return m;
}

struct InitSink final : ParamSink {
  ModelParams* out;
  Rng rng;
  InitSink(ModelParams* p, uint64_t seed) : out(p), rng(seed) {}

  Tensor linear(const std::string& name, int64_t rows, int64_t cols) override {
    Array a(Shape{rows, cols});
    const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
    for (double& v : a.data) v = rng.uniform(-bound, bound);
    out->add(name, std::move(a));
    return Tensor();
  }
  Tensor zeros(const std::string& name, int64_t n) override {
    out->add(name, Array(Shape{n}));
    return Tensor();
  }
  Tensor ones(const std::string& name, int64_t n) override {
    out->add(name, Array::full(Shape{n}, 1.0));
    return Tensor();
  }
};

struct BindSink final : ParamSink {
  Tape* tape = nullptr;
  const ModelParams* params = nullptr;
  const std::vector<Tensor>* given = nullptr;  // pre-made leaves, optional
  bool requires_grad = true;
  size_t cursor = 0;
  std::vector<Tensor>* flat = nullptr;

  Tensor take(const std::string& name, const Shape& expect) {
    if (cursor >= params->size()) {
      throw ArgumentError("bind_model: parameter list ended early; expected '" + name + "'");
    }
    if (params->names[cursor] != name) {
      throw ArgumentError("bind_model: expected parameter '" + name + "', found '" +
                          params->names[cursor] + "'");
    }
    Tensor t;
    if (given) {
      t = (*given)[cursor];
      if (!same_shape(t.shape(), expect)) {
        throw DimensionError("bind_model: leaf '" + name + "' has shape " + shape_str(t.shape()) +
                             ", expected " + shape_str(expect));
      }
    } else {
      const Array& a = params->values[cursor];
      if (!same_shape(a.shape, expect)) {
        throw DimensionError("bind_model: parameter '" + name + "' has shape " + shape_str(a.shape) +
                             ", expected " + shape_str(expect));
      }
      t = tape->leaf(a, requires_grad);
    }
    ++cursor;
    flat->push_back(t);
    return t;
  }
  Tensor linear(const std::string& name, int64_t rows, int64_t cols) override {
    return take(name, Shape{rows, cols});
  }
  Tensor zeros(const std::string& name, int64_t n) override { return take(name, Shape{n}); }
  Tensor ones(const std::string& name, int64_t n) override { return take(name, Shape{n}); }
};

}  // namespace

ModelParams init_params(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  ModelParams params;
  InitSink sink(&params, seed);
  build_model(sink, cfg);
  return params;
}

namespace {

BoundModel bind_impl(Tape& tape, const ModelParams& params, const std::vector<Tensor>* given,
                     const ModelConfig& cfg, bool requires_grad) {
  cfg.validate();
  BindSink sink;
  sink.tape = &tape;
  sink.params = &params;
  sink.given = given;
  sink.requires_grad = requires_grad;
  std::vector<Tensor> flat;
  sink.flat = &flat;
  BoundModel m = build_model(sink, cfg);
  if (sink.cursor != params.size()) {
    throw ArgumentError("bind_model: " + std::to_string(params.size() - sink.cursor) +
                        " extra parameters beyond the layout");
  }
  m.flat = std::move(flat);
  m.pe = tape.constant(sinusoidal_pe(cfg.T, cfg.d));
  return m;
}

}  // namespace

BoundModel bind_model(Tape& tape, const ModelParams& params, const ModelConfig& cfg,
                      bool requires_grad) {
  return bind_impl(tape, params, nullptr, cfg, requires_grad);
}

BoundModel bind_model_from(Tape& tape, const ModelParams& schema,
                           const std::vector<Tensor>& leaves, const ModelConfig& cfg) {
  if (leaves.size() != schema.size()) {
    throw ArgumentError("bind_model_from: leaf count does not match the parameter layout");
  }
  return bind_impl(tape, schema, &leaves, cfg, /*requires_grad=*/true);
}

std::vector<Array> collect_grads(const BoundModel& m) {
  std::vector<Array> grads;
  grads.reserve(m.flat.size());
  for (const Tensor& t : m.flat) grads.push_back(t.grad());
  return grads;
}

// ---- building blocks -----------------------------------------------------------

Tensor attention(Tape& tape, const AttnWeights& w, const Tensor& q_in, const Tensor& kv_in,
                 int64_t heads, std::vector<Array>* probe_weights) {
  (void)tape;
  const int64_t d = q_in.shape()[1];
  const int64_t dh = d / heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor q = matmul(q_in, w.wq);
  Tensor k = matmul(kv_in, w.wk);
  Tensor v = matmul(kv_in, w.wv);
  Tensor merged;
  if (heads == 1) {
    Tensor a = softmax_lastdim(scale(matmul(q, transpose_last2(k)), att_scale));
    if (probe_weights) probe_weights->push_back(a.value());
    merged = matmul(a, v);
  } else {
    std::vector<Tensor> outs;
    outs.reserve(static_cast<size_t>(heads));
    for (int64_t h = 0; h < heads; ++h) {
      Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
      Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
      Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
      Tensor a = softmax_lastdim(scale(matmul(qh, transpose_last2(kh)), att_scale));
      if (probe_weights) probe_weights->push_back(a.value());
      outs.push_back(matmul(a, vh));
    }
    merged = concat_cols(outs);
  }
  return matmul(merged, w.wo);
}

Tensor tokenize(Tape& tape, const Tensor& features, const Tensor& w_enc, const Tensor& pe) {
  (void)tape;
  if (features.shape()[0] != pe.shape()[0]) {
    throw DimensionError("tokenize: sequence length " + std::to_string(features.shape()[0]) +
                         " does not match positional embedding length " +
                         std::to_string(pe.shape()[0]));
  }
  return add(matmul(features, w_enc), pe);
}

namespace {

Tensor ffn_forward(const FfnWeights& w, const Tensor& x) {
  return add(matmul(relu(add(matmul(x, w.w1), w.b1)), w.w2), w.b2);
}

}  // namespace

Tensor encoder_layer(Tape& tape, const EncoderLayerWeights& w, const Tensor& s, int64_t heads,
                     std::vector<Array>* probe_weights) {
  Tensor s1 = layer_norm(add(attention(tape, w.msa, s, s, heads, probe_weights), s), w.ln1.gamma,
                         w.ln1.beta);
  return layer_norm(add(ffn_forward(w.ffn, s1), s1), w.ln2.gamma, w.ln2.beta);
}

Tensor compute_messengers(Tape& tape, const Tensor& s_last, const Tensor& w_msg, int64_t n) {
  (void)tape;
  return tanh(mean_pool_segments(matmul(s_last, w_msg), n));
}

Tensor decoder_layer(Tape& tape, const DecoderLayerWeights& w, const Tensor& r, const Tensor& context,
                     int64_t heads, std::vector<Array>* probe_self, std::vector<Array>* probe_cross) {
  Tensor r1 = layer_norm(add(attention(tape, w.msa, r, r, heads, probe_self), r), w.ln1.gamma,
                         w.ln1.beta);
  Tensor r2 = layer_norm(add(attention(tape, w.mca, r1, context, heads, probe_cross), r1),
                         w.ln2.gamma, w.ln2.beta);
  return layer_norm(add(ffn_forward(w.ffn, r2), r2), w.ln3.gamma, w.ln3.beta);
}

Tensor hybrid_layer(Tape& tape, const HybridLayerWeights& w, const Tensor& s, const Tensor& context,
                    int64_t heads, std::vector<Array>* probe_self, std::vector<Array>* probe_cross) {
  Tensor mixed = add(add(attention(tape, w.msa, s, s, heads, probe_self),
                         attention(tape, w.mca, s, context, heads, probe_cross)),
                     s);
  Tensor h = layer_norm(mixed, w.ln1.gamma, w.ln1.beta);
  return layer_norm(add(ffn_forward(w.ffn, h), h), w.ln2.gamma, w.ln2.beta);
}

Tensor classify(Tape& tape, const Tensor& r, const Tensor& w_cls) {
  (void)tape;
  return sigmoid(matmul(r, w_cls));
}

PooledPredictions pool_video_level(Tape& tape, const Tensor& p_a, const Tensor& p_v,
                                   const Tensor& r_a, const Tensor& r_v, const Tensor& tpool_a,
                                   const Tensor& tpool_v, const Tensor& mpool) {
  (void)tape;
  // per-class softmax over time
  auto temporal_weights = [](const Tensor& r, const Tensor& tpool) {
    return transpose_last2(softmax_lastdim(transpose_last2(matmul(r, tpool))));
  };
  Tensor w_a = temporal_weights(r_a, tpool_a);  // [T, C], columns sum to 1
  Tensor w_v = temporal_weights(r_v, tpool_v);

  PooledPredictions out;
  out.ptilde_a = sum_dim0(mul(w_a, p_a));
  out.ptilde_v = sum_dim0(mul(w_v, p_v));

  // two-way modality softmax per (t, c); complement taken exactly
  Tensor logit_a = matmul(r_a, mpool);
  Tensor logit_v = matmul(r_v, mpool);
  Tensor m_a = sigmoid(sub(logit_a, logit_v));
  Tensor m_v = affine(m_a, -1.0, 1.0);
  Tensor p_video = add(mul(m_a, p_a), mul(m_v, p_v));

  // temporal mixture renormalized across the two modalities
  Tensor u = scale(add(w_a, w_v), 0.5);
  out.ptilde_video = sum_dim0(mul(u, p_video));
  return out;
}

// ---- full forward -----------------------------------------------------------------

PredictionTensors forward(Tape& tape, const BoundModel& m, const Array& audio_feats,
                          const Array& visual_feats, ForwardProbe* probe) {
  const ModelConfig& cfg = m.config;
  if (audio_feats.rank() != 2 || audio_feats.shape[0] != cfg.T || audio_feats.shape[1] != cfg.d_a) {
    throw DimensionError("forward: audio features " + shape_str(audio_feats.shape) +
                         " do not match config [T,d_a]=[" + std::to_string(cfg.T) + "," +
                         std::to_string(cfg.d_a) + "]");
  }
  if (visual_feats.rank() != 2 || visual_feats.shape[0] != cfg.T || visual_feats.shape[1] != cfg.d_v) {
    throw DimensionError("forward: visual features " + shape_str(visual_feats.shape) +
                         " do not match config [T,d_v]=[" + std::to_string(cfg.T) + "," +
                         std::to_string(cfg.d_v) + "]");
  }

  Tensor f_a = tape.constant(audio_feats);
  Tensor f_v = tape.constant(visual_feats);
  Tensor s_a = tokenize(tape, f_a, m.audio.tok, m.pe);
  Tensor s_v = tokenize(tape, f_v, m.visual.tok, m.pe);

  Tensor r_a, r_v;
  switch (cfg.variant) {
    case Variant::han:
    case Variant::han_ca: {
      const Tensor ctx_a = cfg.variant == Variant::han ? s_v : s_a;
      const Tensor ctx_v = cfg.variant == Variant::han ? s_a : s_v;
      r_a = hybrid_layer(tape, *m.audio.hybrid, s_a, ctx_a, cfg.heads,
                         probe ? &probe->enc_self_audio : nullptr,
                         probe ? &probe->dec_cross_audio : nullptr);
      r_v = hybrid_layer(tape, *m.visual.hybrid, s_v, ctx_v, cfg.heads,
                         probe ? &probe->enc_self_visual : nullptr,
                         probe ? &probe->dec_cross_visual : nullptr);
      break;
    }
    default: {
      for (int64_t l = 0; l < cfg.L; ++l) {
        s_a = encoder_layer(tape, m.audio.enc[static_cast<size_t>(l)], s_a, cfg.heads,
                            probe ? &probe->enc_self_audio : nullptr);
        s_v = encoder_layer(tape, m.visual.enc[static_cast<size_t>(l)], s_v, cfg.heads,
                            probe ? &probe->enc_self_visual : nullptr);
      }
      // context for each decoder comes from the opposite modality (except no_fa,
      // where the visual branch attends its own tokens)
      Tensor ctx_for_audio, ctx_for_visual;
      if (cfg.variant == Variant::full) {
        Tensor msg_a = compute_messengers(tape, s_a, m.audio.msg, cfg.n_a);
        Tensor msg_v = compute_messengers(tape, s_v, m.visual.msg, cfg.n_v);
        if (probe) {
          probe->messengers_audio = msg_a.value();
          probe->messengers_visual = msg_v.value();
        }
        ctx_for_audio = msg_v;
        ctx_for_visual = msg_a;
      } else if (cfg.variant == Variant::no_msg) {
        ctx_for_audio = s_v;
        ctx_for_visual = s_a;
      } else {  // no_fa
        Tensor msg_v = compute_messengers(tape, s_v, m.visual.msg, cfg.n_v);
        if (probe) probe->messengers_visual = msg_v.value();
        ctx_for_audio = msg_v;
        ctx_for_visual = s_v;
      }
      r_a = s_a;
      r_v = s_v;
      for (int64_t l = 0; l < cfg.M; ++l) {
        r_a = decoder_layer(tape, m.audio.dec[static_cast<size_t>(l)], r_a, ctx_for_audio, cfg.heads,
                            probe ? &probe->dec_self_audio : nullptr,
                            probe ? &probe->dec_cross_audio : nullptr);
        r_v = decoder_layer(tape, m.visual.dec[static_cast<size_t>(l)], r_v, ctx_for_visual, cfg.heads,
                            probe ? &probe->dec_self_visual : nullptr,
                            probe ? &probe->dec_cross_visual : nullptr);
      }
      break;
    }
  }

  PredictionTensors out;
  out.p_a = classify(tape, r_a, m.audio.cls);
  out.p_v = classify(tape, r_v, m.visual.cls);
  PooledPredictions pooled = pool_video_level(tape, out.p_a, out.p_v, r_a, r_v, m.audio.tpool,
                                              m.visual.tpool, m.mpool);
  out.ptilde_a = pooled.ptilde_a;
  out.ptilde_v = pooled.ptilde_v;
  out.ptilde_video = pooled.ptilde_video;
  return out;
}

PredictionSet forward_values(const ModelParams& params, const ModelConfig& cfg,
                             const Array& audio_feats, const Array& visual_feats,
                             ForwardProbe* probe) {
  Tape tape;
  BoundModel m = bind_model(tape, params, cfg, /*requires_grad=*/false);
  PredictionTensors t = forward(tape, m, audio_feats, visual_feats, probe);
  PredictionSet out;
  out.p_a = t.p_a.value();
  out.p_v = t.p_v.value();
  out.ptilde_a = t.ptilde_a.value();
  out.ptilde_v = t.ptilde_v.value();
  out.ptilde_video = t.ptilde_video.value();
  return out;
}

}  // namespace avvp
