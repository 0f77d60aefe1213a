#pragma once

#include <optional>
#include <string>
#include <vector>

#include "avvp/array.hpp"
#include "avvp/tensor.hpp"

namespace avvp {

/// Embedding variants. `full` is the messenger-guided mid-fusion model;
/// `no_msg` feeds the decoder the full opposite-modality token sequence;
/// `no_fa` cuts audio context from the visual branch; `han` is the early
/// fusion baseline (parallel self/cross attention on the input tokens) and
/// `han_ca` is han with cross-attention pointed at the modality itself.
enum class Variant { full, no_msg, han, han_ca, no_fa };

Variant variant_from_string(const std::string& s);
std::string to_string(Variant v);

struct ModelConfig {
  int64_t T = 10;    // segments per video
  int64_t C = 25;    // event classes
  int64_t d = 64;    // hidden size (512 at paper scale)
  int64_t d_a = 128; // audio feature dim
  int64_t d_v = 128; // visual feature dim
  int64_t L = 1;     // encoder layers per modality
  int64_t M = 1;     // decoder layers per modality
  int64_t heads = 1;
  int64_t n_a = 1;   // audio messengers
  int64_t n_v = 1;   // visual messengers
  int64_t ffn_mult = 4;
  Variant variant = Variant::full;

  void validate() const;  // throws ConfigError
};

/// Flat list of named parameter tensors in a fixed layout order.
struct ModelParams {
  std::vector<std::string> names;
  std::vector<Array> values;

  void add(std::string name, Array value);
  int64_t find(const std::string& name) const;  // -1 when absent
  const Array& at(const std::string& name) const;
  size_t size() const { return values.size(); }
  int64_t total_elements() const;
};

/// Seeded initialization: linear maps uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)),
/// LN gamma 1 / beta 0, biases 0.
ModelParams init_params(const ModelConfig& cfg, uint64_t seed);

/// Fixed sinusoidal positional embedding, shared by both modalities.
Array sinusoidal_pe(int64_t T, int64_t d);

// ---- weights bound to a tape -----------------------------------------------

struct AttnWeights {
  Tensor wq, wk, wv, wo;
};
struct FfnWeights {
  Tensor w1, b1, w2, b2;
};
struct LnWeights {
  Tensor gamma, beta;
};
struct EncoderLayerWeights {
  AttnWeights msa;
  FfnWeights ffn;
  LnWeights ln1, ln2;
};
struct DecoderLayerWeights {
  AttnWeights msa, mca;
  FfnWeights ffn;
  LnWeights ln1, ln2, ln3;
};
struct HybridLayerWeights {
  AttnWeights msa, mca;
  FfnWeights ffn;
  LnWeights ln1, ln2;
};
struct BranchWeights {
  Tensor tok;  // input projection [d_in, d]
  std::vector<EncoderLayerWeights> enc;
  Tensor msg;  // messenger projection [d, d]; invalid if unused by the variant
  std::vector<DecoderLayerWeights> dec;
  std::optional<HybridLayerWeights> hybrid;
  Tensor cls;    // [d, C]
  Tensor tpool;  // temporal pooling logits map [d, C]
};

struct BoundModel {
  ModelConfig config;
  BranchWeights audio, visual;
  Tensor mpool;  // modality pooling logits map [d, C], shared
  Tensor pe;     // constant [T, d]
  std::vector<Tensor> flat;  // leaves in ModelParams order
};

/// Insert every parameter as a tape leaf. Order and names must match the
/// layout for the given config.
BoundModel bind_model(Tape& tape, const ModelParams& params, const ModelConfig& cfg,
                      bool requires_grad = true);

/// Bind a model whose parameter tensors already live on the tape, in the same
/// order as `schema`. Used by the gradient checker.
BoundModel bind_model_from(Tape& tape, const ModelParams& schema,
                           const std::vector<Tensor>& leaves, const ModelConfig& cfg);

/// Gradients of all parameters after Tape::backward, in ModelParams order.
std::vector<Array> collect_grads(const BoundModel& m);

// ---- forward pass -----------------------------------------------------------

struct PredictionTensors {
  Tensor p_a, p_v;                          // [T, C]
  Tensor ptilde_a, ptilde_v, ptilde_video;  // [C]
};

struct PredictionSet {
  Array p_a, p_v;
  Array ptilde_a, ptilde_v, ptilde_video;
};

/// Optional inspection of attention internals (weights are recorded per layer
/// and head as [Tq, Tk] matrices).
struct ForwardProbe {
  std::vector<Array> enc_self_audio, enc_self_visual;
  std::vector<Array> dec_self_audio, dec_self_visual;
  std::vector<Array> dec_cross_audio, dec_cross_visual;
  Array messengers_audio, messengers_visual;
};

/// Scaled dot-product attention with multi-head split; query from q_in,
/// key/value from kv_in. Appends per-head weight matrices to probe_weights.
Tensor attention(Tape& tape, const AttnWeights& w, const Tensor& q_in, const Tensor& kv_in,
                 int64_t heads, std::vector<Array>* probe_weights = nullptr);

Tensor tokenize(Tape& tape, const Tensor& features, const Tensor& w_enc, const Tensor& pe);
Tensor encoder_layer(Tape& tape, const EncoderLayerWeights& w, const Tensor& s, int64_t heads,
                     std::vector<Array>* probe_weights = nullptr);
Tensor compute_messengers(Tape& tape, const Tensor& s_last, const Tensor& w_msg, int64_t n);
Tensor decoder_layer(Tape& tape, const DecoderLayerWeights& w, const Tensor& r, const Tensor& context,
                     int64_t heads, std::vector<Array>* probe_self = nullptr,
                     std::vector<Array>* probe_cross = nullptr);
Tensor hybrid_layer(Tape& tape, const HybridLayerWeights& w, const Tensor& s, const Tensor& context,
                    int64_t heads, std::vector<Array>* probe_self = nullptr,
                    std::vector<Array>* probe_cross = nullptr);
Tensor classify(Tape& tape, const Tensor& r, const Tensor& w_cls);

struct PooledPredictions {
  Tensor ptilde_a, ptilde_v, ptilde_video;
};

/// Attentive MIL pooling: per-class temporal softmax weights per modality,
/// a two-way modality softmax per (t, c), and a renormalized temporal mixture
/// for the modality-agnostic prediction. All mixtures are convex.
PooledPredictions pool_video_level(Tape& tape, const Tensor& p_a, const Tensor& p_v,
                                   const Tensor& r_a, const Tensor& r_v, const Tensor& tpool_a,
                                   const Tensor& tpool_v, const Tensor& mpool);

PredictionTensors forward(Tape& tape, const BoundModel& m, const Array& audio_feats,
                          const Array& visual_feats, ForwardProbe* probe = nullptr);

/// Convenience: run a forward pass on a private tape and return plain arrays.
PredictionSet forward_values(const ModelParams& params, const ModelConfig& cfg,
                             const Array& audio_feats, const Array& visual_feats,
                             ForwardProbe* probe = nullptr);

}  // namespace avvp
