#include "avvp/train.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "avvp/error.hpp"

namespace avvp {

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
  if (lr0 <= 0) throw ConfigError("train: lr0 must be positive");
  if (lr_decay <= 0 || lr_decay > 1) throw ConfigError("train: lr_decay must lie in (0, 1]");
  if (lr_decay_every < 1) throw ConfigError("train: lr_decay_every must be >= 1");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (mu < 0) throw ConfigError("train: mu must be nonnegative");
  if (n_pairs < 0) throw ConfigError("train: n_pairs must be nonnegative");
  if (tau <= 0 || tau >= 1) throw ConfigError("train: tau must lie in (0, 1)");
}

double lr_at(int64_t epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw ArgumentError("lr_at: negative epoch");
  return cfg.lr0 * std::pow(cfg.lr_decay, static_cast<double>(epoch / cfg.lr_decay_every));
}

AdamState AdamState::init_like(const ModelParams& params) {
  AdamState st;
  st.m.reserve(params.size());
  st.v.reserve(params.size());
  for (const Array& p : params.values) {
    st.m.emplace_back(p.shape);
    st.v.emplace_back(p.shape);
  }
  return st;
}

void adam_step(ModelParams& params, const std::vector<Array>& grads, AdamState& st, double lr) {
  if (grads.size() != params.size() || st.m.size() != params.size()) {
    throw ArgumentError("adam_step: parameter/gradient/state counts disagree");
  }
  for (size_t i = 0; i < grads.size(); ++i) {
    if (!same_shape(grads[i].shape, params.values[i].shape)) {
      throw DimensionError("adam_step: gradient shape mismatch for '" + params.names[i] + "'");
    }
    if (!grads[i].all_finite()) {
      throw NumericError("adam_step: non-finite gradient for '" + params.names[i] + "', step aborted");
    }
  }
  st.step += 1;
  st.lr = lr;
  const double bc1 = 1.0 - std::pow(st.cfg.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.cfg.beta2, static_cast<double>(st.step));
  for (size_t i = 0; i < grads.size(); ++i) {
    double* p = params.values[i].data.data();
    double* m = st.m[i].data.data();
    double* v = st.v[i].data.data();
    const double* g = grads[i].data.data();
    const size_t n = params.values[i].data.size();
    for (size_t e = 0; e < n; ++e) {
      m[e] = st.cfg.beta1 * m[e] + (1.0 - st.cfg.beta1) * g[e];
      v[e] = st.cfg.beta2 * v[e] + (1.0 - st.cfg.beta2) * g[e] * g[e];
      const double mhat = m[e] / bc1;
      const double vhat = v[e] / bc2;
      p[e] -= lr * mhat / (std::sqrt(vhat) + st.cfg.eps);
    }
  }
}

// ---- checkpoint format ---------------------------------------------------------

namespace {

constexpr char kCkptMagic[9] = "AVVPCKPT";
constexpr uint32_t kCkptVersion = 1;

void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, sizeof bits);
  put_u64(buf, bits);
}

void put_str(std::string& buf, const std::string& s) {
  put_u32(buf, static_cast<uint32_t>(s.size()));
  buf.append(s);
}

void put_tensor(std::string& buf, const std::string& name, const Array& a) {
  put_str(buf, name);
  put_u32(buf, static_cast<uint32_t>(a.shape.size()));
  for (int64_t d : a.shape) put_u64(buf, static_cast<uint64_t>(d));
  for (double v : a.data) put_f64(buf, v);
}

struct Reader {
  const std::string& path;
  std::vector<uint8_t> bytes;
  size_t off = 0;

  void need(size_t n, const char* what) {
    if (off + n > bytes.size()) {
      throw FormatError(path + ": truncated at offset " + std::to_string(off) + " while reading " +
                        what);
    }
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[off + i]) << (8 * i);
    off += 4;
    return v;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(bytes[off + i]) << (8 * i);
    off += 8;
    return v;
  }
  double f64(const char* what) {
    const uint64_t bits = u64(what);
    double d;
    std::memcpy(&d, &bits, sizeof d);
    return d;
  }
  std::string str(const char* what) {
    const uint32_t n = u32(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes.data() + off), n);
    off += n;
    return s;
  }
  Array tensor(std::string* name) {
    *name = str("tensor name");
    const uint32_t rank = u32("tensor rank");
    if (rank > 8) throw FormatError(path + ": implausible tensor rank at offset " + std::to_string(off));
    Shape shape;
    for (uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<int64_t>(u64("tensor dim")));
    Array a(shape);
    for (double& v : a.data) v = f64("tensor payload");
    return a;
  }
};

std::string fmt_double(double d) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", d);
  return buf;
}

std::string config_blob(const Checkpoint& cp) {
  std::ostringstream os;
  const ModelConfig& m = cp.config;
  os << "T=" << m.T << "\nC=" << m.C << "\nd=" << m.d << "\nd_a=" << m.d_a << "\nd_v=" << m.d_v
     << "\nL=" << m.L << "\nM=" << m.M << "\nheads=" << m.heads << "\nn_a=" << m.n_a
     << "\nn_v=" << m.n_v << "\nffn_mult=" << m.ffn_mult << "\nvariant=" << to_string(m.variant)
     << "\nstage=" << cp.stage << "\nepoch=" << cp.epoch << "\nadam_step=" << cp.opt.step
     << "\nadam_lr=" << fmt_double(cp.opt.lr) << "\nbeta1=" << fmt_double(cp.opt.cfg.beta1)
     << "\nbeta2=" << fmt_double(cp.opt.cfg.beta2) << "\neps=" << fmt_double(cp.opt.cfg.eps) << "\n";
  return os.str();
}

std::map<std::string, std::string> parse_blob(const std::string& path, const std::string& blob) {
  std::map<std::string, std::string> kv;
  std::istringstream is(blob);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(path + ": malformed config line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

int64_t blob_int(const std::string& path, const std::map<std::string, std::string>& kv,
                 const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw FormatError(path + ": config blob misses '" + key + "'");
  return std::stoll(it->second);
}

double blob_double(const std::string& path, const std::map<std::string, std::string>& kv,
                   const std::string& key) {
  auto it = kv.find(key);
  if (it == kv.end()) throw FormatError(path + ": config blob misses '" + key + "'");
  return std::strtod(it->second.c_str(), nullptr);
}

}  // namespace

void save_checkpoint(const Checkpoint& cp, const std::string& path) {
  std::string buf;
  buf.append(kCkptMagic, 8);
  put_u32(buf, cp.version);
  put_str(buf, config_blob(cp));
  put_u32(buf, static_cast<uint32_t>(cp.params.size() * 3));
  for (size_t i = 0; i < cp.params.size(); ++i) {
    put_tensor(buf, cp.params.names[i], cp.params.values[i]);
  }
  for (size_t i = 0; i < cp.params.size(); ++i) {
    put_tensor(buf, "opt.m:" + cp.params.names[i], cp.opt.m[i]);
  }
  for (size_t i = 0; i < cp.params.size(); ++i) {
    put_tensor(buf, "opt.v:" + cp.params.names[i], cp.opt.v[i]);
  }
  put_str(buf, cp.rng_state);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(path + ": cannot open for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error(path + ": write failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open checkpoint");
  Reader r{path, {(std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()}, 0};
  r.need(8, "magic");
  if (std::memcmp(r.bytes.data(), kCkptMagic, 8) != 0) {
    throw FormatError(path + ": bad checkpoint magic at offset 0");
  }
  r.off = 8;
  Checkpoint cp;
  cp.version = r.u32("version");
  if (cp.version != kCkptVersion) {
    throw VersionError(path + ": unsupported checkpoint version " + std::to_string(cp.version));
  }
  const auto kv = parse_blob(path, r.str("config blob"));
  cp.config.T = blob_int(path, kv, "T");
  cp.config.C = blob_int(path, kv, "C");
  cp.config.d = blob_int(path, kv, "d");
  cp.config.d_a = blob_int(path, kv, "d_a");
  cp.config.d_v = blob_int(path, kv, "d_v");
  cp.config.L = blob_int(path, kv, "L");
  cp.config.M = blob_int(path, kv, "M");
  cp.config.heads = blob_int(path, kv, "heads");
  cp.config.n_a = blob_int(path, kv, "n_a");
  cp.config.n_v = blob_int(path, kv, "n_v");
  cp.config.ffn_mult = blob_int(path, kv, "ffn_mult");
  auto vit = kv.find("variant");
  if (vit == kv.end()) throw FormatError(path + ": config blob misses 'variant'");
  cp.config.variant = variant_from_string(vit->second);
  cp.stage = static_cast<int32_t>(blob_int(path, kv, "stage"));
  cp.epoch = blob_int(path, kv, "epoch");
  cp.opt.step = blob_int(path, kv, "adam_step");
  cp.opt.lr = blob_double(path, kv, "adam_lr");
  cp.opt.cfg.beta1 = blob_double(path, kv, "beta1");
  cp.opt.cfg.beta2 = blob_double(path, kv, "beta2");
  cp.opt.cfg.eps = blob_double(path, kv, "eps");

  const uint32_t n_tensors = r.u32("tensor count");
  if (n_tensors % 3 != 0) throw FormatError(path + ": tensor count not divisible by 3");
  const uint32_t n_params = n_tensors / 3;
  for (uint32_t i = 0; i < n_params; ++i) {
    std::string name;
    Array a = r.tensor(&name);
    cp.params.add(std::move(name), std::move(a));
  }
  auto read_opt = [&r, &cp, &path](const std::string& prefix, std::vector<Array>* out) {
    for (size_t i = 0; i < cp.params.size(); ++i) {
      std::string name;
      Array a = r.tensor(&name);
      if (name != prefix + cp.params.names[i]) {
        throw FormatError(path + ": optimizer tensor '" + name + "' out of order");
      }
      if (!same_shape(a.shape, cp.params.values[i].shape)) {
        throw FormatError(path + ": optimizer tensor '" + name + "' shape mismatch");
      }
      out->push_back(std::move(a));
    }
  };
  read_opt("opt.m:", &cp.opt.m);
  read_opt("opt.v:", &cp.opt.v);
  cp.rng_state = r.str("rng state");
  if (r.off != r.bytes.size()) {
    throw FormatError(path + ": trailing bytes at offset " + std::to_string(r.off));
  }
  return cp;
}

// ---- epoch log -------------------------------------------------------------------

std::string format_epoch_line(const EpochRecord& rec) {
  std::ostringstream os;
  os << "stage=" << rec.stage << " epoch=" << rec.epoch << " lr=" << fmt_double(rec.lr)
     << " cls_a=" << fmt_double(rec.loss.cls_a) << " cls_v=" << fmt_double(rec.loss.cls_v)
     << " cls_video=" << fmt_double(rec.loss.cls_video) << " cls=" << fmt_double(rec.loss.cls_total)
     << " ccr=" << fmt_double(rec.loss.ccr) << " total=" << fmt_double(rec.loss.total);
  return os.str();
}

// ---- stage driver ------------------------------------------------------------------

namespace {

Checkpoint run_stage(int32_t stage_id, const std::vector<VideoSample>& data,
                     const std::vector<WeakLabels>& labels, const ModelConfig& mcfg,
                     const TrainConfig& tcfg, bool with_cross_audio, EpochLog* log,
                     const Checkpoint* resume) {
  if (data.empty()) throw ArgumentError("training: dataset is empty");
  if (labels.size() != data.size()) throw ArgumentError("training: labels/dataset size mismatch");
  mcfg.validate();
  tcfg.validate();

  ModelParams params;
  AdamState adam;
  Rng rng(mix_seed(tcfg.seed, static_cast<uint64_t>(stage_id) * 1000003ULL));
  int64_t start_epoch = 0;
  if (resume) {
    if (resume->stage != stage_id) {
      throw ArgumentError("resume checkpoint is for stage " + std::to_string(resume->stage) +
                          ", not stage " + std::to_string(stage_id));
    }
    params = resume->params;
    adam = resume->opt;
    rng = Rng::deserialize(resume->rng_state);
    start_epoch = resume->epoch;
  } else {
    params = init_params(mcfg, tcfg.seed);
    adam = AdamState::init_like(params);
  }

  // batch order depends on (seed, epoch) only, so stages with the same seed
  // visit videos in the same order
  const uint64_t shuffle_seed = tcfg.seed;
  for (int64_t epoch = start_epoch; epoch < tcfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, tcfg);
    const auto batches = epoch_batches(static_cast<int64_t>(data.size()), tcfg.batch_size,
                                       shuffle_seed, epoch);
    LossBreakdown epoch_loss;
    epoch_loss.mu = tcfg.mu;
    epoch_loss.n_pairs = with_cross_audio ? tcfg.n_pairs : 0;
    for (size_t bi = 0; bi < batches.size(); ++bi) {
      const std::vector<int64_t>& batch = batches[bi];
      try {
        Tape tape;
        BoundModel bound = bind_model(tape, params, mcfg, /*requires_grad=*/true);
        std::vector<std::vector<int64_t>> donors;
        if (with_cross_audio && tcfg.n_pairs > 0) {
          donors = sample_cross_audio_indices(static_cast<int64_t>(batch.size()), tcfg.n_pairs, rng);
        }
        Tensor batch_loss;
        for (size_t i = 0; i < batch.size(); ++i) {
          const VideoSample& s = data[static_cast<size_t>(batch[i])];
          const WeakLabels& lab = labels[static_cast<size_t>(batch[i])];
          PredictionTensors preds = forward(tape, bound, s.audio, s.visual);
          ClassificationLoss cls = classification_loss(tape, preds, lab);
          Tensor vid_loss = cls.total;
          double ccr_value = 0.0;
          if (!donors.empty()) {
            std::vector<Tensor> cross_preds;
            cross_preds.reserve(donors[i].size());
            for (int64_t donor_slot : donors[i]) {
              const VideoSample& donor = data[static_cast<size_t>(batch[static_cast<size_t>(donor_slot)])];
              PredictionTensors cross = forward(tape, bound, donor.audio, s.visual);
              cross_preds.push_back(cross.ptilde_v);
            }
            Tensor ccr = capc_loss(tape, preds.ptilde_v, cross_preds);
            ccr_value = ccr.values()[0];
            vid_loss = total_loss(cls.total, ccr, tcfg.mu);
          }
          epoch_loss.cls_a += cls.a.values()[0];
          epoch_loss.cls_v += cls.v.values()[0];
          epoch_loss.cls_video += cls.video.values()[0];
          epoch_loss.cls_total += cls.total.values()[0];
          epoch_loss.ccr += ccr_value;
          epoch_loss.total += vid_loss.values()[0];
          batch_loss = batch_loss.valid() ? add(batch_loss, vid_loss) : vid_loss;
        }
        batch_loss = scale(batch_loss, 1.0 / static_cast<double>(batch.size()));
        tape.backward(batch_loss);
        adam_step(params, collect_grads(bound), adam, lr);
      } catch (const NumericError& e) {
        throw NumericError("stage " + std::to_string(stage_id) + " epoch " + std::to_string(epoch) +
                           " batch " + std::to_string(bi) + ": " + e.what());
      }
    }
    if (log) {
      const double inv_n = 1.0 / static_cast<double>(data.size());
      epoch_loss.cls_a *= inv_n;
      epoch_loss.cls_v *= inv_n;
      epoch_loss.cls_video *= inv_n;
      epoch_loss.cls_total *= inv_n;
      epoch_loss.ccr *= inv_n;
      epoch_loss.total *= inv_n;
      log->push_back(EpochRecord{stage_id, epoch, lr, epoch_loss});
    }
  }

  Checkpoint cp;
  cp.config = mcfg;
  cp.params = std::move(params);
  cp.opt = std::move(adam);
  cp.rng_state = rng.serialize();
  cp.stage = stage_id;
  cp.epoch = tcfg.epochs;
  return cp;
}

}  // namespace

Checkpoint train_stage1(const std::vector<VideoSample>& data, const ModelConfig& mcfg,
                        const TrainConfig& tcfg, EpochLog* log, const Checkpoint* resume) {
  std::vector<WeakLabels> labels;
  labels.reserve(data.size());
  for (const VideoSample& s : data) labels.push_back(labels_from_union(s.label));
  return run_stage(1, data, labels, mcfg, tcfg, /*with_cross_audio=*/false, log, resume);
}

std::pair<uint8_t, uint8_t> pseudo_label_rule(double ptilde_a, double ptilde_v, double tau,
                                              bool in_union) {
  if (!in_union) return {0, 0};
  const bool keep_a = ptilde_a >= tau;
  const bool keep_v = ptilde_v >= tau;
  if (keep_a || keep_v) return {keep_a ? uint8_t{1} : uint8_t{0}, keep_v ? uint8_t{1} : uint8_t{0}};
  if (ptilde_a > ptilde_v) return {1, 0};
  if (ptilde_v > ptilde_a) return {0, 1};
  return {1, 1};
}

std::vector<WeakLabels> compute_pseudo_labels(const Checkpoint& cp,
                                              const std::vector<VideoSample>& data, double tau) {
  if (tau <= 0 || tau >= 1) throw ArgumentError("pseudo labels: tau must lie in (0, 1)");
  std::vector<WeakLabels> out;
  out.reserve(data.size());
  for (const VideoSample& s : data) {
    const PredictionSet preds = forward_values(cp.params, cp.config, s.audio, s.visual);
    WeakLabels lab;
    lab.y = s.label;
    lab.y_a.assign(s.label.size(), 0);
    lab.y_v.assign(s.label.size(), 0);
    for (size_t c = 0; c < s.label.size(); ++c) {
      const auto [ya, yv] = pseudo_label_rule(preds.ptilde_a.data[c], preds.ptilde_v.data[c], tau,
                                              s.label[c] != 0);
      lab.y_a[c] = ya;
      lab.y_v[c] = yv;
    }
    lab.validate();
    out.push_back(std::move(lab));
  }
  return out;
}

Checkpoint train_stage3(const std::vector<VideoSample>& data,
                        const std::vector<WeakLabels>& pseudo, const ModelConfig& mcfg,
                        const TrainConfig& tcfg, EpochLog* log, const Checkpoint* resume) {
  if (pseudo.size() != data.size()) throw ArgumentError("stage 3: pseudo labels/dataset size mismatch");
  for (size_t i = 0; i < pseudo.size(); ++i) {
    pseudo[i].validate();
    if (pseudo[i].y != data[i].label) {
      throw ArgumentError("stage 3: pseudo label union differs from the video label at sample " +
                          std::to_string(i));
    }
  }
  return run_stage(3, data, pseudo, mcfg, tcfg, /*with_cross_audio=*/tcfg.n_pairs > 0, log, resume);
}

}  // namespace avvp
