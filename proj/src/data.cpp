#include "avvp/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "avvp/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace avvp {

BinMat binmat_and(const BinMat& a, const BinMat& b) {
  if (a.rows != b.rows || a.cols != b.cols) throw DimensionError("binmat_and: size mismatch");
  BinMat out(a.rows, a.cols);
  for (size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] & b.data[i];
  return out;
}

void SynthConfig::validate() const {
  if (num_videos < 1) throw ConfigError("synth: num_videos must be >= 1");
  if (T < 1 || C < 1 || d_a < 1 || d_v < 1) throw ConfigError("synth: T, C, d_a, d_v must be >= 1");
  if (p_audio_only < 0 || p_visual_only < 0 || p_both < 0) {
    throw ConfigError("synth: mode probabilities must be nonnegative");
  }
  const double sum = p_audio_only + p_visual_only + p_both;
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("synth: mode probabilities sum to " + std::to_string(sum) + ", expected 1");
  }
  if (events_per_video_mean < 1.0) throw ConfigError("synth: events_per_video_mean must be >= 1");
  if (noise_sigma < 0) throw ConfigError("synth: noise_sigma must be >= 0");
  if (min_event_len < 1 || min_event_len > T) throw ConfigError("synth: min_event_len outside [1, T]");
}

namespace {

struct EventSpan {
  int64_t start, len;
};

EventSpan draw_span(Rng& rng, int64_t T, int64_t min_len) {
  const int64_t len = rng.uniform_int(min_len, T);
  const int64_t start = rng.uniform_int(0, T - len);
  return {start, len};
}

bool spans_overlap(const EventSpan& a, const EventSpan& b) {
  return a.start <= b.start + b.len - 1 && b.start <= a.start + a.len - 1;
}

Array unit_prototype(Rng& rng, int64_t dim) {
  Array p(Shape{dim});
  double norm2 = 0.0;
  for (double& v : p.data) {
    v = rng.normal();
    norm2 += v * v;
  }
  const double inv = 1.0 / std::sqrt(std::max(norm2, 1e-30));
  for (double& v : p.data) v *= inv;
  return p;
}

}  // namespace

std::vector<VideoSample> generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);

  std::vector<Array> proto_a, proto_v;
  proto_a.reserve(static_cast<size_t>(cfg.C));
  proto_v.reserve(static_cast<size_t>(cfg.C));
  for (int64_t c = 0; c < cfg.C; ++c) {
    proto_a.push_back(unit_prototype(rng, cfg.d_a));
    proto_v.push_back(unit_prototype(rng, cfg.d_v));
  }

  std::vector<VideoSample> out;
  out.reserve(static_cast<size_t>(cfg.num_videos));
  for (int64_t vi = 0; vi < cfg.num_videos; ++vi) {
    VideoSample s;
    char idbuf[32];
    std::snprintf(idbuf, sizeof idbuf, "synth-%05lld", static_cast<long long>(vi));
    s.id = idbuf;
    s.label.assign(static_cast<size_t>(cfg.C), 0);
    BinMat gt_a(cfg.T, cfg.C), gt_v(cfg.T, cfg.C);

    int64_t n_events = 1 + rng.poisson(cfg.events_per_video_mean - 1.0);
    n_events = std::min(n_events, cfg.C);

    // distinct classes for this video
    std::vector<int64_t> classes(static_cast<size_t>(cfg.C));
    std::iota(classes.begin(), classes.end(), 0);
    rng.shuffle(classes);
    classes.resize(static_cast<size_t>(n_events));

    for (int64_t c : classes) {
      const double u = rng.uniform();
      int mode;  // 0 audio-only, 1 visual-only, 2 both
      if (u < cfg.p_audio_only) {
        mode = 0;
      } else if (u < cfg.p_audio_only + cfg.p_visual_only) {
        mode = 1;
      } else {
        mode = 2;
      }
      if (mode == 0 || mode == 1) {
        const EventSpan span = draw_span(rng, cfg.T, cfg.min_event_len);
        BinMat& gt = mode == 0 ? gt_a : gt_v;
        for (int64_t t = span.start; t < span.start + span.len; ++t) gt.at(t, c) = 1;
      } else {
        // independently jittered spans per modality, overlapping in >= 1 segment
        const EventSpan audio_span = draw_span(rng, cfg.T, cfg.min_event_len);
        EventSpan visual_span = audio_span;
        for (int attempt = 0; attempt < 64; ++attempt) {
          const EventSpan cand = draw_span(rng, cfg.T, cfg.min_event_len);
          if (spans_overlap(audio_span, cand)) {
            visual_span = cand;
            break;
          }
        }
        for (int64_t t = audio_span.start; t < audio_span.start + audio_span.len; ++t) gt_a.at(t, c) = 1;
        for (int64_t t = visual_span.start; t < visual_span.start + visual_span.len; ++t) gt_v.at(t, c) = 1;
      }
    }

    s.audio = Array(Shape{cfg.T, cfg.d_a});
    s.visual = Array(Shape{cfg.T, cfg.d_v});
    for (int64_t t = 0; t < cfg.T; ++t) {
      for (int64_t c = 0; c < cfg.C; ++c) {
        if (gt_a.at(t, c)) {
          for (int64_t j = 0; j < cfg.d_a; ++j) s.audio.at(t, j) += proto_a[static_cast<size_t>(c)].data[static_cast<size_t>(j)];
        }
        if (gt_v.at(t, c)) {
          for (int64_t j = 0; j < cfg.d_v; ++j) s.visual.at(t, j) += proto_v[static_cast<size_t>(c)].data[static_cast<size_t>(j)];
        }
      }
      for (int64_t j = 0; j < cfg.d_a; ++j) s.audio.at(t, j) += rng.normal(0.0, cfg.noise_sigma);
      for (int64_t j = 0; j < cfg.d_v; ++j) s.visual.at(t, j) += rng.normal(0.0, cfg.visual_sigma());
    }

    for (int64_t c = 0; c < cfg.C; ++c) {
      bool present = false;
      for (int64_t t = 0; t < cfg.T && !present; ++t) present = gt_a.at(t, c) || gt_v.at(t, c);
      s.label[static_cast<size_t>(c)] = present ? 1 : 0;
    }
    s.gt_audio = std::move(gt_a);
    s.gt_visual = std::move(gt_v);
    out.push_back(std::move(s));
  }
  return out;
}

// ---- on-disk formats ---------------------------------------------------------

namespace {

constexpr char kFeatMagic[9] = "AVVPFEAT";
constexpr char kGtMagic[9] = "AVVPGT__";

void put_u32_le(std::string& buf, uint32_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
  buf.push_back(static_cast<char>((v >> 16) & 0xff));
  buf.push_back(static_cast<char>((v >> 24) & 0xff));
}

uint32_t get_u32_le(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | static_cast<uint32_t>(p[1]) << 8 |
         static_cast<uint32_t>(p[2]) << 16 | static_cast<uint32_t>(p[3]) << 24;
}

void put_f32_le(std::string& buf, float f) {
  uint32_t bits;
  std::memcpy(&bits, &f, sizeof bits);
  put_u32_le(buf, bits);
}

float get_f32_le(const uint8_t* p) {
  const uint32_t bits = get_u32_le(p);
  float f;
  std::memcpy(&f, &bits, sizeof f);
  return f;
}

std::vector<uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open file");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

void write_file_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(path + ": cannot open file for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(path + ": write failed");
}

void write_feature_file(const std::string& path, const Array& feats) {
  std::string buf;
  buf.reserve(16 + feats.data.size() * 4);
  buf.append(kFeatMagic, 8);
  put_u32_le(buf, static_cast<uint32_t>(feats.rows()));
  put_u32_le(buf, static_cast<uint32_t>(feats.cols()));
  for (double v : feats.data) put_f32_le(buf, static_cast<float>(v));
  write_file_bytes(path, buf);
}

Array read_feature_file(const std::string& path, int64_t expect_T) {
  const std::vector<uint8_t> bytes = read_file_bytes(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kFeatMagic, 8) != 0) {
    throw FormatError(path + ": bad feature magic at offset 0");
  }
  const int64_t T = get_u32_le(bytes.data() + 8);
  const int64_t dim = get_u32_le(bytes.data() + 12);
  if (T != expect_T) {
    throw FormatError(path + ": header T=" + std::to_string(T) + " does not match manifest T=" +
                      std::to_string(expect_T));
  }
  if (T < 1 || dim < 1) throw FormatError(path + ": non-positive dimensions in header at offset 8");
  const size_t need = 16 + static_cast<size_t>(T * dim) * 4;
  if (bytes.size() != need) {
    throw FormatError(path + ": truncated payload at offset " + std::to_string(bytes.size()) +
                      ", expected " + std::to_string(need) + " bytes");
  }
  Array out(Shape{T, dim});
  for (int64_t i = 0; i < T * dim; ++i) {
    out.data[static_cast<size_t>(i)] = static_cast<double>(get_f32_le(bytes.data() + 16 + i * 4));
  }
  return out;
}

void write_gt_file(const std::string& path, const BinMat& gt) {
  std::string buf;
  buf.reserve(16 + gt.data.size());
  buf.append(kGtMagic, 8);
  put_u32_le(buf, static_cast<uint32_t>(gt.rows));
  put_u32_le(buf, static_cast<uint32_t>(gt.cols));
  buf.append(reinterpret_cast<const char*>(gt.data.data()), gt.data.size());
  write_file_bytes(path, buf);
}

BinMat read_gt_file(const std::string& path, int64_t expect_T, int64_t expect_C) {
  const std::vector<uint8_t> bytes = read_file_bytes(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kGtMagic, 8) != 0) {
    throw FormatError(path + ": bad ground-truth magic at offset 0");
  }
  const int64_t T = get_u32_le(bytes.data() + 8);
  const int64_t C = get_u32_le(bytes.data() + 12);
  if (T != expect_T || C != expect_C) {
    throw FormatError(path + ": header " + std::to_string(T) + "x" + std::to_string(C) +
                      " does not match manifest " + std::to_string(expect_T) + "x" + std::to_string(expect_C));
  }
  const size_t need = 16 + static_cast<size_t>(T * C);
  if (bytes.size() != need) {
    throw FormatError(path + ": truncated payload at offset " + std::to_string(bytes.size()) +
                      ", expected " + std::to_string(need) + " bytes");
  }
  BinMat out(T, C);
  for (size_t i = 0; i < out.data.size(); ++i) {
    const uint8_t b = bytes[16 + i];
    if (b > 1) throw FormatError(path + ": non-binary byte at offset " + std::to_string(16 + i));
    out.data[i] = b;
  }
  return out;
}

}  // namespace

std::string pack_label_bits(const std::vector<uint8_t>& label) {
  const size_t nbytes = (label.size() + 7) / 8;
  std::vector<uint8_t> bytes(nbytes, 0);
  for (size_t c = 0; c < label.size(); ++c) {
    if (label[c]) bytes[c / 8] |= static_cast<uint8_t>(1u << (c % 8));
  }
  static const char* hexd = "0123456789abcdef";
  std::string out;
  out.reserve(nbytes * 2);
  for (uint8_t b : bytes) {
    out.push_back(hexd[b >> 4]);
    out.push_back(hexd[b & 0xf]);
  }
  return out;
}

std::vector<uint8_t> unpack_label_bits(const std::string& hex, int64_t C) {
  const size_t nbytes = (static_cast<size_t>(C) + 7) / 8;
  if (hex.size() != nbytes * 2) {
    throw FormatError("label_bits '" + hex + "' has wrong length for C=" + std::to_string(C));
  }
  auto nib = [&hex](size_t i) -> uint8_t {
    const char c = hex[i];
    if (c >= '0' && c <= '9') return static_cast<uint8_t>(c - '0');
    if (c >= 'a' && c <= 'f') return static_cast<uint8_t>(c - 'a' + 10);
    if (c >= 'A' && c <= 'F') return static_cast<uint8_t>(c - 'A' + 10);
    throw FormatError("label_bits: non-hex character");
  };
  std::vector<uint8_t> label(static_cast<size_t>(C), 0);
  for (size_t c = 0; c < label.size(); ++c) {
    const uint8_t byte = static_cast<uint8_t>(nib(2 * (c / 8)) << 4 | nib(2 * (c / 8) + 1));
    label[c] = (byte >> (c % 8)) & 1;
  }
  return label;
}

void write_dataset(const std::vector<VideoSample>& samples, const std::string& dir) {
  fs::create_directories(dir);
  std::ofstream manifest(fs::path(dir) / "manifest.jsonl", std::ios::trunc);
  if (!manifest) throw Error(dir + ": cannot create manifest.jsonl");
  for (const VideoSample& s : samples) {
    json rec;
    rec["id"] = s.id;
    rec["T"] = s.segments();
    rec["C"] = s.classes();
    rec["label_bits"] = pack_label_bits(s.label);
    rec["audio_file"] = s.id + "_audio.feat";
    rec["visual_file"] = s.id + "_visual.feat";
    write_feature_file((fs::path(dir) / (s.id + "_audio.feat")).string(), s.audio);
    write_feature_file((fs::path(dir) / (s.id + "_visual.feat")).string(), s.visual);
    if (s.gt_audio && s.gt_visual) {
      rec["gt_audio_file"] = s.id + "_audio.gt";
      rec["gt_visual_file"] = s.id + "_visual.gt";
      write_gt_file((fs::path(dir) / (s.id + "_audio.gt")).string(), *s.gt_audio);
      write_gt_file((fs::path(dir) / (s.id + "_visual.gt")).string(), *s.gt_visual);
    }
    manifest << rec.dump() << "\n";
  }
  if (!manifest) throw Error(dir + ": manifest write failed");
}

std::vector<VideoSample> read_dataset(const std::string& dir) {
  const fs::path mpath = fs::path(dir) / "manifest.jsonl";
  std::ifstream manifest(mpath);
  if (!manifest) throw FormatError(mpath.string() + ": cannot open manifest");
  std::vector<VideoSample> out;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError(mpath.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    for (const char* field : {"id", "T", "C", "label_bits", "audio_file", "visual_file"}) {
      if (!rec.contains(field)) {
        throw FormatError(mpath.string() + ":" + std::to_string(lineno) + ": missing field '" +
                          field + "'");
      }
    }
    VideoSample s;
    s.id = rec["id"].get<std::string>();
    const int64_t T = rec["T"].get<int64_t>();
    const int64_t C = rec["C"].get<int64_t>();
    s.label = unpack_label_bits(rec["label_bits"].get<std::string>(), C);
    auto resolve = [&dir, &mpath, lineno](const std::string& rel) {
      const fs::path p = fs::path(dir) / rel;
      if (!fs::exists(p)) {
        throw FormatError(mpath.string() + ":" + std::to_string(lineno) + ": referenced file '" +
                          rel + "' is missing");
      }
      return p.string();
    };
    s.audio = read_feature_file(resolve(rec["audio_file"].get<std::string>()), T);
    s.visual = read_feature_file(resolve(rec["visual_file"].get<std::string>()), T);
    if (rec.contains("gt_audio_file") != rec.contains("gt_visual_file")) {
      throw FormatError(mpath.string() + ":" + std::to_string(lineno) +
                        ": ground truth must be present for both modalities or neither");
    }
    if (rec.contains("gt_audio_file")) {
      s.gt_audio = read_gt_file(resolve(rec["gt_audio_file"].get<std::string>()), T, C);
      s.gt_visual = read_gt_file(resolve(rec["gt_visual_file"].get<std::string>()), T, C);
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::vector<int64_t>> epoch_batches(int64_t num_samples, int64_t batch_size,
                                                uint64_t seed, int64_t epoch) {
  if (num_samples < 1) throw ArgumentError("epoch_batches: empty dataset");
  if (batch_size < 1) throw ArgumentError("epoch_batches: batch_size must be >= 1");
  std::vector<int64_t> order(static_cast<size_t>(num_samples));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, static_cast<uint64_t>(epoch)));
  rng.shuffle(order);
  std::vector<std::vector<int64_t>> batches;
  for (int64_t start = 0; start < num_samples; start += batch_size) {
    const int64_t end = std::min(num_samples, start + batch_size);
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

}  // namespace avvp
