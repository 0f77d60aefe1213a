#include "avvp/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "avvp/error.hpp"

namespace avvp {

namespace {

int64_t to_int(const std::string& key, const std::string& v) {
  int64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("key '" + key + "': '" + v + "' is not an integer");
  }
  return out;
}

uint64_t to_uint(const std::string& key, const std::string& v) {
  uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("key '" + key + "': '" + v + "' is not a nonnegative integer");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size() || v.empty()) {
    throw ConfigError("key '" + key + "': '" + v + "' is not a number");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError("key '" + key + "': '" + v + "' is not a boolean");
}

std::vector<std::string> split_commas(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(v);
  while (std::getline(is, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& schema() {
  static const std::map<std::string, Setter> s = {
      {"model.T", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.T = to_int(k, v); }},
      {"model.C", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.C = to_int(k, v); }},
      {"model.d", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.d = to_int(k, v); }},
      {"model.d_a", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.d_a = to_int(k, v); }},
      {"model.d_v", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.d_v = to_int(k, v); }},
      {"model.L", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.L = to_int(k, v); }},
      {"model.M", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.M = to_int(k, v); }},
      {"model.heads", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.heads = to_int(k, v); }},
      {"model.n_a", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.n_a = to_int(k, v); }},
      {"model.n_v", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.n_v = to_int(k, v); }},
      {"model.ffn_mult", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.ffn_mult = to_int(k, v); }},
      {"model.variant", [](RunConfig& c, const std::string&, const std::string& v) { c.model.variant = variant_from_string(v); }},

      {"train.epochs", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.epochs = to_int(k, v); }},
      {"train.lr0", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.lr0 = to_double(k, v); }},
      {"train.lr_decay", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.lr_decay = to_double(k, v); }},
      {"train.lr_decay_every", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.lr_decay_every = to_int(k, v); }},
      {"train.batch_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.batch_size = to_int(k, v); }},
      {"train.mu", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.mu = to_double(k, v); }},
      {"train.n_pairs", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.n_pairs = to_int(k, v); }},
      {"train.tau", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.tau = to_double(k, v); }},
      {"train.seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.seed = to_uint(k, v); }},

      {"synth.num_videos", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.num_videos = to_int(k, v); }},
      {"synth.T", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.T = to_int(k, v); }},
      {"synth.C", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.C = to_int(k, v); }},
      {"synth.d_a", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.d_a = to_int(k, v); }},
      {"synth.d_v", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.d_v = to_int(k, v); }},
      {"synth.p_audio_only", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.p_audio_only = to_double(k, v); }},
      {"synth.p_visual_only", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.p_visual_only = to_double(k, v); }},
      {"synth.p_both", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.p_both = to_double(k, v); }},
      {"synth.events_per_video_mean", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.events_per_video_mean = to_double(k, v); }},
      {"synth.noise_sigma", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.noise_sigma = to_double(k, v); }},
      {"synth.noise_sigma_v", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.noise_sigma_v = to_double(k, v); }},
      {"synth.min_event_len", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.min_event_len = to_int(k, v); }},
      {"synth.seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.seed = to_uint(k, v); }},
      {"synth.eval_videos", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth_eval_videos = to_int(k, v); }},

      {"data.dir", [](RunConfig& c, const std::string&, const std::string& v) { c.data_dir = v; }},
      {"eval.dir", [](RunConfig& c, const std::string&, const std::string& v) { c.eval_dir = v; }},
      {"out.dir", [](RunConfig& c, const std::string&, const std::string& v) { c.out_dir = v; }},
      {"checkpoint", [](RunConfig& c, const std::string&, const std::string& v) { c.checkpoint = v; }},
      {"eval.theta", [](RunConfig& c, const std::string& k, const std::string& v) { c.eval_theta = to_double(k, v); }},
      {"eval.oracle", [](RunConfig& c, const std::string& k, const std::string& v) { c.eval_oracle = to_bool(k, v); }},

      {"stages", [](RunConfig& c, const std::string&, const std::string& v) { c.stages = parse_stage_list(v); }},

      {"ablate.variants", [](RunConfig& c, const std::string&, const std::string& v) { c.ablate_variants = split_commas(v); }},
      {"ablate.seeds",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.ablate_seeds.clear();
         for (const std::string& s : split_commas(v)) c.ablate_seeds.push_back(to_uint(k, s));
       }},
      {"ablate.mu",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.ablate_mu.clear();
         for (const std::string& s : split_commas(v)) c.ablate_mu.push_back(to_double(k, s));
       }},
      {"ablate.n_pairs",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.ablate_n_pairs.clear();
         for (const std::string& s : split_commas(v)) c.ablate_n_pairs.push_back(to_int(k, s));
       }},
      {"ablate.n_a",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.ablate_n_a.clear();
         for (const std::string& s : split_commas(v)) c.ablate_n_a.push_back(to_int(k, s));
       }},
      {"ablate.n_v",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.ablate_n_v.clear();
         for (const std::string& s : split_commas(v)) c.ablate_n_v.push_back(to_int(k, s));
       }},
      {"ablate.jobs", [](RunConfig& c, const std::string& k, const std::string& v) { c.ablate_jobs = to_int(k, v); }},

      {"verify.fault", [](RunConfig& c, const std::string&, const std::string& v) { c.verify_fault = v; }},
  };
  return s;
}

}  // namespace

std::vector<int> parse_stage_list(const std::string& s) {
  std::vector<int> out;
  for (const std::string& item : split_commas(s)) {
    const int64_t stage = to_int("stages", item);
    if (stage < 1 || stage > 3) throw ConfigError("stages: stage " + item + " outside 1..3");
    out.push_back(static_cast<int>(stage));
  }
  if (out.empty()) throw ConfigError("stages: empty list");
  return out;
}

void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& s = schema();
  const auto it = s.find(key);
  if (it == s.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(cfg, key, value);
}

void load_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    // trim
    const size_t b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const size_t e = line.find_last_not_of(" \t\r");
    line = line.substr(b, e - b + 1);
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
    }
    auto trim = [](std::string s) {
      const size_t b2 = s.find_first_not_of(" \t");
      if (b2 == std::string::npos) return std::string();
      const size_t e2 = s.find_last_not_of(" \t");
      return s.substr(b2, e2 - b2 + 1);
    };
    try {
      apply_config_entry(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& err) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": " + err.what());
    }
  }
}

std::vector<std::string> config_schema_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : schema()) keys.push_back(k);
  return keys;
}

}  // namespace avvp
