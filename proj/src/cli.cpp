#include "avvp/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "avvp/error.hpp"
#include "avvp/metrics.hpp"
#include "avvp/train.hpp"
#include "avvp/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace avvp {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerifyFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

ModelConfig model_config_for_dataset(const RunConfig& cfg, const std::vector<VideoSample>& data) {
  if (data.empty()) throw ArgumentError("dataset is empty");
  ModelConfig m = cfg.model;
  m.T = data[0].segments();
  m.C = data[0].classes();
  m.d_a = data[0].audio.cols();
  m.d_v = data[0].visual.cols();
  for (const VideoSample& s : data) {
    if (s.segments() != m.T || s.classes() != m.C || s.audio.cols() != m.d_a ||
        s.visual.cols() != m.d_v) {
      throw FormatError("dataset: sample '" + s.id + "' has inconsistent dimensions");
    }
  }
  m.validate();
  return m;
}

void require_ground_truth(const std::vector<VideoSample>& data) {
  for (const VideoSample& s : data) {
    if (!s.gt_audio || !s.gt_visual) {
      throw ArgumentError("dataset: sample '" + s.id + "' lacks ground truth; evaluation needs it");
    }
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(path + ": cannot open for writing");
  out << text;
  if (!out) throw Error(path + ": write failed");
}

void write_epoch_log(const std::string& path, const EpochLog& log) {
  std::ostringstream os;
  for (const EpochRecord& rec : log) os << format_epoch_line(rec) << "\n";
  write_text(path, os.str());
}

PredictionSet oracle_predictions(const VideoSample& s) {
  const BinMat& ga = *s.gt_audio;
  const BinMat& gv = *s.gt_visual;
  PredictionSet p;
  p.p_a = Array(Shape{ga.rows, ga.cols});
  p.p_v = Array(Shape{gv.rows, gv.cols});
  for (size_t i = 0; i < ga.data.size(); ++i) p.p_a.data[i] = ga.data[i] ? 1.0 : 0.0;
  for (size_t i = 0; i < gv.data.size(); ++i) p.p_v.data[i] = gv.data[i] ? 1.0 : 0.0;
  auto colmax = [](const Array& m) {
    Array out(Shape{m.cols()});
    for (int64_t c = 0; c < m.cols(); ++c) {
      double mx = 0.0;
      for (int64_t t = 0; t < m.rows(); ++t) mx = std::max(mx, m.at(t, c));
      out.data[static_cast<size_t>(c)] = mx;
    }
    return out;
  };
  p.ptilde_a = colmax(p.p_a);
  p.ptilde_v = colmax(p.p_v);
  p.ptilde_video = colmax(p.p_a);
  for (int64_t c = 0; c < p.p_v.cols(); ++c) {
    p.ptilde_video.data[static_cast<size_t>(c)] =
        std::max(p.ptilde_video.data[static_cast<size_t>(c)], p.ptilde_v.data[static_cast<size_t>(c)]);
  }
  return p;
}

EvalReport evaluate_checkpoint(const Checkpoint& cp, const std::vector<VideoSample>& data,
                               double theta) {
  Evaluator ev(theta);
  for (const VideoSample& s : data) {
    const PredictionSet preds = forward_values(cp.params, cp.config, s.audio, s.visual);
    ev.add(preds, *s.gt_audio, *s.gt_visual);
  }
  return ev.report();
}

}  // namespace

// ---- synth -----------------------------------------------------------------------

int cmd_synth(const RunConfig& cfg) {
  SynthConfig gen = cfg.synth;
  const int64_t eval_videos = cfg.synth_eval_videos;
  if (eval_videos < 0) throw ConfigError("synth.eval_videos must be >= 0");
  gen.num_videos = cfg.synth.num_videos + eval_videos;
  const std::vector<VideoSample> samples = generate_synthetic(gen);

  if (eval_videos > 0) {
    const std::vector<VideoSample> train(samples.begin(), samples.end() - eval_videos);
    const std::vector<VideoSample> eval(samples.end() - eval_videos, samples.end());
    write_dataset(train, (fs::path(cfg.out_dir) / "train").string());
    write_dataset(eval, (fs::path(cfg.out_dir) / "eval").string());
  } else {
    write_dataset(samples, cfg.out_dir);
  }

  // summary: per (video, class) event modes and events per video
  int64_t audio_only = 0, visual_only = 0, both = 0, events = 0;
  for (const VideoSample& s : samples) {
    for (int64_t c = 0; c < s.classes(); ++c) {
      bool has_a = false, has_v = false;
      for (int64_t t = 0; t < s.segments(); ++t) {
        has_a = has_a || s.gt_audio->at(t, c);
        has_v = has_v || s.gt_visual->at(t, c);
      }
      if (has_a && has_v) {
        ++both;
      } else if (has_a) {
        ++audio_only;
      } else if (has_v) {
        ++visual_only;
      }
      if (has_a || has_v) ++events;
    }
  }
  const double n = static_cast<double>(std::max<int64_t>(events, 1));
  std::cout << "wrote " << samples.size() << " videos to " << cfg.out_dir;
  if (eval_videos > 0) std::cout << " (train/eval split " << cfg.synth.num_videos << "/" << eval_videos << ")";
  std::cout << "\n";
  std::cout << "events: " << events << " total, mean "
            << static_cast<double>(events) / static_cast<double>(samples.size()) << " per video\n";
  std::cout << "modes: audio-only " << static_cast<double>(audio_only) / n << ", visual-only "
            << static_cast<double>(visual_only) / n << ", both " << static_cast<double>(both) / n
            << " (single-modality events: " << audio_only + visual_only << ")\n";
  return kExitOk;
}

// ---- train -----------------------------------------------------------------------

namespace {

void write_pseudo_labels(const std::string& path, const std::vector<VideoSample>& data,
                         const std::vector<WeakLabels>& labels) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(path + ": cannot open for writing");
  for (size_t i = 0; i < data.size(); ++i) {
    json rec;
    rec["id"] = data[i].id;
    rec["C"] = data[i].classes();
    rec["y"] = pack_label_bits(labels[i].y);
    rec["y_a"] = pack_label_bits(labels[i].y_a);
    rec["y_v"] = pack_label_bits(labels[i].y_v);
    out << rec.dump() << "\n";
  }
}

std::vector<WeakLabels> read_pseudo_labels(const std::string& path,
                                           const std::vector<VideoSample>& data) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open pseudo labels (run stage 2 first)");
  std::map<std::string, WeakLabels> by_id;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    const int64_t C = rec.at("C").get<int64_t>();
    WeakLabels lab;
    lab.y = unpack_label_bits(rec.at("y").get<std::string>(), C);
    lab.y_a = unpack_label_bits(rec.at("y_a").get<std::string>(), C);
    lab.y_v = unpack_label_bits(rec.at("y_v").get<std::string>(), C);
    by_id[rec.at("id").get<std::string>()] = std::move(lab);
  }
  std::vector<WeakLabels> out;
  out.reserve(data.size());
  for (const VideoSample& s : data) {
    const auto it = by_id.find(s.id);
    if (it == by_id.end()) throw FormatError(path + ": no pseudo labels for video '" + s.id + "'");
    out.push_back(it->second);
  }
  return out;
}

}  // namespace

int cmd_train(const RunConfig& cfg) {
  if (cfg.data_dir.empty()) throw ArgumentError("train: data.dir is required");
  const std::vector<VideoSample> data = read_dataset(cfg.data_dir);
  const ModelConfig mcfg = model_config_for_dataset(cfg, data);
  fs::create_directories(cfg.out_dir);

  std::vector<int> stages = cfg.stages;
  std::sort(stages.begin(), stages.end());
  stages.erase(std::unique(stages.begin(), stages.end()), stages.end());

  const std::string s1_path = (fs::path(cfg.out_dir) / "stage1.ckpt").string();
  const std::string s3_path = (fs::path(cfg.out_dir) / "stage3.ckpt").string();
  const std::string pseudo_path = (fs::path(cfg.out_dir) / "pseudo_labels.jsonl").string();

  Checkpoint stage1_cp;
  bool have_stage1 = false;
  std::vector<WeakLabels> pseudo;
  bool have_pseudo = false;

  for (int stage : stages) {
    if (stage == 1) {
      EpochLog log;
      stage1_cp = train_stage1(data, mcfg, cfg.train, &log);
      have_stage1 = true;
      save_checkpoint(stage1_cp, s1_path);
      write_epoch_log((fs::path(cfg.out_dir) / "stage1_log.txt").string(), log);
      std::cout << "stage 1 done: " << s1_path << "\n";
    } else if (stage == 2) {
      const Checkpoint cp = have_stage1 ? stage1_cp : load_checkpoint(s1_path);
      pseudo = compute_pseudo_labels(cp, data, cfg.train.tau);
      have_pseudo = true;
      write_pseudo_labels(pseudo_path, data, pseudo);
      std::cout << "stage 2 done: " << pseudo_path << " (confidence-threshold denoiser, tau="
                << cfg.train.tau << ")\n";
    } else {
      if (!have_pseudo) pseudo = read_pseudo_labels(pseudo_path, data);
      EpochLog log;
      const Checkpoint cp = train_stage3(data, pseudo, mcfg, cfg.train, &log);
      save_checkpoint(cp, s3_path);
      write_epoch_log((fs::path(cfg.out_dir) / "stage3_log.txt").string(), log);
      std::cout << "stage 3 done: " << s3_path << "\n";
    }
  }
  return kExitOk;
}

// ---- eval ------------------------------------------------------------------------

int cmd_eval(const RunConfig& cfg) {
  const std::string dir = cfg.eval_dir.empty() ? cfg.data_dir : cfg.eval_dir;
  if (dir.empty()) throw ArgumentError("eval: eval.dir (or data.dir) is required");
  const std::vector<VideoSample> data = read_dataset(dir);
  require_ground_truth(data);

  Evaluator ev(cfg.eval_theta);
  if (cfg.eval_oracle) {
    for (const VideoSample& s : data) ev.add(oracle_predictions(s), *s.gt_audio, *s.gt_visual);
  } else {
    if (cfg.checkpoint.empty()) throw ArgumentError("eval: checkpoint is required (or eval.oracle=1)");
    const Checkpoint cp = load_checkpoint(cfg.checkpoint);
    const ModelConfig dims = model_config_for_dataset(cfg, data);
    if (cp.config.T != dims.T || cp.config.C != dims.C || cp.config.d_a != dims.d_a ||
        cp.config.d_v != dims.d_v) {
      throw ArgumentError("eval: checkpoint dimensions do not match the dataset");
    }
    for (const VideoSample& s : data) {
      ev.add(forward_values(cp.params, cp.config, s.audio, s.visual), *s.gt_audio, *s.gt_visual);
    }
  }
  const EvalReport report = ev.report();
  const std::string table = format_report_table(report);
  std::cout << table;
  fs::create_directories(cfg.out_dir);
  write_text((fs::path(cfg.out_dir) / "eval_report.txt").string(), table);
  write_text((fs::path(cfg.out_dir) / "eval_report.records").string(),
             format_report_records(report));
  return kExitOk;
}

// ---- ablate ----------------------------------------------------------------------

namespace {

struct AblateCell {
  std::string variant;
  double mu;
  int64_t n_pairs, n_a, n_v;
};

struct CellScores {
  double seg_audio = 0, seg_visual = 0, seg_av = 0, seg_type = 0, seg_event_at_av = 0;
  double ev_audio = 0, ev_visual = 0, ev_av = 0, ev_type = 0, ev_event_at_av = 0;
  double single_f = 0, multi_f = 0;
};

CellScores run_cell(const RunConfig& cfg, const AblateCell& cell,
                    const std::vector<VideoSample>& train_data,
                    const std::vector<VideoSample>& eval_data, const ModelConfig& base_mcfg) {
  CellScores mean;
  for (uint64_t seed : cfg.ablate_seeds) {
    ModelConfig mcfg = base_mcfg;
    mcfg.variant = variant_from_string(cell.variant);
    mcfg.n_a = cell.n_a;
    mcfg.n_v = cell.n_v;
    TrainConfig tcfg = cfg.train;
    tcfg.mu = cell.mu;
    tcfg.n_pairs = cell.n_pairs;
    tcfg.seed = seed;

    const bool run1 = std::count(cfg.stages.begin(), cfg.stages.end(), 1) > 0;
    const bool run2 = std::count(cfg.stages.begin(), cfg.stages.end(), 2) > 0;
    const bool run3 = std::count(cfg.stages.begin(), cfg.stages.end(), 3) > 0;
    Checkpoint cp = train_stage1(train_data, mcfg, tcfg);
    (void)run1;
    if (run3) {
      std::vector<WeakLabels> pseudo;
      if (run2) {
        pseudo = compute_pseudo_labels(cp, train_data, tcfg.tau);
      } else {
        pseudo.reserve(train_data.size());
        for (const VideoSample& s : train_data) pseudo.push_back(labels_from_union(s.label));
      }
      cp = train_stage3(train_data, pseudo, mcfg, tcfg);
    }
    const EvalReport r = evaluate_checkpoint(cp, eval_data, cfg.eval_theta);
    mean.seg_audio += r.segment.audio_f;
    mean.seg_visual += r.segment.visual_f;
    mean.seg_av += r.segment.av_f;
    mean.seg_type += r.segment.type_at_av_f;
    mean.seg_event_at_av += r.segment.event_at_av_f;
    mean.ev_audio += r.event.audio_f;
    mean.ev_visual += r.event.visual_f;
    mean.ev_av += r.event.av_f;
    mean.ev_type += r.event.type_at_av_f;
    mean.ev_event_at_av += r.event.event_at_av_f;
    mean.single_f += r.exclusivity.single_f.value_or(0.0);
    mean.multi_f += r.exclusivity.multi_f.value_or(0.0);
  }
  const double inv = 1.0 / static_cast<double>(cfg.ablate_seeds.size());
  mean.seg_audio *= inv;
  mean.seg_visual *= inv;
  mean.seg_av *= inv;
  mean.seg_type *= inv;
  mean.seg_event_at_av *= inv;
  mean.ev_audio *= inv;
  mean.ev_visual *= inv;
  mean.ev_av *= inv;
  mean.ev_type *= inv;
  mean.ev_event_at_av *= inv;
  mean.single_f *= inv;
  mean.multi_f *= inv;
  return mean;
}

std::string fmt_pct(double f) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%5.1f", f * 100.0);
  return buf;
}

}  // namespace

int cmd_ablate(const RunConfig& cfg) {
  if (cfg.data_dir.empty() || cfg.eval_dir.empty()) {
    throw ArgumentError("ablate: data.dir and eval.dir are required");
  }
  if (cfg.ablate_variants.empty() || cfg.ablate_seeds.empty()) {
    throw ArgumentError("ablate: empty grid (no variants or no seeds)");
  }
  const std::vector<VideoSample> train_data = read_dataset(cfg.data_dir);
  const std::vector<VideoSample> eval_data = read_dataset(cfg.eval_dir);
  require_ground_truth(eval_data);
  const ModelConfig base_mcfg = model_config_for_dataset(cfg, train_data);

  const std::vector<double> mus = cfg.ablate_mu.empty() ? std::vector<double>{cfg.train.mu} : cfg.ablate_mu;
  const std::vector<int64_t> ns =
      cfg.ablate_n_pairs.empty() ? std::vector<int64_t>{cfg.train.n_pairs} : cfg.ablate_n_pairs;
  const std::vector<int64_t> nas =
      cfg.ablate_n_a.empty() ? std::vector<int64_t>{cfg.model.n_a} : cfg.ablate_n_a;
  const std::vector<int64_t> nvs =
      cfg.ablate_n_v.empty() ? std::vector<int64_t>{cfg.model.n_v} : cfg.ablate_n_v;

  std::vector<AblateCell> cells;
  for (const std::string& variant : cfg.ablate_variants) {
    variant_from_string(variant);  // validate early
    for (double mu : mus) {
      for (int64_t n : ns) {
        for (int64_t na : nas) {
          for (int64_t nv : nvs) cells.push_back({variant, mu, n, na, nv});
        }
      }
    }
  }
  if (cells.empty()) throw ArgumentError("ablate: empty grid");

  std::vector<CellScores> scores(cells.size());
  const int64_t jobs = std::max<int64_t>(1, cfg.ablate_jobs);
  if (jobs == 1) {
    for (size_t i = 0; i < cells.size(); ++i) {
      scores[i] = run_cell(cfg, cells[i], train_data, eval_data, base_mcfg);
    }
  } else {
    std::vector<std::future<CellScores>> futures;
    futures.reserve(cells.size());
    for (size_t i = 0; i < cells.size(); ++i) {
      futures.push_back(std::async(std::launch::async, [&, i] {
        return run_cell(cfg, cells[i], train_data, eval_data, base_mcfg);
      }));
      if (static_cast<int64_t>(futures.size()) == jobs || i + 1 == cells.size()) {
        for (size_t k = i + 1 - futures.size(); k <= i; ++k) {
          scores[k] = futures[k - (i + 1 - futures.size())].get();
        }
        futures.clear();
      }
    }
  }

  std::ostringstream table, records;
  table << "ablation over " << cfg.ablate_seeds.size() << " seeds (segment-level F %, mean)\n";
  table << "variant  n_a n_v   mu  N   Audio Visual  A-V  Type@AV Event@AV  single multi\n";
  for (size_t i = 0; i < cells.size(); ++i) {
    const AblateCell& c = cells[i];
    const CellScores& s = scores[i];
    char head[64];
    std::snprintf(head, sizeof head, "%-8s %3lld %3lld %4.2f %2lld ", c.variant.c_str(),
                  static_cast<long long>(c.n_a), static_cast<long long>(c.n_v), c.mu,
                  static_cast<long long>(c.n_pairs));
    table << head << fmt_pct(s.seg_audio) << "  " << fmt_pct(s.seg_visual) << " " << fmt_pct(s.seg_av)
          << "  " << fmt_pct(s.seg_type) << "   " << fmt_pct(s.seg_event_at_av) << "   "
          << fmt_pct(s.single_f) << " " << fmt_pct(s.multi_f) << "\n";
    records << "variant=" << c.variant << " n_a=" << c.n_a << " n_v=" << c.n_v << " mu=" << c.mu
            << " N=" << c.n_pairs << " seg_audio=" << s.seg_audio << " seg_visual=" << s.seg_visual
            << " seg_av=" << s.seg_av << " seg_type_at_av=" << s.seg_type
            << " seg_event_at_av=" << s.seg_event_at_av << " ev_audio=" << s.ev_audio
            << " ev_visual=" << s.ev_visual << " ev_av=" << s.ev_av << " ev_type_at_av=" << s.ev_type
            << " ev_event_at_av=" << s.ev_event_at_av << " single_f=" << s.single_f
            << " multi_f=" << s.multi_f << "\n";
  }
  std::cout << table.str();
  fs::create_directories(cfg.out_dir);
  write_text((fs::path(cfg.out_dir) / "ablate_table.txt").string(), table.str());
  write_text((fs::path(cfg.out_dir) / "ablate_records.txt").string(), records.str());
  return kExitOk;
}

// ---- verify ----------------------------------------------------------------------

int cmd_verify(const RunConfig& cfg) {
  if (!cfg.verify_fault.empty()) {
    std::cout << "injecting backward fault into op '" << cfg.verify_fault << "'\n";
    Tape::inject_backward_fault(cfg.verify_fault);
  }
  VerifyOptions opts;
  std::vector<CheckResult> results;
  try {
    results = run_verification_suite(opts);
  } catch (...) {
    Tape::clear_backward_fault();
    throw;
  }
  Tape::clear_backward_fault();
  int failures = 0;
  for (const CheckResult& r : results) {
    std::cout << (r.pass ? "[ok]   " : "[FAIL] ") << r.name << " - " << r.detail << "\n";
    if (!r.pass) ++failures;
  }
  if (failures > 0) {
    std::cout << failures << " of " << results.size() << " checks failed\n";
    return kExitVerifyFailure;
  }
  std::cout << "all " << results.size() << " checks passed\n";
  return kExitOk;
}

// ---- dispatch ----------------------------------------------------------------------

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"weakly-supervised audio-visual video parsing toolkit"};
  app.require_subcommand(1);

  struct CommonArgs {
    std::string config_path, variant, stages, out_dir;
    uint64_t seed = 0;
    std::vector<std::string> overrides;
    CLI::Option *seed_opt = nullptr, *variant_opt = nullptr, *stages_opt = nullptr,
                *out_opt = nullptr, *config_opt = nullptr;
  };
  std::map<std::string, CommonArgs> args;

  auto add_common = [&args](CLI::App* sub) {
    CommonArgs& a = args[sub->get_name()];
    a.config_opt = sub->add_option("--config", a.config_path, "key=value config file");
    a.seed_opt = sub->add_option("--seed", a.seed, "seed for training and synthesis");
    a.variant_opt = sub->add_option("--variant", a.variant, "model variant");
    a.stages_opt = sub->add_option("--stages", a.stages, "comma-separated training stages");
    a.out_opt = sub->add_option("--out", a.out_dir, "output directory");
    sub->add_option("overrides", a.overrides, "key=value config overrides");
  };

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  CLI::App* train = app.add_subcommand("train", "run the three-stage training pipeline");
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint with the metric suite");
  CLI::App* ablate = app.add_subcommand("ablate", "train/evaluate a variant grid");
  CLI::App* verify = app.add_subcommand("verify", "run the self-verification suite");
  for (CLI::App* sub : {synth, train, eval, ablate, verify}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  const CommonArgs& a = args[sub->get_name()];

  RunConfig cfg;
  try {
    if (a.config_opt->count()) load_config_file(cfg, a.config_path);
    if (a.seed_opt->count()) {
      cfg.train.seed = a.seed;
      cfg.synth.seed = a.seed;
    }
    if (a.variant_opt->count()) cfg.model.variant = variant_from_string(a.variant);
    if (a.stages_opt->count()) cfg.stages = parse_stage_list(a.stages);
    if (a.out_opt->count()) cfg.out_dir = a.out_dir;
    for (const std::string& ov : a.overrides) {
      const size_t eq = ov.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("override '" + ov + "' is not of the form key=value");
      }
      apply_config_entry(cfg, ov.substr(0, eq), ov.substr(eq + 1));
    }

    if (sub == synth) return cmd_synth(cfg);
    if (sub == train) return cmd_train(cfg);
    if (sub == eval) return cmd_eval(cfg);
    if (sub == ablate) return cmd_ablate(cfg);
    return cmd_verify(cfg);
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

}  // namespace avvp
