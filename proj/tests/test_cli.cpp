#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "avvp/cli.hpp"
#include "avvp/data.hpp"
#include "avvp/error.hpp"

namespace fs = std::filesystem;
using namespace avvp;

namespace {

int run_cli(std::initializer_list<const char*> args) {
  std::vector<const char*> argv{"avvp"};
  argv.insert(argv.end(), args.begin(), args.end());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

struct TempDir {
  fs::path path;
  explicit TempDir(const char* tag) : path(fs::temp_directory_path() / tag) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const char* sub) const { return (path / sub).string(); }
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("config schema rejects unknown keys and bad values") {
  RunConfig cfg;
  CHECK_THROWS_AS(apply_config_entry(cfg, "model.unknown", "1"), ConfigError);
  CHECK_THROWS_AS(apply_config_entry(cfg, "model.d", "abc"), ConfigError);
  CHECK_THROWS_AS(apply_config_entry(cfg, "stages", "4"), ConfigError);
  apply_config_entry(cfg, "model.d", "16");
  CHECK(cfg.model.d == 16);
  apply_config_entry(cfg, "ablate.seeds", "4,5");
  CHECK(cfg.ablate_seeds == std::vector<uint64_t>{4, 5});
}

TEST_CASE("config file parsing with comments, spaces and overrides") {
  TempDir dir("avvp_cli_cfg");
  const std::string cfg_path = dir / "run.cfg";
  {
    std::ofstream out(cfg_path);
    out << "# comment line\n";
    out << "model.d = 16\n";
    out << "train.epochs=2   # trailing comment\n";
    out << "\n";
  }
  RunConfig cfg;
  load_config_file(cfg, cfg_path);
  CHECK(cfg.model.d == 16);
  CHECK(cfg.train.epochs == 2);
  // overrides win
  apply_config_entry(cfg, "model.d", "8");
  CHECK(cfg.model.d == 8);

  {
    std::ofstream out(cfg_path);
    out << "not a key value line\n";
  }
  RunConfig cfg2;
  CHECK_THROWS_AS(load_config_file(cfg2, cfg_path), ConfigError);
}

TEST_CASE("synth command writes a loadable dataset deterministically") {
  TempDir dir("avvp_cli_synth");
  const std::string out1 = dir / "d1";
  const std::string out2 = dir / "d2";
  const int rc1 = run_cli({"synth", "--seed", "11", "--out", out1.c_str(), "synth.num_videos=4",
                           "synth.T=5", "synth.C=3", "synth.d_a=4", "synth.d_v=4"});
  CHECK(rc1 == 0);
  const int rc2 = run_cli({"synth", "--seed", "11", "--out", out2.c_str(), "synth.num_videos=4",
                           "synth.T=5", "synth.C=3", "synth.d_a=4", "synth.d_v=4"});
  CHECK(rc2 == 0);

  const auto ds = read_dataset(out1);
  CHECK(ds.size() == 4);
  CHECK(ds[0].segments() == 5);

  // byte-identical directory contents across runs with the same seed
  for (const auto& entry : fs::directory_iterator(out1)) {
    const std::string name = entry.path().filename().string();
    CHECK(read_file(out1 + "/" + name) == read_file(out2 + "/" + name));
  }
}

TEST_CASE("synth splits a held-out evaluation set when asked") {
  TempDir dir("avvp_cli_split");
  const std::string out = dir / "ds";
  CHECK(run_cli({"synth", "--seed", "3", "--out", out.c_str(), "synth.num_videos=5",
                 "synth.eval_videos=2", "synth.T=4", "synth.C=3", "synth.d_a=3", "synth.d_v=3"}) == 0);
  CHECK(read_dataset(out + "/train").size() == 5);
  CHECK(read_dataset(out + "/eval").size() == 2);
}

TEST_CASE("train and eval commands round trip through checkpoints") {
  TempDir dir("avvp_cli_train");
  const std::string data = dir / "data";
  const std::string out = dir / "run";
  REQUIRE(run_cli({"synth", "--seed", "5", "--out", data.c_str(), "synth.num_videos=6",
                   "synth.T=4", "synth.C=3", "synth.d_a=4", "synth.d_v=4"}) == 0);

  // stage 1 only
  CHECK(run_cli({"train", "--stages", "1", "--seed", "5", "--out", out.c_str(),
                 ("data.dir=" + data).c_str(), "model.d=8", "train.epochs=2",
                 "train.batch_size=3"}) == 0);
  CHECK(fs::exists(out + "/stage1.ckpt"));
  CHECK_FALSE(fs::exists(out + "/stage3.ckpt"));
  CHECK(fs::exists(out + "/stage1_log.txt"));

  // stages 2+3 pick up the stage-1 checkpoint from disk
  CHECK(run_cli({"train", "--stages", "2,3", "--seed", "5", "--out", out.c_str(),
                 ("data.dir=" + data).c_str(), "model.d=8", "train.epochs=2",
                 "train.batch_size=3"}) == 0);
  CHECK(fs::exists(out + "/pseudo_labels.jsonl"));
  CHECK(fs::exists(out + "/stage3.ckpt"));

  // evaluation with the trained checkpoint
  CHECK(run_cli({"eval", "--out", (dir / "evalout").c_str(), ("eval.dir=" + data).c_str(),
                 ("checkpoint=" + out + "/stage3.ckpt").c_str()}) == 0);
  CHECK(fs::exists((dir / "evalout") + std::string("/eval_report.records")));
}

TEST_CASE("eval with the oracle debug flag scores a perfect parse") {
  TempDir dir("avvp_cli_oracle");
  const std::string data = dir / "data";
  REQUIRE(run_cli({"synth", "--seed", "6", "--out", data.c_str(), "synth.num_videos=4",
                   "synth.T=5", "synth.C=3", "synth.d_a=3", "synth.d_v=3"}) == 0);
  const std::string out = dir / "evalout";
  CHECK(run_cli({"eval", "--out", out.c_str(), ("eval.dir=" + data).c_str(), "eval.oracle=1"}) == 0);
  const std::string records = read_file(out + "/eval_report.records");
  // every count-based category line ends with a perfect score
  CHECK(records.find("audio segment") != std::string::npos);
  for (const char* cat : {"audio segment", "visual segment", "audio_visual segment",
                          "audio event", "visual event", "audio_visual event"}) {
    const size_t pos = records.find(cat);
    REQUIRE(pos != std::string::npos);
    const size_t eol = records.find('\n', pos);
    const std::string line = records.substr(pos, eol - pos);
    CHECK(line.substr(line.size() - 5) == "100.0");
  }
}

TEST_CASE("cli exit codes for usage and input errors") {
  TempDir dir("avvp_cli_err");
  // unknown variant
  CHECK(run_cli({"train", "--variant", "bogus", ("data.dir=" + (dir / "none")).c_str()}) == 2);
  // missing dataset
  CHECK(run_cli({"train", ("data.dir=" + (dir / "none")).c_str()}) == 2);
  // eval without ground truth fails with exit 2
  const std::string data = dir / "nogt";
  {
    SynthConfig scfg;
    scfg.num_videos = 2;
    scfg.T = 3;
    scfg.C = 2;
    scfg.d_a = 2;
    scfg.d_v = 2;
    scfg.seed = 1;
    auto samples = generate_synthetic(scfg);
    for (auto& s : samples) {
      s.gt_audio.reset();
      s.gt_visual.reset();
    }
    write_dataset(samples, data);
  }
  CHECK(run_cli({"eval", ("eval.dir=" + data).c_str(), "eval.oracle=1"}) == 2);
  // unknown config key
  CHECK(run_cli({"synth", "nonsense.key=1"}) == 2);
  // no subcommand
  CHECK(run_cli({}) == 2);
}

TEST_CASE("non-finite input features exit with the numeric failure code") {
  TempDir dir("avvp_cli_numeric");
  const std::string data = dir / "data";
  {
    SynthConfig scfg;
    scfg.num_videos = 3;
    scfg.T = 3;
    scfg.C = 2;
    scfg.d_a = 2;
    scfg.d_v = 2;
    scfg.seed = 2;
    write_dataset(generate_synthetic(scfg), data);
  }
  // poison one float32 payload value with +inf (well-formed file, bad number)
  {
    std::fstream io(data + "/synth-00001_audio.feat",
                    std::ios::binary | std::ios::in | std::ios::out);
    io.seekp(16);
    const unsigned char inf_le[4] = {0x00, 0x00, 0x80, 0x7f};
    io.write(reinterpret_cast<const char*>(inf_le), 4);
  }
  CHECK(run_cli({"train", "--stages", "1", "--out", (dir / "run").c_str(),
                 ("data.dir=" + data).c_str(), "model.d=8", "train.epochs=1",
                 "train.batch_size=3"}) == 3);
}

TEST_CASE("ablate sweeps hyperparameter grids") {
  TempDir dir("avvp_cli_sweep");
  const std::string data = dir / "ds";
  REQUIRE(run_cli({"synth", "--seed", "4", "--out", data.c_str(), "synth.num_videos=4",
                   "synth.eval_videos=2", "synth.T=4", "synth.C=2", "synth.d_a=3",
                   "synth.d_v=3"}) == 0);
  const std::string out = dir / "res";
  // mu sweep: one row per mu value
  CHECK(run_cli({"ablate", "--out", out.c_str(), ("data.dir=" + data + "/train").c_str(),
                 ("eval.dir=" + data + "/eval").c_str(), "ablate.variants=full",
                 "ablate.seeds=1", "ablate.mu=0.1,0.5,1", "model.d=8", "train.epochs=1",
                 "train.batch_size=2"}) == 0);
  const std::string mu_records = read_file(out + "/ablate_records.txt");
  CHECK(mu_records.find("mu=0.1") != std::string::npos);
  CHECK(mu_records.find("mu=0.5") != std::string::npos);
  CHECK(mu_records.find("mu=1") != std::string::npos);

  // N sweep shape
  CHECK(run_cli({"ablate", "--out", out.c_str(), ("data.dir=" + data + "/train").c_str(),
                 ("eval.dir=" + data + "/eval").c_str(), "ablate.variants=full",
                 "ablate.seeds=1", "ablate.n_pairs=1,2,3", "model.d=8", "train.epochs=1",
                 "train.batch_size=4"}) == 0);
  const std::string n_records = read_file(out + "/ablate_records.txt");
  CHECK(n_records.find("N=1") != std::string::npos);
  CHECK(n_records.find("N=2") != std::string::npos);
  CHECK(n_records.find("N=3") != std::string::npos);
}

TEST_CASE("ablate produces a grid table over variants") {
  TempDir dir("avvp_cli_ablate");
  const std::string data = dir / "ds";
  REQUIRE(run_cli({"synth", "--seed", "9", "--out", data.c_str(), "synth.num_videos=6",
                   "synth.eval_videos=3", "synth.T=4", "synth.C=3", "synth.d_a=3",
                   "synth.d_v=3"}) == 0);
  const std::string out = dir / "res";
  CHECK(run_cli({"ablate", "--out", out.c_str(), ("data.dir=" + data + "/train").c_str(),
                 ("eval.dir=" + data + "/eval").c_str(), "ablate.variants=full,han",
                 "ablate.seeds=1", "model.d=8", "train.epochs=1", "train.batch_size=3"}) == 0);
  const std::string records = read_file(out + "/ablate_records.txt");
  CHECK(records.find("variant=full") != std::string::npos);
  CHECK(records.find("variant=han") != std::string::npos);

  // empty grid
  CHECK(run_cli({"ablate", ("data.dir=" + data + "/train").c_str(),
                 ("eval.dir=" + data + "/eval").c_str(), "ablate.variants="}) == 2);
}
