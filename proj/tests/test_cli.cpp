#include <cstdlib>
#include <fstream>

#include "doctest.h"
#include "stfmm/config.hpp"
#include "stfmm/data_io.hpp"
#include "test_support.hpp"

using namespace stfmm;
using stfmm::testing::fresh_dir;
using stfmm::testing::read_file_bytes;

namespace {

namespace fs = std::filesystem;

int run_cli(const std::string& args) {
  const std::string cmd = std::string(STFMM_CLI_PATH) + " " + args +
                          " >/dev/null 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// shared tiny dataset + split for the pipeline cases
struct CliFixture {
  fs::path root = fresh_dir("cli_fixture");
  fs::path data = root / "data";
  fs::path splits = root / "splits";

  // small frames keep the pipeline runs fast
  std::string synth_flags() const {
    return " --synth.identities 4 --synth.frames 6 --synth.height 32 "
           "--synth.width 16";
  }
  std::string geometry_flags() const {
    return " --prep.height 32 --prep.width 16 --net.parts 2 --net.overlap 4 "
           "--net.conv_channels 2,3,3 --net.embed_dim 4 --train.k 3 "
           "--train.threads 1";
  }

  CliFixture() {
    REQUIRE(run_cli("synth --out " + data.string() + synth_flags()) == 0);
    REQUIRE(run_cli("split --data " + data.string() +
                    " --split.count 2 --split.seed 3 --out " +
                    splits.string()) == 0);
  }
  ~CliFixture() { fs::remove_all(root); }
};

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("config: defaults, file layering, flag precedence") {
  Config cfg = Config::defaults();
  CHECK(cfg.get_int("net.parts") == 3);
  CHECK(cfg.get("net.share") == "per_part");
  CHECK(cfg.get_int_list("net.spp_bins") == std::vector<int>{8, 4, 2, 1});

  const fs::path dir = fresh_dir("cli_config");
  {
    std::ofstream os(dir / "run.conf");
    os << "# comment line\n"
       << "net.parts = 2   # trailing comment\n"
       << "train.lr = 0.01\n"
       << "\n";
  }
  cfg.load_file(dir / "run.conf");
  CHECK(cfg.get_int("net.parts") == 2);
  CHECK(cfg.get_double("train.lr") == doctest::Approx(0.01));

  cfg.set("net.parts", "4");  // flags override the file
  CHECK(cfg.get_int("net.parts") == 4);

  CHECK_THROWS_AS(cfg.set("net.nonsense", "1"), Error);
  CHECK_THROWS_AS(cfg.get("not.a.key"), Error);

  const std::string snapshot = cfg.resolved_text();
  CHECK(snapshot.find("net.parts = 4") != std::string::npos);

  const NetConfig net = cfg.net();
  CHECK(net.parts == 4);
  const TrainConfig tc = cfg.train();
  CHECK(tc.learning_rate == doctest::Approx(0.01f));
  fs::remove_all(dir);
}

TEST_CASE("STFMM_CONFIG provides the default configuration layer") {
  const fs::path dir = fresh_dir("cli_env");
  {
    std::ofstream os(dir / "env.conf");
    os << "net.parts = 1\n";
  }
  const std::string cmd = "STFMM_CONFIG=" + (dir / "env.conf").string() + " " +
                          STFMM_CLI_PATH + " train --data /missing --split x" +
                          " >/dev/null 2>" + (dir / "err.txt").string();
  const int with_good_env = std::system(cmd.c_str());
  CHECK(WEXITSTATUS(with_good_env) == 2);  // fails later, on the dataset
  // the run fails on the missing dataset, but only after the env config
  // parsed cleanly; a bad env file must fail up front with a usage error
  {
    std::ofstream os(dir / "env.conf");
    os << "definitely.unknown = 1\n";
  }
  const int code = std::system(cmd.c_str());
  CHECK(WEXITSTATUS(code) == 1);
  fs::remove_all(dir);
}

TEST_CASE("usage errors exit with code 1") {
  CHECK(run_cli("") == 1);
  CHECK(run_cli("frobnicate") == 1);
  CHECK(run_cli("train --no-such-flag 1") == 1);
  CHECK(run_cli("synth") == 1);  // missing --out
  CHECK(run_cli("help") == 0);
}

TEST_CASE("data errors exit with code 2") {
  CHECK(run_cli("split --data /definitely/missing --out /tmp/x") == 2);
}

TEST_CASE("gradcheck subcommand exits 0 and within tolerance") {
  CHECK(run_cli("gradcheck --gradcheck.instances 5") == 0);
}

TEST_CASE("pipeline: synth, split, prep cache, train, eval, byte-identical reports") {
  CliFixture fx;
  const fs::path split0 = fx.splits / "split_00.txt";
  REQUIRE(fs::exists(split0));

  // prep builds a cache the trainer accepts
  const fs::path cache = fx.root / "cache";
  REQUIRE(run_cli("prep --data " + fx.data.string() + " --split " +
                  split0.string() + " --out " + cache.string() +
                  fx.geometry_flags()) == 0);
  CHECK(fs::exists(cache / "stats.txt"));
  CHECK(fs::exists(cache / "manifest.txt"));

  // a two-epoch training run through the CLI, reading the cache
  const fs::path run_dir = fx.root / "run";
  REQUIRE(run_cli("train --data " + fx.data.string() + " --split " +
                  split0.string() + " --out " + run_dir.string() +
                  " --cache.dir " + cache.string() +
                  " --train.epochs 2 --train.checkpoint_interval 2" +
                  fx.geometry_flags()) == 0);
  const fs::path ckpt = run_dir / "checkpoints" / "epoch_000002.ckpt";
  REQUIRE(fs::exists(ckpt));
  CHECK(fs::exists(run_dir / "config.resolved"));
  CHECK(fs::exists(run_dir / "loss_history.csv"));

  // loss history carries the documented column header
  const std::string csv_head =
      read_file_bytes(run_dir / "loss_history.csv").substr(0, 42);
  CHECK(csv_head.rfind("epoch,step,loss,identity_loss,siamese_loss", 0) == 0);

  // a TRAIN entry missing from the dataset is excluded with a warning,
  // not a failure
  const fs::path padded_split = fx.root / "padded_split.txt";
  {
    SplitFile padded = load_split(split0);
    padded.train_ids.push_back("ghost_identity");
    save_split(padded, padded_split);
  }
  REQUIRE(run_cli("train --data " + fx.data.string() + " --split " +
                  padded_split.string() + " --out " +
                  (fx.root / "run_ghost").string() +
                  " --train.epochs 1 --train.checkpoint_interval 1" +
                  fx.geometry_flags()) == 0);

  // config.resolved reflects flag overrides
  const std::string resolved = read_file_bytes(run_dir / "config.resolved");
  CHECK(resolved.find("net.parts = 2") != std::string::npos);
  CHECK(resolved.find("train.k = 3") != std::string::npos);

  // eval twice: byte-identical primary outputs
  const fs::path eval_a = fx.root / "eval_a";
  const fs::path eval_b = fx.root / "eval_b";
  const std::string eval_cmd = "eval --data " + fx.data.string() + " --split " +
                               split0.string() + " --checkpoint " +
                               ckpt.string() + fx.geometry_flags();
  REQUIRE(run_cli(eval_cmd + " --out " + eval_a.string()) == 0);
  REQUIRE(run_cli(eval_cmd + " --out " + eval_b.string()) == 0);
  for (const char* name : {"cmc_table.txt", "cmc_curve.csv"}) {
    const std::string a = read_file_bytes(eval_a / "reports" / name);
    CHECK(!a.empty());
    CHECK(a == read_file_bytes(eval_b / "reports" / name));
  }
  const std::string table = read_file_bytes(eval_a / "reports" / "cmc_table.txt");
  CHECK(table.find("R=1") != std::string::npos);
  CHECK(table.find("R=5") != std::string::npos);
  CHECK(table.find("R=10") != std::string::npos);
  CHECK(table.find("R=20") != std::string::npos);

  // multi-split averaging writes per-split curves
  const fs::path split1 = fx.splits / "split_01.txt";
  const fs::path eval_m = fx.root / "eval_m";
  REQUIRE(run_cli("eval --data " + fx.data.string() + " --split " +
                  split0.string() + " --split " + split1.string() +
                  " --checkpoint " + ckpt.string() + " --out " +
                  eval_m.string() + fx.geometry_flags()) == 0);
  CHECK(fs::exists(eval_m / "reports" / "cmc_curve_split00.csv"));
  CHECK(fs::exists(eval_m / "reports" / "cmc_curve_split01.csv"));
}

TEST_CASE("cross-dataset eval reuses the checkpoint's statistics") {
  CliFixture fx;
  const fs::path split0 = fx.splits / "split_00.txt";
  const fs::path run_dir = fx.root / "xrun";
  REQUIRE(run_cli("train --data " + fx.data.string() + " --split " +
                  split0.string() + " --out " + run_dir.string() +
                  " --train.epochs 1 --train.checkpoint_interval 1" +
                  fx.geometry_flags()) == 0);
  const fs::path ckpt = run_dir / "checkpoints" / "epoch_000001.ckpt";

  // a foreign dataset with its own identities; the model, geometry and
  // channel statistics all come from the checkpoint
  const fs::path other = fx.root / "other_data";
  REQUIRE(run_cli("synth --out " + other.string() + fx.synth_flags() +
                  " --synth.seed 99") == 0);
  const fs::path other_splits = fx.root / "other_splits";
  REQUIRE(run_cli("split --data " + other.string() + " --out " +
                  other_splits.string() + " --split.count 1") == 0);
  REQUIRE(run_cli("eval --data " + other.string() + " --split " +
                  (other_splits / "split_00.txt").string() +
                  " --checkpoint " + ckpt.string() + " --out " +
                  (fx.root / "xeval").string() + fx.geometry_flags()) == 0);
  CHECK(fs::exists(fx.root / "xeval" / "reports" / "cmc_table.txt"));

  CHECK(run_cli("eval --data " + other.string() + " --split " +
                (other_splits / "split_00.txt").string() + " --checkpoint " +
                ckpt.string() + " --out " + (fx.root / "xeval2").string() +
                " --eval.which nonsense" + fx.geometry_flags()) == 1);
}

TEST_CASE("sweep emits one CSV row per feasible grid point") {
  CliFixture fx;
  const fs::path split0 = fx.splits / "split_00.txt";
  const fs::path sweep_dir = fx.root / "sweep";
  REQUIRE(run_cli("sweep --data " + fx.data.string() + " --split " +
                  split0.string() + " --out " + sweep_dir.string() +
                  " --sweep.parts 1,2 --sweep.overlaps 0,4 " +
                  " --train.epochs 1 --train.checkpoint_interval 1" +
                  fx.geometry_flags()) == 0);
  const std::string csv = read_file_bytes(sweep_dir / "sweep.csv");
  CHECK(csv.rfind("N,p,rank1,rank5,rank10,rank20\n", 0) == 0);
  int rows = 0;
  for (char c : csv)
    if (c == '\n') ++rows;
  CHECK(rows == 5);  // header + 4 grid points (all feasible at H=32)
}

}  // TEST_SUITE
