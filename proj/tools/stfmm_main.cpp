#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "stfmm/config.hpp"
#include "stfmm/data_io.hpp"
#include "stfmm/evaluator.hpp"
#include "stfmm/gradcheck.hpp"
#include "stfmm/trainer.hpp"

namespace fs = std::filesystem;
using namespace stfmm;

namespace {

constexpr const char* kUsage = R"(usage: stfmm <subcommand> [options]

subcommands:
  synth      generate the built-in synthetic dataset (generic layout)
  split      generate train/test split files for a dataset
  prep       build the preprocessed-sequence cache for a split
  train      train a model on the TRAIN side of a split
  eval       evaluate a checkpoint (CMC table + curve CSVs)
  gradcheck  run the finite-difference gradient suite
  sweep      train+eval over a (parts, overlap) grid, emit sweep.csv

options:
  --config FILE        layered config file (or $STFMM_CONFIG); flags override
  --data DIR           dataset root            (key data.root)
  --layout NAME        generic | ilids | prid  (key data.layout)
  --split FILE         split file; repeatable for eval multi-split averaging
  --checkpoint FILE    checkpoint to evaluate
  --out DIR            output directory of the subcommand
  --<key> VALUE        override any config key, e.g. --net.parts 3
  --help               this text (also: stfmm help)

exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure
)";

struct Args {
  std::string subcommand;
  Config cfg = Config::defaults();
  std::vector<fs::path> splits;
  fs::path checkpoint;
  fs::path out;
};

Args parse_args(int argc, char** argv) {
  require(argc >= 2, std::string("missing subcommand\n") + kUsage,
          ErrorKind::usage);
  Args args;
  args.subcommand = argv[1];

  // defaults < env config < --config < flags
  if (const char* env = std::getenv("STFMM_CONFIG"); env && *env)
    args.cfg.load_file(env);

  std::vector<std::pair<std::string, std::string>> overrides;
  for (int i = 2; i < argc; ++i) {
    std::string flag = argv[i];
    require(flag.rfind("--", 0) == 0, "unexpected argument '" + flag + "'",
            ErrorKind::usage);
    flag.erase(0, 2);
    std::string value;
    const auto eq = flag.find('=');
    if (eq != std::string::npos) {
      value = flag.substr(eq + 1);
      flag.erase(eq);
    } else if (flag != "help") {
      require(i + 1 < argc, "flag --" + flag + " needs a value",
              ErrorKind::usage);
      value = argv[++i];
    }

    if (flag == "help") {
      std::cout << kUsage;
      std::exit(0);
    } else if (flag == "config") {
      args.cfg.load_file(value);
    } else if (flag == "split") {
      args.splits.emplace_back(value);
    } else if (flag == "checkpoint") {
      args.checkpoint = value;
    } else if (flag == "out") {
      args.out = value;
    } else if (flag == "data") {
      overrides.emplace_back("data.root", value);
    } else if (flag == "layout") {
      overrides.emplace_back("data.layout", value);
    } else {
      require(Config::is_known_key(flag),
              "unknown flag --" + flag + "\n" + kUsage, ErrorKind::usage);
      overrides.emplace_back(flag, value);
    }
  }
  for (const auto& kv : overrides) args.cfg.set(kv.first, kv.second);
  return args;
}

fs::path pick_run_dir(const Args& args) {
  if (!args.out.empty()) return args.out;
  if (!args.cfg.get("run.dir").empty()) return args.cfg.get("run.dir");
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm);
  return fs::path("runs") /
         (std::string(stamp) + "-" + args.cfg.get("run.tag"));
}

void write_resolved_config(const Config& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream os(dir / "config.resolved");
  require(os.good(), "cannot write config snapshot");
  os << cfg.resolved_text();
}

SplitGeometry geometry_from(const Config& cfg) {
  return split_geometry(cfg.get_int("prep.height"), cfg.get_int("net.parts"),
                        cfg.get_int("net.overlap"));
}

std::uint64_t ids_hash(std::vector<std::string> ids) {
  std::sort(ids.begin(), ids.end());
  std::string joined;
  for (const auto& id : ids) {
    joined += id;
    joined += '\n';
  }
  return fnv1a64(joined);
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(v));
  return buf;
}

// ---- cache ----

struct CacheProbe {
  bool valid = false;
  ChannelStats stats;
};

CacheProbe probe_cache(const fs::path& dir, const PrepConfig& prep,
                       const std::vector<std::string>& train_ids) {
  CacheProbe probe;
  if (dir.empty() || !fs::exists(dir / "manifest.txt")) return probe;
  std::ifstream is(dir / "manifest.txt");
  std::string line, prep_line, train_hash;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    const auto trim = [](std::string& s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t") + 1);
    };
    trim(key);
    trim(value);
    if (key == "prep") prep_line = value;
    if (key == "train.hash") train_hash = value;
  }
  if (prep_line != prep.describe() || train_hash != hex64(ids_hash(train_ids))) {
    std::cerr << "warning: cache at " << dir.string()
              << " does not match this run, preprocessing in memory\n";
    return probe;
  }
  probe.stats = load_stats(dir / "stats.txt");
  probe.valid = true;
  return probe;
}

fs::path cache_entry(const fs::path& dir, const std::string& id, int camera) {
  return dir / (id + "_cam" + std::to_string(camera) + ".seq");
}

// Identities from the split that actually exist in the index, with a
// warning for the rest.
std::vector<std::string> usable_ids(const std::vector<std::string>& wanted,
                                    const DatasetIndex& index) {
  std::vector<std::string> out;
  for (const std::string& id : wanted) {
    if (index.find(id)) {
      out.push_back(id);
    } else {
      std::cerr << "warning: identity '" << id
                << "' missing a camera or absent, excluded\n";
    }
  }
  return out;
}

struct PreparedTrainData {
  TrainDataset data;
  ChannelStats stats;
};

PreparedTrainData load_train_data(const DatasetIndex& index,
                                  const SplitFile& split,
                                  const PrepConfig& prep,
                                  const fs::path& cache_dir) {
  PreparedTrainData out;
  const std::vector<std::string> ids = usable_ids(split.train_ids, index);
  require(ids.size() >= 2, "train: fewer than two usable train identities");

  const CacheProbe cache = probe_cache(cache_dir, prep, split.train_ids);
  if (cache.valid) {
    out.stats = cache.stats;
    for (const std::string& id : ids) {
      TrainIdentity ti;
      ti.id = id;
      for (int cam = 1; cam <= 2; ++cam)
        ti.cameras[static_cast<std::size_t>(cam - 1)] = load_sequence_cache(
            cache_entry(cache_dir, id, cam), out.stats);
      out.data.identities.push_back(std::move(ti));
    }
    return out;
  }

  std::vector<RawSequence> raw;
  raw.reserve(ids.size() * 2);
  for (const std::string& id : ids) {
    const DatasetIndex::Person* person = index.find(id);
    raw.push_back(load_raw_sequence(*person, 1));
    raw.push_back(load_raw_sequence(*person, 2));
  }
  std::vector<const RawSequence*> stat_inputs;
  for (const auto& r : raw) stat_inputs.push_back(&r);
  out.stats = compute_dataset_stats(stat_inputs);

  for (std::size_t i = 0; i < ids.size(); ++i) {
    TrainIdentity ti;
    ti.id = ids[i];
    ti.cameras[0] = prepare_sequence(raw[2 * i], out.stats, prep);
    ti.cameras[1] = prepare_sequence(raw[2 * i + 1], out.stats, prep);
    out.data.identities.push_back(std::move(ti));
  }
  return out;
}

// ---- subcommands ----

int cmd_synth(const Args& args) {
  require(!args.out.empty(), "synth: --out DIR is required", ErrorKind::usage);
  synth_generate(args.out, args.cfg.get_int("synth.identities"),
                 args.cfg.get_int("synth.frames"),
                 args.cfg.get_int("synth.height"),
                 args.cfg.get_int("synth.width"),
                 args.cfg.get_u64("synth.seed"));
  std::cout << "synthetic dataset written to " << args.out.string() << "\n";
  return 0;
}

int cmd_split(const Args& args) {
  require(!args.out.empty(), "split: --out DIR is required", ErrorKind::usage);
  const DatasetIndex index =
      scan_dataset(args.cfg.get("data.root"),
                   parse_layout(args.cfg.get("data.layout")));
  const auto splits = make_splits(index, args.cfg.get_int("split.count"),
                                  args.cfg.get_u64("split.seed"));
  fs::create_directories(args.out);
  for (std::size_t i = 0; i < splits.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "split_%02zu.txt", i);
    save_split(splits[i], args.out / name);
  }
  std::cout << splits.size() << " split files written to " << args.out.string()
            << "\n";
  return 0;
}

int cmd_prep(const Args& args) {
  require(!args.out.empty(), "prep: --out DIR is required", ErrorKind::usage);
  require(args.splits.size() == 1, "prep: exactly one --split FILE is required",
          ErrorKind::usage);
  const PrepConfig prep = args.cfg.prep();
  const DatasetIndex index =
      scan_dataset(args.cfg.get("data.root"),
                   parse_layout(args.cfg.get("data.layout")));
  const SplitFile split = load_split(args.splits.front());

  const std::vector<std::string> train_ids = usable_ids(split.train_ids, index);
  require(!train_ids.empty(), "prep: no usable train identities");

  std::vector<RawSequence> train_raw;
  for (const std::string& id : train_ids) {
    const DatasetIndex::Person* p = index.find(id);
    train_raw.push_back(load_raw_sequence(*p, 1));
    train_raw.push_back(load_raw_sequence(*p, 2));
  }
  std::vector<const RawSequence*> stat_inputs;
  for (const auto& r : train_raw) stat_inputs.push_back(&r);
  const ChannelStats stats = compute_dataset_stats(stat_inputs);

  fs::create_directories(args.out);
  save_stats(args.out / "stats.txt", stats);

  std::vector<std::string> all_ids = train_ids;
  for (const std::string& id : usable_ids(split.test_ids, index))
    all_ids.push_back(id);
  std::size_t written = 0;
  for (const std::string& id : all_ids) {
    const DatasetIndex::Person* p = index.find(id);
    for (int cam = 1; cam <= 2; ++cam) {
      const VideoSequence seq =
          prepare_sequence(load_raw_sequence(*p, cam), stats, prep);
      save_sequence_cache(cache_entry(args.out, id, cam), seq, stats);
      ++written;
    }
  }

  std::ofstream os(args.out / "manifest.txt");
  require(os.good(), "prep: cannot write cache manifest");
  os << "format = stfmm-cache 1\n"
     << "dataset.root = " << args.cfg.get("data.root") << "\n"
     << "dataset.layout = " << args.cfg.get("data.layout") << "\n"
     << "prep = " << prep.describe() << "\n"
     << "stats.checksum = " << hex64(stats.checksum()) << "\n"
     << "train.hash = " << hex64(ids_hash(split.train_ids)) << "\n"
     << "sequences = " << written << "\n";
  std::cout << written << " sequences cached under " << args.out.string()
            << "\n";
  return 0;
}

int cmd_train(const Args& args) {
  require(args.splits.size() == 1,
          "train: exactly one --split FILE is required", ErrorKind::usage);
  const PrepConfig prep = args.cfg.prep();
  NetConfig net = args.cfg.net();
  const TrainConfig tc = args.cfg.train();
  const SplitGeometry geom = geometry_from(args.cfg);

  const DatasetIndex index =
      scan_dataset(args.cfg.get("data.root"),
                   parse_layout(args.cfg.get("data.layout")));
  const SplitFile split = load_split(args.splits.front());
  PreparedTrainData prepared =
      load_train_data(index, split, prep, args.cfg.get("cache.dir"));

  net.classes = static_cast<int>(prepared.data.identities.size());
  net.validate(geom.part_height, prep.frame_width);

  const fs::path run_dir = pick_run_dir(args);
  write_resolved_config(args.cfg, run_dir);

  std::unique_ptr<LoadedCheckpoint> resume;
  if (!args.checkpoint.empty())
    resume = std::make_unique<LoadedCheckpoint>(load_checkpoint(
        args.checkpoint, run_config_hash(net, prep, geom)));

  const RunResult result =
      train_run(prepared.data, net, prep, geom, tc, prepared.stats, run_dir,
                resume.get(), nullptr);

  std::cout << "trained " << result.epochs_completed << " epochs ("
            << result.history.size() << " updates, " << result.skipped_steps
            << " skipped)\n"
            << "checkpoint: " << result.last_checkpoint.string() << "\n";
  return 0;
}

std::vector<SplitFile> load_all_splits(const Args& args) {
  require(!args.splits.empty(), "eval: at least one --split FILE is required",
          ErrorKind::usage);
  std::vector<SplitFile> out;
  for (const fs::path& p : args.splits) out.push_back(load_split(p));
  return out;
}

bool eval_train_side(const Config& cfg) {
  const std::string which = cfg.get("eval.which");
  require(which == "test" || which == "train",
          "eval.which must be test or train", ErrorKind::usage);
  return which == "train";
}

int cmd_eval(const Args& args) {
  require(!args.checkpoint.empty(), "eval: --checkpoint FILE is required",
          ErrorKind::usage);
  EvalRequest req;
  req.checkpoint = args.checkpoint;
  req.dataset = scan_dataset(args.cfg.get("data.root"),
                             parse_layout(args.cfg.get("data.layout")));
  req.splits = load_all_splits(args);
  req.use_train_side = eval_train_side(args.cfg);
  req.ranks = args.cfg.get_int_list("eval.ranks");
  req.max_test_len = args.cfg.get_int("eval.max_test_len");
  req.threads = args.cfg.get_int("train.threads");
  const fs::path run_dir = pick_run_dir(args);
  req.out_dir = run_dir / "reports";
  write_resolved_config(args.cfg, run_dir);

  const EvalReport report = evaluate_run(req);
  std::cout << report.table_text;
  std::cout << "reports written to " << req.out_dir.string() << "\n";
  return 0;
}

int cmd_gradcheck(const Args& args) {
  const auto report = gradcheck::run_full_suite(
      args.cfg.get_u64("gradcheck.seed"),
      args.cfg.get_int("gradcheck.instances"));
  std::printf("%-16s %12s %10s %9s %8s  %s\n", "group", "max_rel_err",
              "tolerance", "checked", "skipped", "status");
  for (const auto& g : report.groups)
    std::printf("%-16s %12.3e %10.0e %9zu %8zu  %s\n", g.name.c_str(),
                g.max_rel_err, g.tolerance, g.checked, g.skipped,
                g.pass() ? "PASS" : "FAIL");
  if (!report.all_pass()) {
    std::cerr << "gradcheck: at least one group exceeded its tolerance\n";
    return 3;
  }
  return 0;
}

int cmd_sweep(const Args& args) {
  require(args.splits.size() == 1,
          "sweep: exactly one --split FILE is required", ErrorKind::usage);
  const fs::path run_dir = pick_run_dir(args);
  write_resolved_config(args.cfg, run_dir);

  const std::vector<int> parts_grid = args.cfg.get_int_list("sweep.parts");
  const std::vector<int> overlap_grid = args.cfg.get_int_list("sweep.overlaps");

  std::ofstream csv(run_dir / "sweep.csv");
  require(csv.good(), "sweep: cannot write sweep.csv");
  csv << "N,p,rank1,rank5,rank10,rank20\n";

  const DatasetIndex index =
      scan_dataset(args.cfg.get("data.root"),
                   parse_layout(args.cfg.get("data.layout")));
  const SplitFile split = load_split(args.splits.front());

  for (int n : parts_grid)
    for (int p : overlap_grid) {
      Args point = args;
      point.cfg.set("net.parts", std::to_string(n));
      point.cfg.set("net.overlap", std::to_string(p));

      SplitGeometry geom;
      try {
        geom = geometry_from(point.cfg);
      } catch (const Error& e) {
        std::cerr << "sweep: skipping N=" << n << " p=" << p << ": "
                  << e.what() << "\n";
        continue;
      }

      const PrepConfig prep = point.cfg.prep();
      NetConfig net = point.cfg.net();
      PreparedTrainData prepared =
          load_train_data(index, split, prep, point.cfg.get("cache.dir"));
      net.classes = static_cast<int>(prepared.data.identities.size());
      net.validate(geom.part_height, prep.frame_width);

      char sub[48];
      std::snprintf(sub, sizeof(sub), "sweep_N%d_p%d", n, p);
      const fs::path point_dir = run_dir / sub;
      fs::create_directories(point_dir);
      const RunResult run =
          train_run(prepared.data, net, prep, geom, point.cfg.train(),
                    prepared.stats, point_dir, nullptr, nullptr);

      EvalRequest req;
      req.checkpoint = run.last_checkpoint;
      req.dataset = index;
      req.splits = {split};
      req.use_train_side = eval_train_side(point.cfg);
      req.ranks = {1, 5, 10, 20};
      req.max_test_len = point.cfg.get_int("eval.max_test_len");
      req.threads = point.cfg.get_int("train.threads");
      req.out_dir = point_dir / "reports";
      const EvalReport report = evaluate_run(req);

      char row[128];
      std::snprintf(row, sizeof(row), "%d,%d,%.6g,%.6g,%.6g,%.6g\n", n, p,
                    report.averaged.at_rank(1), report.averaged.at_rank(5),
                    report.averaged.at_rank(10), report.averaged.at_rank(20));
      csv << row;
      csv.flush();
      std::cout << "sweep point N=" << n << " p=" << p << " done\n";
    }
  std::cout << "sweep results in " << (run_dir / "sweep.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    const Args args = parse_args(argc, argv);
    if (args.subcommand == "synth") return cmd_synth(args);
    if (args.subcommand == "split") return cmd_split(args);
    if (args.subcommand == "prep") return cmd_prep(args);
    if (args.subcommand == "train") return cmd_train(args);
    if (args.subcommand == "eval") return cmd_eval(args);
    if (args.subcommand == "gradcheck") return cmd_gradcheck(args);
    if (args.subcommand == "sweep") return cmd_sweep(args);
    if (args.subcommand == "help" || args.subcommand == "--help") {
      std::cout << kUsage;
      return 0;
    }
    std::cerr << "error: unknown subcommand '" << args.subcommand << "'\n"
              << kUsage;
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
