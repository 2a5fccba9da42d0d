// Acceptance gate: one line per criterion, nonzero exit if any fails.
// Everything runs at desk scale on the built-in synthetic dataset; the
// heavyweight criterion is the end-to-end toy training run.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "stfmm/data_io.hpp"
#include "stfmm/evaluator.hpp"
#include "stfmm/gradcheck.hpp"
#include "stfmm/trainer.hpp"
#include "test_support.hpp"

using namespace stfmm;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
  std::printf("[%s] %-22s %s\n", pass ? "PASS" : "FAIL", name.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

// ---- criterion 1: gradient suite ----

void criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto suite = gradcheck::run_full_suite(42, 100);
  const double elapsed = seconds_since(t0);

  bool pass = suite.all_pass() && elapsed < 120.0;
  double worst_primitive = 0.0, e2e = 0.0;
  for (const auto& g : suite.groups) {
    if (g.name == "total_loss")
      e2e = g.max_rel_err;
    else
      worst_primitive = std::max(worst_primitive, g.max_rel_err);
    std::printf("       %-16s max_rel_err %.3e (tol %.0e) checked %zu\n",
                g.name.c_str(), g.max_rel_err, g.tolerance, g.checked);
  }
  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "primitives %.2e < 1e-4, end-to-end %.2e < 1e-3, %.1fs < 120s",
                worst_primitive, e2e, elapsed);
  report("gradient-suite", pass, detail);
}

// ---- criterion 2: split geometry ----

void criterion_geometry() {
  int checked = 0, skipped = 0;
  bool pass = true;
  for (int frame_h : {64, 128})
    for (int parts = 1; parts <= 4; ++parts)
      for (int overlap : {0, 7, 13, 20, 26, 32}) {
        SplitGeometry g;
        try {
          g = split_geometry(frame_h, parts, overlap);
        } catch (const Error&) {
          ++skipped;  // precondition unsatisfiable
          continue;
        }
        ++checked;
        if (g.part_height != (frame_h + (parts - 1) * overlap) / parts)
          pass = false;
        if (g.starts.front() != 0 ||
            g.starts.back() != frame_h - g.part_height)
          pass = false;
        std::vector<bool> covered(static_cast<std::size_t>(frame_h), false);
        for (int n = 0; n < parts; ++n) {
          if (n > 0 && g.starts[static_cast<std::size_t>(n)] <=
                           g.starts[static_cast<std::size_t>(n - 1)])
            pass = false;
          for (int r = g.starts[static_cast<std::size_t>(n)];
               r < g.starts[static_cast<std::size_t>(n)] + g.part_height; ++r)
            covered[static_cast<std::size_t>(r)] = true;
          if (n + 1 < parts) {
            const int ov = g.starts[static_cast<std::size_t>(n)] +
                           g.part_height -
                           g.starts[static_cast<std::size_t>(n + 1)];
            if (ov < overlap - (parts - 1) || ov > overlap) pass = false;
          }
        }
        for (bool c : covered)
          if (!c) pass = false;
      }

  const SplitGeometry a = split_geometry(128, 3, 13);
  const SplitGeometry b = split_geometry(128, 2, 20);
  if (a.part_height != 51 || a.starts != std::vector<int>{0, 38, 77})
    pass = false;
  if (b.part_height != 74 || b.starts != std::vector<int>{0, 54}) pass = false;

  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "%d feasible combinations verified (%d infeasible rejected); "
                "h=51/[0,38,77], h=74/[0,54]",
                checked, skipped);
  report("geometry-suite", pass, detail);
}

// ---- criterion 3: SPP shape invariance ----

void criterion_spp_shapes() {
  Pcg32 rng(3);
  const std::vector<int> bins{8, 4, 2, 1};
  bool pass = true;
  for (int h = 1; h <= 32 && pass; ++h)
    for (int w = 1; w <= 32; ++w) {
      const Tensor map = testing::rand_tensor({3, h, w}, rng);
      if (spp_pool(map, bins).numel() != 3u * 85u) {
        pass = false;
        break;
      }
    }
  report("spp-shape-invariance", pass,
         "output length c*85 for all 32x32 map sizes (c=3)");
}

// ---- criterion 4: loss identities ----

void criterion_loss_identities() {
  Pcg32 rng(4);
  bool pass = true;
  double worst = 0.0;
  for (int it = 0; it < 100; ++it) {
    SequenceFeatureT<float> a, b;
    const int parts = 1 + static_cast<int>(rng.bounded(4));
    const int d = 1 + static_cast<int>(rng.bounded(16));
    for (int n = 0; n < parts; ++n) {
      a.part_features.push_back(testing::rand_tensor({d}, rng));
      b.part_features.push_back(testing::rand_tensor({d}, rng));
    }
    a.mixed = ops::concat(a.part_features);
    b.mixed = ops::concat(b.part_features);
    const double part_sum = siamese_loss(a, b, true, 2.0f);
    double mixed_sum = 0;
    for (std::size_t i = 0; i < a.mixed.numel(); ++i) {
      const double diff = static_cast<double>(a.mixed.data[i]) - b.mixed.data[i];
      mixed_sum += diff * diff;
    }
    const double rel = std::abs(part_sum - mixed_sum) /
                       std::max(1e-12, std::abs(mixed_sum));
    worst = std::max(worst, rel);
    if (rel > 1e-5) pass = false;
  }

  // hinge arithmetic at m = 2 for D in {0, 0.5, 2, 3}, with distances
  // assembled from exactly representable squares
  const float margin = 2.0f;
  const std::vector<std::vector<float>> cases = {
      {0.0f}, {0.5f, 0.5f}, {1.0f, 1.0f}, {1.0f, 1.0f, 1.0f}};
  const float expect_same[4] = {0.0f, 0.5f, 2.0f, 3.0f};
  const float expect_diff[4] = {2.0f, 1.5f, 0.0f, 0.0f};
  for (int i = 0; i < 4; ++i) {
    SequenceFeatureT<float> p, g;
    p.part_features = {Tensor({static_cast<int>(cases[i].size())})};
    g.part_features = {
        Tensor({static_cast<int>(cases[i].size())}, cases[i])};
    p.mixed = p.part_features[0];
    g.mixed = g.part_features[0];
    if (siamese_loss(p, g, true, margin) != expect_same[i]) pass = false;
    if (siamese_loss(p, g, false, margin) != expect_diff[i]) pass = false;
  }

  char detail[128];
  std::snprintf(detail, sizeof(detail),
                "part-sum vs mixed-vector distance rel %.2e < 1e-5; hinge "
                "values exact",
                worst);
  report("loss-identities", pass, detail);
}

// ---- criterion 5: CMC against brute force ----

void criterion_cmc_oracle() {
  Pcg32 rng(5);
  bool pass = true;
  for (int it = 0; it < 1000 && pass; ++it) {
    DistanceMatrix dist;
    std::vector<std::string> probe_ids, gallery_ids;
    testing::random_cmc_instance(rng, 12, dist, probe_ids, gallery_ids);
    const CmcCurve ours = cmc_curve(dist, probe_ids, gallery_ids);
    const CmcCurve oracle = testing::cmc_oracle(dist, probe_ids, gallery_ids);
    if (ours.rates != oracle.rates) pass = false;
  }
  report("cmc-oracle", pass,
         "exact agreement with enumeration on 1000 random matrices up to "
         "12x12");
}

// ---- criteria 6-8: the synthetic end-to-end run ----

struct ToySetup {
  fs::path root;
  TrainDataset data;
  ChannelStats stats;
  NetConfig net;
  PrepConfig prep;
  SplitGeometry geom;
  TrainConfig tc;
  SplitFile split;
  DatasetIndex index;
};

ToySetup build_toy() {
  ToySetup toy;
  toy.root = testing::fresh_dir("acceptance_toy");
  synth_generate(toy.root / "data", 8, 24, 64, 32, 7);
  toy.index = scan_dataset(toy.root / "data", DatasetLayout::generic);

  toy.prep.frame_height = 64;
  toy.prep.frame_width = 32;

  toy.net.parts = 2;
  toy.net.embed_dim = 32;
  toy.net.margin = 2.0f;
  toy.net.classes = 8;
  toy.geom = split_geometry(64, 2, 4);

  toy.tc.subseq_len = 16;
  toy.tc.learning_rate = 1e-3f;
  toy.tc.epochs = 300;
  toy.tc.seed = 1;
  toy.tc.checkpoint_interval = 50;
  toy.tc.threads = 2;

  std::vector<RawSequence> raws;
  for (const auto& person : toy.index.persons) {
    raws.push_back(load_raw_sequence(person, 1));
    raws.push_back(load_raw_sequence(person, 2));
    toy.split.train_ids.push_back(person.id);
  }
  std::vector<const RawSequence*> ptrs;
  for (const auto& r : raws) ptrs.push_back(&r);
  toy.stats = compute_dataset_stats(ptrs);

  for (std::size_t i = 0; i < toy.index.persons.size(); ++i) {
    TrainIdentity ti;
    ti.id = toy.index.persons[i].id;
    ti.cameras[0] = prepare_sequence(raws[2 * i], toy.stats, toy.prep);
    ti.cameras[1] = prepare_sequence(raws[2 * i + 1], toy.stats, toy.prep);
    toy.data.identities.push_back(std::move(ti));
  }
  return toy;
}

double train_rank1(const ToySetup& toy, const ModelParams& params) {
  std::vector<const VideoSequence*> probes, gallery;
  std::vector<std::string> ids;
  for (const auto& ti : toy.data.identities) {
    probes.push_back(&ti.cameras[0]);
    gallery.push_back(&ti.cameras[1]);
    ids.push_back(ti.id);
  }
  const FeatureGallery pf = extract_features(probes, params, toy.net, toy.prep,
                                             toy.geom, 128, toy.tc.threads);
  const FeatureGallery gf = extract_features(gallery, params, toy.net,
                                             toy.prep, toy.geom, 128,
                                             toy.tc.threads);
  const DistanceMatrix dist = distance_matrix(pf, gf);
  return cmc_curve(dist, ids, ids).rates.front();
}

fs::path criterion_toy_run(ToySetup& toy) {
  const auto t0 = std::chrono::steady_clock::now();

  int reached_epoch = -1;
  double rank1 = 0.0;
  const RunResult run = train_run(
      toy.data, toy.net, toy.prep, toy.geom, toy.tc, toy.stats,
      toy.root / "run", nullptr, [&](int epoch, const ModelParams& params) {
        if (epoch % 10 != 0 && epoch != toy.tc.epochs) return true;
        rank1 = train_rank1(toy, params);
        if (rank1 >= 1.0) {
          reached_epoch = epoch;
          return false;  // criterion met, stop the run
        }
        return true;
      });
  const double elapsed = seconds_since(t0);

  const bool pass = reached_epoch > 0 && reached_epoch <= 300 &&
                    elapsed < 900.0 && run.params.all_finite();
  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "rank-1 %.0f%% at epoch %d (limit 300), %.0fs (limit 900s)",
                rank1 * 100.0, reached_epoch, elapsed);
  report("toy-end-to-end", pass, detail);
  return run.last_checkpoint;
}

void criterion_toy_reproducibility(const ToySetup& toy) {
  TrainConfig short_tc = toy.tc;
  short_tc.epochs = 2;
  short_tc.checkpoint_interval = 2;
  const RunResult a = train_run(toy.data, toy.net, toy.prep, toy.geom,
                                short_tc, toy.stats, toy.root / "seed_a");
  const RunResult b = train_run(toy.data, toy.net, toy.prep, toy.geom,
                                short_tc, toy.stats, toy.root / "seed_b");
  const bool pass =
      testing::read_file_bytes(a.last_checkpoint) ==
          testing::read_file_bytes(b.last_checkpoint) &&
      testing::read_file_bytes(toy.root / "seed_a" / "loss_history.csv") ==
          testing::read_file_bytes(toy.root / "seed_b" / "loss_history.csv");
  report("toy-reproducibility", pass,
         "two seeded runs: checkpoint and loss history bitwise identical");
}

void criterion_optical_flow() {
  PrepConfig cfg;
  Pcg32 rng(31);
  const int n = 64;
  // smooth random texture (coarse grid, bilinear upsample)
  const int cell = 5, gh = n / cell + 2, gw = n / cell + 2;
  std::vector<double> grid(static_cast<std::size_t>(gh) * gw);
  for (auto& v : grid) v = rng.uniform();
  Tensor a({n, n});
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double fy = static_cast<double>(y) / cell;
      const double fx = static_cast<double>(x) / cell;
      const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
      const double ay = fy - y0, ax = fx - x0;
      const auto g = [&](int yy, int xx) {
        return grid[static_cast<std::size_t>(yy) * gw + xx];
      };
      a.data[static_cast<std::size_t>(y) * n + x] = static_cast<float>(
          (1 - ay) * ((1 - ax) * g(y0, x0) + ax * g(y0, x0 + 1)) +
          ay * ((1 - ax) * g(y0 + 1, x0) + ax * g(y0 + 1, x0 + 1)));
    }
  Tensor b({n, n});
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      b.data[static_cast<std::size_t>(y) * n + x] =
          a.data[static_cast<std::size_t>(y) * n + std::max(0, x - 1)];

  const Tensor flow = lucas_kanade_flow(a, b, cfg);
  std::vector<double> fx_px, fy_px;
  for (int y = 8; y < n - 8; ++y)
    for (int x = 8; x < n - 8; ++x) {
      fx_px.push_back(flow.at(0, y, x) * cfg.flow_dmax);
      fy_px.push_back(flow.at(1, y, x) * cfg.flow_dmax);
    }
  std::sort(fx_px.begin(), fx_px.end());
  std::sort(fy_px.begin(), fy_px.end());
  const double med_x = fx_px[fx_px.size() / 2];
  const double med_y = fy_px[fy_px.size() / 2];

  const Tensor same = lucas_kanade_flow(a, a, cfg);
  bool exact_zero = true;
  for (float v : same.data)
    if (v != 0.0f) exact_zero = false;

  const bool pass =
      std::abs(med_x - 1.0) < 0.25 && std::abs(med_y) < 0.25 && exact_zero;
  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "1px shift: median (%.3f, %.3f) px, error < 0.25; identical "
                "frames: flow exactly zero",
                med_x, med_y);
  report("optical-flow", pass, detail);
}

void criterion_determinism(const ToySetup& toy, const fs::path& checkpoint) {
  // repeated eval: byte-identical reports
  EvalRequest req;
  req.checkpoint = checkpoint;
  req.dataset = toy.index;
  req.splits = {toy.split};
  req.use_train_side = true;
  req.max_test_len = 128;
  req.threads = toy.tc.threads;
  req.out_dir = toy.root / "eval_a";
  evaluate_run(req);
  req.out_dir = toy.root / "eval_b";
  evaluate_run(req);
  bool eval_identical = true;
  for (const char* name : {"cmc_table.txt", "cmc_curve.csv"})
    if (testing::read_file_bytes(toy.root / "eval_a" / name) !=
        testing::read_file_bytes(toy.root / "eval_b" / name))
      eval_identical = false;

  // checkpoint resume reproduces the uninterrupted loss trajectory
  TrainConfig tc = toy.tc;
  tc.epochs = 4;
  tc.checkpoint_interval = 2;
  const RunResult full = train_run(toy.data, toy.net, toy.prep, toy.geom, tc,
                                   toy.stats, toy.root / "resume_full");
  TrainConfig head_tc = tc;
  head_tc.epochs = 2;
  const RunResult head = train_run(toy.data, toy.net, toy.prep, toy.geom,
                                   head_tc, toy.stats, toy.root / "resume_head");
  const LoadedCheckpoint ck = load_checkpoint(head.last_checkpoint);
  const RunResult tail =
      train_run(toy.data, toy.net, toy.prep, toy.geom, tc, toy.stats,
                toy.root / "resume_tail", &ck);

  bool resume_identical = true;
  std::vector<StepRecord> full_tail;
  for (const auto& r : full.history)
    if (r.epoch >= 3) full_tail.push_back(r);
  if (full_tail.size() != tail.history.size()) resume_identical = false;
  for (std::size_t i = 0;
       resume_identical && i < full_tail.size(); ++i)
    if (full_tail[i].loss != tail.history[i].loss ||
        full_tail[i].identity_loss != tail.history[i].identity_loss ||
        full_tail[i].siamese_loss != tail.history[i].siamese_loss)
      resume_identical = false;
  if (testing::read_file_bytes(full.last_checkpoint) !=
      testing::read_file_bytes(tail.last_checkpoint))
    resume_identical = false;

  report("determinism", eval_identical && resume_identical,
         "repeated eval reports byte-identical; resumed run matches the "
         "uninterrupted trajectory exactly");
}

}  // namespace

int main() {
  std::printf("acceptance suite\n================\n");
  try {
    criterion_gradients();
    criterion_geometry();
    criterion_spp_shapes();
    criterion_loss_identities();
    criterion_cmc_oracle();
    criterion_optical_flow();

    ToySetup toy = build_toy();
    const fs::path checkpoint = criterion_toy_run(toy);
    criterion_toy_reproducibility(toy);
    criterion_determinism(toy, checkpoint);
    fs::remove_all(toy.root);
  } catch (const std::exception& e) {
    std::printf("[FAIL] unexpected error: %s\n", e.what());
    ++g_failures;
  }

  std::printf("================\n%s (%d failure%s)\n",
              g_failures == 0 ? "ALL CRITERIA PASS" : "CRITERIA FAILED",
              g_failures, g_failures == 1 ? "" : "s");
  return g_failures == 0 ? 0 : 1;
}
