#include <cmath>
#include <fstream>

#include "doctest.h"
#include "stfmm/trainer.hpp"
#include "test_support.hpp"

using namespace stfmm;
using stfmm::testing::fresh_dir;
using stfmm::testing::make_padded_sequence;
using stfmm::testing::read_file_bytes;

namespace {

// tiny trainer fixture: random padded sequences, no image pipeline
struct Fixture {
  PrepConfig prep;
  NetConfig net;
  SplitGeometry geom;
  TrainDataset data;
  ChannelStats stats;

  explicit Fixture(int identities = 2, int frames = 6) {
    prep.frame_height = 16;
    prep.frame_width = 12;
    prep.crop_margin = 2;
    net.parts = 2;
    net.conv_channels = {2, 3, 3};
    net.embed_dim = 4;
    net.classes = identities;
    geom = split_geometry(prep.frame_height, net.parts, 4);
    Pcg32 rng(99);
    for (int i = 0; i < identities; ++i) {
      TrainIdentity ti;
      ti.id = "id" + std::to_string(i);
      ti.cameras[0] = make_padded_sequence(ti.id, 1, frames, prep, rng);
      ti.cameras[1] = make_padded_sequence(ti.id, 2, frames, prep, rng);
      data.identities.push_back(std::move(ti));
    }
  }

  TrainConfig train_cfg(int epochs, std::uint64_t seed = 5) const {
    TrainConfig tc;
    tc.subseq_len = 4;
    tc.epochs = epochs;
    tc.seed = seed;
    tc.checkpoint_interval = 3;
    tc.threads = 1;
    return tc;
  }
};

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("sample_subsequence selection rules") {
  PrepConfig prep;
  prep.frame_height = 8;
  prep.frame_width = 8;
  prep.crop_margin = 0;
  Pcg32 data_rng(1);
  VideoSequence seq = make_padded_sequence("s", 1, 5, prep, data_rng);
  // tag each frame so positions are recognizable
  for (std::size_t t = 0; t < seq.frames.size(); ++t)
    seq.frames[t].data[0] = static_cast<float>(t);

  Pcg32 rng(2);
  // T == k: the whole sequence is the only choice
  const VideoSequence whole = sample_subsequence(seq, 5, rng);
  REQUIRE(whole.frames.size() == 5);
  for (std::size_t t = 0; t < 5; ++t)
    CHECK(whole.frames[t].data[0] == static_cast<float>(t));

  // T=5, k=16: frames tile cyclically from the start
  const VideoSequence tiled = sample_subsequence(seq, 16, rng);
  REQUIRE(tiled.frames.size() == 16);
  for (std::size_t t = 0; t < 16; ++t)
    CHECK(tiled.frames[t].data[0] == static_cast<float>(t % 5));

  // T=20, k=16: start index stays in {0..4}
  VideoSequence longer = make_padded_sequence("l", 1, 20, prep, data_rng);
  for (std::size_t t = 0; t < longer.frames.size(); ++t)
    longer.frames[t].data[0] = static_cast<float>(t);
  for (int it = 0; it < 50; ++it) {
    const VideoSequence sub = sample_subsequence(longer, 16, rng);
    const int start = static_cast<int>(sub.frames[0].data[0]);
    CHECK(start >= 0);
    CHECK(start <= 4);
    for (std::size_t t = 1; t < 16; ++t)
      CHECK(sub.frames[t].data[0] == static_cast<float>(start + static_cast<int>(t)));
  }

  CHECK_THROWS_AS(sample_subsequence(VideoSequence{}, 4, rng), Error);
}

TEST_CASE("build_epoch alternation and coverage") {
  Pcg32 rng(3);
  const auto descriptors = build_epoch(2, rng);
  REQUIRE(descriptors.size() == 4);
  CHECK(descriptors[0].same);
  CHECK(!descriptors[1].same);
  CHECK(descriptors[2].same);
  CHECK(!descriptors[3].same);

  for (int n : {2, 5, 9}) {
    const auto ds = build_epoch(n, rng);
    REQUIRE(ds.size() == 2 * static_cast<std::size_t>(n));
    std::vector<int> positive_probe_count(static_cast<std::size_t>(n), 0);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      CHECK(ds[i].same == (i % 2 == 0));  // strict alternation
      CHECK(ds[i].same ==
            (ds[i].probe_identity == ds[i].gallery_identity));
      if (ds[i].same)
        ++positive_probe_count[static_cast<std::size_t>(ds[i].probe_identity)];
      else
        CHECK(ds[i].probe_identity != ds[i].gallery_identity);
    }
    for (int c : positive_probe_count) CHECK(c == 1);
  }

  CHECK_THROWS_AS(build_epoch(1, rng), Error);
}

TEST_CASE("sgd_step arithmetic, determinism, non-finite guard") {
  NetConfig cfg;
  cfg.parts = 1;
  cfg.conv_channels = {1, 1, 1};
  cfg.kernel = 1;
  cfg.padding = 0;
  cfg.pool_window = 1;
  cfg.pool_stride = 1;
  cfg.spp_bins = {1};
  cfg.embed_dim = 1;
  cfg.classes = 2;
  ModelParams params = init_params<float>(cfg, 7);
  ModelParams grads = zeros_like_params(params);

  const auto before = stfmm::testing::param_arrays(params);
  CHECK(sgd_step(params, grads, 0.1f));
  CHECK(stfmm::testing::param_arrays(params) == before);

  params.cls_bias.data[0] = 1.0f;
  grads.cls_bias.data[0] = 0.5f;
  CHECK(sgd_step(params, grads, 0.1f));
  CHECK(params.cls_bias.data[0] == doctest::Approx(0.95f));

  // two identical steps from identical state agree bitwise
  ModelParams p1 = init_params<float>(cfg, 9);
  ModelParams p2 = init_params<float>(cfg, 9);
  CHECK(sgd_step(p1, grads, 0.01f));
  CHECK(sgd_step(p2, grads, 0.01f));
  CHECK(p1.cls_bias.data == p2.cls_bias.data);
  CHECK(p1.cls_weight.data == p2.cls_weight.data);

  // non-finite gradient: step refused, parameters untouched
  grads.cls_weight.data[0] = std::numeric_limits<float>::quiet_NaN();
  const float prev = params.cls_bias.data[0];
  CHECK(!sgd_step(params, grads, 0.1f));
  CHECK(params.cls_bias.data[0] == prev);
}

TEST_CASE("train_run: 2 identities, 1 epoch, exactly 4 updates") {
  Fixture fx;
  const auto dir = fresh_dir("train_counts");
  const RunResult run = train_run(fx.data, fx.net, fx.prep, fx.geom,
                                  fx.train_cfg(1), fx.stats, dir);
  CHECK(run.history.size() == 4);
  CHECK(run.epochs_completed == 1);
  CHECK(std::filesystem::exists(run.last_checkpoint));
  CHECK(std::filesystem::exists(dir / "loss_history.csv"));
  CHECK(std::filesystem::exists(dir / "manifest.txt"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("loss on a fixed positive pair decreases over 50 steps") {
  Fixture fx;
  Pcg32 rng(11);
  const PartSet probe = split_parts(
      augment_sequence(
          sample_subsequence(fx.data.identities[0].cameras[0], 4, rng), rng,
          false, fx.prep),
      fx.geom);
  const PartSet gallery = split_parts(
      augment_sequence(
          sample_subsequence(fx.data.identities[0].cameras[1], 4, rng), rng,
          false, fx.prep),
      fx.geom);

  ModelParams params = init_params<float>(fx.net, 13);
  ModelParams grads = zeros_like_params(params);
  float first = 0, last = 0;
  for (int step = 0; step < 50; ++step) {
    grads.for_each([](const std::string&, Tensor& t) { t.fill(0.0f); });
    const auto lb = pair_loss_and_grads(probe.parts, gallery.parts, 0, 0,
                                        params, grads, fx.net, nullptr, 1);
    if (step == 0) first = lb.total;
    last = lb.total;
    REQUIRE(sgd_step(params, grads, 1e-3f));
  }
  CHECK(last < first);
}

TEST_CASE("identical seeds give bitwise-identical checkpoints") {
  Fixture fx;
  const auto dir_a = fresh_dir("repro_a");
  const auto dir_b = fresh_dir("repro_b");
  const RunResult a = train_run(fx.data, fx.net, fx.prep, fx.geom,
                                fx.train_cfg(3), fx.stats, dir_a);
  const RunResult b = train_run(fx.data, fx.net, fx.prep, fx.geom,
                                fx.train_cfg(3), fx.stats, dir_b);
  CHECK(read_file_bytes(a.last_checkpoint) == read_file_bytes(b.last_checkpoint));
  CHECK(read_file_bytes(dir_a / "loss_history.csv") ==
        read_file_bytes(dir_b / "loss_history.csv"));

  const RunResult c = train_run(fx.data, fx.net, fx.prep, fx.geom,
                                fx.train_cfg(3, 777), fx.stats, dir_b);
  CHECK(read_file_bytes(a.last_checkpoint) != read_file_bytes(c.last_checkpoint));
  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
}

TEST_CASE("resume reproduces the uninterrupted loss trajectory") {
  Fixture fx;
  const auto dir_full = fresh_dir("resume_full");
  const auto dir_head = fresh_dir("resume_head");
  const auto dir_tail = fresh_dir("resume_tail");

  const RunResult full = train_run(fx.data, fx.net, fx.prep, fx.geom,
                                   fx.train_cfg(6), fx.stats, dir_full);

  const RunResult head = train_run(fx.data, fx.net, fx.prep, fx.geom,
                                   fx.train_cfg(3), fx.stats, dir_head);
  const LoadedCheckpoint ck = load_checkpoint(head.last_checkpoint);
  CHECK(ck.epoch == 3);
  const RunResult tail = train_run(fx.data, fx.net, fx.prep, fx.geom,
                                   fx.train_cfg(6), fx.stats, dir_tail, &ck);

  // epochs 4..6 of both runs must agree exactly
  std::vector<StepRecord> full_tail;
  for (const auto& r : full.history)
    if (r.epoch >= 4) full_tail.push_back(r);
  REQUIRE(full_tail.size() == tail.history.size());
  for (std::size_t i = 0; i < full_tail.size(); ++i) {
    CHECK(full_tail[i].epoch == tail.history[i].epoch);
    CHECK(full_tail[i].loss == tail.history[i].loss);
    CHECK(full_tail[i].identity_loss == tail.history[i].identity_loss);
    CHECK(full_tail[i].siamese_loss == tail.history[i].siamese_loss);
  }
  CHECK(read_file_bytes(full.last_checkpoint) ==
        read_file_bytes(tail.last_checkpoint));

  // resuming under a different geometry is rejected
  NetConfig other = fx.net;
  other.parts = 1;
  const SplitGeometry geom1 = split_geometry(fx.prep.frame_height, 1, 0);
  CHECK_THROWS_AS(train_run(fx.data, other, fx.prep, geom1, fx.train_cfg(6),
                            fx.stats, dir_tail, &ck),
                  Error);

  std::filesystem::remove_all(dir_full);
  std::filesystem::remove_all(dir_head);
  std::filesystem::remove_all(dir_tail);
}

TEST_CASE("parameters stay finite through a 50-epoch toy run") {
  Fixture fx(3, 5);
  fx.net.classes = 3;
  const auto dir = fresh_dir("divergence_guard");
  TrainConfig tc = fx.train_cfg(50);
  tc.checkpoint_interval = 25;
  bool always_finite = true;
  const RunResult run =
      train_run(fx.data, fx.net, fx.prep, fx.geom, tc, fx.stats, dir, nullptr,
                [&](int, const ModelParams& p) {
                  if (!p.all_finite()) always_finite = false;
                  return true;
                });
  CHECK(always_finite);
  CHECK(run.params.all_finite());
  CHECK(run.epochs_completed == 50);
  CHECK(run.skipped_steps == 0);
  for (const auto& r : run.history) CHECK(std::isfinite(r.loss));
  std::filesystem::remove_all(dir);
}

TEST_CASE("epoch descriptor list drives per-epoch update counts") {
  Fixture fx(5, 4);
  fx.net.classes = 5;
  const auto dir = fresh_dir("epoch_size");
  const RunResult run = train_run(fx.data, fx.net, fx.prep, fx.geom,
                                  fx.train_cfg(2), fx.stats, dir);
  CHECK(run.history.size() == 2u * 2u * 5u);  // 2P per epoch, 2 epochs
  std::filesystem::remove_all(dir);
}

TEST_CASE("fully shared streams train and stay finite") {
  Fixture fx;
  fx.net.fully_shared = true;
  const auto dir = fresh_dir("shared_mode");
  const RunResult run = train_run(fx.data, fx.net, fx.prep, fx.geom,
                                  fx.train_cfg(3), fx.stats, dir);
  CHECK(run.params.streams.size() == 1);
  CHECK(run.params.all_finite());
  CHECK(run.history.size() == 12);
  std::filesystem::remove_all(dir);
}

TEST_CASE("weight decay and clip knobs stay inert at zero") {
  Fixture fx;
  const auto dir_a = fresh_dir("knobs_a");
  const auto dir_b = fresh_dir("knobs_b");
  TrainConfig tc = fx.train_cfg(1);

  NetConfig with_knobs = fx.net;
  with_knobs.weight_decay = 0.0f;
  TrainConfig tc_clip = tc;
  tc_clip.clip_norm = 0.0f;
  const RunResult a =
      train_run(fx.data, fx.net, fx.prep, fx.geom, tc, fx.stats, dir_a);
  const RunResult b = train_run(fx.data, with_knobs, fx.prep, fx.geom, tc_clip,
                                fx.stats, dir_b);
  CHECK(read_file_bytes(a.last_checkpoint) == read_file_bytes(b.last_checkpoint));

  // and active knobs change the trajectory
  NetConfig wd = fx.net;
  wd.weight_decay = 0.1f;
  std::filesystem::remove_all(dir_b);
  const RunResult c =
      train_run(fx.data, wd, fx.prep, fx.geom, tc, fx.stats, dir_b);
  CHECK(read_file_bytes(a.last_checkpoint) != read_file_bytes(c.last_checkpoint));

  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
}

}  // TEST_SUITE
