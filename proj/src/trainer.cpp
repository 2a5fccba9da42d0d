#include "stfmm/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

namespace stfmm {

namespace fs = std::filesystem;

VideoSequence sample_subsequence(const VideoSequence& seq, int k, Pcg32& rng) {
  require(!seq.frames.empty(), "subsequence: empty sequence");
  require(k >= 1, "subsequence: k must be >= 1");
  const int t_count = static_cast<int>(seq.frames.size());

  VideoSequence out;
  out.person_id = seq.person_id;
  out.camera_id = seq.camera_id;
  out.frames.reserve(static_cast<std::size_t>(k));
  if (t_count >= k) {
    int start = 0;
    if (t_count > k)
      start = static_cast<int>(
          rng.bounded(static_cast<std::uint32_t>(t_count - k + 1)));
    for (int t = 0; t < k; ++t)
      out.frames.push_back(seq.frames[static_cast<std::size_t>(start + t)]);
  } else {
    // shorter sequences are tiled cyclically, preserving temporal order
    for (int t = 0; t < k; ++t)
      out.frames.push_back(seq.frames[static_cast<std::size_t>(t % t_count)]);
  }
  return out;
}

std::vector<PairDescriptor> build_epoch(int identity_count, Pcg32& rng) {
  require(identity_count >= 2, "epoch: need at least two identities");
  std::vector<int> order(static_cast<std::size_t>(identity_count));
  for (int i = 0; i < identity_count; ++i)
    order[static_cast<std::size_t>(i)] = i;
  shuffle(order, rng);

  std::vector<PairDescriptor> descriptors;
  descriptors.reserve(2 * order.size());
  for (int a : order) {
    descriptors.push_back({a, a, true});
    const int pick = static_cast<int>(
        rng.bounded(static_cast<std::uint32_t>(identity_count - 1)));
    const int b = pick >= a ? pick + 1 : pick;
    descriptors.push_back({a, b, false});
  }
  return descriptors;
}

bool sgd_step(ModelParams& params, const ModelParams& grads, float lr) {
  bool finite = true;
  const_cast<ModelParams&>(grads).for_each(
      [&finite](const std::string&, Tensor& g) {
        if (!g.all_finite()) finite = false;
      });
  if (!finite) return false;

  for (std::size_t s = 0; s < params.streams.size(); ++s) {
    StreamParamsT<float>& p = params.streams[s];
    const StreamParamsT<float>& g = grads.streams[s];
    for (std::size_t l = 0; l < 3; ++l) {
      for (std::size_t i = 0; i < p.conv_kernel[l].numel(); ++i)
        p.conv_kernel[l].data[i] -= lr * g.conv_kernel[l].data[i];
      for (std::size_t i = 0; i < p.conv_bias[l].numel(); ++i)
        p.conv_bias[l].data[i] -= lr * g.conv_bias[l].data[i];
    }
    for (std::size_t i = 0; i < p.rnn_input.numel(); ++i)
      p.rnn_input.data[i] -= lr * g.rnn_input.data[i];
    for (std::size_t i = 0; i < p.rnn_recur.numel(); ++i)
      p.rnn_recur.data[i] -= lr * g.rnn_recur.data[i];
  }
  for (std::size_t i = 0; i < params.cls_weight.numel(); ++i)
    params.cls_weight.data[i] -= lr * grads.cls_weight.data[i];
  for (std::size_t i = 0; i < params.cls_bias.numel(); ++i)
    params.cls_bias.data[i] -= lr * grads.cls_bias.data[i];
  return true;
}

namespace {

void zero_params(ModelParams& p) {
  p.for_each([](const std::string&, Tensor& t) { t.fill(0.0f); });
}

void apply_weight_decay(ModelParams& grads, const ModelParams& params,
                        float wd) {
  if (wd <= 0.0f) return;
  auto git = grads.streams.begin();
  for (std::size_t s = 0; s < grads.streams.size(); ++s, ++git) {
    const StreamParamsT<float>& p = params.streams[s];
    for (std::size_t l = 0; l < 3; ++l)
      for (std::size_t i = 0; i < git->conv_kernel[l].numel(); ++i)
        git->conv_kernel[l].data[i] += wd * p.conv_kernel[l].data[i];
    for (std::size_t i = 0; i < git->rnn_input.numel(); ++i)
      git->rnn_input.data[i] += wd * p.rnn_input.data[i];
    for (std::size_t i = 0; i < git->rnn_recur.numel(); ++i)
      git->rnn_recur.data[i] += wd * p.rnn_recur.data[i];
  }
  for (std::size_t i = 0; i < grads.cls_weight.numel(); ++i)
    grads.cls_weight.data[i] += wd * params.cls_weight.data[i];
}

void clip_gradients(ModelParams& grads, float max_norm) {
  if (max_norm <= 0.0f) return;
  double sq = 0.0;
  grads.for_each([&sq](const std::string&, Tensor& g) {
    for (float v : g.data) sq += static_cast<double>(v) * v;
  });
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const float scale = static_cast<float>(max_norm / norm);
  grads.for_each([scale](const std::string&, Tensor& g) {
    for (float& v : g.data) v *= scale;
  });
}

void write_manifest(const fs::path& run_dir, const NetConfig& net,
                    const PrepConfig& prep, const SplitGeometry& geom,
                    const TrainConfig& tc, const ChannelStats& stats,
                    int epochs_completed, int skipped_steps,
                    const fs::path& last_checkpoint, int identity_count) {
  std::ofstream os(run_dir / "manifest.txt");
  require(os.good(), "train: cannot write manifest");
  char hash[32];
  std::snprintf(hash, sizeof(hash), "%016llx",
                static_cast<unsigned long long>(
                    run_config_hash(net, prep, geom)));
  os << "run.kind = train\n"
     << "rng.algorithm = " << Pcg32::kAlgorithm << "\n"
     << "train.seed = " << tc.seed << "\n"
     << "train.k = " << tc.subseq_len << "\n"
     << "train.learning_rate = " << tc.learning_rate << "\n"
     << "train.epochs_requested = " << tc.epochs << "\n"
     << "train.epochs_completed = " << epochs_completed << "\n"
     << "train.checkpoint_interval = " << tc.checkpoint_interval << "\n"
     << "train.clip_norm = " << tc.clip_norm << "\n"
     << "train.skipped_steps = " << skipped_steps << "\n"
     << "data.identities = " << identity_count << "\n"
     << "config.hash = " << hash << "\n"
     << "net = " << net.describe() << "\n"
     << "prep = " << prep.describe() << "\n"
     << "geom.parts = " << geom.parts << "\n"
     << "geom.overlap = " << geom.overlap << "\n"
     << "geom.part_height = " << geom.part_height << "\n"
     << "stats.checksum = " << std::hex << stats.checksum() << std::dec << "\n"
     << "loss.file = loss_history.csv\n"
     << "checkpoint.latest = " << last_checkpoint.filename().string() << "\n";
}

}  // namespace

RunResult train_run(const TrainDataset& data, const NetConfig& net,
                    const PrepConfig& prep, const SplitGeometry& geom,
                    const TrainConfig& tc, const ChannelStats& stats,
                    const fs::path& run_dir, const LoadedCheckpoint* resume,
                    const EpochCallback& callback) {
  tc.validate();
  const int n_ids = static_cast<int>(data.identities.size());
  require(n_ids >= 2, "train: need at least two identities");
  require(net.classes == n_ids,
          "train: classifier size " + std::to_string(net.classes) +
              " does not match identity count " + std::to_string(n_ids));
  net.validate(geom.part_height, prep.frame_width);
  for (const TrainIdentity& ident : data.identities)
    for (const VideoSequence& seq : ident.cameras)
      require(!seq.frames.empty(),
              "train: identity " + ident.id + " lacks a camera sequence");

  fs::create_directories(run_dir / "checkpoints");

  RunResult run;
  Pcg32 rng(tc.seed);
  int start_epoch = 0;
  if (resume) {
    require(resume->config_hash == run_config_hash(net, prep, geom),
            "train: resume checkpoint was built under a different "
            "configuration");
    run.params = resume->params;
    rng.restore_state(resume->rng_state, resume->rng_inc);
    start_epoch = resume->epoch;
  } else {
    run.params = init_params<float>(net, tc.seed);
  }

  const fs::path loss_path = run_dir / "loss_history.csv";
  const bool fresh_csv = !fs::exists(loss_path);
  std::ofstream loss_csv(loss_path, std::ios::app);
  require(loss_csv.good(), "train: cannot write " + loss_path.string());
  if (fresh_csv) loss_csv << "epoch,step,loss,identity_loss,siamese_loss\n";

  ModelParams grads = zeros_like_params(run.params);
  fs::path last_checkpoint;

  auto save_epoch_checkpoint = [&](int epoch) {
    char name[32];
    std::snprintf(name, sizeof(name), "epoch_%06d.ckpt", epoch);
    last_checkpoint = run_dir / "checkpoints" / name;
    save_checkpoint(last_checkpoint, run.params, net, prep, geom, stats, epoch,
                    rng);
    write_manifest(run_dir, net, prep, geom, tc, stats, epoch,
                   run.skipped_steps, last_checkpoint, n_ids);
  };

  run.epochs_completed = start_epoch;
  for (int epoch = start_epoch + 1; epoch <= tc.epochs; ++epoch) {
    const std::vector<PairDescriptor> descriptors = build_epoch(n_ids, rng);
    int step = 0;
    for (const PairDescriptor& d : descriptors) {
      ++step;
      const TrainIdentity& probe_id =
          data.identities[static_cast<std::size_t>(d.probe_identity)];
      const TrainIdentity& gallery_id =
          data.identities[static_cast<std::size_t>(d.gallery_identity)];

      const VideoSequence probe_sub =
          sample_subsequence(probe_id.cameras[0], tc.subseq_len, rng);
      const VideoSequence gallery_sub =
          sample_subsequence(gallery_id.cameras[1], tc.subseq_len, rng);
      const VideoSequence probe_aug =
          augment_sequence(probe_sub, rng, true, prep);
      const VideoSequence gallery_aug =
          augment_sequence(gallery_sub, rng, true, prep);
      const PartSet probe_parts = split_parts(probe_aug, geom);
      const PartSet gallery_parts = split_parts(gallery_aug, geom);

      zero_params(grads);
      const LossBreakdown<float> lb = pair_loss_and_grads(
          probe_parts.parts, gallery_parts.parts, d.probe_identity,
          d.gallery_identity, run.params, grads, net,
          net.dropout > 0.0f ? &rng : nullptr, tc.threads);

      apply_weight_decay(grads, run.params, net.weight_decay);
      clip_gradients(grads, tc.clip_norm);
      if (!sgd_step(run.params, grads, tc.learning_rate)) {
        ++run.skipped_steps;
        std::cerr << "warning: non-finite gradient at epoch " << epoch
                  << " step " << step << ", update skipped\n";
      }

      StepRecord rec{epoch, step, lb.total,
                     lb.identity_probe + lb.identity_gallery, lb.siamese};
      run.history.push_back(rec);
      char row[128];
      std::snprintf(row, sizeof(row), "%d,%d,%.9g,%.9g,%.9g\n", rec.epoch,
                    rec.step, static_cast<double>(rec.loss),
                    static_cast<double>(rec.identity_loss),
                    static_cast<double>(rec.siamese_loss));
      loss_csv << row;
    }
    loss_csv.flush();

    if (epoch % tc.checkpoint_interval == 0 || epoch == tc.epochs)
      save_epoch_checkpoint(epoch);

    run.epochs_completed = epoch;
    if (callback && !callback(epoch, run.params)) break;
  }

  if (last_checkpoint.empty() ||
      run.epochs_completed % tc.checkpoint_interval != 0)
    save_epoch_checkpoint(run.epochs_completed);

  run.last_checkpoint = last_checkpoint;
  return run;
}

}  // namespace stfmm
