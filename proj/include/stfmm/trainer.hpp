#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "stfmm/data_io.hpp"
#include "stfmm/net.hpp"
#include "stfmm/videoprep.hpp"

// The training protocol: random k-frame sub-sequences, alternating
// positive/negative pair epochs, plain SGD with batch size one, and
// deterministic checkpoint/resume.
namespace stfmm {

struct TrainConfig {
  int subseq_len = 16;  // k
  float learning_rate = 1e-3f;
  int epochs = 700;
  std::uint64_t seed = 1;
  int checkpoint_interval = 50;
  float clip_norm = 0.0f;  // 0 disables clipping
  int threads = 0;         // 0 = hardware concurrency

  void validate() const {
    require(subseq_len >= 1, "train: k must be >= 1");
    require(learning_rate > 0.0f, "train: learning rate must be positive");
    require(epochs >= 1, "train: epochs must be >= 1");
    require(checkpoint_interval >= 1, "train: checkpoint interval must be >= 1");
  }
};

// Preprocessed material (padded nominal size) for one training identity.
struct TrainIdentity {
  std::string id;
  std::array<VideoSequence, 2> cameras;  // [0] camera 1, [1] camera 2
};

struct TrainDataset {
  std::vector<TrainIdentity> identities;  // class index = position
};

// One pair of an epoch's descriptor list. Probe is always camera 1,
// gallery camera 2.
struct PairDescriptor {
  int probe_identity = 0;
  int gallery_identity = 0;
  bool same = false;
};

// Uniform random start when T >= k; cyclic tiling from frame 0 when T < k.
VideoSequence sample_subsequence(const VideoSequence& seq, int k, Pcg32& rng);

// P positives (a random permutation of the identities) interleaved with P
// negatives (uniform partner B != A), strictly alternating +,-,+,-, ...
std::vector<PairDescriptor> build_epoch(int identity_count, Pcg32& rng);

// w <- w - lr * g for every array; no momentum, no decay. Returns false
// (and applies nothing) when any gradient entry is non-finite.
bool sgd_step(ModelParams& params, const ModelParams& grads, float lr);

struct StepRecord {
  int epoch = 0;
  int step = 0;
  float loss = 0;
  float identity_loss = 0;
  float siamese_loss = 0;
};

struct RunResult {
  ModelParams params;
  std::vector<StepRecord> history;
  std::filesystem::path last_checkpoint;
  int epochs_completed = 0;
  int skipped_steps = 0;
};

// Called after each epoch; return false to stop early (the checkpoint and
// manifest still reflect the last finished epoch).
using EpochCallback = std::function<bool(int epoch, const ModelParams& params)>;

// Runs the full protocol into run_dir (manifest, loss_history.csv,
// checkpoints/). `resume` continues a previous run from its checkpoint:
// parameters, epoch counter and generator state are restored, so the loss
// trajectory matches an uninterrupted run exactly.
RunResult train_run(const TrainDataset& data, const NetConfig& net,
                    const PrepConfig& prep, const SplitGeometry& geom,
                    const TrainConfig& tc, const ChannelStats& stats,
                    const std::filesystem::path& run_dir,
                    const LoadedCheckpoint* resume = nullptr,
                    const EpochCallback& callback = nullptr);

}  // namespace stfmm
