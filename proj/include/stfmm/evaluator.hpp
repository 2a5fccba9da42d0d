#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "stfmm/data_io.hpp"
#include "stfmm/net.hpp"
#include "stfmm/videoprep.hpp"

// Feature extraction over test sets, squared-Euclidean ranking, CMC
// computation (multi-split averaging), and report emission.
namespace stfmm {

struct FeatureEntry {
  std::string person_id;
  int camera_id = 1;
  Tensor feature;  // N*d
};

struct FeatureGallery {
  std::vector<FeatureEntry> entries;
};

// Test-mode preprocessing (deterministic center crop), prefix truncation to
// max_test_len frames, part split, forward pass. One vector per sequence.
FeatureGallery extract_features(const std::vector<const VideoSequence*>& seqs,
                                const ModelParams& params, const NetConfig& net,
                                const PrepConfig& prep,
                                const SplitGeometry& geom, int max_test_len,
                                int threads = 0);

struct DistanceMatrix {
  int probes = 0;
  int gallery = 0;
  std::vector<double> d;  // row-major probes x gallery

  double at(int i, int j) const {
    return d[static_cast<std::size_t>(i) * gallery + j];
  }
};

// Squared Euclidean distances.
DistanceMatrix distance_matrix(const FeatureGallery& probe,
                               const FeatureGallery& gallery);

struct CmcCurve {
  std::vector<double> rates;  // rates[r-1] = CMC(r), nondecreasing

  double at_rank(int r) const {  // clamped to the gallery size
    if (rates.empty()) return 0.0;
    const int idx = std::min<int>(r, static_cast<int>(rates.size())) - 1;
    return rates[static_cast<std::size_t>(idx)];
  }
};

// For each probe the gallery is sorted by ascending distance (ties broken
// by gallery index); CMC(r) is the fraction of probes whose true match
// ranks <= r. Every probe identity must appear exactly once in the gallery.
CmcCurve cmc_curve(const DistanceMatrix& dist,
                   const std::vector<std::string>& probe_ids,
                   const std::vector<std::string>& gallery_ids);

// Arithmetic mean at every rank; curves must share one gallery size.
CmcCurve average_curves(const std::vector<CmcCurve>& curves);

struct EvalReport {
  CmcCurve averaged;
  std::vector<CmcCurve> per_split;
  std::vector<int> ranks;
  std::string table_text;  // the plain-text table also written to disk
};

struct EvalRequest {
  std::filesystem::path checkpoint;
  DatasetIndex dataset;
  std::vector<SplitFile> splits;
  bool use_train_side = false;  // evaluate the TRAIN identity list instead
  std::vector<int> ranks{1, 5, 10, 20};
  int max_test_len = 128;
  int threads = 0;
  std::filesystem::path out_dir;  // reports are written here
};

// Loads the checkpoint (its geometry, preprocessing constants and channel
// statistics travel with it, so cross-dataset runs reuse them unchanged),
// extracts camera-1 probes vs camera-2 gallery per split, and writes
// cmc_table.txt plus per-split and averaged curve CSVs.
EvalReport evaluate_run(const EvalRequest& request);

}  // namespace stfmm
