#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "stfmm/evaluator.hpp"
#include "stfmm/rng.hpp"
#include "stfmm/tensor.hpp"
#include "stfmm/videoprep.hpp"

namespace stfmm::testing {

inline Tensor rand_tensor(std::vector<int> shape, Pcg32& rng,
                          float scale = 1.0f) {
  Tensor t(std::move(shape));
  for (auto& v : t.data)
    v = static_cast<float>(rng.uniform(-scale, scale));
  return t;
}

inline TensorD rand_tensor_d(std::vector<int> shape, Pcg32& rng,
                             double scale = 1.0) {
  TensorD t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(-scale, scale);
  return t;
}

// Brute-force CMC oracle, independent of the library implementation: sort
// each probe's gallery by (distance, index), then check every rank
// threshold with its own scan over the sorted prefix.
inline CmcCurve cmc_oracle(const DistanceMatrix& dist,
                           const std::vector<std::string>& probe_ids,
                           const std::vector<std::string>& gallery_ids) {
  CmcCurve curve;
  curve.rates.assign(static_cast<std::size_t>(dist.gallery), 0.0);
  for (int r = 1; r <= dist.gallery; ++r) {
    int hits = 0;
    for (int i = 0; i < dist.probes; ++i) {
      std::vector<int> order(static_cast<std::size_t>(dist.gallery));
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (dist.at(i, a) != dist.at(i, b))
          return dist.at(i, a) < dist.at(i, b);
        return a < b;
      });
      bool found = false;
      for (int k = 0; k < r; ++k)
        if (gallery_ids[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] ==
            probe_ids[static_cast<std::size_t>(i)])
          found = true;
      if (found) ++hits;
    }
    curve.rates[static_cast<std::size_t>(r - 1)] =
        static_cast<double>(hits) / static_cast<double>(dist.probes);
  }
  return curve;
}

// Random distance matrix with a permuted identity assignment.
inline void random_cmc_instance(Pcg32& rng, int max_side, DistanceMatrix& dist,
                                std::vector<std::string>& probe_ids,
                                std::vector<std::string>& gallery_ids) {
  const int n = 1 + static_cast<int>(rng.bounded(
                        static_cast<std::uint32_t>(max_side)));
  probe_ids.clear();
  gallery_ids.clear();
  for (int i = 0; i < n; ++i) probe_ids.push_back("p" + std::to_string(i));
  gallery_ids = probe_ids;
  shuffle(gallery_ids, rng);
  dist.probes = n;
  dist.gallery = n;
  dist.d.resize(static_cast<std::size_t>(n) * n);
  for (auto& v : dist.d) v = rng.uniform();
}

// Snapshot of every named parameter array, for whole-model comparisons.
template <class Params>
std::vector<std::pair<std::string, std::vector<float>>> param_arrays(
    const Params& params) {
  std::vector<std::pair<std::string, std::vector<float>>> out;
  params.for_each([&out](const std::string& name, const Tensor& t) {
    out.emplace_back(name, t.data);
  });
  return out;
}

inline std::string read_file_bytes(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is),
                     std::istreambuf_iterator<char>());
}

// Padded random 5-channel sequences for trainer-level tests that bypass
// the image pipeline.
inline VideoSequence make_padded_sequence(const std::string& id, int camera,
                                          int frames, const PrepConfig& prep,
                                          Pcg32& rng) {
  VideoSequence seq;
  seq.person_id = id;
  seq.camera_id = camera;
  const int h = prep.frame_height + 2 * prep.crop_margin;
  const int w = prep.frame_width + 2 * prep.crop_margin;
  for (int t = 0; t < frames; ++t)
    seq.frames.push_back(rand_tensor({5, h, w}, rng));
  return seq;
}

inline std::filesystem::path fresh_dir(const std::string& tag) {
  const auto dir =
      std::filesystem::temp_directory_path() /
      ("stfmm_test_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace stfmm::testing
