#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stfmm/image.hpp"
#include "stfmm/net.hpp"
#include "stfmm/tensor.hpp"
#include "stfmm/videoprep.hpp"

// Dataset ingestion, split generation, the synthetic toy dataset, and the
// array-container format shared by checkpoints and the preprocessed cache.
namespace stfmm {

enum class DatasetLayout { generic, ilids, prid };

DatasetLayout parse_layout(const std::string& name);
std::string layout_name(DatasetLayout layout);

struct DatasetIndex {
  struct Person {
    std::string id;
    // cameras[0] = camera 1 frames, cameras[1] = camera 2 frames; sorted.
    std::array<std::vector<std::filesystem::path>, 2> cameras;
  };
  std::string root;
  std::vector<Person> persons;  // sorted by id

  const Person* find(const std::string& id) const;
};

// Discovers identities present under both cameras (others are dropped with
// a warning). The prid layout keeps only the first 200 eligible identities
// in lexicographic order.
DatasetIndex scan_dataset(const std::filesystem::path& root,
                          DatasetLayout layout);

RawSequence load_raw_sequence(const DatasetIndex::Person& person, int camera);

struct SplitFile {
  std::uint64_t seed = 0;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
};

// `count` independent half/half partitions of the eligible identities.
std::vector<SplitFile> make_splits(const DatasetIndex& index, int count,
                                   std::uint64_t seed);

void save_split(const SplitFile& split, const std::filesystem::path& path);
SplitFile load_split(const std::filesystem::path& path);

// Disjointness, coverage of the eligible set, and near-even sizes.
void validate_split(const SplitFile& split, const DatasetIndex& index);

// Deterministic toy dataset in the generic layout: per identity a distinct
// colored, striped rectangle oscillating vertically (genuine motion for the
// optical flow), rendered over two camera backgrounds.
void synth_generate(const std::filesystem::path& root, int identities,
                    int frames_per_camera, int height, int width,
                    std::uint64_t seed);

// ---- array container: text header + named little-endian f32 payload ----

struct ArrayFile {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<std::pair<std::string, Tensor>> arrays;

  void set_meta(const std::string& key, const std::string& value);
  const std::string* find_meta(const std::string& key) const;
  std::string meta_or_fail(const std::string& key) const;
  const Tensor* find_array(const std::string& name) const;

  // Atomic: written to a temporary file, then renamed into place.
  void save(const std::filesystem::path& path) const;
  // Validates the declared payload length and checksum before returning.
  static ArrayFile load(const std::filesystem::path& path);
};

// ---- checkpoints ----

std::uint64_t run_config_hash(const NetConfig& net, const PrepConfig& prep,
                              const SplitGeometry& geom);

void save_checkpoint(const std::filesystem::path& path,
                     const ModelParams& params, const NetConfig& net,
                     const PrepConfig& prep, const SplitGeometry& geom,
                     const ChannelStats& stats, int epoch, const Pcg32& rng);

struct LoadedCheckpoint {
  ModelParams params;
  NetConfig net;
  PrepConfig prep;
  SplitGeometry geometry;
  ChannelStats stats;
  int epoch = 0;
  std::uint64_t rng_state = 0;
  std::uint64_t rng_inc = 0;
  std::uint64_t config_hash = 0;
};

// With `expected_hash` set, a stored hash that differs is rejected (e.g. a
// checkpoint trained with different part geometry).
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path,
                                 std::optional<std::uint64_t> expected_hash =
                                     std::nullopt);

// ---- preprocessed-sequence cache (one container per person/camera) ----

void save_sequence_cache(const std::filesystem::path& path,
                         const VideoSequence& seq, const ChannelStats& stats);

VideoSequence load_sequence_cache(const std::filesystem::path& path,
                                  const ChannelStats& expected_stats);

// ---- channel statistics persistence ----

void save_stats(const std::filesystem::path& path, const ChannelStats& stats);
ChannelStats load_stats(const std::filesystem::path& path);

}  // namespace stfmm
