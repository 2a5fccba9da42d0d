#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "stfmm/image.hpp"
#include "stfmm/rng.hpp"
#include "stfmm/tensor.hpp"

// Converts raw frame sequences into the network's 5-channel part sequences:
// YUV conversion, dataset normalization, dense Lucas-Kanade optical flow,
// mirror/crop augmentation, and the overlapping horizontal split.
namespace stfmm {

struct PrepConfig {
  int frame_height = 128;  // nominal size after cropping
  int frame_width = 64;
  int crop_margin = 4;     // replicate padding per side before crop draws
  int flow_window = 5;     // structure-tensor window (odd)
  double flow_tau = 1e-4;  // smaller-eigenvalue threshold on [0,1] intensities
  double flow_dmax = 8.0;  // clip displacement, then divide so flow is [-1,1]

  std::string describe() const;
};

// Per-channel Y,U,V statistics over a training split. Zero-variance
// channels are clamped to stddev 1.
struct ChannelStats {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> stddev{1.0, 1.0, 1.0};

  std::string canonical() const;
  std::uint64_t checksum() const;
};

// Streaming population-statistics accumulator over YUV frames.
class StatsAccumulator {
 public:
  void add(const Tensor& yuv);  // 3 x h x w
  ChannelStats finalize() const;

 private:
  std::array<double, 3> sum_{0.0, 0.0, 0.0};
  std::array<double, 3> sum_sq_{0.0, 0.0, 0.0};
  std::size_t count_ = 0;
};

// Frames of 5-channel (Y,U,V,flow-x,flow-y) data for one person/camera.
struct VideoSequence {
  std::vector<Tensor> frames;  // each 5 x h x w
  std::string person_id;
  int camera_id = 1;
};

// The overlapping horizontal split: part height h = floor((H+(N-1)p)/N),
// interior parts at n*(h-p), last part anchored to the bottom edge.
struct SplitGeometry {
  int parts = 1;
  int overlap = 0;
  int frame_height = 0;
  int part_height = 0;
  std::vector<int> starts;
};

struct PartSet {
  std::vector<std::vector<Tensor>> parts;  // parts[n][t], each 5 x h x w
  SplitGeometry geometry;
};

// BT.601 on [0,1]-scaled intensities:
// Y = 0.299R + 0.587G + 0.114B, U = 0.492(B-Y), V = 0.877(R-Y).
Tensor rgb_to_yuv(const ImageU8& frame);

ChannelStats compute_dataset_stats(const std::vector<const RawSequence*>& train);

// (x - mean)/stddev on the color channels; flow channels untouched.
void normalize_channels(VideoSequence& seq, const ChannelStats& stats);

// Dense flow from the 2x2 structure-tensor system over a flow_window
// square (central-difference gradients, replicate borders). Pixels whose
// smaller eigenvalue is below flow_tau get zero flow; displacements are
// clipped to +/-flow_dmax and divided by it. Inputs are rank-2 Y channels.
Tensor lucas_kanade_flow(const Tensor& y_t, const Tensor& y_next,
                         const PrepConfig& cfg);

// Edge-replicate padding of a 5-channel frame by cfg.crop_margin per side.
Tensor pad_replicate(const Tensor& frame, int margin);

// Full raw -> padded 5-channel pipeline. Flow for frame t uses (t, t+1);
// the last frame reuses its predecessor's flow (zero when T == 1).
VideoSequence prepare_sequence(const RawSequence& raw, const ChannelStats& stats,
                               const PrepConfig& cfg);

// Train mode: one coin for a horizontal mirror (flow-x negated) and one
// crop offset in [0, 2*margin]^2, applied to every frame. Test mode is the
// deterministic center crop. Input frames are at padded nominal size.
VideoSequence augment_sequence(const VideoSequence& seq, Pcg32& rng, bool train,
                               const PrepConfig& cfg);

SplitGeometry split_geometry(int frame_height, int parts, int overlap);

PartSet split_parts(const VideoSequence& seq, const SplitGeometry& geom);

}  // namespace stfmm
