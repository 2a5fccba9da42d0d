#include "stfmm/videoprep.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace stfmm {

std::string PrepConfig::describe() const {
  std::ostringstream os;
  os << "frame=" << frame_height << "x" << frame_width
     << ";crop_margin=" << crop_margin << ";flow_window=" << flow_window
     << ";flow_tau=" << flow_tau << ";flow_dmax=" << flow_dmax;
  return os.str();
}

std::string ChannelStats::canonical() const {
  std::ostringstream os;
  os.precision(17);
  for (int c = 0; c < 3; ++c)
    os << "c" << c << ":" << mean[static_cast<std::size_t>(c)] << "/"
       << stddev[static_cast<std::size_t>(c)] << ";";
  return os.str();
}

std::uint64_t ChannelStats::checksum() const { return fnv1a64(canonical()); }

Tensor rgb_to_yuv(const ImageU8& frame) {
  require(frame.height > 0 && frame.width > 0, "rgb_to_yuv: empty frame");
  Tensor out({3, frame.height, frame.width});
  for (int y = 0; y < frame.height; ++y)
    for (int x = 0; x < frame.width; ++x) {
      const float r = frame.at(y, x, 0) / 255.0f;
      const float g = frame.at(y, x, 1) / 255.0f;
      const float b = frame.at(y, x, 2) / 255.0f;
      const float luma = 0.299f * r + 0.587f * g + 0.114f * b;
      out.at(0, y, x) = luma;
      out.at(1, y, x) = 0.492f * (b - luma);
      out.at(2, y, x) = 0.877f * (r - luma);
    }
  return out;
}

void StatsAccumulator::add(const Tensor& yuv) {
  require(yuv.rank() == 3 && yuv.dim(0) == 3,
          "stats: expected a 3-channel YUV frame");
  const std::size_t plane =
      static_cast<std::size_t>(yuv.dim(1)) * static_cast<std::size_t>(yuv.dim(2));
  for (int c = 0; c < 3; ++c) {
    const float* p = yuv.ptr() + static_cast<std::size_t>(c) * plane;
    double s = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      s += p[i];
      s2 += static_cast<double>(p[i]) * p[i];
    }
    sum_[static_cast<std::size_t>(c)] += s;
    sum_sq_[static_cast<std::size_t>(c)] += s2;
  }
  count_ += plane;
}

ChannelStats StatsAccumulator::finalize() const {
  require(count_ > 0, "stats: empty training set");
  ChannelStats st;
  const double n = static_cast<double>(count_);
  for (std::size_t c = 0; c < 3; ++c) {
    st.mean[c] = sum_[c] / n;
    const double var = std::max(0.0, sum_sq_[c] / n - st.mean[c] * st.mean[c]);
    const double sd = std::sqrt(var);
    st.stddev[c] = sd > 0.0 ? sd : 1.0;  // zero-variance clamp
  }
  return st;
}

ChannelStats compute_dataset_stats(
    const std::vector<const RawSequence*>& train) {
  require(!train.empty(), "stats: empty training set");
  StatsAccumulator acc;
  for (const RawSequence* seq : train)
    for (const ImageU8& frame : seq->frames) acc.add(rgb_to_yuv(frame));
  return acc.finalize();
}

void normalize_channels(VideoSequence& seq, const ChannelStats& stats) {
  for (Tensor& frame : seq.frames) {
    require(frame.rank() == 3 && frame.dim(0) == 5,
            "normalize: expected 5-channel frames");
    const std::size_t plane = static_cast<std::size_t>(frame.dim(1)) *
                              static_cast<std::size_t>(frame.dim(2));
    for (std::size_t c = 0; c < 3; ++c) {
      float* p = frame.ptr() + c * plane;
      const float m = static_cast<float>(stats.mean[c]);
      const float inv = static_cast<float>(1.0 / stats.stddev[c]);
      for (std::size_t i = 0; i < plane; ++i) p[i] = (p[i] - m) * inv;
    }
  }
}

namespace {

inline int clamp_idx(int i, int n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

}  // namespace

Tensor lucas_kanade_flow(const Tensor& y_t, const Tensor& y_next,
                         const PrepConfig& cfg) {
  require(y_t.rank() == 2 && y_next.rank() == 2, "flow: inputs must be rank 2");
  require(y_t.same_shape(y_next), "flow: frame shape mismatch");
  const int h = y_t.dim(0), w = y_t.dim(1);
  const int half = cfg.flow_window / 2;

  // Central-difference gradients of the first frame, replicate borders.
  std::vector<float> ix(static_cast<std::size_t>(h) * w);
  std::vector<float> iy(ix.size());
  std::vector<float> it(ix.size());
  const float* a = y_t.ptr();
  const float* b = y_next.ptr();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      ix[i] = 0.5f * (a[static_cast<std::size_t>(y) * w + clamp_idx(x + 1, w)] -
                      a[static_cast<std::size_t>(y) * w + clamp_idx(x - 1, w)]);
      iy[i] = 0.5f * (a[static_cast<std::size_t>(clamp_idx(y + 1, h)) * w + x] -
                      a[static_cast<std::size_t>(clamp_idx(y - 1, h)) * w + x]);
      it[i] = b[i] - a[i];
    }

  Tensor flow({2, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double sxx = 0, sxy = 0, syy = 0, sxt = 0, syt = 0;
      for (int dy = -half; dy <= half; ++dy)
        for (int dx = -half; dx <= half; ++dx) {
          const std::size_t i =
              static_cast<std::size_t>(clamp_idx(y + dy, h)) * w +
              clamp_idx(x + dx, w);
          const double gx = ix[i], gy = iy[i], gt = it[i];
          sxx += gx * gx;
          sxy += gx * gy;
          syy += gy * gy;
          sxt += gx * gt;
          syt += gy * gt;
        }
      const double trace = sxx + syy;
      const double disc =
          std::sqrt((sxx - syy) * (sxx - syy) + 4.0 * sxy * sxy);
      const double lambda_min = 0.5 * (trace - disc);
      float u = 0.0f, v = 0.0f;
      if (lambda_min >= cfg.flow_tau) {
        const double det = sxx * syy - sxy * sxy;
        const double du = (-syy * sxt + sxy * syt) / det;
        const double dv = (sxy * sxt - sxx * syt) / det;
        const double cu =
            std::clamp(du, -cfg.flow_dmax, cfg.flow_dmax) / cfg.flow_dmax;
        const double cv =
            std::clamp(dv, -cfg.flow_dmax, cfg.flow_dmax) / cfg.flow_dmax;
        u = static_cast<float>(cu);
        v = static_cast<float>(cv);
      }
      flow.at(0, y, x) = u;
      flow.at(1, y, x) = v;
    }
  return flow;
}

Tensor pad_replicate(const Tensor& frame, int margin) {
  require(frame.rank() == 3, "pad: frame must be rank 3");
  if (margin == 0) return frame;
  const int c = frame.dim(0), h = frame.dim(1), w = frame.dim(2);
  Tensor out({c, h + 2 * margin, w + 2 * margin});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h + 2 * margin; ++y) {
      const int sy = clamp_idx(y - margin, h);
      for (int x = 0; x < w + 2 * margin; ++x)
        out.at(ci, y, x) = frame.at(ci, sy, clamp_idx(x - margin, w));
    }
  return out;
}

VideoSequence prepare_sequence(const RawSequence& raw, const ChannelStats& stats,
                               const PrepConfig& cfg) {
  require(!raw.frames.empty(), "prep: empty raw sequence");
  const int h = cfg.frame_height, w = cfg.frame_width;
  for (const ImageU8& f : raw.frames)
    require(f.height == h && f.width == w,
            "prep: frame size " + std::to_string(f.height) + "x" +
                std::to_string(f.width) + " does not match nominal " +
                std::to_string(h) + "x" + std::to_string(w) +
                " (person " + raw.person_id + ")");

  const std::size_t t_count = raw.frames.size();
  std::vector<Tensor> yuv;
  yuv.reserve(t_count);
  for (const ImageU8& f : raw.frames) yuv.push_back(rgb_to_yuv(f));

  auto luma_plane = [&](std::size_t t) {
    Tensor y({h, w});
    std::copy(yuv[t].ptr(), yuv[t].ptr() + static_cast<std::size_t>(h) * w,
              y.ptr());
    return y;
  };

  VideoSequence seq;
  seq.person_id = raw.person_id;
  seq.camera_id = raw.camera_id;
  seq.frames.reserve(t_count);

  Tensor prev_flow;
  for (std::size_t t = 0; t < t_count; ++t) {
    Tensor flow;
    if (t + 1 < t_count) {
      flow = lucas_kanade_flow(luma_plane(t), luma_plane(t + 1), cfg);
      prev_flow = flow;
    } else if (t_count > 1) {
      flow = prev_flow;  // last frame reuses its predecessor's flow
    } else {
      flow = Tensor({2, h, w});
    }

    Tensor frame({5, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    std::copy(yuv[t].ptr(), yuv[t].ptr() + 3 * plane, frame.ptr());
    std::copy(flow.ptr(), flow.ptr() + 2 * plane, frame.ptr() + 3 * plane);
    seq.frames.push_back(std::move(frame));
  }

  normalize_channels(seq, stats);
  for (Tensor& frame : seq.frames) frame = pad_replicate(frame, cfg.crop_margin);
  return seq;
}

VideoSequence augment_sequence(const VideoSequence& seq, Pcg32& rng, bool train,
                               const PrepConfig& cfg) {
  require(!seq.frames.empty(), "augment: empty sequence");
  const int margin = cfg.crop_margin;
  const int h = cfg.frame_height, w = cfg.frame_width;
  const int hp = h + 2 * margin, wp = w + 2 * margin;
  for (const Tensor& f : seq.frames)
    require(f.rank() == 3 && f.dim(0) == 5 && f.dim(1) == hp && f.dim(2) == wp,
            "augment: frames must be at padded nominal size");

  // Fixed draw order (mirror coin, row offset, column offset) so training
  // runs replay exactly from the recorded seed.
  bool mirror = false;
  int dy = margin, dx = margin;
  if (train) {
    mirror = rng.coin();
    dy = static_cast<int>(rng.bounded(static_cast<std::uint32_t>(2 * margin + 1)));
    dx = static_cast<int>(rng.bounded(static_cast<std::uint32_t>(2 * margin + 1)));
  }

  VideoSequence out;
  out.person_id = seq.person_id;
  out.camera_id = seq.camera_id;
  out.frames.reserve(seq.frames.size());
  for (const Tensor& f : seq.frames) {
    Tensor crop({5, h, w});
    for (int c = 0; c < 5; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const int sx = mirror ? wp - 1 - (x + dx) : x + dx;
          float v = f.at(c, y + dy, sx);
          if (mirror && c == 3) v = -v;  // flow-x flips sign under mirroring
          crop.at(c, y, x) = v;
        }
    out.frames.push_back(std::move(crop));
  }
  return out;
}

SplitGeometry split_geometry(int frame_height, int parts, int overlap) {
  require(parts >= 1, "split: parts must be >= 1");
  require(overlap >= 0, "split: negative overlap");
  require(frame_height >= 1, "split: empty frame");

  const int numer = frame_height + (parts - 1) * overlap;
  const int part_height = numer / parts;
  const int rem = numer % parts;

  require(part_height <= frame_height,
          "split: infeasible geometry, part height " +
              std::to_string(part_height) + " exceeds frame height " +
              std::to_string(frame_height));
  if (parts >= 2) {
    require(part_height > overlap,
            "split: infeasible geometry, part height " +
                std::to_string(part_height) + " must exceed overlap " +
                std::to_string(overlap));
    // The bottom-anchored last part absorbs the floor remainder by shrinking
    // the final overlap to overlap-rem; a remainder beyond the overlap would
    // leave uncovered rows.
    require(rem <= overlap,
            "split: infeasible geometry, floor remainder " +
                std::to_string(rem) + " exceeds overlap " +
                std::to_string(overlap) + " (rows would be uncovered)");
  }

  SplitGeometry g;
  g.parts = parts;
  g.overlap = overlap;
  g.frame_height = frame_height;
  g.part_height = part_height;
  g.starts.resize(static_cast<std::size_t>(parts));
  for (int n = 0; n + 1 < parts; ++n)
    g.starts[static_cast<std::size_t>(n)] = n * (part_height - overlap);
  g.starts[static_cast<std::size_t>(parts - 1)] = frame_height - part_height;
  return g;
}

PartSet split_parts(const VideoSequence& seq, const SplitGeometry& geom) {
  require(!seq.frames.empty(), "split: empty sequence");
  for (const Tensor& f : seq.frames)
    require(f.rank() == 3 && f.dim(1) == geom.frame_height,
            "split: frame height " + std::to_string(f.dim(1)) +
                " does not match geometry height " +
                std::to_string(geom.frame_height));

  PartSet ps;
  ps.geometry = geom;
  ps.parts.resize(static_cast<std::size_t>(geom.parts));
  const int w = seq.frames.front().dim(2);
  const int c = seq.frames.front().dim(0);
  for (int n = 0; n < geom.parts; ++n) {
    auto& part = ps.parts[static_cast<std::size_t>(n)];
    part.reserve(seq.frames.size());
    const int y0 = geom.starts[static_cast<std::size_t>(n)];
    for (const Tensor& f : seq.frames) {
      Tensor slice({c, geom.part_height, w});
      for (int ci = 0; ci < c; ++ci) {
        const float* src = &f.at(ci, y0, 0);
        std::copy(src, src + static_cast<std::size_t>(geom.part_height) * w,
                  &slice.at(ci, 0, 0));
      }
      part.push_back(std::move(slice));
    }
  }
  return ps;
}

}  // namespace stfmm
