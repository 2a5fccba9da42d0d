#include "stfmm/net.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace stfmm {

namespace {

constexpr int kInputChannels = 5;  // Y, U, V, flow-x, flow-y

struct ConvShape {
  int h = 0, w = 0;
};

// Shape walk through conv (stride 1) and the two pooling stages.
ConvShape shape_after_conv(ConvShape s, const NetConfig& cfg) {
  return {s.h + 2 * cfg.padding - cfg.kernel + 1,
          s.w + 2 * cfg.padding - cfg.kernel + 1};
}

ConvShape shape_after_pool(ConvShape s, const NetConfig& cfg) {
  return {(s.h - cfg.pool_window) / cfg.pool_stride + 1,
          (s.w - cfg.pool_window) / cfg.pool_stride + 1};
}

}  // namespace

int NetConfig::spp_cells() const {
  int q = 0;
  for (int b : spp_bins) q += b * b;
  return q;
}

void NetConfig::validate(int part_h, int part_w) const {
  require(parts >= 1, "net: parts must be >= 1");
  require(kernel >= 1 && kernel % 2 == 1, "net: kernel size must be odd");
  require(padding >= 0, "net: negative padding");
  require(pool_window >= 1 && pool_stride >= 1, "net: bad pool setup");
  require(embed_dim > 0, "net: embed_dim must be positive");
  require(classes > 1, "net: need at least two classes");
  require(margin > 0, "net: margin must be positive");
  require(dropout >= 0.0f && dropout < 1.0f, "net: dropout must be in [0,1)");
  require(weight_decay >= 0.0f, "net: negative weight decay");
  for (int c : conv_channels) require(c >= 1, "net: conv channels must be >= 1");
  require(!spp_bins.empty() && spp_bins.back() == 1,
          "net: pyramid bins must end at 1");
  for (std::size_t i = 1; i < spp_bins.size(); ++i)
    require(spp_bins[i] < spp_bins[i - 1],
            "net: pyramid bins must be strictly decreasing");

  ConvShape s{part_h, part_w};
  for (int layer = 0; layer < 2; ++layer) {
    s = shape_after_conv(s, *this);
    require(s.h >= pool_window && s.w >= pool_window,
            "net: part input " + std::to_string(part_h) + "x" +
                std::to_string(part_w) + " too small for pooling stage " +
                std::to_string(layer + 1));
    s = shape_after_pool(s, *this);
  }
  s = shape_after_conv(s, *this);
  require(s.h >= 1 && s.w >= 1, "net: part input too small for third conv");
}

std::string NetConfig::describe() const {
  std::ostringstream os;
  os << "parts=" << parts << ";conv=" << conv_channels[0] << ","
     << conv_channels[1] << "," << conv_channels[2] << ";kernel=" << kernel
     << ";padding=" << padding << ";pool=" << pool_window << "/" << pool_stride
     << ";bins=";
  for (std::size_t i = 0; i < spp_bins.size(); ++i)
    os << (i ? "," : "") << spp_bins[i];
  os << ";embed=" << embed_dim << ";classes=" << classes
     << ";margin=" << margin << ";fully_shared=" << (fully_shared ? 1 : 0)
     << ";dropout=" << dropout << ";weight_decay=" << weight_decay;
  return os.str();
}

template <class S>
ModelParamsT<S> zeros_like_params(const ModelParamsT<S>& params) {
  ModelParamsT<S> z;
  z.streams.resize(params.streams.size());
  for (std::size_t s = 0; s < params.streams.size(); ++s) {
    for (std::size_t l = 0; l < 3; ++l) {
      z.streams[s].conv_kernel[l] =
          TensorT<S>::zeros_like(params.streams[s].conv_kernel[l]);
      z.streams[s].conv_bias[l] =
          TensorT<S>::zeros_like(params.streams[s].conv_bias[l]);
    }
    z.streams[s].rnn_input = TensorT<S>::zeros_like(params.streams[s].rnn_input);
    z.streams[s].rnn_recur = TensorT<S>::zeros_like(params.streams[s].rnn_recur);
  }
  z.cls_weight = TensorT<S>::zeros_like(params.cls_weight);
  z.cls_bias = TensorT<S>::zeros_like(params.cls_bias);
  return z;
}

template <class To, class From>
ModelParamsT<To> cast_params(const ModelParamsT<From>& p) {
  ModelParamsT<To> out;
  out.streams.resize(p.streams.size());
  for (std::size_t s = 0; s < p.streams.size(); ++s) {
    for (std::size_t l = 0; l < 3; ++l) {
      out.streams[s].conv_kernel[l] =
          cast_tensor<To>(p.streams[s].conv_kernel[l]);
      out.streams[s].conv_bias[l] = cast_tensor<To>(p.streams[s].conv_bias[l]);
    }
    out.streams[s].rnn_input = cast_tensor<To>(p.streams[s].rnn_input);
    out.streams[s].rnn_recur = cast_tensor<To>(p.streams[s].rnn_recur);
  }
  out.cls_weight = cast_tensor<To>(p.cls_weight);
  out.cls_bias = cast_tensor<To>(p.cls_bias);
  return out;
}

namespace {

template <class S>
TensorT<S> uniform_init(std::vector<int> shape, int fan_in, Pcg32& rng) {
  TensorT<S> t(std::move(shape));
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  for (auto& v : t.data)
    v = static_cast<S>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace

template <class S>
ModelParamsT<S> init_params(const NetConfig& cfg, std::uint64_t seed) {
  Pcg32 rng(seed);
  const int k = cfg.kernel;
  const int c1 = cfg.conv_channels[0], c2 = cfg.conv_channels[1],
            c3 = cfg.conv_channels[2];
  const int d = cfg.embed_dim;
  const int fl = cfg.feature_len();

  ModelParamsT<S> p;
  p.streams.resize(static_cast<std::size_t>(cfg.stream_count()));
  for (auto& sp : p.streams) {
    sp.conv_kernel[0] =
        uniform_init<S>({c1, kInputChannels, k, k}, kInputChannels * k * k, rng);
    sp.conv_bias[0] = TensorT<S>({c1});
    sp.conv_kernel[1] = uniform_init<S>({c2, c1, k, k}, c1 * k * k, rng);
    sp.conv_bias[1] = TensorT<S>({c2});
    sp.conv_kernel[2] = uniform_init<S>({c3, c2, k, k}, c2 * k * k, rng);
    sp.conv_bias[2] = TensorT<S>({c3});
    sp.rnn_input = uniform_init<S>({d, fl}, fl, rng);
    sp.rnn_recur = uniform_init<S>({d, d}, d, rng);
  }
  p.cls_weight =
      uniform_init<S>({cfg.classes, cfg.mixed_len()}, cfg.mixed_len(), rng);
  p.cls_bias = TensorT<S>({cfg.classes});
  return p;
}

template <class S>
TensorT<S> spp_pool(const TensorT<S>& map, const std::vector<int>& bins,
                    std::vector<std::int32_t>* argmax) {
  require(map.rank() == 3, "spp_pool: map must be rank 3");
  const int c = map.dim(0), hm = map.dim(1), wm = map.dim(2);
  require(c >= 1 && hm >= 1 && wm >= 1, "spp_pool: empty map");

  int q = 0;
  for (int b : bins) q += b * b;
  TensorT<S> out({c * q});
  if (argmax) argmax->resize(out.numel());

  std::size_t oi = 0;
  for (int b : bins) {
    const bool regular = hm / b >= 1 && wm / b >= 1;
    const int win_h = (hm + b - 1) / b, win_w = (wm + b - 1) / b;
    const int str_h = hm / b, str_w = wm / b;
    for (int ci = 0; ci < c; ++ci) {
      const S* mbase = &map.at(ci, 0, 0);
      const std::size_t cbase = static_cast<std::size_t>(ci) * hm * wm;
      for (int i = 0; i < b; ++i)
        for (int j = 0; j < b; ++j, ++oi) {
          int y0, y1, x0, x1;
          if (regular) {
            y0 = i * str_h;
            y1 = y0 + win_h;
            x0 = j * str_w;
            x1 = x0 + win_w;
          } else {
            y0 = i * hm / b;
            y1 = ((i + 1) * hm + b - 1) / b;
            x0 = j * wm / b;
            x1 = ((j + 1) * wm + b - 1) / b;
          }
          S best = mbase[static_cast<std::size_t>(y0) * wm + x0];
          std::int32_t best_idx = static_cast<std::int32_t>(
              cbase + static_cast<std::size_t>(y0) * wm + x0);
          for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) {
              const S v = mbase[static_cast<std::size_t>(y) * wm + x];
              if (v > best) {
                best = v;
                best_idx = static_cast<std::int32_t>(
                    cbase + static_cast<std::size_t>(y) * wm + x);
              }
            }
          out.data[oi] = best;
          if (argmax) (*argmax)[oi] = best_idx;
        }
    }
  }
  return out;
}

template <class S>
TensorT<S> spp_pool_backward(const std::vector<int>& map_shape,
                             const std::vector<std::int32_t>& argmax,
                             const TensorT<S>& out_grad) {
  require(argmax.size() == out_grad.numel(),
          "spp_pool_backward: argmax/gradient size mismatch");
  TensorT<S> g(map_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i)
    g.data[static_cast<std::size_t>(argmax[i])] += out_grad.data[i];
  return g;
}

template <class S>
TensorT<S> part_cnn(const TensorT<S>& frame, const StreamParamsT<S>& sp,
                    const NetConfig& cfg, FrameTrace<S>* trace) {
  require(frame.rank() == 3 && frame.dim(0) == kInputChannels,
          "part_cnn: frame must be 5 x h x w");

  TensorT<S> act1 = ops::tanh_map(
      ops::conv2d(frame, sp.conv_kernel[0], sp.conv_bias[0], cfg.padding));
  ops::MaxPoolResult<S> pool1 = ops::maxpool2d(
      act1, cfg.pool_window, cfg.pool_window, cfg.pool_stride, cfg.pool_stride);

  TensorT<S> act2 = ops::tanh_map(ops::conv2d(pool1.output, sp.conv_kernel[1],
                                              sp.conv_bias[1], cfg.padding));
  ops::MaxPoolResult<S> pool2 = ops::maxpool2d(
      act2, cfg.pool_window, cfg.pool_window, cfg.pool_stride, cfg.pool_stride);

  TensorT<S> act3 = ops::tanh_map(ops::conv2d(pool2.output, sp.conv_kernel[2],
                                              sp.conv_bias[2], cfg.padding));

  std::vector<std::int32_t> spp_argmax;
  TensorT<S> spp =
      spp_pool(act3, cfg.spp_bins, trace ? &spp_argmax : nullptr);

  if (trace) {
    trace->act1 = std::move(act1);
    trace->pool1 = std::move(pool1);
    trace->act2 = std::move(act2);
    trace->pool2 = std::move(pool2);
    trace->act3 = std::move(act3);
    trace->spp_argmax = std::move(spp_argmax);
    trace->spp = spp;
  }
  return spp;
}

template <class S>
void rnn_forward(const std::vector<TensorT<S>>& spp_seq, const TensorT<S>& u,
                 const TensorT<S>& w, std::vector<TensorT<S>>& out_o,
                 std::vector<TensorT<S>>& out_r) {
  require(!spp_seq.empty(), "rnn_forward: empty sequence");
  const std::size_t t_count = spp_seq.size();
  out_o.clear();
  out_r.clear();
  out_o.reserve(t_count);
  out_r.reserve(t_count);
  for (std::size_t t = 0; t < t_count; ++t) {
    TensorT<S> o = ops::linear(spp_seq[t], u, static_cast<TensorT<S>*>(nullptr));
    if (t > 0) {
      const TensorT<S> rec =
          ops::linear(out_r[t - 1], w, static_cast<TensorT<S>*>(nullptr));
      for (std::size_t i = 0; i < o.numel(); ++i) o.data[i] += rec.data[i];
    }
    out_r.push_back(ops::tanh_map(o));
    out_o.push_back(std::move(o));
  }
}

template <class S>
SequenceFeatureT<S> forward_sequence(
    const std::vector<std::vector<TensorT<S>>>& parts,
    const ModelParamsT<S>& params, const NetConfig& cfg,
    std::vector<PartTrace<S>>* traces, int threads) {
  require(static_cast<int>(parts.size()) == cfg.parts,
          "forward_sequence: expected " + std::to_string(cfg.parts) +
              " part sequences, got " + std::to_string(parts.size()));
  for (const auto& seq : parts)
    require(!seq.empty(), "forward_sequence: empty part sequence");

  SequenceFeatureT<S> feat;
  feat.part_features.resize(parts.size());
  if (traces) traces->assign(parts.size(), PartTrace<S>{});

  parallel_for(cfg.parts, threads, [&](int n) {
    const auto& frames = parts[static_cast<std::size_t>(n)];
    const StreamParamsT<S>& sp = params.stream_for_part(n);
    PartTrace<S> local;
    PartTrace<S>* pt = traces ? &(*traces)[static_cast<std::size_t>(n)] : &local;
    pt->frames.resize(traces ? frames.size() : 0);

    std::vector<TensorT<S>> spp_seq;
    spp_seq.reserve(frames.size());
    for (std::size_t t = 0; t < frames.size(); ++t)
      spp_seq.push_back(part_cnn(frames[t], sp, cfg,
                                 traces ? &pt->frames[t] : nullptr));

    rnn_forward(spp_seq, sp.rnn_input, sp.rnn_recur, pt->rnn_out,
                pt->rnn_state);
    feat.part_features[static_cast<std::size_t>(n)] =
        temporal_pool(pt->rnn_out);
  });

  feat.mixed = ops::concat(feat.part_features);
  return feat;
}

template <class S>
std::vector<TensorT<S>> rnn_backward(const std::vector<TensorT<S>>& spp_seq,
                                     const std::vector<TensorT<S>>& rnn_state,
                                     const TensorT<S>& u, const TensorT<S>& w,
                                     const std::vector<TensorT<S>>& d_out,
                                     TensorT<S>& d_u, TensorT<S>& d_w) {
  const int t_count = static_cast<int>(spp_seq.size());
  require(d_out.size() == spp_seq.size() && rnn_state.size() == spp_seq.size(),
          "rnn_backward: sequence length mismatch");

  std::vector<TensorT<S>> d_spp(static_cast<std::size_t>(t_count));
  TensorT<S> g_o_next;  // gradient on o^{t+1} from the previous iteration
  for (int t = t_count - 1; t >= 0; --t) {
    TensorT<S> g_o = d_out[static_cast<std::size_t>(t)];
    if (t < t_count - 1) {
      // o^{t+1} = ... + W r^t, so dW += g_o^{t+1} x r^t and the state picks
      // up W^T g_o^{t+1} through the tanh.
      ops::LinearGrads<S> rec = ops::linear_backward(
          rnn_state[static_cast<std::size_t>(t)], w, false, g_o_next);
      for (std::size_t i = 0; i < d_w.numel(); ++i)
        d_w.data[i] += rec.weight.data[i];
      const TensorT<S> d_r = ops::tanh_backward(
          rnn_state[static_cast<std::size_t>(t)], rec.input);
      for (std::size_t i = 0; i < g_o.numel(); ++i) g_o.data[i] += d_r.data[i];
    }
    ops::LinearGrads<S> in = ops::linear_backward(
        spp_seq[static_cast<std::size_t>(t)], u, false, g_o);
    for (std::size_t i = 0; i < d_u.numel(); ++i)
      d_u.data[i] += in.weight.data[i];
    d_spp[static_cast<std::size_t>(t)] = std::move(in.input);
    g_o_next = std::move(g_o);
  }
  return d_spp;
}

template <class S>
void part_cnn_backward(const TensorT<S>& frame, const FrameTrace<S>& trace,
                       const TensorT<S>& d_spp, const StreamParamsT<S>& sp,
                       const NetConfig& cfg, StreamParamsT<S>& grad) {
  TensorT<S> d_act3 =
      spp_pool_backward(trace.act3.shape, trace.spp_argmax, d_spp);
  TensorT<S> d_conv3 = ops::tanh_backward(trace.act3, d_act3);
  ops::Conv2dGrads<S> g3 = ops::conv2d_backward(
      trace.pool2.output, sp.conv_kernel[2], cfg.padding, d_conv3, true);
  for (std::size_t i = 0; i < grad.conv_kernel[2].numel(); ++i)
    grad.conv_kernel[2].data[i] += g3.kernels.data[i];
  for (std::size_t i = 0; i < grad.conv_bias[2].numel(); ++i)
    grad.conv_bias[2].data[i] += g3.bias.data[i];

  TensorT<S> d_act2 =
      ops::maxpool2d_backward(trace.act2.shape, trace.pool2.argmax, g3.input);
  TensorT<S> d_conv2 = ops::tanh_backward(trace.act2, d_act2);
  ops::Conv2dGrads<S> g2 = ops::conv2d_backward(
      trace.pool1.output, sp.conv_kernel[1], cfg.padding, d_conv2, true);
  for (std::size_t i = 0; i < grad.conv_kernel[1].numel(); ++i)
    grad.conv_kernel[1].data[i] += g2.kernels.data[i];
  for (std::size_t i = 0; i < grad.conv_bias[1].numel(); ++i)
    grad.conv_bias[1].data[i] += g2.bias.data[i];

  TensorT<S> d_act1 =
      ops::maxpool2d_backward(trace.act1.shape, trace.pool1.argmax, g2.input);
  TensorT<S> d_conv1 = ops::tanh_backward(trace.act1, d_act1);
  ops::Conv2dGrads<S> g1 = ops::conv2d_backward(frame, sp.conv_kernel[0],
                                                cfg.padding, d_conv1, false);
  for (std::size_t i = 0; i < grad.conv_kernel[0].numel(); ++i)
    grad.conv_kernel[0].data[i] += g1.kernels.data[i];
  for (std::size_t i = 0; i < grad.conv_bias[0].numel(); ++i)
    grad.conv_bias[0].data[i] += g1.bias.data[i];
}

namespace {

// Reverse pass for one part stream; gradients land in `grad` (a per-part
// scratch sink so part streams can run in parallel and be reduced in fixed
// order afterwards).
template <class S>
void backward_part(const std::vector<TensorT<S>>& frames,
                   const PartTrace<S>& trace, const TensorT<S>& d_tp,
                   const StreamParamsT<S>& sp, const NetConfig& cfg,
                   StreamParamsT<S>& grad) {
  const int t_count = static_cast<int>(frames.size());

  // Temporal pooling feeds the same 1/T share of d_tp to every o^t.
  const std::vector<TensorT<S>> d_out(
      static_cast<std::size_t>(t_count),
      ops::mean_over_time_backward(t_count, d_tp));

  std::vector<TensorT<S>> spp_seq;
  spp_seq.reserve(trace.frames.size());
  for (const FrameTrace<S>& ft : trace.frames) spp_seq.push_back(ft.spp);

  const std::vector<TensorT<S>> d_spp =
      rnn_backward(spp_seq, trace.rnn_state, sp.rnn_input, sp.rnn_recur, d_out,
                   grad.rnn_input, grad.rnn_recur);

  for (int t = 0; t < t_count; ++t)
    part_cnn_backward(frames[static_cast<std::size_t>(t)],
                      trace.frames[static_cast<std::size_t>(t)],
                      d_spp[static_cast<std::size_t>(t)], sp, cfg, grad);
}

template <class S>
void accumulate_stream(StreamParamsT<S>& into, const StreamParamsT<S>& from) {
  for (std::size_t l = 0; l < 3; ++l) {
    for (std::size_t i = 0; i < into.conv_kernel[l].numel(); ++i)
      into.conv_kernel[l].data[i] += from.conv_kernel[l].data[i];
    for (std::size_t i = 0; i < into.conv_bias[l].numel(); ++i)
      into.conv_bias[l].data[i] += from.conv_bias[l].data[i];
  }
  for (std::size_t i = 0; i < into.rnn_input.numel(); ++i)
    into.rnn_input.data[i] += from.rnn_input.data[i];
  for (std::size_t i = 0; i < into.rnn_recur.numel(); ++i)
    into.rnn_recur.data[i] += from.rnn_recur.data[i];
}

template <class S>
StreamParamsT<S> zeros_like_stream(const StreamParamsT<S>& sp) {
  StreamParamsT<S> z;
  for (std::size_t l = 0; l < 3; ++l) {
    z.conv_kernel[l] = TensorT<S>::zeros_like(sp.conv_kernel[l]);
    z.conv_bias[l] = TensorT<S>::zeros_like(sp.conv_bias[l]);
  }
  z.rnn_input = TensorT<S>::zeros_like(sp.rnn_input);
  z.rnn_recur = TensorT<S>::zeros_like(sp.rnn_recur);
  return z;
}

}  // namespace

template <class S>
void backward_sequence(const std::vector<std::vector<TensorT<S>>>& parts,
                       const std::vector<PartTrace<S>>& traces,
                       const TensorT<S>& d_mixed,
                       const ModelParamsT<S>& params, ModelParamsT<S>& grads,
                       const NetConfig& cfg, int threads) {
  require(d_mixed.rank() == 1 && d_mixed.dim(0) == cfg.mixed_len(),
          "backward_sequence: mixed gradient length mismatch");
  std::vector<int> lengths(static_cast<std::size_t>(cfg.parts), cfg.embed_dim);
  const std::vector<TensorT<S>> d_tp = ops::concat_backward(lengths, d_mixed);

  // Per-part scratch sinks keep the parallel section race-free; reduction
  // below runs in fixed part order so results do not depend on thread count.
  std::vector<StreamParamsT<S>> scratch(static_cast<std::size_t>(cfg.parts));
  parallel_for(cfg.parts, threads, [&](int n) {
    const std::size_t ni = static_cast<std::size_t>(n);
    scratch[ni] = zeros_like_stream(params.stream_for_part(n));
    backward_part(parts[ni], traces[ni], d_tp[ni], params.stream_for_part(n),
                  cfg, scratch[ni]);
  });
  for (int n = 0; n < cfg.parts; ++n)
    accumulate_stream(grads.stream_for_part(n),
                      scratch[static_cast<std::size_t>(n)]);
}

template <class S>
S siamese_loss(const SequenceFeatureT<S>& probe,
               const SequenceFeatureT<S>& gallery, bool same, S margin) {
  require(probe.part_features.size() == gallery.part_features.size(),
          "siamese_loss: part count mismatch");
  S dist = 0;
  for (std::size_t n = 0; n < probe.part_features.size(); ++n) {
    const auto& a = probe.part_features[n];
    const auto& b = gallery.part_features[n];
    require(a.same_shape(b), "siamese_loss: feature shape mismatch");
    for (std::size_t i = 0; i < a.numel(); ++i) {
      const S d = a.data[i] - b.data[i];
      dist += d * d;
    }
  }
  if (same) return dist;
  return std::max(S(0), margin - dist);
}

template <class S>
void siamese_loss_backward(const SequenceFeatureT<S>& probe,
                           const SequenceFeatureT<S>& gallery, bool same,
                           S margin, TensorT<S>& d_vp, TensorT<S>& d_vg) {
  S dist = 0;
  for (std::size_t n = 0; n < probe.part_features.size(); ++n) {
    const auto& a = probe.part_features[n];
    const auto& b = gallery.part_features[n];
    for (std::size_t i = 0; i < a.numel(); ++i) {
      const S d = a.data[i] - b.data[i];
      dist += d * d;
    }
  }
  S scale;
  if (same) {
    scale = S(2);
  } else if (dist < margin) {
    scale = S(-2);
  } else {
    return;  // hinge saturated: zero gradient (including at exactly D == m)
  }
  for (std::size_t i = 0; i < probe.mixed.numel(); ++i) {
    const S d = probe.mixed.data[i] - gallery.mixed.data[i];
    d_vp.data[i] += scale * d;
    d_vg.data[i] -= scale * d;
  }
}

template <class S>
LossBreakdown<S> total_loss(const SequenceFeatureT<S>& probe,
                            const SequenceFeatureT<S>& gallery, int label_p,
                            int label_g, const ModelParamsT<S>& params,
                            const NetConfig& cfg) {
  LossBreakdown<S> lb;
  const TensorT<S> logits_p =
      ops::linear(probe.mixed, params.cls_weight, &params.cls_bias);
  const TensorT<S> logits_g =
      ops::linear(gallery.mixed, params.cls_weight, &params.cls_bias);
  lb.identity_probe = ops::softmax_xent(logits_p, label_p);
  lb.identity_gallery = ops::softmax_xent(logits_g, label_g);
  lb.siamese = siamese_loss(probe, gallery, label_p == label_g,
                            static_cast<S>(cfg.margin));
  lb.total = lb.identity_probe + lb.identity_gallery + lb.siamese;
  return lb;
}

template <class S>
LossBreakdown<S> pair_loss_and_grads(
    const std::vector<std::vector<TensorT<S>>>& probe_parts,
    const std::vector<std::vector<TensorT<S>>>& gallery_parts, int label_p,
    int label_g, const ModelParamsT<S>& params, ModelParamsT<S>& grads,
    const NetConfig& cfg, Pcg32* dropout_rng, int threads) {
  std::vector<PartTrace<S>> traces_p, traces_g;
  const SequenceFeatureT<S> feat_p =
      forward_sequence(probe_parts, params, cfg, &traces_p, threads);
  const SequenceFeatureT<S> feat_g =
      forward_sequence(gallery_parts, params, cfg, &traces_g, threads);

  // Optional inverted-dropout masks on the classifier inputs only; the
  // Siamese branch always sees the raw features.
  const bool use_dropout = cfg.dropout > 0.0f && dropout_rng != nullptr;
  TensorT<S> mask_p, mask_g;
  TensorT<S> cls_in_p = feat_p.mixed, cls_in_g = feat_g.mixed;
  if (use_dropout) {
    const S keep_scale = S(1) / (S(1) - static_cast<S>(cfg.dropout));
    auto draw_mask = [&](TensorT<S>& mask, TensorT<S>& v) {
      mask = TensorT<S>(v.shape);
      for (std::size_t i = 0; i < v.numel(); ++i) {
        mask.data[i] =
            dropout_rng->uniform() < cfg.dropout ? S(0) : keep_scale;
        v.data[i] *= mask.data[i];
      }
    };
    draw_mask(mask_p, cls_in_p);
    draw_mask(mask_g, cls_in_g);
  }

  LossBreakdown<S> lb;
  const TensorT<S> logits_p =
      ops::linear(cls_in_p, params.cls_weight, &params.cls_bias);
  const TensorT<S> logits_g =
      ops::linear(cls_in_g, params.cls_weight, &params.cls_bias);
  lb.identity_probe = ops::softmax_xent(logits_p, label_p);
  lb.identity_gallery = ops::softmax_xent(logits_g, label_g);
  lb.siamese = siamese_loss(feat_p, feat_g, label_p == label_g,
                            static_cast<S>(cfg.margin));
  lb.total = lb.identity_probe + lb.identity_gallery + lb.siamese;

  // Classifier path.
  const TensorT<S> d_logits_p = ops::softmax_xent_backward(logits_p, label_p);
  const TensorT<S> d_logits_g = ops::softmax_xent_backward(logits_g, label_g);
  ops::LinearGrads<S> gp =
      ops::linear_backward(cls_in_p, params.cls_weight, true, d_logits_p);
  ops::LinearGrads<S> gg =
      ops::linear_backward(cls_in_g, params.cls_weight, true, d_logits_g);
  for (std::size_t i = 0; i < grads.cls_weight.numel(); ++i)
    grads.cls_weight.data[i] += gp.weight.data[i] + gg.weight.data[i];
  for (std::size_t i = 0; i < grads.cls_bias.numel(); ++i)
    grads.cls_bias.data[i] += gp.bias.data[i] + gg.bias.data[i];

  TensorT<S> d_vp = std::move(gp.input);
  TensorT<S> d_vg = std::move(gg.input);
  if (use_dropout) {
    for (std::size_t i = 0; i < d_vp.numel(); ++i) {
      d_vp.data[i] *= mask_p.data[i];
      d_vg.data[i] *= mask_g.data[i];
    }
  }

  siamese_loss_backward(feat_p, feat_g, label_p == label_g,
                        static_cast<S>(cfg.margin), d_vp, d_vg);

  backward_sequence(probe_parts, traces_p, d_vp, params, grads, cfg, threads);
  backward_sequence(gallery_parts, traces_g, d_vg, params, grads, cfg,
                    threads);
  return lb;
}

#define STFMM_INSTANTIATE_NET(S)                                              \
  template ModelParamsT<S> zeros_like_params<S>(const ModelParamsT<S>&);      \
  template ModelParamsT<S> init_params<S>(const NetConfig&, std::uint64_t);   \
  template TensorT<S> spp_pool<S>(const TensorT<S>&, const std::vector<int>&, \
                                  std::vector<std::int32_t>*);                \
  template TensorT<S> spp_pool_backward<S>(const std::vector<int>&,           \
                                           const std::vector<std::int32_t>&,  \
                                           const TensorT<S>&);                \
  template TensorT<S> part_cnn<S>(const TensorT<S>&, const StreamParamsT<S>&, \
                                  const NetConfig&, FrameTrace<S>*);          \
  template void rnn_forward<S>(const std::vector<TensorT<S>>&,                \
                               const TensorT<S>&, const TensorT<S>&,          \
                               std::vector<TensorT<S>>&,                      \
                               std::vector<TensorT<S>>&);                     \
  template std::vector<TensorT<S>> rnn_backward<S>(                           \
      const std::vector<TensorT<S>>&, const std::vector<TensorT<S>>&,         \
      const TensorT<S>&, const TensorT<S>&, const std::vector<TensorT<S>>&,   \
      TensorT<S>&, TensorT<S>&);                                              \
  template void part_cnn_backward<S>(const TensorT<S>&, const FrameTrace<S>&, \
                                     const TensorT<S>&,                       \
                                     const StreamParamsT<S>&,                 \
                                     const NetConfig&, StreamParamsT<S>&);    \
  template SequenceFeatureT<S> forward_sequence<S>(                           \
      const std::vector<std::vector<TensorT<S>>>&, const ModelParamsT<S>&,    \
      const NetConfig&, std::vector<PartTrace<S>>*, int);                     \
  template void backward_sequence<S>(                                         \
      const std::vector<std::vector<TensorT<S>>>&,                            \
      const std::vector<PartTrace<S>>&, const TensorT<S>&,                    \
      const ModelParamsT<S>&, ModelParamsT<S>&, const NetConfig&, int);       \
  template S siamese_loss<S>(const SequenceFeatureT<S>&,                      \
                             const SequenceFeatureT<S>&, bool, S);            \
  template void siamese_loss_backward<S>(const SequenceFeatureT<S>&,          \
                                         const SequenceFeatureT<S>&, bool, S, \
                                         TensorT<S>&, TensorT<S>&);           \
  template LossBreakdown<S> total_loss<S>(                                    \
      const SequenceFeatureT<S>&, const SequenceFeatureT<S>&, int, int,       \
      const ModelParamsT<S>&, const NetConfig&);                              \
  template LossBreakdown<S> pair_loss_and_grads<S>(                           \
      const std::vector<std::vector<TensorT<S>>>&,                            \
      const std::vector<std::vector<TensorT<S>>>&, int, int,                  \
      const ModelParamsT<S>&, ModelParamsT<S>&, const NetConfig&, Pcg32*,     \
      int);

STFMM_INSTANTIATE_NET(float)
STFMM_INSTANTIATE_NET(double)

#undef STFMM_INSTANTIATE_NET

template ModelParamsT<double> cast_params<double, float>(
    const ModelParamsT<float>&);
template ModelParamsT<float> cast_params<float, double>(
    const ModelParamsT<double>&);

}  // namespace stfmm
