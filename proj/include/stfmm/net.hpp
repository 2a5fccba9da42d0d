#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "stfmm/ops.hpp"
#include "stfmm/rng.hpp"
#include "stfmm/tensor.hpp"

// The 2N-input Siamese network: per-part CNN with spatial pyramid pooling,
// recurrent layer, temporal pooling, feature mixing, and the combined
// identity + margin training objective, with a hand-wired reverse pass.
namespace stfmm {

struct NetConfig {
  int parts = 3;
  std::array<int, 3> conv_channels{16, 32, 32};
  int kernel = 5;
  int padding = 2;
  int pool_window = 2;
  int pool_stride = 2;
  std::vector<int> spp_bins{8, 4, 2, 1};
  int embed_dim = 128;
  int classes = 2;
  float margin = 2.0f;
  bool fully_shared = false;  // default: one parameter stream per part
  float dropout = 0.0f;       // classifier-input dropout, off by default
  float weight_decay = 0.0f;  // off by default

  // q = sum of b^2 over the pyramid levels.
  int spp_cells() const;
  // c*q: flattened pyramid length per frame.
  int feature_len() const { return conv_channels[2] * spp_cells(); }
  // N*d: length of the mixed sequence vector v.
  int mixed_len() const { return parts * embed_dim; }
  int stream_count() const { return fully_shared ? 1 : parts; }

  // Rejects configurations whose part shape cannot pass both pooling
  // stages, and malformed pyramid/bin setups.
  void validate(int part_h, int part_w) const;

  // Canonical architecture description; hashed into checkpoints so a model
  // cannot be loaded under an incompatible configuration.
  std::string describe() const;
};

template <class S>
struct StreamParamsT {
  std::array<TensorT<S>, 3> conv_kernel;
  std::array<TensorT<S>, 3> conv_bias;
  TensorT<S> rnn_input;  // U: d x (c*q)
  TensorT<S> rnn_recur;  // W: d x d
};

// All trainable arrays. Probe and gallery always share parameters (the
// Siamese property); parts share one stream only in fully_shared mode.
template <class S>
struct ModelParamsT {
  std::vector<StreamParamsT<S>> streams;  // size 1 or N
  TensorT<S> cls_weight;                  // C x (N*d)
  TensorT<S> cls_bias;                    // C

  StreamParamsT<S>& stream_for_part(int part) {
    return streams[streams.size() == 1 ? 0 : static_cast<std::size_t>(part)];
  }
  const StreamParamsT<S>& stream_for_part(int part) const {
    return streams[streams.size() == 1 ? 0 : static_cast<std::size_t>(part)];
  }

  // Visits every array as (name, tensor) in a fixed order.
  template <class Fn>
  void for_each(Fn&& fn) {
    for (std::size_t s = 0; s < streams.size(); ++s) {
      const std::string prefix =
          streams.size() == 1 ? "shared" : "part" + std::to_string(s);
      for (int l = 0; l < 3; ++l) {
        fn(prefix + ".conv" + std::to_string(l + 1) + ".kernel",
           streams[s].conv_kernel[static_cast<std::size_t>(l)]);
        fn(prefix + ".conv" + std::to_string(l + 1) + ".bias",
           streams[s].conv_bias[static_cast<std::size_t>(l)]);
      }
      fn(prefix + ".rnn.U", streams[s].rnn_input);
      fn(prefix + ".rnn.W", streams[s].rnn_recur);
    }
    fn(std::string("classifier.weight"), cls_weight);
    fn(std::string("classifier.bias"), cls_bias);
  }

  template <class Fn>
  void for_each(Fn&& fn) const {
    const_cast<ModelParamsT*>(this)->for_each(
        [&fn](const std::string& name, TensorT<S>& t) {
          fn(name, static_cast<const TensorT<S>&>(t));
        });
  }

  bool all_finite() const {
    bool ok = true;
    for_each([&ok](const std::string&, const TensorT<S>& t) {
      if (!t.all_finite()) ok = false;
    });
    return ok;
  }
};

using ModelParams = ModelParamsT<float>;

// Zero-filled gradient holder with the same array layout as `params`.
template <class S>
ModelParamsT<S> zeros_like_params(const ModelParamsT<S>& params);

template <class To, class From>
ModelParamsT<To> cast_params(const ModelParamsT<From>& p);

// Deterministic init: weights uniform in +/-sqrt(1/fan_in), biases zero.
template <class S>
ModelParamsT<S> init_params(const NetConfig& cfg, std::uint64_t seed);

// ---- building blocks ----

// Multi-level max pooling to the fixed length c*q. When the map admits
// floor(dim/b) >= 1 on both axes a bin level uses window ceil(dim/b) and
// stride floor(dim/b) truncated to exactly b x b cells; smaller maps fall
// back to the adaptive partition [floor(i*dim/b), ceil((i+1)*dim/b)).
// Flattening is level-major in configured bin order, channel-major within
// a level. argmax (one flat map index per output element) feeds backward.
template <class S>
TensorT<S> spp_pool(const TensorT<S>& map, const std::vector<int>& bins,
                    std::vector<std::int32_t>* argmax = nullptr);

template <class S>
TensorT<S> spp_pool_backward(const std::vector<int>& map_shape,
                             const std::vector<std::int32_t>& argmax,
                             const TensorT<S>& out_grad);

// Per-frame caches kept by the forward pass so the reverse pass can be
// replayed without recomputation.
template <class S>
struct FrameTrace {
  TensorT<S> act1;  // tanh output, layer 1
  ops::MaxPoolResult<S> pool1;
  TensorT<S> act2;
  ops::MaxPoolResult<S> pool2;
  TensorT<S> act3;
  std::vector<std::int32_t> spp_argmax;
  TensorT<S> spp;  // c*q
};

template <class S>
struct PartTrace {
  std::vector<FrameTrace<S>> frames;
  std::vector<TensorT<S>> rnn_out;    // o^t (pre-activation)
  std::vector<TensorT<S>> rnn_state;  // r^t = tanh(o^t)
};

// Three conv layers; the first two end in max pooling, the last in SPP.
template <class S>
TensorT<S> part_cnn(const TensorT<S>& frame, const StreamParamsT<S>& sp,
                    const NetConfig& cfg, FrameTrace<S>* trace = nullptr);

// o^t = U spp^t + W r^{t-1}, r^t = tanh(o^t), r^0 = 0. Returns the o^t.
template <class S>
void rnn_forward(const std::vector<TensorT<S>>& spp_seq, const TensorT<S>& u,
                 const TensorT<S>& w, std::vector<TensorT<S>>& out_o,
                 std::vector<TensorT<S>>& out_r);

// Full backpropagation through time. d_out[t] is the upstream gradient on
// o^t; input gradients are returned, U/W gradients accumulate into d_u/d_w.
template <class S>
std::vector<TensorT<S>> rnn_backward(const std::vector<TensorT<S>>& spp_seq,
                                     const std::vector<TensorT<S>>& rnn_state,
                                     const TensorT<S>& u, const TensorT<S>& w,
                                     const std::vector<TensorT<S>>& d_out,
                                     TensorT<S>& d_u, TensorT<S>& d_w);

// Reverse pass of one frame's conv stack given d(loss)/d(spp vector);
// parameter gradients accumulate into `grad`.
template <class S>
void part_cnn_backward(const TensorT<S>& frame, const FrameTrace<S>& trace,
                       const TensorT<S>& d_spp, const StreamParamsT<S>& sp,
                       const NetConfig& cfg, StreamParamsT<S>& grad);

// Mean of the pre-activation outputs o^t over time.
template <class S>
TensorT<S> temporal_pool(const std::vector<TensorT<S>>& rnn_out) {
  return ops::mean_over_time(rnn_out);
}

template <class S>
struct SequenceFeatureT {
  std::vector<TensorT<S>> part_features;  // tp_n, each [d]
  TensorT<S> mixed;                       // v = tp_1 + ... + tp_N joined, [N*d]
};

using SequenceFeature = SequenceFeatureT<float>;

// parts[n][t] is frame t of part sequence n (5 x h x w each). With `traces`
// non-null the intermediates needed by backward_sequence are captured.
template <class S>
SequenceFeatureT<S> forward_sequence(
    const std::vector<std::vector<TensorT<S>>>& parts,
    const ModelParamsT<S>& params, const NetConfig& cfg,
    std::vector<PartTrace<S>>* traces = nullptr, int threads = 1);

// Reverse pass of one stream given d(loss)/d(mixed vector). Accumulates
// parameter gradients into `grads` (same layout as params).
template <class S>
void backward_sequence(const std::vector<std::vector<TensorT<S>>>& parts,
                       const std::vector<PartTrace<S>>& traces,
                       const TensorT<S>& d_mixed,
                       const ModelParamsT<S>& params, ModelParamsT<S>& grads,
                       const NetConfig& cfg, int threads = 1);

// Part-summed squared distance with a hinge on negative pairs:
// same -> D, different -> max{0, m - D} with D = sum_n ||tp_n^p - tp_n^g||^2.
template <class S>
S siamese_loss(const SequenceFeatureT<S>& probe,
               const SequenceFeatureT<S>& gallery, bool same, S margin);

// Accumulates d(loss)/d(mixed) for both streams into d_vp / d_vg.
template <class S>
void siamese_loss_backward(const SequenceFeatureT<S>& probe,
                           const SequenceFeatureT<S>& gallery, bool same,
                           S margin, TensorT<S>& d_vp, TensorT<S>& d_vg);

template <class S>
struct LossBreakdown {
  S total = 0;
  S identity_probe = 0;
  S identity_gallery = 0;
  S siamese = 0;
};

// L = I(v_p) + I(v_g) + E(v_p, v_g); one shared classifier serves both
// streams.
template <class S>
LossBreakdown<S> total_loss(const SequenceFeatureT<S>& probe,
                            const SequenceFeatureT<S>& gallery, int label_p,
                            int label_g, const ModelParamsT<S>& params,
                            const NetConfig& cfg);

// Forward + full reverse pass for one training pair. Gradients are
// accumulated into `grads`. When cfg.dropout > 0 and rng is given, dropout
// masks are drawn for the classifier inputs (training mode only).
template <class S>
LossBreakdown<S> pair_loss_and_grads(
    const std::vector<std::vector<TensorT<S>>>& probe_parts,
    const std::vector<std::vector<TensorT<S>>>& gallery_parts, int label_p,
    int label_g, const ModelParamsT<S>& params, ModelParamsT<S>& grads,
    const NetConfig& cfg, Pcg32* dropout_rng = nullptr, int threads = 1);

}  // namespace stfmm
