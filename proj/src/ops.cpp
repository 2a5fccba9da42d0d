#include "stfmm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace stfmm::ops {

namespace {

template <class S>
TensorT<S> zero_pad(const TensorT<S>& x, int pad) {
  if (pad == 0) return x;
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  TensorT<S> out({c, h + 2 * pad, w + 2 * pad});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y) {
      const S* src = &x.at(ci, y, 0);
      S* dst = &out.at(ci, y + pad, pad);
      std::copy(src, src + w, dst);
    }
  return out;
}

std::string shape_str(const std::vector<int>& s) {
  std::string r = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) r += "x";
    r += std::to_string(s[i]);
  }
  return r + ")";
}

}  // namespace

template <class S>
TensorT<S> conv2d(const TensorT<S>& input, const TensorT<S>& kernels,
                  const TensorT<S>& bias, int padding) {
  require(input.rank() == 3, "conv2d: input must be rank 3, got " +
                                 shape_str(input.shape));
  require(kernels.rank() == 4, "conv2d: kernels must be rank 4, got " +
                                   shape_str(kernels.shape));
  const int c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int c_out = kernels.dim(0), k = kernels.dim(2);
  require(kernels.dim(1) == c_in,
          "conv2d: kernel expects " + std::to_string(kernels.dim(1)) +
              " input channels, input has " + std::to_string(c_in));
  require(kernels.dim(3) == k, "conv2d: kernels must be square");
  require(k % 2 == 1, "conv2d: kernel size must be odd");
  require(padding >= 0, "conv2d: negative padding");
  require(bias.rank() == 1 && bias.dim(0) == c_out,
          "conv2d: bias must have one entry per output channel");
  const int ho = h + 2 * padding - k + 1;
  const int wo = w + 2 * padding - k + 1;
  require(ho >= 1 && wo >= 1, "conv2d: kernel larger than padded input");

  const TensorT<S> xp = zero_pad(input, padding);
  const int wp = xp.dim(2);
  TensorT<S> out({c_out, ho, wo});

  for (int co = 0; co < c_out; ++co) {
    S* obase = &out.at(co, 0, 0);
    const S b = bias[static_cast<std::size_t>(co)];
    std::fill(obase, obase + static_cast<std::size_t>(ho) * wo, b);
    for (int ci = 0; ci < c_in; ++ci) {
      const S* xbase = &xp.at(ci, 0, 0);
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const S wgt = kernels.data[((static_cast<std::size_t>(co) * c_in +
                                       ci) * k + ky) * k + kx];
          for (int y = 0; y < ho; ++y) {
            const S* in_row = xbase + static_cast<std::size_t>(y + ky) * wp + kx;
            S* out_row = obase + static_cast<std::size_t>(y) * wo;
            for (int x = 0; x < wo; ++x) out_row[x] += wgt * in_row[x];
          }
        }
    }
  }
  return out;
}

template <class S>
Conv2dGrads<S> conv2d_backward(const TensorT<S>& input,
                               const TensorT<S>& kernels, int padding,
                               const TensorT<S>& out_grad,
                               bool want_input_grad) {
  const int c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int c_out = kernels.dim(0), k = kernels.dim(2);
  const int ho = h + 2 * padding - k + 1;
  const int wo = w + 2 * padding - k + 1;
  require(out_grad.rank() == 3 && out_grad.dim(0) == c_out &&
              out_grad.dim(1) == ho && out_grad.dim(2) == wo,
          "conv2d_backward: upstream gradient shape mismatch");

  Conv2dGrads<S> g;
  g.kernels = TensorT<S>(kernels.shape);
  g.bias = TensorT<S>({c_out});

  const TensorT<S> xp = zero_pad(input, padding);
  const int hp = xp.dim(1), wp = xp.dim(2);
  TensorT<S> dxp({c_in, hp, wp});

  for (int co = 0; co < c_out; ++co) {
    const S* gbase = &out_grad.at(co, 0, 0);
    S bsum = 0;
    for (std::size_t i = 0; i < static_cast<std::size_t>(ho) * wo; ++i)
      bsum += gbase[i];
    g.bias[static_cast<std::size_t>(co)] = bsum;

    for (int ci = 0; ci < c_in; ++ci) {
      const S* xbase = &xp.at(ci, 0, 0);
      S* dxbase = &dxp.at(ci, 0, 0);
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const std::size_t kidx =
              ((static_cast<std::size_t>(co) * c_in + ci) * k + ky) * k + kx;
          const S wgt = kernels.data[kidx];
          S wsum = 0;
          for (int y = 0; y < ho; ++y) {
            const S* grow = gbase + static_cast<std::size_t>(y) * wo;
            const S* xrow = xbase + static_cast<std::size_t>(y + ky) * wp + kx;
            S* dxrow = dxbase + static_cast<std::size_t>(y + ky) * wp + kx;
            for (int x = 0; x < wo; ++x) {
              wsum += grow[x] * xrow[x];
              if (want_input_grad) dxrow[x] += wgt * grow[x];
            }
          }
          g.kernels.data[kidx] += wsum;
        }
    }
  }

  if (want_input_grad) {
    g.input = TensorT<S>({c_in, h, w});
    for (int ci = 0; ci < c_in; ++ci)
      for (int y = 0; y < h; ++y) {
        const S* src = &dxp.at(ci, y + padding, padding);
        S* dst = &g.input.at(ci, y, 0);
        std::copy(src, src + w, dst);
      }
  }
  return g;
}

template <class S>
MaxPoolResult<S> maxpool2d(const TensorT<S>& input, int window_h, int window_w,
                           int stride_h, int stride_w) {
  require(input.rank() == 3, "maxpool2d: input must be rank 3");
  require(window_h > 0 && window_w > 0 && stride_h > 0 && stride_w > 0,
          "maxpool2d: window and stride must be positive");
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  require(window_h <= h && window_w <= w,
          "maxpool2d: window " + std::to_string(window_h) + "x" +
              std::to_string(window_w) + " larger than input " +
              std::to_string(h) + "x" + std::to_string(w));
  const int ho = (h - window_h) / stride_h + 1;
  const int wo = (w - window_w) / stride_w + 1;

  MaxPoolResult<S> r;
  r.output = TensorT<S>({c, ho, wo});
  r.argmax.resize(r.output.numel());

  std::size_t oi = 0;
  for (int ci = 0; ci < c; ++ci) {
    const S* xbase = &input.at(ci, 0, 0);
    const std::size_t cbase = static_cast<std::size_t>(ci) * h * w;
    for (int y = 0; y < ho; ++y)
      for (int x = 0; x < wo; ++x, ++oi) {
        const int y0 = y * stride_h, x0 = x * stride_w;
        S best = xbase[static_cast<std::size_t>(y0) * w + x0];
        std::int32_t best_idx =
            static_cast<std::int32_t>(cbase + static_cast<std::size_t>(y0) * w + x0);
        for (int dy = 0; dy < window_h; ++dy)
          for (int dx = 0; dx < window_w; ++dx) {
            const S v = xbase[static_cast<std::size_t>(y0 + dy) * w + (x0 + dx)];
            if (v > best) {  // strict: first occurrence wins ties
              best = v;
              best_idx = static_cast<std::int32_t>(
                  cbase + static_cast<std::size_t>(y0 + dy) * w + (x0 + dx));
            }
          }
        r.output.data[oi] = best;
        r.argmax[oi] = best_idx;
      }
  }
  return r;
}

template <class S>
TensorT<S> maxpool2d_backward(const std::vector<int>& input_shape,
                              const std::vector<std::int32_t>& argmax,
                              const TensorT<S>& out_grad) {
  require(argmax.size() == out_grad.numel(),
          "maxpool2d_backward: argmax/gradient size mismatch");
  TensorT<S> g(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i)
    g.data[static_cast<std::size_t>(argmax[i])] += out_grad.data[i];
  return g;
}

template <class S>
TensorT<S> tanh_map(const TensorT<S>& input) {
  TensorT<S> out(input.shape);
  for (std::size_t i = 0; i < input.numel(); ++i)
    out.data[i] = std::tanh(input.data[i]);
  return out;
}

template <class S>
TensorT<S> tanh_backward(const TensorT<S>& output, const TensorT<S>& out_grad) {
  require(output.same_shape(out_grad), "tanh_backward: shape mismatch");
  TensorT<S> g(output.shape);
  for (std::size_t i = 0; i < output.numel(); ++i)
    g.data[i] = out_grad.data[i] * (S(1) - output.data[i] * output.data[i]);
  return g;
}

template <class S>
TensorT<S> linear(const TensorT<S>& input, const TensorT<S>& weight,
                  const TensorT<S>* bias) {
  require(input.rank() == 1, "linear: input must be rank 1");
  require(weight.rank() == 2, "linear: weight must be rank 2");
  const int d_in = input.dim(0), d_out = weight.dim(0);
  require(weight.dim(1) == d_in,
          "linear: weight expects input of size " +
              std::to_string(weight.dim(1)) + ", got " + std::to_string(d_in));
  if (bias)
    require(bias->rank() == 1 && bias->dim(0) == d_out,
            "linear: bias size mismatch");

  TensorT<S> out({d_out});
  const S* x = input.ptr();
  for (int r = 0; r < d_out; ++r) {
    const S* wrow = weight.ptr() + static_cast<std::size_t>(r) * d_in;
    S acc = bias ? bias->data[static_cast<std::size_t>(r)] : S(0);
    for (int i = 0; i < d_in; ++i) acc += wrow[i] * x[i];
    out.data[static_cast<std::size_t>(r)] = acc;
  }
  return out;
}

template <class S>
LinearGrads<S> linear_backward(const TensorT<S>& input,
                               const TensorT<S>& weight, bool has_bias,
                               const TensorT<S>& out_grad) {
  const int d_in = input.dim(0), d_out = weight.dim(0);
  require(out_grad.rank() == 1 && out_grad.dim(0) == d_out,
          "linear_backward: upstream gradient size mismatch");

  LinearGrads<S> g;
  g.input = TensorT<S>({d_in});
  g.weight = TensorT<S>(weight.shape);
  if (has_bias) g.bias = out_grad;

  const S* x = input.ptr();
  for (int r = 0; r < d_out; ++r) {
    const S gr = out_grad.data[static_cast<std::size_t>(r)];
    const S* wrow = weight.ptr() + static_cast<std::size_t>(r) * d_in;
    S* dwrow = g.weight.ptr() + static_cast<std::size_t>(r) * d_in;
    S* dx = g.input.ptr();
    for (int i = 0; i < d_in; ++i) {
      dwrow[i] += gr * x[i];
      dx[i] += gr * wrow[i];
    }
  }
  return g;
}

template <class S>
TensorT<S> concat(const std::vector<TensorT<S>>& parts) {
  require(!parts.empty(), "concat: empty part list");
  int total = 0;
  for (const auto& p : parts) {
    require(p.rank() == 1, "concat: parts must be rank 1");
    total += p.dim(0);
  }
  TensorT<S> out({total});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data.begin(), p.data.end(), out.data.begin() + off);
    off += p.numel();
  }
  return out;
}

template <class S>
std::vector<TensorT<S>> concat_backward(const std::vector<int>& part_lengths,
                                        const TensorT<S>& out_grad) {
  require(!part_lengths.empty(), "concat_backward: empty part list");
  std::size_t total = 0;
  for (int n : part_lengths) total += static_cast<std::size_t>(n);
  require(out_grad.rank() == 1 && out_grad.numel() == total,
          "concat_backward: gradient length mismatch");
  std::vector<TensorT<S>> grads;
  grads.reserve(part_lengths.size());
  std::size_t off = 0;
  for (int n : part_lengths) {
    TensorT<S> g({n});
    std::copy(out_grad.data.begin() + off, out_grad.data.begin() + off + n,
              g.data.begin());
    off += static_cast<std::size_t>(n);
    grads.push_back(std::move(g));
  }
  return grads;
}

namespace {

// Pairwise tree sum over steps [lo, hi) to keep power-of-two means exact.
template <class S>
TensorT<S> pairwise_sum(const std::vector<TensorT<S>>& steps, std::size_t lo,
                        std::size_t hi) {
  if (hi - lo == 1) return steps[lo];
  const std::size_t mid = lo + (hi - lo) / 2;
  TensorT<S> a = pairwise_sum(steps, lo, mid);
  const TensorT<S> b = pairwise_sum(steps, mid, hi);
  for (std::size_t i = 0; i < a.numel(); ++i) a.data[i] += b.data[i];
  return a;
}

}  // namespace

template <class S>
TensorT<S> mean_over_time(const std::vector<TensorT<S>>& steps) {
  require(!steps.empty(), "mean_over_time: empty step list");
  for (const auto& s : steps)
    require(s.same_shape(steps.front()), "mean_over_time: shape mismatch");
  TensorT<S> sum = pairwise_sum(steps, 0, steps.size());
  const S inv = S(1) / static_cast<S>(steps.size());
  for (auto& v : sum.data) v *= inv;
  return sum;
}

template <class S>
TensorT<S> mean_over_time_backward(int step_count, const TensorT<S>& out_grad) {
  require(step_count >= 1, "mean_over_time_backward: empty step list");
  TensorT<S> g(out_grad.shape);
  const S inv = S(1) / static_cast<S>(step_count);
  for (std::size_t i = 0; i < g.numel(); ++i) g.data[i] = out_grad.data[i] * inv;
  return g;
}

template <class S>
S softmax_xent(const TensorT<S>& logits, int label) {
  require(logits.rank() == 1, "softmax_xent: logits must be rank 1");
  const int c = logits.dim(0);
  require(label >= 0 && label < c,
          "softmax_xent: label " + std::to_string(label) +
              " out of range for " + std::to_string(c) + " classes");
  S mx = logits.data[0];
  for (S v : logits.data) mx = std::max(mx, v);
  S sum = 0;
  for (S v : logits.data) sum += std::exp(v - mx);
  return std::log(sum) + mx - logits.data[static_cast<std::size_t>(label)];
}

template <class S>
TensorT<S> softmax_xent_backward(const TensorT<S>& logits, int label) {
  const int c = logits.dim(0);
  require(label >= 0 && label < c, "softmax_xent_backward: label out of range");
  S mx = logits.data[0];
  for (S v : logits.data) mx = std::max(mx, v);
  TensorT<S> g(logits.shape);
  S sum = 0;
  for (std::size_t i = 0; i < g.numel(); ++i) {
    g.data[i] = std::exp(logits.data[i] - mx);
    sum += g.data[i];
  }
  const S inv = S(1) / sum;
  for (auto& v : g.data) v *= inv;
  g.data[static_cast<std::size_t>(label)] -= S(1);
  return g;
}

#define STFMM_INSTANTIATE_OPS(S)                                               \
  template TensorT<S> conv2d<S>(const TensorT<S>&, const TensorT<S>&,          \
                                const TensorT<S>&, int);                       \
  template Conv2dGrads<S> conv2d_backward<S>(                                  \
      const TensorT<S>&, const TensorT<S>&, int, const TensorT<S>&, bool);     \
  template MaxPoolResult<S> maxpool2d<S>(const TensorT<S>&, int, int, int,     \
                                         int);                                 \
  template TensorT<S> maxpool2d_backward<S>(const std::vector<int>&,           \
                                            const std::vector<std::int32_t>&,  \
                                            const TensorT<S>&);                \
  template TensorT<S> tanh_map<S>(const TensorT<S>&);                          \
  template TensorT<S> tanh_backward<S>(const TensorT<S>&, const TensorT<S>&);  \
  template TensorT<S> linear<S>(const TensorT<S>&, const TensorT<S>&,          \
                                const TensorT<S>*);                            \
  template LinearGrads<S> linear_backward<S>(const TensorT<S>&,                \
                                             const TensorT<S>&, bool,          \
                                             const TensorT<S>&);               \
  template TensorT<S> concat<S>(const std::vector<TensorT<S>>&);               \
  template std::vector<TensorT<S>> concat_backward<S>(const std::vector<int>&, \
                                                      const TensorT<S>&);      \
  template TensorT<S> mean_over_time<S>(const std::vector<TensorT<S>>&);       \
  template TensorT<S> mean_over_time_backward<S>(int, const TensorT<S>&);      \
  template S softmax_xent<S>(const TensorT<S>&, int);                          \
  template TensorT<S> softmax_xent_backward<S>(const TensorT<S>&, int);

STFMM_INSTANTIATE_OPS(float)
STFMM_INSTANTIATE_OPS(double)

#undef STFMM_INSTANTIATE_OPS

}  // namespace stfmm::ops
