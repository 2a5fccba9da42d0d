#pragma once

#include <cstdint>
#include <vector>

#include "stfmm/tensor.hpp"

// Differentiable primitives the network is assembled from. Every forward has
// a paired backward; there is no autograd graph -- composites wire the
// reverse passes by hand in fixed order. All functions are pure (pooling
// argmax caches are returned to the caller, never stored globally).
namespace stfmm::ops {

// Cross-correlation, stride 1, explicit zero padding.
// input [C_in,H,W], kernels [C_out,C_in,K,K] with K odd, bias [C_out].
// Output [C_out, H+2*padding-K+1, W+2*padding-K+1].
template <class S>
TensorT<S> conv2d(const TensorT<S>& input, const TensorT<S>& kernels,
                  const TensorT<S>& bias, int padding);

template <class S>
struct Conv2dGrads {
  TensorT<S> input;
  TensorT<S> kernels;
  TensorT<S> bias;
};

// want_input_grad=false skips the input gradient (first layer of a network).
template <class S>
Conv2dGrads<S> conv2d_backward(const TensorT<S>& input,
                               const TensorT<S>& kernels, int padding,
                               const TensorT<S>& out_grad,
                               bool want_input_grad = true);

template <class S>
struct MaxPoolResult {
  TensorT<S> output;
  std::vector<std::int32_t> argmax;  // flat input index per output element
};

template <class S>
MaxPoolResult<S> maxpool2d(const TensorT<S>& input, int window_h, int window_w,
                           int stride_h, int stride_w);

// Routes out_grad to the recorded argmax positions (accumulating, so
// overlapping windows are handled).
template <class S>
TensorT<S> maxpool2d_backward(const std::vector<int>& input_shape,
                              const std::vector<std::int32_t>& argmax,
                              const TensorT<S>& out_grad);

template <class S>
TensorT<S> tanh_map(const TensorT<S>& input);

// `output` is the forward result: d_in = out_grad * (1 - output^2).
template <class S>
TensorT<S> tanh_backward(const TensorT<S>& output, const TensorT<S>& out_grad);

// weight [d_out,d_in] * input [d_in] (+ bias [d_out] when non-null).
template <class S>
TensorT<S> linear(const TensorT<S>& input, const TensorT<S>& weight,
                  const TensorT<S>* bias);

template <class S>
struct LinearGrads {
  TensorT<S> input;
  TensorT<S> weight;
  TensorT<S> bias;  // empty when the layer has no bias
};

template <class S>
LinearGrads<S> linear_backward(const TensorT<S>& input,
                               const TensorT<S>& weight, bool has_bias,
                               const TensorT<S>& out_grad);

// Order-preserving concatenation of 1-d tensors.
template <class S>
TensorT<S> concat(const std::vector<TensorT<S>>& parts);

// Slices the upstream gradient back to the original part lengths.
template <class S>
std::vector<TensorT<S>> concat_backward(const std::vector<int>& part_lengths,
                                        const TensorT<S>& out_grad);

// Elementwise mean over a list of equally shaped tensors. Pairwise
// summation, so the mean of 2^k copies of x is exactly x.
template <class S>
TensorT<S> mean_over_time(const std::vector<TensorT<S>>& steps);

// Every step receives out_grad / T; returned once, callers reuse it.
template <class S>
TensorT<S> mean_over_time_backward(int step_count, const TensorT<S>& out_grad);

// Max-subtracted softmax cross-entropy against a single class index.
template <class S>
S softmax_xent(const TensorT<S>& logits, int label);

// Gradient w.r.t. logits: softmax(logits) - onehot(label).
template <class S>
TensorT<S> softmax_xent_backward(const TensorT<S>& logits, int label);

}  // namespace stfmm::ops
