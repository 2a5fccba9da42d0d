#include "stfmm/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "stfmm/rng.hpp"

namespace stfmm::gradcheck {

namespace {

TensorD rand_tensor(std::vector<int> shape, Pcg32& rng, double scale = 1.0) {
  TensorD t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(-scale, scale);
  return t;
}

double weighted_sum(const TensorD& t, const TensorD& weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < t.numel(); ++i) s += t.data[i] * weights.data[i];
  return s;
}

std::uint64_t hash_indices(const std::vector<std::int32_t>& idx,
                           std::uint64_t h = 1469598103934665603ull) {
  return fnv1a64(idx.data(), idx.size() * sizeof(std::int32_t), h);
}

void merge(GroupResult& g, const FdStats& st) {
  g.max_rel_err = std::max(g.max_rel_err, st.max_rel_err);
  g.checked += st.checked;
  g.skipped += st.skipped;
}

}  // namespace

FdStats check_arrays(const LossFn& loss, const std::vector<TensorD*>& values,
                     const std::vector<const TensorD*>& analytic,
                     double step) {
  FdStats st;
  std::uint64_t sig_center = 0;
  loss(&sig_center);
  for (std::size_t ai = 0; ai < values.size(); ++ai) {
    TensorD& v = *values[ai];
    const TensorD& g = *analytic[ai];
    for (std::size_t i = 0; i < v.numel(); ++i) {
      const double saved = v.data[i];
      std::uint64_t sig_plus = 0, sig_minus = 0;
      v.data[i] = saved + step;
      const double lp = loss(&sig_plus);
      v.data[i] = saved - step;
      const double lm = loss(&sig_minus);
      v.data[i] = saved;
      if (sig_plus != sig_center || sig_minus != sig_center) {
        ++st.skipped;  // perturbation crossed a discrete branch
        continue;
      }
      const double fd = (lp - lm) / (2.0 * step);
      st.max_rel_err = std::max(st.max_rel_err, rel_error(g.data[i], fd));
      ++st.checked;
    }
  }
  return st;
}

GroupResult check_conv2d(std::uint64_t seed, int instances) {
  GroupResult res{"conv2d", 0.0, 1e-4, 0, 0};
  Pcg32 rng(seed);
  for (int it = 0; it < instances; ++it) {
    const int c_in = 1 + static_cast<int>(rng.bounded(2));
    const int c_out = 1 + static_cast<int>(rng.bounded(3));
    const int h = 3 + static_cast<int>(rng.bounded(4));
    const int w = 3 + static_cast<int>(rng.bounded(4));
    const int k = rng.coin() ? 3 : 1;
    const int pad = static_cast<int>(rng.bounded(2));

    TensorD input = rand_tensor({c_in, h, w}, rng);
    TensorD kernels = rand_tensor({c_out, c_in, k, k}, rng);
    TensorD bias = rand_tensor({c_out}, rng);
    const TensorD out = ops::conv2d(input, kernels, bias, pad);
    const TensorD weights = rand_tensor(out.shape, rng);

    const auto grads = ops::conv2d_backward(input, kernels, pad, weights, true);
    const LossFn loss = [&](std::uint64_t*) {
      return weighted_sum(ops::conv2d(input, kernels, bias, pad), weights);
    };
    merge(res, check_arrays(loss, {&input, &kernels, &bias},
                            {&grads.input, &grads.kernels, &grads.bias}));
  }
  return res;
}

GroupResult check_maxpool2d(std::uint64_t seed, int instances) {
  GroupResult res{"maxpool2d", 0.0, 1e-4, 0, 0};
  Pcg32 rng(seed);
  for (int it = 0; it < instances; ++it) {
    const int c = 1 + static_cast<int>(rng.bounded(2));
    const int h = 2 + static_cast<int>(rng.bounded(5));
    const int w = 2 + static_cast<int>(rng.bounded(5));
    const int wh = 1 + static_cast<int>(rng.bounded(std::min(3, h)));
    const int ww = 1 + static_cast<int>(rng.bounded(std::min(3, w)));
    const int sh = 1 + static_cast<int>(rng.bounded(2));
    const int sw = 1 + static_cast<int>(rng.bounded(2));

    TensorD input = rand_tensor({c, h, w}, rng);
    const auto fwd = ops::maxpool2d(input, wh, ww, sh, sw);
    const TensorD weights = rand_tensor(fwd.output.shape, rng);
    const TensorD grad =
        ops::maxpool2d_backward(input.shape, fwd.argmax, weights);

    const LossFn loss = [&](std::uint64_t* sig) {
      const auto r = ops::maxpool2d(input, wh, ww, sh, sw);
      if (sig) *sig = hash_indices(r.argmax);
      return weighted_sum(r.output, weights);
    };
    merge(res, check_arrays(loss, {&input}, {&grad}));
  }
  return res;
}

GroupResult check_tanh_map(std::uint64_t seed, int instances) {
  GroupResult res{"tanh_map", 0.0, 1e-4, 0, 0};
  Pcg32 rng(seed);
  for (int it = 0; it < instances; ++it) {
    const int n = 1 + static_cast<int>(rng.bounded(12));
    TensorD input = rand_tensor({n}, rng, 2.0);
    const TensorD weights = rand_tensor({n}, rng);
    const TensorD grad = ops::tanh_backward(ops::tanh_map(input), weights);
    const LossFn loss = [&](std::uint64_t*) {
      return weighted_sum(ops::tanh_map(input), weights);
    };
    merge(res, check_arrays(loss, {&input}, {&grad}));
  }
  return res;
}

GroupResult check_linear(std::uint64_t seed, int instances) {
  GroupResult res{"linear", 0.0, 1e-4, 0, 0};
  Pcg32 rng(seed);
  for (int it = 0; it < instances; ++it) {
    const int d_in = 1 + static_cast<int>(rng.bounded(6));
    const int d_out = 1 + static_cast<int>(rng.bounded(5));
    const bool with_bias = rng.coin();

    TensorD input = rand_tensor({d_in}, rng);
    TensorD weight = rand_tensor({d_out, d_in}, rng);
    TensorD bias = rand_tensor({d_out}, rng);
    const TensorD weights = rand_tensor({d_out}, rng);
    const auto grads =
        ops::linear_backward(input, weight, with_bias, weights);

    const LossFn loss = [&](std::uint64_t*) {
      return weighted_sum(
          ops::linear(input, weight, with_bias ? &bias : nullptr), weights);
    };
    std::vector<TensorD*> values{&input, &weight};
    std::vector<const TensorD*> analytic{&grads.input, &grads.weight};
    if (with_bias) {
      values.push_back(&bias);
      analytic.push_back(&grads.bias);
    }
    merge(res, check_arrays(loss, values, analytic));
  }
  return res;
}

GroupResult check_concat(std::uint64_t seed, int instances) {
  GroupResult res{"concat", 0.0, 1e-4, 0, 0};
  Pcg32 rng(seed);
  for (int it = 0; it < instances; ++it) {
    const int count = 1 + static_cast<int>(rng.bounded(4));
    std::vector<TensorD> parts;
    std::vector<int> lengths;
    for (int i = 0; i < count; ++i) {
      const int n = 1 + static_cast<int>(rng.bounded(5));
      lengths.push_back(n);
      parts.push_back(rand_tensor({n}, rng));
    }
    const TensorD joined = ops::concat(parts);
    const TensorD weights = rand_tensor(joined.shape, rng);
    const auto grads = ops::concat_backward(lengths, weights);

    const LossFn loss = [&](std::uint64_t*) {
      return weighted_sum(ops::concat(parts), weights);
    };
    std::vector<TensorD*> values;
    std::vector<const TensorD*> analytic;
    for (int i = 0; i < count; ++i) {
      values.push_back(&parts[static_cast<std::size_t>(i)]);
      analytic.push_back(&grads[static_cast<std::size_t>(i)]);
    }
    merge(res, check_arrays(loss, values, analytic));
  }
  return res;
}

GroupResult check_mean_over_time(std::uint64_t seed, int instances) {
  GroupResult res{"mean_over_time", 0.0, 1e-4, 0, 0};
  Pcg32 rng(seed);
  for (int it = 0; it < instances; ++it) {
    const int t_count = 1 + static_cast<int>(rng.bounded(5));
    const int n = 1 + static_cast<int>(rng.bounded(4));
    std::vector<TensorD> steps;
    for (int t = 0; t < t_count; ++t) steps.push_back(rand_tensor({n}, rng));
    const TensorD weights = rand_tensor({n}, rng);
    const TensorD grad = ops::mean_over_time_backward(t_count, weights);

    const LossFn loss = [&](std::uint64_t*) {
      return weighted_sum(ops::mean_over_time(steps), weights);
    };
    std::vector<TensorD*> values;
    std::vector<const TensorD*> analytic;
    for (int t = 0; t < t_count; ++t) {
      values.push_back(&steps[static_cast<std::size_t>(t)]);
      analytic.push_back(&grad);  // every step receives the same 1/T share
    }
    merge(res, check_arrays(loss, values, analytic));
  }
  return res;
}

GroupResult check_softmax_xent(std::uint64_t seed, int instances) {
  GroupResult res{"softmax_xent", 0.0, 1e-4, 0, 0};
  Pcg32 rng(seed);
  for (int it = 0; it < instances; ++it) {
    const int classes = 2 + static_cast<int>(rng.bounded(5));
    TensorD logits = rand_tensor({classes}, rng, 2.0);
    const int label = static_cast<int>(rng.bounded(static_cast<std::uint32_t>(classes)));
    const TensorD grad = ops::softmax_xent_backward(logits, label);

    const LossFn loss = [&](std::uint64_t*) {
      return ops::softmax_xent(logits, label);
    };
    merge(res, check_arrays(loss, {&logits}, {&grad}));
  }
  return res;
}

GroupResult check_spp_pool(std::uint64_t seed, int instances) {
  GroupResult res{"spp_pool", 0.0, 1e-4, 0, 0};
  Pcg32 rng(seed);
  const std::vector<int> bins{8, 4, 2, 1};
  for (int it = 0; it < instances; ++it) {
    const int c = 1 + static_cast<int>(rng.bounded(2));
    const int h = 1 + static_cast<int>(rng.bounded(9));
    const int w = 1 + static_cast<int>(rng.bounded(9));
    TensorD map = rand_tensor({c, h, w}, rng);

    std::vector<std::int32_t> argmax;
    const TensorD out = spp_pool(map, bins, &argmax);
    const TensorD weights = rand_tensor(out.shape, rng);
    const TensorD grad = spp_pool_backward(map.shape, argmax, weights);

    const LossFn loss = [&](std::uint64_t* sig) {
      std::vector<std::int32_t> am;
      const TensorD o = spp_pool(map, bins, &am);
      if (sig) *sig = hash_indices(am);
      return weighted_sum(o, weights);
    };
    merge(res, check_arrays(loss, {&map}, {&grad}));
  }
  return res;
}

GroupResult check_rnn(std::uint64_t seed, int instances) {
  GroupResult res{"rnn_forward", 0.0, 1e-4, 0, 0};
  Pcg32 rng(seed);
  for (int it = 0; it < instances; ++it) {
    const int t_count = 1 + static_cast<int>(rng.bounded(3));
    const int feat = 4, d = 3;
    std::vector<TensorD> spp_seq;
    for (int t = 0; t < t_count; ++t)
      spp_seq.push_back(rand_tensor({feat}, rng));
    TensorD u = rand_tensor({d, feat}, rng, 0.7);
    TensorD w = rand_tensor({d, d}, rng, 0.7);
    std::vector<TensorD> weights;
    for (int t = 0; t < t_count; ++t) weights.push_back(rand_tensor({d}, rng));

    std::vector<TensorD> o, r;
    rnn_forward(spp_seq, u, w, o, r);
    TensorD d_u({d, feat}), d_w({d, d});
    const std::vector<TensorD> d_spp =
        rnn_backward(spp_seq, r, u, w, weights, d_u, d_w);

    const LossFn loss = [&](std::uint64_t*) {
      std::vector<TensorD> oo, rr;
      rnn_forward(spp_seq, u, w, oo, rr);
      double s = 0.0;
      for (int t = 0; t < t_count; ++t)
        s += weighted_sum(oo[static_cast<std::size_t>(t)],
                          weights[static_cast<std::size_t>(t)]);
      return s;
    };
    std::vector<TensorD*> values{&u, &w};
    std::vector<const TensorD*> analytic{&d_u, &d_w};
    for (int t = 0; t < t_count; ++t) {
      values.push_back(&spp_seq[static_cast<std::size_t>(t)]);
      analytic.push_back(&d_spp[static_cast<std::size_t>(t)]);
    }
    merge(res, check_arrays(loss, values, analytic));
  }
  return res;
}

namespace {

NetConfig tiny_config(int parts) {
  NetConfig cfg;
  cfg.parts = parts;
  cfg.conv_channels = {2, 3, 3};
  cfg.kernel = 5;
  cfg.padding = 2;
  cfg.embed_dim = 4;
  cfg.classes = 2;
  cfg.margin = 2.0f;
  return cfg;
}

// Pointers to all parameter arrays and their analytic gradients, in the
// canonical for_each order.
void collect_params(ModelParamsT<double>& params, ModelParamsT<double>& grads,
                    std::vector<TensorD*>& values,
                    std::vector<const TensorD*>& analytic) {
  params.for_each([&values](const std::string&, TensorD& t) {
    values.push_back(&t);
  });
  grads.for_each([&analytic](const std::string&, TensorD& t) {
    analytic.push_back(&t);
  });
}

std::uint64_t hash_traces(const std::vector<PartTrace<double>>& traces,
                          std::uint64_t h) {
  for (const auto& pt : traces)
    for (const auto& ft : pt.frames) {
      h = hash_indices(ft.pool1.argmax, h);
      h = hash_indices(ft.pool2.argmax, h);
      h = hash_indices(ft.spp_argmax, h);
    }
  return h;
}

}  // namespace

GroupResult check_part_cnn(std::uint64_t seed) {
  GroupResult res{"part_cnn", 0.0, 1e-4, 0, 0};
  Pcg32 rng(seed);
  const NetConfig cfg = tiny_config(1);
  cfg.validate(16, 12);

  for (int it = 0; it < 2; ++it) {
    ModelParamsT<double> params =
        init_params<double>(cfg, seed + static_cast<std::uint64_t>(it));
    StreamParamsT<double>& sp = params.streams[0];
    TensorD frame = rand_tensor({5, 16, 12}, rng);

    FrameTrace<double> trace;
    const TensorD out = part_cnn(frame, sp, cfg, &trace);
    const TensorD weights = rand_tensor(out.shape, rng);

    ModelParamsT<double> grads = zeros_like_params(params);
    part_cnn_backward(frame, trace, weights, sp, cfg, grads.streams[0]);

    const LossFn loss = [&](std::uint64_t* sig) {
      FrameTrace<double> tr;
      const TensorD o = part_cnn(frame, sp, cfg, &tr);
      if (sig) {
        std::uint64_t h = hash_indices(tr.pool1.argmax);
        h = hash_indices(tr.pool2.argmax, h);
        *sig = hash_indices(tr.spp_argmax, h);
      }
      return weighted_sum(o, weights);
    };

    std::vector<TensorD*> values;
    std::vector<const TensorD*> analytic;
    for (std::size_t l = 0; l < 3; ++l) {
      values.push_back(&sp.conv_kernel[l]);
      values.push_back(&sp.conv_bias[l]);
      analytic.push_back(&grads.streams[0].conv_kernel[l]);
      analytic.push_back(&grads.streams[0].conv_bias[l]);
    }
    merge(res, check_arrays(loss, values, analytic));
  }
  return res;
}

GroupResult check_total_loss(std::uint64_t seed, bool fully_shared) {
  GroupResult res{fully_shared ? "total_loss_shared" : "total_loss", 0.0, 1e-3,
                  0, 0};
  Pcg32 rng(seed);
  NetConfig cfg = tiny_config(2);
  cfg.fully_shared = fully_shared;
  cfg.validate(12, 8);
  const int t_count = 3;

  // One positive and one negative pair.
  for (int same = 1; same >= 0; --same) {
    ModelParamsT<double> params = init_params<double>(
        cfg, seed + static_cast<std::uint64_t>(same) + 17);
    auto make_parts = [&] {
      std::vector<std::vector<TensorD>> parts(2);
      for (auto& seq : parts)
        for (int t = 0; t < t_count; ++t)
          seq.push_back(rand_tensor({5, 12, 8}, rng));
      return parts;
    };
    const auto probe = make_parts();
    const auto gallery = make_parts();
    const int label_p = 0;
    const int label_g = same ? 0 : 1;

    ModelParamsT<double> grads = zeros_like_params(params);
    pair_loss_and_grads(probe, gallery, label_p, label_g, params, grads, cfg,
                        nullptr, 1);

    const LossFn loss = [&](std::uint64_t* sig) {
      std::vector<PartTrace<double>> tp, tg;
      const auto fp = forward_sequence(probe, params, cfg, &tp, 1);
      const auto fg = forward_sequence(gallery, params, cfg, &tg, 1);
      const auto lb = total_loss(fp, fg, label_p, label_g, params, cfg);
      if (sig) {
        std::uint64_t h = hash_traces(tp, 1469598103934665603ull);
        h = hash_traces(tg, h);
        const unsigned char hinge_active =
            (label_p != label_g &&
             siamese_loss(fp, fg, false, static_cast<double>(cfg.margin)) > 0)
                ? 1
                : 0;
        *sig = fnv1a64(&hinge_active, 1, h);
      }
      return static_cast<double>(lb.total);
    };

    std::vector<TensorD*> values;
    std::vector<const TensorD*> analytic;
    collect_params(params, grads, values, analytic);
    merge(res, check_arrays(loss, values, analytic));
  }
  return res;
}

SuiteReport run_full_suite(std::uint64_t seed, int instances_per_primitive) {
  SuiteReport report;
  const int n = instances_per_primitive;
  report.groups.push_back(check_conv2d(seed + 1, n));
  report.groups.push_back(check_maxpool2d(seed + 2, n));
  report.groups.push_back(check_tanh_map(seed + 3, n));
  report.groups.push_back(check_linear(seed + 4, n));
  report.groups.push_back(check_concat(seed + 5, n));
  report.groups.push_back(check_mean_over_time(seed + 6, n));
  report.groups.push_back(check_softmax_xent(seed + 7, n));
  report.groups.push_back(check_spp_pool(seed + 8, n / 2 + 1));
  report.groups.push_back(check_rnn(seed + 9, n / 2 + 1));
  report.groups.push_back(check_part_cnn(seed + 10));
  report.groups.push_back(check_total_loss(seed + 11));
  return report;
}

}  // namespace stfmm::gradcheck
