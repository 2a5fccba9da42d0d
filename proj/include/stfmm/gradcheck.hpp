#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stfmm/net.hpp"
#include "stfmm/tensor.hpp"

// Independent finite-difference verification of every analytic gradient in
// the project. The checker only ever calls forward evaluations; analytic
// backward code is what gets judged, never reused here.
//
// All checks run in double precision (the extended-precision mode) with
// central differences at the given step. Errors are reported relative to
// max(1, |analytic|, |numeric|): absolute for sub-unit components, relative
// above, which keeps the comparison meaningful at the ~1e-6 truncation
// floor of a 1e-3 step.
namespace stfmm::gradcheck {

inline double rel_error(double a, double b) {
  const double denom = std::max({1.0, std::abs(a), std::abs(b)});
  return std::abs(a - b) / denom;
}

// Loss evaluation for the engine. When `selection_sig` is non-null the
// callee must fold every discrete choice it made (pooling argmax positions,
// hinge branch) into the signature; the engine skips coordinates whose +/-h
// evaluations land on different branches, where a finite difference is
// meaningless (kink skipping).
using LossFn = std::function<double(std::uint64_t* selection_sig)>;

struct FdStats {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // kink crossings
};

// Central differences over every element of every listed array, compared
// against the provided analytic gradients (index-aligned with `values`).
FdStats check_arrays(const LossFn& loss, const std::vector<TensorD*>& values,
                     const std::vector<const TensorD*>& analytic,
                     double step = 1e-3);

struct GroupResult {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  bool pass() const { return max_rel_err < tolerance; }
};

struct SuiteReport {
  std::vector<GroupResult> groups;
  bool all_pass() const {
    for (const auto& g : groups)
      if (!g.pass()) return false;
    return true;
  }
};

// Per-primitive checks, `instances` random cases each. Returned stats are
// the worst over all instances.
GroupResult check_conv2d(std::uint64_t seed, int instances);
GroupResult check_maxpool2d(std::uint64_t seed, int instances);
GroupResult check_tanh_map(std::uint64_t seed, int instances);
GroupResult check_linear(std::uint64_t seed, int instances);
GroupResult check_concat(std::uint64_t seed, int instances);
GroupResult check_mean_over_time(std::uint64_t seed, int instances);
GroupResult check_softmax_xent(std::uint64_t seed, int instances);

// Composite checks.
GroupResult check_spp_pool(std::uint64_t seed, int instances);
GroupResult check_rnn(std::uint64_t seed, int instances);
GroupResult check_part_cnn(std::uint64_t seed);  // 5x16x12 toy input
// N=2, d=4, T=3, frames 5x12x8; optionally with one parameter stream
// shared across all parts.
GroupResult check_total_loss(std::uint64_t seed, bool fully_shared = false);

// The full suite: all primitives (tolerance 1e-4) plus the end-to-end
// objective (tolerance 1e-3).
SuiteReport run_full_suite(std::uint64_t seed, int instances_per_primitive = 100);

}  // namespace stfmm::gradcheck
