#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace stfmm {

// PCG32 (XSH-RR). Fully specified here so that seeded runs are reproducible
// across platforms and standard libraries; manifests record the algorithm
// name so checkpoints stay interpretable.
class Pcg32 {
 public:
  static constexpr const char* kAlgorithm = "pcg32";

  explicit Pcg32(std::uint64_t seed = 0x853c49e6748fea9bull) { reseed(seed); }

  void reseed(std::uint64_t seed, std::uint64_t stream = 0xda3e39cb94b95bdbull) {
    inc_ = (stream << 1u) | 1u;
    state_ = 0;
    next_u32();
    state_ += seed;
    next_u32();
  }

  std::uint32_t next_u32() {
    const std::uint64_t old = state_;
    state_ = old * 6364136223846793005ull + inc_;
    const auto xorshifted =
        static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    const auto rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
  }

  // Uniform in [0, bound). Multiply-shift mapping; bound must be > 0.
  std::uint32_t bounded(std::uint32_t bound) {
    return static_cast<std::uint32_t>(
        (static_cast<std::uint64_t>(next_u32()) * bound) >> 32u);
  }

  double uniform() { return next_u32() * (1.0 / 4294967296.0); }  // [0,1)

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  bool coin() { return (next_u32() >> 31u) != 0; }

  // State capture for deterministic resume from checkpoints.
  std::pair<std::uint64_t, std::uint64_t> save_state() const {
    return {state_, inc_};
  }
  void restore_state(std::uint64_t state, std::uint64_t inc) {
    state_ = state;
    inc_ = inc;
  }

 private:
  std::uint64_t state_ = 0;
  std::uint64_t inc_ = 0;
};

// Fisher-Yates with the project RNG, so shuffles are reproducible too.
template <class T, class Alloc>
void shuffle(std::vector<T, Alloc>& v, Pcg32& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = rng.bounded(static_cast<std::uint32_t>(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace stfmm
