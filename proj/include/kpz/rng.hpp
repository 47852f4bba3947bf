#pragma once

#include <array>
#include <cstdint>
#include <cmath>
#include <limits>

namespace kpz {

/// Identifies one trajectory: every random draw of a trial is a pure function
/// of (master_seed, trial_index) and the stream purpose.
struct RngSeed {
  std::uint64_t master_seed = 0;
  std::uint64_t trial_index = 0;

  friend bool operator==(const RngSeed&, const RngSeed&) = default;
};

/// Independent substreams of one trial. Values are part of the reproducibility
/// contract; never renumber.
enum class StreamPurpose : std::uint32_t {
  InitialCondition = 1,
  Dynamics = 2,
  LppWeights = 3,
  Synthetic = 4,
};

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
class Philox4x32 {
 public:
  using Block = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Block generate(Block counter, Key key) {
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = static_cast<std::uint64_t>(0xD2511F53u) * counter[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(0xCD9E8D57u) * counter[2];
      counter = {static_cast<std::uint32_t>(p1 >> 32) ^ counter[1] ^ key[0], static_cast<std::uint32_t>(p1),
                 static_cast<std::uint32_t>(p0 >> 32) ^ counter[3] ^ key[1], static_cast<std::uint32_t>(p0)};
      key[0] += 0x9E3779B9u;
      key[1] += 0xBB67AE85u;
    }
    return counter;
  }
};

/// Random stream keyed by (master_seed, trial_index, purpose). The block
/// counter advances sequentially; distinct keys give statistically
/// independent streams by construction, with no shared state.
class RandomStream {
 public:
  using result_type = std::uint64_t;

  RandomStream(RngSeed seed, StreamPurpose purpose);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    if (buffered_ == 0) refill();
    return buffer_[2 - buffered_--];
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
  /// Uniform on (0, 1].
  double uniform_open_below() { return static_cast<double>(((*this)() >> 11) + 1) * 0x1.0p-53; }
  /// Exponential with the given rate (mean 1/rate).
  double exponential(double rate) { return -std::log(uniform_open_below()) / rate; }
  bool bernoulli(double p) { return uniform() < p; }
  /// Uniform integer in [0, n); n > 0.
  std::uint64_t below(std::uint64_t n);
  double normal();

  std::uint64_t blocks_consumed() const { return block_; }

 private:
  void refill() {
    // 48-bit block counter, purpose tag in the top 16 bits of word 1.
    const Philox4x32::Block ctr{static_cast<std::uint32_t>(block_),
                                static_cast<std::uint32_t>(block_ >> 32) ^ (purpose_ << 16), trial_lo_, trial_hi_};
    const auto out = Philox4x32::generate(ctr, key_);
    ++block_;
    buffer_[0] = (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
    buffer_[1] = (static_cast<std::uint64_t>(out[3]) << 32) | out[2];
    buffered_ = 2;
  }

  Philox4x32::Key key_{};
  std::uint32_t trial_lo_ = 0;
  std::uint32_t trial_hi_ = 0;
  std::uint32_t purpose_ = 0;
  std::uint64_t block_ = 0;
  std::array<std::uint64_t, 2> buffer_{};
  int buffered_ = 0;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

}  // namespace kpz
