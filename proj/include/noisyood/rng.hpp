#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

namespace noisyood {

// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
//
// A stream is identified by a 64-bit key; output block i is
// philox(key, counter = (i, 0, 0, 0)) and yields four 32-bit words consumed in
// order. split() derives an independent child key by hashing the parent key
// with a label, so sub-streams (per epoch, per replicate, per cell) never
// depend on how much of the parent stream was consumed.
class Philox {
 public:
  explicit Philox(uint64_t key) : key_(key) {}

  static std::array<uint32_t, 4> block(uint64_t key, uint64_t counter);

  Philox split(uint64_t label) const;
  Philox split(std::string_view label) const;

  uint64_t key() const { return key_; }

  uint32_t next_u32();
  uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  // Uniform integer in [0, bound) by rejection; bound > 0.
  uint64_t below(uint64_t bound);
  // Standard normal via Box-Muller; the second variate is cached.
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  uint64_t key_;
  uint64_t counter_ = 0;
  std::array<uint32_t, 4> buffer_{};
  int buffered_ = 0;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

// SplitMix64 finalizer; used for key derivation.
uint64_t mix64(uint64_t x);

}  // namespace noisyood
