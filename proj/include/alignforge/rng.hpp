#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "alignforge/digest.hpp"

namespace alignforge {

// Every random decision in the pipeline draws from a substream derived from
// the single run seed plus (stage, key). Substreams are independent of
// processing order, so parallel schedules cannot change the output.
inline std::uint64_t substream_seed(std::uint64_t run_seed, std::string_view stage,
                                    std::string_view key) {
  std::string material;
  material.reserve(16 + stage.size() + key.size() + 2);
  for (int i = 0; i < 8; ++i) material.push_back(static_cast<char>((run_seed >> (8 * i)) & 0xFF));
  material.push_back('\x1f');
  material.append(stage);
  material.push_back('\x1f');
  material.append(key);
  return sha256_prefix64(material);
}

// mt19937_64 with bounded draws implemented here rather than through
// std::uniform_int_distribution, whose output is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform integer in [0, bound) via rejection sampling.
  std::uint64_t below(std::uint64_t bound) {
    if (bound == 0) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return v % bound;
  }

  std::size_t index(std::size_t size) { return static_cast<std::size_t>(below(size)); }

  // Uniform double in [0, 1) with 53 random bits.
  double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Fisher-Yates; stable given the seed regardless of platform.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = index(i);
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace alignforge
