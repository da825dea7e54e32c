#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <utility>
#include <vector>

namespace geoforge {

// Uniform integer in [0, bound) by rejection sampling on raw 64-bit output.
// std::uniform_int_distribution is implementation-defined, so seeded
// sampling would differ between standard libraries.
inline std::uint64_t uniform_index(std::mt19937_64& engine, std::uint64_t bound) {
  if (bound <= 1) return 0;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t draw = engine();
  while (draw >= limit) draw = engine();
  return draw % bound;
}

// Fisher-Yates over `items`, deterministic for a given seed on every platform.
template <typename T>
void seeded_shuffle(std::vector<T>& items, std::uint64_t seed) {
  std::mt19937_64 engine(seed);
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_index(engine, i));
    using std::swap;
    swap(items[i - 1], items[j]);
  }
}

}  // namespace geoforge
