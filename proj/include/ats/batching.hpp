#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

#include "ats/errors.hpp"
#include "ats/rng.hpp"

namespace ats {

// Seeded permutation chopped into contiguous chunks; with drop_last every
// batch has exactly batch_size entries. Each batch doubles as one ListNet
// list, hence the >= 2 floor. The permutation is Fisher-Yates on stream
// (seed, "batches"): for i = n-1 down to 1, j = uniform_int(i + 1), swap.
inline std::vector<std::vector<size_t>> make_batches(size_t n, int batch_size,
                                                     uint64_t seed, bool drop_last) {
  if (batch_size < 2) throw ConfigError("make_batches: batch_size must be >= 2");
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  CounterRng rng(seed, "batches");
  for (size_t i = n; i > 1; --i) {
    const size_t j = rng.uniform_int(i);
    std::swap(order[i - 1], order[j]);
  }
  std::vector<std::vector<size_t>> batches;
  const size_t bs = static_cast<size_t>(batch_size);
  for (size_t start = 0; start < n; start += bs) {
    const size_t end = std::min(n, start + bs);
    if (drop_last && end - start < bs) break;
    batches.emplace_back(order.begin() + static_cast<ptrdiff_t>(start),
                         order.begin() + static_cast<ptrdiff_t>(end));
  }
  return batches;
}

}  // namespace ats
