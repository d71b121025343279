// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace kvslim {

/// Mixes a base seed with stream indices so independent trials get unrelated streams.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t substream = 0);

/// Seeded generator used everywhere randomness is needed.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform();
    double normal();
    bool coin();
    /// Uniform integer in [0, bound).
    std::size_t below(std::size_t bound);
    /// Random point on the unit sphere of the given dimension.
    std::vector<double> unit_vector(std::size_t dim);
    /// Fisher-Yates permutation of 0..n-1.
    std::vector<std::size_t> permutation(std::size_t n);

    std::mt19937_64& engine() { return engine_; }

  private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> gauss_{0.0, 1.0};
};

}  // namespace kvslim
