// SPDX-License-Identifier: Apache-2.0

#include "kvslim/rng.hpp"

#include <numeric>

#include "kvslim/linalg.hpp"

namespace kvslim {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t substream) {
    return splitmix64(splitmix64(splitmix64(base) ^ stream) ^ (substream * 0x632be59bd9b4e019ULL));
}

double Rng::uniform() {
    // 53 random mantissa bits in [0, 1).
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() { return gauss_(engine_); }

bool Rng::coin() { return (engine_() >> 63) != 0; }

std::size_t Rng::below(std::size_t bound) {
    // Lemire-style rejection keeps this exactly uniform and stdlib-independent.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t r;
    do {
        r = engine_();
    } while (r >= limit);
    return static_cast<std::size_t>(r % bound);
}

std::vector<double> Rng::unit_vector(std::size_t dim) {
    std::vector<double> v(dim);
    double n = 0.0;
    while (n == 0.0) {
        for (auto& x : v) x = normal();
        n = norm2(v);
    }
    for (auto& x : v) x /= n;
    return v;
}

std::vector<std::size_t> Rng::permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[below(i)]);
    return p;
}

}  // namespace kvslim
