// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "kvslim/errors.hpp"
#include "kvslim/lowerbound.hpp"

using namespace kvslim;

TEST_CASE("spherical codes") {
    const SphericalCode basis = spherical_code(3, 5, 0.0, 1);
    REQUIRE(basis.size() == 3);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 5; ++j) CHECK(basis.codewords[i][j] == (i == j ? 1.0 : 0.0));

    const SphericalCode single = spherical_code(1, 4, 0.0, 2);
    CHECK(oracle::norm(single.codewords[0]) == doctest::Approx(1.0));

    const SphericalCode c = spherical_code(16, 128, 0.5, 3, 10);
    CHECK(c.tries <= 10);
    for (std::size_t i = 0; i < 16; ++i)
        for (std::size_t h = i + 1; h < 16; ++h)
            CHECK(oracle::ldot(c.codewords[i], c.codewords[h]) <= 0.5);

    CHECK_THROWS_AS(spherical_code(50, 3, 0.1, 1, 20), CodeNotFound);
    try {
        spherical_code(50, 3, 0.1, 1, 20);
    } catch (const CodeNotFound& e) {
        CHECK(e.best_eta() > 0.1);
    }
}

TEST_CASE("instance shapes") {
    const SphericalCode one = spherical_code(1, 3, 0.0, 1);
    const std::vector<std::uint8_t> bits{1, 0};
    const std::vector<std::int8_t> signs{1, 1};
    const IndexingInstance inst = build_instance(bits, signs, 1, 2, LbVariant::Coreset, 2.0, one);
    REQUIRE(inst.cache.size() == 2);
    CHECK(inst.cache.value(0)[0] == 1.0);
    CHECK(inst.cache.value(0)[1] == 0.0);
    CHECK(inst.cache.value(1)[0] == 0.0);
    CHECK(inst.cache.value(1)[1] == 0.0);
    CHECK(inst.cache.key(0)[0] == inst.cache.key(1)[0]);

    const SphericalCode four = spherical_code(4, 16, 0.5, 2);
    std::vector<std::uint8_t> b(4 * 8);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = (i * 7 + 3) % 3 == 0;
    const IndexingInstance sk = build_instance(b, 4, 8, LbVariant::Sketch, 3.0, four, 5);
    REQUIRE(sk.cache.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        double ones = 0;
        for (std::size_t j = 0; j < 8; ++j) ones += b[i * 8 + j];
        double sq = 0;
        for (double x : sk.cache.value(i)) sq += x * x;
        CHECK(sq == doctest::Approx(ones / 8.0));
        CHECK(sq <= 1.0);
    }

    const std::vector<std::uint8_t> zeros(4 * 8, 0);
    const IndexingInstance z = build_instance(zeros, 4, 8, LbVariant::Coreset, 3.0, four, 5);
    for (double x : attn(decoding_query(z, 1), z.cache)) CHECK(x == 0.0);
}

TEST_CASE("single codeword decodes without noise") {
    const SphericalCode one = spherical_code(1, 2, 0.0, 1);
    for (std::uint8_t x : {std::uint8_t{0}, std::uint8_t{1}}) {
        const std::vector<std::uint8_t> bits{x};
        const std::vector<std::int8_t> signs{-1};
        const IndexingInstance inst = build_instance(bits, signs, 1, 1, LbVariant::Coreset, 2.0, one);
        const Vector q = decoding_query(inst, 0);
        const double B = softmax_denominator(q, inst.cache);
        CHECK(cross_noise(inst, 0, 0) == 0.0);
        CHECK(decode_bit(inst, attn(q, inst.cache)[0], 0, 0, B) == x);
    }
}

TEST_CASE("weights, denominator and noise decomposition") {
    const double rho = 5.0;
    const SphericalCode code = spherical_code(16, 128, 1.0 / rho, 7);
    std::vector<std::uint8_t> bits(16 * 8);
    for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = (i * 2654435761u >> 7) & 1;
    for (LbVariant v : {LbVariant::Coreset, LbVariant::Sketch}) {
        const IndexingInstance inst = build_instance(bits, 16, 8, v, rho, code, 11);
        for (std::size_t i = 0; i < 16; ++i) {
            CHECK(cross_weight(inst, i, i) == doctest::Approx(std::exp(rho)).epsilon(1e-14));
            double wsum = 0;
            for (std::size_t h = 0; h < 16; ++h) {
                wsum += cross_weight(inst, i, h);
                if (h != i) CHECK(cross_weight(inst, i, h) <= std::exp(1.0) * (1 + 1e-12));
            }
            const Vector q = decoding_query(inst, i);
            const double B = softmax_denominator(q, inst.cache);
            if (v == LbVariant::Coreset) CHECK(B == doctest::Approx(8.0 * wsum).epsilon(1e-9));
            const Vector a = softmax_numerator(q, inst.cache);
            const double scale = v == LbVariant::Sketch ? 1.0 / std::sqrt(8.0) : 1.0;
            for (std::size_t j = 0; j < 8; ++j) {
                const double signal = inst.sign(i, j) * a[j];
                const double expected = scale * inst.L * inst.bit(i, j) + cross_noise(inst, i, j);
                CHECK(signal == doctest::Approx(expected).epsilon(1e-10).scale(1e-9));
            }
        }
    }
}

TEST_CASE("cross-noise variance over sign draws") {
    const double rho = 5.0;
    const std::size_t m = 16, d = 8;
    const SphericalCode code = spherical_code(m, 128, 1.0 / rho, 3);
    const std::vector<std::uint8_t> bits(m * d, 1);
    double sum = 0, sq = 0;
    const int draws = 1000;
    for (int s = 0; s < draws; ++s) {
        const IndexingInstance inst = build_instance(bits, m, d, LbVariant::Coreset, rho, code, 100 + s);
        const double n = cross_noise(inst, 0, 0);
        sum += n;
        sq += n * n;
    }
    const double var = (sq - sum * sum / draws) / (draws - 1);
    // Sample variance of a sum of 15 independent signed terms bounded by e: allow 3 standard errors.
    const double bound = std::exp(2.0) * static_cast<double>(m);
    CHECK(var <= bound * (1 + 3 * std::sqrt(2.0 / draws)));
}

TEST_CASE("recovery experiment") {
    LbParams p;
    const DecodeReport full = recovery_experiment(p, ReductionMode::Full, 0, 3, 1);
    CHECK(full.full_rate >= 0.95);
    CHECK(full.reduced_rate == full.full_rate);
    CHECK(full.separation_violations == 0);
    CHECK(full.max_own_weight_rel_error < 1e-12);
    CHECK(full.max_cross_weight <= std::exp(1.0));
    CHECK(full.predictions.size() == p.m * p.d);
    CHECK(full.chebyshev_bound == doctest::Approx(100 * std::exp(2.0) * 16 / std::exp(10.0)));

    const DecodeReport half = recovery_experiment(p, ReductionMode::RandomSubsample, 8, 3, 1);
    CHECK(half.reduced_rate < half.full_rate);
    const DecodeReport again = recovery_experiment(p, ReductionMode::RandomSubsample, 8, 3, 1);
    CHECK(again.predictions == half.predictions);
}
