// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"
#include "kvslim/attention.hpp"
#include "kvslim/errors.hpp"

using namespace kvslim;
using testing_support::rel_diff;

TEST_CASE("softmax sums on the ln 3 example") {
    const KvCache c = KvCache::from_rows({{1, 0}, {-1, 0}}, {{1, 0}, {0, 1}});
    const Vector q{std::log(3.0), 0.0};
    const Vector a = softmax_numerator(q, c);
    CHECK(a[0] == doctest::Approx(3.0).epsilon(1e-14));
    CHECK(a[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
    CHECK(softmax_denominator(q, c) == doctest::Approx(10.0 / 3.0).epsilon(1e-14));
    const Vector out = attn(q, c);
    CHECK(out[0] == doctest::Approx(0.9).epsilon(1e-14));
    CHECK(out[1] == doctest::Approx(0.1).epsilon(1e-14));
}

TEST_CASE("single item and zero query") {
    const KvCache one = KvCache::from_rows({{0.3, -0.2}}, {{2.0, -1.0, 0.5}});
    const Vector q{1.5, 0.7};
    const double w = std::exp(0.3 * 1.5 - 0.2 * 0.7);
    const Vector a = softmax_numerator(q, one);
    CHECK(a[0] == doctest::Approx(2.0 * w));
    const Vector out = attn(q, one);
    CHECK(out == Vector{2.0, -1.0, 0.5});

    std::mt19937_64 g(3);
    const auto rows = testing_support::random_gaussian_rows(g, 7, 3, 2, 1.0);
    const KvCache c = rows.cache();
    const Vector zero(3, 0.0);
    CHECK(softmax_denominator(zero, c) == 7.0);
    Vector mean(2, 0.0);
    for (const auto& v : rows.values)
        for (int j = 0; j < 2; ++j) mean[j] += v[j] / 7.0;
    CHECK(rel_diff(attn(zero, c), mean) < 1e-14);
    CHECK(softmax_denominator(Vector{2.0}, KvCache::from_rows({{1.0}}, {{1.0}})) == doctest::Approx(std::exp(2.0)));
}

TEST_CASE("attention matches the extended-precision oracle") {
    std::mt19937_64 g(11);
    for (int t = 0; t < 50; ++t) {
        const auto rows = testing_support::random_gaussian_rows(g, 1 + t, 4, 3, 0.7);
        const KvCache c = rows.cache();
        const Vector q = testing_support::scaled(oracle::random_unit(g, 4), 3.0);
        CHECK(rel_diff(attn(q, c), oracle::attention(q, rows.keys, rows.values)) < 1e-12);
        const auto parts = attention_parts(q, c);
        CHECK(parts.denominator == doctest::Approx(softmax_denominator(q, c)).epsilon(1e-13));
    }
}

TEST_CASE("construction rejects bad caches") {
    CHECK_THROWS_AS(KvCache({}, {}, 2, 2), DimensionError);
    CHECK_THROWS_AS(KvCache({1, 2, 3}, {1, 2}, 2, 2), DimensionError);
    CHECK_THROWS_AS(KvCache({1, NAN}, {1, 2}, 2, 2), NonFiniteError);
    CHECK_THROWS_AS(KvCache::from_rows({{1, 0}, {1}}, {{1}, {1}}), DimensionError);
    const KvCache c = KvCache::from_rows({{1, 0}}, {{1}});
    CHECK_THROWS_AS(attn(Vector{1, 2, 3}, c), DimensionError);
    CHECK_THROWS(Query(Vector{3, 4}, 4.0));
    CHECK_NOTHROW(Query(Vector{3, 4}, 5.0));
}

TEST_CASE("preprocess shifts and scales") {
    const KvCache c = KvCache::from_rows({{2, 0}, {0, 0}}, {{1}, {1}});
    const auto [pre, rec] = preprocess(c);
    CHECK(rec.key_shift == Vector{1, 0});
    CHECK(rec.key_scale == 1.0);
    CHECK(rec.value_scale == 1.0);
    CHECK(pre.keys() == Vector{1, 0, -1, 0});
    CHECK(pre.preprocessed());

    const KvCache centered = KvCache::from_rows({{1, 0}, {-1, 0}}, {{0, 1}, {1, 0}});
    const auto [same, id] = preprocess(centered);
    CHECK(id.key_shift == Vector{0, 0});
    CHECK(id.key_scale == 1.0);
    CHECK(id.value_scale == 1.0);
    CHECK(same.keys() == centered.keys());
}

TEST_CASE("preprocess postconditions and restore") {
    std::mt19937_64 g(5);
    for (int t = 0; t < 100; ++t) {
        const auto rows = testing_support::random_gaussian_rows(g, 2 + t % 40, 5, 3, 4.0);
        const KvCache raw = rows.cache();
        const auto [pre, rec] = preprocess(raw);
        CHECK(pre.max_key_norm() <= 1.0 + 1e-12);
        CHECK(pre.max_value_norm() <= 1.0 + 1e-12);
        CHECK(norm2(pre.key_sum()) <= 1e-9 * static_cast<double>(pre.size()));
        const KvCache back = restore(pre, rec);
        for (std::size_t i = 0; i < raw.keys().size(); ++i)
            CHECK(back.keys()[i] == doctest::Approx(raw.keys()[i]).epsilon(1e-12).scale(1.0));

        const Vector q = testing_support::scaled(oracle::random_unit(g, 5), 0.2);
        const Vector lhs = attn(q, raw);
        const Vector rhs = testing_support::scaled(attn(to_preprocessed_query(q, rec), pre), rec.value_scale);
        CHECK(rel_diff(rhs, lhs) < 1e-9);
    }
}

TEST_CASE("softmax invariants on random instances") {
    std::mt19937_64 g(17);
    std::uniform_real_distribution<double> alpha(0.1, 10.0);
    for (int t = 0; t < 200; ++t) {
        const std::size_t n = 1 + t % 64, d = 1 + t % 8;
        const auto rows = testing_support::random_gaussian_rows(g, n, d, d, 1.0);
        const KvCache pre = preprocess(rows.cache()).first;
        const Vector q = testing_support::scaled(oracle::random_unit(g, d), 4.0 * std::sqrt(static_cast<double>(t % 7) / 6.0));

        const Vector w = softmax_weights(q, pre);
        const double total = std::accumulate(w.begin(), w.end(), 0.0);
        CHECK(std::abs(total - 1.0) <= 1e-12);
        for (double x : w) CHECK(x > 0.0);
        CHECK(softmax_denominator(q, pre) >= static_cast<double>(n) * (1 - 1e-12));
        CHECK(norm2(attn(q, pre)) <= pre.max_value_norm() + 1e-12);

        Vector t_shift = oracle::random_unit(g, d);
        Vector shifted = pre.keys();
        for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += 3.0 * t_shift[i % d];
        const KvCache moved(shifted, pre.values(), d, d);
        CHECK(rel_diff(attn(q, moved), attn(q, pre)) <= 1e-9);

        const double a = alpha(g);
        const KvCache scaled(testing_support::scaled(pre.keys(), a), pre.values(), d, d);
        CHECK(rel_diff(attn(q, scaled), attn(testing_support::scaled(q, a), pre)) <= 1e-9);
    }
}

TEST_CASE("subset keeps rows and metadata") {
    const KvCache c = preprocess(KvCache::from_rows({{1}, {2}, {4}}, {{1}, {2}, {3}})).first;
    const std::vector<std::size_t> idx{2, 0};
    const KvCache s = c.subset(idx);
    CHECK(s.size() == 2);
    CHECK(s.key(0)[0] == c.key(2)[0]);
    CHECK(s.value(1)[0] == c.value(0)[0]);
    CHECK(s.norm_meta() == c.norm_meta());
}
