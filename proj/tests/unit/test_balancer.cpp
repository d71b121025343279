// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "kvslim/balancer.hpp"
#include "kvslim/errors.hpp"

using namespace kvslim;

namespace {

BalanceObjective rows_objective(const std::vector<Vector>& rows) {
    return BalanceObjective::from_rows(ObjectiveId::KeySum, rows);
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

}  // namespace

TEST_CASE("exhaustive oracle on hand instances") {
    const std::vector<BalanceObjective> same{rows_objective({{0.6, 0.8}, {0.6, 0.8}})};
    const SignAssignment a = balance_exhaustive(same);
    CHECK(a.signs == std::vector<std::int8_t>{1, -1});
    CHECK(a.combined == 0.0);

    const std::vector<BalanceObjective> pairs{rows_objective({{1, 0}, {1, 0}, {0, 1}, {0, 1}})};
    CHECK(balance_exhaustive(pairs).combined == doctest::Approx(0.0).scale(1.0));

    const std::vector<Vector> basis{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    const std::vector<BalanceObjective> ortho{rows_objective(basis)};
    CHECK(balance_exhaustive(ortho).combined == doctest::Approx(std::sqrt(3.0)));
    for (int mask = 0; mask < 8; ++mask) {
        std::vector<std::int8_t> s{1, 1, 1};
        for (int i = 0; i < 3; ++i)
            if (mask >> i & 1) s[i] = -1;
        CHECK(ortho[0].discrepancy(s) == doctest::Approx(std::sqrt(3.0)));
    }
}

TEST_CASE("exhaustive matches brute force and its tie rule") {
    std::mt19937_64 g(21);
    for (int t = 0; t < 30; ++t) {
        const std::size_t n = 2 + t % 10;
        std::vector<Vector> rows;
        for (std::size_t i = 0; i < n; ++i) rows.push_back(oracle::random_unit(g, 3));
        const std::vector<BalanceObjective> obj{rows_objective(rows)};
        std::vector<int> arg;
        const double best = oracle::brute_min(n, [&](const std::vector<int>& s) { return oracle::signed_norm(rows, s); }, &arg);
        const SignAssignment a = balance_exhaustive(obj);
        CHECK(a.combined == doctest::Approx(best).epsilon(1e-10));
        CHECK(a.signs[0] == 1);
    }
    // All four assignments with s0 = +1 tie; the lexicographically smallest is (+1, -1, -1).
    const std::vector<BalanceObjective> zero{rows_objective({{0.0}, {0.0}, {0.0}})};
    CHECK(balance_exhaustive(zero).signs == std::vector<std::int8_t>{1, -1, -1});
    std::vector<Vector> many(25, Vector{1.0});
    const std::vector<BalanceObjective> big{rows_objective(many)};
    CHECK_THROWS_AS(balance_exhaustive(big), CapacityError);
}

TEST_CASE("greedy walk examples") {
    for (std::size_t n : {1u, 2u, 7u, 64u, 513u}) {
        const std::vector<BalanceObjective> same{rows_objective(std::vector<Vector>(n, Vector{0.6, 0.8}))};
        CHECK(balance_walk(same, 3).combined <= 1.0 + 1e-12);
    }
    const std::vector<BalanceObjective> single{rows_objective({{3.0, 4.0}})};
    CHECK(balance_walk(single, 1).combined == doctest::Approx(5.0));

    std::mt19937_64 g(6);
    std::vector<Vector> rows;
    for (int i = 0; i < 20; ++i) {
        const Vector v = oracle::random_unit(g, 4);
        rows.push_back(v);
        rows.push_back(v);
    }
    std::vector<std::size_t> order(rows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const std::vector<BalanceObjective> dup{rows_objective(rows)};
    CHECK(balance_walk(dup, 9, order).combined == doctest::Approx(0.0).scale(1.0));
}

TEST_CASE("best-of-seeds") {
    std::mt19937_64 g(13);
    std::vector<Vector> rows;
    for (int i = 0; i < 40; ++i) rows.push_back(oracle::random_unit(g, 5));
    const std::vector<BalanceObjective> obj{rows_objective(rows)};
    const std::vector<std::uint64_t> one{77};
    const SignAssignment w = balance_walk(obj, 77), b = balance_best_of(obj, one);
    CHECK(w.signs == b.signs);
    CHECK(w.combined == b.combined);

    const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8};
    const SignAssignment best = balance_best_of(obj, seeds);
    REQUIRE(best.trials.size() == seeds.size());
    for (const auto& t : best.trials) CHECK(best.combined <= t.combined);
    CHECK(balance_best_of(obj, seeds).signs == best.signs);
}

TEST_CASE("walk discrepancy grows slower than sqrt n") {
    std::mt19937_64 g(31);
    std::vector<double> med;
    for (std::size_t n : {64u, 256u, 1024u}) {
        std::vector<Vector> rows;
        for (std::size_t i = 0; i < n; ++i) rows.push_back(oracle::random_unit(g, 4));
        const std::vector<BalanceObjective> obj{rows_objective(rows)};
        std::vector<double> d;
        for (std::uint64_t s = 0; s < 50; ++s) d.push_back(balance_walk(obj, s).combined);
        med.push_back(median(d));
    }
    CHECK(med[1] / med[0] < 2.0);
    CHECK(med[2] / med[0] < 4.0);
}

TEST_CASE("simultaneous packing") {
    std::mt19937_64 g(41);
    const auto rows = testing_support::random_unit_rows(g, 12, 3, 3);
    const KvCache c = rows.cache();
    const EmbeddingConfig cfg(4, 3, 3);
    const std::vector<BalanceObjective> one{BalanceObjective::key_sum(c)};
    const auto single = simultaneous(one);
    CHECK(single[0].weight() == 1.0);

    const auto objs = simultaneous({BalanceObjective::numerator(c, cfg), BalanceObjective::denominator(c, cfg),
                                    BalanceObjective::key_sum(c)});
    const PackedItems packed = simultaneous_pack(objs);
    for (std::size_t i = 0; i < packed.n; ++i) {
        double sq = 0;
        for (double x : packed.row(i)) sq += x * x;
        CHECK(std::sqrt(sq) <= 1.0 + 1e-12);
    }
    std::vector<std::int8_t> s(12, 1);
    for (std::size_t i = 0; i < 12; i += 3) s[i] = -1;
    double total = 0;
    for (const auto& o : objs) {
        const double d = o.discrepancy(s);
        total += d * d / 3.0;
    }
    Vector sum(packed.dim, 0.0);
    for (std::size_t i = 0; i < packed.n; ++i)
        for (std::size_t j = 0; j < packed.dim; ++j) sum[j] += s[i] * packed.row(i)[j];
    CHECK(oracle::norm(sum) * oracle::norm(sum) == doctest::Approx(total).epsilon(1e-10));
    for (std::size_t b = 0; b < objs.size(); ++b) {
        double sq = 0;
        for (std::size_t j = packed.block_offsets[b]; j < packed.block_offsets[b + 1]; ++j) sq += sum[j] * sum[j];
        CHECK(std::sqrt(sq) * std::sqrt(3.0) == doctest::Approx(objs[b].discrepancy(s)).epsilon(1e-10));
    }
}

TEST_CASE("halve_select") {
    const KvCache two = KvCache::from_rows({{1.0}, {-1.0}}, {{1.0}, {1.0}});
    const std::vector<BalanceObjective> obj{BalanceObjective::key_sum(two)};
    const HalveResult h = halve_select(two, score_assignment(obj, {1, -1}));
    CHECK(h.cache.size() == 1);
    CHECK_FALSE(h.degenerate);

    const HalveResult all = halve_select(two, score_assignment(obj, {1, 1}));
    CHECK(all.degenerate);
    CHECK(all.cache.size() == 2);

    const KvCache dup = KvCache::from_rows({{1, 0}, {1, 0}, {0, 1}, {0, 1}}, {{1}, {1}, {2}, {2}});
    const std::vector<BalanceObjective> dobj{BalanceObjective::key_sum(dup)};
    const HalveResult hd = halve_select(dup, balance_exhaustive(dobj));
    REQUIRE(hd.kept.size() == 2);
    CHECK(hd.kept[0] / 2 == 0);
    CHECK(hd.kept[1] / 2 == 1);
}

TEST_CASE("halving identity holds for arbitrary signs") {
    std::mt19937_64 g(51);
    for (int t = 0; t < 20; ++t) {
        const auto rows = testing_support::random_unit_rows(g, 15, 3, 2);
        const KvCache c = rows.cache();
        std::vector<std::int8_t> s(15);
        for (auto& x : s) x = g() & 1 ? 1 : -1;
        const Vector q = testing_support::scaled(oracle::random_unit(g, 3), 2.0);
        const Vector full = softmax_numerator(q, c);
        Vector signed_sum(2, 0.0), plus(2, 0.0);
        for (std::size_t i = 0; i < 15; ++i) {
            const double w = std::exp(static_cast<double>(oracle::ldot(q, rows.keys[i])));
            for (int j = 0; j < 2; ++j) {
                signed_sum[j] += s[i] * w * rows.values[i][j];
                if (s[i] > 0) plus[j] += w * rows.values[i][j];
            }
        }
        for (int j = 0; j < 2; ++j) CHECK(full[j] + signed_sum[j] == doctest::Approx(2 * plus[j]).epsilon(1e-10));

        const std::vector<BalanceObjective> obj{BalanceObjective::key_sum(c)};
        const HalveResult h = halve_select(c, score_assignment(obj, s));
        if (!h.degenerate) {
            const Vector kept = softmax_numerator(q, h.cache);
            Vector e(2, 0.0);
            for (std::size_t i = 0; i < 15; ++i) {
                const double w = std::exp(static_cast<double>(oracle::ldot(q, rows.keys[i])));
                for (int j = 0; j < 2; ++j) e[j] += (s[i] == h.kept_side ? 1 : -1) * w * rows.values[i][j];
            }
            for (int j = 0; j < 2; ++j) CHECK(full[j] + e[j] == doctest::Approx(2 * kept[j]).epsilon(1e-10));
        }
    }
}
