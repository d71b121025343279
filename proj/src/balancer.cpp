// SPDX-License-Identifier: Apache-2.0

#include "kvslim/balancer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "kvslim/errors.hpp"
#include "kvslim/rng.hpp"

namespace kvslim {

std::string_view to_string(ObjectiveId id) {
    switch (id) {
        case ObjectiveId::Numerator:
            return "numerator";
        case ObjectiveId::Denominator:
            return "denominator";
        case ObjectiveId::KeySum:
            return "keysum";
    }
    return "unknown";
}

BalanceObjective::BalanceObjective(ObjectiveId id, std::size_t n, std::size_t dim, Generator gen, double weight)
    : id_(id), n_(n), dim_(dim), gen_(std::move(gen)), weight_(weight) {
    if (n == 0) throw DimensionError("objective needs at least one item");
    if (!(weight > 0.0)) throw DimensionError("objective weight must be positive");
}

BalanceObjective BalanceObjective::from_rows(ObjectiveId id, const std::vector<Vector>& rows, double weight) {
    if (rows.empty()) throw DimensionError("objective needs at least one item");
    const std::size_t dim = rows.front().size();
    auto data = std::make_shared<Vector>();
    data->reserve(rows.size() * dim);
    for (const auto& r : rows) {
        if (r.size() != dim) throw DimensionError("objective rows have different dimensions");
        data->insert(data->end(), r.begin(), r.end());
    }
    return BalanceObjective(
        id, rows.size(), dim,
        [data, dim](std::size_t i, std::span<double> out) {
            std::copy_n(data->begin() + static_cast<std::ptrdiff_t>(i * dim), dim, out.begin());
        },
        weight);
}

BalanceObjective BalanceObjective::numerator(const KvCache& cache, const EmbeddingConfig& cfg, double weight) {
    if (cfg.key_dim() != cache.key_dim() || cfg.value_dim() != cache.value_dim())
        throw DimensionError("numerator objective: config does not match cache dimensions");
    auto c = std::make_shared<const KvCache>(cache);
    auto conf = std::make_shared<const EmbeddingConfig>(cfg);
    return BalanceObjective(
        ObjectiveId::Numerator, cache.size(), cfg.total_dim(),
        [c, conf](std::size_t i, std::span<double> out) {
            thread_local std::vector<Vector> scratch;
            embed_into(c->key(i), c->value(i), *conf, out, scratch);
        },
        weight);
}

BalanceObjective BalanceObjective::denominator(const KvCache& cache, const EmbeddingConfig& cfg, double weight) {
    if (cfg.key_dim() != cache.key_dim()) throw DimensionError("denominator objective: key dimension mismatch");
    auto c = std::make_shared<const KvCache>(cache);
    auto conf = std::make_shared<const EmbeddingConfig>(cfg.with_value_dim(1));
    return BalanceObjective(
        ObjectiveId::Denominator, cache.size(), conf->total_dim(),
        [c, conf](std::size_t i, std::span<double> out) {
            thread_local std::vector<Vector> scratch;
            const double one = 1.0;
            embed_into(c->key(i), std::span<const double>(&one, 1), *conf, out, scratch);
        },
        weight);
}

BalanceObjective BalanceObjective::key_sum(const KvCache& cache, double weight) {
    auto c = std::make_shared<const KvCache>(cache);
    return BalanceObjective(
        ObjectiveId::KeySum, cache.size(), cache.key_dim(),
        [c](std::size_t i, std::span<double> out) {
            auto k = c->key(i);
            std::copy(k.begin(), k.end(), out.begin());
        },
        weight);
}

BalanceObjective BalanceObjective::with_weight(double w) const {
    return BalanceObjective(id_, n_, dim_, gen_, w);
}

Vector BalanceObjective::item(std::size_t i) const {
    Vector out(dim_);
    gen_(i, out);
    return out;
}

Vector BalanceObjective::signed_sum(std::span<const std::int8_t> signs) const {
    if (signs.size() != n_) throw DimensionError("one sign per item required");
    Vector sum(dim_, 0.0), buf(dim_);
    for (std::size_t i = 0; i < n_; ++i) {
        gen_(i, buf);
        axpy(static_cast<double>(signs[i]), buf, sum);
    }
    return sum;
}

double BalanceObjective::discrepancy(std::span<const std::int8_t> signs) const { return norm2(signed_sum(signs)); }

std::vector<BalanceObjective> simultaneous(std::vector<BalanceObjective> objectives) {
    const double w = 1.0 / std::sqrt(static_cast<double>(objectives.size()));
    std::vector<BalanceObjective> out;
    out.reserve(objectives.size());
    for (const auto& o : objectives) out.push_back(o.with_weight(w));
    return out;
}

namespace {

std::size_t common_size(std::span<const BalanceObjective> objectives) {
    if (objectives.empty()) throw DimensionError("at least one objective is required");
    const std::size_t n = objectives.front().size();
    for (const auto& o : objectives)
        if (o.size() != n)
            throw DimensionError("objectives disagree on item count (" + std::to_string(n) + " vs " +
                                 std::to_string(o.size()) + ")");
    return n;
}

std::vector<std::size_t> pack_offsets(std::span<const BalanceObjective> objectives) {
    std::vector<std::size_t> off{0};
    for (const auto& o : objectives) off.push_back(off.back() + o.dim());
    return off;
}

// Item i of the packed objective space, written into `out`.
void packed_item(std::span<const BalanceObjective> objectives, const std::vector<std::size_t>& offsets,
                 std::size_t i, std::span<double> out) {
    for (std::size_t j = 0; j < objectives.size(); ++j) {
        auto blk = out.subspan(offsets[j], objectives[j].dim());
        objectives[j].item(i, blk);
        const double w = objectives[j].weight();
        if (w != 1.0)
            for (auto& x : blk) x *= w;
    }
}

// Dense packing is used when it fits in this many scalars; otherwise items are regenerated.
constexpr std::size_t kMaterializeLimit = std::size_t{1} << 24;

double combine_values(const std::vector<ObjectiveDiscrepancy>& ds, Combine combine) {
    double acc = 0.0;
    for (const auto& d : ds) {
        const double s = d.weight * d.value;
        acc = combine == Combine::Max ? std::max(acc, s) : acc + s;
    }
    return acc;
}

std::int8_t minority_of(std::span<const std::int8_t> signs) {
    std::size_t plus = 0;
    for (auto s : signs) plus += s > 0 ? 1 : 0;
    return plus <= signs.size() - plus ? std::int8_t{1} : std::int8_t{-1};
}

SignAssignment walk_impl(std::span<const BalanceObjective> objectives, std::uint64_t seed,
                         std::span<const std::size_t> order, const PackedItems* dense) {
    const std::size_t n = common_size(objectives);
    if (order.size() != n) throw DimensionError("walk order must list every item once");
    const auto offsets = pack_offsets(objectives);
    const std::size_t dim = offsets.back();

    Rng rng(seed);
    Vector w(dim, 0.0), buf(dim);
    std::vector<std::int8_t> signs(n, 0);
    for (std::size_t i : order) {
        if (i >= n || signs[i] != 0) throw DimensionError("walk order is not a permutation");
        std::span<const double> x;
        if (dense) {
            x = dense->row(i);
        } else {
            packed_item(objectives, offsets, i, buf);
            x = buf;
        }
        const double c = dot(w, x);
        std::int8_t s;
        if (c > 0.0)
            s = -1;
        else if (c < 0.0)
            s = 1;
        else
            s = rng.coin() ? 1 : -1;
        signs[i] = s;
        axpy(static_cast<double>(s), x, w);
    }

    SignAssignment out;
    out.seed = seed;
    for (std::size_t j = 0; j < objectives.size(); ++j) {
        std::span<const double> blk(w.data() + offsets[j], objectives[j].dim());
        out.discrepancies.push_back({objectives[j].id(), norm2(blk) / objectives[j].weight(), objectives[j].weight()});
    }
    out.combined = combine_values(out.discrepancies, Combine::Max);
    out.minority_side = minority_of(signs);
    out.signs = std::move(signs);
    return out;
}

}  // namespace

PackedItems simultaneous_pack(std::span<const BalanceObjective> objectives) {
    PackedItems p;
    p.n = common_size(objectives);
    p.block_offsets = pack_offsets(objectives);
    p.dim = p.block_offsets.back();
    p.data.assign(p.n * p.dim, 0.0);
    for (std::size_t i = 0; i < p.n; ++i)
        packed_item(objectives, p.block_offsets, i, std::span<double>(p.data.data() + i * p.dim, p.dim));
    return p;
}

std::size_t SignAssignment::count(std::int8_t side) const {
    return static_cast<std::size_t>(std::count(signs.begin(), signs.end(), side));
}

double SignAssignment::discrepancy(ObjectiveId id) const {
    for (const auto& d : discrepancies)
        if (d.id == id) return d.value;
    throw std::out_of_range("assignment has no objective '" + std::string(to_string(id)) + "'");
}

double combined_discrepancy(std::span<const BalanceObjective> objectives, std::span<const std::int8_t> signs,
                            Combine combine) {
    std::vector<ObjectiveDiscrepancy> ds;
    for (const auto& o : objectives) ds.push_back({o.id(), o.discrepancy(signs), o.weight()});
    return combine_values(ds, combine);
}

SignAssignment score_assignment(std::span<const BalanceObjective> objectives, std::vector<std::int8_t> signs,
                                Combine combine) {
    const std::size_t n = common_size(objectives);
    if (signs.size() != n) throw DimensionError("one sign per item required");
    SignAssignment out;
    for (const auto& o : objectives) out.discrepancies.push_back({o.id(), o.discrepancy(signs), o.weight()});
    out.combined = combine_values(out.discrepancies, combine);
    out.minority_side = minority_of(signs);
    out.signs = std::move(signs);
    return out;
}

SignAssignment balance_exhaustive(std::span<const BalanceObjective> objectives, Combine combine) {
    const std::size_t n = common_size(objectives);
    if (n > kExhaustiveMaxItems)
        throw CapacityError("exhaustive balancing supports at most " + std::to_string(kExhaustiveMaxItems) +
                                " items, got " + std::to_string(n),
                            n, kExhaustiveMaxItems);
    const std::size_t s = objectives.size();
    std::vector<Vector> items(n * s);
    for (std::size_t j = 0; j < s; ++j)
        for (std::size_t i = 0; i < n; ++i) items[j * n + i] = objectives[j].item(i);

    std::vector<std::int8_t> signs(n, 1);
    std::vector<Vector> sums(s);
    auto recompute = [&] {
        for (std::size_t j = 0; j < s; ++j) {
            sums[j].assign(objectives[j].dim(), 0.0);
            for (std::size_t i = 0; i < n; ++i) axpy(signs[i], items[j * n + i], sums[j]);
        }
    };
    auto score = [&] {
        double acc = 0.0;
        for (std::size_t j = 0; j < s; ++j) {
            const double v = objectives[j].weight() * norm2(sums[j]);
            acc = combine == Combine::Max ? std::max(acc, v) : acc + v;
        }
        return acc;
    };
    double scale = 0.0;
    for (std::size_t j = 0; j < s; ++j)
        for (std::size_t i = 0; i < n; ++i) scale += objectives[j].weight() * norm2(items[j * n + i]);
    const double tie_tol = 1e-12 * std::max(1.0, scale);

    recompute();
    std::vector<std::int8_t> best = signs;
    double best_score = score();
    // Gray code over signs[1..n-1]; signs[0] stays +1.
    const std::uint64_t total = std::uint64_t{1} << (n - 1);
    for (std::uint64_t g = 1; g < total; ++g) {
        const std::size_t bit = static_cast<std::size_t>(__builtin_ctzll(g));
        const std::size_t i = bit + 1;
        const double delta = -2.0 * signs[i];
        signs[i] = static_cast<std::int8_t>(-signs[i]);
        if ((g & 1023) == 0) {
            recompute();
        } else {
            for (std::size_t j = 0; j < s; ++j) axpy(delta, items[j * n + i], sums[j]);
        }
        const double v = score();
        if (v < best_score - tie_tol ||
            (v <= best_score + tie_tol && std::lexicographical_compare(signs.begin(), signs.end(), best.begin(),
                                                                        best.end()))) {
            best_score = std::min(best_score, v);
            best = signs;
        }
    }
    return score_assignment(objectives, std::move(best), combine);
}

SignAssignment balance_walk(std::span<const BalanceObjective> objectives, std::uint64_t seed) {
    const std::size_t n = common_size(objectives);
    Rng order_rng(derive_seed(seed, 0x0dde));
    const auto order = order_rng.permutation(n);
    return walk_impl(objectives, seed, order, nullptr);
}

SignAssignment balance_walk(std::span<const BalanceObjective> objectives, std::uint64_t seed,
                            std::span<const std::size_t> order) {
    return walk_impl(objectives, seed, order, nullptr);
}

SignAssignment balance_best_of(std::span<const BalanceObjective> objectives, std::span<const std::uint64_t> seeds) {
    if (seeds.empty()) throw std::invalid_argument("balance_best_of needs at least one seed");
    const std::size_t n = common_size(objectives);
    const auto offsets = pack_offsets(objectives);
    std::optional<PackedItems> dense;
    if (seeds.size() > 1 && n * offsets.back() <= kMaterializeLimit) dense = simultaneous_pack(objectives);

    std::optional<SignAssignment> best;
    std::vector<BalanceTrial> trials;
    for (std::uint64_t seed : seeds) {
        Rng order_rng(derive_seed(seed, 0x0dde));
        const auto order = order_rng.permutation(n);
        SignAssignment a = walk_impl(objectives, seed, order, dense ? &*dense : nullptr);
        trials.push_back({seed, a.combined});
        if (!best || a.combined < best->combined) best = std::move(a);
    }
    best->trials = std::move(trials);
    return std::move(*best);
}

HalveResult halve_select(const KvCache& cache, const SignAssignment& assignment) {
    if (assignment.signs.size() != cache.size())
        throw DimensionError("assignment has " + std::to_string(assignment.signs.size()) + " signs for a cache of " +
                             std::to_string(cache.size()));
    const std::int8_t side = minority_of(assignment.signs);
    std::vector<std::size_t> kept;
    for (std::size_t i = 0; i < cache.size(); ++i)
        if (assignment.signs[i] == side) kept.push_back(i);
    if (kept.empty() || kept.size() == cache.size()) {
        std::vector<std::size_t> all(cache.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        return HalveResult{cache, std::move(all), side, true};
    }
    KvCache sub = cache.subset(kept);
    return HalveResult{std::move(sub), std::move(kept), side, false};
}

}  // namespace kvslim
