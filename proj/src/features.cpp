// SPDX-License-Identifier: Apache-2.0

#include "kvslim/features.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "kvslim/errors.hpp"

namespace kvslim {

double z_weight(std::size_t m) {
    const double t = static_cast<double>(m) + 2.0;
    return std::sqrt(3.0 * t) * std::log(t);
}

double truncation_tail(double rho, std::size_t degree) {
    if (rho <= 0.0) return 0.0;
    double m = static_cast<double>(degree) + 1.0;
    double term = std::exp(m * std::log(rho) - std::lgamma(m + 1.0));
    double sum = 0.0;
    while (term > 0.0) {
        sum += term;
        const double ratio = rho / (m + 1.0);
        if (ratio < 0.5 && term * ratio < sum * 1e-18) {
            // Geometric bound on everything left.
            sum += term * ratio / (1.0 - ratio);
            break;
        }
        term *= ratio;
        m += 1.0;
    }
    return sum * (1.0 + 1e-12);
}

std::size_t truncation_degree(double rho, double tolerance, std::size_t max_degree) {
    for (std::size_t m = 0; m < max_degree; ++m)
        if (truncation_tail(rho, m) <= tolerance) return m;
    return max_degree;
}

EmbeddingConfig::EmbeddingConfig(std::size_t degree, std::size_t key_dim, std::size_t value_dim,
                                 std::optional<bool> symmetric, std::size_t capacity)
    : degree_(degree),
      key_dim_(key_dim),
      value_dim_(value_dim),
      symmetric_(symmetric.value_or(key_dim >= 4)),
      capacity_(capacity) {
    if (key_dim == 0 || value_dim == 0) throw DimensionError("embedding dimensions must be positive");
    z_weights_.resize(degree + 1);
    offsets_.assign(1, 0);
    constexpr std::size_t kMax = std::numeric_limits<std::size_t>::max();
    for (std::size_t m = 0; m <= degree; ++m) {
        z_weights_[m] = z_weight(m);
        const std::size_t terms = TermTree::count_terms(key_dim, m, symmetric_);
        const std::size_t block = terms > kMax / value_dim ? kMax : terms * value_dim;
        const std::size_t total = block > kMax - offsets_.back() ? kMax : offsets_.back() + block;
        if (total > capacity_)
            throw CapacityError("embedding of degree " + std::to_string(degree) + " needs at least " +
                                    std::to_string(total) + " scalars per item, cap is " + std::to_string(capacity_),
                                total, capacity_);
        offsets_.push_back(total);
    }
    tree_ = term_tree(key_dim, degree, symmetric_);
}

EmbeddingConfig EmbeddingConfig::with_value_dim(std::size_t value_dim) const {
    return EmbeddingConfig(degree_, key_dim_, value_dim, symmetric_, capacity_);
}

void embed_into(std::span<const double> k, std::span<const double> v, const EmbeddingConfig& cfg,
                std::span<double> out, std::vector<Vector>& scratch) {
    if (k.size() != cfg.key_dim() || v.size() != cfg.value_dim())
        throw DimensionError("embed: (k, v) dimensions (" + std::to_string(k.size()) + ", " + std::to_string(v.size()) +
                             ") do not match config (" + std::to_string(cfg.key_dim()) + ", " +
                             std::to_string(cfg.value_dim()) + ")");
    if (out.size() != cfg.total_dim()) throw DimensionError("embed: output buffer has wrong size");
    const TermTree& tree = cfg.terms();
    tree.forward(k, cfg.degree(), scratch);
    const std::size_t d_v = cfg.value_dim();
    for (std::size_t m = 0; m <= cfg.degree(); ++m) {
        const auto& coef = tree.level(m).coef;
        const Vector& prod = scratch[m];
        const double inv_z = 1.0 / cfg.z_weights()[m];
        double* dst = out.data() + cfg.block_offset(m);
        for (std::size_t t = 0; t < prod.size(); ++t) {
            const double s = coef[t] * prod[t] * inv_z;
            for (std::size_t j = 0; j < d_v; ++j) dst[t * d_v + j] = s * v[j];
        }
    }
}

FeatureVector embed(std::span<const double> k, std::span<const double> v, const EmbeddingConfig& cfg) {
    FeatureVector f{Vector(cfg.total_dim(), 0.0), cfg.offsets()};
    std::vector<Vector> scratch;
    embed_into(k, v, cfg, f.data, scratch);
    return f;
}

FeatureVector denominator_embed(std::span<const double> k, const EmbeddingConfig& cfg) {
    const double one = 1.0;
    return embed(k, std::span<const double>(&one, 1), cfg.with_value_dim(1));
}

double reconstruct_weight(std::span<const double> q, std::span<const double> k, const EmbeddingConfig& cfg) {
    if (q.size() != k.size()) throw DimensionError("reconstruct_weight: query/key dimension mismatch");
    const double x = dot(q, k);
    double term = 1.0;
    double sum = 1.0;
    for (std::size_t m = 1; m <= cfg.degree(); ++m) {
        term *= x / static_cast<double>(m);
        sum += term;
    }
    return sum;
}

BlockSum block_sum(std::span<const FeatureVector> items, std::span<const std::int8_t> signs) {
    if (items.empty()) throw DimensionError("block_sum: no items");
    if (items.size() != signs.size()) throw DimensionError("block_sum: one sign per item required");
    BlockSum s{Vector(items.front().data.size(), 0.0), items.front().offsets};
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (items[i].offsets != s.offsets) throw DimensionError("block_sum: items use different layouts");
        axpy(static_cast<double>(signs[i]), items[i].data, s.data);
    }
    return s;
}

namespace {

BlockSum signed_sum(const KvCache& cache, std::span<const std::int8_t> signs, const EmbeddingConfig& cfg,
                    bool unit_values) {
    if (signs.size() != cache.size()) throw DimensionError("block sum: one sign per cache entry required");
    BlockSum s{Vector(cfg.total_dim(), 0.0), cfg.offsets()};
    Vector buf(cfg.total_dim());
    std::vector<Vector> scratch;
    const double one = 1.0;
    for (std::size_t i = 0; i < cache.size(); ++i) {
        auto v = unit_values ? std::span<const double>(&one, 1) : cache.value(i);
        embed_into(cache.key(i), v, cfg, buf, scratch);
        axpy(static_cast<double>(signs[i]), buf, s.data);
    }
    return s;
}

}  // namespace

BlockSum numerator_block_sum(const KvCache& cache, std::span<const std::int8_t> signs, const EmbeddingConfig& cfg) {
    return signed_sum(cache, signs, cfg, false);
}

BlockSum denominator_block_sum(const KvCache& cache, std::span<const std::int8_t> signs,
                               const EmbeddingConfig& cfg) {
    return signed_sum(cache, signs, cfg.value_dim() == 1 ? cfg : cfg.with_value_dim(1), true);
}

Vector contract_block(const FeatureVector& f, const EmbeddingConfig& cfg, std::size_t m, std::span<const double> q) {
    if (q.size() != cfg.key_dim()) throw DimensionError("contract_block: query dimension mismatch");
    if (f.offsets != cfg.offsets()) throw DimensionError("contract_block: feature layout does not match config");
    std::vector<Vector> prods;
    cfg.terms().forward(q, m, prods);
    const auto& coef = cfg.terms().level(m).coef;
    const std::size_t d_v = cfg.value_dim();
    auto blk = f.block(m);
    Vector out(d_v, 0.0);
    for (std::size_t t = 0; t < prods[m].size(); ++t) {
        const double s = coef[t] * prods[m][t];
        for (std::size_t j = 0; j < d_v; ++j) out[j] += s * blk[t * d_v + j];
    }
    return out;
}

Vector truncated_series(const BlockSum& sum, const EmbeddingConfig& cfg, std::span<const double> q) {
    Vector out(cfg.value_dim(), 0.0);
    double inv_fact = 1.0;
    for (std::size_t m = 0; m <= cfg.degree(); ++m) {
        if (m > 0) inv_fact /= static_cast<double>(m);
        axpy(cfg.z_weights()[m] * inv_fact, contract_block(sum, cfg, m, q), out);
    }
    return out;
}

}  // namespace kvslim
