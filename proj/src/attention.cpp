// SPDX-License-Identifier: Apache-2.0

#include "kvslim/attention.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kvslim/errors.hpp"

namespace kvslim {

namespace {

void require_finite(std::span<const double> xs, const char* what) {
    for (double x : xs)
        if (!std::isfinite(x)) throw NonFiniteError(std::string("non-finite entry in ") + what);
}

void check_query(std::span<const double> q, const KvCache& cache) {
    if (q.size() != cache.key_dim())
        throw DimensionError("query has dimension " + std::to_string(q.size()) + ", keys have " +
                             std::to_string(cache.key_dim()));
    require_finite(q, "query");
}

}  // namespace

KvCache::KvCache(Vector keys, Vector values, std::size_t d_k, std::size_t d_v,
                 std::optional<NormalizationRecord> norm_meta)
    : keys_(std::move(keys)), values_(std::move(values)), d_k_(d_k), d_v_(d_v), norm_meta_(std::move(norm_meta)) {
    if (d_k_ == 0 || d_v_ == 0) throw DimensionError("key and value dimensions must be positive");
    if (keys_.size() % d_k_ != 0 || values_.size() % d_v_ != 0)
        throw DimensionError("key/value storage is not a whole number of rows");
    n_ = keys_.size() / d_k_;
    if (values_.size() / d_v_ != n_)
        throw DimensionError("cache has " + std::to_string(n_) + " keys but " + std::to_string(values_.size() / d_v_) +
                             " values");
    if (n_ == 0) throw DimensionError("cache must hold at least one key/value pair");
    require_finite(keys_, "keys");
    require_finite(values_, "values");
    if (norm_meta_) {
        if (norm_meta_->key_shift.size() != d_k_) throw DimensionError("normalization shift has wrong dimension");
        if (!(norm_meta_->key_scale > 0.0) || !(norm_meta_->value_scale > 0.0))
            throw DimensionError("normalization scales must be positive");
        require_finite(norm_meta_->key_shift, "normalization shift");
    }
}

KvCache KvCache::from_rows(const std::vector<Vector>& keys, const std::vector<Vector>& values) {
    if (keys.empty() || values.empty()) throw DimensionError("cache must hold at least one key/value pair");
    const std::size_t d_k = keys.front().size();
    const std::size_t d_v = values.front().size();
    Vector k, v;
    k.reserve(keys.size() * d_k);
    v.reserve(values.size() * d_v);
    for (const auto& row : keys) {
        if (row.size() != d_k) throw DimensionError("ragged key rows");
        k.insert(k.end(), row.begin(), row.end());
    }
    for (const auto& row : values) {
        if (row.size() != d_v) throw DimensionError("ragged value rows");
        v.insert(v.end(), row.begin(), row.end());
    }
    return KvCache(std::move(k), std::move(v), d_k, d_v);
}

KvCache KvCache::subset(std::span<const std::size_t> indices) const {
    Vector k, v;
    k.reserve(indices.size() * d_k_);
    v.reserve(indices.size() * d_v_);
    for (std::size_t i : indices) {
        if (i >= n_) throw DimensionError("subset index " + std::to_string(i) + " out of range");
        auto ki = key(i);
        auto vi = value(i);
        k.insert(k.end(), ki.begin(), ki.end());
        v.insert(v.end(), vi.begin(), vi.end());
    }
    return KvCache(std::move(k), std::move(v), d_k_, d_v_, norm_meta_);
}

Vector KvCache::key_sum() const {
    Vector s(d_k_, 0.0);
    for (std::size_t i = 0; i < n_; ++i) axpy(1.0, key(i), s);
    return s;
}

double KvCache::max_key_norm() const {
    double m = 0.0;
    for (std::size_t i = 0; i < n_; ++i) m = std::max(m, norm2(key(i)));
    return m;
}

double KvCache::max_value_norm() const {
    double m = 0.0;
    for (std::size_t i = 0; i < n_; ++i) m = std::max(m, norm2(value(i)));
    return m;
}

Query::Query(Vector q, double declared_rho) : q_(std::move(q)), rho_(declared_rho) {
    require_finite(q_, "query");
    if (!(declared_rho >= 0.0)) throw DimensionError("declared query radius must be nonnegative");
    if (norm2(q_) > declared_rho + 1e-12)
        throw DimensionError("query norm " + std::to_string(norm2(q_)) + " exceeds declared radius " +
                             std::to_string(declared_rho));
}

AttentionParts attention_parts(std::span<const double> q, const KvCache& cache) {
    check_query(q, cache);
    AttentionParts out{Vector(cache.value_dim(), 0.0), 0.0};
    for (std::size_t i = 0; i < cache.size(); ++i) {
        const double w = std::exp(dot(q, cache.key(i)));
        out.denominator += w;
        axpy(w, cache.value(i), out.numerator);
    }
    return out;
}

Vector softmax_numerator(std::span<const double> q, const KvCache& cache) {
    return attention_parts(q, cache).numerator;
}

Vector softmax_numerator(const Query& q, const KvCache& cache) { return softmax_numerator(q.vec(), cache); }

double softmax_denominator(std::span<const double> q, const KvCache& cache) {
    check_query(q, cache);
    double b = 0.0;
    for (std::size_t i = 0; i < cache.size(); ++i) b += std::exp(dot(q, cache.key(i)));
    return b;
}

double softmax_denominator(const Query& q, const KvCache& cache) { return softmax_denominator(q.vec(), cache); }

Vector attn(std::span<const double> q, const KvCache& cache) {
    auto parts = attention_parts(q, cache);
    for (auto& x : parts.numerator) x /= parts.denominator;
    return std::move(parts.numerator);
}

Vector attn(const Query& q, const KvCache& cache) { return attn(q.vec(), cache); }

Vector softmax_weights(std::span<const double> q, const KvCache& cache) {
    check_query(q, cache);
    Vector w(cache.size());
    double b = 0.0;
    for (std::size_t i = 0; i < cache.size(); ++i) {
        w[i] = std::exp(dot(q, cache.key(i)));
        b += w[i];
    }
    for (auto& x : w) x /= b;
    return w;
}

std::pair<KvCache, NormalizationRecord> preprocess(const KvCache& raw) {
    const std::size_t n = raw.size();
    const std::size_t d_k = raw.key_dim();

    NormalizationRecord rec;
    rec.key_shift = raw.key_sum();
    for (auto& x : rec.key_shift) x /= static_cast<double>(n);

    Vector keys = raw.keys();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d_k; ++c) keys[i * d_k + c] -= rec.key_shift[c];

    double max_key = 0.0;
    for (std::size_t i = 0; i < n; ++i) max_key = std::max(max_key, norm2({keys.data() + i * d_k, d_k}));
    // All keys equal after centering: attention ignores keys, keep scale 1.
    rec.key_scale = max_key > 0.0 ? max_key : 1.0;
    for (auto& x : keys) x /= rec.key_scale;

    const double max_value = raw.max_value_norm();
    rec.value_scale = max_value > 0.0 ? max_value : 1.0;
    Vector values = raw.values();
    for (auto& x : values) x /= rec.value_scale;

    KvCache out(std::move(keys), std::move(values), d_k, raw.value_dim(), rec);
    return {std::move(out), std::move(rec)};
}

KvCache restore(const KvCache& preprocessed, const NormalizationRecord& record) {
    const std::size_t d_k = preprocessed.key_dim();
    if (record.key_shift.size() != d_k) throw DimensionError("normalization shift has wrong dimension");
    Vector keys = preprocessed.keys();
    for (std::size_t i = 0; i < preprocessed.size(); ++i)
        for (std::size_t c = 0; c < d_k; ++c)
            keys[i * d_k + c] = keys[i * d_k + c] * record.key_scale + record.key_shift[c];
    Vector values = preprocessed.values();
    for (auto& x : values) x *= record.value_scale;
    return KvCache(std::move(keys), std::move(values), d_k, preprocessed.value_dim());
}

Vector to_preprocessed_query(std::span<const double> raw_query, const NormalizationRecord& record) {
    Vector q(raw_query.begin(), raw_query.end());
    for (auto& x : q) x *= record.key_scale;
    return q;
}

}  // namespace kvslim
