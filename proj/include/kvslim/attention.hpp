// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "kvslim/linalg.hpp"

namespace kvslim {

/// Transform applied by `preprocess`: keys become (k - key_shift) / key_scale,
/// values become v / value_scale.
struct NormalizationRecord {
    Vector key_shift;
    double key_scale = 1.0;
    double value_scale = 1.0;

    bool operator==(const NormalizationRecord&) const = default;
};

/// n key/value pairs stored row-major. Always holds at least one pair.
class KvCache {
  public:
    KvCache(Vector keys, Vector values, std::size_t d_k, std::size_t d_v,
            std::optional<NormalizationRecord> norm_meta = std::nullopt);

    /// Builds a cache from row vectors; all rows must share a dimension.
    static KvCache from_rows(const std::vector<Vector>& keys, const std::vector<Vector>& values);

    std::size_t size() const noexcept { return n_; }
    std::size_t key_dim() const noexcept { return d_k_; }
    std::size_t value_dim() const noexcept { return d_v_; }

    std::span<const double> key(std::size_t i) const { return {keys_.data() + i * d_k_, d_k_}; }
    std::span<const double> value(std::size_t i) const { return {values_.data() + i * d_v_, d_v_}; }
    const Vector& keys() const noexcept { return keys_; }
    const Vector& values() const noexcept { return values_; }

    /// Set once the cache went through `preprocess` (or was loaded with a trailer).
    const std::optional<NormalizationRecord>& norm_meta() const noexcept { return norm_meta_; }
    bool preprocessed() const noexcept { return norm_meta_.has_value(); }

    /// Pairs at the given positions, in the given order. Keeps normalization metadata.
    KvCache subset(std::span<const std::size_t> indices) const;

    Vector key_sum() const;
    double max_key_norm() const;
    double max_value_norm() const;

    bool operator==(const KvCache&) const = default;

  private:
    Vector keys_;
    Vector values_;
    std::size_t n_ = 0;
    std::size_t d_k_ = 0;
    std::size_t d_v_ = 0;
    std::optional<NormalizationRecord> norm_meta_;
};

/// A query vector together with the radius it was declared under.
class Query {
  public:
    Query(Vector q, double declared_rho);

    std::span<const double> vec() const noexcept { return q_; }
    double declared_rho() const noexcept { return rho_; }

  private:
    Vector q_;
    double rho_;
};

/// A(q) = sum_i exp(q.k_i) v_i, accumulated in index order.
Vector softmax_numerator(std::span<const double> q, const KvCache& cache);
Vector softmax_numerator(const Query& q, const KvCache& cache);

/// B(q) = sum_i exp(q.k_i).
double softmax_denominator(std::span<const double> q, const KvCache& cache);
double softmax_denominator(const Query& q, const KvCache& cache);

/// Attn(q) = A(q) / B(q).
Vector attn(std::span<const double> q, const KvCache& cache);
Vector attn(const Query& q, const KvCache& cache);

/// Normalized softmax weights exp(q.k_i) / B(q).
Vector softmax_weights(std::span<const double> q, const KvCache& cache);

/// Numerator and denominator from a single pass over the cache.
struct AttentionParts {
    Vector numerator;
    double denominator = 0.0;
};
AttentionParts attention_parts(std::span<const double> q, const KvCache& cache);

/// Centers keys exactly, then scales keys and values into the unit ball.
std::pair<KvCache, NormalizationRecord> preprocess(const KvCache& raw);

/// Inverse of `preprocess`; drops the normalization metadata.
KvCache restore(const KvCache& preprocessed, const NormalizationRecord& record);

/// Maps a query for the raw cache to the equivalent query on the preprocessed cache.
Vector to_preprocessed_query(std::span<const double> raw_query, const NormalizationRecord& record);

}  // namespace kvslim
