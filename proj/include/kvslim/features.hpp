// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "kvslim/attention.hpp"
#include "kvslim/linalg.hpp"
#include "kvslim/tensor_terms.hpp"

namespace kvslim {

/// Per-degree weight sqrt(3(m+2)) ln(m+2). Stacking blocks scaled by 1/z(m) keeps
/// embeddings of unit vectors inside the unit ball.
double z_weight(std::size_t m);

/// sum_{m>M} rho^m / m!, never below the true tail.
double truncation_tail(double rho, std::size_t degree);

/// Smallest M with truncation_tail(rho, M) <= tolerance, capped at `max_degree`.
std::size_t truncation_degree(double rho, double tolerance, std::size_t max_degree = 64);

/// Layout of the stacked tensor features: degrees 0..M, block m holding
/// flat(k^{(x)m} (x) v) / z(m) in either the explicit or the symmetric layout.
class EmbeddingConfig {
  public:
    static constexpr std::size_t kDefaultCapacity = std::size_t{1} << 24;

    /// `symmetric` defaults to true for key_dim >= 4.
    EmbeddingConfig(std::size_t degree, std::size_t key_dim, std::size_t value_dim,
                    std::optional<bool> symmetric = std::nullopt, std::size_t capacity = kDefaultCapacity);

    std::size_t degree() const noexcept { return degree_; }
    std::size_t key_dim() const noexcept { return key_dim_; }
    std::size_t value_dim() const noexcept { return value_dim_; }
    bool symmetric() const noexcept { return symmetric_; }
    std::size_t capacity() const noexcept { return capacity_; }
    const Vector& z_weights() const noexcept { return z_weights_; }

    std::size_t block_offset(std::size_t m) const { return offsets_.at(m); }
    std::size_t block_size(std::size_t m) const { return offsets_.at(m + 1) - offsets_.at(m); }
    std::size_t total_dim() const noexcept { return offsets_.back(); }
    const std::vector<std::size_t>& offsets() const noexcept { return offsets_; }

    /// Same degree and layout with a different value dimension.
    EmbeddingConfig with_value_dim(std::size_t value_dim) const;

    const TermTree& terms() const { return *tree_; }

  private:
    std::size_t degree_;
    std::size_t key_dim_;
    std::size_t value_dim_;
    bool symmetric_;
    std::size_t capacity_;
    Vector z_weights_;
    std::vector<std::size_t> offsets_;
    std::shared_ptr<const TermTree> tree_;
};

/// Stacked feature blocks; block m starts at offsets[m].
struct FeatureVector {
    Vector data;
    std::vector<std::size_t> offsets;

    std::size_t degree() const { return offsets.size() - 2; }
    std::span<const double> block(std::size_t m) const {
        return {data.data() + offsets.at(m), offsets.at(m + 1) - offsets.at(m)};
    }
    std::span<double> block(std::size_t m) { return {data.data() + offsets.at(m), offsets.at(m + 1) - offsets.at(m)}; }
};

/// Signed per-degree sums S_m = sum_i sigma_i k_i^{(x)m} (x) v_i / z(m), same layout as FeatureVector.
using BlockSum = FeatureVector;

FeatureVector embed(std::span<const double> k, std::span<const double> v, const EmbeddingConfig& cfg);

/// Writes the embedding into `out` (size cfg.total_dim()). `scratch` is reused across calls.
void embed_into(std::span<const double> k, std::span<const double> v, const EmbeddingConfig& cfg,
                std::span<double> out, std::vector<Vector>& scratch);

/// Embedding with the value replaced by the scalar 1; uses cfg.with_value_dim(1).
FeatureVector denominator_embed(std::span<const double> k, const EmbeddingConfig& cfg);

/// sum_{m<=M} (q.k)^m / m!.
double reconstruct_weight(std::span<const double> q, std::span<const double> k, const EmbeddingConfig& cfg);

/// Signed sum of per-item features, block by block.
BlockSum block_sum(std::span<const FeatureVector> items, std::span<const std::int8_t> signs);

/// S_m for the numerator objective over a cache; `cfg` must match the cache dimensions.
BlockSum numerator_block_sum(const KvCache& cache, std::span<const std::int8_t> signs, const EmbeddingConfig& cfg);

/// S_m for the denominator objective (values replaced by 1); `cfg` is any config with
/// the cache's key dimension, its value dimension is ignored.
BlockSum denominator_block_sum(const KvCache& cache, std::span<const std::int8_t> signs,
                               const EmbeddingConfig& cfg);

/// <q^{(x)m} (x) e_j, block m> for every value coordinate j.
Vector contract_block(const FeatureVector& f, const EmbeddingConfig& cfg, std::size_t m, std::span<const double> q);

/// sum_m z(m)/m! <q^{(x)m}, S_m>: the truncated-exponential signed sum
/// sum_i sigma_i sum_{m<=M} (q.k_i)^m / m! v_i recovered from the features.
Vector truncated_series(const BlockSum& sum, const EmbeddingConfig& cfg, std::span<const double> q);

}  // namespace kvslim
