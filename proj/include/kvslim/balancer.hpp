// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "kvslim/attention.hpp"
#include "kvslim/features.hpp"
#include "kvslim/linalg.hpp"

namespace kvslim {

enum class ObjectiveId { Numerator, Denominator, KeySum };

std::string_view to_string(ObjectiveId id);

/// One family of n item vectors whose signed sum should be small.
///
/// Items are produced on demand so large feature embeddings never need to be
/// materialized for the whole cache at once. `weight` is the concatenation scale
/// applied when several objectives are balanced with a single sign vector.
class BalanceObjective {
  public:
    using Generator = std::function<void(std::size_t item, std::span<double> out)>;

    BalanceObjective(ObjectiveId id, std::size_t n, std::size_t dim, Generator gen, double weight = 1.0);

    static BalanceObjective from_rows(ObjectiveId id, const std::vector<Vector>& rows, double weight = 1.0);
    /// Tensor features embed(k_i, v_i).
    static BalanceObjective numerator(const KvCache& cache, const EmbeddingConfig& cfg, double weight = 1.0);
    /// Tensor features with every value replaced by the scalar 1.
    static BalanceObjective denominator(const KvCache& cache, const EmbeddingConfig& cfg, double weight = 1.0);
    /// The raw keys.
    static BalanceObjective key_sum(const KvCache& cache, double weight = 1.0);

    ObjectiveId id() const noexcept { return id_; }
    std::size_t size() const noexcept { return n_; }
    std::size_t dim() const noexcept { return dim_; }
    double weight() const noexcept { return weight_; }
    BalanceObjective with_weight(double w) const;

    void item(std::size_t i, std::span<double> out) const { gen_(i, out); }
    Vector item(std::size_t i) const;

    /// || sum_i signs[i] x_i ||, unscaled by the weight.
    double discrepancy(std::span<const std::int8_t> signs) const;
    Vector signed_sum(std::span<const std::int8_t> signs) const;

  private:
    ObjectiveId id_;
    std::size_t n_;
    std::size_t dim_;
    Generator gen_;
    double weight_;
};

/// Copies of the objectives with weight 1/sqrt(s), s = objectives.size().
std::vector<BalanceObjective> simultaneous(std::vector<BalanceObjective> objectives);

/// Per item, the concatenation of all objective vectors, each block scaled by its weight.
struct PackedItems {
    std::size_t n = 0;
    std::size_t dim = 0;
    std::vector<std::size_t> block_offsets;  // one per objective, plus the end
    Vector data;                             // n x dim, row-major

    std::span<const double> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
};
PackedItems simultaneous_pack(std::span<const BalanceObjective> objectives);

enum class Combine { Max, Sum };

struct ObjectiveDiscrepancy {
    ObjectiveId id;
    double value = 0.0;   // unscaled norm of the signed sum
    double weight = 1.0;  // scale used in the combined score
};

struct BalanceTrial {
    std::uint64_t seed = 0;
    double combined = 0.0;
};

struct SignAssignment {
    std::vector<std::int8_t> signs;
    std::vector<ObjectiveDiscrepancy> discrepancies;
    double combined = 0.0;
    std::int8_t minority_side = 1;
    std::uint64_t seed = 0;
    std::vector<BalanceTrial> trials;

    std::size_t count(std::int8_t side) const;
    double discrepancy(ObjectiveId id) const;
};

/// Max (or sum) over objectives of weight * || signed sum ||.
double combined_discrepancy(std::span<const BalanceObjective> objectives, std::span<const std::int8_t> signs,
                            Combine combine = Combine::Max);

/// Fills discrepancies, combined score and minority side for the given signs.
SignAssignment score_assignment(std::span<const BalanceObjective> objectives, std::vector<std::int8_t> signs,
                                Combine combine = Combine::Max);

inline constexpr std::size_t kExhaustiveMaxItems = 24;

/// Global minimizer over all sign vectors with signs[0] = +1 (the flip-symmetric half).
/// Ties go to the lexicographically smallest vector, ordering -1 before +1.
SignAssignment balance_exhaustive(std::span<const BalanceObjective> objectives, Combine combine = Combine::Max);

/// Greedy walk: items in seed-shuffled order, each signed against the running packed sum.
SignAssignment balance_walk(std::span<const BalanceObjective> objectives, std::uint64_t seed);

/// Same walk over an explicit processing order (a permutation of 0..n-1).
SignAssignment balance_walk(std::span<const BalanceObjective> objectives, std::uint64_t seed,
                            std::span<const std::size_t> order);

/// Runs one walk per seed and keeps the best combined score; every trial is recorded.
SignAssignment balance_best_of(std::span<const BalanceObjective> objectives, std::span<const std::uint64_t> seeds);

/// Result of keeping one side of a sign assignment.
struct HalveResult {
    KvCache cache;
    std::vector<std::size_t> kept;  // positions in the input cache, ascending
    std::int8_t kept_side = 1;
    /// Every item had the same sign; `cache` is the unchanged input.
    bool degenerate = false;
};

/// Keeps the minority side, so 2 A(q, kept) = A(q, all) + E(q) with E signed toward the kept side.
HalveResult halve_select(const KvCache& cache, const SignAssignment& assignment);

}  // namespace kvslim
