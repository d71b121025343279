// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kvslim/attention.hpp"
#include "kvslim/balancer.hpp"
#include "kvslim/features.hpp"
#include "kvslim/verifier.hpp"

namespace kvslim {

/// rho + ln(rho)/2 + ln ln(max(rho, e)).
double zeta_radius(double rho);

/// Jensen lower bound on B(q) over |q| <= rho: n * exp(-rho |sum k_i| / n).
double denominator_lower_bound(const KvCache& cache, double rho);

enum class BudgetMode { TheoryModel, Measured };

std::string_view to_string(BudgetMode mode);

struct BudgetModel {
    double rho = 0.0;
    double zeta = 0.0;
    double eps_target = 0.0;
    BudgetMode mode = BudgetMode::Measured;
    /// Constant c in the per-step model c * sqrt(d_k) * e^zeta (TheoryModel only).
    double theory_constant = 1.0;
    std::vector<double> per_step_error_estimates;

    double accumulated() const;
};

BudgetModel make_budget(double rho, double eps, BudgetMode mode, double theory_constant = 1.0);

/// What one halving did and what it cost.
struct StepReport {
    std::size_t step = 0;
    std::size_t n_in = 0;
    std::size_t n_out = 0;
    std::size_t degree = 0;
    std::uint64_t seed = 0;
    std::vector<ObjectiveDiscrepancy> discrepancies;
    std::vector<BalanceTrial> trials;

    /// n_in * truncation_tail(rho, degree): error charged for the omitted Taylor terms.
    double tail_charge = 0.0;
    std::vector<double> numerator_star_norms;
    std::vector<double> denominator_star_norms;
    /// error_series_bound over the numerator / denominator star norms (0 when star norms are off).
    double numerator_series_bound = 0.0;
    double denominator_series_bound = 0.0;
    /// 2 * numerator_series_bound + 2 * denominator_series_bound.
    double predicted_error = 0.0;

    /// Suite maxima of |A - 2A'|, |B - 2B'| and |Attn - Attn'|.
    double measured_numerator_error = 0.0;
    double measured_denominator_error = 0.0;
    double measured_attention_error = 0.0;

    double b_lower = 0.0;
    double key_sum_norm_before = 0.0;
    double key_sum_norm_after = 0.0;

    /// Positions kept, relative to the step's input cache.
    std::vector<std::size_t> kept;
    /// Signs oriented so the kept side is +1.
    std::vector<std::int8_t> signs;
};

struct HalvingOptions {
    double rho = 1.0;
    bool star_norms = true;
    StarNormOptions star;
    /// Queries used for the measured errors; a default suite is built from the input when null.
    const QuerySuite* suite = nullptr;
    QueryCounts default_counts{64, 64, 0};
};

struct HalvingOutcome {
    KvCache cache;
    StepReport report;
};

/// Balances numerator, denominator and key-sum objectives simultaneously (s = 3) and keeps
/// the minority side. Throws NoProgress when every item lands on one side.
HalvingOutcome halving_step(const KvCache& cache, const EmbeddingConfig& cfg, std::span<const std::uint64_t> seeds,
                            const HalvingOptions& opts);

/// Halving with i.i.d. random signs; the baseline the balanced step is compared against.
HalvingOutcome random_halving(const KvCache& cache, std::uint64_t seed, const HalvingOptions& opts);

struct StepErrorTerm {
    double delta_a = 0.0;
    double delta_b = 0.0;
    double b_lower = 0.0;
};

struct ErrorPrediction {
    double bound = 0.0;
    bool valid = true;
    /// First step whose delta_b exceeds b_lower / 2, when invalid.
    std::optional<std::size_t> first_invalid_step;
};

/// sum_step (2 delta_a + 2 delta_b) / b_lower: bound on |Attn(q, coreset) - Attn(q, original)|.
ErrorPrediction predict_error(std::span<const StepErrorTerm> steps);

/// Per-step terms from reports: suite maxima (Measured) or c sqrt(d_k) e^zeta (TheoryModel).
std::vector<StepErrorTerm> step_error_terms(std::span<const StepReport> steps, const BudgetModel& budget,
                                            std::size_t key_dim);

struct CompressionPolicy {
    std::optional<std::size_t> target_size;
    std::size_t min_size = 1;
    std::size_t max_steps = 64;
    std::size_t seeds_per_step = 16;
    std::uint64_t seed = 0;
    /// Fixed truncation degree; otherwise the smallest M with tail <= tail_fraction * eps / n.
    std::optional<std::size_t> max_degree;
    double tail_fraction = 1.0 / 8.0;
    std::size_t capacity = EmbeddingConfig::kDefaultCapacity;
    BudgetMode mode = BudgetMode::Measured;
    double theory_constant = 1.0;
    QueryCounts suite_counts{256, 256, 0};
    bool star_norms = true;
    StarNormOptions star{8, 200, 1e-10, 0};
    /// Re-center the working keys before each step (translation leaves attention unchanged).
    bool recenter = false;
};

struct Coreset {
    std::vector<std::size_t> indices;  // sorted positions in the original cache
    std::vector<StepReport> steps;
    KvCache final_cache;
    BudgetModel budget;
    ErrorPrediction prediction;
    std::string stop_reason;
    std::string diagnostic;
    double key_sum_allowance = 0.0;

    std::size_t size() const noexcept { return indices.size(); }
};

/// Repeated halving of a preprocessed cache while the accumulated error bound stays
/// within eps, the denominator stays safe, and the policy allows another step.
Coreset compress(const KvCache& cache, double rho, double eps, const CompressionPolicy& policy = {});

}  // namespace kvslim
