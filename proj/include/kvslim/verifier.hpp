// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "kvslim/attention.hpp"
#include "kvslim/features.hpp"
#include "kvslim/linalg.hpp"

namespace kvslim {

enum class QueryKind { RandomDirection, KeyAligned, AscentRefined };

std::string_view to_string(QueryKind kind);

/// Finite stand-in for "all queries of norm at most rho". Every query has norm exactly rho.
struct QuerySuite {
    double rho = 0.0;
    std::uint64_t seed = 0;
    std::vector<Vector> queries;
    std::vector<QueryKind> kinds;

    std::size_t size() const noexcept { return queries.size(); }
};

struct QueryCounts {
    std::size_t random = 64;
    std::size_t key_aligned = 64;
    std::size_t ascent = 0;
};

/// Random directions, rho * k_i / |k_i| for a seeded subsample of keys, and optionally
/// queries refined by gradient ascent on |Attn(q, cache) - Attn(q, half)|^2.
/// Ascent queries require `half`.
QuerySuite build_query_suite(const KvCache& cache, double rho, QueryCounts counts, std::uint64_t seed,
                             const KvCache* half = nullptr);

/// Appends `count` ascent-refined queries started from the worst existing members.
/// A refined query is only kept if it strictly improves on its start.
void refine_queries(QuerySuite& suite, const KvCache& full, const KvCache& half, std::size_t count,
                    std::size_t iterations = 60);

struct ErrorStats {
    double max = 0.0;
    double p95 = 0.0;
    double median = 0.0;
    std::size_t argmax = 0;
};

ErrorStats summarize(std::span<const double> values);

/// Errors of `half` against `full` over a suite. Suite statistics are lower bounds on the
/// supremum over the ball. The origin q = 0 is always evaluated in addition to the suite.
struct ErrorReport {
    double mass_ratio = 2.0;  // A(full) is compared against mass_ratio * A(half)
    std::size_t queries = 0;
    ErrorStats numerator;     // |A - r A'|
    ErrorStats denominator;   // |B - r B'|
    ErrorStats attention;     // |Attn - Attn'|
    double origin_numerator = 0.0;
    double origin_denominator = 0.0;
    double origin_attention = 0.0;
};

ErrorReport empirical_error(const QuerySuite& suite, const KvCache& full, const KvCache& half,
                            double mass_ratio = 2.0);

/// A degree-m tensor block in a TermTree layout: terms(m) rows of value_dim entries.
struct TensorBlockView {
    std::span<const double> data;
    std::size_t degree = 0;
    std::size_t key_dim = 0;
    std::size_t value_dim = 0;
    bool symmetric = false;
};

TensorBlockView block_view(const BlockSum& sum, const EmbeddingConfig& cfg, std::size_t m);

/// <qhat^{(x)m} (x) u, S>.
double evaluate_test_tensor(const TensorBlockView& block, std::span<const double> qhat, std::span<const double> u);

/// Contraction of S with qhat^{(x)m}, a vector of length value_dim.
Vector contract_direction(const TensorBlockView& block, std::span<const double> qhat);

struct StarNormOptions {
    std::size_t restarts = 32;
    std::size_t max_iterations = 200;
    double tolerance = 1e-10;
    std::uint64_t seed = 0;
};

struct StarNormEstimate {
    std::size_t degree = 0;
    double value = 0.0;  // certified lower bound: value == <qhat^m (x) u, S>
    Vector qhat;
    Vector u;
    std::size_t restarts = 0;
    std::size_t iterations = 0;
    bool converged = false;
};

/// max over unit qhat, u of <qhat^{(x)m} (x) u, S>. Exact for m = 0 (vector norm) and
/// m = 1 (largest singular value); alternating ascent with restarts for m >= 2.
StarNormEstimate star_norm(const TensorBlockView& block, const StarNormOptions& opts = {});

/// The alternating ascent alone, for any m >= 1.
StarNormEstimate star_norm_ascent(const TensorBlockView& block, const StarNormOptions& opts = {});

/// Star norms of every block of a block sum.
std::vector<StarNormEstimate> star_norms(const BlockSum& sum, const EmbeddingConfig& cfg,
                                         const StarNormOptions& opts = {});

/// sum_m z(m) rho^m / m! * star[m] + n_items * truncation_tail(rho, M), M = star.size() - 1.
/// Bounds sup_{|q| <= rho} |E(q)| when the star norms are exact.
double error_series_bound(std::span<const double> star_values, double rho, std::size_t n_items);

/// max_m star[m] / sqrt(key_dim * ln(m + 2)): the empirical constant in the per-degree profile.
double fit_star_profile(std::span<const double> star_values, std::size_t key_dim);

}  // namespace kvslim
