// SPDX-License-Identifier: Apache-2.0

#include "kvslim/compressor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "kvslim/errors.hpp"
#include "kvslim/rng.hpp"

namespace kvslim {

double zeta_radius(double rho) {
    if (!(rho > 0.0)) throw std::invalid_argument("zeta_radius needs rho > 0");
    return rho + 0.5 * std::log(rho) + std::log(std::log(std::max(rho, std::exp(1.0))));
}

double denominator_lower_bound(const KvCache& cache, double rho) {
    const double n = static_cast<double>(cache.size());
    return n * std::exp(-rho * norm2(cache.key_sum()) / n);
}

std::string_view to_string(BudgetMode mode) {
    return mode == BudgetMode::Measured ? "measured" : "theory_model";
}

double BudgetModel::accumulated() const {
    return std::accumulate(per_step_error_estimates.begin(), per_step_error_estimates.end(), 0.0);
}

BudgetModel make_budget(double rho, double eps, BudgetMode mode, double theory_constant) {
    BudgetModel b;
    b.rho = rho;
    b.zeta = zeta_radius(rho);
    b.eps_target = eps;
    b.mode = mode;
    b.theory_constant = theory_constant;
    return b;
}

namespace {

HalvingOutcome finish_step(const KvCache& cache, const EmbeddingConfig* cfg, const SignAssignment& assignment,
                           const HalvingOptions& opts) {
    HalveResult half = halve_select(cache, assignment);
    if (half.degenerate) throw NoProgress("balancer placed all " + std::to_string(cache.size()) + " items on one side");

    StepReport r;
    r.n_in = cache.size();
    r.n_out = half.cache.size();
    r.seed = assignment.seed;
    r.discrepancies = assignment.discrepancies;
    r.trials = assignment.trials;
    r.kept = half.kept;
    r.signs.resize(cache.size());
    for (std::size_t i = 0; i < cache.size(); ++i)
        r.signs[i] = static_cast<std::int8_t>(assignment.signs[i] * half.kept_side);

    if (cfg) {
        r.degree = cfg->degree();
        r.tail_charge = static_cast<double>(cache.size()) * truncation_tail(opts.rho, cfg->degree());
        if (opts.star_norms) {
            auto values = [&](const BlockSum& s, const EmbeddingConfig& c) {
                std::vector<double> v;
                for (const auto& e : star_norms(s, c, opts.star)) v.push_back(e.value);
                return v;
            };
            const EmbeddingConfig den_cfg = cfg->with_value_dim(1);
            r.numerator_star_norms = values(numerator_block_sum(cache, r.signs, *cfg), *cfg);
            r.denominator_star_norms = values(denominator_block_sum(cache, r.signs, den_cfg), den_cfg);
            r.numerator_series_bound = error_series_bound(r.numerator_star_norms, opts.rho, cache.size());
            r.denominator_series_bound = error_series_bound(r.denominator_star_norms, opts.rho, cache.size());
            r.predicted_error = 2.0 * r.numerator_series_bound + 2.0 * r.denominator_series_bound;
        }
    }

    QuerySuite local;
    const QuerySuite* suite = opts.suite;
    if (!suite) {
        local = build_query_suite(cache, opts.rho, opts.default_counts, derive_seed(assignment.seed, 0x5e7));
        suite = &local;
    }
    const ErrorReport err = empirical_error(*suite, cache, half.cache, 2.0);
    r.measured_numerator_error = std::max(err.numerator.max, err.origin_numerator);
    r.measured_denominator_error = std::max(err.denominator.max, err.origin_denominator);
    r.measured_attention_error = std::max(err.attention.max, err.origin_attention);

    r.b_lower = denominator_lower_bound(cache, opts.rho);
    r.key_sum_norm_before = norm2(cache.key_sum());
    r.key_sum_norm_after = norm2(half.cache.key_sum());
    return HalvingOutcome{std::move(half.cache), std::move(r)};
}

}  // namespace

HalvingOutcome halving_step(const KvCache& cache, const EmbeddingConfig& cfg, std::span<const std::uint64_t> seeds,
                            const HalvingOptions& opts) {
    if (cache.size() < 2) throw NoProgress("a single item cannot be halved");
    std::vector<BalanceObjective> objectives;
    objectives.push_back(BalanceObjective::numerator(cache, cfg));
    objectives.push_back(BalanceObjective::denominator(cache, cfg));
    objectives.push_back(BalanceObjective::key_sum(cache));
    objectives = simultaneous(std::move(objectives));
    const SignAssignment assignment = balance_best_of(objectives, seeds);
    return finish_step(cache, &cfg, assignment, opts);
}

HalvingOutcome random_halving(const KvCache& cache, std::uint64_t seed, const HalvingOptions& opts) {
    if (cache.size() < 2) throw NoProgress("a single item cannot be halved");
    Rng rng(seed);
    SignAssignment a;
    a.seed = seed;
    a.signs.resize(cache.size());
    for (auto& s : a.signs) s = rng.coin() ? 1 : -1;
    return finish_step(cache, nullptr, a, opts);
}

ErrorPrediction predict_error(std::span<const StepErrorTerm> steps) {
    ErrorPrediction p;
    for (std::size_t s = 0; s < steps.size(); ++s) {
        const auto& t = steps[s];
        if (!(t.b_lower > 0.0) || t.delta_b > 0.5 * t.b_lower) {
            if (p.valid) p.first_invalid_step = s;
            p.valid = false;
        }
        if (t.b_lower > 0.0) p.bound += (2.0 * t.delta_a + 2.0 * t.delta_b) / t.b_lower;
    }
    return p;
}

std::vector<StepErrorTerm> step_error_terms(std::span<const StepReport> steps, const BudgetModel& budget,
                                            std::size_t key_dim) {
    std::vector<StepErrorTerm> terms;
    const double model = budget.theory_constant * std::sqrt(static_cast<double>(key_dim)) * std::exp(budget.zeta);
    for (const auto& s : steps) {
        if (budget.mode == BudgetMode::Measured)
            terms.push_back({s.measured_numerator_error, s.measured_denominator_error, s.b_lower});
        else
            terms.push_back({model, model, s.b_lower});
    }
    return terms;
}

namespace {

KvCache recentered(const KvCache& c) {
    Vector mean = c.key_sum();
    for (auto& x : mean) x /= static_cast<double>(c.size());
    Vector keys = c.keys();
    for (std::size_t i = 0; i < c.size(); ++i)
        for (std::size_t j = 0; j < c.key_dim(); ++j) keys[i * c.key_dim() + j] -= mean[j];
    return KvCache(std::move(keys), c.values(), c.key_dim(), c.value_dim(), c.norm_meta());
}

}  // namespace

Coreset compress(const KvCache& cache, double rho, double eps, const CompressionPolicy& policy) {
    if (!(rho > 0.0) || !(eps > 0.0)) throw std::invalid_argument("compress needs rho > 0 and eps > 0");
    if (!cache.preprocessed() || cache.max_key_norm() > 1.0 + 1e-9 || cache.max_value_norm() > 1.0 + 1e-9)
        throw std::invalid_argument("compress expects a preprocessed cache (centered, unit-bounded keys and values)");
    if (policy.seeds_per_step == 0) throw std::invalid_argument("seeds_per_step must be positive");

    const std::size_t n0 = cache.size();
    Coreset out{{}, {}, cache, make_budget(rho, eps, policy.mode, policy.theory_constant), {}, {}, {}, 0.0};
    out.key_sum_allowance =
        std::sqrt(10.0 * static_cast<double>(cache.key_dim())) * std::max(1.0, std::log2(static_cast<double>(n0)));

    const QuerySuite suite = build_query_suite(cache, rho, policy.suite_counts, derive_seed(policy.seed, 0x5e7));
    HalvingOptions opts;
    opts.rho = rho;
    opts.star_norms = policy.star_norms;
    opts.star = policy.star;
    opts.suite = &suite;

    KvCache working = cache;
    std::vector<std::size_t> map(n0);
    std::iota(map.begin(), map.end(), std::size_t{0});

    for (;;) {
        const std::size_t n = working.size();
        if (policy.target_size && n <= *policy.target_size) {
            out.stop_reason = "target_size_reached";
            break;
        }
        if (n < 2) {
            out.stop_reason = "single_item";
            break;
        }
        if (out.steps.size() >= policy.max_steps) {
            out.stop_reason = "max_steps";
            break;
        }
        if (n / 2 < policy.min_size) {
            out.stop_reason = "min_size";
            break;
        }

        const std::size_t degree = policy.max_degree.value_or(
            truncation_degree(rho, policy.tail_fraction * eps / static_cast<double>(n)));
        const EmbeddingConfig cfg(degree, working.key_dim(), working.value_dim(), std::nullopt, policy.capacity);
        std::vector<std::uint64_t> seeds;
        for (std::size_t j = 0; j < policy.seeds_per_step; ++j)
            seeds.push_back(derive_seed(policy.seed, out.steps.size() + 1, j));

        if (policy.recenter) working = recentered(working);
        std::optional<HalvingOutcome> outcome;
        try {
            outcome = halving_step(working, cfg, seeds, opts);
        } catch (const NoProgress&) {
            out.stop_reason = "no_progress";
            break;
        }
        outcome->report.step = out.steps.size();

        if (outcome->report.key_sum_norm_after > out.key_sum_allowance) {
            std::ostringstream msg;
            msg << "key sum norm " << outcome->report.key_sum_norm_after << " after step " << out.steps.size()
                << " exceeds allowance " << out.key_sum_allowance;
            throw CenteringDriftError(msg.str());
        }

        std::vector<StepReport> trial = out.steps;
        trial.push_back(outcome->report);
        const auto terms = step_error_terms(trial, out.budget, working.key_dim());
        const ErrorPrediction pred = predict_error(terms);
        if (!pred.valid) {
            out.stop_reason = "denominator_safety";
            break;
        }
        if (pred.bound > eps) {
            out.stop_reason = "error_budget";
            if (out.steps.empty()) {
                std::ostringstream msg;
                msg << "eps unachievable without compression: a single halving already needs " << pred.bound
                    << " > eps = " << eps;
                out.diagnostic = msg.str();
            }
            break;
        }

        const auto& t = terms.back();
        out.budget.per_step_error_estimates.push_back((2.0 * t.delta_a + 2.0 * t.delta_b) / t.b_lower);
        out.prediction = pred;
        std::vector<std::size_t> next_map;
        next_map.reserve(outcome->report.kept.size());
        for (std::size_t k : outcome->report.kept) next_map.push_back(map[k]);
        map = std::move(next_map);
        working = std::move(outcome->cache);
        out.steps.push_back(std::move(outcome->report));
    }

    out.indices = map;
    out.final_cache = cache.subset(out.indices);
    return out;
}

}  // namespace kvslim
