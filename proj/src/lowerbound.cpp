// SPDX-License-Identifier: Apache-2.0

#include "kvslim/lowerbound.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kvslim/compressor.hpp"
#include "kvslim/errors.hpp"
#include "kvslim/rng.hpp"

namespace kvslim {

std::string_view to_string(LbVariant v) { return v == LbVariant::Sketch ? "sketch" : "coreset"; }

std::string_view to_string(ReductionMode mode) {
    switch (mode) {
        case ReductionMode::Full:
            return "full";
        case ReductionMode::RandomSubsample:
            return "random_subsample";
        case ReductionMode::Compressor:
            return "compressor";
    }
    return "unknown";
}

namespace {

double max_pairwise(const std::vector<Vector>& words) {
    double worst = -1.0;
    for (std::size_t a = 0; a < words.size(); ++a)
        for (std::size_t b = a + 1; b < words.size(); ++b) worst = std::max(worst, dot(words[a], words[b]));
    return worst;
}

}  // namespace

SphericalCode spherical_code(std::size_t m, std::size_t d_k, double eta, std::uint64_t seed, std::size_t max_tries) {
    if (m == 0 || d_k == 0) throw DimensionError("spherical code needs m >= 1 and d_k >= 1");
    if (!(eta >= 0.0) || eta > 0.5) throw std::invalid_argument("spherical code needs 0 <= eta <= 1/2");
    SphericalCode code;
    code.dim = d_k;
    if (eta == 0.0 && m <= d_k) {
        for (std::size_t i = 0; i < m; ++i) {
            Vector e(d_k, 0.0);
            e[i] = 1.0;
            code.codewords.push_back(std::move(e));
        }
        code.eta = 0.0;
        code.tries = 0;
        return code;
    }
    Rng rng(derive_seed(seed, 0xc0de));
    double best = 2.0;
    for (std::size_t t = 1; t <= max_tries; ++t) {
        std::vector<Vector> words;
        for (std::size_t i = 0; i < m; ++i) words.push_back(rng.unit_vector(d_k));
        const double achieved = m == 1 ? 0.0 : max_pairwise(words);
        best = std::min(best, achieved);
        if (achieved <= eta) {
            code.codewords = std::move(words);
            code.eta = achieved;
            code.tries = t;
            return code;
        }
    }
    throw CodeNotFound("no spherical code with " + std::to_string(m) + " words in dimension " + std::to_string(d_k) +
                           " at eta " + std::to_string(eta) + " after " + std::to_string(max_tries) +
                           " tries; best eta " + std::to_string(best),
                       best);
}

IndexingInstance build_instance(std::span<const std::uint8_t> bits, std::span<const std::int8_t> signs,
                                std::size_t m, std::size_t d, LbVariant variant, double rho,
                                const SphericalCode& code) {
    if (code.size() != m) throw DimensionError("code has " + std::to_string(code.size()) + " words, need m = " +
                                               std::to_string(m));
    if (bits.size() != m * d || signs.size() != m * d) throw DimensionError("bits and signs must be m x d");
    if (d == 0) throw DimensionError("value dimension d must be positive");
    const std::size_t d_k = code.dim;
    Vector keys, values;
    if (variant == LbVariant::Sketch) {
        const double inv = 1.0 / std::sqrt(static_cast<double>(d));
        for (std::size_t i = 0; i < m; ++i) {
            keys.insert(keys.end(), code.codewords[i].begin(), code.codewords[i].end());
            for (std::size_t j = 0; j < d; ++j) values.push_back(inv * signs[i * d + j] * bits[i * d + j]);
        }
    } else {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                keys.insert(keys.end(), code.codewords[i].begin(), code.codewords[i].end());
                for (std::size_t c = 0; c < d; ++c)
                    values.push_back(c == j ? static_cast<double>(signs[i * d + j] * bits[i * d + j]) : 0.0);
            }
    }
    return IndexingInstance{variant,
                            rho,
                            std::exp(rho),
                            m,
                            d,
                            std::vector<std::uint8_t>(bits.begin(), bits.end()),
                            std::vector<std::int8_t>(signs.begin(), signs.end()),
                            code,
                            KvCache(std::move(keys), std::move(values), d_k, d)};
}

IndexingInstance build_instance(std::span<const std::uint8_t> bits, std::size_t m, std::size_t d, LbVariant variant,
                                double rho, const SphericalCode& code, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x516));
    std::vector<std::int8_t> signs(m * d);
    for (auto& s : signs) s = rng.coin() ? 1 : -1;
    return build_instance(bits, signs, m, d, variant, rho, code);
}

Vector decoding_query(const IndexingInstance& inst, std::size_t i) {
    Vector q = inst.code.codewords.at(i);
    for (auto& x : q) x *= inst.rho;
    return q;
}

double cross_weight(const IndexingInstance& inst, std::size_t i, std::size_t h) {
    return std::exp(inst.rho * dot(inst.code.codewords.at(i), inst.code.codewords.at(h)));
}

double cross_noise(const IndexingInstance& inst, std::size_t i, std::size_t j) {
    double n = 0.0;
    for (std::size_t h = 0; h < inst.m; ++h) {
        if (h == i) continue;
        n += cross_weight(inst, i, h) * inst.sign(i, j) * inst.sign(h, j) * inst.bit(h, j);
    }
    if (inst.variant == LbVariant::Sketch) n /= std::sqrt(static_cast<double>(inst.d));
    return n;
}

double decode_threshold(const IndexingInstance& inst, double b_value) {
    const double t = inst.L / (2.0 * b_value);
    return inst.variant == LbVariant::Sketch ? t / std::sqrt(static_cast<double>(inst.d)) : t;
}

std::uint8_t decode_bit(const IndexingInstance& inst, double attn_output_j, std::size_t i, std::size_t j,
                        double b_value) {
    return inst.sign(i, j) * attn_output_j > decode_threshold(inst, b_value) ? 1 : 0;
}

DecodeReport recovery_experiment(const LbParams& params, ReductionMode mode, std::size_t target_size,
                                 std::size_t trials, std::uint64_t seed) {
    DecodeReport rep;
    rep.params = params;
    rep.eta = params.eta.value_or(1.0 / params.rho);
    rep.mode = mode;
    rep.target_size = target_size;
    const double L = std::exp(params.rho);
    rep.chebyshev_bound = 100.0 * std::exp(2.0) * static_cast<double>(params.m) / (L * L);
    rep.noise_regime_warning = rep.chebyshev_bound > 0.25;

    const double noise_scale =
        params.variant == LbVariant::Sketch ? L / (10.0 * std::sqrt(static_cast<double>(params.d))) : L / 10.0;
    std::size_t total_bits = 0, full_ok = 0, reduced_ok = 0, noise_count = 0, within = 0;
    double noise_sum = 0.0, noise_sq = 0.0;

    for (std::size_t t = 0; t < trials; ++t) {
        const std::uint64_t ts = derive_seed(seed, t);
        const SphericalCode code = spherical_code(params.m, params.d_k, rep.eta, derive_seed(ts, 1), params.max_tries);
        Rng rng(derive_seed(ts, 2));
        std::vector<std::uint8_t> bits(params.m * params.d);
        for (auto& b : bits) b = rng.coin() ? 1 : 0;
        const IndexingInstance inst =
            build_instance(bits, params.m, params.d, params.variant, params.rho, code, derive_seed(ts, 3));
        const KvCache& full = inst.cache;

        TrialOutcome out;
        out.seed = ts;
        out.code_eta = code.eta;

        std::optional<KvCache> reduced;
        if (mode != ReductionMode::Full && target_size > 0 && target_size < full.size()) {
            std::vector<std::size_t> keep;
            if (mode == ReductionMode::RandomSubsample) {
                Rng pick(derive_seed(ts, 4));
                auto perm = pick.permutation(full.size());
                keep.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(target_size));
                std::sort(keep.begin(), keep.end());
            } else {
                auto [pre, rec] = preprocess(full);
                CompressionPolicy policy;
                policy.target_size = target_size;
                policy.seed = derive_seed(ts, 5);
                policy.max_degree = 2;
                policy.star_norms = false;
                policy.suite_counts = {16, 16, 0};
                keep = compress(pre, params.rho * rec.key_scale, 1e9, policy).indices;
            }
            reduced = full.subset(keep);
        }
        const KvCache& red = reduced ? *reduced : full;
        out.reduced_size = red.size();

        std::size_t trial_full = 0, trial_red = 0;
        rep.predictions.assign(params.m * params.d, 0);
        for (std::size_t i = 0; i < params.m; ++i) {
            const Vector q = decoding_query(inst, i);
            const double b = softmax_denominator(q, full);
            const Vector a_full = attn(q, full);
            const Vector a_red = attn(q, red);
            rep.max_own_weight_rel_error = std::max(rep.max_own_weight_rel_error, std::abs(cross_weight(inst, i, i) - L) / L);
            for (std::size_t h = 0; h < params.m; ++h)
                if (h != i) rep.max_cross_weight = std::max(rep.max_cross_weight, cross_weight(inst, i, h));
            for (std::size_t j = 0; j < params.d; ++j) {
                const std::uint8_t truth = inst.bit(i, j);
                const std::uint8_t got_full = decode_bit(inst, a_full[j], i, j, b);
                const std::uint8_t got_red = decode_bit(inst, a_red[j], i, j, b);
                rep.predictions[i * params.d + j] = got_red;
                trial_full += got_full == truth;
                trial_red += got_red == truth;

                const double n = cross_noise(inst, i, j);
                noise_sum += n;
                noise_sq += n * n;
                ++noise_count;
                out.max_abs_noise = std::max(out.max_abs_noise, std::abs(n));
                if (std::abs(n) <= noise_scale) {
                    ++within;
                    ++out.separation_checked;
                    if (got_full != truth) ++out.separation_violations;
                }
            }
        }
        const double bits_per_trial = static_cast<double>(params.m * params.d);
        out.full_rate = static_cast<double>(trial_full) / bits_per_trial;
        out.reduced_rate = static_cast<double>(trial_red) / bits_per_trial;
        total_bits += params.m * params.d;
        full_ok += trial_full;
        reduced_ok += trial_red;
        rep.separation_violations += out.separation_violations;
        rep.noise_max_abs = std::max(rep.noise_max_abs, out.max_abs_noise);
        rep.trials.push_back(out);
    }
    if (total_bits > 0) {
        rep.full_rate = static_cast<double>(full_ok) / static_cast<double>(total_bits);
        rep.reduced_rate = static_cast<double>(reduced_ok) / static_cast<double>(total_bits);
    }
    if (noise_count > 0) {
        const double cnt = static_cast<double>(noise_count);
        rep.noise_mean = noise_sum / cnt;
        rep.noise_variance = noise_count > 1 ? (noise_sq - cnt * rep.noise_mean * rep.noise_mean) / (cnt - 1.0) : 0.0;
        rep.noise_within_tenth = static_cast<double>(within) / cnt;
    }
    return rep;
}

}  // namespace kvslim
