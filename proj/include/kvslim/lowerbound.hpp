// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "kvslim/attention.hpp"
#include "kvslim/linalg.hpp"

namespace kvslim {

/// m unit vectors with pairwise inner products at most eta.
struct SphericalCode {
    std::size_t dim = 0;
    std::vector<Vector> codewords;
    double eta = 0.0;  // achieved max pairwise inner product
    std::size_t tries = 0;

    std::size_t size() const noexcept { return codewords.size(); }
};

/// Seeded rejection sampling of whole batches. eta == 0 with m <= d_k returns the
/// standard basis. Throws CodeNotFound with the best achieved eta after max_tries.
SphericalCode spherical_code(std::size_t m, std::size_t d_k, double eta, std::uint64_t seed,
                             std::size_t max_tries = 1000);

/// SketchLb: one pair per codeword, v_i = (b_ij x_ij)_j / sqrt(d).
/// CoresetLb: d pairs per codeword, v_(i,j) = b_ij x_ij e_j.
enum class LbVariant { Sketch, Coreset };

std::string_view to_string(LbVariant v);

struct IndexingInstance {
    LbVariant variant = LbVariant::Coreset;
    double rho = 0.0;
    double L = 0.0;  // e^rho
    std::size_t m = 0;
    std::size_t d = 0;
    std::vector<std::uint8_t> bits;  // m x d
    std::vector<std::int8_t> signs;  // m x d public signs
    SphericalCode code;
    KvCache cache;

    std::uint8_t bit(std::size_t i, std::size_t j) const { return bits[i * d + j]; }
    std::int8_t sign(std::size_t i, std::size_t j) const { return signs[i * d + j]; }
};

/// Builds the instance with explicit public signs.
IndexingInstance build_instance(std::span<const std::uint8_t> bits, std::span<const std::int8_t> signs,
                                std::size_t m, std::size_t d, LbVariant variant, double rho, const SphericalCode& code);

/// Draws the public signs from `seed`.
IndexingInstance build_instance(std::span<const std::uint8_t> bits, std::size_t m, std::size_t d, LbVariant variant,
                                double rho, const SphericalCode& code, std::uint64_t seed);

/// q = rho * u_i.
Vector decoding_query(const IndexingInstance& inst, std::size_t i);

/// w_ih = exp(rho <u_i, u_h>).
double cross_weight(const IndexingInstance& inst, std::size_t i, std::size_t h);

/// Noise term N_ij of the masked coordinate (includes the 1/sqrt(d) factor for Sketch).
double cross_noise(const IndexingInstance& inst, std::size_t i, std::size_t j);

/// L / (2B), or L / (2 sqrt(d) B) for the sketch variant.
double decode_threshold(const IndexingInstance& inst, double b_value);

/// 1 iff b_ij * attn_j exceeds the threshold for denominator `b_value`.
std::uint8_t decode_bit(const IndexingInstance& inst, double attn_output_j, std::size_t i, std::size_t j,
                        double b_value);

struct LbParams {
    double rho = 5.0;
    std::size_t d_k = 128;
    std::size_t d = 8;
    std::size_t m = 16;
    LbVariant variant = LbVariant::Coreset;
    /// Defaults to 1 / ln L = 1 / rho.
    std::optional<double> eta;
    std::size_t max_tries = 1000;
};

enum class ReductionMode { Full, RandomSubsample, Compressor };

std::string_view to_string(ReductionMode mode);

struct TrialOutcome {
    std::uint64_t seed = 0;
    double full_rate = 0.0;
    double reduced_rate = 0.0;
    std::size_t reduced_size = 0;
    double code_eta = 0.0;
    double max_abs_noise = 0.0;
    std::size_t separation_checked = 0;
    std::size_t separation_violations = 0;
};

struct DecodeReport {
    LbParams params;
    double eta = 0.0;
    ReductionMode mode = ReductionMode::Full;
    std::size_t target_size = 0;
    std::vector<TrialOutcome> trials;
    /// Decoded bits of the reduced cache in the last trial, m x d.
    std::vector<std::uint8_t> predictions;

    double full_rate = 0.0;     // over all bits of all trials
    double reduced_rate = 0.0;  // over all bits of all trials

    double noise_mean = 0.0;
    double noise_variance = 0.0;
    double noise_max_abs = 0.0;
    double noise_within_tenth = 0.0;  // fraction of |N_ij| <= L/10 (L/(10 sqrt d) for sketch)
    double chebyshev_bound = 0.0;     // 100 e^2 m / L^2
    bool noise_regime_warning = false;

    double max_own_weight_rel_error = 0.0;  // |w_ii - L| / L
    double max_cross_weight = 0.0;          // max_{h != i} w_ih
    std::size_t separation_violations = 0;
};

/// Builds seeded instances, reduces them (random subsample or compressor) to `target_size`
/// (0 = keep everything), decodes every bit from q = rho u_i with the full-instance denominator.
DecodeReport recovery_experiment(const LbParams& params, ReductionMode mode, std::size_t target_size,
                                 std::size_t trials, std::uint64_t seed);

}  // namespace kvslim
