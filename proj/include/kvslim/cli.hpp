// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "kvslim/report.hpp"

namespace kvslim {

enum ExitCode : int { kExitOk = 0, kExitError = 1, kExitBudgetUnmet = 2, kExitCodeNotFound = 3 };

/// Runs one CLI invocation; `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct ScalingConfig {
    std::vector<std::size_t> sizes{128, 256, 512, 1024};
    std::size_t key_dim = 4;
    std::size_t value_dim = 4;
    double rho = 2.0;
    std::size_t trials = 5;
    std::size_t seeds = 16;
    std::size_t max_degree = 10;
    QueryCounts queries{64, 64, 0};
    std::uint64_t seed = 0;
};

struct ScalingRow {
    std::size_t n = 0;
    std::vector<double> balanced;  // max-suite |A - 2A'| per trial
    std::vector<double> random;
    std::vector<double> balanced_attention;
    std::vector<double> random_attention;
    double balanced_median = 0.0;
    double random_median = 0.0;
};

struct ScalingResult {
    std::vector<ScalingRow> rows;
    /// Median error at the largest n over the median at the smallest n.
    double balanced_ratio = 0.0;
    double random_ratio = 0.0;
};

/// One balanced and one random-sign halving per (n, trial) on preprocessed random unit caches.
ScalingResult run_scaling(const ScalingConfig& cfg);

Json to_json(const ScalingConfig& cfg);
Json to_json(const ScalingResult& result);

/// --seed wins over KVSLIM_SEED; 0 when neither is set.
std::uint64_t resolve_seed(const std::string& flag_value);

}  // namespace kvslim
