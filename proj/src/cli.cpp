// SPDX-License-Identifier: Apache-2.0

#include "kvslim/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "kvslim/cache_io.hpp"
#include "kvslim/errors.hpp"
#include "kvslim/rng.hpp"

namespace kvslim {

namespace {

using Clock = std::chrono::steady_clock;

double median_of(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

std::string utc_now() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void stamp(Json& report, Clock::time_point start) {
    report[kTimestampKey] = {{"utc", utc_now()},
                             {"elapsed_seconds", std::chrono::duration<double>(Clock::now() - start).count()}};
}

void write_report(const std::string& path, const Json& report) {
    if (path.empty()) return;
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open report file " + path);
    f << dump_report(report);
    if (!f) throw std::runtime_error("failed writing report file " + path);
}

QueryCounts parse_counts(const std::string& text) {
    std::vector<std::size_t> parts;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(item, &used);
        if (used != item.size()) throw std::invalid_argument("bad --queries entry '" + item + "'");
        parts.push_back(static_cast<std::size_t>(v));
    }
    if (parts.empty() || parts.size() > 3) throw std::invalid_argument("--queries expects R[,K[,A]]");
    QueryCounts c{parts[0], 0, 0};
    if (parts.size() > 1) c.key_aligned = parts[1];
    if (parts.size() > 2) c.ascent = parts[2];
    return c;
}

KvCache random_unit_cache(std::size_t n, std::size_t dk, std::size_t dv, std::uint64_t seed) {
    Rng rng(seed);
    Vector keys, values;
    keys.reserve(n * dk);
    values.reserve(n * dv);
    for (std::size_t i = 0; i < n; ++i) {
        const Vector k = rng.unit_vector(dk);
        keys.insert(keys.end(), k.begin(), k.end());
    }
    for (std::size_t i = 0; i < n; ++i) {
        const Vector v = rng.unit_vector(dv);
        values.insert(values.end(), v.begin(), v.end());
    }
    return KvCache(std::move(keys), std::move(values), dk, dv);
}

struct CompressArgs {
    std::string input, out, report, seed;
    double rho = 0.0;
    double eps = 0.0;
    std::optional<std::size_t> target_size;
    std::size_t seeds = 16;
    std::optional<std::size_t> max_degree;
    bool temp_sqrt_d = false;
    bool theory = false;
    double theory_constant = 1.0;
    bool no_star_norms = false;
    std::string queries = "256,256,0";
};

int cmd_compress(const CompressArgs& a, std::ostream& out, std::ostream& err) {
    const auto start = Clock::now();
    const KvCache input = load_cache(a.input);
    const std::uint64_t seed = resolve_seed(a.seed);

    KvCache pre = input;
    NormalizationRecord rec;
    if (input.preprocessed() && input.norm_meta()) {
        rec = *input.norm_meta();
    } else {
        std::tie(pre, rec) = preprocess(input);
    }
    const double rho_raw = a.temp_sqrt_d ? a.rho / std::sqrt(static_cast<double>(input.key_dim())) : a.rho;
    const double rho_pre = rho_raw * rec.key_scale;
    const double eps_pre = a.eps / rec.value_scale;

    CompressionPolicy policy;
    policy.target_size = a.target_size;
    policy.seeds_per_step = a.seeds;
    policy.seed = seed;
    policy.max_degree = a.max_degree;
    policy.mode = a.theory ? BudgetMode::TheoryModel : BudgetMode::Measured;
    policy.theory_constant = a.theory_constant;
    policy.suite_counts = parse_counts(a.queries);
    policy.star_norms = !a.no_star_norms;
    policy.star.seed = derive_seed(seed, 0x57a);

    Json config{{"input", a.input},
                {"out", a.out},
                {"report", a.report},
                {"rho", a.rho},
                {"rho_effective_raw", rho_raw},
                {"rho_preprocessed", rho_pre},
                {"eps", a.eps},
                {"eps_preprocessed", eps_pre},
                {"target_size", a.target_size ? Json(*a.target_size) : Json(nullptr)},
                {"seeds", a.seeds},
                {"max_degree", a.max_degree ? Json(*a.max_degree) : Json(nullptr)},
                {"temp_sqrt_d", a.temp_sqrt_d},
                {"seed", seed},
                {"budget_mode", std::string(to_string(policy.mode))},
                {"theory_constant", policy.theory_constant},
                {"tail_fraction", policy.tail_fraction},
                {"capacity", policy.capacity},
                {"max_steps", policy.max_steps},
                {"min_size", policy.min_size},
                {"suite_counts", to_json(policy.suite_counts)},
                {"star_norms", policy.star_norms},
                {"star_restarts", policy.star.restarts},
                {"star_max_iterations", policy.star.max_iterations},
                {"star_tolerance", policy.star.tolerance},
                {"star_seed", policy.star.seed},
                {"recenter", policy.recenter},
                {"n", input.size()},
                {"key_dim", input.key_dim()},
                {"value_dim", input.value_dim()}};
    Json report = make_run_report("compress", std::move(config));
    report["normalization"] = to_json(rec);

    const Coreset core = compress(pre, rho_pre, eps_pre, policy);
    report["coreset"] = to_json(core);
    const KvCache result = input.subset(core.indices);
    if (!a.out.empty()) save_cache(result, a.out);

    const bool unmet = a.target_size && core.size() > *a.target_size;
    report["exit_code"] = unmet ? kExitBudgetUnmet : kExitOk;
    stamp(report, start);
    write_report(a.report, report);

    out << "coreset size " << core.size() << " of " << input.size() << " after " << core.steps.size()
        << " halvings (" << core.stop_reason << ")\n";
    out << "predicted attention error bound " << core.prediction.bound * rec.value_scale << "\n";
    if (!core.diagnostic.empty()) err << core.diagnostic << "\n";
    if (unmet) {
        err << "target size " << *a.target_size << " not reached: " << core.stop_reason << "\n";
        return kExitBudgetUnmet;
    }
    return kExitOk;
}

struct EvalArgs {
    std::string full, coreset, report, seed;
    double rho = 0.0;
    std::string queries = "64,64,0";
    bool temp_sqrt_d = false;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
    const auto start = Clock::now();
    const KvCache full = load_cache(a.full);
    const KvCache core = load_cache(a.coreset);
    if (full.key_dim() != core.key_dim() || full.value_dim() != core.value_dim())
        throw DimensionError("full and coreset caches have different dimensions");
    const std::uint64_t seed = resolve_seed(a.seed);
    const double rho = a.temp_sqrt_d ? a.rho / std::sqrt(static_cast<double>(full.key_dim())) : a.rho;
    const QueryCounts counts = parse_counts(a.queries);
    const double ratio = static_cast<double>(full.size()) / static_cast<double>(core.size());

    const QuerySuite suite = build_query_suite(full, rho, counts, seed, counts.ascent ? &core : nullptr);
    const ErrorReport er = empirical_error(suite, full, core, ratio);

    Json config{{"full", a.full},
                {"coreset", a.coreset},
                {"report", a.report},
                {"rho", a.rho},
                {"rho_effective", rho},
                {"queries", to_json(counts)},
                {"temp_sqrt_d", a.temp_sqrt_d},
                {"seed", seed},
                {"n_full", full.size()},
                {"n_coreset", core.size()}};
    Json report = make_run_report("eval", std::move(config));
    report["error"] = to_json(er);
    stamp(report, start);
    write_report(a.report, report);

    out << "attention error max " << er.attention.max << " p95 " << er.attention.p95 << " median "
        << er.attention.median << " over " << er.queries << " queries (origin " << er.origin_attention << ")\n";
    return kExitOk;
}

struct LowerboundArgs {
    std::string target = "full", report, seed, variant = "coreset", baseline = "random";
    double rho = 5.0;
    std::size_t dk = 128, d = 8, m = 16, trials = 20, max_tries = 1000;
    std::optional<double> eta;
};

int cmd_lowerbound(const LowerboundArgs& a, std::ostream& out, std::ostream& err) {
    const auto start = Clock::now();
    LbParams p;
    p.rho = a.rho;
    p.d_k = a.dk;
    p.d = a.d;
    p.m = a.m;
    p.eta = a.eta;
    p.max_tries = a.max_tries;
    if (a.variant == "coreset")
        p.variant = LbVariant::Coreset;
    else if (a.variant == "sketch")
        p.variant = LbVariant::Sketch;
    else
        throw std::invalid_argument("--variant must be coreset or sketch");

    std::size_t target = 0;
    ReductionMode mode = ReductionMode::Full;
    if (a.target != "full") {
        std::size_t used = 0;
        target = static_cast<std::size_t>(std::stoull(a.target, &used));
        if (used != a.target.size()) throw std::invalid_argument("--target-size expects N or full");
        if (a.baseline == "random")
            mode = ReductionMode::RandomSubsample;
        else if (a.baseline == "compress")
            mode = ReductionMode::Compressor;
        else
            throw std::invalid_argument("--baseline must be random or compress");
    }
    const std::uint64_t seed = resolve_seed(a.seed);

    DecodeReport dr;
    try {
        dr = recovery_experiment(p, mode, target, a.trials, seed);
    } catch (const CodeNotFound& e) {
        err << e.what() << " (best eta achieved " << e.best_eta() << ")\n";
        return kExitCodeNotFound;
    }

    Json config{{"rho", a.rho},
                {"dk", a.dk},
                {"d", a.d},
                {"m", a.m},
                {"variant", a.variant},
                {"target_size", a.target},
                {"baseline", a.baseline},
                {"trials", a.trials},
                {"eta", dr.eta},
                {"max_tries", a.max_tries},
                {"seed", seed}};
    Json report = make_run_report("lowerbound", std::move(config));
    report["result"] = to_json(dr);
    stamp(report, start);
    write_report(a.report, report);

    out << "full-cache recovery rate " << dr.full_rate << "\n";
    if (mode != ReductionMode::Full) out << "reduced-cache recovery rate " << dr.reduced_rate << "\n";
    if (dr.noise_regime_warning)
        err << "note: Chebyshev bound " << dr.chebyshev_bound << " exceeds 0.25; measured fraction of noise within "
            << "tolerance is " << dr.noise_within_tenth << "\n";
    return kExitOk;
}

struct BenchArgs {
    std::vector<std::size_t> sizes{128, 256, 512, 1024};
    std::size_t dk = 4, dv = 4, trials = 5, seeds = 16, max_degree = 10;
    double rho = 2.0;
    std::string queries = "64,64,0", report, seed;
};

int cmd_bench(const BenchArgs& a, std::ostream& out) {
    const auto start = Clock::now();
    ScalingConfig cfg;
    cfg.sizes = a.sizes;
    cfg.key_dim = a.dk;
    cfg.value_dim = a.dv;
    cfg.rho = a.rho;
    cfg.trials = a.trials;
    cfg.seeds = a.seeds;
    cfg.max_degree = a.max_degree;
    cfg.queries = parse_counts(a.queries);
    cfg.seed = resolve_seed(a.seed);
    const ScalingResult res = run_scaling(cfg);

    Json report = make_run_report("bench scaling", to_json(cfg));
    report["result"] = to_json(res);
    stamp(report, start);
    write_report(a.report, report);

    out << "n\tbalanced_median\trandom_median\n";
    for (const auto& r : res.rows) out << r.n << '\t' << r.balanced_median << '\t' << r.random_median << '\n';
    out << "ratio balanced " << res.balanced_ratio << " random " << res.random_ratio << '\n';
    return kExitOk;
}

}  // namespace

std::uint64_t resolve_seed(const std::string& flag_value) {
    std::string text = flag_value;
    if (text.empty())
        if (const char* env = std::getenv("KVSLIM_SEED")) text = env;
    if (text.empty()) return 0;
    std::size_t used = 0;
    const unsigned long long v = std::stoull(text, &used, 0);
    if (used != text.size()) throw std::invalid_argument("seed must be an unsigned integer, got '" + text + "'");
    return static_cast<std::uint64_t>(v);
}

ScalingResult run_scaling(const ScalingConfig& cfg) {
    if (cfg.sizes.empty() || cfg.trials == 0 || cfg.seeds == 0)
        throw std::invalid_argument("scaling needs at least one size, trial and seed");
    ScalingResult res;
    for (const std::size_t n : cfg.sizes) {
        ScalingRow row;
        row.n = n;
        for (std::size_t t = 0; t < cfg.trials; ++t) {
            const std::uint64_t base = derive_seed(cfg.seed, n, t);
            const KvCache cache = preprocess(random_unit_cache(n, cfg.key_dim, cfg.value_dim, base)).first;
            const QuerySuite suite = build_query_suite(cache, cfg.rho, cfg.queries, derive_seed(base, 1));
            HalvingOptions opts;
            opts.rho = cfg.rho;
            opts.star_norms = false;
            opts.suite = &suite;

            const EmbeddingConfig ecfg(cfg.max_degree, cfg.key_dim, cfg.value_dim);
            std::vector<std::uint64_t> seeds;
            for (std::size_t j = 0; j < cfg.seeds; ++j) seeds.push_back(derive_seed(base, 2, j));
            const HalvingOutcome bal = halving_step(cache, ecfg, seeds, opts);
            const HalvingOutcome rnd = random_halving(cache, derive_seed(base, 3), opts);
            row.balanced.push_back(bal.report.measured_numerator_error);
            row.random.push_back(rnd.report.measured_numerator_error);
            row.balanced_attention.push_back(bal.report.measured_attention_error);
            row.random_attention.push_back(rnd.report.measured_attention_error);
        }
        row.balanced_median = median_of(row.balanced);
        row.random_median = median_of(row.random);
        res.rows.push_back(std::move(row));
    }
    const auto& lo = res.rows.front();
    const auto& hi = res.rows.back();
    res.balanced_ratio = hi.balanced_median / lo.balanced_median;
    res.random_ratio = hi.random_median / lo.random_median;
    return res;
}

Json to_json(const ScalingConfig& cfg) {
    return Json{{"n", cfg.sizes},         {"dk", cfg.key_dim},
                {"dv", cfg.value_dim},    {"rho", cfg.rho},
                {"trials", cfg.trials},   {"seeds", cfg.seeds},
                {"max_degree", cfg.max_degree}, {"queries", to_json(cfg.queries)},
                {"seed", cfg.seed}};
}

Json to_json(const ScalingResult& result) {
    Json rows = Json::array();
    for (const auto& r : result.rows)
        rows.push_back({{"n", r.n},
                        {"balanced", r.balanced},
                        {"random", r.random},
                        {"balanced_attention", r.balanced_attention},
                        {"random_attention", r.random_attention},
                        {"balanced_median", r.balanced_median},
                        {"random_median", r.random_median}});
    return Json{{"rows", rows}, {"balanced_ratio", result.balanced_ratio}, {"random_ratio", result.random_ratio}};
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"KV-cache coreset compression toolkit", "kvslim"};
    app.require_subcommand(1);

    CompressArgs ca;
    auto* compress_cmd = app.add_subcommand("compress", "Compress a cache into a coreset");
    compress_cmd->add_option("--input", ca.input, "Input cache file")->required();
    compress_cmd->add_option("--rho", ca.rho, "Query norm bound")->required();
    compress_cmd->add_option("--eps", ca.eps, "Attention error budget")->required();
    compress_cmd->add_option("--target-size", ca.target_size, "Stop once the coreset has at most N items");
    compress_cmd->add_option("--seeds", ca.seeds, "Balancer seeds per halving")->check(CLI::PositiveNumber);
    compress_cmd->add_option("--max-degree", ca.max_degree, "Fixed Taylor truncation degree");
    compress_cmd->add_option("--out", ca.out, "Coreset cache file");
    compress_cmd->add_option("--report", ca.report, "JSON report file");
    compress_cmd->add_option("--seed", ca.seed, "Seed (overrides KVSLIM_SEED)");
    compress_cmd->add_flag("--temp-sqrt-d", ca.temp_sqrt_d, "Divide queries by sqrt(d_k)");
    compress_cmd->add_flag("--theory-budget", ca.theory, "Charge c sqrt(d_k) e^zeta per step instead of measured errors");
    compress_cmd->add_option("--theory-constant", ca.theory_constant, "Constant c of the theory budget");
    compress_cmd->add_flag("--no-star-norms", ca.no_star_norms, "Skip star-norm estimation");
    compress_cmd->add_option("--queries", ca.queries, "Query suite counts R,K,A");

    EvalArgs ea;
    auto* eval_cmd = app.add_subcommand("eval", "Measure a coreset's attention error");
    eval_cmd->add_option("--full", ea.full, "Full cache file")->required();
    eval_cmd->add_option("--coreset", ea.coreset, "Coreset cache file")->required();
    eval_cmd->add_option("--rho", ea.rho, "Query norm bound")->required();
    eval_cmd->add_option("--queries", ea.queries, "Query suite counts R,K,A");
    eval_cmd->add_option("--seed", ea.seed, "Seed (overrides KVSLIM_SEED)");
    eval_cmd->add_option("--report", ea.report, "JSON report file");
    eval_cmd->add_flag("--temp-sqrt-d", ea.temp_sqrt_d, "Divide queries by sqrt(d_k)");

    BenchArgs ba;
    auto* bench_cmd = app.add_subcommand("bench", "Benchmarks");
    bench_cmd->require_subcommand(1);
    auto* scaling_cmd = bench_cmd->add_subcommand("scaling", "Halving error versus n");
    scaling_cmd->add_option("--n", ba.sizes, "Cache sizes")->delimiter(',');
    scaling_cmd->add_option("--dk", ba.dk, "Key dimension")->check(CLI::PositiveNumber);
    scaling_cmd->add_option("--dv", ba.dv, "Value dimension")->check(CLI::PositiveNumber);
    scaling_cmd->add_option("--rho", ba.rho, "Query norm bound");
    scaling_cmd->add_option("--trials", ba.trials, "Trials per size")->check(CLI::PositiveNumber);
    scaling_cmd->add_option("--seeds", ba.seeds, "Balancer seeds")->check(CLI::PositiveNumber);
    scaling_cmd->add_option("--max-degree", ba.max_degree, "Taylor truncation degree");
    scaling_cmd->add_option("--queries", ba.queries, "Query suite counts R,K,A");
    scaling_cmd->add_option("--seed", ba.seed, "Seed (overrides KVSLIM_SEED)");
    scaling_cmd->add_option("--report", ba.report, "JSON report file");

    LowerboundArgs la;
    auto* lb_cmd = app.add_subcommand("lowerbound", "Bit-recovery experiment on planted instances");
    lb_cmd->add_option("--rho", la.rho, "Query norm");
    lb_cmd->add_option("--dk", la.dk, "Key dimension");
    lb_cmd->add_option("--d", la.d, "Bits per codeword");
    lb_cmd->add_option("--m", la.m, "Number of codewords");
    lb_cmd->add_option("--variant", la.variant, "coreset or sketch");
    lb_cmd->add_option("--target-size", la.target, "N or full");
    lb_cmd->add_option("--baseline", la.baseline, "Reduction for N: random or compress");
    lb_cmd->add_option("--eta", la.eta, "Spherical code coherence (default 1/rho)");
    lb_cmd->add_option("--max-tries", la.max_tries, "Code sampling attempts");
    lb_cmd->add_option("--trials", la.trials, "Trials")->check(CLI::PositiveNumber);
    lb_cmd->add_option("--seed", la.seed, "Seed (overrides KVSLIM_SEED)");
    lb_cmd->add_option("--report", la.report, "JSON report file");

    std::string csv_keys, csv_values, csv_out;
    auto* csv_cmd = app.add_subcommand("import-csv", "Build a cache file from key and value CSV files");
    csv_cmd->add_option("--keys", csv_keys, "Keys CSV")->required();
    csv_cmd->add_option("--values", csv_values, "Values CSV")->required();
    csv_cmd->add_option("--out", csv_out, "Output cache file")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitError;
    }

    try {
        if (compress_cmd->parsed()) return cmd_compress(ca, out, err);
        if (eval_cmd->parsed()) return cmd_eval(ea, out);
        if (scaling_cmd->parsed()) return cmd_bench(ba, out);
        if (lb_cmd->parsed()) return cmd_lowerbound(la, out, err);
        if (csv_cmd->parsed()) {
            const KvCache c = import_csv(csv_keys, csv_values);
            save_cache(c, csv_out);
            out << "wrote " << c.size() << " rows to " << csv_out << "\n";
            return kExitOk;
        }
    } catch (const NoProgress& e) {
        err << "no progress: " << e.what() << "\n";
        return kExitBudgetUnmet;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitError;
    }
    return kExitError;
}

}  // namespace kvslim
