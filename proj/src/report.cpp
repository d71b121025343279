// SPDX-License-Identifier: Apache-2.0

#include "kvslim/report.hpp"

namespace kvslim {

Json to_json(const NormalizationRecord& rec) {
    return Json{{"key_shift", rec.key_shift}, {"key_scale", rec.key_scale}, {"value_scale", rec.value_scale}};
}

Json to_json(const ErrorStats& s) {
    return Json{{"max", s.max}, {"p95", s.p95}, {"median", s.median}, {"argmax", s.argmax}};
}

Json to_json(const ErrorReport& r) {
    return Json{{"mass_ratio", r.mass_ratio},
                {"queries", r.queries},
                {"numerator", to_json(r.numerator)},
                {"denominator", to_json(r.denominator)},
                {"attention", to_json(r.attention)},
                {"origin", {{"numerator", r.origin_numerator},
                            {"denominator", r.origin_denominator},
                            {"attention", r.origin_attention}}},
                {"note", "suite statistics are lower bounds on the supremum over the query ball"}};
}

Json to_json(const StarNormEstimate& e) {
    return Json{{"degree", e.degree},       {"value", e.value},           {"qhat", e.qhat},
                {"u", e.u},                 {"restarts", e.restarts},     {"iterations", e.iterations},
                {"converged", e.converged}};
}

Json to_json(const StepReport& r) {
    Json disc = Json::object();
    for (const auto& d : r.discrepancies) disc[std::string(to_string(d.id))] = d.value;
    Json trials = Json::array();
    for (const auto& t : r.trials) trials.push_back({{"seed", t.seed}, {"combined", t.combined}});
    return Json{{"step", r.step},
                {"n_in", r.n_in},
                {"n_out", r.n_out},
                {"degree", r.degree},
                {"seed", r.seed},
                {"discrepancies", disc},
                {"trials", trials},
                {"tail_charge", r.tail_charge},
                {"numerator_star_norms", r.numerator_star_norms},
                {"denominator_star_norms", r.denominator_star_norms},
                {"numerator_series_bound", r.numerator_series_bound},
                {"denominator_series_bound", r.denominator_series_bound},
                {"predicted_error", r.predicted_error},
                {"measured_numerator_error", r.measured_numerator_error},
                {"measured_denominator_error", r.measured_denominator_error},
                {"measured_attention_error", r.measured_attention_error},
                {"b_lower", r.b_lower},
                {"key_sum_norm_before", r.key_sum_norm_before},
                {"key_sum_norm_after", r.key_sum_norm_after}};
}

Json to_json(const BudgetModel& b) {
    return Json{{"rho", b.rho},
                {"zeta", b.zeta},
                {"eps_target", b.eps_target},
                {"mode", std::string(to_string(b.mode))},
                {"theory_constant", b.theory_constant},
                {"per_step_error_estimates", b.per_step_error_estimates},
                {"accumulated", b.accumulated()}};
}

Json to_json(const ErrorPrediction& p) {
    Json j{{"bound", p.bound}, {"valid", p.valid}};
    j["first_invalid_step"] = p.first_invalid_step ? Json(*p.first_invalid_step) : Json(nullptr);
    return j;
}

Json to_json(const Coreset& c) {
    Json steps = Json::array();
    for (const auto& s : c.steps) steps.push_back(to_json(s));
    return Json{{"size", c.size()},
                {"indices", c.indices},
                {"steps", steps},
                {"budget", to_json(c.budget)},
                {"prediction", to_json(c.prediction)},
                {"stop_reason", c.stop_reason},
                {"diagnostic", c.diagnostic},
                {"key_sum_allowance", c.key_sum_allowance}};
}

Json to_json(const DecodeReport& r) {
    Json trials = Json::array();
    for (const auto& t : r.trials)
        trials.push_back({{"seed", t.seed},
                          {"full_rate", t.full_rate},
                          {"reduced_rate", t.reduced_rate},
                          {"reduced_size", t.reduced_size},
                          {"code_eta", t.code_eta},
                          {"max_abs_noise", t.max_abs_noise},
                          {"separation_checked", t.separation_checked},
                          {"separation_violations", t.separation_violations}});
    return Json{{"params",
                 {{"rho", r.params.rho},
                  {"d_k", r.params.d_k},
                  {"d", r.params.d},
                  {"m", r.params.m},
                  {"variant", std::string(to_string(r.params.variant))},
                  {"eta", r.eta},
                  {"max_tries", r.params.max_tries}}},
                {"mode", std::string(to_string(r.mode))},
                {"target_size", r.target_size},
                {"trials", trials},
                {"predictions", r.predictions},
                {"full_rate", r.full_rate},
                {"reduced_rate", r.reduced_rate},
                {"noise",
                 {{"mean", r.noise_mean},
                  {"variance", r.noise_variance},
                  {"max_abs", r.noise_max_abs},
                  {"within_tenth", r.noise_within_tenth},
                  {"chebyshev_bound", r.chebyshev_bound},
                  {"regime_warning", r.noise_regime_warning}}},
                {"weights",
                 {{"max_own_weight_rel_error", r.max_own_weight_rel_error}, {"max_cross_weight", r.max_cross_weight}}},
                {"separation_violations", r.separation_violations}};
}

Json to_json(const QueryCounts& c) {
    return Json{{"random", c.random}, {"key_aligned", c.key_aligned}, {"ascent", c.ascent}};
}

Json make_run_report(const std::string& command, Json config) {
    return Json{{"schema_version", kReportSchemaVersion}, {"command", command}, {"config", std::move(config)}};
}

std::string strip_timestamp(const std::string& report_text) {
    Json j = Json::parse(report_text);
    j.erase(kTimestampKey);
    return j.dump(2);
}

std::string dump_report(const Json& report) { return report.dump(2) + "\n"; }

}  // namespace kvslim
