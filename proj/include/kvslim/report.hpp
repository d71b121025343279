// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "json.hpp"
#include "kvslim/attention.hpp"
#include "kvslim/balancer.hpp"
#include "kvslim/compressor.hpp"
#include "kvslim/lowerbound.hpp"
#include "kvslim/verifier.hpp"

namespace kvslim {

using Json = nlohmann::json;

/// Bumped whenever a field is renamed or removed.
inline constexpr int kReportSchemaVersion = 1;

/// Wall-clock data lives under this key; everything else in a report is a pure
/// function of the inputs, flags and seed.
inline constexpr const char* kTimestampKey = "timestamp";

Json to_json(const NormalizationRecord& rec);
Json to_json(const ErrorStats& s);
Json to_json(const ErrorReport& r);
Json to_json(const StarNormEstimate& e);
Json to_json(const StepReport& r);
Json to_json(const BudgetModel& b);
Json to_json(const ErrorPrediction& p);
Json to_json(const Coreset& c);
Json to_json(const DecodeReport& r);
Json to_json(const QueryCounts& c);

/// Envelope shared by every CLI report: schema version, command and effective config.
Json make_run_report(const std::string& command, Json config);

/// Report text with the timestamp field removed, for determinism comparisons.
std::string strip_timestamp(const std::string& report_text);

/// Serialized report (2-space indent, trailing newline).
std::string dump_report(const Json& report);

}  // namespace kvslim
