// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "kvslim/cache_io.hpp"
#include "kvslim/cli.hpp"

using namespace kvslim;

namespace {

// Dotted key paths of every object member; array elements share the path "[]".
void collect(const Json& j, const std::string& prefix, std::set<std::string>& out) {
    if (j.is_object()) {
        for (auto it = j.begin(); it != j.end(); ++it) {
            const std::string p = prefix.empty() ? it.key() : prefix + "." + it.key();
            out.insert(p);
            collect(it.value(), p, out);
        }
    } else if (j.is_array()) {
        for (const auto& e : j) collect(e, prefix + "[]", out);
    }
}

std::set<std::string> shape(const Json& j) {
    std::set<std::string> s;
    collect(j, "", s);
    return s;
}

Json golden(const std::string& name) {
    std::ifstream in(std::string(KVSLIM_SOURCE_DIR) + "/docs/examples/" + name);
    REQUIRE(in.good());
    return Json::parse(in);
}

Json fresh(const std::vector<std::string>& args, const std::string& report) {
    std::ostringstream out, err;
    std::vector<std::string> full = args;
    full.push_back("--report");
    full.push_back(report);
    REQUIRE(run_cli(full, out, err) == 0);
    std::ifstream in(report);
    return Json::parse(in);
}

}  // namespace

TEST_CASE("reports keep the documented shape") {
    const auto dir = std::filesystem::temp_directory_path() / "kvslim_schema";
    std::filesystem::create_directories(dir);
    std::mt19937_64 g(3);
    const std::string cache = (dir / "c.kvc").string(), core = (dir / "core.kvc").string(),
                      rep = (dir / "r.json").string();
    save_cache(testing_support::duplicated(testing_support::random_unit_rows(g, 16, 3, 2)).cache(), cache);

    CHECK(shape(fresh({"compress", "--input", cache, "--rho", "1", "--eps", "0.5", "--max-degree", "3", "--seeds", "2",
                       "--queries", "4,4,0", "--seed", "7", "--out", core},
                      rep)) == shape(golden("compress_report.json")));
    CHECK(shape(fresh({"eval", "--full", cache, "--coreset", core, "--rho", "1", "--queries", "4,4,2"}, rep)) ==
          shape(golden("eval_report.json")));
    CHECK(shape(fresh({"bench", "scaling", "--n", "32,64", "--trials", "1", "--seeds", "2", "--max-degree", "3",
                       "--queries", "4,4,0"},
                      rep)) == shape(golden("bench_report.json")));
    CHECK(shape(fresh({"lowerbound", "--m", "4", "--d", "2", "--dk", "16", "--trials", "1", "--target-size", "4"},
                      rep)) == shape(golden("lowerbound_report.json")));
    CHECK(golden("compress_report.json")["schema_version"] == kReportSchemaVersion);
}
