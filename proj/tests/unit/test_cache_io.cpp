// SPDX-License-Identifier: Apache-2.0

#include <cstring>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "helpers.hpp"
#include "kvslim/cache_io.hpp"
#include "kvslim/errors.hpp"

using namespace kvslim;

namespace {

std::filesystem::path scratch(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "kvslim_unit";
    std::filesystem::create_directories(dir);
    return dir / name;
}

bool bitwise_equal(const Vector& a, const Vector& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

template <typename T>
void poke(std::vector<std::uint8_t>& bytes, std::size_t at, T value) {
    std::memcpy(bytes.data() + at, &value, sizeof(T));
}

}  // namespace

TEST_CASE("header layout") {
    const KvCache c = KvCache::from_rows({{1.0, -0.0}}, {{0.5}});
    const auto bytes = encode_cache(c);
    REQUIRE(bytes.size() == kCacheHeaderBytes + 3 * 8);
    CHECK(std::memcmp(bytes.data(), "KVC1", 4) == 0);
    CHECK(bytes[4] == 1);
    CHECK(bytes[5] == 0);
    CHECK(bytes[6] == 1);
    CHECK(bytes[14] == 2);
    CHECK(bytes[18] == 1);
    CHECK(bytes[22] == 0);
    CHECK(bytes[23] == 0);
    // 1.0 little-endian: 00 .. 00 f0 3f
    CHECK(bytes[24 + 6] == 0xf0);
    CHECK(bytes[24 + 7] == 0x3f);
    CHECK(bytes[32 + 7] == 0x80);
}

TEST_CASE("round trips are bitwise exact") {
    std::mt19937_64 g(91);
    for (int t = 0; t < 100; ++t) {
        const auto rows = testing_support::random_gaussian_rows(g, 1 + t % 17, 1 + t % 5, 1 + t % 3, 1e3);
        KvCache c = rows.cache();
        if (t % 2) c = preprocess(c).first;
        const auto path = scratch("rt.kvc");
        save_cache(c, path);
        const KvCache back = load_cache(path);
        CHECK(bitwise_equal(back.keys(), c.keys()));
        CHECK(bitwise_equal(back.values(), c.values()));
        CHECK(back.norm_meta() == c.norm_meta());
        CHECK(encode_cache(back) == encode_cache(c));
    }
}

TEST_CASE("malformed files") {
    const KvCache c = preprocess(KvCache::from_rows({{1, 2}, {3, 4}}, {{1}, {2}})).first;
    const auto good = encode_cache(c);

    auto bad = good;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_cache(bad), FormatError);

    bad = good;
    poke<std::uint16_t>(bad, 4, 2);
    CHECK_THROWS_WITH_AS(decode_cache(bad), doctest::Contains("offset 4"), FormatError);

    bad = good;
    poke<std::uint64_t>(bad, 6, 0);
    CHECK_THROWS_WITH_AS(decode_cache(bad), doctest::Contains("n = 0"), FormatError);

    bad = good;
    bad[22] = 1;
    CHECK_THROWS_WITH_AS(decode_cache(bad), doctest::Contains("dtype"), FormatError);

    bad = good;
    bad[23] = 4;
    CHECK_THROWS_AS(decode_cache(bad), FormatError);

    bad = good;
    bad.resize(good.size() - 5);
    CHECK_THROWS_WITH_AS(decode_cache(bad), doctest::Contains("missing 5"), FormatError);

    bad = std::vector<std::uint8_t>(good.begin(), good.begin() + 30);
    CHECK_THROWS_WITH_AS(decode_cache(bad), doctest::Contains("key payload"), FormatError);

    bad = good;
    bad.push_back(0);
    CHECK_THROWS_WITH_AS(decode_cache(bad), doctest::Contains("trailing"), FormatError);

    bad = good;
    poke<std::uint64_t>(bad, 6, std::uint64_t{1} << 62);
    CHECK_THROWS_AS(decode_cache(bad), FormatError);

    bad = good;
    poke<double>(bad, 24, std::numeric_limits<double>::quiet_NaN());
    CHECK_THROWS_AS(decode_cache(bad), FormatError);

    CHECK_THROWS(load_cache(scratch("does_not_exist.kvc")));
}

TEST_CASE("csv import") {
    const auto kp = scratch("k.csv"), vp = scratch("v.csv");
    std::ofstream(kp) << "# keys\n1.5,-2\n\n0.25,1e-3\n";
    std::ofstream(vp) << "1\n2\n";
    const KvCache c = import_csv(kp, vp);
    CHECK(c.size() == 2);
    CHECK(c.keys() == Vector{1.5, -2, 0.25, 1e-3});
    std::ofstream(vp) << "1\nabc\n";
    CHECK_THROWS(import_csv(kp, vp));
    std::ofstream(vp) << "1\n";
    CHECK_THROWS_AS(import_csv(kp, vp), DimensionError);
}
