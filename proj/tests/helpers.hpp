// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <random>
#include <vector>

#include "kvslim/attention.hpp"
#include "oracles.hpp"

namespace testing_support {

struct Rows {
    std::vector<kvslim::Vector> keys;
    std::vector<kvslim::Vector> values;

    kvslim::KvCache cache() const { return kvslim::KvCache::from_rows(keys, values); }
};

inline Rows random_unit_rows(std::mt19937_64& g, std::size_t n, std::size_t dk, std::size_t dv) {
    Rows r;
    for (std::size_t i = 0; i < n; ++i) r.keys.push_back(oracle::random_unit(g, dk));
    for (std::size_t i = 0; i < n; ++i) r.values.push_back(oracle::random_unit(g, dv));
    return r;
}

inline Rows random_gaussian_rows(std::mt19937_64& g, std::size_t n, std::size_t dk, std::size_t dv, double scale) {
    std::normal_distribution<double> nd(0.0, scale);
    Rows r;
    for (std::size_t i = 0; i < n; ++i) {
        kvslim::Vector k(dk), v(dv);
        for (auto& x : k) x = nd(g);
        for (auto& x : v) x = nd(g);
        r.keys.push_back(k);
        r.values.push_back(v);
    }
    return r;
}

inline Rows duplicated(const Rows& base) {
    Rows r;
    for (std::size_t i = 0; i < base.keys.size(); ++i)
        for (int c = 0; c < 2; ++c) {
            r.keys.push_back(base.keys[i]);
            r.values.push_back(base.values[i]);
        }
    return r;
}

inline double rel_diff(const kvslim::Vector& a, const kvslim::Vector& b) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        den += b[i] * b[i];
    }
    return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

inline kvslim::Vector scaled(const kvslim::Vector& v, double s) {
    kvslim::Vector out(v);
    for (auto& x : out) x *= s;
    return out;
}

}  // namespace testing_support
