// SPDX-License-Identifier: Apache-2.0

#include "kvslim/tensor_terms.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <tuple>

namespace kvslim {

TermTree::TermTree(std::size_t dim, std::size_t max_degree, bool symmetric) : dim_(dim), symmetric_(symmetric) {
    levels_.resize(max_degree + 1);
    levels_[0].parent = {0};
    levels_[0].last = {0};
    levels_[0].coef = {1.0};
    // run[t]: length of the trailing run of equal indices in term t (symmetric layout only).
    std::vector<std::uint32_t> run{0};
    for (std::size_t m = 1; m <= max_degree; ++m) {
        const Level& prev = levels_[m - 1];
        Level& cur = levels_[m];
        std::vector<std::uint32_t> next_run;
        const std::size_t count = count_terms(dim, m, symmetric);
        cur.parent.reserve(count);
        cur.last.reserve(count);
        cur.coef.reserve(count);
        for (std::size_t p = 0; p < prev.size(); ++p) {
            const std::size_t first = (symmetric && m > 1) ? prev.last[p] : 0;
            for (std::size_t c = first; c < dim; ++c) {
                cur.parent.push_back(static_cast<std::uint32_t>(p));
                cur.last.push_back(static_cast<std::uint32_t>(c));
                if (symmetric) {
                    const std::uint32_t r = (m > 1 && prev.last[p] == c) ? run[p] + 1 : 1;
                    next_run.push_back(r);
                    // multinomial(child) = multinomial(parent) * m / r
                    cur.coef.push_back(prev.coef[p] * std::sqrt(static_cast<double>(m) / r));
                } else {
                    cur.coef.push_back(1.0);
                }
            }
        }
        run = std::move(next_run);
    }
}

std::size_t TermTree::count_terms(std::size_t dim, std::size_t m, bool symmetric) {
    constexpr std::size_t kMax = std::numeric_limits<std::size_t>::max();
    if (!symmetric) {
        std::size_t c = 1;
        for (std::size_t i = 0; i < m; ++i) {
            if (dim != 0 && c > kMax / dim) return kMax;
            c *= dim;
        }
        return c;
    }
    // C(dim + m - 1, m), built incrementally so every intermediate is an exact integer.
    std::size_t c = 1;
    for (std::size_t i = 1; i <= m; ++i) {
        const std::size_t num = dim + i - 1;
        if (c > kMax / num) return kMax;
        c = c * num / i;
    }
    return c;
}

void TermTree::forward(std::span<const double> x, std::size_t degree, std::vector<Vector>& products) const {
    products.resize(degree + 1);
    products[0].assign(1, 1.0);
    for (std::size_t m = 1; m <= degree; ++m) {
        const Level& lv = levels_[m];
        const Vector& prev = products[m - 1];
        Vector& cur = products[m];
        cur.resize(lv.size());
        for (std::size_t t = 0; t < lv.size(); ++t) cur[t] = prev[lv.parent[t]] * x[lv.last[t]];
    }
}

void TermTree::backward(std::span<const double> x, const std::vector<Vector>& products, std::size_t m,
                        Vector adjoint, std::span<double> grad) const {
    for (std::size_t level = m; level >= 1; --level) {
        const Level& lv = levels_[level];
        const Vector& prev = products[level - 1];
        Vector up(prev.size(), 0.0);
        for (std::size_t t = 0; t < lv.size(); ++t) {
            const double a = adjoint[t];
            if (a == 0.0) continue;
            grad[lv.last[t]] += a * prev[lv.parent[t]];
            up[lv.parent[t]] += a * x[lv.last[t]];
        }
        adjoint = std::move(up);
    }
}

std::shared_ptr<const TermTree> term_tree(std::size_t dim, std::size_t max_degree, bool symmetric) {
    static std::mutex mu;
    static std::map<std::tuple<std::size_t, bool>, std::shared_ptr<const TermTree>> trees;
    std::lock_guard<std::mutex> lock(mu);
    auto& slot = trees[{dim, symmetric}];
    if (!slot || slot->max_degree() < max_degree) slot = std::make_shared<const TermTree>(dim, max_degree, symmetric);
    return slot;
}

}  // namespace kvslim
