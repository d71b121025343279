// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "kvslim/linalg.hpp"

namespace kvslim {

/// Index tree over the coordinates of x^{(x)m} for m = 0..max_degree.
///
/// Explicit layout: degree m has d^m terms, one per index tuple, in row-major order.
/// Symmetric layout: degree m has C(d+m-1, m) terms, one per nondecreasing tuple
/// (a monomial), with coefficient sqrt(m! / prod alpha!) so that inner products of
/// tensor powers are preserved. Every degree-m term extends a degree-(m-1) parent by
/// one trailing index, which lets products and gradients run in one sweep per level.
class TermTree {
  public:
    struct Level {
        std::vector<std::uint32_t> parent;
        std::vector<std::uint32_t> last;
        std::vector<double> coef;
        std::size_t size() const noexcept { return parent.size(); }
    };

    TermTree(std::size_t dim, std::size_t max_degree, bool symmetric);

    std::size_t dim() const noexcept { return dim_; }
    std::size_t max_degree() const noexcept { return levels_.size() - 1; }
    bool symmetric() const noexcept { return symmetric_; }
    const Level& level(std::size_t m) const { return levels_.at(m); }

    /// products[m][t] = prod of x over the indices of term t (coefficient not applied).
    void forward(std::span<const double> x, std::size_t degree, std::vector<Vector>& products) const;

    /// Given d f / d products[m] in `adjoint`, accumulates d f / d x into `grad`.
    /// `adjoint` is consumed.
    void backward(std::span<const double> x, const std::vector<Vector>& products, std::size_t m, Vector adjoint,
                  std::span<double> grad) const;

    /// Number of terms at degree m without building anything; saturates at SIZE_MAX.
    static std::size_t count_terms(std::size_t dim, std::size_t m, bool symmetric);

  private:
    std::size_t dim_;
    bool symmetric_;
    std::vector<Level> levels_;
};

/// Shared, lazily built tree for (dim, max_degree, symmetric). Thread-safe.
std::shared_ptr<const TermTree> term_tree(std::size_t dim, std::size_t max_degree, bool symmetric);

}  // namespace kvslim
