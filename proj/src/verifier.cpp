// SPDX-License-Identifier: Apache-2.0

#include "kvslim/verifier.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "kvslim/errors.hpp"
#include "kvslim/rng.hpp"

namespace kvslim {

std::string_view to_string(QueryKind kind) {
    switch (kind) {
        case QueryKind::RandomDirection:
            return "random_direction";
        case QueryKind::KeyAligned:
            return "key_aligned";
        case QueryKind::AscentRefined:
            return "ascent_refined";
    }
    return "unknown";
}

QuerySuite build_query_suite(const KvCache& cache, double rho, QueryCounts counts, std::uint64_t seed,
                             const KvCache* half) {
    if (!(rho >= 0.0)) throw DimensionError("query radius must be nonnegative");
    QuerySuite suite;
    suite.rho = rho;
    suite.seed = seed;
    const std::size_t d_k = cache.key_dim();

    Rng rng(derive_seed(seed, 1));
    for (std::size_t r = 0; r < counts.random; ++r) {
        Vector q = rng.unit_vector(d_k);
        for (auto& x : q) x *= rho;
        suite.queries.push_back(std::move(q));
        suite.kinds.push_back(QueryKind::RandomDirection);
    }

    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < cache.size(); ++i)
        if (norm2(cache.key(i)) > 0.0) eligible.push_back(i);
    if (counts.key_aligned < eligible.size()) {
        Rng pick(derive_seed(seed, 2));
        auto perm = pick.permutation(eligible.size());
        perm.resize(counts.key_aligned);
        std::sort(perm.begin(), perm.end());
        std::vector<std::size_t> chosen;
        for (auto p : perm) chosen.push_back(eligible[p]);
        eligible = std::move(chosen);
    }
    for (std::size_t i : eligible) {
        Vector q(cache.key(i).begin(), cache.key(i).end());
        normalize(q);
        for (auto& x : q) x *= rho;
        suite.queries.push_back(std::move(q));
        suite.kinds.push_back(QueryKind::KeyAligned);
    }

    if (counts.ascent > 0) {
        if (!half) throw std::invalid_argument("ascent-refined queries need the compressed cache");
        refine_queries(suite, cache, *half, counts.ascent);
    }
    return suite;
}

namespace {

// |Attn_full(q) - Attn_half(q)|^2 and its gradient in q.
double attn_gap(std::span<const double> q, const KvCache& full, const KvCache& half, Vector* grad) {
    const Vector af = attn(q, full);
    const Vector ah = attn(q, half);
    Vector diff(af.size());
    for (std::size_t j = 0; j < af.size(); ++j) diff[j] = af[j] - ah[j];
    const double f = dot(diff, diff);
    if (grad) {
        grad->assign(q.size(), 0.0);
        // d Attn / d q applied to diff: sum_i w_i <v_i - Attn, diff> k_i.
        auto accumulate = [&](const KvCache& c, const Vector& a, double sign) {
            const Vector w = softmax_weights(q, c);
            const double base = dot(a, diff);
            for (std::size_t i = 0; i < c.size(); ++i) {
                const double s = w[i] * (dot(c.value(i), diff) - base);
                axpy(2.0 * sign * s, c.key(i), *grad);
            }
        };
        accumulate(full, af, 1.0);
        accumulate(half, ah, -1.0);
    }
    return f;
}

}  // namespace

void refine_queries(QuerySuite& suite, const KvCache& full, const KvCache& half, std::size_t count,
                    std::size_t iterations) {
    if (suite.queries.empty() || count == 0 || suite.rho == 0.0) return;
    std::vector<double> gap(suite.size());
    for (std::size_t s = 0; s < suite.size(); ++s) gap[s] = attn_gap(suite.queries[s], full, half, nullptr);
    std::vector<std::size_t> order(suite.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return gap[a] > gap[b]; });
    order.resize(std::min(count, order.size()));

    const double rho = suite.rho;
    for (std::size_t start : order) {
        Vector q = suite.queries[start];
        Vector g;
        double f = attn_gap(q, full, half, &g);
        const double f0 = f;
        double step = 0.1 * rho;
        for (std::size_t it = 0; it < iterations && step > 1e-9 * rho; ++it) {
            const double gn = norm2(g);
            if (gn == 0.0) break;
            Vector cand = q;
            axpy(step / gn, g, cand);
            normalize(cand);
            for (auto& x : cand) x *= rho;
            Vector gc;
            const double fc = attn_gap(cand, full, half, &gc);
            if (fc > f) {
                q = std::move(cand);
                g = std::move(gc);
                f = fc;
                step *= 1.5;
            } else {
                step *= 0.5;
            }
        }
        if (f > f0) {
            suite.queries.push_back(std::move(q));
            suite.kinds.push_back(QueryKind::AscentRefined);
        }
    }
}

ErrorStats summarize(std::span<const double> values) {
    ErrorStats s;
    if (values.empty()) return s;
    auto it = std::max_element(values.begin(), values.end());
    s.max = *it;
    s.argmax = static_cast<std::size_t>(it - values.begin());
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    auto rank = [&](double p) {
        const auto k = static_cast<std::size_t>(std::ceil(p * static_cast<double>(sorted.size())));
        return sorted[std::max<std::size_t>(k, 1) - 1];
    };
    s.p95 = rank(0.95);
    s.median = rank(0.5);
    return s;
}

ErrorReport empirical_error(const QuerySuite& suite, const KvCache& full, const KvCache& half, double mass_ratio) {
    if (full.key_dim() != half.key_dim() || full.value_dim() != half.value_dim())
        throw DimensionError("empirical_error: caches have different dimensions");
    ErrorReport rep;
    rep.mass_ratio = mass_ratio;
    rep.queries = suite.size();

    auto measure = [&](std::span<const double> q, double& num, double& den, double& att) {
        const auto pf = attention_parts(q, full);
        const auto ph = attention_parts(q, half);
        double sn = 0.0, sa = 0.0;
        for (std::size_t j = 0; j < pf.numerator.size(); ++j) {
            const double d = pf.numerator[j] - mass_ratio * ph.numerator[j];
            const double a = pf.numerator[j] / pf.denominator - ph.numerator[j] / ph.denominator;
            sn += d * d;
            sa += a * a;
        }
        num = std::sqrt(sn);
        den = std::abs(pf.denominator - mass_ratio * ph.denominator);
        att = std::sqrt(sa);
    };

    std::vector<double> num(suite.size()), den(suite.size()), att(suite.size());
    for (std::size_t s = 0; s < suite.size(); ++s) measure(suite.queries[s], num[s], den[s], att[s]);
    rep.numerator = summarize(num);
    rep.denominator = summarize(den);
    rep.attention = summarize(att);

    const Vector origin(full.key_dim(), 0.0);
    measure(origin, rep.origin_numerator, rep.origin_denominator, rep.origin_attention);
    return rep;
}

TensorBlockView block_view(const BlockSum& sum, const EmbeddingConfig& cfg, std::size_t m) {
    if (sum.offsets != cfg.offsets()) throw DimensionError("block sum layout does not match config");
    return TensorBlockView{sum.block(m), m, cfg.key_dim(), cfg.value_dim(), cfg.symmetric()};
}

namespace {

void check_block(const TensorBlockView& b) {
    const std::size_t terms = TermTree::count_terms(b.key_dim, b.degree, b.symmetric);
    if (b.value_dim == 0 || b.key_dim == 0 || b.data.size() != terms * b.value_dim)
        throw DimensionError("tensor block has " + std::to_string(b.data.size()) + " entries, layout needs " +
                             std::to_string(terms * b.value_dim));
}

struct Contraction {
    std::vector<Vector> prods;
    Vector t;
    double norm = 0.0;
};

void contract(const TensorBlockView& b, const TermTree& tree, std::span<const double> q, Contraction& c) {
    tree.forward(q, b.degree, c.prods);
    const auto& coef = tree.level(b.degree).coef;
    const Vector& p = c.prods[b.degree];
    c.t.assign(b.value_dim, 0.0);
    for (std::size_t t = 0; t < p.size(); ++t) {
        const double s = coef[t] * p[t];
        const double* row = b.data.data() + t * b.value_dim;
        for (std::size_t j = 0; j < b.value_dim; ++j) c.t[j] += s * row[j];
    }
    c.norm = norm2(c.t);
}

Vector unit_or_first_axis(const Vector& v) {
    Vector u = v;
    if (normalize(u) == 0.0) {
        std::fill(u.begin(), u.end(), 0.0);
        u[0] = 1.0;
    }
    return u;
}

}  // namespace

Vector contract_direction(const TensorBlockView& block, std::span<const double> qhat) {
    check_block(block);
    if (qhat.size() != block.key_dim) throw DimensionError("direction has wrong dimension");
    auto tree = term_tree(block.key_dim, block.degree, block.symmetric);
    Contraction c;
    contract(block, *tree, qhat, c);
    return c.t;
}

double evaluate_test_tensor(const TensorBlockView& block, std::span<const double> qhat, std::span<const double> u) {
    if (u.size() != block.value_dim) throw DimensionError("output direction has wrong dimension");
    return dot(contract_direction(block, qhat), u);
}

StarNormEstimate star_norm_ascent(const TensorBlockView& block, const StarNormOptions& opts) {
    check_block(block);
    if (block.degree == 0) throw std::invalid_argument("star_norm_ascent needs degree >= 1");
    const std::size_t m = block.degree;
    const std::size_t d_v = block.value_dim;
    auto tree = term_tree(block.key_dim, m, block.symmetric);
    const auto& coef = tree->level(m).coef;

    StarNormEstimate best;
    best.degree = m;
    best.value = -1.0;
    Rng rng(derive_seed(opts.seed, 0x57a2, m));
    Contraction cur, cand;
    Vector adjoint, grad(block.key_dim);
    const std::size_t restarts = std::max<std::size_t>(opts.restarts, 1);
    for (std::size_t r = 0; r < restarts; ++r) {
        Vector q = rng.unit_vector(block.key_dim);
        contract(block, *tree, q, cur);
        bool converged = false;
        std::size_t it = 0;
        for (; it < opts.max_iterations; ++it) {
            // u-step is exact: u = T(q) / |T(q)|.
            const Vector u = unit_or_first_axis(cur.t);
            adjoint.assign(coef.size(), 0.0);
            for (std::size_t t = 0; t < coef.size(); ++t) {
                const double* row = block.data.data() + t * d_v;
                double s = 0.0;
                for (std::size_t j = 0; j < d_v; ++j) s += row[j] * u[j];
                adjoint[t] = coef[t] * s;
            }
            std::fill(grad.begin(), grad.end(), 0.0);
            tree->backward(q, cur.prods, m, adjoint, grad);

            // q-step: shifted power update, shift grows until the value does not drop.
            bool accepted = false;
            double shift = 0.0;
            Vector next;
            for (int attempt = 0; attempt < 40; ++attempt) {
                next = grad;
                axpy(shift, q, next);
                if (normalize(next) > 0.0) {
                    contract(block, *tree, next, cand);
                    if (cand.norm >= cur.norm) {
                        accepted = true;
                        break;
                    }
                }
                shift = shift == 0.0 ? std::max(cur.norm * static_cast<double>(m), 1e-300) : shift * 4.0;
            }
            if (!accepted) {
                converged = true;
                break;
            }
            const double gain = cand.norm - cur.norm;
            q = std::move(next);
            std::swap(cur, cand);
            if (gain <= opts.tolerance * std::max(1.0, cur.norm)) {
                converged = true;
                ++it;
                break;
            }
        }
        if (cur.norm > best.value) {
            best.value = cur.norm;
            best.qhat = q;
            best.u = unit_or_first_axis(cur.t);
            best.converged = converged;
            best.iterations = it;
        }
    }
    best.restarts = restarts;
    return best;
}

StarNormEstimate star_norm(const TensorBlockView& block, const StarNormOptions& opts) {
    check_block(block);
    if (block.degree == 0) {
        StarNormEstimate e;
        e.degree = 0;
        const Vector s(block.data.begin(), block.data.end());
        e.value = norm2(s);
        e.qhat.assign(block.key_dim, 0.0);
        e.qhat[0] = 1.0;
        e.u = unit_or_first_axis(s);
        e.converged = true;
        return e;
    }
    if (block.degree == 1) {
        Eigen::MatrixXd mat(block.key_dim, block.value_dim);
        for (std::size_t i = 0; i < block.key_dim; ++i)
            for (std::size_t j = 0; j < block.value_dim; ++j) mat(i, j) = block.data[i * block.value_dim + j];
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(mat, Eigen::ComputeThinU | Eigen::ComputeThinV);
        StarNormEstimate e;
        e.degree = 1;
        e.value = svd.singularValues()(0);
        e.qhat.resize(block.key_dim);
        e.u.resize(block.value_dim);
        for (std::size_t i = 0; i < block.key_dim; ++i) e.qhat[i] = svd.matrixU()(i, 0);
        for (std::size_t j = 0; j < block.value_dim; ++j) e.u[j] = svd.matrixV()(j, 0);
        e.converged = true;
        return e;
    }
    return star_norm_ascent(block, opts);
}

std::vector<StarNormEstimate> star_norms(const BlockSum& sum, const EmbeddingConfig& cfg,
                                         const StarNormOptions& opts) {
    std::vector<StarNormEstimate> out;
    for (std::size_t m = 0; m <= cfg.degree(); ++m) out.push_back(star_norm(block_view(sum, cfg, m), opts));
    return out;
}

double error_series_bound(std::span<const double> star_values, double rho, std::size_t n_items) {
    if (star_values.empty()) throw std::invalid_argument("error_series_bound needs at least degree 0");
    double total = 0.0;
    double coeff = 1.0;  // rho^m / m!
    for (std::size_t m = 0; m < star_values.size(); ++m) {
        if (m > 0) coeff *= rho / static_cast<double>(m);
        total += z_weight(m) * coeff * star_values[m];
    }
    return total + static_cast<double>(n_items) * truncation_tail(rho, star_values.size() - 1);
}

double fit_star_profile(std::span<const double> star_values, std::size_t key_dim) {
    double c = 0.0;
    for (std::size_t m = 0; m < star_values.size(); ++m)
        c = std::max(c, star_values[m] / std::sqrt(static_cast<double>(key_dim) * std::log(m + 2.0)));
    return c;
}

}  // namespace kvslim
