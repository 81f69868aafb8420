#pragma once

// Helpers shared by the unit tests: random instances, exhaustive oracles
// and finite differences. Everything is seeded so failures reproduce.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "vebm/vebm.hpp"

namespace vebm::test {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double lo = -1.0, double hi = 1.0)
{
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.uniform(lo, hi);
    return m;
}

/// Log-density tables that look like a real fit: values around a few units
/// below zero with patient/control contrasts of either sign.
inline LikelihoodTables random_tables(Eigen::Index people, Eigen::Index events, Rng& rng, double spread = 3.0)
{
    LikelihoodTables t;
    t.log_p = random_matrix(people, events, rng, -spread, 0.5);
    t.log_c = random_matrix(people, events, rng, -spread, 0.5);
    return t;
}

inline EventSequence random_sequence(std::size_t n, Rng& rng)
{
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order.begin(), order.end());
    return EventSequence(std::move(order));
}

/// Calls `fn` on every permutation of 0..n-1 in lexicographic order.
inline void for_each_permutation(std::size_t n, const std::function<void(const std::vector<int>&)>& fn)
{
    std::vector<int> p(n);
    std::iota(p.begin(), p.end(), 0);
    do fn(p);
    while (std::next_permutation(p.begin(), p.end()));
}

/// Likelihood of a hard sequence by explicit per-stage products,
/// in plain double arithmetic (use only with moderate tables).
inline double brute_hard_loglik(const LikelihoodTables& t, const std::vector<int>& order)
{
    const auto people = t.log_p.rows();
    const auto n = static_cast<Eigen::Index>(order.size());
    double total = 0.0;
    for (Eigen::Index i = 0; i < people; ++i) {
        double sum = 0.0;
        for (Eigen::Index k = 0; k <= n; ++k) {
            double prod = 1.0;
            for (Eigen::Index q = 0; q < n; ++q) {
                const int e = order[static_cast<std::size_t>(q)];
                prod *= std::exp(q < k ? t.log_p(i, e) : t.log_c(i, e));
            }
            sum += prod;
        }
        total += std::log(sum / static_cast<double>(n + 1));
    }
    return total;
}

/// Central differences of a scalar function of a matrix.
inline Matrix finite_difference(const std::function<double(const Matrix&)>& f, const Matrix& x, double h)
{
    Matrix g(x.rows(), x.cols());
    Matrix xp = x;
    for (Eigen::Index j = 0; j < x.cols(); ++j)
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            xp(i, j) = x(i, j) + h;
            const double up = f(xp);
            xp(i, j) = x(i, j) - h;
            const double down = f(xp);
            xp(i, j) = x(i, j);
            g(i, j) = (up - down) / (2.0 * h);
        }
    return g;
}

inline double relative_error(const Matrix& a, const Matrix& reference)
{
    const double denom = std::max(reference.norm(), 1e-12);
    return (a - reference).norm() / denom;
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b)
{
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::ranges::sort(idx, [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
        std::vector<double> r(v.size());
        for (std::size_t k = 0; k < idx.size();) {
            std::size_t m = k;
            while (m + 1 < idx.size() && v[idx[m + 1]] == v[idx[k]]) ++m;
            const double avg = 0.5 * static_cast<double>(k + m);
            for (std::size_t q = k; q <= m; ++q) r[idx[q]] = avg;
            k = m + 1;
        }
        return r;
    };
    const auto ra = ranks(a);
    const auto rb = ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t k = 0; k < ra.size(); ++k) {
        sab += (ra[k] - ma) * (rb[k] - mb);
        saa += (ra[k] - ma) * (ra[k] - ma);
        sbb += (rb[k] - mb) * (rb[k] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

} // namespace vebm::test
