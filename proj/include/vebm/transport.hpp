#pragma once

// Entropy-regularised transport over permutations: the log-domain
// Sinkhorn-Knopp operator (with its exact reverse pass), Gumbel noise,
// Hungarian decoding of hard permutations, and the closed-form KL between
// Gumbel-Sinkhorn posterior and prior.

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "vebm/core.hpp"

namespace vebm {

/// Log-domain Sinkhorn-Knopp. One pass normalises columns, then rows, so the
/// returned matrix has rows that sum to one up to rounding and columns that
/// converge with the number of passes. Keeps every intermediate softmax so
/// that `backward` can replay the passes in reverse.
class SinkhornOperator {
public:
    /// Runs `n_passes` passes starting from `log_alpha` and returns S.
    const Matrix& forward(const Matrix& log_alpha, int n_passes)
    {
        if (n_passes < 1) throw Error("sinkhorn: number of iterations must be at least 1");
        if (log_alpha.rows() != log_alpha.cols()) throw Error("sinkhorn: score matrix must be square");
        if (!log_alpha.allFinite()) throw Error("sinkhorn: non-finite scores");
        const auto n = log_alpha.rows();
        n_passes_ = n_passes;
        if (col_soft_.size() < static_cast<std::size_t>(n_passes)) {
            col_soft_.resize(static_cast<std::size_t>(n_passes));
            row_soft_.resize(static_cast<std::size_t>(n_passes));
        }
        log_s_ = log_alpha;
        for (int t = 0; t < n_passes; ++t) {
            auto& p = col_soft_[static_cast<std::size_t>(t)];
            auto& q = row_soft_[static_cast<std::size_t>(t)];

            col_max_ = log_s_.colwise().maxCoeff();
            p = exp_clamped(log_s_.rowwise() - col_max_);
            col_sum_ = p.colwise().sum();
            log_s_.rowwise() -= (col_max_.array() + col_sum_.array().log()).matrix();
            p.array().rowwise() /= col_sum_.array();

            row_max_ = log_s_.rowwise().maxCoeff();
            q = exp_clamped(log_s_.colwise() - row_max_);
            row_sum_ = q.rowwise().sum();
            log_s_.colwise() -= (row_max_.array() + row_sum_.array().log()).matrix();
            q.array().colwise() /= row_sum_.array();
        }
        if (!log_s_.allFinite())
            throw Error("sinkhorn: non-finite iterate (temperature too small for the score magnitude)");
        (void)n;
        return row_soft_[static_cast<std::size_t>(n_passes - 1)];
    }

    const Matrix& result() const { return row_soft_[static_cast<std::size_t>(n_passes_ - 1)]; }
    const Matrix& log_result() const noexcept { return log_s_; }

    /// Gradient with respect to the `log_alpha` of the last `forward` call,
    /// given the gradient with respect to S.
    Matrix backward(const Matrix& grad_s) const
    {
        if (n_passes_ == 0) throw Error("sinkhorn: backward called before forward");
        return backward_log(grad_s.cwiseProduct(result()));
    }

    /// Same, given the gradient with respect to log S.
    Matrix backward_log(const Matrix& grad_log_s) const
    {
        if (n_passes_ == 0) throw Error("sinkhorn: backward called before forward");
        Matrix g = grad_log_s;
        Vector row_g;
        Eigen::RowVectorXd col_g;
        for (int t = n_passes_ - 1; t >= 0; --t) {
            const auto& q = row_soft_[static_cast<std::size_t>(t)];
            row_g = g.rowwise().sum();
            g -= (q.array().colwise() * row_g.array()).matrix();
            const auto& p = col_soft_[static_cast<std::size_t>(t)];
            col_g = g.colwise().sum();
            g -= (p.array().rowwise() * col_g.array()).matrix();
        }
        return g;
    }

private:
    int n_passes_ = 0;
    Matrix log_s_;
    std::vector<Matrix> col_soft_;
    std::vector<Matrix> row_soft_;
    Eigen::RowVectorXd col_max_, col_sum_;
    Vector row_max_, row_sum_;
};

/// S = Sinkhorn(x / tau) after `n_s` passes.
inline SoftPermutation sinkhorn(const Matrix& x, double tau, int n_s)
{
    if (!(tau > 0.0)) throw Error("sinkhorn: tau must be positive");
    SinkhornOperator op;
    const Matrix scaled = x / tau;
    return SoftPermutation::unchecked(op.forward(scaled, n_s));
}

/// Standard Gumbel quantile, with u kept strictly inside (0, 1).
inline double gumbel_from_uniform(double u) noexcept
{
    constexpr double lo = 0x1.0p-60;
    constexpr double hi = 1.0 - 0x1.0p-53;
    u = std::clamp(u, lo, hi);
    return -std::log(-std::log(u));
}

inline Matrix gumbel_noise(std::size_t n, Rng& rng)
{
    const auto m = static_cast<Eigen::Index>(n);
    Matrix e(m, m);
    // Column-major fill keeps the draw order fixed for a given seed.
    for (Eigen::Index j = 0; j < m; ++j)
        for (Eigen::Index i = 0; i < m; ++i) e(i, j) = gumbel_from_uniform(rng.uniform());
    return e;
}

inline Matrix gumbel_noise(std::size_t n, std::uint64_t seed)
{
    Rng rng(seed);
    return gumbel_noise(n, rng);
}

namespace detail {

struct AssignmentDuals {
    std::vector<int> row_to_col;
    std::vector<double> u; // row potentials
    std::vector<double> v; // column potentials
};

// Shortest augmenting path (Jonker-Volgenant style) minimum-cost assignment
// on a square matrix. Returns a feasible optimal dual alongside the matching.
inline AssignmentDuals min_cost_assignment(const Matrix& cost)
{
    const int n = static_cast<int>(cost.rows());
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(n + 1), 0.0);
    std::vector<int> p(static_cast<std::size_t>(n + 1), 0), way(static_cast<std::size_t>(n + 1), 0);
    std::vector<double> minv(static_cast<std::size_t>(n + 1));
    std::vector<char> used(static_cast<std::size_t>(n + 1));
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[static_cast<std::size_t>(j0)] = 1;
            const int i0 = p[static_cast<std::size_t>(j0)];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
                if (cur < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<std::size_t>(j0)] != 0);
        do {
            const int j1 = way[static_cast<std::size_t>(j0)];
            p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0 != 0);
    }
    AssignmentDuals out;
    out.row_to_col.assign(static_cast<std::size_t>(n), -1);
    out.u.assign(u.begin() + 1, u.end());
    out.v.assign(v.begin() + 1, v.end());
    for (int j = 1; j <= n; ++j) out.row_to_col[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
    return out;
}

// Among the perfect matchings of the equality subgraph (edges with zero
// reduced cost under an optimal dual), pick the lexicographically smallest
// row-to-column map. Every optimal assignment lives in that subgraph.
inline std::vector<int> lexicographic_optimum(const Matrix& cost, const AssignmentDuals& duals)
{
    const int n = static_cast<int>(cost.rows());
    const double scale = std::max(1.0, cost.cwiseAbs().maxCoeff());
    const double tol = 1e-10 * scale * std::max(1, n);

    std::vector<std::vector<int>> tight(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (cost(i, j) - duals.u[static_cast<std::size_t>(i)] - duals.v[static_cast<std::size_t>(j)] <= tol)
                tight[static_cast<std::size_t>(i)].push_back(j);

    std::vector<int> row_to_col = duals.row_to_col;
    std::vector<int> col_to_row(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) col_to_row[static_cast<std::size_t>(row_to_col[static_cast<std::size_t>(i)])] = i;
    std::vector<char> fixed(static_cast<std::size_t>(n), 0);

    std::vector<int> parent_col(static_cast<std::size_t>(n));
    std::vector<char> seen(static_cast<std::size_t>(n));
    std::vector<int> queue;

    for (int r = 0; r < n; ++r) {
        for (int c : tight[static_cast<std::size_t>(r)]) {
            const int current = row_to_col[static_cast<std::size_t>(r)];
            if (c == current) break;
            const int owner = col_to_row[static_cast<std::size_t>(c)];
            if (fixed[static_cast<std::size_t>(owner)]) continue;
            // Re-home `owner` so that `current` is the column finally freed.
            std::fill(seen.begin(), seen.end(), 0);
            queue.assign(1, owner);
            seen[static_cast<std::size_t>(c)] = 1;
            int found = -1;
            for (std::size_t head = 0; head < queue.size() && found < 0; ++head) {
                const int row = queue[head];
                for (int y : tight[static_cast<std::size_t>(row)]) {
                    if (seen[static_cast<std::size_t>(y)]) continue;
                    seen[static_cast<std::size_t>(y)] = 1;
                    parent_col[static_cast<std::size_t>(y)] = row;
                    if (y == current) {
                        found = y;
                        break;
                    }
                    const int next = col_to_row[static_cast<std::size_t>(y)];
                    if (!fixed[static_cast<std::size_t>(next)] && next != r) queue.push_back(next);
                }
            }
            if (found < 0) continue;
            // Augment: walk back from `current`, shifting each row onto the column it reached.
            int y = found;
            while (true) {
                const int row = parent_col[static_cast<std::size_t>(y)];
                const int prev = row_to_col[static_cast<std::size_t>(row)];
                row_to_col[static_cast<std::size_t>(row)] = y;
                col_to_row[static_cast<std::size_t>(y)] = row;
                if (row == owner) break;
                y = prev;
            }
            row_to_col[static_cast<std::size_t>(r)] = c;
            col_to_row[static_cast<std::size_t>(c)] = r;
            break;
        }
        fixed[static_cast<std::size_t>(r)] = 1;
    }
    return row_to_col;
}

} // namespace detail

/// Maximum-weight assignment of rows (positions) to columns (events):
/// `order[i]` maximises the sum of `a(i, order[i])`. Ties resolve to the
/// lexicographically smallest optimal order.
inline EventSequence hungarian(const Matrix& a)
{
    if (a.rows() != a.cols()) throw Error("hungarian: matrix must be square");
    if (!a.allFinite()) throw Error("hungarian: matrix has non-finite entries");
    if (a.rows() == 0) return EventSequence{};
    const Matrix cost = -a;
    const auto duals = detail::min_cost_assignment(cost);
    return EventSequence(detail::lexicographic_optimum(cost, duals));
}

/// Orders events by their expected position under S; ties go to the lower
/// event index.
inline EventSequence barycentre_sequence(const Matrix& s)
{
    const auto n = s.rows();
    const Vector positions = Vector::LinSpaced(n, 0.0, static_cast<double>(n - 1));
    const Vector expected = s.transpose() * positions;
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::ranges::stable_sort(order, [&](int a, int b) { return expected(a) < expected(b); });
    return EventSequence(std::move(order));
}

inline EventSequence soft_to_sequence(const SoftPermutation& s, Decoder decoder = Decoder::Hungarian)
{
    return decoder == Decoder::Hungarian ? hungarian(s.matrix()) : barycentre_sequence(s.matrix());
}

/// Closed-form KL( G(x, tau) || G(0, tau_prior) ) between Gumbel-Sinkhorn
/// distributions:
///   N^2 (log(tau/tau_prior) - 1 + gamma (r - 1)) + r sum(x) + Gamma(1 + r) sum(exp(-r x)),
/// with r = tau_prior / tau.
inline double kl_gumbel_sinkhorn(const Matrix& x, double tau, double tau_prior)
{
    if (!(tau > 0.0) || !(tau_prior > 0.0)) throw Error("kl: temperatures must be positive");
    const double r = tau_prior / tau;
    const double n2 = static_cast<double>(x.size());
    const double constant = n2 * (std::log(tau / tau_prior) - 1.0 + std::numbers::egamma * (r - 1.0));
    const double s1 = x.sum();
    double s2_term;
    const double gamma = std::tgamma(1.0 + r);
    if (std::isfinite(gamma)) {
        s2_term = (-r * x.array()).exp().sum() * gamma;
    } else {
        const double lg = std::lgamma(1.0 + r);
        s2_term = (lg - r * x.array()).exp().sum();
    }
    if (!std::isfinite(s2_term)) throw Error("kl: overflow in exp(-x tau_prior / tau) term");
    return constant + r * s1 + s2_term;
}

/// d KL / d x, elementwise.
inline Matrix kl_gumbel_sinkhorn_grad(const Matrix& x, double tau, double tau_prior)
{
    if (!(tau > 0.0) || !(tau_prior > 0.0)) throw Error("kl: temperatures must be positive");
    const double r = tau_prior / tau;
    const double lg = std::lgamma(1.0 + r);
    Matrix g = (r - r * (lg - r * x.array()).exp()).matrix();
    if (!g.allFinite()) throw Error("kl: overflow in gradient");
    return g;
}

} // namespace vebm
