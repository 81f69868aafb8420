#pragma once

// Domain types shared by every part of the library, plus the two numeric
// helpers everything leans on: a stable log-sum-exp and the seeded RNG.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace vebm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Label { Control, Patient, Unlabelled };

/// Cross-sectional observations: one row per individual, one column per
/// feature. Cells with `observed(i, j) == false` are missing and their value
/// is ignored.
struct Dataset {
    Matrix values;
    Mask observed;
    std::vector<Label> labels;
    std::vector<std::string> feature_names;
    std::vector<std::string> ids;

    std::size_t n_individuals() const noexcept { return static_cast<std::size_t>(values.rows()); }
    std::size_t n_features() const noexcept { return static_cast<std::size_t>(values.cols()); }
};

/// Throws `Error` if the dataset breaks a structural invariant. The label
/// check is only needed when mixtures will be fit from this dataset.
inline void validate_dataset(const Dataset& d, bool require_both_groups = true)
{
    const auto rows = d.values.rows();
    const auto cols = d.values.cols();
    if (rows < 1 || cols < 1)
        throw Error("dataset must have at least one individual and one feature");
    if (d.observed.rows() != rows || d.observed.cols() != cols)
        throw Error("dimension mismatch: observed mask is " + std::to_string(d.observed.rows()) + "x" +
                    std::to_string(d.observed.cols()) + ", values are " + std::to_string(rows) + "x" +
                    std::to_string(cols));
    if (d.labels.size() != static_cast<std::size_t>(rows))
        throw Error("dimension mismatch: " + std::to_string(d.labels.size()) + " labels for " +
                    std::to_string(rows) + " individuals");
    if (!d.feature_names.empty() && d.feature_names.size() != static_cast<std::size_t>(cols))
        throw Error("dimension mismatch: " + std::to_string(d.feature_names.size()) + " feature names for " +
                    std::to_string(cols) + " features");
    if (!d.ids.empty() && d.ids.size() != static_cast<std::size_t>(rows))
        throw Error("dimension mismatch: " + std::to_string(d.ids.size()) + " ids for " + std::to_string(rows) +
                    " individuals");
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j)
            if (d.observed(i, j) && !std::isfinite(d.values(i, j)))
                throw Error("non-finite observed value at individual " + std::to_string(i) + ", feature " +
                            std::to_string(j));
    if (require_both_groups) {
        const bool any_control = std::ranges::find(d.labels, Label::Control) != d.labels.end();
        const bool any_patient = std::ranges::find(d.labels, Label::Patient) != d.labels.end();
        if (!any_patient) throw Error("no patient group");
        if (!any_control) throw Error("no control group");
    }
}

struct FeatureMixture {
    double mu_c = 0.0;
    double sigma_c = 1.0;
    double mu_p = 1.0;
    double sigma_p = 1.0;
    double w = 0.5; // weight of the patient component
};

struct MixtureParams {
    std::vector<FeatureMixture> features;

    std::size_t size() const noexcept { return features.size(); }
};

/// Per-cell log densities under the patient and control components.
/// Missing cells hold 0 in both tables so they drop out of every stage.
struct LikelihoodTables {
    Matrix log_p;
    Matrix log_c;

    std::size_t n_individuals() const noexcept { return static_cast<std::size_t>(log_p.rows()); }
    std::size_t n_events() const noexcept { return static_cast<std::size_t>(log_p.cols()); }
};

/// Hard permutation: `order[position] = event`.
class EventSequence {
public:
    EventSequence() = default;

    explicit EventSequence(std::vector<int> order) : order_(std::move(order))
    {
        std::vector<char> seen(order_.size(), 0);
        for (int e : order_) {
            if (e < 0 || static_cast<std::size_t>(e) >= order_.size() || seen[static_cast<std::size_t>(e)])
                throw Error("event sequence is not a permutation");
            seen[static_cast<std::size_t>(e)] = 1;
        }
    }

    static EventSequence identity(std::size_t n)
    {
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        return EventSequence(std::move(order));
    }

    std::size_t size() const noexcept { return order_.size(); }
    int operator[](std::size_t position) const { return order_[position]; }
    const std::vector<int>& order() const noexcept { return order_; }

    /// Inverse map: `positions()[event] = position`.
    std::vector<int> positions() const
    {
        std::vector<int> pos(order_.size());
        for (std::size_t p = 0; p < order_.size(); ++p) pos[static_cast<std::size_t>(order_[p])] = static_cast<int>(p);
        return pos;
    }

    /// Permutation matrix with rows = positions, columns = events.
    Matrix as_matrix() const
    {
        const auto n = static_cast<Eigen::Index>(order_.size());
        Matrix m = Matrix::Zero(n, n);
        for (Eigen::Index p = 0; p < n; ++p) m(p, order_[static_cast<std::size_t>(p)]) = 1.0;
        return m;
    }

    friend bool operator==(const EventSequence&, const EventSequence&) = default;

private:
    std::vector<int> order_;
};

/// Doubly stochastic matrix; rows are sequence positions, columns events.
class SoftPermutation {
public:
    static constexpr double kTolerance = 1e-6;

    SoftPermutation() = default;

    explicit SoftPermutation(Matrix s) : s_(std::move(s))
    {
        if (s_.rows() != s_.cols()) throw Error("soft permutation must be square");
        if ((s_.array() < 0.0).any() || !s_.allFinite()) throw Error("soft permutation has negative or non-finite entries");
        const double row_err = (s_.rowwise().sum().array() - 1.0).abs().maxCoeff();
        const double col_err = (s_.colwise().sum().array() - 1.0).abs().maxCoeff();
        if (row_err > kTolerance || col_err > kTolerance)
            throw Error("matrix is not doubly stochastic (row error " + std::to_string(row_err) + ", column error " +
                        std::to_string(col_err) + ")");
    }

    explicit SoftPermutation(const EventSequence& s) : s_(s.as_matrix()) {}

    /// Wraps a Sinkhorn iterate without checking the marginals; after a
    /// fixed number of passes the column sums of a sharp matrix may still be
    /// off by more than `kTolerance`.
    static SoftPermutation unchecked(Matrix s)
    {
        SoftPermutation out;
        out.s_ = std::move(s);
        return out;
    }

    /// Largest deviation of any row or column sum from one.
    double marginal_error() const
    {
        if (s_.size() == 0) return 0.0;
        return std::max((s_.rowwise().sum().array() - 1.0).abs().maxCoeff(),
                        (s_.colwise().sum().array() - 1.0).abs().maxCoeff());
    }

    const Matrix& matrix() const noexcept { return s_; }
    std::size_t size() const noexcept { return static_cast<std::size_t>(s_.rows()); }

private:
    Matrix s_;
};

enum class Decoder { Hungarian, Barycentre };
enum class ScoreInit { Zero, Frequency };

struct ModelConfig {
    double tau = 1.0;
    double tau_prior = 1.0;
    int n_s = 20;
    int n_opt = 200;
    double learning_rate = 0.1;
    bool use_gumbel_noise = false;
    std::uint64_t seed = 0;
    Decoder decoder = Decoder::Hungarian;
    ScoreInit init = ScoreInit::Zero;

    void validate() const
    {
        if (!(tau > 0.0) || !std::isfinite(tau)) throw Error("tau must be positive");
        if (!(tau_prior > 0.0) || !std::isfinite(tau_prior)) throw Error("tau_prior must be positive");
        if (n_s < 1) throw Error("n_s must be at least 1");
        if (n_opt < 1) throw Error("n_opt must be at least 1");
        if (!(learning_rate > 0.0)) throw Error("learning rate must be positive");
    }
};

/// Posterior over stages 0..N for one individual.
struct StagePosterior {
    std::vector<double> probabilities;
    int ml_stage = 0;
};

inline double log_sum_exp(std::span<const double> v)
{
    if (v.empty()) throw Error("log_sum_exp of an empty vector");
    const double m = *std::ranges::max_element(v);
    if (m == -std::numeric_limits<double>::infinity()) return m;
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

/// exp(x) elementwise with x clamped below at -700. Subnormal doubles are
/// many times slower to produce and consume than normal ones; the clamp
/// keeps every result at or above 1e-304, far below anything that changes
/// a sum containing a term of order one.
/// Takes a plain matrix so that broadcasting expressions are evaluated first;
/// exp over a rowwise/colwise expression does not vectorise.
inline Matrix exp_clamped(Matrix x)
{
    x.array() = x.array().max(-700.0).exp();
    return x;
}

/// Seeded generator used for every stochastic step. The engine is
/// `std::mt19937_64`; uniforms take the top 53 bits of one draw, and child
/// streams are seeded by SplitMix64 over a draw from the parent so that
/// independent consumers never share a stream.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(splitmix64(seed)) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal(double mean, double sd) { return std::normal_distribution<double>(mean, sd)(engine_); }

    /// Uniform integer in [0, n).
    std::size_t below(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

    Rng split() { return Rng(engine_()); }

    template <typename It>
    void shuffle(It first, It last)
    {
        for (auto n = last - first; n > 1; --n) std::iter_swap(first + (n - 1), first + static_cast<std::ptrdiff_t>(below(static_cast<std::size_t>(n))));
    }

    static std::uint64_t splitmix64(std::uint64_t x)
    {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

private:
    std::mt19937_64 engine_;
};

} // namespace vebm
