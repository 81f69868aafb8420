#pragma once

// Two-component univariate Gaussian mixtures per feature, fit by EM with the
// components anchored to the labelled control and patient groups, and the
// fixed log-density tables derived from them.

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "vebm/core.hpp"
#include "vebm/parallel.hpp"

namespace vebm {

struct EmOptions {
    double tolerance = 1e-6;
    int max_iterations = 200;
    double sigma_floor_fraction = 1e-3;
};

struct EmResult {
    FeatureMixture params;
    std::vector<double> log_likelihoods; // one entry per E-step
    double sigma_floor = 0.0;
};

inline double gaussian_log_density(double x, double mu, double sigma) noexcept
{
    const double z = (x - mu) / sigma;
    return -0.5 * std::log(2.0 * std::numbers::pi) - std::log(sigma) - 0.5 * z * z;
}

namespace detail {

struct Moments {
    double mean = 0.0;
    double sd = 0.0;
    std::size_t count = 0;
};

inline Moments sample_moments(std::span<const double> xs)
{
    Moments m;
    m.count = xs.size();
    if (xs.empty()) return m;
    for (double x : xs) m.mean += x;
    m.mean /= static_cast<double>(xs.size());
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - m.mean) * (x - m.mean);
        m.sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    }
    return m;
}

inline double log_add(double a, double b) noexcept
{
    if (a == -INFINITY) return b;
    if (b == -INFINITY) return a;
    const double m = std::max(a, b);
    return m + std::log1p(std::exp(-std::abs(a - b)));
}

} // namespace detail

/// EM for one feature. `values` are the observed values and `labels` their
/// owners' labels; both groups need at least two labelled values.
inline EmResult fit_feature_mixture(std::span<const double> values, std::span<const Label> labels,
                                    const EmOptions& opt = {}, const std::string& name = "feature")
{
    if (values.size() != labels.size()) throw Error("fit_feature_mixture: values and labels differ in length");

    std::vector<double> controls, patients;
    for (std::size_t k = 0; k < values.size(); ++k) {
        if (labels[k] == Label::Control) controls.push_back(values[k]);
        else if (labels[k] == Label::Patient) patients.push_back(values[k]);
    }
    if (controls.size() < 2 || patients.size() < 2)
        throw Error("insufficient labelled data for " + name + ": need at least 2 observed controls and 2 observed patients, got " +
                    std::to_string(controls.size()) + " and " + std::to_string(patients.size()));

    const auto all = detail::sample_moments(values);
    if (!(all.sd > 0.0)) throw Error(name + " has zero variance; cannot fit a mixture");

    EmResult out;
    out.sigma_floor = opt.sigma_floor_fraction * all.sd;
    const auto c0 = detail::sample_moments(controls);
    const auto p0 = detail::sample_moments(patients);

    FeatureMixture& m = out.params;
    m.mu_c = c0.mean;
    m.sigma_c = std::max(c0.sd, out.sigma_floor);
    m.mu_p = p0.mean;
    m.sigma_p = std::max(p0.sd, out.sigma_floor);
    m.w = static_cast<double>(patients.size()) / static_cast<double>(patients.size() + controls.size());

    const std::size_t n = values.size();
    std::vector<double> resp(n);
    double previous = -INFINITY;
    for (int iter = 0; iter < opt.max_iterations; ++iter) {
        // E-step
        const double log_w = std::log(m.w);
        const double log_1mw = std::log1p(-m.w);
        double ll = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            const double a = log_w + gaussian_log_density(values[k], m.mu_p, m.sigma_p);
            const double b = log_1mw + gaussian_log_density(values[k], m.mu_c, m.sigma_c);
            const double total = detail::log_add(a, b);
            resp[k] = std::exp(a - total);
            ll += total;
        }
        out.log_likelihoods.push_back(ll);
        if (!std::isfinite(ll)) throw Error("EM diverged for " + name + " (non-finite log-likelihood)");
        if (iter > 0 && std::abs(ll - previous) < opt.tolerance) break;
        previous = ll;

        // M-step
        double rp = 0.0, sp = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            rp += resp[k];
            sp += resp[k] * values[k];
        }
        const double rc = static_cast<double>(n) - rp;
        double sc = 0.0;
        for (std::size_t k = 0; k < n; ++k) sc += (1.0 - resp[k]) * values[k];

        m.w = rp / static_cast<double>(n);
        if (rp > 1e-12) {
            m.mu_p = sp / rp;
            double v = 0.0;
            for (std::size_t k = 0; k < n; ++k) v += resp[k] * (values[k] - m.mu_p) * (values[k] - m.mu_p);
            m.sigma_p = std::max(std::sqrt(v / rp), out.sigma_floor);
        }
        if (rc > 1e-12) {
            m.mu_c = sc / rc;
            double v = 0.0;
            for (std::size_t k = 0; k < n; ++k) v += (1.0 - resp[k]) * (values[k] - m.mu_c) * (values[k] - m.mu_c);
            m.sigma_c = std::max(std::sqrt(v / rc), out.sigma_floor);
        }
        if (!std::isfinite(m.mu_p) || !std::isfinite(m.mu_c) || !std::isfinite(m.sigma_p) || !std::isfinite(m.sigma_c))
            throw Error("EM diverged for " + name + " (non-finite parameter)");
    }
    return out;
}

inline MixtureParams fit_mixtures(const Dataset& d, unsigned threads = 1, const EmOptions& opt = {})
{
    validate_dataset(d);
    const std::size_t n_ind = d.n_individuals();
    MixtureParams params;
    params.features.resize(d.n_features());
    parallel_for(d.n_features(), threads, [&](std::size_t j) {
        std::vector<double> values;
        std::vector<Label> labels;
        values.reserve(n_ind);
        labels.reserve(n_ind);
        const auto col = static_cast<Eigen::Index>(j);
        for (std::size_t i = 0; i < n_ind; ++i) {
            const auto row = static_cast<Eigen::Index>(i);
            if (!d.observed(row, col)) continue;
            values.push_back(d.values(row, col));
            labels.push_back(d.labels[i]);
        }
        const std::string name = d.feature_names.empty() ? "feature " + std::to_string(j) : "feature '" + d.feature_names[j] + "'";
        params.features[j] = fit_feature_mixture(values, labels, opt, name).params;
    });
    return params;
}

inline LikelihoodTables build_tables(const Dataset& d, const MixtureParams& m)
{
    if (m.size() != d.n_features())
        throw Error("mixture parameters cover " + std::to_string(m.size()) + " features, dataset has " +
                    std::to_string(d.n_features()));
    const auto rows = d.values.rows();
    const auto cols = d.values.cols();
    LikelihoodTables t{Matrix::Zero(rows, cols), Matrix::Zero(rows, cols)};
    for (Eigen::Index j = 0; j < cols; ++j) {
        const auto& f = m.features[static_cast<std::size_t>(j)];
        if (!(f.sigma_c > 0.0) || !(f.sigma_p > 0.0)) throw Error("mixture sigma must be positive");
        for (Eigen::Index i = 0; i < rows; ++i) {
            if (!d.observed(i, j)) continue;
            const double x = d.values(i, j);
            t.log_p(i, j) = gaussian_log_density(x, f.mu_p, f.sigma_p);
            t.log_c(i, j) = gaussian_log_density(x, f.mu_c, f.sigma_c);
            if (!std::isfinite(t.log_p(i, j)) || !std::isfinite(t.log_c(i, j)))
                throw Error("non-finite log density at individual " + std::to_string(i) + ", feature " + std::to_string(j));
        }
    }
    return t;
}

} // namespace vebm
