#pragma once

// The variational event-based model: the stage-marginalised likelihood of a
// soft permutation, the ELBO with its exact reverse-mode gradient, the Adam
// fitting loop, staging, and Gumbel posterior sampling.

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vebm/adam.hpp"
#include "vebm/core.hpp"
#include "vebm/mixture.hpp"
#include "vebm/parallel.hpp"
#include "vebm/transport.hpp"

namespace vebm {

struct FittedModel {
    Matrix x_scores;
    SoftPermutation soft_perm;
    EventSequence sequence;
    MixtureParams mixtures;
    std::vector<double> elbo_trace;
    ModelConfig config;
    std::vector<std::string> feature_names;
};

/// Stage-marginalised log-likelihood of a soft permutation and its gradient.
///
/// S enters by mixing likelihoods, not log-likelihoods: the log-likelihood of
/// individual i at position n is
///     Lambda(i, n) = log sum_j S(n, j) exp(table(i, j)),
/// which reduces to a column permutation of the table at a vertex of the
/// Birkhoff polytope. Each row of the tables is shifted by its maximum before
/// exponentiation, and entries whose mixture still underflows are evaluated
/// exactly by log-sum-exp over log S.
class StageLikelihood {
public:
    explicit StageLikelihood(const LikelihoodTables& t)
    {
        if (t.log_p.rows() != t.log_c.rows() || t.log_p.cols() != t.log_c.cols())
            throw Error("likelihood tables differ in shape");
        if (!t.log_p.allFinite() || !t.log_c.allFinite()) throw Error("likelihood tables contain non-finite entries");
        shift_ = t.log_p.rowwise().maxCoeff().cwiseMax(t.log_c.rowwise().maxCoeff());
        log_p_t_ = (t.log_p.colwise() - shift_).transpose();
        log_c_t_ = (t.log_c.colwise() - shift_).transpose();
        p_t_ = exp_clamped(log_p_t_);
        c_t_ = exp_clamped(log_c_t_);
        log_stage_count_ = std::log(static_cast<double>(t.n_events() + 1));
    }

    std::size_t n_events() const noexcept { return static_cast<std::size_t>(p_t_.rows()); }
    std::size_t n_individuals() const noexcept { return static_cast<std::size_t>(p_t_.cols()); }

    double value(const Matrix& s, const Matrix& log_s) { return evaluate(s, log_s, nullptr); }

    /// Fills `grad_log_s` with the gradient with respect to log S.
    double value_and_grad(const Matrix& s, const Matrix& log_s, Matrix& grad_log_s)
    {
        return evaluate(s, log_s, &grad_log_s);
    }

    /// Lambda^p and Lambda^c as I x N matrices.
    std::pair<Matrix, Matrix> permuted(const Matrix& s, const Matrix& log_s)
    {
        mix(s, log_s);
        Matrix lp = lam_p_.transpose();
        Matrix lc = lam_c_.transpose();
        lp.colwise() += shift_;
        lc.colwise() += shift_;
        return {std::move(lp), std::move(lc)};
    }

private:
    static constexpr double kUnderflow = 1e-280;

    struct Exact {
        Eigen::Index n, i;
        bool patient;
    };

    void mix(const Matrix& s, const Matrix& log_s)
    {
        const auto n = p_t_.rows();
        if (s.rows() != n || s.cols() != n || log_s.rows() != n || log_s.cols() != n)
            throw Error("stage likelihood: permutation size does not match tables");
        mix_p_.noalias() = s * p_t_;
        mix_c_.noalias() = s * c_t_;
        exact_.clear();
        lam_p_ = take_log(mix_p_, log_p_t_, log_s, true);
        lam_c_ = take_log(mix_c_, log_c_t_, log_s, false);
    }

    Matrix take_log(const Matrix& mixed, const Matrix& log_table_t, const Matrix& log_s, bool patient)
    {
        Matrix out = mixed.array().max(kUnderflow).log().matrix();
        if (mixed.minCoeff() > kUnderflow) return out;
        for (Eigen::Index i = 0; i < mixed.cols(); ++i)
            for (Eigen::Index k = 0; k < mixed.rows(); ++k) {
                if (mixed(k, i) > kUnderflow) continue;
                const Vector terms = log_s.row(k).transpose() + log_table_t.col(i);
                out(k, i) = log_sum_exp(std::span<const double>(terms.data(), static_cast<std::size_t>(terms.size())));
                exact_.push_back({k, i, patient});
            }
        return out;
    }

    double evaluate(const Matrix& s, const Matrix& log_s, Matrix* grad_log_s)
    {
        mix(s, log_s);
        const auto n = p_t_.rows();
        const auto people = p_t_.cols();

        prefix_.resize(n + 1, people);
        for (Eigen::Index i = 0; i < people; ++i) {
            double acc = lam_c_.col(i).sum();
            prefix_(0, i) = acc;
            for (Eigen::Index k = 0; k < n; ++k) {
                acc += lam_p_(k, i) - lam_c_(k, i);
                prefix_(k + 1, i) = acc;
            }
        }
        const Eigen::RowVectorXd mx = prefix_.colwise().maxCoeff();
        prefix_ = exp_clamped(prefix_.rowwise() - mx);
        const Eigen::RowVectorXd total = prefix_.colwise().sum();
        const double ll = (mx.array() + total.array().log()).sum() + static_cast<double>(n) * shift_.sum() -
                          static_cast<double>(people) * log_stage_count_;
        if (!std::isfinite(ll)) throw Error("data log-likelihood is not finite");
        if (!grad_log_s) return ll;

        // Position n is abnormal for individual i with probability
        // P(stage > n), and normal with probability P(stage <= n).
        prefix_.array().rowwise() /= total.array();
        weight_p_.resize(n, people);
        weight_c_.resize(n, people);
        for (Eigen::Index i = 0; i < people; ++i) {
            double tail = 0.0;
            for (Eigen::Index k = n; k >= 1; --k) weight_p_(k - 1, i) = tail += prefix_(k, i);
            double head = 0.0;
            for (Eigen::Index k = 0; k < n; ++k) weight_c_(k, i) = head += prefix_(k, i);
        }
        // d Lambda(i, n) / d S(n, j) = table-likelihood(i, j) / mixture(i, n).
        ratio_p_ = weight_p_.cwiseQuotient(mix_p_);
        ratio_c_ = weight_c_.cwiseQuotient(mix_c_);
        for (const auto& e : exact_) (e.patient ? ratio_p_ : ratio_c_)(e.n, e.i) = 0.0;
        grad_s_.noalias() = ratio_p_ * p_t_.transpose();
        grad_s_.noalias() += ratio_c_ * c_t_.transpose();
        *grad_log_s = grad_s_.cwiseProduct(s);
        for (const auto& e : exact_) {
            const Matrix& log_t = e.patient ? log_p_t_ : log_c_t_;
            const double w = (e.patient ? weight_p_ : weight_c_)(e.n, e.i);
            const double lam = (e.patient ? lam_p_ : lam_c_)(e.n, e.i);
            for (Eigen::Index j = 0; j < log_s.cols(); ++j)
                (*grad_log_s)(e.n, j) += w * std::exp(log_s(e.n, j) + log_t(j, e.i) - lam);
        }
        return ll;
    }

    Vector shift_;
    Matrix log_p_t_, log_c_t_; // shifted log tables, N x I
    Matrix p_t_, c_t_;         // their exponentials
    double log_stage_count_ = 0.0;
    Matrix mix_p_, mix_c_, lam_p_, lam_c_, prefix_, weight_p_, weight_c_, ratio_p_, ratio_c_, grad_s_;
    std::vector<Exact> exact_;
};

inline void check_permutation_size(const LikelihoodTables& t, const SoftPermutation& s, const char* what)
{
    if (t.n_events() != s.size())
        throw Error(std::string(what) + ": tables have " + std::to_string(t.n_events()) + " events, permutation has " +
                    std::to_string(s.size()));
}

/// Position-indexed log-likelihoods (Lambda^p, Lambda^c), each I x N: column
/// n is log sum_j S(n, j) exp(table(:, j)).
inline std::pair<Matrix, Matrix> permuted_tables(const LikelihoodTables& t, const SoftPermutation& s)
{
    check_permutation_size(t, s, "permuted_tables");
    StageLikelihood lik(t);
    return lik.permuted(s.matrix(), s.matrix().array().log().matrix());
}

/// sum_i log[ 1/(N+1) sum_k exp( sum_{n<k} Lambda^p(i, n) + sum_{n>=k} Lambda^c(i, n) ) ]
inline double data_loglik(const LikelihoodTables& t, const SoftPermutation& s)
{
    check_permutation_size(t, s, "data_loglik");
    StageLikelihood lik(t);
    return lik.value(s.matrix(), s.matrix().array().log().matrix());
}

/// ELBO as a function of the score matrix x, with cached workspaces so the
/// fitting loop allocates nothing per step.
class ElboObjective {
public:
    ElboObjective(const LikelihoodTables& t, const ModelConfig& cfg) : lik_(t), cfg_(cfg)
    {
        cfg_.validate();
        if (t.n_events() < 1) throw Error("model needs at least one event");
    }

    double value(const Matrix& x, const Matrix* noise = nullptr) { return run(x, noise, nullptr); }

    double value_and_grad(const Matrix& x, const Matrix* noise, Matrix& grad) { return run(x, noise, &grad); }

    /// S from the most recent evaluation.
    const Matrix& soft_perm() const { return sinkhorn_.result(); }

    double last_data_loglik() const noexcept { return last_ll_; }
    double last_kl() const noexcept { return last_kl_; }

private:
    double run(const Matrix& x, const Matrix* noise, Matrix* grad)
    {
        const auto n = static_cast<Eigen::Index>(lik_.n_events());
        if (x.rows() != n || x.cols() != n) throw Error("elbo: score matrix size does not match tables");
        if (noise) {
            if (noise->rows() != n || noise->cols() != n) throw Error("elbo: noise matrix size does not match");
            log_alpha_ = (x + *noise) / cfg_.tau;
        } else {
            log_alpha_ = x / cfg_.tau;
        }
        const Matrix& s = sinkhorn_.forward(log_alpha_, cfg_.n_s);
        last_kl_ = kl_gumbel_sinkhorn(x, cfg_.tau, cfg_.tau_prior);
        if (!grad) {
            last_ll_ = lik_.value(s, sinkhorn_.log_result());
            return last_ll_ - last_kl_;
        }
        last_ll_ = lik_.value_and_grad(s, sinkhorn_.log_result(), grad_log_s_);
        *grad = sinkhorn_.backward_log(grad_log_s_) / cfg_.tau - kl_gumbel_sinkhorn_grad(x, cfg_.tau, cfg_.tau_prior);
        if (!grad->allFinite()) throw Error("elbo gradient is not finite");
        return last_ll_ - last_kl_;
    }

    StageLikelihood lik_;
    ModelConfig cfg_;
    SinkhornOperator sinkhorn_;
    Matrix log_alpha_, grad_log_s_;
    double last_ll_ = 0.0;
    double last_kl_ = 0.0;
};

inline double elbo(const Matrix& x, const LikelihoodTables& t, const ModelConfig& cfg,
                   const std::optional<Matrix>& noise = std::nullopt)
{
    ElboObjective obj(t, cfg);
    return obj.value(x, noise ? &*noise : nullptr);
}

inline Matrix elbo_grad(const Matrix& x, const LikelihoodTables& t, const ModelConfig& cfg,
                        const std::optional<Matrix>& noise = std::nullopt)
{
    ElboObjective obj(t, cfg);
    Matrix g;
    obj.value_and_grad(x, noise ? &*noise : nullptr, g);
    return g;
}

/// Starting scores. `Frequency` ranks events by how often the patient
/// density beats the control density and peaks each event's row of scores
/// at that rank: x(n, j) = -(n - rank_j)^2 / N.
inline Matrix initial_scores(const LikelihoodTables& t, ScoreInit init)
{
    const auto n = static_cast<Eigen::Index>(t.n_events());
    if (init == ScoreInit::Zero) return Matrix::Zero(n, n);
    std::vector<double> abnormal(static_cast<std::size_t>(n), 0.0);
    for (Eigen::Index j = 0; j < n; ++j)
        abnormal[static_cast<std::size_t>(j)] = static_cast<double>((t.log_p.col(j).array() > t.log_c.col(j).array()).count());
    std::vector<int> by_frequency(static_cast<std::size_t>(n));
    std::iota(by_frequency.begin(), by_frequency.end(), 0);
    std::ranges::stable_sort(by_frequency, [&](int a, int b) {
        return abnormal[static_cast<std::size_t>(a)] > abnormal[static_cast<std::size_t>(b)];
    });
    Matrix x(n, n);
    for (Eigen::Index rank = 0; rank < n; ++rank) {
        const int event = by_frequency[static_cast<std::size_t>(rank)];
        for (Eigen::Index p = 0; p < n; ++p) {
            const double d = static_cast<double>(p - rank);
            x(p, event) = -d * d / static_cast<double>(n);
        }
    }
    return x;
}

/// The optimisation loop on precomputed tables. Mixtures and feature names
/// are left empty for the caller to fill in.
inline FittedModel fit_tables(const LikelihoodTables& t, const ModelConfig& cfg)
{
    cfg.validate();
    ElboObjective objective(t, cfg);
    const auto n = static_cast<Eigen::Index>(t.n_events());

    FittedModel fm;
    fm.config = cfg;
    fm.x_scores = initial_scores(t, cfg.init);
    fm.elbo_trace.reserve(static_cast<std::size_t>(cfg.n_opt));

    Adam adam(n, n, AdamParameters{cfg.learning_rate});
    Rng rng(cfg.seed);
    Matrix grad, noise;
    for (int step = 0; step < cfg.n_opt; ++step) {
        const Matrix* eps = nullptr;
        if (cfg.use_gumbel_noise) {
            noise = gumbel_noise(static_cast<std::size_t>(n), rng);
            eps = &noise;
        }
        fm.elbo_trace.push_back(objective.value_and_grad(fm.x_scores, eps, grad));
        adam.ascend(fm.x_scores, grad);
    }

    fm.soft_perm = sinkhorn(fm.x_scores, cfg.tau, cfg.n_s);
    fm.sequence = soft_to_sequence(fm.soft_perm, cfg.decoder);
    return fm;
}

inline FittedModel fit(const Dataset& d, const ModelConfig& cfg, unsigned threads = 1)
{
    cfg.validate();
    validate_dataset(d);
    MixtureParams mixtures = fit_mixtures(d, threads);
    const LikelihoodTables t = build_tables(d, mixtures);
    FittedModel fm = fit_tables(t, cfg);
    fm.mixtures = std::move(mixtures);
    fm.feature_names = d.feature_names;
    return fm;
}

/// Stage posteriors under a hard sequence, directly from tables.
inline std::vector<StagePosterior> stage_tables(const LikelihoodTables& t, const EventSequence& seq, unsigned threads = 1)
{
    if (seq.size() != t.n_events())
        throw Error("staging: sequence has " + std::to_string(seq.size()) + " events, tables have " +
                    std::to_string(t.n_events()));
    const std::size_t n = seq.size();
    std::vector<StagePosterior> out(t.n_individuals());
    parallel_for(t.n_individuals(), threads, [&](std::size_t i) {
        const auto row = static_cast<Eigen::Index>(i);
        std::vector<double> logw(n + 1);
        double acc = 0.0;
        logw[0] = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            const auto e = static_cast<Eigen::Index>(seq[k]);
            acc += t.log_p(row, e) - t.log_c(row, e);
            logw[k + 1] = acc;
        }
        const double z = log_sum_exp(logw);
        auto& post = out[i];
        post.probabilities.resize(n + 1);
        double total = 0.0;
        for (std::size_t k = 0; k <= n; ++k) total += post.probabilities[k] = std::exp(logw[k] - z);
        for (auto& p : post.probabilities) p /= total;
        post.ml_stage = static_cast<int>(std::ranges::max_element(logw) - logw.begin());
    });
    return out;
}

inline void check_features_match(const FittedModel& fm, const Dataset& d)
{
    if (d.n_features() != fm.mixtures.size())
        throw Error("feature mismatch: model has " + std::to_string(fm.mixtures.size()) + " features, data has " +
                    std::to_string(d.n_features()));
    if (fm.feature_names.empty() || d.feature_names.empty()) return;
    std::string offenders;
    for (std::size_t j = 0; j < d.n_features(); ++j)
        if (fm.feature_names[j] != d.feature_names[j])
            offenders += (offenders.empty() ? "" : ", ") + d.feature_names[j] + " (model: " + fm.feature_names[j] + ")";
    if (!offenders.empty()) throw Error("feature mismatch: " + offenders);
}

inline std::vector<StagePosterior> stage(const FittedModel& fm, const Dataset& d, unsigned threads = 1)
{
    validate_dataset(d, false);
    check_features_match(fm, d);
    return stage_tables(build_tables(d, fm.mixtures), fm.sequence, threads);
}

/// Fraction of Gumbel-Sinkhorn posterior samples that put each event at each
/// position: F(event, position), rows summing to one.
inline Matrix sample_positional_variance(const Matrix& x_scores, const ModelConfig& cfg, int n_samples, Rng& rng)
{
    if (n_samples < 1) throw Error("positional variance needs at least one sample");
    cfg.validate();
    const auto n = x_scores.rows();
    Matrix counts = Matrix::Zero(n, n);
    SinkhornOperator op;
    Matrix log_alpha;
    for (int k = 0; k < n_samples; ++k) {
        log_alpha = (x_scores + gumbel_noise(static_cast<std::size_t>(n), rng)) / cfg.tau;
        const EventSequence seq = hungarian(op.forward(log_alpha, cfg.n_s));
        for (Eigen::Index p = 0; p < n; ++p) counts(seq[static_cast<std::size_t>(p)], p) += 1.0;
    }
    return counts / static_cast<double>(n_samples);
}

inline Matrix sample_positional_variance(const FittedModel& fm, const ModelConfig& cfg, int n_samples, std::uint64_t seed)
{
    Rng rng(seed);
    return sample_positional_variance(fm.x_scores, cfg, n_samples, rng);
}

} // namespace vebm
