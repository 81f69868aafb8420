#pragma once

// Classical event-based model: likelihood of a hard event sequence, greedy
// pairwise-swap ascent from random starts, and Metropolis sampling over
// permutations.

#include <cmath>
#include <utility>
#include <vector>

#include "vebm/core.hpp"

namespace vebm {

/// Stage-marginalised log-likelihood of hard sequences over fixed tables.
class HardLikelihood {
public:
    explicit HardLikelihood(const LikelihoodTables& t)
        : diff_(t.log_p - t.log_c), base_(t.log_c.sum()),
          log_stage_count_(std::log(static_cast<double>(t.n_events() + 1)))
    {
    }

    std::size_t n_events() const noexcept { return static_cast<std::size_t>(diff_.cols()); }

    double operator()(const EventSequence& s) { return (*this)(s.order()); }

    double operator()(const std::vector<int>& order)
    {
        const auto n = diff_.cols();
        if (static_cast<Eigen::Index>(order.size()) != n)
            throw Error("hard_seq_loglik: sequence has " + std::to_string(order.size()) + " events, tables have " +
                        std::to_string(n));
        const auto people = diff_.rows();
        prefix_.resize(people, n + 1);
        prefix_.col(0).setZero();
        for (Eigen::Index k = 0; k < n; ++k) prefix_.col(k + 1) = prefix_.col(k) + diff_.col(order[static_cast<std::size_t>(k)]);
        // Column-at-a-time reductions keep every step vectorised over individuals.
        mx_ = prefix_.col(0);
        for (Eigen::Index k = 1; k <= n; ++k) mx_ = mx_.cwiseMax(prefix_.col(k));
        prefix_.colwise() -= mx_;
        prefix_ = exp_clamped(prefix_);
        sum_ = prefix_.col(0);
        for (Eigen::Index k = 1; k <= n; ++k) sum_ += prefix_.col(k);
        return base_ + (mx_.array() + sum_.array().log()).sum() - static_cast<double>(people) * log_stage_count_;
    }

private:
    Matrix diff_;
    double base_;
    double log_stage_count_;
    Matrix prefix_;
    Vector mx_, sum_;
};

inline double hard_seq_loglik(const LikelihoodTables& t, const EventSequence& s)
{
    HardLikelihood lik(t);
    return lik(s);
}

namespace detail {

inline std::pair<std::size_t, std::size_t> random_position_pair(std::size_t n, Rng& rng)
{
    const std::size_t a = rng.below(n);
    std::size_t b = rng.below(n - 1);
    if (b >= a) ++b;
    return {a, b};
}

} // namespace detail

struct GreedyResult {
    EventSequence best;
    double log_lik = 0.0;
    std::vector<std::vector<double>> accepted; // per start: log-likelihood after each accepted swap, start first
};

/// Hill climbing by random two-position swaps, accepted only when they
/// improve the likelihood, from `n_starts` uniformly random permutations.
inline GreedyResult ebm_greedy_run(const LikelihoodTables& t, int n_iter, int n_starts, Rng& rng)
{
    if (n_iter < 0 || n_starts < 1) throw Error("ebm_greedy: need n_iter >= 0 and at least one start");
    HardLikelihood lik(t);
    const std::size_t n = lik.n_events();
    GreedyResult out;
    out.log_lik = -INFINITY;
    for (int start = 0; start < n_starts; ++start) {
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order.begin(), order.end());
        double current = lik(order);
        auto& trace = out.accepted.emplace_back(1, current);
        for (int it = 0; it < n_iter && n > 1; ++it) {
            const auto [a, b] = detail::random_position_pair(n, rng);
            std::swap(order[a], order[b]);
            const double proposed = lik(order);
            if (proposed > current) {
                current = proposed;
                trace.push_back(current);
            } else {
                std::swap(order[a], order[b]);
            }
        }
        if (current > out.log_lik) {
            out.log_lik = current;
            out.best = EventSequence(order);
        }
    }
    return out;
}

inline EventSequence ebm_greedy(const LikelihoodTables& t, int n_iter, int n_starts, std::uint64_t seed)
{
    Rng rng(seed);
    return ebm_greedy_run(t, n_iter, n_starts, rng).best;
}

struct McmcTrace {
    std::vector<EventSequence> samples;
    std::vector<double> log_liks;
    double acceptance_rate = 0.0;
    EventSequence map;
    double map_log_lik = -INFINITY;
    std::size_t proposals = 0;
    std::size_t accepted = 0;
};

/// Metropolis chain over permutations with uniform two-position swap
/// proposals. Every `thin`-th state is stored; the MAP is tracked over all
/// states. No burn-in.
inline McmcTrace ebm_mcmc(const LikelihoodTables& t, const EventSequence& init, std::size_t n_samples, Rng& rng,
                          std::size_t thin = 1)
{
    if (n_samples < 1) throw Error("ebm_mcmc: need at least one sample");
    if (thin < 1) throw Error("ebm_mcmc: thin must be at least 1");
    HardLikelihood lik(t);
    const std::size_t n = lik.n_events();
    if (init.size() != n) throw Error("ebm_mcmc: initial sequence does not match tables");

    McmcTrace trace;
    trace.samples.reserve(n_samples / thin + 1);
    trace.log_liks.reserve(n_samples / thin + 1);
    std::vector<int> order = init.order();
    double current = lik(order);
    trace.map = init;
    trace.map_log_lik = current;

    for (std::size_t s = 0; s < n_samples; ++s) {
        ++trace.proposals;
        if (n > 1) {
            const auto [a, b] = detail::random_position_pair(n, rng);
            std::swap(order[a], order[b]);
            const double proposed = lik(order);
            const double delta = proposed - current;
            if (delta >= 0.0 || std::log(rng.uniform()) < delta) {
                current = proposed;
                ++trace.accepted;
                if (current > trace.map_log_lik) {
                    trace.map_log_lik = current;
                    trace.map = EventSequence(order);
                }
            } else {
                std::swap(order[a], order[b]);
            }
        } else {
            ++trace.accepted;
        }
        if ((s + 1) % thin == 0) {
            trace.samples.emplace_back(order);
            trace.log_liks.push_back(current);
        }
    }
    trace.acceptance_rate = static_cast<double>(trace.accepted) / static_cast<double>(trace.proposals);
    return trace;
}

inline McmcTrace ebm_mcmc(const LikelihoodTables& t, const EventSequence& init, std::size_t n_samples, std::uint64_t seed,
                          std::size_t thin = 1)
{
    Rng rng(seed);
    return ebm_mcmc(t, init, n_samples, rng, thin);
}

} // namespace vebm
