#pragma once

// Sequence agreement metrics, positional variance tables, and the
// timing/accuracy benchmark over synthetic data.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "vebm/baseline.hpp"
#include "vebm/core.hpp"
#include "vebm/mixture.hpp"
#include "vebm/model.hpp"
#include "vebm/synth.hpp"

namespace vebm {

/// Kendall's tau-a between the event orders of two sequences.
inline double kendalls_tau(const EventSequence& a, const EventSequence& b)
{
    if (a.size() != b.size()) throw Error("kendalls_tau: sequences differ in length");
    const std::size_t n = a.size();
    if (n < 2) throw Error("kendalls_tau: need at least two events");
    const auto pa = a.positions();
    const auto pb = b.positions();
    long long score = 0;
    for (std::size_t e = 0; e < n; ++e)
        for (std::size_t f = e + 1; f < n; ++f) {
            const bool before_a = pa[e] < pa[f];
            const bool before_b = pb[e] < pb[f];
            score += before_a == before_b ? 1 : -1;
        }
    return static_cast<double>(score) / (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
}

inline double fraction_correct(const EventSequence& a, const EventSequence& b)
{
    if (a.size() != b.size()) throw Error("fraction_correct: sequences differ in length");
    if (a.size() == 0) return 1.0;
    std::size_t same = 0;
    for (std::size_t p = 0; p < a.size(); ++p) same += a[p] == b[p];
    return static_cast<double>(same) / static_cast<double>(a.size());
}

struct DiagramCell {
    int row = 0;      // rank of the event in the inferred order
    int event = 0;
    int position = 0;
    double frequency = 0.0;
    bool truth = false; // the true sequence puts `event` at `position`
};

/// Flattens F(event, position) into rows ordered by the most likely joint
/// assignment of events to positions.
inline std::vector<DiagramCell> positional_variance_diagram(const Matrix& f, const std::optional<EventSequence>& truth = std::nullopt)
{
    if (f.rows() != f.cols()) throw Error("positional variance matrix must be square");
    const auto n = f.rows();
    if (n > 0 && (f.rowwise().sum().array() - 1.0).abs().maxCoeff() > 1e-9)
        throw Error("positional variance matrix rows must sum to one");
    if (truth && truth->size() != static_cast<std::size_t>(n)) throw Error("truth sequence does not match the matrix");

    const EventSequence inferred = hungarian(f.transpose());
    const std::vector<int> true_pos = truth ? truth->positions() : std::vector<int>{};
    std::vector<DiagramCell> cells;
    cells.reserve(static_cast<std::size_t>(n * n));
    for (Eigen::Index r = 0; r < n; ++r) {
        const int e = inferred[static_cast<std::size_t>(r)];
        for (Eigen::Index q = 0; q < n; ++q)
            cells.push_back({static_cast<int>(r), e, static_cast<int>(q), f(e, q),
                             truth && true_pos[static_cast<std::size_t>(e)] == q});
    }
    return cells;
}

inline double max_off_diagonal(const std::vector<DiagramCell>& cells)
{
    double worst = 0.0;
    for (const auto& c : cells)
        if (c.row != c.position) worst = std::max(worst, c.frequency);
    return worst;
}

inline void write_diagram_csv(std::ostream& os, const std::vector<DiagramCell>& cells,
                              const std::vector<std::string>& feature_names = {})
{
    os << "row,event,feature,position,frequency,truth\n";
    for (const auto& c : cells) {
        os << c.row << ',' << c.event << ','
           << (feature_names.empty() ? std::to_string(c.event) : feature_names[static_cast<std::size_t>(c.event)]) << ','
           << c.position << ',' << c.frequency << ',' << (c.truth ? 1 : 0) << '\n';
    }
}

inline const std::vector<std::string>& benchmark_solvers()
{
    static const std::vector<std::string> names{"vebm", "ebm", "ebm-greedy"};
    return names;
}

struct BenchmarkOptions {
    std::vector<std::string> solvers{"vebm", "ebm"};
    std::vector<std::pair<std::size_t, std::size_t>> sizes{{100, 10}};
    int repeats = 1;
    double sigma = 0.1;
    std::uint64_t seed = 0;
    ModelConfig vebm;
    int greedy_iterations = 1000;
    int greedy_starts = 10;
    std::size_t mcmc_samples = 1'000'000;
    bool end_to_end = false; // include mixture fitting in wall time
};

struct BenchmarkRow {
    std::string solver;
    std::size_t individuals = 0;
    std::size_t features = 0;
    double sigma = 0.0;
    std::uint64_t seed = 0;
    double wall_ms = 0.0;
    double tau = std::numeric_limits<double>::quiet_NaN();
    double frac_correct = std::numeric_limits<double>::quiet_NaN();
    std::string error;
};

namespace detail {

inline double elapsed_ms(std::chrono::steady_clock::time_point since)
{
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

} // namespace detail

/// Runs one solver on one dataset. Wall time covers inference on fixed
/// tables unless `end_to_end` is set.
inline BenchmarkRow run_solver(const std::string& solver, const SynthData& data, const SynthSpec& spec,
                               const BenchmarkOptions& opt)
{
    BenchmarkRow row{solver, spec.n_individuals, spec.n_features, spec.sigma, spec.seed};
    try {
        if (std::ranges::find(benchmark_solvers(), solver) == benchmark_solvers().end())
            throw Error("unknown solver '" + solver + "'");
        auto start = std::chrono::steady_clock::now();
        const MixtureParams mixtures = fit_mixtures(data.dataset, 1);
        const LikelihoodTables tables = build_tables(data.dataset, mixtures);
        if (!opt.end_to_end) start = std::chrono::steady_clock::now();

        EventSequence found;
        if (solver == "vebm") {
            ModelConfig cfg = opt.vebm;
            cfg.seed = spec.seed;
            found = fit_tables(tables, cfg).sequence;
        } else {
            Rng rng(spec.seed);
            auto greedy = ebm_greedy_run(tables, opt.greedy_iterations, opt.greedy_starts, rng);
            found = greedy.best;
            if (solver == "ebm") {
                auto chain = ebm_mcmc(tables, greedy.best, opt.mcmc_samples, rng, opt.mcmc_samples);
                if (chain.map_log_lik > greedy.log_lik) found = chain.map;
            }
        }
        row.wall_ms = detail::elapsed_ms(start);
        if (found.size() >= 2) row.tau = kendalls_tau(data.truth, found);
        row.frac_correct = fraction_correct(data.truth, found);
    } catch (const std::exception& e) {
        row.error = e.what();
    }
    return row;
}

inline std::vector<BenchmarkRow> benchmark(const BenchmarkOptions& opt)
{
    if (opt.repeats < 1) throw Error("benchmark: repeats must be at least 1");
    for (const auto& s : opt.solvers)
        if (std::ranges::find(benchmark_solvers(), s) == benchmark_solvers().end()) {
            std::string known;
            for (const auto& k : benchmark_solvers()) known += (known.empty() ? "" : ", ") + k;
            throw Error("unknown solver '" + s + "' (known solvers: " + known + ")");
        }
    std::vector<BenchmarkRow> rows;
    for (const auto& [people, events] : opt.sizes) {
        for (int r = 0; r < opt.repeats; ++r) {
            SynthSpec spec;
            spec.n_individuals = people;
            spec.n_features = events;
            spec.sigma = opt.sigma;
            spec.seed = opt.seed + static_cast<std::uint64_t>(r);
            const SynthData data = generate(spec);
            for (const auto& solver : opt.solvers) rows.push_back(run_solver(solver, data, spec, opt));
        }
    }
    return rows;
}

inline double median(std::vector<double> v)
{
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::ranges::sort(v);
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

struct BenchmarkSummary {
    std::string solver;
    std::size_t individuals = 0;
    std::size_t features = 0;
    double median_wall_ms = 0.0;
    double median_tau = 0.0;
    int failures = 0;
};

inline std::vector<BenchmarkSummary> summarise(const std::vector<BenchmarkRow>& rows)
{
    std::vector<BenchmarkSummary> out;
    std::set<std::tuple<std::string, std::size_t, std::size_t>> keys;
    for (const auto& r : rows) {
        const auto key = std::make_tuple(r.solver, r.individuals, r.features);
        if (!keys.insert(key).second) continue;
        std::vector<double> walls, taus;
        int failures = 0;
        for (const auto& q : rows) {
            if (std::make_tuple(q.solver, q.individuals, q.features) != key) continue;
            if (!q.error.empty()) {
                ++failures;
                continue;
            }
            walls.push_back(q.wall_ms);
            if (!std::isnan(q.tau)) taus.push_back(q.tau);
        }
        out.push_back({r.solver, r.individuals, r.features, median(walls), median(taus), failures});
    }
    return out;
}

inline void write_benchmark_csv(std::ostream& os, const std::vector<BenchmarkRow>& rows)
{
    os << "solver,I,J,sigma,seed,wall_ms,tau,frac_correct\n";
    for (const auto& r : rows)
        os << r.solver << ',' << r.individuals << ',' << r.features << ',' << r.sigma << ',' << r.seed << ','
           << r.wall_ms << ',' << r.tau << ',' << r.frac_correct << '\n';
}

} // namespace vebm
