// Acceptance checks. Usage: vebm_acceptance <1..7|all>
// Prints one "criterion N: PASS|FAIL ..." line per criterion and exits
// non-zero if any selected criterion fails.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "support.hpp"

using namespace vebm;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

LikelihoodTables tables_for(const SynthData& d)
{
    return build_tables(d.dataset, fit_mixtures(d.dataset));
}

SynthData make_data(std::size_t people, std::size_t events, double sigma, std::uint64_t seed)
{
    SynthSpec spec;
    spec.n_individuals = people;
    spec.n_features = events;
    spec.sigma = sigma;
    spec.seed = seed;
    return generate(spec);
}

// Median Kendall tau over seeds 0..n_seeds-1.
double median_tau(std::size_t people, std::size_t events, double sigma, const ModelConfig& base, int n_seeds,
                  std::ostream& log)
{
    std::vector<double> taus;
    for (int s = 0; s < n_seeds; ++s) {
        const auto seed = static_cast<std::uint64_t>(s);
        const auto data = make_data(people, events, sigma, seed);
        ModelConfig cfg = base;
        cfg.seed = seed;
        const auto fm = fit_tables(tables_for(data), cfg);
        taus.push_back(kendalls_tau(data.truth, fm.sequence));
        log << "    " << people << "x" << events << " sigma " << sigma << " seed " << s << " tau " << taus.back() << '\n';
    }
    return median(taus);
}

std::string fmt(double v, int digits = 3)
{
    std::ostringstream os;
    os.precision(digits);
    os << std::fixed << v;
    return os.str();
}

Outcome sequence_recovery()
{
    ModelConfig cfg;
    cfg.tau = 1.0;
    cfg.tau_prior = 1.0;
    cfg.learning_rate = 0.1;
    cfg.n_s = 100;
    cfg.n_opt = 100;
    const auto t0 = Clock::now();
    struct Case {
        std::size_t people, events;
        double threshold;
    };
    Outcome out{true, ""};
    for (const Case c : {Case{100, 10, 0.95}, Case{1000, 100, 0.70}, Case{2000, 200, 0.85}}) {
        const double m = median_tau(c.people, c.events, 0.5, cfg, 10, std::cerr);
        out.pass = out.pass && m >= c.threshold;
        out.detail += std::to_string(c.people) + "x" + std::to_string(c.events) + " median tau " + fmt(m) +
                      " (need >= " + fmt(c.threshold, 2) + "); ";
    }
    const double secs = seconds_since(t0);
    out.pass = out.pass && secs < 20 * 60;
    out.detail += "total " + fmt(secs, 1) + " s (budget 1200 s)";
    return out;
}

Outcome noise_robustness()
{
    const ModelConfig cfg;
    Outcome out{true, ""};
    for (const auto& [people, events] : {std::pair<std::size_t, std::size_t>{100, 10}, {1000, 100}, {2000, 200}}) {
        const double low = median_tau(people, events, 0.1, cfg, 10, std::cerr);
        const double high = median_tau(people, events, 1.0, cfg, 10, std::cerr);
        bool ok = low > high;
        if (people == 2000) ok = ok && low >= 0.95;
        out.pass = out.pass && ok;
        out.detail += std::to_string(people) + "x" + std::to_string(events) + " sigma 0.1 " + fmt(low) + " vs sigma 1.0 " +
                      fmt(high) + "; ";
    }
    return out;
}

Outcome hyperparameter_sensitivity()
{
    ModelConfig broad_prior;
    broad_prior.tau = 0.1;
    broad_prior.tau_prior = 10.0;
    broad_prior.n_s = 10;
    broad_prior.n_opt = 100;
    ModelConfig matched = broad_prior;
    matched.tau_prior = 0.1;
    const auto data = make_data(2000, 200, 0.5, 0);
    const auto tables = tables_for(data);
    const double bad = kendalls_tau(data.truth, fit_tables(tables, broad_prior).sequence);
    const double good = kendalls_tau(data.truth, fit_tables(tables, matched).sequence);
    return {bad < 0.3 && good >= 0.4,
            "tau 0.1 / prior 10 gives " + fmt(bad) + " (need < 0.3); tau 0.1 / prior 0.1 gives " + fmt(good) +
                " (need >= 0.4)"};
}

Outcome speed()
{
    const auto data = make_data(2000, 200, 0.5, 0);
    const auto tables = tables_for(data);

    ModelConfig cfg;
    cfg.n_s = 100;
    cfg.n_opt = 100;
    auto t0 = Clock::now();
    const auto fm = fit_tables(tables, cfg);
    const double vebm_s = seconds_since(t0);
    std::cerr << "    vebm inference " << vebm_s << " s, tau " << kendalls_tau(data.truth, fm.sequence) << '\n';

    Rng rng(0);
    t0 = Clock::now();
    const auto greedy = ebm_greedy_run(tables, 1000, 10, rng);
    const double greedy_s = seconds_since(t0);
    t0 = Clock::now();
    ebm_mcmc(tables, greedy.best, 10'000, rng, 10'000);
    const double probe_s = seconds_since(t0);
    const double projected = greedy_s + probe_s * 100.0;
    std::cerr << "    greedy " << greedy_s << " s; 1e4 MCMC probe " << probe_s << " s; projected full baseline "
              << projected << " s\n";

    double baseline_s = 0.0;
    std::string how;
    t0 = Clock::now();
    if (projected <= 2 * 3600.0) {
        ebm_mcmc(tables, greedy.best, 1'000'000, rng, 1'000'000);
        baseline_s = greedy_s + seconds_since(t0);
        how = "full baseline";
    } else {
        ebm_mcmc(tables, greedy.best, 100'000, rng, 100'000);
        baseline_s = greedy_s + 10.0 * seconds_since(t0);
        how = "baseline with 1e5 MCMC samples, MCMC time scaled by 10";
    }
    const double ratio = baseline_s / vebm_s;
    return {ratio >= 100.0, "vebm " + fmt(vebm_s, 2) + " s, " + how + " " + fmt(baseline_s, 1) + " s, speed-up " +
                                fmt(ratio, 1) + "x (need >= 100x)"};
}

std::vector<int> brute_force_assignment(const Matrix& a)
{
    std::vector<int> best;
    double best_value = -INFINITY;
    test::for_each_permutation(static_cast<std::size_t>(a.rows()), [&](const std::vector<int>& p) {
        double v = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) v += a(static_cast<Eigen::Index>(i), p[i]);
        if (v > best_value) {
            best_value = v;
            best = p;
        }
    });
    return best;
}

Outcome oracle_equivalences()
{
    const auto t0 = Clock::now();
    Rng rng(2024);
    int hungarian_bad = 0;
    for (int k = 0; k < 200; ++k) {
        const auto n = static_cast<Eigen::Index>(1 + rng.below(8));
        const Matrix a = test::random_matrix(n, n, rng, -5.0, 5.0);
        hungarian_bad += hungarian(a).order() != brute_force_assignment(a);
    }

    double worst_vertex = 0.0;
    for (int k = 0; k < 100; ++k) {
        const auto people = static_cast<Eigen::Index>(1 + rng.below(20));
        const auto events = static_cast<Eigen::Index>(1 + rng.below(8));
        const auto t = test::random_tables(people, events, rng, 6.0);
        const auto s = test::random_sequence(static_cast<std::size_t>(events), rng);
        worst_vertex = std::max(worst_vertex, std::abs(data_loglik(t, SoftPermutation(s)) - hard_seq_loglik(t, s)));
    }

    double worst_grad = 0.0;
    const double taus[] = {0.1, 1.0, 10.0};
    for (int k = 0; k < 50; ++k) {
        const auto t = test::random_tables(6, 4, rng);
        const Matrix x = test::random_matrix(4, 4, rng);
        ModelConfig cfg;
        cfg.tau = taus[k % 3];
        cfg.tau_prior = std::exp(rng.uniform(-1.0, 1.0));
        cfg.n_s = 5 + static_cast<int>(rng.below(20));
        const Matrix g = elbo_grad(x, t, cfg);
        const auto f = [&](const Matrix& y) { return elbo(y, t, cfg); };
        worst_grad = std::max(worst_grad, test::relative_error(g, test::finite_difference(f, x, 1e-4)));
    }

    double worst_marginal = 0.0;
    for (int k = 0; k < 200; ++k) {
        const auto n = static_cast<Eigen::Index>(1 + rng.below(12));
        const auto s = sinkhorn(test::random_matrix(n, n, rng, -2.0, 2.0), 1.0, 50);
        worst_marginal = std::max(worst_marginal, s.marginal_error());
    }

    bool kl_zero = true;
    for (double tau : {0.1, 1.0, 3.0})
        for (Eigen::Index n : {1, 4, 9}) kl_zero = kl_zero && kl_gumbel_sinkhorn(Matrix::Zero(n, n), tau, tau) == 0.0;

    const double secs = seconds_since(t0);
    std::ostringstream d;
    d << "(a) hungarian mismatches " << hungarian_bad << "/200; (b) max vertex gap " << worst_vertex
      << "; (c) max gradient rel. error " << worst_grad << "; (d) max marginal error " << worst_marginal
      << "; (e) KL at prior " << (kl_zero ? "exactly 0" : "non-zero") << "; " << fmt(secs, 1) << " s";
    return {hungarian_bad == 0 && worst_vertex <= 1e-9 && worst_grad < 1e-4 && worst_marginal <= 1e-6 && kl_zero &&
                secs < 60.0,
            d.str()};
}

Outcome mcmc_correctness()
{
    Rng rng(12);
    const auto t = test::random_tables(3, 3, rng, 2.0);
    std::map<std::vector<int>, double> target;
    double z = -INFINITY;
    test::for_each_permutation(3, [&](const std::vector<int>& p) {
        target[p] = hard_seq_loglik(t, EventSequence(p));
        z = std::max(z, target[p]);
    });
    double total = 0.0;
    for (auto& [p, v] : target) total += v = std::exp(v - z);
    for (auto& [p, v] : target) v /= total;
    const auto trace = ebm_mcmc(t, EventSequence::identity(3), 100000, std::uint64_t{5});
    std::map<std::vector<int>, double> freq;
    for (const auto& s : trace.samples) freq[s.order()] += 1.0 / static_cast<double>(trace.samples.size());
    double worst = 0.0;
    for (const auto& [p, v] : target) worst = std::max(worst, std::abs(freq[p] - v));
    return {worst <= 0.02, "max |frequency - target| " + fmt(worst, 4) + " over 1e5 samples (need <= 0.02)"};
}

Outcome staging()
{
    const auto data = make_data(1000, 100, 0.1, 0);
    ModelConfig cfg;
    const auto fm = fit(data.dataset, cfg);
    Dataset d = data.dataset;
    d.observed.row(0).setConstant(false);
    const auto st = stage(fm, d);
    std::vector<double> truth, inferred;
    for (std::size_t i = 1; i < st.size(); ++i) {
        truth.push_back(data.stages[i]);
        inferred.push_back(st[i].ml_stage);
    }
    const double rho = test::spearman(truth, inferred);
    double uniform_gap = 0.0;
    for (double p : st[0].probabilities) uniform_gap = std::max(uniform_gap, std::abs(p - 1.0 / 101.0));
    std::ostringstream detail;
    detail << "Spearman " << fmt(rho) << " (need >= 0.9); all-missing row max deviation from uniform " << uniform_gap;
    return {rho >= 0.9 && uniform_gap < 1e-12, detail.str()};
}

Outcome run(int criterion)
{
    switch (criterion) {
    case 1: return sequence_recovery();
    case 2: return noise_robustness();
    case 3: return hyperparameter_sensitivity();
    case 4: return speed();
    case 5: return oracle_equivalences();
    case 6: return mcmc_correctness();
    case 7: return staging();
    }
    throw Error("unknown criterion");
}

} // namespace

int main(int argc, char** argv)
{
    if (argc != 2) {
        std::cerr << "usage: vebm_acceptance <1..7|all>\n";
        return 2;
    }
    const std::string which = argv[1];
    std::vector<int> selected;
    if (which == "all") selected = {1, 2, 3, 4, 5, 6, 7};
    else if (which.size() == 1 && which[0] >= '1' && which[0] <= '7') selected = {which[0] - '0'};
    else {
        std::cerr << "usage: vebm_acceptance <1..7|all>\n";
        return 2;
    }
    bool all_pass = true;
    for (int c : selected) {
        Outcome o;
        try {
            o = run(c);
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        std::cout << "criterion " << c << ": " << (o.pass ? "PASS" : "FAIL") << " - " << o.detail << std::endl;
        all_pass = all_pass && o.pass;
    }
    return all_pass ? 0 : 1;
}
