// vebm: simulate data, fit the variational event-based model, stage
// individuals, and evaluate or benchmark inferred sequences.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vebm/vebm.hpp"

namespace fs = std::filesystem;
using namespace vebm;

namespace {

class UsageError : public Error {
public:
    using Error::Error;
};

// Options that may also come from a `--config` file. A value from the file
// is applied only when the flag itself was not given.
class ConfigBindings {
public:
    template <typename T>
    CLI::Option* add(CLI::App* app, const std::string& flag, T& target, const std::string& help)
    {
        CLI::Option* opt = app->add_option(flag, target, help)->capture_default_str();
        bind(opt, flag, [&target, flag](const std::string& text) { target = convert<T>(text, flag); });
        return opt;
    }

    CLI::Option* add_flag(CLI::App* app, const std::string& flag, bool& target, const std::string& help)
    {
        CLI::Option* opt = app->add_flag(flag, target, help);
        bind(opt, flag, [&target, flag](const std::string& text) { target = convert<bool>(text, flag); });
        return opt;
    }

    void apply(const std::map<std::string, std::string>& config, const std::string& source) const
    {
        for (const auto& [key, value] : config) {
            const auto it = bindings_.find(key);
            if (it == bindings_.end()) throw ParseError(source + ": unknown key '" + key + "'");
            if (it->second.option->count() == 0) it->second.set(value);
        }
    }

private:
    struct Binding {
        CLI::Option* option;
        std::function<void(const std::string&)> set;
    };

    void bind(CLI::Option* opt, const std::string& flag, std::function<void(const std::string&)> set)
    {
        std::string key = flag.substr(flag.find_first_not_of('-'));
        std::ranges::replace(key, '-', '_');
        bindings_[key] = {opt, std::move(set)};
    }

    template <typename T>
    static T convert(const std::string& text, const std::string& flag)
    {
        const std::string where = "config value for " + flag;
        if constexpr (std::is_same_v<T, bool>) {
            const std::string t = io::detail::lower(text);
            if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
            if (t == "false" || t == "0" || t == "no" || t == "off") return false;
            throw ParseError(where + ": expected true or false, found '" + text + "'");
        } else if constexpr (std::is_same_v<T, std::string>) {
            return text;
        } else if constexpr (std::is_floating_point_v<T>) {
            return io::parse_double(text, where);
        } else {
            T v{};
            const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
            if (res.ec != std::errc{} || res.ptr != text.data() + text.size())
                throw ParseError(where + ": expected an integer, found '" + text + "'");
            return v;
        }
    }

    std::map<std::string, Binding> bindings_;
};

struct Common {
    std::uint64_t seed = 0;
    unsigned threads = 0;
    std::string config;
    std::string out_dir = ".";
};

void add_common(CLI::App* app, ConfigBindings& b, Common& c)
{
    b.add(app, "--seed", c.seed, "Seed for every random draw");
    b.add(app, "--threads", c.threads, "Worker threads (0 = all cores)");
    b.add(app, "--out-dir", c.out_dir, "Directory for output files");
    app->add_option("--config", c.config, "Flat key = value file; flags override it");
}

void add_model_options(CLI::App* app, ConfigBindings& b, ModelConfig& m, std::string& decoder, std::string& init)
{
    b.add(app, "--tau", m.tau, "Posterior temperature");
    b.add(app, "--tau-prior", m.tau_prior, "Prior temperature");
    b.add(app, "--sinkhorn-iters", m.n_s, "Sinkhorn passes per evaluation");
    b.add(app, "--opt-iters", m.n_opt, "Adam iterations");
    b.add(app, "--lr", m.learning_rate, "Adam learning rate");
    b.add_flag(app, "--gumbel", m.use_gumbel_noise, "Draw fresh Gumbel noise at every step");
    b.add(app, "--decoder", decoder, "hungarian or barycentre");
    b.add(app, "--init", init, "Score initialisation: zero or frequency");
}

void load_config(const Common& c, const ConfigBindings& b)
{
    if (c.config.empty()) return;
    auto is = io::open_in(c.config);
    b.apply(io::read_config(is, c.config), c.config);
}

fs::path prepare_out_dir(const std::string& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory '" + dir + "'");
    return fs::path(dir);
}

std::vector<std::pair<std::size_t, std::size_t>> parse_sizes(const std::string& text)
{
    std::vector<std::pair<std::size_t, std::size_t>> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto x = item.find_first_of("xX");
        std::size_t a = 0, b = 0;
        const bool ok = x != std::string::npos &&
                        std::from_chars(item.data(), item.data() + x, a).ptr == item.data() + x &&
                        std::from_chars(item.data() + x + 1, item.data() + item.size(), b).ptr == item.data() + item.size();
        if (!ok || a < 2 || b < 1) throw UsageError("--sizes: expected IxJ[,IxJ...], found '" + item + "'");
        out.emplace_back(a, b);
    }
    if (out.empty()) throw UsageError("--sizes: no sizes given");
    return out;
}

std::string join_sequence(const EventSequence& s, const std::vector<std::string>& names)
{
    std::string out;
    for (std::size_t p = 0; p < s.size(); ++p) {
        if (p) out += ' ';
        const auto e = static_cast<std::size_t>(s[p]);
        out += names.empty() ? std::to_string(e) : names[e];
    }
    return out;
}

// ------------------------------------------------------------- commands ----

struct SimulateArgs {
    Common common;
    SynthSpec spec;
};

void run_simulate(const SimulateArgs& a)
{
    SynthSpec spec = a.spec;
    spec.seed = a.common.seed;
    const SynthData data = generate(spec);
    const fs::path dir = prepare_out_dir(a.common.out_dir);
    io::write_file(dir / "data.csv", [&](std::ostream& os) { io::write_dataset(os, data.dataset); });
    io::write_json_file(dir / "truth.json", io::truth_to_json(data));
    io::write_json_file(dir / "simulate_spec.json", io::synth_spec_to_json(spec));
    std::cout << "wrote " << (dir / "data.csv").string() << ", " << (dir / "truth.json").string() << ", "
              << (dir / "simulate_spec.json").string() << '\n';
}

struct FitArgs {
    Common common;
    ModelConfig model;
    std::string decoder = "hungarian";
    std::string init = "zero";
    std::string data;
};

void run_fit(FitArgs a)
{
    a.model.seed = a.common.seed;
    a.model.decoder = io::parse_decoder(a.decoder);
    a.model.init = io::parse_init(a.init);
    a.model.validate();
    const Dataset d = io::read_dataset_file(a.data);
    const FittedModel fm = fit(d, a.model, a.common.threads);
    const fs::path dir = prepare_out_dir(a.common.out_dir);
    io::write_json_file(dir / "model.json", io::model_to_json(fm));
    io::write_file(dir / "sequence.csv", [&](std::ostream& os) { io::write_sequence_csv(os, fm.sequence, fm.feature_names); });
    std::cout << "sequence: " << join_sequence(fm.sequence, fm.feature_names) << '\n'
              << "final elbo: " << io::format_double(fm.elbo_trace.back()) << '\n'
              << "wrote " << (dir / "model.json").string() << ", " << (dir / "sequence.csv").string() << '\n';
}

struct StageArgs {
    Common common;
    std::string model;
    std::string data;
};

void run_stage(const StageArgs& a)
{
    const FittedModel fm = io::model_from_json(io::read_json_file(a.model));
    const Dataset d = io::read_dataset_file(a.data);
    const auto stages = stage(fm, d, a.common.threads);
    const fs::path dir = prepare_out_dir(a.common.out_dir);
    io::write_file(dir / "stages.csv", [&](std::ostream& os) { io::write_stages_csv(os, stages, d.ids); });
    std::cout << "staged " << stages.size() << " individuals; wrote " << (dir / "stages.csv").string() << '\n';
}

struct EvaluateArgs {
    Common common;
    std::string truth;
    std::string inferred;
    std::string model;
    int posvar = 0;
    bool benchmark = false;
    std::string sizes = "100x10";
    int repeats = 1;
    std::string solvers = "vebm,ebm";
    double sigma = 0.1;
    int greedy_iters = 1000;
    int greedy_starts = 10;
    std::size_t mcmc_samples = 1'000'000;
    bool end_to_end = false;
    ModelConfig vebm;
    std::string decoder = "hungarian";
    std::string init = "zero";
};

void run_evaluate(EvaluateArgs a)
{
    const bool compare = !a.inferred.empty();
    if (!compare && a.posvar == 0 && !a.benchmark)
        throw UsageError("evaluate needs --inferred (with --truth), --posvar (with --model), or --benchmark");
    const fs::path dir = prepare_out_dir(a.common.out_dir);

    if (compare) {
        if (a.truth.empty()) throw UsageError("--inferred needs --truth");
        const EventSequence truth = io::read_any_sequence(a.truth);
        const EventSequence inferred = io::read_any_sequence(a.inferred);
        if (truth.size() != inferred.size())
            throw Error("sequence length mismatch: truth has " + std::to_string(truth.size()) + " events, inferred has " +
                        std::to_string(inferred.size()));
        const double tau = truth.size() >= 2 ? kendalls_tau(truth, inferred) : 1.0;
        const double frac = fraction_correct(truth, inferred);
        io::write_json_file(dir / "metrics.json", io::Json{{"kendall_tau", tau}, {"fraction_correct", frac}});
        std::cout << "kendall_tau: " << io::format_double(tau) << '\n'
                  << "fraction_correct: " << io::format_double(frac) << '\n';
    }

    if (a.posvar != 0) {
        if (a.posvar < 1) throw UsageError("--posvar must be a positive sample count");
        if (a.model.empty()) throw UsageError("--posvar needs --model");
        const FittedModel fm = io::model_from_json(io::read_json_file(a.model));
        const Matrix f = sample_positional_variance(fm, fm.config, a.posvar, a.common.seed);
        std::optional<EventSequence> truth;
        if (!a.truth.empty()) truth = io::read_any_sequence(a.truth);
        const auto cells = positional_variance_diagram(f, truth);
        io::write_file(dir / "posvar.csv", [&](std::ostream& os) { write_diagram_csv(os, cells, fm.feature_names); });
        std::cout << "max off-diagonal frequency: " << io::format_double(max_off_diagonal(cells)) << '\n'
                  << "wrote " << (dir / "posvar.csv").string() << '\n';
    }

    if (a.benchmark) {
        BenchmarkOptions opt;
        opt.solvers.clear();
        std::stringstream ss(a.solvers);
        for (std::string s; std::getline(ss, s, ',');)
            if (!s.empty()) opt.solvers.push_back(s);
        opt.sizes = parse_sizes(a.sizes);
        opt.repeats = a.repeats;
        opt.sigma = a.sigma;
        opt.seed = a.common.seed;
        opt.greedy_iterations = a.greedy_iters;
        opt.greedy_starts = a.greedy_starts;
        opt.mcmc_samples = a.mcmc_samples;
        opt.end_to_end = a.end_to_end;
        opt.vebm = a.vebm;
        opt.vebm.decoder = io::parse_decoder(a.decoder);
        opt.vebm.init = io::parse_init(a.init);
        opt.vebm.validate();
        const auto rows = benchmark(opt); // single-threaded by construction
        io::write_file(dir / "benchmark.csv", [&](std::ostream& os) { write_benchmark_csv(os, rows); });
        std::cout << "solver,I,J,median_wall_ms,median_tau,failures\n";
        for (const auto& s : summarise(rows))
            std::cout << s.solver << ',' << s.individuals << ',' << s.features << ',' << io::format_double(s.median_wall_ms)
                      << ',' << io::format_double(s.median_tau) << ',' << s.failures << '\n';
        for (const auto& r : rows)
            if (!r.error.empty())
                std::cerr << "vebm: solver failure: " << r.solver << " at " << r.individuals << 'x' << r.features
                          << " seed " << r.seed << ": " << r.error << '\n';
        std::cout << "wrote " << (dir / "benchmark.csv").string() << '\n';
    }
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Variational event-based model: infer the order in which features become abnormal"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "vebm 1.0.0");

    ConfigBindings sim_b, fit_b, stage_b, eval_b;

    SimulateArgs sim;
    auto* sim_cmd = app.add_subcommand("simulate", "Generate a synthetic dataset with a known event sequence");
    add_common(sim_cmd, sim_b, sim.common);
    sim_b.add(sim_cmd, "--individuals", sim.spec.n_individuals, "Number of individuals");
    sim_b.add(sim_cmd, "--features", sim.spec.n_features, "Number of features (events)");
    sim_b.add(sim_cmd, "--sigma", sim.spec.sigma, "Noise standard deviation");
    sim_b.add(sim_cmd, "--control-fraction", sim.spec.control_fraction, "Fraction of the lowest stages labelled control");
    sim_b.add(sim_cmd, "--patient-mean-lo", sim.spec.patient_mean_lo, "Lower end of the patient mean range");
    sim_b.add(sim_cmd, "--patient-mean-hi", sim.spec.patient_mean_hi, "Upper end of the patient mean range");
    sim_b.add(sim_cmd, "--missing-fraction", sim.spec.missing_fraction, "Probability that a cell is missing");

    FitArgs fit_args;
    auto* fit_cmd = app.add_subcommand("fit", "Fit mixtures and the event sequence to a dataset CSV");
    add_common(fit_cmd, fit_b, fit_args.common);
    add_model_options(fit_cmd, fit_b, fit_args.model, fit_args.decoder, fit_args.init);
    fit_cmd->add_option("data", fit_args.data, "Dataset CSV (id,label,features...)")->required();

    StageArgs stage_args;
    auto* stage_cmd = app.add_subcommand("stage", "Compute stage posteriors under a fitted model");
    add_common(stage_cmd, stage_b, stage_args.common);
    stage_cmd->add_option("--model", stage_args.model, "Model JSON from fit")->required();
    stage_cmd->add_option("data", stage_args.data, "Dataset CSV")->required();

    EvaluateArgs ev;
    auto* ev_cmd = app.add_subcommand("evaluate", "Compare sequences, draw positional variance, or benchmark solvers");
    add_common(ev_cmd, eval_b, ev.common);
    ev_cmd->add_option("--truth", ev.truth, "Reference sequence (truth JSON, model JSON or sequence CSV)");
    ev_cmd->add_option("--inferred", ev.inferred, "Sequence to score against --truth");
    ev_cmd->add_option("--model", ev.model, "Model JSON for --posvar");
    ev_cmd->add_option("--posvar", ev.posvar, "Posterior samples for the positional variance table");
    ev_cmd->add_flag("--benchmark", ev.benchmark, "Run the solver benchmark on synthetic data");
    eval_b.add(ev_cmd, "--sizes", ev.sizes, "Comma-separated IxJ sizes");
    eval_b.add(ev_cmd, "--repeats", ev.repeats, "Seeds per size");
    eval_b.add(ev_cmd, "--solvers", ev.solvers, "Comma-separated solvers: vebm, ebm, ebm-greedy");
    eval_b.add(ev_cmd, "--sigma", ev.sigma, "Noise level of the benchmark data");
    eval_b.add(ev_cmd, "--greedy-iters", ev.greedy_iters, "Greedy swap proposals per start");
    eval_b.add(ev_cmd, "--greedy-starts", ev.greedy_starts, "Greedy random starts");
    eval_b.add(ev_cmd, "--mcmc-samples", ev.mcmc_samples, "MCMC samples after the greedy search");
    eval_b.add_flag(ev_cmd, "--end-to-end", ev.end_to_end, "Include mixture fitting in wall time");
    add_model_options(ev_cmd, eval_b, ev.vebm, ev.decoder, ev.init);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "vebm: usage error: " << e.what() << '\n';
        return 2;
    }

    try {
        if (sim_cmd->parsed()) {
            load_config(sim.common, sim_b);
            run_simulate(sim);
        } else if (fit_cmd->parsed()) {
            load_config(fit_args.common, fit_b);
            run_fit(fit_args);
        } else if (stage_cmd->parsed()) {
            load_config(stage_args.common, stage_b);
            run_stage(stage_args);
        } else if (ev_cmd->parsed()) {
            load_config(ev.common, eval_b);
            run_evaluate(ev);
        }
    } catch (const UsageError& e) {
        std::cerr << "vebm: usage error: " << e.what() << '\n';
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "vebm: parse error: " << e.what() << '\n';
        return 1;
    } catch (const IoError& e) {
        std::cerr << "vebm: io error: " << e.what() << '\n';
        return 1;
    } catch (const Error& e) {
        std::cerr << "vebm: error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "vebm: internal error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
