#pragma once

// Synthetic cross-sectional data generated from a known event sequence.

#include <cmath>
#include <string>
#include <vector>

#include "vebm/core.hpp"

namespace vebm {

struct SynthSpec {
    std::size_t n_individuals = 100;
    std::size_t n_features = 10;
    double sigma = 0.1;
    double control_fraction = 0.2;
    double patient_mean_lo = 1.0;
    double patient_mean_hi = 3.0;
    double missing_fraction = 0.0;
    std::uint64_t seed = 0;

    void validate() const
    {
        if (n_individuals < 2) throw Error("need at least 2 individuals");
        if (n_features < 1) throw Error("need at least 1 feature");
        if (!(sigma > 0.0) || !std::isfinite(sigma)) throw Error("sigma must be positive");
        if (!(control_fraction > 0.0 && control_fraction < 1.0)) throw Error("control fraction must lie in (0, 1)");
        if (!(patient_mean_lo <= patient_mean_hi)) throw Error("patient mean range is empty");
        if (!(missing_fraction >= 0.0 && missing_fraction < 1.0)) throw Error("missing fraction must lie in [0, 1)");
    }

    /// Highest stage that is labelled as control.
    int control_stage_cutoff() const
    {
        return static_cast<int>(std::floor(control_fraction * static_cast<double>(n_features) + 1e-9));
    }
};

struct SynthData {
    Dataset dataset;
    EventSequence truth;
    std::vector<int> stages;
    std::vector<double> patient_means;
};

inline SynthData generate(const SynthSpec& spec)
{
    spec.validate();
    const std::size_t people = spec.n_individuals;
    const std::size_t events = spec.n_features;
    Rng root(spec.seed);
    Rng order_rng = root.split();
    Rng mean_rng = root.split();
    Rng stage_rng = root.split();
    Rng value_rng = root.split();
    Rng missing_rng = root.split();

    SynthData out;
    std::vector<int> order(events);
    std::iota(order.begin(), order.end(), 0);
    order_rng.shuffle(order.begin(), order.end());
    out.truth = EventSequence(std::move(order));
    const auto position = out.truth.positions();

    out.patient_means.resize(events);
    for (auto& mu : out.patient_means) mu = mean_rng.uniform(spec.patient_mean_lo, spec.patient_mean_hi);

    out.stages.resize(people);
    for (auto& k : out.stages) k = static_cast<int>(stage_rng.below(events + 1));

    Dataset& d = out.dataset;
    const auto rows = static_cast<Eigen::Index>(people);
    const auto cols = static_cast<Eigen::Index>(events);
    d.values = Matrix::Zero(rows, cols);
    d.observed = Mask::Constant(rows, cols, true);
    d.labels.resize(people);
    d.feature_names.resize(events);
    d.ids.resize(people);
    for (std::size_t j = 0; j < events; ++j) d.feature_names[j] = "f" + std::to_string(j);

    const int cutoff = spec.control_stage_cutoff();
    for (std::size_t i = 0; i < people; ++i) {
        d.ids[i] = "s" + std::to_string(i);
        d.labels[i] = out.stages[i] <= cutoff ? Label::Control : Label::Patient;
        for (std::size_t j = 0; j < events; ++j) {
            const bool abnormal = position[j] < out.stages[i];
            const double mean = abnormal ? out.patient_means[j] : 0.0;
            d.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = value_rng.normal(mean, spec.sigma);
        }
    }
    if (spec.missing_fraction > 0.0) {
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j)
                if (missing_rng.uniform() < spec.missing_fraction) {
                    d.observed(i, j) = false;
                    d.values(i, j) = 0.0;
                }
    }
    return out;
}

} // namespace vebm
