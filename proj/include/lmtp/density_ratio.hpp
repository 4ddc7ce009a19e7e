#pragma once

// Density ratios r_t = g_t^d / g_t through classification: each observed row
// is duplicated, one copy carrying the natural exposure (label 0) and one the
// intervened exposure (label 1). With balanced labels the odds of label 1
// given (a_t, h_t) equal the ratio.

#include "lmtp/crossfit.hpp"
#include "lmtp/learners.hpp"
#include "lmtp/policy.hpp"

#include <optional>
#include <span>
#include <vector>

namespace lmtp {

struct AugmentedDataset {
    Matrix features;  // 2 rows per origin: label 0 then label 1
    Vector labels;
    Vector weights;
    std::vector<Index> origin;
};

/// Augmented rows for time t built from `rows` (restricted to trajectories
/// observed at t). When the study has dropout the censoring indicator is a
/// feature; the intervened copy always carries 1.
inline AugmentedDataset build_augmented(const LongitudinalData& data, const std::vector<Vector>& shifted, int t,
                                        std::span<const Index> rows, const HistoryWindow& window = {}) {
    std::vector<Index> kept;
    for (Index i : rows)
        if (data.observed_at(i, t)) kept.push_back(i);
    const bool censoring = data.has_censoring();
    const Vector ones = Vector::Ones(data.n());
    const Matrix natural = design_matrix(data, t, data.exposure(t), kept, window, censoring ? &data.censoring(t) : nullptr);
    const Matrix intervened = design_matrix(data, t, shifted[static_cast<std::size_t>(t)], kept, window, censoring ? &ones : nullptr);

    AugmentedDataset aug;
    const auto m = static_cast<Index>(kept.size());
    aug.features.resize(2 * m, natural.cols());
    aug.labels.resize(2 * m);
    aug.weights.resize(2 * m);
    aug.origin.reserve(static_cast<std::size_t>(2 * m));
    for (Index r = 0; r < m; ++r) {
        const Index i = kept[static_cast<std::size_t>(r)];
        aug.features.row(2 * r) = natural.row(r);
        aug.features.row(2 * r + 1) = intervened.row(r);
        aug.labels(2 * r) = 0.0;
        aug.labels(2 * r + 1) = 1.0;
        aug.weights(2 * r) = data.weights()(i);
        aug.weights(2 * r + 1) = data.weights()(i);
        aug.origin.push_back(i);
        aug.origin.push_back(i);
    }
    return aug;
}

inline AugmentedDataset build_augmented(const LongitudinalData& data, const Policy& policy, int t) {
    std::vector<Index> all(static_cast<std::size_t>(data.n()));
    std::iota(all.begin(), all.end(), Index{0});
    return build_augmented(data, shifted_exposures(data, policy), t, all);
}

struct RatioEstimates {
    std::vector<Vector> ratios;  // per time, length n; 0 once a trajectory has dropped out
    std::optional<double> cap;
    bool truncated = false;  // the cap changed at least one value

    int tau() const { return static_cast<int>(ratios.size()); }
    const Vector& at(int t) const { return ratios[static_cast<std::size_t>(t)]; }

    /// prod_{k <= t} r_k per trajectory.
    Vector cumulative(int t) const {
        Vector w = Vector::Ones(ratios.front().size());
        for (int k = 0; k <= t; ++k) w = w.cwiseProduct(at(k));
        return w;
    }
};

/// Turns classifier probabilities into odds, applying the censoring and
/// truncation conventions.
inline double odds_to_ratio(double u, bool uncensored, std::optional<double> cap, bool& truncated) {
    if (!uncensored) return 0.0;
    double r = u / (1.0 - u);
    if (cap && r > *cap) {
        r = *cap;
        truncated = true;
    }
    return r;
}

/// Cross-fitted r_t(A_t, H_t) for every time point. Each fold's classifier is
/// trained on augmented rows whose origin lies in T_j and evaluated at the
/// observed exposure of the rows in V_j.
inline RatioEstimates estimate_density_ratios(const LongitudinalData& data, const std::vector<Vector>& shifted,
                                              const FoldPlan& folds, const LearnerSchedule& schedule,
                                              std::optional<double> truncation = std::nullopt, int threads = 1) {
    if (truncation && !(*truncation > 0)) throw ConfigError("truncation cap must be positive");
    if (folds.n() != data.n()) throw ConfigError("fold plan size does not match the data");
    RatioEstimates out;
    out.cap = truncation;
    const bool censoring = data.has_censoring();
    for (int t = 0; t < data.tau(); ++t) {
        const NuisanceLearner& learner = schedule.at(t);
        using Fit = Ensemble;
        std::function<Fit(int, std::span<const Index>)> fit = [&](int j, std::span<const Index> train) {
            const AugmentedDataset aug = build_augmented(data, shifted, t, train, learner.window);
            if (aug.labels.size() == 0) throw FitError("no observed rows at time " + std::to_string(t + 1));
            try {
                return learner.fit(aug.features, aug.labels, aug.weights,
                                   derive_seed(folds.seed(), 100000u + 1000u * static_cast<unsigned>(t) + static_cast<unsigned>(j)), true);
            } catch (const std::exception& e) {
                throw FitError("density ratio classifier at time " + std::to_string(t + 1) + ": " + e.what());
            }
        };
        std::vector<char> flags(static_cast<std::size_t>(folds.folds()), 0);
        std::vector<std::function<Vector(const Fit&, std::span<const Index>)>> designs{
            [&](const Fit& model, std::span<const Index> rows) {
                std::vector<Index> kept;
                for (Index i : rows)
                    if (data.observed_at(i, t)) kept.push_back(i);
                Vector r = Vector::Zero(static_cast<Index>(rows.size()));
                if (kept.empty()) return r;
                const Matrix x =
                    design_matrix(data, t, data.exposure(t), kept, learner.window, censoring ? &data.censoring(t) : nullptr);
                const Vector u = model.predict(x);
                bool truncated = false;
                std::size_t k = 0;
                for (std::size_t q = 0; q < rows.size(); ++q) {
                    const Index i = rows[q];
                    if (!data.observed_at(i, t)) continue;
                    const bool uncensored = !censoring || data.censoring(t)(i) == 1.0;
                    r(static_cast<Index>(q)) = odds_to_ratio(u(static_cast<Index>(k++)), uncensored, truncation, truncated);
                }
                if (truncated) flags[static_cast<std::size_t>(folds.fold_of(rows.front()))] = 1;
                return r;
            }};
        auto pred = crossfit_predict<Fit>(folds, fit, designs, threads);
        out.ratios.push_back(std::move(pred.front()));
        for (char f : flags) out.truncated = out.truncated || f != 0;
    }
    return out;
}

inline RatioEstimates estimate_density_ratios(const LongitudinalData& data, const Policy& policy, const FoldPlan& folds,
                                              const LearnerSchedule& learner,
                                              std::optional<double> truncation = std::nullopt, int threads = 1) {
    return estimate_density_ratios(data, shifted_exposures(data, policy), folds, learner, truncation, threads);
}

}  // namespace lmtp
