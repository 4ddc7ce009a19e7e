#pragma once

// One estimation run: a shared fold plan and shared nuisance fits feed every
// requested estimator.

#include "lmtp/estimators.hpp"

#include <algorithm>
#include <cstdint>
#include <optional>
#include <vector>

namespace lmtp {

struct EstimationOptions {
    std::vector<EstimatorKind> estimators{EstimatorKind::sub, EstimatorKind::ipw, EstimatorKind::tmle, EstimatorKind::sdr};
    LearnerSchedule outcome_learners{NuisanceLearner::single(LearnerSpec::of(LearnerKind::linear))};
    LearnerSchedule ratio_learners{NuisanceLearner::single(LearnerSpec::of(LearnerKind::logistic))};
    int folds = 10;
    bool crossfit = true;
    std::uint64_t seed = 1;
    std::optional<double> truncation;
    double level = 0.95;
    double outcome_eps = 1e-4;
    int threads = 1;
};

struct EstimationRun {
    std::vector<EstimateResult> results;
    std::vector<SupportViolation> support_violations;
};

inline bool wants(const EstimationOptions& o, EstimatorKind k) {
    return std::find(o.estimators.begin(), o.estimators.end(), k) != o.estimators.end();
}

inline FoldPlan plan_folds(Index n, const EstimationOptions& o) {
    return o.crossfit ? make_folds(n, o.folds, o.seed) : full_sample_plan(n, o.seed);
}

/// Runs the requested estimators. Nuisances are fit once: the density ratios
/// serve IPW, TMLE and SDR; the sequential regressions serve the substitution
/// estimator and initialize TMLE.
inline EstimationRun estimate(const LongitudinalData& data, const Policy& policy, const EstimationOptions& o) {
    if (o.estimators.empty()) throw ConfigError("no estimators requested");
    EstimationProblem p = EstimationProblem::make(data, policy, plan_folds(data.n(), o), o.outcome_eps, o.threads);

    EstimationRun run;
    run.support_violations = support_violations(data, p.shifted);

    const bool need_ratios = wants(o, EstimatorKind::ipw) || wants(o, EstimatorKind::tmle) || wants(o, EstimatorKind::sdr);
    const bool need_regressions = wants(o, EstimatorKind::sub) || wants(o, EstimatorKind::tmle);
    std::optional<RatioEstimates> ratios;
    if (need_ratios) ratios = estimate_density_ratios(data, p.shifted, p.folds, o.ratio_learners, o.truncation, o.threads);
    std::optional<SequentialRegression> reg;
    if (need_regressions) reg = sequential_regressions(p, o.outcome_learners);

    for (EstimatorKind k : o.estimators) {
        switch (k) {
        case EstimatorKind::sub: run.results.push_back(substitution_result(p, *reg)); break;
        case EstimatorKind::ipw: run.results.push_back(ipw_estimate(data, *ratios, p.folds.seed())); break;
        case EstimatorKind::tmle: {
            NuisanceSet eta{*ratios, reg->m_natural, reg->m_shifted};
            run.results.push_back(tmle_estimate(p, eta, o.level));
            break;
        }
        case EstimatorKind::sdr: run.results.push_back(sdr_estimate(p, *ratios, o.outcome_learners, o.level)); break;
        }
        run.results.back().level = o.level;
    }
    return run;
}

struct Contrast {
    EstimatorKind estimator;
    double difference;
    std::optional<double> se;
    std::optional<std::pair<double, double>> ci;
};

/// theta(second) - theta(first) per estimator; the standard error comes from
/// the differenced influence function values when both runs carry them.
inline std::vector<Contrast> contrast(const EstimationRun& first, const EstimationRun& second, double level,
                                      const Vector& weights = Vector()) {
    std::vector<Contrast> out;
    for (const auto& b : second.results) {
        for (const auto& a : first.results) {
            if (a.estimator != b.estimator) continue;
            Contrast c{a.estimator, b.theta - a.theta, std::nullopt, std::nullopt};
            if (a.eif.size() > 0 && b.eif.size() == a.eif.size()) {
                const WaldInterval w = wald_interval(c.difference, b.eif - a.eif, level, weights);
                c.se = w.se;
                c.ci = std::make_pair(w.low, w.high);
            }
            out.push_back(c);
        }
    }
    return out;
}

}  // namespace lmtp
