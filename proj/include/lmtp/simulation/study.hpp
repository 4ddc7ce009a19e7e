#pragma once

// Monte Carlo study over the four-period mechanism: four nuisance
// misspecification scenarios, replicated datasets, and bias / MSE / coverage
// summaries against the true parameter and efficiency bound.

#include "lmtp/parallel.hpp"
#include "lmtp/pipeline.hpp"
#include "lmtp/simulation/dgp.hpp"

#include <array>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace lmtp::sim {

/// Learner schedules for one scenario. A consistent learner is a saturated
/// model on (A_t, L_t, A_{t-1}), which contains the true Markov nuisance; an
/// inconsistent one is intercept-only. One pseudo-row of shrinkage keeps
/// cells seen only among intervened copies from producing ratios near the
/// probability floor's limit.
struct ScenarioSpec {
    int id = 1;
    LearnerSchedule outcome{NuisanceLearner{}};
    LearnerSchedule ratio{NuisanceLearner{}};
};

inline NuisanceLearner consistent_learner() {
    LearnerSpec spec = LearnerSpec::of(LearnerKind::saturated);
    spec.cell_prior = 1.0;
    return NuisanceLearner::single(spec, HistoryWindow{1, 0});
}
inline NuisanceLearner inconsistent_learner() { return NuisanceLearner::single(LearnerSpec::of(LearnerKind::intercept_only)); }

/// Scenario 1: everything consistent. 2: outcome regressions consistent at
/// times 3-4, ratios at times 1-2. 3: outcome regressions at times 1-3, ratio
/// at time 4. 4: nothing consistent.
inline ScenarioSpec scenario(int id) {
    if (id < 1 || id > 4) throw ConfigError("scenario must be 1, 2, 3 or 4");
    std::vector<NuisanceLearner> m, r;
    for (int t = 1; t <= kDgpTau; ++t) {
        bool m_ok = false, r_ok = false;
        switch (id) {
        case 1: m_ok = r_ok = true; break;
        case 2: m_ok = t > 2; r_ok = t <= 2; break;
        case 3: m_ok = t < 4; r_ok = t == 4; break;
        default: break;
        }
        m.push_back(m_ok ? consistent_learner() : inconsistent_learner());
        r.push_back(r_ok ? consistent_learner() : inconsistent_learner());
    }
    return {id, LearnerSchedule(std::move(m)), LearnerSchedule(std::move(r))};
}

struct SimulationTruth {
    double theta;
    double theta_mc_se;
    double bound;  // variance of the efficient influence function
};

inline SimulationTruth simulation_truth(const Policy& policy, std::int64_t draws, std::uint64_t seed, int threads = 1) {
    const MonteCarloEstimate mc = oracle_theta_mc(policy, draws, seed, threads);
    return {mc.mean, mc.se, DgpOracle(policy).efficiency_bound()};
}

struct MetricsRow {
    int scenario = 0;
    EstimatorKind estimator = EstimatorKind::sub;
    Index n = 0;
    int reps = 0;
    double bias = kNaN;
    double sqrt_n_bias = kNaN;
    double n_mse_over_bound = kNaN;
    double coverage = kNaN;  // tmle and sdr only
    double rel_se = kNaN;    // mean sqrt(n) * se over the square root of the bound
    int failures = 0;
    double mc_se = kNaN;  // Monte Carlo standard error of the bias
};

struct StudyOptions {
    int reps = 200;
    int folds = 10;
    std::uint64_t master_seed = 1;
    double level = 0.95;
    int threads = 1;
    double max_failure_rate = 0.05;
};

inline constexpr std::array<EstimatorKind, 4> kStudyEstimators{EstimatorKind::sub, EstimatorKind::ipw, EstimatorKind::tmle,
                                                               EstimatorKind::sdr};

struct Replicate {
    std::array<double, 4> theta{kNaN, kNaN, kNaN, kNaN};
    std::array<double, 4> se{kNaN, kNaN, kNaN, kNaN};
};

/// One dataset: dataset seed master + r, fold seed master + 10^6 + r.
/// Estimators fail independently; a failure leaves NaN in its slot.
inline Replicate run_replicate(const ScenarioSpec& spec, const Policy& policy, Index n, int r, const StudyOptions& o) {
    const LongitudinalData data = generate_dataset({n, o.master_seed + static_cast<std::uint64_t>(r)});
    const FoldPlan plan = make_folds(n, o.folds, o.master_seed + 1000000u + static_cast<std::uint64_t>(r));
    const EstimationProblem p = EstimationProblem::make(data, policy, plan);
    Replicate out;

    std::optional<RatioEstimates> ratios;
    try {
        ratios = estimate_density_ratios(data, p.shifted, p.folds, spec.ratio);
    } catch (const std::exception&) {
    }
    std::optional<SequentialRegression> reg;
    try {
        reg = sequential_regressions(p, spec.outcome);
    } catch (const std::exception&) {
    }
    auto record = [&](std::size_t k, auto&& run) {
        try {
            const EstimateResult res = run();
            out.theta[k] = res.theta;
            if (res.se) out.se[k] = *res.se;
        } catch (const std::exception&) {
        }
    };
    if (reg) record(0, [&] { return substitution_result(p, *reg); });
    if (ratios) record(1, [&] { return ipw_estimate(data, *ratios, plan.seed()); });
    if (ratios && reg) record(2, [&] { return tmle_estimate(p, NuisanceSet{*ratios, reg->m_natural, reg->m_shifted}, o.level); });
    if (ratios) record(3, [&] { return sdr_estimate(p, *ratios, spec.outcome, o.level); });
    return out;
}

/// Metrics for the four estimators. Aborts with EstimationError when an
/// estimator fails in more than the allowed share of replications.
inline std::vector<MetricsRow> run_scenario(const ScenarioSpec& spec, const Policy& policy, const SimulationTruth& truth, Index n,
                                            const StudyOptions& o) {
    if (o.reps < 2) throw ConfigError("need at least 2 replications");
    std::vector<Replicate> reps(static_cast<std::size_t>(o.reps));
    parallel_for(reps.size(), o.threads,
                 [&](std::size_t r) { reps[r] = run_replicate(spec, policy, n, static_cast<int>(r), o); });

    const double z = normal_quantile((1.0 + o.level) / 2.0);
    std::vector<MetricsRow> rows;
    for (std::size_t k = 0; k < kStudyEstimators.size(); ++k) {
        MetricsRow row;
        row.scenario = spec.id;
        row.estimator = kStudyEstimators[k];
        row.n = n;
        row.reps = o.reps;
        KahanSum sum, sq, se_sum, covered;
        int ok = 0, with_se = 0;
        for (const Replicate& rep : reps) {
            const double th = rep.theta[k];
            if (!std::isfinite(th)) {
                ++row.failures;
                continue;
            }
            ++ok;
            sum.add(th - truth.theta);
            sq.add((th - truth.theta) * (th - truth.theta));
            if (std::isfinite(rep.se[k])) {
                ++with_se;
                se_sum.add(rep.se[k]);
                covered.add(std::abs(th - truth.theta) <= z * rep.se[k] ? 1.0 : 0.0);
            }
        }
        if (row.failures > o.max_failure_rate * o.reps)
            throw EstimationError(std::string(to_string(row.estimator)) + " failed in " + std::to_string(row.failures) + " of " +
                                  std::to_string(o.reps) + " replications (scenario " + std::to_string(spec.id) +
                                  ", n = " + std::to_string(n) + ")");
        const double dn = static_cast<double>(n);
        row.bias = sum.value() / ok;
        row.sqrt_n_bias = std::sqrt(dn) * row.bias;
        row.n_mse_over_bound = dn * sq.value() / ok / truth.bound;
        double var = 0;
        if (ok > 1) {
            KahanSum dev;
            for (const Replicate& rep : reps)
                if (std::isfinite(rep.theta[k])) dev.add((rep.theta[k] - truth.theta - row.bias) * (rep.theta[k] - truth.theta - row.bias));
            var = dev.value() / (ok - 1);
        }
        row.mc_se = std::sqrt(var / ok);
        if (with_se > 0) {
            row.coverage = covered.value() / with_se;
            row.rel_se = std::sqrt(dn) * (se_sum.value() / with_se) / std::sqrt(truth.bound);
        }
        rows.push_back(row);
    }
    return rows;
}

inline void write_metrics_header(std::ostream& out) {
    out << "scenario,estimator,n,reps,bias,sqrt_n_bias,n_mse_over_bound,coverage,rel_se,failures\n";
}

inline void write_metrics_row(std::ostream& out, const MetricsRow& row) {
    auto num = [&](double v) {
        if (!std::isfinite(v)) return std::string("NA");
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6g", v);
        return std::string(buf);
    };
    out << row.scenario << ',' << to_string(row.estimator) << ',' << row.n << ',' << row.reps << ',' << num(row.bias) << ','
        << num(row.sqrt_n_bias) << ',' << num(row.n_mse_over_bound) << ',' << num(row.coverage) << ',' << num(row.rel_se) << ','
        << row.failures << '\n';
}

}  // namespace lmtp::sim
