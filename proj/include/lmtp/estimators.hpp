#pragma once

// Substitution, IPW, TMLE and sequentially doubly robust estimators of the
// mean outcome under a modified treatment policy, with influence-function
// based Wald inference.
//
// Outcome regressions live on the scaled outcome (values in [eps, 1 - eps]);
// results are mapped back to the original scale when reported.

#include "lmtp/density_ratio.hpp"
#include "lmtp/learners.hpp"
#include "lmtp/policy.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace lmtp {

enum class EstimatorKind { sub, ipw, tmle, sdr };

inline const char* to_string(EstimatorKind k) {
    switch (k) {
    case EstimatorKind::sub: return "sub";
    case EstimatorKind::ipw: return "ipw";
    case EstimatorKind::tmle: return "tmle";
    case EstimatorKind::sdr: return "sdr";
    }
    return "?";
}

inline EstimatorKind parse_estimator(std::string_view s) {
    if (s == "sub") return EstimatorKind::sub;
    if (s == "ipw") return EstimatorKind::ipw;
    if (s == "tmle") return EstimatorKind::tmle;
    if (s == "sdr") return EstimatorKind::sdr;
    throw ConfigError("unknown estimator '" + std::string(s) + "' (expected sub, ipw, tmle or sdr)");
}

/// Standard normal quantile (Acklam's rational approximation refined by one
/// Halley step against erfc; accurate to ~1e-15).
inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("normal quantile needs p in (0, 1)");
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                   1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                   6.680131188771972e+01,  -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                   -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                   3.754408661907416e+00};
    double x;
    if (p < 0.02425) {
        const double q = std::sqrt(-2 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    } else if (p > 1 - 0.02425) {
        const double q = std::sqrt(-2 * std::log(1 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    } else {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
    }
    const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
    const double u = e * std::sqrt(2 * 3.14159265358979323846) * std::exp(x * x / 2);
    return x - u / (1 + x * u / 2);
}

struct WaldInterval {
    double se;
    double low;
    double high;
};

/// se = sd(eif) / sqrt(n) with the n - 1 divisor; interval theta +/- z se.
/// Weights, when given, define a weighted spread (all ones reproduces the
/// ordinary sample standard deviation).
inline WaldInterval wald_interval(double theta, const Vector& eif, double level, const Vector& weights = Vector()) {
    const Index n = eif.size();
    if (n < 2) throw EstimationError("Wald interval needs at least 2 observations");
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("confidence level must lie in (0, 1)");
    const Vector w = weights.size() == 0 ? Vector::Ones(n) : weights;
    KahanSum sw, swx;
    for (Index i = 0; i < n; ++i) {
        sw.add(w(i));
        swx.add(w(i) * eif(i));
    }
    const double mean = swx.value() / sw.value();
    KahanSum ss;
    for (Index i = 0; i < n; ++i) ss.add(w(i) * (eif(i) - mean) * (eif(i) - mean));
    const double var = ss.value() / sw.value() * static_cast<double>(n) / static_cast<double>(n - 1);
    const double se = std::sqrt(var / static_cast<double>(n));
    const double z = normal_quantile((1.0 + level) / 2.0);
    return {se, theta - z * se, theta + z * se};
}

/// Cross-fitted nuisance values on the scaled outcome. Entries for
/// trajectories not observed at t are NaN (regressions) or 0 (ratios).
struct NuisanceSet {
    RatioEstimates ratios;
    std::vector<Vector> m_natural;  // m_t(A_t, H_t)
    std::vector<Vector> m_shifted;  // m_t(A_t^d, H_t)
};

struct Diagnostics {
    double score_residual = kNaN;
    double weight_cv = kNaN;
    double weight_max = kNaN;
    std::vector<double> weight_deciles;
    std::uint64_t fold_seed = 0;
    bool clamped_to_bounds = false;
    bool truncated = false;
};

struct EstimateResult {
    EstimatorKind estimator = EstimatorKind::sub;
    double theta = kNaN;
    std::optional<double> se;
    std::optional<std::pair<double, double>> ci;
    double level = 0.95;
    Index n = 0;
    int tau = 0;
    Vector eif;  // phi_1 on the original outcome scale (tmle, sdr)
    Diagnostics diagnostics;
};

/// Everything the estimators share for one (data, policy) pair.
struct EstimationProblem {
    const LongitudinalData* data = nullptr;
    std::vector<Vector> shifted;
    FoldPlan folds;
    OutcomeScaler scaler{OutcomeBounds{}};
    Vector y_scaled;  // NaN for trajectories without an outcome
    int threads = 1;

    static EstimationProblem make(const LongitudinalData& data, const Policy& policy, FoldPlan folds, double eps = 1e-4,
                                  int threads = 1) {
        if (folds.n() != data.n()) throw ConfigError("fold plan size does not match the data");
        EstimationProblem p;
        p.data = &data;
        p.shifted = shifted_exposures(data, policy);
        p.folds = std::move(folds);
        p.scaler = OutcomeScaler(data.bounds(), eps);
        p.y_scaled = data.outcome().unaryExpr([&](double y) { return std::isnan(y) ? kNaN : p.scaler.scale(y); });
        p.threads = threads;
        return p;
    }
};

namespace detail {

/// Weighted mean skipping zero-weight entries (so NaN there is harmless).
inline double wmean(const Vector& x, const Vector& w) {
    KahanSum num, den;
    for (Index i = 0; i < x.size(); ++i) {
        if (w(i) == 0.0) continue;
        num.add(w(i) * x(i));
        den.add(w(i));
    }
    return num.value() / den.value();
}

/// Cross-fitted regression of `target` on (A_t, H_t). Training rows are those
/// with a finite target that are still followed after t; predictions are made
/// at the natural and intervened exposures of rows observed at t.
inline std::pair<Vector, Vector> regress_step(const EstimationProblem& p, int t, const Vector& target,
                                              const NuisanceLearner& learner, std::uint64_t stream) {
    const LongitudinalData& data = *p.data;
    std::function<Ensemble(int, std::span<const Index>)> fit = [&](int j, std::span<const Index> train) {
        std::vector<Index> rows;
        for (Index i : train)
            if (data.continues_after(i, t) && std::isfinite(target(i)) && data.weights()(i) > 0) rows.push_back(i);
        if (rows.empty()) throw FitError("no training rows for the outcome regression at time " + std::to_string(t + 1));
        const Matrix x = design_matrix(data, t, data.exposure(t), rows, learner.window);
        Vector y(static_cast<Index>(rows.size())), w(static_cast<Index>(rows.size()));
        for (std::size_t r = 0; r < rows.size(); ++r) {
            y(static_cast<Index>(r)) = target(rows[r]);
            w(static_cast<Index>(r)) = data.weights()(rows[r]);
        }
        try {
            return learner.fit(x, y, w, derive_seed(p.folds.seed(), stream + 1000u * static_cast<unsigned>(t) + static_cast<unsigned>(j)),
                               false);
        } catch (const std::exception& e) {
            throw FitError("outcome regression at time " + std::to_string(t + 1) + ": " + e.what());
        }
    };
    auto at = [&](const Vector& exposure) {
        return [&, exposure_ptr = &exposure](const Ensemble& model, std::span<const Index> rows) {
            std::vector<Index> kept;
            for (Index i : rows)
                if (data.observed_at(i, t)) kept.push_back(i);
            Vector out = Vector::Constant(static_cast<Index>(rows.size()), kNaN);
            if (kept.empty()) return out;
            const Vector pred = model.predict(design_matrix(data, t, *exposure_ptr, kept, learner.window));
            std::size_t k = 0;
            for (std::size_t q = 0; q < rows.size(); ++q)
                if (data.observed_at(rows[q], t)) out(static_cast<Index>(q)) = pred(static_cast<Index>(k++));
            return out;
        };
    };
    std::vector<std::function<Vector(const Ensemble&, std::span<const Index>)>> designs{
        at(data.exposure(t)), at(p.shifted[static_cast<std::size_t>(t)])};
    auto out = crossfit_predict<Ensemble>(p.folds, fit, designs, p.threads);
    return {std::move(out[0]), std::move(out[1])};
}

inline Diagnostics weight_diagnostics(const RatioEstimates& ratios, const Vector& w, std::uint64_t seed) {
    Diagnostics d;
    d.fold_seed = seed;
    d.truncated = ratios.truncated;
    const Vector prod = ratios.cumulative(ratios.tau() - 1);
    const double mean = wmean(prod, w);
    KahanSum ss;
    double total = 0;
    for (Index i = 0; i < prod.size(); ++i) {
        ss.add(w(i) * (prod(i) - mean) * (prod(i) - mean));
        total += w(i);
    }
    d.weight_cv = std::sqrt(ss.value() / total) / mean;
    d.weight_max = prod.maxCoeff();
    std::vector<double> sorted(prod.data(), prod.data() + prod.size());
    std::sort(sorted.begin(), sorted.end());
    for (int q = 1; q <= 9; ++q) {
        const double pos = q / 10.0 * static_cast<double>(sorted.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, sorted.size() - 1);
        d.weight_deciles.push_back(sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]));
    }
    return d;
}

}  // namespace detail

/// phi_from(Z; eta) by the backward recursion
///   phi_{tau} = Y,  phi_t = r_t (phi_{t+1} - m_t(A_t, H_t)) + m_t(A_t^d, H_t),
/// which expands to the sum of ratio-weighted residuals plus m_t(A_t^d, H_t).
/// Time indices are 0-based; from = tau returns Y. A zero ratio ends the
/// correction, so entries past a dropout are never read.
inline Vector phi_recursion(std::span<const Vector> ratios, std::span<const Vector> m_natural,
                            std::span<const Vector> m_shifted, const Vector& y, int from) {
    const int tau = static_cast<int>(ratios.size());
    if (static_cast<int>(m_natural.size()) != tau || static_cast<int>(m_shifted.size()) != tau)
        throw EstimationError("nuisance vectors are misaligned across time points");
    Vector phi = y;
    for (int s = tau - 1; s >= from; --s) {
        const Vector& r = ratios[static_cast<std::size_t>(s)];
        const Vector& mn = m_natural[static_cast<std::size_t>(s)];
        const Vector& ms = m_shifted[static_cast<std::size_t>(s)];
        if (r.size() != y.size() || mn.size() != y.size() || ms.size() != y.size())
            throw EstimationError("nuisance vectors have inconsistent lengths");
        for (Index i = 0; i < y.size(); ++i) phi(i) = r(i) == 0.0 ? ms(i) : r(i) * (phi(i) - mn(i)) + ms(i);
    }
    return phi;
}

/// Per-observation phi_1 - theta (efficient influence function values).
inline Vector eif_values(const NuisanceSet& eta, const Vector& y_scaled, double theta) {
    const Vector phi = phi_recursion(eta.ratios.ratios, eta.m_natural, eta.m_shifted, y_scaled, 0);
    return (phi.array() - theta).matrix();
}

struct SequentialRegression {
    std::vector<Vector> m_natural;
    std::vector<Vector> m_shifted;
    double theta_scaled = kNaN;
};

/// Iterated conditional expectations: regress Y on (A_tau, H_tau), evaluate at
/// the intervened exposure, and use that as the target at the previous time.
inline SequentialRegression sequential_regressions(const EstimationProblem& p, const LearnerSchedule& learners) {
    const int tau = p.data->tau();
    SequentialRegression out;
    out.m_natural.resize(static_cast<std::size_t>(tau));
    out.m_shifted.resize(static_cast<std::size_t>(tau));
    Vector target = p.y_scaled;
    for (int t = tau - 1; t >= 0; --t) {
        auto [nat, sh] = detail::regress_step(p, t, target, learners.at(t), 200000u);
        target = sh;
        out.m_natural[static_cast<std::size_t>(t)] = std::move(nat);
        out.m_shifted[static_cast<std::size_t>(t)] = std::move(sh);
    }
    out.theta_scaled = detail::wmean(out.m_shifted.front(), p.data->weights());
    return out;
}

/// Substitution estimate from fitted sequential regressions.
inline EstimateResult substitution_result(const EstimationProblem& p, const SequentialRegression& reg) {
    EstimateResult r;
    r.estimator = EstimatorKind::sub;
    r.theta = p.scaler.unscale(reg.theta_scaled);
    r.n = p.data->n();
    r.tau = p.data->tau();
    r.diagnostics.fold_seed = p.folds.seed();
    return r;
}

inline EstimateResult gcomp_sequential(const EstimationProblem& p, const LearnerSchedule& learners) {
    return substitution_result(p, sequential_regressions(p, learners));
}

/// (1/n) sum_i prod_t r_t Y_i on the original outcome scale; trajectories
/// without an outcome contribute 0 through their zero ratio.
inline double ipw_theta(const LongitudinalData& data, const RatioEstimates& ratios) {
    if (ratios.tau() != data.tau()) throw EstimationError("ratios missing for some time points");
    const Vector prod = ratios.cumulative(data.tau() - 1);
    KahanSum num, den;
    for (Index i = 0; i < data.n(); ++i) {
        const double w = data.weights()(i);
        den.add(w);
        if (prod(i) != 0.0 && w != 0.0) num.add(w * prod(i) * data.outcome()(i));
    }
    return num.value() / den.value();
}

inline EstimateResult ipw_estimate(const LongitudinalData& data, const RatioEstimates& ratios, std::uint64_t fold_seed = 0) {
    EstimateResult r;
    r.estimator = EstimatorKind::ipw;
    r.theta = ipw_theta(data, ratios);
    r.n = data.n();
    r.tau = data.tau();
    r.diagnostics = detail::weight_diagnostics(ratios, data.weights(), fold_seed);
    return r;
}

struct TiltOptions {
    double tolerance = 1e-10;  // on |score| / n
    int max_iterations = 100;
    double bound = 10.0;
};

/// Intercept of the weighted logistic tilting model with fixed offset:
/// the root of sum_i w_i (y_i - expit(eps + o_i)). Newton first, bisection on
/// [-bound, bound] when Newton leaves the bracket or stalls.
inline double tilt_step(const Vector& pseudo_y, const Vector& offset, const Vector& weights, const TiltOptions& opt = {}) {
    if (pseudo_y.size() != offset.size() || offset.size() != weights.size())
        throw EstimationError("tilting inputs differ in length");
    if ((weights.array() < 0).any() || !(weights.sum() > 0)) throw EstimationError("tilting weights must be nonnegative and not all zero");
    if (!offset.allFinite()) throw EstimationError("tilting offsets must be finite");
    const auto n = static_cast<double>(pseudo_y.size());
    auto score = [&](double eps, double* slope) {
        KahanSum s, d;
        for (Index i = 0; i < pseudo_y.size(); ++i) {
            if (weights(i) == 0.0) continue;
            const double q = expit(eps + offset(i));
            s.add(weights(i) * (pseudo_y(i) - q));
            d.add(weights(i) * q * (1 - q));
        }
        if (slope) *slope = -d.value();
        return s.value();
    };

    double eps = 0.0;
    for (int iter = 0; iter < opt.max_iterations; ++iter) {
        double slope;
        const double s = score(eps, &slope);
        if (std::abs(s) / n <= opt.tolerance) return eps;
        if (!(slope < 0)) break;
        eps -= s / slope;
        if (!(std::abs(eps) <= opt.bound)) break;
    }

    double lo = -opt.bound, hi = opt.bound;
    double s_lo = score(lo, nullptr), s_hi = score(hi, nullptr);
    if (std::abs(s_lo) / n <= opt.tolerance) return lo;
    if (std::abs(s_hi) / n <= opt.tolerance) return hi;
    if (!(s_lo > 0 && s_hi < 0))
        throw EstimationError("tilting diverged: no root in [-" + std::to_string(opt.bound) + ", " + std::to_string(opt.bound) +
                              "]; consider truncating the density ratios");
    for (int iter = 0; iter < 200; ++iter) {
        const double mid = 0.5 * (lo + hi);
        double slope;
        const double s = score(mid, &slope);
        if (std::abs(s) / n <= opt.tolerance) return mid;
        (s > 0 ? lo : hi) = mid;
        if (hi - lo < 1e-14) break;
    }
    // Polish from the bracket midpoint.
    eps = 0.5 * (lo + hi);
    for (int iter = 0; iter < 20; ++iter) {
        double slope;
        const double s = score(eps, &slope);
        if (std::abs(s) / n <= opt.tolerance) return eps;
        const double next = eps - s / slope;
        if (!(next >= lo && next <= hi)) break;
        eps = next;
    }
    return eps;
}

namespace detail {

inline double clamp_unit(double m) { return std::clamp(m, 1e-12, 1.0 - 1e-12); }

inline void finish_with_eif(EstimateResult& r, const EstimationProblem& p, double theta_scaled, const Vector& phi) {
    const LongitudinalData& data = *p.data;
    r.n = data.n();
    r.tau = data.tau();
    double theta = p.scaler.unscale(theta_scaled);
    const auto b = data.bounds();
    if (theta < b.lower || theta > b.upper) {
        theta = std::clamp(theta, b.lower, b.upper);
        r.diagnostics.clamped_to_bounds = true;
    }
    r.theta = theta;
    r.eif = phi.unaryExpr([&](double v) { return p.scaler.unscale(v); });
    const WaldInterval w = wald_interval(theta, r.eif, r.level, data.weights());
    r.se = w.se;
    r.ci = std::make_pair(w.low, w.high);
    r.diagnostics.score_residual = wmean(phi, data.weights()) - theta_scaled;
}

}  // namespace detail

/// Targeted estimate: a single backward pass of logistic intercept tilts of
/// the initial regressions, weighted by cumulative ratio products computed
/// once from the initial ratios, fit on all rows pooled across folds.
inline EstimateResult tmle_estimate(const EstimationProblem& p, const NuisanceSet& initial, double level = 0.95,
                                    NuisanceSet* targeted = nullptr) {
    const LongitudinalData& data = *p.data;
    const int tau = data.tau();
    if (initial.ratios.tau() != tau || static_cast<int>(initial.m_natural.size()) != tau ||
        static_cast<int>(initial.m_shifted.size()) != tau)
        throw EstimationError("incomplete nuisance set");
    NuisanceSet eta = initial;
    Vector pseudo = p.y_scaled;
    for (int t = tau - 1; t >= 0; --t) {
        const Vector omega = initial.ratios.cumulative(t).cwiseProduct(data.weights());
        Vector& mn = eta.m_natural[static_cast<std::size_t>(t)];
        Vector& ms = eta.m_shifted[static_cast<std::size_t>(t)];
        std::vector<Index> rows;
        for (Index i = 0; i < data.n(); ++i)
            if (omega(i) > 0) rows.push_back(i);
        double eps = 0.0;
        if (!rows.empty()) {
            const auto m = static_cast<Index>(rows.size());
            Vector y(m), o(m), w(m);
            for (Index r = 0; r < m; ++r) {
                const Index i = rows[static_cast<std::size_t>(r)];
                y(r) = pseudo(i);
                o(r) = logit(detail::clamp_unit(mn(i)));
                w(r) = omega(i);
            }
            if (!y.allFinite()) throw EstimationError("missing pseudo-outcome for a positively weighted row at time " + std::to_string(t + 1));
            try {
                eps = tilt_step(y, o, w);
            } catch (const EstimationError& e) {
                throw EstimationError("time " + std::to_string(t + 1) + ": " + e.what());
            }
        }
        for (Index i = 0; i < data.n(); ++i) {
            if (!data.observed_at(i, t)) continue;
            mn(i) = expit(eps + logit(detail::clamp_unit(mn(i))));
            ms(i) = expit(eps + logit(detail::clamp_unit(ms(i))));
        }
        pseudo = ms;
    }
    const double theta_scaled = detail::wmean(eta.m_shifted.front(), data.weights());
    const Vector phi = phi_recursion(eta.ratios.ratios, eta.m_natural, eta.m_shifted, p.y_scaled, 0);

    EstimateResult r;
    r.estimator = EstimatorKind::tmle;
    r.level = level;
    r.diagnostics = detail::weight_diagnostics(initial.ratios, data.weights(), p.folds.seed());
    detail::finish_with_eif(r, p, theta_scaled, phi);
    if (targeted) *targeted = std::move(eta);
    return r;
}

/// Sequentially doubly robust estimate: regress the pseudo-outcome
/// phi_{t+1}(Z; eta) backward in time, then average phi_1.
inline EstimateResult sdr_estimate(const EstimationProblem& p, const RatioEstimates& ratios, const LearnerSchedule& learners,
                                   double level = 0.95, NuisanceSet* fitted = nullptr) {
    const LongitudinalData& data = *p.data;
    const int tau = data.tau();
    if (ratios.tau() != tau) throw EstimationError("ratios missing for some time points");
    NuisanceSet eta;
    eta.ratios = ratios;
    eta.m_natural.resize(static_cast<std::size_t>(tau));
    eta.m_shifted.resize(static_cast<std::size_t>(tau));
    Vector phi = p.y_scaled;
    for (int t = tau - 1; t >= 0; --t) {
        auto [nat, sh] = detail::regress_step(p, t, phi, learners.at(t), 300000u);
        const Vector& r = ratios.at(t);
        for (Index i = 0; i < data.n(); ++i) phi(i) = r(i) == 0.0 ? sh(i) : r(i) * (phi(i) - nat(i)) + sh(i);
        eta.m_natural[static_cast<std::size_t>(t)] = std::move(nat);
        eta.m_shifted[static_cast<std::size_t>(t)] = std::move(sh);
    }
    EstimateResult res;
    res.estimator = EstimatorKind::sdr;
    res.level = level;
    res.diagnostics = detail::weight_diagnostics(ratios, data.weights(), p.folds.seed());
    detail::finish_with_eif(res, p, detail::wmean(phi, data.weights()), phi);
    if (fitted) *fitted = std::move(eta);
    return res;
}

}  // namespace lmtp
