#pragma once

// Four-period data generating mechanism used by the simulation study:
//
//   L1 ~ Cat(0.5, 0.25, 0.25) on {1, 2, 3}
//   A1 | L1 ~ Binomial(5, 0.5 * 1(L1 > 1) + 0.1 * 1(L1 > 2))
//   Lt | past ~ Bernoulli(expit(-0.3 L_{t-1} + 0.5 A_{t-1}))            t = 2, 3, 4
//   At | past ~ Binomial(5, expit(-2 + 1 / (1 + 2 Lt + A_{t-1})))         t = 2, 3
//   A4 | past ~ Binomial(5, expit(1 + L4 - 3 A3))
//   Y  | past ~ Bernoulli(expit(-2 + 1 / (1 - 1.2 A4 - 0.3 L4)))
//
// The mechanism is first-order Markov, so the exact nuisances depend on
// (A_t, L_t, A_{t-1}) only and can be tabulated by enumeration.

#include "lmtp/estimators.hpp"
#include "lmtp/parallel.hpp"
#include "lmtp/policy.hpp"
#include "lmtp/random.hpp"

#include <array>
#include <cmath>
#include <functional>
#include <tuple>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace lmtp::sim {

inline constexpr int kDgpTau = 4;
inline constexpr int kTrials = 5;

struct DgpSpec {
    Index n = 1000;
    std::uint64_t seed = 1;
};

namespace dgp {

inline constexpr std::array<double, 3> kL1Probs{0.5, 0.25, 0.25};

inline double a1_success(int l1) { return (l1 > 1 ? 0.5 : 0.0) + (l1 > 2 ? 0.1 : 0.0); }
inline double l_success(double l_prev, double a_prev) { return expit(-0.3 * l_prev + 0.5 * a_prev); }
/// Success probability of A_t (0-based t = 1, 2, 3) given L_t and A_{t-1}.
inline double a_success(int t, double l, double a_prev) {
    if (t == 3) return expit(1.0 + l - 3.0 * a_prev);
    return expit(-2.0 + 1.0 / (1.0 + 2.0 * l + a_prev));
}
inline double y_success(double a4, double l4) { return expit(-2.0 + 1.0 / (1.0 - 1.2 * a4 - 0.3 * l4)); }

inline double binomial_pmf(int k, int trials, double p) {
    if (k < 0 || k > trials) return 0.0;
    double c = 1.0;
    for (int j = 1; j <= k; ++j) c = c * (trials - k + j) / j;
    return c * std::pow(p, k) * std::pow(1.0 - p, trials - k);
}

}  // namespace dgp

/// Draws n trajectories. L1 is stored one-hot (levels "1", "2", "3").
inline LongitudinalData generate_dataset(const DgpSpec& spec) {
    if (spec.n < 1) throw ConfigError("dataset size must be positive");
    const Index n = spec.n;
    Rng rng(spec.seed);
    std::vector<TimePoint> times(kDgpTau);
    times[0].covariates.resize(n, 3);
    times[0].columns = {{"L1=1", "L1", "1"}, {"L1=2", "L1", "2"}, {"L1=3", "L1", "3"}};
    for (int t = 1; t < kDgpTau; ++t) {
        times[static_cast<std::size_t>(t)].covariates.resize(n, 1);
        times[static_cast<std::size_t>(t)].columns = {{"L" + std::to_string(t + 1), "", ""}};
    }
    for (auto& tp : times) tp.exposure.resize(n);
    Vector y(n);
    std::vector<std::string> ids;
    ids.reserve(static_cast<std::size_t>(n));

    for (Index i = 0; i < n; ++i) {
        ids.push_back(std::to_string(i + 1));
        const int l1 = rng.categorical(dgp::kL1Probs) + 1;
        times[0].covariates.row(i).setZero();
        times[0].covariates(i, l1 - 1) = 1.0;
        double a_prev = rng.binomial(kTrials, dgp::a1_success(l1));
        double l_prev = l1;
        times[0].exposure(i) = a_prev;
        for (int t = 1; t < kDgpTau; ++t) {
            const double l = rng.bernoulli(dgp::l_success(l_prev, a_prev)) ? 1.0 : 0.0;
            const double a = rng.binomial(kTrials, dgp::a_success(t, l, a_prev));
            times[static_cast<std::size_t>(t)].covariates(i, 0) = l;
            times[static_cast<std::size_t>(t)].exposure(i) = a;
            l_prev = l;
            a_prev = a;
        }
        y(i) = rng.bernoulli(dgp::y_success(a_prev, l_prev)) ? 1.0 : 0.0;
    }
    return LongitudinalData(std::move(ids), std::move(times), std::move(y), OutcomeBounds{0.0, 1.0});
}

struct MonteCarloEstimate {
    double mean;
    double se;
};

/// Counterfactual mean by forward simulation: at each time the natural
/// exposure is drawn given the intervened past and then replaced by d(a).
/// Work is split into fixed chunks with derived seeds, so the value does not
/// depend on the thread count.
inline MonteCarloEstimate oracle_theta_mc(const Policy& policy, std::int64_t draws, std::uint64_t seed, int threads = 1) {
    if (draws < 2) throw ConfigError("need at least 2 draws");
    constexpr std::int64_t kChunks = 64;
    std::vector<std::pair<double, double>> partial(kChunks, {0.0, 0.0});
    parallel_for(kChunks, threads, [&](std::size_t c) {
        const std::int64_t begin = draws * static_cast<std::int64_t>(c) / kChunks;
        const std::int64_t end = draws * static_cast<std::int64_t>(c + 1) / kChunks;
        Rng rng(derive_seed(seed, c));
        double ones = 0;
        for (std::int64_t k = begin; k < end; ++k) {
            const int l1 = rng.categorical(dgp::kL1Probs) + 1;
            double a = policy.apply(0, rng.binomial(kTrials, dgp::a1_success(l1)));
            double l = l1;
            for (int t = 1; t < kDgpTau; ++t) {
                l = rng.bernoulli(dgp::l_success(l, a)) ? 1.0 : 0.0;
                a = policy.apply(t, rng.binomial(kTrials, dgp::a_success(t, l, a)));
            }
            ones += rng.bernoulli(dgp::y_success(a, l)) ? 1.0 : 0.0;
        }
        partial[c] = {ones, static_cast<double>(end - begin)};
    });
    double ones = 0, total = 0;
    for (const auto& [o, m] : partial) {
        ones += o;
        total += m;
    }
    const double mean = ones / total;
    // Bernoulli outcome: sample variance from the proportion.
    const double var = mean * (1 - mean) * total / (total - 1);
    return {mean, std::sqrt(var / total)};
}

/// Exact nuisances of the mechanism under a policy, by enumeration.
class DgpOracle {
public:
    explicit DgpOracle(Policy policy) : policy_(std::move(policy)) {}

    /// m_t(a, l) with l = L_t (L1 on its {1, 2, 3} scale at t = 0). The
    /// Markov structure makes m_t free of the rest of the history.
    double m(int t, double a, double l) const {
        const auto key = std::make_tuple(t, a, l);
        if (const auto it = memo_.find(key); it != memo_.end()) return it->second;
        double v;
        if (t == kDgpTau - 1) {
            v = dgp::y_success(a, l);
        } else {
            v = 0.0;
            const double pl = dgp::l_success(l, a);
            for (int ln = 0; ln <= 1; ++ln) {
                const double pln = ln == 1 ? pl : 1 - pl;
                const double pa = dgp::a_success(t + 1, ln, a);
                for (int s = 0; s <= kTrials; ++s)
                    v += pln * dgp::binomial_pmf(s, kTrials, pa) * m(t + 1, policy_.apply(t + 1, s), ln);
            }
        }
        memo_.emplace(key, v);
        return v;
    }

    /// Success probability of A_t given L_t and A_{t-1} (a_prev unused at t = 0).
    static double exposure_success(int t, double l, double a_prev) {
        return t == 0 ? dgp::a1_success(static_cast<int>(l)) : dgp::a_success(t, l, a_prev);
    }

    /// r_t(a, h) = g^d(a | h) / g(a | h); 0 where g vanishes.
    double r(int t, double a, double l, double a_prev) const {
        const double p = exposure_success(t, l, a_prev);
        const double g = dgp::binomial_pmf(static_cast<int>(a), kTrials, p);
        if (g == 0.0) return 0.0;
        double gd = 0.0;
        for (int s = 0; s <= kTrials; ++s)
            if (policy_.apply(t, s) == a) gd += dgp::binomial_pmf(s, kTrials, p);
        return gd / g;
    }

    double theta() const {
        double v = 0.0;
        for (int l1 = 1; l1 <= 3; ++l1)
            for (int s = 0; s <= kTrials; ++s)
                v += dgp::kL1Probs[static_cast<std::size_t>(l1 - 1)] * dgp::binomial_pmf(s, kTrials, dgp::a1_success(l1)) *
                     m(0, policy_.apply(0, s), l1);
        return v;
    }

    /// Var(phi_1) over the full enumeration of trajectories (3 * 6^4 * 2^4 atoms).
    double efficiency_bound() const {
        const double th = theta();
        KahanSum acc;
        // Depth-first over (L1, A1, L2, A2, ..., Y).
        std::function<void(int, double, double, double, double, double)> walk = [&](int t, double l, double a_prev, double prob,
                                                                                   double cum_r, double partial) {
            const double p = exposure_success(t, l, a_prev);
            for (int a = 0; a <= kTrials; ++a) {
                const double pa = dgp::binomial_pmf(a, kTrials, p);
                if (pa == 0.0) continue;
                const double rt = r(t, a, l, a_prev);
                const double w = cum_r * rt;
                const double mn = m(t, a, l);
                const double ms = m(t, policy_.apply(t, a), l);
                // phi_1 = m_1(A1^d) + sum_s W_s (m_{s+1}(A^d) - m_s(A_s)); adding m_t(A_t^d) for t > 0 is
                // the previous term's m_{s+1}(A^d_{s+1}) contribution.
                double base = partial + (t == 0 ? ms : cum_r * ms) - w * mn;
                if (t == kDgpTau - 1) {
                    const double py = dgp::y_success(a, l);
                    for (int y = 0; y <= 1; ++y) {
                        const double phi = base + w * y;
                        acc.add(prob * pa * (y == 1 ? py : 1 - py) * (phi - th) * (phi - th));
                    }
                } else {
                    const double pl = dgp::l_success(l, a);
                    for (int ln = 0; ln <= 1; ++ln) walk(t + 1, ln, a, prob * pa * (ln == 1 ? pl : 1 - pl), w, base);
                }
            }
        };
        for (int l1 = 1; l1 <= 3; ++l1) walk(0, l1, 0.0, dgp::kL1Probs[static_cast<std::size_t>(l1 - 1)], 1.0, 0.0);
        return acc.value();
    }

    /// Exact nuisances evaluated on a generated dataset, on the scaled outcome.
    NuisanceSet nuisances(const LongitudinalData& data, const OutcomeScaler& scaler) const {
        NuisanceSet eta;
        for (int t = 0; t < data.tau(); ++t) {
            Vector r(data.n()), mn(data.n()), ms(data.n());
            for (Index i = 0; i < data.n(); ++i) {
                const double l = covariate_value(data, t, i);
                const double a = data.exposure(t)(i);
                const double a_prev = t == 0 ? 0.0 : data.exposure(t - 1)(i);
                r(i) = this->r(t, a, l, a_prev);
                mn(i) = scaler.scale(m(t, a, l));
                ms(i) = scaler.scale(m(t, policy_.apply(t, a), l));
            }
            eta.ratios.ratios.push_back(r);
            eta.m_natural.push_back(mn);
            eta.m_shifted.push_back(ms);
        }
        return eta;
    }

    /// L_t as used by the mechanism: the category of L1, the binary value later.
    static double covariate_value(const LongitudinalData& data, int t, Index i) {
        const Matrix& l = data.covariates(t);
        if (t > 0) return l(i, 0);
        for (Index k = 0; k < l.cols(); ++k)
            if (l(i, k) == 1.0) return std::stod(data.time(0).columns[static_cast<std::size_t>(k)].level);
        throw ValidationError("L1 one-hot row has no active level");
    }

    const Policy& policy() const { return policy_; }

private:
    Policy policy_;
    mutable std::map<std::tuple<int, double, double>, double> memo_;
};

}  // namespace lmtp::sim
