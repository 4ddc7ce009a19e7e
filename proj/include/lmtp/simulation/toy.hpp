#pragma once

// A two-period structural model with L_t in {0, 1}, A_t in {0, 1, 2} and a
// binary outcome, small enough that every nuisance and the target parameter
// can be computed by summing over its 72 atoms.

#include "lmtp/estimators.hpp"
#include "lmtp/policy.hpp"
#include "lmtp/random.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace lmtp::sim {

class ToyModel {
public:
    static constexpr int kLevels = 3;  // exposure values 0, 1, 2
    static constexpr int kTau = 2;
    static constexpr int kCells0 = 2 * kLevels;              // (l1, a1)
    static constexpr int kCells1 = 2 * kLevels * 2 * kLevels;  // (l1, a1, l2, a2)

    struct Atom {
        int l1, a1, l2, a2, y;
        double prob;
    };

    /// Random conditional tables, each probability at least ~0.1 so that
    /// positivity holds for any policy mapping {0, 1, 2} into itself.
    static ToyModel random(std::uint64_t seed) {
        Rng rng(seed);
        ToyModel m;
        m.p_l1 = 0.2 + 0.6 * rng.uniform();
        for (int l1 = 0; l1 < 2; ++l1) {
            m.g1[static_cast<std::size_t>(l1)] = simplex(rng);
            for (int a1 = 0; a1 < kLevels; ++a1) {
                m.p_l2[static_cast<std::size_t>(l1 * kLevels + a1)] = 0.1 + 0.8 * rng.uniform();
                for (int l2 = 0; l2 < 2; ++l2) {
                    m.g2[static_cast<std::size_t>(h2(l1, a1, l2))] = simplex(rng);
                    for (int a2 = 0; a2 < kLevels; ++a2) m.p_y[static_cast<std::size_t>(cell1(l1, a1, l2, a2))] = 0.05 + 0.9 * rng.uniform();
                }
            }
        }
        return m;
    }

    static int cell0(int l1, int a1) { return l1 * kLevels + a1; }
    static int h2(int l1, int a1, int l2) { return (l1 * kLevels + a1) * 2 + l2; }
    static int cell1(int l1, int a1, int l2, int a2) { return h2(l1, a1, l2) * kLevels + a2; }

    double prob_l1(int l1) const { return l1 == 1 ? p_l1 : 1 - p_l1; }
    double prob_a1(int a1, int l1) const { return g1[static_cast<std::size_t>(l1)][static_cast<std::size_t>(a1)]; }
    double prob_l2(int l2, int l1, int a1) const {
        const double p = p_l2[static_cast<std::size_t>(cell0(l1, a1))];
        return l2 == 1 ? p : 1 - p;
    }
    double prob_a2(int a2, int l1, int a1, int l2) const {
        return g2[static_cast<std::size_t>(h2(l1, a1, l2))][static_cast<std::size_t>(a2)];
    }
    double prob_y(int y, int l1, int a1, int l2, int a2) const {
        const double p = p_y[static_cast<std::size_t>(cell1(l1, a1, l2, a2))];
        return y == 1 ? p : 1 - p;
    }

    std::vector<Atom> atoms() const {
        std::vector<Atom> out;
        for (int l1 = 0; l1 < 2; ++l1)
            for (int a1 = 0; a1 < kLevels; ++a1)
                for (int l2 = 0; l2 < 2; ++l2)
                    for (int a2 = 0; a2 < kLevels; ++a2)
                        for (int y = 0; y < 2; ++y)
                            out.push_back({l1, a1, l2, a2, y,
                                           prob_l1(l1) * prob_a1(a1, l1) * prob_l2(l2, l1, a1) * prob_a2(a2, l1, a1, l2) *
                                               prob_y(y, l1, a1, l2, a2)});
        return out;
    }

    /// The population as a weighted dataset: one row per atom, weight = probability.
    LongitudinalData population() const {
        const auto all = atoms();
        const auto n = static_cast<Index>(all.size());
        std::vector<TimePoint> times(kTau);
        times[0].columns = {{"L1", "", ""}};
        times[1].columns = {{"L2", "", ""}};
        for (auto& tp : times) {
            tp.covariates.resize(n, 1);
            tp.exposure.resize(n);
        }
        Vector y(n), w(n);
        std::vector<std::string> ids;
        for (Index i = 0; i < n; ++i) {
            const Atom& a = all[static_cast<std::size_t>(i)];
            ids.push_back(std::to_string(i + 1));
            times[0].covariates(i, 0) = a.l1;
            times[0].exposure(i) = a.a1;
            times[1].covariates(i, 0) = a.l2;
            times[1].exposure(i) = a.a2;
            y(i) = a.y;
            w(i) = a.prob;
        }
        return LongitudinalData(std::move(ids), std::move(times), std::move(y), OutcomeBounds{0.0, 1.0}, std::move(w));
    }

    /// Nuisance tables indexed by cell0 (t = 0) and cell1 (t = 1).
    struct Tables {
        std::array<std::vector<double>, kTau> m;
        std::array<std::vector<double>, kTau> r;
    };

    Tables exact(const Policy& policy) const {
        Tables tab;
        tab.m[1].assign(kCells1, 0.0);
        tab.r[1].assign(kCells1, 0.0);
        tab.m[0].assign(kCells0, 0.0);
        tab.r[0].assign(kCells0, 0.0);
        auto d = [&](int t, int a) {
            const double v = policy.apply(t, a);
            if (v != 0.0 && v != 1.0 && v != 2.0) throw DomainError("policy leaves the toy exposure support");
            return static_cast<int>(v);
        };
        for (int l1 = 0; l1 < 2; ++l1)
            for (int a1 = 0; a1 < kLevels; ++a1)
                for (int l2 = 0; l2 < 2; ++l2)
                    for (int a2 = 0; a2 < kLevels; ++a2) {
                        const auto c = static_cast<std::size_t>(cell1(l1, a1, l2, a2));
                        tab.m[1][c] = prob_y(1, l1, a1, l2, a2);
                        double gd = 0;
                        for (int s = 0; s < kLevels; ++s)
                            if (d(1, s) == a2) gd += prob_a2(s, l1, a1, l2);
                        tab.r[1][c] = gd / prob_a2(a2, l1, a1, l2);
                    }
        for (int l1 = 0; l1 < 2; ++l1)
            for (int a1 = 0; a1 < kLevels; ++a1) {
                const auto c = static_cast<std::size_t>(cell0(l1, a1));
                double v = 0;
                for (int l2 = 0; l2 < 2; ++l2)
                    for (int s = 0; s < kLevels; ++s)
                        v += prob_l2(l2, l1, a1) * prob_a2(s, l1, a1, l2) * tab.m[1][static_cast<std::size_t>(cell1(l1, a1, l2, d(1, s)))];
                tab.m[0][c] = v;
                double gd = 0;
                for (int s = 0; s < kLevels; ++s)
                    if (d(0, s) == a1) gd += prob_a1(s, l1);
                tab.r[0][c] = gd / prob_a1(a1, l1);
            }
        return tab;
    }

    /// theta = sum over l1 and natural a1 of P(l1) g1(a1 | l1) m_1(d(a1), l1).
    double exhaustive_theta(const Policy& policy) const {
        const Tables tab = exact(policy);
        double v = 0;
        for (int l1 = 0; l1 < 2; ++l1)
            for (int s = 0; s < kLevels; ++s)
                v += prob_l1(l1) * prob_a1(s, l1) *
                     tab.m[0][static_cast<std::size_t>(cell0(l1, static_cast<int>(policy.apply(0, s))))];
        return v;
    }

    /// Cell of atom a at time t, at its natural exposure or at d(A_t).
    static int cell(const Atom& a, int t, const Policy* policy = nullptr) {
        if (t == 0) return cell0(a.l1, policy ? static_cast<int>(policy->apply(0, a.a1)) : a.a1);
        return cell1(a.l1, a.a1, a.l2, policy ? static_cast<int>(policy->apply(1, a.a2)) : a.a2);
    }

    /// Table values spread over the atoms as the nuisance vectors the
    /// estimators consume (natural and intervened m, ratios), on the scale of
    /// `scaler`.
    NuisanceSet nuisance_set(const Tables& tab, const Policy& policy, const OutcomeScaler& scaler) const {
        const auto all = atoms();
        const auto n = static_cast<Index>(all.size());
        NuisanceSet eta;
        for (int t = 0; t < kTau; ++t) {
            Vector r(n), mn(n), ms(n);
            for (Index i = 0; i < n; ++i) {
                const Atom& a = all[static_cast<std::size_t>(i)];
                r(i) = tab.r[static_cast<std::size_t>(t)][static_cast<std::size_t>(cell(a, t))];
                mn(i) = scaler.scale(tab.m[static_cast<std::size_t>(t)][static_cast<std::size_t>(cell(a, t))]);
                ms(i) = scaler.scale(tab.m[static_cast<std::size_t>(t)][static_cast<std::size_t>(cell(a, t, &policy))]);
            }
            eta.ratios.ratios.push_back(r);
            eta.m_natural.push_back(mn);
            eta.m_shifted.push_back(ms);
        }
        return eta;
    }

    /// Forward simulation under the policy.
    std::pair<double, double> oracle_theta_mc(const Policy& policy, std::int64_t draws, std::uint64_t seed) const {
        Rng rng(seed);
        double ones = 0;
        for (std::int64_t k = 0; k < draws; ++k) {
            const int l1 = rng.bernoulli(p_l1) ? 1 : 0;
            const int a1 = static_cast<int>(policy.apply(0, rng.categorical(g1[static_cast<std::size_t>(l1)])));
            const int l2 = rng.bernoulli(prob_l2(1, l1, a1)) ? 1 : 0;
            const int a2 = static_cast<int>(policy.apply(1, rng.categorical(g2[static_cast<std::size_t>(h2(l1, a1, l2))])));
            ones += rng.bernoulli(prob_y(1, l1, a1, l2, a2)) ? 1.0 : 0.0;
        }
        const double mean = ones / static_cast<double>(draws);
        return {mean, std::sqrt(mean * (1 - mean) / static_cast<double>(draws - 1))};
    }

    double p_l1 = 0.5;
    std::array<std::array<double, kLevels>, 2> g1{};
    std::array<double, kCells0> p_l2{};
    std::array<std::array<double, kLevels>, 2 * kLevels * 2> g2{};
    std::array<double, kCells1> p_y{};

private:
    static std::array<double, kLevels> simplex(Rng& rng) {
        std::array<double, kLevels> p{};
        double total = 0;
        for (auto& v : p) total += (v = 0.3 + rng.uniform());
        for (auto& v : p) v /= total;
        return p;
    }
};

}  // namespace lmtp::sim
