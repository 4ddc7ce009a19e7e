#pragma once

// Deterministic modified treatment policies a_t -> d(a_t, h_t).

#include "lmtp/data.hpp"

#include <functional>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace lmtp {

enum class PolicyKind {
    identity,
    additive_shift,        // a + delta when a <= u(h) - delta, else a
    clamped_decrement,     // a - 1 when a >= threshold, else a
    multiplicative_shift,  // a * factor
    discrete_map,          // lookup table
    threshold,             // min(a, delta); discrete exposures only
};

struct PolicyRule {
    PolicyKind kind = PolicyKind::identity;
    double delta = 0.0;
    double threshold = 1.0;
    double factor = 1.0;
    std::optional<double> upper_constant;
    std::string upper_column;  // covariate of L_t supplying u_t(h_t)
    std::map<double, double> table;
};

/// Declared exposure support. Empty `values` with infinite bounds accepts everything.
struct ExposureSupport {
    std::vector<double> values;
    double lower = -std::numeric_limits<double>::infinity();
    double upper = std::numeric_limits<double>::infinity();

    bool contains(double a) const {
        if (!values.empty()) return std::find(values.begin(), values.end(), a) != values.end();
        return a >= lower && a <= upper;
    }
    bool discrete() const { return !values.empty(); }
};

class Policy {
public:
    Policy() = default;
    explicit Policy(PolicyRule rule, ExposureSupport support = {}) : rules_{std::move(rule)}, support_(std::move(support)) {}

    static Policy identity() { return Policy(PolicyRule{}); }
    static Policy additive_shift(double delta, std::optional<double> upper = std::nullopt) {
        PolicyRule r;
        r.kind = PolicyKind::additive_shift;
        r.delta = delta;
        r.upper_constant = upper;
        return Policy(r);
    }
    static Policy clamped_decrement(double threshold = 1.0) {
        PolicyRule r;
        r.kind = PolicyKind::clamped_decrement;
        r.threshold = threshold;
        return Policy(r);
    }
    static Policy multiplicative_shift(double factor) {
        PolicyRule r;
        r.kind = PolicyKind::multiplicative_shift;
        r.factor = factor;
        return Policy(r);
    }
    static Policy discrete_map(std::map<double, double> table) {
        PolicyRule r;
        r.kind = PolicyKind::discrete_map;
        r.table = std::move(table);
        return Policy(r);
    }
    static Policy threshold(double level) {
        PolicyRule r;
        r.kind = PolicyKind::threshold;
        r.delta = level;
        return Policy(r);
    }

    /// Replaces the rule used at each time point; `rules.size()` must equal tau.
    Policy with_time_rules(std::vector<PolicyRule> rules) const {
        Policy p = *this;
        p.rules_ = std::move(rules);
        return p;
    }
    Policy with_support(ExposureSupport support) const {
        Policy p = *this;
        p.support_ = std::move(support);
        return p;
    }

    const PolicyRule& rule(int t) const {
        if (rules_.size() == 1) return rules_.front();
        return rules_.at(static_cast<std::size_t>(t));
    }
    std::size_t rule_count() const { return rules_.size(); }
    const ExposureSupport& support() const { return support_; }

    /// d(a) at time t given the resolved clamp u_t(h_t).
    double apply(int t, double a, double upper = std::numeric_limits<double>::infinity()) const {
        if (!support_.contains(a)) throw DomainError("exposure " + std::to_string(a) + " outside declared support");
        const PolicyRule& r = rule(t);
        switch (r.kind) {
        case PolicyKind::identity: return a;
        case PolicyKind::additive_shift: {
            const double u = r.upper_constant ? std::min(*r.upper_constant, upper) : upper;
            return a <= u - r.delta ? a + r.delta : a;
        }
        case PolicyKind::clamped_decrement: return a >= r.threshold ? a - 1.0 : a;
        case PolicyKind::multiplicative_shift: return a * r.factor;
        case PolicyKind::discrete_map: {
            const auto it = r.table.find(a);
            if (it == r.table.end()) throw DomainError("exposure " + std::to_string(a) + " missing from policy map");
            return it->second;
        }
        case PolicyKind::threshold: return a <= r.delta ? a : r.delta;
        }
        return a;
    }

    /// d(a, h): reads u_t(h_t) from the history when the rule names a clamp column.
    double apply(double a, const HistoryView& h) const {
        const PolicyRule& r = rule(h.time);
        double upper = std::numeric_limits<double>::infinity();
        if (r.kind == PolicyKind::additive_shift && !r.upper_column.empty()) {
            const auto u = h.find(r.upper_column);
            if (!u) throw ConfigError("policy clamp column '" + r.upper_column + "' is not part of the history");
            upper = *u;
        }
        return apply(h.time, a, upper);
    }

private:
    std::vector<PolicyRule> rules_{PolicyRule{}};
    ExposureSupport support_;
};

inline double apply_policy(const Policy& policy, double a, const HistoryView& h) { return policy.apply(a, h); }

namespace detail {

inline bool integer_valued(const Vector& v) {
    for (Index i = 0; i < v.size(); ++i)
        if (std::isfinite(v(i)) && v(i) != std::round(v(i))) return false;
    return true;
}

inline Index find_covariate(const LongitudinalData& data, int t, const std::string& name) {
    const auto& cols = data.time(t).columns;
    for (std::size_t k = 0; k < cols.size(); ++k)
        if (cols[k].name == name) return static_cast<Index>(k);
    throw ConfigError("policy clamp column '" + name + "' not found among time " + std::to_string(t + 1) + " covariates");
}

}  // namespace detail

/// A_t^d for every observed cell, evaluated at the observed history. Cells of
/// trajectories no longer observed at t are NaN.
inline std::vector<Vector> shifted_exposures(const LongitudinalData& data, const Policy& policy) {
    if (policy.rule_count() != 1 && static_cast<int>(policy.rule_count()) != data.tau())
        throw ConfigError("policy lists " + std::to_string(policy.rule_count()) + " time rules for " +
                          std::to_string(data.tau()) + " time points");
    std::vector<Vector> out;
    out.reserve(static_cast<std::size_t>(data.tau()));
    for (int t = 0; t < data.tau(); ++t) {
        const PolicyRule& r = policy.rule(t);
        const Vector& a = data.exposure(t);
        if (r.kind == PolicyKind::threshold && !policy.support().discrete() && !detail::integer_valued(a))
            throw ConfigError("threshold policies require discrete exposures: for continuous exposures the "
                              "parameter is not pathwise differentiable and has no root-n estimator");
        Index clamp_col = -1;
        if (r.kind == PolicyKind::additive_shift && !r.upper_column.empty())
            clamp_col = detail::find_covariate(data, t, r.upper_column);
        Vector shifted = Vector::Constant(data.n(), kNaN);
        for (Index i = 0; i < data.n(); ++i) {
            if (!data.observed_at(i, t)) continue;
            const double upper = clamp_col >= 0 ? data.covariates(t)(i, clamp_col) : std::numeric_limits<double>::infinity();
            try {
                shifted(i) = policy.apply(t, a(i), upper);
            } catch (const DomainError& e) {
                throw DomainError(std::string(e.what()) + " (trajectory " + data.ids()[static_cast<std::size_t>(i)] +
                                  ", time " + std::to_string(t + 1) + ")");
            }
        }
        out.push_back(std::move(shifted));
    }
    return out;
}

/// Probability table over a finite exposure support.
struct DiscreteDensity {
    std::vector<double> values;
    std::vector<double> probs;

    double at(double a) const {
        for (std::size_t k = 0; k < values.size(); ++k)
            if (values[k] == a) return probs[k];
        return 0.0;
    }
    double total() const {
        KahanSum s;
        for (double p : probs) s.add(p);
        return s.value();
    }
};

/// Post-intervention pmf g^d(a|h) = sum_s 1{d(s,h) = a} g(s|h). The result is
/// reported on the union of the base support and its image.
inline DiscreteDensity analytic_shifted_density(const Policy& policy, int t, const DiscreteDensity& base,
                                                double upper = std::numeric_limits<double>::infinity()) {
    if (base.values.size() != base.probs.size()) throw std::invalid_argument("pmf support and probabilities differ in length");
    for (double p : base.probs)
        if (!(p >= 0.0)) throw std::invalid_argument("pmf has a negative entry");
    if (std::abs(base.total() - 1.0) > 1e-9) throw std::invalid_argument("base pmf is not normalized");

    std::map<double, double> mass;
    for (double v : base.values) mass.emplace(v, 0.0);
    for (std::size_t k = 0; k < base.values.size(); ++k) mass[policy.apply(t, base.values[k], upper)] += base.probs[k];
    DiscreteDensity out;
    for (const auto& [v, p] : mass) {
        out.values.push_back(v);
        out.probs.push_back(p);
    }
    return out;
}

/// Continuous additive shift with clamp u:
/// g^d(a) = g(a - delta) 1{a < u} + g(a) 1{a + delta >= u}.
inline std::function<double(double)> analytic_shifted_density(double delta, double upper, std::function<double(double)> base) {
    return [delta, upper, base = std::move(base)](double a) {
        double v = 0.0;
        if (a < upper) v += base(a - delta);
        if (a + delta >= upper) v += base(a);
        return v;
    };
}

struct SupportViolation {
    Index row;
    int time;
    double value;
};

/// Observed cells whose intervened exposure lies outside the empirical support
/// of A_t (the set of observed values for integer-valued exposures, the
/// observed range otherwise).
inline std::vector<SupportViolation> support_violations(const LongitudinalData& data, const std::vector<Vector>& shifted) {
    std::vector<SupportViolation> out;
    for (int t = 0; t < data.tau(); ++t) {
        const Vector& a = data.exposure(t);
        const bool discrete = detail::integer_valued(a);
        std::set<double> seen;
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (Index i = 0; i < data.n(); ++i) {
            if (!data.observed_at(i, t)) continue;
            seen.insert(a(i));
            lo = std::min(lo, a(i));
            hi = std::max(hi, a(i));
        }
        for (Index i = 0; i < data.n(); ++i) {
            if (!data.observed_at(i, t)) continue;
            const double v = shifted[static_cast<std::size_t>(t)](i);
            const bool ok = discrete ? seen.count(v) > 0 : (v >= lo && v <= hi);
            if (!ok) out.push_back({i, t, v});
        }
    }
    return out;
}

}  // namespace lmtp
