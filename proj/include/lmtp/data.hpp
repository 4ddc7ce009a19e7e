#pragma once

// Longitudinal trajectories Z = (L_1, A_1, ..., L_tau, A_tau, Y) in wide form.
// Time points are indexed from 0 throughout the library.

#include "lmtp/core.hpp"

#include <algorithm>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace lmtp {

/// One numeric covariate column. One-hot columns remember their source
/// variable and level so the wide file can be written back.
struct CovariateColumn {
    std::string name;
    std::string source;  // categorical source column, empty for numeric
    std::string level;

    bool one_hot() const { return !source.empty(); }
};

struct TimePoint {
    Matrix covariates;  // n x p_t
    std::vector<CovariateColumn> columns;
    Vector exposure;    // n
    Vector censoring;   // n, or empty when the study has no dropout; 1 = still observed at t+1
};

struct OutcomeBounds {
    double lower = 0.0;
    double upper = 1.0;
};

/// Immutable, validated collection of trajectories. Cells after a trajectory
/// drops out are stored as NaN and never read by the estimators.
class LongitudinalData {
public:
    LongitudinalData(std::vector<std::string> ids, std::vector<TimePoint> times, Vector outcome,
                     OutcomeBounds bounds, Vector weights = Vector())
        : ids_(std::move(ids)), times_(std::move(times)), outcome_(std::move(outcome)), bounds_(bounds),
          weights_(std::move(weights)) {
        validate();
    }

    Index n() const { return outcome_.size(); }
    int tau() const { return static_cast<int>(times_.size()); }

    const std::vector<std::string>& ids() const { return ids_; }
    const TimePoint& time(int t) const { return times_.at(static_cast<std::size_t>(t)); }
    const Matrix& covariates(int t) const { return time(t).covariates; }
    const Vector& exposure(int t) const { return time(t).exposure; }
    bool has_censoring() const { return !times_.empty() && times_.front().censoring.size() > 0; }
    const Vector& censoring(int t) const { return time(t).censoring; }
    const Vector& outcome() const { return outcome_; }
    OutcomeBounds bounds() const { return bounds_; }

    /// Observation weights; all ones unless the data represent a weighted population.
    const Vector& weights() const { return weights_; }

    /// Number of leading time points whose censoring indicator is 1 (tau when never censored).
    int uncensored_through(Index i) const { return uncensored_[static_cast<std::size_t>(i)]; }
    /// (L_t, A_t) are recorded for trajectory i.
    bool observed_at(Index i, int t) const { return t <= uncensored_through(i); }
    /// The trajectory is still observed after A_t, i.e. C_t = 1.
    bool continues_after(Index i, int t) const { return t < uncensored_through(i); }
    bool outcome_observed(Index i) const { return uncensored_through(i) >= tau(); }

    Index covariate_count(int t) const { return covariates(t).cols(); }

private:
    void validate() {
        const Index n = outcome_.size();
        if (times_.empty()) throw ValidationError("at least one time point is required");
        if (n == 0) throw ValidationError("no trajectories");
        if (static_cast<Index>(ids_.size()) != n) throw ValidationError("id count does not match outcome length");
        if (!(bounds_.upper > bounds_.lower)) throw ConfigError("outcome upper bound must exceed lower bound");
        if (weights_.size() == 0) weights_ = Vector::Ones(n);
        if (weights_.size() != n) throw ValidationError("weight count does not match outcome length");
        if ((weights_.array() < 0).any() || !weights_.allFinite()) throw ValidationError("weights must be finite and nonnegative");

        const bool censored = times_.front().censoring.size() > 0;
        for (std::size_t t = 0; t < times_.size(); ++t) {
            auto& tp = times_[t];
            if (tp.exposure.size() != n || tp.covariates.rows() != n)
                throw ValidationError("time point " + std::to_string(t + 1) + " has inconsistent row count");
            if (static_cast<Index>(tp.columns.size()) != tp.covariates.cols())
                throw ValidationError("time point " + std::to_string(t + 1) + " column metadata mismatch");
            if ((tp.censoring.size() > 0) != censored)
                throw ValidationError("censoring indicators must be given for every time point or none");
            if (censored && tp.censoring.size() != n)
                throw ValidationError("time point " + std::to_string(t + 1) + " censoring length mismatch");
        }

        uncensored_.assign(static_cast<std::size_t>(n), tau());
        for (Index i = 0; i < n; ++i) {
            int through = tau();
            if (censored) {
                for (int t = 0; t < tau(); ++t) {
                    const double c = times_[static_cast<std::size_t>(t)].censoring(i);
                    if (through < tau()) {
                        if (!std::isnan(c) && c != 0.0)
                            throw ValidationError("non-monotone censoring for trajectory " + ids_[static_cast<std::size_t>(i)] +
                                                  " at time " + std::to_string(t + 1));
                        continue;
                    }
                    if (c == 0.0) {
                        through = t;
                    } else if (c != 1.0) {
                        throw ValidationError("censoring indicator must be 0 or 1 for trajectory " +
                                              ids_[static_cast<std::size_t>(i)] + " at time " + std::to_string(t + 1));
                    }
                }
            }
            uncensored_[static_cast<std::size_t>(i)] = through;

            for (int t = 0; t < tau(); ++t) {
                auto& tp = times_[static_cast<std::size_t>(t)];
                if (t <= through) {
                    if (!std::isfinite(tp.exposure(i)) || !tp.covariates.row(i).allFinite())
                        throw ValidationError("missing value for trajectory " + ids_[static_cast<std::size_t>(i)] +
                                              " at time " + std::to_string(t + 1));
                } else {
                    tp.exposure(i) = kNaN;
                    tp.covariates.row(i).setConstant(kNaN);
                    if (censored) tp.censoring(i) = 0.0;
                }
            }
            if (through >= tau()) {
                const double y = outcome_(i);
                if (!std::isfinite(y))
                    throw ValidationError("missing outcome for uncensored trajectory " + ids_[static_cast<std::size_t>(i)]);
                if (y < bounds_.lower || y > bounds_.upper)
                    throw RangeError("outcome " + std::to_string(y) + " of trajectory " + ids_[static_cast<std::size_t>(i)] +
                                     " outside declared bounds");
            } else {
                outcome_(i) = kNaN;
            }
        }
    }

    std::vector<std::string> ids_;
    std::vector<TimePoint> times_;
    Vector outcome_;
    OutcomeBounds bounds_;
    Vector weights_;
    std::vector<int> uncensored_;
};

/// H_t for one trajectory: A_0..A_{t-1} followed by L_0..L_t.
struct HistoryView {
    Index row = 0;
    int time = 0;
    std::vector<double> values;
    std::vector<std::string> names;

    /// Value of the named covariate, if it is part of the history.
    std::optional<double> find(std::string_view name) const {
        for (std::size_t k = 0; k < names.size(); ++k)
            if (names[k] == name) return values[k];
        return std::nullopt;
    }
};

inline HistoryView history_view(const LongitudinalData& data, Index i, int t) {
    if (t < 0 || t >= data.tau()) throw std::out_of_range("time " + std::to_string(t) + " out of range");
    if (i < 0 || i >= data.n()) throw std::out_of_range("trajectory index out of range");
    if (!data.observed_at(i, t))
        throw ValidationError("trajectory " + data.ids()[static_cast<std::size_t>(i)] + " is censored before time " +
                              std::to_string(t + 1));
    HistoryView h;
    h.row = i;
    h.time = t;
    for (int s = 0; s < t; ++s) {
        h.values.push_back(data.exposure(s)(i));
        h.names.push_back("A" + std::to_string(s + 1));
    }
    for (int s = 0; s <= t; ++s) {
        const auto& tp = data.time(s);
        for (Index k = 0; k < tp.covariates.cols(); ++k) {
            h.values.push_back(tp.covariates(i, k));
            h.names.push_back(tp.columns[static_cast<std::size_t>(k)].name);
        }
    }
    return h;
}

/// Restricts the history a learner sees to the most recent lags. Negative
/// values keep the full history.
struct HistoryWindow {
    int exposure_lags = -1;
    int covariate_lags = -1;

    int first_exposure(int t) const { return exposure_lags < 0 ? 0 : std::max(0, t - exposure_lags); }
    int first_covariate(int t) const { return covariate_lags < 0 ? 0 : std::max(0, t - covariate_lags); }
};

/// Design rows [a_t, (c_t), A_{t-1}, ..., L_t, L_{t-1}, ...] for the listed
/// trajectories, most recent lags first. `exposure` supplies the value placed
/// in the first column (observed or intervened A_t).
inline Matrix design_matrix(const LongitudinalData& data, int t, const Vector& exposure, std::span<const Index> rows,
                            const HistoryWindow& window, const Vector* censoring = nullptr) {
    const int first_a = window.first_exposure(t);
    const int first_l = window.first_covariate(t);
    Index cols = 1 + (censoring ? 1 : 0) + (t - first_a);
    for (int s = first_l; s <= t; ++s) cols += data.covariate_count(s);

    Matrix x(static_cast<Index>(rows.size()), cols);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const Index i = rows[r];
        const auto rr = static_cast<Index>(r);
        Index c = 0;
        x(rr, c++) = exposure(i);
        if (censoring) x(rr, c++) = (*censoring)(i);
        for (int s = t - 1; s >= first_a; --s) x(rr, c++) = data.exposure(s)(i);
        for (int s = t; s >= first_l; --s) {
            const Matrix& l = data.covariates(s);
            for (Index k = 0; k < l.cols(); ++k) x(rr, c++) = l(i, k);
        }
    }
    return x;
}

/// Affine map of a bounded outcome into [eps, 1 - eps].
class OutcomeScaler {
public:
    explicit OutcomeScaler(OutcomeBounds bounds, double eps = 1e-4) : lower_(bounds.lower), upper_(bounds.upper), eps_(eps) {
        if (!(upper_ > lower_)) throw ConfigError("outcome upper bound must exceed lower bound");
        if (!(eps_ >= 0.0 && eps_ < 0.5)) throw ConfigError("outcome scaling margin must lie in [0, 0.5)");
    }

    double scale(double y) const { return (y - lower_) / (upper_ - lower_) * (1.0 - 2.0 * eps_) + eps_; }
    double unscale(double v) const { return (v - eps_) / (1.0 - 2.0 * eps_) * (upper_ - lower_) + lower_; }
    /// Factor converting scaled-space spreads (standard errors) to the original scale.
    double spread() const { return (upper_ - lower_) / (1.0 - 2.0 * eps_); }
    double eps() const { return eps_; }

private:
    double lower_;
    double upper_;
    double eps_;
};

}  // namespace lmtp
