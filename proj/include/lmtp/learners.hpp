#pragma once

// Regression and classification primitives for nuisance estimation, and a
// cross-validated convex stack over them.

#include "lmtp/crossfit.hpp"
#include "lmtp/data.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <map>
#include <string>
#include <variant>
#include <vector>

namespace lmtp {

enum class LearnerKind { logistic, linear, saturated, intercept_only };

inline const char* to_string(LearnerKind k) {
    switch (k) {
    case LearnerKind::logistic: return "logistic";
    case LearnerKind::linear: return "linear";
    case LearnerKind::saturated: return "saturated";
    case LearnerKind::intercept_only: return "intercept_only";
    }
    return "?";
}

struct LearnerSpec {
    LearnerKind kind = LearnerKind::intercept_only;
    double ridge = 1e-8;              // penalty on standardized slopes (linear, logistic)
    int max_iterations = 50;          // IRLS
    double tolerance = 1e-10;         // IRLS: max score / total weight
    std::vector<Index> key_columns;   // saturated; empty keys on every column
    double probability_floor = 1e-3;  // classifiers predict in [floor, 1 - floor]
    double cell_prior = 0.0;          // saturated: pseudo-rows of the pooled mean added to each cell

    static LearnerSpec of(LearnerKind kind) {
        LearnerSpec s;
        s.kind = kind;
        return s;
    }
};

/// Fitted learner. Prediction is pure; classifier outputs are floored away
/// from 0 and 1 and regression outputs are clamped to the training range.
class FittedModel {
public:
    struct Constant {
        double value;
    };
    struct Glm {
        std::vector<Index> active;  // standardized columns with nonzero spread
        Vector center;
        Vector scale;
        Vector coef;  // intercept first
        bool logistic;
    };
    struct Cells {
        std::vector<Index> keys;
        std::map<std::vector<double>, double> means;
        double fallback;
    };

    FittedModel(LearnerKind kind, std::variant<Constant, Glm, Cells> fit, double lo, double hi)
        : kind_(kind), fit_(std::move(fit)), lo_(lo), hi_(hi) {}

    LearnerKind kind() const { return kind_; }

    Vector predict(const Matrix& x) const {
        Vector out(x.rows());
        std::visit(
            [&](const auto& f) {
                using F = std::decay_t<decltype(f)>;
                if constexpr (std::is_same_v<F, Constant>) {
                    out.setConstant(f.value);
                } else if constexpr (std::is_same_v<F, Glm>) {
                    for (Index r = 0; r < x.rows(); ++r) {
                        double eta = f.coef(0);
                        for (std::size_t k = 0; k < f.active.size(); ++k) {
                            const auto kk = static_cast<Index>(k);
                            eta += f.coef(kk + 1) * (x(r, f.active[k]) - f.center(kk)) / f.scale(kk);
                        }
                        out(r) = f.logistic ? expit(eta) : eta;
                    }
                } else {
                    std::vector<double> key(f.keys.size());
                    for (Index r = 0; r < x.rows(); ++r) {
                        for (std::size_t k = 0; k < f.keys.size(); ++k) key[k] = x(r, f.keys[k]);
                        const auto it = f.means.find(key);
                        out(r) = it == f.means.end() ? f.fallback : it->second;
                    }
                }
            },
            fit_);
        return out.cwiseMax(lo_).cwiseMin(hi_);
    }

    const std::variant<Constant, Glm, Cells>& fit() const { return fit_; }

private:
    LearnerKind kind_;
    std::variant<Constant, Glm, Cells> fit_;
    double lo_;
    double hi_;
};

namespace detail {

inline double weighted_mean(const Vector& y, const Vector& w) {
    KahanSum num, den;
    for (Index i = 0; i < y.size(); ++i) {
        if (w(i) == 0.0) continue;
        num.add(w(i) * y(i));
        den.add(w(i));
    }
    return num.value() / den.value();
}

inline void check_inputs(const Matrix& x, const Vector& y, const Vector& w) {
    if (x.rows() != y.size() || y.size() != w.size())
        throw std::invalid_argument("feature rows, targets and weights differ in length");
    if ((w.array() < 0).any()) throw std::invalid_argument("weights must be nonnegative");
    if (!(w.sum() > 0)) throw std::invalid_argument("zero total weight");
}

/// Weighted column standardization; columns without spread are dropped.
inline void standardize(const Matrix& x, const Vector& w, std::vector<Index>& active, Vector& center, Vector& scale) {
    const double total = w.sum();
    std::vector<double> c, s;
    for (Index k = 0; k < x.cols(); ++k) {
        const double m = x.col(k).dot(w) / total;
        const double v = (x.col(k).array() - m).square().matrix().dot(w) / total;
        if (v > 1e-24) {
            active.push_back(k);
            c.push_back(m);
            s.push_back(std::sqrt(v));
        }
    }
    center = Eigen::Map<Vector>(c.data(), static_cast<Index>(c.size()));
    scale = Eigen::Map<Vector>(s.data(), static_cast<Index>(s.size()));
}

inline Matrix glm_design(const Matrix& x, const std::vector<Index>& active, const Vector& center, const Vector& scale) {
    Matrix z(x.rows(), static_cast<Index>(active.size()) + 1);
    z.col(0).setOnes();
    for (std::size_t k = 0; k < active.size(); ++k) {
        const auto kk = static_cast<Index>(k);
        z.col(kk + 1) = (x.col(active[k]).array() - center(kk)) / scale(kk);
    }
    return z;
}

inline double bernoulli_deviance(const Vector& y, const Vector& mu, const Vector& w) {
    KahanSum d;
    for (Index i = 0; i < y.size(); ++i) {
        if (w(i) == 0.0) continue;
        const double yi = y(i), m = mu(i);
        double term = 0.0;
        if (yi > 0) term += yi * std::log(yi / m);
        if (yi < 1) term += (1 - yi) * std::log((1 - yi) / (1 - m));
        d.add(w(i) * term);
    }
    return 2.0 * d.value();
}

/// Weighted quasi-binomial IRLS with step halving. Targets may be fractional.
inline FittedModel::Glm fit_logistic(const LearnerSpec& spec, const Matrix& x, const Vector& y, const Vector& w) {
    FittedModel::Glm g;
    g.logistic = true;
    standardize(x, w, g.active, g.center, g.scale);
    const Matrix z = glm_design(x, g.active, g.center, g.scale);
    const Index p = z.cols();
    const double total = w.sum();

    Vector beta = Vector::Zero(p);
    const double ybar = std::clamp(weighted_mean(y, w), 1e-6, 1 - 1e-6);
    beta(0) = logit(ybar);
    auto mean_of = [&](const Vector& b) {
        Vector eta = z * b;
        return eta.unaryExpr([](double e) { return std::clamp(expit(e), 1e-15, 1 - 1e-15); }).eval();
    };
    Vector mu = mean_of(beta);
    double dev = bernoulli_deviance(y, mu, w);

    for (int iter = 0; iter < spec.max_iterations; ++iter) {
        const Vector v = mu.array() * (1 - mu.array());
        const Vector wz = w.array() * v.array();
        // Newton step on the penalized weighted log-likelihood.
        Matrix h = z.transpose() * wz.asDiagonal() * z;
        Vector grad = z.transpose() * (w.array() * (y - mu).array()).matrix();
        for (Index k = 1; k < p; ++k) {
            h(k, k) += spec.ridge * total;
            grad(k) -= spec.ridge * total * beta(k);
        }
        h.diagonal().array() += 1e-12 * total;
        const Vector step = h.ldlt().solve(grad);

        double scale = 1.0;
        Vector next = beta + step;
        Vector next_mu = mean_of(next);
        double next_dev = bernoulli_deviance(y, next_mu, w);
        for (int halve = 0; halve < 30 && !(next_dev <= dev + 1e-12 * (std::abs(dev) + 1)); ++halve) {
            scale *= 0.5;
            next = beta + scale * step;
            next_mu = mean_of(next);
            next_dev = bernoulli_deviance(y, next_mu, w);
        }
        const double change = std::abs(next_dev - dev) / (std::abs(next_dev) + 0.1);
        beta = next;
        mu = next_mu;
        dev = next_dev;
        // Converged once the penalized score vanishes relative to the total weight.
        Vector score = z.transpose() * (w.array() * (y - mu).array()).matrix();
        for (Index k = 1; k < p; ++k) score(k) -= spec.ridge * total * beta(k);
        if (score.cwiseAbs().maxCoeff() <= spec.tolerance * total || change < 1e-15) {
            g.coef = beta;
            return g;
        }
    }
    // Quasi-separation drives the deviance to zero slowly; accept when it has.
    if (dev < 1e-6 * total) {
        g.coef = beta;
        return g;
    }
    throw FitError("logistic IRLS did not converge after " + std::to_string(spec.max_iterations) +
                       " iterations (deviance " + std::to_string(dev) + ")",
                   dev);
}

inline FittedModel::Glm fit_linear(const LearnerSpec& spec, const Matrix& x, const Vector& y, const Vector& w) {
    FittedModel::Glm g;
    g.logistic = false;
    standardize(x, w, g.active, g.center, g.scale);
    const Matrix z = glm_design(x, g.active, g.center, g.scale);
    const double total = w.sum();
    Matrix h = z.transpose() * w.asDiagonal() * z;
    for (Index k = 1; k < z.cols(); ++k) h(k, k) += spec.ridge * total;
    h.diagonal().array() += 1e-12 * total;
    const Vector rhs = z.transpose() * (w.array() * y.array()).matrix();
    g.coef = h.ldlt().solve(rhs);
    return g;
}

inline FittedModel::Cells fit_cells(const LearnerSpec& spec, const Matrix& x, const Vector& y, const Vector& w) {
    FittedModel::Cells c;
    if (spec.key_columns.empty()) {
        for (Index k = 0; k < x.cols(); ++k) c.keys.push_back(k);
    } else {
        c.keys = spec.key_columns;
        for (Index k : c.keys)
            if (k < 0 || k >= x.cols()) throw std::invalid_argument("saturation key column out of range");
    }
    std::map<std::vector<double>, std::pair<KahanSum, KahanSum>> acc;
    std::vector<double> key(c.keys.size());
    KahanSum total;
    Index rows = 0;
    for (Index r = 0; r < x.rows(); ++r) {
        if (w(r) == 0.0) continue;
        for (std::size_t k = 0; k < c.keys.size(); ++k) key[k] = x(r, c.keys[k]);
        auto& cell = acc[key];
        cell.first.add(w(r) * y(r));
        cell.second.add(w(r));
        total.add(w(r));
        ++rows;
    }
    c.fallback = weighted_mean(y, w);
    // A pseudo-row carries the average row weight.
    const double prior = rows > 0 ? spec.cell_prior * total.value() / static_cast<double>(rows) : 0.0;
    for (const auto& [k, sums] : acc)
        c.means.emplace(k, (sums.first.value() + prior * c.fallback) / (sums.second.value() + prior));
    return c;
}

inline std::pair<double, double> target_range(const Vector& y, const Vector& w) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (Index i = 0; i < y.size(); ++i) {
        if (w(i) == 0.0) continue;
        lo = std::min(lo, y(i));
        hi = std::max(hi, y(i));
    }
    return {lo, hi};
}

inline std::variant<FittedModel::Constant, FittedModel::Glm, FittedModel::Cells> fit_any(const LearnerSpec& spec,
                                                                                     const Matrix& x, const Vector& y,
                                                                                     const Vector& w) {
    switch (spec.kind) {
    case LearnerKind::logistic: return fit_logistic(spec, x, y, w);
    case LearnerKind::linear: return fit_linear(spec, x, y, w);
    case LearnerKind::saturated: return fit_cells(spec, x, y, w);
    case LearnerKind::intercept_only: return FittedModel::Constant{weighted_mean(y, w)};
    }
    throw std::logic_error("unknown learner kind");
}

}  // namespace detail

/// Weighted regression of targets on features. Logistic fits use the
/// quasi-binomial likelihood and clamp targets into [0, 1] first.
inline FittedModel fit_regressor(const LearnerSpec& spec, const Matrix& x, const Vector& y, const Vector& w) {
    detail::check_inputs(x, y, w);
    auto [lo, hi] = detail::target_range(y, w);
    if (spec.kind == LearnerKind::logistic) {
        const Vector yc = y.cwiseMax(0.0).cwiseMin(1.0);
        std::tie(lo, hi) = detail::target_range(yc, w);
        return FittedModel(spec.kind, detail::fit_any(spec, x, yc, w), lo, hi);
    }
    return FittedModel(spec.kind, detail::fit_any(spec, x, y, w), lo, hi);
}

/// Probability of label 1, floored into [p_floor, 1 - p_floor].
inline FittedModel fit_classifier(const LearnerSpec& spec, const Matrix& x, const Vector& labels, const Vector& w) {
    detail::check_inputs(x, labels, w);
    for (Index i = 0; i < labels.size(); ++i)
        if (labels(i) != 0.0 && labels(i) != 1.0) throw std::invalid_argument("classifier labels must be 0 or 1");
    const double f = spec.probability_floor;
    return FittedModel(spec.kind, detail::fit_any(spec, x, labels, w), f, 1.0 - f);
}

enum class StackLoss { squared, log };

struct StackWeights {
    std::vector<double> weights;
    std::vector<double> cv_risk;  // per learner
    double stack_risk = 0.0;
};

/// Convex combination of members refit on all rows.
class Ensemble {
public:
    Ensemble() = default;
    Ensemble(std::vector<double> weights, std::vector<FittedModel> members)
        : weights_(std::move(weights)), members_(std::move(members)) {}

    Vector predict(const Matrix& x) const {
        Vector out = Vector::Zero(x.rows());
        for (std::size_t k = 0; k < members_.size(); ++k)
            if (weights_[k] > 0) out += weights_[k] * members_[k].predict(x);
        return out;
    }
    const std::vector<double>& weights() const { return weights_; }
    const std::vector<FittedModel>& members() const { return members_; }

private:
    std::vector<double> weights_;
    std::vector<FittedModel> members_;
};

namespace detail {

inline double stack_risk(const Matrix& z, const Vector& y, const Vector& w, const Vector& weights, StackLoss loss) {
    const Vector pred = z * weights;
    KahanSum r, den;
    for (Index i = 0; i < y.size(); ++i) {
        if (w(i) == 0.0) continue;
        double l;
        if (loss == StackLoss::squared) {
            l = (y(i) - pred(i)) * (y(i) - pred(i));
        } else {
            const double p = std::clamp(pred(i), 1e-15, 1 - 1e-15);
            l = -(y(i) * std::log(p) + (1 - y(i)) * std::log(1 - p));
        }
        r.add(w(i) * l);
        den.add(w(i));
    }
    return r.value() / den.value();
}

}  // namespace detail

/// Cross-validated convex stacking. Simplex weights are found by exponentiated
/// gradient descent (500 steps of size 0.1 on the spread-normalized gradient)
/// starting from uniform; the best iterate is kept and never loses to a
/// single learner.
inline std::pair<StackWeights, Ensemble> cv_stack(const std::vector<LearnerSpec>& specs, const Matrix& x, const Vector& y,
                                                  const Vector& w, const FoldPlan& folds, StackLoss loss,
                                                  bool classifier = false) {
    if (specs.empty()) throw ConfigError("stack needs at least one learner");
    detail::check_inputs(x, y, w);
    auto fit_one = [&](const LearnerSpec& s, const Matrix& xx, const Vector& yy, const Vector& ww) {
        return classifier ? fit_classifier(s, xx, yy, ww) : fit_regressor(s, xx, yy, ww);
    };
    const auto K = specs.size();

    const auto [lo, hi] = detail::target_range(y, w);
    if (lo == hi) {
        StackWeights sw{{1.0}, {0.0}, 0.0};
        LearnerSpec s = specs.front();
        s.kind = LearnerKind::intercept_only;
        return {sw, Ensemble({1.0}, {fit_one(s, x, y, w)})};
    }
    std::vector<FittedModel> members;
    for (const auto& s : specs) members.push_back(fit_one(s, x, y, w));
    if (K == 1) return {StackWeights{{1.0}, {0.0}, 0.0}, Ensemble({1.0}, std::move(members))};

    Matrix z(x.rows(), static_cast<Index>(K));
    for (int j = 0; j < folds.folds(); ++j) {
        const auto tr = folds.training(j);
        const auto va = folds.validation(j);
        Matrix xt(static_cast<Index>(tr.size()), x.cols()), xv(static_cast<Index>(va.size()), x.cols());
        Vector yt(static_cast<Index>(tr.size())), wt(static_cast<Index>(tr.size()));
        for (std::size_t r = 0; r < tr.size(); ++r) {
            xt.row(static_cast<Index>(r)) = x.row(tr[r]);
            yt(static_cast<Index>(r)) = y(tr[r]);
            wt(static_cast<Index>(r)) = w(tr[r]);
        }
        for (std::size_t r = 0; r < va.size(); ++r) xv.row(static_cast<Index>(r)) = x.row(va[r]);
        for (std::size_t k = 0; k < K; ++k) {
            const Vector p = fit_one(specs[k], xt, yt, wt).predict(xv);
            for (std::size_t r = 0; r < va.size(); ++r) z(va[r], static_cast<Index>(k)) = p(static_cast<Index>(r));
        }
    }

    StackWeights sw;
    for (std::size_t k = 0; k < K; ++k) {
        Vector e = Vector::Zero(static_cast<Index>(K));
        e(static_cast<Index>(k)) = 1.0;
        sw.cv_risk.push_back(detail::stack_risk(z, y, w, e, loss));
    }

    Vector weights = Vector::Constant(static_cast<Index>(K), 1.0 / static_cast<double>(K));
    Vector best = weights;
    double best_risk = detail::stack_risk(z, y, w, weights, loss);
    const double total = w.sum();
    for (int iter = 0; iter < 500; ++iter) {
        const Vector pred = z * weights;
        Vector dl(y.size());
        for (Index i = 0; i < y.size(); ++i) {
            if (loss == StackLoss::squared) {
                dl(i) = 2.0 * (pred(i) - y(i));
            } else {
                const double p = std::clamp(pred(i), 1e-15, 1 - 1e-15);
                dl(i) = (p - y(i)) / (p * (1 - p));
            }
        }
        const Vector grad = z.transpose() * (w.array() * dl.array()).matrix() / total;
        const double spread = grad.maxCoeff() - grad.minCoeff();
        if (!(spread > 1e-14)) break;
        Vector next = (weights.array() * (-0.1 * grad.array() / spread).exp()).matrix();
        weights = next / next.sum();
        const double risk = detail::stack_risk(z, y, w, weights, loss);
        if (risk < best_risk) {
            best_risk = risk;
            best = weights;
        }
    }
    for (std::size_t k = 0; k < K; ++k) {
        if (sw.cv_risk[k] < best_risk) {
            best_risk = sw.cv_risk[k];
            best.setZero();
            best(static_cast<Index>(k)) = 1.0;
        }
    }
    sw.weights.assign(best.data(), best.data() + best.size());
    sw.stack_risk = best_risk;
    return {sw, Ensemble(sw.weights, std::move(members))};
}

/// Learner configuration for one nuisance: candidate specs, the history
/// window they see, and inner folds used when several specs are stacked.
struct NuisanceLearner {
    std::vector<LearnerSpec> specs{LearnerSpec::of(LearnerKind::intercept_only)};
    HistoryWindow window;
    int stack_folds = 5;

    static NuisanceLearner single(LearnerSpec spec, HistoryWindow window = {}) {
        NuisanceLearner l;
        l.specs = {std::move(spec)};
        l.window = window;
        return l;
    }

    /// Fits the configured learner (stacking when more than one spec is given).
    Ensemble fit(const Matrix& x, const Vector& y, const Vector& w, std::uint64_t seed, bool classifier) const {
        if (specs.size() == 1) {
            FittedModel m = classifier ? fit_classifier(specs.front(), x, y, w) : fit_regressor(specs.front(), x, y, w);
            return Ensemble({1.0}, {std::move(m)});
        }
        const Index rows = x.rows();
        if (rows < stack_folds) {
            FittedModel m = classifier ? fit_classifier(specs.front(), x, y, w) : fit_regressor(specs.front(), x, y, w);
            return Ensemble({1.0}, {std::move(m)});
        }
        const FoldPlan inner = make_folds(rows, stack_folds, seed);
        return cv_stack(specs, x, y, w, inner, classifier ? StackLoss::log : StackLoss::squared, classifier).second;
    }
};

/// Learner choice per time point; a single entry applies to every time.
class LearnerSchedule {
public:
    LearnerSchedule(NuisanceLearner learner) : steps_{std::move(learner)} {}  // NOLINT(implicit)
    explicit LearnerSchedule(std::vector<NuisanceLearner> steps) : steps_(std::move(steps)) {
        if (steps_.empty()) throw ConfigError("learner schedule is empty");
    }

    const NuisanceLearner& at(int t) const {
        if (steps_.size() == 1) return steps_.front();
        return steps_.at(static_cast<std::size_t>(t));
    }
    std::size_t size() const { return steps_.size(); }

private:
    std::vector<NuisanceLearner> steps_;
};

}  // namespace lmtp
