#pragma once

// Fold plans over trajectory indices and out-of-fold prediction.

#include "lmtp/core.hpp"
#include "lmtp/parallel.hpp"
#include "lmtp/random.hpp"

#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace lmtp {

/// Partition of {0..n-1} into validation sets V_j; the training set of fold j
/// is the complement T_j. A plan with a single fold trains and predicts on all
/// rows (cross-fitting disabled).
class FoldPlan {
public:
    FoldPlan() = default;
    FoldPlan(int folds, std::vector<int> assignment, std::uint64_t seed)
        : folds_(folds), assignment_(std::move(assignment)), seed_(seed) {
        validation_.resize(static_cast<std::size_t>(folds_));
        for (std::size_t i = 0; i < assignment_.size(); ++i)
            validation_[static_cast<std::size_t>(assignment_[i])].push_back(static_cast<Index>(i));
        training_.resize(static_cast<std::size_t>(folds_));
        for (int j = 0; j < folds_; ++j) {
            auto& tr = training_[static_cast<std::size_t>(j)];
            for (std::size_t i = 0; i < assignment_.size(); ++i)
                if (folds_ == 1 || assignment_[i] != j) tr.push_back(static_cast<Index>(i));
        }
    }

    int folds() const { return folds_; }
    Index n() const { return static_cast<Index>(assignment_.size()); }
    int fold_of(Index i) const { return assignment_[static_cast<std::size_t>(i)]; }
    const std::vector<int>& assignment() const { return assignment_; }
    std::uint64_t seed() const { return seed_; }
    bool crossfit() const { return folds_ > 1; }

    std::span<const Index> validation(int j) const { return validation_[static_cast<std::size_t>(j)]; }
    std::span<const Index> training(int j) const { return training_[static_cast<std::size_t>(j)]; }

private:
    int folds_ = 0;
    std::vector<int> assignment_;
    std::uint64_t seed_ = 0;
    std::vector<std::vector<Index>> validation_;
    std::vector<std::vector<Index>> training_;
};

/// Seeded shuffle of the indices dealt round-robin into `folds` sets.
inline FoldPlan make_folds(Index n, int folds, std::uint64_t seed) {
    if (folds < 2) throw ConfigError("cross-fitting needs at least 2 folds (disable it explicitly instead)");
    if (folds > n) throw ConfigError("fold count " + std::to_string(folds) + " exceeds sample size " + std::to_string(n));
    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Index{0});
    Rng rng(seed);
    for (std::size_t k = perm.size(); k > 1; --k) std::swap(perm[k - 1], perm[rng.below(k)]);
    std::vector<int> assignment(static_cast<std::size_t>(n));
    for (std::size_t k = 0; k < perm.size(); ++k) assignment[static_cast<std::size_t>(perm[k])] = static_cast<int>(k % static_cast<std::size_t>(folds));
    return FoldPlan(folds, std::move(assignment), seed);
}

/// Plan that fits once on all rows and predicts in-sample.
inline FoldPlan full_sample_plan(Index n, std::uint64_t seed = 0) {
    return FoldPlan(1, std::vector<int>(static_cast<std::size_t>(n), 0), seed);
}

/// Out-of-fold predictions. `fit(j, training rows)` returns a model trained on
/// T_j; each evaluation design `design(model, validation rows)` returns one
/// prediction per validation row. Rows are filled in their original positions;
/// entries a design declines to predict stay NaN.
template <class Model>
std::vector<Vector> crossfit_predict(
    const FoldPlan& plan, const std::function<Model(int, std::span<const Index>)>& fit,
    const std::vector<std::function<Vector(const Model&, std::span<const Index>)>>& designs, int threads = 1) {
    std::vector<Vector> out(designs.size(), Vector::Constant(plan.n(), kNaN));
    parallel_for(static_cast<std::size_t>(plan.folds()), threads, [&](std::size_t jj) {
        const int j = static_cast<int>(jj);
        Model model = [&] {
            try {
                return fit(j, plan.training(j));
            } catch (const FitError& e) {
                throw FitError("fold " + std::to_string(j + 1) + ": " + e.what(), e.deviance());
            }
        }();
        const auto rows = plan.validation(j);
        for (std::size_t d = 0; d < designs.size(); ++d) {
            const Vector pred = designs[d](model, rows);
            for (std::size_t r = 0; r < rows.size(); ++r) out[d](rows[r]) = pred(static_cast<Index>(r));
        }
    });
    return out;
}

}  // namespace lmtp
