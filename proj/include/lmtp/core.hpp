#pragma once

// Shared aliases, error types and small numeric helpers.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>

namespace lmtp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Invalid user configuration (bad bounds, fold counts, policy specs).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Base class for problems with input data.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A column named by the schema is absent from the file.
class SchemaError : public DataError {
public:
    using DataError::DataError;
};

/// Data violates a structural invariant (monotone censoring, missing cells).
class ValidationError : public DataError {
public:
    using DataError::DataError;
};

/// A value lies outside its declared range.
class RangeError : public DataError {
public:
    using DataError::DataError;
};

/// Exposure value outside the declared support of a policy.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// A learner failed to fit. Carries the last deviance for IRLS failures.
class FitError : public std::runtime_error {
public:
    explicit FitError(const std::string& what, double deviance = std::numeric_limits<double>::quiet_NaN())
        : std::runtime_error(what), deviance_(deviance) {}
    double deviance() const noexcept { return deviance_; }

private:
    double deviance_;
};

/// Failure inside an estimator (tilting divergence, misaligned nuisances).
class EstimationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline double expit(double x) {
    if (x >= 0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Compensated accumulator; results do not depend on the magnitude ordering of terms.
class KahanSum {
public:
    void add(double x) {
        const double y = x - carry_;
        const double t = sum_ + y;
        carry_ = (t - sum_) - y;
        sum_ = t;
    }
    double value() const { return sum_; }

private:
    double sum_ = 0.0;
    double carry_ = 0.0;
};

}  // namespace lmtp
