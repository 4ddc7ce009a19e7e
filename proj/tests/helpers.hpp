#pragma once

#include "lmtp/lmtp.hpp"

#include <sstream>
#include <string>
#include <vector>

namespace testing {

/// Uncensored data with one numeric covariate per time point.
inline lmtp::LongitudinalData make_data(const std::vector<std::vector<double>>& l, const std::vector<std::vector<double>>& a,
                                        const std::vector<double>& y, lmtp::OutcomeBounds bounds = {0.0, 1.0},
                                        const std::vector<double>& weights = {}) {
    const auto n = static_cast<lmtp::Index>(y.size());
    std::vector<lmtp::TimePoint> times(a.size());
    for (std::size_t t = 0; t < a.size(); ++t) {
        times[t].columns = {{"L" + std::to_string(t + 1), "", ""}};
        times[t].covariates.resize(n, 1);
        times[t].exposure.resize(n);
        for (lmtp::Index i = 0; i < n; ++i) {
            times[t].covariates(i, 0) = l[t][static_cast<std::size_t>(i)];
            times[t].exposure(i) = a[t][static_cast<std::size_t>(i)];
        }
    }
    std::vector<std::string> ids;
    for (lmtp::Index i = 0; i < n; ++i) ids.push_back(std::to_string(i + 1));
    lmtp::Vector w;
    if (!weights.empty()) w = Eigen::Map<const lmtp::Vector>(weights.data(), n);
    return lmtp::LongitudinalData(std::move(ids), std::move(times), Eigen::Map<const lmtp::Vector>(y.data(), n), bounds, w);
}

inline lmtp::LongitudinalData parse(const std::string& csv, const lmtp::CsvSchema& schema) {
    std::istringstream in(csv);
    return lmtp::parse_longitudinal_csv(in, schema);
}

inline std::vector<lmtp::Index> all_rows(lmtp::Index n) {
    std::vector<lmtp::Index> rows(static_cast<std::size_t>(n));
    for (lmtp::Index i = 0; i < n; ++i) rows[static_cast<std::size_t>(i)] = i;
    return rows;
}

}  // namespace testing
