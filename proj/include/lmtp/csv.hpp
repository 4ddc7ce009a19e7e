#pragma once

// Wide CSV ingestion: one row per trajectory, header
//   id,L1_<name>...,A1,C1,...,L{tau}_<name>...,A{tau},C{tau},Y
// Censoring columns are optional. Categorical covariates are one-hot
// expanded with levels in lexicographic order.

#include "lmtp/data.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace lmtp {

struct CsvSchema {
    std::string id = "id";
    std::vector<std::vector<std::string>> covariates;  // per time point
    std::vector<std::string> exposures;                // per time point
    std::vector<std::string> censoring;                // per time point, or empty
    std::string outcome = "Y";
    OutcomeBounds bounds;
    std::vector<std::string> categorical;

    int tau() const { return static_cast<int>(exposures.size()); }
};

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (std::size_t k = 0; k < line.size(); ++k) {
        const char ch = line[k];
        if (quoted) {
            if (ch == '"') {
                if (k + 1 < line.size() && line[k + 1] == '"') {
                    cell.push_back('"');
                    ++k;
                } else {
                    quoted = false;
                }
            } else {
                cell.push_back(ch);
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            cells.push_back(std::move(cell));
            cell.clear();
        } else if (ch != '\r') {
            cell.push_back(ch);
        }
    }
    cells.push_back(std::move(cell));
    return cells;
}

inline bool is_missing(std::string_view s) { return s.empty() || s == "NA" || s == "NaN" || s == "nan"; }

inline std::optional<double> parse_number(std::string_view s) {
    while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

inline std::string format_number(double v) {
    if (std::isnan(v)) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace detail

inline LongitudinalData parse_longitudinal_csv(std::istream& in, const CsvSchema& schema) {
    const int tau = schema.tau();
    if (tau < 1) throw ConfigError("schema must declare at least one exposure column");
    if (static_cast<int>(schema.covariates.size()) != tau)
        throw ConfigError("schema must list covariates for each of the " + std::to_string(tau) + " time points");
    if (!schema.censoring.empty() && static_cast<int>(schema.censoring.size()) != tau)
        throw ConfigError("schema must list a censoring column for every time point or none");
    if (!(schema.bounds.upper > schema.bounds.lower)) throw ConfigError("outcome upper bound must exceed lower bound");

    std::string line;
    if (!std::getline(in, line)) throw SchemaError("empty CSV: header row missing");
    const auto header = detail::split_csv_line(line);
    std::unordered_map<std::string, std::size_t> position;
    for (std::size_t k = 0; k < header.size(); ++k) position.emplace(header[k], k);
    auto column = [&](const std::string& name) {
        const auto it = position.find(name);
        if (it == position.end()) throw SchemaError("missing column '" + name + "'");
        return it->second;
    };

    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw ValidationError("row " + std::to_string(rows.size() + 2) + " has " + std::to_string(cells.size()) +
                                  " fields, header has " + std::to_string(header.size()));
        rows.push_back(std::move(cells));
    }
    const std::size_t id_col = column(schema.id);

    // Rows sorted by id: numerically when every id is a number.
    std::vector<std::size_t> order(rows.size());
    std::iota(order.begin(), order.end(), 0);
    const bool numeric_ids = std::all_of(rows.begin(), rows.end(), [&](const auto& r) {
        return detail::parse_number(r[id_col]).has_value();
    });
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (numeric_ids) return *detail::parse_number(rows[a][id_col]) < *detail::parse_number(rows[b][id_col]);
        return rows[a][id_col] < rows[b][id_col];
    });
    for (std::size_t k = 1; k < order.size(); ++k)
        if (rows[order[k]][id_col] == rows[order[k - 1]][id_col])
            throw ValidationError("duplicate id '" + rows[order[k]][id_col] + "'");

    const auto n = static_cast<Index>(rows.size());
    const std::set<std::string> categorical(schema.categorical.begin(), schema.categorical.end());

    auto numeric_cell = [&](std::size_t r, std::size_t col) {
        const std::string& s = rows[order[r]][col];
        if (detail::is_missing(s)) return kNaN;
        const auto v = detail::parse_number(s);
        if (!v)
            throw ValidationError("non-numeric value '" + s + "' in column '" + header[col] + "' for id " +
                                  rows[order[r]][id_col]);
        return *v;
    };

    std::vector<std::string> ids;
    ids.reserve(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) ids.push_back(rows[order[r]][id_col]);

    std::vector<TimePoint> times(static_cast<std::size_t>(tau));
    for (int t = 0; t < tau; ++t) {
        auto& tp = times[static_cast<std::size_t>(t)];
        std::vector<Vector> cols;
        for (const auto& name : schema.covariates[static_cast<std::size_t>(t)]) {
            const std::size_t col = column(name);
            if (categorical.count(name)) {
                std::set<std::string> levels;
                for (const auto& r : rows)
                    if (!detail::is_missing(r[col])) levels.insert(r[col]);
                for (const auto& level : levels) {
                    Vector v(n);
                    for (Index r = 0; r < n; ++r) {
                        const std::string& s = rows[order[static_cast<std::size_t>(r)]][col];
                        v(r) = detail::is_missing(s) ? kNaN : (s == level ? 1.0 : 0.0);
                    }
                    cols.push_back(std::move(v));
                    tp.columns.push_back({name + "=" + level, name, level});
                }
            } else {
                Vector v(n);
                for (Index r = 0; r < n; ++r) v(r) = numeric_cell(static_cast<std::size_t>(r), col);
                cols.push_back(std::move(v));
                tp.columns.push_back({name, "", ""});
            }
        }
        tp.covariates.resize(n, static_cast<Index>(cols.size()));
        for (std::size_t k = 0; k < cols.size(); ++k) tp.covariates.col(static_cast<Index>(k)) = cols[k];

        const std::size_t a_col = column(schema.exposures[static_cast<std::size_t>(t)]);
        tp.exposure.resize(n);
        for (Index r = 0; r < n; ++r) tp.exposure(r) = numeric_cell(static_cast<std::size_t>(r), a_col);
        if (!schema.censoring.empty()) {
            const std::size_t c_col = column(schema.censoring[static_cast<std::size_t>(t)]);
            tp.censoring.resize(n);
            for (Index r = 0; r < n; ++r) tp.censoring(r) = numeric_cell(static_cast<std::size_t>(r), c_col);
        }
    }
    const std::size_t y_col = column(schema.outcome);
    Vector y(n);
    for (Index r = 0; r < n; ++r) y(r) = numeric_cell(static_cast<std::size_t>(r), y_col);

    return LongitudinalData(std::move(ids), std::move(times), std::move(y), schema.bounds);
}

inline LongitudinalData load_longitudinal_csv(const std::string& path, const CsvSchema& schema) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open data file '" + path + "'");
    return parse_longitudinal_csv(in, schema);
}

/// Schema describing the file produced by write_longitudinal_csv for `data`.
inline CsvSchema schema_for(const LongitudinalData& data) {
    CsvSchema schema;
    schema.bounds = data.bounds();
    for (int t = 0; t < data.tau(); ++t) {
        std::vector<std::string> names;
        for (const auto& c : data.time(t).columns) {
            const std::string& name = c.one_hot() ? c.source : c.name;
            if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
            if (c.one_hot() && std::find(schema.categorical.begin(), schema.categorical.end(), name) == schema.categorical.end())
                schema.categorical.push_back(name);
        }
        schema.covariates.push_back(std::move(names));
        schema.exposures.push_back("A" + std::to_string(t + 1));
        if (data.has_censoring()) schema.censoring.push_back("C" + std::to_string(t + 1));
    }
    return schema;
}

inline void write_longitudinal_csv(std::ostream& out, const LongitudinalData& data) {
    const CsvSchema schema = schema_for(data);
    out << schema.id;
    for (int t = 0; t < data.tau(); ++t) {
        for (const auto& name : schema.covariates[static_cast<std::size_t>(t)]) out << ',' << name;
        out << ',' << schema.exposures[static_cast<std::size_t>(t)];
        if (data.has_censoring()) out << ',' << schema.censoring[static_cast<std::size_t>(t)];
    }
    out << ',' << schema.outcome << '\n';

    for (Index i = 0; i < data.n(); ++i) {
        out << data.ids()[static_cast<std::size_t>(i)];
        for (int t = 0; t < data.tau(); ++t) {
            const auto& tp = data.time(t);
            const bool observed = data.observed_at(i, t);
            std::map<std::string, std::string> level_of;
            for (std::size_t k = 0; k < tp.columns.size(); ++k)
                if (tp.columns[k].one_hot() && tp.covariates(i, static_cast<Index>(k)) == 1.0)
                    level_of[tp.columns[k].source] = tp.columns[k].level;
            for (const auto& name : schema.covariates[static_cast<std::size_t>(t)]) {
                out << ',';
                if (!observed) continue;
                if (const auto it = level_of.find(name); it != level_of.end()) {
                    out << it->second;
                } else {
                    for (std::size_t k = 0; k < tp.columns.size(); ++k)
                        if (tp.columns[k].name == name) out << detail::format_number(tp.covariates(i, static_cast<Index>(k)));
                }
            }
            out << ',' << detail::format_number(tp.exposure(i));
            if (data.has_censoring()) out << ',' << (observed ? detail::format_number(tp.censoring(i)) : "");
        }
        out << ',' << detail::format_number(data.outcome()(i)) << '\n';
    }
}

inline void write_longitudinal_csv(const std::string& path, const LongitudinalData& data) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    write_longitudinal_csv(out, data);
}

}  // namespace lmtp
