#pragma once

// JSON run configuration and result serialization for the command-line tool.
// Requires the single-header nlohmann json.hpp on the include path.

#include "lmtp/csv.hpp"
#include "lmtp/pipeline.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace lmtp {

using Json = nlohmann::ordered_json;

struct RunConfig {
    std::string data_path;
    CsvSchema schema;
    std::vector<Policy> policies;
    std::vector<Json> policy_specs;  // as given, echoed into the output
    EstimationOptions options;
    std::string output;
};

namespace config_detail {

inline void check_keys(const Json& obj, const std::set<std::string>& allowed, const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, value] : obj.items())
        if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

template <class T>
T get(const Json& obj, const std::string& key, const std::string& where) {
    try {
        return obj.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("'" + key + "' in " + where + " is missing or has the wrong type");
    }
}

inline std::vector<std::string> string_list(const Json& v, const std::string& what) {
    if (!v.is_array()) throw ConfigError(what + " must be an array of strings");
    std::vector<std::string> out;
    for (const auto& s : v) {
        if (!s.is_string()) throw ConfigError(what + " must be an array of strings");
        out.push_back(s.get<std::string>());
    }
    return out;
}

inline double parse_number_key(const std::string& s, const std::string& where) {
    std::size_t used = 0;
    double v;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || s.empty()) throw ConfigError("map key '" + s + "' in " + where + " is not a number");
    return v;
}

inline LearnerKind parse_learner_kind(const std::string& s) {
    if (s == "logistic") return LearnerKind::logistic;
    if (s == "linear") return LearnerKind::linear;
    if (s == "saturated") return LearnerKind::saturated;
    if (s == "intercept_only") return LearnerKind::intercept_only;
    throw ConfigError("unknown learner '" + s + "' (expected logistic, linear, saturated or intercept_only)");
}

inline LearnerSpec parse_spec(const Json& v) {
    if (v.is_string()) return LearnerSpec::of(parse_learner_kind(v.get<std::string>()));
    check_keys(v, {"kind", "ridge", "max_iterations", "tolerance", "probability_floor", "cell_prior"}, "learner");
    LearnerSpec s = LearnerSpec::of(parse_learner_kind(get<std::string>(v, "kind", "learner")));
    if (v.contains("ridge")) s.ridge = get<double>(v, "ridge", "learner");
    if (v.contains("max_iterations")) s.max_iterations = get<int>(v, "max_iterations", "learner");
    if (v.contains("tolerance")) s.tolerance = get<double>(v, "tolerance", "learner");
    if (v.contains("probability_floor")) s.probability_floor = get<double>(v, "probability_floor", "learner");
    if (v.contains("cell_prior")) s.cell_prior = get<double>(v, "cell_prior", "learner");
    if (s.ridge < 0 || s.cell_prior < 0) throw ConfigError("learner ridge and cell_prior must be nonnegative");
    if (!(s.probability_floor > 0 && s.probability_floor < 0.5)) throw ConfigError("probability_floor must lie in (0, 0.5)");
    return s;
}

/// "linear", {"kind": ...}, or {"stack": [...], "exposure_lags": k, ...}.
inline NuisanceLearner parse_learner(const Json& v) {
    if (v.is_string()) return NuisanceLearner::single(parse_spec(v));
    if (!v.is_object()) throw ConfigError("a learner must be a name or an object");
    NuisanceLearner l;
    if (v.contains("stack")) {
        check_keys(v, {"stack", "exposure_lags", "covariate_lags", "stack_folds"}, "stacked learner");
        const Json& s = v.at("stack");
        if (!s.is_array() || s.empty()) throw ConfigError("'stack' must be a non-empty array of learners");
        l.specs.clear();
        for (const auto& e : s) l.specs.push_back(parse_spec(e));
        if (v.contains("stack_folds")) l.stack_folds = get<int>(v, "stack_folds", "stacked learner");
        if (l.stack_folds < 2) throw ConfigError("stack_folds must be at least 2");
    } else {
        Json spec = v;
        spec.erase("exposure_lags");
        spec.erase("covariate_lags");
        l.specs = {parse_spec(spec)};
    }
    if (v.contains("exposure_lags")) l.window.exposure_lags = get<int>(v, "exposure_lags", "learner");
    if (v.contains("covariate_lags")) l.window.covariate_lags = get<int>(v, "covariate_lags", "learner");
    return l;
}

/// A single learner for all times, or an array with one learner per time.
inline LearnerSchedule parse_schedule(const Json& v, int tau, const std::string& what) {
    if (v.is_array()) {
        if (static_cast<int>(v.size()) != tau)
            throw ConfigError(what + " lists " + std::to_string(v.size()) + " learners for " + std::to_string(tau) + " time points");
        std::vector<NuisanceLearner> steps;
        for (const auto& e : v) steps.push_back(parse_learner(e));
        return LearnerSchedule(std::move(steps));
    }
    return LearnerSchedule(parse_learner(v));
}

inline PolicyRule parse_rule(const Json& v) {
    check_keys(v, {"type", "delta", "upper_bound", "upper_column", "threshold", "factor", "level", "map", "support", "per_time"},
               "policy");
    const auto type = get<std::string>(v, "type", "policy");
    PolicyRule r;
    if (type == "identity") {
        r.kind = PolicyKind::identity;
    } else if (type == "additive_shift") {
        r.kind = PolicyKind::additive_shift;
        r.delta = get<double>(v, "delta", "additive_shift policy");
        if (v.contains("upper_bound") && !v.at("upper_bound").is_null()) r.upper_constant = get<double>(v, "upper_bound", "policy");
        if (v.contains("upper_column")) r.upper_column = get<std::string>(v, "upper_column", "policy");
    } else if (type == "clamped_decrement") {
        r.kind = PolicyKind::clamped_decrement;
        if (v.contains("threshold")) r.threshold = get<double>(v, "threshold", "policy");
    } else if (type == "multiplicative_shift") {
        r.kind = PolicyKind::multiplicative_shift;
        r.factor = get<double>(v, "factor", "multiplicative_shift policy");
    } else if (type == "discrete_map") {
        r.kind = PolicyKind::discrete_map;
        const Json& m = v.contains("map") ? v.at("map") : Json();
        if (!m.is_object() || m.empty()) throw ConfigError("discrete_map policy needs a non-empty 'map' object");
        for (const auto& [k, val] : m.items()) {
            if (!val.is_number()) throw ConfigError("discrete_map values must be numbers");
            r.table[parse_number_key(k, "discrete_map")] = val.get<double>();
        }
    } else if (type == "threshold") {
        r.kind = PolicyKind::threshold;
        r.delta = get<double>(v, "level", "threshold policy");
    } else {
        throw ConfigError("unknown policy type '" + type + "'");
    }
    return r;
}

inline ExposureSupport parse_support(const Json& v) {
    ExposureSupport s;
    if (v.is_array()) {
        for (const auto& e : v) {
            if (!e.is_number()) throw ConfigError("support values must be numbers");
            s.values.push_back(e.get<double>());
        }
        return s;
    }
    check_keys(v, {"lower", "upper"}, "support");
    if (v.contains("lower")) s.lower = get<double>(v, "lower", "support");
    if (v.contains("upper")) s.upper = get<double>(v, "upper", "support");
    return s;
}

}  // namespace config_detail

/// {"type": ...} or {"type": "per_time", "per_time": [rule, ...]}, with an
/// optional "support" (array of values or {"lower", "upper"}).
inline Policy parse_policy(const Json& v) {
    using namespace config_detail;
    if (!v.is_object()) throw ConfigError("policy must be a JSON object");
    ExposureSupport support;
    if (v.contains("support")) support = parse_support(v.at("support"));
    if (get<std::string>(v, "type", "policy") == "per_time") {
        check_keys(v, {"type", "per_time", "support"}, "policy");
        const Json& rules = v.at("per_time");
        if (!rules.is_array() || rules.empty()) throw ConfigError("'per_time' must be a non-empty array of rules");
        std::vector<PolicyRule> out;
        for (const auto& e : rules) out.push_back(parse_rule(e));
        return Policy().with_time_rules(std::move(out)).with_support(support);
    }
    return Policy(parse_rule(v), support);
}

inline CsvSchema parse_schema(const Json& v) {
    using namespace config_detail;
    check_keys(v, {"id", "covariates", "exposures", "censoring", "outcome", "bounds", "categorical"}, "schema");
    CsvSchema s;
    if (v.contains("id")) s.id = get<std::string>(v, "id", "schema");
    s.exposures = string_list(v.contains("exposures") ? v.at("exposures") : Json(), "schema.exposures");
    if (s.exposures.empty()) throw ConfigError("schema.exposures must name at least one column");
    const Json& cov = v.contains("covariates") ? v.at("covariates") : Json();
    if (!cov.is_array() || static_cast<int>(cov.size()) != s.tau())
        throw ConfigError("schema.covariates must list one array of columns per exposure");
    for (const auto& c : cov) s.covariates.push_back(string_list(c, "schema.covariates"));
    if (v.contains("censoring")) {
        s.censoring = string_list(v.at("censoring"), "schema.censoring");
        if (!s.censoring.empty() && s.censoring.size() != s.exposures.size())
            throw ConfigError("schema.censoring must list one column per exposure");
    }
    if (v.contains("outcome")) s.outcome = get<std::string>(v, "outcome", "schema");
    if (v.contains("bounds")) {
        const Json& b = v.at("bounds");
        if (!b.is_array() || b.size() != 2 || !b[0].is_number() || !b[1].is_number())
            throw ConfigError("schema.bounds must be [lower, upper]");
        s.bounds = {b[0].get<double>(), b[1].get<double>()};
    }
    if (!(s.bounds.lower < s.bounds.upper)) throw ConfigError("schema.bounds must satisfy lower < upper");
    if (v.contains("categorical")) s.categorical = string_list(v.at("categorical"), "schema.categorical");
    return s;
}

/// Parses a run configuration. A relative data path is resolved against
/// `base_dir` (the directory of the configuration file).
inline RunConfig parse_run_config(const Json& v, const std::filesystem::path& base_dir = {}) {
    using namespace config_detail;
    check_keys(v,
               {"data", "schema", "policy", "policies", "estimators", "outcome_learner", "ratio_learner", "folds", "seed",
                "truncation", "level", "crossfit", "outcome_eps", "output"},
               "configuration");
    RunConfig c;
    std::filesystem::path data = get<std::string>(v, "data", "configuration");
    if (data.is_relative() && !base_dir.empty()) data = base_dir / data;
    c.data_path = data.string();
    if (!v.contains("schema")) throw ConfigError("configuration needs a 'schema'");
    c.schema = parse_schema(v.at("schema"));

    if (v.contains("policy") == v.contains("policies")) throw ConfigError("give exactly one of 'policy' or 'policies'");
    if (v.contains("policy")) {
        c.policy_specs = {v.at("policy")};
    } else {
        const Json& ps = v.at("policies");
        if (!ps.is_array() || ps.empty() || ps.size() > 2) throw ConfigError("'policies' must hold one or two policies");
        for (const auto& p : ps) c.policy_specs.push_back(p);
    }
    for (const auto& p : c.policy_specs) c.policies.push_back(parse_policy(p));

    EstimationOptions& o = c.options;
    if (v.contains("estimators")) {
        o.estimators.clear();
        for (const auto& s : string_list(v.at("estimators"), "estimators")) o.estimators.push_back(parse_estimator(s));
        if (o.estimators.empty()) throw ConfigError("'estimators' must not be empty");
    }
    const int tau = c.schema.tau();
    if (v.contains("outcome_learner")) o.outcome_learners = parse_schedule(v.at("outcome_learner"), tau, "outcome_learner");
    if (v.contains("ratio_learner")) o.ratio_learners = parse_schedule(v.at("ratio_learner"), tau, "ratio_learner");
    if (v.contains("folds")) o.folds = get<int>(v, "folds", "configuration");
    if (v.contains("seed")) o.seed = get<std::uint64_t>(v, "seed", "configuration");
    if (v.contains("truncation") && !v.at("truncation").is_null()) o.truncation = get<double>(v, "truncation", "configuration");
    if (v.contains("level")) o.level = get<double>(v, "level", "configuration");
    if (v.contains("crossfit")) o.crossfit = get<bool>(v, "crossfit", "configuration");
    if (v.contains("outcome_eps")) o.outcome_eps = get<double>(v, "outcome_eps", "configuration");
    if (v.contains("output")) c.output = get<std::string>(v, "output", "configuration");
    if (o.crossfit && o.folds < 2) throw ConfigError("folds must be at least 2");
    if (!(o.level > 0 && o.level < 1)) throw ConfigError("level must lie in (0, 1)");
    if (o.truncation && !(*o.truncation > 0)) throw ConfigError("truncation must be positive");
    if (!(o.outcome_eps >= 0 && o.outcome_eps < 0.5)) throw ConfigError("outcome_eps must lie in [0, 0.5)");
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open configuration '" + path + "'");
    Json v;
    try {
        v = Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("configuration '" + path + "' is not valid JSON: " + e.what());
    }
    return parse_run_config(v, std::filesystem::path(path).parent_path());
}

inline Json number_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json to_json(const EstimateResult& r) {
    Json j;
    j["estimator"] = to_string(r.estimator);
    j["theta"] = number_or_null(r.theta);
    j["se"] = r.se ? number_or_null(*r.se) : Json(nullptr);
    j["ci"] = r.ci ? Json::array({r.ci->first, r.ci->second}) : Json(nullptr);
    j["level"] = r.level;
    j["n"] = r.n;
    j["tau"] = r.tau;
    Json d;
    d["score_residual"] = number_or_null(r.diagnostics.score_residual);
    d["weight_cv"] = number_or_null(r.diagnostics.weight_cv);
    d["weight_max"] = number_or_null(r.diagnostics.weight_max);
    d["fold_seed"] = r.diagnostics.fold_seed;
    d["truncated"] = r.diagnostics.truncated;
    d["clamped_to_bounds"] = r.diagnostics.clamped_to_bounds;
    j["diagnostics"] = d;
    return j;
}

inline Json to_json(const Contrast& c) {
    Json j;
    j["estimator"] = to_string(c.estimator);
    j["difference"] = number_or_null(c.difference);
    j["se"] = c.se ? number_or_null(*c.se) : Json(nullptr);
    j["ci"] = c.ci ? Json::array({c.ci->first, c.ci->second}) : Json(nullptr);
    return j;
}

}  // namespace lmtp
