// lmtp: estimate effects of longitudinal modified treatment policies from a
// CSV file, or run the simulation study.
//
// Exit codes: 0 success, 2 configuration or argument error, 3 data
// validation error, 4 estimation failure.

#include "lmtp/config.hpp"
#include "lmtp/lmtp.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace {

enum class LogLevel { error = 0, info = 1, debug = 2 };

LogLevel log_level() {
    const char* env = std::getenv("LMTP_LOG");
    if (!env) return LogLevel::error;
    const std::string v(env);
    if (v == "debug") return LogLevel::debug;
    if (v == "info") return LogLevel::info;
    return LogLevel::error;
}

void log(LogLevel level, const std::string& msg) {
    if (level > log_level()) return;
    static const char* names[] = {"error", "info", "debug"};
    std::cerr << "lmtp [" << names[static_cast<int>(level)] << "] " << msg << '\n';
}

constexpr int kConfigExit = 2;
constexpr int kDataExit = 3;
constexpr int kEstimationExit = 4;

struct EstimateArgs {
    std::string config;
    std::string out;
    int threads = 0;
    std::optional<int> folds;
    std::optional<std::uint64_t> seed;
    bool no_crossfit = false;
    std::optional<double> truncate;
    std::string estimators;
};

struct SimulateArgs {
    std::vector<int> scenarios{1, 2, 3, 4};
    std::vector<lmtp::Index> n{200, 800, 1800};
    int reps = 200;
    std::uint64_t seed = 1;
    std::string out;
    int threads = 0;
    int folds = 10;
    std::int64_t truth_draws = 10'000'000;
};

void write_output(const std::string& path, const std::string& text) {
    if (path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw lmtp::ConfigError("cannot write '" + path + "'");
    out << text;
}

int run_estimate(const EstimateArgs& a) {
    lmtp::RunConfig cfg = lmtp::load_run_config(a.config);
    lmtp::EstimationOptions& o = cfg.options;
    if (a.folds) o.folds = *a.folds;
    if (a.seed) o.seed = *a.seed;
    if (a.no_crossfit) o.crossfit = false;
    if (a.truncate) {
        if (!(*a.truncate > 0)) throw lmtp::ConfigError("--truncate must be positive");
        o.truncation = a.truncate;
    }
    if (!a.estimators.empty()) {
        o.estimators.clear();
        std::stringstream ss(a.estimators);
        for (std::string item; std::getline(ss, item, ',');) o.estimators.push_back(lmtp::parse_estimator(item));
    }
    if (o.crossfit && o.folds < 2) throw lmtp::ConfigError("--folds must be at least 2");
    o.threads = lmtp::resolve_threads(a.threads);
    const std::string out_path = a.out.empty() ? cfg.output : a.out;

    log(LogLevel::info, "loading " + cfg.data_path);
    const lmtp::LongitudinalData data = lmtp::load_longitudinal_csv(cfg.data_path, cfg.schema);
    log(LogLevel::info, "n = " + std::to_string(data.n()) + ", tau = " + std::to_string(data.tau()));

    lmtp::Json doc;
    doc["runs"] = lmtp::Json::array();
    std::vector<lmtp::EstimationRun> runs;
    for (std::size_t k = 0; k < cfg.policies.size(); ++k) {
        runs.push_back(lmtp::estimate(data, cfg.policies[k], o));
        const lmtp::EstimationRun& run = runs.back();
        if (!run.support_violations.empty()) {
            const auto& v = run.support_violations.front();
            log(LogLevel::error, std::to_string(run.support_violations.size()) +
                                     " intervened exposures fall outside the observed support (first: trajectory " +
                                     data.ids()[static_cast<std::size_t>(v.row)] + ", time " + std::to_string(v.time + 1) + ")");
        }
        lmtp::Json entry;
        entry["policy"] = cfg.policy_specs[k];
        entry["results"] = lmtp::Json::array();
        for (const auto& r : run.results) {
            entry["results"].push_back(lmtp::to_json(r));
            log(LogLevel::debug, std::string(lmtp::to_string(r.estimator)) + " theta = " + std::to_string(r.theta));
        }
        entry["support_violations"] = run.support_violations.size();
        doc["runs"].push_back(entry);
    }
    if (runs.size() == 2) {
        doc["contrast"] = lmtp::Json::array();
        for (const auto& c : lmtp::contrast(runs[0], runs[1], o.level, data.weights())) doc["contrast"].push_back(lmtp::to_json(c));
    }
    write_output(out_path, doc.dump(2) + "\n");
    return 0;
}

int run_simulate(const SimulateArgs& a) {
    for (int s : a.scenarios)
        if (s < 1 || s > 4) throw lmtp::ConfigError("--scenario values must lie in {1, 2, 3, 4}");
    for (lmtp::Index n : a.n)
        if (n < a.folds) throw lmtp::ConfigError("--n values must be at least the fold count");
    if (a.reps < 2) throw lmtp::ConfigError("--reps must be at least 2");
    if (a.folds < 2) throw lmtp::ConfigError("--folds must be at least 2");
    if (a.truth_draws < 2) throw lmtp::ConfigError("--truth-draws must be at least 2");

    const int threads = lmtp::resolve_threads(a.threads);
    const lmtp::Policy policy = lmtp::Policy::clamped_decrement();
    const lmtp::sim::SimulationTruth truth =
        lmtp::sim::simulation_truth(policy, a.truth_draws, lmtp::derive_seed(a.seed, 7), threads);
    log(LogLevel::info, "theta_true = " + std::to_string(truth.theta) + " (MC se " + std::to_string(truth.theta_mc_se) +
                            "), efficiency bound = " + std::to_string(truth.bound));

    lmtp::sim::StudyOptions so;
    so.reps = a.reps;
    so.folds = a.folds;
    so.master_seed = a.seed;
    so.threads = threads;

    std::ostringstream csv;
    lmtp::sim::write_metrics_header(csv);
    std::ostringstream table;
    table << "scenario estimator      n     bias  sqrt_n_bias  n_mse/bound  coverage  rel_se  failures\n";
    for (int s : a.scenarios) {
        for (lmtp::Index n : a.n) {
            log(LogLevel::info, "scenario " + std::to_string(s) + ", n = " + std::to_string(n));
            for (const auto& row : lmtp::sim::run_scenario(lmtp::sim::scenario(s), policy, truth, n, so)) {
                lmtp::sim::write_metrics_row(csv, row);
                char line[160];
                std::snprintf(line, sizeof line, "%8d %-9s %6lld %8.4f %12.3f %12.3f %9.3f %7.3f %9d\n", row.scenario,
                              lmtp::to_string(row.estimator), static_cast<long long>(row.n), row.bias, row.sqrt_n_bias,
                              row.n_mse_over_bound, row.coverage, row.rel_se, row.failures);
                table << line;
            }
        }
    }
    if (a.out.empty()) {
        std::cout << csv.str();
    } else {
        write_output(a.out, csv.str());
        std::cout << table.str();
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Longitudinal modified treatment policy estimation"};
    app.require_subcommand(1);

    EstimateArgs ea;
    auto* est = app.add_subcommand("estimate", "Estimate the mean outcome under one or two policies");
    est->add_option("--config", ea.config, "JSON run configuration")->required();
    est->add_option("--out", ea.out, "Result JSON path (default: config 'output', else stdout)");
    est->add_option("--threads", ea.threads, "Worker threads (default: available parallelism)");
    est->add_option("--folds", ea.folds, "Cross-fitting folds");
    est->add_option("--seed", ea.seed, "Fold seed");
    est->add_flag("--no-crossfit", ea.no_crossfit, "Fit nuisances on the full sample");
    est->add_option("--truncate", ea.truncate, "Cap on density ratios");
    est->add_option("--estimators", ea.estimators, "Comma-separated subset of sub,ipw,tmle,sdr");

    SimulateArgs sa;
    auto* simc = app.add_subcommand("simulate", "Run the four-scenario simulation study");
    simc->add_option("--scenario", sa.scenarios, "Scenarios (1-4)")->delimiter(',');
    simc->add_option("--n", sa.n, "Sample sizes")->delimiter(',');
    simc->add_option("--reps", sa.reps, "Replications per cell");
    simc->add_option("--seed", sa.seed, "Master seed");
    simc->add_option("--out", sa.out, "Metrics CSV path (default: stdout)");
    simc->add_option("--threads", sa.threads, "Worker threads (default: available parallelism)");
    simc->add_option("--folds", sa.folds, "Cross-fitting folds");
    simc->add_option("--truth-draws", sa.truth_draws, "Monte Carlo draws for the true parameter");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfigExit;
    }

    try {
        if (*est) return run_estimate(ea);
        return run_simulate(sa);
    } catch (const lmtp::ConfigError& e) {
        log(LogLevel::error, std::string("configuration error: ") + e.what());
        return kConfigExit;
    } catch (const lmtp::DataError& e) {
        log(LogLevel::error, std::string("data error: ") + e.what());
        return kDataExit;
    } catch (const lmtp::DomainError& e) {
        log(LogLevel::error, std::string("data error: ") + e.what());
        return kDataExit;
    } catch (const std::exception& e) {
        log(LogLevel::error, std::string("estimation failed: ") + e.what());
        return kEstimationExit;
    }
}
