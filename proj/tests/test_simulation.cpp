#include "helpers.hpp"

#include <catch_amalgamated.hpp>

#include <array>
#include <functional>
#include <random>
#include <sstream>

using namespace lmtp;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

// Exact nuisances of a toy model computed straight from its conditional
// tables, kept apart from ToyModel::exact so the two can check each other.
struct ToyTruth {
    std::array<double, sim::ToyModel::kCells0> m1{}, r1{};
    std::array<double, sim::ToyModel::kCells1> m2{}, r2{};
    double theta = 0;
};

ToyTruth toy_truth(const sim::ToyModel& toy, const Policy& d) {
    using T = sim::ToyModel;
    ToyTruth out;
    auto dd = [&](int t, int a) { return static_cast<int>(d.apply(t, a)); };
    for (int l1 = 0; l1 < 2; ++l1)
        for (int a1 = 0; a1 < 3; ++a1)
            for (int l2 = 0; l2 < 2; ++l2)
                for (int a2 = 0; a2 < 3; ++a2) {
                    const int c = T::cell1(l1, a1, l2, a2);
                    out.m2[c] = toy.prob_y(1, l1, a1, l2, a2);
                    double num = 0;
                    for (int s = 0; s < 3; ++s) num += dd(1, s) == a2 ? toy.prob_a2(s, l1, a1, l2) : 0.0;
                    out.r2[c] = num / toy.prob_a2(a2, l1, a1, l2);
                }
    for (int l1 = 0; l1 < 2; ++l1)
        for (int a1 = 0; a1 < 3; ++a1) {
            const int c = T::cell0(l1, a1);
            double m = 0;
            for (int l2 = 0; l2 < 2; ++l2)
                for (int a2 = 0; a2 < 3; ++a2)
                    m += toy.prob_l2(l2, l1, a1) * toy.prob_a2(a2, l1, a1, l2) * out.m2[T::cell1(l1, a1, l2, dd(1, a2))];
            out.m1[c] = m;
            double num = 0;
            for (int s = 0; s < 3; ++s) num += dd(0, s) == a1 ? toy.prob_a1(s, l1) : 0.0;
            out.r1[c] = num / toy.prob_a1(a1, l1);
        }
    for (int l1 = 0; l1 < 2; ++l1)
        for (int a1 = 0; a1 < 3; ++a1) out.theta += toy.prob_l1(l1) * toy.prob_a1(a1, l1) * out.m1[T::cell0(l1, dd(0, a1))];
    return out;
}

using Eta = ToyTruth;  // same layout: m', r' per cell

Eta random_eta(std::mt19937_64& gen) {
    std::uniform_real_distribution<double> m(0.01, 0.99), r(0.0, 3.0);
    Eta e;
    for (auto& v : e.m1) v = m(gen);
    for (auto& v : e.r1) v = r(gen);
    for (auto& v : e.m2) v = m(gen);
    for (auto& v : e.r2) v = r(gen);
    return e;
}

// For each cell of (A1, H1): E[phi_2(eta')], Rem_1; and overall E[phi_1(eta')], Rem_0.
struct ExpansionSides {
    std::array<double, sim::ToyModel::kCells0> e_phi2{}, rem1{}, mass{};
    double e_phi1 = 0, rem0 = 0;
};

ExpansionSides expansion_sides(const sim::ToyModel& toy, const Policy& d, const Eta& ep, const ToyTruth& tr) {
    using T = sim::ToyModel;
    ExpansionSides s;
    for (const auto& z : toy.atoms()) {
        const int c0 = T::cell0(z.l1, z.a1), c1 = T::cell1(z.l1, z.a1, z.l2, z.a2);
        const int c0d = T::cell0(z.l1, static_cast<int>(d.apply(0, z.a1)));
        const int c1d = T::cell1(z.l1, z.a1, z.l2, static_cast<int>(d.apply(1, z.a2)));
        const double phi2 = ep.r2[c1] * (z.y - ep.m2[c1]) + ep.m2[c1d];
        const double phi1 = ep.r1[c0] * (phi2 - ep.m1[c0]) + ep.m1[c0d];
        const double rem2_term = (ep.r2[c1] - tr.r2[c1]) * (ep.m2[c1] - tr.m2[c1]);
        s.e_phi2[c0] += z.prob * phi2;
        s.rem1[c0] += z.prob * rem2_term;
        s.mass[c0] += z.prob;
        s.e_phi1 += z.prob * phi1;
        s.rem0 += z.prob * ((ep.r1[c0] - tr.r1[c0]) * (ep.m1[c0] - tr.m1[c0]) + ep.r1[c0] * rem2_term);
    }
    for (int c = 0; c < T::kCells0; ++c) {
        s.e_phi2[c] /= s.mass[c];
        s.rem1[c] /= s.mass[c];
    }
    return s;
}

}  // namespace

TEST_CASE("the mechanism is deterministic in its seed") {
    const auto a = sim::generate_dataset({500, 3});
    const auto b = sim::generate_dataset({500, 3});
    const auto c = sim::generate_dataset({500, 4});
    CHECK(a.outcome() == b.outcome());
    bool differs = a.outcome() != c.outcome();
    for (int t = 0; t < 4; ++t) {
        CHECK(a.exposure(t) == b.exposure(t));
        CHECK(a.covariates(t) == b.covariates(t));
        differs = differs || a.exposure(t) != c.exposure(t);
    }
    CHECK(differs);
    CHECK(a.tau() == 4);
    CHECK(a.time(0).columns.size() == 3);
    CHECK(a.time(0).columns[1].source == "L1");
    CHECK_THROWS_AS(sim::generate_dataset({0, 1}), ConfigError);
    CHECK(expit(0.0) == 0.5);
}

TEST_CASE("baseline covariate marginal and first exposure") {
    const auto d = sim::generate_dataset({1000000, 12});
    std::array<double, 3> freq{};
    for (Index i = 0; i < d.n(); ++i) {
        const int l1 = static_cast<int>(sim::DgpOracle::covariate_value(d, 0, i));
        freq[static_cast<std::size_t>(l1 - 1)] += 1.0 / static_cast<double>(d.n());
        if (l1 == 1) REQUIRE(d.exposure(0)(i) == 0.0);
    }
    CHECK_THAT(freq[0], WithinAbs(0.5, 0.002));
    CHECK_THAT(freq[1], WithinAbs(0.25, 0.002));
    CHECK_THAT(freq[2], WithinAbs(0.25, 0.002));
}

TEST_CASE("Monte Carlo truth agrees with the exact parameter") {
    const Policy id = Policy::identity();
    const auto mc_id = sim::oracle_theta_mc(id, 400000, 5);
    const double exact_id = sim::DgpOracle(id).theta();
    CHECK(std::abs(mc_id.mean - exact_id) <= 3 * mc_id.se);
    const auto d = sim::generate_dataset({400000, 6});
    const double ybar = d.outcome().mean();
    CHECK(std::abs(ybar - exact_id) <= 4 * std::sqrt(ybar * (1 - ybar) / 400000));

    const Policy shift = Policy::clamped_decrement();
    const auto a = sim::oracle_theta_mc(shift, 400000, 7);
    const auto b = sim::oracle_theta_mc(shift, 400000, 8);
    CHECK(std::abs(a.mean - b.mean) <= 6 * std::hypot(a.se, b.se));
    CHECK(std::abs(a.mean - sim::DgpOracle(shift).theta()) <= 4 * a.se);
    CHECK(a.mean < exact_id);  // lower exposure lowers the risk here
}

TEST_CASE("Monte Carlo truth is independent of the thread count") {
    const Policy shift = Policy::clamped_decrement();
    const auto one = sim::oracle_theta_mc(shift, 100000, 9, 1);
    const auto four = sim::oracle_theta_mc(shift, 100000, 9, 4);
    CHECK(one.mean == four.mean);
    CHECK(one.se == four.se);
}

TEST_CASE("efficiency bound matches the variance of the exact influence function") {
    const Policy shift = Policy::clamped_decrement();
    const sim::DgpOracle oracle(shift);
    const double bound = oracle.efficiency_bound();
    CHECK(bound > 0);

    // Every trajectory of the mechanism as one weighted row.
    std::vector<std::array<int, 9>> paths;  // l1, a1, l2, a2, l3, a3, l4, a4, y
    std::vector<double> probs;
    std::array<int, 9> z{};
    std::function<void(int, double)> walk = [&](int t, double p) {
        if (t == 4) {
            const double py = sim::dgp::y_success(z[7], z[6]);
            for (int y = 0; y <= 1; ++y) {
                z[8] = y;
                paths.push_back(z);
                probs.push_back(p * (y == 1 ? py : 1 - py));
            }
            return;
        }
        const double pa = t == 0 ? sim::dgp::a1_success(z[0]) : sim::dgp::a_success(t, z[2 * t], z[2 * t - 1]);
        for (int a = 0; a <= 5; ++a) {
            const double q = sim::dgp::binomial_pmf(a, 5, pa);
            if (q == 0.0) continue;
            z[2 * t + 1] = a;
            if (t == 3) {
                walk(4, p * q);
                continue;
            }
            const double pl = sim::dgp::l_success(z[2 * t], a);
            for (int l = 0; l <= 1; ++l) {
                z[2 * t + 2] = l;
                walk(t + 1, p * q * (l == 1 ? pl : 1 - pl));
            }
        }
    };
    for (int l1 = 1; l1 <= 3; ++l1) {
        z[0] = l1;
        walk(0, sim::dgp::kL1Probs[static_cast<std::size_t>(l1 - 1)]);
    }
    const auto n = static_cast<Index>(paths.size());
    std::vector<TimePoint> times(4);
    times[0].columns = {{"L1=1", "L1", "1"}, {"L1=2", "L1", "2"}, {"L1=3", "L1", "3"}};
    times[0].covariates = Matrix::Zero(n, 3);
    for (int t = 1; t < 4; ++t) {
        times[static_cast<std::size_t>(t)].columns = {{"L" + std::to_string(t + 1), "", ""}};
        times[static_cast<std::size_t>(t)].covariates.resize(n, 1);
    }
    Vector y(n), w(n);
    std::vector<std::string> ids;
    for (Index i = 0; i < n; ++i) {
        const auto& p = paths[static_cast<std::size_t>(i)];
        times[0].covariates(i, p[0] - 1) = 1.0;
        for (int t = 0; t < 4; ++t) {
            if (t > 0) times[static_cast<std::size_t>(t)].covariates(i, 0) = p[static_cast<std::size_t>(2 * t)];
            if (i == 0) times[static_cast<std::size_t>(t)].exposure.resize(n);
            times[static_cast<std::size_t>(t)].exposure(i) = p[static_cast<std::size_t>(2 * t + 1)];
        }
        y(i) = p[8];
        w(i) = probs[static_cast<std::size_t>(i)];
        ids.push_back(std::to_string(i + 1));
    }
    const LongitudinalData pop(std::move(ids), std::move(times), y, OutcomeBounds{0.0, 1.0}, w);
    CHECK_THAT(w.sum(), WithinAbs(1.0, 1e-12));

    const NuisanceSet eta = oracle.nuisances(pop, OutcomeScaler(OutcomeBounds{0.0, 1.0}, 0.0));
    const Vector phi = phi_recursion(eta.ratios.ratios, eta.m_natural, eta.m_shifted, y, 0);
    const double mean = phi.dot(w);
    CHECK_THAT(mean, WithinAbs(oracle.theta(), 1e-12));
    CHECK_THAT((phi.array() - mean).square().matrix().dot(w), WithinRel(bound, 1e-10));
}

TEST_CASE("toy model is normalized") {
    for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
        const auto toy = sim::ToyModel::random(seed);
        KahanSum total;
        for (const auto& a : toy.atoms()) total.add(a.prob);
        CHECK_THAT(total.value(), WithinAbs(1.0, 1e-14));
        for (int l1 = 0; l1 < 2; ++l1) {
            CHECK_THAT(toy.prob_a1(0, l1) + toy.prob_a1(1, l1) + toy.prob_a1(2, l1), WithinAbs(1.0, 1e-15));
            for (int a1 = 0; a1 < 3; ++a1)
                for (int l2 = 0; l2 < 2; ++l2)
                    CHECK_THAT(toy.prob_a2(0, l1, a1, l2) + toy.prob_a2(1, l1, a1, l2) + toy.prob_a2(2, l1, a1, l2),
                               WithinAbs(1.0, 1e-15));
        }
    }
}

TEST_CASE("toy exact tables agree with direct enumeration") {
    const auto toy = sim::ToyModel::random(5);
    for (const Policy& d : {Policy::clamped_decrement(), Policy::identity(), Policy::discrete_map({{0, 2}, {1, 2}, {2, 0}})}) {
        const auto tab = toy.exact(d);
        const auto tr = toy_truth(toy, d);
        for (int c = 0; c < sim::ToyModel::kCells0; ++c) {
            CHECK_THAT(tab.m[0][c], WithinAbs(tr.m1[c], 1e-14));
            CHECK_THAT(tab.r[0][c], WithinAbs(tr.r1[c], 1e-14));
        }
        for (int c = 0; c < sim::ToyModel::kCells1; ++c) {
            CHECK_THAT(tab.m[1][c], WithinAbs(tr.m2[c], 1e-14));
            CHECK_THAT(tab.r[1][c], WithinAbs(tr.r2[c], 1e-14));
        }
        CHECK_THAT(toy.exhaustive_theta(d), WithinAbs(tr.theta, 1e-14));
    }
    double ey = 0;
    for (const auto& a : toy.atoms()) ey += a.y * a.prob;
    CHECK_THAT(toy.exhaustive_theta(Policy::identity()), WithinAbs(ey, 1e-14));
}

TEST_CASE("toy exhaustive parameter matches forward simulation") {
    const auto toy = sim::ToyModel::random(6);
    const Policy d = Policy::clamped_decrement();
    const auto [mean, se] = toy.oracle_theta_mc(d, 1000000, 17);
    CHECK(std::abs(mean - toy.exhaustive_theta(d)) <= 4 * se);
}

TEST_CASE("first-order approximation holds exactly on the toy") {
    const auto toy = sim::ToyModel::random(7);
    std::mt19937_64 gen(99);
    for (const Policy& d : {Policy::clamped_decrement(), Policy::discrete_map({{0, 1}, {1, 2}, {2, 2}})}) {
        const auto tr = toy_truth(toy, d);
        const auto exact = expansion_sides(toy, d, tr, tr);
        CHECK_THAT(exact.rem0, WithinAbs(0.0, 1e-15));
        for (int k = 0; k < 100; ++k) {
            const Eta ep = random_eta(gen);
            const auto s = expansion_sides(toy, d, ep, tr);
            REQUIRE_THAT(tr.theta - s.e_phi1 - s.rem0, WithinAbs(0.0, 1e-12));
            for (int c = 0; c < sim::ToyModel::kCells0; ++c) REQUIRE_THAT(tr.m1[c] - s.e_phi2[c] - s.rem1[c], WithinAbs(0.0, 1e-12));
        }
    }
}

TEST_CASE("phi is unbiased when each later time has one exact nuisance") {
    const auto toy = sim::ToyModel::random(8);
    const Policy d = Policy::clamped_decrement();
    const auto tr = toy_truth(toy, d);
    std::mt19937_64 gen(5);
    for (int k = 0; k < 100; ++k) {
        Eta ep = random_eta(gen);
        const bool exact_m1 = (k & 1) != 0, exact_m2 = (k & 2) != 0;
        if (exact_m1) ep.m1 = tr.m1;
        else ep.r1 = tr.r1;
        if (exact_m2) ep.m2 = tr.m2;
        else ep.r2 = tr.r2;
        const auto s = expansion_sides(toy, d, ep, tr);
        REQUIRE_THAT(s.e_phi1, WithinAbs(tr.theta, 1e-12));
        for (int c = 0; c < sim::ToyModel::kCells0; ++c) REQUIRE_THAT(s.e_phi2[c], WithinAbs(tr.m1[c], 1e-12));
    }
}

TEST_CASE("scenarios assign consistent learners by time point") {
    auto kind = [](const LearnerSchedule& s, int t) { return s.at(t).specs.front().kind; };
    const auto sat = LearnerKind::saturated, icpt = LearnerKind::intercept_only;
    const auto s1 = sim::scenario(1), s2 = sim::scenario(2), s3 = sim::scenario(3), s4 = sim::scenario(4);
    for (int t = 0; t < 4; ++t) {
        CHECK(kind(s1.outcome, t) == sat);
        CHECK(kind(s1.ratio, t) == sat);
        CHECK(kind(s2.outcome, t) == (t >= 2 ? sat : icpt));
        CHECK(kind(s2.ratio, t) == (t < 2 ? sat : icpt));
        CHECK(kind(s3.outcome, t) == (t < 3 ? sat : icpt));
        CHECK(kind(s3.ratio, t) == (t == 3 ? sat : icpt));
        CHECK(kind(s4.outcome, t) == icpt);
        CHECK(kind(s4.ratio, t) == icpt);
    }
    CHECK_THROWS_AS(sim::scenario(5), ConfigError);
}

TEST_CASE("scenario runs produce one metrics row per estimator") {
    const Policy d = Policy::clamped_decrement();
    const sim::SimulationTruth truth{sim::DgpOracle(d).theta(), 0.0, sim::DgpOracle(d).efficiency_bound()};
    sim::StudyOptions o;
    o.reps = 6;
    o.folds = 2;
    const auto rows = sim::run_scenario(sim::scenario(1), d, truth, 200, o);
    REQUIRE(rows.size() == 4);
    for (const auto& r : rows) {
        CHECK(r.n == 200);
        CHECK(r.failures == 0);
        CHECK(std::isfinite(r.bias));
        const bool inference = r.estimator == EstimatorKind::tmle || r.estimator == EstimatorKind::sdr;
        CHECK(std::isfinite(r.coverage) == inference);
        if (inference) CHECK((r.coverage >= 0 && r.coverage <= 1));
    }
    o.threads = 3;
    const auto again = sim::run_scenario(sim::scenario(1), d, truth, 200, o);
    for (std::size_t k = 0; k < 4; ++k) CHECK(again[k].bias == rows[k].bias);

    std::ostringstream csv;
    sim::write_metrics_header(csv);
    sim::write_metrics_row(csv, rows[0]);
    std::string header, line;
    std::istringstream in(csv.str());
    std::getline(in, header);
    std::getline(in, line);
    CHECK(header == "scenario,estimator,n,reps,bias,sqrt_n_bias,n_mse_over_bound,coverage,rel_se,failures");
    CHECK(std::count(line.begin(), line.end(), ',') == 9);
    CHECK(line.rfind("1,sub,200,6,", 0) == 0);
    CHECK(line.find(",NA,NA,0") != std::string::npos);
}
