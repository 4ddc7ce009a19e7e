// Draws one dataset from the four-period simulation mechanism, estimates the
// effect of lowering every exposure by one unit, and compares the estimates
// with the true value.

#include "lmtp/lmtp.hpp"

#include <cstdio>
#include <cstdlib>

int main(int argc, char** argv) {
    const lmtp::Index n = argc > 1 ? std::atol(argv[1]) : 1800;
    const lmtp::Policy policy = lmtp::Policy::clamped_decrement();
    const lmtp::LongitudinalData data = lmtp::sim::generate_dataset({n, 7});

    lmtp::EstimationOptions o;
    o.outcome_learners = lmtp::sim::consistent_learner();
    o.ratio_learners = lmtp::sim::consistent_learner();
    const lmtp::EstimationRun run = lmtp::estimate(data, policy, o);

    const lmtp::sim::DgpOracle oracle(policy);
    std::printf("true theta %.4f\n", oracle.theta());
    for (const auto& r : run.results) {
        std::printf("%-5s %.4f", lmtp::to_string(r.estimator), r.theta);
        if (r.ci) std::printf("  (%.4f, %.4f)", r.ci->first, r.ci->second);
        std::printf("\n");
    }
}
