#pragma once

#include <string>
#include <vector>

namespace omnifuse::verify {

struct CheckResult {
    std::string name;
    bool pass = false;
    int cases = 0;       // individual comparisons exercised
    double seconds = 0;  // wall time of this check
    std::string detail;  // first failure, empty when passing
};

struct CheckOptions {
    int seeds = 20;            // randomized sweeps run one case per seed
    std::string inject_fault;  // "" or "grad": corrupt one analytic gradient
};

// Self-contained oracle suite: match-matrix construction, contrastive and
// reconstruction losses against double-loop references, finite-difference
// gradient checks from the bare losses up to the full tiny model, unpool
// placement, and date selection. Every check is deterministic given seeds.
std::vector<CheckResult> run_checks(const CheckOptions& opt);

inline bool all_passed(const std::vector<CheckResult>& rs) {
    for (const auto& r : rs)
        if (!r.pass) return false;
    return true;
}

}  // namespace omnifuse::verify
