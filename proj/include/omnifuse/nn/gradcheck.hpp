#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "omnifuse/core/rng.hpp"
#include "omnifuse/nn/params.hpp"

namespace omnifuse::nn {

struct GradCheckEntry {
    std::string param;
    std::int64_t index = 0;
    double analytic = 0;
    double numeric = 0;
    double rel_err = 0;
};

struct GradCheckReport {
    int checked = 0;
    double max_rel_err = 0;
    GradCheckEntry worst;
    std::vector<GradCheckEntry> failures;  // entries above tol, worst first

    bool ok() const { return failures.empty(); }
};

// Central-difference check of analytic gradients against the loss closure.
//
// loss(need_grad): evaluates the loss at the current parameter values; when
// need_grad is true it must also accumulate gradients into p->grad for every
// parameter in ps (grads are zeroed here first). The closure must not mutate
// parameter values. At most max_entries coordinates are sampled across all
// tensors, allocated proportionally to size (at least one per tensor),
// coordinates chosen by the seeded rng.
inline GradCheckReport gradient_check(const std::vector<Parameter<double>*>& ps,
                                      const std::function<double(bool need_grad)>& loss,
                                      double tol, std::uint64_t seed = 7,
                                      int max_entries = 1000, double h = 1e-5) {
    for (auto* p : ps) p->zero_grad();
    loss(true);

    std::int64_t total = 0;
    for (auto* p : ps) total += p->size();

    GradCheckReport rep;
    Rng rng(Rng::derive(seed, {0x6772616463686b21ULL}));
    for (auto* p : ps) {
        if (p->size() == 0) continue;
        std::int64_t want = (static_cast<std::int64_t>(max_entries) * p->size()) / std::max<std::int64_t>(total, 1);
        want = std::max<std::int64_t>(1, std::min(want, p->size()));
        std::vector<std::int64_t> coords;
        if (want >= p->size()) {
            coords.resize(p->size());
            for (std::int64_t i = 0; i < p->size(); ++i) coords[i] = i;
        } else {
            coords = rng.sample_without_replacement(p->size(), want);
        }
        for (std::int64_t c : coords) {
            const double save = p->value[c];
            p->value[c] = save + h;
            const double lp = loss(false);
            p->value[c] = save - h;
            const double lm = loss(false);
            p->value[c] = save;
            const double numeric = (lp - lm) / (2.0 * h);
            const double analytic = p->grad[c];
            const double rel = std::abs(analytic - numeric) /
                               std::max(1e-6, std::abs(analytic) + std::abs(numeric));
            GradCheckEntry e{p->name, c, analytic, numeric, rel};
            ++rep.checked;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst = e;
            }
            if (rel > tol) rep.failures.push_back(e);
        }
    }
    std::sort(rep.failures.begin(), rep.failures.end(),
              [](const GradCheckEntry& a, const GradCheckEntry& b) { return a.rel_err > b.rel_err; });
    return rep;
}

}  // namespace omnifuse::nn
