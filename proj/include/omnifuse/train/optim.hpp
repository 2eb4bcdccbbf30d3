#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "omnifuse/nn/params.hpp"

namespace omnifuse::train {

// Adam with bias correction. Moments live on the parameters themselves so a
// checkpoint can carry them; only the step counter is held here. A non-finite
// gradient anywhere rejects the whole step before any state is touched.
template <typename T>
struct Adam {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t t = 0;

    bool step(const std::vector<nn::Parameter<T>*>& params, double lr,
              std::string* diagnostic = nullptr) {
        for (auto* p : params) {
            if (!p->trainable) continue;
            for (std::int64_t i = 0; i < p->size(); ++i) {
                if (!std::isfinite(static_cast<double>(p->grad[i]))) {
                    if (diagnostic)
                        *diagnostic = "adam: non-finite gradient in " + p->name + "[" +
                                      std::to_string(i) + "]; step rejected";
                    return false;
                }
            }
        }
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (auto* p : params) {
            if (!p->trainable) continue;
            if (p->m.size() != p->value.size()) p->m.assign(p->value.size(), T(0));
            if (p->v.size() != p->value.size()) p->v.assign(p->value.size(), T(0));
            for (std::int64_t i = 0; i < p->size(); ++i) {
                const double g = static_cast<double>(p->grad[i]);
                const double m = beta1 * static_cast<double>(p->m[i]) + (1.0 - beta1) * g;
                const double v = beta2 * static_cast<double>(p->v[i]) + (1.0 - beta2) * g * g;
                p->m[i] = static_cast<T>(m);
                p->v[i] = static_cast<T>(v);
                const double update = lr * (m / bc1) / (std::sqrt(v / bc2) + eps);
                p->value[i] = static_cast<T>(static_cast<double>(p->value[i]) - update);
            }
        }
        return true;
    }
};

// Validation-loss plateau scheduler: an improvement must beat the best seen
// by more than min_improve to reset the counter; `patience` consecutive
// non-improving epochs multiply the rate by `decay` and restart the count.
struct ReduceLROnPlateau {
    int patience = 10;
    double decay = 0.1;
    double min_improve = 1e-6;

    double best = std::numeric_limits<double>::infinity();
    int bad = 0;

    struct Result {
        bool improved = false;
        bool decayed = false;
        double lr = 0;
    };

    Result observe(double val_loss, double lr) {
        if (val_loss < best - min_improve) {
            best = val_loss;
            bad = 0;
            return {true, false, lr};
        }
        if (++bad >= patience) {
            bad = 0;
            return {false, true, lr * decay};
        }
        return {false, false, lr};
    }
};

}  // namespace omnifuse::train
