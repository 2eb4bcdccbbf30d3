#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "omnifuse/core/rng.hpp"
#include "omnifuse/core/shape.hpp"

namespace omnifuse::nn {

// One learned tensor plus its gradient and Adam moments. Modules own their
// parameters by value and expose them through register_params so that the
// optimizer, the checkpoint writer, and the gradient checker all see the same
// stable, registration-ordered list.
template <typename T>
struct Parameter {
    std::string name;
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    std::vector<T> m;
    std::vector<T> v;
    bool trainable = true;

    Parameter() = default;

    void init_zeros(Shape s) {
        shape = std::move(s);
        const auto n = static_cast<std::size_t>(numel(shape));
        value.assign(n, T(0));
        grad.assign(n, T(0));
    }

    void init_const(Shape s, T c) {
        init_zeros(std::move(s));
        for (auto& x : value) x = c;
    }

    void init_uniform(Shape s, Rng& rng, double lo, double hi) {
        init_zeros(std::move(s));
        for (auto& x : value) x = static_cast<T>(rng.uniform(lo, hi));
    }

    void init_normal(Shape s, Rng& rng, double mean, double stddev) {
        init_zeros(std::move(s));
        for (auto& x : value) x = static_cast<T>(rng.normal(mean, stddev));
    }

    // Glorot-uniform keyed on explicit fan sizes (conv kernels fold k*k into fan_in).
    void init_glorot(Shape s, Rng& rng, std::int64_t fan_in, std::int64_t fan_out) {
        const double b = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        init_uniform(std::move(s), rng, -b, b);
    }

    std::int64_t size() const { return static_cast<std::int64_t>(value.size()); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

// Collects (name, parameter) pairs from a module tree. Names are slash-joined
// by the callers so the checkpoint directory reads like a path hierarchy.
template <typename T>
class ParamRegistry {
public:
    void add(const std::string& name, Parameter<T>& p) {
        p.name = name;
        items_.push_back(&p);
    }

    std::vector<Parameter<T>*>& items() { return items_; }
    const std::vector<Parameter<T>*>& items() const { return items_; }

    std::int64_t total_size() const {
        std::int64_t n = 0;
        for (auto* p : items_) n += p->size();
        return n;
    }

    Parameter<T>* find(const std::string& name) const {
        for (auto* p : items_)
            if (p->name == name) return p;
        return nullptr;
    }

    void zero_grads() {
        for (auto* p : items_) p->zero_grad();
    }

private:
    std::vector<Parameter<T>*> items_;
};

}  // namespace omnifuse::nn
