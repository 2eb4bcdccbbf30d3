#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace omnifuse {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

inline void check(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

// Plain n-d value container used for dataset payloads and raw token views.
template <typename T>
struct NdArray {
    Shape shape;
    std::vector<T> v;

    NdArray() = default;
    explicit NdArray(Shape s) : shape(std::move(s)), v(static_cast<std::size_t>(numel(shape)), T(0)) {}
    NdArray(Shape s, std::vector<T> data) : shape(std::move(s)), v(std::move(data)) {
        check(static_cast<std::int64_t>(v.size()) == numel(shape),
              "NdArray: data size does not match shape " + shape_str(shape));
    }

    std::int64_t size() const { return static_cast<std::int64_t>(v.size()); }
    T* data() { return v.data(); }
    const T* data() const { return v.data(); }
};

using ArrayF = NdArray<float>;
using ArrayD = NdArray<double>;

}  // namespace omnifuse
