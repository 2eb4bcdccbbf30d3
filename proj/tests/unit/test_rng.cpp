#include <doctest.h>

#include <algorithm>
#include <set>

#include "omnifuse/core/rng.hpp"

using omnifuse::Rng;

TEST_CASE("rng streams are deterministic and independent") {
    Rng a(Rng::derive(42, {1, 2}));
    Rng b(Rng::derive(42, {1, 2}));
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng c(Rng::derive(42, {1, 3}));
    Rng d(Rng::derive(42, {1, 2}));
    int same = 0;
    for (int i = 0; i < 100; ++i)
        if (c.next_u64() == d.next_u64()) ++same;
    CHECK(same == 0);
}

TEST_CASE("uniform_int covers its range inclusively") {
    Rng r(9);
    std::set<std::int64_t> seen;
    for (int i = 0; i < 2000; ++i) {
        auto v = r.uniform_int(3, 7);
        CHECK(v >= 3);
        CHECK(v <= 7);
        seen.insert(v);
    }
    CHECK(seen.size() == 5);
}

TEST_CASE("uniform stays inside half-open interval") {
    Rng r(11);
    for (int i = 0; i < 5000; ++i) {
        const double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    for (int i = 0; i < 1000; ++i) {
        const double u = r.uniform(-2.5, 4.0);
        CHECK(u >= -2.5);
        CHECK(u < 4.0);
    }
}

TEST_CASE("normal draws have plausible first moments") {
    Rng r(13);
    double s = 0, s2 = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double x = r.normal();
        s += x;
        s2 += x * x;
    }
    const double mean = s / n;
    const double var = s2 / n - mean * mean;
    CHECK(std::abs(mean) < 0.05);
    CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("shuffle permutes without loss") {
    Rng r(17);
    std::vector<int> v(50);
    for (int i = 0; i < 50; ++i) v[i] = i;
    auto w = v;
    r.shuffle(w);
    CHECK(w != v);  // 1/50! chance of false alarm
    std::sort(w.begin(), w.end());
    CHECK(w == v);
}

TEST_CASE("sample_without_replacement yields k distinct in-range values") {
    Rng r(19);
    auto s = r.sample_without_replacement(100, 10);
    CHECK(s.size() == 10);
    std::set<std::int64_t> uniq(s.begin(), s.end());
    CHECK(uniq.size() == 10);
    for (auto x : s) {
        CHECK(x >= 0);
        CHECK(x < 100);
    }
    // full draw is a permutation
    auto all = r.sample_without_replacement(12, 12);
    std::set<std::int64_t> u2(all.begin(), all.end());
    CHECK(u2.size() == 12);
}
