#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "omnifuse/core/rng.hpp"
#include "omnifuse/model/objectives.hpp"

using namespace omnifuse;

namespace {

data::TokenIndex tok(const std::string& m, int p, const std::string& tile) {
    data::TokenIndex t;
    t.modality = m;
    t.patch = p;
    t.tile_id = tile;
    return t;
}

// Full grid: every modality at every patch of every tile.
std::vector<data::TokenIndex> grid(int mods, int tiles, int patches) {
    std::vector<data::TokenIndex> out;
    for (int ti = 0; ti < tiles; ++ti)
        for (int m = 0; m < mods; ++m)
            for (int p = 0; p < patches; ++p)
                out.push_back(tok("mod" + std::to_string(m), p, "tile" + std::to_string(ti)));
    return out;
}

// Brute-force pair classifier straight from the three rules, kept deliberately
// separate from the production construction path.
model::Match classify(const data::TokenIndex& a, const data::TokenIndex& b, bool self) {
    if (self) return model::Match::Ignored;
    if (a.tile_id == b.tile_id && a.modality == b.modality) return model::Match::Ignored;
    if (a.tile_id == b.tile_id && a.patch == b.patch && a.modality != b.modality)
        return model::Match::Positive;
    return model::Match::Negative;
}

// Independent double-loop evaluation of both contrastive variants.
double oracle_loss(const std::vector<double>& e, int d, const std::vector<data::TokenIndex>& idx,
                   double gamma, bool naive, std::vector<double>* row_terms = nullptr) {
    const int t = static_cast<int>(idx.size());
    double total = 0;
    for (int i = 0; i < t; ++i) {
        std::vector<double> pos, den;
        for (int j = 0; j < t; ++j) {
            if (j == i) continue;
            const bool is_pos = idx[i].tile_id == idx[j].tile_id && idx[i].patch == idx[j].patch &&
                                idx[i].modality != idx[j].modality;
            const bool is_ign = !naive && idx[i].tile_id == idx[j].tile_id &&
                                idx[i].modality == idx[j].modality;
            double dot = 0;
            for (int k = 0; k < d; ++k)
                dot += e[static_cast<std::size_t>(i) * d + k] * e[static_cast<std::size_t>(j) * d + k];
            const double s = dot / gamma;
            if (is_pos) {
                pos.push_back(s);
                den.push_back(s);
            } else if (!is_ign) {
                den.push_back(s);
            }
        }
        REQUIRE(!pos.empty());
        const double mx = *std::max_element(den.begin(), den.end());
        double num_sum = 0, den_sum = 0;
        for (double v : pos) num_sum += std::exp(v - mx);
        for (double v : den) den_sum += std::exp(v - mx);
        const double term = -(std::log(num_sum) - std::log(den_sum));
        if (row_terms) row_terms->push_back(term);
        total += term;
    }
    return total / t;
}

std::vector<double> randn(std::int64_t n, std::uint64_t seed) {
    Rng rng(Rng::derive(seed, {0x0badULL}));
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal(0.0, 1.0);
    return v;
}

}  // namespace

TEST_CASE("match matrix on the canonical 3-modality two-tile layout") {
    auto idx = grid(3, 2, 2);  // 12 tokens; row 0 = (mod0, patch0, tile0)
    auto mm = model::build_match_matrix(idx);
    REQUIRE(mm.t == 12);
    int pos = 0, ign = 0, neg = 0;
    for (int j = 0; j < 12; ++j) {
        switch (mm.at(0, j)) {
            case model::Match::Positive: ++pos; break;
            case model::Match::Ignored: ++ign; break;
            case model::Match::Negative: ++neg; break;
        }
    }
    CHECK(pos == 2);  // (mod1, patch0, tile0) and (mod2, patch0, tile0)
    CHECK(ign == 2);  // self and (mod0, patch1, tile0)
    CHECK(neg == 8);
    for (int j = 0; j < 12; ++j) {
        const bool expect_pos = idx[j].tile_id == "tile0" && idx[j].patch == 0 && idx[j].modality != "mod0";
        CHECK((mm.at(0, j) == model::Match::Positive) == expect_pos);
    }
}

TEST_CASE("match matrix minimal case: two modalities, one patch") {
    auto mm = model::build_match_matrix({tok("a", 0, "t"), tok("b", 0, "t")});
    CHECK(mm.at(0, 0) == model::Match::Ignored);
    CHECK(mm.at(0, 1) == model::Match::Positive);
    CHECK(mm.at(1, 0) == model::Match::Positive);
    CHECK(mm.at(1, 1) == model::Match::Ignored);
}

TEST_CASE("match matrix equals the brute-force classifier on 100 random configs") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(Rng::derive(9009, {seed}));
        const int mods = static_cast<int>(rng.uniform_int(1, 4));
        const int tiles = static_cast<int>(rng.uniform_int(1, 4));
        const int patches = static_cast<int>(rng.uniform_int(1, 4));
        std::vector<data::TokenIndex> idx;
        for (int ti = 0; ti < tiles; ++ti)
            for (int m = 0; m < mods; ++m)
                for (int p = 0; p < patches; ++p)
                    if (rng.uniform() < 0.7)
                        idx.push_back(tok("m" + std::to_string(m), p, "t" + std::to_string(ti)));
        if (idx.empty()) idx.push_back(tok("m0", 0, "t0"));
        auto mm = model::build_match_matrix(idx);
        const int t = static_cast<int>(idx.size());
        for (int i = 0; i < t; ++i)
            for (int j = 0; j < t; ++j)
                REQUIRE(mm.at(i, j) == classify(idx[i], idx[j], i == j));
        // symmetry of the positive relation
        for (int i = 0; i < t; ++i)
            for (int j = 0; j < t; ++j)
                REQUIRE((mm.at(i, j) == model::Match::Positive) ==
                        (mm.at(j, i) == model::Match::Positive));
    }
}

TEST_CASE("match matrix rejects duplicate tokens") {
    CHECK_THROWS_AS(model::build_match_matrix({tok("a", 0, "t"), tok("a", 0, "t")}),
                    std::invalid_argument);
}

TEST_CASE("contrastive loss closed forms on identical embeddings") {
    auto idx = grid(3, 2, 2);  // per row: 2 positives, denominator 10 (standard) or 11 (naive)
    auto mm = model::build_match_matrix(idx);
    std::vector<double> e(12 * 4, 0.3);
    auto std_loss = model::contrastive_loss(e, 12, 4, mm, 0.1);
    CHECK(std_loss.value == doctest::Approx(-std::log(2.0 / 10.0)).epsilon(1e-9));
    auto nv = model::naive_contrastive_loss(e, 12, 4, mm, 0.1);
    CHECK(nv.value == doctest::Approx(-std::log(2.0 / 11.0)).epsilon(1e-9));
    // identical embeddings make the ratio scale-free, so gradients cancel
    for (double gr : std_loss.grad) CHECK(std::abs(gr) < 1e-12);
}

TEST_CASE("contrastive loss vanishes when the positive dominates") {
    std::vector<data::TokenIndex> idx = {tok("a", 0, "t0"), tok("b", 0, "t0"),
                                         tok("a", 0, "t1"), tok("b", 0, "t1")};
    auto mm = model::build_match_matrix(idx);
    std::vector<double> e = {30, 0, 30, 0, 0, 30, 0, 30};  // t0 pair ⟂ t1 pair
    auto loss = model::contrastive_loss(e, 4, 2, mm, 1.0);
    CHECK(loss.value >= 0.0);
    CHECK(loss.value < 1e-6);
}

TEST_CASE("both contrastive variants match the double-loop oracle on 50 instances") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng(Rng::derive(4242, {seed}));
        const int mods = static_cast<int>(rng.uniform_int(2, 4));
        const int tiles = static_cast<int>(rng.uniform_int(1, 3));
        const int patches = static_cast<int>(rng.uniform_int(1, 4));
        auto idx = grid(mods, tiles, patches);
        const int t = static_cast<int>(idx.size());
        const int d = 8;
        auto e = randn(static_cast<std::int64_t>(t) * d, seed + 1);
        auto mm = model::build_match_matrix(idx);
        const double gamma = seed % 2 ? 0.1 : 0.7;
        auto got = model::contrastive_loss(e, t, d, mm, gamma);
        CHECK(got.value == doctest::Approx(oracle_loss(e, d, idx, gamma, false)).epsilon(1e-6));
        auto gotn = model::naive_contrastive_loss(e, t, d, mm, gamma);
        CHECK(gotn.value == doctest::Approx(oracle_loss(e, d, idx, gamma, true)).epsilon(1e-6));
        if (patches == 1) CHECK(got.value == doctest::Approx(gotn.value).epsilon(1e-9));
    }
}

TEST_CASE("contrastive gradients match finite differences") {
    auto idx = grid(3, 2, 2);
    auto mm = model::build_match_matrix(idx);
    auto e = randn(12 * 8, 5);
    for (bool naive : {false, true}) {
        auto base = model::contrastive_loss(e, 12, 8, mm, 0.1, naive);
        const double h = 1e-6;
        for (std::size_t k = 0; k < e.size(); k += 7) {
            auto ep = e, em = e;
            ep[k] += h;
            em[k] -= h;
            const double fd = (model::contrastive_loss(ep, 12, 8, mm, 0.1, naive).value -
                               model::contrastive_loss(em, 12, 8, mm, 0.1, naive).value) /
                              (2 * h);
            const double rel = std::abs(base.grad[k] - fd) /
                               std::max(1e-6, std::abs(base.grad[k]) + std::abs(fd));
            CHECK(rel < 1e-4);
        }
    }
}

TEST_CASE("same-modality same-tile additions stay out of existing denominators") {
    auto idx = grid(2, 2, 2);
    auto extended = idx;
    extended.push_back(tok("mod0", 7, "tile0"));  // new patch, same modality and tile
    auto mm_a = model::build_match_matrix(idx);
    auto mm_b = model::build_match_matrix(extended);
    const int t = static_cast<int>(idx.size());
    for (int i = 0; i < t; ++i) {
        for (int j = 0; j < t; ++j) REQUIRE(mm_a.at(i, j) == mm_b.at(i, j));
        const bool same_block = idx[i].modality == "mod0" && idx[i].tile_id == "tile0";
        // the added token lands in the exclusion set of its own modality-tile
        // block and in the negatives of everyone else
        CHECK((mm_b.at(i, t) == model::Match::Ignored) == same_block);
        CHECK((mm_b.at(i, t) == model::Match::Negative) == !same_block);
    }
}

TEST_CASE("temperature rescaling keeps the per-row positive argmax") {
    auto idx = grid(3, 2, 2);
    auto mm = model::build_match_matrix(idx);
    const int t = 12, d = 8;
    auto e = randn(t * d, 11);
    auto argmax_pos = [&](double gamma) {
        std::vector<int> arg(t, -1);
        for (int i = 0; i < t; ++i) {
            double best = -1e300;
            for (int j = 0; j < t; ++j) {
                if (mm.at(i, j) != model::Match::Positive) continue;
                double dot = 0;
                for (int k = 0; k < d; ++k) dot += e[i * d + k] * e[j * d + k];
                if (dot / gamma > best) {
                    best = dot / gamma;
                    arg[i] = j;
                }
            }
        }
        return arg;
    };
    CHECK(argmax_pos(0.05) == argmax_pos(0.5));
    CHECK(argmax_pos(0.5) == argmax_pos(5.0));
}

TEST_CASE("reconstruction loss normalizes per token and averages over the mask") {
    model::ReconInstance perfect{{1, 2, 3}, {1, 2, 3}, 3};
    CHECK(model::reconstruction_loss({perfect}).value == 0.0);

    model::ReconInstance img{{1, 0, 0, 0}, {0, 0, 0, 0}, 4};  // C=1, W=2
    CHECK(model::reconstruction_loss({img}).value == doctest::Approx(0.25).epsilon(1e-12));

    // image err^2 = 4 over dim 4, series err^2 = 3 over dim_eff 6
    model::ReconInstance a{{2, 0, 0, 0}, {0, 0, 0, 0}, 4};
    model::ReconInstance b{{1, 1, 1, 0, 0, 0}, {0, 0, 0, 0, 0, 0}, 6};
    auto two = model::reconstruction_loss({a, b});
    CHECK(two.value == doctest::Approx(0.75).epsilon(1e-12));

    // analytic gradients against central differences
    const double h = 1e-6;
    for (std::size_t k = 0; k < a.decoded.size(); ++k) {
        auto ap = a, am = a;
        ap.decoded[k] += h;
        am.decoded[k] -= h;
        const double fd = (model::reconstruction_loss({ap, b}).value -
                           model::reconstruction_loss({am, b}).value) /
                          (2 * h);
        CHECK(two.grads[0][k] == doctest::Approx(fd).epsilon(1e-6));
    }

    CHECK_THROWS_AS(model::reconstruction_loss({}), std::invalid_argument);
    model::ReconInstance bad{{1, 2}, {1}, 2};
    CHECK_THROWS_AS(model::reconstruction_loss({bad}), std::invalid_argument);
}

TEST_CASE("total loss is a switched sum") {
    CHECK(model::total_loss(1.2, 0.8, {true, true}) == doctest::Approx(2.0));
    CHECK(model::total_loss(1.2, 0.8, {false, true}) == doctest::Approx(0.8));
    CHECK(model::total_loss(1.2, 0.8, {true, false}) == doctest::Approx(1.2));
}

TEST_CASE("contrastive loss rejects rows without positives and bad gamma") {
    auto idx = grid(1, 1, 2);  // single modality: no positives anywhere
    auto mm = model::build_match_matrix(idx);
    std::vector<double> e(2 * 4, 0.1);
    CHECK_THROWS_AS(model::contrastive_loss(e, 2, 4, mm, 0.1), std::invalid_argument);
    auto good = grid(2, 1, 1);
    auto mm2 = model::build_match_matrix(good);
    CHECK_THROWS_AS(model::contrastive_loss(e, 2, 4, mm2, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(model::contrastive_loss(e, 2, 4, mm2, -1.0), std::invalid_argument);
}
