#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "omnifuse/core/rng.hpp"
#include "omnifuse/model/fusion.hpp"
#include "omnifuse/nn/gradcheck.hpp"

using namespace omnifuse;

namespace {

constexpr double kCell = 10.0;

// Token batch over a gx-by-gy patch grid per tile, every modality at every
// patch, positions at patch centers.
data::TokenBatch make_batch(const std::vector<std::string>& tiles,
                            const std::vector<std::string>& mods, int gx, int gy) {
    data::TokenBatch b;
    for (const auto& tile : tiles)
        for (const auto& m : mods)
            for (int p = 0; p < gx * gy; ++p) {
                data::TokenIndex ti;
                ti.modality = m;
                ti.patch = p;
                ti.tile_id = tile;
                ti.pos_x_m = (p % gx + 0.5) * kCell;
                ti.pos_y_m = (p / gx + 0.5) * kCell;
                b.indices.push_back(ti);
            }
    return b;
}

std::vector<double> randn(std::int64_t n, std::uint64_t seed) {
    Rng rng(Rng::derive(seed, {0xf00dULL}));
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal(0.0, 1.0);
    return v;
}

model::Fusion<double> make_fusion(int d, int heads, int b, std::uint64_t seed,
                                  bool abs_mode = false) {
    Rng rng(seed);
    model::Fusion<double> f;
    const double diag = std::sqrt(2.0) * 2 * kCell;  // 2x2 grid of 10 m cells
    f.init(d, heads, b, kCell, diag, abs_mode, 4, rng);
    return f;
}

}  // namespace

TEST_CASE("relative bias buckets distances and blocks cross-tile attention") {
    Rng rng(4);
    model::RelPosTable<double> table;
    table.init(2, 16, 10.0, 50.0, rng);

    for (int b = 1; b < 15; ++b) CHECK(table.edges[b] > table.edges[b - 1]);
    CHECK(table.bucket_of(0.0) == 0);

    std::vector<std::pair<double, double>> pos = {{0, 0}, {30, 40}, {0, 10}};
    std::vector<std::string> tiles = {"a", "a", "b"};
    auto bias = model::relative_bias(pos, tiles, table);
    const int t = 3;
    // distance 50 between the first two tokens (3-4-5 triangle)
    const int b50 = table.bucket_of(50.0);
    for (int h = 0; h < 2; ++h) {
        CHECK(bias[(h * t + 0) * t + 1] == table.table.value[h * 16 + b50]);
        // zero distance on the diagonal reads bucket 0
        CHECK(bias[(h * t + 0) * t + 0] == table.table.value[h * 16 + 0]);
        // symmetry
        CHECK(bias[(h * t + 0) * t + 1] == bias[(h * t + 1) * t + 0]);
        // cross-tile pairs are unreachable
        CHECK(bias[(h * t + 0) * t + 2] == -1e30);
        CHECK(bias[(h * t + 2) * t + 0] == -1e30);
    }
}

TEST_CASE("mask_tokens honors ratio, strategy, and seed") {
    auto batch = make_batch({"t0", "t1"}, {"a", "b", "c"}, 2, 2);  // 24 tokens
    CHECK(model::mask_tokens(batch, 0.0, model::MaskStrategy::Random, 1).indices.empty());

    auto half = model::mask_tokens(batch, 0.5, model::MaskStrategy::Random, 1);
    CHECK(half.indices.size() == 12);
    auto again = model::mask_tokens(batch, 0.5, model::MaskStrategy::Random, 1);
    CHECK(half.masked == again.masked);
    auto other = model::mask_tokens(batch, 0.5, model::MaskStrategy::Random, 2);
    CHECK(half.masked != other.masked);

    SUBCASE("modality strategy masks all tokens of exactly one modality per tile") {
        auto ms = model::mask_tokens(batch, 0.9, model::MaskStrategy::Modality, 7);
        for (const auto& tile : {"t0", "t1"}) {
            std::set<std::string> masked_mods, unmasked_mods;
            for (std::size_t i = 0; i < batch.indices.size(); ++i) {
                if (batch.indices[i].tile_id != tile) continue;
                (ms.masked[i] ? masked_mods : unmasked_mods).insert(batch.indices[i].modality);
            }
            CHECK(masked_mods.size() == 1);
            CHECK(unmasked_mods.size() == 2);
            CHECK(unmasked_mods.count(*masked_mods.begin()) == 0);
        }
    }

    SUBCASE("spatial strategy masks whole patches across modalities") {
        auto ms = model::mask_tokens(batch, 0.5, model::MaskStrategy::Spatial, 3);
        for (const auto& tile : {"t0", "t1"}) {
            std::set<int> masked_patches;
            for (std::size_t i = 0; i < batch.indices.size(); ++i)
                if (batch.indices[i].tile_id == tile && ms.masked[i])
                    masked_patches.insert(batch.indices[i].patch);
            CHECK(masked_patches.size() == 2);  // floor(0.5 * 4)
            for (std::size_t i = 0; i < batch.indices.size(); ++i)
                if (batch.indices[i].tile_id == tile)
                    CHECK(static_cast<bool>(ms.masked[i]) ==
                          (masked_patches.count(batch.indices[i].patch) > 0));
        }
    }

    CHECK_THROWS_AS(model::mask_tokens(batch, 1.0, model::MaskStrategy::Random, 1),
                    std::invalid_argument);
}

TEST_CASE("combine yields one finite row per patch even with a modality fully masked") {
    auto batch = make_batch({"t0", "t1"}, {"a", "b"}, 2, 2);
    auto f = make_fusion(8, 2, 1, 100);
    auto ms = model::mask_tokens(batch, 0.0, model::MaskStrategy::Modality, 5);
    nn::Graph<double> g;
    auto emb = g.leaf({16, 8}, randn(16 * 8, 1));
    auto out = f.combine(g, emb, batch, &ms.masked);
    CHECK(out.layout.rows == 8);  // 2 tiles x 4 patches
    REQUIRE(out.layout.tiles.size() == 2);
    CHECK(out.layout.tiles[0].tile_id == "t0");
    CHECK(out.layout.tiles[0].patches == std::vector<int>{0, 1, 2, 3});
    CHECK(out.layout.tiles[1].row0 == 4);
    CHECK(out.fused.shape() == Shape{8, 8});
    for (double v : out.fused.value()) CHECK(std::isfinite(v));
    CHECK(out.layout.row_of("t1", 2) == 6);
}

TEST_CASE("combine is invariant to permuting token rows") {
    auto batch = make_batch({"t1", "t0"}, {"a", "b", "c"}, 2, 2);
    const int t = static_cast<int>(batch.indices.size());
    auto f = make_fusion(8, 2, 2, 101);
    auto base = randn(static_cast<std::int64_t>(t) * 8, 2);

    nn::Graph<double> g;
    auto out = f.combine(g, g.leaf({t, 8}, base), batch, nullptr);

    Rng rng(55);
    std::vector<std::int64_t> perm(t);
    for (int i = 0; i < t; ++i) perm[i] = i;
    rng.shuffle(perm);
    data::TokenBatch shuffled;
    std::vector<double> semb(base.size());
    for (int i = 0; i < t; ++i) {
        shuffled.indices.push_back(batch.indices[perm[i]]);
        std::copy(base.begin() + perm[i] * 8, base.begin() + (perm[i] + 1) * 8,
                  semb.begin() + static_cast<std::int64_t>(i) * 8);
    }
    nn::Graph<double> g2;
    auto out2 = f.combine(g2, g2.leaf({t, 8}, semb), shuffled, nullptr);

    REQUIRE(out.layout.rows == out2.layout.rows);
    CHECK(out.layout.tiles[0].tile_id == out2.layout.tiles[0].tile_id);
    for (std::int64_t i = 0; i < out.fused.size(); ++i)
        CHECK(out.fused.value()[i] == doctest::Approx(out2.fused.value()[i]).epsilon(1e-5));
}

TEST_CASE("tiles are processed in bit-level isolation") {
    auto batch = make_batch({"ta", "tb"}, {"a", "b"}, 2, 2);
    auto f = make_fusion(8, 2, 2, 102);
    auto base = randn(16 * 8, 3);
    nn::Graph<double> g;
    auto out = f.combine(g, g.leaf({16, 8}, base), batch, nullptr);

    // wipe tile tb's embeddings; tile ta's fused rows must not move a bit
    auto wiped = base;
    for (int i = 0; i < 16; ++i)
        if (batch.indices[i].tile_id == "tb")
            std::fill(wiped.begin() + i * 8, wiped.begin() + (i + 1) * 8, 0.0);
    nn::Graph<double> g2;
    auto out2 = f.combine(g2, g2.leaf({16, 8}, wiped), batch, nullptr);
    bool tb_changed = false;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 8; ++c) {
            CHECK(out.fused.value()[r * 8 + c] == out2.fused.value()[r * 8 + c]);  // ta rows
            if (out.fused.value()[(4 + r) * 8 + c] != out2.fused.value()[(4 + r) * 8 + c])
                tb_changed = true;
        }
    CHECK(tb_changed);
}

TEST_CASE("masked rows cannot leak their pre-substitution contents") {
    auto batch = make_batch({"t0"}, {"a", "b"}, 2, 2);
    auto f = make_fusion(8, 2, 1, 103);
    auto ms = model::mask_tokens(batch, 0.4, model::MaskStrategy::Random, 9);
    REQUIRE(ms.indices.size() == 3);

    auto base = randn(8 * 8, 4);
    nn::Graph<double> g;
    auto out = f.combine(g, g.leaf({8, 8}, base), batch, &ms.masked);

    auto garbage = base;
    Rng rng(77);
    for (int i : ms.indices)
        for (int c = 0; c < 8; ++c) garbage[static_cast<std::int64_t>(i) * 8 + c] = rng.normal(5.0, 3.0);
    nn::Graph<double> g2;
    auto out2 = f.combine(g2, g2.leaf({8, 8}, garbage), batch, &ms.masked);
    for (std::int64_t i = 0; i < out.fused.size(); ++i)
        CHECK(out.fused.value()[i] == out2.fused.value()[i]);
}

TEST_CASE("B=0 single-token cross-attention reduces to an affine map") {
    data::TokenBatch batch;
    data::TokenIndex ti;
    ti.modality = "a";
    ti.patch = 0;
    ti.tile_id = "t";
    ti.pos_x_m = 5.0;
    ti.pos_y_m = 5.0;
    batch.indices.push_back(ti);

    auto f = make_fusion(4, 1, 0, 104);
    // identity value path: v = x, output projection = identity
    std::fill(f.wvx.value.begin(), f.wvx.value.end(), 0.0);
    std::fill(f.wox.value.begin(), f.wox.value.end(), 0.0);
    for (int i = 0; i < 4; ++i) {
        f.wvx.value[i * 4 + i] = 1.0;
        f.wox.value[i * 4 + i] = 1.0;
    }
    std::fill(f.bvx.value.begin(), f.bvx.value.end(), 0.0);
    std::fill(f.box.value.begin(), f.box.value.end(), 0.0);

    for (std::uint64_t s = 0; s < 4; ++s) {
        auto e = randn(4, 900 + s);
        nn::Graph<double> g;
        auto out = f.combine(g, g.leaf({1, 4}, e), batch, nullptr);
        REQUIRE(out.fused.shape() == Shape{1, 4});
        for (int c = 0; c < 4; ++c)
            CHECK(out.fused.value()[c] == doctest::Approx(f.comb_token.value[c] + e[c]).epsilon(1e-12));
    }
}

TEST_CASE("fusion gradients match finite differences in both positional modes") {
    auto batch = make_batch({"t0"}, {"a", "b", "c"}, 2, 1);  // 6 tokens
    auto ms = model::mask_tokens(batch, 0.3, model::MaskStrategy::Random, 21);
    REQUIRE(ms.indices.size() == 1);
    auto base = randn(6 * 8, 5);

    for (bool abs_mode : {false, true}) {
        auto f = make_fusion(8, 2, 1, abs_mode ? 106 : 105, abs_mode);
        nn::ParamRegistry<double> reg;
        f.register_params(reg, "fusion");
        const auto w = randn(2 * 8, 6);  // probe weights over the fused rows
        auto loss = [&](bool need_grad) {
            nn::Graph<double> g;
            g.set_inference(!need_grad);
            auto out = f.combine(g, g.leaf({6, 8}, base), batch, &ms.masked);
            auto l = nn::sum(g, nn::mul(g, out.fused, g.leaf({2, 8}, w)));
            if (need_grad) g.backward(l);
            return l.scalar();
        };
        auto rep = nn::gradient_check(reg.items(), loss, 1e-3, 31, 500);
        INFO("abs_mode ", abs_mode, " worst ", rep.worst.param, "[", rep.worst.index, "] rel ",
             rep.max_rel_err);
        CHECK(rep.ok());
    }
}

TEST_CASE("absolute positional mode drops the bias table and stays finite") {
    auto batch = make_batch({"t0", "t1"}, {"a", "b"}, 2, 2);
    auto f = make_fusion(8, 2, 1, 107, true);
    nn::ParamRegistry<double> reg;
    f.register_params(reg, "fusion");
    CHECK(reg.find("fusion/abs_pos") != nullptr);
    CHECK(reg.find("fusion/relpos") == nullptr);
    nn::Graph<double> g;
    auto out = f.combine(g, g.leaf({16, 8}, randn(16 * 8, 8)), batch, nullptr);
    CHECK(out.fused.shape() == Shape{8, 8});
    for (double v : out.fused.value()) CHECK(std::isfinite(v));
}
