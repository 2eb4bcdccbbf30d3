#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "omnifuse/core/rng.hpp"
#include "omnifuse/data/dataset.hpp"
#include "omnifuse/data/omt.hpp"
#include "omnifuse/data/split.hpp"
#include "omnifuse/data/synthetic.hpp"
#include "omnifuse/data/tokenizer.hpp"

using namespace omnifuse;
using namespace omnifuse::data;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
    auto p = fs::temp_directory_path() / (std::string("omnifuse_test_") + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

SyntheticConfig small_config() {
    SyntheticConfig cfg;
    cfg.n_classes = 3;
    cfg.n_tiles = 4;
    cfg.gx = 2;
    cfg.gy = 2;
    cfg.img_channels = 2;
    cfg.img_patch_px = 4;
    cfg.opt_channels = 3;
    cfg.opt_len_min = 5;
    cfg.opt_len_max = 7;
    cfg.rad_channels = 2;
    cfg.rad_len_min = 4;
    cfg.rad_len_max = 6;
    cfg.coarse = 1;
    cfg.smooth_passes = 0;
    return cfg;
}

}  // namespace

TEST_CASE("omt round trip is bit exact") {
    auto dir = temp_dir("omt");
    MultimodalTile tile;
    tile.tile_id = "t0";
    tile.gx = 2;
    tile.gy = 1;
    TileArray img;
    img.shape = {1, 3, 6};
    for (int i = 0; i < 18; ++i) img.v.push_back(0.25f * static_cast<float>(i) - 1.0f);
    tile.arrays.emplace("vhr", img);
    TileArray ts;
    ts.shape = {1, 2, 2, 3};
    for (int i = 0; i < 12; ++i) ts.v.push_back(static_cast<float>(i) * 0.5f);
    ts.timestamps = {10, 100, 300};
    tile.arrays.emplace("optical_ts", ts);
    tile.set_labels({1, 0, 1});

    const auto path = (dir / "t0.omt").string();
    write_omt(tile, path);
    MultimodalTile back = read_omt(path);
    CHECK(back.tile_id == "t0");
    CHECK(back.gx == 2);
    CHECK(back.gy == 1);
    CHECK(back.arrays.at("vhr").shape == img.shape);
    CHECK(back.arrays.at("vhr").v == img.v);
    CHECK(back.arrays.at("optical_ts").v == ts.v);
    CHECK(back.arrays.at("optical_ts").timestamps == ts.timestamps);
    CHECK(back.labels() == std::vector<std::uint8_t>{1, 0, 1});

    // writing the same tile twice produces identical bytes
    const auto path2 = (dir / "t0b.omt").string();
    write_omt(tile, path2);
    CHECK(file_bytes(path) == file_bytes(path2));
}

TEST_CASE("omt rejects corrupt containers") {
    auto dir = temp_dir("omt_bad");
    {
        std::ofstream f(dir / "bad.omt", std::ios::binary);
        f << "NOPE1234 garbage";
    }
    CHECK_THROWS_WITH_AS(read_omt((dir / "bad.omt").string()),
                         doctest::Contains("not an OMT1 container"), std::runtime_error);
    CHECK_THROWS_AS(read_omt((dir / "missing.omt").string()), std::runtime_error);
}

TEST_CASE("synthetic generation is deterministic and label-consistent") {
    auto cfg = small_config();
    auto a = generate_synthetic(cfg, 7);
    auto b = generate_synthetic(cfg, 7);
    REQUIRE(a.tiles.size() == 4);
    CHECK(a.manifest.modalities.size() == 3);
    for (std::size_t i = 0; i < a.tiles.size(); ++i) {
        CHECK(a.tiles[i].tile_id == b.tiles[i].tile_id);
        for (const auto& [name, arr] : a.tiles[i].arrays) {
            CHECK(arr.v == b.tiles[i].arrays.at(name).v);
            CHECK(arr.timestamps == b.tiles[i].arrays.at(name).timestamps);
        }
        // labels match the latent field exactly
        std::vector<std::uint8_t> expect(cfg.n_classes, 0);
        for (int cls : a.latents[i]) expect[cls] = 1;
        CHECK(a.tiles[i].labels() == expect);
        bool any = false;
        for (auto l : a.tiles[i].labels()) any = any || l;
        CHECK(any);
    }
    auto c = generate_synthetic(cfg, 8);
    CHECK(c.tiles[0].arrays.at("vhr").v != a.tiles[0].arrays.at("vhr").v);
}

TEST_CASE("synthetic cloud probability zero yields no saturated optical dates") {
    auto cfg = small_config();
    cfg.cloud_prob = 0.0;
    auto out = generate_synthetic(cfg, 11);
    for (const auto& flags : out.clouds)
        for (auto f : flags) CHECK(f == 0);
    for (const auto& tile : out.tiles)
        for (float v : tile.arrays.at("optical_ts").v) CHECK(v < 2.0f);
}

TEST_CASE("noiseless tiles match the exposed class signal formulas") {
    auto cfg = small_config();
    cfg.noise = 0.0;
    cfg.cloud_prob = 0.0;
    const std::uint64_t seed = 13;
    auto out = generate_synthetic(cfg, seed);
    auto sigs = class_signatures(cfg, seed);
    const int W = cfg.img_patch_px;
    for (std::size_t i = 0; i < out.tiles.size(); ++i) {
        const auto& tile = out.tiles[i];
        const auto& latent = out.latents[i];
        const auto& img = tile.arrays.at("vhr");
        for (int pr = 0; pr < cfg.gy; ++pr)
            for (int pc = 0; pc < cfg.gx; ++pc) {
                const int cls = latent[pr * cfg.gx + pc];
                for (int c = 0; c < cfg.img_channels; ++c)
                    for (int y = 0; y < W; ++y)
                        for (int x = 0; x < W; ++x) {
                            const float got =
                                img.v[(static_cast<std::size_t>(c) * cfg.gy * W + pr * W + y) * cfg.gx * W +
                                      pc * W + x];
                            CHECK(got == doctest::Approx(image_signal(sigs, cfg, cls, c, y, x))
                                             .epsilon(1e-6));
                        }
            }
        const auto& opt = tile.arrays.at("optical_ts");
        const int lo = opt.shape[3];
        for (int pr = 0; pr < cfg.gy; ++pr)
            for (int pc = 0; pc < cfg.gx; ++pc) {
                const int cls = latent[pr * cfg.gx + pc];
                for (int c = 0; c < cfg.opt_channels; ++c)
                    for (int t = 0; t < lo; ++t) {
                        const float got =
                            opt.v[((static_cast<std::size_t>(pr) * cfg.gx + pc) * cfg.opt_channels + c) * lo + t];
                        CHECK(got == doctest::Approx(optical_signal(sigs, cfg, cls, c, opt.timestamps[t]))
                                         .epsilon(1e-6));
                    }
            }
        const auto& rad = tile.arrays.at("radar_ts");
        const int lr = rad.shape[3];
        for (int pr = 0; pr < cfg.gy; ++pr)
            for (int pc = 0; pc < cfg.gx; ++pc) {
                const int cls = latent[pr * cfg.gx + pc];
                for (int c = 0; c < cfg.rad_channels; ++c)
                    for (int t = 0; t < lr; ++t) {
                        const float got =
                            rad.v[((static_cast<std::size_t>(pr) * cfg.gx + pc) * cfg.rad_channels + c) * lr + t];
                        CHECK(got == doctest::Approx(radar_signal(sigs, cfg, cls, c, rad.timestamps[t]))
                                         .epsilon(1e-6));
                    }
            }
    }
}

TEST_CASE("signature collisions map distinct classes to identical renderings") {
    auto cfg = small_config();
    cfg.n_classes = 8;
    cfg.img_classes_mod = 4;
    cfg.opt_classes_div = 2;
    cfg.rad_classes_mod = 2;
    auto sigs = class_signatures(cfg, 21);
    // classes 0 and 4 share the image signature but differ in optical
    CHECK(image_signal(sigs, cfg, 0, 0, 1, 2) == image_signal(sigs, cfg, 4, 0, 1, 2));
    CHECK(optical_signal(sigs, cfg, 0, 0, 100) != optical_signal(sigs, cfg, 4, 0, 100));
    // classes 0 and 1 share the optical signature but differ in radar
    CHECK(optical_signal(sigs, cfg, 0, 1, 50) == optical_signal(sigs, cfg, 1, 1, 50));
    CHECK(radar_signal(sigs, cfg, 0, 0, 50) != radar_signal(sigs, cfg, 1, 0, 50));
    // (image, optical) pair identifies the class: verify for all pairs
    for (int k1 = 0; k1 < 8; ++k1)
        for (int k2 = k1 + 1; k2 < 8; ++k2) {
            const bool same_img = cfg.img_sig(k1) == cfg.img_sig(k2);
            const bool same_opt = cfg.opt_sig(k1) == cfg.opt_sig(k2);
            CHECK_FALSE((same_img && same_opt));
        }
}

TEST_CASE("dataset save and load round trips tiles and manifest") {
    auto dir = temp_dir("dataset");
    auto cfg = small_config();
    auto out = generate_synthetic(cfg, 31);
    write_synthetic_dataset(out, cfg, dir.string());

    auto acc = load_dataset(dir.string());
    CHECK(acc.manifest().tiles.size() == 4);
    CHECK(acc.manifest().label_vocab.size() == 3);
    CHECK(acc.manifest().grid_cell_m == doctest::Approx(cfg.cell_m));
    for (const auto& entry : acc.manifest().tiles) {
        MultimodalTile tile = acc.load(entry.tile_id);
        const MultimodalTile* orig = nullptr;
        for (const auto& t : out.tiles)
            if (t.tile_id == entry.tile_id) orig = &t;
        REQUIRE(orig != nullptr);
        for (const auto& [name, arr] : orig->arrays) {
            CHECK(tile.arrays.at(name).v == arr.v);
            CHECK(tile.arrays.at(name).shape == arr.shape);
        }
        CHECK(tile.labels() == orig->labels());
    }
}

TEST_CASE("missing tile file is reported with its tile_id") {
    auto dir = temp_dir("dataset_missing");
    auto cfg = small_config();
    auto out = generate_synthetic(cfg, 31);
    write_synthetic_dataset(out, cfg, dir.string());
    fs::remove(dir / "tiles" / "tile_000002.omt");
    auto acc = load_dataset(dir.string());
    CHECK_THROWS_WITH_AS(acc.load("tile_000002"), doctest::Contains("tile_000002"), std::runtime_error);
}

TEST_CASE("pretrain mode forbids label access") {
    auto dir = temp_dir("dataset_guard");
    auto cfg = small_config();
    auto out = generate_synthetic(cfg, 31);
    write_synthetic_dataset(out, cfg, dir.string());
    auto acc = load_dataset(dir.string());
    acc.set_pretrain_mode(true);
    MultimodalTile tile = acc.load("tile_000000");
    CHECK(tile.labels_forbidden());
    CHECK_THROWS_AS(tile.labels(), std::logic_error);
    acc.set_pretrain_mode(false);
    MultimodalTile open = acc.load("tile_000000");
    CHECK_NOTHROW(open.labels());
}

TEST_CASE("stratified split hits exact cardinalities and balances classes") {
    DatasetManifest m;
    m.label_vocab = {"a", "b", "c"};
    std::vector<std::vector<std::uint8_t>> labels;
    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        m.tiles.push_back({"t" + std::to_string(i), ""});
        // class a rare (10 tiles), b and c common
        std::vector<std::uint8_t> l(3, 0);
        l[0] = i < 10 ? 1 : 0;
        l[1] = rng.uniform() < 0.6 ? 1 : 0;
        l[2] = rng.uniform() < 0.4 ? 1 : 0;
        if (!l[0] && !l[1] && !l[2]) l[2] = 1;
        labels.push_back(l);
    }
    auto splits = stratified_split(m, labels, {{"train", 0.8}, {"val", 0.1}, {"test", 0.1}}, 42);
    REQUIRE(splits.size() == 3);
    CHECK(splits[0].second.size() == 80);
    CHECK(splits[1].second.size() == 10);
    CHECK(splits[2].second.size() == 10);

    std::set<std::string> all;
    for (const auto& [name, ids] : splits)
        for (const auto& id : ids) CHECK(all.insert(id).second);
    CHECK(all.size() == 100);

    // rare class: 10 positives, val fraction 0.1 -> 1 +/- 1 positives
    auto count_class = [&](const std::vector<std::string>& ids, int k) {
        int n = 0;
        for (const auto& id : ids) {
            const int i = std::stoi(id.substr(1));
            n += labels[i][k];
        }
        return n;
    };
    CHECK(count_class(splits[1].second, 0) >= 0);
    CHECK(count_class(splits[1].second, 0) <= 2);
    CHECK(count_class(splits[2].second, 0) >= 0);
    CHECK(count_class(splits[2].second, 0) <= 2);
    const int train_a = count_class(splits[0].second, 0);
    CHECK(train_a >= 7);
    CHECK(train_a <= 9);

    // deterministic under the same seed
    auto again = stratified_split(m, labels, {{"train", 0.8}, {"val", 0.1}, {"test", 0.1}}, 42);
    CHECK(again == splits);
}

TEST_CASE("stratified split with a single class reduces to proportions") {
    DatasetManifest m;
    m.label_vocab = {"only"};
    std::vector<std::vector<std::uint8_t>> labels;
    for (int i = 0; i < 40; ++i) {
        m.tiles.push_back({"t" + std::to_string(i), ""});
        labels.push_back({1});
    }
    auto splits = stratified_split(m, labels, {{"train", 0.5}, {"test", 0.25}}, 3);
    CHECK(splits[0].second.size() == 20);
    CHECK(splits[1].second.size() == 10);  // remaining 10 tiles unassigned (fractions sum to 0.75)
}

TEST_CASE("tokenize produces the cross-modal token layout") {
    auto cfg = small_config();
    auto out = generate_synthetic(cfg, 41);
    const auto& specs = out.manifest.modalities;
    TokenBatch batch = tokenize(out.tiles[0], specs);
    CHECK(batch.size() == 3 * 4);  // 3 modalities x 2x2 grid
    REQUIRE(batch.tile_partition.size() == 1);
    CHECK(batch.tile_partition[0].begin == 0);
    CHECK(batch.tile_partition[0].end == 12);

    // image token p=3 equals the bottom-right WxW block
    const auto& img = out.tiles[0].arrays.at("vhr");
    const int W = cfg.img_patch_px;
    const auto& tok = batch.raw[3];
    REQUIRE(batch.indices[3].patch == 3);
    REQUIRE(tok.shape == Shape{cfg.img_channels, W, W});
    for (int c = 0; c < cfg.img_channels; ++c)
        for (int y = 0; y < W; ++y)
            for (int x = 0; x < W; ++x)
                CHECK(tok.v[(static_cast<std::size_t>(c) * W + y) * W + x] ==
                      img.v[(static_cast<std::size_t>(c) * cfg.gy * W + W + y) * cfg.gx * W + W + x]);

    // patch-center positions in meters
    CHECK(batch.indices[0].pos_x_m == doctest::Approx(0.5 * cfg.cell_m));
    CHECK(batch.indices[0].pos_y_m == doctest::Approx(0.5 * cfg.cell_m));
    CHECK(batch.indices[3].pos_x_m == doctest::Approx(1.5 * cfg.cell_m));
    CHECK(batch.indices[3].pos_y_m == doctest::Approx(1.5 * cfg.cell_m));

    // time-series tokens share the tile's day stamps and align with the raster cell
    const auto& opt = out.tiles[0].arrays.at("optical_ts");
    const int L = opt.shape[3];
    const auto& ts_tok = batch.raw[4 + 2];  // optical, patch p=2 (row 1, col 0)
    CHECK(batch.indices[4 + 2].modality == "optical_ts");
    REQUIRE(ts_tok.shape == Shape{cfg.opt_channels, L});
    CHECK(ts_tok.days == opt.timestamps);
    for (int c = 0; c < cfg.opt_channels; ++c)
        for (int t = 0; t < L; ++t)
            CHECK(ts_tok.v[static_cast<std::size_t>(c) * L + t] ==
                  opt.v[((static_cast<std::size_t>(1) * cfg.gx + 0) * cfg.opt_channels + c) * L + t]);
}

TEST_CASE("tokenize flattens finer time-series rasters into channels") {
    // 2x2 grid with a 4x4 raster: each patch folds 2x2 sub-cells x C channels
    MultimodalTile tile;
    tile.tile_id = "t";
    tile.gx = 2;
    tile.gy = 2;
    TileArray ts;
    const int sy = 4, sx = 4, C = 2, L = 3;
    ts.shape = {sy, sx, C, L};
    ts.timestamps = {5, 10, 15};
    ts.v.resize(sy * sx * C * L);
    for (int i = 0; i < static_cast<int>(ts.v.size()); ++i) ts.v[i] = static_cast<float>(i);
    tile.arrays.emplace("opt", ts);
    ModalitySpec spec{"opt", ModalityKind::TimeSeries, C, 0, 8, 10.0};
    TokenBatch batch = tokenize(tile, {spec});
    REQUIRE(batch.size() == 4);
    REQUIRE(batch.raw[0].shape == Shape{8, L});  // 2*2 sub-cells * 2 channels
    // token p=1 covers raster columns 2..3, rows 0..1; channel (oy,ox,c) order
    for (int oy = 0; oy < 2; ++oy)
        for (int ox = 0; ox < 2; ++ox)
            for (int c = 0; c < C; ++c)
                for (int t = 0; t < L; ++t) {
                    const int ch = (oy * 2 + ox) * C + c;
                    const float want = ts.v[((static_cast<std::size_t>(oy) * sx + 2 + ox) * C + c) * L + t];
                    CHECK(batch.raw[1].v[static_cast<std::size_t>(ch) * L + t] == want);
                }
}

TEST_CASE("assemble_batch concatenates tiles with a partition map") {
    auto cfg = small_config();
    auto out = generate_synthetic(cfg, 51);
    const auto& specs = out.manifest.modalities;
    std::vector<MultimodalTile> two{out.tiles[0], out.tiles[1]};
    TokenBatch batch = assemble_batch(two, specs);
    CHECK(batch.size() == 24);
    REQUIRE(batch.tile_partition.size() == 2);
    CHECK(batch.tile_partition[0].begin == 0);
    CHECK(batch.tile_partition[0].end == 12);
    CHECK(batch.tile_partition[1].begin == 12);
    CHECK(batch.tile_partition[1].end == 24);
    CHECK(batch.tile_partition[1].tile_id == out.tiles[1].tile_id);

    TokenBatch single = tokenize(out.tiles[0], specs);
    for (int i = 0; i < 12; ++i) {
        CHECK(batch.raw[i].v == single.raw[i].v);
        CHECK(batch.indices[i].modality == single.indices[i].modality);
        CHECK(batch.indices[i].patch == single.indices[i].patch);
    }
}

TEST_CASE("tokenize rejects shapes that do not divide the grid") {
    MultimodalTile tile;
    tile.tile_id = "t";
    tile.gx = 2;
    tile.gy = 2;
    TileArray ts;
    ts.shape = {3, 2, 1, 2};  // Sy=3 not divisible by gy=2
    ts.timestamps = {1, 2};
    ts.v.resize(12);
    tile.arrays.emplace("opt", ts);
    ModalitySpec spec{"opt", ModalityKind::TimeSeries, 1, 0, 4, 10.0};
    CHECK_THROWS_AS(tokenize(tile, {spec}), std::invalid_argument);
}
