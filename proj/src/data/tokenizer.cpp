#include "omnifuse/data/tokenizer.hpp"

#include <cmath>

namespace omnifuse::data {

namespace {

double derive_cell_m(const std::vector<ModalitySpec>& specs) {
    check(!specs.empty(), "tokenize: no modality specs");
    const double cell = specs[0].cell_m();
    for (const auto& s : specs)
        check(std::abs(s.cell_m() - cell) < 1e-9,
              "tokenize: modality " + s.name + " disagrees on grid cell size");
    return cell;
}

}  // namespace

TokenBatch tokenize(const MultimodalTile& tile, const std::vector<ModalitySpec>& specs) {
    const double cell = derive_cell_m(specs);
    const int gx = tile.gx, gy = tile.gy;
    check(gx >= 1 && gy >= 1, "tokenize: tile " + tile.tile_id + " has an empty grid");

    TokenBatch batch;
    for (const auto& spec : specs) {
        auto it = tile.arrays.find(spec.name);
        check(it != tile.arrays.end(), "tokenize: tile " + tile.tile_id + " misses modality " + spec.name);
        const TileArray& arr = it->second;

        if (spec.kind == ModalityKind::Image) {
            const int W = spec.patch_side_px, C = spec.channels;
            check(arr.shape == Shape{C, gy * W, gx * W},
                  "tokenize: " + spec.name + " shape " + shape_str(arr.shape) + " does not match grid " +
                      std::to_string(gx) + "x" + std::to_string(gy) + " with patch side " + std::to_string(W));
            const int rows = gy * W, cols = gx * W;
            (void)rows;
            for (int pr = 0; pr < gy; ++pr)
                for (int pc = 0; pc < gx; ++pc) {
                    TokenRaw raw;
                    raw.shape = {C, W, W};
                    raw.v.resize(static_cast<std::size_t>(C) * W * W);
                    for (int c = 0; c < C; ++c)
                        for (int y = 0; y < W; ++y)
                            for (int x = 0; x < W; ++x)
                                raw.v[(static_cast<std::size_t>(c) * W + y) * W + x] =
                                    arr.v[(static_cast<std::size_t>(c) * gy * W + pr * W + y) * cols +
                                          pc * W + x];
                    batch.raw.push_back(std::move(raw));
                    batch.indices.push_back({spec.name, pr * gx + pc, tile.tile_id,
                                             (pc + 0.5) * cell, (pr + 0.5) * cell});
                }
        } else {
            check(arr.shape.size() == 4, "tokenize: " + spec.name + " must be a {Sy,Sx,C,L} raster");
            const int sy = arr.shape[0], sx = arr.shape[1], C = arr.shape[2], L = arr.shape[3];
            check(C == spec.channels, "tokenize: " + spec.name + " channel count mismatch");
            check(L <= spec.max_length, "tokenize: " + spec.name + " series longer than max_length");
            check(static_cast<int>(arr.timestamps.size()) == L,
                  "tokenize: " + spec.name + " timestamp length mismatch");
            for (int t = 1; t < L; ++t)
                check(arr.timestamps[t] > arr.timestamps[t - 1],
                      "tokenize: " + spec.name + " timestamps must increase strictly");
            check(sy % gy == 0 && sx % gx == 0,
                  "tokenize: " + spec.name + " raster " + shape_str(arr.shape) +
                      " is not divisible by the patch grid");
            const int fy = sy / gy, fx = sx / gx;
            const int c_eff = fy * fx * C;  // sub-cells flatten into channels
            for (int pr = 0; pr < gy; ++pr)
                for (int pc = 0; pc < gx; ++pc) {
                    TokenRaw raw;
                    raw.shape = {c_eff, L};
                    raw.v.resize(static_cast<std::size_t>(c_eff) * L);
                    raw.days = arr.timestamps;
                    for (int oy = 0; oy < fy; ++oy)
                        for (int ox = 0; ox < fx; ++ox)
                            for (int c = 0; c < C; ++c) {
                                const int ch = (oy * fx + ox) * C + c;
                                const std::size_t src =
                                    ((static_cast<std::size_t>(pr * fy + oy) * sx + pc * fx + ox) * C + c) * L;
                                for (int t = 0; t < L; ++t)
                                    raw.v[static_cast<std::size_t>(ch) * L + t] = arr.v[src + t];
                            }
                    batch.raw.push_back(std::move(raw));
                    batch.indices.push_back({spec.name, pr * gx + pc, tile.tile_id,
                                             (pc + 0.5) * cell, (pr + 0.5) * cell});
                }
        }
    }
    batch.tile_partition.push_back({tile.tile_id, 0, batch.size(), gx, gy});
    return batch;
}

TokenBatch assemble_batch(const std::vector<MultimodalTile>& tiles,
                          const std::vector<ModalitySpec>& specs) {
    check(!tiles.empty(), "assemble_batch: no tiles");
    TokenBatch batch;
    for (const auto& tile : tiles) {
        for (const auto& spec : specs)
            check(tile.arrays.count(spec.name) == 1,
                  "assemble_batch: tile " + tile.tile_id + " misses modality " + spec.name);
        TokenBatch one = tokenize(tile, specs);
        const int base = batch.size();
        for (auto& idx : one.indices) batch.indices.push_back(std::move(idx));
        for (auto& raw : one.raw) batch.raw.push_back(std::move(raw));
        batch.tile_partition.push_back({tile.tile_id, base, base + one.size(), tile.gx, tile.gy});
    }
    return batch;
}

}  // namespace omnifuse::data
