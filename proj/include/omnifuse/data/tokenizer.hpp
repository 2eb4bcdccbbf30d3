#pragma once

#include <string>
#include <vector>

#include "omnifuse/data/types.hpp"

namespace omnifuse::data {

// One (modality, patch, tile) token address with the patch-center ground
// position in meters within the tile frame.
struct TokenIndex {
    std::string modality;
    int patch = 0;  // row-major p = row*Gx + col
    std::string tile_id;
    double pos_x_m = 0, pos_y_m = 0;
};

// Raw per-token view. Image tokens: shape {C, W, W}. Time-series tokens:
// shape {C_eff, L} plus day stamps, where C_eff folds any sub-cell raster
// positions into channels.
struct TokenRaw {
    Shape shape;
    std::vector<float> v;
    std::vector<int> days;  // time series only
};

struct TileRange {
    std::string tile_id;
    int begin = 0, end = 0;  // token index range [begin, end)
    int gx = 0, gy = 0;
};

struct TokenBatch {
    std::vector<TokenIndex> indices;
    std::vector<TokenRaw> raw;
    std::vector<TileRange> tile_partition;

    int size() const { return static_cast<int>(indices.size()); }
};

// Splits one tile into per-patch tokens: modalities in spec order, patches
// row-major. The grid cell size is derived from the specs and must agree
// across modalities.
TokenBatch tokenize(const MultimodalTile& tile, const std::vector<ModalitySpec>& specs);

// Concatenation of per-tile tokenizations, tile boundaries recorded.
TokenBatch assemble_batch(const std::vector<MultimodalTile>& tiles,
                          const std::vector<ModalitySpec>& specs);

}  // namespace omnifuse::data
