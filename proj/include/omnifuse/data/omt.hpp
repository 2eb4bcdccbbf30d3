#pragma once

#include <string>

#include "omnifuse/data/types.hpp"

namespace omnifuse::data {

// Tile container: magic "OMT1", little-endian u32 header length, UTF-8 JSON
// header (tile_id, grid, optional labels, per-modality entries with name,
// kind, shape, dtype, byte offset/length and timestamps), then raw
// little-endian f32 payloads at the declared offsets.
void write_omt(const MultimodalTile& tile, const std::string& path);
MultimodalTile read_omt(const std::string& path);

}  // namespace omnifuse::data
