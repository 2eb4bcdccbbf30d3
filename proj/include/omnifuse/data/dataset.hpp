#pragma once

#include <string>
#include <vector>

#include "omnifuse/data/types.hpp"

namespace omnifuse::data {

// Dataset root layout: root/manifest.json plus root/tiles/<tile_id>.omt.
void save_manifest(const DatasetManifest& manifest, const std::string& root);
DatasetManifest load_manifest(const std::string& root);

// Writes manifest and all tiles; tile paths are filled in as tiles/<id>.omt.
void save_dataset(DatasetManifest& manifest, const std::vector<MultimodalTile>& tiles,
                  const std::string& root);

// Lazy per-tile loader. In pretrain mode every loaded tile has its labels
// guard armed, so any downstream label read throws.
class TileAccessor {
public:
    TileAccessor(DatasetManifest manifest, std::string root);

    const DatasetManifest& manifest() const { return manifest_; }
    void set_pretrain_mode(bool on) { pretrain_ = on; }
    bool pretrain_mode() const { return pretrain_; }

    MultimodalTile load(const std::string& tile_id) const;

private:
    DatasetManifest manifest_;
    std::string root_;
    bool pretrain_ = false;
};

TileAccessor load_dataset(const std::string& root);

}  // namespace omnifuse::data
