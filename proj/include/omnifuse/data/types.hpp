#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "omnifuse/core/shape.hpp"

namespace omnifuse::data {

enum class ModalityKind { Image, TimeSeries };

inline std::string kind_str(ModalityKind k) { return k == ModalityKind::Image ? "image" : "time_series"; }
inline ModalityKind kind_from_str(const std::string& s) {
    if (s == "image") return ModalityKind::Image;
    if (s == "time_series") return ModalityKind::TimeSeries;
    throw std::invalid_argument("unknown modality kind: " + s);
}

// Descriptor of one modality's input space: channel count plus either the
// patch side (images) or the maximum series length (time series).
struct ModalitySpec {
    std::string name;
    ModalityKind kind = ModalityKind::Image;
    int channels = 0;
    int patch_side_px = 0;      // Image only
    int max_length = 0;         // TimeSeries only
    double ground_resolution_m = 0.0;  // m per pixel (Image) or m per token cell (TimeSeries)

    void validate() const {
        check(!name.empty(), "modality name empty");
        check(channels > 0, "modality " + name + ": channels must be positive");
        check(ground_resolution_m > 0, "modality " + name + ": ground resolution must be positive");
        if (kind == ModalityKind::Image)
            check(patch_side_px > 0, "modality " + name + ": patch_side_px must be positive");
        else
            check(max_length > 0, "modality " + name + ": max_length must be positive");
    }

    // Ground size of one grid cell in meters.
    double cell_m() const {
        return kind == ModalityKind::Image ? patch_side_px * ground_resolution_m : ground_resolution_m;
    }
};

// One modality's payload inside a tile.
// Image: shape {C, Gy*W, Gx*W}. TimeSeries: shape {Sy, Sx, C, L} where the
// spatial raster (Sy, Sx) is the grid itself or a finer multiple of it, plus
// day-of-year timestamps of length L.
struct TileArray {
    Shape shape;
    std::vector<float> v;
    std::vector<int> timestamps;
};

// One georeferenced sample. Labels are guarded: pretraining code paths mark
// the tile label-forbidden and any read then throws, which is how the
// no-label-leakage property is enforced at runtime.
struct MultimodalTile {
    std::string tile_id;
    int gx = 0, gy = 0;
    std::map<std::string, TileArray> arrays;

    bool has_labels() const { return has_labels_; }

    void set_labels(std::vector<std::uint8_t> labels) {
        labels_ = std::move(labels);
        has_labels_ = true;
    }

    void forbid_labels() { labels_allowed_ = false; }
    bool labels_forbidden() const { return !labels_allowed_; }

    const std::vector<std::uint8_t>& labels() const {
        if (!labels_allowed_)
            throw std::logic_error("tile " + tile_id + ": label access is forbidden in pretraining mode");
        if (!has_labels_) throw std::logic_error("tile " + tile_id + ": has no labels");
        return labels_;
    }

    // Serialization needs the raw labels regardless of guard state.
    const std::vector<std::uint8_t>& labels_unchecked() const { return labels_; }

private:
    std::vector<std::uint8_t> labels_;
    bool has_labels_ = false;
    bool labels_allowed_ = true;
};

struct TileEntry {
    std::string tile_id;
    std::string path;  // relative to dataset root
};

struct DatasetManifest {
    std::vector<ModalitySpec> modalities;
    std::vector<std::string> label_vocab;
    double grid_cell_m = 0.0;
    std::vector<TileEntry> tiles;
    std::vector<std::pair<std::string, std::vector<std::string>>> splits;  // declaration order kept

    const ModalitySpec& modality(const std::string& name) const {
        for (const auto& m : modalities)
            if (m.name == name) return m;
        throw std::invalid_argument("unknown modality: " + name);
    }

    const std::vector<std::string>& split(const std::string& name) const {
        for (const auto& [s, ids] : splits)
            if (s == name) return ids;
        throw std::invalid_argument("unknown split: " + name);
    }

    bool has_split(const std::string& name) const {
        for (const auto& [s, ids] : splits)
            if (s == name) return true;
        return false;
    }
};

}  // namespace omnifuse::data
