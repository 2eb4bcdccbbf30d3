#include "omnifuse/data/dataset.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>

#include "omnifuse/data/omt.hpp"

namespace omnifuse::data {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

ordered_json spec_json(const ModalitySpec& m) {
    ordered_json j;
    j["name"] = m.name;
    j["kind"] = kind_str(m.kind);
    j["channels"] = m.channels;
    if (m.kind == ModalityKind::Image)
        j["patch_side_px"] = m.patch_side_px;
    else
        j["max_length"] = m.max_length;
    j["ground_resolution_m"] = m.ground_resolution_m;
    return j;
}

ModalitySpec spec_from_json(const ordered_json& j) {
    ModalitySpec m;
    m.name = j.at("name").get<std::string>();
    m.kind = kind_from_str(j.at("kind").get<std::string>());
    m.channels = j.at("channels").get<int>();
    if (m.kind == ModalityKind::Image)
        m.patch_side_px = j.at("patch_side_px").get<int>();
    else
        m.max_length = j.at("max_length").get<int>();
    m.ground_resolution_m = j.at("ground_resolution_m").get<double>();
    m.validate();
    return m;
}

}  // namespace

void save_manifest(const DatasetManifest& manifest, const std::string& root) {
    ordered_json j;
    j["modalities"] = ordered_json::array();
    for (const auto& m : manifest.modalities) j["modalities"].push_back(spec_json(m));
    j["label_vocab"] = manifest.label_vocab;
    j["grid_cell_m"] = manifest.grid_cell_m;
    j["tiles"] = ordered_json::array();
    for (const auto& t : manifest.tiles) j["tiles"].push_back({{"tile_id", t.tile_id}, {"path", t.path}});
    j["splits"] = ordered_json::object();
    for (const auto& [name, ids] : manifest.splits) j["splits"][name] = ids;

    std::error_code ec;
    fs::create_directories(root, ec);
    const std::string path = (fs::path(root) / "manifest.json").string();
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("save_manifest: cannot open " + path);
    out << j.dump(2) << "\n";
    if (!out) throw std::runtime_error("save_manifest: write failed for " + path);
}

DatasetManifest load_manifest(const std::string& root) {
    const std::string path = (fs::path(root) / "manifest.json").string();
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_manifest: cannot open " + path);
    ordered_json j;
    try {
        j = ordered_json::parse(in);
    } catch (const std::exception& e) {
        throw std::runtime_error("load_manifest: " + path + " corrupt: " + e.what());
    }
    DatasetManifest m;
    for (const auto& s : j.at("modalities")) m.modalities.push_back(spec_from_json(s));
    m.label_vocab = j.at("label_vocab").get<std::vector<std::string>>();
    m.grid_cell_m = j.at("grid_cell_m").get<double>();
    for (const auto& t : j.at("tiles"))
        m.tiles.push_back({t.at("tile_id").get<std::string>(), t.at("path").get<std::string>()});
    if (j.contains("splits"))
        for (const auto& [name, ids] : j.at("splits").items())
            m.splits.emplace_back(name, ids.get<std::vector<std::string>>());

    // split lists must be disjoint and reference existing tiles
    std::map<std::string, int> seen;
    for (const auto& t : m.tiles) seen[t.tile_id] = 0;
    for (const auto& [name, ids] : m.splits)
        for (const auto& id : ids) {
            auto it = seen.find(id);
            if (it == seen.end())
                throw std::runtime_error("load_manifest: split " + name + " references unknown tile " + id);
            if (++it->second > 1)
                throw std::runtime_error("load_manifest: tile " + id + " appears in more than one split");
        }
    return m;
}

void save_dataset(DatasetManifest& manifest, const std::vector<MultimodalTile>& tiles,
                  const std::string& root) {
    std::error_code ec;
    fs::create_directories(fs::path(root) / "tiles", ec);
    if (ec) throw std::runtime_error("save_dataset: cannot create " + root + ": " + ec.message());
    manifest.tiles.clear();
    for (const auto& t : tiles) {
        const std::string rel = "tiles/" + t.tile_id + ".omt";
        write_omt(t, (fs::path(root) / rel).string());
        manifest.tiles.push_back({t.tile_id, rel});
    }
    save_manifest(manifest, root);
}

TileAccessor::TileAccessor(DatasetManifest manifest, std::string root)
    : manifest_(std::move(manifest)), root_(std::move(root)) {}

MultimodalTile TileAccessor::load(const std::string& tile_id) const {
    const TileEntry* entry = nullptr;
    for (const auto& t : manifest_.tiles)
        if (t.tile_id == tile_id) {
            entry = &t;
            break;
        }
    if (!entry) throw std::runtime_error("TileAccessor: unknown tile " + tile_id);
    const std::string path = (fs::path(root_) / entry->path).string();
    if (!fs::exists(path))
        throw std::runtime_error("TileAccessor: missing tile file for " + tile_id + " at " + path);
    MultimodalTile tile = read_omt(path);
    if (tile.tile_id != tile_id)
        throw std::runtime_error("TileAccessor: tile file " + path + " holds " + tile.tile_id +
                                 ", expected " + tile_id);
    if (pretrain_) tile.forbid_labels();
    return tile;
}

TileAccessor load_dataset(const std::string& root) {
    return TileAccessor(load_manifest(root), root);
}

}  // namespace omnifuse::data
