#include "omnifuse/data/omt.hpp"

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>

namespace omnifuse::data {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr char kMagic[4] = {'O', 'M', 'T', '1'};

void put_u32_le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

ordered_json header_json(const MultimodalTile& tile, std::size_t header_len) {
    ordered_json h;
    h["tile_id"] = tile.tile_id;
    h["grid"] = {tile.gx, tile.gy};
    if (tile.has_labels()) {
        std::vector<int> labels(tile.labels_unchecked().begin(), tile.labels_unchecked().end());
        h["labels"] = labels;
    }
    h["modalities"] = ordered_json::array();
    std::size_t offset = 8 + header_len;
    for (const auto& [name, arr] : tile.arrays) {
        ordered_json m;
        m["name"] = name;
        m["kind"] = arr.timestamps.empty() ? "image" : "time_series";
        m["shape"] = arr.shape;
        m["dtype"] = "f32";
        m["offset"] = offset;
        m["length"] = arr.v.size() * sizeof(float);
        if (!arr.timestamps.empty()) m["timestamps"] = arr.timestamps;
        h["modalities"].push_back(std::move(m));
        offset += arr.v.size() * sizeof(float);
    }
    return h;
}

}  // namespace

void write_omt(const MultimodalTile& tile, const std::string& path) {
    check(!tile.tile_id.empty(), "write_omt: tile_id empty");
    for (const auto& [name, arr] : tile.arrays) {
        check(static_cast<std::int64_t>(arr.v.size()) == numel(arr.shape),
              "write_omt: " + name + " payload size does not match shape");
        for (float f : arr.v)
            check(std::isfinite(f), "write_omt: non-finite value in modality " + name);
    }

    // Offsets are absolute file positions, which depend on the header's own
    // length; iterate until the serialized length stabilizes.
    std::size_t header_len = 0;
    std::string header;
    for (int pass = 0; pass < 8; ++pass) {
        header = header_json(tile, header_len).dump();
        if (header.size() == header_len) break;
        header_len = header.size();
    }
    check(header.size() == header_len, "write_omt: header length did not stabilize");

    std::string blob;
    blob.append(kMagic, 4);
    put_u32_le(blob, static_cast<std::uint32_t>(header_len));
    blob += header;
    for (const auto& [name, arr] : tile.arrays)
        blob.append(reinterpret_cast<const char*>(arr.v.data()), arr.v.size() * sizeof(float));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("write_omt: cannot open " + path);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw std::runtime_error("write_omt: write failed for " + path);
}

MultimodalTile read_omt(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_omt: cannot open " + path);
    std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (blob.size() < 8 || std::memcmp(blob.data(), kMagic, 4) != 0)
        throw std::runtime_error("read_omt: " + path + " is not an OMT1 container");
    const std::uint32_t header_len = get_u32_le(reinterpret_cast<const unsigned char*>(blob.data() + 4));
    if (blob.size() < 8 + static_cast<std::size_t>(header_len))
        throw std::runtime_error("read_omt: " + path + " truncated header");

    ordered_json h;
    try {
        h = ordered_json::parse(blob.substr(8, header_len));
    } catch (const std::exception& e) {
        throw std::runtime_error("read_omt: " + path + " corrupt header: " + e.what());
    }

    MultimodalTile tile;
    tile.tile_id = h.at("tile_id").get<std::string>();
    tile.gx = h.at("grid").at(0).get<int>();
    tile.gy = h.at("grid").at(1).get<int>();
    if (h.contains("labels")) {
        std::vector<int> li = h.at("labels").get<std::vector<int>>();
        tile.set_labels(std::vector<std::uint8_t>(li.begin(), li.end()));
    }
    for (const auto& m : h.at("modalities")) {
        TileArray arr;
        arr.shape = m.at("shape").get<Shape>();
        if (m.at("dtype").get<std::string>() != "f32")
            throw std::runtime_error("read_omt: " + path + " unsupported dtype");
        const auto offset = m.at("offset").get<std::size_t>();
        const auto length = m.at("length").get<std::size_t>();
        if (length != static_cast<std::size_t>(numel(arr.shape)) * sizeof(float))
            throw std::runtime_error("read_omt: " + path + " payload length does not match shape");
        if (offset + length > blob.size())
            throw std::runtime_error("read_omt: " + path + " payload out of bounds");
        arr.v.resize(length / sizeof(float));
        std::memcpy(arr.v.data(), blob.data() + offset, length);
        if (m.contains("timestamps")) arr.timestamps = m.at("timestamps").get<std::vector<int>>();
        tile.arrays.emplace(m.at("name").get<std::string>(), std::move(arr));
    }
    return tile;
}

}  // namespace omnifuse::data
