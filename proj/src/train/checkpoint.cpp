#include "omnifuse/train/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace omnifuse::train {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr char kMagic[4] = {'O', 'M', 'N', 'F'};
constexpr std::uint32_t kVersion = 1;

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

ordered_json shapes_json(const std::vector<ModalityShape>& mods) {
    ordered_json arr = ordered_json::array();
    for (const auto& m : mods) {
        ordered_json j;
        j["name"] = m.name;
        j["kind"] = data::kind_str(m.kind);
        j["channels"] = m.channels;
        j["side"] = m.side;
        j["max_len"] = m.max_len;
        arr.push_back(std::move(j));
    }
    return arr;
}

std::vector<ModalityShape> shapes_from_json(const ordered_json& arr) {
    std::vector<ModalityShape> out;
    for (const auto& j : arr) {
        ModalityShape m;
        m.name = j.at("name").get<std::string>();
        m.kind = data::kind_from_str(j.at("kind").get<std::string>());
        m.channels = j.at("channels").get<int>();
        m.side = j.at("side").get<int>();
        m.max_len = j.at("max_len").get<int>();
        out.push_back(std::move(m));
    }
    return out;
}

// Three payload slots per parameter; moments may be absent on the model and
// are then written as zeros so the directory stays uniform.
const char* kSlots[3] = {"", "#m", "#v"};

const std::vector<float>& slot_data(const nn::Parameter<float>& p, int slot,
                                    std::vector<float>& zeros) {
    const std::vector<float>& src = slot == 0 ? p.value : (slot == 1 ? p.m : p.v);
    if (static_cast<std::int64_t>(src.size()) == p.size()) return src;
    zeros.assign(static_cast<std::size_t>(p.size()), 0.0f);
    return zeros;
}

ordered_json header_json(const OmniModel<float>& model, const TrainState& st,
                         std::size_t header_len) {
    ordered_json h;
    h["version"] = kVersion;
    h["config"] = ordered_json::parse(config_to_json(model.cfg));
    h["model"] = {{"n_classes", model.n_classes},
                  {"gx", model.gx},
                  {"gy", model.gy},
                  {"cell_m", model.cell_m},
                  {"modalities", shapes_json(model.mods)}};
    h["state"] = {{"epoch", st.epoch},       {"adam_t", st.adam_t},
                  {"lr", st.lr},             {"sched_best", st.sched_best},
                  {"sched_bad", st.sched_bad}, {"stall", st.stall}};
    h["tensors"] = ordered_json::array();
    std::size_t offset = 12 + header_len;
    for (const auto* p : model.reg.items()) {
        for (int slot = 0; slot < 3; ++slot) {
            ordered_json t;
            t["name"] = p->name + kSlots[slot];
            t["shape"] = p->shape;
            t["dtype"] = "f32";
            t["offset"] = offset;
            t["length"] = static_cast<std::size_t>(p->size()) * sizeof(float);
            h["tensors"].push_back(std::move(t));
            offset += static_cast<std::size_t>(p->size()) * sizeof(float);
        }
    }
    return h;
}

}  // namespace

void save_checkpoint(const OmniModel<float>& model, const TrainState& state,
                     const std::string& path) {
    check(!model.reg.items().empty(), "save checkpoint: model has no registered parameters");

    std::size_t header_len = 0;
    std::string header;
    for (int pass = 0; pass < 8; ++pass) {
        header = header_json(model, state, header_len).dump();
        if (header.size() == header_len) break;
        header_len = header.size();
    }
    check(header.size() == header_len, "save checkpoint: header length did not stabilize");

    std::string blob;
    blob.append(kMagic, 4);
    put_u32_le(blob, kVersion);
    put_u32_le(blob, static_cast<std::uint32_t>(header_len));
    blob += header;
    std::vector<float> zeros;
    for (const auto* p : model.reg.items())
        for (int slot = 0; slot < 3; ++slot) {
            const auto& src = slot_data(*p, slot, zeros);
            blob.append(reinterpret_cast<const char*>(src.data()), src.size() * sizeof(float));
        }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save checkpoint: cannot open " + path);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw std::runtime_error("save checkpoint: write failed for " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load checkpoint: cannot open " + path);
    std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (blob.size() < 12 || std::memcmp(blob.data(), kMagic, 4) != 0)
        throw std::runtime_error("load checkpoint: " + path + " is not an OMNF container");
    const std::uint32_t version =
        get_u32_le(reinterpret_cast<const unsigned char*>(blob.data() + 4));
    if (version != kVersion)
        throw std::runtime_error("load checkpoint: " + path + " has version " +
                                 std::to_string(version) + ", expected " +
                                 std::to_string(kVersion));
    const std::uint32_t header_len =
        get_u32_le(reinterpret_cast<const unsigned char*>(blob.data() + 8));
    if (blob.size() < 12 + static_cast<std::size_t>(header_len))
        throw std::runtime_error("load checkpoint: " + path + " truncated header");

    ordered_json h;
    try {
        h = ordered_json::parse(blob.substr(12, header_len));
    } catch (const std::exception& e) {
        throw std::runtime_error("load checkpoint: " + path + " corrupt header: " + e.what());
    }

    LoadedCheckpoint out;
    const TrainConfig cfg = config_from_json(h.at("config").dump());
    const auto& mj = h.at("model");
    out.model = std::make_unique<OmniModel<float>>();
    out.model->init(cfg, shapes_from_json(mj.at("modalities")), mj.at("n_classes").get<int>(),
                    mj.at("gx").get<int>(), mj.at("gy").get<int>(),
                    mj.at("cell_m").get<double>());

    const auto& sj = h.at("state");
    out.state.epoch = sj.at("epoch").get<int>();
    out.state.adam_t = sj.at("adam_t").get<std::int64_t>();
    out.state.lr = sj.at("lr").get<double>();
    out.state.sched_best = sj.at("sched_best").get<double>();
    out.state.sched_bad = sj.at("sched_bad").get<int>();
    out.state.stall = sj.at("stall").get<int>();

    std::size_t filled = 0;
    for (const auto& t : h.at("tensors")) {
        std::string name = t.at("name").get<std::string>();
        int slot = 0;
        if (name.size() > 2 && name.compare(name.size() - 2, 2, "#m") == 0) slot = 1;
        if (name.size() > 2 && name.compare(name.size() - 2, 2, "#v") == 0) slot = 2;
        if (slot) name.resize(name.size() - 2);
        nn::Parameter<float>* p = out.model->reg.find(name);
        if (!p)
            throw std::runtime_error("load checkpoint: unknown tensor " + name +
                                     " (rebuilt model does not define it)");
        check(t.at("shape").get<Shape>() == p->shape,
              "load checkpoint: tensor " + name + " shape mismatch");
        const std::size_t offset = t.at("offset").get<std::size_t>();
        const std::size_t length = t.at("length").get<std::size_t>();
        check(length == static_cast<std::size_t>(p->size()) * sizeof(float),
              "load checkpoint: tensor " + name + " length mismatch");
        check(offset + length <= blob.size(), "load checkpoint: tensor " + name + " out of range");
        std::vector<float>& dst = slot == 0 ? p->value : (slot == 1 ? p->m : p->v);
        dst.resize(static_cast<std::size_t>(p->size()));
        std::memcpy(dst.data(), blob.data() + offset, length);
        ++filled;
    }
    check(filled == out.model->reg.items().size() * 3,
          "load checkpoint: tensor directory incomplete");
    return out;
}

}  // namespace omnifuse::train
