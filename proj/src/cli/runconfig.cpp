#include "omnifuse/cli/runconfig.hpp"

#include <fstream>
#include <sstream>

#include "omnifuse/core/shape.hpp"
#include "omnifuse/train/config.hpp"

namespace omnifuse::cli {

using ordered_json = nlohmann::ordered_json;

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

// Cuts a trailing comment, honoring quoted strings.
std::string strip_comment(const std::string& line) {
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (c == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
        if (c == '#' && !in_string) return line.substr(0, i);
    }
    return line;
}

bool valid_key(const std::string& k) {
    if (k.empty() || (!std::isalpha(static_cast<unsigned char>(k[0])) && k[0] != '_'))
        return false;
    for (char c : k)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') return false;
    return true;
}

std::string unquote(const std::string& v, int lineno) {
    check(v.size() >= 2 && v.back() == '"',
          "config file line " + std::to_string(lineno) + ": unterminated string");
    std::string out;
    for (std::size_t i = 1; i + 1 < v.size(); ++i) {
        if (v[i] == '\\' && i + 2 < v.size() && (v[i + 1] == '"' || v[i + 1] == '\\'))
            out.push_back(v[++i]);
        else
            out.push_back(v[i]);
    }
    return out;
}

ordered_json parse_value(const std::string& v, int lineno) {
    if (v.empty()) throw std::invalid_argument("config file line " + std::to_string(lineno) +
                                               ": missing value");
    if (v.front() == '"') return unquote(v, lineno);
    if (v == "true") return true;
    if (v == "false") return false;
    if (v.front() == '[') {
        check(v.back() == ']',
              "config file line " + std::to_string(lineno) + ": unterminated array");
        ordered_json arr = ordered_json::array();
        std::string body = trim(v.substr(1, v.size() - 2));
        while (!body.empty()) {
            check(body.front() == '"', "config file line " + std::to_string(lineno) +
                                           ": arrays hold quoted strings only");
            std::size_t end = 1;
            while (end < body.size() && !(body[end] == '"' && body[end - 1] != '\\')) ++end;
            check(end < body.size(),
                  "config file line " + std::to_string(lineno) + ": unterminated string");
            arr.push_back(unquote(body.substr(0, end + 1), lineno));
            body = trim(body.substr(end + 1));
            if (!body.empty()) {
                check(body.front() == ',', "config file line " + std::to_string(lineno) +
                                               ": expected comma between array items");
                body = trim(body.substr(1));
            }
        }
        return arr;
    }
    try {
        ordered_json num = ordered_json::parse(v);
        check(num.is_number(), "");
        return num;
    } catch (const std::exception&) {
        throw std::invalid_argument("config file line " + std::to_string(lineno) +
                                    ": cannot parse value '" + v + "'");
    }
}

// Validates a partial train section by layering it over the defaults; the
// strict reader rejects unknown keys and bad values.
void validate_train_section(const ordered_json& section) {
    auto j = ordered_json::parse(train::config_to_json(train::TrainConfig{}));
    for (const auto& [k, v] : section.items()) j[k] = v;
    train::config_from_json(j.dump());
}

ordered_json gen_defaults() {
    const data::SyntheticConfig c;
    const GenSettings g;
    ordered_json j;
    j["n_classes"] = c.n_classes;
    j["n_tiles"] = c.n_tiles;
    j["gx"] = c.gx;
    j["gy"] = c.gy;
    j["cell_m"] = c.cell_m;
    j["img_channels"] = c.img_channels;
    j["img_patch_px"] = c.img_patch_px;
    j["opt_channels"] = c.opt_channels;
    j["opt_len_min"] = c.opt_len_min;
    j["opt_len_max"] = c.opt_len_max;
    j["cloud_prob"] = c.cloud_prob;
    j["rad_channels"] = c.rad_channels;
    j["rad_len_min"] = c.rad_len_min;
    j["rad_len_max"] = c.rad_len_max;
    j["noise"] = c.noise;
    j["img_classes_mod"] = c.img_classes_mod;
    j["opt_classes_div"] = c.opt_classes_div;
    j["rad_classes_mod"] = c.rad_classes_mod;
    j["coarse"] = c.coarse;
    j["smooth_passes"] = c.smooth_passes;
    j["debug_sidecar"] = c.debug_sidecar;
    j["train_fraction"] = g.train_fraction;
    j["val_fraction"] = g.val_fraction;
    j["test_fraction"] = g.test_fraction;
    j["seed"] = g.seed;
    return j;
}

std::string toml_value(const ordered_json& v) {
    if (v.is_string()) return "\"" + v.get<std::string>() + "\"";
    return v.dump();  // numbers, booleans, arrays of strings
}

}  // namespace

GenSettings gen_from_json(const ordered_json& j) {
    auto merged = gen_defaults();
    for (const auto& [k, v] : j.items()) {
        check(merged.contains(k), "config: unknown key gen." + k);
        merged[k] = v;
    }
    GenSettings g;
    auto& c = g.synth;
    c.n_classes = merged["n_classes"].get<int>();
    c.n_tiles = merged["n_tiles"].get<int>();
    c.gx = merged["gx"].get<int>();
    c.gy = merged["gy"].get<int>();
    c.cell_m = merged["cell_m"].get<double>();
    c.img_channels = merged["img_channels"].get<int>();
    c.img_patch_px = merged["img_patch_px"].get<int>();
    c.opt_channels = merged["opt_channels"].get<int>();
    c.opt_len_min = merged["opt_len_min"].get<int>();
    c.opt_len_max = merged["opt_len_max"].get<int>();
    c.cloud_prob = merged["cloud_prob"].get<double>();
    c.rad_channels = merged["rad_channels"].get<int>();
    c.rad_len_min = merged["rad_len_min"].get<int>();
    c.rad_len_max = merged["rad_len_max"].get<int>();
    c.noise = merged["noise"].get<double>();
    c.img_classes_mod = merged["img_classes_mod"].get<int>();
    c.opt_classes_div = merged["opt_classes_div"].get<int>();
    c.rad_classes_mod = merged["rad_classes_mod"].get<int>();
    c.coarse = merged["coarse"].get<int>();
    c.smooth_passes = merged["smooth_passes"].get<int>();
    c.debug_sidecar = merged["debug_sidecar"].get<bool>();
    g.train_fraction = merged["train_fraction"].get<double>();
    g.val_fraction = merged["val_fraction"].get<double>();
    g.test_fraction = merged["test_fraction"].get<double>();
    g.seed = merged["seed"].get<std::uint64_t>();
    c.validate();
    check(g.train_fraction > 0 && g.val_fraction > 0 && g.test_fraction >= 0,
          "config: split fractions must be positive (test may be zero)");
    check(g.train_fraction + g.val_fraction + g.test_fraction <= 1.0 + 1e-9,
          "config: split fractions exceed 1");
    return g;
}

RunFile parse_run_file(const std::string& text) {
    RunFile rf;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        const std::string line = trim(strip_comment(raw));
        if (line.empty()) continue;
        if (line.front() == '[') {
            check(line.back() == ']',
                  "config file line " + std::to_string(lineno) + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            check(section == "train" || section == "gen",
                  "config: unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        check(eq != std::string::npos,
              "config file line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        check(valid_key(key), "config file line " + std::to_string(lineno) + ": bad key '" +
                                  key + "'");
        const auto value = parse_value(trim(line.substr(eq + 1)), lineno);
        auto& dest = section.empty() ? rf.top : section == "train" ? rf.train : rf.gen;
        const std::string dotted = section.empty() ? key : section + "." + key;
        check(!dest.contains(key), "config: duplicate key " + dotted);
        if (section.empty()) {
            check(key == "data" || key == "out", "config: unknown key " + key);
            check(value.is_string(), "config: " + key + " must be a string");
        }
        dest[key] = value;
        rf.present.insert(dotted);
    }
    validate_train_section(rf.train);
    gen_from_json(rf.gen);
    return rf;
}

RunFile load_run_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return parse_run_file(ss.str());
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(path + ": " + e.what());
    }
}

std::string dump_defaults() {
    std::ostringstream os;
    os << "# omnifuse run file (strict TOML subset: sections, key = value,\n"
          "# quoted strings, numbers, booleans, arrays of quoted strings)\n"
          "# unknown keys are rejected; command-line flags override these values\n\n";
    os << "data = \"\"  # dataset root\n";
    os << "out = \"\"   # output directory\n";
    os << "\n[train]\n";
    const auto tj = ordered_json::parse(train::config_to_json(train::TrainConfig{}));
    for (const auto& [k, v] : tj.items()) os << k << " = " << toml_value(v) << "\n";
    os << "\n[gen]\n";
    const auto gj = gen_defaults();
    for (const auto& [k, v] : gj.items()) os << k << " = " << toml_value(v) << "\n";
    return os.str();
}

}  // namespace omnifuse::cli
