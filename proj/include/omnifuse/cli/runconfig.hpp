#pragma once

#include <json.hpp>

#include <set>
#include <string>

#include "omnifuse/data/synthetic.hpp"

namespace omnifuse::cli {

// A parsed run file. The format is a strict subset of TOML: full-line or
// trailing # comments, [train] and [gen] section headers, key = value lines
// with quoted strings, booleans, numbers, and arrays of quoted strings.
// Unknown sections, unknown keys, duplicate keys, and malformed values are
// all rejected. `present` records every key the document actually set
// ("data", "train.d", ...), which is how commands distinguish an explicit
// setting from a default.
struct RunFile {
    nlohmann::ordered_json top = nlohmann::ordered_json::object();    // data, out
    nlohmann::ordered_json train = nlohmann::ordered_json::object();  // TrainConfig keys
    nlohmann::ordered_json gen = nlohmann::ordered_json::object();    // generator keys
    std::set<std::string> present;

    bool has(const std::string& dotted) const { return present.count(dotted) > 0; }
};

RunFile parse_run_file(const std::string& text);
RunFile load_run_file(const std::string& path);

// Every key with its default value, as a parseable document.
std::string dump_defaults();

// [gen] section contents: synthetic generator parameters plus split fractions
// and the generation seed.
struct GenSettings {
    data::SyntheticConfig synth;
    double train_fraction = 0.7;
    double val_fraction = 0.15;
    double test_fraction = 0.15;
    std::uint64_t seed = 7;
};

GenSettings gen_from_json(const nlohmann::ordered_json& j);

}  // namespace omnifuse::cli
