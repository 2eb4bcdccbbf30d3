#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>
#include <set>

#include <json.hpp>

#include "omnifuse/cli/runconfig.hpp"
#include "omnifuse/data/dataset.hpp"
#include "omnifuse/data/split.hpp"
#include "omnifuse/data/synthetic.hpp"
#include "omnifuse/model/temporal_codec.hpp"
#include "omnifuse/train/checkpoint.hpp"
#include "omnifuse/train/config.hpp"
#include "omnifuse/train/trainer.hpp"
#include "omnifuse/verify/checks.hpp"

namespace py = pybind11;
using ordered_json = nlohmann::ordered_json;
using namespace omnifuse;

namespace {

train::TrainConfig config_from_overrides(const std::string& overrides_json) {
    auto j = ordered_json::parse(overrides_json);
    if (!j.is_object()) throw std::invalid_argument("config overrides must be a JSON object");
    return train::config_from_json(j.dump());
}

py::dict eval_to_dict(const train::EvalResult& r, const data::DatasetManifest& manifest) {
    py::dict d;
    d["bce"] = r.bce;
    d["f1_weighted"] = r.counts.weighted();
    d["f1_macro"] = r.counts.macro();
    d["f1_micro"] = r.counts.micro();
    py::list per_class;
    for (int c = 0; c < r.counts.classes(); ++c) {
        py::dict row;
        row["class"] = manifest.label_vocab[static_cast<std::size_t>(c)];
        row["f1"] = r.counts.f1(c);
        row["support"] = r.counts.support(c);
        per_class.append(row);
    }
    d["per_class"] = per_class;
    return d;
}

py::dict fit_to_dict(const train::FitResult& r, const std::string& checkpoint,
                     const std::string& metrics) {
    py::dict d;
    d["epochs"] = r.history.size();
    d["rejected_steps"] = r.rejected_steps;
    if (!r.history.empty()) {
        const auto& last = r.history.back();
        d["loss_total"] = last.loss_total;
        d["loss_con"] = last.loss_con;
        d["loss_mae"] = last.loss_mae;
        d["f1_weighted"] = last.f1_weighted;
    }
    d["checkpoint"] = checkpoint;
    d["metrics"] = metrics;
    return d;
}

}  // namespace

PYBIND11_MODULE(_omnifuse, m) {
    m.doc() = "token-aligned multimodal fusion core";
    m.attr("__version__") = "0.1.0";

    m.def(
        "generate_dataset",
        [](const std::string& out_dir, const std::string& overrides_json) {
            auto j = ordered_json::parse(overrides_json);
            if (!j.is_object()) throw std::invalid_argument("overrides must be a JSON object");
            auto gs = cli::gen_from_json(j);
            auto out = data::generate_synthetic(gs.synth, gs.seed);
            data::write_synthetic_dataset(out, gs.synth, out_dir);
            std::vector<std::pair<std::string, double>> fractions = {
                {"train", gs.train_fraction}, {"val", gs.val_fraction}};
            if (gs.test_fraction > 0) fractions.emplace_back("test", gs.test_fraction);
            data::apply_stratified_split(out.manifest, out_dir, fractions, gs.seed);
            data::save_manifest(out.manifest, out_dir);

            py::dict d;
            d["tiles"] = out.manifest.tiles.size();
            d["classes"] = out.manifest.label_vocab.size();
            py::list mods;
            for (const auto& s : out.manifest.modalities) mods.append(s.name);
            d["modalities"] = mods;
            py::dict splits;
            for (const auto& [name, ids] : out.manifest.splits) splits[name.c_str()] = ids.size();
            d["splits"] = splits;
            return d;
        },
        py::arg("out_dir"), py::arg("overrides_json") = "{}",
        "Write a synthetic multimodal dataset under out_dir. Overrides accept the "
        "same keys as the [gen] section of a run file.");

    m.def(
        "dataset_info",
        [](const std::string& root) {
            auto manifest = data::load_manifest(root);
            py::dict d;
            d["tiles"] = manifest.tiles.size();
            d["label_vocab"] = manifest.label_vocab;
            d["grid_cell_m"] = manifest.grid_cell_m;
            py::list mods;
            for (const auto& s : manifest.modalities) {
                py::dict ms;
                ms["name"] = s.name;
                ms["kind"] = s.kind == data::ModalityKind::Image ? "image" : "time_series";
                ms["channels"] = s.channels;
                mods.append(ms);
            }
            d["modalities"] = mods;
            py::dict splits;
            for (const auto& [name, ids] : manifest.splits) splits[name.c_str()] = ids.size();
            d["splits"] = splits;
            return d;
        },
        py::arg("root"));

    m.def(
        "select_dates",
        [](const std::vector<double>& attention, double fraction) {
            std::vector<std::uint8_t> valid(attention.size(), 1);
            return model::select_reconstruction_dates(attention, valid, fraction);
        },
        py::arg("attention"), py::arg("fraction") = 0.25,
        "Indices of the top-fraction dates by attention weight, ascending.");

    m.def(
        "run_checks",
        [](int seeds, const std::string& inject_fault) {
            verify::CheckOptions opt;
            opt.seeds = seeds;
            opt.inject_fault = inject_fault;
            auto rs = verify::run_checks(opt);
            py::list out;
            for (const auto& r : rs) {
                py::dict d;
                d["name"] = r.name;
                d["pass"] = r.pass;
                d["cases"] = r.cases;
                d["seconds"] = r.seconds;
                d["detail"] = r.detail;
                out.append(d);
            }
            return out;
        },
        py::arg("seeds") = 20, py::arg("inject_fault") = "",
        "Run the numerical verification suite; returns one record per check.");

    m.def(
        "pretrain",
        [](const std::string& data_dir, const std::string& out_dir,
           const std::string& config_json) {
            auto cfg = config_from_overrides(config_json);
            auto acc = data::load_dataset(data_dir);
            auto model = train::build_model(cfg, acc);
            std::filesystem::create_directories(out_dir);
            train::FitOptions opt;
            opt.checkpoint_path = out_dir + "/pretrain.omnf";
            opt.metrics_path = out_dir + "/pretrain_metrics.jsonl";
            auto fit = train::pretrain(*model, acc, opt);
            return fit_to_dict(fit, opt.checkpoint_path, opt.metrics_path);
        },
        py::arg("data_dir"), py::arg("out_dir"), py::arg("config_json") = "{}",
        "Self-supervised pretraining; config_json holds partial training-config "
        "overrides (same keys as the [train] section of a run file).");

    m.def(
        "finetune",
        [](const std::string& data_dir, const std::string& out_dir,
           const std::string& from_checkpoint, const std::string& config_json,
           const std::vector<std::string>& modalities, bool head_only) {
            auto acc = data::load_dataset(data_dir);
            std::unique_ptr<train::OmniModel<float>> model;
            if (!from_checkpoint.empty()) {
                auto loaded = train::load_checkpoint(from_checkpoint);
                auto overrides = ordered_json::parse(config_json);
                if (!overrides.is_object())
                    throw std::invalid_argument("config overrides must be a JSON object");
                auto merged = ordered_json::parse(train::config_to_json(loaded.model->cfg));
                static const std::set<std::string> structural = {
                    "d",          "blocks",     "heads",        "buckets",
                    "positional", "modalities", "index_bypass", "fixed_unpool"};
                for (const auto& [k, v] : overrides.items()) {
                    if (structural.count(k) && merged.contains(k) && merged[k] != v)
                        throw std::invalid_argument(
                            "override '" + k + "' conflicts with the checkpoint architecture");
                    merged[k] = v;
                }
                loaded.model->cfg = train::config_from_json(merged.dump());
                model = std::move(loaded.model);
            } else {
                model = train::build_model(config_from_overrides(config_json), acc);
            }
            std::filesystem::create_directories(out_dir);
            const std::string name = head_only ? "probe" : "finetune";
            train::FitOptions opt;
            opt.checkpoint_path = out_dir + "/" + name + ".omnf";
            opt.metrics_path = out_dir + "/" + name + "_metrics.jsonl";
            auto fit = train::finetune(*model, acc, modalities, opt, head_only);
            return fit_to_dict(fit, opt.checkpoint_path, opt.metrics_path);
        },
        py::arg("data_dir"), py::arg("out_dir"), py::arg("from_checkpoint") = "",
        py::arg("config_json") = "{}", py::arg("modalities") = std::vector<std::string>{},
        py::arg("head_only") = false,
        "Supervised training from a pretrained checkpoint (or from scratch when "
        "from_checkpoint is empty). head_only freezes everything but the head.");

    m.def(
        "evaluate",
        [](const std::string& checkpoint, const std::string& data_dir, const std::string& split,
           const std::vector<std::string>& modalities) {
            auto loaded = train::load_checkpoint(checkpoint);
            auto acc = data::load_dataset(data_dir);
            auto r = train::evaluate(*loaded.model, acc, split, modalities);
            return eval_to_dict(r, acc.manifest());
        },
        py::arg("checkpoint"), py::arg("data_dir"), py::arg("split") = "test",
        py::arg("modalities") = std::vector<std::string>{},
        "Thresholded multilabel evaluation of a checkpoint on one split.");

    m.def("default_config", [] { return train::config_to_json(train::TrainConfig{}); },
          "Training configuration defaults as a JSON string.");
}
