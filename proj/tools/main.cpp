#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "omnifuse/cli/report.hpp"
#include "omnifuse/cli/runconfig.hpp"
#include "omnifuse/core/parallel.hpp"
#include "omnifuse/data/dataset.hpp"
#include "omnifuse/data/split.hpp"
#include "omnifuse/data/synthetic.hpp"
#include "omnifuse/train/checkpoint.hpp"
#include "omnifuse/train/trainer.hpp"
#include "omnifuse/verify/checks.hpp"

namespace fs = std::filesystem;
using namespace omnifuse;
using ordered_json = nlohmann::ordered_json;

namespace {

void ensure_dir(const std::string& path) {
    std::error_code ec;
    fs::create_directories(path, ec);
    if (ec) throw fs::filesystem_error("cannot create output directory", fs::path(path), ec);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
}

// Every TrainConfig knob as a flag. Values land in `stage`; only flags the
// user actually passed (count > 0) are copied into the merged config, so
// file settings survive unless overridden.
struct TrainFlags {
    train::TrainConfig stage;
    std::map<std::string, CLI::Option*> opt;

    void attach(CLI::App* cmd) {
        auto add = [&](const std::string& name, auto& field, const std::string& help) {
            opt[name] = cmd->add_option("--" + name, field, help);
        };
        add("d", stage.d, "embedding width");
        add("blocks", stage.blocks, "fusion transformer blocks");
        add("heads", stage.heads, "attention heads");
        add("buckets", stage.buckets, "relative-distance buckets");
        add("gamma", stage.gamma, "contrastive temperature");
        add("mask-ratio", stage.mask_ratio, "masked token fraction");
        add("mask-strategy", stage.mask_strategy, "random | spatial | modality");
        add("contrastive", stage.contrastive, "off | naive | full");
        add("reconstruction", stage.reconstruction, "enable the reconstruction objective");
        add("contrastive-pre-mask", stage.contrastive_pre_mask,
            "contrast encoder outputs rather than post-substitution rows");
        add("pretrain-lr", stage.pretrain_lr, "pretraining learning rate");
        add("finetune-lr", stage.finetune_lr, "fine-tuning learning rate");
        add("scheduler-patience", stage.scheduler_patience, "plateau epochs before decay");
        add("scheduler-decay", stage.scheduler_decay, "learning-rate decay factor");
        add("batch-tiles", stage.batch_tiles, "tiles per optimizer step");
        add("pretrain-epochs", stage.pretrain_epochs, "pretraining epoch cap");
        add("finetune-epochs", stage.finetune_epochs, "fine-tuning epoch cap");
        add("early-stop", stage.early_stop, "epochs without improvement before stopping");
        add("labels-fraction", stage.label_fraction, "labeled fraction of the train split");
        opt["modalities"] = cmd->add_option("--modalities", stage.modalities,
                                            "comma-separated modality names (default: all)")
                                ->delimiter(',');
        add("index-bypass", stage.index_bypass, "route unpooling through traced argmax indices");
        add("fixed-unpool", stage.fixed_unpool, "unpool to the fixed corner convention");
        add("date-filter", stage.date_filter, "reconstruct only high-attention dates");
        add("date-fraction", stage.date_fraction, "fraction of dates kept by the filter");
        add("positional", stage.positional, "relative | absolute");
        add("seed", stage.seed, "run seed");
    }

    bool set(const std::string& name) const { return opt.at(name)->count() > 0; }
};

// file section over defaults, then explicit flags over that
train::TrainConfig merge_config(const cli::RunFile& rf, const TrainFlags& fl) {
    auto j = ordered_json::parse(train::config_to_json(train::TrainConfig{}));
    for (const auto& [k, v] : rf.train.items()) j[k] = v;
    const auto patch = ordered_json::parse(train::config_to_json(fl.stage));
    static const std::map<std::string, std::string> flag_key = {
        {"d", "d"},
        {"blocks", "blocks"},
        {"heads", "heads"},
        {"buckets", "buckets"},
        {"gamma", "gamma"},
        {"mask-ratio", "mask_ratio"},
        {"mask-strategy", "mask_strategy"},
        {"contrastive", "contrastive"},
        {"reconstruction", "reconstruction"},
        {"contrastive-pre-mask", "contrastive_pre_mask"},
        {"pretrain-lr", "pretrain_lr"},
        {"finetune-lr", "finetune_lr"},
        {"scheduler-patience", "scheduler_patience"},
        {"scheduler-decay", "scheduler_decay"},
        {"batch-tiles", "batch_tiles"},
        {"pretrain-epochs", "pretrain_epochs"},
        {"finetune-epochs", "finetune_epochs"},
        {"early-stop", "early_stop"},
        {"labels-fraction", "label_fraction"},
        {"modalities", "modalities"},
        {"index-bypass", "index_bypass"},
        {"fixed-unpool", "fixed_unpool"},
        {"date-filter", "date_filter"},
        {"date-fraction", "date_fraction"},
        {"positional", "positional"},
        {"seed", "seed"}};
    for (const auto& [flag, key] : flag_key)
        if (fl.set(flag)) j[key] = patch[key];
    return train::config_from_json(j.dump());
}

// keys that pick the experiment variant rather than a config field
void apply_ablations(train::TrainConfig& cfg, const std::vector<std::string>& ablate) {
    for (const auto& a : ablate) {
        if (a == "no-bypass") cfg.index_bypass = false;
        else if (a == "no-date-filter") cfg.date_filter = false;
        else if (a == "no-contrastive") cfg.contrastive = "off";
        else if (a == "naive-contrastive") cfg.contrastive = "naive";
        else if (a == "no-reconstruction") cfg.reconstruction = false;
        else if (a == "spatial-mask") cfg.mask_strategy = "spatial";
        else if (a == "modality-mask") cfg.mask_strategy = "modality";
        else if (a == "abs-pos") cfg.positional = "absolute";
        else
            throw std::invalid_argument("unknown ablation '" + a +
                                        "' (known: no-bypass, no-date-filter, no-contrastive, "
                                        "naive-contrastive, no-reconstruction, spatial-mask, "
                                        "modality-mask, abs-pos)");
    }
    cfg.validate();
}

// Paths and config shared by the training-side commands.
struct CommonArgs {
    std::string config_path, data, out;
    std::vector<std::string> modalities, ablate;
    bool verbose = false;
    TrainFlags flags;
    CLI::Option *data_opt = nullptr, *out_opt = nullptr;

    void attach(CLI::App* cmd, bool with_train_flags = true) {
        cmd->add_option("--config", config_path, "run file (strict TOML subset)")
            ->check(CLI::ExistingFile);
        data_opt = cmd->add_option("--data", data, "dataset root");
        out_opt = cmd->add_option("--out", out, "output directory");
        cmd->add_flag("--verbose", verbose, "one progress line per epoch on stderr");
        if (with_train_flags) {
            flags.attach(cmd);
            cmd->add_option("--ablate", ablate,
                            "comma-separated ablations applied after other flags")
                ->delimiter(',');
        }
    }

    cli::RunFile run_file() const {
        return config_path.empty() ? cli::RunFile{} : cli::load_run_file(config_path);
    }

    // flags win over the run file
    std::string resolve_data(const cli::RunFile& rf) const {
        if (data_opt->count()) return data;
        if (rf.has("data")) return rf.top.at("data").get<std::string>();
        throw std::invalid_argument("no dataset root: pass --data or set data in the run file");
    }
    std::string resolve_out(const cli::RunFile& rf) const {
        if (out_opt->count()) return out;
        if (rf.has("out")) return rf.top.at("out").get<std::string>();
        throw std::invalid_argument("no output directory: pass --out or set out in the run file");
    }
};

void write_run_record(const std::string& out_dir, const std::string& command,
                      const std::string& data, const train::TrainConfig& cfg,
                      const std::vector<std::string>& modalities) {
    ordered_json j;
    j["command"] = command;
    j["data"] = data;
    j["train"] = ordered_json::parse(train::config_to_json(cfg));
    j["modalities"] = modalities;
    write_text(out_dir + "/" + command + "_run.json", j.dump(2) + "\n");
}

// Hyperparameters may change between pretraining and fine-tuning; the
// architecture may not. Explicitly requested architecture fields must match
// the checkpoint, everything else is taken from the request.
train::TrainConfig adopt_checkpoint_config(const train::TrainConfig& stored,
                                           train::TrainConfig requested,
                                           const std::set<std::string>& explicit_keys) {
    static const std::map<std::string, std::string> structural = {
        {"d", ""},          {"blocks", ""},      {"heads", ""},        {"buckets", ""},
        {"positional", ""}, {"modalities", ""},  {"index_bypass", ""}, {"fixed_unpool", ""}};
    const auto sj = ordered_json::parse(train::config_to_json(stored));
    const auto rj = ordered_json::parse(train::config_to_json(requested));
    for (const auto& [key, _] : structural)
        if (explicit_keys.count(key) && sj[key] != rj[key])
            train::require_same_architecture(stored, requested);
    auto merged = rj;
    for (const auto& [key, _] : structural) merged[key] = sj[key];
    return train::config_from_json(merged.dump());
}

std::set<std::string> explicit_train_keys(const cli::RunFile& rf, const TrainFlags& fl) {
    std::set<std::string> keys;
    for (const auto& dotted : rf.present)
        if (dotted.rfind("train.", 0) == 0) keys.insert(dotted.substr(6));
    static const std::map<std::string, std::string> flag_key = {
        {"d", "d"},           {"blocks", "blocks"},       {"heads", "heads"},
        {"buckets", "buckets"}, {"positional", "positional"}, {"modalities", "modalities"},
        {"index-bypass", "index_bypass"}, {"fixed-unpool", "fixed_unpool"}};
    for (const auto& [flag, key] : flag_key)
        if (fl.set(flag)) keys.insert(key);
    return keys;
}

int cmd_gen_data(const CommonArgs& args, std::uint64_t seed_flag, bool seed_set, int tiles_flag,
                 bool tiles_set) {
    const auto rf = args.run_file();
    auto gs = cli::gen_from_json(rf.gen);
    if (seed_set) gs.seed = seed_flag;
    if (tiles_set) gs.synth.n_tiles = tiles_flag;
    gs.synth.validate();
    const std::string out = args.resolve_out(rf);
    ensure_dir(out);

    auto syn = data::generate_synthetic(gs.synth, gs.seed);
    data::write_synthetic_dataset(syn, gs.synth, out);
    std::vector<std::pair<std::string, double>> fractions = {{"train", gs.train_fraction},
                                                             {"val", gs.val_fraction}};
    if (gs.test_fraction > 0) fractions.emplace_back("test", gs.test_fraction);
    data::apply_stratified_split(syn.manifest, out, fractions, gs.seed);
    data::save_manifest(syn.manifest, out);
    std::cout << "wrote " << gs.synth.n_tiles << " tiles, " << gs.synth.n_classes
              << " classes, " << syn.manifest.modalities.size() << " modalities to " << out
              << "\n";
    return 0;
}

int cmd_pretrain(const CommonArgs& args) {
    const auto rf = args.run_file();
    auto cfg = merge_config(rf, args.flags);
    apply_ablations(cfg, args.ablate);
    const std::string data_root = args.resolve_data(rf);
    const std::string out = args.resolve_out(rf);
    ensure_dir(out);

    auto acc = data::load_dataset(data_root);
    auto model = train::build_model(cfg, acc);
    write_run_record(out, "pretrain", data_root, model->cfg, model->cfg.modalities);

    train::FitOptions opt;
    opt.checkpoint_path = out + "/pretrain.omnf";
    opt.metrics_path = out + "/pretrain_metrics.jsonl";
    opt.verbose = args.verbose;
    auto res = train::pretrain(*model, acc, opt);
    std::cout << "pretrain: " << res.history.size() << " epochs, best val loss "
              << res.state.sched_best << ", checkpoint " << opt.checkpoint_path << "\n";
    if (res.rejected_steps > 0)
        std::cout << "pretrain: " << res.rejected_steps << " rejected optimizer steps\n";
    return 0;
}

int cmd_finetune(const CommonArgs& args, const std::string& from, bool head_only) {
    const auto rf = args.run_file();
    auto requested = merge_config(rf, args.flags);
    apply_ablations(requested, args.ablate);
    const std::string data_root = args.resolve_data(rf);
    const std::string out = args.resolve_out(rf);
    const std::string name = head_only ? "probe" : "finetune";
    ensure_dir(out);

    auto acc = data::load_dataset(data_root);
    std::unique_ptr<train::OmniModel<float>> model;
    if (!from.empty()) {
        auto loaded = train::load_checkpoint(from);
        loaded.model->cfg = adopt_checkpoint_config(loaded.model->cfg, requested,
                                                    explicit_train_keys(rf, args.flags));
        model = std::move(loaded.model);
    } else {
        if (args.flags.set("modalities")) requested.modalities = args.flags.stage.modalities;
        model = train::build_model(requested, acc);
    }
    write_run_record(out, name, data_root, model->cfg, args.modalities);

    train::FitOptions opt;
    opt.checkpoint_path = out + "/" + name + ".omnf";
    opt.metrics_path = out + "/" + name + "_metrics.jsonl";
    opt.verbose = args.verbose;
    auto res = head_only ? train::linear_probe(*model, acc, args.modalities, opt)
                         : train::finetune(*model, acc, args.modalities, opt);
    const auto& last = res.history.back();
    std::cout << name << ": " << res.history.size() << " epochs, final val weighted F1 "
              << last.f1_weighted << ", checkpoint " << opt.checkpoint_path << "\n";
    return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& from, const std::string& split) {
    const auto rf = args.run_file();
    const std::string data_root = args.resolve_data(rf);
    auto acc = data::load_dataset(data_root);
    auto loaded = train::load_checkpoint(from);
    auto r = train::evaluate(*loaded.model, acc, split, args.modalities);

    ordered_json j;
    j["split"] = split;
    j["modalities"] =
        args.modalities.empty() ? loaded.model->cfg.modalities : args.modalities;
    j["bce"] = r.bce;
    j["f1_weighted"] = r.counts.weighted();
    j["f1_macro"] = r.counts.macro();
    j["f1_micro"] = r.counts.micro();
    ordered_json per = ordered_json::array();
    const auto& vocab = acc.manifest().label_vocab;
    for (int c = 0; c < r.counts.classes(); ++c) {
        ordered_json e;
        e["class"] = c < static_cast<int>(vocab.size()) ? vocab[c] : std::to_string(c);
        e["f1"] = r.counts.f1(c);
        e["support"] = r.counts.support(c);
        per.push_back(e);
    }
    j["per_class"] = per;
    std::cout << j.dump(2) << "\n";
    if (args.out_opt->count() || rf.has("out")) {
        const std::string out = args.resolve_out(rf);
        ensure_dir(out);
        write_text(out + "/eval.json", j.dump(2) + "\n");
    }
    return 0;
}

int cmd_verify(int seeds, const std::string& inject) {
    if (!inject.empty() && inject != "grad")
        throw std::invalid_argument("unknown fault '" + inject + "' (known: grad)");
    verify::CheckOptions opt;
    opt.seeds = seeds;
    opt.inject_fault = inject;
    const auto results = verify::run_checks(opt);
    int passed = 0, cases = 0;
    for (const auto& r : results) {
        cases += r.cases;
        if (r.pass) {
            ++passed;
            std::printf("ok   %-24s %6d cases  %.2fs\n", r.name.c_str(), r.cases, r.seconds);
        } else {
            std::printf("FAIL %-24s %s\n", r.name.c_str(), r.detail.c_str());
        }
    }
    std::printf("%d/%zu checks passed, %d cases, %d seeds per sweep\n", passed, results.size(),
                cases, seeds);
    return passed == static_cast<int>(results.size()) ? 0 : 1;
}

int cmd_report(const std::vector<std::string>& logs, const std::string& out) {
    auto runs = cli::collect_runs(logs, &std::cerr);
    const std::string table = cli::render_table(runs);
    std::cout << table;
    if (!out.empty()) {
        ensure_dir(out);
        write_text(out + "/table.txt", table);
        write_text(out + "/loss_curves.svg", cli::loss_curves_svg(runs));
        write_text(out + "/f1_curves.svg", cli::f1_curves_svg(runs));
        std::cout << "report written to " << out << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"self-supervised multimodal fusion for tiled earth observation data"};
    app.require_subcommand(1);
    app.footer(
        "exit codes: 0 ok, 1 verification failure, 2 config error, 3 i/o error\n"
        "environment: OMNIFUSE_THREADS caps worker threads (default: all cores)");

    int rc = 0;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic multimodal dataset");
    auto gen_args = std::make_shared<CommonArgs>();
    gen_args->attach(gen, /*with_train_flags=*/false);
    auto gen_seed = std::make_shared<std::uint64_t>(7);
    auto gen_tiles = std::make_shared<int>(0);
    auto* gen_seed_opt = gen->add_option("--seed", *gen_seed, "generation seed");
    auto* gen_tiles_opt = gen->add_option("--tiles", *gen_tiles, "tile count override");
    gen->callback([=, &rc] {
        rc = cmd_gen_data(*gen_args, *gen_seed, gen_seed_opt->count() > 0, *gen_tiles,
                          gen_tiles_opt->count() > 0);
    });

    auto* pre = app.add_subcommand("pretrain", "self-supervised pretraining");
    auto pre_args = std::make_shared<CommonArgs>();
    pre_args->attach(pre);
    pre->callback([=, &rc] { rc = cmd_pretrain(*pre_args); });

    auto* fin = app.add_subcommand("finetune", "supervised fine-tuning of all parameters");
    auto fin_args = std::make_shared<CommonArgs>();
    auto fin_from = std::make_shared<std::string>();
    fin_args->attach(fin);
    fin->add_option("--from", *fin_from, "pretrained checkpoint to start from");
    fin->add_option("--eval-modalities", fin_args->modalities,
                    "comma-separated modality subset fed at fine-tune and validation")
        ->delimiter(',');
    fin->callback([=, &rc] { rc = cmd_finetune(*fin_args, *fin_from, false); });

    auto* prb = app.add_subcommand("probe", "linear probe: train the head on a frozen backbone");
    auto prb_args = std::make_shared<CommonArgs>();
    auto prb_from = std::make_shared<std::string>();
    prb_args->attach(prb);
    prb->add_option("--from", *prb_from, "pretrained checkpoint to start from");
    prb->add_option("--eval-modalities", prb_args->modalities,
                    "comma-separated modality subset fed at probing and validation")
        ->delimiter(',');
    prb->callback([=, &rc] { rc = cmd_finetune(*prb_args, *prb_from, true); });

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
    auto ev_args = std::make_shared<CommonArgs>();
    auto ev_from = std::make_shared<std::string>();
    auto ev_split = std::make_shared<std::string>("test");
    ev_args->attach(ev, /*with_train_flags=*/false);
    ev->add_option("--from", *ev_from, "checkpoint to evaluate")->required();
    ev->add_option("--split", *ev_split, "dataset split (default: test)");
    ev->add_option("--modalities", ev_args->modalities,
                   "comma-separated modality subset to feed")
        ->delimiter(',');
    ev->callback([=, &rc] { rc = cmd_eval(*ev_args, *ev_from, *ev_split); });

    auto* ver = app.add_subcommand("verify", "run the oracle and gradient check suite");
    auto ver_seeds = std::make_shared<int>(20);
    auto ver_inject = std::make_shared<std::string>();
    ver->add_option("--seeds", *ver_seeds, "seeds per randomized sweep (default 20)")
        ->check(CLI::PositiveNumber);
    ver->add_option("--inject-fault", *ver_inject,
                    "deliberately corrupt a quantity to prove the checks catch it (grad)");
    ver->callback([=, &rc] { rc = cmd_verify(*ver_seeds, *ver_inject); });

    auto* rep = app.add_subcommand("report", "summarize metrics logs into a table and charts");
    auto rep_logs = std::make_shared<std::vector<std::string>>();
    auto rep_out = std::make_shared<std::string>();
    rep->add_option("logs", *rep_logs, "metrics JSONL files")->required();
    rep->add_option("--out", *rep_out, "directory for table.txt and SVG charts");
    rep->callback([=, &rc] { rc = cmd_report(*rep_logs, *rep_out); });

    auto* cfg = app.add_subcommand("config", "configuration utilities");
    auto cfg_dump = std::make_shared<bool>(false);
    cfg->add_flag("--dump-defaults", *cfg_dump, "print every key with its default value");
    cfg->callback([=, &rc] {
        if (!*cfg_dump)
            throw std::invalid_argument("nothing to do (use --dump-defaults)");
        std::cout << cli::dump_defaults();
        rc = 0;
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return rc;
}
