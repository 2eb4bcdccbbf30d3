#include "omnifuse/train/config.hpp"

#include <json.hpp>

#include <set>
#include <stdexcept>

#include "omnifuse/core/shape.hpp"

namespace omnifuse::train {

using ordered_json = nlohmann::ordered_json;

void TrainConfig::validate() const {
    check(d > 0, "config: d must be positive");
    check(heads > 0 && d % heads == 0, "config: d must be divisible by heads");
    check(blocks >= 0, "config: blocks must be non-negative");
    check(buckets >= 3, "config: buckets must be at least 3");
    check(gamma > 0, "config: gamma must be positive");
    check(mask_ratio >= 0 && mask_ratio < 1, "config: mask_ratio outside [0, 1)");
    check(mask_strategy == "random" || mask_strategy == "spatial" || mask_strategy == "modality",
          "config: unknown mask_strategy " + mask_strategy);
    check(contrastive == "off" || contrastive == "naive" || contrastive == "full",
          "config: contrastive must be off, naive or full");
    check(pretrain_lr > 0 && finetune_lr > 0, "config: learning rates must be positive");
    check(scheduler_patience > 0, "config: scheduler patience must be positive");
    check(scheduler_decay > 0 && scheduler_decay < 1, "config: scheduler decay outside (0, 1)");
    check(batch_tiles > 0, "config: batch_tiles must be positive");
    check(pretrain_epochs >= 0 && finetune_epochs >= 0, "config: epoch caps must be non-negative");
    check(early_stop > 0, "config: early_stop must be positive");
    check(label_fraction > 0 && label_fraction <= 1, "config: label_fraction outside (0, 1]");
    check(date_fraction > 0 && date_fraction <= 1, "config: date_fraction outside (0, 1]");
    check(positional == "relative" || positional == "absolute",
          "config: positional must be relative or absolute");
}

namespace {

ordered_json config_json(const TrainConfig& c) {
    ordered_json j;
    j["d"] = c.d;
    j["blocks"] = c.blocks;
    j["heads"] = c.heads;
    j["buckets"] = c.buckets;
    j["gamma"] = c.gamma;
    j["mask_ratio"] = c.mask_ratio;
    j["mask_strategy"] = c.mask_strategy;
    j["contrastive"] = c.contrastive;
    j["reconstruction"] = c.reconstruction;
    j["contrastive_pre_mask"] = c.contrastive_pre_mask;
    j["pretrain_lr"] = c.pretrain_lr;
    j["finetune_lr"] = c.finetune_lr;
    j["scheduler_patience"] = c.scheduler_patience;
    j["scheduler_decay"] = c.scheduler_decay;
    j["batch_tiles"] = c.batch_tiles;
    j["pretrain_epochs"] = c.pretrain_epochs;
    j["finetune_epochs"] = c.finetune_epochs;
    j["early_stop"] = c.early_stop;
    j["label_fraction"] = c.label_fraction;
    j["modalities"] = c.modalities;
    j["index_bypass"] = c.index_bypass;
    j["fixed_unpool"] = c.fixed_unpool;
    j["date_filter"] = c.date_filter;
    j["date_fraction"] = c.date_fraction;
    j["positional"] = c.positional;
    j["seed"] = c.seed;
    return j;
}

}  // namespace

std::string config_to_json(const TrainConfig& cfg) { return config_json(cfg).dump(); }

TrainConfig config_from_json(const std::string& text) {
    ordered_json j = ordered_json::parse(text);
    TrainConfig c;
    const std::set<std::string> known = {
        "d", "blocks", "heads", "buckets", "gamma", "mask_ratio", "mask_strategy",
        "contrastive", "reconstruction", "contrastive_pre_mask", "pretrain_lr", "finetune_lr",
        "scheduler_patience", "scheduler_decay", "batch_tiles", "pretrain_epochs",
        "finetune_epochs", "early_stop", "label_fraction", "modalities", "index_bypass",
        "fixed_unpool", "date_filter", "date_fraction", "positional", "seed"};
    for (const auto& [key, _] : j.items())
        check(known.count(key) > 0, "config: unknown key " + key);
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j[key].get<std::decay_t<decltype(field)>>();
    };
    get("d", c.d);
    get("blocks", c.blocks);
    get("heads", c.heads);
    get("buckets", c.buckets);
    get("gamma", c.gamma);
    get("mask_ratio", c.mask_ratio);
    get("mask_strategy", c.mask_strategy);
    get("contrastive", c.contrastive);
    get("reconstruction", c.reconstruction);
    get("contrastive_pre_mask", c.contrastive_pre_mask);
    get("pretrain_lr", c.pretrain_lr);
    get("finetune_lr", c.finetune_lr);
    get("scheduler_patience", c.scheduler_patience);
    get("scheduler_decay", c.scheduler_decay);
    get("batch_tiles", c.batch_tiles);
    get("pretrain_epochs", c.pretrain_epochs);
    get("finetune_epochs", c.finetune_epochs);
    get("early_stop", c.early_stop);
    get("label_fraction", c.label_fraction);
    get("modalities", c.modalities);
    get("index_bypass", c.index_bypass);
    get("fixed_unpool", c.fixed_unpool);
    get("date_filter", c.date_filter);
    get("date_fraction", c.date_fraction);
    get("positional", c.positional);
    get("seed", c.seed);
    c.validate();
    return c;
}

void require_same_architecture(const TrainConfig& stored, const TrainConfig& requested) {
    const bool same = stored.d == requested.d && stored.blocks == requested.blocks &&
                      stored.heads == requested.heads && stored.buckets == requested.buckets &&
                      stored.positional == requested.positional &&
                      stored.modalities == requested.modalities &&
                      stored.index_bypass == requested.index_bypass;
    if (!same)
        throw std::invalid_argument("config mismatch\n  checkpoint: " + config_to_json(stored) +
                                    "\n  requested:  " + config_to_json(requested));
}

}  // namespace omnifuse::train
