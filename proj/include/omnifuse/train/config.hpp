#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace omnifuse::train {

// Everything a run needs to be reproducible: architecture sizes, objective
// knobs, optimization schedule, and the ablation switches. Structural fields
// (d, blocks, heads, buckets, positional, modalities, index_bypass) are baked
// into checkpoints and must match when resuming.
struct TrainConfig {
    int d = 256;
    int blocks = 6;
    int heads = 8;
    int buckets = 16;

    double gamma = 0.1;
    double mask_ratio = 0.5;
    std::string mask_strategy = "random";  // random | spatial | modality
    std::string contrastive = "full";      // off | naive | full
    bool reconstruction = true;
    // Contrastive embeddings are taken before mask substitution by default;
    // flipping this evaluates the loss on what the combiner actually sees.
    bool contrastive_pre_mask = true;

    double pretrain_lr = 1e-4;
    double finetune_lr = 2e-5;
    int scheduler_patience = 10;
    double scheduler_decay = 0.1;
    int batch_tiles = 128;
    int pretrain_epochs = 100;
    int finetune_epochs = 50;
    int early_stop = 30;
    double label_fraction = 1.0;

    // Modalities the model is built for; empty means every manifest modality.
    std::vector<std::string> modalities;

    bool index_bypass = true;
    bool fixed_unpool = false;  // masked image decode unpools to top-left
    bool date_filter = true;
    double date_fraction = 0.25;
    std::string positional = "relative";  // relative | absolute

    std::uint64_t seed = 1;

    void validate() const;
};

std::string config_to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const std::string& text);

// Structural comparison used when a run supplies its own config alongside a
// checkpoint; throws with both configs spelled out on any mismatch.
void require_same_architecture(const TrainConfig& stored, const TrainConfig& requested);

}  // namespace omnifuse::train
