#pragma once

#include <memory>
#include <string>
#include <vector>

#include "omnifuse/data/dataset.hpp"
#include "omnifuse/train/checkpoint.hpp"
#include "omnifuse/train/metrics.hpp"
#include "omnifuse/train/optim.hpp"
#include "omnifuse/train/pipeline.hpp"

namespace omnifuse::train {

struct FitOptions {
    std::string checkpoint_path;  // best-so-far snapshot; empty disables saving
    std::string metrics_path;     // JSON-lines log; empty disables
    TrainState resume;            // continue from a checkpoint's state
    bool verbose = false;         // one stderr line per epoch
};

struct FitResult {
    TrainState state;
    std::vector<EpochMetrics> history;
    int rejected_steps = 0;
};

struct EvalResult {
    double bce = 0;
    F1Counts counts;
};

// Builds a model for a dataset: token geometry comes from tokenizing one
// sample tile, the class count from the label vocabulary, the grid from the
// tile itself. cfg.modalities is resolved to explicit names.
std::unique_ptr<OmniModel<float>> build_model(const TrainConfig& cfg, data::TileAccessor data);

// Deterministic labeled subset of a split: floor(fraction * n) ids drawn by
// seeded shuffle; throws when that comes out empty. fraction 1 keeps the
// split as is.
std::vector<std::string> label_subset(const std::vector<std::string>& ids, double fraction,
                                      std::uint64_t seed);

// Self-supervised training on the train split; the val split drives the
// plateau scheduler, checkpointing and early stopping. Labels stay sealed:
// the accessor is put in pretrain mode, so any label read throws.
FitResult pretrain(OmniModel<float>& model, data::TileAccessor data, const FitOptions& opt);

// Supervised training of the classification head (and, unless head_only,
// every other parameter) at finetune_lr on the labeled fraction of the train
// split. No masking; modality_subset (empty = all model modalities) selects
// which tokens are fed. On return the model holds the best-validation
// parameters seen.
FitResult finetune(OmniModel<float>& model, data::TileAccessor data,
                   const std::vector<std::string>& modality_subset, const FitOptions& opt,
                   bool head_only = false);

inline FitResult linear_probe(OmniModel<float>& model, data::TileAccessor data,
                              const std::vector<std::string>& modality_subset,
                              const FitOptions& opt) {
    return finetune(model, std::move(data), modality_subset, opt, true);
}

// Thresholded (sigmoid 0.5) multilabel evaluation over a split.
EvalResult evaluate(OmniModel<float>& model, data::TileAccessor data, const std::string& split,
                    const std::vector<std::string>& modality_subset);

}  // namespace omnifuse::train
