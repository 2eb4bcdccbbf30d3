#pragma once

#include <limits>
#include <memory>
#include <string>

#include "omnifuse/train/model.hpp"

namespace omnifuse::train {

// Optimizer/scheduler position of a run, enough to continue it bit-exactly:
// `epoch` is the next epoch to execute, the rest mirrors Adam and the
// plateau scheduler at the moment of saving.
struct TrainState {
    int epoch = 0;
    std::int64_t adam_t = 0;
    double lr = 0;
    double sched_best = std::numeric_limits<double>::infinity();
    int sched_bad = 0;
    int stall = 0;  // epochs since the last validation improvement
};

// Container layout: "OMNF" magic, little-endian u32 version, u32 header
// length, JSON header (config, model geometry, train state, tensor
// directory), then raw little-endian f32 payloads. Every parameter stores
// value plus both Adam moments, so a resumed run continues exactly.
void save_checkpoint(const OmniModel<float>& model, const TrainState& state,
                     const std::string& path);

struct LoadedCheckpoint {
    std::unique_ptr<OmniModel<float>> model;
    TrainState state;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace omnifuse::train
