#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "omnifuse/data/tokenizer.hpp"
#include "omnifuse/data/types.hpp"
#include "omnifuse/model/fusion.hpp"
#include "omnifuse/model/image_codec.hpp"
#include "omnifuse/model/temporal_codec.hpp"
#include "omnifuse/train/config.hpp"

namespace omnifuse::train {

// Token-space description of one modality, fixed at model build time and
// carried in checkpoints so a model can be rebuilt without data. `channels`
// is the effective token channel count (sub-cell rasters fold into it).
struct ModalityShape {
    std::string name;
    data::ModalityKind kind = data::ModalityKind::Image;
    int channels = 0;
    int side = 0;     // image patch side, px
    int max_len = 0;  // time series length bound
};

// Pool factors for a patch side: its prime factorization with the largest
// factors first, e.g. 50 -> (5, 5, 2) and 8 -> (2, 2, 2). Each stage must
// divide the running side, so only {2, 3, 5} primes are representable.
inline std::vector<int> pool_schedule_for(int side) {
    check(side > 1, "pool schedule: patch side must exceed 1");
    std::vector<int> out;
    int w = side;
    for (int f : {5, 3, 2})
        while (w % f == 0) {
            out.push_back(f);
            w /= f;
        }
    check(w == 1, "pool schedule: patch side " + std::to_string(side) +
                      " has a prime factor above 5");
    return out;
}

// Reads the effective token geometry for each chosen modality off a sample
// batch; every chosen modality must appear in it.
inline std::vector<ModalityShape> modality_shapes(const data::DatasetManifest& manifest,
                                                  const std::vector<std::string>& chosen,
                                                  const data::TokenBatch& sample) {
    std::vector<std::string> names = chosen;
    if (names.empty())
        for (const auto& s : manifest.modalities) names.push_back(s.name);
    std::vector<ModalityShape> out;
    for (const auto& name : names) {
        const auto& spec = manifest.modality(name);
        ModalityShape ms;
        ms.name = name;
        ms.kind = spec.kind;
        int seen = -1;
        for (int i = 0; i < sample.size(); ++i) {
            if (sample.indices[i].modality != name) continue;
            const auto& r = sample.raw[i];
            if (spec.kind == data::ModalityKind::Image) {
                check(r.shape.size() == 3, "modality shapes: bad image token rank");
                ms.channels = r.shape[0];
                ms.side = r.shape[1];
            } else {
                check(r.shape.size() == 2, "modality shapes: bad series token rank");
                ms.channels = r.shape[0];
                ms.max_len = std::max(ms.max_len, r.shape[1]);
            }
            seen = i;
        }
        check(seen >= 0, "modality shapes: sample batch has no " + name + " tokens");
        out.push_back(ms);
    }
    return out;
}

// The full trainable model: one codec per modality, the token combiner, and
// a linear classification head. Parameters are reachable through `reg` in a
// fixed registration order. Not movable: the registry points into members.
template <typename T>
struct OmniModel {
    TrainConfig cfg;
    std::vector<ModalityShape> mods;
    int n_classes = 0;
    int gx = 0, gy = 0;
    double cell_m = 0;

    std::vector<model::ImageCodec<T>> image_codecs;
    std::vector<model::TemporalCodec<T>> temporal_codecs;
    std::vector<int> codec_slot;  // per modality: index into its kind's vector
    model::Fusion<T> fusion;
    nn::Parameter<T> head_w, head_b;
    nn::ParamRegistry<T> reg;

    OmniModel() = default;
    OmniModel(const OmniModel&) = delete;
    OmniModel& operator=(const OmniModel&) = delete;

    void init(const TrainConfig& c, std::vector<ModalityShape> shapes, int classes, int grid_x,
              int grid_y, double cell) {
        c.validate();
        check(classes > 0, "model: class count must be positive");
        check(grid_x > 0 && grid_y > 0, "model: grid dims must be positive");
        check(cell > 0, "model: cell size must be positive");
        check(!shapes.empty(), "model: no modalities");
        cfg = c;
        mods = std::move(shapes);
        n_classes = classes;
        gx = grid_x;
        gy = grid_y;
        cell_m = cell;

        image_codecs.clear();
        temporal_codecs.clear();
        codec_slot.assign(mods.size(), -1);
        int n_img = 0, n_ts = 0;
        for (const auto& m : mods)
            (m.kind == data::ModalityKind::Image ? n_img : n_ts) += 1;
        image_codecs.reserve(n_img);
        temporal_codecs.reserve(n_ts);

        for (std::size_t i = 0; i < mods.size(); ++i) {
            Rng rng = Rng::derive(cfg.seed, {kInitStream, static_cast<std::uint64_t>(i)});
            if (mods[i].kind == data::ModalityKind::Image) {
                model::ImageCodec<T> codec;
                codec.init(mods[i].channels, mods[i].side, cfg.d, pool_schedule_for(mods[i].side),
                           rng);
                // both switches route masked unpooling away from the traced
                // argmax positions; pretraining only ever decodes masked
                // tokens, so they coincide at runtime
                codec.index_bypass = cfg.index_bypass && !cfg.fixed_unpool;
                codec_slot[i] = static_cast<int>(image_codecs.size());
                image_codecs.push_back(std::move(codec));
            } else {
                model::TemporalCodec<T> codec;
                codec.init(mods[i].channels, cfg.d, cfg.heads, rng);
                codec_slot[i] = static_cast<int>(temporal_codecs.size());
                temporal_codecs.push_back(std::move(codec));
            }
        }

        Rng frng = Rng::derive(cfg.seed, {kInitStream, 0x1000});
        const double diag = std::hypot(gx * cell_m, gy * cell_m);
        fusion.init(cfg.d, cfg.heads, cfg.blocks, cell_m, diag, cfg.positional == "absolute",
                    gx * gy, frng, cfg.buckets);

        Rng hrng = Rng::derive(cfg.seed, {kInitStream, 0x2000});
        head_w.init_glorot({cfg.d, n_classes}, hrng, cfg.d, n_classes);
        head_b.init_zeros({n_classes});

        register_all();
    }

    void register_all() {
        reg = nn::ParamRegistry<T>();
        for (std::size_t i = 0; i < mods.size(); ++i) {
            const std::string prefix = "codec/" + mods[i].name;
            if (mods[i].kind == data::ModalityKind::Image)
                image_codecs[codec_slot[i]].register_params(reg, prefix);
            else
                temporal_codecs[codec_slot[i]].register_params(reg, prefix);
        }
        fusion.register_params(reg, "fusion");
        reg.add("head/w", head_w);
        reg.add("head/b", head_b);
    }

    int modality_index(const std::string& name) const {
        for (std::size_t i = 0; i < mods.size(); ++i)
            if (mods[i].name == name) return static_cast<int>(i);
        check(false, "model: unknown modality " + name);
        return -1;
    }

    model::ImageCodec<T>& image_codec(int mod) { return image_codecs[codec_slot[mod]]; }
    model::TemporalCodec<T>& temporal_codec(int mod) { return temporal_codecs[codec_slot[mod]]; }

    // Marks every non-head parameter frozen (or unfreezes everything).
    void freeze_backbone(bool frozen) {
        for (auto* p : reg.items())
            p->trainable = !frozen || p->name.rfind("head/", 0) == 0;
    }

    static constexpr std::uint64_t kInitStream = 0x6f6d6e69;
};

}  // namespace omnifuse::train
