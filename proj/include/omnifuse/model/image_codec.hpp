#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "omnifuse/core/rng.hpp"
#include "omnifuse/nn/graph.hpp"
#include "omnifuse/nn/params.hpp"

namespace omnifuse::model {

// Argmax maps recorded by the encoder's pooling stages, consumed by the
// decoder's unpooling. Shapes are the pooled outputs {N, C, h, w}; indices
// are offsets within each pooling cell.
struct PoolTrace {
    std::vector<std::vector<std::int32_t>> stage_indices;
    std::vector<Shape> stage_shapes;

    // Extracts the rows for a token subset (n-axis selection).
    PoolTrace subset(const std::vector<int>& rows) const {
        PoolTrace out;
        for (std::size_t s = 0; s < stage_indices.size(); ++s) {
            const Shape& sh = stage_shapes[s];
            const std::int64_t per = numel(sh) / sh[0];
            Shape nsh = sh;
            nsh[0] = static_cast<int>(rows.size());
            std::vector<std::int32_t> idx(static_cast<std::size_t>(per) * rows.size());
            for (std::size_t r = 0; r < rows.size(); ++r)
                std::copy(stage_indices[s].begin() + rows[r] * per,
                          stage_indices[s].begin() + (rows[r] + 1) * per,
                          idx.begin() + static_cast<std::int64_t>(r) * per);
            out.stage_indices.push_back(std::move(idx));
            out.stage_shapes.push_back(std::move(nsh));
        }
        return out;
    }
};

// Convolutional patch codec: conv(3x3) -> activation -> max-pool stages until
// the spatial extent collapses to 1x1 at channel width d, mirrored by
// unpool -> conv stages on the way back. Pooling argmax positions bypass to
// the decoder unless the bypass is disabled, in which case values unpool to
// the top-left of each cell.
template <typename T>
struct ImageCodec {
    int in_channels = 0;
    int patch_px = 0;
    int d = 0;
    std::vector<int> pool_schedule;
    bool index_bypass = true;
    bool linear = false;  // identity activations, for hand-built oracle tests

    struct Stage {
        nn::Parameter<T> w, b;
    };
    std::vector<Stage> enc, dec;
    std::vector<int> widths;  // channel width after each encoder stage

    void init(int channels, int side, int dim, std::vector<int> schedule, Rng& rng) {
        in_channels = channels;
        patch_px = side;
        d = dim;
        pool_schedule = std::move(schedule);
        int prod = 1;
        for (int f : pool_schedule) {
            check(f >= 2, "image codec: pool factors must be at least 2");
            prod *= f;
        }
        check(prod == patch_px,
              "image codec: pool schedule does not collapse patch side " + std::to_string(patch_px));
        const int s = static_cast<int>(pool_schedule.size());
        widths.resize(s);
        for (int i = 0; i < s; ++i) {
            // geometric ramp from in_channels to d
            const double w = channels * std::pow(static_cast<double>(dim) / channels,
                                                 static_cast<double>(i + 1) / s);
            widths[i] = i == s - 1 ? dim : std::max(1, static_cast<int>(std::lround(w)));
        }
        enc.resize(s);
        dec.resize(s);
        for (int i = 0; i < s; ++i) {
            const int cin = i == 0 ? channels : widths[i - 1];
            const int cout = widths[i];
            enc[i].w.init_glorot({cout, cin, 3, 3}, rng, cin * 9, cout * 9);
            enc[i].b.init_zeros({cout});
            // decoder stage i mirrors encoder stage i: cout -> cin
            dec[i].w.init_glorot({cin, cout, 3, 3}, rng, cout * 9, cin * 9);
            dec[i].b.init_zeros({cin});
        }
    }

    void register_params(nn::ParamRegistry<T>& reg, const std::string& prefix) {
        for (std::size_t i = 0; i < enc.size(); ++i) {
            reg.add(prefix + "/enc" + std::to_string(i) + "/w", enc[i].w);
            reg.add(prefix + "/enc" + std::to_string(i) + "/b", enc[i].b);
        }
        for (std::size_t i = 0; i < dec.size(); ++i) {
            reg.add(prefix + "/dec" + std::to_string(i) + "/w", dec[i].w);
            reg.add(prefix + "/dec" + std::to_string(i) + "/b", dec[i].b);
        }
    }

    // x [N, C, W, W] -> [N, d]; when trace is non-null it receives the
    // pooling argmax maps for the batch.
    nn::Var<T> encode(nn::Graph<T>& g, nn::Var<T> x, PoolTrace* trace) {
        check(x.shape().size() == 4 && x.shape()[1] == in_channels && x.shape()[2] == patch_px &&
                  x.shape()[3] == patch_px,
              "image codec encode: bad input shape " + shape_str(x.shape()));
        if (trace) {
            trace->stage_indices.clear();
            trace->stage_shapes.clear();
        }
        nn::Var<T> h = x;
        for (std::size_t i = 0; i < enc.size(); ++i) {
            h = nn::conv2d(g, h, g.use(enc[i].w),
                           g.use(enc[i].b));
            if (!linear) h = nn::gelu(g, h);
            std::vector<std::int32_t> idx;
            h = nn::maxpool2d(g, h, pool_schedule[i], trace ? &idx : nullptr);
            if (trace) {
                trace->stage_indices.push_back(std::move(idx));
                trace->stage_shapes.push_back(h.shape());
            }
        }
        return nn::reshape(g, h, {h.shape()[0], d});
    }

    // emb [N, d] -> [N, C, W, W]. The trace must cover exactly these N rows
    // (use PoolTrace::subset for masked-token decoding).
    nn::Var<T> decode(nn::Graph<T>& g, nn::Var<T> emb, const PoolTrace& trace) {
        const int n = emb.shape().at(0);
        check(emb.shape() == Shape{n, d}, "image codec decode: bad embedding shape");
        check(trace.stage_shapes.size() == enc.size(), "image codec decode: trace stage count mismatch");
        for (std::size_t i = 0; i < enc.size(); ++i)
            check(trace.stage_shapes[i][0] == n, "image codec decode: trace rows mismatch");
        nn::Var<T> h = nn::reshape(g, emb, {n, d, 1, 1});
        for (int i = static_cast<int>(dec.size()) - 1; i >= 0; --i) {
            h = nn::maxunpool2d(g, h, pool_schedule[i], index_bypass ? &trace.stage_indices[i] : nullptr);
            h = nn::conv2d(g, h, g.use(dec[i].w),
                           g.use(dec[i].b));
            if (!linear && i > 0) h = nn::gelu(g, h);
        }
        return h;
    }
};

}  // namespace omnifuse::model
