#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "omnifuse/core/rng.hpp"
#include "omnifuse/data/tokenizer.hpp"
#include "omnifuse/nn/graph.hpp"
#include "omnifuse/nn/params.hpp"

namespace omnifuse::model {

// Head-averaged attention weights over a token's acquisition dates. Valid
// entries sum to 1; padded entries are exactly 0.
template <typename T>
struct AttentionTrace {
    std::vector<T> w;
};

// Sinusoidal encoding of a day-of-year. Pairs (sin, cos) over dim/2
// frequencies with periods geometric between 2 and 2*365, so nearby days get
// nearby encodings and the norm is sqrt(dim/2) regardless of the day.
template <typename T>
void day_encoding(int day, int dim, T* out) {
    check(dim >= 2 && dim % 2 == 0, "day encoding: dim must be even and at least 2");
    check(day >= 1 && day <= 365, "day encoding: day " + std::to_string(day) + " outside [1, 365]");
    const int pairs = dim / 2;
    for (int j = 0; j < pairs; ++j) {
        const double t = pairs == 1 ? 1.0 : static_cast<double>(j) / (pairs - 1);
        const double period = 2.0 * std::pow(365.0, t);
        const double a = 2.0 * M_PI * day / period;
        out[2 * j] = static_cast<T>(std::sin(a));
        out[2 * j + 1] = static_cast<T>(std::cos(a));
    }
}

// Picks the max(1, ceil(fraction * L)) dates with the largest attention
// weights among the L valid ones; ties take the lower index. Returns indices
// ascending.
inline std::vector<int> select_reconstruction_dates(const std::vector<double>& trace,
                                                    const std::vector<std::uint8_t>& valid,
                                                    double fraction) {
    check(trace.size() == valid.size(), "date selection: trace/valid length mismatch");
    std::vector<int> idx;
    for (std::size_t i = 0; i < valid.size(); ++i)
        if (valid[i]) idx.push_back(static_cast<int>(i));
    check(!idx.empty(), "date selection: no valid dates");
    const int k = std::max<int>(1, static_cast<int>(std::ceil(fraction * idx.size())));
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return trace[a] > trace[b]; });
    idx.resize(std::min<std::size_t>(idx.size(), static_cast<std::size_t>(k)));
    std::sort(idx.begin(), idx.end());
    return idx;
}

// Lightweight temporal attention codec. Each date's channel vector is
// projected to width d and tagged with its day encoding; a learned master
// query attends over the dates (keys are a linear map, values are the tagged
// projections with channels grouped across heads) and an MLP maps the
// attended context to the embedding. The decoder reverses the path date by
// date: embedding plus day encoding through an MLP back to channel space.
template <typename T>
struct TemporalCodec {
    int in_channels = 0;
    int d = 0;
    int heads = 0;

    nn::Parameter<T> w_in, b_in;    // [C, d], [d]
    nn::Parameter<T> w_k;           // [d, d]
    nn::Parameter<T> query;         // [1, d]
    nn::Parameter<T> w_m1, b_m1;    // [d, d], [d]
    nn::Parameter<T> w_m2, b_m2;    // [d, d], [d]
    nn::Parameter<T> w_d1, b_d1;    // [d, d], [d]
    nn::Parameter<T> w_d2, b_d2;    // [d, C], [C]

    void init(int channels, int dim, int n_heads, Rng& rng) {
        check(dim % n_heads == 0, "temporal codec: d must divide by heads");
        in_channels = channels;
        d = dim;
        heads = n_heads;
        w_in.init_glorot({channels, dim}, rng, channels, dim);
        b_in.init_zeros({dim});
        w_k.init_glorot({dim, dim}, rng, dim, dim);
        query.init_normal({1, dim}, rng, 0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
        w_m1.init_glorot({dim, dim}, rng, dim, dim);
        b_m1.init_zeros({dim});
        w_m2.init_glorot({dim, dim}, rng, dim, dim);
        b_m2.init_zeros({dim});
        w_d1.init_glorot({dim, dim}, rng, dim, dim);
        b_d1.init_zeros({dim});
        w_d2.init_glorot({dim, channels}, rng, dim, channels);
        b_d2.init_zeros({channels});
    }

    void register_params(nn::ParamRegistry<T>& reg, const std::string& prefix) {
        reg.add(prefix + "/w_in", w_in);
        reg.add(prefix + "/b_in", b_in);
        reg.add(prefix + "/w_k", w_k);
        reg.add(prefix + "/query", query);
        reg.add(prefix + "/w_m1", w_m1);
        reg.add(prefix + "/b_m1", b_m1);
        reg.add(prefix + "/w_m2", w_m2);
        reg.add(prefix + "/b_m2", b_m2);
        reg.add(prefix + "/w_d1", w_d1);
        reg.add(prefix + "/b_d1", b_d1);
        reg.add(prefix + "/w_d2", w_d2);
        reg.add(prefix + "/b_d2", b_d2);
    }

    // tokens -> [N, d]. Sequences are padded to the longest length in the
    // batch; padded rows are excluded from attention, so the result for each
    // token depends only on its own dates.
    nn::Var<T> encode(nn::Graph<T>& g, const std::vector<const data::TokenRaw*>& tokens,
                      std::vector<AttentionTrace<T>>* traces) {
        const int n = static_cast<int>(tokens.size());
        check(n > 0, "temporal encode: empty token list");
        int l_max = 0;
        for (const auto* t : tokens) {
            check(t->shape.size() == 2 && t->shape[0] == in_channels,
                  "temporal encode: bad token shape " + shape_str(t->shape));
            check(t->shape[1] == static_cast<int>(t->days.size()),
                  "temporal encode: days/length mismatch");
            l_max = std::max(l_max, t->shape[1]);
        }
        std::vector<T> x(static_cast<std::size_t>(n) * l_max * in_channels, T(0));
        std::vector<T> enc(static_cast<std::size_t>(n) * l_max * d, T(0));
        std::vector<std::uint8_t> valid(static_cast<std::size_t>(n) * l_max, 0);
        for (int i = 0; i < n; ++i) {
            const auto* t = tokens[i];
            const int l = t->shape[1];
            for (int s = 0; s < l; ++s) {
                const std::size_t row = static_cast<std::size_t>(i) * l_max + s;
                for (int c = 0; c < in_channels; ++c)
                    x[row * in_channels + c] = static_cast<T>(t->v[static_cast<std::size_t>(c) * l + s]);
                day_encoding<T>(t->days[s], d, enc.data() + row * d);
                valid[row] = 1;
            }
        }
        nn::Var<T> xs = g.leaf({n * l_max, in_channels}, x);
        nn::Var<T> de = g.leaf({n * l_max, d}, enc);
        nn::Var<T> e = nn::add(g, nn::add_rowvec(g, nn::matmul(g, xs, g.use(w_in)),
                                                 g.use(b_in)),
                               de);
        nn::Var<T> k = nn::matmul(g, e, g.use(w_k));
        std::vector<T> attn;
        nn::Var<T> ctx = nn::set_attention(g, k, e, g.use(query), heads,
                                           n, l_max, valid, traces ? &attn : nullptr);
        if (traces) {
            traces->assign(n, {});
            for (int i = 0; i < n; ++i) {
                const int l = tokens[i]->shape[1];
                (*traces)[i].w.assign(attn.begin() + static_cast<std::size_t>(i) * l_max,
                                      attn.begin() + static_cast<std::size_t>(i) * l_max + l);
            }
        }
        nn::Var<T> h = nn::gelu(g, nn::add_rowvec(g, nn::matmul(g, ctx, g.use(w_m1)),
                                                  g.use(b_m1)));
        return nn::add_rowvec(g, nn::matmul(g, h, g.use(w_m2)),
                              g.use(b_m2));
    }

    // Single-series entry point with an explicit validity mask. Invalid
    // dates are dropped before encoding (they would get zero attention
    // anyway); the returned trace has zeros at their slots.
    nn::Var<T> encode_masked(nn::Graph<T>& g, const data::TokenRaw& tok,
                             const std::vector<std::uint8_t>& valid, AttentionTrace<T>* trace) {
        check(tok.shape.size() == 2 && valid.size() == static_cast<std::size_t>(tok.shape[1]),
              "temporal encode: valid mask length mismatch");
        const int l = tok.shape[1];
        data::TokenRaw kept;
        std::vector<int> slots;
        for (int s = 0; s < l; ++s)
            if (valid[s]) {
                slots.push_back(s);
                kept.days.push_back(tok.days[s]);
            }
        check(!slots.empty(), "temporal encode: no valid dates");
        kept.shape = {tok.shape[0], static_cast<int>(slots.size())};
        kept.v.resize(static_cast<std::size_t>(tok.shape[0]) * slots.size());
        for (int c = 0; c < tok.shape[0]; ++c)
            for (std::size_t s = 0; s < slots.size(); ++s)
                kept.v[c * slots.size() + s] = tok.v[static_cast<std::size_t>(c) * l + slots[s]];
        std::vector<AttentionTrace<T>> traces;
        nn::Var<T> emb = encode(g, {&kept}, trace ? &traces : nullptr);
        if (trace) {
            trace->w.assign(l, T(0));
            for (std::size_t s = 0; s < slots.size(); ++s) trace->w[slots[s]] = traces[0].w[s];
        }
        return emb;
    }

    // emb [n, d] plus per-row day lists -> [sum_i |days_i|, C], rows grouped
    // by embedding row, dates in the given order.
    nn::Var<T> decode(nn::Graph<T>& g, nn::Var<T> emb, const std::vector<std::vector<int>>& days) {
        const int n = emb.shape().at(0);
        check(static_cast<int>(days.size()) == n, "temporal decode: day list count mismatch");
        check(emb.shape() == Shape{n, d}, "temporal decode: bad embedding shape");
        std::int64_t rows = 0;
        for (const auto& ds : days) {
            check(!ds.empty(), "temporal decode: empty day list");
            rows += static_cast<std::int64_t>(ds.size());
        }
        std::vector<T> rep(static_cast<std::size_t>(rows) * n, T(0));
        std::vector<T> enc(static_cast<std::size_t>(rows) * d, T(0));
        std::int64_t r = 0;
        for (int i = 0; i < n; ++i)
            for (int day : days[i]) {
                rep[static_cast<std::size_t>(r) * n + i] = T(1);
                day_encoding<T>(day, d, enc.data() + static_cast<std::size_t>(r) * d);
                ++r;
            }
        nn::Var<T> base = nn::add(g, nn::matmul(g, g.leaf({static_cast<int>(rows), n}, rep), emb),
                                  g.leaf({static_cast<int>(rows), d}, enc));
        nn::Var<T> h = nn::gelu(g, nn::add_rowvec(g, nn::matmul(g, base, g.use(w_d1)),
                                                  g.use(b_d1)));
        return nn::add_rowvec(g, nn::matmul(g, h, g.use(w_d2)),
                              g.use(b_d2));
    }
};

}  // namespace omnifuse::model
