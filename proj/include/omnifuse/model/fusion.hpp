#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "omnifuse/core/rng.hpp"
#include "omnifuse/data/tokenizer.hpp"
#include "omnifuse/nn/graph.hpp"
#include "omnifuse/nn/params.hpp"

namespace omnifuse::model {

// Distance-bucketed attention bias. Bucket 0 holds same-position pairs;
// the remaining boundaries are geometric between one grid cell and the tile
// diagonal. Cross-tile pairs are not bucketed at all: they get a fixed
// -1e30 bias so attention never crosses tile boundaries.
template <typename T>
struct RelPosTable {
    int heads = 0;
    int n_buckets = 0;
    std::vector<double> edges;  // ascending; bucket b is the first with dist < edges[b]
    nn::Parameter<T> table;     // [heads, n_buckets]

    static constexpr double kCrossTileBias = -1e30;

    void init(int n_heads, int buckets, double cell_m, double diag_m, Rng& rng) {
        check(n_heads >= 1 && buckets >= 2, "relpos table: need at least one head and two buckets");
        check(cell_m > 0 && diag_m >= cell_m, "relpos table: bad cell or diagonal size");
        heads = n_heads;
        n_buckets = buckets;
        edges.resize(buckets - 1);
        edges[0] = cell_m * 0.5;
        for (int j = 1; j < buckets - 1; ++j)
            edges[j] = cell_m * std::pow(diag_m / cell_m,
                                         static_cast<double>(j - 1) / std::max(1, buckets - 3));
        table.init_normal({n_heads, buckets}, rng, 0.0, 0.02);
    }

    int bucket_of(double dist) const {
        for (int b = 0; b < n_buckets - 1; ++b)
            if (dist < edges[b]) return b;
        return n_buckets - 1;
    }
};

// Dense per-head bias over an arbitrary token set, laid out [heads][T][T].
// Within-tile pairs read the learned table; cross-tile pairs get -1e30.
template <typename T>
std::vector<T> relative_bias(const std::vector<std::pair<double, double>>& pos,
                             const std::vector<std::string>& tile_ids,
                             const RelPosTable<T>& table) {
    check(pos.size() == tile_ids.size(), "relative bias: pos/tile length mismatch");
    const std::int64_t t = static_cast<std::int64_t>(pos.size());
    std::vector<T> out(static_cast<std::size_t>(table.heads) * t * t);
    for (std::int64_t i = 0; i < t; ++i)
        for (std::int64_t j = 0; j < t; ++j) {
            if (tile_ids[i] != tile_ids[j]) {
                for (int h = 0; h < table.heads; ++h)
                    out[(static_cast<std::size_t>(h) * t + i) * t + j] =
                        static_cast<T>(RelPosTable<T>::kCrossTileBias);
                continue;
            }
            const double dx = pos[i].first - pos[j].first;
            const double dy = pos[i].second - pos[j].second;
            const int b = table.bucket_of(std::sqrt(dx * dx + dy * dy));
            for (int h = 0; h < table.heads; ++h)
                out[(static_cast<std::size_t>(h) * t + i) * t + j] =
                    table.table.value[static_cast<std::size_t>(h) * table.n_buckets + b];
        }
    return out;
}

enum class MaskStrategy { Random, Spatial, Modality };

inline const char* mask_strategy_str(MaskStrategy s) {
    switch (s) {
        case MaskStrategy::Random: return "random";
        case MaskStrategy::Spatial: return "spatial";
        case MaskStrategy::Modality: return "modality";
    }
    return "?";
}

inline MaskStrategy mask_strategy_from_str(const std::string& s) {
    if (s == "random") return MaskStrategy::Random;
    if (s == "spatial") return MaskStrategy::Spatial;
    if (s == "modality") return MaskStrategy::Modality;
    check(false, "unknown mask strategy '" + s + "'");
    return MaskStrategy::Random;
}

struct MaskSet {
    std::vector<std::uint8_t> masked;  // one byte per batch token
    std::vector<int> indices;          // masked token indices, ascending
};

namespace detail {
constexpr std::uint64_t kStreamMask = 0x3a5cULL;
}

// Selects which batch tokens the combiner sees as masked.
//  Random:   floor(ratio * T) tokens drawn without replacement over the batch.
//  Spatial:  per tile, floor(ratio * P) patches drawn; every modality's token
//            at those patches is masked.
//  Modality: per tile, one present modality drawn uniformly; all its tokens
//            are masked. ratio is ignored.
inline MaskSet mask_tokens(const data::TokenBatch& batch, double ratio, MaskStrategy strategy,
                           std::uint64_t seed) {
    check(ratio >= 0.0 && ratio < 1.0, "mask_tokens: ratio outside [0, 1)");
    const std::int64_t t = static_cast<std::int64_t>(batch.indices.size());
    MaskSet out;
    out.masked.assign(t, 0);
    if (strategy == MaskStrategy::Random) {
        Rng rng(Rng::derive(seed, {detail::kStreamMask, 0}));
        const std::int64_t k = static_cast<std::int64_t>(ratio * t);
        for (std::int64_t i : rng.sample_without_replacement(t, k)) out.masked[i] = 1;
    } else {
        // group token indices by tile, in first-appearance order
        std::vector<std::string> order;
        std::map<std::string, std::vector<int>> by_tile;
        for (std::int64_t i = 0; i < t; ++i) {
            const auto& id = batch.indices[i].tile_id;
            if (by_tile.find(id) == by_tile.end()) order.push_back(id);
            by_tile[id].push_back(static_cast<int>(i));
        }
        for (std::size_t ti = 0; ti < order.size(); ++ti) {
            const auto& toks = by_tile[order[ti]];
            if (strategy == MaskStrategy::Spatial) {
                std::vector<int> patches;
                for (int i : toks)
                    if (patches.empty() || patches.back() != batch.indices[i].patch)
                        patches.push_back(batch.indices[i].patch);
                std::sort(patches.begin(), patches.end());
                patches.erase(std::unique(patches.begin(), patches.end()), patches.end());
                const std::int64_t k =
                    static_cast<std::int64_t>(ratio * static_cast<double>(patches.size()));
                Rng rng(Rng::derive(seed, {detail::kStreamMask, 1, ti}));
                std::vector<std::uint8_t> hit(patches.size(), 0);
                for (std::int64_t j :
                     rng.sample_without_replacement(static_cast<std::int64_t>(patches.size()), k))
                    hit[j] = 1;
                for (int i : toks) {
                    const auto it = std::lower_bound(patches.begin(), patches.end(),
                                                     batch.indices[i].patch);
                    if (hit[static_cast<std::size_t>(it - patches.begin())]) out.masked[i] = 1;
                }
            } else {
                std::vector<std::string> mods;
                for (int i : toks) mods.push_back(batch.indices[i].modality);
                std::sort(mods.begin(), mods.end());
                mods.erase(std::unique(mods.begin(), mods.end()), mods.end());
                Rng rng(Rng::derive(seed, {detail::kStreamMask, 2, ti}));
                const auto& pick = mods[rng.uniform_int(0, static_cast<std::int64_t>(mods.size()) - 1)];
                for (int i : toks)
                    if (batch.indices[i].modality == pick) out.masked[i] = 1;
            }
        }
    }
    for (std::int64_t i = 0; i < t; ++i)
        if (out.masked[i]) out.indices.push_back(static_cast<int>(i));
    return out;
}

// Row layout of the combiner output: tiles in lexicographic id order, each
// tile contributing one row per distinct patch, patches ascending.
struct FusedLayout {
    struct TileRows {
        std::string tile_id;
        std::vector<int> patches;
        int row0 = 0;
    };
    std::vector<TileRows> tiles;
    int rows = 0;

    int row_of(const std::string& tile_id, int patch) const {
        for (const auto& t : tiles)
            if (t.tile_id == tile_id) {
                const auto it = std::lower_bound(t.patches.begin(), t.patches.end(), patch);
                check(it != t.patches.end() && *it == patch,
                      "fused layout: patch not present in tile " + tile_id);
                return t.row0 + static_cast<int>(it - t.patches.begin());
            }
        check(false, "fused layout: tile " + tile_id + " not present");
        return -1;
    }
};

template <typename T>
struct CombineResult {
    nn::Var<T> fused;  // [layout.rows, d]
    FusedLayout layout;
};

// Token combiner: per tile, B pre-norm residual self-attention blocks over
// the tile's tokens, then one cross-attention step where a learned combiner
// token, replicated per patch, queries the tile's tokens. Attention carries
// the distance-bucket bias unless absolute_pos is set, in which case learned
// per-patch embeddings are added to tokens and queries instead. Tokens
// flagged as masked are replaced by a learned substitute before any block
// runs, so their embeddings cannot leak through.
template <typename T>
struct Fusion {
    int d = 0;
    int heads = 0;
    int n_blocks = 0;
    int ff_mult = 4;
    bool absolute_pos = false;
    int max_patches = 0;

    nn::Parameter<T> mask_token;  // [1, d]
    nn::Parameter<T> comb_token;  // [1, d]
    nn::Parameter<T> abs_pos;     // [max_patches, d], absolute_pos mode only
    RelPosTable<T> relpos;

    struct Block {
        nn::Parameter<T> ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
        nn::Parameter<T> ln2_g, ln2_b, w1, b1, w2, b2;
    };
    std::vector<Block> blocks;
    nn::Parameter<T> wqx, bqx, wkx, bkx, wvx, bvx, wox, box;

    void init(int dim, int n_heads, int b, double cell_m, double diag_m, bool abs_mode,
              int max_patch_count, Rng& rng, int buckets = 16) {
        check(dim % n_heads == 0, "fusion: d must divide by heads");
        d = dim;
        heads = n_heads;
        n_blocks = b;
        absolute_pos = abs_mode;
        max_patches = max_patch_count;
        mask_token.init_normal({1, dim}, rng, 0.0, 0.02);
        comb_token.init_normal({1, dim}, rng, 0.0, 0.02);
        if (abs_mode) {
            check(max_patch_count > 0, "fusion: absolute mode needs max_patches");
            abs_pos.init_normal({max_patch_count, dim}, rng, 0.0, 0.02);
        }
        relpos.init(n_heads, buckets, cell_m, diag_m, rng);
        blocks.resize(b);
        for (auto& blk : blocks) {
            blk.ln1_g.init_const({dim}, T(1));
            blk.ln1_b.init_zeros({dim});
            blk.wq.init_glorot({dim, dim}, rng, dim, dim);
            blk.bq.init_zeros({dim});
            blk.wk.init_glorot({dim, dim}, rng, dim, dim);
            blk.bk.init_zeros({dim});
            blk.wv.init_glorot({dim, dim}, rng, dim, dim);
            blk.bv.init_zeros({dim});
            blk.wo.init_glorot({dim, dim}, rng, dim, dim);
            blk.bo.init_zeros({dim});
            blk.ln2_g.init_const({dim}, T(1));
            blk.ln2_b.init_zeros({dim});
            blk.w1.init_glorot({dim, ff_mult * dim}, rng, dim, ff_mult * dim);
            blk.b1.init_zeros({ff_mult * dim});
            blk.w2.init_glorot({ff_mult * dim, dim}, rng, ff_mult * dim, dim);
            blk.b2.init_zeros({dim});
        }
        wqx.init_glorot({dim, dim}, rng, dim, dim);
        bqx.init_zeros({dim});
        wkx.init_glorot({dim, dim}, rng, dim, dim);
        bkx.init_zeros({dim});
        wvx.init_glorot({dim, dim}, rng, dim, dim);
        bvx.init_zeros({dim});
        wox.init_glorot({dim, dim}, rng, dim, dim);
        box.init_zeros({dim});
    }

    void register_params(nn::ParamRegistry<T>& reg, const std::string& prefix) {
        reg.add(prefix + "/mask_token", mask_token);
        reg.add(prefix + "/comb_token", comb_token);
        if (absolute_pos) reg.add(prefix + "/abs_pos", abs_pos);
        else reg.add(prefix + "/relpos", relpos.table);
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            auto& b = blocks[i];
            const std::string p = prefix + "/block" + std::to_string(i);
            reg.add(p + "/ln1_g", b.ln1_g);
            reg.add(p + "/ln1_b", b.ln1_b);
            reg.add(p + "/wq", b.wq);
            reg.add(p + "/bq", b.bq);
            reg.add(p + "/wk", b.wk);
            reg.add(p + "/bk", b.bk);
            reg.add(p + "/wv", b.wv);
            reg.add(p + "/bv", b.bv);
            reg.add(p + "/wo", b.wo);
            reg.add(p + "/bo", b.bo);
            reg.add(p + "/ln2_g", b.ln2_g);
            reg.add(p + "/ln2_b", b.ln2_b);
            reg.add(p + "/w1", b.w1);
            reg.add(p + "/b1", b.b1);
            reg.add(p + "/w2", b.w2);
            reg.add(p + "/b2", b.b2);
        }
        reg.add(prefix + "/cross/wq", wqx);
        reg.add(prefix + "/cross/bq", bqx);
        reg.add(prefix + "/cross/wk", wkx);
        reg.add(prefix + "/cross/bk", bkx);
        reg.add(prefix + "/cross/wv", wvx);
        reg.add(prefix + "/cross/bv", bvx);
        reg.add(prefix + "/cross/wo", wox);
        reg.add(prefix + "/cross/bo", box);
    }

    CombineResult<T> combine(nn::Graph<T>& g, nn::Var<T> emb, const data::TokenBatch& batch,
                             const std::vector<std::uint8_t>* mask) {
        auto* self = this;
        const int t = static_cast<int>(batch.indices.size());
        check(t > 0, "combine: empty token batch");
        check(emb.shape() == Shape{t, d}, "combine: embedding shape does not match batch");
        if (mask) check(static_cast<int>(mask->size()) == t, "combine: mask length mismatch");

        nn::Var<T> x = substitute_masked(g, emb, mask, t, self);
        if (absolute_pos) {
            std::vector<int> patch_of(t);
            for (int i = 0; i < t; ++i) {
                patch_of[i] = batch.indices[i].patch;
                check(patch_of[i] < max_patches, "combine: patch index exceeds absolute table");
            }
            x = nn::add(g, x, nn::gather_rows(g, g.use(self->abs_pos), patch_of));
        }

        // group tokens by tile, lexicographic tile id
        std::map<std::string, std::vector<int>> by_tile;
        for (int i = 0; i < t; ++i) by_tile[batch.indices[i].tile_id].push_back(i);

        nn::Var<T> bias = absolute_pos ? nn::Var<T>{} : g.use(self->relpos.table);
        CombineResult<T> out;
        std::vector<nn::Var<T>> fused_parts;
        for (auto& [tile_id, toks] : by_tile) {
            const int tt = static_cast<int>(toks.size());
            nn::Var<T> xt = nn::gather_rows(g, x, toks);
            std::vector<std::pair<double, double>> tpos(tt);
            for (int i = 0; i < tt; ++i)
                tpos[i] = {batch.indices[toks[i]].pos_x_m, batch.indices[toks[i]].pos_y_m};

            std::vector<std::int32_t> bucket_self;
            if (!absolute_pos) {
                bucket_self.resize(static_cast<std::size_t>(tt) * tt);
                for (int i = 0; i < tt; ++i)
                    for (int j = 0; j < tt; ++j) {
                        const double dx = tpos[i].first - tpos[j].first;
                        const double dy = tpos[i].second - tpos[j].second;
                        bucket_self[static_cast<std::size_t>(i) * tt + j] =
                            relpos.bucket_of(std::sqrt(dx * dx + dy * dy));
                    }
            }
            for (auto& blk : blocks) {
                auto* b = &blk;
                nn::Var<T> a = nn::layer_norm(g, xt, g.use(b->ln1_g), g.use(b->ln1_b));
                nn::Var<T> q = nn::add_rowvec(g, nn::matmul(g, a, g.use(b->wq)), g.use(b->bq));
                nn::Var<T> k = nn::add_rowvec(g, nn::matmul(g, a, g.use(b->wk)), g.use(b->bk));
                nn::Var<T> v = nn::add_rowvec(g, nn::matmul(g, a, g.use(b->wv)), g.use(b->bv));
                nn::Var<T> ctx = nn::mha_tile(g, q, k, v, heads, bias,
                                              absolute_pos ? nullptr : &bucket_self);
                xt = nn::add(g, xt,
                             nn::add_rowvec(g, nn::matmul(g, ctx, g.use(b->wo)), g.use(b->bo)));
                nn::Var<T> f = nn::layer_norm(g, xt, g.use(b->ln2_g), g.use(b->ln2_b));
                nn::Var<T> ff = nn::gelu(g, nn::add_rowvec(g, nn::matmul(g, f, g.use(b->w1)),
                                                           g.use(b->b1)));
                xt = nn::add(g, xt,
                             nn::add_rowvec(g, nn::matmul(g, ff, g.use(b->w2)), g.use(b->b2)));
            }

            // distinct patches, ascending, with their centers
            std::vector<int> patches;
            std::vector<std::pair<double, double>> ppos;
            {
                std::map<int, std::pair<double, double>> seen;
                for (int i = 0; i < tt; ++i)
                    seen.emplace(batch.indices[toks[i]].patch, tpos[i]);
                for (auto& [p, c] : seen) {
                    patches.push_back(p);
                    ppos.push_back(c);
                }
            }
            const int np = static_cast<int>(patches.size());
            nn::Var<T> queries =
                nn::matmul(g, g.leaf({np, 1}, std::vector<T>(np, T(1))), g.use(self->comb_token));
            if (absolute_pos)
                queries = nn::add(g, queries, nn::gather_rows(g, g.use(self->abs_pos), patches));
            std::vector<std::int32_t> bucket_cross;
            if (!absolute_pos) {
                bucket_cross.resize(static_cast<std::size_t>(np) * tt);
                for (int i = 0; i < np; ++i)
                    for (int j = 0; j < tt; ++j) {
                        const double dx = ppos[i].first - tpos[j].first;
                        const double dy = ppos[i].second - tpos[j].second;
                        bucket_cross[static_cast<std::size_t>(i) * tt + j] =
                            relpos.bucket_of(std::sqrt(dx * dx + dy * dy));
                    }
            }
            nn::Var<T> qx = nn::add_rowvec(g, nn::matmul(g, queries, g.use(self->wqx)), g.use(self->bqx));
            nn::Var<T> kx = nn::add_rowvec(g, nn::matmul(g, xt, g.use(self->wkx)), g.use(self->bkx));
            nn::Var<T> vx = nn::add_rowvec(g, nn::matmul(g, xt, g.use(self->wvx)), g.use(self->bvx));
            nn::Var<T> ctx = nn::mha_tile(g, qx, kx, vx, heads, bias,
                                          absolute_pos ? nullptr : &bucket_cross);
            nn::Var<T> fstar = nn::add(
                g, queries, nn::add_rowvec(g, nn::matmul(g, ctx, g.use(self->wox)), g.use(self->box)));

            FusedLayout::TileRows tr;
            tr.tile_id = tile_id;
            tr.patches = patches;
            tr.row0 = out.layout.rows;
            out.layout.tiles.push_back(std::move(tr));
            out.layout.rows += np;
            fused_parts.push_back(fstar);
        }
        out.fused = fused_parts.size() == 1 ? fused_parts[0] : nn::concat_rows(g, fused_parts);
        return out;
    }

    // Exposed so objectives can be evaluated on the embeddings the combiner
    // actually sees (post-substitution) rather than the raw encoder outputs.
    static nn::Var<T> substitute_masked(nn::Graph<T>& g, nn::Var<T> emb,
                                        const std::vector<std::uint8_t>* mask, int t,
                                        Fusion<T>* self) {
        if (!mask) return emb;
        std::vector<int> keep, drop;
        for (int i = 0; i < t; ++i) ((*mask)[i] ? drop : keep).push_back(i);
        if (drop.empty()) return emb;
        nn::Var<T> subs = nn::matmul(
            g, g.leaf({static_cast<int>(drop.size()), 1}, std::vector<T>(drop.size(), T(1))),
            g.use(self->mask_token));
        if (keep.empty()) return subs;
        nn::Var<T> kept = nn::gather_rows(g, emb, keep);
        nn::Var<T> cat = nn::concat_rows(g, {kept, subs});
        std::vector<int> order(t);
        for (std::size_t p = 0; p < keep.size(); ++p) order[keep[p]] = static_cast<int>(p);
        for (std::size_t p = 0; p < drop.size(); ++p)
            order[drop[p]] = static_cast<int>(keep.size() + p);
        return nn::gather_rows(g, cat, order);
    }
};

}  // namespace omnifuse::model
