#pragma once

#include <string>
#include <vector>

#include "omnifuse/model/objectives.hpp"
#include "omnifuse/train/model.hpp"

namespace omnifuse::train {

// Encoder pass over one token batch. `rows[m]` lists the batch token ids fed
// to modality m's codec, in codec-batch order; traces line up with it.
template <typename T>
struct EncodedBatch {
    nn::Var<T> emb;  // [t, d] in batch token order
    std::vector<std::vector<int>> rows;
    std::vector<model::PoolTrace> pool;                      // image modalities
    std::vector<std::vector<model::AttentionTrace<T>>> att;  // series modalities
};

template <typename T>
EncodedBatch<T> encode_all(nn::Graph<T>& g, OmniModel<T>& m, const data::TokenBatch& batch,
                           bool want_traces) {
    const int t = batch.size();
    check(t > 0, "encode: empty batch");
    EncodedBatch<T> out;
    out.rows.resize(m.mods.size());
    out.pool.resize(m.mods.size());
    out.att.resize(m.mods.size());

    for (int i = 0; i < t; ++i) {
        const int mi = m.modality_index(batch.indices[i].modality);
        out.rows[static_cast<std::size_t>(mi)].push_back(i);
    }

    std::vector<nn::Var<T>> parts;
    std::vector<int> concat_pos(t, -1);
    int base = 0;
    for (std::size_t mi = 0; mi < m.mods.size(); ++mi) {
        const auto& ids = out.rows[mi];
        if (ids.empty()) continue;
        const int n = static_cast<int>(ids.size());
        nn::Var<T> emb;
        if (m.mods[mi].kind == data::ModalityKind::Image) {
            const int c = m.mods[mi].channels, w = m.mods[mi].side;
            std::vector<T> x;
            x.reserve(static_cast<std::size_t>(n) * c * w * w);
            for (int id : ids) {
                const auto& r = batch.raw[id];
                check(r.shape == Shape{c, w, w},
                      "encode: " + m.mods[mi].name + " token shape " + shape_str(r.shape));
                for (float v : r.v) x.push_back(static_cast<T>(v));
            }
            emb = m.image_codec(static_cast<int>(mi))
                      .encode(g, g.leaf({n, c, w, w}, x), want_traces ? &out.pool[mi] : nullptr);
        } else {
            std::vector<const data::TokenRaw*> toks;
            toks.reserve(ids.size());
            for (int id : ids) toks.push_back(&batch.raw[id]);
            emb = m.temporal_codec(static_cast<int>(mi))
                      .encode(g, toks, want_traces ? &out.att[mi] : nullptr);
        }
        parts.push_back(emb);
        for (int j = 0; j < n; ++j) concat_pos[ids[j]] = base + j;
        base += n;
    }
    check(base == t, "encode: token/modality bookkeeping out of sync");

    nn::Var<T> cat = parts.size() == 1 ? parts[0] : nn::concat_rows(g, parts);
    out.emb = nn::gather_rows(g, cat, concat_pos);
    return out;
}

template <typename T>
struct PretrainLoss {
    nn::Var<T> total, con, mae;
    int masked = 0;
};

// One pretraining objective evaluation: contrastive term over the encoder
// embeddings, then mask, combine, and reconstruct the masked tokens from the
// fused ones. Images reuse the pooling trace of the unmasked encoder run
// (integer indices, so no gradient flows back through that path); series
// tokens reconstruct only their attention-selected dates when the date
// filter is on.
template <typename T>
PretrainLoss<T> build_pretrain_loss(nn::Graph<T>& g, OmniModel<T>& m,
                                    const data::TokenBatch& batch, std::uint64_t mask_seed) {
    const TrainConfig& c = m.cfg;
    const bool recon = c.reconstruction;
    EncodedBatch<T> enc = encode_all(g, m, batch, recon);

    model::MaskSet mask = model::mask_tokens(batch, c.mask_ratio,
                                             model::mask_strategy_from_str(c.mask_strategy),
                                             mask_seed);

    PretrainLoss<T> out;
    out.masked = static_cast<int>(mask.indices.size());

    if (c.contrastive != "off") {
        const auto mm = model::build_match_matrix(batch.indices);
        nn::Var<T> cemb = enc.emb;
        if (!c.contrastive_pre_mask)
            cemb = model::Fusion<T>::substitute_masked(g, enc.emb, &mask.masked, batch.size(),
                                                       &m.fusion);
        out.con = model::contrastive_loss_node(g, cemb, mm, c.gamma, c.contrastive == "naive");
    } else {
        out.con = g.scalar(T(0));
    }

    auto comb = m.fusion.combine(g, enc.emb, batch, &mask.masked);

    if (recon && out.masked > 0) {
        std::vector<nn::Var<T>> terms;
        for (std::size_t mi = 0; mi < m.mods.size(); ++mi) {
            const auto& ids = enc.rows[mi];
            std::vector<int> local, fused_rows;
            for (std::size_t j = 0; j < ids.size(); ++j) {
                if (!mask.masked[ids[j]]) continue;
                local.push_back(static_cast<int>(j));
                const auto& ix = batch.indices[ids[j]];
                fused_rows.push_back(comb.layout.row_of(ix.tile_id, ix.patch));
            }
            if (local.empty()) continue;
            nn::Var<T> sub = nn::gather_rows(g, comb.fused, fused_rows);

            if (m.mods[mi].kind == data::ModalityKind::Image) {
                const int dim = m.mods[mi].channels * m.mods[mi].side * m.mods[mi].side;
                nn::Var<T> dec = m.image_codec(static_cast<int>(mi))
                                     .decode(g, sub, enc.pool[mi].subset(local));
                std::vector<T> target;
                target.reserve(local.size() * static_cast<std::size_t>(dim));
                for (int j : local)
                    for (float v : batch.raw[ids[static_cast<std::size_t>(j)]].v)
                        target.push_back(static_cast<T>(v));
                terms.push_back(model::recon_term_node(g, dec, target, dim));
            } else {
                const int ch = m.mods[mi].channels;
                std::vector<std::vector<int>> day_values(local.size());
                std::vector<std::vector<T>> targets(local.size());
                for (std::size_t k = 0; k < local.size(); ++k) {
                    const auto& tok = batch.raw[ids[static_cast<std::size_t>(local[k])]];
                    const auto& tr = enc.att[mi][static_cast<std::size_t>(local[k])];
                    const int len = tok.shape[1];
                    std::vector<int> sel;
                    if (c.date_filter) {
                        std::vector<double> w(tr.w.begin(), tr.w.end());
                        sel = model::select_reconstruction_dates(
                            w, std::vector<std::uint8_t>(w.size(), 1), c.date_fraction);
                    } else {
                        sel.resize(static_cast<std::size_t>(len));
                        for (int s = 0; s < len; ++s) sel[static_cast<std::size_t>(s)] = s;
                    }
                    for (int s : sel) {
                        day_values[k].push_back(tok.days[static_cast<std::size_t>(s)]);
                        for (int cc = 0; cc < ch; ++cc)
                            targets[k].push_back(static_cast<T>(
                                tok.v[static_cast<std::size_t>(cc) * len + s]));
                    }
                }
                nn::Var<T> dec = m.temporal_codec(static_cast<int>(mi)).decode(g, sub, day_values);
                int r0 = 0;
                for (std::size_t k = 0; k < local.size(); ++k) {
                    const int rows = static_cast<int>(day_values[k].size());
                    nn::Var<T> piece = nn::slice_rows(g, dec, r0, r0 + rows);
                    terms.push_back(
                        model::recon_term_node(g, piece, targets[k], rows * ch));
                    r0 += rows;
                }
            }
        }
        nn::Var<T> s = terms[0];
        for (std::size_t i = 1; i < terms.size(); ++i) s = nn::add(g, s, terms[i]);
        out.mae = nn::scale(g, s, 1.0 / out.masked);
    } else {
        out.mae = g.scalar(T(0));
    }

    out.total = nn::add(g, out.con, out.mae);
    return out;
}

template <typename T>
struct SupervisedOut {
    nn::Var<T> logits;  // [n_tiles, n_classes], tiles in layout order
    std::vector<std::string> tile_order;
};

// Classification forward: no masking, mean over each tile's fused patch
// embeddings, then the linear head. Works with any modality subset present
// in the batch.
template <typename T>
SupervisedOut<T> supervised_logits(nn::Graph<T>& g, OmniModel<T>& m,
                                   const data::TokenBatch& batch) {
    EncodedBatch<T> enc = encode_all(g, m, batch, false);
    auto comb = m.fusion.combine(g, enc.emb, batch, nullptr);

    const int nt = static_cast<int>(comb.layout.tiles.size());
    std::vector<T> pool(static_cast<std::size_t>(nt) * comb.layout.rows, T(0));
    SupervisedOut<T> out;
    for (int ti = 0; ti < nt; ++ti) {
        const auto& tr = comb.layout.tiles[static_cast<std::size_t>(ti)];
        out.tile_order.push_back(tr.tile_id);
        const T w = T(1) / static_cast<T>(tr.patches.size());
        for (std::size_t p = 0; p < tr.patches.size(); ++p)
            pool[static_cast<std::size_t>(ti) * comb.layout.rows + tr.row0 + p] = w;
    }
    nn::Var<T> tile_emb =
        nn::matmul(g, g.leaf({nt, comb.layout.rows}, pool), comb.fused);
    out.logits = nn::add_rowvec(g, nn::matmul(g, tile_emb, g.use(m.head_w)), g.use(m.head_b));
    return out;
}

}  // namespace omnifuse::train
