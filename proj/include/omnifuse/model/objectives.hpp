#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "omnifuse/data/tokenizer.hpp"
#include "omnifuse/nn/graph.hpp"

namespace omnifuse::model {

enum class Match : std::uint8_t { Negative = 0, Positive = 1, Ignored = 2 };

struct MatchMatrix {
    int t = 0;
    std::vector<Match> m;  // [t * t], row-major

    Match at(int i, int j) const { return m[static_cast<std::size_t>(i) * t + j]; }
};

// Pairwise roles for the token-level contrastive objective. A pair is
// Positive when the tokens share tile and patch but come from different
// modalities, Ignored when they share tile and modality (the same physical
// footprint at a different patch is not a credible negative, and a token is
// never its own pair), Negative otherwise. Duplicate (tile, modality, patch)
// keys are rejected.
inline MatchMatrix build_match_matrix(const std::vector<data::TokenIndex>& indices) {
    const int t = static_cast<int>(indices.size());
    std::map<std::tuple<std::string, std::string, int>, int> seen;
    for (int i = 0; i < t; ++i) {
        const auto key = std::make_tuple(indices[i].tile_id, indices[i].modality, indices[i].patch);
        check(seen.emplace(key, i).second,
              "match matrix: duplicate token (" + indices[i].tile_id + ", " + indices[i].modality +
                  ", patch " + std::to_string(indices[i].patch) + ")");
    }
    MatchMatrix mm;
    mm.t = t;
    mm.m.assign(static_cast<std::size_t>(t) * t, Match::Negative);
    for (int i = 0; i < t; ++i)
        for (int j = 0; j < t; ++j) {
            const auto& a = indices[i];
            const auto& b = indices[j];
            Match v = Match::Negative;
            if (i == j) {
                v = Match::Ignored;
            } else if (a.tile_id == b.tile_id) {
                if (a.modality == b.modality) v = Match::Ignored;
                else if (a.patch == b.patch) v = Match::Positive;
            }
            mm.m[static_cast<std::size_t>(i) * t + j] = v;
        }
    return mm;
}

// Multi-positive InfoNCE over token embeddings:
//   loss = -(1/T) * sum_i log( sum_{j in Pos(i)} exp(<e_i, e_j> / gamma)
//                            / sum_{j in Pos(i) u Neg(i)} exp(<e_i, e_j> / gamma) )
// Every row needs at least one positive, which holds whenever the batch
// carries two or more modalities.
template <typename T>
nn::Var<T> contrastive_loss_node(nn::Graph<T>& g, nn::Var<T> emb, const MatchMatrix& mm,
                                 double gamma, bool naive_negatives = false) {
    const int t = mm.t;
    check(emb.shape().size() == 2 && emb.shape()[0] == t,
          "contrastive loss: embedding rows must match match-matrix size");
    check(gamma > 0, "contrastive loss: gamma must be positive");
    std::vector<std::uint8_t> pos(static_cast<std::size_t>(t) * t, 0);
    std::vector<std::uint8_t> den(static_cast<std::size_t>(t) * t, 0);
    for (int i = 0; i < t; ++i) {
        bool any = false;
        for (int j = 0; j < t; ++j) {
            const Match v = mm.at(i, j);
            const bool p = v == Match::Positive;
            any = any || p;
            pos[static_cast<std::size_t>(i) * t + j] = p;
            den[static_cast<std::size_t>(i) * t + j] =
                naive_negatives ? (j != i) : (p || v == Match::Negative);
        }
        check(any, "contrastive loss: token " + std::to_string(i) +
                       " has no positive match (batch needs at least two modalities)");
    }
    nn::Var<T> s = nn::scale(g, nn::matmul(g, emb, nn::transpose(g, emb)), 1.0 / gamma);
    nn::Var<T> lp = nn::masked_logsumexp_rows(g, s, pos);
    nn::Var<T> la = nn::masked_logsumexp_rows(g, s, den);
    return nn::scale(g, nn::sum(g, nn::sub(g, la, lp)), 1.0 / t);
}

// Variant without the same-tile exclusion: every non-self pair lands in the
// denominator, so a token's other-patch same-modality neighbours act as
// negatives even though they overlap spatially.
template <typename T>
nn::Var<T> naive_contrastive_loss_node(nn::Graph<T>& g, nn::Var<T> emb, const MatchMatrix& mm,
                                       double gamma) {
    return contrastive_loss_node(g, emb, mm, gamma, true);
}

struct EagerLoss {
    double value = 0;
    std::vector<double> grad;  // d(loss)/d(embedding), same layout as the input
};

// Standalone evaluation used by oracle tests and the bindings: embeddings are
// a row-major [t, d] buffer.
inline EagerLoss contrastive_loss(const std::vector<double>& emb, int t, int d,
                                  const MatchMatrix& mm, double gamma,
                                  bool naive_negatives = false) {
    check(static_cast<std::int64_t>(emb.size()) == static_cast<std::int64_t>(t) * d,
          "contrastive loss: embedding buffer size mismatch");
    nn::Graph<double> g;
    nn::Var<double> e = g.leaf({t, d}, emb, true);
    nn::Var<double> loss = contrastive_loss_node(g, e, mm, gamma, naive_negatives);
    g.backward(loss);
    EagerLoss out;
    out.value = loss.scalar();
    out.grad = e.n->grad;
    return out;
}

inline EagerLoss naive_contrastive_loss(const std::vector<double>& emb, int t, int d,
                                        const MatchMatrix& mm, double gamma) {
    return contrastive_loss(emb, t, d, mm, gamma, true);
}

// One masked token's reconstruction against its original values.
struct ReconInstance {
    std::vector<double> decoded;
    std::vector<double> target;
    double dim_eff = 0;  // normalizer: element count actually reconstructed
};

struct ReconLoss {
    double value = 0;
    std::vector<std::vector<double>> grads;  // per instance, d(loss)/d(decoded)
};

// loss = (1/N) * sum_i (1/dim_eff_i) * ||decoded_i - target_i||^2
inline ReconLoss reconstruction_loss(const std::vector<ReconInstance>& instances) {
    check(!instances.empty(), "reconstruction loss: no masked tokens");
    ReconLoss out;
    const double n = static_cast<double>(instances.size());
    for (const auto& inst : instances) {
        check(inst.decoded.size() == inst.target.size(),
              "reconstruction loss: decoded/target size mismatch");
        check(inst.dim_eff > 0, "reconstruction loss: non-positive dim_eff");
        std::vector<double> grad(inst.decoded.size());
        double sq = 0;
        for (std::size_t k = 0; k < inst.decoded.size(); ++k) {
            const double diff = inst.decoded[k] - inst.target[k];
            sq += diff * diff;
            grad[k] = 2.0 * diff / (n * inst.dim_eff);
        }
        out.value += sq / (n * inst.dim_eff);
        out.grads.push_back(std::move(grad));
    }
    return out;
}

// Graph-side reconstruction term for one masked token: mean squared error
// normalized by the token's reconstructed element count.
template <typename T>
nn::Var<T> recon_term_node(nn::Graph<T>& g, nn::Var<T> decoded, const std::vector<T>& target,
                           double dim_eff) {
    check(static_cast<std::int64_t>(target.size()) == decoded.size(),
          "recon term: target size mismatch");
    nn::Var<T> diff = nn::sub(g, decoded, g.leaf(decoded.shape(), target));
    return nn::scale(g, nn::sum(g, nn::mul(g, diff, diff)), 1.0 / dim_eff);
}

struct LossSwitches {
    bool contrastive = true;
    bool reconstruction = true;
};

inline double total_loss(double con, double mae, const LossSwitches& s) {
    return (s.contrastive ? con : 0.0) + (s.reconstruction ? mae : 0.0);
}

}  // namespace omnifuse::model
