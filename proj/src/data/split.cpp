#include "omnifuse/data/split.hpp"

#include <algorithm>
#include <cmath>

#include "omnifuse/core/rng.hpp"
#include "omnifuse/data/dataset.hpp"

namespace omnifuse::data {

std::vector<std::pair<std::string, std::vector<std::string>>> stratified_split(
    const DatasetManifest& manifest, const std::vector<std::vector<std::uint8_t>>& tile_labels,
    const std::vector<std::pair<std::string, double>>& fractions, std::uint64_t seed) {
    const int n = static_cast<int>(manifest.tiles.size());
    const int s_count = static_cast<int>(fractions.size());
    const int k_count = static_cast<int>(manifest.label_vocab.size());
    check(s_count >= 1, "stratified_split: no splits requested");
    check(n >= s_count, "stratified_split: fewer tiles than splits");
    check(static_cast<int>(tile_labels.size()) == n, "stratified_split: label list length mismatch");
    double frac_sum = 0;
    for (const auto& [name, f] : fractions) {
        check(f > 0, "stratified_split: fraction for " + name + " must be positive");
        frac_sum += f;
    }
    check(frac_sum <= 1.0 + 1e-9, "stratified_split: fractions sum above 1");

    // capacities: floor shares plus largest-remainder top-up
    std::vector<int> cap(s_count);
    std::vector<double> rem(s_count);
    int assigned_cap = 0;
    for (int s = 0; s < s_count; ++s) {
        const double target = fractions[s].second * n;
        cap[s] = static_cast<int>(std::floor(target + 1e-9));
        rem[s] = target - cap[s];
        assigned_cap += cap[s];
    }
    int leftover = static_cast<int>(std::floor(n * frac_sum + 1e-9)) - assigned_cap;
    std::vector<int> order(s_count);
    for (int s = 0; s < s_count; ++s) order[s] = s;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
    for (int i = 0; i < s_count && leftover > 0; ++i, --leftover) ++cap[order[i]];

    std::vector<double> demand(static_cast<std::size_t>(s_count) * k_count, 0.0);
    std::vector<int> support(k_count, 0);
    for (const auto& labels : tile_labels) {
        check(static_cast<int>(labels.size()) == k_count, "stratified_split: label vector length mismatch");
        for (int k = 0; k < k_count; ++k)
            if (labels[k]) ++support[k];
    }
    for (int s = 0; s < s_count; ++s)
        for (int k = 0; k < k_count; ++k)
            demand[static_cast<std::size_t>(s) * k_count + k] = fractions[s].second * support[k];

    std::vector<int> remaining = support;
    std::vector<int> filled(s_count, 0);
    std::vector<int> assignment(n, -1);  // -1 pending, -2 unassignable
    Rng rng(Rng::derive(seed, {0x5147ULL}));

    auto place = [&](int tile) {
        // among splits with room, maximize demand for the driving class set
        std::vector<int> cands;
        for (int s = 0; s < s_count; ++s)
            if (filled[s] < cap[s]) cands.push_back(s);
        if (cands.empty()) {
            assignment[tile] = -2;
            for (int k = 0; k < k_count; ++k)
                if (tile_labels[tile][k]) --remaining[k];
            return;
        }
        double best_d = -1e300;
        for (int s : cands) {
            double d = 0;
            for (int k = 0; k < k_count; ++k)
                if (tile_labels[tile][k]) d += demand[static_cast<std::size_t>(s) * k_count + k];
            if (d > best_d) best_d = d;
        }
        std::vector<int> tied;
        for (int s : cands) {
            double d = 0;
            for (int k = 0; k < k_count; ++k)
                if (tile_labels[tile][k]) d += demand[static_cast<std::size_t>(s) * k_count + k];
            if (d > best_d - 1e-12) tied.push_back(s);
        }
        if (tied.size() > 1) {
            int best_room = -1;
            for (int s : tied) best_room = std::max(best_room, cap[s] - filled[s]);
            std::vector<int> tied2;
            for (int s : tied)
                if (cap[s] - filled[s] == best_room) tied2.push_back(s);
            tied = std::move(tied2);
        }
        const int s = tied.size() == 1
                          ? tied[0]
                          : tied[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(tied.size()) - 1))];
        assignment[tile] = s;
        ++filled[s];
        for (int k = 0; k < k_count; ++k)
            if (tile_labels[tile][k]) {
                demand[static_cast<std::size_t>(s) * k_count + k] -= 1.0;
                --remaining[k];
            }
    };

    while (true) {
        int scarcest = -1;
        for (int k = 0; k < k_count; ++k)
            if (remaining[k] > 0 && (scarcest < 0 || remaining[k] < remaining[scarcest])) scarcest = k;
        if (scarcest < 0) break;
        for (int i = 0; i < n; ++i)
            if (assignment[i] == -1 && tile_labels[i][scarcest]) place(i);
    }
    // tiles with no positive labels fall through to capacity-driven placement
    for (int i = 0; i < n; ++i)
        if (assignment[i] == -1) place(i);

    std::vector<std::pair<std::string, std::vector<std::string>>> out;
    for (int s = 0; s < s_count; ++s) out.emplace_back(fractions[s].first, std::vector<std::string>{});
    for (int i = 0; i < n; ++i)
        if (assignment[i] >= 0) out[assignment[i]].second.push_back(manifest.tiles[i].tile_id);
    return out;
}

void apply_stratified_split(DatasetManifest& manifest, const std::string& root,
                            const std::vector<std::pair<std::string, double>>& fractions,
                            std::uint64_t seed) {
    TileAccessor acc(manifest, root);
    std::vector<std::vector<std::uint8_t>> labels;
    labels.reserve(manifest.tiles.size());
    for (const auto& t : manifest.tiles) {
        MultimodalTile tile = acc.load(t.tile_id);
        check(tile.has_labels(), "apply_stratified_split: tile " + t.tile_id + " has no labels");
        labels.push_back(tile.labels());
    }
    manifest.splits = stratified_split(manifest, labels, fractions, seed);
}

}  // namespace omnifuse::data
