#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "omnifuse/data/types.hpp"

namespace omnifuse::data {

// Greedy iterative stratification: split capacities are exact proportional
// shares (largest-remainder rounding), and tiles are placed scarcest class
// first into the split with the greatest remaining per-class demand. Ties
// fall to remaining capacity, then to a seeded draw. Tiles beyond the total
// capacity (fractions summing below 1) stay unassigned.
std::vector<std::pair<std::string, std::vector<std::string>>> stratified_split(
    const DatasetManifest& manifest, const std::vector<std::vector<std::uint8_t>>& tile_labels,
    const std::vector<std::pair<std::string, double>>& fractions, std::uint64_t seed);

// Loads labels from the tiles under root and writes manifest.splits.
void apply_stratified_split(DatasetManifest& manifest, const std::string& root,
                            const std::vector<std::pair<std::string, double>>& fractions,
                            std::uint64_t seed);

}  // namespace omnifuse::data
