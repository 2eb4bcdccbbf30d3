#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "omnifuse/train/metrics.hpp"

namespace omnifuse::cli {

// One metrics log loaded for reporting.
struct RunSeries {
    std::string name;
    std::string path;
    std::vector<train::EpochMetrics> records;

    const train::EpochMetrics& final_record() const { return records.back(); }
    double best_f1_weighted() const;
};

// Loads each metrics file; unreadable or empty logs get a warning line on
// warn and are skipped.
std::vector<RunSeries> collect_runs(const std::vector<std::string>& paths, std::ostream* warn);

// Comparison table, one row per run, values taken verbatim from the final
// epoch record of each log.
std::string render_table(const std::vector<RunSeries>& runs);

// Static SVG line charts: training loss per epoch, and validation weighted
// F1 per epoch for supervised phases.
std::string loss_curves_svg(const std::vector<RunSeries>& runs);
std::string f1_curves_svg(const std::vector<RunSeries>& runs);

}  // namespace omnifuse::cli
