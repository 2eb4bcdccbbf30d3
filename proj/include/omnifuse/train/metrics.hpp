#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace omnifuse::train {

// Multilabel confusion totals. Per-class F1 uses the 2tp/(2tp+fp+fn) form,
// which matches 2PR/(P+R) and fixes the 0/0 cases to 0: a class absent from
// both truth and predictions scores 0 and carries zero weight.
struct F1Counts {
    std::vector<std::int64_t> tp, fp, fn;

    explicit F1Counts(int n_classes = 0) { reset(n_classes); }

    void reset(int n_classes) {
        tp.assign(n_classes, 0);
        fp.assign(n_classes, 0);
        fn.assign(n_classes, 0);
    }

    int classes() const { return static_cast<int>(tp.size()); }

    void add(const std::vector<std::uint8_t>& truth, const std::vector<std::uint8_t>& pred);

    std::int64_t support(int c) const { return tp[c] + fn[c]; }
    double f1(int c) const;
    double macro() const;     // unweighted mean over all classes
    double weighted() const;  // support-weighted mean; zero support = zero weight
    double micro() const;     // pooled counts
};

// One metrics-log line. Loss fields that do not apply to a phase are zero.
struct EpochMetrics {
    int epoch = 0;
    std::string phase;
    double loss_total = 0;
    double loss_con = 0;
    double loss_mae = 0;
    double lr = 0;
    double f1_weighted = 0;
    double f1_macro = 0;
    double f1_micro = 0;
    double wall_s = 0;
};

std::string metrics_line(const EpochMetrics& r);
EpochMetrics metrics_from_line(const std::string& line);

// Collects records and mirrors them to a JSON-lines file when a path is set.
class MetricsLog {
public:
    explicit MetricsLog(std::string path = "", bool append = false);

    void add(const EpochMetrics& r);
    const std::vector<EpochMetrics>& records() const { return records_; }

private:
    std::string path_;
    std::vector<EpochMetrics> records_;
};

}  // namespace omnifuse::train
