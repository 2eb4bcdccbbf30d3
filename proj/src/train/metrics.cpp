#include "omnifuse/train/metrics.hpp"

#include <json.hpp>

#include <fstream>

#include "omnifuse/core/shape.hpp"

namespace omnifuse::train {

using ordered_json = nlohmann::ordered_json;

void F1Counts::add(const std::vector<std::uint8_t>& truth, const std::vector<std::uint8_t>& pred) {
    check(truth.size() == tp.size() && pred.size() == tp.size(),
          "f1: label vector length does not match class count");
    for (std::size_t c = 0; c < tp.size(); ++c) {
        if (truth[c] && pred[c]) ++tp[c];
        else if (!truth[c] && pred[c]) ++fp[c];
        else if (truth[c] && !pred[c]) ++fn[c];
    }
}

double F1Counts::f1(int c) const {
    const double den = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
    return den > 0 ? 2.0 * static_cast<double>(tp[c]) / den : 0.0;
}

double F1Counts::macro() const {
    if (tp.empty()) return 0.0;
    double s = 0;
    for (int c = 0; c < classes(); ++c) s += f1(c);
    return s / static_cast<double>(classes());
}

double F1Counts::weighted() const {
    double s = 0, w = 0;
    for (int c = 0; c < classes(); ++c) {
        s += static_cast<double>(support(c)) * f1(c);
        w += static_cast<double>(support(c));
    }
    return w > 0 ? s / w : 0.0;
}

double F1Counts::micro() const {
    std::int64_t t = 0, p = 0, n = 0;
    for (int c = 0; c < classes(); ++c) {
        t += tp[c];
        p += fp[c];
        n += fn[c];
    }
    const double den = static_cast<double>(2 * t + p + n);
    return den > 0 ? 2.0 * static_cast<double>(t) / den : 0.0;
}

std::string metrics_line(const EpochMetrics& r) {
    ordered_json j;
    j["epoch"] = r.epoch;
    j["phase"] = r.phase;
    j["loss_total"] = r.loss_total;
    j["loss_con"] = r.loss_con;
    j["loss_mae"] = r.loss_mae;
    j["lr"] = r.lr;
    j["f1_weighted"] = r.f1_weighted;
    j["f1_macro"] = r.f1_macro;
    j["f1_micro"] = r.f1_micro;
    j["wall_s"] = r.wall_s;
    return j.dump();
}

EpochMetrics metrics_from_line(const std::string& line) {
    ordered_json j = ordered_json::parse(line);
    EpochMetrics r;
    r.epoch = j.at("epoch").get<int>();
    r.phase = j.at("phase").get<std::string>();
    r.loss_total = j.at("loss_total").get<double>();
    r.loss_con = j.at("loss_con").get<double>();
    r.loss_mae = j.at("loss_mae").get<double>();
    r.lr = j.at("lr").get<double>();
    r.f1_weighted = j.at("f1_weighted").get<double>();
    r.f1_macro = j.at("f1_macro").get<double>();
    r.f1_micro = j.at("f1_micro").get<double>();
    r.wall_s = j.at("wall_s").get<double>();
    return r;
}

MetricsLog::MetricsLog(std::string path, bool append) : path_(std::move(path)) {
    if (!path_.empty() && !append) std::ofstream(path_, std::ios::trunc);
}

void MetricsLog::add(const EpochMetrics& r) {
    records_.push_back(r);
    if (path_.empty()) return;
    std::ofstream out(path_, std::ios::app);
    check(out.good(), "metrics log: cannot open " + path_);
    out << metrics_line(r) << "\n";
}

}  // namespace omnifuse::train
