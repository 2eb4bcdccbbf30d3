#include "omnifuse/cli/report.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace omnifuse::cli {

namespace fs = std::filesystem;

double RunSeries::best_f1_weighted() const {
    double best = 0;
    for (const auto& r : records)
        if (r.phase != "pretrain") best = std::max(best, r.f1_weighted);
    return best;
}

namespace {

std::string run_name(const std::string& path) {
    const fs::path p(path);
    const std::string parent = p.parent_path().filename().string();
    const std::string stem = p.stem().string();
    return parent.empty() ? stem : parent + "/" + stem;
}

std::string fmt(double v, int prec = 4) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << v;
    return os.str();
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

struct Series {
    std::string name;
    std::vector<std::pair<double, double>> pts;  // (epoch, value)
};

std::string esc(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '&') out += "&amp;";
        else if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else out.push_back(c);
    }
    return out;
}

std::string curves_svg(const std::vector<Series>& series, const std::string& title,
                       const std::string& y_label) {
    const double w = 760, h = 440, left = 64, right = 200, top = 48, bottom = 44;
    const double pw = w - left - right, ph = h - top - bottom;

    double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    bool any = false;
    for (const auto& s : series)
        for (const auto& [x, y] : s.pts) {
            if (!any) {
                x0 = x1 = x;
                y0 = y1 = y;
                any = true;
            }
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
        }
    if (x1 - x0 < 1e-12) x1 = x0 + 1;
    if (y1 - y0 < 1e-12) {
        y0 -= 0.5;
        y1 += 0.5;
    }
    const double ypad = 0.05 * (y1 - y0);
    y0 -= ypad;
    y1 += ypad;

    auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
    auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };
    auto num = [](double v) {
        std::ostringstream os;
        os << std::setprecision(4) << v;
        return os.str();
    };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
       << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
    os << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
    os << "<text x=\"" << left << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" "
          "font-weight=\"bold\">"
       << esc(title) << "</text>\n";

    // frame and gridlines
    os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"#999\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double yv = y0 + (y1 - y0) * i / 5.0;
        const double yy = py(yv);
        os << "<line x1=\"" << left << "\" y1=\"" << yy << "\" x2=\"" << left + pw << "\" y2=\""
           << yy << "\" stroke=\"#e5e5e5\"/>\n";
        os << "<text x=\"" << left - 6 << "\" y=\"" << yy + 4
           << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">" << num(yv)
           << "</text>\n";
    }
    for (int i = 0; i <= 5; ++i) {
        const double xv = x0 + (x1 - x0) * i / 5.0;
        const double xx = px(xv);
        os << "<text x=\"" << xx << "\" y=\"" << top + ph + 16
           << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">"
           << num(std::round(xv)) << "</text>\n";
    }
    os << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 8
       << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">epoch</text>\n";
    os << "<text x=\"16\" y=\"" << top + ph / 2
       << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" "
          "transform=\"rotate(-90 16 "
       << top + ph / 2 << ")\">" << esc(y_label) << "</text>\n";

    int ci = 0;
    for (const auto& s : series) {
        const char* color = kPalette[ci % 8];
        std::ostringstream pts;
        for (const auto& [x, y] : s.pts) pts << px(x) << "," << py(y) << " ";
        os << "<polyline points=\"" << pts.str() << "\" fill=\"none\" stroke=\"" << color
           << "\" stroke-width=\"1.8\"/>\n";
        for (const auto& [x, y] : s.pts)
            os << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"2.2\" fill=\""
               << color << "\"/>\n";
        const double ly = top + 14 + 18 * ci;
        os << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 34
           << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << left + pw + 40 << "\" y=\"" << ly + 4
           << "\" font-family=\"sans-serif\" font-size=\"11\">" << esc(s.name) << "</text>\n";
        ++ci;
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace

std::vector<RunSeries> collect_runs(const std::vector<std::string>& paths, std::ostream* warn) {
    std::vector<RunSeries> out;
    for (const auto& path : paths) {
        std::ifstream in(path);
        if (!in) {
            if (warn) *warn << "warning: cannot open " << path << ", row skipped\n";
            continue;
        }
        RunSeries run;
        run.name = run_name(path);
        run.path = path;
        std::string line;
        bool bad = false;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            try {
                run.records.push_back(train::metrics_from_line(line));
            } catch (const std::exception& e) {
                if (warn) *warn << "warning: " << path << ": " << e.what() << ", row skipped\n";
                bad = true;
                break;
            }
        }
        if (bad) continue;
        if (run.records.empty()) {
            if (warn) *warn << "warning: " << path << " has no records, row skipped\n";
            continue;
        }
        out.push_back(std::move(run));
    }
    return out;
}

std::string render_table(const std::vector<RunSeries>& runs) {
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"run", "phase", "epochs", "loss_total", "f1_weighted", "f1_macro",
                    "f1_micro", "best_f1w"});
    for (const auto& r : runs) {
        const auto& f = r.final_record();
        rows.push_back({r.name, f.phase, std::to_string(f.epoch + 1), fmt(f.loss_total),
                        fmt(f.f1_weighted), fmt(f.f1_macro), fmt(f.f1_micro),
                        fmt(r.best_f1_weighted())});
    }
    std::vector<std::size_t> width(rows[0].size(), 0);
    for (const auto& row : rows)
        for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
    std::ostringstream os;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t c = 0; c < rows[i].size(); ++c) {
            os << std::left << std::setw(static_cast<int>(width[c])) << rows[i][c];
            if (c + 1 < rows[i].size()) os << "  ";
        }
        os << "\n";
        if (i == 0) {
            for (std::size_t c = 0; c < width.size(); ++c) {
                os << std::string(width[c], '-');
                if (c + 1 < width.size()) os << "  ";
            }
            os << "\n";
        }
    }
    return os.str();
}

std::string loss_curves_svg(const std::vector<RunSeries>& runs) {
    std::vector<Series> series;
    for (const auto& r : runs) {
        Series s;
        s.name = r.name;
        for (const auto& rec : r.records) s.pts.emplace_back(rec.epoch, rec.loss_total);
        if (!s.pts.empty()) series.push_back(std::move(s));
    }
    return curves_svg(series, "training loss by epoch", "loss_total");
}

std::string f1_curves_svg(const std::vector<RunSeries>& runs) {
    std::vector<Series> series;
    for (const auto& r : runs) {
        Series s;
        s.name = r.name;
        for (const auto& rec : r.records)
            if (rec.phase != "pretrain") s.pts.emplace_back(rec.epoch, rec.f1_weighted);
        if (!s.pts.empty()) series.push_back(std::move(s));
    }
    return curves_svg(series, "validation weighted F1 by epoch", "f1_weighted");
}

}  // namespace omnifuse::cli
