// End-to-end acceptance runner: one pass/fail line per criterion, nonzero
// exit if any requested criterion fails. Criteria 9 and 10 run a desk-scale
// benchmark and take the bulk of the time; the rest finish in seconds.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "omnifuse/core/rng.hpp"
#include "omnifuse/data/dataset.hpp"
#include "omnifuse/data/split.hpp"
#include "omnifuse/data/synthetic.hpp"
#include "omnifuse/model/fusion.hpp"
#include "omnifuse/nn/graph.hpp"
#include "omnifuse/train/checkpoint.hpp"
#include "omnifuse/train/config.hpp"
#include "omnifuse/train/metrics.hpp"
#include "omnifuse/train/optim.hpp"
#include "omnifuse/train/trainer.hpp"
#include "omnifuse/verify/checks.hpp"

using namespace omnifuse;
namespace fs = std::filesystem;

namespace {

struct Criterion {
    int id = 0;
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0;
};

double now_s() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

fs::path work_dir(const std::string& tag) {
    auto p = fs::temp_directory_path() / ("omnifuse_accept_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<double> randn(std::int64_t n, std::uint64_t seed) {
    Rng rng(Rng::derive(seed, {0xacceULL}));
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal(0.0, 1.0);
    return v;
}

// ---- criteria 1..6 ride on the verification suite -------------------------

std::map<std::string, verify::CheckResult> run_suite(int seeds) {
    verify::CheckOptions opt;
    opt.seeds = seeds;
    std::map<std::string, verify::CheckResult> by_name;
    for (auto& r : verify::run_checks(opt)) by_name[r.name] = r;
    return by_name;
}

Criterion from_checks(int id, const std::string& name,
                      const std::map<std::string, verify::CheckResult>& suite,
                      const std::vector<std::string>& check_names, double budget_s) {
    Criterion c{id, name};
    c.pass = true;
    int cases = 0;
    for (const auto& cn : check_names) {
        auto it = suite.find(cn);
        if (it == suite.end()) {
            c.pass = false;
            c.detail = "missing check " + cn;
            return c;
        }
        c.seconds += it->second.seconds;
        cases += it->second.cases;
        if (!it->second.pass) {
            c.pass = false;
            c.detail = cn + ": " + it->second.detail;
            return c;
        }
    }
    if (c.seconds > budget_s) {
        c.pass = false;
        c.detail = "runtime " + std::to_string(c.seconds) + "s exceeds " +
                   std::to_string(budget_s) + "s";
        return c;
    }
    c.detail = std::to_string(cases) + " cases";
    return c;
}

// ---- criterion 7: fusion invariants ----------------------------------------

constexpr double kCell = 10.0;

data::TokenBatch make_batch(const std::vector<std::string>& tiles,
                            const std::vector<std::string>& mods, int gx, int gy) {
    data::TokenBatch b;
    for (const auto& tile : tiles)
        for (const auto& m : mods)
            for (int p = 0; p < gx * gy; ++p) {
                data::TokenIndex ti;
                ti.modality = m;
                ti.patch = p;
                ti.tile_id = tile;
                ti.pos_x_m = (p % gx + 0.5) * kCell;
                ti.pos_y_m = (p / gx + 0.5) * kCell;
                b.indices.push_back(ti);
            }
    return b;
}

model::Fusion<double> make_fusion(int d, int heads, int b, std::uint64_t seed) {
    Rng rng(seed);
    model::Fusion<double> f;
    const double diag = std::sqrt(2.0) * 2 * kCell;
    f.init(d, heads, b, kCell, diag, false, 4, rng);
    return f;
}

Criterion crit7() {
    Criterion c{7, "fusion invariants"};
    const double t0 = now_s();

    // permutation invariance (numerical, 1e-5)
    {
        auto batch = make_batch({"t1", "t0"}, {"a", "b", "c"}, 2, 2);
        const int t = static_cast<int>(batch.indices.size());
        auto f = make_fusion(8, 2, 2, 101);
        auto base = randn(static_cast<std::int64_t>(t) * 8, 2);
        nn::Graph<double> g;
        auto out = f.combine(g, g.leaf({t, 8}, base), batch, nullptr);

        Rng rng(55);
        std::vector<std::int64_t> perm(t);
        for (int i = 0; i < t; ++i) perm[i] = i;
        rng.shuffle(perm);
        data::TokenBatch shuffled;
        std::vector<double> semb(base.size());
        for (int i = 0; i < t; ++i) {
            shuffled.indices.push_back(batch.indices[perm[i]]);
            std::copy(base.begin() + perm[i] * 8, base.begin() + (perm[i] + 1) * 8,
                      semb.begin() + static_cast<std::int64_t>(i) * 8);
        }
        nn::Graph<double> g2;
        auto out2 = f.combine(g2, g2.leaf({t, 8}, semb), shuffled, nullptr);
        for (std::int64_t i = 0; i < out.fused.size(); ++i)
            if (std::abs(out.fused.value()[i] - out2.fused.value()[i]) >
                1e-5 * std::max(1.0, std::abs(out.fused.value()[i]))) {
                c.detail = "permutation drift at fused[" + std::to_string(i) + "]";
                c.seconds = now_s() - t0;
                return c;
            }
    }

    // tile isolation (bit-level)
    {
        auto batch = make_batch({"ta", "tb"}, {"a", "b"}, 2, 2);
        auto f = make_fusion(8, 2, 2, 102);
        auto base = randn(16 * 8, 3);
        nn::Graph<double> g;
        auto out = f.combine(g, g.leaf({16, 8}, base), batch, nullptr);
        auto wiped = base;
        for (int i = 0; i < 16; ++i)
            if (batch.indices[i].tile_id == "tb")
                std::fill(wiped.begin() + i * 8, wiped.begin() + (i + 1) * 8, 0.0);
        nn::Graph<double> g2;
        auto out2 = f.combine(g2, g2.leaf({16, 8}, wiped), batch, nullptr);
        bool tb_changed = false;
        for (int r = 0; r < 4; ++r)
            for (int col = 0; col < 8; ++col) {
                if (out.fused.value()[r * 8 + col] != out2.fused.value()[r * 8 + col]) {
                    c.detail = "wiping tile tb moved tile ta row " + std::to_string(r);
                    c.seconds = now_s() - t0;
                    return c;
                }
                if (out.fused.value()[(4 + r) * 8 + col] != out2.fused.value()[(4 + r) * 8 + col])
                    tb_changed = true;
            }
        if (!tb_changed) {
            c.detail = "wiping tile tb left its own rows unchanged";
            c.seconds = now_s() - t0;
            return c;
        }
    }

    // mask substitution independence (bit-level)
    {
        auto batch = make_batch({"t0"}, {"a", "b"}, 2, 2);
        auto f = make_fusion(8, 2, 1, 103);
        auto ms = model::mask_tokens(batch, 0.4, model::MaskStrategy::Random, 9);
        auto base = randn(8 * 8, 4);
        nn::Graph<double> g;
        auto out = f.combine(g, g.leaf({8, 8}, base), batch, &ms.masked);
        auto garbage = base;
        Rng rng(77);
        for (int i : ms.indices)
            for (int col = 0; col < 8; ++col)
                garbage[static_cast<std::int64_t>(i) * 8 + col] = rng.normal(5.0, 3.0);
        nn::Graph<double> g2;
        auto out2 = f.combine(g2, g2.leaf({8, 8}, garbage), batch, &ms.masked);
        for (std::int64_t i = 0; i < out.fused.size(); ++i)
            if (out.fused.value()[i] != out2.fused.value()[i]) {
                c.detail = "masked-row contents leaked into fused[" + std::to_string(i) + "]";
                c.seconds = now_s() - t0;
                return c;
            }
    }

    c.pass = true;
    c.detail = "permutation, tile isolation, mask substitution";
    c.seconds = now_s() - t0;
    return c;
}

// ---- shared dataset + training helpers -------------------------------------

data::TileAccessor small_dataset(const std::string& tag, int tiles, int classes,
                                 std::uint64_t seed) {
    auto dir = work_dir(tag);
    data::SyntheticConfig cfg;
    cfg.n_classes = classes;
    cfg.n_tiles = tiles;
    cfg.img_channels = 2;
    cfg.img_patch_px = 8;
    cfg.opt_channels = 2;
    cfg.opt_len_min = 6;
    cfg.opt_len_max = 8;
    cfg.rad_channels = 2;
    cfg.rad_len_min = 6;
    cfg.rad_len_max = 8;
    auto out = data::generate_synthetic(cfg, seed);
    data::write_synthetic_dataset(out, cfg, dir.string());
    data::apply_stratified_split(out.manifest, dir.string(), {{"train", 0.75}, {"val", 0.25}},
                                 seed);
    data::save_manifest(out.manifest, dir.string());
    return data::load_dataset(dir.string());
}

train::TrainConfig tiny_config() {
    train::TrainConfig c;
    c.d = 16;
    c.blocks = 1;
    c.heads = 2;
    c.batch_tiles = 8;
    c.pretrain_epochs = 3;
    c.finetune_epochs = 3;
    c.seed = 7;
    return c;
}

bool values_equal(train::OmniModel<float>& a, train::OmniModel<float>& b) {
    const auto& ia = a.reg.items();
    const auto& ib = b.reg.items();
    if (ia.size() != ib.size()) return false;
    for (std::size_t i = 0; i < ia.size(); ++i)
        if (ia[i]->name != ib[i]->name || ia[i]->value != ib[i]->value) return false;
    return true;
}

bool records_equal_ignoring_wall(const train::EpochMetrics& a, const train::EpochMetrics& b) {
    return a.epoch == b.epoch && a.phase == b.phase && a.loss_total == b.loss_total &&
           a.loss_con == b.loss_con && a.loss_mae == b.loss_mae && a.lr == b.lr &&
           a.f1_weighted == b.f1_weighted && a.f1_macro == b.f1_macro && a.f1_micro == b.f1_micro;
}

// ---- criterion 8: determinism ----------------------------------------------

Criterion crit8() {
    Criterion c{8, "pretraining determinism"};
    const double t0 = now_s();
    auto acc = small_dataset("det_data", 16, 4, 21);
    auto cfg = tiny_config();

    auto run = [&](const std::string& tag) {
        auto dir = work_dir("det_" + tag);
        auto model = train::build_model(cfg, acc);
        train::FitOptions opt;
        opt.checkpoint_path = (dir / "ck.omnf").string();
        opt.metrics_path = (dir / "metrics.jsonl").string();
        train::pretrain(*model, acc, opt);
        return dir;
    };
    auto da = run("a");
    auto db = run("b");

    if (read_file(da / "ck.omnf") != read_file(db / "ck.omnf")) {
        c.detail = "checkpoints differ between identical runs";
        c.seconds = now_s() - t0;
        return c;
    }
    std::ifstream la(da / "metrics.jsonl"), lb(db / "metrics.jsonl");
    std::string sa, sb;
    int lines = 0;
    while (true) {
        const bool ga = static_cast<bool>(std::getline(la, sa));
        const bool gb = static_cast<bool>(std::getline(lb, sb));
        if (ga != gb) {
            c.detail = "metric logs have different lengths";
            c.seconds = now_s() - t0;
            return c;
        }
        if (!ga) break;
        ++lines;
        const auto ra = train::metrics_from_line(sa);
        const auto rb = train::metrics_from_line(sb);
        if (!records_equal_ignoring_wall(ra, rb)) {
            c.detail = "metric logs differ at line " + std::to_string(lines);
            c.seconds = now_s() - t0;
            return c;
        }
    }
    c.pass = true;
    c.detail = "checkpoints byte-identical; logs identical up to the wall_s timing field";
    c.seconds = now_s() - t0;
    return c;
}

// ---- criteria 9/10: desk-scale benchmark -----------------------------------

struct BenchOptions {
    int tiles = 2000;
    int seeds = 3;
    int pretrain_epochs = 60;
    int finetune_epochs = 20;
    std::string dir;  // reuse/keep directory; empty = fresh temp
};

double median3(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

struct BenchOutcome {
    double pre_f1 = 0, scratch_f1 = 0;
    std::map<std::string, double> unimodal_f1;
    double seconds = 0;
};

BenchOutcome run_benchmark(const BenchOptions& bo) {
    const double t0 = now_s();
    fs::path root = bo.dir.empty() ? work_dir("bench") : fs::path(bo.dir);
    fs::create_directories(root);

    const auto ds_dir = root / "data";
    if (!fs::exists(ds_dir / "manifest.json")) {
        data::SyntheticConfig sc;
        sc.n_tiles = bo.tiles;
        sc.n_classes = 8;
        auto out = data::generate_synthetic(sc, 33);
        data::write_synthetic_dataset(out, sc, ds_dir.string());
        data::apply_stratified_split(out.manifest, ds_dir.string(),
                                     {{"train", 0.7}, {"val", 0.15}, {"test", 0.15}}, 33);
        data::save_manifest(out.manifest, ds_dir.string());
    }
    auto acc = data::load_dataset(ds_dir.string());

    train::TrainConfig base;
    base.d = 64;
    base.blocks = 2;
    base.heads = 4;
    base.batch_tiles = 128;
    base.pretrain_epochs = bo.pretrain_epochs;
    base.finetune_epochs = bo.finetune_epochs;
    base.label_fraction = 0.1;

    const auto mods = acc.manifest().modalities;
    std::vector<double> pre_f1s, scratch_f1s;
    std::map<std::string, std::vector<double>> uni_f1s;

    for (int s = 1; s <= bo.seeds; ++s) {
        auto cfg = base;
        cfg.seed = static_cast<std::uint64_t>(s);
        const auto ck = root / ("pretrain_s" + std::to_string(s) + ".omnf");

        if (!fs::exists(ck)) {
            auto model = train::build_model(cfg, acc);
            train::FitOptions opt;
            opt.checkpoint_path = ck.string();
            std::fprintf(stderr, "[bench] seed %d: pretraining %d epochs...\n", s,
                         cfg.pretrain_epochs);
            train::pretrain(*model, acc, opt);
        }

        auto fine = [&](const std::vector<std::string>& subset, bool from_pretrained) {
            std::unique_ptr<train::OmniModel<float>> m;
            if (from_pretrained) {
                auto loaded = train::load_checkpoint(ck.string());
                loaded.model->cfg.finetune_epochs = cfg.finetune_epochs;
                loaded.model->cfg.label_fraction = cfg.label_fraction;
                m = std::move(loaded.model);
            } else {
                m = train::build_model(cfg, acc);
            }
            train::finetune(*m, acc, subset, {});
            auto r = train::evaluate(*m, acc, "test", subset);
            return r.counts.weighted();
        };

        const double f_pre = fine({}, true);
        const double f_scr = fine({}, false);
        pre_f1s.push_back(f_pre);
        scratch_f1s.push_back(f_scr);
        std::fprintf(stderr, "[bench] seed %d: pretrained %.4f scratch %.4f\n", s, f_pre, f_scr);
        for (const auto& m : mods) {
            const double f = fine({m.name}, true);
            uni_f1s[m.name].push_back(f);
            std::fprintf(stderr, "[bench] seed %d: %s-only %.4f\n", s, m.name.c_str(), f);
        }
    }

    BenchOutcome out;
    out.pre_f1 = median3(pre_f1s);
    out.scratch_f1 = median3(scratch_f1s);
    for (auto& [name, v] : uni_f1s) out.unimodal_f1[name] = median3(v);
    out.seconds = now_s() - t0;
    return out;
}

std::string pct(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", x);
    return buf;
}

Criterion crit9(const BenchOutcome& b) {
    Criterion c{9, "pretraining benefit at 10% labels"};
    const double gain = b.pre_f1 - b.scratch_f1;
    c.pass = gain >= 0.03 && b.seconds <= 45 * 60;
    c.detail = "weighted F1 " + pct(b.pre_f1) + " vs scratch " + pct(b.scratch_f1) + " (gain " +
               pct(gain) + ", need >= 0.03)";
    if (b.seconds > 45 * 60) c.detail += "; over the 45 min budget";
    c.seconds = b.seconds;
    return c;
}

Criterion crit10(const BenchOutcome& b) {
    Criterion c{10, "multimodal >= best unimodal"};
    double best = 0;
    std::string best_name;
    for (const auto& [name, f1] : b.unimodal_f1)
        if (f1 >= best) {
            best = f1;
            best_name = name;
        }
    c.pass = b.pre_f1 >= best;
    c.detail = "all-modality " + pct(b.pre_f1) + " vs best unimodal " + best_name + " " +
               pct(best);
    return c;
}

// ---- criterion 11: optimizer / scheduler / resume --------------------------

Criterion crit11() {
    Criterion c{11, "scheduler, Adam, resume"};
    const double t0 = now_s();

    {
        train::ReduceLROnPlateau s;  // patience 10, decay 0.1
        double lr = 1e-4;
        int decays = 0;
        for (int e = 0; e < 11; ++e) {
            auto r = s.observe(0.5, lr);
            lr = r.lr;
            if (r.decayed) ++decays;
            if (e < 10 && lr != 1e-4) {
                c.detail = "decay fired before the patience boundary (epoch " +
                           std::to_string(e) + ")";
                c.seconds = now_s() - t0;
                return c;
            }
        }
        if (decays != 1 || std::abs(lr - 1e-5) > 1e-18) {
            c.detail = "expected exactly one decay to 1e-5 at the eleventh plateau epoch";
            c.seconds = now_s() - t0;
            return c;
        }
    }

    {
        nn::Parameter<double> p;
        p.init_const({1}, 0.2);
        p.grad[0] = 0.5;
        train::Adam<double> adam;
        if (!adam.step({&p}, 0.1)) {
            c.detail = "adam rejected a finite step";
            c.seconds = now_s() - t0;
            return c;
        }
        const double m = (1.0 - 0.9) * 0.5;
        const double v = (1.0 - 0.999) * 0.25;
        const double expect =
            0.2 - 0.1 * (m / (1.0 - 0.9)) / (std::sqrt(v / (1.0 - 0.999)) + 1e-8);
        if (std::abs(p.value[0] - expect) > 1e-15) {
            c.detail = "first Adam step deviates from the closed form";
            c.seconds = now_s() - t0;
            return c;
        }
    }

    {
        auto acc = small_dataset("resume_data", 16, 4, 41);
        auto dir = work_dir("resume_files");
        auto cfg = tiny_config();
        auto ma = train::build_model(cfg, acc);
        auto ra = train::pretrain(*ma, acc, {});

        auto cfg_short = cfg;
        cfg_short.pretrain_epochs = 2;
        auto mb = train::build_model(cfg_short, acc);
        train::FitOptions save_opt;
        save_opt.checkpoint_path = (dir / "short.omnf").string();
        train::pretrain(*mb, acc, save_opt);

        auto loaded = train::load_checkpoint(save_opt.checkpoint_path);
        loaded.model->cfg.pretrain_epochs = cfg.pretrain_epochs;
        train::FitOptions resume_opt;
        resume_opt.resume = loaded.state;
        auto rb = train::pretrain(*loaded.model, acc, resume_opt);

        if (!values_equal(*ma, *loaded.model)) {
            c.detail = "resumed parameters deviate from the uninterrupted run";
            c.seconds = now_s() - t0;
            return c;
        }
        for (const auto& rec : rb.history) {
            if (rec.epoch >= static_cast<int>(ra.history.size()) ||
                !records_equal_ignoring_wall(rec, ra.history[rec.epoch])) {
                c.detail = "resumed epoch " + std::to_string(rec.epoch) +
                           " metrics deviate from the uninterrupted run";
                c.seconds = now_s() - t0;
                return c;
            }
        }
    }

    c.pass = true;
    c.detail = "plateau boundary, Adam closed form, bit-exact resume";
    c.seconds = now_s() - t0;
    return c;
}

// ---- criterion 12: F1 conventions ------------------------------------------

Criterion crit12() {
    Criterion c{12, "F1 hand cases"};
    const double t0 = now_s();

    train::F1Counts h(2);
    h.add({1, 1}, {1, 1});
    h.add({0, 1}, {1, 0});
    if (h.macro() != 2.0 / 3.0 || h.weighted() != 2.0 / 3.0 || h.micro() != 2.0 / 3.0) {
        c.detail = "two-class hand case deviates from 2/3";
        c.seconds = now_s() - t0;
        return c;
    }

    train::F1Counts z(3);
    z.add({1, 1, 0}, {1, 1, 0});
    z.add({0, 1, 0}, {1, 0, 0});
    if (z.f1(2) != 0.0 || z.support(2) != 0) {
        c.detail = "zero-support class must score 0 with support 0";
        c.seconds = now_s() - t0;
        return c;
    }
    if (z.macro() != (2.0 / 3.0 + 2.0 / 3.0 + 0.0) / 3.0 || z.weighted() != 2.0 / 3.0) {
        c.detail = "zero-support averaging conventions broken";
        c.seconds = now_s() - t0;
        return c;
    }

    c.pass = true;
    c.detail = "macro 2/3 exact; zero-support scores 0 and carries no weight";
    c.seconds = now_s() - t0;
    return c;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria runner"};
    std::vector<int> only;
    BenchOptions bo;
    app.add_option("--criterion", only, "run only these criterion numbers")->delimiter(',');
    app.add_option("--bench-tiles", bo.tiles, "benchmark dataset size");
    app.add_option("--bench-seeds", bo.seeds, "benchmark seed count");
    app.add_option("--bench-pretrain-epochs", bo.pretrain_epochs, "benchmark pretrain epochs");
    app.add_option("--bench-finetune-epochs", bo.finetune_epochs, "benchmark finetune epochs");
    app.add_option("--bench-dir", bo.dir,
                   "benchmark working directory (kept; pretrained checkpoints are reused)");
    CLI11_PARSE(app, argc, argv);

    std::set<int> want(only.begin(), only.end());
    auto wanted = [&](int id) { return want.empty() || want.count(id); };

    std::vector<Criterion> results;

    const bool need_suite = wanted(1) || wanted(2) || wanted(3) || wanted(4) || wanted(5) ||
                            wanted(6);
    if (need_suite) {
        auto suite = run_suite(100);
        if (wanted(1))
            results.push_back(from_checks(1, "match-matrix oracle (100 configs)", suite,
                                          {"match-matrix-oracle"}, 5.0));
        if (wanted(2))
            results.push_back(from_checks(2, "contrastive closed forms", suite,
                                          {"contrastive-closed-form"}, 5.0));
        if (wanted(3))
            results.push_back(from_checks(3, "loss oracles", suite,
                                          {"contrastive-oracle", "reconstruction-oracle"}, 60.0));
        if (wanted(4))
            results.push_back(from_checks(
                4, "gradient checks (64-bit)", suite,
                {"gradient-losses", "gradient-image-codec", "gradient-temporal-codec",
                 "gradient-fusion", "gradient-full-model"},
                120.0));
        if (wanted(5))
            results.push_back(
                from_checks(5, "unpool placement", suite, {"unpool-placement"}, 5.0));
        if (wanted(6))
            results.push_back(from_checks(6, "date filter top-k", suite, {"date-filter"}, 5.0));
    }

    if (wanted(7)) results.push_back(crit7());
    if (wanted(8)) results.push_back(crit8());

    if (wanted(9) || wanted(10)) {
        auto b = run_benchmark(bo);
        if (wanted(9)) results.push_back(crit9(b));
        if (wanted(10)) results.push_back(crit10(b));
    }

    if (wanted(11)) results.push_back(crit11());
    if (wanted(12)) results.push_back(crit12());

    std::sort(results.begin(), results.end(),
              [](const Criterion& a, const Criterion& b) { return a.id < b.id; });

    bool all = true;
    for (const auto& r : results) {
        all = all && r.pass;
        std::printf("%s  criterion %2d  %-34s %s (%.2fs)\n", r.pass ? "PASS" : "FAIL", r.id,
                    r.name.c_str(), r.detail.c_str(), r.seconds);
    }
    std::printf("%s: %zu/%zu criteria passed\n", all ? "OK" : "FAILED",
                static_cast<std::size_t>(std::count_if(results.begin(), results.end(),
                                                       [](const Criterion& r) { return r.pass; })),
                results.size());
    return all ? 0 : 1;
}
