#include "omnifuse/verify/checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "omnifuse/core/rng.hpp"
#include "omnifuse/data/synthetic.hpp"
#include "omnifuse/data/tokenizer.hpp"
#include "omnifuse/model/fusion.hpp"
#include "omnifuse/model/image_codec.hpp"
#include "omnifuse/model/objectives.hpp"
#include "omnifuse/model/temporal_codec.hpp"
#include "omnifuse/nn/gradcheck.hpp"
#include "omnifuse/train/pipeline.hpp"

namespace omnifuse::verify {

namespace {

double now_s() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

template <typename Fn>
CheckResult timed(const std::string& name, Fn&& body) {
    CheckResult r;
    r.name = name;
    r.pass = true;
    const double t0 = now_s();
    try {
        body(r);
    } catch (const std::exception& e) {
        r.pass = false;
        if (r.detail.empty()) r.detail = e.what();
    }
    r.seconds = now_s() - t0;
    return r;
}

void fail(CheckResult& r, const std::string& what) {
    if (r.pass) r.detail = what;  // keep the first failure
    r.pass = false;
}

data::TokenIndex tok(const std::string& m, int p, const std::string& tile) {
    data::TokenIndex t;
    t.modality = m;
    t.patch = p;
    t.tile_id = tile;
    return t;
}

std::vector<data::TokenIndex> grid(int mods, int tiles, int patches) {
    std::vector<data::TokenIndex> out;
    for (int ti = 0; ti < tiles; ++ti)
        for (int m = 0; m < mods; ++m)
            for (int p = 0; p < patches; ++p)
                out.push_back(tok("m" + std::to_string(m), p, "t" + std::to_string(ti)));
    return out;
}

// The three pairing rules spelled out directly, independent of the
// production construction path.
model::Match classify(const data::TokenIndex& a, const data::TokenIndex& b, bool self) {
    if (self) return model::Match::Ignored;
    if (a.tile_id == b.tile_id && a.modality == b.modality) return model::Match::Ignored;
    if (a.tile_id == b.tile_id && a.patch == b.patch && a.modality != b.modality)
        return model::Match::Positive;
    return model::Match::Negative;
}

// Double-loop reference for both contrastive variants.
double oracle_contrastive(const std::vector<double>& e, int d,
                          const std::vector<data::TokenIndex>& idx, double gamma, bool naive) {
    const int t = static_cast<int>(idx.size());
    double total = 0;
    for (int i = 0; i < t; ++i) {
        std::vector<double> pos, den;
        for (int j = 0; j < t; ++j) {
            if (j == i) continue;
            const bool is_pos = idx[i].tile_id == idx[j].tile_id && idx[i].patch == idx[j].patch &&
                                idx[i].modality != idx[j].modality;
            const bool is_ign =
                !naive && idx[i].tile_id == idx[j].tile_id && idx[i].modality == idx[j].modality;
            double dot = 0;
            for (int k = 0; k < d; ++k)
                dot += e[static_cast<std::size_t>(i) * d + k] *
                       e[static_cast<std::size_t>(j) * d + k];
            const double s = dot / gamma;
            if (is_pos) {
                pos.push_back(s);
                den.push_back(s);
            } else if (!is_ign) {
                den.push_back(s);
            }
        }
        const double mx = *std::max_element(den.begin(), den.end());
        double num_sum = 0, den_sum = 0;
        for (double v : pos) num_sum += std::exp(v - mx);
        for (double v : den) den_sum += std::exp(v - mx);
        total += -(std::log(num_sum) - std::log(den_sum));
    }
    return total / t;
}

std::vector<double> randn(std::int64_t n, std::uint64_t seed) {
    Rng rng(Rng::derive(seed, {0x766672ULL}));
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal(0.0, 1.0);
    return v;
}

void make_identity(model::ImageCodec<double>& c) {
    c.linear = true;
    for (auto& st : c.enc) {
        std::fill(st.w.value.begin(), st.w.value.end(), 0.0);
        st.w.value[4] = 1.0;
    }
    for (auto& st : c.dec) {
        std::fill(st.w.value.begin(), st.w.value.end(), 0.0);
        st.w.value[4] = 1.0;
    }
}

std::string entry_str(const nn::GradCheckEntry& e) {
    std::ostringstream os;
    os << e.param << "[" << e.index << "] analytic " << e.analytic << " vs numeric " << e.numeric
       << " (rel " << e.rel_err << ")";
    return os.str();
}

void run_gradcheck(CheckResult& r, const std::vector<nn::Parameter<double>*>& ps,
                   const std::function<double(bool)>& loss, double tol, std::uint64_t seed,
                   int entries) {
    auto rep = nn::gradient_check(ps, loss, tol, seed, entries);
    r.cases += rep.checked;
    if (!rep.ok()) fail(r, entry_str(rep.failures.front()));
}

CheckResult check_match_matrix(int seeds) {
    return timed("match-matrix-oracle", [&](CheckResult& r) {
        for (std::uint64_t seed = 0; seed < static_cast<std::uint64_t>(seeds); ++seed) {
            Rng rng(Rng::derive(9009, {seed}));
            const int mods = static_cast<int>(rng.uniform_int(2, 4));
            const int tiles = static_cast<int>(rng.uniform_int(1, 4));
            const int patches = static_cast<int>(rng.uniform_int(1, 4));
            std::vector<data::TokenIndex> idx;
            for (int ti = 0; ti < tiles; ++ti)
                for (int m = 0; m < mods; ++m)
                    for (int p = 0; p < patches; ++p)
                        if (rng.uniform() < 0.7)
                            idx.push_back(tok("m" + std::to_string(m), p, "t" + std::to_string(ti)));
            if (idx.empty()) idx.push_back(tok("m0", 0, "t0"));
            auto mm = model::build_match_matrix(idx);
            const int t = static_cast<int>(idx.size());
            for (int i = 0; i < t; ++i)
                for (int j = 0; j < t; ++j) {
                    ++r.cases;
                    if (mm.at(i, j) != classify(idx[i], idx[j], i == j))
                        fail(r, "seed " + std::to_string(seed) + ": pair (" + std::to_string(i) +
                                    "," + std::to_string(j) + ") disagrees with the rule table");
                }
        }
    });
}

CheckResult check_contrastive_closed_form() {
    return timed("contrastive-closed-form", [&](CheckResult& r) {
        auto idx = grid(3, 2, 2);
        auto mm = model::build_match_matrix(idx);
        std::vector<double> e(12 * 4, 0.3);
        const double std_got = model::contrastive_loss(e, 12, 4, mm, 0.1).value;
        const double std_want = -std::log(2.0 / 10.0);
        ++r.cases;
        if (std::abs(std_got - std_want) > 1e-9)
            fail(r, "standard variant: got " + std::to_string(std_got) + ", want -log(2/10)");
        const double nv_got = model::naive_contrastive_loss(e, 12, 4, mm, 0.1).value;
        const double nv_want = -std::log(2.0 / 11.0);
        ++r.cases;
        if (std::abs(nv_got - nv_want) > 1e-9)
            fail(r, "naive variant: got " + std::to_string(nv_got) + ", want -log(2/11)");
    });
}

CheckResult check_contrastive_oracle(int seeds) {
    return timed("contrastive-oracle", [&](CheckResult& r) {
        for (std::uint64_t seed = 0; seed < static_cast<std::uint64_t>(seeds); ++seed) {
            Rng rng(Rng::derive(4242, {seed}));
            const int mods = static_cast<int>(rng.uniform_int(2, 4));
            const int tiles = static_cast<int>(rng.uniform_int(1, 3));
            const int patches = static_cast<int>(rng.uniform_int(1, 4));
            auto idx = grid(mods, tiles, patches);
            const int t = static_cast<int>(idx.size());
            const int d = 8;
            auto e = randn(static_cast<std::int64_t>(t) * d, seed + 1);
            auto mm = model::build_match_matrix(idx);
            const double gamma = seed % 2 ? 0.1 : 0.7;
            for (bool naive : {false, true}) {
                const double got = model::contrastive_loss(e, t, d, mm, gamma, naive).value;
                const double want = oracle_contrastive(e, d, idx, gamma, naive);
                ++r.cases;
                if (std::abs(got - want) > 1e-6 * std::max(1.0, std::abs(want)))
                    fail(r, "seed " + std::to_string(seed) + (naive ? " naive" : " standard") +
                                ": got " + std::to_string(got) + ", oracle " +
                                std::to_string(want));
            }
        }
    });
}

CheckResult check_reconstruction_oracle(int seeds) {
    return timed("reconstruction-oracle", [&](CheckResult& r) {
        for (std::uint64_t seed = 0; seed < static_cast<std::uint64_t>(seeds); ++seed) {
            Rng rng(Rng::derive(7117, {seed}));
            const int n = static_cast<int>(rng.uniform_int(1, 6));
            std::vector<model::ReconInstance> inst(n);
            double want = 0;
            for (auto& it : inst) {
                const int dim = static_cast<int>(rng.uniform_int(1, 64));
                it.decoded.resize(dim);
                it.target.resize(dim);
                it.dim_eff = dim;
                double sq = 0;
                for (int k = 0; k < dim; ++k) {
                    it.decoded[k] = rng.normal(0.0, 1.0);
                    it.target[k] = rng.normal(0.0, 1.0);
                    sq += (it.decoded[k] - it.target[k]) * (it.decoded[k] - it.target[k]);
                }
                want += sq / dim;
            }
            want /= n;
            const double got = model::reconstruction_loss(inst).value;
            ++r.cases;
            if (std::abs(got - want) > 1e-9 * std::max(1.0, std::abs(want)))
                fail(r, "seed " + std::to_string(seed) + ": got " + std::to_string(got) +
                            ", oracle " + std::to_string(want));
        }
    });
}

CheckResult check_gradient_losses(const std::string& inject) {
    return timed("gradient-losses", [&](CheckResult& r) {
        auto idx = grid(3, 2, 2);
        auto mm = model::build_match_matrix(idx);
        auto e = randn(12 * 8, 5);
        for (bool naive : {false, true}) {
            auto base = model::contrastive_loss(e, 12, 8, mm, 0.1, naive);
            // coordinate 7 is on the finite-difference sampling stride below
            if (inject == "grad" && !naive) base.grad[7] *= 2.0;
            const double h = 1e-6;
            for (std::size_t k = 0; k < e.size(); k += 7) {
                auto ep = e, em = e;
                ep[k] += h;
                em[k] -= h;
                const double fd = (model::contrastive_loss(ep, 12, 8, mm, 0.1, naive).value -
                                   model::contrastive_loss(em, 12, 8, mm, 0.1, naive).value) /
                                  (2 * h);
                const double rel = std::abs(base.grad[k] - fd) /
                                   std::max(1e-6, std::abs(base.grad[k]) + std::abs(fd));
                ++r.cases;
                if (rel > 1e-4)
                    fail(r, std::string(naive ? "naive" : "standard") + " contrastive: e[" +
                                std::to_string(k) + "] analytic " + std::to_string(base.grad[k]) +
                                " vs numeric " + std::to_string(fd));
            }
        }
        // reconstruction gradients, coordinate by coordinate
        std::vector<model::ReconInstance> inst(2);
        for (std::size_t i = 0; i < inst.size(); ++i) {
            const int dim = i == 0 ? 5 : 9;
            auto dv = randn(dim, 100 + i), tv = randn(dim, 200 + i);
            inst[i].decoded = dv;
            inst[i].target = tv;
            inst[i].dim_eff = dim;
        }
        auto base = model::reconstruction_loss(inst);
        const double h = 1e-6;
        for (std::size_t i = 0; i < inst.size(); ++i)
            for (std::size_t k = 0; k < inst[i].decoded.size(); ++k) {
                auto plus = inst, minus = inst;
                plus[i].decoded[k] += h;
                minus[i].decoded[k] -= h;
                const double fd = (model::reconstruction_loss(plus).value -
                                   model::reconstruction_loss(minus).value) /
                                  (2 * h);
                const double rel = std::abs(base.grads[i][k] - fd) /
                                   std::max(1e-6, std::abs(base.grads[i][k]) + std::abs(fd));
                ++r.cases;
                if (rel > 1e-4)
                    fail(r, "reconstruction: instance " + std::to_string(i) + " coord " +
                                std::to_string(k) + " analytic " +
                                std::to_string(base.grads[i][k]) + " vs numeric " +
                                std::to_string(fd));
            }
    });
}

CheckResult check_gradient_image_codec() {
    return timed("gradient-image-codec", [&](CheckResult& r) {
        Rng rng(13);
        model::ImageCodec<double> c;
        c.init(2, 4, 8, {2, 2}, rng);
        nn::ParamRegistry<double> reg;
        c.register_params(reg, "img");
        const auto x = randn(2 * 2 * 4 * 4, 21);
        auto loss = [&](bool need_grad) {
            nn::Graph<double> g;
            g.set_inference(!need_grad);
            auto xv = g.leaf({2, 2, 4, 4}, x);
            model::PoolTrace trace;
            auto y = c.decode(g, c.encode(g, xv, &trace), trace);
            auto diff = nn::sub(g, y, xv);
            auto l = nn::sum(g, nn::mul(g, diff, diff));
            if (need_grad) g.backward(l);
            return l.scalar();
        };
        run_gradcheck(r, reg.items(), loss, 1e-3, 17, 400);
    });
}

CheckResult check_gradient_temporal_codec() {
    return timed("gradient-temporal-codec", [&](CheckResult& r) {
        Rng rng(19);
        model::TemporalCodec<double> c;
        c.init(2, 8, 2, rng);
        nn::ParamRegistry<double> reg;
        c.register_params(reg, "ts");
        data::TokenRaw tk;
        tk.shape = {2, 3};
        auto vals = randn(6, 71);
        tk.v.assign(vals.begin(), vals.end());
        tk.days = {10, 33, 56};
        auto loss = [&](bool need_grad) {
            nn::Graph<double> g;
            g.set_inference(!need_grad);
            auto emb = c.encode(g, {&tk}, nullptr);
            auto dec = c.decode(g, emb, {{tk.days[0], tk.days[1], tk.days[2]}});
            std::vector<double> target(6);
            for (int s = 0; s < 3; ++s)
                for (int ch = 0; ch < 2; ++ch)
                    target[static_cast<std::size_t>(s) * 2 + ch] =
                        tk.v[static_cast<std::size_t>(ch) * 3 + s];
            auto diff = nn::sub(g, dec, g.leaf({3, 2}, target));
            auto l = nn::sum(g, nn::mul(g, diff, diff));
            if (need_grad) g.backward(l);
            return l.scalar();
        };
        run_gradcheck(r, reg.items(), loss, 1e-3, 23, 400);
    });
}

CheckResult check_gradient_fusion() {
    return timed("gradient-fusion", [&](CheckResult& r) {
        data::TokenBatch batch;
        const double cell = 10.0;
        for (const std::string m : {"a", "b", "c"})
            for (int p = 0; p < 2; ++p) {
                data::TokenIndex ti = tok(m, p, "t0");
                ti.pos_x_m = (p % 2 + 0.5) * cell;
                ti.pos_y_m = 0.5 * cell;
                batch.indices.push_back(ti);
            }
        auto ms = model::mask_tokens(batch, 0.3, model::MaskStrategy::Random, 21);
        auto base = randn(6 * 8, 5);
        for (bool abs_mode : {false, true}) {
            Rng rng(abs_mode ? 106 : 105);
            model::Fusion<double> f;
            f.init(8, 2, 1, cell, std::sqrt(2.0) * 2 * cell, abs_mode, 4, rng);
            nn::ParamRegistry<double> reg;
            f.register_params(reg, "fusion");
            const auto w = randn(2 * 8, 6);
            auto loss = [&](bool need_grad) {
                nn::Graph<double> g;
                g.set_inference(!need_grad);
                auto out = f.combine(g, g.leaf({6, 8}, base), batch, &ms.masked);
                auto l = nn::sum(g, nn::mul(g, out.fused, g.leaf({2, 8}, w)));
                if (need_grad) g.backward(l);
                return l.scalar();
            };
            run_gradcheck(r, reg.items(), loss, 1e-3, 31, 400);
        }
    });
}

CheckResult check_gradient_full_model() {
    return timed("gradient-full-model", [&](CheckResult& r) {
        data::SyntheticConfig scfg;
        scfg.n_classes = 3;
        scfg.n_tiles = 2;
        scfg.img_channels = 2;
        scfg.img_patch_px = 8;
        scfg.opt_channels = 2;
        scfg.opt_len_min = 6;
        scfg.opt_len_max = 8;
        scfg.rad_channels = 2;
        scfg.rad_len_min = 6;
        scfg.rad_len_max = 8;
        auto syn = data::generate_synthetic(scfg, 97);
        const auto& specs = syn.manifest.modalities;
        auto sample = data::tokenize(syn.tiles[0], specs);

        train::TrainConfig cfg;
        cfg.d = 8;
        cfg.blocks = 1;
        cfg.heads = 2;
        cfg.seed = 7;
        train::OmniModel<double> m;
        m.init(cfg, train::modality_shapes(syn.manifest, {}, sample),
               static_cast<int>(syn.manifest.label_vocab.size()), syn.tiles[0].gx,
               syn.tiles[0].gy, syn.manifest.grid_cell_m);

        auto batch = data::assemble_batch({syn.tiles[0], syn.tiles[1]}, specs);
        auto loss = [&](bool need_grad) {
            nn::Graph<double> g;
            auto l = train::build_pretrain_loss(g, m, batch, 0x5eed);
            if (need_grad) g.backward(l.total);
            return l.total.scalar();
        };
        run_gradcheck(r, m.reg.items(), loss, 1e-3, 7, 200);
    });
}

CheckResult check_unpool_placement() {
    return timed("unpool-placement", [&](CheckResult& r) {
        Rng rng(7);
        nn::Graph<double> g;

        model::ImageCodec<double> c;
        c.init(1, 2, 1, {2}, rng);
        make_identity(c);
        model::PoolTrace trace;
        auto x = g.leaf({1, 1, 2, 2}, std::vector<double>{0.5, 7.0, 1.0, 2.0});
        auto emb = c.encode(g, x, &trace);
        const auto traced = c.decode(g, emb, trace).value();
        ++r.cases;
        if (traced != std::vector<double>{0, 7, 0, 0})
            fail(r, "bypass decode moved the max away from its traced offset");
        c.index_bypass = false;
        const auto fixed = c.decode(g, emb, trace).value();
        ++r.cases;
        if (fixed != std::vector<double>{7, 0, 0, 0})
            fail(r, "fixed decode did not place the max at the cell corner");

        // two stages: the surviving global max lands back at its source pixel
        model::ImageCodec<double> c2;
        c2.init(1, 4, 1, {2, 2}, rng);
        make_identity(c2);
        std::vector<double> big(16, 0.0);
        big[9] = 5.0;
        model::PoolTrace t2;
        auto y2 = c2.decode(g, c2.encode(g, g.leaf({1, 1, 4, 4}, big), &t2), t2).value();
        for (int i = 0; i < 16; ++i) {
            ++r.cases;
            if (std::abs(y2[i] - (i == 9 ? 5.0 : 0.0)) > 1e-12)
                fail(r, "two-stage decode wrote " + std::to_string(y2[i]) + " at pixel " +
                            std::to_string(i));
        }
    });
}

std::vector<int> brute_dates(const std::vector<double>& trace, double fraction) {
    const int L = static_cast<int>(trace.size());
    const int k = std::max(1, static_cast<int>(std::ceil(fraction * L)));
    std::vector<int> idx(L);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        if (trace[a] != trace[b]) return trace[a] > trace[b];
        return a < b;
    });
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

CheckResult check_date_filter(int seeds) {
    return timed("date-filter", [&](CheckResult& r) {
        for (int L : {4, 8, 12, 61}) {
            std::vector<double> trace(L);
            for (int i = 0; i < L; ++i) trace[i] = std::cos(0.7 * i) + 0.01 * (i % 3);
            auto got = model::select_reconstruction_dates(
                trace, std::vector<std::uint8_t>(L, 1), 0.25);
            ++r.cases;
            if (static_cast<int>(got.size()) !=
                std::max(1, static_cast<int>(std::ceil(0.25 * L))))
                fail(r, "L=" + std::to_string(L) + ": selected " + std::to_string(got.size()) +
                            " dates");
            ++r.cases;
            if (got != brute_dates(trace, 0.25))
                fail(r, "L=" + std::to_string(L) + ": selection differs from sorted top-k");
        }
        // ties must resolve to the lowest index
        auto tied = model::select_reconstruction_dates({1.0, 1.0, 1.0, 1.0},
                                                       std::vector<std::uint8_t>(4, 1), 0.25);
        ++r.cases;
        if (tied != std::vector<int>{0}) fail(r, "all-equal trace did not pick index 0");

        for (std::uint64_t seed = 0; seed < static_cast<std::uint64_t>(seeds); ++seed) {
            Rng rng(Rng::derive(3131, {seed}));
            const int L = static_cast<int>(rng.uniform_int(1, 64));
            std::vector<double> trace(L);
            for (auto& v : trace) v = 0.1 * static_cast<double>(rng.uniform_int(0, 5));  // forces ties
            auto got = model::select_reconstruction_dates(
                trace, std::vector<std::uint8_t>(L, 1), 0.25);
            ++r.cases;
            if (got != brute_dates(trace, 0.25))
                fail(r, "seed " + std::to_string(seed) + ": selection differs from sorted top-k");
        }
    });
}

}  // namespace

std::vector<CheckResult> run_checks(const CheckOptions& opt) {
    std::vector<CheckResult> out;
    out.push_back(check_match_matrix(opt.seeds));
    out.push_back(check_contrastive_closed_form());
    out.push_back(check_contrastive_oracle(opt.seeds));
    out.push_back(check_reconstruction_oracle(opt.seeds));
    out.push_back(check_gradient_losses(opt.inject_fault));
    out.push_back(check_gradient_image_codec());
    out.push_back(check_gradient_temporal_codec());
    out.push_back(check_gradient_fusion());
    out.push_back(check_gradient_full_model());
    out.push_back(check_unpool_placement());
    out.push_back(check_date_filter(opt.seeds));
    return out;
}

}  // namespace omnifuse::verify
