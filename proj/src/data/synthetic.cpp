#include "omnifuse/data/synthetic.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "omnifuse/core/parallel.hpp"
#include "omnifuse/core/rng.hpp"
#include "omnifuse/data/dataset.hpp"

namespace omnifuse::data {

namespace {

constexpr double kPi = 3.14159265358979323846;

// stream tags for deriving independent per-purpose RNGs
constexpr std::uint64_t kStreamClasses = 0xc1a55e5;
constexpr std::uint64_t kStreamTile = 0x711e;
constexpr std::uint64_t kSubLatent = 1, kSubImage = 2, kSubOptical = 3, kSubRadar = 4;

std::vector<int> latent_field(const SyntheticConfig& cfg, Rng& rng) {
    const int gy = cfg.gy, gx = cfg.gx, k = cfg.coarse;
    const int ch = (gy + k - 1) / k, cw = (gx + k - 1) / k;
    std::vector<int> coarse(static_cast<std::size_t>(ch) * cw);
    for (auto& c : coarse) c = static_cast<int>(rng.uniform_int(0, cfg.n_classes - 1));
    std::vector<int> field(static_cast<std::size_t>(gy) * gx);
    for (int r = 0; r < gy; ++r)
        for (int c = 0; c < gx; ++c) field[r * gx + c] = coarse[(r / k) * cw + c / k];

    // majority over the 3x3 neighborhood; the incumbent survives ties, other
    // ties resolve to the smallest class id
    std::vector<int> counts(static_cast<std::size_t>(cfg.n_classes));
    for (int pass = 0; pass < cfg.smooth_passes; ++pass) {
        std::vector<int> next(field.size());
        for (int r = 0; r < gy; ++r)
            for (int c = 0; c < gx; ++c) {
                std::fill(counts.begin(), counts.end(), 0);
                for (int dr = -1; dr <= 1; ++dr)
                    for (int dc = -1; dc <= 1; ++dc) {
                        const int rr = r + dr, cc = c + dc;
                        if (rr < 0 || rr >= gy || cc < 0 || cc >= gx) continue;
                        ++counts[field[rr * gx + cc]];
                    }
                const int cur = field[r * gx + c];
                int best = cur;
                for (int cls = 0; cls < cfg.n_classes; ++cls)
                    if (counts[cls] > counts[best]) best = cls;
                next[r * gx + c] = (counts[cur] == counts[best]) ? cur : best;
            }
        field = std::move(next);
    }
    return field;
}

std::vector<int> sorted_days(Rng& rng, int len) {
    auto raw = rng.sample_without_replacement(365, len);
    std::vector<int> days(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) days[i] = static_cast<int>(raw[i]) + 1;
    std::sort(days.begin(), days.end());
    return days;
}

}  // namespace

void SyntheticConfig::validate() const {
    check(n_classes >= 1, "synthetic: n_classes must be positive");
    check(n_tiles >= 1, "synthetic: n_tiles must be positive");
    check(gx >= 1 && gy >= 1, "synthetic: grid dims must be positive");
    check(cell_m > 0, "synthetic: cell_m must be positive");
    check(img_channels >= 1 && img_patch_px >= 1, "synthetic: image dims must be positive");
    check(opt_channels >= 1 && rad_channels >= 1, "synthetic: series channels must be positive");
    check(1 <= opt_len_min && opt_len_min <= opt_len_max && opt_len_max <= 365,
          "synthetic: optical length range invalid");
    check(1 <= rad_len_min && rad_len_min <= rad_len_max && rad_len_max <= 365,
          "synthetic: radar length range invalid");
    check(0.0 <= cloud_prob && cloud_prob < 1.0, "synthetic: cloud_prob must lie in [0,1)");
    check(noise >= 0.0, "synthetic: noise must be nonnegative");
    check(coarse >= 1 && smooth_passes >= 0, "synthetic: latent field knobs invalid");
}

ClassSignatures class_signatures(const SyntheticConfig& cfg, std::uint64_t seed) {
    Rng rng(Rng::derive(seed, {kStreamClasses}));
    ClassSignatures s;
    for (int k = 0; k < cfg.n_img_sigs(); ++k) {
        std::vector<double> mean(cfg.img_channels), phase(cfg.img_channels);
        for (auto& v : mean) v = rng.uniform(0.25, 0.75);
        s.img_freq.push_back(rng.uniform(1.0, 4.0));
        s.img_theta.push_back(rng.uniform(0.0, kPi));
        for (auto& v : phase) v = rng.uniform(0.0, 2 * kPi);
        s.img_mean.push_back(std::move(mean));
        s.img_phase.push_back(std::move(phase));
    }
    for (int k = 0; k < cfg.n_opt_sigs(); ++k) {
        std::vector<double> mean(cfg.opt_channels), amp(cfg.opt_channels), phase(cfg.opt_channels);
        for (auto& v : mean) v = rng.uniform(0.2, 0.7);
        for (auto& v : amp) v = rng.uniform(0.3, 0.8);
        for (auto& v : phase) v = rng.uniform(0.0, 2 * kPi);
        s.opt_mean.push_back(std::move(mean));
        s.opt_amp.push_back(std::move(amp));
        s.opt_phase.push_back(std::move(phase));
    }
    for (int k = 0; k < cfg.n_rad_sigs(); ++k) {
        std::vector<double> base(cfg.rad_channels), amp(cfg.rad_channels), phase(cfg.rad_channels);
        for (auto& v : base) v = rng.uniform(0.4, 1.0);
        for (auto& v : amp) v = rng.uniform(0.1, 0.4);
        for (auto& v : phase) v = rng.uniform(0.0, 2 * kPi);
        s.rad_base.push_back(std::move(base));
        s.rad_amp.push_back(std::move(amp));
        s.rad_phase.push_back(std::move(phase));
    }
    return s;
}

namespace {
double cond_scale(const SyntheticConfig& cfg, double condition) {
    return 1.0 + cfg.cond_spread * (condition - 0.5);
}
}  // namespace

double image_signal(const ClassSignatures& s, const SyntheticConfig& cfg, int class_id, int c,
                    int y, int x, double condition) {
    const int sig = cfg.img_sig(class_id);
    const double ux = (x + 0.5) / cfg.img_patch_px, uy = (y + 0.5) / cfg.img_patch_px;
    const double u = ux * std::cos(s.img_theta[sig]) + uy * std::sin(s.img_theta[sig]);
    const double clean =
        s.img_mean[sig][c] + 0.15 * std::sin(2 * kPi * s.img_freq[sig] * u + s.img_phase[sig][c]);
    return clean * cond_scale(cfg, condition);
}

double optical_signal(const ClassSignatures& s, const SyntheticConfig& cfg, int class_id, int c,
                      int day, double condition) {
    const int sig = cfg.opt_sig(class_id);
    const double clean =
        s.opt_mean[sig][c] + s.opt_amp[sig][c] * std::sin(2 * kPi * day / 365.0 + s.opt_phase[sig][c]);
    return clean * cond_scale(cfg, condition);
}

double radar_signal(const ClassSignatures& s, const SyntheticConfig& cfg, int class_id, int c,
                    int day, double condition) {
    const int sig = cfg.rad_sig(class_id);
    const double clean =
        s.rad_base[sig][c] + s.rad_amp[sig][c] * std::sin(4 * kPi * day / 365.0 + s.rad_phase[sig][c]);
    return clean * cond_scale(cfg, condition);
}

SyntheticOutput generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const ClassSignatures sigs = class_signatures(cfg, seed);
    const int W = cfg.img_patch_px, gy = cfg.gy, gx = cfg.gx;

    SyntheticOutput out;
    out.manifest.grid_cell_m = cfg.cell_m;
    out.manifest.modalities = {
        {"vhr", ModalityKind::Image, cfg.img_channels, W, 0, cfg.cell_m / W},
        {"optical_ts", ModalityKind::TimeSeries, cfg.opt_channels, 0, cfg.opt_len_max, cfg.cell_m},
        {"radar_ts", ModalityKind::TimeSeries, cfg.rad_channels, 0, cfg.rad_len_max, cfg.cell_m},
    };
    for (int k = 0; k < cfg.n_classes; ++k) out.manifest.label_vocab.push_back("class_" + std::to_string(k));

    out.tiles.resize(cfg.n_tiles);
    out.latents.resize(cfg.n_tiles);
    out.conditions.resize(cfg.n_tiles);
    out.clouds.resize(cfg.n_tiles);

    parallel_for(cfg.n_tiles, [&](std::int64_t i) {
        MultimodalTile tile;
        char idbuf[32];
        std::snprintf(idbuf, sizeof idbuf, "tile_%06lld", static_cast<long long>(i));
        tile.tile_id = idbuf;
        tile.gx = gx;
        tile.gy = gy;

        Rng lat_rng(Rng::derive(seed, {kStreamTile, static_cast<std::uint64_t>(i), kSubLatent}));
        const std::vector<int> latent = latent_field(cfg, lat_rng);
        // per-cell growing condition, shared by every modality of the cell
        std::vector<double> cond(latent.size());
        for (auto& a : cond) a = lat_rng.uniform();

        std::vector<std::uint8_t> labels(cfg.n_classes, 0);
        for (int cls : latent) labels[cls] = 1;
        tile.set_labels(std::move(labels));

        {  // image: class mean color + oriented texture + pixel noise
            Rng rng(Rng::derive(seed, {kStreamTile, static_cast<std::uint64_t>(i), kSubImage}));
            TileArray arr;
            arr.shape = {cfg.img_channels, gy * W, gx * W};
            arr.v.resize(static_cast<std::size_t>(numel(arr.shape)));
            for (int pr = 0; pr < gy; ++pr)
                for (int pc = 0; pc < gx; ++pc) {
                    const int cls = latent[pr * gx + pc];
                    for (int c = 0; c < cfg.img_channels; ++c)
                        for (int y = 0; y < W; ++y)
                            for (int x = 0; x < W; ++x) {
                                const double v =
                                    image_signal(sigs, cfg, cls, c, y, x) + cfg.noise * rng.normal();
                                arr.v[(static_cast<std::size_t>(c) * gy * W + pr * W + y) * gx * W +
                                      pc * W + x] = static_cast<float>(v);
                            }
                }
            tile.arrays.emplace("vhr", std::move(arr));
        }

        {  // optical series: seasonal sinusoid; clouded dates saturate all channels
            Rng rng(Rng::derive(seed, {kStreamTile, static_cast<std::uint64_t>(i), kSubOptical}));
            const int len = static_cast<int>(rng.uniform_int(cfg.opt_len_min, cfg.opt_len_max));
            const std::vector<int> days = sorted_days(rng, len);
            std::vector<std::uint8_t> cloud(len, 0);
            for (auto& cl : cloud) cl = rng.uniform() < cfg.cloud_prob ? 1 : 0;
            TileArray arr;
            arr.shape = {gy, gx, cfg.opt_channels, len};
            arr.v.resize(static_cast<std::size_t>(numel(arr.shape)));
            arr.timestamps = days;
            for (int pr = 0; pr < gy; ++pr)
                for (int pc = 0; pc < gx; ++pc) {
                    const int cls = latent[pr * gx + pc];
                    for (int c = 0; c < cfg.opt_channels; ++c)
                        for (int t = 0; t < len; ++t) {
                            const double v = cloud[t]
                                                 ? kCloudValue + 0.1 * rng.normal()
                                                 : optical_signal(sigs, cfg, cls, c, days[t]) +
                                                       cfg.noise * rng.normal();
                            arr.v[((static_cast<std::size_t>(pr) * gx + pc) * cfg.opt_channels + c) * len +
                                  t] = static_cast<float>(v);
                        }
                }
            tile.arrays.emplace("optical_ts", std::move(arr));
            out.clouds[i] = std::move(cloud);
        }

        {  // radar series: second-harmonic curve with multiplicative noise, never clouded
            Rng rng(Rng::derive(seed, {kStreamTile, static_cast<std::uint64_t>(i), kSubRadar}));
            const int len = static_cast<int>(rng.uniform_int(cfg.rad_len_min, cfg.rad_len_max));
            const std::vector<int> days = sorted_days(rng, len);
            TileArray arr;
            arr.shape = {gy, gx, cfg.rad_channels, len};
            arr.v.resize(static_cast<std::size_t>(numel(arr.shape)));
            arr.timestamps = days;
            for (int pr = 0; pr < gy; ++pr)
                for (int pc = 0; pc < gx; ++pc) {
                    const int cls = latent[pr * gx + pc];
                    for (int c = 0; c < cfg.rad_channels; ++c)
                        for (int t = 0; t < len; ++t) {
                            const double v = radar_signal(sigs, cfg, cls, c, days[t]) *
                                             std::exp(2.0 * cfg.noise * rng.normal());
                            arr.v[((static_cast<std::size_t>(pr) * gx + pc) * cfg.rad_channels + c) * len +
                                  t] = static_cast<float>(v);
                        }
                }
            tile.arrays.emplace("radar_ts", std::move(arr));
        }

        out.latents[i] = latent;
        out.tiles[i] = std::move(tile);
    });

    return out;
}

void write_synthetic_dataset(SyntheticOutput& out, const SyntheticConfig& cfg,
                             const std::string& root) {
    save_dataset(out.manifest, out.tiles, root);
    if (!cfg.debug_sidecar) return;
    namespace fs = std::filesystem;
    for (std::size_t i = 0; i < out.tiles.size(); ++i) {
        nlohmann::ordered_json j;
        j["latent"] = out.latents[i];
        j["clouds"] = {{"optical_ts", std::vector<int>(out.clouds[i].begin(), out.clouds[i].end())}};
        const std::string path =
            (fs::path(root) / "tiles" / (out.tiles[i].tile_id + ".debug.json")).string();
        std::ofstream f(path, std::ios::trunc);
        if (!f) throw std::runtime_error("write_synthetic_dataset: cannot open " + path);
        f << j.dump(2) << "\n";
    }
}

}  // namespace omnifuse::data
