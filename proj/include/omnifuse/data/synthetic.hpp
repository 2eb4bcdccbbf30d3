#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "omnifuse/data/types.hpp"

namespace omnifuse::data {

// Synthetic benchmark: one VHR image, one cloud-affected optical series and
// one radar series per tile, all rendered from a shared latent per-patch
// class field. The *_classes_* knobs let a modality render several classes
// identically, so that no single modality can separate the full vocabulary
// but the modalities jointly can.
struct SyntheticConfig {
    int n_classes = 8;
    int n_tiles = 64;
    int gx = 2, gy = 2;
    double cell_m = 40.0;

    int img_channels = 3;
    int img_patch_px = 8;

    int opt_channels = 4;
    int opt_len_min = 8, opt_len_max = 12;
    double cloud_prob = 0.15;

    int rad_channels = 2;
    int rad_len_min = 8, rad_len_max = 12;

    double noise = 0.05;

    // Per-cell growing-condition scale, drawn once per (tile, patch) and
    // rendered into every modality: within-class variation that corresponds
    // across sensors, so cross-modal matching has content beyond pixel noise
    // to latch onto. 0 disables.
    double cond_spread = 0.6;

    // 0 keeps all classes distinct in that modality
    int img_classes_mod = 0;  // image draws class k as signature k % img_classes_mod
    int opt_classes_div = 0;  // optical draws class k as signature k / opt_classes_div
    int rad_classes_mod = 0;  // radar draws class k as signature k % rad_classes_mod

    int coarse = 2;        // latent seed-grid subsampling factor
    int smooth_passes = 1;  // majority-smoothing iterations on the latent field
    bool debug_sidecar = false;

    void validate() const;

    int img_sig(int k) const { return img_classes_mod > 0 ? k % img_classes_mod : k; }
    int opt_sig(int k) const { return opt_classes_div > 0 ? k / opt_classes_div : k; }
    int rad_sig(int k) const { return rad_classes_mod > 0 ? k % rad_classes_mod : k; }
    int n_img_sigs() const { return img_classes_mod > 0 ? img_classes_mod : n_classes; }
    int n_opt_sigs() const {
        return opt_classes_div > 0 ? (n_classes + opt_classes_div - 1) / opt_classes_div : n_classes;
    }
    int n_rad_sigs() const { return rad_classes_mod > 0 ? rad_classes_mod : n_classes; }
};

// Per-signature rendering coefficients, a pure function of (config, seed).
struct ClassSignatures {
    // image: per signature mean color [C], texture frequency, orientation, per-channel phase
    std::vector<std::vector<double>> img_mean;
    std::vector<double> img_freq;
    std::vector<double> img_theta;
    std::vector<std::vector<double>> img_phase;
    // optical: seasonal sinusoid mean / amplitude / phase per channel
    std::vector<std::vector<double>> opt_mean, opt_amp, opt_phase;
    // radar: second-harmonic curve base / amplitude / phase per channel
    std::vector<std::vector<double>> rad_base, rad_amp, rad_phase;
};

ClassSignatures class_signatures(const SyntheticConfig& cfg, std::uint64_t seed);

// Noiseless signal values, exposed so tests can verify cross-modal footprint
// consistency against the latent field. `condition` is the cell's growing
// condition in [0,1]; it scales the clean signal by
// 1 + cond_spread * (condition - 0.5).
double image_signal(const ClassSignatures& s, const SyntheticConfig& cfg, int class_id, int c,
                    int y, int x, double condition);
double optical_signal(const ClassSignatures& s, const SyntheticConfig& cfg, int class_id, int c,
                      int day, double condition);
double radar_signal(const ClassSignatures& s, const SyntheticConfig& cfg, int class_id, int c,
                    int day, double condition);

constexpr double kCloudValue = 3.0;

struct SyntheticOutput {
    DatasetManifest manifest;  // splits left empty
    std::vector<MultimodalTile> tiles;
    std::vector<std::vector<int>> latents;           // per tile, row-major gy*gx class ids
    std::vector<std::vector<double>> conditions;     // per tile, row-major gy*gx cell conditions
    std::vector<std::vector<std::uint8_t>> clouds;   // per tile, optical per-date cloud flags
};

SyntheticOutput generate_synthetic(const SyntheticConfig& cfg, std::uint64_t seed);

// Writes tiles + manifest under root; debug sidecars (latent field and cloud
// flags) are written only when cfg.debug_sidecar is set.
void write_synthetic_dataset(SyntheticOutput& out, const SyntheticConfig& cfg,
                             const std::string& root);

}  // namespace omnifuse::data
