#pragma once

#include "coda/awareness.hpp"
#include "coda/hexplane.hpp"
#include "coda/losses.hpp"
#include "coda/rasterizer.hpp"
#include "coda/scene.hpp"
#include "coda/synthetic.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace coda {

struct TrainingConfig {
    std::string data;
    std::string split = "reconstruction";
    std::uint64_t total_steps = 3000;
    std::uint64_t static_phase_steps = 1200;
    double lr_start = 1.6e-3;
    double lr_end = 1.6e-4;
    LossWeights weights;
    std::size_t feature_dim = 8;
    std::size_t time_embed_dim = 64;
    std::size_t hexplane_levels = 2;
    std::size_t hexplane_base_res = 16;
    std::size_t hexplane_features = 8;
    std::size_t latent_hidden = 64;
    std::size_t latent_dim = 64;
    std::size_t head_hidden = 64;
    bool dcn_enabled = true;
    bool use_f_time = true;
    bool use_f_con = true;
    bool use_f_def = true;
    std::uint64_t prune_interval = 500;
    double prune_opacity = 0.005;
    std::uint64_t seed = 1;
    std::string text; // original config text, embedded in checkpoints
};

TrainingConfig parse_training_config(const std::string& text, const std::string& origin);
TrainingConfig load_training_config(const std::string& path);

// Canonical scene plus the deformation field and compensation network. The
// compensation network is always constructed (even when disabled) so the
// seed stream is identical across that toggle.
struct Model {
    TrainingConfig cfg;
    std::uint64_t frames = 0; // time base: frame index = round(t * (frames - 1))
    double background[3] = {0, 0, 0};
    GaussianScene scene;
    DeformationField field;
    Dcn dcn;
    std::uint64_t step = 0;
    std::mt19937_64 rng;

    Model() = default;
    Model(const TrainingConfig& cfg, const Dataset& data);

    std::uint64_t tau_of(double t) const;

    // Per-Gaussian attribute arrays after deformation and compensation.
    // With apply_field false the canonical attributes are copied through
    // (used by the static phase; identical to the field path at init).
    struct Deformed {
        double t = 0.0;
        bool applied = false;
        bool compensated = false;
        std::vector<double> positions, log_scales, rotations; // [N,3],[N,3],[N,4]
        std::vector<double> features_hat;                     // [N,F], normalized f_con
        std::vector<double> fcon_norm;                        // [N]
        std::vector<double> f_time;
        std::vector<DeformationField::Cache> def_caches;  // only with_caches
        std::vector<Dcn::Cache> dcn_caches;               // only with_caches
    };

    Deformed deform_all(double t, bool apply_field, bool with_caches) const;
    RenderAttributes attrs_of(const Deformed& d) const;

    RenderOutput render_view(const Camera& cam, double t, const RasterConfig& rcfg,
                             const double* feature_background,
                             RenderCache* cache = nullptr) const;
};

struct Trainer {
    Model model;
    const Dataset* data = nullptr;
    std::vector<ParamBlock*> blocks;      // scene blocks first, then field, then dcn
    std::size_t n_scene_blocks = 0;
    std::size_t n_dcn_blocks = 0;
    std::vector<AdamState> adam;
    std::string loss_csv;

    Trainer(const TrainingConfig& cfg, const Dataset& data);

    // One optimization step on a randomly drawn training frame; appends a
    // loss-log row. Throws NumericError naming the term when a loss goes
    // non-finite.
    LossReport train_step();
    void train(); // runs to cfg.total_steps
    void prune();
};

struct FrameMetrics {
    std::size_t frame = 0;
    double psnr = 0.0, ssim = 0.0;
    double psnr_star = 0.0, ssim_star = 0.0;
    bool has_mask = false;
    LossReport losses;
};

// reconstruction = all frames; nvs = the held-out every-10th frames.
std::vector<FrameMetrics> evaluate(const Model& model, const Dataset& data,
                                   const std::string& split);
std::string metrics_csv(const std::vector<FrameMetrics>& rows);

// Checkpoint: magic "C4DC", version, length-prefixed payload (config text,
// step, time base, background, RNG state, field bounds, embedded scene,
// named parameter blocks), CRC32 of the payload.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

} // namespace coda
