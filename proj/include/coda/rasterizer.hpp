#pragma once

#include "coda/geometry.hpp"
#include "coda/io.hpp"
#include "coda/scene.hpp"

#include <cstdint>
#include <vector>

namespace coda {

struct RasterConfig {
    double skip_threshold = 1.0 / 255.0; // 0 switches to exact mode
    double early_stop = 1e-4;            // transmittance cutoff
    double alpha_clamp = 0.99;
    double cull_sigmas = 3.0;            // footprint radius in sigmas
    double lowpass = 0.3;                // pixel^2 floor on projected covariance

    // Exact mode disables the per-pixel skip, footprint culling, and early
    // termination so the output is comparable to a brute-force renderer.
    bool exact() const { return skip_threshold == 0.0; }
};

// Borrowed views over per-Gaussian attribute rows. Features are composited
// as given; normalize-on-use is the caller's job.
struct RenderAttributes {
    std::size_t count = 0;
    std::size_t feature_dim = 0;
    const double* positions = nullptr;      // [N,3]
    const double* log_scales = nullptr;     // [N,3]
    const double* rotations = nullptr;      // [N,4]
    const double* opacity_logits = nullptr; // [N,1]
    const double* sh_coeffs = nullptr;      // [N,48]
    const double* features = nullptr;       // [N,F], optional
};

struct Splat {
    std::size_t index = 0;  // row in the source attribute arrays
    std::uint64_t key = 0;  // depth tie-break / composite merge key
    double depth = 0.0;     // camera-space z
    double mean2d[2] = {0, 0};
    double cov2d[3] = {0, 0, 0};  // (a, b, c) after lowpass
    double conic[3] = {0, 0, 0};  // inverse of cov2d: (A, B, C)
    double alpha = 0.0;           // sigmoid(opacity logit)
    double color[3] = {0, 0, 0};
    double radius = 0.0;          // cull radius in pixels
    double p_cam[3] = {0, 0, 0};
    double dir[3] = {0, 0, 0};    // normalized camera-frame view direction
    std::vector<double> feat;     // F entries (empty when unused)
};

// Near-plane cull always; in default mode also footprint culling. Output
// sorted by (depth, key); key = key_base + row index.
std::vector<Splat> project_gaussians(const RenderAttributes& attrs, const Camera& cam,
                                     const RasterConfig& cfg, std::uint64_t key_base = 0);

// Per-pixel compositing state that can be carried across passes.
struct CompositeState {
    int width = 0, height = 0;
    std::size_t feature_dim = 0;
    std::vector<double> transmittance;  // H*W
    std::vector<double> color_sum;      // H*W*3
    std::vector<double> depth_sum;      // H*W
    std::vector<double> accum;          // H*W
    std::vector<double> feat_sum;       // H*W*F

    CompositeState() = default;
    CompositeState(int w, int h, std::size_t f);
};

// Front-to-back alpha compositing of a depth-sorted splat list.
void composite_pass(const std::vector<Splat>& splats, const RasterConfig& cfg,
                    CompositeState& state);

// Blends the background and normalizes depth into final images.
struct RenderOutput {
    Image rgb;      // H,W,3
    Image depth;    // H,W,1; 0 where accum <= 0.5
    Image feature;  // H,W,F (F may be 0)
    Image accum;    // H,W,1
};

RenderOutput finalize_composite(const CompositeState& state, const double background[3],
                                const double* feature_background);

struct RenderCache {
    std::vector<Splat> splats;
    CompositeState state;
};

RenderOutput render(const RenderAttributes& attrs, const Camera& cam, const RasterConfig& cfg,
                    const double background[3], const double* feature_background,
                    RenderCache* cache = nullptr);

// Upstream image gradients; empty images mean zero gradient.
struct OutputGrads {
    Image rgb;
    Image depth;
    Image feature;
    Image accum;
};

struct AttributeGrads {
    std::size_t count = 0;
    std::size_t feature_dim = 0;
    std::vector<double> positions, log_scales, rotations, opacity_logits, sh_coeffs, features;

    AttributeGrads() = default;
    AttributeGrads(std::size_t n, std::size_t f);
};

// Chains image gradients back to every attribute row. Requires the cache
// captured by render().
void render_backward(const RenderAttributes& attrs, const Camera& cam, const RasterConfig& cfg,
                     const RenderCache& cache, const OutputGrads& grads,
                     const double background[3], const double* feature_background,
                     AttributeGrads& out);

} // namespace coda
