#include "coda/rasterizer.hpp"
#include "coda/errors.hpp"

#include <algorithm>
#include <cmath>

namespace coda {

namespace {

constexpr int kTile = 16;

struct TileGrid {
    int tiles_x = 0, tiles_y = 0;
    std::vector<std::vector<std::uint32_t>> lists; // splat indices, sorted order

    void build(const std::vector<Splat>& splats, int width, int height) {
        tiles_x = (width + kTile - 1) / kTile;
        tiles_y = (height + kTile - 1) / kTile;
        lists.assign(static_cast<std::size_t>(tiles_x) * tiles_y, {});
        for (std::uint32_t s = 0; s < splats.size(); ++s) {
            const Splat& sp = splats[s];
            // Pixel index range whose centers fall within the cull radius.
            int ix0 = static_cast<int>(std::ceil(sp.mean2d[0] - sp.radius - 0.5));
            int ix1 = static_cast<int>(std::floor(sp.mean2d[0] + sp.radius - 0.5));
            int iy0 = static_cast<int>(std::ceil(sp.mean2d[1] - sp.radius - 0.5));
            int iy1 = static_cast<int>(std::floor(sp.mean2d[1] + sp.radius - 0.5));
            ix0 = std::max(ix0, 0);
            iy0 = std::max(iy0, 0);
            ix1 = std::min(ix1, width - 1);
            iy1 = std::min(iy1, height - 1);
            if (ix0 > ix1 || iy0 > iy1) continue;
            for (int ty = iy0 / kTile; ty <= iy1 / kTile; ++ty)
                for (int tx = ix0 / kTile; tx <= ix1 / kTile; ++tx)
                    lists[static_cast<std::size_t>(ty) * tiles_x + tx].push_back(s);
        }
    }
};

// Walks the per-pixel splat sequence, invoking fn(splat_idx, alpha_prime, T_before).
// Replicates skip and early-stop rules so forward and backward agree.
template <typename Fn>
void walk_pixel(const std::vector<Splat>& splats, const std::uint32_t* idx, std::size_t n,
                bool use_list, double px, double py, const RasterConfig& cfg, double T_start,
                Fn&& fn) {
    double T = T_start;
    const bool exact = cfg.exact();
    for (std::size_t k = 0; k < n; ++k) {
        if (!exact && T < cfg.early_stop) break;
        const Splat& sp = splats[use_list ? idx[k] : k];
        const double dx = px - sp.mean2d[0];
        const double dy = py - sp.mean2d[1];
        const double power =
            -0.5 * (sp.conic[0] * dx * dx + 2.0 * sp.conic[1] * dx * dy + sp.conic[2] * dy * dy);
        const double g = std::exp(power);
        const double ap = std::min(cfg.alpha_clamp, sp.alpha * g);
        if (!exact && ap < cfg.skip_threshold) continue;
        fn(use_list ? idx[k] : static_cast<std::uint32_t>(k), ap, T, dx, dy, g);
        T *= 1.0 - ap;
    }
}

} // namespace

std::vector<Splat> project_gaussians(const RenderAttributes& attrs, const Camera& cam,
                                     const RasterConfig& cfg, std::uint64_t key_base) {
    std::vector<Splat> splats;
    splats.reserve(attrs.count);
    const bool exact = cfg.exact();
    for (std::size_t i = 0; i < attrs.count; ++i) {
        const Vec3 p{attrs.positions[i * 3], attrs.positions[i * 3 + 1],
                     attrs.positions[i * 3 + 2]};
        const Vec3 pc = cam.to_camera(p);
        if (pc.z <= cam.near) continue;

        Splat sp;
        sp.index = i;
        sp.key = key_base + i;
        sp.depth = pc.z;
        sp.p_cam[0] = pc.x;
        sp.p_cam[1] = pc.y;
        sp.p_cam[2] = pc.z;
        sp.mean2d[0] = cam.fx * pc.x / pc.z + cam.cx;
        sp.mean2d[1] = cam.fy * pc.y / pc.z + cam.cy;

        const Quat q{attrs.rotations[i * 4], attrs.rotations[i * 4 + 1],
                     attrs.rotations[i * 4 + 2], attrs.rotations[i * 4 + 3]};
        const Mat3 cov3d = build_covariance(attrs.log_scales + i * 3, q);
        const Mat3 cov_cam = cam.R * cov3d * cam.R.transposed();

        const double z = pc.z;
        const double j00 = cam.fx / z, j02 = -cam.fx * pc.x / (z * z);
        const double j11 = cam.fy / z, j12 = -cam.fy * pc.y / (z * z);
        // Sigma2d = J S J^T with J = [[j00, 0, j02], [0, j11, j12]].
        const double* S = cov_cam.m;
        const double r0[3] = {j00 * S[0] + j02 * S[6], j00 * S[1] + j02 * S[7],
                              j00 * S[2] + j02 * S[8]};
        const double r1[3] = {j11 * S[3] + j12 * S[6], j11 * S[4] + j12 * S[7],
                              j11 * S[5] + j12 * S[8]};
        sp.cov2d[0] = r0[0] * j00 + r0[2] * j02 + cfg.lowpass;
        sp.cov2d[1] = r0[1] * j11 + r0[2] * j12;
        sp.cov2d[2] = r1[1] * j11 + r1[2] * j12 + cfg.lowpass;

        const double det = sp.cov2d[0] * sp.cov2d[2] - sp.cov2d[1] * sp.cov2d[1];
        if (det <= 0.0) continue; // numerically degenerate; lowpass makes this rare
        sp.conic[0] = sp.cov2d[2] / det;
        sp.conic[1] = -sp.cov2d[1] / det;
        sp.conic[2] = sp.cov2d[0] / det;

        const double mid = 0.5 * (sp.cov2d[0] + sp.cov2d[2]);
        const double disc = std::sqrt(std::max(mid * mid - det, 0.0));
        sp.radius = std::ceil(cfg.cull_sigmas * std::sqrt(std::max(mid + disc, 0.0)));

        if (!exact) {
            const int ix0 = static_cast<int>(std::ceil(sp.mean2d[0] - sp.radius - 0.5));
            const int ix1 = static_cast<int>(std::floor(sp.mean2d[0] + sp.radius - 0.5));
            const int iy0 = static_cast<int>(std::ceil(sp.mean2d[1] - sp.radius - 0.5));
            const int iy1 = static_cast<int>(std::floor(sp.mean2d[1] + sp.radius - 0.5));
            if (ix1 < 0 || iy1 < 0 || ix0 > cam.width - 1 || iy0 > cam.height - 1) continue;
        }

        const double pn = std::sqrt(pc.x * pc.x + pc.y * pc.y + pc.z * pc.z);
        sp.dir[0] = pc.x / pn;
        sp.dir[1] = pc.y / pn;
        sp.dir[2] = pc.z / pn;
        evaluate_sh(attrs.sh_coeffs + i * kShTotal, sp.dir, sp.color);
        sp.alpha = sigmoid(attrs.opacity_logits[i]);
        if (attrs.features && attrs.feature_dim > 0)
            sp.feat.assign(attrs.features + i * attrs.feature_dim,
                           attrs.features + (i + 1) * attrs.feature_dim);
        splats.push_back(std::move(sp));
    }
    std::sort(splats.begin(), splats.end(), [](const Splat& a, const Splat& b) {
        if (a.depth != b.depth) return a.depth < b.depth;
        return a.key < b.key;
    });
    return splats;
}

CompositeState::CompositeState(int w, int h, std::size_t f)
    : width(w), height(h), feature_dim(f) {
    const std::size_t n = static_cast<std::size_t>(w) * h;
    transmittance.assign(n, 1.0);
    color_sum.assign(n * 3, 0.0);
    depth_sum.assign(n, 0.0);
    accum.assign(n, 0.0);
    feat_sum.assign(n * f, 0.0);
}

void composite_pass(const std::vector<Splat>& splats, const RasterConfig& cfg,
                    CompositeState& st) {
    const int W = st.width, H = st.height;
    const std::size_t F = st.feature_dim;
    const bool exact = cfg.exact();
    TileGrid tiles;
    if (!exact) tiles.build(splats, W, H);

    for (int iy = 0; iy < H; ++iy) {
        for (int ix = 0; ix < W; ++ix) {
            const std::size_t pix = static_cast<std::size_t>(iy) * W + ix;
            const double px = ix + 0.5, py = iy + 0.5;
            const std::vector<std::uint32_t>* list = nullptr;
            if (!exact)
                list = &tiles.lists[static_cast<std::size_t>(iy / kTile) * tiles.tiles_x +
                                    ix / kTile];
            double T = st.transmittance[pix];
            walk_pixel(splats, exact ? nullptr : list->data(),
                       exact ? splats.size() : list->size(), !exact, px, py, cfg, T,
                       [&](std::uint32_t s, double ap, double Tb, double, double, double) {
                           const Splat& sp = splats[s];
                           const double w = Tb * ap;
                           st.color_sum[pix * 3 + 0] += w * sp.color[0];
                           st.color_sum[pix * 3 + 1] += w * sp.color[1];
                           st.color_sum[pix * 3 + 2] += w * sp.color[2];
                           st.depth_sum[pix] += w * sp.depth;
                           st.accum[pix] += w;
                           for (std::size_t f = 0; f < F; ++f)
                               st.feat_sum[pix * F + f] += w * sp.feat[f];
                           T = Tb * (1.0 - ap);
                       });
            st.transmittance[pix] = T;
        }
    }
}

RenderOutput finalize_composite(const CompositeState& st, const double background[3],
                                const double* feature_background) {
    RenderOutput out;
    out.rgb = Image(st.width, st.height, 3);
    out.depth = Image(st.width, st.height, 1);
    out.accum = Image(st.width, st.height, 1);
    out.feature = Image(st.width, st.height, static_cast<int>(st.feature_dim));
    const std::size_t F = st.feature_dim;
    const std::size_t n = static_cast<std::size_t>(st.width) * st.height;
    for (std::size_t pix = 0; pix < n; ++pix) {
        const double A = st.accum[pix];
        for (int ch = 0; ch < 3; ++ch)
            out.rgb.data[pix * 3 + ch] =
                st.color_sum[pix * 3 + ch] + (1.0 - A) * background[ch];
        out.depth.data[pix] = A > 0.5 ? st.depth_sum[pix] / A : 0.0;
        out.accum.data[pix] = A;
        for (std::size_t f = 0; f < F; ++f)
            out.feature.data[pix * F + f] =
                st.feat_sum[pix * F + f] +
                (feature_background ? (1.0 - A) * feature_background[f] : 0.0);
    }
    return out;
}

RenderOutput render(const RenderAttributes& attrs, const Camera& cam, const RasterConfig& cfg,
                    const double background[3], const double* feature_background,
                    RenderCache* cache) {
    std::vector<Splat> splats = project_gaussians(attrs, cam, cfg);
    CompositeState st(cam.width, cam.height, attrs.features ? attrs.feature_dim : 0);
    composite_pass(splats, cfg, st);
    RenderOutput out = finalize_composite(st, background, feature_background);
    if (cache) {
        cache->splats = std::move(splats);
        cache->state = std::move(st);
    }
    return out;
}

AttributeGrads::AttributeGrads(std::size_t n, std::size_t f) : count(n), feature_dim(f) {
    positions.assign(n * 3, 0.0);
    log_scales.assign(n * 3, 0.0);
    rotations.assign(n * 4, 0.0);
    opacity_logits.assign(n, 0.0);
    sh_coeffs.assign(n * kShTotal, 0.0);
    features.assign(n * f, 0.0);
}

void render_backward(const RenderAttributes& attrs, const Camera& cam, const RasterConfig& cfg,
                     const RenderCache& cache, const OutputGrads& grads,
                     const double background[3], const double* feature_background,
                     AttributeGrads& out) {
    const std::vector<Splat>& splats = cache.splats;
    const CompositeState& st = cache.state;
    if (st.width != cam.width || st.height != cam.height)
        throw UsageError("render_backward: cache does not match camera");
    if (out.count != attrs.count || out.feature_dim != attrs.feature_dim)
        throw ShapeError("render_backward: gradient buffer shape mismatch");
    const int W = st.width, H = st.height;
    const std::size_t F = st.feature_dim;
    const bool exact = cfg.exact();
    const bool has_rgb = !grads.rgb.data.empty();
    const bool has_depth = !grads.depth.data.empty();
    const bool has_accum = !grads.accum.data.empty();
    const bool has_feat = !grads.feature.data.empty() && F > 0;

    TileGrid tiles;
    if (!exact) tiles.build(splats, W, H);

    // Per-splat accumulators over all pixels.
    const std::size_t S = splats.size();
    std::vector<double> dmean(S * 2, 0.0), dconic(S * 3, 0.0), dcolor(S * 3, 0.0);
    std::vector<double> dz(S, 0.0), dalpha(S, 0.0), dfeat(S * F, 0.0);

    std::vector<double> dsum_feat(F);
    for (int iy = 0; iy < H; ++iy) {
        for (int ix = 0; ix < W; ++ix) {
            const std::size_t pix = static_cast<std::size_t>(iy) * W + ix;
            const double px = ix + 0.5, py = iy + 0.5;

            const double A = st.accum[pix];
            double dsum_color[3] = {0, 0, 0};
            double dsum_depth = 0.0;
            double dA = has_accum ? grads.accum.data[pix] : 0.0;
            if (has_rgb)
                for (int ch = 0; ch < 3; ++ch) {
                    dsum_color[ch] = grads.rgb.data[pix * 3 + ch];
                    dA -= dsum_color[ch] * background[ch];
                }
            if (has_depth && A > 0.5) {
                const double gd = grads.depth.data[pix];
                dsum_depth = gd / A;
                dA -= gd * st.depth_sum[pix] / (A * A);
            }
            double feat_total_contrib = 0.0;
            if (has_feat) {
                for (std::size_t f = 0; f < F; ++f) {
                    dsum_feat[f] = grads.feature.data[pix * F + f];
                    if (feature_background) dA -= dsum_feat[f] * feature_background[f];
                    feat_total_contrib += dsum_feat[f] * st.feat_sum[pix * F + f];
                }
            } else {
                std::fill(dsum_feat.begin(), dsum_feat.end(), 0.0);
            }

            // Total upstream contribution of all composited weights at this
            // pixel; the running remainder gives each splat's occlusion term.
            double total = dA * A + dsum_depth * st.depth_sum[pix] + feat_total_contrib;
            for (int ch = 0; ch < 3; ++ch) total += dsum_color[ch] * st.color_sum[pix * 3 + ch];
            if (total == 0.0 && dA == 0.0 && dsum_depth == 0.0 && !has_rgb && !has_feat)
                continue;

            const std::vector<std::uint32_t>* list = nullptr;
            if (!exact)
                list = &tiles.lists[static_cast<std::size_t>(iy / kTile) * tiles.tiles_x +
                                    ix / kTile];

            double partial = 0.0;
            walk_pixel(splats, exact ? nullptr : list->data(),
                       exact ? splats.size() : list->size(), !exact, px, py, cfg, 1.0,
                       [&](std::uint32_t s, double ap, double Tb, double ddx, double ddy,
                           double g) {
                           const Splat& sp = splats[s];
                           const double w = Tb * ap;
                           double u_dot = dA + dsum_depth * sp.depth;
                           for (int ch = 0; ch < 3; ++ch) u_dot += dsum_color[ch] * sp.color[ch];
                           if (has_feat)
                               for (std::size_t f = 0; f < F; ++f)
                                   u_dot += dsum_feat[f] * sp.feat[f];
                           partial += w * u_dot;
                           const double dap = Tb * u_dot - (total - partial) / (1.0 - ap);

                           for (int ch = 0; ch < 3; ++ch)
                               dcolor[s * 3 + ch] += dsum_color[ch] * w;
                           dz[s] += dsum_depth * w;
                           if (has_feat)
                               for (std::size_t f = 0; f < F; ++f)
                                   dfeat[s * F + f] += dsum_feat[f] * w;

                           if (sp.alpha * g < cfg.alpha_clamp) {
                               dalpha[s] += dap * g;
                               const double dpower = dap * sp.alpha * g;
                               dconic[s * 3 + 0] += dpower * (-0.5 * ddx * ddx);
                               dconic[s * 3 + 1] += dpower * (-ddx * ddy);
                               dconic[s * 3 + 2] += dpower * (-0.5 * ddy * ddy);
                               dmean[s * 2 + 0] +=
                                   dpower * (sp.conic[0] * ddx + sp.conic[1] * ddy);
                               dmean[s * 2 + 1] +=
                                   dpower * (sp.conic[1] * ddx + sp.conic[2] * ddy);
                           }
                       });
        }
    }

    // Chain per-splat gradients through the projection to attribute rows.
    for (std::size_t s = 0; s < S; ++s) {
        const Splat& sp = splats[s];
        const std::size_t i = sp.index;
        const double x = sp.p_cam[0], y = sp.p_cam[1], z = sp.p_cam[2];

        // conic (inverse covariance) to 2D covariance.
        const double a = sp.cov2d[0], b = sp.cov2d[1], c = sp.cov2d[2];
        const double det = a * c - b * b;
        const double inv_det2 = 1.0 / (det * det);
        const double dcA = dconic[s * 3 + 0], dcB = dconic[s * 3 + 1], dcC = dconic[s * 3 + 2];
        const double da =
            (dcA * (-c * c) + dcB * (b * c) + dcC * (-b * b)) * inv_det2;
        const double db =
            (dcA * (2.0 * b * c) + dcB * (-(det + 2.0 * b * b)) + dcC * (2.0 * a * b)) * inv_det2;
        const double dc =
            (dcA * (-b * b) + dcB * (a * b) + dcC * (-a * a)) * inv_det2;

        // 2D covariance to camera-frame covariance and the Jacobian.
        const double j00 = cam.fx / z, j02 = -cam.fx * x / (z * z);
        const double j11 = cam.fy / z, j12 = -cam.fy * y / (z * z);
        const double J[2][3] = {{j00, 0.0, j02}, {0.0, j11, j12}};
        const double G2[2][2] = {{da, 0.5 * db}, {0.5 * db, dc}};

        const Quat q{attrs.rotations[i * 4], attrs.rotations[i * 4 + 1],
                     attrs.rotations[i * 4 + 2], attrs.rotations[i * 4 + 3]};
        const Mat3 cov3d = build_covariance(attrs.log_scales + i * 3, q);
        const Mat3 cov_cam = cam.R * cov3d * cam.R.transposed();

        Mat3 dS_cam;
        for (int m = 0; m < 3; ++m)
            for (int n = 0; n < 3; ++n) {
                double acc = 0.0;
                for (int k = 0; k < 2; ++k)
                    for (int l = 0; l < 2; ++l) acc += G2[k][l] * J[k][m] * J[l][n];
                dS_cam.m[m * 3 + n] = acc;
            }

        // dJ = 2 G2 J S_cam.
        double JS[2][3];
        for (int k = 0; k < 2; ++k)
            for (int n = 0; n < 3; ++n) {
                double acc = 0.0;
                for (int m = 0; m < 3; ++m) acc += J[k][m] * cov_cam.m[m * 3 + n];
                JS[k][n] = acc;
            }
        double dJ[2][3];
        for (int k = 0; k < 2; ++k)
            for (int n = 0; n < 3; ++n)
                dJ[k][n] = 2.0 * (G2[k][0] * JS[0][n] + G2[k][1] * JS[1][n]);

        Vec3 dp_cam{0, 0, 0};
        const double z2 = z * z, z3 = z2 * z;
        dp_cam.x += dJ[0][2] * (-cam.fx / z2);
        dp_cam.y += dJ[1][2] * (-cam.fy / z2);
        dp_cam.z += dJ[0][0] * (-cam.fx / z2) + dJ[1][1] * (-cam.fy / z2) +
                    dJ[0][2] * (2.0 * cam.fx * x / z3) + dJ[1][2] * (2.0 * cam.fy * y / z3);

        // Camera-frame covariance to world covariance, then to attributes.
        Mat3 dS_world = cam.R.transposed() * dS_cam * cam.R;
        build_covariance_backward(attrs.log_scales + i * 3, q, dS_world,
                                  out.log_scales.data() + i * 3, out.rotations.data() + i * 4);

        // Projected mean and the depth channel.
        const double dmx = dmean[s * 2 + 0], dmy = dmean[s * 2 + 1];
        dp_cam.x += dmx * cam.fx / z;
        dp_cam.y += dmy * cam.fy / z;
        dp_cam.z += dmx * (-cam.fx * x / z2) + dmy * (-cam.fy * y / z2);
        dp_cam.z += dz[s];

        // Color through the SH evaluation and the view direction.
        double ddir[3] = {0, 0, 0};
        evaluate_sh_backward(attrs.sh_coeffs + i * kShTotal, sp.dir, dcolor.data() + s * 3,
                             out.sh_coeffs.data() + i * kShTotal, ddir);
        const double pn = std::sqrt(x * x + y * y + z * z);
        const double ddot = sp.dir[0] * ddir[0] + sp.dir[1] * ddir[1] + sp.dir[2] * ddir[2];
        dp_cam.x += (ddir[0] - sp.dir[0] * ddot) / pn;
        dp_cam.y += (ddir[1] - sp.dir[1] * ddot) / pn;
        dp_cam.z += (ddir[2] - sp.dir[2] * ddot) / pn;

        out.opacity_logits[i] += dalpha[s] * sp.alpha * (1.0 - sp.alpha);
        if (F > 0 && !out.features.empty())
            for (std::size_t f = 0; f < F; ++f) out.features[i * F + f] += dfeat[s * F + f];

        const Vec3 dp_world = cam.R.transposed_mul(dp_cam);
        out.positions[i * 3 + 0] += dp_world.x;
        out.positions[i * 3 + 1] += dp_world.y;
        out.positions[i * 3 + 2] += dp_world.z;
    }
}

} // namespace coda
