#include "coda/hexplane.hpp"
#include "coda/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace coda {

HexPlaneField::HexPlaneField(const HexPlaneConfig& c, std::mt19937_64& rng) : cfg(c) {
    if (cfg.levels == 0 || cfg.features == 0) throw ConfigError("hexplane needs levels and features > 0");
    if (cfg.base_res < 2) throw ConfigError("hexplane base resolution must be >= 2");
    if (!(cfg.hi.x > cfg.lo.x && cfg.hi.y > cfg.lo.y && cfg.hi.z > cfg.lo.z))
        throw ConfigError("hexplane bounds must have positive extent");
    for (std::size_t l = 0; l < cfg.levels; ++l) {
        const std::size_t r = cfg.res(l);
        for (std::size_t p = 0; p < 6; ++p) {
            ParamBlock block("hexplane/level" + std::to_string(l + 1) + "/plane" + kPlaneNames[p],
                             {cfg.features, r, r});
            for (double& v : block.data) v = uniform(rng, -0.1, 0.1);
            planes.push_back(std::move(block));
        }
    }
}

namespace {

inline double plane_at(const ParamBlock& g, std::size_t c, std::size_t i, std::size_t j) {
    const std::size_t r = g.shape[1];
    return g.data[(c * r + i) * g.shape[2] + j];
}

inline double& plane_grad_at(ParamBlock& g, std::size_t c, std::size_t i, std::size_t j) {
    const std::size_t r = g.shape[1];
    return g.grad[(c * r + i) * g.shape[2] + j];
}

} // namespace

HexPlaneField::Cache HexPlaneField::encode(const Vec3& p, double t) const {
    Cache cache;
    const double axis_lo[4] = {cfg.lo.x, cfg.lo.y, cfg.lo.z, 0.0};
    const double axis_hi[4] = {cfg.hi.x, cfg.hi.y, cfg.hi.z, 1.0};
    const double raw[4] = {p.x, p.y, p.z, t};
    for (int a = 0; a < 4; ++a) {
        double u = (raw[a] - axis_lo[a]) / (axis_hi[a] - axis_lo[a]);
        cache.clamped[a] = u < 0.0 || u > 1.0;
        if (cache.clamped[a]) ++clamp_count;
        cache.coord[a] = std::clamp(u, 0.0, 1.0);
    }

    const std::size_t h = cfg.features;
    cache.samples.resize(cfg.levels * 6);
    cache.out.assign(cfg.levels * h, 1.0);
    for (std::size_t l = 0; l < cfg.levels; ++l) {
        const std::size_t res = cfg.res(l);
        for (std::size_t pi = 0; pi < 6; ++pi) {
            const ParamBlock& g = plane(l, pi);
            Cache::Sample& s = cache.samples[l * 6 + pi];
            const double ga = cache.coord[kPlaneAxes[pi][0]] * static_cast<double>(res - 1);
            const double gb = cache.coord[kPlaneAxes[pi][1]] * static_cast<double>(res - 1);
            s.i0 = std::min(static_cast<std::size_t>(ga), res - 2);
            s.j0 = std::min(static_cast<std::size_t>(gb), res - 2);
            s.fa = ga - static_cast<double>(s.i0);
            s.fb = gb - static_cast<double>(s.j0);
            s.corners.resize(4 * h);
            const double wa0 = 1.0 - s.fa, wb0 = 1.0 - s.fb;
            for (std::size_t c = 0; c < h; ++c) {
                const double v00 = plane_at(g, c, s.i0, s.j0);
                const double v10 = plane_at(g, c, s.i0 + 1, s.j0);
                const double v01 = plane_at(g, c, s.i0, s.j0 + 1);
                const double v11 = plane_at(g, c, s.i0 + 1, s.j0 + 1);
                s.corners[4 * c + 0] = v00;
                s.corners[4 * c + 1] = v10;
                s.corners[4 * c + 2] = v01;
                s.corners[4 * c + 3] = v11;
                const double val = wa0 * wb0 * v00 + s.fa * wb0 * v10 +
                                   wa0 * s.fb * v01 + s.fa * s.fb * v11;
                cache.out[l * h + c] *= val;
            }
        }
    }
    return cache;
}

void HexPlaneField::encode_backward(const Cache& cache, const double* dout, Vec3* dp, double* dt) {
    const std::size_t h = cfg.features;
    double dcoord[4] = {0, 0, 0, 0};
    for (std::size_t l = 0; l < cfg.levels; ++l) {
        // Per channel: value product over the six planes; factor gradients
        // via prefix/suffix products.
        for (std::size_t c = 0; c < h; ++c) {
            double vals[6];
            for (std::size_t pi = 0; pi < 6; ++pi) {
                const Cache::Sample& s = cache.samples[l * 6 + pi];
                const double wa0 = 1.0 - s.fa, wb0 = 1.0 - s.fb;
                vals[pi] = wa0 * wb0 * s.corners[4 * c + 0] + s.fa * wb0 * s.corners[4 * c + 1] +
                           wa0 * s.fb * s.corners[4 * c + 2] + s.fa * s.fb * s.corners[4 * c + 3];
            }
            double prefix[7], suffix[7];
            prefix[0] = 1.0;
            for (int k = 0; k < 6; ++k) prefix[k + 1] = prefix[k] * vals[k];
            suffix[6] = 1.0;
            for (int k = 5; k >= 0; --k) suffix[k] = suffix[k + 1] * vals[k];
            const double dch = dout[l * h + c];
            if (dch == 0.0) continue;
            for (std::size_t pi = 0; pi < 6; ++pi) {
                const double dval = dch * prefix[pi] * suffix[pi + 1];
                const Cache::Sample& s = cache.samples[l * 6 + pi];
                ParamBlock& g = plane(l, pi);
                const double wa0 = 1.0 - s.fa, wb0 = 1.0 - s.fb;
                plane_grad_at(g, c, s.i0, s.j0) += dval * wa0 * wb0;
                plane_grad_at(g, c, s.i0 + 1, s.j0) += dval * s.fa * wb0;
                plane_grad_at(g, c, s.i0, s.j0 + 1) += dval * wa0 * s.fb;
                plane_grad_at(g, c, s.i0 + 1, s.j0 + 1) += dval * s.fa * s.fb;
                const double dfa = dval * (wb0 * (s.corners[4 * c + 1] - s.corners[4 * c + 0]) +
                                           s.fb * (s.corners[4 * c + 3] - s.corners[4 * c + 2]));
                const double dfb = dval * (wa0 * (s.corners[4 * c + 2] - s.corners[4 * c + 0]) +
                                           s.fa * (s.corners[4 * c + 3] - s.corners[4 * c + 1]));
                const double scale = static_cast<double>(cfg.res(l) - 1);
                dcoord[kPlaneAxes[pi][0]] += dfa * scale;
                dcoord[kPlaneAxes[pi][1]] += dfb * scale;
            }
        }
    }
    const double axis_lo[4] = {cfg.lo.x, cfg.lo.y, cfg.lo.z, 0.0};
    const double axis_hi[4] = {cfg.hi.x, cfg.hi.y, cfg.hi.z, 1.0};
    double draw[4];
    for (int a = 0; a < 4; ++a)
        draw[a] = cache.clamped[a] ? 0.0 : dcoord[a] / (axis_hi[a] - axis_lo[a]);
    if (dp) {
        dp->x += draw[0];
        dp->y += draw[1];
        dp->z += draw[2];
    }
    if (dt) *dt += draw[3];
}

double HexPlaneField::tv_loss() const {
    double sum = 0.0;
    std::uint64_t pairs = 0;
    for (const ParamBlock& g : planes) {
        const std::size_t h = g.shape[0], a = g.shape[1], b = g.shape[2];
        for (std::size_t c = 0; c < h; ++c) {
            for (std::size_t i = 0; i < a; ++i)
                for (std::size_t j = 0; j + 1 < b; ++j) {
                    const double d = plane_at(g, c, i, j + 1) - plane_at(g, c, i, j);
                    sum += d * d;
                }
            for (std::size_t i = 0; i + 1 < a; ++i)
                for (std::size_t j = 0; j < b; ++j) {
                    const double d = plane_at(g, c, i + 1, j) - plane_at(g, c, i, j);
                    sum += d * d;
                }
            pairs += a * (b - 1) + (a - 1) * b;
        }
    }
    return pairs > 0 ? sum / static_cast<double>(pairs) : 0.0;
}

void HexPlaneField::tv_loss_backward(double dloss) {
    std::uint64_t pairs = 0;
    for (const ParamBlock& g : planes) {
        const std::size_t h = g.shape[0], a = g.shape[1], b = g.shape[2];
        pairs += h * (a * (b - 1) + (a - 1) * b);
    }
    if (pairs == 0) return;
    const double scale = 2.0 * dloss / static_cast<double>(pairs);
    for (ParamBlock& g : planes) {
        const std::size_t h = g.shape[0], a = g.shape[1], b = g.shape[2];
        for (std::size_t c = 0; c < h; ++c) {
            for (std::size_t i = 0; i < a; ++i)
                for (std::size_t j = 0; j + 1 < b; ++j) {
                    const double d = plane_at(g, c, i, j + 1) - plane_at(g, c, i, j);
                    plane_grad_at(g, c, i, j + 1) += scale * d;
                    plane_grad_at(g, c, i, j) -= scale * d;
                }
            for (std::size_t i = 0; i + 1 < a; ++i)
                for (std::size_t j = 0; j < b; ++j) {
                    const double d = plane_at(g, c, i + 1, j) - plane_at(g, c, i, j);
                    plane_grad_at(g, c, i + 1, j) += scale * d;
                    plane_grad_at(g, c, i, j) -= scale * d;
                }
        }
    }
}

DeformationField::DeformationField(const DeformationConfig& c, std::mt19937_64& rng)
    : grid(c.grid, rng),
      phi_d("phi_d", {c.grid.out_dim(), c.latent_hidden, c.latent_dim},
            FinalActivation::Identity, rng, false),
      head_dx("decoder/dx", {c.latent_dim, c.head_hidden, 3}, FinalActivation::Identity, rng, true),
      head_ds("decoder/ds", {c.latent_dim, c.head_hidden, 3}, FinalActivation::Identity, rng, true),
      head_dr("decoder/dr", {c.latent_dim, c.head_hidden, 4}, FinalActivation::Identity, rng, true) {}

DeformationField::Cache DeformationField::deform_one(const Vec3& p, double t, double delta[10]) const {
    Cache c;
    c.grid_cache = grid.encode(p, t);
    c.latent = phi_d.forward(c.grid_cache.out.data());
    c.dx = head_dx.forward(c.latent.output.data());
    c.ds = head_ds.forward(c.latent.output.data());
    c.dr = head_dr.forward(c.latent.output.data());
    for (int i = 0; i < 3; ++i) delta[i] = c.dx.output[i];
    for (int i = 0; i < 3; ++i) delta[3 + i] = c.ds.output[i];
    for (int i = 0; i < 4; ++i) delta[6 + i] = c.dr.output[i];
    return c;
}

void DeformationField::deform_one_backward(const Cache& c, const double ddelta[10],
                                           Vec3* dp, double* dt) {
    std::vector<double> dlatent(phi_d.out_dim(), 0.0), tmp(phi_d.out_dim());
    head_dx.backward(c.dx, ddelta, tmp.data());
    for (std::size_t i = 0; i < tmp.size(); ++i) dlatent[i] += tmp[i];
    head_ds.backward(c.ds, ddelta + 3, tmp.data());
    for (std::size_t i = 0; i < tmp.size(); ++i) dlatent[i] += tmp[i];
    head_dr.backward(c.dr, ddelta + 6, tmp.data());
    for (std::size_t i = 0; i < tmp.size(); ++i) dlatent[i] += tmp[i];
    std::vector<double> dfh(phi_d.in_dim());
    phi_d.backward(c.latent, dlatent.data(), dfh.data());
    grid.encode_backward(c.grid_cache, dfh.data(), dp, dt);
}

std::vector<ParamBlock*> DeformationField::blocks() {
    std::vector<ParamBlock*> out;
    for (ParamBlock& b : grid.planes) out.push_back(&b);
    for (ParamBlock* b : phi_d.blocks()) out.push_back(b);
    for (ParamBlock* b : head_dx.blocks()) out.push_back(b);
    for (ParamBlock* b : head_ds.blocks()) out.push_back(b);
    for (ParamBlock* b : head_dr.blocks()) out.push_back(b);
    return out;
}

} // namespace coda
