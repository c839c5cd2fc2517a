#pragma once

#include "coda/geometry.hpp"
#include "coda/numeric.hpp"

#include <array>
#include <cstdint>
#include <random>
#include <vector>

namespace coda {

// Spatiotemporal feature grids: per level, six 2D planes over the axis pairs
// (x,y), (x,z), (y,z), (x,t), (y,t), (z,t). Plane blocks are [h, res_a, res_b].
struct HexPlaneConfig {
    std::size_t levels = 2;
    std::size_t base_res = 16; // level l resolution: base_res << l, all axes
    std::size_t features = 8;  // h per plane
    Vec3 lo{-1.0, -1.0, -1.0};
    Vec3 hi{1.0, 1.0, 1.0};

    std::size_t res(std::size_t level) const { return base_res << level; }
    std::size_t out_dim() const { return levels * features; }
};

inline constexpr std::array<std::array<int, 2>, 6> kPlaneAxes = {
    {{0, 1}, {0, 2}, {1, 2}, {0, 3}, {1, 3}, {2, 3}}};
inline constexpr std::array<const char*, 6> kPlaneNames = {"xy", "xz", "yz",
                                                           "xt", "yt", "zt"};

struct HexPlaneField {
    HexPlaneConfig cfg;
    std::vector<ParamBlock> planes;        // levels*6, level-major
    mutable std::uint64_t clamp_count = 0; // out-of-bounds queries seen

    HexPlaneField() = default;
    HexPlaneField(const HexPlaneConfig& c, std::mt19937_64& rng);

    ParamBlock& plane(std::size_t level, std::size_t p) { return planes[level * 6 + p]; }
    const ParamBlock& plane(std::size_t level, std::size_t p) const {
        return planes[level * 6 + p];
    }

    struct Cache {
        double coord[4];   // normalized (x,y,z,t) in [0,1]
        bool clamped[4];
        struct Sample {
            std::size_t i0, j0;
            double fa, fb;
            std::vector<double> corners; // 4*h: (00,10,01,11) per channel
        };
        std::vector<Sample> samples;   // levels*6
        std::vector<double> out;       // levels*h, product-fused per level
    };

    // Bilinear sample of all planes; elementwise product across the six
    // planes of a level; concatenation across levels.
    Cache encode(const Vec3& p, double t) const;

    // Accumulates grid gradients; adds d(position) and d(t) contributions.
    void encode_backward(const Cache& cache, const double* dout, Vec3* dp, double* dt);

    // Mean squared difference between adjacent cells, over every plane.
    double tv_loss() const;
    void tv_loss_backward(double dloss);
};

// HexPlane encoder, latent MLP, and the three deformation decoder heads.
struct DeformationConfig {
    HexPlaneConfig grid;
    std::size_t latent_hidden = 64;
    std::size_t latent_dim = 64;
    std::size_t head_hidden = 64;
};

struct DeformationField {
    HexPlaneField grid;
    Mlp phi_d;    // grid.out_dim -> latent_hidden (relu) -> latent_dim
    Mlp head_dx;  // latent_dim -> head_hidden (relu) -> 3, final layer zero
    Mlp head_ds;  // -> 3
    Mlp head_dr;  // -> 4

    DeformationField() = default;
    DeformationField(const DeformationConfig& c, std::mt19937_64& rng);

    struct Cache {
        HexPlaneField::Cache grid_cache;
        Mlp::Cache latent, dx, ds, dr;
    };

    // delta: (dx[3], ds[3], dr[4]). The latent f_d sits in cache.latent.output.
    Cache deform_one(const Vec3& p, double t, double delta[10]) const;

    // ddelta: upstream gradient on (dx, ds, dr). Accumulates parameter
    // gradients and the query-position/time gradients.
    void deform_one_backward(const Cache& c, const double ddelta[10], Vec3* dp, double* dt);

    std::vector<ParamBlock*> blocks();
};

} // namespace coda
