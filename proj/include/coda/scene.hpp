#pragma once

#include "coda/geometry.hpp"
#include "coda/numeric.hpp"

#include <iosfwd>
#include <random>
#include <string>
#include <vector>

namespace coda {

inline constexpr std::size_t kShCoeffs = 16; // degree 3, per channel
inline constexpr std::size_t kShTotal = 48;  // 3 channels, channel-major layout
inline constexpr double kShC0 = 0.28209479177387814;

// Canonical Gaussian set. Raw parameters are unconstrained; activations are
// applied on use: scale = exp(log_scale), opacity = sigmoid(logit),
// quaternion and context feature normalized on use.
struct GaussianScene {
    std::size_t count = 0;
    std::size_t feature_dim = 0;
    ParamBlock positions;        // [N,3]
    ParamBlock log_scales;       // [N,3]
    ParamBlock rotations;        // [N,4], (w,x,y,z)
    ParamBlock opacity_logits;   // [N,1]
    ParamBlock sh_coeffs;        // [N,48], c[ch*16 + j]
    ParamBlock context_features; // [N,F]

    GaussianScene() = default;
    GaussianScene(std::size_t n, std::size_t f);

    std::vector<ParamBlock*> blocks();
    std::vector<const ParamBlock*> blocks() const;

    // Rebuilds the scene keeping only rows where keep[i] is true.
    void compact(const std::vector<bool>& keep);
};

// Real SH basis of degree 3 (16 functions) at a unit direction.
void sh_basis(const double dir[3], double basis[16]);

// d(basis_j)/d(dir_k), 16x3, at a unit direction.
void sh_basis_dir_grad(const double dir[3], double dbasis[16][3]);

// Per channel: 0.5 + sum_j coeffs[ch*16+j] * basis_j, clamped to [0,1].
void evaluate_sh(const double coeffs[48], const double dir[3], double rgb[3]);

// Accumulates dL/dcoeffs and dL/ddir given dL/drgb. The clamp gates the
// gradient: channels at 0 or 1 contribute nothing.
void evaluate_sh_backward(const double coeffs[48], const double dir[3],
                          const double drgb[3], double dcoeffs[48], double ddir[3]);

// One Gaussian per point: isotropic log-scale from mean distance to the
// 3 nearest neighbors (log 0.01 fallback for a lone point), identity
// rotation, opacity logit(0.1), SH DC from color, random unit features.
GaussianScene init_from_points(const std::vector<Vec3>& points,
                               const std::vector<Vec3>& colors,
                               std::size_t feature_dim, std::uint64_t seed);

// Scene file: magic "C4DG", version, N, F, six f64 arrays, payload CRC32.
void save_scene(const GaussianScene& scene, std::ostream& os);
GaussianScene load_scene(std::istream& is);
void save_scene_file(const GaussianScene& scene, const std::string& path);
GaussianScene load_scene_file(const std::string& path);

} // namespace coda
