#pragma once

#include "coda/io.hpp"
#include "coda/numeric.hpp"
#include "coda/scene.hpp"

#include <cmath>
#include <functional>
#include <random>

namespace coda::testing {

inline double rel_err(double got, double want) {
    return std::abs(got - want) / std::max(1.0, std::abs(want));
}

// Central finite difference of loss() w.r.t. one entry of a block.
inline double fd_entry(std::vector<double>& data, std::size_t i,
                       const std::function<double()>& loss, double eps = 1e-5) {
    const double save = data[i];
    data[i] = save + eps;
    const double up = loss();
    data[i] = save - eps;
    const double down = loss();
    data[i] = save;
    return (up - down) / (2.0 * eps);
}

// Max relative error between a block's accumulated grad and finite
// differences of loss() over every entry.
inline double block_grad_err(ParamBlock& b, const std::function<double()>& loss,
                             double eps = 1e-5) {
    double worst = 0.0;
    for (std::size_t i = 0; i < b.size(); ++i)
        worst = std::max(worst, rel_err(b.grad[i], fd_entry(b.data, i, loss, eps)));
    return worst;
}

inline Image random_image(int w, int h, int c, std::mt19937_64& rng, double lo = 0.0,
                          double hi = 1.0) {
    Image img(w, h, c);
    for (double& v : img.data) v = uniform(rng, lo, hi);
    return img;
}

// A small random scene with well-conditioned splats in front of a camera at
// the origin looking down +y (matching the bundled camera rig).
inline GaussianScene random_scene(std::size_t n, std::size_t feature_dim,
                                  std::mt19937_64& rng) {
    GaussianScene s(n, feature_dim);
    for (std::size_t i = 0; i < n; ++i) {
        s.positions.at(i, 0) = uniform(rng, -1.5, 1.5);
        s.positions.at(i, 1) = uniform(rng, -1.0, 1.0);
        s.positions.at(i, 2) = uniform(rng, -1.0, 1.5);
        for (int a = 0; a < 3; ++a) s.log_scales.at(i, a) = uniform(rng, -2.2, -1.0);
        double q[4], n2 = 0.0;
        for (double& v : q) {
            v = uniform(rng, -1.0, 1.0);
            n2 += v * v;
        }
        for (int a = 0; a < 4; ++a) s.rotations.at(i, a) = q[a] / std::sqrt(n2);
        s.opacity_logits.data[i] = uniform(rng, -1.0, 2.0);
        for (std::size_t k = 0; k < kShTotal; ++k)
            s.sh_coeffs.data[i * kShTotal + k] =
                k % kShCoeffs == 0 ? uniform(rng, -0.8, 0.8) : uniform(rng, -0.15, 0.15);
        for (std::size_t k = 0; k < feature_dim; ++k)
            s.context_features.at(i, k) = uniform(rng, -1.0, 1.0);
    }
    return s;
}

} // namespace coda::testing
