#pragma once

#include "coda/io.hpp"

namespace coda {

struct LossWeights {
    double rgb = 1.0;
    double dssim = 0.2;
    double tv = 1.0;
    double depth = 0.5;
    double feat = 1.0;
};

struct LossReport {
    double rgb = 0.0;
    double dssim = 0.0;
    double tv = 0.0;
    double depth = 0.0;
    double feat = 0.0;
    double total = 0.0;
};

LossReport total_loss(double rgb, double dssim, double tv, double depth, double feat,
                      const LossWeights& w);

// Mean absolute difference over all entries.
double l1_loss(const Image& pred, const Image& target);
void l1_loss_backward(const Image& pred, const Image& target, double dloss, Image& dpred);

// Standard SSIM: 11x11 Gaussian window sigma 1.5, C1 = 0.01^2, C2 = 0.03^2,
// valid-region convolution, per channel then averaged. Images must be at
// least 11x11.
double ssim(const Image& pred, const Image& target);

// (1 - SSIM) / 2.
double dssim_loss(const Image& pred, const Image& target);
void dssim_loss_backward(const Image& pred, const Image& target, double dloss, Image& dpred);

// Mean absolute difference over pixels where mask > 0.5; 0 when the mask is
// empty. The trainer builds the mask from accum > 0.5 and target > 0.
double depth_loss(const Image& pred, const Image& target, const Image& mask);
void depth_loss_backward(const Image& pred, const Image& target, const Image& mask,
                         double dloss, Image& dpred);

// Mean over pixels of 1 - cos(pred, teacher); pixels with |pred| < 1e-8
// contribute 1 and get no gradient.
double feature_cosine_loss(const Image& pred, const Image& teacher);
void feature_cosine_loss_backward(const Image& pred, const Image& teacher, double dloss,
                                  Image& dpred);

double mse(const Image& pred, const Image& target);

// 10*log10(1/MSE), 99 sentinel when MSE is 0.
double psnr(const Image& pred, const Image& target);

// Same metrics restricted to pixels with mask > 0.5. Empty selection returns
// the identity value (99 / 1).
double psnr_masked(const Image& pred, const Image& target, const Image& mask);
double ssim_masked(const Image& pred, const Image& target, const Image& mask);

} // namespace coda
