#include "coda/losses.hpp"
#include "coda/errors.hpp"

#include <cmath>
#include <vector>

namespace coda {

namespace {

constexpr int kWin = 11;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const double* ssim_window() {
    static const std::vector<double> w = [] {
        std::vector<double> v(kWin);
        const double sigma = 1.5;
        double sum = 0.0;
        for (int i = 0; i < kWin; ++i) {
            const double d = i - (kWin - 1) / 2.0;
            v[i] = std::exp(-d * d / (2.0 * sigma * sigma));
            sum += v[i];
        }
        for (double& x : v) x /= sum;
        return v;
    }();
    return w.data();
}

void require_same_shape(const Image& a, const Image& b, const char* what) {
    if (a.width != b.width || a.height != b.height || a.channels != b.channels)
        throw ShapeError(std::string(what) + ": image shapes differ");
}

// Valid-region 11x11 Gaussian filter of an elementwise product of up to two
// images (pass b = nullptr for a plain filter of a).
Image window_filter(const Image& a, const Image* b) {
    const double* w = ssim_window();
    const int H = a.height, W = a.width, C = a.channels;
    const int oh = H - kWin + 1, ow = W - kWin + 1;
    // Horizontal pass.
    Image tmp(ow, H, C);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < ow; ++x)
            for (int c = 0; c < C; ++c) {
                double acc = 0.0;
                for (int k = 0; k < kWin; ++k) {
                    double v = a.at(y, x + k, c);
                    if (b) v *= b->at(y, x + k, c);
                    acc += w[k] * v;
                }
                tmp.at(y, x, c) = acc;
            }
    // Vertical pass.
    Image out(ow, oh, C);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x)
            for (int c = 0; c < C; ++c) {
                double acc = 0.0;
                for (int k = 0; k < kWin; ++k) acc += w[k] * tmp.at(y + k, x, c);
                out.at(y, x, c) = acc;
            }
    return out;
}

struct SsimFields {
    Image mu_x, mu_y, sxx, syy, sxy; // windowed moments over the valid region
    Image map;                       // per-pixel, per-channel SSIM
};

SsimFields ssim_fields(const Image& pred, const Image& target) {
    require_same_shape(pred, target, "ssim");
    if (pred.width < kWin || pred.height < kWin)
        throw ShapeError("ssim: images must be at least 11x11");
    SsimFields f;
    f.mu_x = window_filter(pred, nullptr);
    f.mu_y = window_filter(target, nullptr);
    f.sxx = window_filter(pred, &pred);
    f.syy = window_filter(target, &target);
    f.sxy = window_filter(pred, &target);
    f.map = Image(f.mu_x.width, f.mu_x.height, f.mu_x.channels);
    for (std::size_t i = 0; i < f.map.size(); ++i) {
        const double mx = f.mu_x.data[i], my = f.mu_y.data[i];
        const double vx = f.sxx.data[i] - mx * mx;
        const double vy = f.syy.data[i] - my * my;
        const double vxy = f.sxy.data[i] - mx * my;
        const double p = 2.0 * mx * my + kC1;
        const double q = 2.0 * vxy + kC2;
        const double r = mx * mx + my * my + kC1;
        const double s = vx + vy + kC2;
        f.map.data[i] = (p * q) / (r * s);
    }
    return f;
}

} // namespace

LossReport total_loss(double rgb, double dssim, double tv, double depth, double feat,
                      const LossWeights& w) {
    LossReport r;
    r.rgb = rgb;
    r.dssim = dssim;
    r.tv = tv;
    r.depth = depth;
    r.feat = feat;
    r.total = w.rgb * rgb + w.dssim * dssim + w.tv * tv + w.depth * depth + w.feat * feat;
    return r;
}

double l1_loss(const Image& pred, const Image& target) {
    require_same_shape(pred, target, "l1_loss");
    if (pred.size() == 0) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) acc += std::abs(pred.data[i] - target.data[i]);
    return acc / static_cast<double>(pred.size());
}

void l1_loss_backward(const Image& pred, const Image& target, double dloss, Image& dpred) {
    require_same_shape(pred, target, "l1_loss_backward");
    require_same_shape(pred, dpred, "l1_loss_backward");
    if (pred.size() == 0) return;
    const double scale = dloss / static_cast<double>(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred.data[i] - target.data[i];
        if (d > 0.0)
            dpred.data[i] += scale;
        else if (d < 0.0)
            dpred.data[i] -= scale;
    }
}

double ssim(const Image& pred, const Image& target) {
    const SsimFields f = ssim_fields(pred, target);
    double acc = 0.0;
    for (double v : f.map.data) acc += v;
    return acc / static_cast<double>(f.map.size());
}

double dssim_loss(const Image& pred, const Image& target) {
    return (1.0 - ssim(pred, target)) / 2.0;
}

void dssim_loss_backward(const Image& pred, const Image& target, double dloss, Image& dpred) {
    require_same_shape(pred, dpred, "dssim_loss_backward");
    const SsimFields f = ssim_fields(pred, target);
    const double* w = ssim_window();
    const double dmap = dloss * (-0.5) / static_cast<double>(f.map.size());
    const int oh = f.map.height, ow = f.map.width, C = f.map.channels;
    for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox)
            for (int c = 0; c < C; ++c) {
                const double mx = f.mu_x.at(oy, ox, c), my = f.mu_y.at(oy, ox, c);
                const double vx = f.sxx.at(oy, ox, c) - mx * mx;
                const double vy = f.syy.at(oy, ox, c) - my * my;
                const double vxy = f.sxy.at(oy, ox, c) - mx * my;
                const double p = 2.0 * mx * my + kC1;
                const double q = 2.0 * vxy + kC2;
                const double r = mx * mx + my * my + kC1;
                const double s = vx + vy + kC2;
                const double rs = r * s;
                // Moments of pred: A = mu_x, B = G*(x^2), Cm = G*(x*y).
                const double dA = dmap * ((2.0 * my * q - 2.0 * my * p) / rs -
                                          p * q * (2.0 * mx * s - 2.0 * mx * r) / (rs * rs));
                const double dB = dmap * (-p * q / (r * s * s));
                const double dCm = dmap * (2.0 * p / rs);
                for (int ky = 0; ky < kWin; ++ky)
                    for (int kx = 0; kx < kWin; ++kx) {
                        const double wk = w[ky] * w[kx];
                        const double xv = pred.at(oy + ky, ox + kx, c);
                        const double yv = target.at(oy + ky, ox + kx, c);
                        dpred.at(oy + ky, ox + kx, c) +=
                            wk * (dA + 2.0 * xv * dB + yv * dCm);
                    }
            }
}

double depth_loss(const Image& pred, const Image& target, const Image& mask) {
    require_same_shape(pred, target, "depth_loss");
    if (mask.width != pred.width || mask.height != pred.height || mask.channels != 1)
        throw ShapeError("depth_loss: mask shape mismatch");
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (mask.data[i] > 0.5) {
            acc += std::abs(pred.data[i] - target.data[i]);
            ++n;
        }
    return n == 0 ? 0.0 : acc / static_cast<double>(n);
}

void depth_loss_backward(const Image& pred, const Image& target, const Image& mask,
                         double dloss, Image& dpred) {
    require_same_shape(pred, target, "depth_loss_backward");
    require_same_shape(pred, dpred, "depth_loss_backward");
    std::size_t n = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (mask.data[i] > 0.5) ++n;
    if (n == 0) return;
    const double scale = dloss / static_cast<double>(n);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (mask.data[i] <= 0.5) continue;
        const double d = pred.data[i] - target.data[i];
        if (d > 0.0)
            dpred.data[i] += scale;
        else if (d < 0.0)
            dpred.data[i] -= scale;
    }
}

double feature_cosine_loss(const Image& pred, const Image& teacher) {
    require_same_shape(pred, teacher, "feature_cosine_loss");
    const int C = pred.channels;
    const std::size_t n = static_cast<std::size_t>(pred.width) * pred.height;
    if (n == 0) return 0.0;
    double acc = 0.0;
    for (std::size_t pix = 0; pix < n; ++pix) {
        double pp = 0.0, tt = 0.0, pt = 0.0;
        for (int c = 0; c < C; ++c) {
            const double pv = pred.data[pix * C + c];
            const double tv = teacher.data[pix * C + c];
            pp += pv * pv;
            tt += tv * tv;
            pt += pv * tv;
        }
        const double pn = std::sqrt(pp), tn = std::sqrt(tt);
        if (pn < 1e-8 || tn < 1e-8)
            acc += 1.0;
        else
            acc += 1.0 - pt / (pn * tn);
    }
    return acc / static_cast<double>(n);
}

void feature_cosine_loss_backward(const Image& pred, const Image& teacher, double dloss,
                                  Image& dpred) {
    require_same_shape(pred, teacher, "feature_cosine_loss_backward");
    require_same_shape(pred, dpred, "feature_cosine_loss_backward");
    const int C = pred.channels;
    const std::size_t n = static_cast<std::size_t>(pred.width) * pred.height;
    if (n == 0) return;
    const double scale = dloss / static_cast<double>(n);
    for (std::size_t pix = 0; pix < n; ++pix) {
        double pp = 0.0, tt = 0.0, pt = 0.0;
        for (int c = 0; c < C; ++c) {
            const double pv = pred.data[pix * C + c];
            const double tv = teacher.data[pix * C + c];
            pp += pv * pv;
            tt += tv * tv;
            pt += pv * tv;
        }
        const double pn = std::sqrt(pp), tn = std::sqrt(tt);
        if (pn < 1e-8 || tn < 1e-8) continue;
        // d(1 - <p,t>/(|p||t|))/dp = -(t/(|p||t|) - p*<p,t>/(|p|^3 |t|))
        const double inv = 1.0 / (pn * tn);
        const double self = pt / (pn * pn);
        for (int c = 0; c < C; ++c) {
            const double pv = pred.data[pix * C + c];
            const double tv = teacher.data[pix * C + c];
            dpred.data[pix * C + c] += scale * (-(tv - pv * self) * inv);
        }
    }
}

double mse(const Image& pred, const Image& target) {
    require_same_shape(pred, target, "mse");
    if (pred.size() == 0) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred.data[i] - target.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(pred.size());
}

double psnr(const Image& pred, const Image& target) {
    const double m = mse(pred, target);
    if (m == 0.0) return 99.0;
    return 10.0 * std::log10(1.0 / m);
}

double psnr_masked(const Image& pred, const Image& target, const Image& mask) {
    require_same_shape(pred, target, "psnr_masked");
    if (mask.width != pred.width || mask.height != pred.height || mask.channels != 1)
        throw ShapeError("psnr_masked: mask shape mismatch");
    const int C = pred.channels;
    const std::size_t n = static_cast<std::size_t>(pred.width) * pred.height;
    double acc = 0.0;
    std::size_t cnt = 0;
    for (std::size_t pix = 0; pix < n; ++pix) {
        if (mask.data[pix] <= 0.5) continue;
        for (int c = 0; c < C; ++c) {
            const double d = pred.data[pix * C + c] - target.data[pix * C + c];
            acc += d * d;
        }
        cnt += C;
    }
    if (cnt == 0) return 99.0;
    const double m = acc / static_cast<double>(cnt);
    if (m == 0.0) return 99.0;
    return 10.0 * std::log10(1.0 / m);
}

double ssim_masked(const Image& pred, const Image& target, const Image& mask) {
    if (mask.width != pred.width || mask.height != pred.height || mask.channels != 1)
        throw ShapeError("ssim_masked: mask shape mismatch");
    const SsimFields f = ssim_fields(pred, target);
    const int off = (kWin - 1) / 2;
    double acc = 0.0;
    std::size_t cnt = 0;
    for (int oy = 0; oy < f.map.height; ++oy)
        for (int ox = 0; ox < f.map.width; ++ox) {
            if (mask.at(oy + off, ox + off, 0) <= 0.5) continue;
            for (int c = 0; c < f.map.channels; ++c) acc += f.map.at(oy, ox, c);
            cnt += f.map.channels;
        }
    if (cnt == 0) return 1.0;
    return acc / static_cast<double>(cnt);
}

} // namespace coda
