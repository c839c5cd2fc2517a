#include "coda/numeric.hpp"
#include "coda/errors.hpp"

#include <cmath>
#include <numeric>

namespace coda {

ParamBlock::ParamBlock(std::string n, std::vector<std::size_t> s)
    : name(std::move(n)), shape(std::move(s)) {
    std::size_t total = 1;
    for (std::size_t d : shape) total *= d;
    data.assign(total, 0.0);
    grad.assign(total, 0.0);
}

std::size_t ParamBlock::cols() const {
    std::size_t c = 1;
    for (std::size_t i = 1; i < shape.size(); ++i) c *= shape[i];
    return c;
}

double& ParamBlock::at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
double ParamBlock::at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
double& ParamBlock::gat(std::size_t r, std::size_t c) { return grad[r * cols() + c]; }

void ParamBlock::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

void ParamBlock::check_grad_finite() const {
    for (double g : grad)
        if (!std::isfinite(g))
            throw NumericError("non-finite gradient in block '" + name + "'");
}

void AdamState::init(std::size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
    step_count = 0;
}

void adam_step(ParamBlock& p, AdamState& st, double lr, const AdamConfig& cfg) {
    p.check_grad_finite();
    if (st.m.size() != p.size()) st.init(p.size());
    ++st.step_count;
    const double b1t = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step_count));
    const double b2t = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step_count));
    for (std::size_t i = 0; i < p.size(); ++i) {
        double g = p.grad[i];
        st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * g;
        st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * g * g;
        double mhat = st.m[i] / b1t;
        double vhat = st.v[i] / b2t;
        p.data[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    p.zero_grad();
}

double lr_schedule(std::uint64_t step, std::uint64_t total, double lr_start, double lr_end) {
    if (total <= 1) return lr_start;
    if (step >= total - 1) return lr_end;
    double t = static_cast<double>(step) / static_cast<double>(total - 1);
    return lr_start * std::pow(lr_end / lr_start, t);
}

double relu(double x) { return x > 0.0 ? x : 0.0; }
double relu_grad(double x) { return x > 0.0 ? 1.0 : 0.0; }

double sigmoid(double x) {
    if (x >= 0.0) {
        double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

double sigmoid_grad_from_y(double y) { return y * (1.0 - y); }

void affine_forward(const ParamBlock& layer, const double* x, double* y) {
    const std::size_t out = layer.rows();
    const std::size_t inp1 = layer.cols();
    const std::size_t in = inp1 - 1;
    for (std::size_t r = 0; r < out; ++r) {
        const double* w = layer.data.data() + r * inp1;
        double acc = w[in]; // bias
        for (std::size_t c = 0; c < in; ++c) acc += w[c] * x[c];
        y[r] = acc;
    }
}

void affine_backward(ParamBlock& layer, const double* x, const double* dy, double* dx) {
    const std::size_t out = layer.rows();
    const std::size_t inp1 = layer.cols();
    const std::size_t in = inp1 - 1;
    if (dx)
        for (std::size_t c = 0; c < in; ++c) dx[c] = 0.0;
    for (std::size_t r = 0; r < out; ++r) {
        const double g = dy[r];
        double* gw = layer.grad.data() + r * inp1;
        const double* w = layer.data.data() + r * inp1;
        gw[in] += g;
        for (std::size_t c = 0; c < in; ++c) {
            gw[c] += g * x[c];
            if (dx) dx[c] += g * w[c];
        }
    }
}

Mlp::Mlp(const std::string& prefix, const std::vector<std::size_t>& widths,
         FinalActivation fa, std::mt19937_64& rng, bool zero_init_last)
    : final_act(fa) {
    if (widths.size() < 2) throw ShapeError("mlp needs at least one layer");
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        ParamBlock layer(prefix + "/layer" + std::to_string(i), {widths[i + 1], widths[i] + 1});
        bool last = (i + 2 == widths.size());
        if (last && zero_init_last) {
            // already zero
        } else {
            xavier_init(layer, rng);
        }
        layers.push_back(std::move(layer));
    }
}

std::size_t Mlp::in_dim() const { return layers.front().cols() - 1; }
std::size_t Mlp::out_dim() const { return layers.back().rows(); }

Mlp::Cache Mlp::forward(const double* x) const {
    Cache cache;
    std::vector<double> cur(x, x + in_dim());
    for (std::size_t i = 0; i < layers.size(); ++i) {
        cache.inputs.push_back(cur);
        std::vector<double> next(layers[i].rows());
        affine_forward(layers[i], cur.data(), next.data());
        bool last = (i + 1 == layers.size());
        if (!last) {
            for (double& v : next) v = relu(v);
        } else if (final_act == FinalActivation::Sigmoid) {
            for (double& v : next) v = sigmoid(v);
        }
        cur = std::move(next);
    }
    cache.output = cur;
    return cache;
}

void Mlp::backward(const Cache& cache, const double* dout, double* dx) {
    std::vector<double> dcur(dout, dout + out_dim());
    if (final_act == FinalActivation::Sigmoid)
        for (std::size_t i = 0; i < dcur.size(); ++i)
            dcur[i] *= sigmoid_grad_from_y(cache.output[i]);
    for (std::size_t li = layers.size(); li-- > 0;) {
        ParamBlock& layer = layers[li];
        const std::vector<double>& x = cache.inputs[li];
        bool last = (li + 1 == layers.size());
        if (!last) {
            // dcur currently holds dL/d(relu out); fold in relu'.
            // Recompute pre-activation to know where relu was active.
            std::vector<double> pre(layer.rows());
            affine_forward(layer, x.data(), pre.data());
            for (std::size_t i = 0; i < dcur.size(); ++i) dcur[i] *= relu_grad(pre[i]);
        }
        std::vector<double> dprev(x.size());
        affine_backward(layer, x.data(), dcur.data(), dprev.data());
        dcur = std::move(dprev);
    }
    if (dx)
        for (std::size_t i = 0; i < dcur.size(); ++i) dx[i] = dcur[i];
}

std::vector<ParamBlock*> Mlp::blocks() {
    std::vector<ParamBlock*> out;
    for (auto& l : layers) out.push_back(&l);
    return out;
}

void xavier_init(ParamBlock& layer, std::mt19937_64& rng) {
    const std::size_t out = layer.rows();
    const std::size_t in = layer.cols() - 1;
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    for (std::size_t r = 0; r < out; ++r) {
        for (std::size_t c = 0; c < in; ++c) layer.at(r, c) = uniform(rng, -bound, bound);
        layer.at(r, in) = 0.0;
    }
}

GradCheckResult grad_check(
    std::vector<double> x, std::size_t n_out,
    const std::function<void(const double* x, double* y)>& f,
    const std::function<void(const double* x, const double* w, double* dx)>& analytic,
    std::mt19937_64& rng, double eps) {
    const std::size_t n_in = x.size();
    std::vector<double> w(n_out);
    for (double& v : w) v = uniform(rng, -1.0, 1.0);

    std::vector<double> dx(n_in, 0.0);
    analytic(x.data(), w.data(), dx.data());

    GradCheckResult res;
    std::vector<double> yp(n_out), ym(n_out);
    for (std::size_t i = 0; i < n_in; ++i) {
        double saved = x[i];
        x[i] = saved + eps;
        f(x.data(), yp.data());
        x[i] = saved - eps;
        f(x.data(), ym.data());
        x[i] = saved;
        double fd = 0.0;
        for (std::size_t j = 0; j < n_out; ++j) fd += w[j] * (yp[j] - ym[j]);
        fd /= 2.0 * eps;
        double err = std::abs(dx[i] - fd) / std::max(1.0, std::abs(fd));
        if (err > res.max_rel_err) {
            res.max_rel_err = err;
            res.argmax = i;
        }
    }
    return res;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    return dist(rng);
}

} // namespace coda
