#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace coda {

// A named dense tensor of doubles with a gradient buffer of the same shape.
// Shapes are row-major; a linear layer is stored as [out, in+1] with the
// last column holding the bias.
struct ParamBlock {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;

    ParamBlock() = default;
    ParamBlock(std::string n, std::vector<std::size_t> s);

    std::size_t size() const { return data.size(); }
    std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
    std::size_t cols() const;

    double& at(std::size_t r, std::size_t c);
    double at(std::size_t r, std::size_t c) const;
    double& gat(std::size_t r, std::size_t c);

    void zero_grad();
    void check_grad_finite() const; // throws NumericError naming the block
};

// Adam moment buffers for one ParamBlock.
struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t step_count = 0;

    void init(std::size_t n);
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-15;
};

// One Adam update with bias correction. Validates gradient finiteness,
// applies the update, then clears the gradient.
void adam_step(ParamBlock& p, AdamState& st, double lr, const AdamConfig& cfg = {});

// Exponential decay from lr_start to lr_end over total steps; step is clamped.
double lr_schedule(std::uint64_t step, std::uint64_t total, double lr_start, double lr_end);

// Scalar activations with derivatives.
double relu(double x);
double relu_grad(double x);
double sigmoid(double x);
double sigmoid_grad_from_y(double y); // derivative given the forward output

// y = W x + b where layer is [out, in+1]. x has in entries, y gets out entries.
void affine_forward(const ParamBlock& layer, const double* x, double* y);

// Accumulates dL/dW, dL/db into layer.grad and dL/dx into dx (dx may be null).
void affine_backward(ParamBlock& layer, const double* x, const double* dy, double* dx);

// A fully connected network with relu between layers and a configurable
// final activation. Caches per-call activations so backward can be driven
// for an arbitrary batch of forward calls in reverse order.
enum class FinalActivation { Identity, Sigmoid };

struct Mlp {
    std::vector<ParamBlock> layers;
    FinalActivation final_act = FinalActivation::Identity;

    // Cache of pre-activation inputs per layer for each forward call.
    struct Cache {
        std::vector<std::vector<double>> inputs; // input to each layer
        std::vector<double> output;              // post final activation
    };

    Mlp() = default;
    Mlp(const std::string& prefix, const std::vector<std::size_t>& widths,
        FinalActivation fa, std::mt19937_64& rng, bool zero_init_last);

    std::size_t in_dim() const;
    std::size_t out_dim() const;

    Cache forward(const double* x) const;
    // Accumulates parameter grads; writes dL/dx into dx (size in_dim).
    void backward(const Cache& cache, const double* dout, double* dx);

    std::vector<ParamBlock*> blocks();
};

// Xavier-uniform fill for a [out, in+1] layer; bias column zeroed.
void xavier_init(ParamBlock& layer, std::mt19937_64& rng);

// Finite-difference gradient verification at a caller-chosen point x.
// f maps x to an output vector; analytic must fill dx with d(w . f(x))/dx
// for the random projection w drawn here. Returns the max relative error
// over input components, where the denominator is max(1, |fd|).
struct GradCheckResult {
    double max_rel_err = 0.0;
    std::size_t argmax = 0;
};

GradCheckResult grad_check(
    std::vector<double> x, std::size_t n_out,
    const std::function<void(const double* x, double* y)>& f,
    const std::function<void(const double* x, const double* w, double* dx)>& analytic,
    std::mt19937_64& rng, double eps = 1e-5);

// Draw from U(lo, hi).
double uniform(std::mt19937_64& rng, double lo, double hi);

} // namespace coda
