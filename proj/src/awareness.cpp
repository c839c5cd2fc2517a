#include "coda/awareness.hpp"
#include "coda/errors.hpp"

#include <cmath>

namespace coda {

std::vector<double> time_embedding(std::uint64_t frame_index, std::size_t d) {
    if (d < 2 || d % 2 != 0) throw ConfigError("time embedding dimension must be even and >= 2");
    std::vector<double> out(d);
    const double tau = static_cast<double>(frame_index);
    for (std::size_t i = 0; i < d; ++i) {
        const double denom = std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(d));
        out[i] = std::sin(tau / denom);
    }
    return out;
}

std::vector<double> aggregate_awareness(const std::vector<double>& f_time,
                                        const double f_def[10],
                                        const std::vector<double>& f_con) {
    std::vector<double> agg;
    agg.reserve(f_time.size() + 10 + f_con.size());
    agg.insert(agg.end(), f_time.begin(), f_time.end());
    agg.insert(agg.end(), f_def, f_def + 10);
    agg.insert(agg.end(), f_con.begin(), f_con.end());
    return agg;
}

Dcn::Dcn(const DcnConfig& c, std::mt19937_64& rng)
    : cfg(c),
      phi_p("dcn/phi_p", {c.in_dim(), c.hidden, c.hidden, 10}, FinalActivation::Identity, rng, true),
      phi_s("dcn/phi_s/linear", {10, c.in_dim() + 1}) {
    xavier_init(phi_s, rng);
}

Dcn::Cache Dcn::compensate_one(const std::vector<double>& agg, double comp[10]) const {
    if (agg.size() != cfg.in_dim()) throw ShapeError("awareness aggregate width mismatch");
    Cache c;
    c.agg = agg;
    c.p = phi_p.forward(agg.data());
    double lin[10];
    affine_forward(phi_s, agg.data(), lin);
    for (int i = 0; i < 10; ++i) {
        c.mask[i] = sigmoid(lin[i]);
        c.p_out[i] = c.p.output[i];
        comp[i] = c.p_out[i] * c.mask[i];
    }
    return c;
}

void Dcn::compensate_one_backward(const Cache& c, const double dcomp[10], double* dagg) {
    double dp[10], dlin[10];
    for (int i = 0; i < 10; ++i) {
        dp[i] = dcomp[i] * c.mask[i];
        dlin[i] = dcomp[i] * c.p_out[i] * sigmoid_grad_from_y(c.mask[i]);
    }
    std::vector<double> dagg_p(cfg.in_dim()), dagg_s(cfg.in_dim());
    phi_p.backward(c.p, dp, dagg_p.data());
    affine_backward(phi_s, c.agg.data(), dlin, dagg_s.data());
    for (std::size_t i = 0; i < cfg.in_dim(); ++i) dagg[i] += dagg_p[i] + dagg_s[i];
}

std::vector<ParamBlock*> Dcn::blocks() {
    std::vector<ParamBlock*> out = phi_p.blocks();
    out.push_back(&phi_s);
    return out;
}

} // namespace coda
