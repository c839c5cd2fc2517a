#pragma once

#include "coda/numeric.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace coda {

// Sinusoidal frame-index embedding: entry i = sin(tau / 10000^(2i/d)).
std::vector<double> time_embedding(std::uint64_t frame_index, std::size_t d);

// Fixed-order concatenation (f_time | f_def | f_con).
std::vector<double> aggregate_awareness(const std::vector<double>& f_time,
                                        const double f_def[10],
                                        const std::vector<double>& f_con);

// Two-channel compensation network: a residual head phi_p gated by a
// sigmoid mask from a single linear layer phi_s. Output 10 splits into
// (dx 3, ds 3, dr 4) applied to the deformed geometry.
struct DcnConfig {
    std::size_t time_dim = 64;
    std::size_t feature_dim = 8;
    std::size_t hidden = 64;

    std::size_t in_dim() const { return time_dim + 10 + feature_dim; }
};

struct Dcn {
    DcnConfig cfg;
    Mlp phi_p;        // in -> hidden (relu) -> hidden (relu) -> 10, final layer zero
    ParamBlock phi_s; // "dcn/phi_s/linear", [10, in+1]; sigmoid applied after

    Dcn() = default;
    Dcn(const DcnConfig& c, std::mt19937_64& rng);

    struct Cache {
        std::vector<double> agg;
        Mlp::Cache p;
        double mask[10];  // sigmoid outputs
        double p_out[10];
    };

    Cache compensate_one(const std::vector<double>& agg, double comp[10]) const;

    // Accumulates parameter grads; writes dL/d(agg) into dagg (size in_dim).
    void compensate_one_backward(const Cache& c, const double dcomp[10], double* dagg);

    std::vector<ParamBlock*> blocks();
};

} // namespace coda
