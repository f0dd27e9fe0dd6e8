#pragma once

#include <cstdint>
#include <span>

#include "cesor/core.hpp"
#include "cesor/policy.hpp"

namespace cesor {

struct GradientReport {
    Gradient gradient;
    std::size_t used_count = 0;         // episodes with R < q strictly
    double used_weight_fraction = 0.0;  // sum of used weights / sum of all weights
    double n_eff_used = 0.0;            // effective sample size of the used weights
    double q_hat = 0.0;
};

// Risk-neutral REINFORCE with the batch-mean baseline over reference episodes:
// (1/N) sum_i (R_i - mean R) score_i.
GradientReport mean_pg_gradient(const ReturnBatch& batch, std::span<const Gradient> scores);

// Importance-weighted CVaR policy gradient:
// 1/(alpha N) sum_i w_i 1{R_i < q} (R_i - q) score_i.
GradientReport cvar_pg_gradient(const ReturnBatch& batch, std::span<const Gradient> scores,
                                double q_hat, double alpha_eff);

struct AdamConfig {
    double learning_rate = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    AdamConfig config;
    std::int64_t step_count = 0;
    Vector first_moment;
    Vector second_moment;

    static AdamState for_params(const PolicyParams& params, AdamConfig config);
};

// One bias-corrected Adam step along +gradient (ascent).
void adam_step(AdamState& state, PolicyParams& params, const Gradient& gradient);

}  // namespace cesor
