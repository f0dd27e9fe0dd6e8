#pragma once

// Empirical checks of the CVaR-PG failure modes and of the estimators:
// tail barriers, blindness-to-success escape probabilities, the variance of
// tail-sampled gradients, and finite-difference gradient checks.

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cesor/core.hpp"
#include "cesor/policy.hpp"

namespace cesor {

struct BarrierReport {
    double alpha_tested = 0.0;
    double widest_barrier_beta = 0.0;  // (count of minimal returns) / n
    double tail_value = 0.0;           // the minimal return
    std::size_t n = 0;
    std::size_t min_count = 0;
    // Same tail-count convention as empirical_quantile.
    bool has_alpha_barrier() const;
};

// Widest beta such that the bottom ceil(beta n) returns are all equal. A
// unique minimum gives 1/n.
BarrierReport detect_tail_barrier(std::span<const double> returns, double alpha);

struct BlindnessResult {
    std::size_t trials = 0;
    std::size_t escapes = 0;
    double empirical = 0.0;  // escapes / trials
    double bound = 0.0;      // n exp(-2 N (beta - alpha)^2)
};

// Each step draws Binomial(N, 1 - beta) returns above the barrier; a trial
// escapes at the first step where at least ceil((1 - alpha) N) do.
BlindnessResult blindness_monte_carlo(double alpha, double beta, int batch_size, std::int64_t n_steps,
                                      std::size_t trials, std::uint64_t seed, unsigned workers = 0);

double blindness_bound(double alpha, double beta, int batch_size, double n_steps);

struct VarianceResult {
    double var_tail = 0.0;
    double var_full = 0.0;
    double ratio = 0.0;  // var_tail / var_full, 1 when both vanish
};

// One-step C-MDP: C ~ U(0, 1), R = C, so q_alpha = alpha. A fixed policy over
// two actions with probabilities `probs` is differentiated in its logits
// (score e_a - pi). The full arm samples C ~ U(0, 1) with weight 1; the tail
// arm samples C = alpha u with weight alpha, sharing u and the actions.
VarianceResult variance_reduction_experiment(double alpha, int batch_size, int repeats, std::uint64_t seed,
                                             std::array<double, 2> probs = {0.3, 0.7});

using AnalyticLogProbGrad = std::function<Gradient(const PolicyParams&, std::span<const double>, int)>;

// Max over (obs, action) of ||analytic - fd|| / max(||analytic|| + ||fd||, 1e-10)
// with central differences of log pi at the training temperature.
double gradient_check(const PolicyParams& params, std::span<const Vector> observations, double epsilon,
                      const AnalyticLogProbGrad& analytic = log_prob_gradient);

// Random (params, obs, action) triples for one architecture.
double random_gradient_check(const PolicySpec& spec, int instances, double epsilon, std::uint64_t seed,
                             const AnalyticLogProbGrad& analytic = log_prob_gradient);

struct Verdict {
    std::string name;
    nlohmann::json parameters;
    double statistic = 0.0;
    double bound = 0.0;
    bool pass = false;
};

nlohmann::json verdict_to_json(const Verdict& v);

std::vector<Verdict> verify_barrier(std::uint64_t seed);
std::vector<Verdict> verify_blindness(std::uint64_t seed, unsigned workers = 0);
std::vector<Verdict> verify_variance(std::uint64_t seed);
std::vector<Verdict> verify_gradcheck(std::uint64_t seed, const AnalyticLogProbGrad& analytic = log_prob_gradient);

}  // namespace cesor
