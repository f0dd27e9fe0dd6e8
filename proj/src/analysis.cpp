#include "cesor/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "cesor/gradients.hpp"
#include "cesor/parallel.hpp"
#include "cesor/rng.hpp"

namespace cesor {

bool BarrierReport::has_alpha_barrier() const { return n > 0 && min_count >= tail_count(n, alpha_tested); }

BarrierReport detect_tail_barrier(std::span<const double> returns, double alpha) {
    if (returns.empty()) throw std::invalid_argument("empty returns");
    BarrierReport r;
    r.alpha_tested = alpha;
    r.n = returns.size();
    r.tail_value = *std::min_element(returns.begin(), returns.end());
    r.min_count = static_cast<std::size_t>(std::count(returns.begin(), returns.end(), r.tail_value));
    r.widest_barrier_beta = static_cast<double>(r.min_count) / static_cast<double>(r.n);
    return r;
}

double blindness_bound(double alpha, double beta, int batch_size, double n_steps) {
    return n_steps * std::exp(-2.0 * batch_size * (beta - alpha) * (beta - alpha));
}

BlindnessResult blindness_monte_carlo(double alpha, double beta, int batch_size, std::int64_t n_steps,
                                      std::size_t trials, std::uint64_t seed, unsigned workers) {
    if (!(alpha > 0.0 && alpha < 1.0 && beta < 1.0)) throw std::invalid_argument("alpha and beta must lie in (0, 1)");
    if (!(beta > alpha)) throw std::invalid_argument("beta must exceed alpha");
    if (batch_size < 1 || n_steps < 1 || trials < 1) throw std::invalid_argument("sizes must be positive");
    const auto needed = static_cast<int>(std::ceil((1.0 - alpha) * batch_size - 1e-9));
    std::vector<char> escaped(trials, 0);
    parallel_for(trials, workers, [&](std::size_t t) {
        Rng rng = make_stream(seed, StreamTag::Analysis, {1, static_cast<std::uint64_t>(t)});
        std::binomial_distribution<int> above(batch_size, 1.0 - beta);
        for (std::int64_t step = 0; step < n_steps; ++step) {
            if (above(rng) >= needed) {
                escaped[t] = 1;
                return;
            }
        }
    });
    BlindnessResult out;
    out.trials = trials;
    out.escapes = static_cast<std::size_t>(std::count(escaped.begin(), escaped.end(), 1));
    out.empirical = static_cast<double>(out.escapes) / static_cast<double>(trials);
    out.bound = blindness_bound(alpha, beta, batch_size, static_cast<double>(n_steps));
    return out;
}

VarianceResult variance_reduction_experiment(double alpha, int batch_size, int repeats, std::uint64_t seed,
                                             std::array<double, 2> probs) {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in (0, 1]");
    if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
    if (repeats < 100) throw std::invalid_argument("at least 100 repeats are required");
    if (!(probs[0] >= 0.0 && probs[1] >= 0.0 && std::abs(probs[0] + probs[1] - 1.0) < 1e-12))
        throw std::invalid_argument("probs must be a distribution");

    const double q = alpha;
    const double norm = alpha * batch_size;
    std::vector<std::array<double, 2>> full(static_cast<std::size_t>(repeats)), tail(full.size());
    Rng rng = make_stream(seed, StreamTag::Analysis, {2});
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (std::size_t r = 0; r < full.size(); ++r) {
        std::array<double, 2> gf{0.0, 0.0}, gt{0.0, 0.0};
        for (int i = 0; i < batch_size; ++i) {
            const double u = unif(rng);
            const int a = unif(rng) < probs[0] ? 0 : 1;
            const std::array<double, 2> score{(a == 0 ? 1.0 : 0.0) - probs[0], (a == 1 ? 1.0 : 0.0) - probs[1]};
            const double c_full = u;
            if (c_full <= q)
                for (int k = 0; k < 2; ++k) gf[k] += 1.0 * (c_full - q) * score[k] / norm;
            const double c_tail = alpha * u;
            if (c_tail <= q)
                for (int k = 0; k < 2; ++k) gt[k] += alpha * (c_tail - q) * score[k] / norm;
        }
        full[r] = gf;
        tail[r] = gt;
    }
    auto trace_cov = [](const std::vector<std::array<double, 2>>& xs) {
        double total = 0.0;
        for (int k = 0; k < 2; ++k) {
            double mean = 0.0;
            for (const auto& x : xs) mean += x[k];
            mean /= static_cast<double>(xs.size());
            double ss = 0.0;
            for (const auto& x : xs) ss += (x[k] - mean) * (x[k] - mean);
            total += ss / static_cast<double>(xs.size() - 1);
        }
        return total;
    };
    VarianceResult out;
    out.var_tail = trace_cov(tail);
    out.var_full = trace_cov(full);
    out.ratio = out.var_full > 0.0 ? out.var_tail / out.var_full : 1.0;
    return out;
}

namespace {

double log_prob(const PolicyParams& params, std::span<const double> obs, int action) {
    const Vector probs = action_probabilities(params, obs, params.spec().train_temperature);
    return std::log(probs[static_cast<std::size_t>(action)]);
}

double l2(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace

namespace {

double relative_error(const PolicyParams& params, std::span<const double> obs, int action, double epsilon,
                      const AnalyticLogProbGrad& analytic) {
    const Gradient g = analytic(params, obs, action);
    PolicyParams probe = params;
    Vector diff(params.size());
    double fd_sq = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        const double orig = probe.values()[k];
        probe.values()[k] = orig + epsilon;
        const double up = log_prob(probe, obs, action);
        probe.values()[k] = orig - epsilon;
        const double down = log_prob(probe, obs, action);
        probe.values()[k] = orig;
        const double fd = (up - down) / (2.0 * epsilon);
        fd_sq += fd * fd;
        diff[k] = g.values()[k] - fd;
    }
    return l2(diff) / std::max(l2(g.values()) + std::sqrt(fd_sq), 1e-10);
}

void check_epsilon(const PolicyParams& params, double epsilon) {
    if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) throw std::invalid_argument("epsilon must lie in [1e-7, 1e-3]");
    if (!(params.spec().train_temperature > 0.0)) throw std::invalid_argument("gradient check needs temperature > 0");
}

}  // namespace

double gradient_check(const PolicyParams& params, std::span<const Vector> observations, double epsilon,
                      const AnalyticLogProbGrad& analytic) {
    check_epsilon(params, epsilon);
    double worst = 0.0;
    for (const auto& obs : observations)
        for (int a = 0; a < params.spec().n_actions; ++a)
            worst = std::max(worst, relative_error(params, obs, a, epsilon, analytic));
    return worst;
}

double random_gradient_check(const PolicySpec& spec, int instances, double epsilon, std::uint64_t seed,
                             const AnalyticLogProbGrad& analytic) {
    double worst = 0.0;
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int i = 0; i < instances; ++i) {
        Rng rng = make_stream(seed, StreamTag::Analysis, {3, static_cast<std::uint64_t>(i)});
        PolicyParams params = init_params(spec, rng);
        for (double& v : params.values()) v += 0.5 * normal(rng);
        Vector obs(static_cast<std::size_t>(spec.input_dim));
        for (double& x : obs) x = normal(rng);
        const int action = std::uniform_int_distribution<int>(0, spec.n_actions - 1)(rng);
        check_epsilon(params, epsilon);
        worst = std::max(worst, relative_error(params, obs, action, epsilon, analytic));
    }
    return worst;
}

nlohmann::json verdict_to_json(const Verdict& v) {
    return {{"name", v.name}, {"parameters", v.parameters}, {"statistic", v.statistic}, {"bound", v.bound},
            {"pass", v.pass}};
}

std::vector<Verdict> verify_barrier(std::uint64_t seed) {
    std::vector<Verdict> out;
    // Random batches with a forced bottom tie; then a copy with the tie broken.
    const int trials = 500;
    int zero_failures = 0, equivalence_failures = 0;
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int t = 0; t < trials; ++t) {
        Rng rng = make_stream(seed, StreamTag::Analysis, {4, static_cast<std::uint64_t>(t)});
        const int n = std::uniform_int_distribution<int>(10, 400)(rng);
        const double alpha = std::uniform_real_distribution<double>(0.01, 0.5)(rng);
        const std::size_t k = tail_count(static_cast<std::size_t>(n), alpha);
        const double floor_value = std::round(std::uniform_real_distribution<double>(-64.0, 0.0)(rng));

        ReturnBatch batch;
        batch.n_reference = static_cast<std::size_t>(n);
        batch.records.resize(batch.n_reference);
        for (std::size_t i = 0; i < batch.records.size(); ++i)
            batch.records[i].ret =
                i < k ? floor_value : floor_value + std::uniform_real_distribution<double>(0.01, 40.0)(rng);
        std::shuffle(batch.records.begin(), batch.records.end(), rng);

        PolicySpec spec;
        spec.input_dim = 3;
        spec.n_actions = 3;
        std::vector<Gradient> scores;
        for (int i = 0; i < n; ++i) {
            Gradient g(spec);
            for (double& v : g.values()) v = normal(rng);
            scores.push_back(std::move(g));
        }

        auto check = [&](const ReturnBatch& b) {
            const Vector rets = b.returns();
            const double q = empirical_quantile(rets, alpha);
            const bool zero = cvar_pg_gradient(b, scores, q, alpha).gradient.is_zero();
            const bool barrier = detect_tail_barrier(rets, alpha).has_alpha_barrier();
            if (zero != barrier) ++equivalence_failures;
            return zero;
        };
        if (!check(batch)) ++zero_failures;
        // Break the tie: one tail episode slightly lower.
        for (auto& r : batch.records)
            if (r.ret == floor_value) {
                r.ret -= 0.5;
                break;
            }
        check(batch);
    }
    out.push_back({"barrier_zero_gradient",
                   {{"trials", trials}, {"n_range", {10, 400}}, {"alpha_range", {0.01, 0.5}}},
                   static_cast<double>(zero_failures), 0.0, zero_failures == 0});
    out.push_back({"barrier_equivalence", {{"trials", 2 * trials}}, static_cast<double>(equivalence_failures), 0.0,
                   equivalence_failures == 0});

    Vector returns(360, -32.0);
    for (int i = 0; i < 40; ++i) returns.push_back(-20.0 + i);
    const BarrierReport r = detect_tail_barrier(returns, 0.05);
    out.push_back({"barrier_width_example", {{"n", 400}, {"tied", 360}}, r.widest_barrier_beta, 0.9,
                   std::abs(r.widest_barrier_beta - 0.9) < 1e-12});
    return out;
}

std::vector<Verdict> verify_blindness(std::uint64_t seed, unsigned workers) {
    std::vector<Verdict> out;
    const double alpha = 0.05, beta = 0.25;
    const int n = 400;
    const BlindnessResult r = blindness_monte_carlo(alpha, beta, n, 10000, 10000, seed, workers);
    const double bound_1e6 = blindness_bound(alpha, beta, n, 1e6);
    out.push_back({"blindness_escape",
                   {{"alpha", alpha}, {"beta", beta}, {"N", n}, {"n_steps", 10000}, {"trials", 10000}},
                   r.empirical, r.bound, r.escapes == 0 && r.empirical <= r.bound});
    out.push_back({"blindness_bound_1e6_steps", {{"alpha", alpha}, {"beta", beta}, {"N", n}, {"n_steps", 1e6}},
                   bound_1e6, 1e-7, bound_1e6 < 1e-7});

    // A loose configuration where escapes do occur; the bound is vacuous there.
    const BlindnessResult loose = blindness_monte_carlo(0.2, 0.25, 40, 100, 10000, seed + 1, workers);
    out.push_back({"blindness_loose",
                   {{"alpha", 0.2}, {"beta", 0.25}, {"N", 40}, {"n_steps", 100}, {"trials", 10000}},
                   loose.empirical, std::min(1.0, loose.bound), loose.empirical <= std::min(1.0, loose.bound)});
    return out;
}

std::vector<Verdict> verify_variance(std::uint64_t seed) {
    std::vector<Verdict> out;
    for (double alpha : {0.05, 0.1, 0.2}) {
        const VarianceResult r = variance_reduction_experiment(alpha, 100, 2000, seed);
        out.push_back({"variance_ratio",
                       {{"alpha", alpha}, {"N", 100}, {"repeats", 2000}, {"var_tail", r.var_tail},
                        {"var_full", r.var_full}},
                       r.ratio, 2.0 * alpha, r.ratio <= 2.0 * alpha});
    }
    return out;
}

std::vector<Verdict> verify_gradcheck(std::uint64_t seed, const AnalyticLogProbGrad& analytic) {
    std::vector<Verdict> out;
    const std::vector<std::pair<std::string, std::vector<int>>> archs{{"linear", {}}, {"hidden16", {16}},
                                                                       {"hidden32", {32}}};
    for (const auto& [name, hidden] : archs) {
        PolicySpec spec;
        spec.input_dim = 9;
        spec.hidden_dims = hidden;
        spec.n_actions = 4;
        const double err = random_gradient_check(spec, 100, 1e-5, seed, analytic);
        out.push_back({"gradcheck_" + name, {{"instances", 100}, {"epsilon", 1e-5}, {"hidden", hidden}}, err, 1e-4,
                       err < 1e-4});
    }
    return out;
}

}  // namespace cesor
