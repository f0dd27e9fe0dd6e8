#include "cesor/gradients.hpp"

#include <cmath>
#include <stdexcept>

namespace cesor {

namespace {

void check_alignment(const ReturnBatch& batch, std::span<const Gradient> scores) {
    if (batch.size() == 0) throw std::invalid_argument("empty batch");
    if (scores.size() != batch.size())
        throw std::invalid_argument("scores and batch records differ in length");
    for (const auto& s : scores)
        if (!s.same_shape(scores.front())) throw std::invalid_argument("score shapes differ");
}

}  // namespace

GradientReport mean_pg_gradient(const ReturnBatch& batch, std::span<const Gradient> scores) {
    check_alignment(batch, scores);
    GradientReport report;
    report.gradient = scores.front().zeros_like();

    double baseline = 0.0;
    std::size_t n = 0;
    for (const auto& r : batch.records) {
        if (r.source != Source::Reference) continue;
        baseline += r.ret;
        ++n;
    }
    if (n == 0) throw std::invalid_argument("mean_pg_gradient needs reference episodes");
    baseline /= static_cast<double>(n);

    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& r = batch.records[i];
        if (r.source != Source::Reference) continue;
        const double factor = (r.ret - baseline) / static_cast<double>(n);
        if (factor != 0.0) report.gradient.axpy(factor, scores[i]);
    }
    report.used_count = n;
    report.used_weight_fraction = 1.0;
    report.n_eff_used = static_cast<double>(n);
    report.q_hat = baseline;
    return report;
}

GradientReport cvar_pg_gradient(const ReturnBatch& batch, std::span<const Gradient> scores,
                                double q_hat, double alpha_eff) {
    if (!(alpha_eff > 0.0) || alpha_eff > 1.0)
        throw std::invalid_argument("alpha_eff must lie in (0, 1]");
    check_alignment(batch, scores);

    GradientReport report;
    report.gradient = scores.front().zeros_like();
    report.q_hat = q_hat;
    const double norm = 1.0 / (alpha_eff * static_cast<double>(batch.size()));

    double total_weight = 0.0;
    double used_weight = 0.0;
    double used_weight_sq = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& r = batch.records[i];
        total_weight += r.weight;
        if (!(r.ret < q_hat)) continue;  // ties at q contribute exactly zero
        ++report.used_count;
        used_weight += r.weight;
        used_weight_sq += r.weight * r.weight;
        report.gradient.axpy(norm * r.weight * (r.ret - q_hat), scores[i]);
    }
    report.used_weight_fraction = total_weight > 0.0 ? used_weight / total_weight : 0.0;
    report.n_eff_used = used_weight_sq > 0.0 ? used_weight * used_weight / used_weight_sq : 0.0;
    return report;
}

AdamState AdamState::for_params(const PolicyParams& params, AdamConfig config) {
    if (!(config.learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
    AdamState s;
    s.config = config;
    s.first_moment.assign(params.size(), 0.0);
    s.second_moment.assign(params.size(), 0.0);
    return s;
}

void adam_step(AdamState& state, PolicyParams& params, const Gradient& gradient) {
    if (!gradient.same_shape(params) || state.first_moment.size() != params.size() ||
        state.second_moment.size() != params.size())
        throw std::invalid_argument("adam_step: shape mismatch");
    const auto g = gradient.values();
    for (double v : g)
        if (std::isnan(v)) throw std::invalid_argument("adam_step: NaN gradient");

    const auto& c = state.config;
    ++state.step_count;
    const double t = static_cast<double>(state.step_count);
    const double correction1 = 1.0 - std::pow(c.beta1, t);
    const double correction2 = 1.0 - std::pow(c.beta2, t);
    auto p = params.values();
    for (std::size_t i = 0; i < p.size(); ++i) {
        double& m = state.first_moment[i];
        double& v = state.second_moment[i];
        m = c.beta1 * m + (1.0 - c.beta1) * g[i];
        v = c.beta2 * v + (1.0 - c.beta2) * g[i] * g[i];
        const double m_hat = m / correction1;
        const double v_hat = v / correction2;
        p[i] += c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
}

}  // namespace cesor
