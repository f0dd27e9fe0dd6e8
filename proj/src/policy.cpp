#include "cesor/policy.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <stdexcept>
#include <string>

namespace cesor {

std::vector<int> PolicySpec::widths() const {
    std::vector<int> w{input_dim};
    for (int h : hidden_dims)
        if (h > 0) w.push_back(h);
    w.push_back(n_actions);
    return w;
}

std::size_t PolicySpec::parameter_count() const {
    const auto w = widths();
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < w.size(); ++l)
        n += static_cast<std::size_t>(w[l + 1]) * (static_cast<std::size_t>(w[l]) + 1);
    return n;
}

void PolicySpec::validate() const {
    if (input_dim < 1) throw std::invalid_argument("policy input_dim must be positive");
    if (n_actions < 2) throw std::invalid_argument("policy needs at least two actions");
    for (int h : hidden_dims)
        if (h < 0) throw std::invalid_argument("hidden layer widths must be non-negative");
    if (!(train_temperature >= 0.0) || !(eval_temperature >= 0.0))
        throw std::invalid_argument("temperatures must be non-negative");
}

PolicyParams::PolicyParams(PolicySpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    widths_ = spec_.widths();
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
        offsets_.push_back(offset);
        offset += static_cast<std::size_t>(widths_[l + 1]) * (static_cast<std::size_t>(widths_[l]) + 1);
    }
    values_.assign(offset, 0.0);
}

std::span<double> PolicyParams::weights(std::size_t l) {
    return {values_.data() + offsets_.at(l), static_cast<std::size_t>(widths_[l + 1] * widths_[l])};
}
std::span<const double> PolicyParams::weights(std::size_t l) const {
    return {values_.data() + offsets_.at(l), static_cast<std::size_t>(widths_[l + 1] * widths_[l])};
}
std::span<double> PolicyParams::bias(std::size_t l) {
    return {values_.data() + offsets_.at(l) + static_cast<std::size_t>(widths_[l + 1] * widths_[l]),
            static_cast<std::size_t>(widths_[l + 1])};
}
std::span<const double> PolicyParams::bias(std::size_t l) const {
    return {values_.data() + offsets_.at(l) + static_cast<std::size_t>(widths_[l + 1] * widths_[l]),
            static_cast<std::size_t>(widths_[l + 1])};
}

void PolicyParams::set_zero() { std::fill(values_.begin(), values_.end(), 0.0); }

void PolicyParams::axpy(double scale, const PolicyParams& other) {
    if (!same_shape(other)) throw std::invalid_argument("parameter shapes differ");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += scale * other.values_[i];
}

void PolicyParams::scale(double factor) {
    for (double& v : values_) v *= factor;
}

bool PolicyParams::all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

bool PolicyParams::is_zero() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return v == 0.0; });
}

double PolicyParams::squared_norm() const {
    double s = 0.0;
    for (double v : values_) s += v * v;
    return s;
}

bool PolicyParams::same_shape(const PolicyParams& other) const {
    return widths_ == other.widths_;
}

PolicyParams init_params(const PolicySpec& spec, Rng& rng) {
    PolicyParams p(spec);
    for (std::size_t l = 0; l < p.layer_count(); ++l) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(p.layer_in(l)));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (double& w : p.weights(l)) w = u(rng);
    }
    return p;
}

namespace {

void check_obs(const PolicyParams& params, std::span<const double> obs) {
    if (static_cast<int>(obs.size()) != params.spec().input_dim)
        throw std::invalid_argument("observation has dimension " + std::to_string(obs.size()) +
                                    ", policy expects " + std::to_string(params.spec().input_dim));
}

// Forward pass keeping every layer's output; acts[0] is the input.
void forward(const PolicyParams& params, std::span<const double> obs, std::vector<Vector>& acts) {
    check_obs(params, obs);
    const std::size_t n_layers = params.layer_count();
    acts.resize(n_layers + 1);
    acts[0].assign(obs.begin(), obs.end());
    for (std::size_t l = 0; l < n_layers; ++l) {
        const int in = params.layer_in(l);
        const int out = params.layer_out(l);
        const auto w = params.weights(l);
        const auto b = params.bias(l);
        const Vector& x = acts[l];
        Vector& y = acts[l + 1];
        y.assign(b.begin(), b.end());
        for (int j = 0; j < in; ++j) {
            const double xj = x[static_cast<std::size_t>(j)];
            if (xj == 0.0) continue;
            for (int i = 0; i < out; ++i) y[static_cast<std::size_t>(i)] += w[static_cast<std::size_t>(i * in + j)] * xj;
        }
        if (l + 1 < n_layers)
            for (double& v : y) v = std::tanh(v);
    }
}

void softmax_inplace(Vector& logits, double temperature) {
    double top = -std::numeric_limits<double>::infinity();
    for (double v : logits) top = std::max(top, temperature * v);
    double sum = 0.0;
    for (double& v : logits) {
        v = std::exp(temperature * v - top);
        sum += v;
    }
    for (double& v : logits) v /= sum;
}

}  // namespace

Vector policy_logits(const PolicyParams& params, std::span<const double> obs) {
    std::vector<Vector> acts;
    forward(params, obs, acts);
    for (double v : acts.back())
        if (std::isnan(v)) throw std::runtime_error("policy produced NaN logits");
    return acts.back();
}

int argmax_action(std::span<const double> values) {
    if (values.empty()) throw std::invalid_argument("argmax of empty vector");
    return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

Vector action_probabilities(const PolicyParams& params, std::span<const double> obs, double temperature) {
    if (!(temperature >= 0.0)) throw std::invalid_argument("temperature must be non-negative");
    Vector logits = policy_logits(params, obs);
    if (temperature == 0.0) {
        const int a = argmax_action(logits);
        Vector one_hot(logits.size(), 0.0);
        one_hot[static_cast<std::size_t>(a)] = 1.0;
        return one_hot;
    }
    softmax_inplace(logits, temperature);
    return logits;
}

int sample_action(std::span<const double> probs, Rng& rng) {
    if (probs.empty()) throw std::invalid_argument("empty probability vector");
    double total = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0)) throw std::invalid_argument("negative or NaN probability");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("probabilities do not sum to 1");
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    double cumulative = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        cumulative += probs[i];
        if (u < cumulative && probs[i] > 0.0) return static_cast<int>(i);
    }
    // u landed in the rounding gap above the cumulative sum.
    for (std::size_t i = probs.size(); i-- > 0;)
        if (probs[i] > 0.0) return static_cast<int>(i);
    return 0;
}

void accumulate_log_prob_gradient(const PolicyParams& params, std::span<const double> obs, int action,
                                  double scale, Gradient& out) {
    const int n_actions = params.spec().n_actions;
    if (action < 0 || action >= n_actions)
        throw std::invalid_argument("action index " + std::to_string(action) + " out of range");
    if (!out.same_shape(params)) throw std::invalid_argument("gradient shape mismatch");

    std::vector<Vector> acts;
    forward(params, obs, acts);
    const double temperature = params.spec().train_temperature;

    // d log softmax(T y)_a / dy = T (e_a - pi)
    Vector delta = acts.back();
    softmax_inplace(delta, temperature);
    for (double& d : delta) d = -d;
    delta[static_cast<std::size_t>(action)] += 1.0;
    for (double& d : delta) d *= scale * temperature;

    for (std::size_t l = params.layer_count(); l-- > 0;) {
        const int in = params.layer_in(l);
        const int out_dim = params.layer_out(l);
        const Vector& x = acts[l];
        auto gw = out.weights(l);
        auto gb = out.bias(l);
        for (int i = 0; i < out_dim; ++i) {
            const double di = delta[static_cast<std::size_t>(i)];
            gb[static_cast<std::size_t>(i)] += di;
            if (di == 0.0) continue;
            double* row = gw.data() + static_cast<std::size_t>(i * in);
            for (int j = 0; j < in; ++j) row[j] += di * x[static_cast<std::size_t>(j)];
        }
        if (l == 0) break;
        const auto w = params.weights(l);
        Vector prev(static_cast<std::size_t>(in), 0.0);
        for (int i = 0; i < out_dim; ++i) {
            const double di = delta[static_cast<std::size_t>(i)];
            if (di == 0.0) continue;
            for (int j = 0; j < in; ++j) prev[static_cast<std::size_t>(j)] += w[static_cast<std::size_t>(i * in + j)] * di;
        }
        for (int j = 0; j < in; ++j) {
            const double a = x[static_cast<std::size_t>(j)];
            prev[static_cast<std::size_t>(j)] *= 1.0 - a * a;  // tanh'
        }
        delta = std::move(prev);
    }
}

Gradient log_prob_gradient(const PolicyParams& params, std::span<const double> obs, int action) {
    Gradient g = params.zeros_like();
    accumulate_log_prob_gradient(params, obs, action, 1.0, g);
    return g;
}

Gradient trajectory_score(const PolicyParams& params, const Trajectory& trajectory) {
    trajectory.check();
    Gradient g = params.zeros_like();
    for (std::size_t t = 0; t < trajectory.length(); ++t)
        accumulate_log_prob_gradient(params, trajectory.states[t], trajectory.actions[t], 1.0, g);
    return g;
}

nlohmann::json spec_to_json(const PolicySpec& spec) {
    return {{"input_dim", spec.input_dim},
            {"hidden_dims", spec.hidden_dims},
            {"n_actions", spec.n_actions},
            {"train_temperature", spec.train_temperature},
            {"eval_temperature", spec.eval_temperature}};
}

PolicySpec spec_from_json(const nlohmann::json& j) {
    PolicySpec s;
    s.input_dim = j.at("input_dim").get<int>();
    s.hidden_dims = j.at("hidden_dims").get<std::vector<int>>();
    s.n_actions = j.at("n_actions").get<int>();
    s.train_temperature = j.value("train_temperature", 1.0);
    s.eval_temperature = j.value("eval_temperature", 0.0);
    s.validate();
    return s;
}

nlohmann::json params_to_json(const PolicyParams& params) {
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t l = 0; l < params.layer_count(); ++l) {
        const auto w = params.weights(l);
        const auto b = params.bias(l);
        layers.push_back({{"rows", params.layer_out(l)},
                          {"cols", params.layer_in(l)},
                          {"weights", Vector(w.begin(), w.end())},
                          {"bias", Vector(b.begin(), b.end())}});
    }
    return {{"spec", spec_to_json(params.spec())}, {"layers", layers}};
}

PolicyParams params_from_json(const nlohmann::json& j) {
    PolicyParams p(spec_from_json(j.at("spec")));
    const auto& layers = j.at("layers");
    if (layers.size() != p.layer_count()) throw std::invalid_argument("checkpoint layer count mismatch");
    for (std::size_t l = 0; l < p.layer_count(); ++l) {
        const auto& layer = layers[l];
        if (layer.at("rows").get<int>() != p.layer_out(l) || layer.at("cols").get<int>() != p.layer_in(l))
            throw std::invalid_argument("checkpoint layer shape mismatch");
        const auto w = layer.at("weights").get<Vector>();
        const auto b = layer.at("bias").get<Vector>();
        auto pw = p.weights(l);
        auto pb = p.bias(l);
        if (w.size() != pw.size() || b.size() != pb.size())
            throw std::invalid_argument("checkpoint layer size mismatch");
        std::copy(w.begin(), w.end(), pw.begin());
        std::copy(b.begin(), b.end(), pb.begin());
    }
    if (!p.all_finite()) throw std::invalid_argument("checkpoint contains non-finite values");
    return p;
}

}  // namespace cesor
