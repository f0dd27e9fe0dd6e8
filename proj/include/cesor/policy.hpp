#pragma once

// Softmax policies over a discrete action set: a linear model or an MLP with
// tanh hidden layers. Gradients of log-probabilities are derived by hand.

#include <cstddef>
#include <span>
#include <vector>

#include <json.hpp>

#include "cesor/core.hpp"
#include "cesor/rng.hpp"

namespace cesor {

struct PolicySpec {
    int input_dim = 1;
    std::vector<int> hidden_dims;  // empty: linear model
    int n_actions = 2;
    double train_temperature = 1.0;
    double eval_temperature = 0.0;  // 0 selects the argmax action

    // Layer widths from input to output.
    std::vector<int> widths() const;
    std::size_t parameter_count() const;
    void validate() const;
    bool operator==(const PolicySpec&) const = default;
};

// All weights and biases in one flat buffer. Per layer: the row-major weight
// matrix (out x in) followed by the bias vector. Gradients share this shape.
class PolicyParams {
public:
    PolicyParams() = default;
    explicit PolicyParams(PolicySpec spec);  // zero-initialized

    const PolicySpec& spec() const noexcept { return spec_; }
    std::size_t layer_count() const noexcept { return offsets_.size(); }
    int layer_in(std::size_t l) const { return widths_[l]; }
    int layer_out(std::size_t l) const { return widths_[l + 1]; }

    std::span<double> weights(std::size_t l);
    std::span<const double> weights(std::size_t l) const;
    std::span<double> bias(std::size_t l);
    std::span<const double> bias(std::size_t l) const;

    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }
    std::size_t size() const noexcept { return values_.size(); }

    PolicyParams zeros_like() const { return PolicyParams(spec_); }
    void set_zero();
    // this += scale * other
    void axpy(double scale, const PolicyParams& other);
    void scale(double factor);
    bool all_finite() const;
    bool is_zero() const;
    double squared_norm() const;
    bool same_shape(const PolicyParams& other) const;

    bool operator==(const PolicyParams& other) const {
        return spec_ == other.spec_ && values_ == other.values_;
    }

private:
    PolicySpec spec_;
    std::vector<int> widths_;
    std::vector<std::size_t> offsets_;  // start of each layer's weights
    Vector values_;
};

using Gradient = PolicyParams;

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
PolicyParams init_params(const PolicySpec& spec, Rng& rng);

Vector policy_logits(const PolicyParams& params, std::span<const double> obs);

// softmax(temperature * logits); temperature 0 gives a one-hot at the argmax
// (lowest index wins ties).
Vector action_probabilities(const PolicyParams& params, std::span<const double> obs,
                            double temperature);

int sample_action(std::span<const double> probs, Rng& rng);

// Index of the largest entry, lowest index on ties.
int argmax_action(std::span<const double> values);

// Gradient of log pi(action | obs) at the policy's training temperature.
Gradient log_prob_gradient(const PolicyParams& params, std::span<const double> obs, int action);

// out += scale * grad log pi(action | obs); avoids an allocation per step.
void accumulate_log_prob_gradient(const PolicyParams& params, std::span<const double> obs,
                                  int action, double scale, Gradient& out);

// Sum over steps of grad log pi(a_t | s_t).
Gradient trajectory_score(const PolicyParams& params, const Trajectory& trajectory);

// Checkpoint JSON: {"spec": {...}, "layers": [{"rows", "cols", "weights", "bias"}]}.
nlohmann::json spec_to_json(const PolicySpec& spec);
PolicySpec spec_from_json(const nlohmann::json& j);
nlohmann::json params_to_json(const PolicyParams& params);
PolicyParams params_from_json(const nlohmann::json& j);

}  // namespace cesor
