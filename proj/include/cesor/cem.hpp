#pragma once

// Parametric context distributions D_phi and the cross-entropy machinery that
// shifts phi toward the low-return tail: importance weights, the CE threshold,
// closed-form weighted-MLE updates, and the static-target CEM loop.

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cesor/core.hpp"
#include "cesor/rng.hpp"

namespace cesor {

enum class Family {
    Bernoulli,        // params {p}
    ExponentialMean,  // params {mu}
    BetaMean,         // params {phi}: Beta(2 phi, 2 - 2 phi), mean phi
    Binomial,         // params {p}, n_trials fixed
    Categorical,      // params {p_0 .. p_{k-1}}; the context value is the index
};

const char* to_string(Family f) noexcept;
Family family_from_string(const std::string& name);

// Probability floor used by the MLE clamps.
inline constexpr double kProbabilityFloor = 1e-3;
inline constexpr double kMeanFloor = 1e-3;

struct Component {
    Family family = Family::Bernoulli;
    Vector params;
    int n_trials = 0;          // Binomial only
    double lower_clamp = 0.0;  // probability/mean floor after an MLE update

    static Component bernoulli(double p);
    static Component exponential_mean(double mu);
    static Component beta_mean(double phi);
    static Component binomial(int n_trials, double p);
    static Component categorical(Vector probs);

    void validate() const;
};

// Product of independent components; a single component is the plain family.
// Every component contributes exactly one context coordinate.
class ContextDistribution {
public:
    ContextDistribution() = default;
    explicit ContextDistribution(std::vector<Component> components);

    const std::vector<Component>& components() const noexcept { return components_; }
    std::size_t context_dim() const noexcept { return components_.size(); }

    // Flattened parameters, component by component.
    Vector params() const;
    ContextDistribution with_params(std::span<const double> flat) const;
    std::vector<std::string> param_names() const;

    Vector sample(Rng& rng) const;
    // log density (or mass) of a context; -inf outside the support.
    double log_density(std::span<const double> context) const;
    bool same_family(const ContextDistribution& other) const;
    void validate() const;

private:
    std::vector<Component> components_;
};

std::vector<Vector> sample_contexts(const ContextDistribution& dist, std::size_t n, Rng& rng);

struct WeightClip {
    double low = 0.2;
    double high = 5.0;
};

// D_phi0(c) / D_phi(c), product over components, clipped to [low, high].
double importance_weight(const ContextDistribution& phi0, const ContextDistribution& phi,
                         std::span<const double> context, std::optional<WeightClip> clip);

// max(q_alpha(reference returns), q_beta(all returns)).
double ce_threshold(std::span<const double> ref_returns, std::span<const double> all_returns,
                    double alpha, double beta_smooth);

struct CeState {
    ContextDistribution phi;
    ContextDistribution phi0;
    double beta_smooth = 0.2;
    WeightClip weight_clip;
    std::vector<Vector> history;  // phi after every update, starting with phi0

    static CeState start(const ContextDistribution& phi0, double beta_smooth, WeightClip clip);
};

struct CeUpdateResult {
    Vector phi;
    std::size_t n_selected = 0;
    bool empty_selection = false;  // phi left unchanged
    bool clamped = false;          // some parameter hit its clamp
};

// Weighted MLE over contexts with return <= q. Updates state.phi and appends
// to the history.
CeUpdateResult ce_update(CeState& state, std::span<const Vector> contexts,
                         std::span<const double> weights, std::span<const double> returns, double q);

struct StaticCemRow {
    int iteration = 0;
    Vector phi;
    double sample_mean = 0.0;  // mean of the first coordinate over the D_phi draws
    double threshold = 0.0;    // q' used for the update that follows
    std::size_t n_selected = 0;
    double n_eff = 0.0;        // effective sample size of the D_phi draws' weights
    bool warning = false;
};

struct StaticCemOptions {
    double q_target = 0.0;
    std::size_t n_per_iter = 1000;
    double beta_smooth = 0.5;
    int max_iters = 10;
    double nu = 0.0;  // fraction of each batch drawn from D_phi0 with weight 1
    std::optional<WeightClip> clip;
};

// Cross-entropy sampling toward {score <= q_target} with a constant score
// function. Row 0 describes phi0; row k the distribution after k updates.
std::vector<StaticCemRow> static_cem_run(const ContextDistribution& phi0,
                                         const std::function<double(std::span<const double>)>& score,
                                         const StaticCemOptions& options, Rng& rng);

nlohmann::json distribution_to_json(const ContextDistribution& dist);
ContextDistribution distribution_from_json(const nlohmann::json& j);

}  // namespace cesor
