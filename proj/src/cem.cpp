#include "cesor/cem.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace cesor {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_beta_fn(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

bool is_probability(double p) { return p > 0.0 && p < 1.0; }

double sample_component(const Component& c, Rng& rng) {
    switch (c.family) {
        case Family::Bernoulli:
            return std::bernoulli_distribution(c.params[0])(rng) ? 1.0 : 0.0;
        case Family::ExponentialMean:
            return std::exponential_distribution<double>(1.0 / c.params[0])(rng);
        case Family::BetaMean: {
            const double a = 2.0 * c.params[0];
            const double b = 2.0 - 2.0 * c.params[0];
            double x = 0.0;
            double y = 0.0;
            while (!(x + y > 0.0)) {
                x = std::gamma_distribution<double>(a, 1.0)(rng);
                y = std::gamma_distribution<double>(b, 1.0)(rng);
            }
            // Tiny shape parameters can underflow to the closed endpoints.
            return std::clamp(x / (x + y), std::nextafter(0.0, 1.0), std::nextafter(1.0, 0.0));
        }
        case Family::Binomial:
            return static_cast<double>(std::binomial_distribution<int>(c.n_trials, c.params[0])(rng));
        case Family::Categorical: {
            const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
            double cumulative = 0.0;
            for (std::size_t k = 0; k < c.params.size(); ++k) {
                cumulative += c.params[k];
                if (u < cumulative) return static_cast<double>(k);
            }
            return static_cast<double>(c.params.size() - 1);
        }
    }
    return 0.0;
}

double log_density_component(const Component& c, double x) {
    switch (c.family) {
        case Family::Bernoulli:
            if (x == 1.0) return std::log(c.params[0]);
            if (x == 0.0) return std::log1p(-c.params[0]);
            return kNegInf;
        case Family::ExponentialMean:
            if (!(x >= 0.0) || !std::isfinite(x)) return kNegInf;
            return -std::log(c.params[0]) - x / c.params[0];
        case Family::BetaMean: {
            if (!(x > 0.0 && x < 1.0)) return kNegInf;
            const double a = 2.0 * c.params[0];
            const double b = 2.0 - 2.0 * c.params[0];
            return (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) - log_beta_fn(a, b);
        }
        case Family::Binomial: {
            const double n = c.n_trials;
            if (x < 0.0 || x > n || x != std::floor(x)) return kNegInf;
            const double p = c.params[0];
            return std::lgamma(n + 1.0) - std::lgamma(x + 1.0) - std::lgamma(n - x + 1.0) +
                   x * std::log(p) + (n - x) * std::log1p(-p);
        }
        case Family::Categorical: {
            if (x < 0.0 || x != std::floor(x) || x >= static_cast<double>(c.params.size())) return kNegInf;
            return std::log(c.params[static_cast<std::size_t>(x)]);
        }
    }
    return kNegInf;
}

// Clamp a probability-like parameter, reporting whether it moved.
double clamp_probability(double p, double lower, bool& clamped) {
    const double lo = lower;
    const double hi = 1.0 - kProbabilityFloor;
    if (p < lo) {
        clamped = true;
        return lo;
    }
    if (p > hi) {
        clamped = true;
        return hi;
    }
    return p;
}

}  // namespace

const char* to_string(Family f) noexcept {
    switch (f) {
        case Family::Bernoulli: return "bernoulli";
        case Family::ExponentialMean: return "exponential";
        case Family::BetaMean: return "beta";
        case Family::Binomial: return "binomial";
        case Family::Categorical: return "categorical";
    }
    return "unknown";
}

Family family_from_string(const std::string& name) {
    for (Family f : {Family::Bernoulli, Family::ExponentialMean, Family::BetaMean, Family::Binomial,
                     Family::Categorical})
        if (name == to_string(f)) return f;
    throw std::invalid_argument("unsupported distribution family '" + name + "'");
}

Component Component::bernoulli(double p) {
    Component c{Family::Bernoulli, {p}, 0, std::min(kProbabilityFloor, p)};
    return c;
}

Component Component::exponential_mean(double mu) {
    return Component{Family::ExponentialMean, {mu}, 0, std::min(kMeanFloor, mu)};
}

Component Component::beta_mean(double phi) {
    return Component{Family::BetaMean, {phi}, 0, std::min(kProbabilityFloor, phi)};
}

Component Component::binomial(int n_trials, double p) {
    // The floor follows phi0 when phi0 itself is rarer than the default floor
    // (peak events are ~4e-6 per second).
    return Component{Family::Binomial, {p}, n_trials, std::min(kProbabilityFloor, p)};
}

Component Component::categorical(Vector probs) {
    return Component{Family::Categorical, std::move(probs), 0, kProbabilityFloor};
}

void Component::validate() const {
    switch (family) {
        case Family::Bernoulli:
        case Family::BetaMean:
            // Bernoulli(1) is allowed as a degenerate sampler; the CE updates
            // never produce it.
            if (params.size() != 1 || !(params[0] > 0.0 && params[0] <= 1.0) ||
                (family == Family::BetaMean && !is_probability(params[0])))
                throw std::invalid_argument(std::string(to_string(family)) + " parameter must lie in (0, 1)");
            break;
        case Family::ExponentialMean:
            if (params.size() != 1 || !(params[0] > 0.0) || !std::isfinite(params[0]))
                throw std::invalid_argument("exponential mean must be positive");
            break;
        case Family::Binomial:
            if (params.size() != 1 || !is_probability(params[0]) || n_trials < 1)
                throw std::invalid_argument("binomial needs n_trials >= 1 and p in (0, 1)");
            break;
        case Family::Categorical: {
            if (params.size() < 2) throw std::invalid_argument("categorical needs at least two outcomes");
            double total = 0.0;
            for (double p : params) {
                if (!(p > 0.0)) throw std::invalid_argument("categorical probabilities must be positive");
                total += p;
            }
            if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("categorical probabilities must sum to 1");
            break;
        }
    }
}

ContextDistribution::ContextDistribution(std::vector<Component> components) : components_(std::move(components)) {
    validate();
}

void ContextDistribution::validate() const {
    if (components_.empty()) throw std::invalid_argument("context distribution has no components");
    for (const auto& c : components_) c.validate();
}

Vector ContextDistribution::params() const {
    Vector flat;
    for (const auto& c : components_) flat.insert(flat.end(), c.params.begin(), c.params.end());
    return flat;
}

ContextDistribution ContextDistribution::with_params(std::span<const double> flat) const {
    std::vector<Component> next = components_;
    std::size_t k = 0;
    for (auto& c : next)
        for (double& p : c.params) {
            if (k >= flat.size()) throw std::invalid_argument("too few parameters");
            p = flat[k++];
        }
    if (k != flat.size()) throw std::invalid_argument("too many parameters");
    return ContextDistribution(std::move(next));
}

std::vector<std::string> ContextDistribution::param_names() const {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < components_.size(); ++i) {
        const auto& c = components_[i];
        const std::string base = "phi" + std::to_string(i + 1);
        if (c.params.size() == 1)
            names.push_back(base);
        else
            for (std::size_t k = 0; k < c.params.size(); ++k) names.push_back(base + "_" + std::to_string(k));
    }
    return names;
}

Vector ContextDistribution::sample(Rng& rng) const {
    Vector c;
    c.reserve(components_.size());
    for (const auto& comp : components_) c.push_back(sample_component(comp, rng));
    return c;
}

double ContextDistribution::log_density(std::span<const double> context) const {
    if (context.size() != components_.size()) throw std::invalid_argument("context dimension mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < components_.size(); ++i) total += log_density_component(components_[i], context[i]);
    return total;
}

bool ContextDistribution::same_family(const ContextDistribution& other) const {
    if (components_.size() != other.components_.size()) return false;
    for (std::size_t i = 0; i < components_.size(); ++i) {
        const auto& a = components_[i];
        const auto& b = other.components_[i];
        if (a.family != b.family || a.params.size() != b.params.size() || a.n_trials != b.n_trials) return false;
    }
    return true;
}

std::vector<Vector> sample_contexts(const ContextDistribution& dist, std::size_t n, Rng& rng) {
    dist.validate();
    std::vector<Vector> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(dist.sample(rng));
    return out;
}

double importance_weight(const ContextDistribution& phi0, const ContextDistribution& phi,
                         std::span<const double> context, std::optional<WeightClip> clip) {
    if (!phi0.same_family(phi)) throw std::invalid_argument("importance_weight: family mismatch");
    double log_ratio = 0.0;
    for (std::size_t i = 0; i < phi.components().size(); ++i) {
        const double num = log_density_component(phi0.components()[i], context[i]);
        const double den = log_density_component(phi.components()[i], context[i]);
        if (den == kNegInf || num == kNegInf)
            throw std::domain_error("importance_weight: context outside the common support");
        log_ratio += num - den;
    }
    double w = std::exp(log_ratio);
    if (clip) w = std::clamp(w, clip->low, clip->high);
    return w;
}

double ce_threshold(std::span<const double> ref_returns, std::span<const double> all_returns, double alpha,
                    double beta_smooth) {
    return std::max(empirical_quantile(ref_returns, alpha), empirical_quantile(all_returns, beta_smooth));
}

CeState CeState::start(const ContextDistribution& phi0, double beta_smooth, WeightClip clip) {
    if (!(beta_smooth > 0.0 && beta_smooth < 1.0)) throw std::invalid_argument("beta_smooth must lie in (0, 1)");
    if (!(clip.low > 0.0 && clip.low <= 1.0 && clip.high >= 1.0))
        throw std::invalid_argument("weight clip must satisfy 0 < low <= 1 <= high");
    CeState s;
    s.phi = phi0;
    s.phi0 = phi0;
    s.beta_smooth = beta_smooth;
    s.weight_clip = clip;
    s.history.push_back(phi0.params());
    return s;
}

CeUpdateResult ce_update(CeState& state, std::span<const Vector> contexts, std::span<const double> weights,
                         std::span<const double> returns, double q) {
    if (contexts.size() != weights.size() || contexts.size() != returns.size())
        throw std::invalid_argument("ce_update: sequences differ in length");

    CeUpdateResult result;
    std::vector<std::size_t> selected;
    for (std::size_t i = 0; i < returns.size(); ++i)
        if (returns[i] <= q) selected.push_back(i);
    result.n_selected = selected.size();

    double total_weight = 0.0;
    for (std::size_t i : selected) total_weight += weights[i];
    if (selected.empty() || !(total_weight > 0.0)) {
        result.empty_selection = true;
        result.phi = state.phi.params();
        state.history.push_back(result.phi);
        return result;
    }

    std::vector<Component> next = state.phi.components();
    for (std::size_t d = 0; d < next.size(); ++d) {
        Component& comp = next[d];
        switch (comp.family) {
            case Family::Bernoulli:
            case Family::BetaMean:
            case Family::ExponentialMean:
            case Family::Binomial: {
                double acc = 0.0;
                for (std::size_t i : selected) acc += weights[i] * contexts[i][d];
                double value = acc / total_weight;
                if (comp.family == Family::Binomial) value /= comp.n_trials;
                if (comp.family == Family::ExponentialMean) {
                    if (value < comp.lower_clamp) {
                        value = comp.lower_clamp;
                        result.clamped = true;
                    }
                } else {
                    value = clamp_probability(value, comp.lower_clamp, result.clamped);
                }
                comp.params[0] = value;
                break;
            }
            case Family::Categorical: {
                Vector freq(comp.params.size(), 0.0);
                for (std::size_t i : selected) freq[static_cast<std::size_t>(contexts[i][d])] += weights[i];
                for (double& f : freq) {
                    f /= total_weight;
                    if (f < kProbabilityFloor) {
                        f = kProbabilityFloor;
                        result.clamped = true;
                    }
                }
                const double norm = std::accumulate(freq.begin(), freq.end(), 0.0);
                for (double& f : freq) f /= norm;
                comp.params = std::move(freq);
                break;
            }
        }
    }
    state.phi = ContextDistribution(std::move(next));
    result.phi = state.phi.params();
    state.history.push_back(result.phi);
    return result;
}

std::vector<StaticCemRow> static_cem_run(const ContextDistribution& phi0,
                                         const std::function<double(std::span<const double>)>& score,
                                         const StaticCemOptions& options, Rng& rng) {
    if (options.n_per_iter < 2) throw std::invalid_argument("static_cem_run needs at least two samples");
    if (!(options.nu >= 0.0 && options.nu < 1.0)) throw std::invalid_argument("nu must lie in [0, 1)");
    if (options.max_iters < 0) throw std::invalid_argument("max_iters must be non-negative");

    CeState state = CeState::start(phi0, options.beta_smooth, options.clip.value_or(WeightClip{1e-300, 1e300}));
    const auto n_ref = static_cast<std::size_t>(std::floor(options.nu * static_cast<double>(options.n_per_iter)));
    const std::size_t n_shifted = options.n_per_iter - n_ref;

    std::vector<StaticCemRow> rows;
    for (int it = 0; it <= options.max_iters; ++it) {
        std::vector<Vector> contexts = sample_contexts(phi0, n_ref, rng);
        auto shifted = sample_contexts(state.phi, n_shifted, rng);
        contexts.insert(contexts.end(), shifted.begin(), shifted.end());

        Vector weights(contexts.size(), 1.0);
        Vector scores(contexts.size());
        double shifted_sum = 0.0;
        for (std::size_t i = 0; i < contexts.size(); ++i) {
            if (i >= n_ref) {
                weights[i] = importance_weight(phi0, state.phi, contexts[i], options.clip);
                shifted_sum += contexts[i][0];
            }
            scores[i] = score(contexts[i]);
        }

        StaticCemRow row;
        row.iteration = it;
        row.phi = state.phi.params();
        row.sample_mean = shifted_sum / static_cast<double>(n_shifted);
        row.n_eff = effective_sample_size(std::span<const double>(weights).subspan(n_ref));
        if (it < options.max_iters) {
            row.threshold = std::max(options.q_target, empirical_quantile(scores, options.beta_smooth));
            const auto upd = ce_update(state, contexts, weights, scores, row.threshold);
            row.n_selected = upd.n_selected;
            row.warning = upd.empty_selection || upd.clamped;
        } else {
            row.threshold = std::numeric_limits<double>::quiet_NaN();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

nlohmann::json distribution_to_json(const ContextDistribution& dist) {
    nlohmann::json comps = nlohmann::json::array();
    for (const auto& c : dist.components()) {
        nlohmann::json j{{"family", to_string(c.family)}, {"params", c.params}};
        if (c.family == Family::Binomial) j["n_trials"] = c.n_trials;
        comps.push_back(std::move(j));
    }
    return comps;
}

ContextDistribution distribution_from_json(const nlohmann::json& j) {
    std::vector<Component> comps;
    for (const auto& item : j) {
        const Family f = family_from_string(item.at("family").get<std::string>());
        const auto params = item.at("params").get<Vector>();
        switch (f) {
            case Family::Bernoulli: comps.push_back(Component::bernoulli(params.at(0))); break;
            case Family::ExponentialMean: comps.push_back(Component::exponential_mean(params.at(0))); break;
            case Family::BetaMean: comps.push_back(Component::beta_mean(params.at(0))); break;
            case Family::Binomial:
                comps.push_back(Component::binomial(item.at("n_trials").get<int>(), params.at(0)));
                break;
            case Family::Categorical: comps.push_back(Component::categorical(params)); break;
        }
    }
    return ContextDistribution(std::move(comps));
}

}  // namespace cesor
