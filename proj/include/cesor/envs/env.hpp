#pragma once

// Uniform contract for context-MDP environments: a context is drawn from the
// environment's context family, then reset/step/observe drive one episode.

#include <memory>
#include <span>
#include <string>

#include "cesor/cem.hpp"
#include "cesor/core.hpp"
#include "cesor/policy.hpp"
#include "cesor/rng.hpp"

namespace cesor {

struct EnvState {
    virtual ~EnvState() = default;
    int t = 0;
    bool done = false;
};

struct StepResult {
    double reward = 0.0;
    bool done = false;
};

class Environment {
public:
    virtual ~Environment() = default;

    virtual std::string id() const = 0;
    virtual int obs_dim() const = 0;
    virtual int n_actions() const = 0;
    virtual int horizon() const = 0;
    // D_phi0.
    virtual const ContextDistribution& context_family() const = 0;

    virtual std::unique_ptr<EnvState> reset(std::span<const double> context, Rng& rng) const = 0;
    // Throws if the episode already ended.
    virtual StepResult step(EnvState& state, int action, Rng& rng) const = 0;
    virtual Vector observe(const EnvState& state) const = 0;
};

struct Episode {
    Trajectory trajectory;
    double ret = 0.0;
};

// Rolls out one episode. temperature 0 acts greedily.
Episode run_episode(const Environment& env, const PolicyParams& policy, std::span<const double> context,
                    double temperature, Rng& rng);

// Replays a fixed action list until it runs out or the episode ends.
Episode replay_actions(const Environment& env, std::span<const double> context, std::span<const int> actions,
                       Rng& rng);

}  // namespace cesor
