#include "cesor/envs/env.hpp"

#include <stdexcept>

namespace cesor {

Episode run_episode(const Environment& env, const PolicyParams& policy, std::span<const double> context,
                    double temperature, Rng& rng) {
    if (policy.spec().input_dim != env.obs_dim() || policy.spec().n_actions != env.n_actions())
        throw std::invalid_argument("policy shape does not match environment " + env.id());
    Episode ep;
    auto state = env.reset(context, rng);
    auto& traj = ep.trajectory;
    traj.states.reserve(static_cast<std::size_t>(env.horizon()));
    while (!state->done) {
        Vector obs = env.observe(*state);
        const Vector probs = action_probabilities(policy, obs, temperature);
        const int action = temperature == 0.0 ? argmax_action(probs) : sample_action(probs, rng);
        const StepResult r = env.step(*state, action, rng);
        traj.states.push_back(std::move(obs));
        traj.actions.push_back(action);
        traj.rewards.push_back(r.reward);
    }
    ep.ret = trajectory_return(traj.rewards);
    return ep;
}

Episode replay_actions(const Environment& env, std::span<const double> context, std::span<const int> actions,
                       Rng& rng) {
    if (actions.empty()) throw std::invalid_argument("empty action sequence");
    Episode ep;
    auto state = env.reset(context, rng);
    for (int a : actions) {
        if (state->done) break;
        if (a < 0 || a >= env.n_actions()) throw std::invalid_argument("action out of range");
        Vector obs = env.observe(*state);
        const StepResult r = env.step(*state, a, rng);
        ep.trajectory.states.push_back(std::move(obs));
        ep.trajectory.actions.push_back(a);
        ep.trajectory.rewards.push_back(r.reward);
    }
    ep.ret = trajectory_return(ep.trajectory.rewards);
    return ep;
}

}  // namespace cesor
