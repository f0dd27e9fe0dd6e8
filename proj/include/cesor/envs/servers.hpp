#pragma once

// Servers allocation: requests arrive as a Poisson process whose rate is an
// EMA of user interest, with rare peaks of interest. Every decision interval
// the agent removes, keeps or adds one server. The return charges the total
// time-to-service (waiting only) plus 2 per paid server-second.

#include <deque>
#include <vector>

#include "cesor/envs/env.hpp"

namespace cesor {

struct ServersConfig {
    int episode_seconds = 3600;           // L
    double base_interest = 3.0;           // requests per second
    double peak_interest = 900.0;         // momentary interest at a peak second
    double ema_window = 300.0;            // lambda_t = (1 - 1/w) lambda_{t-1} + r_t / w
    double mean_service_time = 1.0;
    int min_servers = 3;
    int max_servers = 10;
    int initial_servers = 4;
    int decision_interval = 60;
    double upload_delay = 120.0;
    double server_cost = 2.0;             // per server-second
    double peak_probability = 1.0 / (3.0 * 24.0 * 3600.0);  // per second
    double queue_scale = 30.0;            // observation divisor

    int horizon() const { return episode_seconds / decision_interval; }
    void validate() const;
};

enum class ServerAction { Remove = 0, Keep = 1, Add = 2 };

struct Server {
    double ready_at = 0.0;
    bool busy = false;
    double busy_until = 0.0;
    bool removing = false;  // removal pending the end of the current task
};

struct ServersState : EnvState {
    int second = 0;
    double lambda = 3.0;
    std::vector<int> peak_seconds;  // sorted
    std::size_t next_peak = 0;
    std::vector<Server> servers;
    std::deque<double> queue;  // arrival times, FIFO

    // Running totals for diagnostics and conservation checks.
    double waiting_time = 0.0;
    double server_cost = 0.0;
    long arrived = 0;
    long started = 0;
    long completed = 0;
    std::vector<int> paid_per_second;  // paid servers at the start of each second

    int active_servers() const;  // excluding pending removals, including uploading
    int paid_servers() const { return static_cast<int>(servers.size()); }
};

class ServersAllocation final : public Environment {
public:
    explicit ServersAllocation(ServersConfig config = {});

    std::string id() const override { return "servers"; }
    int obs_dim() const override { return 9; }
    int n_actions() const override { return 3; }
    int horizon() const override { return config_.horizon(); }
    const ContextDistribution& context_family() const override { return family_; }

    // context = {number of peak events}; their seconds are drawn uniformly.
    std::unique_ptr<EnvState> reset(std::span<const double> context, Rng& rng) const override;
    StepResult step(EnvState& state, int action, Rng& rng) const override;
    Vector observe(const EnvState& state) const override;

    const ServersConfig& config() const noexcept { return config_; }

    // Reset with explicit peak seconds (tests and replays).
    std::unique_ptr<ServersState> reset_with_peaks(std::vector<int> peak_seconds) const;

private:
    void simulate_second(ServersState& s, Rng& rng) const;

    ServersConfig config_;
    ContextDistribution family_;
};

// First 8 entries: one-hot of the active server count in [3, 10]; last entry:
// queue length / 30.
Vector servers_observe(int active_servers, std::size_t queue_length, double queue_scale = 30.0);

// Active server count decoded from an observation.
int servers_count_from_obs(std::span<const double> obs);

}  // namespace cesor
