#include "cesor/envs/servers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

namespace cesor {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

void ServersConfig::validate() const {
    if (episode_seconds < decision_interval || episode_seconds % decision_interval != 0)
        throw std::invalid_argument("episode length must be a positive multiple of the decision interval");
    if (min_servers != 3 || max_servers != 10)
        throw std::invalid_argument("the observation encodes server counts 3..10");
    if (initial_servers < min_servers || initial_servers > max_servers)
        throw std::invalid_argument("initial server count outside [min, max]");
    if (!(peak_probability > 0.0 && peak_probability < 1.0))
        throw std::invalid_argument("peak probability must lie in (0, 1)");
}

int ServersState::active_servers() const {
    return static_cast<int>(std::count_if(servers.begin(), servers.end(), [](const Server& s) { return !s.removing; }));
}

ServersAllocation::ServersAllocation(ServersConfig config)
    : config_(config), family_({Component::binomial(config.episode_seconds, config.peak_probability)}) {
    config_.validate();
}

std::unique_ptr<ServersState> ServersAllocation::reset_with_peaks(std::vector<int> peak_seconds) const {
    std::sort(peak_seconds.begin(), peak_seconds.end());
    for (int p : peak_seconds)
        if (p < 0 || p >= config_.episode_seconds) throw std::invalid_argument("peak second outside the episode");
    auto s = std::make_unique<ServersState>();
    s->lambda = config_.base_interest;
    s->peak_seconds = std::move(peak_seconds);
    s->servers.assign(static_cast<std::size_t>(config_.initial_servers), Server{});
    return s;
}

std::unique_ptr<EnvState> ServersAllocation::reset(std::span<const double> context, Rng& rng) const {
    if (context.size() != 1) throw std::invalid_argument("servers context must be {peak count}");
    const double k = context[0];
    if (!(k >= 0.0) || k != std::floor(k) || k > config_.episode_seconds)
        throw std::invalid_argument("servers context outside support");
    // k distinct seconds, uniform given the count.
    std::set<int> chosen;
    std::uniform_int_distribution<int> u(0, config_.episode_seconds - 1);
    while (chosen.size() < static_cast<std::size_t>(k)) chosen.insert(u(rng));
    return reset_with_peaks(std::vector<int>(chosen.begin(), chosen.end()));
}

void ServersAllocation::simulate_second(ServersState& s, Rng& rng) const {
    const double t0 = s.second;
    const double t1 = t0 + 1.0;

    s.paid_per_second.push_back(s.paid_servers());
    s.server_cost += config_.server_cost * s.paid_servers();

    double interest = config_.base_interest;
    while (s.next_peak < s.peak_seconds.size() && s.peak_seconds[s.next_peak] == s.second) {
        interest = config_.peak_interest;
        ++s.next_peak;
    }
    s.lambda = (1.0 - 1.0 / config_.ema_window) * s.lambda + interest / config_.ema_window;

    const int n_arrivals = std::poisson_distribution<int>(s.lambda)(rng);
    std::vector<double> arrivals(static_cast<std::size_t>(n_arrivals));
    std::uniform_real_distribution<double> offset(0.0, 1.0);
    for (double& a : arrivals) a = t0 + offset(rng);
    std::sort(arrivals.begin(), arrivals.end());

    std::exponential_distribution<double> service(1.0 / config_.mean_service_time);
    double now = t0;
    auto assign = [&] {
        for (auto& srv : s.servers) {
            if (s.queue.empty()) return;
            if (srv.busy || srv.removing || srv.ready_at > now) continue;
            s.queue.pop_front();
            ++s.started;
            srv.busy = true;
            srv.busy_until = now + service(rng);
        }
    };

    std::size_t next_arrival = 0;
    while (true) {
        const double ta = next_arrival < arrivals.size() ? arrivals[next_arrival] : kInf;
        double tc = kInf;
        std::size_t completing = 0;
        double tr = kInf;
        for (std::size_t i = 0; i < s.servers.size(); ++i) {
            const auto& srv = s.servers[i];
            if (srv.busy && srv.busy_until < tc) {
                tc = srv.busy_until;
                completing = i;
            }
            if (!srv.busy && srv.ready_at > now) tr = std::min(tr, srv.ready_at);
        }
        const double te = std::min({ta, tc, tr});
        if (te >= t1) {
            s.waiting_time += static_cast<double>(s.queue.size()) * (t1 - now);
            break;
        }
        s.waiting_time += static_cast<double>(s.queue.size()) * (te - now);
        now = te;
        if (te == tc) {
            ++s.completed;
            auto& srv = s.servers[completing];
            srv.busy = false;
            if (srv.removing) s.servers.erase(s.servers.begin() + static_cast<std::ptrdiff_t>(completing));
        } else if (te == ta) {
            ++s.arrived;
            s.queue.push_back(ta);
            ++next_arrival;
        }
        assign();
    }
    ++s.second;
}

StepResult ServersAllocation::step(EnvState& base, int action, Rng& rng) const {
    auto& s = dynamic_cast<ServersState&>(base);
    if (s.done) throw std::logic_error("servers step after episode end");
    if (action < 0 || action >= n_actions()) throw std::invalid_argument("servers action out of range");

    const double now = s.second;
    switch (static_cast<ServerAction>(action)) {
        case ServerAction::Remove:
            if (s.active_servers() > config_.min_servers) {
                auto it = std::find_if(s.servers.rbegin(), s.servers.rend(), [](const Server& v) { return !v.removing; });
                if (it->busy)
                    it->removing = true;
                else
                    s.servers.erase(std::next(it).base());
            }
            break;
        case ServerAction::Keep: break;
        case ServerAction::Add:
            if (s.active_servers() < config_.max_servers) s.servers.push_back(Server{now + config_.upload_delay, false, 0.0, false});
            break;
    }

    const double waiting_before = s.waiting_time;
    const double cost_before = s.server_cost;
    const int end = std::min(s.second + config_.decision_interval, config_.episode_seconds);
    while (s.second < end) simulate_second(s, rng);
    ++s.t;
    if (s.second >= config_.episode_seconds) s.done = true;

    StepResult r;
    r.reward = -((s.waiting_time - waiting_before) + (s.server_cost - cost_before));
    r.done = s.done;
    return r;
}

Vector servers_observe(int active_servers, std::size_t queue_length, double queue_scale) {
    Vector obs(9, 0.0);
    const int idx = std::clamp(active_servers, 3, 10) - 3;
    obs[static_cast<std::size_t>(idx)] = 1.0;
    obs[8] = static_cast<double>(queue_length) / queue_scale;
    return obs;
}

Vector ServersAllocation::observe(const EnvState& base) const {
    const auto& s = dynamic_cast<const ServersState&>(base);
    return servers_observe(s.active_servers(), s.queue.size(), config_.queue_scale);
}

int servers_count_from_obs(std::span<const double> obs) {
    if (obs.size() != 9) throw std::invalid_argument("servers observation must have 9 entries");
    for (int i = 0; i < 8; ++i)
        if (obs[static_cast<std::size_t>(i)] == 1.0) return i + 3;
    throw std::invalid_argument("servers observation has no server one-hot");
}

}  // namespace cesor
