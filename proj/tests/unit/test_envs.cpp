#include <doctest.h>

#include <cmath>
#include <map>
#include <random>

#include "cesor/envs/maze.hpp"
#include "cesor/envs/servers.hpp"
#include "oracles.hpp"

using namespace cesor;

namespace {

enum Move { L = 0, R = 1, U = 2, D = 3 };

// Near-noiseless maze so scripted routes are exact.
GuardedMaze quiet_maze() {
    MazeConfig c = MazeConfig::default_layout();
    c.step_noise = 1e-9;
    return GuardedMaze(c);
}

Episode scripted(const GuardedMaze& env, double x, double y, const std::vector<int>& moves, Vector context,
                 std::uint64_t seed = 1) {
    Rng rng(seed);
    auto st = env.reset(context, rng);
    auto& s = static_cast<MazeState&>(*st);
    s.x = x;
    s.y = y;
    Episode ep;
    for (int a : moves) {
        if (st->done) break;
        ep.trajectory.states.push_back(env.observe(*st));
        ep.trajectory.actions.push_back(a);
        ep.trajectory.rewards.push_back(env.step(*st, a, rng).reward);
    }
    ep.ret = trajectory_return(ep.trajectory.rewards);
    return ep;
}

ServersConfig short_servers(int minutes) {
    ServersConfig c;
    c.episode_seconds = minutes * 60;
    return c;
}

}  // namespace

// ---- maze ----

TEST_CASE("default maze layout passes validation") {
    const MazeConfig c = MazeConfig::default_layout();
    const LayoutReport r = maze_validate_layout(c);
    CHECK(r.pass);
    CHECK(r.start_centroid == Cell{2, 2});
    CHECK(r.l_short == 3);
    CHECK(r.l_long == 11);
    CHECK(c.is_wall({0, 0}));
    CHECK(!c.is_wall(c.guard));
    CHECK(MazeConfig::parse_layout(c.layout_string()).layout_string() == c.layout_string());
}

TEST_CASE("layout validation examples") {
    // Guard walled off: no short route.
    const MazeConfig walled = MazeConfig::parse_layout(
        "########\n"
        "###...##\n"
        "###.#.##\n"
        "###.#.##\n"
        "#...#.##\n"
        "#..#GT##\n"
        "#...####\n"
        "########\n");
    auto r = maze_validate_layout(walled);
    // The guard is only reachable from the target side, so the short route is no shortcut.
    CHECK(r.l_short > r.l_long);
    CHECK(!r.pass);

    // Detour of exactly 10.
    const MazeConfig ten = MazeConfig::parse_layout(
        "########\n"
        "###....#\n"
        "###.##.#\n"
        "###.##.#\n"
        "#...##.#\n"
        "#...GT.#\n"
        "#...####\n"
        "########\n");
    r = maze_validate_layout(ten);
    CHECK(r.l_long - r.l_short == 10);
    CHECK(r.pass);

    // Detour of 2.
    const MazeConfig two = MazeConfig::parse_layout(
        "########\n"
        "#......#\n"
        "#......#\n"
        "#......#\n"
        "#...#..#\n"
        "#...GT.#\n"
        "#......#\n"
        "########\n");
    r = maze_validate_layout(two);
    CHECK(r.l_long - r.l_short == 2);
    CHECK(!r.pass);

    CHECK_THROWS(MazeConfig::parse_layout("########\n"));
    CHECK_THROWS(MazeConfig::parse_layout(std::string(8, '#') + "\n" + std::string(7 * 9, '.')));
}

TEST_CASE("maze_observe soft one-hot") {
    Vector o = maze_observe(3.0, 5.0);
    CHECK(o[5 * 8 + 3] == 1.0);
    CHECK(std::count(o.begin(), o.end(), 0.0) == 63);

    o = maze_observe(2.5, 4.5);
    for (int idx : {4 * 8 + 2, 4 * 8 + 3, 5 * 8 + 2, 5 * 8 + 3}) CHECK(o[static_cast<std::size_t>(idx)] == 0.25);

    Rng rng(1);
    std::uniform_real_distribution<double> u(0.0, 7.0);
    for (int i = 0; i < 1000; ++i) {
        const double x = u(rng), y = u(rng);
        o = maze_observe(x, y);
        double s = 0;
        int nz = 0;
        for (double v : o) {
            REQUIRE(v >= 0.0);
            s += v;
            nz += v != 0.0;
        }
        REQUIRE(std::abs(s - 1.0) < 1e-12);
        REQUIRE(nz <= 4);
        const auto [dx, dy] = maze_decode(o);
        REQUIRE(std::abs(dx - x) < 1e-12);
        REQUIRE(std::abs(dy - y) < 1e-12);
    }
}

TEST_CASE("maze reset: determinism, support and uniform start") {
    const GuardedMaze env;
    Rng a(5), b(5);
    auto s1 = env.reset(Vector{1, 10}, a);
    auto s2 = env.reset(Vector{1, 10}, b);
    CHECK(static_cast<MazeState&>(*s1).x == static_cast<MazeState&>(*s2).x);
    CHECK(static_cast<MazeState&>(*s1).y == static_cast<MazeState&>(*s2).y);

    CHECK_THROWS(env.reset(Vector{0.5, 10}, a));
    CHECK_THROWS(env.reset(Vector{1, -1}, a));
    CHECK_THROWS(env.reset(Vector{1}, a));

    // Half-cell bins over the free start cells.
    std::map<std::pair<int, int>, double> counts;
    const int n = 100000;
    Rng rng(6);
    for (int i = 0; i < n; ++i) {
        auto st = env.reset(Vector{0, 0}, rng);
        const auto& s = static_cast<MazeState&>(*st);
        const Cell c = cell_of(s.x, s.y);
        REQUIRE(env.config().in_start_region(c));
        REQUIRE(!env.config().is_wall(c));
        counts[{static_cast<int>(std::floor(2 * (s.x + 0.5))), static_cast<int>(std::floor(2 * (s.y + 0.5)))}] += 1;
    }
    Vector obs, expected;
    for (const auto& [k, v] : counts) obs.push_back(v);
    expected.assign(obs.size(), static_cast<double>(n) / static_cast<double>(obs.size()));
    CHECK(obs.size() == 36);  // 9 free cells, 4 bins each
    CHECK(oracle::chi_square(obs, expected) < oracle::chi_square_critical_1pct(static_cast<int>(obs.size()) - 1));
}

TEST_CASE("maze scripted routes") {
    const GuardedMaze env = quiet_maze();

    // Short: through the guard with a guard present.
    Episode e = scripted(env, 2, 2, {R, R, R}, Vector{1, 20});
    CHECK(e.trajectory.length() == 3);
    CHECK(e.ret == doctest::Approx(16 - 3 - 20));
    CHECK(maze_classify(env.config(), e.trajectory) == MazeStrategy::Short);

    // Short with the guard absent costs nothing extra.
    e = scripted(env, 2, 2, {R, R, R}, Vector{0, 20});
    CHECK(e.ret == doctest::Approx(13));

    // Long: around the wall block.
    e = scripted(env, 2, 2, {R, U, U, U, U, R, R, D, D, D, D}, Vector{1, 50});
    CHECK(e.ret == doctest::Approx(16 - 11));
    CHECK(maze_classify(env.config(), e.trajectory) == MazeStrategy::Long);

    // Into a wall: position unchanged, step still charged.
    Rng rng(2);
    auto st = env.reset(Vector{0, 0}, rng);
    auto& s = static_cast<MazeState&>(*st);
    s.x = 1.0;
    s.y = 1.0;
    const auto r = env.step(*st, L, rng);
    CHECK(s.x == 1.0);
    CHECK(s.y == 1.0);
    CHECK(r.reward == -1.0);
}

TEST_CASE("maze stay episode returns exactly -32 over the horizon") {
    const GuardedMaze env;
    Rng rng(3);
    auto st = env.reset(Vector{1, 100}, rng);
    Trajectory t;
    while (!st->done) {
        t.states.push_back(env.observe(*st));
        t.actions.push_back(L);
        t.rewards.push_back(env.step(*st, L, rng).reward);
    }
    CHECK(t.length() == 160);
    CHECK(trajectory_return(t.rewards) == -32.0);
    CHECK(maze_classify(env.config(), t) == MazeStrategy::Stay);
    CHECK_THROWS(env.step(*st, L, rng));
    CHECK_THROWS(env.step(*env.reset(Vector{0, 0}, rng), 4, rng));
}

TEST_CASE("maze guard charge applies once") {
    const GuardedMaze env = quiet_maze();
    // Into the guard, back out, and in again before reaching the target.
    const Episode e = scripted(env, 2, 2, {R, R, L, R, R}, Vector{1, 10});
    CHECK(e.ret == doctest::Approx(16 - 5 - 10));
}

TEST_CASE("maze returns stay within bounds under a random policy") {
    const GuardedMaze env;
    PolicySpec spec;
    spec.input_dim = 64;
    spec.n_actions = 4;
    const PolicyParams uniform(spec);
    Rng rng(4);
    for (int i = 0; i < 2000; ++i) {
        const Vector c = env.context_family().sample(rng);
        const Episode e = run_episode(env, uniform, c, 1.0, rng);
        REQUIRE(e.ret <= 16.0);
        REQUIRE(e.ret >= -32.0 - c[1] - 1e-12);
        if (maze_classify(env.config(), e.trajectory) == MazeStrategy::Stay) REQUIRE(e.ret >= -32.0 - c[1]);
        if (maze_classify(env.config(), e.trajectory) == MazeStrategy::Stay && c[0] == 0.0) REQUIRE(e.ret == -32.0);
    }
}

TEST_CASE("maze determinism for a fixed action sequence") {
    const GuardedMaze env;
    std::vector<int> acts;
    Rng pick(9);
    for (int i = 0; i < 60; ++i) acts.push_back(static_cast<int>(pick() % 4));
    Rng a(11), b(11);
    const Episode e1 = replay_actions(env, Vector{1, 30}, acts, a);
    const Episode e2 = replay_actions(env, Vector{1, 30}, acts, b);
    CHECK(e1.trajectory.states == e2.trajectory.states);
    CHECK(e1.trajectory.rewards == e2.trajectory.rewards);
}

TEST_CASE("short route's guard tail is worse than the detour") {
    const LayoutReport r = maze_validate_layout(MazeConfig::default_layout());
    Rng rng(12);
    const ContextDistribution phi0({Component::bernoulli(0.2), Component::exponential_mean(32.0)});
    Vector short_returns;
    for (const auto& c : sample_contexts(phi0, 1000000, rng)) short_returns.push_back(16.0 - r.l_short - c[0] * c[1]);
    const double cvar_short = cvar_of_samples(short_returns, 0.05);
    CHECK(cvar_short == doctest::Approx(16.0 - r.l_short - 32.0 * (1.0 + std::log(4.0))).epsilon(0.01));
    CHECK(cvar_short < 16.0 - r.l_long);
    CHECK(mean_of(short_returns) > 16.0 - r.l_long);
}

// ---- servers ----

TEST_CASE("servers observation") {
    CHECK(servers_observe(3, 0) == Vector{1, 0, 0, 0, 0, 0, 0, 0, 0});
    CHECK(servers_observe(10, 30) == Vector{0, 0, 0, 0, 0, 0, 0, 1, 1.0});
    CHECK(servers_observe(5, 45)[8] == 1.5);
    CHECK(servers_count_from_obs(servers_observe(7, 3)) == 7);

    const ServersAllocation env;
    Rng rng(1);
    const auto st = env.reset(Vector{0}, rng);
    CHECK(env.observe(*st) == Vector{0, 1, 0, 0, 0, 0, 0, 0, 0});
    CHECK(env.horizon() == 60);
    CHECK(env.context_family().components()[0].n_trials == 3600);
    CHECK(env.context_family().params()[0] == doctest::Approx(1.0 / (3 * 24 * 3600)));
    CHECK_THROWS(env.reset(Vector{1.5}, rng));
    CHECK_THROWS(env.reset(Vector{-1}, rng));
}

TEST_CASE("servers peak raises the rate to about 6 then decays") {
    const ServersAllocation env(short_servers(5));
    auto st = env.reset_with_peaks({0});
    Rng rng(2);
    env.step(*st, 1, rng);
    // After the peak second the EMA holds 3 + 3 (1 - 1/300), decaying by (1 - 1/300) per second.
    const double d = 1.0 - 1.0 / 300.0;
    const double after_peak = d * 3.0 + 900.0 / 300.0;
    CHECK(after_peak == doctest::Approx(6.0).epsilon(0.01));
    CHECK(st->lambda == doctest::Approx(3.0 + (after_peak - 3.0) * std::pow(d, 59)).epsilon(1e-12));
    env.step(*st, 1, rng);
    CHECK(st->lambda == doctest::Approx(3.0 + (after_peak - 3.0) * std::pow(d, 119)).epsilon(1e-12));

    const auto quiet = env.reset_with_peaks({});
    env.step(*quiet, 1, rng);
    CHECK(quiet->lambda == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("servers accounting identities") {
    const ServersAllocation env(short_servers(30));
    PolicySpec spec;
    spec.input_dim = 9;
    spec.n_actions = 3;
    Rng rng(3);
    for (int ep = 0; ep < 20; ++ep) {
        auto base = env.reset(Vector{static_cast<double>(ep % 3)}, rng);
        auto& s = static_cast<ServersState&>(*base);
        double total_reward = 0.0;
        while (!s.done) {
            total_reward += env.step(s, static_cast<int>(rng() % 3), rng).reward;
            long busy = 0;
            for (const auto& srv : s.servers) busy += srv.busy;
            REQUIRE(s.arrived == s.started + static_cast<long>(s.queue.size()));
            REQUIRE(s.started == s.completed + busy);
            REQUIRE(s.active_servers() >= 3);
            REQUIRE(s.active_servers() <= 10);
        }
        double recount = 0.0;
        for (int n : s.paid_per_second) recount += 2.0 * n;
        REQUIRE(s.paid_per_second.size() == 1800);
        REQUIRE(s.server_cost == doctest::Approx(recount).epsilon(1e-12));
        REQUIRE(total_reward == doctest::Approx(-(s.waiting_time + s.server_cost)).epsilon(1e-9));
    }
}

TEST_CASE("servers waiting time is zero without a queue") {
    // Ten servers and a single request: it never waits.
    ServersConfig c = short_servers(1);
    c.base_interest = 1e-6;
    c.initial_servers = 10;
    const ServersAllocation env(c);
    Rng rng(4);
    auto st = env.reset_with_peaks({});
    const double r = env.step(*st, 1, rng).reward;
    CHECK(st->waiting_time == 0.0);
    CHECK(r == doctest::Approx(-2.0 * 10 * 60));
}

TEST_CASE("servers count limits, upload delay and removal order") {
    const ServersAllocation env(short_servers(10));
    Rng rng(5);

    auto st = env.reset_with_peaks({});
    env.step(*st, static_cast<int>(ServerAction::Remove), rng);
    CHECK(st->active_servers() == 3);
    env.step(*st, static_cast<int>(ServerAction::Remove), rng);
    CHECK(st->active_servers() == 3);

    st = env.reset_with_peaks({});
    env.step(*st, static_cast<int>(ServerAction::Add), rng);
    CHECK(st->paid_per_second.front() == 5);  // paid during the upload
    CHECK(st->servers.back().ready_at == 120.0);
    for (int i = 0; i < 8; ++i) env.step(*st, static_cast<int>(ServerAction::Add), rng);
    CHECK(st->active_servers() == 10);

    // A busy last server keeps being paid until its task ends.
    st = env.reset_with_peaks({});
    st->servers.back().busy = true;
    st->servers.back().busy_until = 30.5;
    ++st->arrived;
    ++st->started;
    env.step(*st, static_cast<int>(ServerAction::Remove), rng);
    CHECK(st->paid_per_second[30] == 4);
    CHECK(st->paid_per_second[31] == 3);
    CHECK(st->paid_servers() == 3);
}

TEST_CASE("servers episode length and determinism") {
    const ServersAllocation env(short_servers(15));
    std::vector<int> acts;
    for (int i = 0; i < 15; ++i) acts.push_back(i % 3);
    Rng a(6), b(6);
    const Episode e1 = replay_actions(env, Vector{2}, acts, a);
    const Episode e2 = replay_actions(env, Vector{2}, acts, b);
    CHECK(e1.trajectory.length() == 15);
    CHECK(e1.trajectory.rewards == e2.trajectory.rewards);
    CHECK(e1.trajectory.states == e2.trajectory.states);

    auto st = env.reset(Vector{0}, a);
    for (int i = 0; i < 15; ++i) env.step(*st, 1, a);
    CHECK(st->done);
    CHECK_THROWS(env.step(*st, 1, a));
}
