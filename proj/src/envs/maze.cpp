#include "cesor/envs/maze.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <sstream>
#include <stdexcept>

namespace cesor {

namespace {

constexpr int N = MazeConfig::kSize;
constexpr std::array<std::array<double, 2>, 4> kMoves{{{-1.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}, {0.0, -1.0}}};

constexpr const char* kDefaultLayout =
    "########\n"
    "###...##\n"
    "###.#.##\n"
    "###.#.##\n"
    "#...#.##\n"
    "#...GT##\n"
    "#...####\n"
    "########\n";

bool inside(Cell c) { return c.x >= 0 && c.x < N && c.y >= 0 && c.y < N; }

// BFS distances over free cells (4-neighbourhood); -1 where unreachable.
std::array<std::array<int, N>, N> bfs(const MazeConfig& cfg, Cell from, const Cell* forbidden) {
    std::array<std::array<int, N>, N> dist{};
    for (auto& row : dist) row.fill(-1);
    if (cfg.is_wall(from) || (forbidden && from == *forbidden)) return dist;
    std::queue<Cell> open;
    dist[from.y][from.x] = 0;
    open.push(from);
    while (!open.empty()) {
        const Cell c = open.front();
        open.pop();
        for (const auto& m : kMoves) {
            const Cell n{c.x + static_cast<int>(m[0]), c.y + static_cast<int>(m[1])};
            if (cfg.is_wall(n) || (forbidden && n == *forbidden) || dist[n.y][n.x] >= 0) continue;
            dist[n.y][n.x] = dist[c.y][c.x] + 1;
            open.push(n);
        }
    }
    return dist;
}

}  // namespace

Cell cell_of(double x, double y) {
    return Cell{static_cast<int>(std::floor(x + 0.5)), static_cast<int>(std::floor(y + 0.5))};
}

bool MazeConfig::is_wall(Cell c) const { return !inside(c) || walls[c.y][c.x]; }

bool MazeConfig::in_start_region(Cell c) const { return c.x >= 0 && c.x < N / 2 && c.y >= 0 && c.y < N / 2; }

MazeConfig MazeConfig::default_layout() { return parse_layout(kDefaultLayout); }

MazeConfig MazeConfig::parse_layout(const std::string& text) {
    MazeConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::vector<std::string> rows;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        rows.push_back(line);
    }
    if (rows.size() != static_cast<std::size_t>(N)) throw std::invalid_argument("maze layout needs 8 rows");
    bool has_target = false;
    bool has_guard = false;
    for (int r = 0; r < N; ++r) {
        const std::string& row = rows[static_cast<std::size_t>(r)];
        if (row.size() != static_cast<std::size_t>(N)) throw std::invalid_argument("maze layout rows need 8 columns");
        const int y = N - 1 - r;
        for (int x = 0; x < N; ++x) {
            const char ch = row[static_cast<std::size_t>(x)];
            cfg.walls[y][x] = ch == '#';
            switch (ch) {
                case '#':
                case '.': break;
                case 'T':
                    if (has_target) throw std::invalid_argument("maze layout has two targets");
                    cfg.target = {x, y};
                    has_target = true;
                    break;
                case 'G':
                    if (has_guard) throw std::invalid_argument("maze layout has two guard cells");
                    cfg.guard = {x, y};
                    has_guard = true;
                    break;
                default: throw std::invalid_argument(std::string("unknown maze layout character '") + ch + "'");
            }
        }
    }
    if (!has_target || !has_guard) throw std::invalid_argument("maze layout needs one 'T' and one 'G'");
    return cfg;
}

MazeConfig MazeConfig::load_layout(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open maze layout " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_layout(ss.str());
}

std::string MazeConfig::layout_string() const {
    std::string out;
    for (int y = N - 1; y >= 0; --y) {
        for (int x = 0; x < N; ++x) {
            const Cell c{x, y};
            out += c == target ? 'T' : c == guard ? 'G' : walls[y][x] ? '#' : '.';
        }
        out += '\n';
    }
    return out;
}

const char* to_string(MazeStrategy s) noexcept {
    switch (s) {
        case MazeStrategy::Short: return "short";
        case MazeStrategy::Long: return "long";
        case MazeStrategy::Stay: return "stay";
    }
    return "unknown";
}

GuardedMaze::GuardedMaze(MazeConfig config)
    : config_(std::move(config)),
      family_({Component::bernoulli(config_.guard_probability),
               Component::exponential_mean(config_.guard_mean_cost)}) {
    if (config_.is_wall(config_.target) || config_.is_wall(config_.guard))
        throw std::invalid_argument("maze target and guard must be free cells");
    bool any_start = false;
    for (int y = 0; y < N / 2; ++y)
        for (int x = 0; x < N / 2; ++x) any_start |= !config_.is_wall({x, y});
    if (!any_start) throw std::invalid_argument("maze start region has no free cell");
}

std::unique_ptr<EnvState> GuardedMaze::reset(std::span<const double> context, Rng& rng) const {
    if (context.size() != 2) throw std::invalid_argument("maze context must be (guard present, guard cost)");
    if (!(context[0] == 0.0 || context[0] == 1.0) || !(context[1] >= 0.0) || !std::isfinite(context[1]))
        throw std::invalid_argument("maze context outside support");
    auto s = std::make_unique<MazeState>();
    s->guard_present = context[0] == 1.0;
    s->guard_cost = context[1];
    // Uniform over the lower-left quarter, rejecting wall cells.
    std::uniform_real_distribution<double> u(-0.5, N / 2 - 0.5);
    do {
        s->x = u(rng);
        s->y = u(rng);
    } while (config_.is_wall(cell_of(s->x, s->y)));
    return s;
}

StepResult GuardedMaze::step(EnvState& base, int action, Rng& rng) const {
    auto& s = dynamic_cast<MazeState&>(base);
    if (s.done) throw std::logic_error("maze step after episode end");
    if (action < 0 || action >= n_actions()) throw std::invalid_argument("maze action out of range");

    std::normal_distribution<double> noise(0.0, config_.step_noise);
    const double nx = s.x + kMoves[static_cast<std::size_t>(action)][0] + noise(rng);
    const double ny = s.y + kMoves[static_cast<std::size_t>(action)][1] + noise(rng);
    const Cell next = cell_of(nx, ny);
    if (!config_.is_wall(next)) {
        s.x = nx;
        s.y = ny;
    }
    ++s.t;

    StepResult r;
    if (s.t <= config_.step_cost_cap) r.reward -= 1.0;
    const Cell here = cell_of(s.x, s.y);
    if (here == config_.guard && !s.entered_guard) {
        s.entered_guard = true;
        if (s.guard_present) r.reward -= s.guard_cost;
    }
    if (here == config_.target) {
        s.reached_target = true;
        r.reward += config_.target_reward;
        s.done = true;
    }
    if (s.t >= config_.horizon) s.done = true;
    r.done = s.done;
    return r;
}

Vector maze_observe(double x, double y) {
    const double cx = std::clamp(x, 0.0, static_cast<double>(N - 1));
    const double cy = std::clamp(y, 0.0, static_cast<double>(N - 1));
    const int x0 = std::min(static_cast<int>(std::floor(cx)), N - 2);
    const int y0 = std::min(static_cast<int>(std::floor(cy)), N - 2);
    const double fx = cx - x0;
    const double fy = cy - y0;
    Vector obs(static_cast<std::size_t>(N * N), 0.0);
    auto at = [&](int gx, int gy) -> double& { return obs[static_cast<std::size_t>(gy * N + gx)]; };
    at(x0, y0) = (1.0 - fx) * (1.0 - fy);
    at(x0 + 1, y0) = fx * (1.0 - fy);
    at(x0, y0 + 1) = (1.0 - fx) * fy;
    at(x0 + 1, y0 + 1) = fx * fy;
    return obs;
}

Vector GuardedMaze::observe(const EnvState& base) const {
    const auto& s = dynamic_cast<const MazeState&>(base);
    return maze_observe(s.x, s.y);
}

std::pair<double, double> maze_decode(std::span<const double> obs) {
    if (obs.size() != static_cast<std::size_t>(N * N)) throw std::invalid_argument("maze observation must have 64 entries");
    double x = 0.0;
    double y = 0.0;
    for (int i = 0; i < N * N; ++i) {
        const double w = obs[static_cast<std::size_t>(i)];
        if (w == 0.0) continue;
        x += w * (i % N);
        y += w * (i / N);
    }
    return {x, y};
}

MazeStrategy maze_classify(const MazeConfig& config, const Trajectory& trajectory) {
    trajectory.check();
    // The step that enters the target is the only one paying >= target - 1.
    const bool reached = trajectory.rewards.back() >= config.target_reward - 1.0;
    if (!reached) return MazeStrategy::Stay;
    for (const auto& obs : trajectory.states) {
        const auto [x, y] = maze_decode(obs);
        if (cell_of(x, y) == config.guard) return MazeStrategy::Short;
    }
    return MazeStrategy::Long;
}

LayoutReport maze_validate_layout(const MazeConfig& config) {
    LayoutReport rep;
    double sx = 0.0;
    double sy = 0.0;
    int count = 0;
    for (int y = 0; y < N / 2; ++y)
        for (int x = 0; x < N / 2; ++x)
            if (!config.is_wall({x, y})) {
                sx += x;
                sy += y;
                ++count;
            }
    if (count == 0) {
        rep.messages.push_back("start region has no free cell");
        return rep;
    }
    Cell centroid{static_cast<int>(std::lround(sx / count)), static_cast<int>(std::lround(sy / count))};
    if (config.is_wall(centroid)) {
        // Snap to the nearest free start cell.
        double best = 1e9;
        for (int y = 0; y < N / 2; ++y)
            for (int x = 0; x < N / 2; ++x) {
                const double d = std::hypot(x - sx / count, y - sy / count);
                if (!config.is_wall({x, y}) && d < best) {
                    best = d;
                    centroid = {x, y};
                }
            }
    }
    rep.start_centroid = centroid;
    for (int y = 0; y < N / 2; ++y)
        for (int x = 0; x < N / 2; ++x)
            if (Cell{x, y} == config.guard || Cell{x, y} == config.target)
                rep.messages.push_back("guard or target lies inside the start region");

    const auto from_start = bfs(config, centroid, nullptr);
    const auto from_guard = bfs(config, config.guard, nullptr);
    const auto avoiding = bfs(config, centroid, &config.guard);
    const int to_guard = from_start[config.guard.y][config.guard.x];
    const int guard_to_target = from_guard[config.target.y][config.target.x];
    if (to_guard >= 0 && guard_to_target >= 0) rep.l_short = to_guard + guard_to_target;
    rep.l_long = avoiding[config.target.y][config.target.x];

    if (rep.l_short < 0) rep.messages.push_back("no route to the target through the guard cell");
    if (rep.l_long < 0) rep.messages.push_back("no route to the target around the guard cell");
    const double expected_guard_cost = config.guard_probability * config.guard_mean_cost;
    if (rep.l_short >= 0 && rep.l_long >= 0) {
        const int delta = rep.l_long - rep.l_short;
        if (!(delta > expected_guard_cost))
            rep.messages.push_back("detour of " + std::to_string(delta) +
                                   " steps does not exceed the expected guard cost");
        if (!(delta < 40)) rep.messages.push_back("detour of " + std::to_string(delta) + " steps is too long");
        if (rep.l_short > config.step_cost_cap || rep.l_long > config.step_cost_cap)
            rep.messages.push_back("a direct route exceeds the step-cost cap");
    }
    rep.pass = rep.messages.empty();
    return rep;
}

}  // namespace cesor
