#pragma once

// Guarded Maze: an 8x8 grid with continuous noisy moves. The target pays 16,
// each of the first 32 steps costs 1, and entering the guard cell costs C1*C2
// with C1 ~ Bernoulli(phi1) (guard present) and C2 ~ Exp(mean phi2).

#include <array>
#include <string>
#include <vector>

#include "cesor/envs/env.hpp"

namespace cesor {

struct Cell {
    int x = 0;  // column, left to right
    int y = 0;  // row, bottom to top
    bool operator==(const Cell&) const = default;
};

struct MazeConfig {
    static constexpr int kSize = 8;

    std::array<std::array<bool, kSize>, kSize> walls{};  // walls[y][x]
    Cell target{5, 2};
    Cell guard{4, 2};
    double step_noise = 0.2;
    int horizon = 160;
    int step_cost_cap = 32;
    double target_reward = 16.0;
    double guard_probability = 0.2;  // phi0_1
    double guard_mean_cost = 32.0;   // phi0_2

    bool is_wall(Cell c) const;
    bool in_start_region(Cell c) const;  // lower-left quarter

    static MazeConfig default_layout();
    // 8 lines of 8 characters, top row first: '#' wall, '.' free,
    // 'T' target, 'G' guard.
    static MazeConfig parse_layout(const std::string& text);
    static MazeConfig load_layout(const std::string& path);
    std::string layout_string() const;
};

Cell cell_of(double x, double y);

struct MazeState : EnvState {
    double x = 0.0;
    double y = 0.0;
    bool guard_present = false;
    double guard_cost = 0.0;
    bool entered_guard = false;
    bool reached_target = false;
};

enum class MazeStrategy { Short, Long, Stay };
const char* to_string(MazeStrategy s) noexcept;

class GuardedMaze final : public Environment {
public:
    explicit GuardedMaze(MazeConfig config = MazeConfig::default_layout());

    std::string id() const override { return "maze"; }
    int obs_dim() const override { return MazeConfig::kSize * MazeConfig::kSize; }
    int n_actions() const override { return 4; }  // left, right, up, down
    int horizon() const override { return config_.horizon; }
    const ContextDistribution& context_family() const override { return family_; }

    std::unique_ptr<EnvState> reset(std::span<const double> context, Rng& rng) const override;
    StepResult step(EnvState& state, int action, Rng& rng) const override;
    Vector observe(const EnvState& state) const override;

    const MazeConfig& config() const noexcept { return config_; }

private:
    MazeConfig config_;
    ContextDistribution family_;
};

// Bilinear soft one-hot over the 8x8 grid points; at most 4 non-zero entries
// summing to 1. Index = row * 8 + column.
Vector maze_observe(double x, double y);

// Inverse of maze_observe for positions inside [0, 7]^2.
std::pair<double, double> maze_decode(std::span<const double> obs);

// Stay if the target was not reached, Short if the guard cell was entered on
// the way, Long otherwise. Works from the recorded observations and rewards.
MazeStrategy maze_classify(const MazeConfig& config, const Trajectory& trajectory);

struct LayoutReport {
    bool pass = false;
    int l_short = -1;  // start centroid -> guard -> target
    int l_long = -1;   // start centroid -> target avoiding the guard
    Cell start_centroid;
    std::vector<std::string> messages;
};

// BFS check that the short route is mean-optimal but the long route is
// CVaR-optimal: 6.4 < L_long - L_short < 40 and both routes <= 32 steps.
LayoutReport maze_validate_layout(const MazeConfig& config);

}  // namespace cesor
