#pragma once

// The training loop for the five variants (PG, GCVaR, SoR, CeR, CeSoR):
// batch collection with reference and CE-shifted contexts, the CE sampler
// update, the soft risk schedule, the policy-gradient step, validation and
// best-checkpoint selection.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cesor/cem.hpp"
#include "cesor/envs/maze.hpp"
#include "cesor/envs/servers.hpp"
#include "cesor/gradients.hpp"
#include "cesor/policy.hpp"

namespace cesor {

enum class Algorithm { PG, GCVaR, SoR, CeR, CeSoR };

const char* to_string(Algorithm a) noexcept;
Algorithm algorithm_from_string(const std::string& name);

struct EnvConfig {
    std::string id = "maze";  // "maze" or "servers"
    MazeConfig maze = MazeConfig::default_layout();
    std::string maze_layout_path;  // empty: built-in layout
    ServersConfig servers;
    // Episode lengths (minutes) of equal-length training phases.
    std::vector<int> servers_curriculum_minutes{15, 30, 45, 60};
};

struct TrainConfig {
    EnvConfig env;
    Algorithm algorithm = Algorithm::CeSoR;
    double alpha = 0.05;
    double nu = 0.2;
    double beta_smooth = 0.2;
    double rho = 0.8;
    int batch_size = 400;  // N
    int iterations = 250;  // M
    double learning_rate = 0.1;
    WeightClip weight_clip{0.2, 5.0};
    int validation_interval = 10;
    int validation_episodes = 1000;
    std::uint64_t seed = 0;
    std::vector<int> hidden_dims;  // empty: linear policy
    unsigned workers = 0;          // 0: hardware concurrency

    bool use_cem() const noexcept { return algorithm == Algorithm::CeR || algorithm == Algorithm::CeSoR; }
    bool use_soft_risk() const noexcept { return algorithm == Algorithm::SoR || algorithm == Algorithm::CeSoR; }
    bool risk_neutral() const noexcept { return algorithm == Algorithm::PG; }
    void validate() const;
};

// Environment for a curriculum phase (servers) or the single maze.
std::unique_ptr<Environment> make_env(const EnvConfig& config, std::size_t phase = 0);
std::size_t phase_count(const EnvConfig& config);
// 0-based phase of iteration m (1-based) out of M.
std::size_t phase_of(const EnvConfig& config, int m, int total);
// The environment used for validation and testing (the final phase).
std::unique_ptr<Environment> make_eval_env(const EnvConfig& config);

PolicySpec policy_spec_for(const Environment& env, const std::vector<int>& hidden_dims);

// Episodes are rolled at the policy's training temperature. With a CE state,
// floor(nu N) reference and ceil((1 - nu) N) shifted contexts are drawn;
// otherwise all N are reference contexts with weight 1.
ReturnBatch collect_batch(const PolicyParams& policy, const Environment& env, const CeState* ce, int batch_size,
                          double nu, std::uint64_t seed, int iteration, unsigned workers);

struct RunLogRow {
    int iteration = 0;
    int horizon = 0;
    double alpha_prime = 1.0;
    double q_prime = 0.0;
    double ce_threshold = 0.0;  // NaN without CE
    Vector phi;
    double train_mean = 0.0;  // over reference returns
    double train_cvar = 0.0;  // CVaR_alpha over reference returns
    double sample_mean = 0.0;  // mean of shifted returns, NaN without CE
    std::size_t used_count = 0;
    double used_weight_fraction = 0.0;
    double n_eff_used = 0.0;
    double n_eff_batch = 0.0;
    std::size_t ce_selected = 0;
    bool ce_warning = false;
    double grad_norm = 0.0;
    // Maze strategy counts over the batch and among the used episodes.
    int n_short = -1, n_long = -1, n_stay = -1, long_used = -1;
    double long_used_weight_fraction = 0.0;
    // Servers: mean active servers over decisions, peak episodes in the batch.
    double mean_servers = 0.0;
    int peak_episodes = -1;
};

struct ValidationRow {
    int iteration = 0;
    double mean = 0.0;
    double cvar = 0.0;
    bool best = false;
    int n_short = -1, n_long = -1, n_stay = -1;
    double mean_servers = 0.0;
};

struct RunLog {
    std::vector<std::string> phi_names;
    std::vector<RunLogRow> rows;
    std::vector<ValidationRow> validations;
};

struct EvalResult {
    Vector returns;
    double mean = 0.0;
    double cvar = 0.0;
    // Maze: strategy per episode. Servers: active-server counts per decision.
    std::vector<MazeStrategy> strategies;
    std::vector<int> server_counts;
    std::vector<int> peaks_per_episode;  // servers only
    std::vector<Episode> episodes;       // kept only when requested
};

// Greedy rollouts (eval temperature) on fresh D_phi0 contexts.
EvalResult evaluate(const PolicyParams& policy, const Environment& env, int n_episodes,
                    double alpha, std::uint64_t seed, StreamTag tag, std::uint64_t stream_index, unsigned workers,
                    bool keep_episodes = false);

class Trainer {
public:
    explicit Trainer(TrainConfig config);

    // Runs iterations until `until` (default M), validating on schedule.
    void run(std::optional<int> until = std::nullopt);
    // One iteration of the loop; m is 1-based.
    const RunLogRow& training_step(int m);
    const ValidationRow& validate(int m);

    const TrainConfig& config() const noexcept { return config_; }
    const PolicyParams& policy() const noexcept { return policy_; }
    const PolicyParams& best_policy() const noexcept { return best_policy_; }
    int best_iteration() const noexcept { return best_iteration_; }
    int completed_iterations() const noexcept { return completed_; }
    const RunLog& log() const noexcept { return log_; }
    const std::optional<CeState>& ce_state() const noexcept { return ce_; }
    const AdamState& adam() const noexcept { return adam_; }
    // Batch of the most recent iteration (diagnostics and tests).
    const ReturnBatch& last_batch() const noexcept { return last_batch_; }
    const GradientReport& last_report() const noexcept { return last_report_; }
    const Vector& last_validation_returns() const noexcept { return last_validation_returns_; }

    // Where a batch is dumped before aborting on a non-finite gradient.
    std::string dump_dir;

    // Full resumable state as JSON, and the inverse.
    nlohmann::json snapshot() const;
    static Trainer restore(const nlohmann::json& snapshot);

    // Called after every iteration and validation, e.g. to persist the run.
    std::function<void(const Trainer&)> on_progress;

private:
    double score_of(const ValidationRow& v) const;

    TrainConfig config_;
    std::unique_ptr<Environment> eval_env_;
    PolicyParams policy_;
    PolicyParams best_policy_;
    double best_score_ = 0.0;
    int best_iteration_ = -1;
    AdamState adam_;
    std::optional<CeState> ce_;
    std::size_t ce_phase_ = 0;
    std::unique_ptr<Environment> train_env_;
    std::size_t train_phase_ = static_cast<std::size_t>(-1);
    int completed_ = 0;
    RunLog log_;
    ReturnBatch last_batch_;
    GradientReport last_report_;
    Vector last_validation_returns_;
};

struct NonFiniteGradient : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace cesor
