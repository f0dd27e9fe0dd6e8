#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/fmt/fmt.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "cesor/analysis.hpp"
#include "cesor/cem.hpp"
#include "cesor/config.hpp"
#include "cesor/run_io.hpp"
#include "cesor/train.hpp"

namespace fs = std::filesystem;
using namespace cesor;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void setup_logging() {
    auto logger = spdlog::stderr_color_mt("cesor");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%H:%M:%S] %^%l%$ %v");
    const char* env = std::getenv("CESOR_LOG");
    const std::string level = env ? env : "info";
    if (level == "error")
        spdlog::set_level(spdlog::level::err);
    else if (level == "debug")
        spdlog::set_level(spdlog::level::debug);
    else
        spdlog::set_level(spdlog::level::info);
}

TrainConfig env_only_config(const std::string& config_path, const std::string& env_id,
                            const std::vector<std::string>& overrides) {
    if (!config_path.empty()) return load_config(config_path, overrides);
    nlohmann::json doc = {{"env", env_id}};
    for (const auto& o : overrides) apply_override(doc, o);
    return config_from_json(doc);
}

// ---- train ----

struct TrainArgs {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> workers;
    std::vector<std::string> overrides;
    std::string out;
    bool resume = false;
};

int cmd_train(const TrainArgs& a) {
    std::vector<std::string> overrides = a.overrides;
    if (a.seed) overrides.push_back("seed=" + std::to_string(*a.seed));
    if (a.workers) overrides.push_back("workers=" + std::to_string(*a.workers));
    const TrainConfig config = load_config(a.config, overrides);
    const fs::path out = a.out.empty() ? fs::path("runs") / fmt::format("{}_{}_seed{}", config.env.id,
                                                                        to_string(config.algorithm), config.seed)
                                       : fs::path(a.out);
    Trainer t = run_training(config, out, a.resume);
    const auto& v = t.log().validations;
    const auto best = std::find_if(v.begin(), v.end(), [](const ValidationRow& r) { return r.best; });
    std::cout << "run directory: " << out.string() << "\n";
    if (best != v.end())
        std::cout << fmt::format("best checkpoint: iteration {} (validation mean {:.3f}, CVaR {:.3f})\n",
                                 best->iteration, best->mean, best->cvar);
    return 0;
}

// ---- eval ----

struct EvalArgs {
    std::string checkpoint;
    std::string config;
    std::string env = "maze";
    std::vector<std::string> overrides;
    int episodes = 1000;
    std::optional<double> alpha;
    std::uint64_t seed = 0;
    std::optional<unsigned> workers;
    std::string out;
};

int cmd_eval(const EvalArgs& a) {
    const TrainConfig config = env_only_config(a.config, a.env, a.overrides);
    // Without an explicit level, use the config's (0.05 for a bare --env).
    const double alpha = a.alpha.value_or(a.config.empty() ? 0.05 : config.alpha);
    if (!(alpha > 0.0 && alpha <= 1.0)) throw UsageError("alpha must lie in (0, 1]");
    if (a.episodes < 1) throw UsageError("episodes must be positive");
    const auto env = make_eval_env(config.env);
    const PolicyParams policy = load_checkpoint(a.checkpoint);
    if (policy.spec().input_dim != env->obs_dim() || policy.spec().n_actions != env->n_actions())
        throw UsageError(fmt::format("checkpoint expects obs {} / actions {}, env {} has {} / {}",
                                     policy.spec().input_dim, policy.spec().n_actions, env->id(), env->obs_dim(),
                                     env->n_actions()));
    const EvalResult r = evaluate(policy, *env, a.episodes, alpha, a.seed, StreamTag::Test, 0,
                                  a.workers.value_or(config.workers), true);

    std::cout << fmt::format("env {}  episodes {}  alpha {}\n", env->id(), a.episodes, alpha);
    std::cout << fmt::format("mean {:.4f}\nCVaR {:.4f}\n", r.mean, r.cvar);
    std::cout << "quantiles:";
    for (int pct : {1, 5, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100})
        std::cout << fmt::format(" {}%={:.3f}", pct, empirical_quantile(r.returns, pct / 100.0));
    std::cout << "\n";
    if (!r.strategies.empty()) {
        int counts[3] = {0, 0, 0};
        for (auto s : r.strategies) ++counts[static_cast<int>(s)];
        std::cout << fmt::format("strategies: short {} long {} stay {}\n", counts[0], counts[1], counts[2]);
    }
    if (!r.server_counts.empty()) {
        std::map<int, int> hist;
        for (int c : r.server_counts) ++hist[c];
        std::cout << "server counts:";
        for (auto [c, n] : hist) std::cout << fmt::format(" {}:{}", c, n);
        std::cout << "\n";
    }

    const fs::path out = a.out.empty() ? fs::path("eval.csv") : fs::path(a.out);
    std::ostringstream csv;
    csv << "episode,return";
    if (!r.strategies.empty()) csv << ",strategy";
    if (!r.server_counts.empty()) csv << ",peaks,mean_servers";
    csv << "\n";
    for (std::size_t i = 0; i < r.returns.size(); ++i) {
        csv << i << ',' << format_number(r.returns[i]);
        if (!r.strategies.empty()) csv << ',' << to_string(r.strategies[i]);
        if (!r.server_counts.empty()) {
            const auto& states = r.episodes[i].trajectory.states;
            double total = 0.0;
            for (const auto& s : states) total += servers_count_from_obs(s);
            csv << ',' << r.peaks_per_episode[i] << ',' << format_number(total / static_cast<double>(states.size()));
        }
        csv << '\n';
    }
    write_text_file(out, csv.str());
    return 0;
}

// ---- cem-demo ----

struct CemArgs {
    std::string family = "beta";
    double phi0 = 0.5;
    int trials = 10;  // binomial only
    double alpha = 0.1;
    int iters = 10;
    int n = 1000;
    double nu = 0.2;
    double beta = 0.5;
    std::uint64_t seed = 0;
    std::string out;
};

int cmd_cem_demo(const CemArgs& a) {
    Component comp;
    if (a.family == "beta")
        comp = Component::beta_mean(a.phi0);
    else if (a.family == "bernoulli")
        comp = Component::bernoulli(a.phi0);
    else if (a.family == "exponential")
        comp = Component::exponential_mean(a.phi0);
    else if (a.family == "binomial")
        comp = Component::binomial(a.trials, a.phi0);
    else
        throw UsageError("unsupported family: " + a.family + " (beta, bernoulli, exponential, binomial)");
    if (a.iters < 0) throw UsageError("iters must be non-negative");
    if (!(a.alpha > 0.0 && a.alpha < 1.0)) throw UsageError("alpha must lie in (0, 1)");
    const ContextDistribution phi0({comp});

    // Reference quantile and CVaR of the score under phi0.
    Rng ref_rng = make_stream(a.seed, StreamTag::Demo, {0});
    Vector ref;
    for (const auto& c : sample_contexts(phi0, 200000, ref_rng)) ref.push_back(c[0]);
    StaticCemOptions opt;
    opt.q_target = empirical_quantile(ref, a.alpha);
    opt.n_per_iter = static_cast<std::size_t>(a.n);
    opt.beta_smooth = a.beta;
    opt.max_iters = a.iters;
    opt.nu = a.nu;
    const double ref_cvar = cvar_of_samples(ref, a.alpha);

    Rng rng = make_stream(a.seed, StreamTag::Demo, {1});
    const auto rows = static_cem_run(phi0, [](std::span<const double> c) { return c[0]; }, opt, rng);

    std::ostringstream csv;
    csv << "iteration,phi,sample_mean,reference_cvar,threshold,n_selected,n_eff,warning\n";
    for (const auto& r : rows)
        csv << r.iteration << ',' << format_number(r.phi[0]) << ',' << format_number(r.sample_mean) << ','
            << format_number(ref_cvar) << ',' << format_number(r.threshold) << ',' << r.n_selected << ','
            << format_number(r.n_eff) << ',' << (r.warning ? 1 : 0) << '\n';
    if (a.out.empty())
        std::cout << csv.str();
    else
        write_text_file(a.out, csv.str());
    return 0;
}

// ---- verify ----

int cmd_verify(const std::string& which, std::uint64_t seed, std::optional<unsigned> workers, bool inject_bug,
               const std::string& out) {
    AnalyticLogProbGrad analytic = log_prob_gradient;
    if (inject_bug) {
        // Negative control: drop the softmax normalization term from the score.
        analytic = [](const PolicyParams& p, std::span<const double> obs, int a) {
            Gradient g = log_prob_gradient(p, obs, a);
            auto b = g.bias(g.layer_count() - 1);
            for (std::size_t k = 0; k < b.size(); ++k) b[k] = (static_cast<int>(k) == a ? 1.0 : 0.0);
            return g;
        };
    }
    std::vector<Verdict> verdicts;
    auto add = [&](std::vector<Verdict> v) { verdicts.insert(verdicts.end(), v.begin(), v.end()); };
    const bool all = which == "all";
    if (all || which == "gradcheck") add(verify_gradcheck(seed, analytic));
    if (all || which == "barrier") add(verify_barrier(seed));
    if (all || which == "variance") add(verify_variance(seed));
    if (all || which == "blindness") add(verify_blindness(seed, workers.value_or(0)));
    if (verdicts.empty()) throw UsageError("unknown verifier: " + which);

    nlohmann::json doc = nlohmann::json::array();
    bool pass = true;
    for (const auto& v : verdicts) {
        doc.push_back(verdict_to_json(v));
        pass = pass && v.pass;
    }
    const std::string text = doc.dump(2) + "\n";
    std::cout << text;
    if (!out.empty()) write_text_file(out, text);
    return pass ? 0 : 1;
}

// ---- replay ----

Vector parse_list(const std::string& text) {
    Vector out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(std::stod(item));
    return out;
}

int cmd_replay(const std::string& config_path, const std::string& env_id, const std::vector<std::string>& overrides,
               const std::string& context, const std::string& actions_text, std::uint64_t seed,
               const std::string& out) {
    const TrainConfig config = env_only_config(config_path, env_id, overrides);
    const auto env = make_eval_env(config.env);
    const Vector ctx = parse_list(context);
    std::vector<int> actions;
    for (double a : parse_list(actions_text)) actions.push_back(static_cast<int>(a));
    if (ctx.size() != env->context_family().context_dim())
        throw UsageError(fmt::format("{} expects a context of {} values", env->id(), env->context_family().context_dim()));
    Rng rng = make_stream(seed, StreamTag::Demo, {2});
    const Episode ep = replay_actions(*env, ctx, actions, rng);

    std::ostringstream csv;
    csv << "step,action,reward\n";
    for (std::size_t t = 0; t < ep.trajectory.length(); ++t)
        csv << t << ',' << ep.trajectory.actions[t] << ',' << format_number(ep.trajectory.rewards[t]) << '\n';
    if (out.empty())
        std::cout << csv.str();
    else
        write_text_file(out, csv.str());
    std::cerr << "return " << format_number(ep.ret) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    setup_logging();
    CLI::App app{"CVaR policy gradients with a cross-entropy context sampler and soft risk scheduling"};
    app.require_subcommand(1);

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "Train a policy and write a run directory");
    train_cmd->add_option("--config", train.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--seed", train.seed, "Master seed");
    train_cmd->add_option("--workers", train.workers, "Rollout threads (0: all cores)");
    train_cmd->add_option("--override", train.overrides, "key=value, repeatable");
    train_cmd->add_option("--out", train.out, "Run directory");
    train_cmd->add_flag("--resume", train.resume, "Continue from <out>/state.json");

    EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("eval", "Greedy evaluation of a checkpoint");
    eval_cmd->add_option("--checkpoint", eval.checkpoint, "Checkpoint JSON")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--config", eval.config, "Run configuration supplying the environment");
    eval_cmd->add_option("--env", eval.env, "maze or servers, when no config is given");
    eval_cmd->add_option("--override", eval.overrides, "key=value, repeatable");
    eval_cmd->add_option("--episodes", eval.episodes, "Number of episodes");
    eval_cmd->add_option("--alpha", eval.alpha, "CVaR level (default: config alpha, else 0.05)");
    eval_cmd->add_option("--seed", eval.seed, "Seed");
    eval_cmd->add_option("--workers", eval.workers, "Rollout threads");
    eval_cmd->add_option("--out", eval.out, "Per-episode CSV (default eval.csv)");

    CemArgs cem;
    auto* cem_cmd = app.add_subcommand("cem-demo", "Static-target CEM on a single context family");
    cem_cmd->add_option("--family", cem.family, "beta, bernoulli, exponential or binomial");
    cem_cmd->add_option("--phi0", cem.phi0, "Initial parameter");
    cem_cmd->add_option("--trials", cem.trials, "Binomial trial count");
    cem_cmd->add_option("--alpha", cem.alpha, "Target tail level");
    cem_cmd->add_option("--iters", cem.iters, "CEM iterations");
    cem_cmd->add_option("--n", cem.n, "Samples per iteration");
    cem_cmd->add_option("--nu", cem.nu, "Reference fraction");
    cem_cmd->add_option("--beta", cem.beta, "Threshold quantile level");
    cem_cmd->add_option("--seed", cem.seed, "Seed");
    cem_cmd->add_option("--out", cem.out, "CSV path (default stdout)");

    std::string verify_which = "all";
    std::uint64_t verify_seed = 0;
    std::optional<unsigned> verify_workers;
    bool inject_bug = false;
    std::string verify_out;
    auto* verify_cmd = app.add_subcommand("verify", "Run the estimator checks and print JSON verdicts");
    verify_cmd->add_option("which", verify_which, "barrier, blindness, variance, gradcheck or all");
    verify_cmd->add_option("--seed", verify_seed, "Seed");
    verify_cmd->add_option("--workers", verify_workers, "Threads");
    verify_cmd->add_option("--out", verify_out, "Also write the verdicts to this file");
    verify_cmd->add_flag("--inject-gradient-bug", inject_bug)->group("");

    std::string replay_config, replay_env = "maze", replay_context, replay_actions_text, replay_out;
    std::vector<std::string> replay_overrides;
    std::uint64_t replay_seed = 0;
    auto* replay_cmd = app.add_subcommand("replay", "Replay a scripted action list and print per-step rewards");
    replay_cmd->add_option("--config", replay_config, "Run configuration supplying the environment");
    replay_cmd->add_option("--env", replay_env, "maze or servers, when no config is given");
    replay_cmd->add_option("--override", replay_overrides, "key=value, repeatable");
    replay_cmd->add_option("--context", replay_context, "Comma-separated context values")->required();
    std::string replay_actions_file;
    auto* actions_opt = replay_cmd->add_option("--actions", replay_actions_text, "Comma-separated actions");
    replay_cmd->add_option("--actions-file", replay_actions_file, "One action index per line")
        ->check(CLI::ExistingFile)
        ->excludes(actions_opt);
    replay_cmd->add_option("--seed", replay_seed, "Seed");
    replay_cmd->add_option("--out", replay_out, "CSV path (default stdout)");

    try {
        app.parse(argc, argv);
        if (*replay_cmd) {
            if (!replay_actions_file.empty()) {
                std::ifstream in(replay_actions_file);
                std::string line;
                replay_actions_text.clear();
                while (std::getline(in, line))
                    if (!line.empty() && line != "\r") replay_actions_text += line + ",";
            }
            if (replay_actions_text.empty()) throw CLI::RequiredError("--actions or --actions-file");
        }
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*train_cmd) return cmd_train(train);
        if (*eval_cmd) return cmd_eval(eval);
        if (*cem_cmd) return cmd_cem_demo(cem);
        if (*verify_cmd) return cmd_verify(verify_which, verify_seed, verify_workers, inject_bug, verify_out);
        if (*replay_cmd)
            return cmd_replay(replay_config, replay_env, replay_overrides, replay_context, replay_actions_text,
                              replay_seed, replay_out);
    } catch (const ConfigError& e) {
        spdlog::error("invalid config: {}", e.what());
        return 2;
    } catch (const UsageError& e) {
        spdlog::error("{}", e.what());
        return 2;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 2;
}
