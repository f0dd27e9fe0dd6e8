#include "cesor/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "cesor/config.hpp"
#include "cesor/parallel.hpp"
#include "cesor/schedule.hpp"

namespace cesor {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Copies trial counts and clamps from `family` while keeping the parameters of `dist`.
ContextDistribution rebase_trials(const ContextDistribution& dist, const ContextDistribution& family) {
    std::vector<Component> comps = family.components();
    for (std::size_t i = 0; i < comps.size(); ++i) comps[i].params = dist.components()[i].params;
    return ContextDistribution(std::move(comps));
}

bool is_maze(const Environment& env) { return env.id() == "maze"; }

double json_double(const nlohmann::json& j) { return j.is_null() ? kNaN : j.get<double>(); }

}  // namespace

const char* to_string(Algorithm a) noexcept {
    switch (a) {
        case Algorithm::PG: return "PG";
        case Algorithm::GCVaR: return "GCVaR";
        case Algorithm::SoR: return "SoR";
        case Algorithm::CeR: return "CeR";
        case Algorithm::CeSoR: return "CeSoR";
    }
    return "?";
}

Algorithm algorithm_from_string(const std::string& name) {
    for (Algorithm a : {Algorithm::PG, Algorithm::GCVaR, Algorithm::SoR, Algorithm::CeR, Algorithm::CeSoR})
        if (name == to_string(a)) return a;
    throw std::invalid_argument("unknown algorithm: " + name);
}

void TrainConfig::validate() const {
    if (env.id != "maze" && env.id != "servers") throw std::invalid_argument("unknown env: " + env.id);
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
    if (!(nu > 0.0 && nu <= 1.0)) throw std::invalid_argument("nu must lie in (0, 1]");
    if (!(beta_smooth > 0.0 && beta_smooth <= 1.0)) throw std::invalid_argument("beta_smooth must lie in (0, 1]");
    if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("rho must lie in (0, 1]");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
    if (iterations < 0) throw std::invalid_argument("iterations must be non-negative");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
    if (!(weight_clip.low > 0.0 && weight_clip.low <= 1.0 && weight_clip.high >= 1.0))
        throw std::invalid_argument("weight clip must satisfy 0 < low <= 1 <= high");
    if (validation_interval < 1) throw std::invalid_argument("validation_interval must be positive");
    if (validation_episodes < 1) throw std::invalid_argument("validation_episodes must be positive");
    for (int h : hidden_dims)
        if (h < 0) throw std::invalid_argument("hidden sizes must be non-negative");
    if (use_cem() && static_cast<int>(std::floor(nu * batch_size + 1e-9)) < 1)
        throw std::invalid_argument("nu * batch_size leaves no reference episodes");
    if (env.id == "servers") {
        if (env.servers_curriculum_minutes.empty()) throw std::invalid_argument("empty servers curriculum");
        for (int minutes : env.servers_curriculum_minutes)
            if (minutes < 1) throw std::invalid_argument("curriculum lengths must be positive");
        env.servers.validate();
    }
}

std::size_t phase_count(const EnvConfig& config) {
    return config.id == "servers" ? config.servers_curriculum_minutes.size() : 1;
}

std::size_t phase_of(const EnvConfig& config, int m, int total) {
    const std::size_t phases = phase_count(config);
    if (phases <= 1 || total <= 0 || m <= 0) return 0;
    const std::size_t p = static_cast<std::size_t>(m - 1) * phases / static_cast<std::size_t>(total);
    return std::min(p, phases - 1);
}

std::unique_ptr<Environment> make_env(const EnvConfig& config, std::size_t phase) {
    if (config.id == "maze") return std::make_unique<GuardedMaze>(config.maze);
    if (config.id == "servers") {
        ServersConfig sc = config.servers;
        if (!config.servers_curriculum_minutes.empty()) {
            phase = std::min(phase, config.servers_curriculum_minutes.size() - 1);
            sc.episode_seconds = config.servers_curriculum_minutes[phase] * 60;
        }
        return std::make_unique<ServersAllocation>(sc);
    }
    throw std::invalid_argument("unknown env: " + config.id);
}

std::unique_ptr<Environment> make_eval_env(const EnvConfig& config) {
    return make_env(config, phase_count(config) - 1);
}

PolicySpec policy_spec_for(const Environment& env, const std::vector<int>& hidden_dims) {
    PolicySpec spec;
    spec.input_dim = env.obs_dim();
    spec.hidden_dims = hidden_dims;
    spec.n_actions = env.n_actions();
    spec.validate();
    return spec;
}

ReturnBatch collect_batch(const PolicyParams& policy, const Environment& env, const CeState* ce, int batch_size,
                          double nu, std::uint64_t seed, int iteration, unsigned workers) {
    if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
    if (!(nu > 0.0 && nu <= 1.0)) throw std::invalid_argument("nu must lie in (0, 1]");
    const auto it = static_cast<std::uint64_t>(iteration);
    const std::size_t n = static_cast<std::size_t>(batch_size);
    const std::size_t n_ref =
        ce ? std::min(n, static_cast<std::size_t>(std::floor(nu * batch_size + 1e-9))) : n;

    ReturnBatch batch;
    batch.n_reference = n_ref;
    batch.n_shifted = n - n_ref;
    batch.records.resize(n);

    const ContextDistribution& phi0 = ce ? ce->phi0 : env.context_family();
    Rng ref_rng = make_stream(seed, StreamTag::ContextRef, {it});
    for (std::size_t i = 0; i < n_ref; ++i) batch.records[i].context = phi0.sample(ref_rng);
    if (batch.n_shifted > 0) {
        Rng shift_rng = make_stream(seed, StreamTag::ContextShifted, {it});
        for (std::size_t i = n_ref; i < n; ++i) {
            auto& r = batch.records[i];
            r.context = ce->phi.sample(shift_rng);
            r.source = Source::Shifted;
            r.weight = importance_weight(ce->phi0, ce->phi, r.context, ce->weight_clip);
        }
    }

    const double temperature = policy.spec().train_temperature;
    parallel_for(n, workers, [&](std::size_t i) {
        auto& r = batch.records[i];
        Rng rng = make_stream(seed, StreamTag::Rollout, {it, static_cast<std::uint64_t>(i)});
        try {
            Episode ep = run_episode(env, policy, r.context, temperature, rng);
            r.trajectory = std::move(ep.trajectory);
            r.ret = ep.ret;
        } catch (const std::exception& e) {
            throw std::runtime_error("episode " + std::to_string(i) + ": " + e.what());
        }
    });
    return batch;
}

EvalResult evaluate(const PolicyParams& policy, const Environment& env, int n_episodes, double alpha,
                    std::uint64_t seed, StreamTag tag, std::uint64_t stream_index, unsigned workers,
                    bool keep_episodes) {
    if (n_episodes < 1) throw std::invalid_argument("n_episodes must be positive");
    const auto n = static_cast<std::size_t>(n_episodes);
    Rng ctx_rng = make_stream(seed, tag, {stream_index, 0});
    const std::vector<Vector> contexts = sample_contexts(env.context_family(), n, ctx_rng);

    std::vector<Episode> episodes(n);
    const double temperature = policy.spec().eval_temperature;
    parallel_for(n, workers, [&](std::size_t i) {
        Rng rng = make_stream(seed, tag, {stream_index, 1, static_cast<std::uint64_t>(i)});
        episodes[i] = run_episode(env, policy, contexts[i], temperature, rng);
    });

    EvalResult out;
    out.returns.reserve(n);
    for (const auto& ep : episodes) out.returns.push_back(ep.ret);
    out.mean = mean_of(out.returns);
    out.cvar = cvar_of_samples(out.returns, alpha);
    if (is_maze(env)) {
        const auto& cfg = static_cast<const GuardedMaze&>(env).config();
        for (const auto& ep : episodes) out.strategies.push_back(maze_classify(cfg, ep.trajectory));
    } else if (env.id() == "servers") {
        for (std::size_t i = 0; i < n; ++i) {
            out.peaks_per_episode.push_back(static_cast<int>(contexts[i][0]));
            for (const auto& s : episodes[i].trajectory.states) out.server_counts.push_back(servers_count_from_obs(s));
        }
    }
    if (keep_episodes) out.episodes = std::move(episodes);
    return out;
}

Trainer::Trainer(TrainConfig config) : config_(std::move(config)) {
    config_.validate();
    eval_env_ = make_eval_env(config_.env);
    const PolicySpec spec = policy_spec_for(*eval_env_, config_.hidden_dims);
    Rng init_rng = make_stream(config_.seed, StreamTag::Init);
    policy_ = init_params(spec, init_rng);
    best_policy_ = policy_;
    adam_ = AdamState::for_params(policy_, AdamConfig{config_.learning_rate, 0.9, 0.999, 1e-8});
    if (config_.use_cem()) {
        auto env0 = make_env(config_.env, 0);
        ce_ = CeState::start(env0->context_family(), config_.beta_smooth, config_.weight_clip);
        ce_phase_ = 0;
    }
    log_.phi_names = eval_env_->context_family().param_names();
}

double Trainer::score_of(const ValidationRow& v) const { return config_.risk_neutral() ? v.mean : v.cvar; }

const RunLogRow& Trainer::training_step(int m) {
    if (m < 1 || m > config_.iterations) throw std::out_of_range("iteration outside [1, M]");
    const std::size_t phase = phase_of(config_.env, m, config_.iterations);
    if (!train_env_ || phase != train_phase_) {
        train_env_ = make_env(config_.env, phase);
        train_phase_ = phase;
    }
    if (ce_ && phase != ce_phase_) {
        const ContextDistribution& family = train_env_->context_family();
        ce_->phi = rebase_trials(ce_->phi, family);
        ce_->phi0 = family;
        ce_phase_ = phase;
    }
    const Environment& env = *train_env_;

    ReturnBatch batch = collect_batch(policy_, env, ce_ ? &*ce_ : nullptr, config_.batch_size, config_.nu,
                                      config_.seed, m, config_.workers);
    const Vector ref = batch.reference_returns();
    const Vector all = batch.returns();

    RunLogRow row;
    row.iteration = m;
    row.horizon = env.horizon();
    row.train_mean = mean_of(ref);
    row.train_cvar = cvar_of_samples(ref, config_.alpha);
    row.ce_threshold = kNaN;
    row.sample_mean = kNaN;
    if (batch.n_shifted > 0)
        row.sample_mean = mean_of(std::span<const double>(all).subspan(batch.n_reference));
    {
        const Vector w = batch.weights();
        row.n_eff_batch = effective_sample_size(w);
    }

    if (ce_) {
        std::vector<Vector> contexts;
        contexts.reserve(batch.size());
        for (const auto& r : batch.records) contexts.push_back(r.context);
        const double q_ce = ce_threshold(ref, all, config_.alpha, config_.beta_smooth);
        const CeUpdateResult res = ce_update(*ce_, contexts, batch.weights(), all, q_ce);
        row.ce_threshold = q_ce;
        row.ce_selected = res.n_selected;
        row.ce_warning = res.empty_selection;
        if (res.empty_selection) spdlog::warn("iteration {}: CE selection empty, phi unchanged", m);
    }

    const double alpha_prime = config_.risk_neutral()      ? 1.0
                               : config_.use_soft_risk() ? soft_risk_level(m, {config_.alpha, config_.rho,
                                                                              config_.iterations})
                                                         : config_.alpha;
    const double q_prime = empirical_quantile(ref, alpha_prime);
    row.alpha_prime = alpha_prime;

    // Scores only for the episodes that enter the estimator.
    std::vector<Gradient> scores(batch.size(), policy_.zeros_like());
    auto used = [&](std::size_t i) {
        const auto& r = batch.records[i];
        return config_.risk_neutral() ? r.source == Source::Reference : r.ret < q_prime;
    };
    parallel_for(batch.size(), config_.workers, [&](std::size_t i) {
        if (!used(i)) return;
        const Trajectory& tr = batch.records[i].trajectory;
        for (std::size_t t = 0; t < tr.length(); ++t)
            accumulate_log_prob_gradient(policy_, tr.states[t], tr.actions[t], 1.0, scores[i]);
    });

    GradientReport report = config_.risk_neutral() ? mean_pg_gradient(batch, scores)
                                                   : cvar_pg_gradient(batch, scores, q_prime, alpha_prime);
    row.q_prime = config_.risk_neutral() ? report.q_hat : q_prime;
    row.used_count = report.used_count;
    row.used_weight_fraction = report.used_weight_fraction;
    row.n_eff_used = report.n_eff_used;

    if (!report.gradient.all_finite()) {
        std::ostringstream msg;
        msg << "non-finite gradient at iteration " << m;
        if (!dump_dir.empty()) {
            const std::string path = dump_dir + "/batch_dump.csv";
            std::ofstream out(path);
            out << "index,source,weight,return,context\n";
            for (std::size_t i = 0; i < batch.size(); ++i) {
                const auto& r = batch.records[i];
                out << i << ',' << to_string(r.source) << ',' << r.weight << ',' << r.ret << ',';
                for (std::size_t k = 0; k < r.context.size(); ++k) out << (k ? ";" : "") << r.context[k];
                out << '\n';
            }
            msg << "; batch written to " << path;
        }
        throw NonFiniteGradient(msg.str());
    }
    row.grad_norm = std::sqrt(report.gradient.squared_norm());
    adam_step(adam_, policy_, report.gradient);

    if (is_maze(env)) {
        const auto& cfg = static_cast<const GuardedMaze&>(env).config();
        row.n_short = row.n_long = row.n_stay = row.long_used = 0;
        double used_w = 0.0, long_w = 0.0;
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const auto s = maze_classify(cfg, batch.records[i].trajectory);
            (s == MazeStrategy::Short ? row.n_short : s == MazeStrategy::Long ? row.n_long : row.n_stay)++;
            if (!used(i)) continue;
            used_w += batch.records[i].weight;
            if (s == MazeStrategy::Long) {
                ++row.long_used;
                long_w += batch.records[i].weight;
            }
        }
        row.long_used_weight_fraction = used_w > 0.0 ? long_w / used_w : 0.0;
    } else if (env.id() == "servers") {
        double total = 0.0;
        std::size_t decisions = 0;
        row.peak_episodes = 0;
        for (const auto& r : batch.records) {
            if (r.context[0] > 0.0) ++row.peak_episodes;
            for (const auto& s : r.trajectory.states) total += servers_count_from_obs(s);
            decisions += r.trajectory.length();
        }
        row.mean_servers = decisions ? total / static_cast<double>(decisions) : 0.0;
    }

    row.phi = ce_ ? ce_->phi.params() : env.context_family().params();
    spdlog::info("iter {:4d} alpha'={:.4f} q'={:.3f} mean={:.3f} cvar={:.3f} used={} n_eff={:.1f}", m,
                 alpha_prime, row.q_prime, row.train_mean, row.train_cvar, row.used_count, row.n_eff_used);

    last_report_ = std::move(report);
    last_batch_ = std::move(batch);
    completed_ = m;
    log_.rows.push_back(std::move(row));
    return log_.rows.back();
}

const ValidationRow& Trainer::validate(int m) {
    EvalResult res = evaluate(policy_, *eval_env_, config_.validation_episodes, config_.alpha, config_.seed,
                              StreamTag::Validation, static_cast<std::uint64_t>(m), config_.workers);
    ValidationRow v;
    v.iteration = m;
    v.mean = res.mean;
    v.cvar = res.cvar;
    if (!res.strategies.empty()) {
        v.n_short = v.n_long = v.n_stay = 0;
        for (auto s : res.strategies)
            (s == MazeStrategy::Short ? v.n_short : s == MazeStrategy::Long ? v.n_long : v.n_stay)++;
    }
    if (!res.server_counts.empty()) {
        double total = 0.0;
        for (int c : res.server_counts) total += c;
        v.mean_servers = total / static_cast<double>(res.server_counts.size());
    }
    const double score = score_of(v);
    // Ties go to the later checkpoint.
    if (best_iteration_ < 0 || score >= best_score_) {
        best_score_ = score;
        best_iteration_ = m;
        best_policy_ = policy_;
        v.best = true;
        for (auto& old : log_.validations) old.best = false;
    }
    spdlog::info("validation {:4d} mean={:.3f} cvar={:.3f}{}", m, v.mean, v.cvar, v.best ? " (best)" : "");
    last_validation_returns_ = std::move(res.returns);
    log_.validations.push_back(v);
    return log_.validations.back();
}

void Trainer::run(std::optional<int> until) {
    const int last = std::min(until.value_or(config_.iterations), config_.iterations);
    if (log_.validations.empty()) {
        validate(0);
        if (on_progress) on_progress(*this);
    }
    for (int m = completed_ + 1; m <= last; ++m) {
        training_step(m);
        if (m % config_.validation_interval == 0 || m == config_.iterations) validate(m);
        if (on_progress) on_progress(*this);
    }
}

namespace {

nlohmann::json row_to_json(const RunLogRow& r) {
    auto num = [](double x) { return std::isnan(x) ? nlohmann::json(nullptr) : nlohmann::json(x); };
    return {{"iteration", r.iteration},
            {"horizon", r.horizon},
            {"alpha_prime", r.alpha_prime},
            {"q_prime", r.q_prime},
            {"ce_threshold", num(r.ce_threshold)},
            {"phi", r.phi},
            {"train_mean", r.train_mean},
            {"train_cvar", r.train_cvar},
            {"sample_mean", num(r.sample_mean)},
            {"used_count", r.used_count},
            {"used_weight_fraction", r.used_weight_fraction},
            {"n_eff_used", r.n_eff_used},
            {"n_eff_batch", r.n_eff_batch},
            {"ce_selected", r.ce_selected},
            {"ce_warning", r.ce_warning},
            {"grad_norm", r.grad_norm},
            {"n_short", r.n_short},
            {"n_long", r.n_long},
            {"n_stay", r.n_stay},
            {"long_used", r.long_used},
            {"long_used_weight_fraction", r.long_used_weight_fraction},
            {"mean_servers", r.mean_servers},
            {"peak_episodes", r.peak_episodes}};
}

RunLogRow row_from_json(const nlohmann::json& j) {
    RunLogRow r;
    r.iteration = j.at("iteration");
    r.horizon = j.at("horizon");
    r.alpha_prime = j.at("alpha_prime");
    r.q_prime = j.at("q_prime");
    r.ce_threshold = json_double(j.at("ce_threshold"));
    r.phi = j.at("phi").get<Vector>();
    r.train_mean = j.at("train_mean");
    r.train_cvar = j.at("train_cvar");
    r.sample_mean = json_double(j.at("sample_mean"));
    r.used_count = j.at("used_count");
    r.used_weight_fraction = j.at("used_weight_fraction");
    r.n_eff_used = j.at("n_eff_used");
    r.n_eff_batch = j.at("n_eff_batch");
    r.ce_selected = j.at("ce_selected");
    r.ce_warning = j.at("ce_warning");
    r.grad_norm = j.at("grad_norm");
    r.n_short = j.at("n_short");
    r.n_long = j.at("n_long");
    r.n_stay = j.at("n_stay");
    r.long_used = j.at("long_used");
    r.long_used_weight_fraction = j.at("long_used_weight_fraction");
    r.mean_servers = j.at("mean_servers");
    r.peak_episodes = j.at("peak_episodes");
    return r;
}

nlohmann::json validation_to_json(const ValidationRow& v) {
    return {{"iteration", v.iteration}, {"mean", v.mean},       {"cvar", v.cvar},
            {"best", v.best},           {"n_short", v.n_short}, {"n_long", v.n_long},
            {"n_stay", v.n_stay},       {"mean_servers", v.mean_servers}};
}

ValidationRow validation_from_json(const nlohmann::json& j) {
    ValidationRow v;
    v.iteration = j.at("iteration");
    v.mean = j.at("mean");
    v.cvar = j.at("cvar");
    v.best = j.at("best");
    v.n_short = j.at("n_short");
    v.n_long = j.at("n_long");
    v.n_stay = j.at("n_stay");
    v.mean_servers = j.at("mean_servers");
    return v;
}

}  // namespace

nlohmann::json Trainer::snapshot() const {
    nlohmann::json j;
    j["config"] = config_to_json(config_);
    j["completed"] = completed_;
    j["policy"] = params_to_json(policy_);
    j["best_policy"] = params_to_json(best_policy_);
    j["best_score"] = best_score_;
    j["best_iteration"] = best_iteration_;
    j["adam"] = {{"step", adam_.step_count}, {"m", adam_.first_moment}, {"v", adam_.second_moment}};
    if (ce_) {
        j["ce"] = {{"phi", distribution_to_json(ce_->phi)},
                   {"phi0", distribution_to_json(ce_->phi0)},
                   {"phase", ce_phase_},
                   {"history", ce_->history}};
    }
    auto& rows = j["rows"] = nlohmann::json::array();
    for (const auto& r : log_.rows) rows.push_back(row_to_json(r));
    auto& vals = j["validations"] = nlohmann::json::array();
    for (const auto& v : log_.validations) vals.push_back(validation_to_json(v));
    j["last_validation_returns"] = last_validation_returns_;
    return j;
}

Trainer Trainer::restore(const nlohmann::json& j) {
    Trainer t(config_from_json(j.at("config")));
    t.completed_ = j.at("completed");
    t.policy_ = params_from_json(j.at("policy"));
    t.best_policy_ = params_from_json(j.at("best_policy"));
    t.best_score_ = j.at("best_score");
    t.best_iteration_ = j.at("best_iteration");
    const auto& a = j.at("adam");
    t.adam_.step_count = a.at("step");
    t.adam_.first_moment = a.at("m").get<Vector>();
    t.adam_.second_moment = a.at("v").get<Vector>();
    if (t.ce_) {
        const auto& c = j.at("ce");
        t.ce_->phi = distribution_from_json(c.at("phi"));
        t.ce_->phi0 = distribution_from_json(c.at("phi0"));
        t.ce_phase_ = c.at("phase");
        t.ce_->history = c.at("history").get<std::vector<Vector>>();
    }
    for (const auto& r : j.at("rows")) t.log_.rows.push_back(row_from_json(r));
    for (const auto& v : j.at("validations")) t.log_.validations.push_back(validation_from_json(v));
    t.last_validation_returns_ = j.at("last_validation_returns").get<Vector>();
    if (!t.policy_.same_shape(t.best_policy_) || t.adam_.first_moment.size() != t.policy_.size())
        throw std::invalid_argument("snapshot shapes disagree with its config");
    return t;
}

}  // namespace cesor
