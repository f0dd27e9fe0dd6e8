#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cesor/run_io.hpp"
#include "cesor/schedule.hpp"
#include "cesor/train.hpp"

using namespace cesor;
namespace fs = std::filesystem;

namespace {

TrainConfig small_maze(Algorithm algo, int iterations = 3) {
    TrainConfig c;
    c.algorithm = algo;
    c.batch_size = 60;
    c.iterations = iterations;
    c.validation_interval = 2;
    c.validation_episodes = 50;
    c.seed = 3;
    c.workers = 1;
    return c;
}

TrainConfig small_servers(Algorithm algo) {
    TrainConfig c;
    c.env.id = "servers";
    c.env.servers_curriculum_minutes = {15};
    c.algorithm = algo;
    c.alpha = 0.01;
    c.batch_size = 40;
    c.iterations = 2;
    c.validation_interval = 1;
    c.validation_episodes = 20;
    c.seed = 5;
    c.workers = 1;
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("cesor_test_" + name);
    fs::remove_all(dir);
    return dir;
}

}  // namespace

TEST_CASE("collect_batch splits reference and shifted episodes") {
    const GuardedMaze env;
    Rng rng(1);
    const PolicyParams policy = init_params(policy_spec_for(env, {}), rng);

    const ReturnBatch plain = collect_batch(policy, env, nullptr, 50, 0.2, 1, 1, 1);
    CHECK(plain.n_reference == 50);
    CHECK(plain.n_shifted == 0);
    for (const auto& r : plain.records) CHECK(r.weight == 1.0);

    CeState ce = CeState::start(env.context_family(), 0.2, WeightClip{0.2, 5.0});
    ReturnBatch b = collect_batch(policy, env, &ce, 400, 0.2, 1, 1, 1);
    CHECK(b.n_reference == 80);
    CHECK(b.n_shifted == 320);
    CHECK_NOTHROW(b.check());
    // phi = phi0: every weight is exactly 1.
    for (const auto& r : b.records) REQUIRE(r.weight == 1.0);

    b = collect_batch(policy, env, &ce, 50, 1.0, 1, 1, 1);
    CHECK(b.n_shifted == 0);

    ce.phi = ce.phi0.with_params(Vector{0.8, 60.0});
    b = collect_batch(policy, env, &ce, 200, 0.2, 1, 2, 1);
    bool any_clipped = false;
    for (const auto& r : b.records) {
        REQUIRE(r.weight >= 0.2);
        REQUIRE(r.weight <= 5.0);
        if (r.source == Source::Reference) REQUIRE(r.weight == 1.0);
        any_clipped |= r.weight == 0.2;
    }
    CHECK(any_clipped);  // guard present with p0 0.2 vs 0.8 gives ratios near 0.25 * e^{...}

    CHECK_THROWS(collect_batch(policy, env, nullptr, 0, 0.2, 1, 1, 1));
}

TEST_CASE("collect_batch is deterministic and independent of the worker count") {
    const GuardedMaze env;
    Rng rng(2);
    const PolicyParams policy = init_params(policy_spec_for(env, {}), rng);
    CeState ce = CeState::start(env.context_family(), 0.2, WeightClip{0.2, 5.0});
    ce.phi = ce.phi0.with_params(Vector{0.5, 40.0});
    const ReturnBatch a = collect_batch(policy, env, &ce, 64, 0.25, 9, 4, 1);
    const ReturnBatch b = collect_batch(policy, env, &ce, 64, 0.25, 9, 4, 4);
    CHECK(a.returns() == b.returns());
    CHECK(a.weights() == b.weights());
    const ReturnBatch c = collect_batch(policy, env, &ce, 64, 0.25, 9, 5, 1);
    CHECK(a.returns() != c.returns());
}

TEST_CASE("training step: q' from reference returns, CE threshold at the target alpha") {
    TrainConfig cfg = small_maze(Algorithm::CeSoR, 250);
    cfg.batch_size = 100;
    Trainer t(cfg);
    const RunLogRow& row = t.training_step(1);
    CHECK(row.alpha_prime == doctest::Approx(0.99525).epsilon(1e-12));
    const ReturnBatch& b = t.last_batch();
    CHECK(b.n_reference == 20);
    const Vector ref = b.reference_returns();
    CHECK(row.q_prime == empirical_quantile(ref, row.alpha_prime));
    CHECK(row.ce_threshold == ce_threshold(ref, b.returns(), cfg.alpha, cfg.beta_smooth));
    CHECK(row.used_count <= b.size());
    CHECK(t.ce_state()->history.size() == 2);
    CHECK(t.ce_state()->phi.params() == row.phi);
}

TEST_CASE("PG never moves the sampler and uses every reference episode") {
    Trainer t(small_maze(Algorithm::PG));
    t.run();
    CHECK(!t.ce_state().has_value());
    for (const auto& r : t.log().rows) {
        CHECK(r.phi == Vector{0.2, 32.0});
        CHECK(r.alpha_prime == 1.0);
        CHECK(r.used_count == 60);
        CHECK(std::isnan(r.ce_threshold));
    }
}

TEST_CASE("GCVaR uses fewer than ceil(alpha N) episodes") {
    TrainConfig cfg = small_maze(Algorithm::GCVaR);
    cfg.batch_size = 200;
    Trainer t(cfg);
    t.run();
    for (const auto& r : t.log().rows) {
        CHECK(r.alpha_prime == cfg.alpha);
        CHECK(r.used_count < tail_count(200, cfg.alpha));
    }
}

TEST_CASE("a policy that always moves left validates to -32") {
    const GuardedMaze env;
    PolicyParams p(policy_spec_for(env, {}));
    p.bias(0)[0] = 10.0;  // left
    const EvalResult r = evaluate(p, env, 200, 0.05, 1, StreamTag::Validation, 0, 1);
    CHECK(r.mean == -32.0);
    CHECK(r.cvar == -32.0);
    for (auto s : r.strategies) CHECK(s == MazeStrategy::Stay);
}

TEST_CASE("zero iterations keep the initial policy as both final and best") {
    Trainer t(small_maze(Algorithm::CeSoR, 0));
    const PolicyParams init = t.policy();
    t.run();
    CHECK(t.log().rows.empty());
    CHECK(t.log().validations.size() == 1);
    CHECK(t.best_iteration() == 0);
    CHECK(t.best_policy() == init);
    CHECK(t.policy() == init);
}

TEST_CASE("training is independent of the worker count") {
    TrainConfig a = small_maze(Algorithm::CeSoR, 4);
    TrainConfig b = a;
    b.workers = 3;
    Trainer ta(a), tb(b);
    ta.run();
    tb.run();
    CHECK(runlog_csv(ta.log()) == runlog_csv(tb.log()));
    CHECK(ta.policy() == tb.policy());
    CHECK(ta.best_policy() == tb.best_policy());
}

TEST_CASE("resuming from a snapshot reproduces an uninterrupted run") {
    const TrainConfig cfg = small_maze(Algorithm::CeSoR, 5);
    const fs::path full = scratch("full");
    const fs::path cut = scratch("cut");
    run_training(cfg, full);

    Trainer partial(cfg);
    partial.run(3);
    persist_run(partial, cut);
    const Trainer resumed = run_training(cfg, cut, true);
    CHECK(resumed.completed_iterations() == 5);
    for (const char* f : {"runlog.csv", "validation.csv", "phi_history.csv", "checkpoints/final.json",
                          "checkpoints/best.json"})
        CHECK_MESSAGE(slurp(full / f) == slurp(cut / f), f);

    TrainConfig other = cfg;
    other.learning_rate = 0.05;
    CHECK_THROWS(run_training(other, cut, true));
    fs::remove_all(full);
    fs::remove_all(cut);
}

TEST_CASE("snapshot round trip") {
    Trainer t(small_maze(Algorithm::CeR, 2));
    t.run();
    const Trainer back = Trainer::restore(t.snapshot());
    CHECK(back.snapshot() == t.snapshot());
}

TEST_CASE("servers training records server statistics") {
    Trainer t(small_servers(Algorithm::CeSoR));
    t.run();
    for (const auto& r : t.log().rows) {
        CHECK(r.horizon == 15);
        CHECK(r.mean_servers >= 3.0);
        CHECK(r.mean_servers <= 10.0);
        CHECK(r.peak_episodes >= 0);
        CHECK(r.n_short == -1);
    }
    CHECK(t.log().phi_names == std::vector<std::string>{"phi1"});
}

TEST_CASE("curriculum phases") {
    EnvConfig e;
    e.id = "servers";
    CHECK(phase_count(e) == 4);
    CHECK(phase_of(e, 1, 100) == 0);
    CHECK(phase_of(e, 25, 100) == 0);
    CHECK(phase_of(e, 26, 100) == 1);
    CHECK(phase_of(e, 100, 100) == 3);
    CHECK(make_env(e, 0)->horizon() == 15);
    CHECK(make_eval_env(e)->horizon() == 60);
    CHECK(make_env(e, 2)->context_family().components()[0].n_trials == 2700);
    CHECK(phase_count(EnvConfig{}) == 1);
}

TEST_CASE("config validation") {
    TrainConfig c;
    c.alpha = 0.0;
    CHECK_THROWS(c.validate());
    c = TrainConfig{};
    c.nu = 0.001;
    c.batch_size = 100;
    CHECK_THROWS(c.validate());
    c = TrainConfig{};
    c.env.id = "lake";
    CHECK_THROWS(c.validate());
    CHECK_THROWS(algorithm_from_string("SAC"));
    CHECK(algorithm_from_string("CeSoR") == Algorithm::CeSoR);
}
