#include <doctest.h>

#include <cmath>
#include <random>

#include "cesor/gradients.hpp"
#include "cesor/schedule.hpp"

using namespace cesor;

namespace {

PolicySpec small_spec() {
    PolicySpec s;
    s.input_dim = 2;
    s.n_actions = 2;
    return s;  // 6 parameters
}

Gradient make_score(std::initializer_list<double> v) {
    Gradient g(small_spec());
    std::copy(v.begin(), v.end(), g.values().begin());
    return g;
}

Gradient random_score(Rng& rng) {
    std::normal_distribution<double> nd;
    Gradient g(small_spec());
    for (auto& x : g.values()) x = nd(rng);
    return g;
}

ReturnBatch make_batch(const Vector& returns, const Vector& weights, std::size_t n_ref) {
    ReturnBatch b;
    for (std::size_t i = 0; i < returns.size(); ++i) {
        EpisodeRecord r;
        r.ret = returns[i];
        r.weight = weights[i];
        r.source = i < n_ref ? Source::Reference : Source::Shifted;
        r.trajectory = Trajectory{{{0.0, 0.0}}, {0}, {returns[i]}};
        b.records.push_back(r);
    }
    b.n_reference = n_ref;
    b.n_shifted = returns.size() - n_ref;
    return b;
}

ReturnBatch reference_batch(const Vector& returns) { return make_batch(returns, Vector(returns.size(), 1.0), returns.size()); }

}  // namespace

TEST_CASE("mean_pg_gradient") {
    Rng rng(1);
    std::vector<Gradient> scores{random_score(rng), random_score(rng), random_score(rng)};

    CHECK(mean_pg_gradient(reference_batch({4, 4, 4}), scores).gradient.is_zero());
    CHECK(mean_pg_gradient(reference_batch({-7}), std::span(scores).first(1)).gradient.is_zero());

    const Vector R{1.0, -2.0, 4.0};
    const double b = (1.0 - 2.0 + 4.0) / 3.0;
    const auto rep = mean_pg_gradient(reference_batch(R), scores);
    for (std::size_t k = 0; k < 6; ++k) {
        double expect = 0.0;
        for (std::size_t i = 0; i < 3; ++i) expect += (R[i] - b) * scores[i].values()[k];
        CHECK(rep.gradient.values()[k] == doctest::Approx(expect / 3.0).epsilon(1e-14));
    }

    CHECK_THROWS(mean_pg_gradient(ReturnBatch{}, {}));
    CHECK_THROWS(mean_pg_gradient(reference_batch(R), std::span(scores).first(2)));
}

TEST_CASE("mean_pg_gradient ignores shifted episodes") {
    Rng rng(2);
    std::vector<Gradient> scores{random_score(rng), random_score(rng), random_score(rng), random_score(rng)};
    const auto with = mean_pg_gradient(make_batch({1, 3, -50, 80}, {1, 1, 0.3, 2}, 2), scores);
    const auto without = mean_pg_gradient(reference_batch({1, 3}), std::span(scores).first(2));
    CHECK(with.gradient == without.gradient);
}

TEST_CASE("cvar_pg_gradient hand-built example") {
    // alpha_eff 0.5 over 4 episodes with mixed weights.
    const Vector R{-3.0, 1.0, -1.0, 2.0};
    const Vector w{1.0, 1.0, 0.5, 2.5};
    const std::vector<Gradient> scores{make_score({1, 0, 2, -1, 0, 3}), make_score({5, 5, 5, 5, 5, 5}),
                                       make_score({-2, 1, 0, 4, 1, 1}), make_score({9, 9, 9, 9, 9, 9})};
    const double q = -1.0;
    const auto rep = cvar_pg_gradient(make_batch(R, w, 2), scores, q, 0.5);

    // Only episode 0 sits strictly below q; episode 2 is a tie and contributes zero.
    Vector expect(6, 0.0);
    for (std::size_t i = 0; i < 4; ++i)
        if (R[i] <= q)
            for (std::size_t k = 0; k < 6; ++k) expect[k] += w[i] * (R[i] - q) * scores[i].values()[k];
    for (std::size_t k = 0; k < 6; ++k) CHECK(rep.gradient.values()[k] == doctest::Approx(expect[k] / (0.5 * 4)));
    CHECK(rep.used_count == 1);
    CHECK(rep.used_weight_fraction == doctest::Approx(1.0 / 5.0));
    CHECK(rep.n_eff_used == doctest::Approx(1.0));
    CHECK(rep.q_hat == q);
}

TEST_CASE("cvar_pg_gradient zero cases") {
    Rng rng(3);
    std::vector<Gradient> scores;
    for (int i = 0; i < 6; ++i) scores.push_back(random_score(rng));

    // Tail at q exactly.
    const auto tied = cvar_pg_gradient(reference_batch({-32, -32, -32, 5, 7, 9}), scores, -32, 0.5);
    CHECK(tied.gradient.is_zero());
    CHECK(tied.used_count == 0);

    const auto above = cvar_pg_gradient(reference_batch({1, 2, 3, 4, 5, 6}), scores, 0.5, 0.2);
    CHECK(above.gradient.is_zero());

    CHECK_THROWS(cvar_pg_gradient(reference_batch({1, 2, 3, 4, 5, 6}), scores, 0.0, 0.0));
    CHECK_THROWS(cvar_pg_gradient(reference_batch({1, 2, 3, 4, 5, 6}), scores, 0.0, 1.5));
    CHECK_THROWS(cvar_pg_gradient(reference_batch({1, 2, 3}), scores, 0.0, 0.5));
}

TEST_CASE("tail barrier gives a bit-exact zero gradient") {
    Rng rng(4);
    std::uniform_int_distribution<int> extra(0, 30);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 50 + rng() % 350;
        const double alpha = std::uniform_real_distribution<double>(0.01, 0.3)(rng);
        const std::size_t k = tail_count(n, alpha) + static_cast<std::size_t>(extra(rng));
        Vector R(n);
        for (std::size_t i = 0; i < n; ++i) R[i] = i < k ? -32.0 : -32.0 + 0.5 + std::abs(std::normal_distribution<double>(0, 10)(rng));
        std::shuffle(R.begin(), R.end(), rng);
        std::vector<Gradient> scores;
        for (std::size_t i = 0; i < n; ++i) scores.push_back(random_score(rng));
        const double q = empirical_quantile(R, alpha);
        const auto rep = cvar_pg_gradient(reference_batch(R), scores, q, alpha);
        REQUIRE(rep.gradient.is_zero());
    }
}

TEST_CASE("cvar_pg_gradient scales with the rewards") {
    Rng rng(5);
    Vector R(40);
    std::normal_distribution<double> nd;
    for (auto& r : R) r = nd(rng);
    std::vector<Gradient> scores;
    for (int i = 0; i < 40; ++i) scores.push_back(random_score(rng));
    const double q = empirical_quantile(R, 0.25);
    const auto base = cvar_pg_gradient(reference_batch(R), scores, q, 0.25);
    for (double c : {0.5, 3.0, 100.0}) {
        Vector Rc = R;
        for (auto& r : Rc) r *= c;
        const auto scaled = cvar_pg_gradient(reference_batch(Rc), scores, c * q, 0.25);
        for (std::size_t k = 0; k < 6; ++k)
            CHECK(scaled.gradient.values()[k] == doctest::Approx(c * base.gradient.values()[k]).epsilon(1e-12));
        CHECK(scaled.used_count == base.used_count);
    }
}

TEST_CASE("adam_step") {
    PolicyParams p(small_spec());
    for (std::size_t i = 0; i < p.size(); ++i) p.values()[i] = 0.1 * static_cast<double>(i);
    const PolicyParams p0 = p;

    AdamState s = AdamState::for_params(p, AdamConfig{0.05});
    adam_step(s, p, p.zeros_like());
    CHECK(p == p0);

    // With bias correction the step is lr * g / (|g| + eps) from the first step on.
    const Gradient g = make_score({2.0, -0.5, 1e-3, -7.0, 3.0, 0.25});
    s = AdamState::for_params(p, AdamConfig{0.05});
    for (int t = 0; t < 200; ++t) {
        const PolicyParams before = p;
        adam_step(s, p, g);
            for (std::size_t k = 0; k < 6; ++k) {
                const double step = p.values()[k] - before.values()[k];
                REQUIRE(step == doctest::Approx(0.05 * (g.values()[k] > 0 ? 1 : -1)).epsilon(1e-4));
            }
    }

    AdamState a = AdamState::for_params(p0, AdamConfig{0.01});
    AdamState b = a;
    PolicyParams pa = p0, pb = p0;
    adam_step(a, pa, g);
    adam_step(b, pb, g);
    CHECK(pa == pb);
    CHECK(a.first_moment == b.first_moment);
    CHECK(a.second_moment == b.second_moment);

    Gradient bad = g;
    bad.values()[2] = NAN;
    CHECK_THROWS(adam_step(a, pa, bad));
    CHECK_THROWS(adam_step(a, pa, Gradient(PolicySpec{3, {}, 2})));
}

TEST_CASE("soft_risk_level") {
    const RiskSchedule s{0.05, 0.8, 250};
    CHECK(soft_risk_level(100, s) == doctest::Approx(0.525));
    CHECK(soft_risk_level(200, s) == doctest::Approx(0.05));
    CHECK(soft_risk_level(1, s) == doctest::Approx(1.0 - 0.95 / 200.0));
    CHECK(soft_risk_level(250, s) == 0.05);
    CHECK_THROWS(soft_risk_level(0, s));
    CHECK_THROWS(soft_risk_level(251, s));

    // Limit m -> 0+ is 1; the formula at m = 0 evaluates to 1 exactly.
    CHECK(1.0 - (1.0 - s.alpha) * 0.0 / (s.rho * s.total_steps) == 1.0);

    CHECK_THROWS(soft_risk_level(1, RiskSchedule{0.0, 0.8, 10}));
    CHECK_THROWS(soft_risk_level(1, RiskSchedule{0.1, 0.0, 10}));
    CHECK_THROWS(soft_risk_level(1, RiskSchedule{0.1, 0.5, 0}));
}

TEST_CASE("soft_risk_level is non-increasing and steady after rho M") {
    for (int M : {1, 7, 50, 250}) {
        for (double rho : {0.1, 0.5, 0.8, 1.0}) {
            const RiskSchedule s{0.01, rho, M};
            double prev = 1.0;
            for (int m = 1; m <= M; ++m) {
                const double a = soft_risk_level(m, s);
                REQUIRE(a <= prev);
                REQUIRE(a >= s.alpha);
                REQUIRE(a <= 1.0);
                if (m >= rho * M) REQUIRE(a == s.alpha);
                prev = a;
            }
        }
    }
}
