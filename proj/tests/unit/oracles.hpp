#pragma once

// Independent reference computations used by the unit tests. None of these
// call into the code under test beyond plain forward evaluation.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "cesor/policy.hpp"

namespace oracle {

using cesor::PolicyParams;
using cesor::Vector;

// Smallest sample value v with |{x <= v}| >= alpha * n.
inline double quantile_brute(std::span<const double> xs, double alpha) {
    const double need = alpha * static_cast<double>(xs.size());
    double best = INFINITY;
    for (double v : xs) {
        const auto count = std::count_if(xs.begin(), xs.end(), [&](double x) { return x <= v; });
        if (static_cast<double>(count) >= need - 1e-12) best = std::min(best, v);
    }
    return best;
}

// log pi(a | s) from the logits, via log-sum-exp.
inline double log_prob(const PolicyParams& p, std::span<const double> obs, int action) {
    const Vector z = cesor::policy_logits(p, obs);
    const double t = p.spec().train_temperature;
    double m = -INFINITY;
    for (double v : z) m = std::max(m, t * v);
    double s = 0.0;
    for (double v : z) s += std::exp(t * v - m);
    return t * z[static_cast<std::size_t>(action)] - m - std::log(s);
}

// Central finite differences of f over every parameter.
template <class F>
Vector fd_gradient(const PolicyParams& p, F&& f, double eps = 1e-5) {
    PolicyParams q = p;
    Vector g(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double x = q.values()[i];
        q.values()[i] = x + eps;
        const double up = f(q);
        q.values()[i] = x - eps;
        const double dn = f(q);
        q.values()[i] = x;
        g[i] = (up - dn) / (2 * eps);
    }
    return g;
}

inline double rel_error(std::span<const double> a, std::span<const double> b) {
    double d = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        d += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return std::sqrt(d) / std::max(std::sqrt(na) + std::sqrt(nb), 1e-10);
}

// One-sample Kolmogorov-Smirnov statistic against a continuous CDF.
template <class Cdf>
double ks_statistic(std::vector<double> xs, Cdf&& cdf) {
    std::sort(xs.begin(), xs.end());
    const double n = static_cast<double>(xs.size());
    double d = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double f = cdf(xs[i]);
        d = std::max({d, (static_cast<double>(i) + 1) / n - f, f - static_cast<double>(i) / n});
    }
    return d;
}

// 1% critical value of the KS statistic for large n.
inline double ks_critical_1pct(std::size_t n) { return 1.6276 / std::sqrt(static_cast<double>(n)); }

inline double chi_square(std::span<const double> observed, std::span<const double> expected) {
    double c = 0.0;
    for (std::size_t i = 0; i < observed.size(); ++i)
        c += (observed[i] - expected[i]) * (observed[i] - expected[i]) / expected[i];
    return c;
}

// Upper 1% point of chi-square with k degrees of freedom (Wilson-Hilferty).
inline double chi_square_critical_1pct(int k) {
    const double z = 2.3263;
    const double a = 2.0 / (9.0 * k);
    return k * std::pow(1.0 - a + z * std::sqrt(a), 3.0);
}

}  // namespace oracle
