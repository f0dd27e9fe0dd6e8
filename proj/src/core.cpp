#include "cesor/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace cesor {

void Trajectory::check() const {
    if (rewards.empty()) throw std::invalid_argument("empty trajectory");
    if (states.size() != rewards.size() || actions.size() != rewards.size())
        throw std::invalid_argument("trajectory sequences differ in length");
}

const char* to_string(Source s) noexcept {
    return s == Source::Reference ? "reference" : "shifted";
}

Vector ReturnBatch::returns() const {
    Vector out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.ret);
    return out;
}

Vector ReturnBatch::reference_returns() const {
    Vector out;
    out.reserve(n_reference);
    for (const auto& r : records)
        if (r.source == Source::Reference) out.push_back(r.ret);
    return out;
}

Vector ReturnBatch::weights() const {
    Vector out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.weight);
    return out;
}

void ReturnBatch::check() const {
    if (n_reference + n_shifted != records.size())
        throw std::invalid_argument("batch counts do not match record count");
    for (std::size_t i = 0; i < records.size(); ++i) {
        const Source expected = i < n_reference ? Source::Reference : Source::Shifted;
        if (records[i].source != expected)
            throw std::invalid_argument("reference records must precede shifted records");
        if (expected == Source::Reference && records[i].weight != 1.0)
            throw std::invalid_argument("reference records carry weight 1");
    }
}

double trajectory_return(std::span<const double> rewards, double gamma) {
    if (rewards.empty()) throw std::invalid_argument("empty trajectory");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in (0, 1]");
    double total = 0.0;
    double discount = 1.0;
    for (double r : rewards) {
        total += discount * r;
        discount *= gamma;
    }
    return total;
}

std::size_t tail_count(std::size_t n, double alpha) {
    // Guard against alpha * n landing a hair above an integer (0.05 * 400).
    const double scaled = alpha * static_cast<double>(n);
    auto k = static_cast<std::size_t>(std::ceil(scaled - 1e-9 * std::max(1.0, scaled)));
    return std::clamp<std::size_t>(k, 1, n);
}

double empirical_quantile(std::span<const double> values, double alpha) {
    if (values.empty()) throw std::invalid_argument("empirical_quantile: empty input");
    if (!(alpha > 0.0) || alpha > 1.0)
        throw std::invalid_argument("empirical_quantile: alpha must lie in (0, 1]");
    const std::size_t k = tail_count(values.size(), alpha);
    Vector sorted(values.begin(), values.end());
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k - 1), sorted.end());
    return sorted[k - 1];
}

double cvar_of_samples(std::span<const double> values, double alpha) {
    const double q = empirical_quantile(values, alpha);
    double sum = 0.0;
    std::size_t count = 0;
    for (double v : values) {
        if (v <= q) {
            sum += v;
            ++count;
        }
    }
    return sum / static_cast<double>(count);
}

double mean_of(std::span<const double> values) {
    if (values.empty()) throw std::invalid_argument("mean of empty sequence");
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double effective_sample_size(std::span<const double> weights) {
    if (weights.empty()) throw std::invalid_argument("effective_sample_size: empty input");
    double s = 0.0;
    double s2 = 0.0;
    for (double w : weights) {
        if (!(w > 0.0)) throw std::invalid_argument("effective_sample_size: weights must be positive");
        s += w;
        s2 += w * w;
    }
    return s * s / s2;
}

}  // namespace cesor
