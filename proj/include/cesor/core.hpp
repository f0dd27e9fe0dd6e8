#pragma once

// Return arithmetic, empirical quantiles and CVaR of samples, plus the batch
// containers shared by the training loop.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace cesor {

using Vector = std::vector<double>;

struct Trajectory {
    std::vector<Vector> states;  // observation before each action
    std::vector<int> actions;
    Vector rewards;

    std::size_t length() const noexcept { return rewards.size(); }
    // Throws if the three sequences disagree in length or are empty.
    void check() const;
};

enum class Source { Reference, Shifted };

const char* to_string(Source s) noexcept;

struct EpisodeRecord {
    Vector context;
    Trajectory trajectory;
    double ret = 0.0;
    double weight = 1.0;
    Source source = Source::Reference;
};

struct ReturnBatch {
    std::vector<EpisodeRecord> records;  // Reference records first
    std::size_t n_reference = 0;
    std::size_t n_shifted = 0;

    std::size_t size() const noexcept { return records.size(); }
    Vector returns() const;
    Vector reference_returns() const;
    Vector weights() const;
    void check() const;
};

// Discounted sum of rewards; gamma = 1 gives the plain sum.
double trajectory_return(std::span<const double> rewards, double gamma = 1.0);

// k-th smallest sample with k = ceil(alpha * n), no interpolation.
double empirical_quantile(std::span<const double> values, double alpha);

// Mean of every sample at or below the empirical alpha-quantile.
double cvar_of_samples(std::span<const double> values, double alpha);

double mean_of(std::span<const double> values);

// (sum w)^2 / sum w^2.
double effective_sample_size(std::span<const double> weights);

// Number of order statistics in the alpha tail, ceil(alpha * n) clamped to [1, n].
std::size_t tail_count(std::size_t n, double alpha);

}  // namespace cesor
