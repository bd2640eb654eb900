#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "oodperm/latent_io.hpp"
#include "oodperm/matrix.hpp"
#include "oodperm/stats.hpp"

namespace oodperm {

inline constexpr std::size_t kDefaultPermutations = 3000;
inline constexpr std::size_t kDefaultSampleSize = 100;
/// Largest number of assignments exact enumeration will visit.
inline constexpr std::uint64_t kExactLimit = 1'000'000;
/// Relative tolerance under which a null value counts as tied with the observed one.
inline constexpr double kTieTolerance = 1e-10;

struct PermutationConfig {
    std::size_t permutations = kDefaultPermutations;
    std::size_t sample_size = kDefaultSampleSize;
    std::uint64_t seed = 0;
    StatisticKind statistic = StatisticKind::mrpp;
    Dissimilarity dissimilarity = Dissimilarity::euclidean;
    GroupWeighting weighting = GroupWeighting::proportional;
    bool exact = false;
    bool keep_null = false;
    /// Threads for the permutation loop; 0 picks the hardware concurrency.
    unsigned workers = 1;

    /// Throws ConfigError on violated invariants.
    void validate() const;
};

struct TestFlags {
    bool clamped_sample = false;   ///< a group had fewer rows than the sample size
    bool zero_direction = false;   ///< observed AUC had no projection direction
    bool exact_mode = false;
    std::size_t null_zero_direction = 0;  ///< null assignments without a projection direction
};

struct TestReport {
    double observed = 0.0;
    double p_value = 1.0;
    /// Monte Carlo: P. Exact mode: number of enumerated assignments.
    std::size_t permutations = 0;
    std::size_t extreme_count = 0;
    std::optional<std::vector<double>> null_sample;
    std::uint64_t seed = 0;
    PermutationConfig config;
    std::vector<std::size_t> group_sizes;
    TestFlags flags;
};

/// True when `value` is at least as extreme as `observed` (ties included).
bool is_extreme(double value, double observed, Orientation orient);

/// C(n, k), saturating at UINT64_MAX.
std::uint64_t binomial(std::uint64_t n, std::uint64_t k);

/**
 * @brief Resampling test of the observed group assignment.
 *
 * Monte Carlo mode draws `permutations` size-preserving relabelings. The i-th
 * relabeling is a Fisher-Yates shuffle of the observed labels driven by a
 * Philox stream keyed by (seed, i), so the report is bit-identical for any
 * worker count. p = (1 + extreme) / (1 + P).
 *
 * Exact mode (two groups only) visits every labelled assignment with the
 * observed group sizes and reports p = extreme / total.
 */
TestReport permutation_test(const Matrix& data, const GroupAssignment& observed, const PermutationConfig& config);

/**
 * Statistic on every labelled two-group assignment with the observed sizes,
 * in lexicographic order of the group-0 row combination.
 */
std::vector<double> exact_null(const Matrix& data, const GroupAssignment& observed, StatisticKind statistic,
                               Dissimilarity measure = Dissimilarity::euclidean,
                               GroupWeighting weighting = GroupWeighting::proportional);

}  // namespace oodperm
