#include "oodperm/permtest.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

#include "oodperm/error.hpp"
#include "oodperm/random.hpp"

namespace oodperm {

__extension__ using u128 = unsigned __int128;

namespace {

void check_preconditions(const Matrix& data, const GroupAssignment& observed, StatisticKind statistic) {
    if (observed.size() != data.rows()) {
        throw DataError("permutation test: assignment covers " + std::to_string(observed.size()) +
                        " rows but data has " + std::to_string(data.rows()));
    }
    if (data.cols() == 0) {
        throw DataError("permutation test: data has no columns");
    }
    if (statistic == StatisticKind::mrpp) {
        if (observed.num_groups() < 2) {
            throw DataError("permutation test: mrpp needs at least 2 groups");
        }
        for (std::size_t k = 0; k < observed.group_sizes().size(); ++k) {
            if (observed.group_sizes()[k] < 2) {
                throw DataError("permutation test: mrpp group " + std::to_string(k) + " has fewer than 2 members");
            }
        }
    } else if (observed.num_groups() != 2) {
        throw DataError("permutation test: " + std::string(to_string(statistic)) + " needs exactly 2 groups");
    }
}

// Advances `combo` (strictly increasing indices < n) to the next combination in
// lexicographic order; false when exhausted.
bool next_combination(std::vector<std::size_t>& combo, std::size_t n) {
    const std::size_t k = combo.size();
    std::size_t i = k;
    while (i > 0) {
        --i;
        if (combo[i] < n - k + i) {
            ++combo[i];
            for (std::size_t j = i + 1; j < k; ++j) {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    return false;
}

TestReport run_exact(const Matrix& data, const GroupAssignment& observed, const PermutationConfig& config) {
    if (observed.num_groups() != 2) {
        throw DataError("exact mode supports exactly 2 groups");
    }
    StatisticEvaluator evaluator(data, config.statistic, config.dissimilarity, config.weighting);
    StatisticEvaluator::Scratch scratch;
    TestReport report;
    report.seed = config.seed;
    report.config = config;
    report.group_sizes = observed.group_sizes();
    report.flags.exact_mode = true;
    report.observed = evaluator.evaluate(observed.labels(), observed.group_sizes(), scratch,
                                         &report.flags.zero_direction);

    const auto null = exact_null(data, observed, config.statistic, config.dissimilarity, config.weighting);
    const auto orient = orientation(config.statistic);
    report.permutations = null.size();
    report.extreme_count = static_cast<std::size_t>(
        std::count_if(null.begin(), null.end(), [&](double v) { return is_extreme(v, report.observed, orient); }));
    report.p_value = static_cast<double>(report.extreme_count) / static_cast<double>(null.size());
    if (config.keep_null) {
        report.null_sample = null;
    }
    return report;
}

}  // namespace

void PermutationConfig::validate() const {
    if (permutations < 1) {
        throw ConfigError("permutation count must be at least 1");
    }
    if (sample_size < 1) {
        throw ConfigError("sample size must be at least 1");
    }
    if (statistic == StatisticKind::mrpp && sample_size < 2) {
        throw ConfigError("sample size must be at least 2 for mrpp");
    }
}

bool is_extreme(double value, double observed, Orientation orient) {
    const double tol = kTieTolerance * std::abs(observed);
    return orient == Orientation::smaller_is_extreme ? value <= observed + tol : value >= observed - tol;
}

std::uint64_t binomial(std::uint64_t n, std::uint64_t k) {
    if (k > n) {
        return 0;
    }
    k = std::min(k, n - k);
    u128 result = 1;
    for (std::uint64_t i = 1; i <= k; ++i) {
        result = result * (n - k + i) / i;
        if (result > std::numeric_limits<std::uint64_t>::max()) {
            return std::numeric_limits<std::uint64_t>::max();
        }
    }
    return static_cast<std::uint64_t>(result);
}

std::vector<double> exact_null(const Matrix& data, const GroupAssignment& observed, StatisticKind statistic,
                               Dissimilarity measure, GroupWeighting weighting) {
    check_preconditions(data, observed, statistic);
    if (observed.num_groups() != 2) {
        throw DataError("exact enumeration supports exactly 2 groups");
    }
    const std::size_t n = observed.size();
    const std::size_t n0 = observed.group_sizes()[0];
    const auto total = binomial(n, n0);
    if (total > kExactLimit) {
        throw DataError("exact enumeration of C(" + std::to_string(n) + ", " + std::to_string(n0) + ") = " +
                        (total == std::numeric_limits<std::uint64_t>::max() ? std::string("overflow")
                                                                              : std::to_string(total)) +
                        " assignments exceeds the limit of " + std::to_string(kExactLimit));
    }
    StatisticEvaluator evaluator(data, statistic, measure, weighting);
    StatisticEvaluator::Scratch scratch;
    const auto& sizes = observed.group_sizes();

    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(total));
    std::vector<std::size_t> combo(n0);
    std::iota(combo.begin(), combo.end(), std::size_t{0});
    std::vector<int> labels(n);
    do {
        std::fill(labels.begin(), labels.end(), 1);
        for (const auto i : combo) {
            labels[i] = 0;
        }
        out.push_back(evaluator.evaluate(labels, sizes, scratch));
    } while (next_combination(combo, n));
    return out;
}

TestReport permutation_test(const Matrix& data, const GroupAssignment& observed, const PermutationConfig& config) {
    config.validate();
    check_preconditions(data, observed, config.statistic);
    if (config.exact) {
        return run_exact(data, observed, config);
    }

    const StatisticEvaluator evaluator(data, config.statistic, config.dissimilarity, config.weighting);
    const auto& sizes = observed.group_sizes();
    const auto orient = orientation(config.statistic);

    TestReport report;
    report.seed = config.seed;
    report.config = config;
    report.group_sizes = sizes;
    report.permutations = config.permutations;
    {
        StatisticEvaluator::Scratch scratch;
        report.observed = evaluator.evaluate(observed.labels(), sizes, scratch, &report.flags.zero_direction);
    }

    std::vector<double> null(config.permutations);
    std::vector<unsigned char> zero_dir(config.permutations, 0);
    auto work = [&](std::size_t worker, std::size_t stride) {
        StatisticEvaluator::Scratch scratch;
        std::vector<int> labels;
        for (std::size_t i = worker; i < config.permutations; i += stride) {
            labels = observed.labels();
            PhiloxStream rng(config.seed, i);
            shuffle(std::span<int>(labels), rng);
            bool zero = false;
            null[i] = evaluator.evaluate(labels, sizes, scratch, &zero);
            zero_dir[i] = zero ? 1 : 0;
        }
    };

    std::size_t workers = config.workers == 0 ? std::max(1u, std::thread::hardware_concurrency()) : config.workers;
    workers = std::min(workers, config.permutations);
    if (workers <= 1) {
        work(0, 1);
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back(work, w, workers);
        }
    }

    report.extreme_count = static_cast<std::size_t>(
        std::count_if(null.begin(), null.end(), [&](double v) { return is_extreme(v, report.observed, orient); }));
    report.flags.null_zero_direction =
        static_cast<std::size_t>(std::count(zero_dir.begin(), zero_dir.end(), static_cast<unsigned char>(1)));
    report.p_value =
        static_cast<double>(1 + report.extreme_count) / static_cast<double>(1 + config.permutations);
    if (config.keep_null) {
        report.null_sample = std::move(null);
    }
    return report;
}

}  // namespace oodperm
