#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "oodperm/metrics.hpp"
#include "oodperm/permtest.hpp"

namespace oodperm {

/**
 * @brief Ordered `key = value` entries read from a flat config file.
 *
 * Blank lines and lines whose first non-blank character is `#` are ignored.
 * Keys consist of `[A-Za-z0-9_.-]` and may not repeat.
 */
class KeyValueFile {
public:
    struct Entry {
        std::string key;
        std::string value;
        std::size_t line = 0;
    };

    static KeyValueFile parse(std::string_view text, std::string origin);

    const std::vector<Entry>& entries() const { return entries_; }
    const Entry* find(std::string_view key) const;
    const std::string& origin() const { return origin_; }

private:
    std::vector<Entry> entries_;
    std::string origin_;
};

/// Where the KNN anchors of a source come from.
enum class AnchorRole { train, validation };

struct SourceConfig {
    std::string name;
    std::optional<std::filesystem::path> anchors;  ///< train-anchor set
    std::filesystem::path validation;
    std::filesystem::path test;
    AnchorRole knn_anchors = AnchorRole::train;
    std::vector<MetricSpec> metrics;
};

struct EnsembleConfig {
    std::vector<std::string> ind_labels;
    std::vector<std::string> ood_labels;
    double fit_fraction = 0.5;
    std::uint64_t seed = 0;
    std::size_t splits = 1;
};

struct ExperimentConfig {
    std::string name = "experiment";
    std::uint64_t seed = 0;
    std::vector<SourceConfig> sources;
    bool normalize = true;
    PermutationConfig permutation;
    std::vector<std::string> rows;
    std::vector<std::string> cols;
    std::filesystem::path output_dir = "out";
    /// Cells evaluated concurrently by `run_matrix`.
    unsigned workers = 1;
    EnsembleConfig ensemble;

    /// Sorted `key=value` lines of every setting that affects results
    /// (worker counts and the output directory are left out).
    std::string canonical_text;

    std::uint64_t hash() const;
};

/// Parses config text; relative paths are resolved against `base_dir`.
ExperimentConfig parse_config(std::string_view text, const std::filesystem::path& base_dir,
                              std::string origin = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

/// Checks that every referenced input file exists.
void validate_paths(const ExperimentConfig& config);

}  // namespace oodperm
