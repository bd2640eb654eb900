#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "oodperm/matrix.hpp"

/**
 * @file latent_io.hpp
 *
 * @brief Data model for exported latent responses and the CSV/BIN formats
 * used to move them between the extractor and the analysis tools.
 */

namespace oodperm {

enum class ColumnKind {
    feature,
    logit,
    belief,
    image,
    reconstruction,
    iterate_x,
    iterate_z,
    iterate_y,
    metric,
};

std::string_view to_string(ColumnKind kind);
std::optional<ColumnKind> parse_column_kind(std::string_view text);

struct Column {
    std::string name;
    ColumnKind kind = ColumnKind::feature;

    friend bool operator==(const Column&, const Column&) = default;
};

/**
 * @brief A named matrix of per-sample measurement rows with sample ids and group labels.
 *
 * Construction validates every invariant (unique ids, matching dimensions,
 * finite values, unique column names) and throws `DataError` otherwise.
 * Instances are immutable afterwards and safe to share between threads.
 */
class LatentResponseSet {
public:
    LatentResponseSet() = default;
    LatentResponseSet(std::string name, std::vector<Column> columns, std::vector<std::string> ids,
                      std::vector<std::string> groups, Matrix values);

    const std::string& name() const { return name_; }
    const std::vector<Column>& columns() const { return columns_; }
    const std::vector<std::string>& ids() const { return ids_; }
    const std::vector<std::string>& groups() const { return groups_; }
    const Matrix& values() const { return values_; }

    std::size_t size() const { return ids_.size(); }
    std::size_t dimension() const { return columns_.size(); }

    std::span<const double> row(std::size_t i) const { return values_.row(i); }

    std::optional<std::size_t> find_column(std::string_view column_name) const;
    std::vector<std::size_t> columns_of_kind(ColumnKind kind) const;

    /// Distinct group labels, sorted.
    std::vector<std::string> group_labels() const;
    bool has_group(std::string_view label) const;
    std::vector<std::size_t> rows_in_group(std::string_view label) const;

    /// New set holding the given rows in the given order.
    LatentResponseSet subset(std::span<const std::size_t> rows, std::string new_name) const;

    friend bool operator==(const LatentResponseSet&, const LatentResponseSet&) = default;

private:
    std::string name_;
    std::vector<Column> columns_;
    std::vector<std::string> ids_;
    std::vector<std::string> groups_;
    Matrix values_;
};

/// One sample's ensemble of OoD metric values.
struct MetricVector {
    std::string sample_id;
    std::vector<double> values;
    std::vector<std::string> names;

    friend bool operator==(const MetricVector&, const MetricVector&) = default;
};

/// Checks the MetricVector invariants (matching lengths, finite values).
void validate(const MetricVector& vec);

/**
 * @brief Mapping of N samples to K groups.
 *
 * Labels are group indices in [0, K); every index must occur at least once.
 */
class GroupAssignment {
public:
    GroupAssignment() = default;
    GroupAssignment(std::vector<int> labels, int num_groups);

    /// Assignment with `sizes[k]` consecutive rows labelled k.
    static GroupAssignment blocks(std::span<const std::size_t> sizes);

    const std::vector<int>& labels() const { return labels_; }
    int num_groups() const { return num_groups_; }
    std::size_t size() const { return labels_.size(); }
    const std::vector<std::size_t>& group_sizes() const { return sizes_; }

    bool in_group(std::size_t row, int group) const { return labels_[row] == group; }

    friend bool operator==(const GroupAssignment&, const GroupAssignment&) = default;

private:
    std::vector<int> labels_;
    int num_groups_ = 0;
    std::vector<std::size_t> sizes_;
};

enum class FileFormat { csv, bin };

/// Picks the format from the file extension (`.bin` → bin, anything else → csv).
FileFormat format_from_path(const std::filesystem::path& path);

/// The set name is taken from the file stem in both formats.
LatentResponseSet read_response_set(const std::filesystem::path& path, FileFormat format);
LatentResponseSet read_response_set(const std::filesystem::path& path);

void write_response_set(const LatentResponseSet& set, const std::filesystem::path& path,
                        FileFormat format);
void write_response_set(const LatentResponseSet& set, const std::filesystem::path& path);

/// Parses CSV text directly. Errors name the 1-based line and column.
LatentResponseSet parse_csv(std::string_view text, std::string name);
std::string format_csv(const LatentResponseSet& set);

struct GroupSample {
    LatentResponseSet rows;
    bool clamped = false;  ///< fewer rows than requested were available
};

/**
 * @brief Draws `min(sample_size, available)` rows of one group without replacement.
 *
 * Each row gets a key from a Philox block keyed by `seed` with the hash of its
 * sample id as counter; the rows with the smallest keys are taken, in key
 * order. The result therefore does not depend on the order of rows on disk.
 */
GroupSample select_group(const LatentResponseSet& set, std::string_view label, std::size_t sample_size,
                         std::uint64_t seed);

}  // namespace oodperm
