#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "oodperm/knn_index.hpp"
#include "oodperm/latent_io.hpp"
#include "oodperm/matrix.hpp"

namespace oodperm {

/// Default neighbor count for KNN metrics.
inline constexpr std::size_t kDefaultKnnK = 5;
/// Default number of encode-decode steps behind the manifold metrics.
inline constexpr std::size_t kDefaultIterateSteps = 10;
/// Smallest standard deviation used when z-scoring a metric.
inline constexpr double kStdFloor = 1e-8;

enum class MetricKind {
    knn_l2,
    knn_cosine,
    recon_l2,
    recon_ip,
    manifold_x,
    manifold_z,
    manifold_y,
    one_minus_max_softmax,
    edl_uncertainty,
    passthrough,
};

std::string_view to_string(MetricKind kind);
std::optional<MetricKind> parse_metric_kind(std::string_view text);

/**
 * @brief Reference to a subset of columns of a LatentResponseSet.
 *
 * Text form: `kind:<column-kind>` selects every column of that kind in file
 * order; anything else is a comma-separated list of column names.
 */
class ColumnSelector {
public:
    static ColumnSelector of_kind(ColumnKind kind);
    static ColumnSelector of_names(std::vector<std::string> names);
    static ColumnSelector parse(std::string_view text);

    /// Column indices in `set`; throws DataError if a named column is missing
    /// or the selection is empty.
    std::vector<std::size_t> resolve(const LatentResponseSet& set) const;
    std::string to_string() const;

    friend bool operator==(const ColumnSelector&, const ColumnSelector&) = default;

private:
    std::optional<ColumnKind> kind_;
    std::vector<std::string> names_;
};

struct MetricSpec {
    std::string name;
    MetricKind kind = MetricKind::passthrough;
    /// Empty means the kind's defaults (see `default_inputs`).
    std::vector<ColumnSelector> inputs;
    /// Recognised keys: `k` (knn), `T` (manifold), `emit_intermediate` (manifold, 0/1).
    std::map<std::string, double> params;

    double param(const std::string& key, double fallback) const;
};

std::vector<ColumnSelector> default_inputs(MetricKind kind);

/// Counters collected while computing metrics.
struct MetricDiagnostics {
    std::size_t knn_clamped = 0;      ///< queries where k exceeded the anchor count
    std::size_t cosine_zero_norm = 0; ///< zero-norm pairs scored as dissimilarity 1.0
};

/// Resolves the anchor index for a knn-* spec, or returns nullptr if none exists.
using AnchorLookup = std::function<const AnchorIndex*(const MetricSpec&)>;

/**
 * @brief Computes the metric ensemble for every row of `raw`.
 *
 * Metric order follows `specs`. Most specs contribute one value; a
 * multi-column passthrough contributes one per column and a manifold spec
 * with `emit_intermediate=1` adds the offsets of the intermediate steps.
 */
std::vector<MetricVector> compute_metrics(const LatentResponseSet& raw, std::span<const MetricSpec> specs,
                                          const AnchorIndex* index, MetricDiagnostics* diagnostics = nullptr);
std::vector<MetricVector> compute_metrics(const LatentResponseSet& raw, std::span<const MetricSpec> specs,
                                          const AnchorLookup& lookup, MetricDiagnostics* diagnostics = nullptr);

/// Output names produced by `specs` on rows shaped like `raw`.
std::vector<std::string> metric_names(const LatentResponseSet& raw, std::span<const MetricSpec> specs);

enum class ReconMeasure { l2, ip };

/// `l2`: ||x - x_hat||. `ip`: 1 - cos(x, x_hat), with 1.0 when either vector is zero.
double reconstruction_error(std::span<const double> x, std::span<const double> x_hat, ReconMeasure measure);

/// L2 offset between step `step` and step 0 of an iterate sequence (one step per row).
double iterate_offset(const Matrix& iterates, std::size_t step);

struct ManifoldDistance {
    double x = 0.0;
    double z = 0.0;
    double y = 0.0;
};

/// Offsets between the final and initial iterates in data, feature and logit space.
/// Each sequence holds steps 0..T as rows; all three must have T+1 rows.
ManifoldDistance manifold_distance(const Matrix& iterates_x, const Matrix& iterates_z, const Matrix& iterates_y);

/// Splits a flat row of `steps` equally sized blocks into a steps × dim matrix.
Matrix unflatten_iterates(std::span<const double> flat, std::size_t steps);

double one_minus_max_softmax(std::span<const double> logits);

/// 1 - sum(beliefs), not clamped.
double edl_uncertainty(std::span<const double> beliefs);

struct NormalizationParams {
    std::vector<std::string> names;
    std::vector<double> mean;
    std::vector<double> std;  ///< population convention, floored at kStdFloor
};

NormalizationParams fit_normalization(std::span<const MetricVector> validation);
std::vector<MetricVector> apply_normalization(const NormalizationParams& params,
                                              std::span<const MetricVector> metrics);

/// Stacks metric vectors into an N × L matrix.
Matrix to_matrix(std::span<const MetricVector> metrics);

/// Exports metric vectors as a response set whose columns have kind `metric`.
LatentResponseSet metrics_to_set(std::string name, std::span<const MetricVector> metrics,
                                 std::span<const std::string> groups);

/// Inverse of `metrics_to_set`: every column becomes one metric.
std::vector<MetricVector> metrics_from_set(const LatentResponseSet& set);

}  // namespace oodperm
