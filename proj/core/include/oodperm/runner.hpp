#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "oodperm/config.hpp"
#include "oodperm/latent_io.hpp"
#include "oodperm/matrix.hpp"
#include "oodperm/metrics.hpp"
#include "oodperm/permtest.hpp"

namespace oodperm {

/// Metric ensembles of the validation and test sets, joined across sources.
struct ExperimentMetrics {
    LatentResponseSet validation;  ///< raw metric values, columns of kind `metric`
    LatentResponseSet test;
    std::optional<NormalizationParams> normalization;  ///< fit on `validation` when enabled
    MetricDiagnostics diagnostics;

    /// Normalized copies when normalization is enabled, otherwise the raw sets.
    LatentResponseSet normalized_validation() const;
    LatentResponseSet normalized_test() const;
};

/**
 * Loads every source, builds KNN indexes, computes metrics and joins the
 * sources column-wise by sample id. Sources must agree exactly on the sample
 * ids and group labels of each role.
 */
ExperimentMetrics compute_experiment_metrics(const ExperimentConfig& config);

struct CellResult {
    std::string row;
    std::string col;
    std::uint64_t seed = 0;
    TestReport report;
};

struct ComparisonMatrix {
    std::vector<std::string> rows;
    std::vector<std::string> cols;
    Matrix statistic;
    Matrix p_values;
    std::vector<CellResult> cells;  ///< row-major, one per (row, col)

    const CellResult& cell(std::size_t r, std::size_t c) const { return cells[r * cols.size() + c]; }
};

/// Seed of cell (row, col). Symmetric in the two labels.
std::uint64_t cell_seed(std::uint64_t master, std::string_view row, std::string_view col);

/**
 * Test of one cell: subsample test group `row` and validation group `col`,
 * pool them in a canonical order that does not depend on which group is the
 * row, and run the permutation test on the (normalized) metrics.
 */
CellResult run_cell(const ExperimentConfig& config, const ExperimentMetrics& metrics, const std::string& row,
                    const std::string& col, unsigned permutation_workers = 1);

/// Every (row, col) cell, executed by a pool of `config.workers` threads.
ComparisonMatrix run_matrix(const ExperimentConfig& config);
ComparisonMatrix run_matrix(const ExperimentConfig& config, const ExperimentMetrics& metrics);

struct EnsembleAucReport {
    std::vector<std::string> metric_names;
    /// [split][metric] folded AUC of each metric on the held-out part.
    std::vector<std::vector<double>> metric_auc;
    /// [split] regression-ensemble AUC on the held-out part.
    std::vector<double> ensemble_auc;
    std::vector<bool> rank_deficient;
    std::size_t ind_count = 0;
    std::size_t ood_count = 0;
};

/// Per-metric and linear-ensemble AUC of in- vs out-of-distribution test samples.
EnsembleAucReport run_ensemble_auc(const ExperimentConfig& config);
EnsembleAucReport run_ensemble_auc(const ExperimentConfig& config, const ExperimentMetrics& metrics);

/// JSON text of one cell report.
std::string cell_report_json(const ExperimentConfig& config, const CellResult& cell);

/// Writes statistic.csv, pvalues.csv, cells/*.json and manifest.json into `dir`.
void emit_reports(const ComparisonMatrix& matrix, const ExperimentConfig& config, const std::filesystem::path& dir);

/// Writes ensemble_auc.csv into `dir`.
void emit_ensemble_report(const EnsembleAucReport& report, const std::filesystem::path& dir);

struct LabeledMatrix {
    std::vector<std::string> rows;
    std::vector<std::string> cols;
    Matrix values;
};

/// Reads statistic.csv / pvalues.csv back.
LabeledMatrix read_labeled_matrix(const std::filesystem::path& path);

}  // namespace oodperm
