#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "oodperm/error.hpp"
#include "oodperm/runner.hpp"
#include "util.hpp"

using namespace oodperm;
namespace fs = std::filesystem;

namespace {

const std::string kSource =
    "source.toy.anchors = anchors.csv\n"
    "source.toy.validation = validation.csv\n"
    "source.toy.test = test.csv\n";

const std::string kMetrics =
    "metric.knn_l2.kind = knn-l2\n"
    "metric.rec_l2.kind = recon-l2\n"
    "metric.man_z.kind = manifold-z\n"
    "metric.msp.kind = one-minus-max-softmax\n"
    "metric.edl.kind = edl-uncertainty\n"
    "metric.aux.kind = passthrough\n"
    "metric.aux.columns = aux\n";

ExperimentConfig fixture_config(const std::string& extra) {
    return parse_config(extra, testutil::fixture(""), "test.cfg");
}

ExperimentConfig small_matrix_config(const std::string& extra = "") {
    return fixture_config(kSource + kMetrics +
                          "source.toy.metrics = knn_l2, rec_l2, msp, aux\n"
                          "seed = 3\npermutation.count = 200\npermutation.sample_size = 20\n"
                          "matrix.rows = a, x\nmatrix.cols = a, b\n" +
                          extra);
}

std::vector<fs::path> files_under(const fs::path& dir) {
    std::vector<fs::path> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) {
            out.push_back(fs::relative(e.path(), dir));
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

// Validation file with the last sample removed.
fs::path truncated_validation(const fs::path& dir) {
    std::istringstream in(testutil::slurp(testutil::fixture("validation.csv")));
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) {
        lines.push_back(line);
    }
    lines.pop_back();
    const auto path = dir / "validation_short.csv";
    std::ofstream out(path);
    for (const auto& l : lines) {
        out << l << '\n';
    }
    return path;
}

}  // namespace

TEST(CellSeed, SymmetricAndMasterDependent) {
    EXPECT_EQ(cell_seed(7, "a", "b"), cell_seed(7, "b", "a"));
    EXPECT_NE(cell_seed(7, "a", "b"), cell_seed(8, "a", "b"));
    EXPECT_NE(cell_seed(7, "a", "b"), cell_seed(7, "a", "c"));
    EXPECT_NE(cell_seed(7, "ab", "c"), cell_seed(7, "a", "bc"));
}

TEST(ExperimentMetricsTest, NamesShapeAndNormalization) {
    const auto config = load_config(testutil::fixture("experiment.cfg"));
    const auto m = compute_experiment_metrics(config);
    EXPECT_EQ(m.validation.size(), 120u);
    EXPECT_EQ(m.test.size(), 160u);
    ASSERT_EQ(m.validation.dimension(), 10u);
    EXPECT_EQ(testutil::column_names(m.validation)[0], "knn_l2");
    EXPECT_EQ(testutil::column_names(m.validation)[9], "aux");
    ASSERT_TRUE(m.normalization);

    const auto nv = m.normalized_validation();
    for (std::size_t j = 0; j < nv.dimension(); ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < nv.size(); ++i) {
            mean += nv.values()(i, j);
        }
        mean /= static_cast<double>(nv.size());
        double var = 0.0;
        for (std::size_t i = 0; i < nv.size(); ++i) {
            var += (nv.values()(i, j) - mean) * (nv.values()(i, j) - mean);
        }
        var /= static_cast<double>(nv.size());
        EXPECT_NEAR(mean, 0.0, 1e-10) << j;
        EXPECT_NEAR(std::sqrt(var), 1.0, 1e-2) << j;
    }

    auto raw = config;
    raw.normalize = false;
    const auto r = compute_experiment_metrics(raw);
    EXPECT_FALSE(r.normalization);
    EXPECT_EQ(r.normalized_test(), r.test);
}

TEST(RunMatrixTest, FixtureMatrixSeparatesOutOfDistributionRow) {
    const auto config = load_config(testutil::fixture("experiment.cfg"));
    const auto result = run_matrix(config);
    ASSERT_EQ(result.rows, (std::vector<std::string>{"a", "b", "c", "x"}));
    ASSERT_EQ(result.cols, (std::vector<std::string>{"a", "b", "c"}));
    ASSERT_EQ(result.cells.size(), 12u);
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t c = 0; c < 3; ++c) {
            const auto& cell = result.cell(r, c);
            EXPECT_EQ(cell.row, result.rows[r]);
            EXPECT_EQ(cell.col, result.cols[c]);
            EXPECT_EQ(cell.seed, cell_seed(config.seed, cell.row, cell.col));
            EXPECT_GT(cell.report.p_value, 0.0);
            EXPECT_LE(cell.report.p_value, 1.0);
            EXPECT_EQ(result.p_values(r, c), cell.report.p_value);
            EXPECT_EQ(result.statistic(r, c), cell.report.observed);
            EXPECT_EQ(cell.report.group_sizes, (std::vector<std::size_t>{25, 25}));
        }
    }
    for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_EQ(result.p_values(3, c), 1.0 / 301.0);
    }
}

TEST(RunMatrixTest, OutputsIdenticalAcrossWorkerCounts) {
    auto config = small_matrix_config();
    config.workers = 1;
    const auto dir1 = testutil::scratch_dir("runner-w1");
    emit_reports(run_matrix(config), config, dir1);
    config.workers = 4;
    config.permutation.workers = 3;
    const auto dir4 = testutil::scratch_dir("runner-w4");
    emit_reports(run_matrix(config), config, dir4);

    const auto files = files_under(dir1);
    ASSERT_EQ(files, files_under(dir4));
    EXPECT_EQ(files.size(), 4u + 3u);
    for (const auto& f : files) {
        EXPECT_EQ(testutil::slurp(dir1 / f), testutil::slurp(dir4 / f)) << f;
    }
}

TEST(RunMatrixTest, EmittedFilesRoundTrip) {
    const auto config = small_matrix_config();
    const auto result = run_matrix(config);
    const auto dir = testutil::scratch_dir("runner-emit");
    emit_reports(result, config, dir);

    const auto p = read_labeled_matrix(dir / "pvalues.csv");
    EXPECT_EQ(p.rows, result.rows);
    EXPECT_EQ(p.cols, result.cols);
    EXPECT_EQ(p.values, result.p_values);
    const auto s = read_labeled_matrix(dir / "statistic.csv");
    EXPECT_EQ(s.values, result.statistic);
    EXPECT_TRUE(testutil::slurp(dir / "pvalues.csv").starts_with("row,a,b\n"));

    // Cell reports are named by row and column index.
    for (const char* name : {"0_0.json", "0_1.json", "1_0.json", "1_1.json"}) {
        EXPECT_TRUE(fs::exists(dir / "cells" / name)) << name;
    }
    const auto cell = testutil::slurp(dir / "cells" / "1_1.json");
    EXPECT_EQ(cell, cell_report_json(config, result.cell(1, 1)));
    for (const char* key : {"\"p_value\"", "\"cell_seed\"", "\"extreme_count\"", "\"permutations\"", "\"flags\""}) {
        EXPECT_NE(cell.find(key), std::string::npos) << key;
    }

    const auto manifest = testutil::slurp(dir / "manifest.json");
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config.hash()));
    EXPECT_NE(manifest.find(hash), std::string::npos);
    EXPECT_NE(manifest.find("\"config_hash\""), std::string::npos);
    EXPECT_EQ(manifest.find("workers"), std::string::npos);
}

TEST(RunMatrixTest, SwappingRowAndColumnGivesSamePValue) {
    // With the validation file as test set both orientations see the same data.
    for (const char* stat : {"mrpp", "auc", "mean-difference"}) {
        const auto config = fixture_config(
            "source.toy.anchors = anchors.csv\nsource.toy.validation = validation.csv\n"
            "source.toy.test = validation.csv\nsource.toy.metrics = knn_l2, msp, aux\n" +
            kMetrics + "seed = 19\npermutation.count = 300\npermutation.sample_size = 20\n" +
            "permutation.statistic = " + stat + "\nmatrix.rows = a, b, c\nmatrix.cols = a, b, c\n");
        const auto m = run_matrix(config);
        for (std::size_t r = 0; r < 3; ++r) {
            for (std::size_t c = 0; c < 3; ++c) {
                EXPECT_EQ(m.p_values(r, c), m.p_values(c, r)) << stat << " " << r << "," << c;
            }
        }
    }
}

TEST(RunMatrixTest, NormalizationDoesNotChangeSingleMetricMrpp) {
    const std::string text = kSource + kMetrics +
                             "source.toy.metrics = rec_l2\nseed = 5\npermutation.count = 300\n"
                             "permutation.sample_size = 20\nmatrix.rows = a, b, x\nmatrix.cols = a, c\n";
    auto on = fixture_config(text);
    auto off = fixture_config(text + "normalize = false\n");
    const auto a = run_matrix(on);
    const auto b = run_matrix(off);
    for (std::size_t i = 0; i < a.cells.size(); ++i) {
        EXPECT_EQ(a.cells[i].report.p_value, b.cells[i].report.p_value) << i;
    }
}

TEST(RunMatrixTest, DuplicatedSourceKeepsDecisions) {
    const std::string matrix = "seed = 5\npermutation.count = 300\npermutation.sample_size = 20\n"
                               "matrix.rows = a, b, x\nmatrix.cols = a, c\n";
    const auto single = fixture_config(kSource + kMetrics + "source.toy.metrics = aux\n" + matrix);
    const auto twice = fixture_config(
        kSource + kMetrics + "source.toy.metrics = aux\n" +
        "source.dup.validation = validation.csv\nsource.dup.test = test.csv\nsource.dup.metrics = aux\n" + matrix);
    const auto m = compute_experiment_metrics(twice);
    EXPECT_EQ(testutil::column_names(m.validation), (std::vector<std::string>{"toy/aux", "dup/aux"}));
    const auto a = run_matrix(single);
    const auto b = run_matrix(twice);
    for (std::size_t i = 0; i < a.cells.size(); ++i) {
        EXPECT_NEAR(a.cells[i].report.p_value, b.cells[i].report.p_value, 1e-12) << i;
    }
}

TEST(RunMatrixTest, SourcesMustAgreeOnSampleIds) {
    const auto dir = testutil::scratch_dir("runner-ids");
    const auto shortened = truncated_validation(dir);
    const auto config = fixture_config(kSource + kMetrics + "source.toy.metrics = aux\n" +
                                       "source.dup.validation = " + shortened.string() +
                                       "\nsource.dup.test = test.csv\nsource.dup.metrics = aux\n"
                                       "matrix.rows = a\nmatrix.cols = a\n");
    EXPECT_THROW(compute_experiment_metrics(config), DataError);
}

TEST(RunMatrixTest, MissingLabelsAreDataErrors) {
    auto config = small_matrix_config();
    const auto m = compute_experiment_metrics(config);
    EXPECT_THROW(run_cell(config, m, "q", "a"), DataError);
    // x occurs only in the test set, so it cannot be a column.
    EXPECT_THROW(run_cell(config, m, "a", "x"), DataError);
    config.rows = {"a", "q"};
    EXPECT_THROW(run_matrix(config, m), DataError);
    config.rows = {};
    EXPECT_THROW(run_matrix(config, m), ConfigError);
}

TEST(RunCellTest, ClampedSampleIsReported) {
    auto config = small_matrix_config();
    config.permutation.sample_size = 1000;
    const auto m = compute_experiment_metrics(config);
    const auto cell = run_cell(config, m, "x", "a");
    EXPECT_EQ(cell.report.group_sizes, (std::vector<std::size_t>{40, 40}));
    EXPECT_TRUE(cell.report.flags.clamped_sample);
}

TEST(EnsembleAucTest, FixtureReport) {
    const auto config = load_config(testutil::fixture("experiment.cfg"));
    const auto report = run_ensemble_auc(config);
    EXPECT_EQ(report.ind_count, 120u);
    EXPECT_EQ(report.ood_count, 40u);
    ASSERT_EQ(report.metric_names.size(), 10u);
    ASSERT_EQ(report.metric_auc.size(), 5u);
    ASSERT_EQ(report.ensemble_auc.size(), 5u);
    double best = 0.0, ensemble = 0.0;
    for (std::size_t j = 0; j < report.metric_names.size(); ++j) {
        double mean = 0.0;
        for (std::size_t s = 0; s < 5; ++s) {
            EXPECT_GE(report.metric_auc[s][j], 0.5);
            EXPECT_LE(report.metric_auc[s][j], 1.0);
            mean += report.metric_auc[s][j] / 5.0;
        }
        best = std::max(best, mean);
    }
    for (const double v : report.ensemble_auc) {
        ensemble += v / 5.0;
    }
    EXPECT_GE(ensemble, best - 0.02);

    const auto again = run_ensemble_auc(config);
    EXPECT_EQ(again.ensemble_auc, report.ensemble_auc);

    const auto dir = testutil::scratch_dir("runner-ensemble");
    emit_ensemble_report(report, dir);
    const auto csv = testutil::slurp(dir / "ensemble_auc.csv");
    EXPECT_TRUE(csv.starts_with("split,knn_l2,knn_cos,")) << csv;
    EXPECT_NE(csv.find(",ensemble\n"), std::string::npos);
    EXPECT_NE(csv.find("\nmean,"), std::string::npos);
}

TEST(EnsembleAucTest, Errors) {
    auto config = small_matrix_config();
    const auto m = compute_experiment_metrics(config);
    config.ensemble.ind_labels = {"a"};
    EXPECT_THROW(run_ensemble_auc(config, m), ConfigError);
    config.ensemble.ood_labels = {"a"};
    EXPECT_THROW(run_ensemble_auc(config, m), ConfigError);
    config.ensemble.ood_labels = {"q"};
    EXPECT_THROW(run_ensemble_auc(config, m), DataError);
    config.ensemble.ood_labels = {"x"};
    EXPECT_NO_THROW(run_ensemble_auc(config, m));
}
