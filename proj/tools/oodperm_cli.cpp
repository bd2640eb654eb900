#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>

#include <CLI11.hpp>

#include "oodperm/config.hpp"
#include "oodperm/error.hpp"
#include "oodperm/latent_io.hpp"
#include "oodperm/metrics.hpp"
#include "oodperm/runner.hpp"

namespace fs = std::filesystem;
using namespace oodperm;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

struct Common {
    std::string config_path;
    std::optional<unsigned> workers;
    std::optional<std::string> out;
};

void add_common(CLI::App* cmd, Common& common) {
    cmd->add_option("config", common.config_path, "experiment config file")->required();
    cmd->add_option("--workers", common.workers, "worker threads (0 = all cores)");
    cmd->add_option("--out", common.out, "output directory (overrides `output`)");
}

ExperimentConfig load(const Common& common) {
    auto config = load_config(common.config_path);
    if (common.workers) {
        config.workers = *common.workers;
    }
    if (common.out) {
        config.output_dir = *common.out;
    }
    return config;
}

std::string hex(std::uint64_t v) {
    char buffer[17];
    std::snprintf(buffer, sizeof(buffer), "%016llx", static_cast<unsigned long long>(v));
    return buffer;
}

int validate_config_cmd(const std::string& path) {
    const auto config = load_config(path);
    validate_paths(config);
    std::set<std::string> test_labels, val_labels;
    std::size_t metric_count = 0;
    for (const auto& source : config.sources) {
        const auto val = read_response_set(source.validation);
        const auto test = read_response_set(source.test);
        if (source.anchors) {
            const auto anchors = read_response_set(*source.anchors);
            for (const auto& spec : source.metrics) {
                if (spec.kind == MetricKind::knn_l2 || spec.kind == MetricKind::knn_cosine) {
                    spec.inputs.at(0).resolve(anchors);
                }
            }
        }
        metric_count += metric_names(val, source.metrics).size();
        metric_names(test, source.metrics);
        for (const auto& g : val.group_labels()) {
            val_labels.insert(g);
        }
        for (const auto& g : test.group_labels()) {
            test_labels.insert(g);
        }
    }
    for (const auto& r : config.rows) {
        if (!test_labels.contains(r)) {
            throw DataError("matrix row label '" + r + "' does not occur in the test set");
        }
    }
    for (const auto& c : config.cols) {
        if (!val_labels.contains(c)) {
            throw DataError("matrix column label '" + c + "' does not occur in the validation set");
        }
    }
    std::cout << "ok: " << config.sources.size() << " source(s), " << metric_count << " metric(s), "
              << config.rows.size() << "x" << config.cols.size() << " matrix, config hash " << hex(config.hash())
              << "\n";
    return 0;
}

int metrics_cmd(const Common& common, const std::string& format) {
    const auto config = load(common);
    const auto metrics = compute_experiment_metrics(config);
    const auto ext = format == "bin" ? ".bin" : ".csv";
    fs::create_directories(config.output_dir);
    write_response_set(metrics.validation, config.output_dir / (std::string("validation_metrics") + ext));
    write_response_set(metrics.test, config.output_dir / (std::string("test_metrics") + ext));
    if (metrics.normalization) {
        const auto& p = *metrics.normalization;
        std::vector<Column> columns = {{"mean", ColumnKind::metric}, {"std", ColumnKind::metric}};
        Matrix values(p.names.size(), 2);
        std::vector<std::string> groups(p.names.size(), "normalization");
        for (std::size_t i = 0; i < p.names.size(); ++i) {
            values(i, 0) = p.mean[i];
            values(i, 1) = p.std[i];
        }
        write_response_set(LatentResponseSet("normalization", columns, p.names, groups, values),
                           config.output_dir / "normalization.csv");
    }
    std::cout << "wrote " << metrics.validation.size() << " validation and " << metrics.test.size()
              << " test metric vectors of length " << metrics.validation.dimension() << " to "
              << config.output_dir.string() << "\n";
    if (metrics.diagnostics.knn_clamped > 0 || metrics.diagnostics.cosine_zero_norm > 0) {
        std::cerr << "warning: " << metrics.diagnostics.knn_clamped << " KNN queries clamped k, "
                  << metrics.diagnostics.cosine_zero_norm << " zero-norm cosine pairs\n";
    }
    return 0;
}

int cell_cmd(ExperimentConfig config, const std::string& row, const std::string& col, bool write_file) {
    const auto metrics = compute_experiment_metrics(config);
    const auto cell = run_cell(config, metrics, row, col, config.workers);
    const auto text = cell_report_json(config, cell);
    std::cout << text;
    if (write_file) {
        fs::create_directories(config.output_dir);
        std::ofstream(config.output_dir / "cell.json", std::ios::binary) << text;
    }
    if (cell.report.flags.clamped_sample) {
        std::cerr << "warning: a group had fewer rows than the sample size\n";
    }
    return 0;
}

int matrix_cmd(const ExperimentConfig& config) {
    const auto matrix = run_matrix(config);
    emit_reports(matrix, config, config.output_dir);
    std::size_t clamped = 0;
    for (const auto& c : matrix.cells) {
        clamped += c.report.flags.clamped_sample ? 1 : 0;
    }
    std::cout << "wrote " << matrix.rows.size() << "x" << matrix.cols.size() << " matrix to "
              << config.output_dir.string() << "\n";
    if (clamped > 0) {
        std::cerr << "warning: " << clamped << " cell(s) used a clamped sample\n";
    }
    return 0;
}

int ensemble_cmd(const ExperimentConfig& config) {
    const auto report = run_ensemble_auc(config);
    emit_ensemble_report(report, config.output_dir);
    double mean = 0.0;
    for (const double a : report.ensemble_auc) {
        mean += a / static_cast<double>(report.ensemble_auc.size());
    }
    std::cout << "ensemble AUC " << mean << " over " << report.ensemble_auc.size() << " split(s), "
              << report.ind_count << " InD / " << report.ood_count << " OoD samples\n";
    for (const bool deficient : report.rank_deficient) {
        if (deficient) {
            std::cerr << "warning: rank-deficient design matrix, least-norm solution used\n";
            break;
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Permutation tests for out-of-distribution groups of latent responses"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "oodperm 0.1.0");

    std::string validate_path;
    auto* validate_cmd = app.add_subcommand("validate-config", "check a config and the files it references");
    validate_cmd->add_option("file", validate_path, "experiment config file")->required();

    Common metrics_opts;
    std::string format = "csv";
    auto* metrics_sub = app.add_subcommand("metrics", "export metric vectors of the validation and test sets");
    add_common(metrics_sub, metrics_opts);
    metrics_sub->add_option("--format", format, "csv or bin")->check(CLI::IsMember({"csv", "bin"}));

    Common test_opts;
    std::string row, col;
    auto* test_sub = app.add_subcommand("test", "run the permutation test of a single cell");
    add_common(test_sub, test_opts);
    test_sub->add_option("--row", row, "test-set group label")->required();
    test_sub->add_option("--col", col, "validation-set group label")->required();

    Common matrix_opts;
    auto* matrix_sub = app.add_subcommand("matrix", "run every row x column cell and write reports");
    add_common(matrix_sub, matrix_opts);

    Common ensemble_opts;
    auto* ensemble_sub = app.add_subcommand("ensemble-auc", "per-metric and ensemble AUC of InD vs OoD test groups");
    add_common(ensemble_sub, ensemble_opts);

    Common exact_opts;
    std::string exact_row, exact_col;
    auto* exact_sub = app.add_subcommand("exact", "exact enumeration instead of Monte Carlo");
    add_common(exact_sub, exact_opts);
    auto* exact_row_opt = exact_sub->add_option("--row", exact_row, "test-set group label");
    auto* exact_col_opt = exact_sub->add_option("--col", exact_col, "validation-set group label");
    exact_row_opt->needs(exact_col_opt);
    exact_col_opt->needs(exact_row_opt);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (*validate_cmd) {
            return validate_config_cmd(validate_path);
        }
        if (*metrics_sub) {
            return metrics_cmd(metrics_opts, format);
        }
        if (*test_sub) {
            return cell_cmd(load(test_opts), row, col, test_opts.out.has_value());
        }
        if (*matrix_sub) {
            return matrix_cmd(load(matrix_opts));
        }
        if (*ensemble_sub) {
            return ensemble_cmd(load(ensemble_opts));
        }
        if (*exact_sub) {
            auto config = load(exact_opts);
            config.permutation.exact = true;
            if (*exact_row_opt) {
                return cell_cmd(config, exact_row, exact_col, exact_opts.out.has_value());
            }
            return matrix_cmd(config);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    }
    return 0;
}
