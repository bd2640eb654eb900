#include "oodperm/runner.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <iterator>
#include <map>
#include <mutex>
#include <numeric>
#include <thread>
#include <unordered_map>

#include <json.hpp>

#include "oodperm/error.hpp"
#include "oodperm/random.hpp"
#include "oodperm/stats.hpp"

namespace oodperm {

namespace {

using json = nlohmann::json;

struct RoleMetrics {
    std::vector<MetricVector> vectors;
    std::vector<std::string> groups;
};

std::string format_double(double value) {
    char buffer[32];
    const auto result = std::to_chars(buffer, buffer + sizeof(buffer), value);
    return std::string(buffer, result.ptr);
}

std::string hex64(std::uint64_t v) {
    char buffer[17];
    std::snprintf(buffer, sizeof(buffer), "%016llx", static_cast<unsigned long long>(v));
    return buffer;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot open '" + path.string() + "' for writing");
    }
    out << text;
    if (!out) {
        throw DataError("write to '" + path.string() + "' failed");
    }
}

void check_label(std::string_view label) {
    if (label.find_first_of(",\n\r\"") != std::string_view::npos) {
        throw DataError("label '" + std::string(label) + "' cannot be written unquoted to CSV");
    }
}

// Appends the metric columns of `extra` to `base`, matching rows by sample id.
void join_columns(RoleMetrics& base, const RoleMetrics& extra, const std::string& role, const std::string& source) {
    if (extra.vectors.size() != base.vectors.size()) {
        throw DataError(role + " set of source '" + source + "' has " + std::to_string(extra.vectors.size()) +
                        " samples, expected " + std::to_string(base.vectors.size()));
    }
    std::unordered_map<std::string_view, std::size_t> position;
    for (std::size_t i = 0; i < extra.vectors.size(); ++i) {
        position.emplace(extra.vectors[i].sample_id, i);
    }
    for (std::size_t i = 0; i < base.vectors.size(); ++i) {
        auto& dst = base.vectors[i];
        const auto it = position.find(dst.sample_id);
        if (it == position.end()) {
            throw DataError(role + " sample '" + dst.sample_id + "' is missing from source '" + source + "'");
        }
        if (extra.groups[it->second] != base.groups[i]) {
            throw DataError(role + " sample '" + dst.sample_id + "' has group '" + extra.groups[it->second] +
                            "' in source '" + source + "' but '" + base.groups[i] + "' elsewhere");
        }
        const auto& src = extra.vectors[it->second];
        dst.values.insert(dst.values.end(), src.values.begin(), src.values.end());
        dst.names.insert(dst.names.end(), src.names.begin(), src.names.end());
    }
}

LatentResponseSet normalized(const LatentResponseSet& set, const std::optional<NormalizationParams>& params) {
    if (!params) {
        return set;
    }
    const auto z = apply_normalization(*params, metrics_from_set(set));
    return metrics_to_set(set.name(), z, set.groups());
}

json report_json(const ExperimentConfig& config, const CellResult& cell) {
    const auto& r = cell.report;
    json j;
    j["row"] = cell.row;
    j["col"] = cell.col;
    j["cell_seed"] = cell.seed;
    j["statistic"] = std::string(to_string(r.config.statistic));
    j["observed"] = r.observed;
    j["p_value"] = r.p_value;
    j["permutations"] = r.permutations;
    j["extreme_count"] = r.extreme_count;
    j["group_sizes"] = r.group_sizes;
    j["flags"] = {
        {"clamped_sample", r.flags.clamped_sample},
        {"zero_direction", r.flags.zero_direction},
        {"exact_mode", r.flags.exact_mode},
        {"null_zero_direction", r.flags.null_zero_direction},
    };
    j["config"] = {
        {"permutations", r.config.permutations},
        {"sample_size", r.config.sample_size},
        {"seed", r.config.seed},
        {"statistic", std::string(to_string(r.config.statistic))},
        {"dissimilarity", std::string(to_string(r.config.dissimilarity))},
        {"weighting", std::string(to_string(r.config.weighting))},
        {"exact", r.config.exact},
        {"normalize", config.normalize},
    };
    j["p_value_rule"] = r.flags.exact_mode ? "extreme / total" : "(1 + extreme) / (1 + permutations)";
    j["subsampling"] = "each group subsampled once per cell; labels permuted within the pooled sample";
    if (r.null_sample) {
        j["null_sample"] = *r.null_sample;
    }
    return j;
}

std::string matrix_csv(const ComparisonMatrix& m, const Matrix& values) {
    std::string out = "row";
    for (const auto& c : m.cols) {
        check_label(c);
        out += ',' + c;
    }
    out += '\n';
    for (std::size_t r = 0; r < m.rows.size(); ++r) {
        check_label(m.rows[r]);
        out += m.rows[r];
        for (std::size_t c = 0; c < m.cols.size(); ++c) {
            out += ',' + format_double(values(r, c));
        }
        out += '\n';
    }
    return out;
}

}  // namespace

LatentResponseSet ExperimentMetrics::normalized_validation() const {
    return normalized(validation, normalization);
}

LatentResponseSet ExperimentMetrics::normalized_test() const {
    return normalized(test, normalization);
}

ExperimentMetrics compute_experiment_metrics(const ExperimentConfig& config) {
    validate_paths(config);
    std::optional<RoleMetrics> validation, test;
    ExperimentMetrics out;

    for (const auto& source : config.sources) {
        const auto val_set = read_response_set(source.validation);
        const auto test_set = read_response_set(source.test);

        std::optional<LatentResponseSet> anchor_set;
        std::map<std::string, AnchorIndex> indexes;
        for (const auto& spec : source.metrics) {
            if (spec.kind != MetricKind::knn_l2 && spec.kind != MetricKind::knn_cosine) {
                continue;
            }
            const auto key = spec.inputs.at(0).to_string();
            if (indexes.contains(key)) {
                continue;
            }
            const LatentResponseSet* anchors = &val_set;
            if (source.knn_anchors == AnchorRole::train) {
                if (!anchor_set) {
                    anchor_set = read_response_set(*source.anchors);
                }
                anchors = &*anchor_set;
            }
            const auto cols = spec.inputs.at(0).resolve(*anchors);
            indexes.emplace(key, build_index(*anchors, cols));
        }
        const AnchorLookup lookup = [&indexes](const MetricSpec& spec) -> const AnchorIndex* {
            const auto it = indexes.find(spec.inputs.at(0).to_string());
            return it == indexes.end() ? nullptr : &it->second;
        };

        MetricDiagnostics dv, dt;
        RoleMetrics v{compute_metrics(val_set, source.metrics, lookup, &dv), val_set.groups()};
        RoleMetrics t{compute_metrics(test_set, source.metrics, lookup, &dt), test_set.groups()};
        out.diagnostics.knn_clamped += dv.knn_clamped + dt.knn_clamped;
        out.diagnostics.cosine_zero_norm += dv.cosine_zero_norm + dt.cosine_zero_norm;

        if (!validation) {
            validation = std::move(v);
            test = std::move(t);
        } else {
            join_columns(*validation, v, "validation", source.name);
            join_columns(*test, t, "test", source.name);
        }
    }

    out.validation = metrics_to_set(config.name + "-validation-metrics", validation->vectors, validation->groups);
    out.test = metrics_to_set(config.name + "-test-metrics", test->vectors, test->groups);
    if (config.normalize) {
        out.normalization = fit_normalization(validation->vectors);
    }
    return out;
}

std::uint64_t cell_seed(std::uint64_t master, std::string_view row, std::string_view col) {
    const auto lo = std::min(row, col);
    const auto hi = std::max(row, col);
    std::string tag = "cell:";
    tag += lo;
    tag += '\x1f';
    tag += hi;
    return derive_seed(master, tag);
}

CellResult run_cell(const ExperimentConfig& config, const ExperimentMetrics& metrics, const std::string& row,
                    const std::string& col, unsigned permutation_workers) {
    if (!metrics.test.has_group(row)) {
        throw DataError("row label '" + row + "' does not occur in the test set");
    }
    if (!metrics.validation.has_group(col)) {
        throw DataError("column label '" + col + "' does not occur in the validation set");
    }
    CellResult cell;
    cell.row = row;
    cell.col = col;
    cell.seed = cell_seed(config.seed, row, col);

    const auto& perm = config.permutation;
    const auto test_sample = select_group(metrics.test, row, perm.sample_size, derive_seed(cell.seed, "group:" + row));
    const auto val_sample =
        select_group(metrics.validation, col, perm.sample_size, derive_seed(cell.seed, "group:" + col));

    const auto row_rows = normalized(test_sample.rows, metrics.normalization);
    const auto col_rows = normalized(val_sample.rows, metrics.normalization);

    struct Pooled {
        std::uint64_t key;
        const LatentResponseSet* set;
        std::size_t index;
        int label;
    };
    std::vector<Pooled> pooled;
    for (std::size_t i = 0; i < row_rows.size(); ++i) {
        pooled.push_back({mix64(fnv1a64(row_rows.ids()[i]) ^ cell.seed), &row_rows, i, 0});
    }
    for (std::size_t i = 0; i < col_rows.size(); ++i) {
        pooled.push_back({mix64(fnv1a64(col_rows.ids()[i]) ^ cell.seed), &col_rows, i, 1});
    }
    std::sort(pooled.begin(), pooled.end(), [](const Pooled& a, const Pooled& b) {
        if (a.key != b.key) {
            return a.key < b.key;
        }
        const auto& ida = a.set->ids()[a.index];
        const auto& idb = b.set->ids()[b.index];
        if (ida != idb) {
            return ida < idb;
        }
        const auto ra = a.set->row(a.index);
        const auto rb = b.set->row(b.index);
        return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
    });

    const std::size_t dim = metrics.validation.dimension();
    Matrix data(pooled.size(), dim);
    std::vector<int> labels(pooled.size());
    for (std::size_t i = 0; i < pooled.size(); ++i) {
        std::ranges::copy(pooled[i].set->row(pooled[i].index), data.row(i).begin());
        labels[i] = pooled[i].label;
    }

    PermutationConfig pc = perm;
    pc.seed = cell.seed;
    pc.workers = permutation_workers;
    cell.report = permutation_test(data, GroupAssignment(std::move(labels), 2), pc);
    cell.report.flags.clamped_sample = test_sample.clamped || val_sample.clamped;
    return cell;
}

ComparisonMatrix run_matrix(const ExperimentConfig& config) {
    return run_matrix(config, compute_experiment_metrics(config));
}

ComparisonMatrix run_matrix(const ExperimentConfig& config, const ExperimentMetrics& metrics) {
    if (config.rows.empty() || config.cols.empty()) {
        throw ConfigError("matrix.rows and matrix.cols must both list at least one label");
    }
    for (const auto& r : config.rows) {
        if (!metrics.test.has_group(r)) {
            throw DataError("row label '" + r + "' does not occur in the test set");
        }
    }
    for (const auto& c : config.cols) {
        if (!metrics.validation.has_group(c)) {
            throw DataError("column label '" + c + "' does not occur in the validation set");
        }
    }

    ComparisonMatrix m;
    m.rows = config.rows;
    m.cols = config.cols;
    const std::size_t total = m.rows.size() * m.cols.size();
    m.cells.resize(total);

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto work = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= total) {
                return;
            }
            try {
                m.cells[i] = run_cell(config, metrics, m.rows[i / m.cols.size()], m.cols[i % m.cols.size()], 1);
            } catch (...) {
                const std::lock_guard lock(failure_mutex);
                if (!failure) {
                    failure = std::current_exception();
                }
                next.store(total);
            }
        }
    };
    const std::size_t workers = std::clamp<std::size_t>(config.workers == 0 ? std::thread::hardware_concurrency() : config.workers, 1, total);
    if (workers == 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back(work);
        }
    }
    if (failure) {
        std::rethrow_exception(failure);
    }

    m.statistic = Matrix(m.rows.size(), m.cols.size());
    m.p_values = Matrix(m.rows.size(), m.cols.size());
    for (std::size_t i = 0; i < total; ++i) {
        m.statistic(i / m.cols.size(), i % m.cols.size()) = m.cells[i].report.observed;
        m.p_values(i / m.cols.size(), i % m.cols.size()) = m.cells[i].report.p_value;
    }
    return m;
}

EnsembleAucReport run_ensemble_auc(const ExperimentConfig& config) {
    return run_ensemble_auc(config, compute_experiment_metrics(config));
}

EnsembleAucReport run_ensemble_auc(const ExperimentConfig& config, const ExperimentMetrics& metrics) {
    const auto& ens = config.ensemble;
    if (ens.ind_labels.empty()) {
        throw ConfigError("ensemble.ind_labels must name the in-distribution test labels");
    }
    if (ens.ood_labels.empty()) {
        throw ConfigError("ensemble.ood_labels must name the out-of-distribution test labels");
    }
    const auto test = metrics.normalized_test();
    std::vector<std::size_t> ind, ood;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const auto& g = test.groups()[i];
        const bool is_ind = std::find(ens.ind_labels.begin(), ens.ind_labels.end(), g) != ens.ind_labels.end();
        const bool is_ood = std::find(ens.ood_labels.begin(), ens.ood_labels.end(), g) != ens.ood_labels.end();
        if (is_ind && is_ood) {
            throw ConfigError("label '" + g + "' is listed as both in- and out-of-distribution");
        }
        if (is_ind) {
            ind.push_back(i);
        } else if (is_ood) {
            ood.push_back(i);
        }
    }
    if (ood.size() < 2) {
        throw DataError("ensemble AUC: the test set has fewer than 2 out-of-distribution samples");
    }
    if (ind.size() < 2) {
        throw DataError("ensemble AUC: the test set has fewer than 2 in-distribution samples");
    }

    EnsembleAucReport report;
    for (const auto& c : test.columns()) {
        report.metric_names.push_back(c.name);
    }
    report.ind_count = ind.size();
    report.ood_count = ood.size();
    const std::size_t l = test.dimension();

    auto fit_count = [&](std::size_t n) {
        const auto k = static_cast<std::size_t>(std::llround(ens.fit_fraction * static_cast<double>(n)));
        return std::clamp<std::size_t>(k, 1, n - 1);
    };

    for (std::size_t split = 0; split < ens.splits; ++split) {
        PhiloxStream rng(ens.seed, split);
        auto ind_perm = ind;
        auto ood_perm = ood;
        shuffle(std::span<std::size_t>(ind_perm), rng);
        shuffle(std::span<std::size_t>(ood_perm), rng);
        const std::size_t ind_fit = fit_count(ind_perm.size());
        const std::size_t ood_fit = fit_count(ood_perm.size());

        std::vector<std::size_t> fit_rows, eval_rows;
        std::vector<int> fit_labels, eval_labels;
        for (std::size_t i = 0; i < ind_perm.size(); ++i) {
            (i < ind_fit ? fit_rows : eval_rows).push_back(ind_perm[i]);
            (i < ind_fit ? fit_labels : eval_labels).push_back(0);
        }
        for (std::size_t i = 0; i < ood_perm.size(); ++i) {
            (i < ood_fit ? fit_rows : eval_rows).push_back(ood_perm[i]);
            (i < ood_fit ? fit_labels : eval_labels).push_back(1);
        }
        auto gather = [&](const std::vector<std::size_t>& rows) {
            Matrix out(rows.size(), l);
            for (std::size_t i = 0; i < rows.size(); ++i) {
                std::ranges::copy(test.row(rows[i]), out.row(i).begin());
            }
            return out;
        };
        const auto fit_x = gather(fit_rows);
        const auto eval_x = gather(eval_rows);

        std::vector<double> per_metric(l);
        std::vector<double> column(eval_rows.size());
        for (std::size_t j = 0; j < l; ++j) {
            for (std::size_t i = 0; i < eval_rows.size(); ++i) {
                column[i] = eval_x(i, j);
            }
            per_metric[j] = folded_rank_auc(column, eval_labels);
        }
        const auto fit = ensemble_auc(fit_x, fit_labels, eval_x, eval_labels);
        report.metric_auc.push_back(std::move(per_metric));
        report.ensemble_auc.push_back(fit.auc);
        report.rank_deficient.push_back(fit.rank_deficient);
    }
    return report;
}

std::string cell_report_json(const ExperimentConfig& config, const CellResult& cell) {
    return report_json(config, cell).dump(2) + "\n";
}

void emit_reports(const ComparisonMatrix& matrix, const ExperimentConfig& config, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir / "cells", ec);
    if (ec) {
        throw DataError("cannot create output directory '" + dir.string() + "': " + ec.message());
    }
    write_text(dir / "statistic.csv", matrix_csv(matrix, matrix.statistic));
    write_text(dir / "pvalues.csv", matrix_csv(matrix, matrix.p_values));

    json cells = json::array();
    for (std::size_t r = 0; r < matrix.rows.size(); ++r) {
        for (std::size_t c = 0; c < matrix.cols.size(); ++c) {
            const auto& cell = matrix.cell(r, c);
            const std::string file = "cells/" + std::to_string(r) + "_" + std::to_string(c) + ".json";
            write_text(dir / file, cell_report_json(config, cell));
            cells.push_back({{"row", cell.row}, {"col", cell.col}, {"seed", cell.seed}, {"report", file}});
        }
    }

    json manifest;
    manifest["name"] = config.name;
    manifest["config_hash"] = hex64(config.hash());
    manifest["master_seed"] = config.seed;
    manifest["rows"] = matrix.rows;
    manifest["cols"] = matrix.cols;
    manifest["statistic"] = std::string(to_string(config.permutation.statistic));
    manifest["permutations"] = config.permutation.permutations;
    manifest["sample_size"] = config.permutation.sample_size;
    manifest["exact"] = config.permutation.exact;
    manifest["normalize"] = config.normalize;
    manifest["cells"] = std::move(cells);
    manifest["choices"] = {
        {"cell_seed", "derived from the master seed and the unordered pair of cell labels"},
        {"subsample", "each group subsampled once per cell, then labels permuted"},
        {"validation_subsample", "redrawn for every cell"},
        {"normalization", "fit once on the full validation metric set"},
        {"p_value", config.permutation.exact ? "extreme / total" : "(1 + extreme) / (1 + permutations)"},
        {"ties", "count as extreme"},
    };
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

void emit_ensemble_report(const EnsembleAucReport& report, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw DataError("cannot create output directory '" + dir.string() + "': " + ec.message());
    }
    std::string out = "split";
    for (const auto& n : report.metric_names) {
        check_label(n);
        out += ',' + n;
    }
    out += ",ensemble\n";
    const std::size_t splits = report.ensemble_auc.size();
    std::vector<double> mean(report.metric_names.size() + 1, 0.0);
    for (std::size_t s = 0; s < splits; ++s) {
        out += std::to_string(s);
        for (std::size_t j = 0; j < report.metric_names.size(); ++j) {
            out += ',' + format_double(report.metric_auc[s][j]);
            mean[j] += report.metric_auc[s][j] / static_cast<double>(splits);
        }
        out += ',' + format_double(report.ensemble_auc[s]) + '\n';
        mean.back() += report.ensemble_auc[s] / static_cast<double>(splits);
    }
    out += "mean";
    for (const double v : mean) {
        out += ',' + format_double(v);
    }
    out += '\n';
    write_text(dir / "ensemble_auc.csv", out);
}

LabeledMatrix read_labeled_matrix(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open '" + path.string() + "' for reading");
    }
    LabeledMatrix out;
    std::string line;
    std::vector<double> values;
    bool header = true;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            const auto comma = line.find(',', start);
            fields.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
            if (comma == std::string::npos) {
                break;
            }
            start = comma + 1;
        }
        if (header) {
            out.cols.assign(fields.begin() + 1, fields.end());
            header = false;
            continue;
        }
        if (fields.size() != out.cols.size() + 1) {
            throw DataError(path.string() + ": ragged row at line " + std::to_string(line_no));
        }
        out.rows.push_back(fields[0]);
        for (std::size_t j = 1; j < fields.size(); ++j) {
            double v = 0;
            const auto& f = fields[j];
            const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
            if (ec != std::errc() || ptr != f.data() + f.size()) {
                throw DataError(path.string() + ": non-numeric cell at line " + std::to_string(line_no) +
                                ", column " + std::to_string(j + 1));
            }
            values.push_back(v);
        }
    }
    out.values = Matrix(out.rows.size(), out.cols.size(), std::move(values));
    return out;
}

}  // namespace oodperm
