#include "oodperm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>

#include "oodperm/error.hpp"

namespace oodperm {

namespace {

constexpr std::string_view kMetricKindNames[] = {
    "knn-l2",   "knn-cosine", "recon-l2",  "recon-ip",       "manifold-x",
    "manifold-z", "manifold-y", "one-minus-max-softmax", "edl-uncertainty", "passthrough",
};

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) {
        s.remove_suffix(1);
    }
    return s;
}

double norm2(std::span<const double> v) {
    double sum = 0.0;
    for (const double x : v) {
        sum += x * x;
    }
    return std::sqrt(sum);
}

void require_finite(std::span<const double> v, std::string_view what) {
    for (const double x : v) {
        if (!std::isfinite(x)) {
            throw DataError(std::string(what) + ": non-finite input");
        }
    }
}

bool is_knn(MetricKind kind) {
    return kind == MetricKind::knn_l2 || kind == MetricKind::knn_cosine;
}

bool is_manifold(MetricKind kind) {
    return kind == MetricKind::manifold_x || kind == MetricKind::manifold_z || kind == MetricKind::manifold_y;
}

std::vector<ColumnKind> allowed_kinds(MetricKind kind, std::size_t input) {
    switch (kind) {
    case MetricKind::knn_l2:
    case MetricKind::knn_cosine:
        return {ColumnKind::feature, ColumnKind::logit, ColumnKind::metric};
    case MetricKind::recon_l2:
    case MetricKind::recon_ip:
        return {input == 0 ? ColumnKind::image : ColumnKind::reconstruction};
    case MetricKind::manifold_x:
        return {ColumnKind::iterate_x};
    case MetricKind::manifold_z:
        return {ColumnKind::iterate_z};
    case MetricKind::manifold_y:
        return {ColumnKind::iterate_y};
    case MetricKind::one_minus_max_softmax:
        return {ColumnKind::logit};
    case MetricKind::edl_uncertainty:
        return {ColumnKind::belief, ColumnKind::logit};
    case MetricKind::passthrough:
        return {ColumnKind::feature, ColumnKind::logit, ColumnKind::belief, ColumnKind::image,
                ColumnKind::reconstruction, ColumnKind::iterate_x, ColumnKind::iterate_z,
                ColumnKind::iterate_y, ColumnKind::metric};
    }
    return {};
}

// A spec resolved against the column layout of one set.
struct ResolvedSpec {
    const MetricSpec* spec = nullptr;
    std::vector<std::vector<std::size_t>> inputs;
    std::vector<std::string> outputs;
    std::size_t k = kDefaultKnnK;
    std::size_t steps = kDefaultIterateSteps;
    bool emit_intermediate = false;
};

std::size_t count_param(const MetricSpec& spec, const std::string& key, double fallback, double minimum) {
    const double value = spec.param(key, fallback);
    if (!(value >= minimum) || value != std::floor(value)) {
        throw ConfigError("metric '" + spec.name + "': parameter " + key + " must be an integer >= " +
                          std::to_string(static_cast<long long>(minimum)));
    }
    return static_cast<std::size_t>(value);
}

ResolvedSpec resolve(const LatentResponseSet& raw, const MetricSpec& spec) {
    ResolvedSpec r;
    r.spec = &spec;
    const auto selectors = spec.inputs.empty() ? default_inputs(spec.kind) : spec.inputs;
    const std::size_t expected = default_inputs(spec.kind).size();
    if (selectors.size() != expected) {
        throw ConfigError("metric '" + spec.name + "' (" + std::string(to_string(spec.kind)) + ") takes " +
                          std::to_string(expected) + " input selection(s), got " + std::to_string(selectors.size()));
    }
    for (std::size_t i = 0; i < selectors.size(); ++i) {
        auto cols = selectors[i].resolve(raw);
        const auto allowed = allowed_kinds(spec.kind, i);
        for (const auto c : cols) {
            const auto& col = raw.columns()[c];
            if (std::find(allowed.begin(), allowed.end(), col.kind) == allowed.end()) {
                throw DataError("metric '" + spec.name + "' (" + std::string(to_string(spec.kind)) +
                                "): column '" + col.name + "' has incompatible kind " +
                                std::string(to_string(col.kind)));
            }
        }
        r.inputs.push_back(std::move(cols));
    }

    if (is_knn(spec.kind)) {
        r.k = count_param(spec, "k", static_cast<double>(kDefaultKnnK), 1);
    }
    if (is_manifold(spec.kind)) {
        r.steps = count_param(spec, "T", static_cast<double>(kDefaultIterateSteps), 1);
        r.emit_intermediate = spec.param("emit_intermediate", 0.0) != 0.0;
        if (r.inputs[0].size() % (r.steps + 1) != 0) {
            throw DataError("metric '" + spec.name + "': " + std::to_string(r.inputs[0].size()) +
                            " iterate columns cannot be split into T+1 = " + std::to_string(r.steps + 1) + " steps");
        }
    }
    if (spec.kind == MetricKind::recon_l2 || spec.kind == MetricKind::recon_ip) {
        if (r.inputs[0].size() != r.inputs[1].size()) {
            throw DataError("metric '" + spec.name + "': image and reconstruction column counts differ");
        }
    }
    if (spec.kind == MetricKind::one_minus_max_softmax && r.inputs[0].size() < 2) {
        throw DataError("metric '" + spec.name + "': needs at least 2 logit columns");
    }

    if (spec.kind == MetricKind::passthrough && r.inputs[0].size() > 1) {
        for (const auto c : r.inputs[0]) {
            r.outputs.push_back(spec.name + "/" + raw.columns()[c].name);
        }
    } else {
        r.outputs.push_back(spec.name);
    }
    if (r.emit_intermediate) {
        for (std::size_t t = 1; t < r.steps; ++t) {
            r.outputs.push_back(spec.name + "@" + std::to_string(t));
        }
    }
    return r;
}

std::vector<double> gather(std::span<const double> row, const std::vector<std::size_t>& cols) {
    std::vector<double> out(cols.size());
    for (std::size_t j = 0; j < cols.size(); ++j) {
        out[j] = row[cols[j]];
    }
    return out;
}

}  // namespace

std::string_view to_string(MetricKind kind) {
    return kMetricKindNames[static_cast<std::size_t>(kind)];
}

std::optional<MetricKind> parse_metric_kind(std::string_view text) {
    for (std::size_t i = 0; i < std::size(kMetricKindNames); ++i) {
        if (kMetricKindNames[i] == text) {
            return static_cast<MetricKind>(i);
        }
    }
    return std::nullopt;
}

ColumnSelector ColumnSelector::of_kind(ColumnKind kind) {
    ColumnSelector s;
    s.kind_ = kind;
    return s;
}

ColumnSelector ColumnSelector::of_names(std::vector<std::string> names) {
    ColumnSelector s;
    s.names_ = std::move(names);
    return s;
}

ColumnSelector ColumnSelector::parse(std::string_view text) {
    text = trim(text);
    if (text.starts_with("kind:")) {
        const auto kind = parse_column_kind(trim(text.substr(5)));
        if (!kind) {
            throw ConfigError("unknown column kind in selector '" + std::string(text) + "'");
        }
        return of_kind(*kind);
    }
    std::vector<std::string> names;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto comma = text.find(',', start);
        if (comma == std::string_view::npos) {
            comma = text.size();
        }
        const auto name = trim(text.substr(start, comma - start));
        if (name.empty()) {
            throw ConfigError("empty column name in selector '" + std::string(text) + "'");
        }
        names.emplace_back(name);
        start = comma + 1;
    }
    return of_names(std::move(names));
}

std::vector<std::size_t> ColumnSelector::resolve(const LatentResponseSet& set) const {
    std::vector<std::size_t> out;
    if (kind_) {
        out = set.columns_of_kind(*kind_);
    } else {
        for (const auto& name : names_) {
            const auto idx = set.find_column(name);
            if (!idx) {
                throw DataError(set.name() + ": no column named '" + name + "'");
            }
            out.push_back(*idx);
        }
    }
    if (out.empty()) {
        throw DataError(set.name() + ": column selection '" + to_string() + "' is empty");
    }
    return out;
}

std::string ColumnSelector::to_string() const {
    if (kind_) {
        return "kind:" + std::string(oodperm::to_string(*kind_));
    }
    std::string out;
    for (std::size_t i = 0; i < names_.size(); ++i) {
        if (i > 0) {
            out += ',';
        }
        out += names_[i];
    }
    return out;
}

double MetricSpec::param(const std::string& key, double fallback) const {
    const auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
}

std::vector<ColumnSelector> default_inputs(MetricKind kind) {
    switch (kind) {
    case MetricKind::knn_l2:
    case MetricKind::knn_cosine:
        return {ColumnSelector::of_kind(ColumnKind::feature)};
    case MetricKind::recon_l2:
    case MetricKind::recon_ip:
        return {ColumnSelector::of_kind(ColumnKind::image), ColumnSelector::of_kind(ColumnKind::reconstruction)};
    case MetricKind::manifold_x:
        return {ColumnSelector::of_kind(ColumnKind::iterate_x)};
    case MetricKind::manifold_z:
        return {ColumnSelector::of_kind(ColumnKind::iterate_z)};
    case MetricKind::manifold_y:
        return {ColumnSelector::of_kind(ColumnKind::iterate_y)};
    case MetricKind::one_minus_max_softmax:
        return {ColumnSelector::of_kind(ColumnKind::logit)};
    case MetricKind::edl_uncertainty:
        return {ColumnSelector::of_kind(ColumnKind::belief)};
    case MetricKind::passthrough:
        return {ColumnSelector::of_kind(ColumnKind::metric)};
    }
    return {};
}

std::vector<std::string> metric_names(const LatentResponseSet& raw, std::span<const MetricSpec> specs) {
    std::vector<std::string> names;
    for (const auto& spec : specs) {
        auto r = resolve(raw, spec);
        names.insert(names.end(), r.outputs.begin(), r.outputs.end());
    }
    return names;
}

std::vector<MetricVector> compute_metrics(const LatentResponseSet& raw, std::span<const MetricSpec> specs,
                                          const AnchorIndex* index, MetricDiagnostics* diagnostics) {
    return compute_metrics(
        raw, specs, AnchorLookup([index](const MetricSpec&) { return index; }), diagnostics);
}

std::vector<MetricVector> compute_metrics(const LatentResponseSet& raw, std::span<const MetricSpec> specs,
                                          const AnchorLookup& lookup, MetricDiagnostics* diagnostics) {
    if (specs.empty()) {
        throw ConfigError("compute_metrics: no metric specs given");
    }
    std::vector<ResolvedSpec> resolved;
    std::vector<const AnchorIndex*> indexes;
    std::vector<std::string> names;
    for (const auto& spec : specs) {
        resolved.push_back(resolve(raw, spec));
        names.insert(names.end(), resolved.back().outputs.begin(), resolved.back().outputs.end());
        const AnchorIndex* idx = nullptr;
        if (is_knn(spec.kind)) {
            idx = lookup ? lookup(spec) : nullptr;
            if (idx == nullptr) {
                throw ConfigError("metric '" + spec.name + "' needs a KNN anchor index but none was provided");
            }
            std::vector<std::string> query_names;
            for (const auto c : resolved.back().inputs[0]) {
                query_names.push_back(raw.columns()[c].name);
            }
            if (query_names != idx->column_names()) {
                throw DataError("metric '" + spec.name + "': query columns do not match the columns of index '" +
                                idx->source_name() + "'");
            }
        }
        indexes.push_back(idx);
    }

    MetricDiagnostics local;
    std::vector<MetricVector> out;
    out.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        MetricVector vec;
        vec.sample_id = raw.ids()[i];
        vec.names = names;
        vec.values.reserve(names.size());
        const auto row = raw.row(i);
        for (std::size_t s = 0; s < resolved.size(); ++s) {
            const auto& r = resolved[s];
            switch (r.spec->kind) {
            case MetricKind::knn_l2:
            case MetricKind::knn_cosine: {
                const auto q = gather(row, r.inputs[0]);
                const auto res = indexes[s]->query(
                    q, r.k, r.spec->kind == MetricKind::knn_l2 ? KnnMeasure::l2 : KnnMeasure::cosine);
                local.knn_clamped += res.clamped ? 1 : 0;
                local.cosine_zero_norm += res.zero_norm;
                vec.values.push_back(res.mean_distance);
                break;
            }
            case MetricKind::recon_l2:
            case MetricKind::recon_ip:
                vec.values.push_back(reconstruction_error(
                    gather(row, r.inputs[0]), gather(row, r.inputs[1]),
                    r.spec->kind == MetricKind::recon_l2 ? ReconMeasure::l2 : ReconMeasure::ip));
                break;
            case MetricKind::manifold_x:
            case MetricKind::manifold_z:
            case MetricKind::manifold_y: {
                const auto iterates = unflatten_iterates(gather(row, r.inputs[0]), r.steps + 1);
                vec.values.push_back(iterate_offset(iterates, r.steps));
                if (r.emit_intermediate) {
                    for (std::size_t t = 1; t < r.steps; ++t) {
                        vec.values.push_back(iterate_offset(iterates, t));
                    }
                }
                break;
            }
            case MetricKind::one_minus_max_softmax:
                vec.values.push_back(one_minus_max_softmax(gather(row, r.inputs[0])));
                break;
            case MetricKind::edl_uncertainty:
                vec.values.push_back(edl_uncertainty(gather(row, r.inputs[0])));
                break;
            case MetricKind::passthrough:
                for (const auto c : r.inputs[0]) {
                    vec.values.push_back(row[c]);
                }
                break;
            }
        }
        validate(vec);
        out.push_back(std::move(vec));
    }
    if (diagnostics != nullptr) {
        *diagnostics = local;
    }
    return out;
}

double reconstruction_error(std::span<const double> x, std::span<const double> x_hat, ReconMeasure measure) {
    if (x.size() != x_hat.size()) {
        throw DataError("reconstruction_error: dimension mismatch (" + std::to_string(x.size()) + " vs " +
                        std::to_string(x_hat.size()) + ")");
    }
    if (measure == ReconMeasure::l2) {
        double sum = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double d = x[i] - x_hat[i];
            sum += d * d;
        }
        return std::sqrt(sum);
    }
    const double nx = norm2(x);
    const double ny = norm2(x_hat);
    if (nx == 0.0 || ny == 0.0) {
        return 1.0;
    }
    double dot = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        dot += x[i] * x_hat[i];
    }
    return 1.0 - std::clamp(dot / (nx * ny), -1.0, 1.0);
}

double iterate_offset(const Matrix& iterates, std::size_t step) {
    if (step >= iterates.rows()) {
        throw DataError("iterate_offset: step " + std::to_string(step) + " outside sequence of length " +
                        std::to_string(iterates.rows()));
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < iterates.cols(); ++j) {
        const double d = iterates(step, j) - iterates(0, j);
        sum += d * d;
    }
    return std::sqrt(sum);
}

ManifoldDistance manifold_distance(const Matrix& iterates_x, const Matrix& iterates_z, const Matrix& iterates_y) {
    const std::size_t steps = iterates_x.rows();
    if (steps < 2) {
        throw DataError("manifold_distance: need at least two iterates (T >= 1)");
    }
    if (iterates_z.rows() != steps || iterates_y.rows() != steps) {
        throw DataError("manifold_distance: iterate sequences differ in length (" + std::to_string(steps) + ", " +
                        std::to_string(iterates_z.rows()) + ", " + std::to_string(iterates_y.rows()) + ")");
    }
    const std::size_t last = steps - 1;
    return {iterate_offset(iterates_x, last), iterate_offset(iterates_z, last), iterate_offset(iterates_y, last)};
}

Matrix unflatten_iterates(std::span<const double> flat, std::size_t steps) {
    if (steps == 0 || flat.size() % steps != 0) {
        throw DataError("unflatten_iterates: " + std::to_string(flat.size()) + " values do not split into " +
                        std::to_string(steps) + " equal steps");
    }
    return Matrix(steps, flat.size() / steps, std::vector<double>(flat.begin(), flat.end()));
}

double one_minus_max_softmax(std::span<const double> logits) {
    if (logits.size() < 2) {
        throw DataError("one_minus_max_softmax: need at least 2 logits");
    }
    require_finite(logits, "one_minus_max_softmax");
    const double top = *std::max_element(logits.begin(), logits.end());
    // The max term contributes exp(0) = 1, so max softmax = 1 / denom.
    double denom = 0.0;
    for (const double l : logits) {
        denom += std::exp(l - top);
    }
    // 1 - 1/denom written to stay accurate when denom is close to 1.
    return (denom - 1.0) / denom;
}

double edl_uncertainty(std::span<const double> beliefs) {
    require_finite(beliefs, "edl_uncertainty");
    double sum = 0.0;
    for (const double b : beliefs) {
        sum += b;
    }
    return 1.0 - sum;
}

NormalizationParams fit_normalization(std::span<const MetricVector> validation) {
    if (validation.size() < 2) {
        throw DataError("fit_normalization: need at least 2 validation vectors, got " +
                        std::to_string(validation.size()));
    }
    NormalizationParams params;
    params.names = validation.front().names;
    const std::size_t l = params.names.size();
    params.mean.assign(l, 0.0);
    params.std.assign(l, 0.0);
    for (const auto& v : validation) {
        if (v.names != params.names) {
            throw DataError("fit_normalization: metric names differ between vectors");
        }
        for (std::size_t j = 0; j < l; ++j) {
            params.mean[j] += v.values[j];
        }
    }
    const auto n = static_cast<double>(validation.size());
    for (auto& m : params.mean) {
        m /= n;
    }
    for (const auto& v : validation) {
        for (std::size_t j = 0; j < l; ++j) {
            const double d = v.values[j] - params.mean[j];
            params.std[j] += d * d;
        }
    }
    for (auto& s : params.std) {
        s = std::max(std::sqrt(s / n), kStdFloor);
    }
    return params;
}

std::vector<MetricVector> apply_normalization(const NormalizationParams& params,
                                              std::span<const MetricVector> metrics) {
    std::vector<MetricVector> out;
    out.reserve(metrics.size());
    for (const auto& v : metrics) {
        if (v.names != params.names) {
            throw DataError("apply_normalization: metric names of '" + v.sample_id +
                            "' do not match the normalization parameters");
        }
        MetricVector z = v;
        for (std::size_t j = 0; j < z.values.size(); ++j) {
            z.values[j] = (v.values[j] - params.mean[j]) / params.std[j];
        }
        out.push_back(std::move(z));
    }
    return out;
}

Matrix to_matrix(std::span<const MetricVector> metrics) {
    if (metrics.empty()) {
        return {};
    }
    const std::size_t l = metrics.front().values.size();
    Matrix m(metrics.size(), l);
    for (std::size_t i = 0; i < metrics.size(); ++i) {
        if (metrics[i].values.size() != l) {
            throw DataError("to_matrix: metric vectors differ in length");
        }
        std::ranges::copy(metrics[i].values, m.row(i).begin());
    }
    return m;
}

LatentResponseSet metrics_to_set(std::string name, std::span<const MetricVector> metrics,
                                 std::span<const std::string> groups) {
    if (groups.size() != metrics.size()) {
        throw DataError("metrics_to_set: group count does not match metric vector count");
    }
    std::vector<Column> columns;
    if (!metrics.empty()) {
        for (const auto& n : metrics.front().names) {
            columns.push_back({n, ColumnKind::metric});
        }
    }
    std::vector<std::string> ids;
    ids.reserve(metrics.size());
    for (const auto& m : metrics) {
        ids.push_back(m.sample_id);
    }
    return LatentResponseSet(std::move(name), std::move(columns), std::move(ids),
                             std::vector<std::string>(groups.begin(), groups.end()), to_matrix(metrics));
}

std::vector<MetricVector> metrics_from_set(const LatentResponseSet& set) {
    std::vector<std::string> names;
    for (const auto& c : set.columns()) {
        names.push_back(c.name);
    }
    std::vector<MetricVector> out;
    out.reserve(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto row = set.row(i);
        out.push_back({set.ids()[i], std::vector<double>(row.begin(), row.end()), names});
    }
    return out;
}

}  // namespace oodperm
