#include "oodperm/stats.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "oodperm/error.hpp"

namespace oodperm {

namespace {

constexpr std::string_view kDissimilarityNames[] = {"euclidean", "one-minus-cosine"};
constexpr std::string_view kWeightingNames[] = {"proportional", "inverse", "uniform"};
constexpr std::string_view kStatisticNames[] = {"mrpp", "auc", "mean-difference"};

template <typename Enum, std::size_t N>
std::optional<Enum> parse_enum(std::string_view text, const std::string_view (&names)[N]) {
    for (std::size_t i = 0; i < N; ++i) {
        if (names[i] == text) {
            return static_cast<Enum>(i);
        }
    }
    return std::nullopt;
}

void require_two_groups(const Matrix& data, const GroupAssignment& assignment, std::string_view what) {
    if (assignment.num_groups() != 2) {
        throw DataError(std::string(what) + ": needs exactly 2 groups, got " +
                        std::to_string(assignment.num_groups()));
    }
    if (assignment.size() != data.rows()) {
        throw DataError(std::string(what) + ": assignment covers " + std::to_string(assignment.size()) +
                        " rows but data has " + std::to_string(data.rows()));
    }
}

// Midrank-based Mann-Whitney U for the samples labelled 0, exact in double for
// any realistic sample size because ranks are integers or half-integers.
// Scores within `tie_tol` of the smallest score of a run share one midrank.
double u_statistic_group0(std::span<const double> scores, std::span<const int> labels,
                          std::vector<std::size_t>& order, double tie_tol = 0.0) {
    const std::size_t n = scores.size();
    order.resize(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&scores](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum = 0.0;
    std::size_t n0 = 0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i + 1;
        while (j < n && scores[order[j]] - scores[order[i]] <= tie_tol) {
            ++j;
        }
        // Ranks i+1..j share the midrank (i + 1 + j) / 2.
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t t = i; t < j; ++t) {
            if (labels[order[t]] == 0) {
                rank_sum += midrank;
                ++n0;
            }
        }
        i = j;
    }
    const auto n0d = static_cast<double>(n0);
    return rank_sum - n0d * (n0d + 1.0) / 2.0;
}

}  // namespace

std::string_view to_string(Dissimilarity kind) { return kDissimilarityNames[static_cast<std::size_t>(kind)]; }
std::string_view to_string(GroupWeighting kind) { return kWeightingNames[static_cast<std::size_t>(kind)]; }
std::string_view to_string(StatisticKind kind) { return kStatisticNames[static_cast<std::size_t>(kind)]; }

std::optional<Dissimilarity> parse_dissimilarity(std::string_view text) {
    return parse_enum<Dissimilarity>(text, kDissimilarityNames);
}
std::optional<GroupWeighting> parse_weighting(std::string_view text) {
    return parse_enum<GroupWeighting>(text, kWeightingNames);
}
std::optional<StatisticKind> parse_statistic(std::string_view text) {
    return parse_enum<StatisticKind>(text, kStatisticNames);
}

Orientation orientation(StatisticKind kind) {
    return kind == StatisticKind::mrpp ? Orientation::smaller_is_extreme : Orientation::larger_is_extreme;
}

double dissimilarity(std::span<const double> a, std::span<const double> b, Dissimilarity kind) {
    if (a.size() != b.size()) {
        throw DataError("dissimilarity: dimension mismatch");
    }
    if (kind == Dissimilarity::euclidean) {
        double sum = 0.0;
        for (std::size_t j = 0; j < a.size(); ++j) {
            const double d = a[j] - b[j];
            sum += d * d;
        }
        return std::sqrt(sum);
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        dot += a[j] * b[j];
        na += a[j] * a[j];
        nb += b[j] * b[j];
    }
    if (na == 0.0 || nb == 0.0) {
        return 1.0;
    }
    return 1.0 - std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

Matrix dissimilarity_matrix(const Matrix& data, Dissimilarity kind) {
    const std::size_t n = data.rows();
    Matrix out(n, n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double d = dissimilarity(data.row(i), data.row(j), kind);
            if (!std::isfinite(d)) {
                throw DataError("non-finite dissimilarity between rows " + std::to_string(i) + " and " +
                                std::to_string(j));
            }
            out(i, j) = d;
            out(j, i) = d;
        }
    }
    return out;
}

std::vector<double> group_weights(std::span<const std::size_t> sizes, GroupWeighting kind) {
    const double total = static_cast<double>(std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}));
    std::vector<double> w(sizes.size());
    for (std::size_t k = 0; k < sizes.size(); ++k) {
        switch (kind) {
        case GroupWeighting::proportional:
            w[k] = static_cast<double>(sizes[k]) / total;
            break;
        case GroupWeighting::inverse:
            w[k] = 1.0 / static_cast<double>(sizes[k]);
            break;
        case GroupWeighting::uniform:
            w[k] = 1.0 / static_cast<double>(sizes.size());
            break;
        }
    }
    return w;
}

double mrpp_delta(const Matrix& data, const GroupAssignment& assignment, Dissimilarity measure,
                  GroupWeighting weighting) {
    if (assignment.size() != data.rows()) {
        throw DataError("mrpp_delta: assignment size does not match data rows");
    }
    return mrpp_delta_precomputed(dissimilarity_matrix(data, measure), assignment, weighting);
}

double mrpp_delta_precomputed(const Matrix& dissimilarities, const GroupAssignment& assignment,
                              GroupWeighting weighting) {
    const std::size_t n = assignment.size();
    if (dissimilarities.rows() != n || dissimilarities.cols() != n) {
        throw DataError("mrpp_delta: dissimilarity matrix shape does not match assignment");
    }
    for (std::size_t k = 0; k < assignment.group_sizes().size(); ++k) {
        if (assignment.group_sizes()[k] < 2) {
            throw DataError("mrpp_delta: group " + std::to_string(k) + " has fewer than 2 members");
        }
    }
    const auto weights = group_weights(assignment.group_sizes(), weighting);
    std::vector<double> sums(weights.size(), 0.0);
    const auto& labels = assignment.labels();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (labels[i] == labels[j]) {
                sums[labels[i]] += dissimilarities(i, j);
            }
        }
    }
    double delta = 0.0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
        const auto nk = static_cast<double>(assignment.group_sizes()[k]);
        delta += weights[k] * (sums[k] / (nk * (nk - 1.0) / 2.0));
    }
    if (!std::isfinite(delta)) {
        throw DataError("mrpp_delta: non-finite statistic");
    }
    return delta;
}

AucValue auc_statistic(const Matrix& data, const GroupAssignment& assignment) {
    require_two_groups(data, assignment, "auc_statistic");
    StatisticEvaluator eval(data, StatisticKind::auc, Dissimilarity::euclidean, GroupWeighting::proportional);
    StatisticEvaluator::Scratch scratch;
    AucValue out;
    out.auc = eval.evaluate(assignment.labels(), assignment.group_sizes(), scratch, &out.zero_direction);
    return out;
}

double mean_difference_statistic(const Matrix& data, const GroupAssignment& assignment) {
    require_two_groups(data, assignment, "mean_difference_statistic");
    StatisticEvaluator eval(data, StatisticKind::mean_difference, Dissimilarity::euclidean,
                            GroupWeighting::proportional);
    StatisticEvaluator::Scratch scratch;
    return eval.evaluate(assignment.labels(), assignment.group_sizes(), scratch);
}

double rank_auc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) {
        throw DataError("rank_auc: scores and labels differ in length");
    }
    std::size_t n1 = 0;
    for (const int l : labels) {
        if (l != 0 && l != 1) {
            throw DataError("rank_auc: labels must be 0 or 1");
        }
        n1 += static_cast<std::size_t>(l);
    }
    const std::size_t n0 = labels.size() - n1;
    if (n0 == 0 || n1 == 0) {
        throw DataError("rank_auc: both labels must be present");
    }
    std::vector<std::size_t> order;
    const double u0 = u_statistic_group0(scores, labels, order);
    const double pairs = static_cast<double>(n0) * static_cast<double>(n1);
    return (pairs - u0) / pairs;
}

double folded_rank_auc(std::span<const double> scores, std::span<const int> labels) {
    const double a = rank_auc(scores, labels);
    return std::max(a, 1.0 - a);
}

EnsembleFit ensemble_auc(const Matrix& train, std::span<const int> train_labels, const Matrix& eval,
                         std::span<const int> eval_labels) {
    if (train.rows() != train_labels.size() || eval.rows() != eval_labels.size()) {
        throw DataError("ensemble_auc: label counts do not match rows");
    }
    if (eval.rows() == 0) {
        throw DataError("ensemble_auc: evaluation set is empty");
    }
    if (train.cols() != eval.cols()) {
        throw DataError("ensemble_auc: train and eval metric counts differ");
    }
    const bool has0 = std::find(train_labels.begin(), train_labels.end(), 0) != train_labels.end();
    const bool has1 = std::find(train_labels.begin(), train_labels.end(), 1) != train_labels.end();
    if (!has0 || !has1) {
        throw DataError("ensemble_auc: training data must contain both labels");
    }

    const auto n = static_cast<Eigen::Index>(train.rows());
    const auto l = static_cast<Eigen::Index>(train.cols());
    Eigen::MatrixXd design(n, l + 1);
    Eigen::VectorXd target(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        design(i, 0) = 1.0;
        for (Eigen::Index j = 0; j < l; ++j) {
            design(i, j + 1) = train(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
        }
        target(i) = static_cast<double>(train_labels[static_cast<std::size_t>(i)]);
    }
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(design);
    const Eigen::VectorXd w = cod.solve(target);

    EnsembleFit fit;
    fit.rank = static_cast<std::size_t>(cod.rank());
    fit.rank_deficient = cod.rank() < l + 1;
    fit.weights.assign(w.data(), w.data() + w.size());

    std::vector<double> scores(eval.rows());
    for (std::size_t i = 0; i < eval.rows(); ++i) {
        double s = fit.weights[0];
        for (std::size_t j = 0; j < eval.cols(); ++j) {
            s += fit.weights[j + 1] * eval(i, j);
        }
        scores[i] = s;
    }
    fit.auc = rank_auc(scores, eval_labels);
    return fit;
}

StatisticEvaluator::StatisticEvaluator(const Matrix& data, StatisticKind kind, Dissimilarity measure,
                                       GroupWeighting weighting)
    : data_(data), kind_(kind), weighting_(weighting) {
    if (kind_ == StatisticKind::mrpp) {
        dissimilarities_ = dissimilarity_matrix(data_, measure);
    }
}

double StatisticEvaluator::evaluate(std::span<const int> labels, std::span<const std::size_t> sizes,
                                    Scratch& scratch, bool* zero_direction) const {
    switch (kind_) {
    case StatisticKind::mrpp:
        return mrpp(labels, sizes, scratch);
    case StatisticKind::auc:
        return auc(labels, sizes, scratch, zero_direction);
    case StatisticKind::mean_difference:
        return mean_difference(labels, sizes, scratch);
    }
    return 0.0;
}

double StatisticEvaluator::mrpp(std::span<const int> labels, std::span<const std::size_t> sizes,
                                Scratch& scratch) const {
    const std::size_t n = labels.size();
    const std::size_t k_groups = sizes.size();
    // Bucket row indices by group, keeping ascending row order within a group
    // so the summation order depends only on group membership.
    auto& offsets = scratch.offsets;
    offsets.assign(k_groups + 1, 0);
    for (std::size_t k = 0; k < k_groups; ++k) {
        offsets[k + 1] = offsets[k] + sizes[k];
    }
    auto& members = scratch.members;
    members.resize(n);
    auto& cursor = scratch.cursor;
    cursor.assign(offsets.begin(), offsets.end() - 1);
    for (std::size_t i = 0; i < n; ++i) {
        members[cursor[static_cast<std::size_t>(labels[i])]++] = i;
    }
    const double total = static_cast<double>(n);
    double delta = 0.0;
    const double* dis = dissimilarities_.data().data();
    for (std::size_t k = 0; k < k_groups; ++k) {
        const std::size_t begin = offsets[k];
        const std::size_t end = offsets[k + 1];
        double sum = 0.0;
        for (std::size_t a = begin; a < end; ++a) {
            const double* row = dis + members[a] * n;
            for (std::size_t b = a + 1; b < end; ++b) {
                sum += row[members[b]];
            }
        }
        const auto nk = static_cast<double>(sizes[k]);
        double weight = 0.0;
        switch (weighting_) {
        case GroupWeighting::proportional:
            weight = nk / total;
            break;
        case GroupWeighting::inverse:
            weight = 1.0 / nk;
            break;
        case GroupWeighting::uniform:
            weight = 1.0 / static_cast<double>(k_groups);
            break;
        }
        delta += weight * (sum / (nk * (nk - 1.0) / 2.0));
    }
    return delta;
}

void StatisticEvaluator::group_means(std::span<const int> labels, std::span<const std::size_t> sizes,
                                     Scratch& scratch) const {
    const std::size_t l = data_.cols();
    auto& sums = scratch.sums;
    sums.assign(2 * l, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        double* dst = sums.data() + static_cast<std::size_t>(labels[i]) * l;
        const auto row = data_.row(i);
        for (std::size_t j = 0; j < l; ++j) {
            dst[j] += row[j];
        }
    }
    for (std::size_t g = 0; g < 2; ++g) {
        for (std::size_t j = 0; j < l; ++j) {
            sums[g * l + j] /= static_cast<double>(sizes[g]);
        }
    }
}

double StatisticEvaluator::auc(std::span<const int> labels, std::span<const std::size_t> sizes, Scratch& scratch,
                               bool* zero_direction) const {
    group_means(labels, sizes, scratch);
    const std::size_t l = data_.cols();
    auto& direction = scratch.direction;
    direction.resize(l);
    bool all_zero = true;
    for (std::size_t j = 0; j < l; ++j) {
        direction[j] = scratch.sums[l + j] - scratch.sums[j];
        all_zero = all_zero && direction[j] == 0.0;
    }
    if (zero_direction != nullptr) {
        *zero_direction = all_zero;
    }
    if (all_zero) {
        return 0.5;
    }
    auto& scores = scratch.scores;
    scores.resize(labels.size());
    double magnitude = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto row = data_.row(i);
        double s = 0.0, a = 0.0;
        for (std::size_t j = 0; j < l; ++j) {
            s += row[j] * direction[j];
            a += std::abs(row[j] * direction[j]);
        }
        scores[i] = s;
        magnitude = std::max(magnitude, a);
    }
    // Projections equal up to rounding of the dot product count as ties.
    const double u0 = u_statistic_group0(scores, labels, scratch.order, kProjectionTieTolerance * magnitude);
    const double pairs = static_cast<double>(sizes[0]) * static_cast<double>(sizes[1]);
    // U for group 1 is pairs - u0 exactly; folding on U keeps the result
    // identical when the two group labels are swapped.
    return std::max(u0, pairs - u0) / pairs;
}

double StatisticEvaluator::mean_difference(std::span<const int> labels, std::span<const std::size_t> sizes,
                                           Scratch& scratch) const {
    group_means(labels, sizes, scratch);
    const std::size_t l = data_.cols();
    double sum = 0.0;
    for (std::size_t j = 0; j < l; ++j) {
        const double d = scratch.sums[j] - scratch.sums[l + j];
        sum += d * d;
    }
    return std::sqrt(sum);
}

}  // namespace oodperm
