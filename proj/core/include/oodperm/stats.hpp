#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "oodperm/latent_io.hpp"
#include "oodperm/matrix.hpp"

namespace oodperm {

enum class Dissimilarity { euclidean, one_minus_cosine };
enum class GroupWeighting { proportional, inverse, uniform };
enum class StatisticKind { mrpp, auc, mean_difference };
enum class Orientation { smaller_is_extreme, larger_is_extreme };

std::string_view to_string(Dissimilarity kind);
std::string_view to_string(GroupWeighting kind);
std::string_view to_string(StatisticKind kind);
std::optional<Dissimilarity> parse_dissimilarity(std::string_view text);
std::optional<GroupWeighting> parse_weighting(std::string_view text);
std::optional<StatisticKind> parse_statistic(std::string_view text);

/// MRPP is extreme when small (tight groups); AUC and mean difference when large.
Orientation orientation(StatisticKind kind);

double dissimilarity(std::span<const double> a, std::span<const double> b, Dissimilarity kind);

/// Symmetric N × N matrix of pairwise dissimilarities between rows of `data`.
Matrix dissimilarity_matrix(const Matrix& data, Dissimilarity kind);

/// Weights C_k for groups of the given sizes: N_k/N, 1/N_k or 1/K.
std::vector<double> group_weights(std::span<const std::size_t> sizes, GroupWeighting kind);

/**
 * @brief MRPP statistic: weighted mean within-group pairwise dissimilarity.
 *
 * delta = sum_k C_k * xi_k, where xi_k is the sum of dissimilarities over the
 * pairs inside group k divided by the number of such pairs. Every group needs
 * at least two members.
 */
double mrpp_delta(const Matrix& data, const GroupAssignment& assignment, Dissimilarity measure,
                  GroupWeighting weighting);

/// Same statistic from a precomputed N × N dissimilarity matrix.
double mrpp_delta_precomputed(const Matrix& dissimilarities, const GroupAssignment& assignment,
                              GroupWeighting weighting);

struct AucValue {
    double auc = 0.5;
    bool zero_direction = false;  ///< group means coincide; no projection exists
};

/**
 * @brief Folded two-group AUC of a one-dimensional projection.
 *
 * Samples are projected onto the difference of the two group means and scored
 * with the Mann-Whitney rank formula (midranks for ties). The result is
 * max(AUC, 1 - AUC), so it lies in [0.5, 1] and does not depend on group order.
 */
/// Relative width (of the largest |x_j d_j| sum) within which projections tie.
inline constexpr double kProjectionTieTolerance = 1e-10;

AucValue auc_statistic(const Matrix& data, const GroupAssignment& assignment);

/// Euclidean norm of the difference between the two group means.
double mean_difference_statistic(const Matrix& data, const GroupAssignment& assignment);

/**
 * Rank-based AUC: probability that a sample labelled 1 scores above a sample
 * labelled 0, ties counting one half. Both labels must be present.
 */
double rank_auc(std::span<const double> scores, std::span<const int> labels);

/// max(rank_auc, 1 - rank_auc).
double folded_rank_auc(std::span<const double> scores, std::span<const int> labels);

struct EnsembleFit {
    std::vector<double> weights;  ///< intercept first, then one weight per metric
    double auc = 0.5;
    std::size_t rank = 0;         ///< numerical rank of the design matrix
    bool rank_deficient = false;  ///< least-norm solution was used
};

/**
 * @brief Ordinary least squares on 0/1 targets, scored by AUC on held-out data.
 *
 * Fits an intercept plus one weight per metric column on `train` (label 0 =
 * in-distribution, 1 = out-of-distribution), scores `eval` with the fitted
 * linear function and returns the unfolded rank AUC.
 */
EnsembleFit ensemble_auc(const Matrix& train, std::span<const int> train_labels, const Matrix& eval,
                         std::span<const int> eval_labels);

/**
 * @brief Repeated evaluation of one statistic over relabelings of fixed data.
 *
 * Precomputes what every relabeling shares (the dissimilarity matrix for
 * MRPP). `evaluate` is const and takes caller-owned scratch space, so one
 * evaluator can serve several threads.
 */
class StatisticEvaluator {
public:
    struct Scratch {
        std::vector<std::size_t> members;
        std::vector<std::size_t> offsets;
        std::vector<std::size_t> cursor;
        std::vector<double> sums;
        std::vector<double> direction;
        std::vector<double> scores;
        std::vector<std::size_t> order;
    };

    StatisticEvaluator(const Matrix& data, StatisticKind kind, Dissimilarity measure, GroupWeighting weighting);

    /// `sizes` must be the group sizes of `labels`.
    double evaluate(std::span<const int> labels, std::span<const std::size_t> sizes, Scratch& scratch,
                    bool* zero_direction = nullptr) const;

    StatisticKind kind() const { return kind_; }
    std::size_t size() const { return data_.rows(); }

private:
    double mrpp(std::span<const int> labels, std::span<const std::size_t> sizes, Scratch& scratch) const;
    double auc(std::span<const int> labels, std::span<const std::size_t> sizes, Scratch& scratch,
               bool* zero_direction) const;
    double mean_difference(std::span<const int> labels, std::span<const std::size_t> sizes, Scratch& scratch) const;
    void group_means(std::span<const int> labels, std::span<const std::size_t> sizes, Scratch& scratch) const;

    Matrix data_;
    StatisticKind kind_;
    GroupWeighting weighting_;
    Matrix dissimilarities_;
};

}  // namespace oodperm
