#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "oodperm/latent_io.hpp"
#include "oodperm/matrix.hpp"

namespace oodperm {

enum class KnnMeasure { l2, cosine };

/// Result of one mean-KNN query.
struct KnnResult {
    double mean_distance = 0.0;
    std::size_t neighbors = 0;   ///< number of neighbors averaged
    bool clamped = false;        ///< k exceeded the number of anchors
    std::size_t zero_norm = 0;   ///< cosine pairs involving a zero vector (scored as 1.0)
};

/**
 * @brief Exact brute-force index over in-distribution anchor vectors.
 *
 * Anchors are copied row-major with their L2 norms precomputed. The index is
 * immutable after construction, so concurrent queries need no locking.
 */
class AnchorIndex {
public:
    AnchorIndex(Matrix anchors, std::vector<std::string> column_names, std::string source_name);

    std::size_t size() const { return anchors_.rows(); }
    std::size_t dimension() const { return anchors_.cols(); }
    const Matrix& anchors() const { return anchors_; }
    const std::vector<double>& norms() const { return norms_; }
    const std::vector<std::string>& column_names() const { return column_names_; }
    const std::string& source_name() const { return source_name_; }

    /**
     * Mean of the k smallest dissimilarities between `query` and the anchors.
     * Cosine dissimilarity is `1 - cos`; a zero-norm query or anchor scores 1.0
     * and is counted in `zero_norm`. Ties at the k-th position keep the anchor
     * that was inserted first.
     */
    KnnResult query(std::span<const double> query, std::size_t k, KnnMeasure measure) const;

    /// Anchor indices of the k nearest neighbors in ascending order of dissimilarity.
    std::vector<std::size_t> nearest(std::span<const double> query, std::size_t k, KnnMeasure measure) const;

private:
    std::vector<double> dissimilarities(std::span<const double> query, KnnMeasure measure,
                                        std::size_t& zero_norm) const;

    Matrix anchors_;
    std::vector<double> norms_;
    std::vector<std::string> column_names_;
    std::string source_name_;
};

/// Builds an index over the given columns of every row of `features`.
AnchorIndex build_index(const LatentResponseSet& features, std::span<const std::size_t> columns);

/// Convenience wrapper returning only the mean distance.
double mean_knn_distance(const AnchorIndex& index, std::span<const double> query, std::size_t k,
                         KnnMeasure measure);

}  // namespace oodperm
