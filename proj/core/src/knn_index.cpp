#include "oodperm/knn_index.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oodperm/error.hpp"

namespace oodperm {

namespace {

double l2_norm(std::span<const double> v) {
    double sum = 0.0;
    for (const double x : v) {
        sum += x * x;
    }
    return std::sqrt(sum);
}

}  // namespace

AnchorIndex::AnchorIndex(Matrix anchors, std::vector<std::string> column_names, std::string source_name)
    : anchors_(std::move(anchors)), column_names_(std::move(column_names)), source_name_(std::move(source_name)) {
    if (anchors_.rows() == 0) {
        throw DataError("knn index '" + source_name_ + "': no anchors");
    }
    if (anchors_.cols() == 0) {
        throw DataError("knn index '" + source_name_ + "': empty column selection");
    }
    if (column_names_.size() != anchors_.cols()) {
        throw DataError("knn index '" + source_name_ + "': column names do not match anchor dimension");
    }
    norms_.resize(anchors_.rows());
    for (std::size_t i = 0; i < anchors_.rows(); ++i) {
        norms_[i] = l2_norm(anchors_.row(i));
        if (!std::isfinite(norms_[i])) {
            throw DataError("knn index '" + source_name_ + "': anchor " + std::to_string(i) + " has non-finite norm");
        }
    }
}

std::vector<double> AnchorIndex::dissimilarities(std::span<const double> query, KnnMeasure measure,
                                                 std::size_t& zero_norm) const {
    if (query.size() != dimension()) {
        throw DataError("knn query of dimension " + std::to_string(query.size()) + " against index '" +
                        source_name_ + "' of dimension " + std::to_string(dimension()));
    }
    const std::size_t m = size();
    const std::size_t d = dimension();
    std::vector<double> out(m);
    zero_norm = 0;
    if (measure == KnnMeasure::l2) {
        for (std::size_t i = 0; i < m; ++i) {
            const auto a = anchors_.row(i);
            double sum = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double diff = query[j] - a[j];
                sum += diff * diff;
            }
            out[i] = std::sqrt(sum);
        }
        return out;
    }
    const double qnorm = l2_norm(query);
    for (std::size_t i = 0; i < m; ++i) {
        if (qnorm == 0.0 || norms_[i] == 0.0) {
            out[i] = 1.0;
            ++zero_norm;
            continue;
        }
        const auto a = anchors_.row(i);
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            dot += query[j] * a[j];
        }
        const double cosine = std::clamp(dot / (qnorm * norms_[i]), -1.0, 1.0);
        out[i] = 1.0 - cosine;
    }
    return out;
}

std::vector<std::size_t> AnchorIndex::nearest(std::span<const double> query, std::size_t k,
                                              KnnMeasure measure) const {
    if (k < 1) {
        throw DataError("knn: k must be at least 1");
    }
    std::size_t zero_norm = 0;
    const auto dist = dissimilarities(query, measure, zero_norm);
    std::vector<std::size_t> order(dist.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t take = std::min(k, order.size());
    auto closer = [&dist](std::size_t a, std::size_t b) {
        return dist[a] < dist[b] || (dist[a] == dist[b] && a < b);
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(), closer);
    order.resize(take);
    return order;
}

KnnResult AnchorIndex::query(std::span<const double> query, std::size_t k, KnnMeasure measure) const {
    if (k < 1) {
        throw DataError("knn: k must be at least 1");
    }
    KnnResult result;
    auto dist = dissimilarities(query, measure, result.zero_norm);
    result.clamped = k > dist.size();
    result.neighbors = std::min(k, dist.size());
    const auto kth = dist.begin() + static_cast<std::ptrdiff_t>(result.neighbors);
    std::partial_sort(dist.begin(), kth, dist.end());
    // Summed in ascending order, so the value does not depend on anchor order.
    double sum = 0.0;
    for (auto it = dist.begin(); it != kth; ++it) {
        sum += *it;
    }
    result.mean_distance = sum / static_cast<double>(result.neighbors);
    return result;
}

AnchorIndex build_index(const LatentResponseSet& features, std::span<const std::size_t> columns) {
    if (columns.empty()) {
        throw DataError("knn index over '" + features.name() + "': empty column selection");
    }
    if (features.size() == 0) {
        throw DataError("knn index over '" + features.name() + "': no rows");
    }
    Matrix anchors(features.size(), columns.size());
    std::vector<std::string> names;
    names.reserve(columns.size());
    for (const auto c : columns) {
        if (c >= features.dimension()) {
            throw DataError("knn index over '" + features.name() + "': column index out of range");
        }
        names.push_back(features.columns()[c].name);
    }
    for (std::size_t i = 0; i < features.size(); ++i) {
        const auto src = features.row(i);
        auto dst = anchors.row(i);
        for (std::size_t j = 0; j < columns.size(); ++j) {
            dst[j] = src[columns[j]];
        }
    }
    return AnchorIndex(std::move(anchors), std::move(names), features.name());
}

double mean_knn_distance(const AnchorIndex& index, std::span<const double> query, std::size_t k,
                         KnnMeasure measure) {
    return index.query(query, k, measure).mean_distance;
}

}  // namespace oodperm
