#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

#include "vmoe/errors.hpp"
#include "vmoe/types.hpp"

// Expert-diversity analytics: pairwise cosine similarity of the experts'
// chosen-token embeddings, the orthogonality score O = 1 - mean upper-triangle
// similarity, and trailing-window smoothing of per-step scores.
namespace vmoe {

// Raw and smoothed orthogonality scores per generation step.
struct OrthogonalityTrace {
    std::vector<double> raw;
    std::vector<double> smoothed;
    int window = 10;
};

// Pairwise cosine similarity of the rows of `rows` (one embedding per row).
// Off-diagonal entries are clamped to [-1, 1]; the diagonal is exactly 1.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>
cosine_similarity_matrix(const Eigen::MatrixBase<Derived>& rows) {
    using Scalar = typename Derived::Scalar;
    using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
    const Eigen::Index n = rows.rows();
    if (n < 2)
        throw MetricError("cosine_similarity_matrix: need at least 2 embeddings");
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> norms = rows.rowwise().norm();
    for (Eigen::Index i = 0; i < n; ++i)
        if (norms[i] == Scalar(0))
            throw MetricError("cosine_similarity_matrix: zero-norm embedding for expert " +
                              std::to_string(i));
    Matrix unit = norms.cwiseInverse().asDiagonal() * rows.derived();
    Matrix sim = unit * unit.transpose();
    sim = sim.cwiseMin(Scalar(1)).cwiseMax(Scalar(-1));
    sim.diagonal().setConstant(Scalar(1));
    return sim;
}

// Mean of the strictly-upper triangle, diagonal excluded. Including the
// diagonal would floor the orthogonality score by a 1/n-dependent bias.
template <typename Derived>
double mean_upper_triangle(const Eigen::MatrixBase<Derived>& matrix) {
    const Eigen::Index n = matrix.rows();
    if (n < 2 || matrix.cols() != n)
        throw MetricError("mean_upper_triangle: need a square matrix, n >= 2");
    double sum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i + 1; j < n; ++j)
            sum += static_cast<double>(matrix(i, j));
    return sum / (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
}

// O = 1 - mean upper-triangle similarity. High O means diverse experts.
template <typename Derived>
double orthogonality_score(const Eigen::MatrixBase<Derived>& matrix) {
    return 1.0 - mean_upper_triangle(matrix);
}

// Stacks per-expert embeddings into an n x d matrix (one embedding per row).
inline Eigen::MatrixXd stack_embeddings(const std::vector<EmbeddingVector>& embeddings) {
    if (embeddings.empty())
        throw MetricError("stack_embeddings: empty embedding list");
    const Eigen::Index d = embeddings.front().size();
    Eigen::MatrixXd rows(static_cast<Eigen::Index>(embeddings.size()), d);
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        if (embeddings[i].size() != d)
            throw MetricError("stack_embeddings: embedding dimension mismatch at row " +
                              std::to_string(i));
        rows.row(static_cast<Eigen::Index>(i)) = embeddings[i].transpose();
    }
    return rows;
}

inline SimilarityRecord make_similarity_record(const std::vector<EmbeddingVector>& embeddings,
                                               int step) {
    SimilarityRecord record;
    record.step = step;
    record.matrix = cosine_similarity_matrix(stack_embeddings(embeddings));
    record.mean_upper = mean_upper_triangle(record.matrix);
    record.orthogonality = 1.0 - record.mean_upper;
    return record;
}

// Trailing rolling mean with a truncated prefix:
// out[t] = mean(series[max(0, t - window + 1) .. t]).
inline std::vector<double> rolling_average(const std::vector<double>& series,
                                           int window) {
    if (window < 1)
        throw ConfigError("rolling_average: window must be >= 1");
    std::vector<double> out(series.size());
    for (std::size_t t = 0; t < series.size(); ++t) {
        const std::size_t lo =
            t + 1 >= static_cast<std::size_t>(window)
                ? t + 1 - static_cast<std::size_t>(window)
                : 0;
        double sum = 0.0;
        for (std::size_t i = lo; i <= t; ++i)
            sum += series[i];
        out[t] = sum / static_cast<double>(t - lo + 1);
    }
    return out;
}

inline OrthogonalityTrace make_orthogonality_trace(std::vector<double> raw,
                                                   int window = 10) {
    OrthogonalityTrace trace;
    trace.window = window;
    trace.smoothed = rolling_average(raw, window);
    trace.raw = std::move(raw);
    return trace;
}

// Renders the similarity matrix as a standalone SVG heatmap. Cell fill is a
// linear ramp over similarity in [-1, 1], darker = more similar; cells are
// annotated with 2-decimal values when n <= 8.
void heatmap_export(const SimilarityRecord& record, const std::string& path);

} // namespace vmoe
