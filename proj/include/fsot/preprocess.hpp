#pragma once

// PEME feature preprocessing: Power transform, Euclidean normalization,
// Mean subtraction, Euclidean normalization. Followed optionally by a QR
// re-expression of the episode rows in an orthonormal basis of their span.
//
// All functions act row-wise on (samples x dims) matrices and are templated
// on the scalar type.

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

#include "fsot/features.hpp"
#include "fsot/types.hpp"

namespace fsot {

enum class CenterMode { base_mean, novel_mean, none };

struct PreprocessConfig {
    double beta = 0.5;
    double epsilon = 1e-6;
    CenterMode center_mode = CenterMode::novel_mean;
    bool apply_qr = true;
    // When set, the base center is the mean of raw base vectors instead of
    // their power-transformed and normalized images.
    bool base_center_raw = false;

    void validate() const {
        if (beta == 0.0 || !std::isfinite(beta)) throw std::invalid_argument("beta must be finite and nonzero");
        if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
    }
};

struct ProcessedEpisode {
    MatrixXd support;
    Labels support_labels;
    MatrixXd query;
    Labels hidden_labels;
    int n_way = 0;
    int shots = 0;

    Eigen::Index dim() const { return support.cols(); }
    Eigen::Index size() const { return support.rows() + query.rows(); }
    MatrixXd stacked() const {
        MatrixXd all(size(), dim());
        all << support, query;
        return all;
    }
};

/// Elementwise (v + eps)^beta. Entries must be nonnegative.
template <typename Derived>
Matrix<typename Derived::Scalar> power_transform(const Eigen::MatrixBase<Derived>& v, double beta, double epsilon) {
    using Scalar = typename Derived::Scalar;
    if ((v.array() < Scalar(0)).any()) throw std::invalid_argument("power_transform: negative input entry");
    return (v.array() + Scalar(epsilon)).pow(Scalar(beta)).matrix();
}

/// Scales every row to unit Euclidean norm. Zero rows are an error.
template <typename Derived>
Matrix<typename Derived::Scalar> euclidean_normalize(const Eigen::MatrixBase<Derived>& rows) {
    using Scalar = typename Derived::Scalar;
    const auto norms = rows.rowwise().norm().eval();
    if ((norms.array() <= Scalar(0)).any()) throw std::invalid_argument("euclidean_normalize: zero vector");
    return norms.cwiseInverse().asDiagonal() * rows;
}

/// Subtracts the projection center from every row.
template <typename Derived, typename CenterDerived>
Matrix<typename Derived::Scalar> mean_subtract(const Eigen::MatrixBase<Derived>& rows,
                                               const Eigen::MatrixBase<CenterDerived>& center) {
    if (rows.cols() != center.size()) {
        throw std::invalid_argument("mean_subtract: dimension mismatch (" + std::to_string(rows.cols()) + " vs " +
                                    std::to_string(center.size()) + ")");
    }
    return rows.rowwise() - center.derived().reshaped().transpose();
}

/// First half of PEME (P then E).
template <typename Derived>
Matrix<typename Derived::Scalar> pe_transform(const Eigen::MatrixBase<Derived>& rows, double beta, double epsilon) {
    return euclidean_normalize(power_transform(rows, beta, epsilon));
}

/// Re-expresses the rows in an orthonormal basis of their span.
///
/// With rows^T = Q R (thin Householder QR of the d x N transpose), rows = R^T Q^T,
/// so R^T holds the coordinates. Inner products between rows are preserved;
/// the output has min(d, N) columns.
template <typename Derived>
Matrix<typename Derived::Scalar> qr_reduce(const Eigen::MatrixBase<Derived>& rows) {
    using Scalar = typename Derived::Scalar;
    if (!rows.allFinite()) throw std::invalid_argument("qr_reduce: non-finite input");
    const Eigen::Index reduced = std::min(rows.rows(), rows.cols());
    Eigen::HouseholderQR<Matrix<Scalar>> qr(rows.transpose());
    Matrix<Scalar> r = qr.matrixQR().topRows(reduced).template triangularView<Eigen::Upper>();
    return r.transpose();
}

/// Mean of all PE-processed base vectors (or of raw base vectors when
/// `cfg.base_center_raw` is set).
VectorXd base_projection_center(const FeatureStore& base, const PreprocessConfig& cfg);

/// Mean of the PE-processed support and query rows of an episode.
VectorXd novel_projection_center(const Episode& episode, const PreprocessConfig& cfg);

/// Full PEME chain, then optional QR. `base_center` is required when
/// `cfg.center_mode` is base_mean.
ProcessedEpisode peme(const Episode& episode, const PreprocessConfig& cfg,
                      const std::optional<VectorXd>& base_center = std::nullopt);

}  // namespace fsot
