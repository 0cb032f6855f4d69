#pragma once

// Entropic optimal-transport allocation of samples to classes.
//
// Rows of the allocation matrix P are samples, columns are classes. The
// min-size variant always rescales rows to their target mass but only
// rescales columns whose mass has fallen below the column target, so every
// class receives at least q[j] mass without forcing exactly q[j].

#include <stdexcept>

#include "fsot/types.hpp"

namespace fsot {

struct Marginals {
    VectorXd rows;  // p, one entry per sample
    VectorXd cols;  // q, one entry per class

    /// p = 1, q = k * 1.
    static Marginals min_size(Eigen::Index samples, Eigen::Index classes, double k) {
        return {VectorXd::Ones(samples), VectorXd::Constant(classes, k)};
    }
};

/// C[i,j] = 1 - <w_j, f_i> for unit-norm feature rows and unit-norm columns of W.
template <typename FeatDerived, typename WDerived>
Matrix<typename FeatDerived::Scalar> cost_matrix(const Eigen::MatrixBase<FeatDerived>& features,
                                                 const Eigen::MatrixBase<WDerived>& weights,
                                                 double norm_tol = 1e-6) {
    using Scalar = typename FeatDerived::Scalar;
    if (features.cols() != weights.rows()) throw std::invalid_argument("cost_matrix: dimension mismatch");
    if (((features.rowwise().norm().array() - Scalar(1)).abs() > Scalar(norm_tol)).any()) {
        throw std::invalid_argument("cost_matrix: feature rows must be unit-norm");
    }
    if (((weights.colwise().norm().array() - Scalar(1)).abs() > Scalar(norm_tol)).any()) {
        throw std::invalid_argument("cost_matrix: weight columns must be unit-norm");
    }
    return (Scalar(1) - (features * weights).array()).matrix();
}

/// Min-size Sinkhorn: P = rowwise softmax(-lambda C), then `iters` rounds of
/// (scale rows to p, scale columns with sum < q[j] up to q[j]).
template <typename Derived>
Matrix<typename Derived::Scalar> min_size_sinkhorn(const Eigen::MatrixBase<Derived>& cost, const Marginals& marginals,
                                                   double lambda, int iters = 50) {
    using Scalar = typename Derived::Scalar;
    if (!(lambda > 0.0)) throw std::invalid_argument("min_size_sinkhorn: lambda must be positive");
    if (iters < 1) throw std::invalid_argument("min_size_sinkhorn: iters must be >= 1");
    if (marginals.rows.size() != cost.rows() || marginals.cols.size() != cost.cols()) {
        throw std::invalid_argument("min_size_sinkhorn: marginal sizes do not match the cost matrix");
    }
    if ((marginals.rows.array() <= 0.0).any() || (marginals.cols.array() <= 0.0).any()) {
        throw std::invalid_argument("min_size_sinkhorn: marginals must be positive");
    }

    const auto p = marginals.rows.template cast<Scalar>().array();
    const auto q = marginals.cols.template cast<Scalar>().array();

    // Row-wise softmax with per-row max subtraction.
    Matrix<Scalar> logits = Scalar(-lambda) * cost;
    logits.colwise() -= logits.rowwise().maxCoeff();
    Matrix<Scalar> P = logits.array().exp().matrix();
    P.array().colwise() /= P.rowwise().sum().array();

    for (int it = 0; it < iters; ++it) {
        P.array().colwise() *= p / P.rowwise().sum().array();
        const auto col_sums = P.colwise().sum().eval();
        for (Eigen::Index j = 0; j < P.cols(); ++j) {
            if (col_sums(j) < q(j)) P.col(j) *= q(j) / col_sums(j);
        }
    }
    if (!P.allFinite() || (P.array() <= Scalar(0)).any()) {
        throw NumericalError("min_size_sinkhorn: non-finite or vanishing allocation; lambda too large for the cost scale");
    }
    return P;
}

/// Rescales every row of P to its target mass.
template <typename Derived>
Matrix<typename Derived::Scalar> row_normalize_final(const Eigen::MatrixBase<Derived>& P, const VectorXd& row_targets) {
    using Scalar = typename Derived::Scalar;
    if (row_targets.size() != P.rows()) throw std::invalid_argument("row_normalize_final: size mismatch");
    Matrix<Scalar> out = P;
    out.array().colwise() *= row_targets.template cast<Scalar>().array() / out.rowwise().sum().array();
    return out;
}

template <typename Derived>
Matrix<typename Derived::Scalar> row_normalize_final(const Eigen::MatrixBase<Derived>& P) {
    return row_normalize_final(P, VectorXd::Ones(P.rows()));
}

/// -sum P log P.
template <typename Derived>
typename Derived::Scalar allocation_entropy(const Eigen::MatrixBase<Derived>& P) {
    return -(P.array() * P.array().log()).sum();
}

}  // namespace fsot
