#pragma once

// Boosted Min-size Sinkhorn: an EM loop over class weights W (d x n, unit
// columns) and the soft allocation P (samples x n).
//
//   E-step  C = 1 - F W, P = min-size Sinkhorn(C), rows renormalized.
//   M-step  W = normalized P-weighted class means, then e epochs of
//           momentum gradient descent on a P-weighted cosine-softmax
//           cross-entropy with learned temperature kappa.
//   Then    labels = argmax of P rows, k = smallest predicted class size.

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsot/preprocess.hpp"
#include "fsot/sinkhorn.hpp"
#include "fsot/types.hpp"

namespace fsot {

enum class Method { ncm, bms, bms_star };

inline constexpr double kKappaFloor = 1e-3;

struct BmsConfig {
    double lambda = 8.5;
    int outer_iters = 20;
    int sinkhorn_iters = 50;
    std::optional<int> epochs;  // unset: picked from shots and mode
    double lr = 0.1;
    double momentum = 0.8;
    double kappa_init = 10.0;
    Method mode = Method::bms;
    std::optional<std::vector<double>> exact_targets;  // bms_star column targets
    bool clamp_support = false;
    bool persist_kappa = true;  // keep kappa across outer iterations

    void validate(Eigen::Index samples, int n_way) const;
};

/// 1-shot: bms 0, bms_star 20. More shots: 40 for both.
int default_epochs(Method mode, int shots);

struct MinSizeEstimate {
    int k = 1;
    bool clamped = false;  // some class received no prediction
};

struct RefineResult {
    MatrixXd weights;
    double kappa = 0.0;
};

/// Column j: L2-normalized mean of class-j support rows.
template <typename Derived>
Matrix<typename Derived::Scalar> init_weights(const Eigen::MatrixBase<Derived>& support, const Labels& labels,
                                              int n_way) {
    using Scalar = typename Derived::Scalar;
    if (static_cast<Eigen::Index>(labels.size()) != support.rows()) {
        throw std::invalid_argument("init_weights: label count does not match support rows");
    }
    Matrix<Scalar> W = Matrix<Scalar>::Zero(support.cols(), n_way);
    std::vector<int> counts(n_way, 0);
    for (Eigen::Index i = 0; i < support.rows(); ++i) {
        const int c = labels[i];
        if (c < 0 || c >= n_way) throw std::invalid_argument("init_weights: label out of range");
        W.col(c) += support.row(i).transpose();
        ++counts[c];
    }
    for (int c = 0; c < n_way; ++c) {
        if (counts[c] == 0) throw std::invalid_argument("init_weights: class " + std::to_string(c) + " has no support");
        const Scalar norm = W.col(c).norm();
        if (!(norm > Scalar(1e-12) * counts[c])) {
            throw std::invalid_argument("init_weights: class " + std::to_string(c) + " has a zero-norm support mean");
        }
        W.col(c) /= norm;
    }
    return W;
}

/// w_j = u_j / |u_j| with u_j the P[:,j]-weighted mean of the feature rows.
template <typename FeatDerived, typename PDerived>
Matrix<typename FeatDerived::Scalar> prototype_update(const Eigen::MatrixBase<FeatDerived>& features,
                                                      const Eigen::MatrixBase<PDerived>& P) {
    using Scalar = typename FeatDerived::Scalar;
    if (features.rows() != P.rows()) throw std::invalid_argument("prototype_update: row count mismatch");
    const auto col_sums = P.colwise().sum().eval();
    if ((col_sums.array() <= Scalar(0)).any()) throw std::invalid_argument("prototype_update: zero column sum");
    Matrix<Scalar> U = features.transpose() * P;
    U.array().rowwise() /= col_sums.array();
    const auto norms = U.colwise().norm().eval();
    if ((norms.array() <= Scalar(0)).any()) throw std::invalid_argument("prototype_update: zero-norm prototype");
    U.array().rowwise() /= norms.array();
    return U;
}

namespace detail {

template <typename Scalar>
Matrix<Scalar> rowwise_softmax(const Matrix<Scalar>& logits) {
    Matrix<Scalar> out = logits;
    out.colwise() -= out.rowwise().maxCoeff();
    out = out.array().exp().matrix();
    out.array().colwise() /= out.rowwise().sum().array();
    return out;
}

}  // namespace detail

/// Soft-target cross-entropy of cosine logits S[i,j] = kappa <w_j, f_i> / |w_j|,
/// averaged over samples. Optionally returns gradients w.r.t. W and kappa.
template <typename Scalar>
Scalar logistic_loss(const Matrix<Scalar>& W, Scalar kappa, const Matrix<Scalar>& features,
                     const Matrix<Scalar>& targets, Matrix<Scalar>* grad_w = nullptr, Scalar* grad_kappa = nullptr) {
    const auto n_samples = static_cast<Scalar>(features.rows());
    const Vector<Scalar> inv_norms = W.colwise().norm().cwiseInverse().transpose();
    const Matrix<Scalar> A = features * W;  // <w_j, f_i>
    const Matrix<Scalar> cos = A * inv_norms.asDiagonal();
    const Matrix<Scalar> S = kappa * cos;

    Vector<Scalar> lse = S.rowwise().maxCoeff();
    const Vector<Scalar> shifted =
        ((S.colwise() - lse).array().exp().rowwise().sum().log()).matrix();
    lse += shifted;
    const Scalar loss = -((S.colwise() - lse).array() * targets.array()).sum() / n_samples;

    if (grad_w != nullptr || grad_kappa != nullptr) {
        // dL/dS = (softmax(S) * rowmass - P) / N
        const Vector<Scalar> row_mass = targets.rowwise().sum();
        const Matrix<Scalar> G =
            ((detail::rowwise_softmax(S).array().colwise() * row_mass.array()) - targets.array()).matrix() / n_samples;
        if (grad_kappa != nullptr) *grad_kappa = (G.array() * cos.array()).sum();
        if (grad_w != nullptr) {
            // dS_ij/dw_j = kappa (f_i / |w_j| - A_ij w_j / |w_j|^3)
            const Vector<Scalar> ga = (G.array() * A.array()).colwise().sum().transpose();
            Matrix<Scalar> grad = features.transpose() * G;
            for (Eigen::Index j = 0; j < W.cols(); ++j) {
                const Scalar inv = inv_norms(j);
                grad.col(j) = kappa * inv * (grad.col(j) - ga(j) * inv * inv * W.col(j));
            }
            *grad_w = std::move(grad);
        }
    }
    return loss;
}

/// `epochs` full-batch momentum steps on (W, kappa); W columns are projected
/// back to the unit sphere after every epoch and kappa is kept >= 1e-3.
/// Targets are row-normalized first. epochs == 0 returns the inputs as-is.
template <typename Scalar>
RefineResult logistic_refine(const Matrix<Scalar>& W, double kappa, const Matrix<Scalar>& features,
                             const Matrix<Scalar>& P, int epochs, double lr, double momentum) {
    if (epochs < 0) throw std::invalid_argument("logistic_refine: epochs must be >= 0");
    if (epochs == 0) return {W.template cast<double>(), kappa};

    const Matrix<Scalar> targets = row_normalize_final(P);
    Matrix<Scalar> weights = W;
    Scalar temp = static_cast<Scalar>(kappa);
    Matrix<Scalar> vel_w = Matrix<Scalar>::Zero(W.rows(), W.cols());
    Scalar vel_kappa = 0;
    Matrix<Scalar> grad_w;
    Scalar grad_kappa = 0;

    for (int e = 0; e < epochs; ++e) {
        const Scalar loss = logistic_loss(weights, temp, features, targets, &grad_w, &grad_kappa);
        if (!std::isfinite(static_cast<double>(loss)) || !grad_w.allFinite() || !std::isfinite(grad_kappa)) {
            throw NumericalError("logistic_refine: non-finite loss at epoch " + std::to_string(e) +
                                 "; learning rate too large");
        }
        vel_w = Scalar(momentum) * vel_w - Scalar(lr) * grad_w;
        vel_kappa = Scalar(momentum) * vel_kappa - Scalar(lr) * grad_kappa;
        weights += vel_w;
        temp += vel_kappa;
        if (temp <= Scalar(0)) temp = Scalar(kKappaFloor);
        weights.colwise().normalize();
    }
    return {weights.template cast<double>(), static_cast<double>(temp)};
}

/// Row-wise argmax; ties go to the lowest class index.
template <typename Derived>
Labels predict(const Eigen::MatrixBase<Derived>& P) {
    Labels out(P.rows());
    for (Eigen::Index i = 0; i < P.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index j = 1; j < P.cols(); ++j) {
            if (P(i, j) > P(i, best)) best = j;
        }
        out[i] = static_cast<int>(best);
    }
    return out;
}

/// Smallest predicted class size; 0 is clamped to 1 and flagged.
MinSizeEstimate estimate_min_size(const Labels& labels, int n_way);

struct BmsTrace {
    std::vector<int> k_history;
    int clamp_events = 0;
    double final_kappa = 0.0;
};

/// Runs the full loop on a preprocessed episode and returns query labels.
Labels run_bms(const ProcessedEpisode& episode, const BmsConfig& cfg, BmsTrace* trace = nullptr);

}  // namespace fsot
