#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "fsot/bms.hpp"
#include "fsot/features.hpp"
#include "fsot/preprocess.hpp"
#include "fsot/rng.hpp"
#include "fsot/types.hpp"

namespace fsot::test {

inline MatrixXd random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    MatrixXd m(rows, cols);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.normal();
    return m;
}

inline MatrixXd random_unit_rows(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    MatrixXd m = random_matrix(rng, rows, cols);
    m.rowwise().normalize();
    return m;
}

inline MatrixXd random_uniform(Rng& rng, Eigen::Index rows, Eigen::Index cols, double lo, double hi) {
    MatrixXd m(rows, cols);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = lo + (hi - lo) * rng.uniform();
    return m;
}

// Episode of `n` well-separated classes: class c sits near 10 * e_c.
inline ProcessedEpisode separated_episode(Rng& rng, int n, int s, int q, int dim, double noise) {
    ProcessedEpisode ep;
    ep.n_way = n;
    ep.shots = s;
    ep.support.resize(n * s, dim);
    ep.query.resize(n * q, dim);
    for (int c = 0; c < n; ++c) {
        VectorXd center = VectorXd::Zero(dim);
        center(c) = 1.0;
        for (int k = 0; k < s; ++k) {
            ep.support.row(c * s + k) = (center + noise * random_matrix(rng, dim, 1)).normalized().transpose();
            ep.support_labels.push_back(c);
        }
        for (int k = 0; k < q; ++k) {
            ep.query.row(c * q + k) = (center + noise * random_matrix(rng, dim, 1)).normalized().transpose();
            ep.hidden_labels.push_back(c);
        }
    }
    return ep;
}

// Two-sided entropic OT in the log domain: log P = f_i + g_j - lambda C_ij,
// alternating exact row and column projections until both marginals hold
// to `tol`. Independent of the linear-domain min-size solver.
inline MatrixXd log_domain_sinkhorn(const MatrixXd& C, const VectorXd& p, const VectorXd& q, double lambda,
                                    double tol = 1e-10, int max_iters = 100000) {
    const Eigen::Index rows = C.rows();
    const Eigen::Index cols = C.cols();
    VectorXd f = VectorXd::Zero(rows);
    VectorXd g = VectorXd::Zero(cols);
    auto logsumexp = [](const VectorXd& v) {
        const double m = v.maxCoeff();
        return m + std::log((v.array() - m).exp().sum());
    };
    MatrixXd P;
    for (int it = 0; it < max_iters; ++it) {
        for (Eigen::Index i = 0; i < rows; ++i) {
            f(i) = std::log(p(i)) - logsumexp((g - lambda * C.row(i).transpose()).eval());
        }
        for (Eigen::Index j = 0; j < cols; ++j) g(j) = std::log(q(j)) - logsumexp((f - lambda * C.col(j)).eval());
        P = ((-lambda * C).colwise() + f).rowwise() + g.transpose();
        P = P.array().exp().matrix();
        if ((P.rowwise().sum() - p).cwiseAbs().maxCoeff() < tol) break;
    }
    return P;
}

// Random row-stochastic targets bounded away from zero.
inline MatrixXd random_targets(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    MatrixXd P(rows, cols);
    for (Eigen::Index k = 0; k < P.size(); ++k) P.data()[k] = 0.05 + rng.uniform();
    P.array().colwise() /= P.rowwise().sum().array();
    return P;
}

// Worst relative gap between the analytic loss gradient and central finite
// differences (step h) on one random 8 x 6 instance with 3 classes. W is
// scaled off the unit sphere so the norm terms are exercised.
inline double max_gradient_error(std::uint64_t seed, double h = 1e-5) {
    Rng rng(seed);
    const MatrixXd F = random_unit_rows(rng, 8, 6);
    MatrixXd W = random_unit_rows(rng, 3, 6).transpose();
    W *= 1.3;
    const MatrixXd P = random_targets(rng, 8, 3);
    const double kappa = 2.0 + 3.0 * rng.uniform();

    MatrixXd grad_w;
    double grad_kappa = 0.0;
    logistic_loss(W, kappa, F, P, &grad_w, &grad_kappa);

    auto rel = [](double fd, double analytic) { return std::abs(fd - analytic) / std::max(std::abs(fd), 1e-3); };
    double worst = 0.0;
    for (Eigen::Index k = 0; k < W.size(); ++k) {
        MatrixXd plus = W, minus = W;
        plus.data()[k] += h;
        minus.data()[k] -= h;
        const double fd = (logistic_loss(plus, kappa, F, P) - logistic_loss(minus, kappa, F, P)) / (2 * h);
        worst = std::max(worst, rel(fd, grad_w.data()[k]));
    }
    const double fd_kappa = (logistic_loss(W, kappa + h, F, P) - logistic_loss(W, kappa - h, F, P)) / (2 * h);
    return std::max(worst, rel(fd_kappa, grad_kappa));
}

}  // namespace fsot::test
