#include "fsot/bms.hpp"

#include <numeric>

namespace fsot {

void BmsConfig::validate(Eigen::Index samples, int n_way) const {
    if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
    if (outer_iters < 0) throw std::invalid_argument("outer_iters must be >= 0");
    if (sinkhorn_iters < 1) throw std::invalid_argument("sinkhorn_iters must be >= 1");
    if (epochs && *epochs < 0) throw std::invalid_argument("epochs must be >= 0");
    if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");
    if (!(kappa_init > 0.0)) throw std::invalid_argument("kappa must be positive");
    if (mode == Method::bms_star) {
        if (!exact_targets) throw std::invalid_argument("bms_star requires exact per-class targets");
        if (static_cast<int>(exact_targets->size()) != n_way) {
            throw std::invalid_argument("bms_star targets: expected " + std::to_string(n_way) + " entries, got " +
                                        std::to_string(exact_targets->size()));
        }
        const double total = std::accumulate(exact_targets->begin(), exact_targets->end(), 0.0);
        if (std::abs(total - static_cast<double>(samples)) > 1e-9) {
            throw std::invalid_argument("bms_star targets must sum to the " + std::to_string(samples) +
                                        " episode samples (got " + std::to_string(total) + ")");
        }
        for (double t : *exact_targets) {
            if (!(t > 0.0)) throw std::invalid_argument("bms_star targets must be positive");
        }
    }
}

int default_epochs(Method mode, int shots) {
    if (shots <= 1) return mode == Method::bms_star ? 20 : 0;
    return 40;
}

MinSizeEstimate estimate_min_size(const Labels& labels, int n_way) {
    if (n_way <= 0) throw std::invalid_argument("estimate_min_size: n_way must be positive");
    std::vector<int> counts(n_way, 0);
    for (int label : labels) {
        if (label < 0 || label >= n_way) throw std::invalid_argument("estimate_min_size: label out of range");
        ++counts[label];
    }
    const int k = *std::min_element(counts.begin(), counts.end());
    if (k == 0) return {1, true};
    return {k, false};
}

Labels run_bms(const ProcessedEpisode& episode, const BmsConfig& cfg, BmsTrace* trace) {
    const Eigen::Index l = episode.support.rows();
    const Eigen::Index total = episode.size();
    const int n = episode.n_way;
    cfg.validate(total, n);

    const MatrixXd features = episode.stacked();
    MatrixXd W = init_weights(episode.support, episode.support_labels, n);
    int k = episode.shots;
    double kappa = cfg.kappa_init;
    const int epochs = cfg.epochs.value_or(default_epochs(cfg.mode, episode.shots));

    VectorXd col_targets = VectorXd::Constant(n, k);
    if (cfg.mode == Method::bms_star) col_targets = Eigen::Map<const VectorXd>(cfg.exact_targets->data(), n);

    if (trace != nullptr) *trace = {};
    if (cfg.outer_iters == 0) {
        // No E-step ever runs: classify by cosine to the support prototypes.
        const Labels all = predict(features * W);
        return Labels(all.begin() + l, all.end());
    }

    Labels labels;
    for (int iter = 0; iter < cfg.outer_iters; ++iter) {
        const MatrixXd C = cost_matrix(features, W);
        if (cfg.mode == Method::bms) col_targets.setConstant(k);
        MatrixXd P = min_size_sinkhorn(C, Marginals{VectorXd::Ones(total), col_targets}, cfg.lambda,
                                       cfg.sinkhorn_iters);
        P = row_normalize_final(P);
        if (cfg.clamp_support) {
            P.topRows(l).setZero();
            for (Eigen::Index i = 0; i < l; ++i) P(i, episode.support_labels[i]) = 1.0;
        }

        W = prototype_update(features, P);
        if (!cfg.persist_kappa) kappa = cfg.kappa_init;
        auto refined = logistic_refine<double>(W, kappa, features, P, epochs, cfg.lr, cfg.momentum);
        W = std::move(refined.weights);
        kappa = refined.kappa;

        labels = predict(P);
        if (cfg.mode == Method::bms) {
            const MinSizeEstimate est = estimate_min_size(labels, n);
            k = est.k;
            if (trace != nullptr) {
                trace->k_history.push_back(k);
                trace->clamp_events += est.clamped ? 1 : 0;
            }
        }
    }
    if (trace != nullptr) trace->final_kappa = kappa;
    return Labels(labels.begin() + l, labels.end());
}

}  // namespace fsot
