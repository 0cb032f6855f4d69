#include "fsot/preprocess.hpp"

namespace fsot {

VectorXd base_projection_center(const FeatureStore& base, const PreprocessConfig& cfg) {
    cfg.validate();
    VectorXd sum = VectorXd::Zero(base.dim());
    for (const auto& block : base.classes()) {
        const MatrixXd raw = block.vectors.cast<double>();
        if (cfg.base_center_raw) {
            sum += raw.colwise().sum().transpose();
        } else {
            sum += pe_transform(raw, cfg.beta, cfg.epsilon).colwise().sum().transpose();
        }
    }
    return sum / static_cast<double>(base.total_vectors());
}

VectorXd novel_projection_center(const Episode& episode, const PreprocessConfig& cfg) {
    cfg.validate();
    const Eigen::Index total = episode.support.rows() + episode.query.rows();
    VectorXd sum = pe_transform(episode.support, cfg.beta, cfg.epsilon).colwise().sum().transpose();
    sum += pe_transform(episode.query, cfg.beta, cfg.epsilon).colwise().sum().transpose();
    return sum / static_cast<double>(total);
}

ProcessedEpisode peme(const Episode& episode, const PreprocessConfig& cfg, const std::optional<VectorXd>& base_center) {
    cfg.validate();
    const Eigen::Index l = episode.support.rows();
    const Eigen::Index u = episode.query.rows();

    MatrixXd rows(l + u, episode.dim());
    rows << episode.support, episode.query;
    rows = pe_transform(rows, cfg.beta, cfg.epsilon);

    switch (cfg.center_mode) {
        case CenterMode::base_mean:
            if (!base_center) throw std::invalid_argument("base_mean centering requires a base store center");
            rows = mean_subtract(rows, *base_center);
            break;
        case CenterMode::novel_mean:
            rows = mean_subtract(rows, rows.colwise().mean());
            break;
        case CenterMode::none:
            break;
    }
    rows = euclidean_normalize(rows);
    if (cfg.apply_qr) rows = qr_reduce(rows);

    ProcessedEpisode out;
    out.support = rows.topRows(l);
    out.query = rows.bottomRows(u);
    out.support_labels = episode.support_labels;
    out.hidden_labels = episode.hidden_labels;
    out.n_way = episode.n_way;
    out.shots = episode.shots;
    return out;
}

}  // namespace fsot
