#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fsot/bms.hpp"
#include "fsot/features.hpp"
#include "fsot/preprocess.hpp"
#include "fsot/types.hpp"

namespace fsot {

/// Nearest class mean: each query goes to the class whose (unnormalized)
/// support centroid is closest in L2. Ties go to the lowest class index.
template <typename SupportDerived, typename QueryDerived>
Labels ncm_classify(const Eigen::MatrixBase<SupportDerived>& support, const Labels& support_labels,
                    const Eigen::MatrixBase<QueryDerived>& query, int n_way) {
    using Scalar = typename SupportDerived::Scalar;
    Matrix<Scalar> centroids = Matrix<Scalar>::Zero(n_way, support.cols());
    std::vector<int> counts(n_way, 0);
    for (Eigen::Index i = 0; i < support.rows(); ++i) {
        centroids.row(support_labels[i]) += support.row(i);
        ++counts[support_labels[i]];
    }
    for (int c = 0; c < n_way; ++c) {
        if (counts[c] == 0) throw std::invalid_argument("ncm_classify: class " + std::to_string(c) + " has no support");
        centroids.row(c) /= Scalar(counts[c]);
    }
    Labels out(query.rows());
    for (Eigen::Index i = 0; i < query.rows(); ++i) {
        Eigen::Index best = 0;
        Scalar best_dist = (centroids.row(0) - query.row(i)).squaredNorm();
        for (Eigen::Index c = 1; c < n_way; ++c) {
            const Scalar dist = (centroids.row(c) - query.row(i)).squaredNorm();
            if (dist < best_dist) {
                best = c;
                best_dist = dist;
            }
        }
        out[i] = static_cast<int>(best);
    }
    return out;
}

inline Labels ncm_classify(const ProcessedEpisode& episode) {
    return ncm_classify(episode.support, episode.support_labels, episode.query, episode.n_way);
}

/// Runs `method` on one preprocessed episode and returns query labels.
/// For bms_star without explicit targets, balanced s+q targets are used.
Labels classify_episode(const ProcessedEpisode& episode, Method method, const BmsConfig& cfg);

/// Fraction of query labels equal to ground truth.
double query_accuracy(const Labels& predicted, const Labels& truth);

struct EvalOptions {
    EpisodeSpec spec;
    PreprocessConfig prep;
    Method method = Method::ncm;
    BmsConfig bms;
    int episodes = 10000;
    std::uint64_t seed = 0;
    int threads = 1;
};

struct EvalReport {
    Method method = Method::ncm;
    int episodes = 0;
    double mean_accuracy = 0.0;
    double ci95 = 0.0;
    double mean_episode_seconds = 0.0;
    std::uint64_t seed = 0;
    EvalOptions options;                  // fully resolved configuration
    std::vector<double> episode_accuracy;  // in episode-index order
};

/// Error carrying the seed of the episode that failed.
class EpisodeFailure : public std::runtime_error {
public:
    EpisodeFailure(std::size_t index, std::uint64_t seed, const std::string& what)
        : std::runtime_error("episode " + std::to_string(index) + " (seed " + std::to_string(seed) + ") failed: " + what),
          index_(index), seed_(seed) {}
    std::size_t index() const { return index_; }
    std::uint64_t seed() const { return seed_; }

private:
    std::size_t index_;
    std::uint64_t seed_;
};

/// Monte-Carlo evaluation: episode i uses seed episode_seed(seed, i). The
/// report is independent of the thread count.
EvalReport evaluate(const FeatureStore& store, const FeatureStore* base_store, const EvalOptions& options);

std::string method_name(Method method);
Method parse_method(const std::string& name);
std::string center_name(CenterMode mode);
CenterMode parse_center(const std::string& name);

/// JSON object; timing is left out unless requested so reports for one seed
/// are byte-identical.
std::string report_to_json(const EvalReport& report, bool include_timing = false);

/// method, n, s, q, N, mean, ci95, secs_per_episode, seed
std::string report_to_tsv(const EvalReport& report);

}  // namespace fsot
