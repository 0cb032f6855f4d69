#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fsot/features.hpp"

namespace fsot::stats {

/// Smallest sample size accepted by the omnibus test.
inline constexpr std::size_t kMinNormalitySamples = 20;

struct NormalityResult {
    double k2 = 0.0;       ///< omnibus statistic Z1^2 + Z2^2
    double p_value = 1.0;  ///< chi-square(2) survival at k2
    std::size_t n_samples = 0;
    double z_skew = 0.0;
    double z_kurtosis = 0.0;
};

/// g1 = m3 / m2^(3/2) from biased central moments. Needs >= 3 samples and
/// nonzero variance.
[[nodiscard]] double sample_skewness(std::span<const double> xs);

/// b2 = m4 / m2^2 (not excess). Needs >= 4 samples and nonzero variance.
[[nodiscard]] double sample_kurtosis(std::span<const double> xs);

/// D'Agostino-Pearson K^2 omnibus test of normality.
[[nodiscard]] NormalityResult dagostino_pearson(std::span<const double> xs);

enum class Transform { none, power, power_normalize };

struct CellResult {
    std::uint32_t class_id = 0;
    int dim_index = 0;
    NormalityResult test;
    bool pass = false;  // fail-to-reject at alpha
};

struct PassRate {
    double rate = 0.0;
    std::vector<CellResult> cells;
};

/// Runs the omnibus test for every (class, dimension) cell of the store,
/// after the optional transform, and reports the fraction with p > alpha.
[[nodiscard]] PassRate gaussianity_pass_rate(const FeatureStore& store, Transform transform = Transform::none,
                                             double alpha = 1e-3, double beta = 0.5, double epsilon = 1e-6);

/// Per-cell rows: class_id, dim_index, k2, p, pass.
[[nodiscard]] std::string cells_to_tsv(const PassRate& result);

/// Equal-width histogram over [lo, hi]; values outside are dropped.
[[nodiscard]] std::vector<std::size_t> histogram(std::span<const double> xs, std::size_t bins, double lo, double hi);

}  // namespace fsot::stats
