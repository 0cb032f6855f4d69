#include "fsot/stats.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "fsot/preprocess.hpp"

namespace fsot::stats {

namespace {

struct Moments {
    double m2 = 0.0;
    double m3 = 0.0;
    double m4 = 0.0;
};

Moments central_moments(std::span<const double> xs) {
    const auto n = static_cast<double>(xs.size());
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= n;
    Moments m;
    for (double x : xs) {
        const double d = x - mean;
        const double d2 = d * d;
        m.m2 += d2;
        m.m3 += d2 * d;
        m.m4 += d2 * d2;
    }
    m.m2 /= n;
    m.m3 /= n;
    m.m4 /= n;
    // Relative floor: round-off on constant input leaves m2 ~ eps^2 * mean^2.
    if (!(m.m2 > 1e-28 * (mean * mean + 1.0))) throw std::invalid_argument("constant input has no defined shape");
    return m;
}

// Skewness transform (D'Agostino 1970): Johnson S_U approximation to the
// null distribution of sqrt(b1).
double skew_z(double g1, double n) {
    const double y = g1 * std::sqrt((n + 1.0) * (n + 3.0) / (6.0 * (n - 2.0)));
    const double beta2 = 3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0) /
                         ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0));
    const double w2 = -1.0 + std::sqrt(2.0 * (beta2 - 1.0));
    const double delta = 1.0 / std::sqrt(0.5 * std::log(w2));
    const double alpha = std::sqrt(2.0 / (w2 - 1.0));
    const double t = y / alpha;
    return delta * std::log(t + std::sqrt(t * t + 1.0));
}

// Kurtosis transform (Anscombe & Glynn 1983): Wilson-Hilferty cube root on a
// standardized b2.
double kurtosis_z(double b2, double n) {
    const double mean = 3.0 * (n - 1.0) / (n + 1.0);
    const double var = 24.0 * n * (n - 2.0) * (n - 3.0) / ((n + 1.0) * (n + 1.0) * (n + 3.0) * (n + 5.0));
    const double x = (b2 - mean) / std::sqrt(var);
    const double sqrt_beta1 = 6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0)) *
                              std::sqrt(6.0 * (n + 3.0) * (n + 5.0) / (n * (n - 2.0) * (n - 3.0)));
    const double a = 6.0 + 8.0 / sqrt_beta1 * (2.0 / sqrt_beta1 + std::sqrt(1.0 + 4.0 / (sqrt_beta1 * sqrt_beta1)));
    const double term1 = 1.0 - 2.0 / (9.0 * a);
    const double denom = 1.0 + x * std::sqrt(2.0 / (a - 4.0));
    const double term2 = std::copysign(std::cbrt(std::abs((1.0 - 2.0 / a) / denom)), denom);
    return (term1 - term2) / std::sqrt(2.0 / (9.0 * a));
}

}  // namespace

double sample_skewness(std::span<const double> xs) {
    if (xs.size() < 3) throw std::invalid_argument("sample_skewness needs at least 3 samples");
    const Moments m = central_moments(xs);
    return m.m3 / std::pow(m.m2, 1.5);
}

double sample_kurtosis(std::span<const double> xs) {
    if (xs.size() < 4) throw std::invalid_argument("sample_kurtosis needs at least 4 samples");
    const Moments m = central_moments(xs);
    return m.m4 / (m.m2 * m.m2);
}

NormalityResult dagostino_pearson(std::span<const double> xs) {
    if (xs.size() < kMinNormalitySamples) {
        throw std::invalid_argument("dagostino_pearson needs at least " + std::to_string(kMinNormalitySamples) +
                                    " samples, got " + std::to_string(xs.size()));
    }
    const Moments m = central_moments(xs);
    const double n = static_cast<double>(xs.size());
    NormalityResult r;
    r.n_samples = xs.size();
    r.z_skew = skew_z(m.m3 / std::pow(m.m2, 1.5), n);
    r.z_kurtosis = kurtosis_z(m.m4 / (m.m2 * m.m2), n);
    r.k2 = r.z_skew * r.z_skew + r.z_kurtosis * r.z_kurtosis;
    // Survival function of chi-square with 2 degrees of freedom.
    r.p_value = std::exp(-0.5 * r.k2);
    return r;
}

PassRate gaussianity_pass_rate(const FeatureStore& store, Transform transform, double alpha, double beta,
                               double epsilon) {
    PassRate out;
    std::size_t passed = 0;
    std::vector<double> column;
    for (const auto& block : store.classes()) {
        if (static_cast<std::size_t>(block.count()) < kMinNormalitySamples) {
            throw std::invalid_argument("class " + std::to_string(block.class_id) + " has fewer than " +
                                        std::to_string(kMinNormalitySamples) + " samples");
        }
        MatrixXd values = block.vectors.cast<double>();
        if (transform == Transform::power) {
            values = power_transform(values, beta, epsilon);
        } else if (transform == Transform::power_normalize) {
            values = pe_transform(values, beta, epsilon);
        }
        column.resize(values.rows());
        for (Eigen::Index h = 0; h < values.cols(); ++h) {
            Eigen::Map<VectorXd>(column.data(), values.rows()) = values.col(h);
            CellResult cell;
            cell.class_id = block.class_id;
            cell.dim_index = static_cast<int>(h);
            cell.test = dagostino_pearson(column);
            cell.pass = cell.test.p_value > alpha;
            passed += cell.pass ? 1 : 0;
            out.cells.push_back(cell);
        }
    }
    out.rate = out.cells.empty() ? 0.0 : static_cast<double>(passed) / static_cast<double>(out.cells.size());
    return out;
}

std::string cells_to_tsv(const PassRate& result) {
    std::string out = "class_id\tdim_index\tk2\tp\tpass\n";
    char buf[128];
    for (const auto& c : result.cells) {
        std::snprintf(buf, sizeof buf, "%u\t%d\t%.6g\t%.6g\t%d\n", c.class_id, c.dim_index, c.test.k2, c.test.p_value,
                      c.pass ? 1 : 0);
        out += buf;
    }
    return out;
}

std::vector<std::size_t> histogram(std::span<const double> xs, std::size_t bins, double lo, double hi) {
    if (bins == 0 || !(hi > lo)) throw std::invalid_argument("histogram needs bins > 0 and hi > lo");
    std::vector<std::size_t> counts(bins, 0);
    const double width = (hi - lo) / static_cast<double>(bins);
    for (double x : xs) {
        if (x < lo || x > hi) continue;
        auto b = static_cast<std::size_t>((x - lo) / width);
        counts[std::min(b, bins - 1)] += 1;
    }
    return counts;
}

}  // namespace fsot::stats
