#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fsot/types.hpp"

namespace fsot {

/// Vectors of one class, one per row.
struct ClassBlock {
    std::uint32_t class_id = 0;
    RowMatrix<float> vectors;

    Eigen::Index count() const { return vectors.rows(); }
};

/// Class-indexed collection of nonnegative raw feature vectors.
///
/// Immutable once built: construct through `FeatureStore::make`, which
/// enforces the invariants (common dimension, nonnegative finite entries,
/// at least one vector per class, unique class ids).
class FeatureStore {
public:
    FeatureStore() = default;

    static FeatureStore make(Eigen::Index dim, std::vector<ClassBlock> classes,
                             std::string source_tag = {});

    Eigen::Index dim() const { return dim_; }
    std::size_t num_classes() const { return classes_.size(); }
    const std::vector<ClassBlock>& classes() const { return classes_; }
    const ClassBlock& block(std::size_t index) const { return classes_.at(index); }
    const std::string& source_tag() const { return source_tag_; }
    Eigen::Index total_vectors() const;

private:
    Eigen::Index dim_ = 0;
    std::vector<ClassBlock> classes_;
    std::string source_tag_;
};

enum class FileFormat { binary, csv };

class FeatureFileError : public std::runtime_error {
public:
    enum class Kind { io, malformed_header, dimension_mismatch, negative_value, empty_class, duplicate_class };

    FeatureFileError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

/// Picks csv for a ".csv" extension, binary otherwise.
FileFormat format_from_path(const std::filesystem::path& path);

/// Binary layout: "FVS1", u32 dim, u32 num_classes, then per class
/// u32 class_id, u32 count and count*dim float32, all little-endian.
/// CSV layout: header `class,f0,...,f{d-1}`, one row per vector.
FeatureStore load_feature_store(const std::filesystem::path& path, FileFormat format);
void write_feature_store(const FeatureStore& store, const std::filesystem::path& path, FileFormat format);

struct EpisodeSpec {
    int n_way = 5;
    int shots = 1;
    int queries_per_class = 15;
    std::uint64_t seed = 0;

    int support_size() const { return n_way * shots; }
    int query_size() const { return n_way * queries_per_class; }
};

/// One few-shot task. Rows are grouped by episode class (0..n-1), support
/// rows first within the stacked view.
struct Episode {
    MatrixXd support;
    Labels support_labels;
    MatrixXd query;
    Labels hidden_labels;
    int n_way = 0;
    int shots = 0;
    std::vector<std::uint32_t> class_ids;  // store class id of each episode class

    Eigen::Index dim() const { return support.cols(); }
};

class InfeasibleSpec : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Draws n classes without replacement (ids sorted, then Fisher-Yates), then
/// shuffles each drawn class's indices: the first s go to support and the
/// next q to query. Deterministic in (store, spec).
Episode sample_episode(const FeatureStore& store, const EpisodeSpec& spec);

enum class SkewMode { gaussian, relu_skewed };

/// Desk-scale stand-in for backbone features.
///
/// Class centers are `offset + separation/sqrt(2) * R e_c`, with R a seeded
/// random rotation, so that centers sit on a regular simplex with pairwise
/// distance `separation` (when num_classes <= dim; random directions
/// otherwise). gaussian: |N(center, I)| with offset 6, close to Gaussian.
/// relu_skewed: (g + center)^2 with offset 2, a noncentral chi-square(1)
/// marginal that is nonnegative and right-skewed.
FeatureStore generate_synthetic_store(int num_classes, int dim, int per_class, double separation,
                                      SkewMode mode, std::uint64_t seed);

inline constexpr double kGaussianOffset = 6.0;
inline constexpr double kReluSkewedOffset = 2.0;

/// Concatenates per-vector features of stores sharing class ids and counts.
FeatureStore concat_stores(std::span<const FeatureStore> stores);

}  // namespace fsot
