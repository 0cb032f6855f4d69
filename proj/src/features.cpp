#include "fsot/features.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "fsot/rng.hpp"

namespace fsot {

namespace {

using Kind = FeatureFileError::Kind;

constexpr std::array<char, 4> kMagic = {'F', 'V', 'S', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
    const char bytes[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                           static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
    out.write(bytes, 4);
}

std::uint32_t get_u32(std::istream& in, const char* field) {
    unsigned char bytes[4];
    if (!in.read(reinterpret_cast<char*>(bytes), 4)) {
        throw FeatureFileError(Kind::malformed_header, std::string("truncated file while reading ") + field);
    }
    return std::uint32_t{bytes[0]} | (std::uint32_t{bytes[1]} << 8) | (std::uint32_t{bytes[2]} << 16) |
           (std::uint32_t{bytes[3]} << 24);
}

void check_value(float v, std::uint32_t class_id) {
    if (!std::isfinite(v)) {
        throw FeatureFileError(Kind::negative_value,
                               "non-finite feature value in class " + std::to_string(class_id));
    }
    if (v < 0.0f) {
        throw FeatureFileError(Kind::negative_value, "negative feature value " + std::to_string(v) +
                                                         " in class " + std::to_string(class_id));
    }
}

FeatureStore load_binary(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FeatureFileError(Kind::io, "cannot open " + path.string());

    std::array<char, 4> magic{};
    if (!in.read(magic.data(), 4) || magic != kMagic) {
        throw FeatureFileError(Kind::malformed_header, "bad magic in " + path.string());
    }
    const std::uint32_t dim = get_u32(in, "dim");
    const std::uint32_t num_classes = get_u32(in, "num_classes");
    if (dim == 0) throw FeatureFileError(Kind::malformed_header, "dim must be positive");

    std::vector<ClassBlock> classes;
    classes.reserve(num_classes);
    std::vector<unsigned char> raw;
    for (std::uint32_t c = 0; c < num_classes; ++c) {
        ClassBlock block;
        block.class_id = get_u32(in, "class_id");
        const std::uint32_t count = get_u32(in, "count");
        if (count == 0) {
            throw FeatureFileError(Kind::empty_class, "class " + std::to_string(block.class_id) + " is empty");
        }
        const std::size_t n_values = std::size_t{count} * dim;
        raw.resize(n_values * 4);
        if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
            throw FeatureFileError(Kind::dimension_mismatch,
                                   "class " + std::to_string(block.class_id) + " payload shorter than count*dim");
        }
        block.vectors.resize(count, dim);
        float* dst = block.vectors.data();
        for (std::size_t k = 0; k < n_values; ++k) {
            const unsigned char* b = &raw[4 * k];
            const std::uint32_t bits = std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) |
                                       (std::uint32_t{b[2]} << 16) | (std::uint32_t{b[3]} << 24);
            dst[k] = std::bit_cast<float>(bits);
            check_value(dst[k], block.class_id);
        }
        classes.push_back(std::move(block));
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw FeatureFileError(Kind::dimension_mismatch, "trailing bytes after last class in " + path.string());
    }
    return FeatureStore::make(dim, std::move(classes), path.string());
}

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(',', start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

FeatureStore load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FeatureFileError(Kind::io, "cannot open " + path.string());

    std::string line;
    if (!std::getline(in, line)) throw FeatureFileError(Kind::malformed_header, "empty csv file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_commas(line);
    if (header.size() < 2 || header[0] != "class") {
        throw FeatureFileError(Kind::malformed_header, "csv header must start with 'class,f0'");
    }
    const std::size_t dim = header.size() - 1;
    for (std::size_t h = 0; h < dim; ++h) {
        if (header[h + 1] != "f" + std::to_string(h)) {
            throw FeatureFileError(Kind::malformed_header, "unexpected csv column '" + std::string(header[h + 1]) + "'");
        }
    }

    // Rows of a class may be interleaved; classes keep first-appearance order.
    std::vector<std::uint32_t> order;
    std::map<std::uint32_t, std::vector<float>> values;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split_commas(line);
        if (cells.size() != dim + 1) {
            throw FeatureFileError(Kind::dimension_mismatch, "line " + std::to_string(line_no) + " has " +
                                                                 std::to_string(cells.size() - 1) + " features, expected " +
                                                                 std::to_string(dim));
        }
        std::uint32_t id = 0;
        auto res = std::from_chars(cells[0].data(), cells[0].data() + cells[0].size(), id);
        if (res.ec != std::errc{} || res.ptr != cells[0].data() + cells[0].size()) {
            throw FeatureFileError(Kind::malformed_header, "bad class id on line " + std::to_string(line_no));
        }
        auto [it, inserted] = values.try_emplace(id);
        if (inserted) order.push_back(id);
        for (std::size_t h = 0; h < dim; ++h) {
            // from_chars for floating point is not available on every toolchain we target.
            const std::string cell(cells[h + 1]);
            char* end = nullptr;
            const double v = std::strtod(cell.c_str(), &end);
            if (cell.empty() || end != cell.c_str() + cell.size()) {
                throw FeatureFileError(Kind::malformed_header, "bad number '" + cell + "' on line " + std::to_string(line_no));
            }
            const auto f = static_cast<float>(v);
            check_value(f, id);
            it->second.push_back(f);
        }
    }

    std::vector<ClassBlock> classes;
    for (std::uint32_t id : order) {
        auto& flat = values[id];
        ClassBlock block;
        block.class_id = id;
        const auto count = static_cast<Eigen::Index>(flat.size() / dim);
        block.vectors = Eigen::Map<const RowMatrix<float>>(flat.data(), count, static_cast<Eigen::Index>(dim));
        classes.push_back(std::move(block));
    }
    return FeatureStore::make(static_cast<Eigen::Index>(dim), std::move(classes), path.string());
}

}  // namespace

FeatureStore FeatureStore::make(Eigen::Index dim, std::vector<ClassBlock> classes, std::string source_tag) {
    if (dim <= 0) throw FeatureFileError(Kind::malformed_header, "feature dimension must be positive");
    std::unordered_set<std::uint32_t> seen;
    for (const auto& block : classes) {
        if (!seen.insert(block.class_id).second) {
            throw FeatureFileError(Kind::duplicate_class, "duplicate class id " + std::to_string(block.class_id));
        }
        if (block.count() == 0) {
            throw FeatureFileError(Kind::empty_class, "class " + std::to_string(block.class_id) + " is empty");
        }
        if (block.vectors.cols() != dim) {
            throw FeatureFileError(Kind::dimension_mismatch, "class " + std::to_string(block.class_id) +
                                                                 " has dimension " + std::to_string(block.vectors.cols()));
        }
        const float* p = block.vectors.data();
        for (Eigen::Index k = 0; k < block.vectors.size(); ++k) check_value(p[k], block.class_id);
    }
    FeatureStore store;
    store.dim_ = dim;
    store.classes_ = std::move(classes);
    store.source_tag_ = std::move(source_tag);
    return store;
}

Eigen::Index FeatureStore::total_vectors() const {
    Eigen::Index total = 0;
    for (const auto& block : classes_) total += block.count();
    return total;
}

FileFormat format_from_path(const std::filesystem::path& path) {
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".csv" ? FileFormat::csv : FileFormat::binary;
}

FeatureStore load_feature_store(const std::filesystem::path& path, FileFormat format) {
    return format == FileFormat::binary ? load_binary(path) : load_csv(path);
}

void write_feature_store(const FeatureStore& store, const std::filesystem::path& path, FileFormat format) {
    if (format == FileFormat::binary) {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw FeatureFileError(Kind::io, "cannot write " + path.string());
        out.write(kMagic.data(), 4);
        put_u32(out, static_cast<std::uint32_t>(store.dim()));
        put_u32(out, static_cast<std::uint32_t>(store.num_classes()));
        for (const auto& block : store.classes()) {
            put_u32(out, block.class_id);
            put_u32(out, static_cast<std::uint32_t>(block.count()));
            const float* p = block.vectors.data();
            for (Eigen::Index k = 0; k < block.vectors.size(); ++k) put_u32(out, std::bit_cast<std::uint32_t>(p[k]));
        }
        if (!out) throw FeatureFileError(Kind::io, "write failed for " + path.string());
        return;
    }

    std::ofstream out(path);
    if (!out) throw FeatureFileError(Kind::io, "cannot write " + path.string());
    out << "class";
    for (Eigen::Index h = 0; h < store.dim(); ++h) out << ",f" << h;
    out << '\n';
    char buf[32];
    for (const auto& block : store.classes()) {
        for (Eigen::Index r = 0; r < block.count(); ++r) {
            out << block.class_id;
            for (Eigen::Index h = 0; h < store.dim(); ++h) {
                // 9 significant digits round-trip any float32.
                std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(block.vectors(r, h)));
                out << ',' << buf;
            }
            out << '\n';
        }
    }
    if (!out) throw FeatureFileError(Kind::io, "write failed for " + path.string());
}

Episode sample_episode(const FeatureStore& store, const EpisodeSpec& spec) {
    if (spec.n_way <= 0 || spec.shots <= 0 || spec.queries_per_class <= 0) {
        throw InfeasibleSpec("n_way, shots and queries_per_class must be positive");
    }
    if (static_cast<std::size_t>(spec.n_way) > store.num_classes()) {
        throw InfeasibleSpec("n_way = " + std::to_string(spec.n_way) + " exceeds the " +
                             std::to_string(store.num_classes()) + " classes in the store");
    }

    // Canonical order: by class id.
    std::vector<std::size_t> class_order(store.num_classes());
    std::iota(class_order.begin(), class_order.end(), std::size_t{0});
    std::sort(class_order.begin(), class_order.end(), [&](std::size_t a, std::size_t b) {
        return store.block(a).class_id < store.block(b).class_id;
    });

    Rng rng(spec.seed);
    rng.shuffle(std::span<std::size_t>(class_order));

    const int per_class = spec.shots + spec.queries_per_class;
    Episode ep;
    ep.n_way = spec.n_way;
    ep.shots = spec.shots;
    ep.support.resize(spec.support_size(), store.dim());
    ep.query.resize(spec.query_size(), store.dim());
    ep.support_labels.reserve(spec.support_size());
    ep.hidden_labels.reserve(spec.query_size());

    std::vector<Eigen::Index> idx;
    for (int c = 0; c < spec.n_way; ++c) {
        const ClassBlock& block = store.block(class_order[c]);
        if (block.count() < per_class) {
            throw InfeasibleSpec("class " + std::to_string(block.class_id) + " has " + std::to_string(block.count()) +
                                 " vectors, episode needs " + std::to_string(per_class));
        }
        ep.class_ids.push_back(block.class_id);
        idx.resize(block.count());
        std::iota(idx.begin(), idx.end(), Eigen::Index{0});
        rng.shuffle(std::span<Eigen::Index>(idx));
        for (int k = 0; k < spec.shots; ++k) {
            ep.support.row(c * spec.shots + k) = block.vectors.row(idx[k]).cast<double>();
            ep.support_labels.push_back(c);
        }
        for (int k = 0; k < spec.queries_per_class; ++k) {
            ep.query.row(c * spec.queries_per_class + k) = block.vectors.row(idx[spec.shots + k]).cast<double>();
            ep.hidden_labels.push_back(c);
        }
    }
    return ep;
}

FeatureStore generate_synthetic_store(int num_classes, int dim, int per_class, double separation, SkewMode mode,
                                      std::uint64_t seed) {
    if (num_classes <= 0 || dim <= 0 || per_class <= 0) {
        throw std::invalid_argument("num_classes, dim and per_class must be positive");
    }
    if (!(separation >= 0.0)) throw std::invalid_argument("separation must be nonnegative");

    Rng rng(seed);
    MatrixXd directions(dim, num_classes);
    for (Eigen::Index k = 0; k < directions.size(); ++k) directions.data()[k] = rng.normal();
    if (num_classes <= dim) {
        // Orthonormal columns: vertices of a regular simplex after scaling by 1/sqrt(2).
        Eigen::HouseholderQR<MatrixXd> qr(directions);
        directions = qr.householderQ() * MatrixXd::Identity(dim, num_classes);
    } else {
        directions.colwise().normalize();
    }

    const double offset = mode == SkewMode::gaussian ? kGaussianOffset : kReluSkewedOffset;
    const MatrixXd centers =
        (separation / std::numbers::sqrt2) * directions + MatrixXd::Constant(dim, num_classes, offset);

    std::vector<ClassBlock> classes;
    classes.reserve(num_classes);
    for (int c = 0; c < num_classes; ++c) {
        ClassBlock block;
        block.class_id = static_cast<std::uint32_t>(c);
        block.vectors.resize(per_class, dim);
        for (int r = 0; r < per_class; ++r) {
            for (int h = 0; h < dim; ++h) {
                const double x = rng.normal() + centers(h, c);
                block.vectors(r, h) = static_cast<float>(mode == SkewMode::gaussian ? std::abs(x) : x * x);
            }
        }
        classes.push_back(std::move(block));
    }
    std::ostringstream tag;
    tag << "synthetic:" << (mode == SkewMode::gaussian ? "gaussian" : "relu_skewed") << ":sep=" << separation
        << ":seed=" << seed;
    return FeatureStore::make(dim, std::move(classes), tag.str());
}

FeatureStore concat_stores(std::span<const FeatureStore> stores) {
    if (stores.empty()) throw std::invalid_argument("concat_stores needs at least one store");
    const FeatureStore& first = stores.front();

    Eigen::Index total_dim = 0;
    for (const auto& s : stores) {
        if (s.num_classes() != first.num_classes()) {
            throw std::invalid_argument("class-set mismatch: stores hold different numbers of classes");
        }
        total_dim += s.dim();
    }

    std::vector<ClassBlock> classes;
    for (const auto& block : first.classes()) {
        ClassBlock merged;
        merged.class_id = block.class_id;
        merged.vectors.resize(block.count(), total_dim);
        Eigen::Index col = 0;
        for (const auto& s : stores) {
            auto it = std::find_if(s.classes().begin(), s.classes().end(),
                                   [&](const ClassBlock& b) { return b.class_id == block.class_id; });
            if (it == s.classes().end()) {
                throw std::invalid_argument("class-set mismatch: class " + std::to_string(block.class_id) +
                                            " missing from a store");
            }
            if (it->count() != block.count()) {
                throw std::invalid_argument("count mismatch for class " + std::to_string(block.class_id));
            }
            merged.vectors.middleCols(col, s.dim()) = it->vectors;
            col += s.dim();
        }
        classes.push_back(std::move(merged));
    }
    std::string tag = "concat(";
    for (std::size_t i = 0; i < stores.size(); ++i) tag += (i ? "," : "") + stores[i].source_tag();
    tag += ")";
    return FeatureStore::make(total_dim, std::move(classes), tag);
}

}  // namespace fsot
