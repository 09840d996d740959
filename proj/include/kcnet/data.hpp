#pragma once

// Dataset container, IDX and CSV loaders, standardization and splitting.

#include "kcnet/common.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace kcnet {

/// N x d features with integer class labels over an ordered list of class names.
///
/// Targets are held as class indices; one_hot() materializes the N x c
/// indicator matrix, so every target row has exactly one 1 by construction.
class Dataset {
public:
    Dataset() = default;

    Dataset(Matrix features, std::vector<int> labels, std::vector<std::string> class_labels,
            std::vector<std::string> feature_names = {})
        : features_(std::move(features)),
          labels_(std::move(labels)),
          class_labels_(std::move(class_labels)),
          feature_names_(std::move(feature_names)) {
        require(features_.rows() > 0, ErrorKind::empty_dataset, "dataset has no samples");
        require(features_.cols() > 0, ErrorKind::empty_dataset, "dataset has no features");
        require(class_labels_.size() >= 2, ErrorKind::invalid_argument,
                "dataset needs at least 2 classes, got " + std::to_string(class_labels_.size()));
        require_dims(labels_.size() == static_cast<std::size_t>(features_.rows()),
                     "label count does not match sample count");
        require_dims(feature_names_.empty() || feature_names_.size() == static_cast<std::size_t>(features_.cols()),
                     "feature name count does not match feature count");
        for (int y : labels_)
            require(y >= 0 && static_cast<std::size_t>(y) < class_labels_.size(), ErrorKind::invalid_argument,
                    "label index out of range");
    }

    std::size_t size() const { return static_cast<std::size_t>(features_.rows()); }
    std::size_t dim() const { return static_cast<std::size_t>(features_.cols()); }
    std::size_t classes() const { return class_labels_.size(); }

    const Matrix& features() const { return features_; }
    Matrix& features() { return features_; }
    const std::vector<int>& labels() const { return labels_; }
    const std::vector<std::string>& class_labels() const { return class_labels_; }
    const std::vector<std::string>& feature_names() const { return feature_names_; }

    Matrix one_hot() const { return one_hot(labels_, classes()); }

    static Matrix one_hot(std::span<const int> labels, std::size_t classes) {
        Matrix y = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), static_cast<Eigen::Index>(classes));
        for (std::size_t n = 0; n < labels.size(); ++n) y(static_cast<Eigen::Index>(n), labels[n]) = 1.0;
        return y;
    }

    /// Number of distinct classes that actually occur.
    std::size_t observed_classes() const {
        std::vector<bool> seen(classes(), false);
        for (int y : labels_) seen[static_cast<std::size_t>(y)] = true;
        return static_cast<std::size_t>(std::count(seen.begin(), seen.end(), true));
    }

private:
    Matrix features_;
    std::vector<int> labels_;
    std::vector<std::string> class_labels_;
    std::vector<std::string> feature_names_;
};

inline Dataset subset(const Dataset& data, std::span<const std::size_t> rows) {
    Matrix x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(data.dim()));
    std::vector<int> y(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        require(rows[k] < data.size(), ErrorKind::invalid_argument, "subset row out of range");
        x.row(static_cast<Eigen::Index>(k)) = data.features().row(static_cast<Eigen::Index>(rows[k]));
        y[k] = data.labels()[rows[k]];
    }
    return Dataset(std::move(x), std::move(y), data.class_labels(), data.feature_names());
}

// ---------------------------------------------------------------------------
// IDX

namespace idx {

inline constexpr std::uint32_t kImageMagic = 0x00000803;
inline constexpr std::uint32_t kLabelMagic = 0x00000801;

inline std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    require(!in.bad(), ErrorKind::io, "read failed for " + path);
    return bytes;
}

inline std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

/// A parsed u8 tensor: dimension sizes and a view of the payload.
struct Tensor {
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> data;
};

inline Tensor parse(std::vector<std::uint8_t> bytes, std::uint32_t expected_magic, const std::string& what) {
    const std::size_t rank = expected_magic & 0xFF;
    require(bytes.size() >= 4, ErrorKind::truncated, what + ": file shorter than the magic number");
    const auto magic = read_be32(bytes, 0);
    if (magic != expected_magic) {
        char buf[64];
        std::snprintf(buf, sizeof buf, ": magic 0x%08X, expected 0x%08X", magic, expected_magic);
        throw Error(ErrorKind::bad_magic, what + buf);
    }
    const std::size_t header = 4 + 4 * rank;
    require(bytes.size() >= header, ErrorKind::truncated, what + ": truncated dimension header");
    Tensor t;
    std::size_t count = 1;
    for (std::size_t r = 0; r < rank; ++r) {
        t.dims.push_back(read_be32(bytes, 4 + 4 * r));
        count *= t.dims.back();
    }
    require(bytes.size() - header >= count, ErrorKind::truncated,
            what + ": payload has " + std::to_string(bytes.size() - header) + " bytes, header declares " +
                std::to_string(count));
    require(bytes.size() - header == count, ErrorKind::parse, what + ": trailing bytes after payload");
    t.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
    return t;
}

}  // namespace idx

struct IdxOptions {
    /// Images are stored column-major (EMNIST); transpose each to row-major.
    bool transpose = false;
    /// Class list to encode against (e.g. the training set's). When empty,
    /// classes are the sorted distinct label values observed in the file.
    std::vector<std::string> classes;
};

inline std::vector<std::string> numeric_class_names(const std::vector<std::uint8_t>& raw) {
    std::vector<bool> seen(256, false);
    for (auto v : raw) seen[v] = true;
    std::vector<std::string> names;
    for (int v = 0; v < 256; ++v)
        if (seen[static_cast<std::size_t>(v)]) names.push_back(std::to_string(v));
    return names;
}

/// Loads an IDX image tensor (0x00000803) and label vector (0x00000801).
/// Pixels are scaled to [0, 1].
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path, const IdxOptions& opts = {}) {
    const auto images = idx::parse(idx::read_file(images_path), idx::kImageMagic, images_path);
    const auto labels = idx::parse(idx::read_file(labels_path), idx::kLabelMagic, labels_path);
    const std::size_t n = images.dims[0];
    const std::size_t rows = images.dims[1];
    const std::size_t cols = images.dims[2];
    require(labels.dims[0] == n, ErrorKind::count_mismatch,
            "image count " + std::to_string(n) + " differs from label count " + std::to_string(labels.dims[0]));
    require(n > 0 && rows * cols > 0, ErrorKind::empty_dataset, images_path + ": no images");
    if (opts.transpose) require(rows == cols, ErrorKind::invalid_argument, "transpose needs square images");

    const std::size_t d = rows * cols;
    Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (std::size_t s = 0; s < n; ++s) {
        const std::uint8_t* img = images.data.data() + s * d;
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
                const std::size_t src = opts.transpose ? c * rows + r : r * cols + c;
                x(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(r * cols + c)) = img[src] / 255.0;
            }
    }

    auto classes = opts.classes.empty() ? numeric_class_names(labels.data) : opts.classes;
    std::map<std::string, int> index;
    for (std::size_t k = 0; k < classes.size(); ++k) index[classes[k]] = static_cast<int>(k);
    std::vector<int> y(n);
    for (std::size_t s = 0; s < n; ++s) {
        auto it = index.find(std::to_string(labels.data[s]));
        require(it != index.end(), ErrorKind::parse,
                labels_path + ": label " + std::to_string(labels.data[s]) + " not in the class list");
        y[s] = it->second;
    }
    return Dataset(std::move(x), std::move(y), std::move(classes));
}

/// Writes a dataset as IDX image/label files. Features must lie in [0, 1]
/// and class labels must be integers in [0, 255].
inline void write_idx(const Dataset& data, const std::string& images_path, const std::string& labels_path,
                      std::uint32_t rows, std::uint32_t cols, bool transpose = false) {
    require_dims(std::size_t{rows} * cols == data.dim(), "image shape does not match feature count");
    std::vector<std::uint8_t> img;
    img.reserve(16 + data.size() * data.dim());
    idx::put_be32(img, idx::kImageMagic);
    idx::put_be32(img, static_cast<std::uint32_t>(data.size()));
    idx::put_be32(img, rows);
    idx::put_be32(img, cols);
    std::vector<std::uint8_t> pixels(data.dim());
    for (std::size_t s = 0; s < data.size(); ++s) {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
                const double v = data.features()(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(r * cols + c));
                require(v >= 0.0 && v <= 1.0, ErrorKind::invalid_argument, "pixel outside [0, 1]");
                pixels[transpose ? c * rows + r : r * cols + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
        img.insert(img.end(), pixels.begin(), pixels.end());
    }
    std::vector<std::uint8_t> lab;
    idx::put_be32(lab, idx::kLabelMagic);
    idx::put_be32(lab, static_cast<std::uint32_t>(data.size()));
    for (int y : data.labels()) {
        const auto& name = data.class_labels()[static_cast<std::size_t>(y)];
        int value = -1;
        auto [p, ec] = std::from_chars(name.data(), name.data() + name.size(), value);
        require(ec == std::errc{} && p == name.data() + name.size() && value >= 0 && value <= 255,
                ErrorKind::invalid_argument, "class label '" + name + "' is not a byte value");
        lab.push_back(static_cast<std::uint8_t>(value));
    }
    for (auto& [path, bytes] : {std::pair{&images_path, &img}, std::pair{&labels_path, &lab}}) {
        std::ofstream out(*path, std::ios::binary);
        require(static_cast<bool>(out), ErrorKind::io, "cannot create " + *path);
        out.write(reinterpret_cast<const char*>(bytes->data()), static_cast<std::streamsize>(bytes->size()));
        require(static_cast<bool>(out), ErrorKind::io, "write failed for " + *path);
    }
}

// ---------------------------------------------------------------------------
// CSV

/// RFC-4180 record splitter: quoted fields, doubled quotes, embedded
/// delimiters and newlines, LF or CRLF record ends. Blank lines are skipped.
inline std::vector<std::vector<std::string>> parse_csv(std::string_view text, char delimiter = ',') {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;
    auto end_field = [&] {
        record.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_record = [&] {
        end_field();
        if (!(record.size() == 1 && record[0].empty())) records.push_back(std::move(record));
        record.clear();
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char ch = text[i];
        if (in_quotes) {
            if (ch == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                field.push_back(ch);
            }
        } else if (ch == '"' && !field_started) {
            in_quotes = true;
            field_started = true;
        } else if (ch == delimiter) {
            end_field();
        } else if (ch == '\n' || ch == '\r') {
            if (ch == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
            end_record();
        } else {
            field.push_back(ch);
            field_started = true;
        }
    }
    require(!in_quotes, ErrorKind::parse, "unterminated quoted field");
    if (field_started || !field.empty() || !record.empty()) end_record();
    return records;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return s;
}

inline std::optional<double> parse_double(std::string_view s) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc{} || p != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

/// Sorted distinct labels: numerically when every label is numeric,
/// lexicographically otherwise.
inline std::vector<std::string> sorted_distinct(std::vector<std::string> labels) {
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    const bool numeric = std::all_of(labels.begin(), labels.end(),
                                     [](const std::string& s) { return parse_double(s).has_value(); });
    if (numeric)
        std::stable_sort(labels.begin(), labels.end(), [](const std::string& a, const std::string& b) {
            return *parse_double(a) < *parse_double(b);
        });
    return labels;
}

}  // namespace detail

struct CsvOptions {
    std::string label_column = "label";
    char delimiter = ',';
    /// Class list to encode against; empty means the sorted distinct labels.
    std::vector<std::string> classes;
};

inline Dataset parse_csv_dataset(std::string_view text, const CsvOptions& opts, const std::string& source = "csv") {
    const auto records = parse_csv(text, opts.delimiter);
    require(!records.empty(), ErrorKind::parse, source + ": missing header row");
    const auto& header = records.front();
    const auto label_it = std::find_if(header.begin(), header.end(), [&](const std::string& h) {
        return detail::trim(h) == opts.label_column;
    });
    require(label_it != header.end(), ErrorKind::parse, source + ": no column named '" + opts.label_column + "'");
    const auto label_col = static_cast<std::size_t>(label_it - header.begin());
    require(records.size() > 1, ErrorKind::empty_dataset, source + ": empty dataset (header only)");
    require(header.size() > 1, ErrorKind::empty_dataset, source + ": no feature columns");

    std::vector<std::string> names;
    for (std::size_t c = 0; c < header.size(); ++c)
        if (c != label_col) names.emplace_back(detail::trim(header[c]));

    const std::size_t n = records.size() - 1;
    const std::size_t d = header.size() - 1;
    Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    std::vector<std::string> raw_labels(n);
    for (std::size_t r = 0; r < n; ++r) {
        const auto& rec = records[r + 1];
        // Data rows are numbered from 1, the header being row 0.
        require(rec.size() == header.size(), ErrorKind::parse,
                source + ": row " + std::to_string(r + 1) + " has " + std::to_string(rec.size()) +
                    " fields, header has " + std::to_string(header.size()));
        std::size_t f = 0;
        for (std::size_t c = 0; c < rec.size(); ++c) {
            if (c == label_col) {
                raw_labels[r] = std::string(detail::trim(rec[c]));
                continue;
            }
            const auto v = detail::parse_double(rec[c]);
            require(v.has_value(), ErrorKind::parse,
                    source + ": row " + std::to_string(r + 1) + " column '" + names[f] + "' is not numeric: '" +
                        rec[c] + "'");
            x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(f++)) = *v;
        }
    }

    auto classes = opts.classes.empty() ? detail::sorted_distinct(raw_labels) : opts.classes;
    std::map<std::string, int> index;
    for (std::size_t k = 0; k < classes.size(); ++k) index[classes[k]] = static_cast<int>(k);
    std::vector<int> y(n);
    for (std::size_t r = 0; r < n; ++r) {
        auto it = index.find(raw_labels[r]);
        require(it != index.end(), ErrorKind::parse,
                source + ": row " + std::to_string(r + 1) + " label '" + raw_labels[r] + "' not in the class list");
        y[r] = it->second;
    }
    return Dataset(std::move(x), std::move(y), std::move(classes), std::move(names));
}

inline Dataset load_csv(const std::string& path, const CsvOptions& opts = {}) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path);
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_csv_dataset(text, opts, path);
}

// ---------------------------------------------------------------------------
// Standardization

/// How statistics are pooled: one mean/SD per feature, or a single mean/SD
/// over every entry of the training matrix (the usual image preprocessing).
enum class Normalization { per_feature, global };

inline const char* to_string(Normalization n) { return n == Normalization::global ? "global" : "per-feature"; }

inline Normalization parse_normalization(const std::string& s) {
    if (s == "per-feature" || s == "per_feature") return Normalization::per_feature;
    if (s == "global") return Normalization::global;
    throw Error(ErrorKind::invalid_argument, "unknown normalization '" + s + "' (expected per-feature or global)");
}

/// Mean and population standard deviation from a training set, stored per
/// feature. Zero-variance features are flagged and left untouched by apply().
struct NormalizationStats {
    Vector mean;
    Vector scale;
    std::vector<std::uint8_t> constant;

    std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }

    static NormalizationStats identity(std::size_t d) {
        return {Vector::Zero(static_cast<Eigen::Index>(d)), Vector::Ones(static_cast<Eigen::Index>(d)),
                std::vector<std::uint8_t>(d, 0)};
    }

    static NormalizationStats compute(const Matrix& x, Normalization mode = Normalization::per_feature) {
        require(x.rows() > 0, ErrorKind::empty_dataset, "cannot standardize an empty dataset");
        if (mode == Normalization::global) return compute_global(x);
        NormalizationStats s;
        const auto d = x.cols();
        const double n = static_cast<double>(x.rows());
        s.mean = x.colwise().sum().transpose() / n;
        s.scale.resize(d);
        s.constant.assign(static_cast<std::size_t>(d), 0);
        for (Eigen::Index j = 0; j < d; ++j) {
            const double var = (x.col(j).array() - s.mean(j)).square().sum() / n;
            const double sd = std::sqrt(var);
            if (!(sd > 1e-12 * std::max(1.0, std::abs(s.mean(j))))) {
                s.scale(j) = 1.0;
                s.constant[static_cast<std::size_t>(j)] = 1;
            } else {
                s.scale(j) = sd;
            }
        }
        return s;
    }

    static NormalizationStats compute_global(const Matrix& x) {
        const auto d = static_cast<std::size_t>(x.cols());
        const double mean = x.mean();
        const double sd = std::sqrt((x.array() - mean).square().mean());
        const bool flat = !(sd > 1e-12 * std::max(1.0, std::abs(mean)));
        NormalizationStats s;
        s.mean = Vector::Constant(static_cast<Eigen::Index>(d), mean);
        s.scale = Vector::Constant(static_cast<Eigen::Index>(d), flat ? 1.0 : sd);
        s.constant.assign(d, flat ? 1 : 0);
        return s;
    }

    /// Standardizes the rows of x in place.
    template <class Derived>
    void apply(Eigen::MatrixBase<Derived>& x) const {
        require_dims(static_cast<std::size_t>(x.cols()) == dim(), "normalization dimension mismatch");
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            if (constant[static_cast<std::size_t>(j)]) continue;
            x.col(j) = (x.col(j).array() - mean(j)) / scale(j);
        }
    }

    template <class Derived>
    void apply(Eigen::MatrixBase<Derived>&& x) const {
        apply(x);
    }

    Dataset apply(const Dataset& data) const {
        Matrix x = data.features();
        apply(x);
        return Dataset(std::move(x), data.labels(), data.class_labels(), data.feature_names());
    }
};

struct Standardized {
    Dataset train;
    std::vector<Dataset> others;
    NormalizationStats stats;
};

/// Standardizes `train` with its own statistics and `others` with the same ones.
inline Standardized standardize(const Dataset& train, const std::vector<Dataset>& others = {},
                                Normalization mode = Normalization::per_feature) {
    Standardized out;
    out.stats = NormalizationStats::compute(train.features(), mode);
    out.train = out.stats.apply(train);
    for (const auto& o : others) out.others.push_back(out.stats.apply(o));
    return out;
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitSpec {
    /// Fraction of samples assigned to the first part.
    double fraction = 0.9;
    std::uint64_t seed = 0;
    bool stratified = false;
};

struct SplitIndices {
    std::vector<std::size_t> first;
    std::vector<std::size_t> second;
};

inline SplitIndices split_indices(std::span<const int> labels, std::size_t classes, const SplitSpec& spec) {
    require(spec.fraction > 0.0 && spec.fraction < 1.0, ErrorKind::invalid_argument,
            "split fraction must lie in (0, 1)");
    const std::size_t n = labels.size();
    Rng rng(spec.seed);
    SplitIndices out;
    if (!spec.stratified) {
        const auto perm = rng.permutation(n);
        const auto k = static_cast<std::size_t>(std::llround(static_cast<double>(n) * spec.fraction));
        out.first.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(std::min(k, n)));
        out.second.assign(perm.begin() + static_cast<std::ptrdiff_t>(std::min(k, n)), perm.end());
    } else {
        std::vector<std::vector<std::size_t>> by_class(classes);
        for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);
        for (auto& members : by_class) {
            const auto perm = rng.permutation(members.size());
            const auto k = static_cast<std::size_t>(std::llround(static_cast<double>(members.size()) * spec.fraction));
            for (std::size_t r = 0; r < members.size(); ++r)
                (r < k ? out.first : out.second).push_back(members[perm[r]]);
        }
        // Interleave classes so neither part is ordered by label.
        for (auto* part : {&out.first, &out.second}) {
            const auto perm = rng.permutation(part->size());
            std::vector<std::size_t> shuffled(part->size());
            for (std::size_t r = 0; r < perm.size(); ++r) shuffled[r] = (*part)[perm[r]];
            *part = std::move(shuffled);
        }
    }
    require(!out.first.empty() && !out.second.empty(), ErrorKind::invalid_argument,
            "split fraction " + std::to_string(spec.fraction) + " of " + std::to_string(n) +
                " samples leaves a part empty");
    return out;
}

inline SplitIndices split_indices(const Dataset& data, const SplitSpec& spec) {
    return split_indices(data.labels(), data.classes(), spec);
}

inline std::pair<Dataset, Dataset> split(const Dataset& data, const SplitSpec& spec) {
    const auto idx = split_indices(data, spec);
    return {subset(data, idx.first), subset(data, idx.second)};
}

}  // namespace kcnet
