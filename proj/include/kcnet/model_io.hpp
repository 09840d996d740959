#pragma once

// Versioned binary model files. Layout is documented in FORMATS.md.

#include "kcnet/baselines.hpp"
#include "kcnet/common.hpp"
#include "kcnet/core.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <variant>
#include <vector>

namespace kcnet {

namespace model_file {

inline constexpr char kMagic[8] = {'K', 'C', 'N', 'E', 'T', 'M', 'D', 'L'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::uint8_t kKindKcnet = 1;
inline constexpr std::uint8_t kKindElm = 2;

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int k = 0; k < 4; ++k) out_.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
    }
    void u64(std::uint64_t v) {
        for (int k = 0; k < 8; ++k) out_.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void varint(std::uint64_t v) {
        while (v >= 0x80) {
            out_.push_back(static_cast<std::uint8_t>(v | 0x80));
            v >>= 7;
        }
        out_.push_back(static_cast<std::uint8_t>(v));
    }
    void string(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    const std::vector<std::uint8_t>& data() const { return out_; }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

    void need(std::size_t n) const {
        require(in_.size() - pos_ >= n, ErrorKind::truncated, "model file truncated at byte " + std::to_string(pos_));
    }
    std::uint8_t u8() {
        need(1);
        return in_[pos_++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int k = 0; k < 4; ++k) v |= std::uint32_t{in_[pos_++]} << (8 * k);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int k = 0; k < 8; ++k) v |= std::uint64_t{in_[pos_++]} << (8 * k);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::uint64_t varint() {
        std::uint64_t v = 0;
        for (int shift = 0; shift < 64; shift += 7) {
            const auto b = u8();
            v |= std::uint64_t{b & 0x7Fu} << shift;
            if (!(b & 0x80)) return v;
        }
        throw Error(ErrorKind::parse, "model file: varint too long");
    }
    std::string string() {
        const auto n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == in_.size(); }

private:
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

inline void write_header(Writer& w, std::uint8_t kind) {
    w.bytes(kMagic, sizeof kMagic);
    w.u32(kVersion);
    w.u8(kind);
}

inline void write_common(Writer& w, const std::vector<std::string>& classes, const NormalizationStats& norm) {
    w.u32(static_cast<std::uint32_t>(classes.size()));
    for (const auto& c : classes) w.string(c);
    for (Eigen::Index i = 0; i < norm.mean.size(); ++i) w.f64(norm.mean(i));
    for (Eigen::Index i = 0; i < norm.scale.size(); ++i) w.f64(norm.scale(i));
    for (auto flag : norm.constant) w.u8(flag);
}

inline void read_common(Reader& r, std::size_t d, std::vector<std::string>& classes, NormalizationStats& norm) {
    const auto c = r.u32();
    require(c >= 2, ErrorKind::parse, "model file: fewer than 2 classes");
    classes.clear();
    for (std::uint32_t k = 0; k < c; ++k) classes.push_back(r.string());
    r.need(d * 17);
    norm.mean.resize(static_cast<Eigen::Index>(d));
    norm.scale.resize(static_cast<Eigen::Index>(d));
    norm.constant.resize(d);
    for (std::size_t i = 0; i < d; ++i) norm.mean(static_cast<Eigen::Index>(i)) = r.f64();
    for (std::size_t i = 0; i < d; ++i) norm.scale(static_cast<Eigen::Index>(i)) = r.f64();
    for (std::size_t i = 0; i < d; ++i) norm.constant[i] = r.u8();
}

inline Normalization read_mode(Reader& r) {
    const auto v = r.u8();
    require(v <= 1, ErrorKind::parse, "model file: unknown normalization mode");
    return static_cast<Normalization>(v);
}

inline void write_matrix(Writer& w, const ColMatrix& m) {
    w.u64(static_cast<std::uint64_t>(m.rows()));
    w.u64(static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) w.f64(m(i, j));
}

inline ColMatrix read_matrix(Reader& r) {
    const auto rows = r.u64();
    const auto cols = r.u64();
    require(cols == 0 || rows <= (std::uint64_t{1} << 40) / cols, ErrorKind::parse, "model file: matrix too large");
    r.need(rows * cols * 8);
    ColMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = r.f64();
    return m;
}

}  // namespace model_file

inline std::vector<std::uint8_t> serialize(const TrainedModel& m) {
    m.validate();
    model_file::Writer w;
    model_file::write_header(w, model_file::kKindKcnet);
    w.u64(m.config.input_dim);
    w.u64(m.config.hidden_dim);
    w.u64(m.config.fan_in);
    w.f64(m.config.inhibition);
    w.f64(m.config.ridge_lambda);
    w.u64(m.config.seed);
    w.u8(static_cast<std::uint8_t>(m.config.normalization));
    model_file::write_common(w, m.class_labels, m.normalization);
    for (std::size_t j = 0; j < m.projection.hidden_dim(); ++j) {
        const auto row = m.projection.row(j);
        w.varint(row.size());
        std::uint32_t prev = 0;
        for (auto i : row) {
            w.varint(i - prev);  // first entry is absolute, later ones are gaps
            prev = i;
        }
    }
    model_file::write_matrix(w, m.beta);
    return w.data();
}

inline std::vector<std::uint8_t> serialize(const ElmModel& m) {
    model_file::Writer w;
    model_file::write_header(w, model_file::kKindElm);
    w.u64(m.config.input_dim);
    w.u64(m.config.hidden_dim);
    w.u64(m.config.seed);
    w.f64(m.config.ridge_lambda);
    w.f64(m.config.jitter_lambda);
    w.f64(m.lambda_used);
    w.u8(static_cast<std::uint8_t>(m.config.normalization));
    model_file::write_common(w, m.class_labels, m.normalization);
    model_file::write_matrix(w, m.input_weights);
    for (Eigen::Index j = 0; j < m.biases.size(); ++j) w.f64(m.biases(j));
    model_file::write_matrix(w, m.beta);
    return w.data();
}

using AnyModel = std::variant<TrainedModel, ElmModel>;

inline AnyModel deserialize(std::span<const std::uint8_t> bytes) {
    model_file::Reader r(bytes);
    r.need(8);
    char magic[8];
    for (auto& c : magic) c = static_cast<char>(r.u8());
    require(std::memcmp(magic, model_file::kMagic, 8) == 0, ErrorKind::bad_magic, "not a kcnet model file");
    const auto version = r.u32();
    require(version == model_file::kVersion, ErrorKind::parse,
            "unsupported model file version " + std::to_string(version));
    const auto kind = r.u8();
    if (kind == model_file::kKindKcnet) {
        TrainedModel m;
        m.config.input_dim = r.u64();
        m.config.hidden_dim = r.u64();
        m.config.fan_in = r.u64();
        m.config.inhibition = r.f64();
        m.config.ridge_lambda = r.f64();
        m.config.seed = r.u64();
        m.config.normalization = model_file::read_mode(r);
        m.config.validate();
        model_file::read_common(r, m.config.input_dim, m.class_labels, m.normalization);
        std::vector<std::vector<std::uint32_t>> rows(m.config.hidden_dim);
        for (auto& row : rows) {
            const auto count = r.varint();
            require(count <= m.config.input_dim, ErrorKind::parse, "model file: projection row too long");
            std::uint64_t at = 0;
            for (std::uint64_t k = 0; k < count; ++k) {
                at += r.varint();
                require(at < m.config.input_dim, ErrorKind::parse, "model file: projection index out of range");
                row.push_back(static_cast<std::uint32_t>(at));
            }
        }
        m.projection = ProjectionMatrix(m.config.input_dim, rows);
        m.beta = model_file::read_matrix(r);
        require(r.done(), ErrorKind::parse, "model file: trailing bytes");
        m.validate();
        return m;
    }
    if (kind == model_file::kKindElm) {
        ElmModel m;
        m.config.input_dim = r.u64();
        m.config.hidden_dim = r.u64();
        m.config.seed = r.u64();
        m.config.ridge_lambda = r.f64();
        m.config.jitter_lambda = r.f64();
        m.lambda_used = r.f64();
        m.config.normalization = model_file::read_mode(r);
        m.config.validate();
        model_file::read_common(r, m.config.input_dim, m.class_labels, m.normalization);
        m.input_weights = model_file::read_matrix(r);
        require(static_cast<std::size_t>(m.input_weights.rows()) == m.config.hidden_dim &&
                    static_cast<std::size_t>(m.input_weights.cols()) == m.config.input_dim,
                ErrorKind::parse, "model file: ELM weight shape mismatch");
        r.need(m.config.hidden_dim * 8);
        m.biases.resize(static_cast<Eigen::Index>(m.config.hidden_dim));
        for (Eigen::Index j = 0; j < m.biases.size(); ++j) m.biases(j) = r.f64();
        m.beta = model_file::read_matrix(r);
        require(static_cast<std::size_t>(m.beta.rows()) == m.config.hidden_dim &&
                    static_cast<std::size_t>(m.beta.cols()) == m.classes(),
                ErrorKind::parse, "model file: ELM output weight shape mismatch");
        require(r.done(), ErrorKind::parse, "model file: trailing bytes");
        return m;
    }
    throw Error(ErrorKind::parse, "model file: unknown model kind " + std::to_string(kind));
}

inline void save_model_bytes(const std::vector<std::uint8_t>& bytes, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::io, "cannot create " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorKind::io, "write failed for " + path);
}

template <class Model>
void save_model(const Model& m, const std::string& path) {
    save_model_bytes(serialize(m), path);
}

inline AnyModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path);
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

}  // namespace kcnet
