#pragma once

// KCNet forward pass and closed-form decoder: sparse binary projection,
// global inhibition, streaming Gram accumulation and ridge solve.

#include "kcnet/common.hpp"
#include "kcnet/data.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace kcnet {

struct ModelConfig {
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 2000;
    std::size_t fan_in = 7;
    double inhibition = 1.0;
    double ridge_lambda = 1.0;
    std::uint64_t seed = 0;
    Normalization normalization = Normalization::per_feature;

    void validate() const {
        require(input_dim >= 2, ErrorKind::invalid_argument, "input_dim must be at least 2");
        require(hidden_dim >= 1, ErrorKind::invalid_argument, "hidden_dim must be at least 1");
        require(fan_in >= 1 && fan_in < input_dim, ErrorKind::invalid_argument,
                "fan_in must satisfy 1 <= fan_in < input_dim (got " + std::to_string(fan_in) + " with input_dim " +
                    std::to_string(input_dim) + ")");
        require(ridge_lambda >= 0.0 && std::isfinite(ridge_lambda), ErrorKind::invalid_argument,
                "ridge_lambda must be finite and >= 0");
        require(inhibition >= 0.0 && std::isfinite(inhibition), ErrorKind::invalid_argument,
                "inhibition must be finite and >= 0");
    }
};

/// Binary B x d input-to-hidden weights stored as one sorted index set per
/// hidden unit (compressed rows).
class ProjectionMatrix {
public:
    ProjectionMatrix() = default;

    ProjectionMatrix(std::size_t input_dim, const std::vector<std::vector<std::uint32_t>>& rows)
        : input_dim_(input_dim) {
        offsets_.reserve(rows.size() + 1);
        offsets_.push_back(0);
        for (const auto& r : rows) {
            std::vector<std::uint32_t> sorted(r);
            std::sort(sorted.begin(), sorted.end());
            require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), ErrorKind::invalid_argument,
                    "projection row has duplicate indices");
            require(sorted.empty() || sorted.back() < input_dim, ErrorKind::invalid_argument,
                    "projection index out of range");
            indices_.insert(indices_.end(), sorted.begin(), sorted.end());
            offsets_.push_back(indices_.size());
        }
    }

    /// Rows from a dense 0/1 matrix: entry > 0.5 means connected.
    template <class Derived>
    static ProjectionMatrix from_dense(const Eigen::MatrixBase<Derived>& w) {
        std::vector<std::vector<std::uint32_t>> rows(static_cast<std::size_t>(w.rows()));
        for (Eigen::Index j = 0; j < w.rows(); ++j)
            for (Eigen::Index i = 0; i < w.cols(); ++i)
                if (w(j, i) > 0.5) rows[static_cast<std::size_t>(j)].push_back(static_cast<std::uint32_t>(i));
        return ProjectionMatrix(static_cast<std::size_t>(w.cols()), rows);
    }

    /// Stacks the rows of several projections over the same input.
    static ProjectionMatrix concatenate(std::span<const ProjectionMatrix> parts) {
        require(!parts.empty(), ErrorKind::invalid_argument, "nothing to concatenate");
        ProjectionMatrix out;
        out.input_dim_ = parts.front().input_dim();
        out.offsets_.push_back(0);
        for (const auto& p : parts) {
            require_dims(p.input_dim() == out.input_dim_, "concatenated projections differ in input_dim");
            for (std::size_t j = 0; j < p.hidden_dim(); ++j) {
                auto r = p.row(j);
                out.indices_.insert(out.indices_.end(), r.begin(), r.end());
                out.offsets_.push_back(out.indices_.size());
            }
        }
        return out;
    }

    std::size_t hidden_dim() const { return offsets_.empty() ? 0 : offsets_.size() - 1; }
    std::size_t input_dim() const { return input_dim_; }
    std::size_t nnz() const { return indices_.size(); }

    std::span<const std::uint32_t> row(std::size_t j) const {
        return {indices_.data() + offsets_[j], offsets_[j + 1] - offsets_[j]};
    }

    bool contains(std::size_t j, std::size_t i) const {
        auto r = row(j);
        return std::binary_search(r.begin(), r.end(), static_cast<std::uint32_t>(i));
    }

    ColMatrix to_dense() const {
        ColMatrix w = ColMatrix::Zero(static_cast<Eigen::Index>(hidden_dim()), static_cast<Eigen::Index>(input_dim_));
        for (std::size_t j = 0; j < hidden_dim(); ++j)
            for (auto i : row(j)) w(static_cast<Eigen::Index>(j), i) = 1.0;
        return w;
    }

    bool operator==(const ProjectionMatrix&) const = default;

private:
    std::size_t input_dim_ = 0;
    std::vector<std::size_t> offsets_;
    std::vector<std::uint32_t> indices_;
};

/// Each hidden unit draws fan_in distinct inputs uniformly from [0, d).
/// Rows are sampled in order from one generator seeded with config.seed.
inline ProjectionMatrix sample_projection(const ModelConfig& config) {
    config.validate();
    Rng rng(config.seed);
    std::vector<std::vector<std::uint32_t>> rows(config.hidden_dim);
    for (auto& r : rows)
        r = rng.sample_without_replacement(static_cast<std::uint32_t>(config.input_dim),
                                           static_cast<std::uint32_t>(config.fan_in));
    return ProjectionMatrix(config.input_dim, rows);
}

/// Per-sample quantities of the hidden layer.
struct HiddenTrace {
    Vector summed;        // x̄_j: sum of the unit's connected inputs
    double mean = 0.0;    // μ: average of x̄ over hidden units
    Vector inhibited;     // x̂_j = x̄_j - C μ
    Vector activation;    // h_j = max(0, x̂_j)
};

template <class Derived>
HiddenTrace hidden_trace(const Eigen::MatrixBase<Derived>& x, const ProjectionMatrix& w, double inhibition) {
    require_dims(static_cast<std::size_t>(x.size()) == w.input_dim(), "input length does not match projection");
    const auto b = static_cast<Eigen::Index>(w.hidden_dim());
    HiddenTrace t;
    t.summed.resize(b);
    for (Eigen::Index j = 0; j < b; ++j) {
        double s = 0.0;
        for (auto i : w.row(static_cast<std::size_t>(j))) s += x(static_cast<Eigen::Index>(i));
        t.summed(j) = s;
    }
    t.mean = b > 0 ? t.summed.sum() / static_cast<double>(b) : 0.0;
    t.inhibited = t.summed.array() - inhibition * t.mean;
    t.activation = t.inhibited.cwiseMax(0.0);
    return t;
}

/// H (N x B) for already-standardized rows of x, written into `h`.
template <class Derived>
void hidden_forward_into(const Eigen::MatrixBase<Derived>& x, const ProjectionMatrix& w, double inhibition,
                         Matrix& h) {
    require_dims(static_cast<std::size_t>(x.cols()) == w.input_dim(),
                 "feature count " + std::to_string(x.cols()) + " does not match projection input_dim " +
                     std::to_string(w.input_dim()));
    const auto n = x.rows();
    const auto b = static_cast<Eigen::Index>(w.hidden_dim());
    h.resize(n, b);
    if (b == 0) return;
    const double inv_b = 1.0 / static_cast<double>(b);
    for (Eigen::Index s = 0; s < n; ++s) {
        auto out = h.row(s);
        double total = 0.0;
        for (Eigen::Index j = 0; j < b; ++j) {
            double acc = 0.0;
            for (auto i : w.row(static_cast<std::size_t>(j))) acc += x(s, static_cast<Eigen::Index>(i));
            out(j) = acc;
            total += acc;
        }
        const double shift = inhibition * total * inv_b;
        for (Eigen::Index j = 0; j < b; ++j) out(j) = std::max(0.0, out(j) - shift);
    }
}

template <class Derived>
Matrix hidden_forward(const Eigen::MatrixBase<Derived>& x, const ProjectionMatrix& w, double inhibition) {
    Matrix h;
    hidden_forward_into(x, w, inhibition, h);
    return h;
}

/// Raw features -> standardized -> KCNet hidden layer.
struct KcnetEncoder {
    const ProjectionMatrix& projection;
    double inhibition;
    const NormalizationStats* normalization = nullptr;

    std::size_t hidden_dim() const { return projection.hidden_dim(); }

    void encode(const Matrix& x, Matrix& h) const {
        if (normalization) {
            Matrix xn = x;
            normalization->apply(xn);
            hidden_forward_into(xn, projection, inhibition, h);
        } else {
            hidden_forward_into(x, projection, inhibition, h);
        }
    }
};

struct GramOptions {
    std::size_t block_size = 2048;
    unsigned threads = 1;
};

/// Normal-equation pieces G = HᵀH (B x B, symmetric) and T = HᵀY (B x c).
struct GramSystem {
    ColMatrix gram;
    ColMatrix cross;
    std::size_t samples = 0;
};

namespace detail {

template <class Encoder>
GramSystem accumulate_gram(const Matrix& x, const Matrix& y, const Encoder& encoder, const GramOptions& opts,
                           const std::size_t* rows, std::size_t row_count) {
    require(opts.block_size >= 1, ErrorKind::invalid_argument, "block_size must be >= 1");
    require_dims(x.rows() == y.rows(), "feature and target row counts differ");
    const auto b = static_cast<Eigen::Index>(encoder.hidden_dim());
    const auto c = y.cols();
    const std::size_t n = rows ? row_count : static_cast<std::size_t>(x.rows());
    const std::size_t blocks = (n + opts.block_size - 1) / opts.block_size;
    const unsigned workers = std::max(1u, std::min<unsigned>(opts.threads, static_cast<unsigned>(std::max<std::size_t>(blocks, 1))));

    // Worker w owns blocks w, w + workers, ...; partials are summed in worker
    // order so the result depends only on the worker count.
    std::vector<GramSystem> partial(workers);
    parallel_for(workers, workers, [&](std::size_t w, unsigned) {
        auto& p = partial[w];
        p.gram = ColMatrix::Zero(b, b);
        p.cross = ColMatrix::Zero(b, c);
        Matrix xb, yb, hb;
        for (std::size_t blk = w; blk < blocks; blk += workers) {
            const std::size_t start = blk * opts.block_size;
            const std::size_t len = std::min(opts.block_size, n - start);
            xb.resize(static_cast<Eigen::Index>(len), x.cols());
            yb.resize(static_cast<Eigen::Index>(len), c);
            for (std::size_t k = 0; k < len; ++k) {
                const auto src = static_cast<Eigen::Index>(rows ? rows[start + k] : start + k);
                xb.row(static_cast<Eigen::Index>(k)) = x.row(src);
                yb.row(static_cast<Eigen::Index>(k)) = y.row(src);
            }
            encoder.encode(xb, hb);
            p.gram.template selfadjointView<Eigen::Lower>().rankUpdate(hb.transpose());
            p.cross.noalias() += hb.transpose() * yb;
        }
    });
    GramSystem out = std::move(partial[0]);
    for (unsigned w = 1; w < workers; ++w) {
        out.gram.template triangularView<Eigen::Lower>() += partial[w].gram;
        out.cross += partial[w].cross;
    }
    out.gram.template triangularView<Eigen::StrictlyUpper>() = out.gram.transpose();
    out.samples = n;
    return out;
}

}  // namespace detail

/// Streams the hidden layer over row blocks of x; H is never held whole.
template <class Encoder>
GramSystem accumulate_gram(const Matrix& x, const Matrix& y, const Encoder& encoder, const GramOptions& opts = {}) {
    return detail::accumulate_gram(x, y, encoder, opts, nullptr, 0);
}

/// As above, restricted to the listed rows of x and y.
template <class Encoder>
GramSystem accumulate_gram(const Matrix& x, const Matrix& y, const Encoder& encoder, std::span<const std::size_t> rows,
                           const GramOptions& opts = {}) {
    for (auto r : rows) require(r < static_cast<std::size_t>(x.rows()), ErrorKind::invalid_argument, "row out of range");
    return detail::accumulate_gram(x, y, encoder, opts, rows.data(), rows.size());
}

inline GramSystem accumulate_gram(const Matrix& x, const Matrix& y, const ProjectionMatrix& w, double inhibition,
                                  const GramOptions& opts = {}) {
    return accumulate_gram(x, y, KcnetEncoder{w, inhibition}, opts);
}

using OutputWeights = ColMatrix;

/// Solves (G + λI) β = T by Cholesky with two rounds of iterative refinement.
///
/// Throws ErrorKind::singular when the factorization breaks down, when a pivot
/// is numerically zero, or when the refined residual misses
/// ‖(G+λI)β − T‖_F ≤ 1e-8 · max(1, ‖T‖_F).
inline OutputWeights solve_ridge(const ColMatrix& gram, const ColMatrix& cross, double lambda) {
    require_dims(gram.rows() == gram.cols(), "Gram matrix is not square");
    require_dims(cross.rows() == gram.rows(), "Gram and cross-product row counts differ");
    require(lambda >= 0.0 && std::isfinite(lambda), ErrorKind::invalid_argument, "lambda must be finite and >= 0");
    const auto b = gram.rows();
    ColMatrix a = gram;
    a.diagonal().array() += lambda;

    const char* hint = lambda == 0.0 ? "singular Gram, increase lambda" : "Gram system is numerically singular";
    Eigen::LLT<ColMatrix> llt(a);
    if (llt.info() != Eigen::Success) throw Error(ErrorKind::singular, hint);
    const Vector pivots = ColMatrix(llt.matrixL()).diagonal();
    const double max_diag = a.diagonal().cwiseAbs().maxCoeff();
    const double tiny = static_cast<double>(b) * std::numeric_limits<double>::epsilon() * max_diag;
    if (b > 0 && !(pivots.array().square().minCoeff() > tiny)) throw Error(ErrorKind::singular, hint);

    OutputWeights beta = llt.solve(cross);
    for (int round = 0; round < 2; ++round) {
        const ColMatrix residual = cross - a * beta;
        beta += llt.solve(residual);
    }
    const double bound = 1e-8 * std::max(1.0, cross.norm());
    if (!beta.allFinite() || (a * beta - cross).norm() > bound) throw Error(ErrorKind::singular, hint);
    return beta;
}

struct TrainedModel {
    ModelConfig config;
    ProjectionMatrix projection;
    OutputWeights beta;
    NormalizationStats normalization;
    std::vector<std::string> class_labels;

    std::size_t classes() const { return class_labels.size(); }

    void validate() const {
        config.validate();
        require_dims(projection.hidden_dim() == config.hidden_dim && projection.input_dim() == config.input_dim,
                     "projection shape does not match config");
        require_dims(static_cast<std::size_t>(beta.rows()) == config.hidden_dim &&
                         static_cast<std::size_t>(beta.cols()) == classes(),
                     "output weights shape does not match config");
        require_dims(normalization.dim() == config.input_dim &&
                         static_cast<std::size_t>(normalization.scale.size()) == config.input_dim &&
                         normalization.constant.size() == config.input_dim,
                     "normalization length does not match input_dim");
        require(beta.allFinite(), ErrorKind::invalid_argument, "output weights are not finite");
        require((normalization.scale.array() > 0.0).all(), ErrorKind::invalid_argument,
                "normalization scale must be positive");
    }
};

/// Fits β for a given projection and normalization, optionally on a subset of
/// rows. `train` holds raw (unstandardized) features.
inline TrainedModel fit_with_projection(const Dataset& train, ModelConfig config, NormalizationStats normalization,
                                        ProjectionMatrix projection, const GramOptions& opts = {},
                                        std::span<const std::size_t> rows = {}) {
    if (config.input_dim == 0) config.input_dim = train.dim();
    config.hidden_dim = projection.hidden_dim();
    config.validate();
    require_dims(train.dim() == config.input_dim, "dataset has " + std::to_string(train.dim()) +
                                                      " features, model expects " + std::to_string(config.input_dim));
    require_dims(projection.input_dim() == config.input_dim, "projection input_dim does not match dataset");
    require_dims(normalization.dim() == config.input_dim, "normalization length does not match dataset");

    std::vector<bool> seen(train.classes(), false);
    if (rows.empty())
        for (int y : train.labels()) seen[static_cast<std::size_t>(y)] = true;
    else
        for (auto r : rows) seen[static_cast<std::size_t>(train.labels().at(r))] = true;
    require(std::count(seen.begin(), seen.end(), true) >= 2, ErrorKind::invalid_argument,
            "training data must contain at least 2 classes");

    const Matrix y = train.one_hot();
    const KcnetEncoder encoder{projection, config.inhibition, &normalization};
    const auto system =
        rows.empty() ? accumulate_gram(train.features(), y, encoder, opts) : accumulate_gram(train.features(), y, encoder, rows, opts);
    auto beta = solve_ridge(system.gram, system.cross, config.ridge_lambda);
    return TrainedModel{config, std::move(projection), std::move(beta), std::move(normalization), train.class_labels()};
}

/// Standardize with train statistics, sample the projection, stream the Gram
/// system and solve for β.
inline TrainedModel fit(const Dataset& train, ModelConfig config, const GramOptions& opts = {}) {
    if (config.input_dim == 0) config.input_dim = train.dim();
    require_dims(train.dim() == config.input_dim, "dataset has " + std::to_string(train.dim()) +
                                                      " features, model expects " + std::to_string(config.input_dim));
    require(train.observed_classes() >= 2, ErrorKind::invalid_argument, "training data must contain at least 2 classes");
    auto stats = NormalizationStats::compute(train.features(), config.normalization);
    auto projection = sample_projection(config);
    return fit_with_projection(train, config, std::move(stats), std::move(projection), opts);
}

/// Z = H β, computed in row blocks from raw features.
inline Matrix predict_logits(const TrainedModel& model, const Matrix& x, std::size_t block_size = 2048) {
    require_dims(static_cast<std::size_t>(x.cols()) == model.config.input_dim,
                 "input has " + std::to_string(x.cols()) + " features, model expects " +
                     std::to_string(model.config.input_dim));
    const KcnetEncoder encoder{model.projection, model.config.inhibition, &model.normalization};
    Matrix z(x.rows(), model.beta.cols());
    Matrix xb, hb;
    for (Eigen::Index start = 0; start < x.rows(); start += static_cast<Eigen::Index>(block_size)) {
        const auto len = std::min<Eigen::Index>(static_cast<Eigen::Index>(block_size), x.rows() - start);
        xb = x.middleRows(start, len);
        encoder.encode(xb, hb);
        z.middleRows(start, len).noalias() = hb * model.beta;
    }
    return z;
}

/// Row-wise argmax; ties go to the lowest class index.
inline std::vector<int> argmax_rows(const Matrix& z) {
    std::vector<int> out(static_cast<std::size_t>(z.rows()));
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
        Eigen::Index best = 0;
        for (Eigen::Index k = 1; k < z.cols(); ++k)
            if (z(r, k) > z(r, best)) best = k;
        out[static_cast<std::size_t>(r)] = static_cast<int>(best);
    }
    return out;
}

/// Row-wise softmax, shifted by the row max for stability.
inline Matrix softmax_rows(const Matrix& z) {
    Matrix p(z.rows(), z.cols());
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
        const double m = z.row(r).maxCoeff();
        p.row(r) = (z.row(r).array() - m).exp();
        p.row(r) /= p.row(r).sum();
    }
    return p;
}

inline std::vector<int> predict_labels(const TrainedModel& model, const Matrix& x) {
    return argmax_rows(predict_logits(model, x));
}

}  // namespace kcnet
