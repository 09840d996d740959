#pragma once

// Extreme learning machine baseline: dense uniform hidden weights, sigmoid
// activation, least-squares decoder through the same Gram/solver path.

#include "kcnet/common.hpp"
#include "kcnet/core.hpp"
#include "kcnet/data.hpp"

#include <cmath>
#include <iostream>
#include <string>
#include <vector>

namespace kcnet {

struct ElmConfig {
    std::size_t input_dim = 0;
    std::size_t hidden_dim = 1000;
    std::uint64_t seed = 0;
    double ridge_lambda = 0.0;
    /// Used once, with a warning, when the λ = ridge_lambda system is singular.
    double jitter_lambda = 1e-8;
    Normalization normalization = Normalization::per_feature;

    void validate() const {
        require(input_dim >= 1, ErrorKind::invalid_argument, "input_dim must be >= 1");
        require(hidden_dim >= 1, ErrorKind::invalid_argument, "hidden_dim must be >= 1");
        require(ridge_lambda >= 0.0 && jitter_lambda >= 0.0, ErrorKind::invalid_argument, "lambda must be >= 0");
    }
};

/// 1 / (1 + e^-t) without overflow for large |t|.
inline double sigmoid(double t) {
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

struct ElmModel {
    ElmConfig config;
    ColMatrix input_weights;  // B x d, entries in [-1, 1]
    Vector biases;            // B, entries in [0, 1]
    OutputWeights beta;       // B x c
    NormalizationStats normalization;
    std::vector<std::string> class_labels;
    /// λ actually used for β (ridge_lambda, or jitter_lambda after a retry).
    double lambda_used = 0.0;

    std::size_t classes() const { return class_labels.size(); }
};

/// a_i ~ U(-1, 1) drawn row by row, then b_i ~ U(0, 1).
inline std::pair<ColMatrix, Vector> sample_elm_weights(const ElmConfig& config) {
    config.validate();
    Rng rng(config.seed);
    const auto b = static_cast<Eigen::Index>(config.hidden_dim);
    const auto d = static_cast<Eigen::Index>(config.input_dim);
    ColMatrix a(b, d);
    for (Eigen::Index j = 0; j < b; ++j)
        for (Eigen::Index i = 0; i < d; ++i) a(j, i) = rng.uniform(-1.0, 1.0);
    Vector bias(b);
    for (Eigen::Index j = 0; j < b; ++j) bias(j) = rng.uniform(0.0, 1.0);
    return {std::move(a), std::move(bias)};
}

struct ElmEncoder {
    const ColMatrix& input_weights;
    const Vector& biases;
    const NormalizationStats* normalization = nullptr;

    std::size_t hidden_dim() const { return static_cast<std::size_t>(input_weights.rows()); }

    void encode(const Matrix& x, Matrix& h) const {
        require_dims(x.cols() == input_weights.cols(), "feature count does not match ELM input weights");
        if (normalization) {
            Matrix xn = x;
            normalization->apply(xn);
            h.noalias() = xn * input_weights.transpose();
        } else {
            h.noalias() = x * input_weights.transpose();
        }
        h.rowwise() += biases.transpose();
        h = h.unaryExpr([](double t) { return sigmoid(t); });
    }
};

/// Solves β for given hidden weights and normalization. Retries once with
/// jitter_lambda, with a warning on stderr, if the system is singular.
inline ElmModel elm_fit_with_weights(const Dataset& train, ElmConfig config, NormalizationStats normalization,
                                     ColMatrix input_weights, Vector biases, const GramOptions& opts = {}) {
    if (config.input_dim == 0) config.input_dim = train.dim();
    config.hidden_dim = static_cast<std::size_t>(input_weights.rows());
    config.validate();
    require_dims(config.input_dim == train.dim(), "dataset dimension does not match ELM config");
    require_dims(static_cast<std::size_t>(input_weights.cols()) == config.input_dim &&
                     biases.size() == input_weights.rows() && normalization.dim() == config.input_dim,
                 "ELM weights or normalization do not match the input dimension");
    require(train.observed_classes() >= 2, ErrorKind::invalid_argument, "training data must contain at least 2 classes");
    ElmModel m;
    m.config = config;
    m.input_weights = std::move(input_weights);
    m.biases = std::move(biases);
    m.normalization = std::move(normalization);
    m.class_labels = train.class_labels();

    const ElmEncoder encoder{m.input_weights, m.biases, &m.normalization};
    const auto system = accumulate_gram(train.features(), train.one_hot(), encoder, opts);
    try {
        m.beta = solve_ridge(system.gram, system.cross, config.ridge_lambda);
        m.lambda_used = config.ridge_lambda;
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::singular) throw;
        std::cerr << "warning: ELM Gram system singular at lambda=" << config.ridge_lambda << ", retrying with lambda="
                  << config.jitter_lambda << "\n";
        m.beta = solve_ridge(system.gram, system.cross, config.jitter_lambda);
        m.lambda_used = config.jitter_lambda;
    }
    return m;
}

inline ElmModel elm_fit(const Dataset& train, ElmConfig config, const GramOptions& opts = {}) {
    if (config.input_dim == 0) config.input_dim = train.dim();
    require_dims(config.input_dim == train.dim(), "dataset dimension does not match ELM config");
    auto [a, b] = sample_elm_weights(config);
    return elm_fit_with_weights(train, config, NormalizationStats::compute(train.features(), config.normalization),
                                std::move(a), std::move(b), opts);
}

inline Matrix elm_logits(const ElmModel& model, const Matrix& x, std::size_t block_size = 2048) {
    require_dims(static_cast<std::size_t>(x.cols()) == model.config.input_dim,
                 "input has " + std::to_string(x.cols()) + " features, model expects " +
                     std::to_string(model.config.input_dim));
    const ElmEncoder encoder{model.input_weights, model.biases, &model.normalization};
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

inline std::vector<int> elm_predict(const ElmModel& model, const Matrix& x) {
    return argmax_rows(elm_logits(model, x));
}

}  // namespace kcnet
