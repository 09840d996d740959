#pragma once

// Dynamic optimization of the binary projection: preference scores,
// straight-through gradient, the epoch loop and its ensemble variant.

#include "kcnet/common.hpp"
#include "kcnet/core.hpp"
#include "kcnet/data.hpp"
#include "kcnet/eval.hpp"

#include <future>
#include <span>
#include <vector>

namespace kcnet {

/// B x d real scores in [-1, 1]; a connection is on iff its score is > 0.
struct PreferenceMatrix {
    Matrix scores;

    std::size_t hidden_dim() const { return static_cast<std::size_t>(scores.rows()); }
    std::size_t input_dim() const { return static_cast<std::size_t>(scores.cols()); }
};

/// Scores for connected entries are drawn from (0, 1], for the rest from (-1, 0].
inline PreferenceMatrix init_scores(const ProjectionMatrix& w, std::uint64_t seed) {
    Rng rng(seed);
    PreferenceMatrix s{Matrix(static_cast<Eigen::Index>(w.hidden_dim()), static_cast<Eigen::Index>(w.input_dim()))};
    for (std::size_t j = 0; j < w.hidden_dim(); ++j) {
        auto row = w.row(j);
        auto next = row.begin();
        for (std::size_t i = 0; i < w.input_dim(); ++i) {
            const double u = rng.uniform01();
            const bool on = next != row.end() && *next == i;
            if (on) ++next;
            s.scores(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = on ? 1.0 - u : -u;
        }
    }
    return s;
}

inline ProjectionMatrix scores_to_weights(const PreferenceMatrix& s) {
    std::vector<std::vector<std::uint32_t>> rows(s.hidden_dim());
    for (std::size_t j = 0; j < s.hidden_dim(); ++j)
        for (std::size_t i = 0; i < s.input_dim(); ++i)
            if (s.scores(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) > 0.0)
                rows[j].push_back(static_cast<std::uint32_t>(i));
    return ProjectionMatrix(s.input_dim(), rows);
}

/// Number of (j, i) entries connected in exactly one of the two projections.
inline std::size_t count_flips(const ProjectionMatrix& a, const ProjectionMatrix& b) {
    require_dims(a.hidden_dim() == b.hidden_dim() && a.input_dim() == b.input_dim(), "projection shapes differ");
    std::size_t flips = 0;
    for (std::size_t j = 0; j < a.hidden_dim(); ++j) {
        auto ra = a.row(j);
        auto rb = b.row(j);
        std::vector<std::uint32_t> diff;
        std::set_symmetric_difference(ra.begin(), ra.end(), rb.begin(), rb.end(), std::back_inserter(diff));
        flips += diff.size();
    }
    return flips;
}

/// Straight-through gradient of the validation cross-entropy w.r.t. the
/// preference scores, summed over the batch:
///
///   ∇s_ji = Σ_v x_vi Σ_k (ŷ_vk − y_vk) β_jk   where h_vj > 0 and w_ji = 1,
///
/// and 0 elsewhere, with ŷ = softmax(βᵀh). The constant ∂x̂_j/∂x̄_j = 1 − C/B
/// is left out; it scales every entry equally and is absorbed by the step size.
/// `x` holds standardized features, `y` one-hot targets.
inline Matrix grad_scores(const Matrix& x, const Matrix& y, const ProjectionMatrix& w, const OutputWeights& beta,
                          double inhibition) {
    require_dims(static_cast<std::size_t>(x.cols()) == w.input_dim(), "feature count does not match projection");
    require_dims(x.rows() == y.rows(), "feature and target row counts differ");
    require_dims(static_cast<std::size_t>(beta.rows()) == w.hidden_dim() && beta.cols() == y.cols(),
                 "output weights shape does not match projection and targets");
    const Matrix h = hidden_forward(x, w, inhibition);
    const Matrix residual = softmax_rows(h * beta) - y;
    // Back-propagated signal at each hidden unit, gated by the ReLU.
    ColMatrix signal = residual * beta.transpose();
    signal.array() *= (h.array() > 0.0).cast<double>();

    const auto b = static_cast<Eigen::Index>(w.hidden_dim());
    const auto d = static_cast<Eigen::Index>(w.input_dim());
    Matrix grad = Matrix::Zero(b, d);
    const ColMatrix xc = x;
    if (w.nnz() * 16 > w.hidden_dim() * w.input_dim()) {
        const Matrix full = signal.transpose() * xc;
        for (std::size_t j = 0; j < w.hidden_dim(); ++j)
            for (auto i : w.row(j)) grad(static_cast<Eigen::Index>(j), i) = full(static_cast<Eigen::Index>(j), i);
    } else {
        for (std::size_t j = 0; j < w.hidden_dim(); ++j)
            for (auto i : w.row(j))
                grad(static_cast<Eigen::Index>(j), i) = signal.col(static_cast<Eigen::Index>(j)).dot(xc.col(i));
    }
    return grad;
}

struct DoaConfig {
    std::size_t max_epochs = 5;
    double learning_rate = 1e-4;
    /// Stop once the validation metric reaches this value.
    double stop_metric = 1.0;
    double val_fraction = 1.0 / 6.0;
    std::uint64_t seed = 0;
    Metric metric = Metric::accuracy;
    bool stratified = false;

    void validate() const {
        require(max_epochs >= 1, ErrorKind::invalid_argument, "max_epochs must be >= 1");
        require(learning_rate >= 0.0 && std::isfinite(learning_rate), ErrorKind::invalid_argument,
                "learning_rate must be finite and >= 0");
        require(val_fraction > 0.0 && val_fraction < 1.0, ErrorKind::invalid_argument,
                "val_fraction must lie in (0, 1)");
    }
};

/// Seed of the train/validation split drawn at `epoch`.
inline std::uint64_t doa_split_seed(std::uint64_t seed, std::size_t epoch) {
    return derive_seed(derive_seed(seed, 0x5EED5B17ULL), epoch);
}

inline std::uint64_t doa_score_seed(std::uint64_t seed) { return derive_seed(seed, 0x5C0E5ULL); }

struct DoaEpoch {
    std::size_t epoch = 0;
    double val_metric = 0.0;
    double lambda = 0.0;
    /// Connections switched by this epoch's score update (0 on the last epoch).
    std::size_t flipped = 0;
    std::size_t connections = 0;
};

struct DoaHistory {
    std::vector<DoaEpoch> epochs;
};

struct DoaResult {
    TrainedModel model;
    DoaHistory history;
    PreferenceMatrix scores;
};

/// Alternates closed-form β fits on a fresh training split with gradient
/// steps on the preference scores computed on the matching validation split.
///
/// `data` must exclude the test set. Normalization statistics are computed
/// once on all of `data`. The returned model is the one from the last
/// completed forward pass.
inline DoaResult run_doa(const Dataset& data, ModelConfig config, const DoaConfig& doa, const GramOptions& opts = {}) {
    doa.validate();
    if (config.input_dim == 0) config.input_dim = data.dim();
    config.validate();
    require_dims(config.input_dim == data.dim(), "dataset dimension does not match model config");

    const auto stats = NormalizationStats::compute(data.features(), config.normalization);
    auto w = sample_projection(config);
    DoaResult result;
    result.scores = init_scores(w, doa_score_seed(doa.seed));

    for (std::size_t epoch = 0; epoch < doa.max_epochs; ++epoch) {
        const auto parts = split_indices(data, {1.0 - doa.val_fraction, doa_split_seed(doa.seed, epoch), doa.stratified});
        result.model = fit_with_projection(data, config, stats, w, opts, parts.first);

        Dataset val = subset(data, parts.second);
        stats.apply(val.features());
        const Matrix val_y = val.one_hot();
        const KcnetEncoder encoder{w, config.inhibition};
        Matrix h;
        encoder.encode(val.features(), h);
        const auto predicted = argmax_rows(h * result.model.beta);

        DoaEpoch record;
        record.epoch = epoch;
        record.val_metric = score(doa.metric, predicted, val.labels(), val.classes());
        record.lambda = config.ridge_lambda;
        record.connections = w.nnz();
        result.history.epochs.push_back(record);
        if (record.val_metric >= doa.stop_metric || epoch + 1 == doa.max_epochs) break;

        const Matrix grad = grad_scores(val.features(), val_y, w, result.model.beta, config.inhibition);
        result.scores.scores = (result.scores.scores - doa.learning_rate * grad).cwiseMax(-1.0).cwiseMin(1.0);
        auto next = scores_to_weights(result.scores);
        result.history.epochs.back().flipped = count_flips(w, next);
        w = std::move(next);
    }
    return result;
}

struct EnsembleConfig {
    std::size_t submodels = 10;
    std::size_t sub_hidden = 650;
    DoaConfig doa;
    /// Submodels run concurrently on up to this many threads.
    unsigned threads = 1;

    void validate(std::size_t total_hidden) const {
        require(submodels >= 2, ErrorKind::invalid_argument, "ensemble needs at least 2 submodels");
        require(sub_hidden >= 1, ErrorKind::invalid_argument, "sub_hidden must be >= 1");
        require(submodels * sub_hidden == total_hidden, ErrorKind::invalid_argument,
                "submodels x sub_hidden (" + std::to_string(submodels * sub_hidden) + ") must equal hidden_dim (" +
                    std::to_string(total_hidden) + ")");
        doa.validate();
    }
};

/// Model and DOA settings of submodel k; seeds depend only on the master seeds and k.
inline std::pair<ModelConfig, DoaConfig> ensemble_member(const ModelConfig& config, const EnsembleConfig& ens,
                                                         std::size_t k) {
    ModelConfig sub = config;
    sub.hidden_dim = ens.sub_hidden;
    sub.seed = derive_seed(config.seed, k);
    DoaConfig doa = ens.doa;
    doa.seed = derive_seed(ens.doa.seed, k);
    return {sub, doa};
}

struct EnsembleResult {
    TrainedModel model;
    std::vector<DoaHistory> histories;
};

/// Runs DOA independently on each narrow submodel, stacks their final
/// projections in submodel order and refits one β on all of `data`.
inline EnsembleResult run_ensemble_doa(const Dataset& data, ModelConfig config, const EnsembleConfig& ens,
                                       const GramOptions& opts = {}) {
    if (config.input_dim == 0) config.input_dim = data.dim();
    config.validate();
    ens.validate(config.hidden_dim);

    std::vector<DoaResult> members(ens.submodels);
    const unsigned outer = std::max(1u, ens.threads);
    GramOptions inner = opts;
    if (outer > 1) inner.threads = 1;
    parallel_for(ens.submodels, outer, [&](std::size_t k, unsigned) {
        auto [sub, doa] = ensemble_member(config, ens, k);
        members[k] = run_doa(data, sub, doa, inner);
    });

    std::vector<ProjectionMatrix> parts;
    EnsembleResult result;
    for (auto& m : members) {
        parts.push_back(std::move(m.model.projection));
        result.histories.push_back(std::move(m.history));
    }
    auto assembled = ProjectionMatrix::concatenate(parts);
    result.model = fit_with_projection(data, config, NormalizationStats::compute(data.features(), config.normalization),
                                       std::move(assembled), opts);
    return result;
}

}  // namespace kcnet
