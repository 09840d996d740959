#pragma once

// Independent references for the preference-score gradient, used by the
// gradcheck subcommand and the test suite. Everything here is dense, runs in
// long double and is meant for tiny sizes only.

#include "kcnet/common.hpp"
#include "kcnet/core.hpp"
#include "kcnet/doa.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace kcnet::gradcheck {

using Real = long double;
using RealMatrix = std::vector<std::vector<Real>>;

struct Instance {
    Matrix x;             // V x d
    Matrix y;             // V x c one-hot
    ColMatrix w;          // B x d, entries 0/1 (or real for the relaxation)
    OutputWeights beta;   // B x c
    double inhibition = 1.0;

    std::size_t hidden() const { return static_cast<std::size_t>(w.rows()); }
    std::size_t inputs() const { return static_cast<std::size_t>(w.cols()); }
    std::size_t classes() const { return static_cast<std::size_t>(y.cols()); }
    std::size_t samples() const { return static_cast<std::size_t>(x.rows()); }
};

struct Forward {
    std::vector<Real> inhibited;  // x̂
    std::vector<Real> hidden;     // h
    std::vector<Real> prob;       // ŷ
};

inline Forward forward(const Instance& in, const ColMatrix& w, std::size_t v, const std::vector<bool>* mask = nullptr) {
    const std::size_t b = in.hidden(), d = in.inputs(), c = in.classes();
    Forward f;
    std::vector<Real> summed(b, 0.0L);
    for (std::size_t j = 0; j < b; ++j)
        for (std::size_t i = 0; i < d; ++i)
            summed[j] += static_cast<Real>(w(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i))) *
                         static_cast<Real>(in.x(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(i)));
    Real mean = 0.0L;
    for (auto s : summed) mean += s;
    mean /= static_cast<Real>(b);
    f.inhibited.resize(b);
    f.hidden.resize(b);
    for (std::size_t j = 0; j < b; ++j) {
        f.inhibited[j] = summed[j] - static_cast<Real>(in.inhibition) * mean;
        const bool active = mask ? (*mask)[v * b + j] : f.inhibited[j] > 0.0L;
        f.hidden[j] = active ? f.inhibited[j] : 0.0L;
    }
    std::vector<Real> z(c, 0.0L);
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t j = 0; j < b; ++j)
            z[k] += static_cast<Real>(in.beta(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k))) * f.hidden[j];
    const Real top = *std::max_element(z.begin(), z.end());
    Real norm = 0.0L;
    f.prob.resize(c);
    for (std::size_t k = 0; k < c; ++k) norm += (f.prob[k] = std::exp(z[k] - top));
    for (auto& p : f.prob) p /= norm;
    return f;
}

/// ReLU pattern of the unperturbed forward pass, indexed [v * B + j].
inline std::vector<bool> active_set(const Instance& in) {
    std::vector<bool> mask(in.samples() * in.hidden());
    for (std::size_t v = 0; v < in.samples(); ++v) {
        const auto f = forward(in, in.w, v);
        for (std::size_t j = 0; j < in.hidden(); ++j) mask[v * in.hidden() + j] = f.inhibited[j] > 0.0L;
    }
    return mask;
}

/// Per-sample product of the chain factors ∂L/∂z · ∂z/∂h · ∂h/∂x̂ · ∂x̂/∂x̄ · ∂x̄/∂w
/// as dense matrices, taking only the diagonal 1 − C/B of ∂x̂/∂x̄, and the
/// connection mask of ∂x̄/∂w. Summed over samples.
inline RealMatrix chain_rule_oracle(const Instance& in) {
    const std::size_t b = in.hidden(), d = in.inputs(), c = in.classes();
    const Real diag = 1.0L - static_cast<Real>(in.inhibition) / static_cast<Real>(b);
    RealMatrix grad(b, std::vector<Real>(d, 0.0L));
    for (std::size_t v = 0; v < in.samples(); ++v) {
        const auto f = forward(in, in.w, v);
        // 1 x c
        std::vector<Real> dz(c);
        for (std::size_t k = 0; k < c; ++k)
            dz[k] = f.prob[k] - static_cast<Real>(in.y(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(k)));
        // (1 x c)(c x B) -> 1 x B
        std::vector<Real> dh(b, 0.0L);
        for (std::size_t j = 0; j < b; ++j)
            for (std::size_t k = 0; k < c; ++k)
                dh[j] += dz[k] * static_cast<Real>(in.beta(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)));
        // diagonal ReLU Jacobian, then diagonal inhibition Jacobian
        std::vector<Real> dbar(b);
        for (std::size_t j = 0; j < b; ++j) dbar[j] = dh[j] * (f.inhibited[j] > 0.0L ? 1.0L : 0.0L) * diag;
        for (std::size_t j = 0; j < b; ++j)
            for (std::size_t i = 0; i < d; ++i) {
                const bool on = in.w(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) != 0.0;
                const Real dw = on ? static_cast<Real>(in.x(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(i))) : 0.0L;
                grad[j][i] += dbar[j] * dw;
            }
    }
    return grad;
}

/// Validation cross-entropy (summed) with w treated as real-valued and the
/// ReLU pattern frozen to `mask`.
inline Real relaxed_loss(const Instance& in, const ColMatrix& w, const std::vector<bool>& mask) {
    Real loss = 0.0L;
    for (std::size_t v = 0; v < in.samples(); ++v) {
        const auto f = forward(in, w, v, &mask);
        for (std::size_t k = 0; k < in.classes(); ++k)
            if (in.y(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(k)) > 0.0) loss -= std::log(f.prob[k]);
    }
    return loss;
}

/// Exact derivative of relaxed_loss, including the coupling through the
/// hidden-unit mean: x_i · (g_j − (C/B) Σ_l g_l) per sample.
inline RealMatrix relaxed_gradient(const Instance& in, const std::vector<bool>& mask) {
    const std::size_t b = in.hidden(), d = in.inputs(), c = in.classes();
    RealMatrix grad(b, std::vector<Real>(d, 0.0L));
    for (std::size_t v = 0; v < in.samples(); ++v) {
        const auto f = forward(in, in.w, v, &mask);
        std::vector<Real> g(b, 0.0L);
        Real total = 0.0L;
        for (std::size_t j = 0; j < b; ++j) {
            if (!mask[v * b + j]) continue;
            for (std::size_t k = 0; k < c; ++k)
                g[j] += (f.prob[k] - static_cast<Real>(in.y(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(k)))) *
                        static_cast<Real>(in.beta(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)));
            total += g[j];
        }
        const Real coupling = static_cast<Real>(in.inhibition) / static_cast<Real>(b) * total;
        for (std::size_t j = 0; j < b; ++j)
            for (std::size_t i = 0; i < d; ++i)
                grad[j][i] += static_cast<Real>(in.x(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(i))) *
                              (g[j] - coupling);
    }
    return grad;
}

/// Random instance with d inputs, B hidden units, c classes and V samples.
/// Every row of w has at least one connection.
inline Instance random_instance(std::size_t d, std::size_t b, std::size_t c, std::size_t v, Rng& rng,
                                double inhibition = 1.0) {
    Instance in;
    in.inhibition = inhibition;
    in.x = Matrix(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(d));
    for (Eigen::Index r = 0; r < in.x.rows(); ++r)
        for (Eigen::Index i = 0; i < in.x.cols(); ++i) in.x(r, i) = rng.uniform(-2.0, 2.0);
    in.y = Matrix::Zero(static_cast<Eigen::Index>(v), static_cast<Eigen::Index>(c));
    for (Eigen::Index r = 0; r < in.y.rows(); ++r) in.y(r, static_cast<Eigen::Index>(rng.below(c))) = 1.0;
    in.w = ColMatrix::Zero(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(d));
    for (Eigen::Index j = 0; j < in.w.rows(); ++j) {
        for (Eigen::Index i = 0; i < in.w.cols(); ++i) in.w(j, i) = rng.uniform01() < 0.5 ? 1.0 : 0.0;
        in.w(j, static_cast<Eigen::Index>(rng.below(d))) = 1.0;
    }
    in.beta = ColMatrix(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(c));
    for (Eigen::Index j = 0; j < in.beta.rows(); ++j)
        for (Eigen::Index k = 0; k < in.beta.cols(); ++k) in.beta(j, k) = rng.uniform(-1.0, 1.0);
    return in;
}

struct Options {
    std::size_t inputs = 6;
    std::size_t hidden = 4;
    std::size_t classes = 3;
    std::size_t samples = 5;
    std::size_t instances = 100;
    std::uint64_t seed = 0;
    double step = 1e-6;
    double oracle_tolerance = 1e-12;
    double fd_tolerance = 1e-5;

    void validate() const {
        require(hidden >= 2, ErrorKind::invalid_argument,
                "gradcheck needs at least 2 hidden units (with one unit the inhibition removes all signal)");
        require(inputs >= 1 && classes >= 2 && samples >= 1 && instances >= 1, ErrorKind::invalid_argument,
                "gradcheck sizes must be positive with at least 2 classes");
        require(inputs <= 8 && hidden <= 6 && classes <= 4, ErrorKind::invalid_argument,
                "gradcheck sizes are limited to d <= 8, B <= 6, c <= 4");
    }
};

struct Report {
    std::size_t instances = 0;
    /// max |compact · (1 − C/B) − oracle| over all entries
    double oracle_max_abs = 0.0;
    /// max relative error of centered differences against relaxed_gradient
    double fd_max_rel = 0.0;
    std::size_t fd_entries = 0;
    bool oracle_pass = false;
    bool fd_pass = false;

    bool pass() const { return oracle_pass && fd_pass; }
};

inline Report run(const Options& opts) {
    opts.validate();
    Rng rng(opts.seed);
    Report rep;
    for (std::size_t n = 0; n < opts.instances; ++n) {
        const auto in = random_instance(opts.inputs, opts.hidden, opts.classes, opts.samples, rng);
        const auto w = ProjectionMatrix::from_dense(in.w);
        const Matrix compact = grad_scores(in.x, in.y, w, in.beta, in.inhibition);
        const auto oracle = chain_rule_oracle(in);
        const double scale = 1.0 - in.inhibition / static_cast<double>(in.hidden());
        for (std::size_t j = 0; j < in.hidden(); ++j)
            for (std::size_t i = 0; i < in.inputs(); ++i) {
                const double got = compact(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) * scale;
                rep.oracle_max_abs =
                    std::max(rep.oracle_max_abs, static_cast<double>(std::fabs(static_cast<Real>(got) - oracle[j][i])));
            }

        const auto mask = active_set(in);
        const auto exact = relaxed_gradient(in, mask);
        for (std::size_t j = 0; j < in.hidden(); ++j) {
            bool ever_active = false;
            for (std::size_t v = 0; v < in.samples(); ++v) ever_active = ever_active || mask[v * in.hidden() + j];
            if (!ever_active) continue;
            for (std::size_t i = 0; i < in.inputs(); ++i) {
                if (in.w(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) == 0.0) continue;
                ColMatrix up = in.w, down = in.w;
                up(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) += opts.step;
                down(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) -= opts.step;
                const Real fd = (relaxed_loss(in, up, mask) - relaxed_loss(in, down, mask)) /
                                (2.0L * static_cast<Real>(opts.step));
                const Real ref = exact[j][i];
                const Real rel = std::fabs(fd - ref) / std::max<Real>(std::fabs(ref), 1e-6L);
                rep.fd_max_rel = std::max(rep.fd_max_rel, static_cast<double>(rel));
                ++rep.fd_entries;
            }
        }
        ++rep.instances;
    }
    rep.oracle_pass = rep.oracle_max_abs <= opts.oracle_tolerance;
    rep.fd_pass = rep.fd_max_rel <= opts.fd_tolerance;
    return rep;
}

}  // namespace kcnet::gradcheck
