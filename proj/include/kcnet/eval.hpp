#pragma once

// Classification metrics and phase timing.

#include "kcnet/common.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace kcnet {

inline double accuracy(std::span<const int> predicted, std::span<const int> truth) {
    require_dims(predicted.size() == truth.size(), "prediction and truth lengths differ");
    require(!truth.empty(), ErrorKind::empty_dataset, "accuracy of an empty set");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i];
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

/// c x c counts; row = true class, column = predicted class.
inline std::vector<std::vector<std::size_t>> confusion_matrix(std::span<const int> predicted,
                                                              std::span<const int> truth, std::size_t classes) {
    require_dims(predicted.size() == truth.size(), "prediction and truth lengths differ");
    std::vector<std::vector<std::size_t>> m(classes, std::vector<std::size_t>(classes, 0));
    for (std::size_t i = 0; i < truth.size(); ++i) {
        require(truth[i] >= 0 && static_cast<std::size_t>(truth[i]) < classes && predicted[i] >= 0 &&
                    static_cast<std::size_t>(predicted[i]) < classes,
                ErrorKind::invalid_argument, "label outside [0, classes)");
        ++m[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])];
    }
    return m;
}

struct ClassScores {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;
};

/// Per-class precision, recall and F1. Any 0/0 ratio is taken as 0.
inline std::vector<ClassScores> class_scores(const std::vector<std::vector<std::size_t>>& confusion) {
    const std::size_t c = confusion.size();
    std::vector<ClassScores> out(c);
    for (std::size_t k = 0; k < c; ++k) {
        std::size_t predicted = 0;
        for (std::size_t t = 0; t < c; ++t) predicted += confusion[t][k];
        const std::size_t support = std::accumulate(confusion[k].begin(), confusion[k].end(), std::size_t{0});
        const double tp = static_cast<double>(confusion[k][k]);
        auto& s = out[k];
        s.support = support;
        s.precision = predicted ? tp / static_cast<double>(predicted) : 0.0;
        s.recall = support ? tp / static_cast<double>(support) : 0.0;
        s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    }
    return out;
}

/// Support-weighted mean of per-class F1.
inline double weighted_f1(std::span<const int> predicted, std::span<const int> truth, std::size_t classes) {
    const auto scores = class_scores(confusion_matrix(predicted, truth, classes));
    double num = 0.0;
    std::size_t total = 0;
    for (const auto& s : scores) {
        num += static_cast<double>(s.support) * s.f1;
        total += s.support;
    }
    return total ? num / static_cast<double>(total) : 0.0;
}

enum class Metric { accuracy, weighted_f1 };

inline double score(Metric metric, std::span<const int> predicted, std::span<const int> truth, std::size_t classes) {
    return metric == Metric::accuracy ? accuracy(predicted, truth) : weighted_f1(predicted, truth, classes);
}

inline const char* to_string(Metric m) { return m == Metric::accuracy ? "accuracy" : "weighted_f1"; }

// ---------------------------------------------------------------------------
// Timing

struct PhaseTimings {
    double configure = 0.0;
    double train = 0.0;
    double evaluate = 0.0;

    double total() const { return configure + train + evaluate; }
};

/// Wall time of fn() in seconds on the monotonic clock.
template <class Fn>
double timed(Fn&& fn) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

template <class Configure, class Train, class Evaluate>
PhaseTimings time_phases(Configure&& configure, Train&& train, Evaluate&& evaluate) {
    PhaseTimings t;
    t.configure = timed(configure);
    t.train = timed(train);
    t.evaluate = timed(evaluate);
    return t;
}

// ---------------------------------------------------------------------------
// Reports

struct EvalReport {
    double accuracy = 0.0;
    double weighted_f1 = 0.0;
    std::vector<ClassScores> per_class;
    std::vector<std::vector<std::size_t>> confusion;
    PhaseTimings timings;
};

inline EvalReport evaluate(std::span<const int> predicted, std::span<const int> truth, std::size_t classes,
                           PhaseTimings timings = {}) {
    EvalReport r;
    r.confusion = confusion_matrix(predicted, truth, classes);
    r.per_class = class_scores(r.confusion);
    r.accuracy = accuracy(predicted, truth);
    r.weighted_f1 = weighted_f1(predicted, truth, classes);
    r.timings = timings;
    return r;
}

inline nlohmann::json to_json(const PhaseTimings& t) {
    return {{"configure_s", t.configure}, {"train_s", t.train}, {"evaluate_s", t.evaluate}, {"total_s", t.total()}};
}

inline nlohmann::json to_json(const EvalReport& r, const std::vector<std::string>& class_labels = {}) {
    nlohmann::json per_class = nlohmann::json::array();
    for (std::size_t k = 0; k < r.per_class.size(); ++k) {
        const auto& s = r.per_class[k];
        per_class.push_back({{"class", k < class_labels.size() ? class_labels[k] : std::to_string(k)},
                             {"precision", s.precision},
                             {"recall", s.recall},
                             {"f1", s.f1},
                             {"support", s.support}});
    }
    return {{"accuracy", r.accuracy},
            {"weighted_f1", r.weighted_f1},
            {"per_class", per_class},
            {"confusion", r.confusion},
            {"timings", to_json(r.timings)}};
}

/// Mean and sample standard deviation (n - 1); SD is 0 for a single value.
struct MeanSd {
    double mean = 0.0;
    double sd = 0.0;
};

inline MeanSd mean_sd(std::span<const double> v) {
    MeanSd out;
    if (v.empty()) return out;
    out.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - out.mean) * (x - out.mean);
        out.sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return out;
}

}  // namespace kcnet
