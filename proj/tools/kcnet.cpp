// kcnet command-line tool: fit, evaluate, doa, ensemble, elm, gradcheck, bench.

#include "kcnet/kcnet.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace kcnet;

namespace {

enum ExitCode : int {
    kOk = 0,
    kUsage = 2,
    kIo = 3,
    kParse = 4,
    kDimension = 5,
    kSingular = 6,
    kCheckFailed = 7,
};

int exit_code(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::invalid_argument: return kUsage;
        case ErrorKind::io: return kIo;
        case ErrorKind::parse:
        case ErrorKind::bad_magic:
        case ErrorKind::truncated:
        case ErrorKind::count_mismatch:
        case ErrorKind::empty_dataset: return kParse;
        case ErrorKind::dimension: return kDimension;
        case ErrorKind::singular: return kSingular;
    }
    return 1;
}

// ---------------------------------------------------------------------------
// Options

struct DataArgs {
    std::vector<std::string> idx_train;
    std::vector<std::string> idx_test;
    std::string csv_train;
    std::string csv_test;
    std::string label_column = "label";
    std::string delimiter = ",";
    double test_fraction = 0.1;
    bool transpose = false;
    std::string normalization = "auto";
};

struct RunArgs {
    std::uint64_t seed = 0;
    std::size_t reps = 5;
    std::string out;
    unsigned threads = default_threads();
    std::size_t block_size = 2048;
    std::string metric = "accuracy";
};

struct ModelArgs {
    std::size_t hidden = 2000;
    std::size_t fan_in = 7;
    double inhibition = 1.0;
    double lambda = 1.0;
};

struct DoaArgs {
    std::size_t epochs = 5;
    double lr = 1e-4;
    double stop_metric = 1.0;
    double val_fraction = 1.0 / 6.0;
    std::size_t submodels = 10;
    std::size_t sub_hidden = 650;
};

void add_train_data(CLI::App* app, DataArgs& a) {
    app->add_option("--idx-train", a.idx_train, "IDX training images and labels")->expected(2)->type_name("IMG LAB");
    app->add_option("--idx-test", a.idx_test, "IDX test images and labels")->expected(2)->type_name("IMG LAB");
    app->add_option("--csv-train", a.csv_train, "CSV training file");
    app->add_option("--csv-test", a.csv_test, "CSV test file");
    app->add_option("--label-column", a.label_column, "CSV label column name")->capture_default_str();
    app->add_option("--delimiter", a.delimiter, "CSV delimiter (one character, or 'tab')")->capture_default_str();
    app->add_option("--test-fraction", a.test_fraction, "held-out fraction when no test file is given")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    app->add_flag("--emnist-transpose", a.transpose, "IDX images are stored column-major (EMNIST)");
    app->add_option("--normalization", a.normalization, "auto, per-feature or global (auto: global for IDX)")
        ->check(CLI::IsMember({"auto", "per-feature", "global"}))
        ->capture_default_str();
}

void add_run(CLI::App* app, RunArgs& r, bool with_reps = true) {
    app->add_option("--seed", r.seed, "master seed")->capture_default_str();
    if (with_reps) app->add_option("--reps", r.reps, "repetitions with derived seeds")->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--out", r.out, "output directory (created on success only)");
    app->add_option("--threads", r.threads, "worker threads (default: KCNET_THREADS or hardware)")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app->add_option("--block-size", r.block_size, "rows per Gram block")->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--metric", r.metric, "accuracy or weighted-f1")
        ->check(CLI::IsMember({"accuracy", "weighted-f1"}))
        ->capture_default_str();
}

void add_model(CLI::App* app, ModelArgs& m) {
    app->add_option("--hidden", m.hidden, "hidden units")->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--fan-in", m.fan_in, "inputs per hidden unit")->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--inhibition", m.inhibition, "global inhibition strength")->capture_default_str();
    app->add_option("--lambda", m.lambda, "ridge penalty")->capture_default_str();
}

void add_doa(CLI::App* app, DoaArgs& d) {
    app->add_option("--epochs", d.epochs, "maximum epochs")->check(CLI::PositiveNumber)->capture_default_str();
    app->add_option("--lr", d.lr, "score learning rate")->capture_default_str();
    app->add_option("--stop-metric", d.stop_metric, "stop once the validation metric reaches this")->capture_default_str();
    app->add_option("--val-fraction", d.val_fraction, "validation fraction per epoch")->capture_default_str();
}

Metric metric_of(const RunArgs& r) { return r.metric == "weighted-f1" ? Metric::weighted_f1 : Metric::accuracy; }

char delimiter_of(const std::string& s) {
    if (s == "tab" || s == "\\t" || s == "\t") return '\t';
    require(s.size() == 1, ErrorKind::invalid_argument, "delimiter must be a single character");
    return s[0];
}

std::uint64_t rep_seed(std::uint64_t seed, std::size_t rep) { return derive_seed(seed, rep); }

// ---------------------------------------------------------------------------
// Data

struct Loaded {
    Dataset train;
    Dataset test;
    Normalization mode = Normalization::per_feature;
};

Loaded load_data(const DataArgs& a, std::uint64_t seed) {
    const bool idx = !a.idx_train.empty();
    const bool csv = !a.csv_train.empty();
    require(idx != csv, ErrorKind::invalid_argument, "give exactly one of --idx-train or --csv-train");
    require(!(idx && !a.csv_test.empty()) && !(csv && !a.idx_test.empty()), ErrorKind::invalid_argument,
            "training and test data must use the same format");
    Loaded out;
    bool have_test = false;
    if (idx) {
        IdxOptions opts{a.transpose, {}};
        out.train = load_idx(a.idx_train[0], a.idx_train[1], opts);
        if (!a.idx_test.empty()) {
            opts.classes = out.train.class_labels();
            out.test = load_idx(a.idx_test[0], a.idx_test[1], opts);
            have_test = true;
        }
        out.mode = Normalization::global;
    } else {
        CsvOptions opts{a.label_column, delimiter_of(a.delimiter), {}};
        out.train = load_csv(a.csv_train, opts);
        if (!a.csv_test.empty()) {
            opts.classes = out.train.class_labels();
            out.test = load_csv(a.csv_test, opts);
            have_test = true;
        }
        out.mode = Normalization::per_feature;
    }
    if (a.normalization != "auto") out.mode = parse_normalization(a.normalization);
    if (!have_test) {
        require(a.test_fraction > 0.0 && a.test_fraction < 1.0, ErrorKind::invalid_argument,
                "--test-fraction must lie in (0, 1)");
        auto parts = split(out.train, {1.0 - a.test_fraction, derive_seed(seed, 0x7E57ULL), true});
        out.train = std::move(parts.first);
        out.test = std::move(parts.second);
    }
    require_dims(out.train.dim() == out.test.dim(), "training and test feature counts differ");
    return out;
}

// ---------------------------------------------------------------------------
// Output directory: everything is written to a staging directory that is
// renamed into place only when the command succeeds.

class OutputDir {
public:
    explicit OutputDir(const std::string& path) {
        if (path.empty()) return;
        final_ = fs::path(path);
        require(!fs::exists(final_) || (fs::is_directory(final_) && fs::is_empty(final_)), ErrorKind::invalid_argument,
                "output directory " + path + " already exists and is not empty");
        const auto parent = final_.has_parent_path() ? final_.parent_path() : fs::path(".");
        require(fs::is_directory(parent), ErrorKind::io, "parent of " + path + " does not exist");
        staging_ = parent / ("." + final_.filename().string() + ".partial-" + std::to_string(::getpid()));
        fs::remove_all(staging_);
        fs::create_directory(staging_);
    }
    ~OutputDir() {
        if (!staging_.empty() && !committed_) {
            std::error_code ec;
            fs::remove_all(staging_, ec);
        }
    }
    OutputDir(const OutputDir&) = delete;
    OutputDir& operator=(const OutputDir&) = delete;

    bool enabled() const { return !staging_.empty(); }
    fs::path file(const std::string& name) const { return staging_ / name; }

    void write(const std::string& name, const std::string& text) const {
        if (!enabled()) return;
        std::ofstream out(file(name), std::ios::binary);
        require(static_cast<bool>(out), ErrorKind::io, "cannot write " + file(name).string());
        out << text;
    }

    void commit() {
        if (!enabled()) return;
        if (fs::exists(final_)) fs::remove(final_);  // empty directory checked above
        fs::rename(staging_, final_);
        committed_ = true;
    }

private:
    fs::path final_;
    fs::path staging_;
    bool committed_ = false;
};

std::string model_name(std::size_t rep, std::size_t reps) {
    return reps == 1 ? "model.kcnm" : "model-" + std::to_string(rep) + ".kcnm";
}

// ---------------------------------------------------------------------------
// Shared run plumbing

struct RepResult {
    std::uint64_t seed = 0;
    EvalReport report;
};

void print_rep(std::size_t rep, const RepResult& r) {
    std::cout << "rep " << rep << " seed " << r.seed << ": accuracy " << std::fixed << std::setprecision(4)
              << r.report.accuracy << " weighted_f1 " << r.report.weighted_f1 << " (train " << std::setprecision(2)
              << r.report.timings.train << " s)" << std::defaultfloat << "\n";
}

std::string summary_csv(const std::vector<RepResult>& reps) {
    std::vector<double> acc, f1, total;
    for (const auto& r : reps) {
        acc.push_back(r.report.accuracy);
        f1.push_back(r.report.weighted_f1);
        total.push_back(r.report.timings.total());
    }
    std::ostringstream s;
    s << std::setprecision(10) << "metric,mean,sd,n\n";
    for (auto [name, v] : {std::pair{"accuracy", &acc}, std::pair{"weighted_f1", &f1}, std::pair{"total_s", &total}}) {
        const auto ms = mean_sd(*v);
        s << name << "," << ms.mean << "," << ms.sd << "," << v->size() << "\n";
    }
    return s.str();
}

void print_summary(const std::vector<RepResult>& reps, Metric metric) {
    std::vector<double> v;
    for (const auto& r : reps) v.push_back(metric == Metric::accuracy ? r.report.accuracy : r.report.weighted_f1);
    const auto ms = mean_sd(v);
    std::cout << to_string(metric) << " mean " << std::fixed << std::setprecision(4) << ms.mean << " sd " << ms.sd
              << " over " << v.size() << " rep(s)" << std::defaultfloat << "\n";
}

std::string history_header() { return "rep,submodel,epoch,val_metric,lambda,flipped,connections\n"; }

void append_history(std::ostringstream& s, std::size_t rep, long submodel, const DoaHistory& h) {
    for (const auto& e : h.epochs)
        s << rep << "," << submodel << "," << e.epoch << "," << std::setprecision(10) << e.val_metric << "," << e.lambda
          << "," << e.flipped << "," << e.connections << "\n";
}

json rep_json(const std::string& command, std::size_t rep, const RepResult& r, const std::vector<std::string>& labels,
              json extra = json::object()) {
    json j = {{"command", command}, {"rep", rep}, {"seed", r.seed}, {"test", to_json(r.report, labels)}};
    for (auto& [k, v] : extra.items()) j[k] = v;
    return j;
}

ModelConfig model_config(const ModelArgs& m, const Loaded& data, std::uint64_t seed) {
    ModelConfig c;
    c.input_dim = data.train.dim();
    c.hidden_dim = m.hidden;
    c.fan_in = m.fan_in;
    c.inhibition = m.inhibition;
    c.ridge_lambda = m.lambda;
    c.seed = seed;
    c.normalization = data.mode;
    c.validate();
    return c;
}

DoaConfig doa_config(const DoaArgs& d, const RunArgs& r, std::uint64_t seed) {
    DoaConfig c;
    c.max_epochs = d.epochs;
    c.learning_rate = d.lr;
    c.stop_metric = d.stop_metric;
    c.val_fraction = d.val_fraction;
    c.seed = seed;
    c.metric = metric_of(r);
    c.validate();
    return c;
}

GramOptions gram_options(const RunArgs& r) { return {r.block_size, r.threads}; }

/// Fits KCNet and times configure (statistics and projection), train (Gram
/// and solve) and evaluate (test predictions) separately.
std::pair<TrainedModel, EvalReport> timed_kcnet(const Loaded& data, const ModelConfig& config, const GramOptions& opts) {
    NormalizationStats stats;
    ProjectionMatrix projection;
    TrainedModel model;
    std::vector<int> predicted;
    const auto t = time_phases(
        [&] {
            stats = NormalizationStats::compute(data.train.features(), config.normalization);
            projection = sample_projection(config);
        },
        [&] { model = fit_with_projection(data.train, config, std::move(stats), std::move(projection), opts); },
        [&] { predicted = argmax_rows(predict_logits(model, data.test.features(), opts.block_size)); });
    return {std::move(model), evaluate(predicted, data.test.labels(), data.test.classes(), t)};
}

std::pair<ElmModel, EvalReport> timed_elm(const Loaded& data, const ElmConfig& config, const GramOptions& opts) {
    NormalizationStats stats;
    ColMatrix a;
    Vector b;
    ElmModel model;
    std::vector<int> predicted;
    const auto t = time_phases(
        [&] {
            stats = NormalizationStats::compute(data.train.features(), config.normalization);
            std::tie(a, b) = sample_elm_weights(config);
        },
        [&] { model = elm_fit_with_weights(data.train, config, std::move(stats), std::move(a), std::move(b), opts); },
        [&] { predicted = argmax_rows(elm_logits(model, data.test.features(), opts.block_size)); });
    return {std::move(model), evaluate(predicted, data.test.labels(), data.test.classes(), t)};
}

// ---------------------------------------------------------------------------
// Commands

int cmd_fit(const DataArgs& da, const RunArgs& ra, const ModelArgs& ma, const std::string& snapshot) {
    OutputDir out(ra.out);
    const auto data = load_data(da, ra.seed);
    std::vector<RepResult> results;
    std::ostringstream lines;
    for (std::size_t rep = 0; rep < ra.reps; ++rep) {
        RepResult r{rep_seed(ra.seed, rep), {}};
        auto [model, report] = timed_kcnet(data, model_config(ma, data, r.seed), gram_options(ra));
        r.report = std::move(report);
        print_rep(rep, r);
        if (out.enabled()) save_model(model, out.file(model_name(rep, ra.reps)).string());
        lines << rep_json("fit", rep, r, data.train.class_labels(),
                          {{"model", "kcnet"}, {"hidden", ma.hidden}, {"lambda", ma.lambda},
                           {"normalization", to_string(data.mode)}})
                     .dump()
              << "\n";
        results.push_back(std::move(r));
    }
    print_summary(results, metric_of(ra));
    out.write("config.ini", snapshot);
    out.write("report.jsonl", lines.str());
    out.write("summary.csv", summary_csv(results));
    out.commit();
    return kOk;
}

int cmd_elm(const DataArgs& da, const RunArgs& ra, const ModelArgs& ma, const std::string& snapshot) {
    OutputDir out(ra.out);
    const auto data = load_data(da, ra.seed);
    std::vector<RepResult> results;
    std::ostringstream lines;
    for (std::size_t rep = 0; rep < ra.reps; ++rep) {
        RepResult r{rep_seed(ra.seed, rep), {}};
        ElmConfig config;
        config.input_dim = data.train.dim();
        config.hidden_dim = ma.hidden;
        config.seed = r.seed;
        config.ridge_lambda = ma.lambda;
        config.normalization = data.mode;
        auto [model, report] = timed_elm(data, config, gram_options(ra));
        r.report = std::move(report);
        print_rep(rep, r);
        if (out.enabled()) save_model(model, out.file(model_name(rep, ra.reps)).string());
        lines << rep_json("elm", rep, r, data.train.class_labels(),
                          {{"model", "elm"}, {"hidden", ma.hidden}, {"lambda", model.lambda_used},
                           {"normalization", to_string(data.mode)}})
                     .dump()
              << "\n";
        results.push_back(std::move(r));
    }
    print_summary(results, metric_of(ra));
    out.write("config.ini", snapshot);
    out.write("report.jsonl", lines.str());
    out.write("summary.csv", summary_csv(results));
    out.commit();
    return kOk;
}

int cmd_doa(const DataArgs& da, const RunArgs& ra, const ModelArgs& ma, const DoaArgs& dd, const std::string& snapshot,
            bool ensemble) {
    OutputDir out(ra.out);
    const auto data = load_data(da, ra.seed);
    std::vector<RepResult> results;
    std::ostringstream lines, history;
    history << history_header();
    ModelArgs m = ma;
    if (ensemble) m.hidden = dd.submodels * dd.sub_hidden;
    for (std::size_t rep = 0; rep < ra.reps; ++rep) {
        RepResult r{rep_seed(ra.seed, rep), {}};
        const auto config = model_config(m, data, r.seed);
        const auto doa = doa_config(dd, ra, r.seed);
        TrainedModel model;
        std::vector<int> predicted;
        std::vector<DoaHistory> histories;
        PhaseTimings t;
        t.train = timed([&] {
            if (ensemble) {
                EnsembleConfig ens{dd.submodels, dd.sub_hidden, doa, ra.threads};
                auto res = run_ensemble_doa(data.train, config, ens, gram_options(ra));
                model = std::move(res.model);
                histories = std::move(res.histories);
            } else {
                auto res = run_doa(data.train, config, doa, gram_options(ra));
                model = std::move(res.model);
                histories.push_back(std::move(res.history));
            }
        });
        t.evaluate = timed([&] { predicted = predict_labels(model, data.test.features()); });
        r.report = evaluate(predicted, data.test.labels(), data.test.classes(), t);
        print_rep(rep, r);
        std::size_t epochs = 0;
        for (std::size_t k = 0; k < histories.size(); ++k) {
            append_history(history, rep, ensemble ? static_cast<long>(k) : -1, histories[k]);
            epochs += histories[k].epochs.size();
        }
        if (out.enabled()) save_model(model, out.file(model_name(rep, ra.reps)).string());
        json extra = {{"model", ensemble ? "kcnet-ensemble-doa" : "kcnet-doa"},
                      {"hidden", m.hidden},
                      {"lambda", m.lambda},
                      {"normalization", to_string(data.mode)},
                      {"epochs_run", epochs}};
        if (ensemble) extra["submodels"] = dd.submodels;
        lines << rep_json(ensemble ? "ensemble" : "doa", rep, r, data.train.class_labels(), extra).dump() << "\n";
        results.push_back(std::move(r));
    }
    print_summary(results, metric_of(ra));
    out.write("config.ini", snapshot);
    out.write("report.jsonl", lines.str());
    out.write("summary.csv", summary_csv(results));
    out.write("history.csv", history.str());
    out.commit();
    return kOk;
}

int cmd_evaluate(const std::string& model_path, const DataArgs& da, const RunArgs& ra) {
    OutputDir out(ra.out);
    const auto any = load_model(model_path);
    const auto& labels = std::visit([](const auto& m) -> const std::vector<std::string>& { return m.class_labels; }, any);
    require(!da.idx_test.empty() != !da.csv_test.empty(), ErrorKind::invalid_argument,
            "give exactly one of --idx-test or --csv-test");
    const Dataset test = !da.idx_test.empty()
                             ? load_idx(da.idx_test[0], da.idx_test[1], {da.transpose, labels})
                             : load_csv(da.csv_test, {da.label_column, delimiter_of(da.delimiter), labels});
    std::vector<int> predicted;
    PhaseTimings t;
    t.evaluate = timed([&] {
        predicted = std::holds_alternative<TrainedModel>(any)
                        ? argmax_rows(predict_logits(std::get<TrainedModel>(any), test.features(), ra.block_size))
                        : argmax_rows(elm_logits(std::get<ElmModel>(any), test.features(), ra.block_size));
    });
    const auto report = evaluate(predicted, test.labels(), test.classes(), t);
    const auto j = to_json(report, labels);
    std::cout << j.dump(2) << "\n";
    out.write("report.json", j.dump(2) + "\n");
    out.commit();
    return kOk;
}

int cmd_gradcheck(const gradcheck::Options& opts) {
    const auto rep = gradcheck::run(opts);
    std::cout << std::setprecision(3) << std::scientific;
    std::cout << "instances " << rep.instances << "\n";
    std::cout << "chain-rule oracle: max abs deviation " << rep.oracle_max_abs << " (tolerance " << opts.oracle_tolerance
              << ") " << (rep.oracle_pass ? "PASS" : "FAIL") << "\n";
    std::cout << "finite differences: max rel deviation " << rep.fd_max_rel << " over " << rep.fd_entries
              << " entries (tolerance " << opts.fd_tolerance << ") " << (rep.fd_pass ? "PASS" : "FAIL") << "\n";
    return rep.pass() ? kOk : kCheckFailed;
}

/// Parses "N" or "A..B".
std::pair<std::size_t, std::size_t> parse_width_range(const std::string& s) {
    const auto dots = s.find("..");
    try {
        if (dots == std::string::npos) {
            const auto v = std::stoul(s);
            return {v, v};
        }
        return {std::stoul(s.substr(0, dots)), std::stoul(s.substr(dots + 2))};
    } catch (const std::exception&) {
        throw Error(ErrorKind::invalid_argument, "bad width '" + s + "' (expected N or A..B)");
    }
}

int cmd_bench(const DataArgs& da, RunArgs ra, const ModelArgs& ma, const std::string& widths, std::size_t step,
              double elm_lambda, const std::string& snapshot) {
    ra.threads = 1;
    OutputDir out(ra.out);
    const auto [lo, hi] = parse_width_range(widths);
    require(lo >= 1 && lo <= hi && step >= 1, ErrorKind::invalid_argument, "invalid width range");
    const auto data = load_data(da, ra.seed);
    std::ostringstream csv;
    csv << "model,hidden,rep,seed,configure_s,train_s,evaluate_s,total_s,accuracy,weighted_f1\n";
    auto row = [&](const char* name, std::size_t b, std::size_t rep, std::uint64_t seed, const EvalReport& r) {
        csv << name << "," << b << "," << rep << "," << seed << "," << std::setprecision(6) << r.timings.configure << ","
            << r.timings.train << "," << r.timings.evaluate << "," << r.timings.total() << "," << std::setprecision(10)
            << r.accuracy << "," << r.weighted_f1 << "\n";
        std::cout << name << " B=" << b << " rep " << rep << ": total " << std::fixed << std::setprecision(2)
                  << r.timings.total() << " s, accuracy " << std::setprecision(4) << r.accuracy << std::defaultfloat
                  << "\n";
    };
    for (std::size_t b = lo; b <= hi; b += step) {
        for (std::size_t rep = 0; rep < ra.reps; ++rep) {
            const auto seed = rep_seed(ra.seed, rep);
            ModelArgs m = ma;
            m.hidden = b;
            row("kcnet", b, rep, seed, timed_kcnet(data, model_config(m, data, seed), gram_options(ra)).second);
            ElmConfig e;
            e.input_dim = data.train.dim();
            e.hidden_dim = b;
            e.seed = seed;
            e.ridge_lambda = elm_lambda;
            e.normalization = data.mode;
            row("elm", b, rep, seed, timed_elm(data, e, gram_options(ra)).second);
        }
    }
    if (!out.enabled()) std::cout << csv.str();
    out.write("config.ini", snapshot);
    out.write("bench.csv", csv.str());
    out.commit();
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"KCNet: sparse random projection classifiers with dynamic input selection"};
    app.require_subcommand(1);
    app.set_config("--config", "", "INI config file; keys go in a section named after the subcommand");
    app.set_version_flag("--version", "kcnet 1.0.0");

    DataArgs data;
    RunArgs run;
    ModelArgs model;
    DoaArgs doa;

    auto* fit = app.add_subcommand("fit", "fit KCNet and evaluate on the test split");
    add_train_data(fit, data);
    add_run(fit, run);
    add_model(fit, model);

    auto* elm = app.add_subcommand("elm", "fit the ELM baseline and evaluate on the test split");
    ModelArgs elm_model;
    elm_model.hidden = 1000;
    elm_model.lambda = 0.0;
    add_train_data(elm, data);
    add_run(elm, run);
    elm->add_option("--hidden", elm_model.hidden, "hidden units")->check(CLI::PositiveNumber)->capture_default_str();
    elm->add_option("--lambda", elm_model.lambda, "ridge penalty (0: least squares)")->capture_default_str();

    auto* doa_cmd = app.add_subcommand("doa", "optimize the projection with DOA, then evaluate");
    add_train_data(doa_cmd, data);
    add_run(doa_cmd, run);
    add_model(doa_cmd, model);
    add_doa(doa_cmd, doa);

    auto* ens = app.add_subcommand("ensemble", "run DOA on submodels, concatenate and refit");
    add_train_data(ens, data);
    add_run(ens, run);
    add_model(ens, model);
    add_doa(ens, doa);
    ens->add_option("--submodels", doa.submodels, "number of submodels")->capture_default_str();
    ens->add_option("--sub-hidden", doa.sub_hidden, "hidden units per submodel")->capture_default_str();

    auto* eval = app.add_subcommand("evaluate", "evaluate a saved model on test data");
    std::string model_path;
    eval->add_option("--model", model_path, "model file")->required();
    eval->add_option("--idx-test", data.idx_test, "IDX test images and labels")->expected(2)->type_name("IMG LAB");
    eval->add_option("--csv-test", data.csv_test, "CSV test file");
    eval->add_option("--label-column", data.label_column, "CSV label column name")->capture_default_str();
    eval->add_option("--delimiter", data.delimiter, "CSV delimiter")->capture_default_str();
    eval->add_flag("--emnist-transpose", data.transpose, "IDX images are stored column-major");
    eval->add_option("--out", run.out, "output directory for report.json");
    eval->add_option("--block-size", run.block_size, "rows per prediction block")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();

    auto* grad = app.add_subcommand("gradcheck", "check the score gradient against independent oracles");
    gradcheck::Options gopts;
    grad->add_option("--inputs", gopts.inputs, "input features (<= 8)")->capture_default_str();
    grad->add_option("--hidden", gopts.hidden, "hidden units (2..6)")->capture_default_str();
    grad->add_option("--classes", gopts.classes, "classes (2..4)")->capture_default_str();
    grad->add_option("--samples", gopts.samples, "validation samples")->capture_default_str();
    grad->add_option("--instances", gopts.instances, "random instances")->capture_default_str();
    grad->add_option("--seed", gopts.seed, "seed")->capture_default_str();

    auto* bench = app.add_subcommand("bench", "time KCNet and ELM single-threaded at matched widths");
    std::string widths = "6500";
    std::size_t step = 500;
    double elm_lambda = 0.0;
    ModelArgs bench_model;
    bench_model.lambda = 13.0;
    add_train_data(bench, data);
    add_run(bench, run);
    bench->get_option("--reps")->default_val(1);
    bench->add_option("--hidden", widths, "width N or range A..B")->capture_default_str();
    bench->add_option("--step", step, "width step for ranges")->capture_default_str();
    bench->add_option("--fan-in", bench_model.fan_in, "inputs per hidden unit")->capture_default_str();
    bench->add_option("--inhibition", bench_model.inhibition, "global inhibition strength")->capture_default_str();
    bench->add_option("--lambda", bench_model.lambda, "KCNet ridge penalty")->capture_default_str();
    bench->add_option("--elm-lambda", elm_lambda, "ELM ridge penalty")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        // Snapshot of the selected subcommand only, without unset options and --out;
        // loadable again with --config.
        std::string snapshot;
        {
            const auto prefix = app.get_subcommands().front()->get_name() + ".";
            std::istringstream all(app.config_to_str(true, false));
            for (std::string line; std::getline(all, line);)
                if (line.rfind(prefix, 0) == 0 && !line.ends_with("=\"\"") && line.rfind(prefix + "out=", 0) != 0)
                    snapshot += line + "\n";
        }
        if (*fit) return cmd_fit(data, run, model, snapshot);
        if (*elm) return cmd_elm(data, run, elm_model, snapshot);
        if (*doa_cmd) return cmd_doa(data, run, model, doa, snapshot, false);
        if (*ens) {
            if (ens->count("--hidden"))
                require(model.hidden == doa.submodels * doa.sub_hidden, ErrorKind::invalid_argument,
                        "--hidden must equal --submodels x --sub-hidden");
            return cmd_doa(data, run, model, doa, snapshot, true);
        }
        if (*eval) return cmd_evaluate(model_path, data, run);
        if (*grad) return cmd_gradcheck(gopts);
        if (*bench) return cmd_bench(data, run, bench_model, widths, step, elm_lambda, snapshot);
    } catch (const Error& e) {
        std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error (io): " << e.what() << "\n";
        return kIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kUsage;
}
