#include "support.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace kcnet;
namespace fs = std::filesystem;

namespace {

std::string cli() {
    const char* p = std::getenv("KCNET_CLI");
    return p ? p : KCNET_CLI_PATH;
}

/// Runs the CLI in `dir` and returns its exit status; output goes to dir/log.txt.
int run(const test::TempDir& dir, const std::string& args) {
    const std::string cmd = "cd '" + dir.path().string() + "' && '" + cli() + "' " + args + " > log.txt 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::size_t line_count(const std::string& path) {
    const auto text = slurp(path);
    return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

/// Well-separated blobs written as CSV with string labels in the last column.
void write_blobs_csv(const std::string& path, std::size_t n, std::size_t d, std::size_t c, std::uint64_t seed) {
    const auto data = test::blobs(n, d, c, seed, 0.4);
    std::ofstream out(path);
    for (std::size_t i = 0; i < d; ++i) out << "f" << i << ",";
    out << "label\n";
    for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t i = 0; i < d; ++i)
            out << data.features()(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(i)) << ",";
        out << "class" << data.labels()[s] << "\n";
    }
}

bool no_partial_dirs(const test::TempDir& dir) {
    for (const auto& e : fs::directory_iterator(dir.path()))
        if (e.path().filename().string().find("partial") != std::string::npos) return false;
    return true;
}

}  // namespace

TEST(Cli, MissingInputIsIoErrorAndLeavesNoOutput) {
    const test::TempDir dir;
    EXPECT_EQ(run(dir, "fit --csv-train missing.csv --out out"), 3);
    EXPECT_FALSE(fs::exists(dir.path() / "out"));
    EXPECT_TRUE(no_partial_dirs(dir));
}

TEST(Cli, BadArgumentsAreUsageErrors) {
    const test::TempDir dir;
    write_blobs_csv(dir.file("d.csv"), 60, 4, 2, 1);
    EXPECT_EQ(run(dir, "fit --csv-train d.csv --hidden -3"), 2);
    EXPECT_EQ(run(dir, "fit --csv-train d.csv --fan-in 9"), 2);
    EXPECT_EQ(run(dir, "fit --csv-train d.csv --normalization sideways"), 2);
    EXPECT_EQ(run(dir, "frobnicate"), 2);
    EXPECT_EQ(run(dir, "ensemble --csv-train d.csv --hidden 100 --submodels 3 --sub-hidden 10"), 2);
}

TEST(Cli, ParseDimensionAndSingularExitCodes) {
    const test::TempDir dir;
    write_blobs_csv(dir.file("d.csv"), 60, 4, 2, 1);
    write_blobs_csv(dir.file("wide.csv"), 60, 5, 2, 1);
    test::write_text(dir.file("ragged.csv"), "a,b,label\n1,2,x\n3,y\n");
    EXPECT_EQ(run(dir, "fit --csv-train ragged.csv"), 4);

    ASSERT_EQ(run(dir, "fit --csv-train d.csv --hidden 20 --fan-in 2 --reps 1 --out m"), 0);
    EXPECT_EQ(run(dir, "evaluate --model m/model.kcnm --csv-test wide.csv"), 5);
    test::write_text(dir.file("junk.kcnm"), "definitely not a model");
    EXPECT_EQ(run(dir, "evaluate --model junk.kcnm --csv-test d.csv"), 4);

    // More hidden units than training rows and no penalty: rank-deficient system.
    EXPECT_EQ(run(dir, "fit --csv-train d.csv --hidden 200 --fan-in 2 --lambda 0 --reps 1"), 6);
    EXPECT_NE(slurp(dir.file("log.txt")).find("lambda"), std::string::npos);
}

TEST(Cli, SameSeedGivesIdenticalModelFiles) {
    const test::TempDir dir;
    write_blobs_csv(dir.file("d.csv"), 150, 6, 3, 2);
    ASSERT_EQ(run(dir, "fit --csv-train d.csv --hidden 40 --fan-in 3 --reps 1 --seed 7 --out a"), 0);
    ASSERT_EQ(run(dir, "fit --csv-train d.csv --hidden 40 --fan-in 3 --reps 1 --seed 7 --out b"), 0);
    EXPECT_EQ(slurp(dir.file("a/model.kcnm")), slurp(dir.file("b/model.kcnm")));
    ASSERT_EQ(run(dir, "fit --csv-train d.csv --hidden 40 --fan-in 3 --reps 1 --seed 8 --out c"), 0);
    EXPECT_NE(slurp(dir.file("a/model.kcnm")), slurp(dir.file("c/model.kcnm")));
    // An existing non-empty output directory is refused.
    EXPECT_EQ(run(dir, "fit --csv-train d.csv --hidden 40 --fan-in 3 --out a"), 2);
}

TEST(Cli, ConfigSnapshotReplays) {
    const test::TempDir dir;
    write_blobs_csv(dir.file("d.csv"), 150, 6, 3, 3);
    ASSERT_EQ(run(dir, "elm --csv-train d.csv --hidden 25 --lambda 0.5 --reps 1 --seed 4 --out a"), 0);
    ASSERT_EQ(run(dir, "--config a/config.ini elm --out b"), 0);
    EXPECT_EQ(slurp(dir.file("a/model.kcnm")), slurp(dir.file("b/model.kcnm")));
    EXPECT_EQ(slurp(dir.file("a/config.ini")), slurp(dir.file("b/config.ini")));
}

TEST(Cli, RepetitionsWriteOneModelAndReportEach) {
    const test::TempDir dir;
    write_blobs_csv(dir.file("d.csv"), 150, 6, 3, 4);
    ASSERT_EQ(run(dir, "fit --csv-train d.csv --hidden 30 --fan-in 3 --reps 3 --out r"), 0);
    for (int k = 0; k < 3; ++k) EXPECT_TRUE(fs::exists(dir.path() / ("r/model-" + std::to_string(k) + ".kcnm")));
    EXPECT_EQ(line_count(dir.file("r/report.jsonl")), 3u);
    EXPECT_EQ(line_count(dir.file("r/summary.csv")), 4u);
    ASSERT_EQ(run(dir, "evaluate --model r/model-1.kcnm --csv-test d.csv"), 0);
    EXPECT_NE(slurp(dir.file("log.txt")).find("\"accuracy\""), std::string::npos);
}

TEST(Cli, DoaAndEnsembleHistories) {
    const test::TempDir dir;
    write_blobs_csv(dir.file("d.csv"), 240, 6, 3, 5);
    ASSERT_EQ(run(dir, "doa --csv-train d.csv --hidden 30 --fan-in 3 --epochs 3 --stop-metric 2 --lr 0.5 --reps 2 "
                       "--out d"),
              0);
    EXPECT_EQ(line_count(dir.file("d/history.csv")), 1u + 2u * 3u);
    ASSERT_EQ(run(dir, "doa --csv-train d.csv --hidden 30 --fan-in 3 --epochs 5 --stop-metric 0 --reps 1 --out s"), 0);
    EXPECT_EQ(line_count(dir.file("s/history.csv")), 2u);
    ASSERT_EQ(run(dir, "ensemble --csv-train d.csv --fan-in 3 --submodels 2 --sub-hidden 10 --epochs 2 --stop-metric 2 "
                       "--reps 1 --out e"),
              0);
    const auto history = slurp(dir.file("e/history.csv"));
    EXPECT_NE(history.find("\n0,0,"), std::string::npos);
    EXPECT_NE(history.find("\n0,1,"), std::string::npos);
    EXPECT_EQ(line_count(dir.file("e/history.csv")), 1u + 2u * 2u);
}

TEST(Cli, GradcheckExitCodes) {
    const test::TempDir dir;
    EXPECT_EQ(run(dir, "gradcheck --instances 20"), 0);
    EXPECT_NE(slurp(dir.file("log.txt")).find("PASS"), std::string::npos);
    EXPECT_EQ(run(dir, "gradcheck --inputs 20"), 2);
}

TEST(Cli, BenchWritesOneRowPerModelAndWidth) {
    const test::TempDir dir;
    write_blobs_csv(dir.file("d.csv"), 120, 6, 2, 6);
    ASSERT_EQ(run(dir, "bench --csv-train d.csv --hidden 20..40 --step 10 --fan-in 3 --out b"), 0);
    EXPECT_EQ(line_count(dir.file("b/bench.csv")), 1u + 2u * 3u);
    EXPECT_EQ(run(dir, "bench --csv-train d.csv --hidden 40..20 --fan-in 3"), 2);
}

TEST(Cli, IdxInputWorks) {
    const test::TempDir dir;
    const auto data = test::blobs(100, 16, 2, 7);
    Matrix x = data.features();
    x = ((x.array() + 3.0) / 6.0).cwiseMax(0.0).cwiseMin(1.0);
    write_idx(Dataset(x, data.labels(), {"0", "1"}), dir.file("img"), dir.file("lab"), 4, 4);
    ASSERT_EQ(run(dir, "fit --idx-train img lab --hidden 40 --fan-in 3 --reps 1 --out o"), 0);
    EXPECT_NE(slurp(dir.file("o/report.jsonl")).find("\"normalization\":\"global\""), std::string::npos);
    EXPECT_EQ(run(dir, "evaluate --model o/model.kcnm --idx-test img lab"), 0);
}

TEST(Cli, ImbalancedBinaryBeatsMajorityBaseline) {
    // 85/15 split between two shifted clouds in 12 dimensions.
    const test::TempDir dir;
    Rng rng(8);
    std::ofstream out(dir.file("imb.csv"));
    for (int i = 0; i < 12; ++i) out << "f" << i << ",";
    out << "y\n";
    for (int s = 0; s < 1000; ++s) {
        const bool minority = rng.uniform01() < 0.15;
        for (int i = 0; i < 12; ++i) out << rng.uniform(-1.0, 1.0) + (minority && i < 4 ? 1.2 : 0.0) << ",";
        out << (minority ? "rare" : "common") << "\n";
    }
    out.close();
    ASSERT_EQ(run(dir, "fit --csv-train imb.csv --label-column y --hidden 300 --fan-in 3 --lambda 1 --metric "
                       "weighted-f1 --test-fraction 0.3 --reps 1 --out o"),
              0);
    const auto report = nlohmann::json::parse(slurp(dir.file("o/report.jsonl")));
    const double f1 = report["test"]["weighted_f1"].get<double>();
    // Always predicting the majority class p gives weighted F1 = p * 2p / (1 + p).
    std::size_t support_rare = 0, total = 0;
    for (const auto& c : report["test"]["per_class"]) {
        total += c["support"].get<std::size_t>();
        if (c["class"] == "rare") support_rare = c["support"].get<std::size_t>();
    }
    const double p = 1.0 - static_cast<double>(support_rare) / static_cast<double>(total);
    EXPECT_GT(f1, p * 2.0 * p / (1.0 + p));
}
