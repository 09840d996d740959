#include "support.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <set>

using namespace kcnet;
using test::TempDir;
using test::write_text;

namespace {

std::vector<std::uint8_t> idx_bytes(std::uint32_t magic, std::vector<std::uint32_t> dims, std::vector<std::uint8_t> payload) {
    std::vector<std::uint8_t> out;
    idx::put_be32(out, magic);
    for (auto d : dims) idx::put_be32(out, d);
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ErrorKind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no error thrown";
    return ErrorKind::invalid_argument;
}

std::string mnist_dir() {
    const char* env = std::getenv("KCNET_MNIST_DIR");
    return env ? env : "/root/data/mnist";
}

}  // namespace

// ---------------------------------------------------------------------------
// IDX

TEST(Idx, LoadsTinyFile) {
    TempDir dir;
    // Two 2x2 images, labels 3 and 5.
    write_bytes(dir.file("img"), idx_bytes(idx::kImageMagic, {2, 2, 2}, {0, 255, 51, 102, 255, 0, 0, 0}));
    write_bytes(dir.file("lab"), idx_bytes(idx::kLabelMagic, {2}, {3, 5}));
    const auto d = load_idx(dir.file("img"), dir.file("lab"));
    ASSERT_EQ(d.size(), 2u);
    ASSERT_EQ(d.dim(), 4u);
    EXPECT_EQ(d.class_labels(), (std::vector<std::string>{"3", "5"}));
    EXPECT_EQ(d.labels(), (std::vector<int>{0, 1}));
    EXPECT_DOUBLE_EQ(d.features()(0, 1), 1.0);
    EXPECT_DOUBLE_EQ(d.features()(0, 2), 0.2);
    EXPECT_DOUBLE_EQ(d.features()(0, 3), 0.4);
}

TEST(Idx, TransposeSwapsRowsAndColumns) {
    TempDir dir;
    write_bytes(dir.file("img"), idx_bytes(idx::kImageMagic, {1, 2, 2}, {10, 20, 30, 40}));
    write_bytes(dir.file("lab"), idx_bytes(idx::kLabelMagic, {1}, {0}));
    IdxOptions opts;
    opts.transpose = true;
    opts.classes = {"0", "1"};
    const auto d = load_idx(dir.file("img"), dir.file("lab"), opts);
    EXPECT_DOUBLE_EQ(d.features()(0, 1) * 255.0, 30.0);
    EXPECT_DOUBLE_EQ(d.features()(0, 2) * 255.0, 20.0);
}

TEST(Idx, DistinctErrorKinds) {
    TempDir dir;
    const auto lab = dir.file("lab");
    write_bytes(lab, idx_bytes(idx::kLabelMagic, {2}, {0, 1}));

    write_bytes(dir.file("bad_magic"), idx_bytes(0x00000802, {1, 1, 1}, {0}));
    EXPECT_EQ(kind_of([&] { load_idx(dir.file("bad_magic"), lab); }), ErrorKind::bad_magic);

    write_bytes(dir.file("short"), idx_bytes(idx::kImageMagic, {2, 2, 2}, {1, 2, 3}));
    EXPECT_EQ(kind_of([&] { load_idx(dir.file("short"), lab); }), ErrorKind::truncated);

    write_bytes(dir.file("header"), {0, 0, 8, 3, 0, 0});
    EXPECT_EQ(kind_of([&] { load_idx(dir.file("header"), lab); }), ErrorKind::truncated);

    write_bytes(dir.file("three"), idx_bytes(idx::kImageMagic, {3, 1, 1}, {1, 2, 3}));
    EXPECT_EQ(kind_of([&] { load_idx(dir.file("three"), lab); }), ErrorKind::count_mismatch);

    EXPECT_EQ(kind_of([&] { load_idx(dir.file("missing"), lab); }), ErrorKind::io);
}

TEST(Idx, RoundTripPreservesFeaturesAndLabels) {
    Rng rng(4);
    Matrix x(30, 12);
    for (Eigen::Index r = 0; r < x.rows(); ++r)
        for (Eigen::Index c = 0; c < x.cols(); ++c) x(r, c) = static_cast<double>(rng.below(256)) / 255.0;
    std::vector<int> y(30);
    for (auto& v : y) v = static_cast<int>(rng.below(3));
    y[0] = 0, y[1] = 1, y[2] = 2;
    const Dataset original(x, y, {"1", "4", "9"});
    TempDir dir;
    write_idx(original, dir.file("i"), dir.file("l"), 3, 4);
    const auto back = load_idx(dir.file("i"), dir.file("l"));
    EXPECT_EQ(back.labels(), original.labels());
    EXPECT_EQ(back.class_labels(), original.class_labels());
    EXPECT_EQ(back.features(), original.features());
    // Stored column-major and read back with the transpose option.
    Matrix sq(2, 4);
    sq << 0, 1, 0.2, 0.4, 1, 0, 0.6, 0.8;
    const Dataset square(sq, {0, 1}, {"0", "1"});
    write_idx(square, dir.file("ti"), dir.file("tl"), 2, 2, true);
    IdxOptions opts;
    opts.transpose = true;
    EXPECT_EQ(load_idx(dir.file("ti"), dir.file("tl"), opts).features(), square.features());
}

TEST(Idx, MnistShapeAndFirstTestLabel) {
    const auto dir = mnist_dir();
    if (!std::filesystem::exists(dir + "/t10k-labels-idx1-ubyte")) GTEST_SKIP() << "MNIST not found in " << dir;
    // Independent byte-level read: the first label sits right after the 8-byte header.
    std::ifstream raw(dir + "/t10k-labels-idx1-ubyte", std::ios::binary);
    raw.seekg(8);
    const int first = raw.get();
    EXPECT_EQ(first, 7);
    const auto test = load_idx(dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte");
    EXPECT_EQ(test.class_labels()[static_cast<std::size_t>(test.labels()[0])], std::to_string(first));
    EXPECT_EQ(test.size(), 10000u);
    const auto train = load_idx(dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte");
    EXPECT_EQ(train.size(), 60000u);
    EXPECT_EQ(train.dim(), 784u);
    EXPECT_EQ(train.classes(), 10u);
    EXPECT_GE(train.features().minCoeff(), 0.0);
    EXPECT_LE(train.features().maxCoeff(), 1.0);
}

// ---------------------------------------------------------------------------
// CSV

TEST(Csv, MinimalFile) {
    const auto d = parse_csv_dataset("a,b,label\n1,2,x\n3,4,y\n5,6,x\n7,8.5,y\n", {});
    EXPECT_EQ(d.size(), 4u);
    EXPECT_EQ(d.dim(), 2u);
    EXPECT_EQ(d.one_hot().rows(), 4);
    EXPECT_EQ(d.one_hot().cols(), 2);
    EXPECT_EQ(d.class_labels(), (std::vector<std::string>{"x", "y"}));
    EXPECT_EQ(d.feature_names(), (std::vector<std::string>{"a", "b"}));
    EXPECT_DOUBLE_EQ(d.features()(3, 1), 8.5);
}

TEST(Csv, LabelColumnAnywhereAndNumericLabelOrder) {
    const auto d = parse_csv_dataset("cls;f\n10;1\n9;2\n2;3\n", {"cls", ';', {}});
    EXPECT_EQ(d.class_labels(), (std::vector<std::string>{"2", "9", "10"}));
    EXPECT_EQ(d.labels(), (std::vector<int>{2, 1, 0}));
}

TEST(Csv, QuotingAndCrlf) {
    const auto rec = parse_csv("\"a,b\",\"say \"\"hi\"\"\"\r\n\"multi\nline\",x\r\n");
    ASSERT_EQ(rec.size(), 2u);
    EXPECT_EQ(rec[0][0], "a,b");
    EXPECT_EQ(rec[0][1], "say \"hi\"");
    EXPECT_EQ(rec[1][0], "multi\nline");
    EXPECT_THROW(parse_csv("\"open"), Error);
}

TEST(Csv, Errors) {
    EXPECT_EQ(kind_of([] { parse_csv_dataset("a,b\n1,2\n", {}); }), ErrorKind::parse);
    EXPECT_EQ(kind_of([] { parse_csv_dataset("a,label\n", {}); }), ErrorKind::empty_dataset);
    EXPECT_EQ(kind_of([] { parse_csv_dataset("a,label\n1,x\n2\n", {}); }), ErrorKind::parse);
    try {
        parse_csv_dataset("a,label\n1,x\noops,y\n", {});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::parse);
        EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos) << e.what();
    }
    EXPECT_EQ(kind_of([] { load_csv("/nonexistent/file.csv"); }), ErrorKind::io);
}

TEST(Csv, OdorShapedFile) {
    std::ostringstream s;
    s << "label";
    for (int i = 0; i < 159; ++i) s << ",f" << i;
    s << "\n";
    Rng rng(1);
    for (int r = 0; r < 960; ++r) {
        s << (r % 2);
        for (int i = 0; i < 159; ++i) s << "," << rng.uniform01();
        s << "\n";
    }
    const auto d = parse_csv_dataset(s.str(), {});
    EXPECT_EQ(d.size(), 960u);
    EXPECT_EQ(d.dim(), 159u);
}

TEST(Csv, LoadFromDisk) {
    TempDir dir;
    write_text(dir.file("t.csv"), "x\ty\tlabel\n1\t2\ta\n3\t4\tb\n");
    const auto d = load_csv(dir.file("t.csv"), {"label", '\t', {}});
    EXPECT_EQ(d.size(), 2u);
}

// ---------------------------------------------------------------------------
// Dataset and one-hot

TEST(DatasetTest, OneHotRowsSumToOne) {
    const auto d = test::blobs(50, 3, 4, 2);
    const Matrix y = d.one_hot();
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
        EXPECT_DOUBLE_EQ(y.row(r).sum(), 1.0);
        EXPECT_DOUBLE_EQ(y.row(r).maxCoeff(), 1.0);
    }
}

TEST(DatasetTest, RejectsDegenerateInputs) {
    EXPECT_THROW(Dataset(Matrix(0, 2), {}, {"a", "b"}), Error);
    EXPECT_THROW(Dataset(Matrix::Zero(1, 2), {0}, {"a"}), Error);
    EXPECT_THROW(Dataset(Matrix::Zero(1, 2), {2}, {"a", "b"}), Error);
    EXPECT_THROW(Dataset(Matrix::Zero(2, 2), {0}, {"a", "b"}), Error);
}

// ---------------------------------------------------------------------------
// Standardization

TEST(Standardize, HandCase) {
    Matrix x(2, 1);
    x << 1, 3;
    const auto s = standardize(Dataset(x, {0, 1}, {"a", "b"}));
    EXPECT_DOUBLE_EQ(s.stats.mean(0), 2.0);
    EXPECT_DOUBLE_EQ(s.stats.scale(0), 1.0);
    EXPECT_DOUBLE_EQ(s.train.features()(0, 0), -1.0);
    EXPECT_DOUBLE_EQ(s.train.features()(1, 0), 1.0);
}

TEST(Standardize, ConstantColumnPassesThrough) {
    Matrix x(3, 2);
    x << 5, 1, 5, 2, 5, 4;
    const auto s = standardize(Dataset(x, {0, 1, 0}, {"a", "b"}));
    EXPECT_EQ(s.stats.constant[0], 1);
    EXPECT_EQ(s.stats.constant[1], 0);
    EXPECT_DOUBLE_EQ(s.stats.scale(0), 1.0);
    for (Eigen::Index r = 0; r < 3; ++r) EXPECT_DOUBLE_EQ(s.train.features()(r, 0), 5.0);
}

TEST(Standardize, TrainColumnsAreCentredAndOthersUseTrainStats) {
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix x = test::random_matrix(40, 6, rng, -3.0, 7.0);
        const Matrix other = test::random_matrix(5, 6, rng);
        std::vector<int> y(40, 0);
        y[0] = 1;
        const auto s = standardize(Dataset(x, y, {"a", "b"}), {Dataset(other, {0, 1, 0, 1, 0}, {"a", "b"})});
        for (Eigen::Index c = 0; c < 6; ++c) {
            EXPECT_LE(std::abs(s.train.features().col(c).mean()), 1e-12);
            const double var = s.train.features().col(c).array().square().mean();
            EXPECT_NEAR(var, 1.0, 1e-12);
            EXPECT_NEAR(s.others[0].features()(2, c), (other(2, c) - s.stats.mean(c)) / s.stats.scale(c), 1e-15);
        }
    }
}

TEST(Standardize, GlobalModeUsesOneMeanAndScale) {
    Matrix x(2, 2);
    x << 0, 1, 2, 5;
    const auto s = NormalizationStats::compute(x, Normalization::global);
    EXPECT_DOUBLE_EQ(s.mean(0), 2.0);
    EXPECT_DOUBLE_EQ(s.mean(1), 2.0);
    EXPECT_DOUBLE_EQ(s.scale(0), std::sqrt(3.5));
    EXPECT_DOUBLE_EQ(s.scale(1), std::sqrt(3.5));
    Matrix z = x;
    s.apply(z);
    EXPECT_NEAR(z.mean(), 0.0, 1e-15);
    EXPECT_NEAR(z.array().square().mean(), 1.0, 1e-15);
    EXPECT_EQ(parse_normalization("global"), Normalization::global);
    EXPECT_THROW(parse_normalization("minmax"), Error);
}

// ---------------------------------------------------------------------------
// Splitting

TEST(Split, SixSamplesFiveToOne) {
    std::vector<int> labels{0, 1, 0, 1, 0, 1};
    const auto parts = split_indices(labels, 2, {5.0 / 6.0, 3, false});
    EXPECT_EQ(parts.first.size(), 5u);
    EXPECT_EQ(parts.second.size(), 1u);
    std::set<std::size_t> all(parts.first.begin(), parts.first.end());
    all.insert(parts.second.begin(), parts.second.end());
    EXPECT_EQ(all.size(), 6u);
}

TEST(Split, PartitionPropertyOnRandomInputs) {
    Rng rng(77);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + rng.below(200);
        const std::size_t c = 2 + rng.below(4);
        std::vector<int> labels(n);
        for (auto& l : labels) l = static_cast<int>(rng.below(c));
        const double f = 0.1 + 0.8 * rng.uniform01();
        const bool strat = rng.below(2) == 1;
        SplitIndices parts;
        try {
            parts = split_indices(labels, c, {f, rng.next_u64(), strat});
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::invalid_argument);
            continue;
        }
        std::vector<int> seen(n, 0);
        for (auto i : parts.first) ++seen[i];
        for (auto i : parts.second) ++seen[i];
        for (int s : seen) ASSERT_EQ(s, 1);
    }
}

TEST(Split, StratifiedKeepsProportions) {
    std::vector<int> labels(100);
    for (std::size_t i = 0; i < 100; ++i) labels[i] = static_cast<int>(i % 2);
    const auto parts = split_indices(labels, 2, {0.9, 5, true});
    for (auto* part : {&parts.first, &parts.second}) {
        int ones = 0;
        for (auto i : *part) ones += labels[i];
        const int zeros = static_cast<int>(part->size()) - ones;
        EXPECT_LE(std::abs(ones - zeros), 1);
    }
    EXPECT_EQ(parts.first.size(), 90u);
}

TEST(Split, SameSeedSameSplitAndEmptyPartRejected) {
    std::vector<int> labels(20, 0);
    labels[3] = 1;
    const auto a = split_indices(labels, 2, {0.7, 9, false});
    const auto b = split_indices(labels, 2, {0.7, 9, false});
    EXPECT_EQ(a.first, b.first);
    EXPECT_EQ(a.second, b.second);
    EXPECT_THROW(split_indices(std::vector<int>{0, 1}, 2, {0.99, 1, false}), Error);
    EXPECT_THROW(split_indices(labels, 2, {1.0, 1, false}), Error);
}
