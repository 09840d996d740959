#include "support.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <numeric>
#include <set>

using namespace kcnet;

TEST(Seeds, SplitmixMatchesReferenceValues) {
    // Reference values from an independent Python implementation.
    EXPECT_EQ(splitmix64(0), 16294208416658607535ULL);
    EXPECT_EQ(derive_seed(0, 0), 9857899409763097596ULL);
    EXPECT_EQ(derive_seed(7, 3), 12076007618687920237ULL);
    EXPECT_EQ(derive_seed(2024, 11), 18153683416995920497ULL);
}

TEST(Seeds, StreamsAreDistinct) {
    std::set<std::uint64_t> seen;
    for (std::uint64_t m = 0; m < 20; ++m)
        for (std::uint64_t s = 0; s < 50; ++s) seen.insert(derive_seed(m, s));
    EXPECT_EQ(seen.size(), 1000u);
}

TEST(Rng, EngineIsTheStandardMersenneTwister) {
    // The standard fixes the 10000th output of a default-seeded mt19937_64.
    Rng rng(5489);
    std::uint64_t v = 0;
    for (int i = 0; i < 10000; ++i) v = rng.next_u64();
    EXPECT_EQ(v, 9981545732273789042ULL);
}

TEST(Rng, SameSeedSameStream) {
    Rng a(99), b(99);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.below(1000), b.below(1000));
}

TEST(Rng, UniformRanges) {
    Rng rng(3);
    for (int i = 0; i < 100000; ++i) {
        const double u = rng.uniform01();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        const double v = rng.uniform(-1.0, 1.0);
        ASSERT_GE(v, -1.0);
        ASSERT_LT(v, 1.0);
    }
}

TEST(Rng, BelowIsRoughlyUniform) {
    Rng rng(11);
    std::vector<int> counts(7, 0);
    const int n = 70000;
    for (int i = 0; i < n; ++i) ++counts[rng.below(7)];
    for (int c : counts) EXPECT_NEAR(c, n / 7, 400);
    EXPECT_THROW(rng.below(0), Error);
}

TEST(Rng, SampleWithoutReplacementIsDistinct) {
    Rng rng(5);
    for (int t = 0; t < 500; ++t) {
        const auto s = rng.sample_without_replacement(20, 7);
        ASSERT_EQ(s.size(), 7u);
        std::set<std::uint32_t> u(s.begin(), s.end());
        ASSERT_EQ(u.size(), 7u);
        ASSERT_LT(*u.rbegin(), 20u);
    }
    EXPECT_EQ(rng.sample_without_replacement(4, 4).size(), 4u);
    EXPECT_THROW(rng.sample_without_replacement(3, 4), Error);
}

TEST(Rng, PermutationCoversRange) {
    Rng rng(8);
    auto p = rng.permutation(100);
    std::sort(p.begin(), p.end());
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p[i], i);
}

TEST(ParallelFor, RunsEveryTaskOnce) {
    for (unsigned threads : {1u, 2u, 4u}) {
        std::vector<std::atomic<int>> hits(257);
        parallel_for(hits.size(), threads, [&](std::size_t t, unsigned w) {
            ASSERT_LT(w, threads);
            ++hits[t];
        });
        for (auto& h : hits) EXPECT_EQ(h.load(), 1);
    }
}

TEST(ParallelFor, PropagatesExceptions) {
    auto boom = [](std::size_t t, unsigned) {
        if (t == 13) throw Error(ErrorKind::singular, "boom");
    };
    EXPECT_THROW(parallel_for(50, 3, boom), Error);
    EXPECT_THROW(parallel_for(50, 1, boom), Error);
}

TEST(Errors, KindIsPreserved) {
    try {
        require(false, ErrorKind::truncated, "short");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::truncated);
        EXPECT_STREQ(e.what(), "short");
    }
    EXPECT_THROW(require_dims(false, "x"), Error);
}
