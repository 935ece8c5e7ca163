#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <sbs/random.hpp>

using sbs::SeedStream;
using sbs::StreamPurpose;

TEST(SeedStream, SameKeySameSequence)
{
    SeedStream a(42), b(42);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a(), b());
}

TEST(SeedStream, DifferentKeysDiffer)
{
    SeedStream a(1), b(2);
    int equal = 0;
    for (int i = 0; i < 100; ++i) equal += a() == b();
    EXPECT_EQ(equal, 0);
}

TEST(SeedStream, SplittingDoesNotShiftParent)
{
    SeedStream a(9), b(9);
    (void)a.split(3);
    (void)a.split(4)();
    for (int i = 0; i < 10; ++i) EXPECT_EQ(a(), b());
}

TEST(SeedStream, DerivedPurposesAreDistinct)
{
    std::set<std::uint64_t> firsts;
    for (auto p : {StreamPurpose::data_shuffle, StreamPurpose::parameter_init, StreamPurpose::gating,
                   StreamPurpose::subsample, StreamPurpose::dataset}) {
        for (std::uint64_t trial = 0; trial < 4; ++trial) firsts.insert(SeedStream::derive(5, trial, p)());
    }
    EXPECT_EQ(firsts.size(), 20u);
}

TEST(SeedStream, UniformMomentsAndRange)
{
    SeedStream r(3);
    const int n = 200000;
    double s = 0, ss = 0;
    for (int i = 0; i < n; ++i) {
        const double u = r.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        s += u;
        ss += u * u;
    }
    const double mean = s / n, var = ss / n - mean * mean;
    // 5 sigma of the sample mean of U(0,1)
    EXPECT_NEAR(mean, 0.5, 5 * std::sqrt(1.0 / 12 / n));
    EXPECT_NEAR(var, 1.0 / 12, 2e-3);
}

TEST(SeedStream, NormalMoments)
{
    SeedStream r(4);
    const int n = 200000;
    double s = 0, ss = 0;
    for (int i = 0; i < n; ++i) {
        const double z = r.normal();
        s += z;
        ss += z * z;
    }
    EXPECT_NEAR(s / n, 0.0, 5 / std::sqrt(double(n)));
    EXPECT_NEAR(ss / n, 1.0, 0.02);
}

TEST(SeedStream, BelowCoversRangeEvenly)
{
    SeedStream r(5);
    std::vector<int> counts(7, 0);
    const int n = 70000;
    for (int i = 0; i < n; ++i) {
        const auto v = r.below(7);
        ASSERT_LT(v, 7u);
        ++counts[v];
    }
    for (int c : counts) EXPECT_NEAR(c, n / 7.0, 5 * std::sqrt(n * (1.0 / 7) * (6.0 / 7)));
}

TEST(SeedStream, ShuffleIsPermutation)
{
    std::vector<int> v(50);
    std::iota(v.begin(), v.end(), 0);
    auto w = v;
    SeedStream(6).shuffle(std::span<int>(w));
    EXPECT_NE(v, w);
    std::sort(w.begin(), w.end());
    EXPECT_EQ(v, w);
}
