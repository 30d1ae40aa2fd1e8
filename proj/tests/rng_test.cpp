#include "fedtune/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

using namespace fedtune;

TEST(RngStream, SameKeySameSequence) {
    RngStream a(stream_key(7, "test"));
    RngStream b(stream_key(7, "test"));
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(RngStream, DifferentTagsDiffer) {
    RngStream a(stream_key(7, "alpha"));
    RngStream b(stream_key(7, "beta"));
    bool differs = false;
    for (int i = 0; i < 10 && !differs; ++i) differs = a.next_u64() != b.next_u64();
    EXPECT_TRUE(differs);
}

TEST(RngStream, IndexedKeysDiffer) {
    EXPECT_NE(stream_key(1, "t", 0, 1), stream_key(1, "t", 1, 0));
    EXPECT_NE(stream_key(1, "t", 2), stream_key(2, "t", 2));
}

TEST(RngStream, UniformBelowInRange) {
    RngStream s(stream_key(3, "uniform"));
    for (int i = 0; i < 1000; ++i) EXPECT_LT(s.uniform_below(17), 17u);
    EXPECT_THROW(s.uniform_below(0), std::invalid_argument);
}

TEST(RngStream, NormalMoments) {
    RngStream s(stream_key(11, "normal"));
    const int n = 100000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = s.normal();
        sum += x;
        sum2 += x * x;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    EXPECT_NEAR(mean, 0.0, 0.02);
    EXPECT_NEAR(var, 1.0, 0.03);
}

TEST(RngStream, GammaMoments) {
    for (double alpha : {0.5, 4.0}) {
        RngStream s(stream_key(13, "gamma", static_cast<std::uint64_t>(alpha * 10)));
        const int n = 100000;
        double sum = 0.0, sum2 = 0.0;
        for (int i = 0; i < n; ++i) {
            const double x = s.gamma(alpha);
            sum += x;
            sum2 += x * x;
        }
        const double mean = sum / n;
        const double var = sum2 / n - mean * mean;
        EXPECT_NEAR(mean, alpha, 0.05 * alpha + 0.02);
        EXPECT_NEAR(var, alpha, 0.08 * alpha + 0.05);
    }
    RngStream s(1);
    EXPECT_THROW(s.gamma(0.0), std::invalid_argument);
}

TEST(RngStream, ShuffleIsPermutationAndDeterministic) {
    std::vector<int> v(50);
    std::iota(v.begin(), v.end(), 0);
    std::vector<int> w = v;
    RngStream a(stream_key(5, "shuffle"));
    RngStream b(stream_key(5, "shuffle"));
    a.shuffle(v);
    b.shuffle(w);
    EXPECT_EQ(v, w);
    std::set<int> unique(v.begin(), v.end());
    EXPECT_EQ(unique.size(), 50u);
}
