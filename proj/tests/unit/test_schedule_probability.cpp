#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include <sbs/lr_schedule.hpp>
#include <sbs/model.hpp>
#include <sbs/update_probability.hpp>

#include "helpers.hpp"

using namespace sbs;
using testing_support::random_vector;

TEST(LrSchedule, Constant)
{
    LrSchedule s;
    s.scheme = LrScheme::constant;
    s.initial = 0.01;
    for (double e : {0.0, 3.0, 10.0}) EXPECT_EQ(lr_at(s, e, 10), 0.01);
}

TEST(LrSchedule, ExponentialDecay)
{
    LrSchedule s;
    s.scheme = LrScheme::exponential;
    EXPECT_EQ(lr_at(s, 0, 100), 0.1);
    for (int e = 0; e <= 100; ++e) EXPECT_NEAR(lr_at(s, e, 100), 0.1 * std::exp(-0.05 * e), 1e-15);
}

TEST(LrSchedule, StaircaseMilestones)
{
    LrSchedule s;
    s.scheme = LrScheme::staircase;
    EXPECT_EQ(lr_at(s, 0, 100), 0.1);
    EXPECT_EQ(lr_at(s, 49, 100), 0.1);
    EXPECT_DOUBLE_EQ(lr_at(s, 50, 100), 0.01);
    EXPECT_DOUBLE_EQ(lr_at(s, 74, 100), 0.01);
    EXPECT_DOUBLE_EQ(lr_at(s, 75, 100), 0.001);
    EXPECT_DOUBLE_EQ(lr_at(s, 100, 100), 0.001);
}

TEST(LrSchedule, SigmoidMidpointEndpointsAndSymmetry)
{
    LrSchedule s;
    const double total = 30;
    EXPECT_NEAR(lr_at(s, 15, total), (0.1 + 0.001) / 2, 1e-12);
    const double tol = 1e-3 * (0.1 - 0.001);
    EXPECT_NEAR(lr_at(s, 0, total), 0.1, tol);
    EXPECT_NEAR(lr_at(s, total, total), 0.001, tol);
    for (int e = 0; e <= 30; ++e) EXPECT_NEAR(lr_at(s, e, total) + lr_at(s, total - e, total), 0.101, 1e-15);
}

TEST(LrSchedule, SigmoidMonotoneAndPositive)
{
    LrSchedule s;
    double prev = 1.0;
    for (int e = 0; e <= 200; ++e) {
        const double v = lr_at(s, e, 200);
        EXPECT_GT(v, 0.0);
        EXPECT_LE(v, prev);
        prev = v;
    }
}

TEST(LrSchedule, Preconditions)
{
    LrSchedule s;
    EXPECT_THROW(lr_at(s, -1, 10), PreconditionError);
    EXPECT_THROW(lr_at(s, 11, 10), PreconditionError);
    EXPECT_THROW(lr_at(s, 0, 0), PreconditionError);
    s.milestones = {1.5};
    EXPECT_THROW(s.validate(), PreconditionError);
}

TEST(Sigmoid, Identities)
{
    EXPECT_EQ(sigmoid(0, 3.7, 0), 0.5);
    for (double x : {-5.0, 0.3, 100.0}) EXPECT_EQ(sigmoid(x, 0, 0), 0.5);
    for (double x : {-2.0, 0.0, 1.5})
        for (double a : {0.1, 2.0})
            for (double g : {-4.0, 0.0, 3.0}) EXPECT_NEAR(sigmoid(x, a, g) + sigmoid(-x, a, -g), 1.0, 1e-15);
}

TEST(Sigmoid, StableAtExtremes)
{
    EXPECT_EQ(sigmoid(700, 1, 0), 1.0);
    EXPECT_GT(sigmoid(-700, 1, 0), 0.0);
    EXPECT_TRUE(std::isfinite(sigmoid(-700, 1, 0)));
}

namespace {

std::vector<ParameterGroup> groups_of(std::initializer_list<std::size_t> sizes)
{
    std::vector<ParameterGroup> g;
    std::size_t off = 0, layer = 1;
    for (auto s : sizes) {
        g.push_back({layer++, ParamType::fully_connected, off, s, {s}});
        off += s;
    }
    return g;
}

} // namespace

TEST(GroupStats, SingleGroupHandArithmetic)
{
    const auto groups = groups_of({3});
    const std::vector<double> g{-1, 0, 1};
    auto s = compute_group_stats(g, groups);
    EXPECT_NEAR(s.mean[0], 2.0 / 3, 1e-15);
    EXPECT_NEAR(s.stddev[0], std::sqrt(2.0 / 9), 1e-15);
}

TEST(GroupStats, SizeWeightedCrossMean)
{
    const auto groups = groups_of({1, 3});
    const std::vector<double> g{1, 5, -5, 5};
    auto s = compute_group_stats(g, groups);
    EXPECT_DOUBLE_EQ(s.cross_mean, 4.0);
    // weighted population std of {1 (w=1), 5 (w=3)} about 4
    EXPECT_DOUBLE_EQ(s.cross_stddev, std::sqrt((9.0 + 3.0) / 4));
    EXPECT_EQ(s.stddev[1], 0.0);
}

TEST(GroupStats, EmptyGroupRejected)
{
    std::vector<ParameterGroup> groups{{1, ParamType::bias, 0, 0, {1}}};
    EXPECT_THROW(compute_group_stats(std::vector<double>{1.0}, groups), PreconditionError);
}

TEST(Probability, LocalStandardization)
{
    const auto groups = groups_of({7, 13, 1});
    auto g = random_vector(21, 3);
    ProbabilityConfig cfg;
    cfg.scheme = ProbabilityScheme::local;
    auto f = compute_probabilities(compute_group_stats(g, groups), g, groups, cfg);
    for (std::size_t l = 0; l < 2; ++l) {
        double s = 0, ss = 0;
        for (std::size_t j = groups[l].offset; j < groups[l].offset + groups[l].length; ++j) s += f.normalized[j];
        const double m = s / groups[l].length;
        for (std::size_t j = groups[l].offset; j < groups[l].offset + groups[l].length; ++j)
            ss += (f.normalized[j] - m) * (f.normalized[j] - m);
        EXPECT_LT(std::abs(m), 1e-9);
        EXPECT_LT(std::abs(std::sqrt(ss / groups[l].length) - 1.0), 1e-9);
    }
    EXPECT_EQ(f.normalized[20], 0.0);  // single-element group: zero std guard
    for (double o : f.offset) EXPECT_EQ(o, 0.0);
}

TEST(Probability, ZeroSlopesGiveOneHalf)
{
    const auto groups = groups_of({5, 5});
    auto g = random_vector(10, 4);
    ProbabilityConfig cfg;
    cfg.alpha = 0;
    cfg.lambda = 0;
    for (auto scheme : {ProbabilityScheme::local, ProbabilityScheme::global, ProbabilityScheme::combined}) {
        cfg.scheme = scheme;
        auto f = compute_probabilities(compute_group_stats(g, groups), g, groups, cfg);
        for (double p : f.p) EXPECT_EQ(p, 0.5);
    }
}

TEST(Probability, GlobalIsConstantWithinGroups)
{
    const auto groups = groups_of({6, 9, 4});
    auto g = random_vector(19, 5);
    for (std::size_t j = 6; j < 15; ++j) g[j] *= 10;
    ProbabilityConfig cfg;
    cfg.scheme = ProbabilityScheme::global;
    auto f = compute_probabilities(compute_group_stats(g, groups), g, groups, cfg);
    for (const auto& grp : groups) {
        auto b = f.p.begin() + grp.offset, e = b + grp.length;
        EXPECT_EQ(*std::max_element(b, e) - *std::min_element(b, e), 0.0);
    }
    // large-gradient group gets the lower probability with a negative lambda
    EXPECT_LT(f.p[6], f.p[0]);
}

TEST(Probability, CombinedReducesBitwise)
{
    const auto groups = groups_of({8, 3, 11});
    auto g = random_vector(22, 6);
    const auto stats = compute_group_stats(g, groups);
    ProbabilityConfig c;
    c.scheme = ProbabilityScheme::combined;

    ProbabilityConfig local = c;
    local.scheme = ProbabilityScheme::local;
    c.lambda = 0;
    EXPECT_EQ(compute_probabilities(stats, g, groups, c).p, compute_probabilities(stats, g, groups, local).p);

    c.lambda = -4;
    c.alpha = 0;
    ProbabilityConfig global = c;
    global.scheme = ProbabilityScheme::global;
    global.alpha = 0.1;
    EXPECT_EQ(compute_probabilities(stats, g, groups, c).p, compute_probabilities(stats, g, groups, global).p);
}

TEST(Probability, DefaultConstantsAtUnitGroupScore)
{
    // group means 2 and 0 with equal weights: cross mean 1, cross std 1
    const auto groups = groups_of({2, 2});
    const std::vector<double> g{1, 3, 0, 0};
    ProbabilityConfig cfg;
    auto f = compute_probabilities(compute_group_stats(g, groups), g, groups, cfg);
    EXPECT_DOUBLE_EQ(f.group_score[0], 1.0);
    EXPECT_DOUBLE_EQ(f.group_score[1], -1.0);
    EXPECT_DOUBLE_EQ(f.offset[0], -4.0);
    // v = 0 would sit at the group mean; evaluate the gate there
    EXPECT_NEAR(sigmoid(0.0, cfg.alpha, f.offset[0]), 1.0 / (1.0 + std::exp(4.0)), 1e-12);
    EXPECT_NEAR(1.0 / (1.0 + std::exp(4.0)), 0.01799, 1e-5);
    EXPECT_NEAR(f.p[1], 1.0 / (1.0 + std::exp(-0.1 * 1.0 + 4.0)), 1e-15);
}

TEST(Probability, ConstantScheme)
{
    const auto groups = groups_of({4});
    std::vector<double> g{1, 2, 3, 4};
    ProbabilityConfig cfg;
    cfg.scheme = ProbabilityScheme::constant;
    cfg.constant_p = 0.3;
    for (double p : compute_probabilities(compute_group_stats(g, groups), g, groups, cfg).p) EXPECT_EQ(p, 0.3);
    cfg.constant_p = 0;
    EXPECT_THROW(cfg.validate(), PreconditionError);
}

TEST(Probability, MonotoneInNormalizedScore)
{
    const auto groups = groups_of({30});
    auto g = random_vector(30, 7);
    ProbabilityConfig cfg;
    cfg.alpha = 0.5;
    auto f = compute_probabilities(compute_group_stats(g, groups), g, groups, cfg);
    std::vector<std::size_t> order(30);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return f.normalized[a] < f.normalized[b]; });
    for (std::size_t k = 1; k < 30; ++k) {
        if (f.normalized[order[k]] > f.normalized[order[k - 1]]) EXPECT_GT(f.p[order[k]], f.p[order[k - 1]]);
    }
}

TEST(Probability, LocalSchemeIsScaleInvariant)
{
    const auto groups = groups_of({12});
    auto g = random_vector(12, 8);
    auto h = g;
    for (auto& x : h) x *= 37.0;
    ProbabilityConfig cfg;
    cfg.scheme = ProbabilityScheme::local;
    auto a = compute_probabilities(compute_group_stats(g, groups), g, groups, cfg);
    auto b = compute_probabilities(compute_group_stats(h, groups), h, groups, cfg);
    for (std::size_t j = 0; j < 12; ++j) EXPECT_NEAR(a.p[j], b.p[j], 1e-14);
}

TEST(Probability, SymmetricScoresAverageOneHalf)
{
    // |g| values symmetric about their mean give v closed under negation.
    const auto groups = groups_of({6});
    const std::vector<double> g{1, 2, 3, 5, 6, 7};
    ProbabilityConfig cfg;
    cfg.scheme = ProbabilityScheme::local;
    cfg.alpha = 0.9;
    auto f = compute_probabilities(compute_group_stats(g, groups), g, groups, cfg);
    EXPECT_NEAR(std::accumulate(f.p.begin(), f.p.end(), 0.0) / 6, 0.5, 1e-15);
}

TEST(Probability, NonFiniteStatsRejected)
{
    const auto groups = groups_of({2});
    std::vector<double> g{1, std::nan("")};
    EXPECT_THROW(compute_probabilities(compute_group_stats(g, groups), g, groups, ProbabilityConfig{}), NumericalError);
}

TEST(Indicators, DegenerateAndDeterministic)
{
    std::vector<double> ones(50, 1.0), half(50, 0.5);
    SeedStream r(1);
    for (auto c : sample_indicators(ones, r)) EXPECT_EQ(c, 1);
    SeedStream a(2), b(2);
    EXPECT_EQ(sample_indicators(half, a), sample_indicators(half, b));
}

TEST(Indicators, FrequencyOfOneHalf)
{
    std::vector<double> p(1, 0.5);
    SeedStream r(3);
    std::size_t hits = 0;
    std::vector<std::uint8_t> chi(1);
    for (int i = 0; i < 100000; ++i) {
        sample_indicators(p, r, chi);
        hits += chi[0];
    }
    EXPECT_NEAR(hits / 1e5, 0.5, 3 * std::sqrt(0.25 / 1e5));
}
