#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include <sbs/gradcheck.hpp>
#include <sbs/model.hpp>

#include "helpers.hpp"

using namespace sbs;
using testing_support::random_tensor;

namespace {

void expect_partition(const ModelGraph& g)
{
    std::vector<int> hits(g.parameter_count(), 0);
    for (const auto& grp : g.groups())
        for (std::size_t j = grp.offset; j < grp.offset + grp.length; ++j) ++hits[j];
    for (std::size_t j = 0; j < hits.size(); ++j) ASSERT_EQ(hits[j], 1) << "parameter " << j;
    std::set<std::size_t> layers;
    for (const auto& grp : g.groups()) layers.insert(grp.layer);
    EXPECT_EQ(layers.size(), g.layer_count());
}

} // namespace

TEST(BuildMlp, CountsSmallNetwork)
{
    auto g = build_mlp(2, {8}, 2, false);
    EXPECT_EQ(g.parameter_count(), 2u * 8 + 8 + 8 * 2 + 2);
    EXPECT_EQ(g.layer_count(), 2u);
    expect_partition(g);
}

TEST(BuildMlp, LogisticRegression)
{
    auto g = build_mlp(784, {}, 10, false);
    EXPECT_EQ(g.parameter_count(), 7850u);
    EXPECT_EQ(g.layer_count(), 1u);
}

TEST(BuildMlp, BatchNormAddsScaleAndShiftGroups)
{
    auto g = build_mlp(3, {5, 4}, 2, true);
    EXPECT_EQ(g.parameter_count(), (3u * 5 + 5 + 5 + 5) + (5 * 4 + 4 + 4 + 4) + (4 * 2 + 2));
    EXPECT_EQ(g.layer_count(), 3u);
    std::size_t scale = 0, shift = 0;
    for (const auto& grp : g.groups()) {
        scale += grp.type == ParamType::batchnorm_scale;
        shift += grp.type == ParamType::batchnorm_shift;
    }
    EXPECT_EQ(scale, 2u);
    EXPECT_EQ(shift, 2u);
    expect_partition(g);
}

TEST(BuildMlp, RejectsNonPositiveDims)
{
    EXPECT_THROW(build_mlp(-2, {8}, 2, false), PreconditionError);
    EXPECT_THROW(build_mlp(2, {-8}, 2, false), PreconditionError);
    EXPECT_THROW(build_mlp(2, {8}, 0, false), PreconditionError);
}

TEST(BuildSmallCnn, CountsByHand)
{
    auto g = build_small_cnn({1, 8, 8}, {4}, 10);
    // conv 1*4*9, conv bias 4, bn 4 + 4, dense (4*4*4)*10, dense bias 10
    EXPECT_EQ(g.parameter_count(), 36u + 4 + 4 + 4 + 640 + 10);
    EXPECT_EQ(g.parameter_count(), 698u);
    EXPECT_EQ(g.layer_count(), 2u);
    std::set<ParamType> types;
    for (const auto& grp : g.groups()) types.insert(grp.type);
    EXPECT_EQ(types.size(), 5u);
    expect_partition(g);
}

TEST(BuildSmallCnn, EmptyChannelListIsPlainClassifier)
{
    auto g = build_small_cnn({1, 4, 4}, {}, 3);
    EXPECT_EQ(g.parameter_count(), 16u * 3 + 3);
    EXPECT_EQ(g.layer_count(), 1u);
}

TEST(BuildSmallCnn, DivisibilityGuard)
{
    EXPECT_NO_THROW(build_small_cnn({1, 8, 8}, {4, 8}, 10));
    EXPECT_THROW(build_small_cnn({1, 6, 6}, {4, 8}, 10), ShapeError);
}

TEST(GroupIndex, Layout)
{
    auto g = build_mlp(2, {8}, 2, false);
    EXPECT_EQ(g.group_index(0), std::make_pair(std::size_t{1}, ParamType::fully_connected));
    EXPECT_EQ(g.group_index(16), std::make_pair(std::size_t{1}, ParamType::bias));
    EXPECT_EQ(g.group_index(41), std::make_pair(std::size_t{2}, ParamType::bias));
    EXPECT_THROW(g.group_index(42), PreconditionError);
}

TEST(GroupSizes, LayerAndGroupCountsAgree)
{
    auto g = build_small_cnn({1, 8, 8}, {4}, 10);
    std::size_t by_layer = 0, by_group = 0;
    for (auto s : g.layer_sizes()) by_layer += s;
    for (auto s : g.group_sizes()) by_group += s;
    EXPECT_EQ(by_layer, g.parameter_count());
    EXPECT_EQ(by_group, g.parameter_count());
    EXPECT_EQ(g.layer_sizes()[0], 48u);
}

TEST(Initialize, DeterministicPerSeed)
{
    auto g = build_mlp(2, {8}, 2, false);
    auto a = g.make_store(), b = g.make_store(), c = g.make_store();
    g.initialize(a, SeedStream(5));
    g.initialize(b, SeedStream(5));
    g.initialize(c, SeedStream(6));
    EXPECT_TRUE(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
    EXPECT_FALSE(std::equal(a.values().begin(), a.values().end(), c.values().begin()));
}

TEST(Initialize, HeUniformBoundsAndConstants)
{
    auto g = build_mlp(6, {4}, 3, true);
    auto s = g.make_store();
    g.initialize(s, SeedStream(1));
    for (const auto& grp : g.groups()) {
        auto v = s.values().subspan(grp.offset, grp.length);
        switch (grp.type) {
            case ParamType::fully_connected: {
                const double bound = std::sqrt(6.0 / static_cast<double>(grp.length / grp.shape[0]));
                for (double x : v) EXPECT_LE(std::abs(x), bound);
                break;
            }
            case ParamType::batchnorm_scale:
                for (double x : v) EXPECT_EQ(x, 1.0);
                break;
            default:
                for (double x : v) EXPECT_EQ(x, 0.0);
        }
    }
}

TEST(Forward, ZeroModelGivesLogC)
{
    auto g = build_mlp(3, {}, 5, false);
    auto s = g.make_store();
    auto x = random_tensor({4, 3}, 2);
    std::vector<int> y{0, 1, 2, 4};
    auto r = forward(g, s, x, y, Mode::train);
    EXPECT_NEAR(r.loss_value.scalar, std::log(5.0), 1e-15);
    EXPECT_EQ(r.loss_value.per_sample.size(), 4u);
}

TEST(Forward, LabelCountMismatch)
{
    auto g = build_mlp(3, {}, 2, false);
    auto s = g.make_store();
    std::vector<int> y{0};
    EXPECT_THROW(forward(g, s, Tensor({2, 3}), y, Mode::train), ShapeError);
}

TEST(Forward, InputSizeMismatch)
{
    auto g = build_mlp(3, {}, 2, false);
    auto s = g.make_store();
    std::vector<int> y{0, 1};
    EXPECT_THROW(forward(g, s, Tensor({2, 4}), y, Mode::train), ShapeError);
}

TEST(Forward, NonFiniteActivationNamesTheLayer)
{
    auto g = build_mlp(2, {4}, 2, false);
    auto s = g.make_store();
    g.initialize(s, SeedStream(1));
    s.mutable_values()[0] = std::numeric_limits<double>::infinity();
    std::vector<int> y{0};
    try {
        forward(g, s, Tensor({1, 2}, 1.0), y, Mode::train);
        FAIL();
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("layer 1"), std::string::npos) << e.what();
    }
}

TEST(Forward, EvalModeLeavesBuffersAlone)
{
    auto g = build_mlp(2, {3}, 2, true);
    auto s = g.make_store();
    g.initialize(s, SeedStream(1));
    auto buf = g.make_buffers();
    std::vector<int> y{0, 1, 1};
    auto x = random_tensor({3, 2}, 5);
    forward(g, s, x, y, Mode::train, &buf);
    const auto before = buf[0].running_mean;
    EXPECT_NE(before[0], 0.0);
    forward(g, s, x, y, Mode::eval, &buf);
    EXPECT_EQ(buf[0].running_mean, before);
}

TEST(Forward, CnnGradientMatchesFiniteDifferences)
{
    auto g = build_small_cnn({1, 8, 8}, {4}, 10);
    auto s = g.make_store();
    g.initialize(s, SeedStream(3));
    auto x = random_tensor({3, 1, 8, 8}, 4);
    std::vector<int> y{1, 7, 3};
    auto rep = finite_difference_check(g, s, x, y, 1e-5, 1e-4);
    EXPECT_TRUE(rep.passed) << rep.max_relative_error << " at " << rep.worst_index;
}

TEST(Forward, MlpWithBatchNormGradient)
{
    auto g = build_mlp(3, {5}, 3, true);
    auto s = g.make_store();
    g.initialize(s, SeedStream(8));
    auto x = random_tensor({6, 3}, 9);
    std::vector<int> y{0, 1, 2, 2, 1, 0};
    auto rep = finite_difference_check(g, s, x, y, 1e-5, 1e-4);
    EXPECT_TRUE(rep.passed) << rep.max_relative_error;
}
