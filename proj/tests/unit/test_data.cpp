#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include <sbs/data.hpp>
#include <sbs/model.hpp>
#include <sbs/optimizers.hpp>

#include "helpers.hpp"

using namespace sbs;
using testing_support::scratch_dir;

namespace {

std::vector<std::size_t> class_counts(const Dataset& ds)
{
    std::vector<std::size_t> c(ds.class_count, 0);
    for (int y : ds.labels) ++c[static_cast<std::size_t>(y)];
    return c;
}

} // namespace

TEST(Blobs, DeterministicPerSeed)
{
    auto a = make_blobs(100, 2, 2, 4.0, 7), b = make_blobs(100, 2, 2, 4.0, 7), c = make_blobs(100, 2, 2, 4.0, 8);
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_TRUE(std::equal(a.inputs.values().begin(), a.inputs.values().end(), b.inputs.values().begin()));
    EXPECT_FALSE(std::equal(a.inputs.values().begin(), a.inputs.values().end(), c.inputs.values().begin()));
}

TEST(Blobs, BalancedClasses)
{
    auto ds = make_blobs(101, 3, 4, 2.0, 1);
    ds.validate();
    for (auto c : class_counts(ds)) EXPECT_TRUE(c == 33 || c == 34);
    EXPECT_EQ(ds.inputs.shape(), (Shape{101, 4}));
}

TEST(Blobs, DegenerateParameters)
{
    EXPECT_THROW(make_blobs(1, 2, 2, 4.0, 1), PreconditionError);
    EXPECT_THROW(make_blobs(10, 2, 2, 0.0, 1), PreconditionError);
    EXPECT_THROW(make_blobs(10, 1, 2, 1.0, 1), PreconditionError);
    EXPECT_THROW(make_blobs(10, 2, 0, 1.0, 1), PreconditionError);
}

TEST(Blobs, ManyClassesInFewDimensionsAreSeparated)
{
    auto ds = make_blobs(600, 6, 2, 8.0, 3);
    // class means should be roughly `separation` apart from their neighbours
    std::vector<double> mx(6, 0), my(6, 0);
    auto counts = class_counts(ds);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        mx[ds.labels[i]] += ds.inputs[2 * i] / counts[ds.labels[i]];
        my[ds.labels[i]] += ds.inputs[2 * i + 1] / counts[ds.labels[i]];
    }
    for (int c = 0; c < 6; ++c) {
        const int d = (c + 1) % 6;
        EXPECT_NEAR(std::hypot(mx[c] - mx[d], my[c] - my[d]), 8.0, 1.0);
    }
}

TEST(Blobs, WideSeparationIsLinearlySeparable)
{
    // Oracle: logistic regression trained by plain SGD.
    auto ds = make_blobs(400, 2, 2, 10.0, 11);
    auto graph = build_mlp(2, {}, 2, false);
    auto params = graph.make_store();
    for (std::uint64_t e = 0; e < 20; ++e) {
        auto plan = plan_epoch(ds.size(), 20, SeedStream(3), e);
        for (const auto& b : plan.batches) {
            auto batch = ds.gather(b);
            auto g = loss_gradient(graph, params, batch.inputs, batch.labels);
            sgd_step(params.mutable_values(), g, 0.1);
        }
    }
    auto r = forward(graph, params, ds.inputs, ds.labels, Mode::eval);
    const auto& z = r.tape.value(r.logits);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) correct += (z[2 * i + 1] > z[2 * i]) == (ds.labels[i] == 1);
    EXPECT_GE(static_cast<double>(correct) / ds.size(), 0.99);
}

TEST(Dataset, GatherCopiesRows)
{
    auto ds = make_blobs(10, 2, 3, 1.0, 1);
    const std::size_t idx[] = {4, 1};
    auto b = ds.gather(idx);
    EXPECT_EQ(b.inputs.shape(), (Shape{2, 3}));
    for (int d = 0; d < 3; ++d) EXPECT_EQ(b.inputs[d], ds.inputs[4 * 3 + d]);
    EXPECT_EQ(b.labels[1], ds.labels[1]);
    const std::size_t bad[] = {10};
    EXPECT_THROW(ds.gather(bad), PreconditionError);
}

TEST(Dataset, ValidateCatchesBadLabel)
{
    Dataset ds{Tensor({2, 1}), {0, 2}, 2};
    EXPECT_THROW(ds.validate(), PreconditionError);
}

class IdxFiles : public ::testing::Test
{
protected:
    void SetUp() override
    {
        dir = scratch_dir("idx");
        std::vector<unsigned char> px(3 * 2 * 2);
        for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<unsigned char>(i * 20);
        const unsigned char labels[] = {1, 0, 4};
        write_idx_images(dir / "img", 2, 2, px);
        write_idx_labels(dir / "lab", labels);
    }

    std::filesystem::path dir;
};

TEST_F(IdxFiles, RoundTrip)
{
    auto ds = load_idx(dir / "img", dir / "lab");
    EXPECT_EQ(ds.inputs.shape(), (Shape{3, 1, 2, 2}));
    EXPECT_EQ(ds.labels, (std::vector<int>{1, 0, 4}));
    EXPECT_EQ(ds.class_count, 5u);
    EXPECT_DOUBLE_EQ(ds.inputs[5], 100.0 / 255.0);
    for (double v : ds.inputs.values()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST_F(IdxFiles, SwappedArgumentsFailOnMagic)
{
    try {
        load_idx(dir / "lab", dir / "img");
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
    }
}

TEST_F(IdxFiles, TruncationReportsOffsets)
{
    std::filesystem::resize_file(dir / "img", 16 + 5);
    try {
        load_idx(dir / "img", dir / "lab");
        FAIL();
    } catch (const FormatError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("truncated"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[16, 28)"), std::string::npos) << msg;
        EXPECT_NE(msg.find("21"), std::string::npos) << msg;
    }
}

TEST_F(IdxFiles, CountMismatch)
{
    const unsigned char labels[] = {1, 0};
    write_idx_labels(dir / "lab2", labels);
    EXPECT_THROW(load_idx(dir / "img", dir / "lab2"), FormatError);
}

TEST_F(IdxFiles, MissingFile) { EXPECT_THROW(load_idx(dir / "nope", dir / "lab"), Error); }

TEST(Csv, Loads)
{
    auto dir = scratch_dir("csv");
    std::ofstream(dir / "a.csv") << "label,feature_0,feature_1\n0,1.5,2\n2,-1,0.25\n";
    auto ds = load_csv(dir / "a.csv");
    EXPECT_EQ(ds.inputs.shape(), (Shape{2, 2}));
    EXPECT_EQ(ds.class_count, 3u);
    EXPECT_DOUBLE_EQ(ds.inputs[3], 0.25);
}

TEST(Csv, Diagnostics)
{
    auto dir = scratch_dir("csv_bad");
    std::ofstream(dir / "h.csv") << "y,feature_0\n0,1\n";
    std::ofstream(dir / "f.csv") << "label,feature_0\n0,1\n1,abc\n";
    std::ofstream(dir / "n.csv") << "label,feature_0\n0,1,2\n";
    EXPECT_THROW(load_csv(dir / "h.csv"), FormatError);
    try {
        load_csv(dir / "f.csv");
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("f.csv:3"), std::string::npos) << e.what();
    }
    EXPECT_THROW(load_csv(dir / "n.csv"), FormatError);
}

TEST(Subsample, FractionOneIsIdentity)
{
    auto ds = make_blobs(50, 2, 2, 1.0, 1);
    auto s = subsample(ds, 1.0, SeedStream(3));
    EXPECT_EQ(s.labels, ds.labels);
    EXPECT_TRUE(std::equal(s.inputs.values().begin(), s.inputs.values().end(), ds.inputs.values().begin()));
}

TEST(Subsample, QuarterOfBalancedHundred)
{
    auto ds = make_blobs(100, 2, 2, 1.0, 1);
    auto s = subsample(ds, 0.25, SeedStream(3));
    EXPECT_EQ(s.size(), 25u);
    for (auto c : class_counts(s)) EXPECT_TRUE(c == 12 || c == 13) << c;
}

TEST(Subsample, PreservesProportionsWithinOne)
{
    auto ds = make_blobs(997, 5, 5, 1.0, 2);
    for (double f : {0.5, 0.25, 0.125, 0.3}) {
        auto s = subsample(ds, f, SeedStream(4));
        EXPECT_EQ(s.size(), static_cast<std::size_t>(std::floor(f * 997)));
        auto full = class_counts(ds), part = class_counts(s);
        for (std::size_t c = 0; c < 5; ++c) EXPECT_LE(std::abs(f * full[c] - double(part[c])), 1.0);
    }
}

TEST(Subsample, SeedsGiveDifferentSets)
{
    auto ds = make_blobs(100, 2, 2, 1.0, 1);
    EXPECT_NE(stratified_indices(ds, 0.5, SeedStream(1)), stratified_indices(ds, 0.5, SeedStream(2)));
    EXPECT_EQ(stratified_indices(ds, 0.5, SeedStream(1)), stratified_indices(ds, 0.5, SeedStream(1)));
}

TEST(Subsample, Errors)
{
    auto ds = make_blobs(20, 2, 2, 1.0, 1);
    EXPECT_THROW(subsample(ds, 0.0, SeedStream(1)), PreconditionError);
    EXPECT_THROW(subsample(ds, 1.5, SeedStream(1)), PreconditionError);
    EXPECT_THROW(subsample(ds, 0.04, SeedStream(1)), PreconditionError);  // one survivor, two classes
}

TEST(StratifiedSplit, DisjointAndComplete)
{
    auto ds = make_blobs(103, 3, 3, 1.0, 1);
    auto [train, held] = stratified_split(ds, 0.2, SeedStream(5));
    EXPECT_EQ(train.size() + held.size(), 103u);
    EXPECT_EQ(held.size(), 20u);
}

TEST(PlanEpoch, FullBatchIsPermutation)
{
    auto p = plan_epoch(10, 10, SeedStream(1), 0);
    ASSERT_EQ(p.batch_count(), 1u);
    auto b = p.batches[0];
    std::sort(b.begin(), b.end());
    std::vector<std::size_t> all(10);
    std::iota(all.begin(), all.end(), 0);
    EXPECT_EQ(b, all);
}

TEST(PlanEpoch, ChunksWithShortTail)
{
    auto p = plan_epoch(10, 4, SeedStream(1), 0);
    ASSERT_EQ(p.batch_count(), 3u);
    EXPECT_EQ(p.batches[0].size(), 4u);
    EXPECT_EQ(p.batches[1].size(), 4u);
    EXPECT_EQ(p.batches[2].size(), 2u);
    std::set<std::size_t> seen;
    for (const auto& b : p.batches) seen.insert(b.begin(), b.end());
    EXPECT_EQ(seen.size(), 10u);
}

TEST(PlanEpoch, PureFunctionOfSeedAndEpoch)
{
    auto a = plan_epoch(50, 8, 9ull, 3), b = plan_epoch(50, 8, 9ull, 3), c = plan_epoch(50, 8, 9ull, 4);
    EXPECT_EQ(a.batches, b.batches);
    EXPECT_NE(a.batches, c.batches);
}

TEST(PlanEpoch, BatchSizeBounds)
{
    EXPECT_THROW(plan_epoch(10, 0, SeedStream(1), 0), PreconditionError);
    EXPECT_THROW(plan_epoch(10, 11, SeedStream(1), 0), PreconditionError);
}

TEST(Normalizer, PerChannelStandardization)
{
    Dataset ds{Tensor({4, 2, 1, 1}, std::vector<double>{1, 5, 3, 5, 5, 5, 7, 5}), {0, 1, 0, 1}, 2};
    auto z = Normalizer::fit(ds);
    EXPECT_DOUBLE_EQ(z.mean[0], 4.0);
    EXPECT_DOUBLE_EQ(z.stddev[0], std::sqrt(5.0));
    EXPECT_DOUBLE_EQ(z.stddev[1], 1.0);  // constant channel
    z.apply(ds);
    EXPECT_DOUBLE_EQ(ds.inputs[0], -3.0 / std::sqrt(5.0));
    EXPECT_DOUBLE_EQ(ds.inputs[1], 0.0);
}
