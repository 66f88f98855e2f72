#include "vic/dataset.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace {

vic::Frame frame(int index, std::vector<std::int64_t> ids, double t = -1) {
    vic::Frame f;
    f.index = index;
    f.timestamp = t < 0 ? index : t;
    for (std::size_t k = 0; k < ids.size(); ++k) {
        vic::PedestrianObservation o;
        o.identity = ids[k];
        o.x = 0.1 + 0.1 * static_cast<double>(k);
        o.y = 0.5;
        f.observations.push_back(o);
    }
    return f;
}

vic::VideoSequence sequence(int frames) {
    vic::VideoSequence s;
    s.id = "s";
    for (int k = 0; k < frames; ++k) s.frames.push_back(frame(k, {1}));
    return s;
}

}  // namespace

TEST(Dataset, ParsesFramesAndObservations) {
    std::istringstream is(
        R"({"frame":0,"t":0.0,"peds":[{"id":1,"x":0.1,"y":0.2,"f":[1,0]},{"id":2,"x":0.3,"y":0.4,"f":[0,1]},{"id":3,"x":0.5,"y":0.6,"f":[1,1]}]})"
        "\n"
        R"({"frame":1,"t":1.0,"peds":[{"id":1,"x":0.1,"y":0.2,"f":[1,0]},{"id":4,"x":0.9,"y":0.9,"f":[0,2]}]})"
        "\n");
    const auto seq = vic::parse_sequence(is, "demo", 2);
    ASSERT_EQ(seq.frames.size(), 2u);
    EXPECT_EQ(seq.frames[0].size(), 3u);
    EXPECT_EQ(seq.frames[1].size(), 2u);
    EXPECT_EQ(*seq.frames[1].observations[1].identity, 4);
    EXPECT_DOUBLE_EQ(seq.frames[0].observations[2].y, 0.6);
    EXPECT_EQ(seq.descriptor_dim(), 2u);
}

TEST(Dataset, ParseErrorNamesLine) {
    std::istringstream is("{\"frame\":0,\"t\":0,\"peds\":[]}\n{not json\n");
    try {
        vic::parse_sequence(is, "bad");
        FAIL() << "expected ParseError";
    } catch (const vic::ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("bad:2"), std::string::npos) << e.what();
    }
}

TEST(Dataset, ValidationErrors) {
    std::istringstream empty("");
    EXPECT_THROW(vic::parse_sequence(empty, "e"), vic::ValidationError);

    std::istringstream backwards("{\"frame\":0,\"t\":2,\"peds\":[]}\n{\"frame\":1,\"t\":1,\"peds\":[]}\n");
    EXPECT_THROW(vic::parse_sequence(backwards, "b"), vic::ValidationError);

    std::istringstream wrong_dim(R"({"frame":0,"t":0,"peds":[{"id":1,"x":0.1,"y":0.1,"f":[1,2,3]}]})");
    EXPECT_THROW(vic::parse_sequence(wrong_dim, "d", 2), vic::ValidationError);

    std::istringstream outside(R"({"frame":0,"t":0,"peds":[{"id":1,"x":1.5,"y":0.1}]})");
    EXPECT_THROW(vic::parse_sequence(outside, "o"), vic::ValidationError);

    std::istringstream dup(R"({"frame":0,"t":0,"peds":[{"id":1,"x":0.1,"y":0.1},{"id":1,"x":0.2,"y":0.1}]})");
    EXPECT_THROW(vic::parse_sequence(dup, "u"), vic::ValidationError);
}

TEST(Dataset, FileRoundTripWithGroupsSidecar) {
    const auto dir = std::filesystem::temp_directory_path() / "vic-test-dataset";
    std::filesystem::create_directories(dir);
    vic::VideoSequence s = sequence(3);
    s.groups = {{1, 0}};
    const auto path = dir / "round.jsonl";
    vic::save_sequence(path, s);
    vic::save_groups_sidecar(vic::groups_sidecar_path(path), s.groups);
    const auto back = vic::load_sequence(path);
    ASSERT_EQ(back.frames.size(), 3u);
    EXPECT_EQ(back.id, "round");
    EXPECT_EQ(back.groups, s.groups);
    EXPECT_DOUBLE_EQ(back.frames[2].observations[0].x, s.frames[2].observations[0].x);
    EXPECT_THROW(vic::load_sequence(dir / "missing.jsonl"), vic::IoError);
    std::filesystem::remove_all(dir);
}

TEST(Dataset, SamplePairsEveryThreeSeconds) {
    const auto seq = sequence(10);
    const auto pairs = vic::sample_pairs(seq, 3.0);
    ASSERT_EQ(pairs.size(), 3u);
    const int expect[3][2] = {{0, 3}, {3, 6}, {6, 9}};
    for (int k = 0; k < 3; ++k) {
        EXPECT_EQ(pairs[static_cast<std::size_t>(k)].prev->index, expect[k][0]);
        EXPECT_EQ(pairs[static_cast<std::size_t>(k)].curr->index, expect[k][1]);
    }
    EXPECT_TRUE(vic::sample_pairs(sequence(1), 3.0).empty());
    EXPECT_THROW(vic::sample_pairs(seq, 0.0), vic::ConfigError);
}

TEST(Dataset, SamplingPicksNearestFrame) {
    vic::VideoSequence s;
    for (int k = 0; k < 6; ++k) s.frames.push_back(frame(k, {1}, 1.4 * k));  // 0, 1.4, 2.8, 4.2, 5.6, 7.0
    const auto pos = vic::sample_frame_positions(s, 3.0);
    EXPECT_EQ(pos, (std::vector<std::size_t>{0, 2, 4}));
}

TEST(Dataset, FlowLabels) {
    const auto gt = vic::derive_flow_labels(frame(0, {1, 2, 3}), frame(1, {2, 3, 4}));
    EXPECT_EQ(gt.inflow_count, 1);
    EXPECT_EQ(gt.outflow_count, 1);
    EXPECT_EQ(gt.shared_pairs, (std::vector<std::pair<int, int>>{{1, 0}, {2, 1}}));

    const auto same = vic::derive_flow_labels(frame(0, {5, 6}), frame(1, {6, 5}));
    EXPECT_EQ(same.inflow_count, 0);
    EXPECT_EQ(same.outflow_count, 0);

    const auto disjoint = vic::derive_flow_labels(frame(0, {1, 2, 3}), frame(1, {7, 8}));
    EXPECT_EQ(disjoint.inflow_count, 2);
    EXPECT_EQ(disjoint.outflow_count, 3);

    vic::Frame anon = frame(1, {1});
    anon.observations[0].identity.reset();
    EXPECT_THROW(vic::derive_flow_labels(frame(0, {1}), anon), vic::LabelingError);
}

TEST(Dataset, GroundTruthTotals) {
    vic::VideoSequence single;
    single.frames.push_back(frame(0, {1, 2, 3, 4, 5}));
    EXPECT_EQ(vic::ground_truth_total(single, 3.0), 5);

    // N_0 = 5 then inflows 2, 0, 3
    vic::VideoSequence s;
    s.frames.push_back(frame(0, {1, 2, 3, 4, 5}));
    s.frames.push_back(frame(1, {1, 2, 3, 4, 5, 6, 7}));
    s.frames.push_back(frame(2, {4, 5, 6, 7}));
    s.frames.push_back(frame(3, {6, 7, 8, 9, 10}));
    const auto summary = vic::ground_truth_summary(s, 1.0);
    EXPECT_EQ(summary.pairwise_total, 10);
    EXPECT_EQ(summary.unique_total, 10);
    EXPECT_TRUE(summary.consistent());
}

TEST(Dataset, ReentryMakesPairwiseSumOvercount) {
    vic::VideoSequence s;
    s.frames.push_back(frame(0, {1, 2}));
    s.frames.push_back(frame(1, {2}));
    s.frames.push_back(frame(2, {1, 2}));
    const auto summary = vic::ground_truth_summary(s, 1.0);
    EXPECT_EQ(summary.unique_total, 2);
    EXPECT_EQ(summary.pairwise_total, 3);
    EXPECT_EQ(vic::ground_truth_total(s, 1.0), 2);
}
