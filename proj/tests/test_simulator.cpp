#include "vic/simulator.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>
#include <set>

namespace {

vic::SimConfig quiet(std::uint64_t seed) {
    vic::SimConfig c;
    c.num_frames = 40;
    c.initial_groups = 4;
    c.group_rate = 0.4;
    c.descriptor_dim = 16;
    c.occlusion_dropout = 0.0;
    c.seed = seed;
    return c;
}

std::size_t observation_count(const vic::VideoSequence& s) {
    std::size_t n = 0;
    for (const auto& f : s.frames) n += f.size();
    return n;
}

}  // namespace

TEST(Simulator, SameSeedGivesIdenticalSequence) {
    const auto a = vic::generate(quiet(3));
    const auto b = vic::generate(quiet(3));
    ASSERT_EQ(a.frames.size(), b.frames.size());
    for (std::size_t k = 0; k < a.frames.size(); ++k)
        EXPECT_EQ(vic::frame_to_json(a.frames[k]).dump(), vic::frame_to_json(b.frames[k]).dump());
    EXPECT_EQ(a.groups, b.groups);
    const auto c = vic::generate(quiet(4));
    EXPECT_NE(vic::frame_to_json(a.frames[5]).dump(), vic::frame_to_json(c.frames[5]).dump());
}

TEST(Simulator, OutputPassesValidation) {
    for (std::uint64_t s = 0; s < 5; ++s) {
        auto c = quiet(s);
        c.occlusion_dropout = 0.3;
        EXPECT_NO_THROW(vic::validate_sequence(vic::generate(c), 16u));
    }
}

TEST(Simulator, SingleGroupWithoutNoise) {
    vic::SimConfig c;
    c.num_frames = 60;
    c.initial_groups = 1;
    c.group_rate = 0.0;
    c.group_size_min = c.group_size_max = 3;
    c.group_feature_corr = 0.0;
    c.occlusion_dropout = 0.0;
    c.seed = 21;
    const auto seq = vic::generate(c);
    ASSERT_EQ(seq.frames.front().size(), 3u);
    for (std::size_t k = 1; k < seq.frames.size(); ++k) {
        EXPECT_LE(seq.frames[k].size(), seq.frames[k - 1].size());
        EXPECT_EQ(vic::derive_flow_labels(seq.frames[k - 1], seq.frames[k]).inflow_count, 0);
    }
    EXPECT_EQ(vic::ground_truth_total(seq, 1.0), 3);
}

TEST(Simulator, SpawnedGroupsEnterInOneFrame) {
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto seq = vic::generate(quiet(s));
        std::map<std::int64_t, int> first_seen;
        for (const auto& f : seq.frames)
            for (const auto& o : f.observations) first_seen.try_emplace(*o.identity, f.index);
        std::map<std::int64_t, std::set<int>> entry_by_group;
        for (const auto& [id, frame] : first_seen) entry_by_group[seq.groups.at(id)].insert(frame);
        for (const auto& [gid, frames] : entry_by_group) EXPECT_EQ(frames.size(), 1u) << "group " << gid;
    }
}

TEST(Simulator, OcclusionRateMatchesDropout) {
    std::size_t full = 0, kept = 0;
    for (std::uint64_t s = 0; s < 6; ++s) {
        auto c = quiet(100 + s);
        full += observation_count(vic::generate(c));
        c.occlusion_dropout = 0.2;
        kept += observation_count(vic::generate(c));
    }
    ASSERT_GE(full, 1000u);
    const double rate = 1.0 - static_cast<double>(kept) / static_cast<double>(full);
    EXPECT_GE(rate, 0.17);
    EXPECT_LE(rate, 0.23);
}

TEST(Simulator, IdenticalAnchorsGiveUnitWithinSimilarity) {
    auto c = quiet(8);
    c.group_feature_corr = 1.0;
    c.appearance_noise = 0.0;
    c.group_size_min = 2;
    const auto st = vic::descriptor_stats(vic::generate(c));
    ASSERT_GT(st.within_pairs, 0);
    EXPECT_NEAR(st.within_mean, 1.0, 1e-12);
}

TEST(Simulator, UncorrelatedGroupsLookLikeStrangers) {
    double within = 0, between = 0;
    for (std::uint64_t s = 0; s < 6; ++s) {
        auto c = quiet(40 + s);
        c.group_feature_corr = 0.0;
        c.initial_groups = 10;
        const auto st = vic::descriptor_stats(vic::generate(c));
        within += st.within_mean / 6;
        between += st.between_mean / 6;
    }
    EXPECT_NEAR(within, between, 0.05);
}

// Monte-Carlo over the generative model itself: f = rho*a + (1-rho)*u +
// (s/sqrt(d))*n, normalized, with a shared by group mates.
TEST(Simulator, CorrelatedGroupsMatchMonteCarlo) {
    const int d = 16;
    const double rho = 0.8, noise = 0.1;
    std::mt19937_64 rng(77);
    std::normal_distribution<double> g(0.0, 1.0);
    const auto unit = [&] {
        vic::Vector v(d);
        for (int k = 0; k < d; ++k) v[k] = g(rng);
        return vic::Vector(v / v.norm());
    };
    const auto draw = [&](const vic::Vector& anchor) {
        vic::Vector n(d);
        for (int k = 0; k < d; ++k) n[k] = g(rng);
        vic::Vector f = rho * anchor + (1 - rho) * unit() + noise / std::sqrt(double(d)) * n;
        return vic::Vector(f / f.norm());
    };
    double mc_within = 0, mc_between = 0;
    const int samples = 10000;
    for (int k = 0; k < samples; ++k) {
        const vic::Vector a = unit(), b = unit();
        mc_within += draw(a).dot(draw(a)) / samples;
        mc_between += draw(a).dot(draw(b)) / samples;
    }

    double within = 0, between = 0;
    const int seeds = 8;
    for (int s = 0; s < seeds; ++s) {
        auto c = quiet(200 + static_cast<std::uint64_t>(s));
        c.group_feature_corr = rho;
        c.appearance_noise = noise;
        c.initial_groups = 12;
        c.num_frames = 10;
        const auto st = vic::descriptor_stats(vic::generate(c));
        within += st.within_mean / seeds;
        between += st.between_mean / seeds;
    }
    EXPECT_GT(within, between + 0.5);
    EXPECT_NEAR(within, mc_within, 0.03);
    EXPECT_NEAR(between, mc_between, 0.05);
}

TEST(Simulator, StatsNeedGroupMetadata) {
    auto seq = vic::generate(quiet(1));
    seq.groups.clear();
    EXPECT_THROW(vic::descriptor_stats(seq), vic::ValidationError);
}

TEST(Simulator, RejectsBadConfig) {
    auto c = quiet(1);
    c.occlusion_dropout = 1.0;
    EXPECT_THROW(vic::generate(c), vic::ConfigError);
    c = quiet(1);
    c.group_size_min = 5;
    c.group_size_max = 2;
    EXPECT_THROW(vic::generate(c), vic::ConfigError);
    c = quiet(1);
    c.group_radius = 0.6;
    EXPECT_THROW(vic::generate(c), vic::ConfigError);
}

TEST(Simulator, ConfigJsonRoundTrip) {
    auto c = quiet(9);
    c.occlusion_dropout = 0.15;
    const nlohmann::json j = c;
    const auto back = j.get<vic::SimConfig>();
    EXPECT_EQ(nlohmann::json(back).dump(), j.dump());
}
