#include "vic/training.hpp"

#include "vic/simulator.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

namespace {

vic::VideoSequence small_video(std::uint64_t seed, int frames = 10) {
    vic::SimConfig c;
    c.num_frames = frames;
    c.initial_groups = 3;
    c.group_rate = 0.3;
    c.max_groups = 5;
    c.descriptor_dim = 8;
    c.occlusion_dropout = 0.0;
    c.seed = seed;
    return vic::generate(c);
}

vic::ModelConfig small_model() {
    vic::ModelConfig m;
    m.d_in = 8;
    m.d_pe = 8;
    m.d = 16;
    m.heads = 2;
    m.layers = 1;
    m.n_max = 64;
    m.mlp_hidden = 8;
    return m;
}

vic::TrainConfig small_train(int epochs) {
    vic::TrainConfig t;
    t.epochs = epochs;
    t.batch_pairs = 2;
    t.seed = 7;
    return t;
}

std::filesystem::path scratch(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "vic_test_training";
    std::filesystem::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST(TrainingPairs, StartEverywhereInsideFirstInterval) {
    const auto seq = small_video(1, 8);
    const auto pairs = vic::training_pairs(seq, 3.0);
    // starts 0,1,2 each stepping by 3 inside 8 frames: (0,3)(3,6)(1,4)(4,7)(2,5)
    EXPECT_EQ(pairs.size(), 5u);
    for (const auto& p : pairs) EXPECT_EQ(p.curr->index - p.prev->index, 3);
}

TEST(Train, ReducesClassificationLoss) {
    const std::vector<vic::VideoSequence> data{small_video(2)};
    auto cfg = small_train(40);
    cfg.kl_on = false;
    const auto r = vic::train(data, cfg, small_model());
    ASSERT_EQ(r.curve.size(), 40u);
    EXPECT_LT(r.curve.back().l_cls, 0.6 * r.curve.front().l_cls);
    EXPECT_GT(r.steps, 0);
}

TEST(Train, SameSeedIsBitIdentical) {
    const std::vector<vic::VideoSequence> data{small_video(3)};
    const auto a = vic::train(data, small_train(3), small_model());
    const auto b = vic::train(data, small_train(3), small_model());
    EXPECT_EQ(vic::params_to_json(a.params).dump(), vic::params_to_json(b.params).dump());
    EXPECT_EQ(vic::loss_curve_csv(a.curve), vic::loss_curve_csv(b.curve));
}

TEST(Train, AnnealedRunStillLearns) {
    const std::vector<vic::VideoSequence> data{small_video(2)};
    auto cfg = small_train(40);
    cfg.kl_on = false;
    cfg.cosine_anneal = true;
    const auto r = vic::train(data, cfg, small_model());
    EXPECT_LT(r.curve.back().l_cls, 0.6 * r.curve.front().l_cls);
    cfg.cosine_anneal = false;
    EXPECT_NE(vic::params_to_json(r.params).dump(), vic::params_to_json(vic::train(data, cfg, small_model()).params).dump());
}

TEST(Train, NoKlLeavesKlColumnZero) {
    const std::vector<vic::VideoSequence> data{small_video(4)};
    auto cfg = small_train(2);
    cfg.kl_on = false;
    const auto r = vic::train(data, cfg, small_model());
    for (const auto& e : r.curve) EXPECT_EQ(e.l_kl, 0.0);
    EXPECT_EQ(r.final_eval.l_kl, 0.0);
}

TEST(Train, KlWeightScalesReportedTerm) {
    const auto seq = small_video(5);
    const auto model = vic::init_model(small_model(), 1);
    const auto pairs = vic::training_pairs(seq, 3.0);
    vic::LossOptions opt;
    const double full = vic::batch_loss(model, pairs, opt, nullptr).l_kl;
    opt.kl_weight = 0.25;
    EXPECT_NEAR(vic::batch_loss(model, pairs, opt, nullptr).l_kl, 0.25 * full, 1e-12 * std::abs(full));
}

TEST(Train, UnlabeledDataIsRejected) {
    auto seq = small_video(6);
    seq.frames[2].observations[0].identity.reset();
    EXPECT_THROW(vic::train({seq}, small_train(1), small_model()), vic::LabelingError);
}

TEST(Train, InvalidConfigIsRejected) {
    auto cfg = small_train(1);
    cfg.lr_head = 0;
    EXPECT_THROW(cfg.validate(), vic::ConfigError);
    cfg = small_train(1);
    cfg.kl_weight = -1;
    EXPECT_THROW(cfg.validate(), vic::ConfigError);
}

TEST(GradCheck, FullPipelinePasses) {
    const auto seq = small_video(8);
    const auto pairs = vic::training_pairs(seq, 3.0);
    const std::vector<vic::FramePair> batch(pairs.begin(), pairs.begin() + 2);
    vic::LossOptions opt;
    opt.group_radius = 0.1;
    const auto rep = vic::grad_check(vic::init_model(small_model(), 3), batch, opt, 1e-5, 60, 1);
    EXPECT_TRUE(rep.passed()) << rep.max_rel_error;
    EXPECT_GE(rep.coordinates, 60);
}

TEST(GradCheck, CorruptedGradientFails) {
    const auto seq = small_video(9);
    const auto pairs = vic::training_pairs(seq, 3.0);
    const std::vector<vic::FramePair> batch(pairs.begin(), pairs.begin() + 1);
    vic::LossOptions opt;
    opt.ot.sinkhorn.tol = 0.0;
    auto model = vic::init_model(small_model(), 4);
    auto grad = model.zeros_like();
    vic::batch_loss(model, batch, opt, &grad);
    grad.visit([](const std::string&, const char*, vic::Matrix& m) { m *= 1.1; });
    const auto rep = vic::finite_difference_check(
        model, grad, [&](const vic::ModelParams& p) { return vic::batch_loss(p, batch, opt, nullptr).l_total; }, 1e-5,
        40, 2);
    EXPECT_FALSE(rep.passed());
    EXPECT_GT(rep.max_rel_error, 0.05);
}

TEST(Checkpoint, RoundTrips) {
    const std::vector<vic::VideoSequence> data{small_video(10)};
    const auto cfg = small_train(1);
    const auto r = vic::train(data, cfg, small_model());
    const auto path = scratch("ck.json");
    vic::save_checkpoint(path, {r.params, cfg, r.steps, r.final_eval});
    const auto ck = vic::load_checkpoint(path);
    EXPECT_EQ(vic::params_to_json(ck.params).dump(), vic::params_to_json(r.params).dump());
    EXPECT_EQ(ck.step, r.steps);
    EXPECT_DOUBLE_EQ(ck.final_eval.l_total, r.final_eval.l_total);
    EXPECT_EQ(nlohmann::json(ck.train_config).dump(), nlohmann::json(cfg).dump());
}

TEST(Checkpoint, RejectsOtherVersions) {
    const auto path = scratch("old.json");
    std::ofstream(path) << R"({"format":"vic-checkpoint","version":99})";
    EXPECT_THROW(vic::load_checkpoint(path), vic::VersionError);
    std::ofstream(path) << R"({"format":"other","version":1})";
    EXPECT_THROW(vic::load_checkpoint(path), vic::VersionError);
    EXPECT_THROW(vic::load_checkpoint(scratch("missing.json")), vic::IoError);
}

TEST(TrainConfigJson, RoundTrips) {
    vic::TrainConfig c;
    c.optimizer = vic::Optimizer::kAdam;
    c.kl_weight = 0.05;
    c.cosine_anneal = true;
    c.group_radius = 0.07;
    c.anchor = vic::GroupAnchor::kPrev;
    c.seed = 99;
    const auto back = nlohmann::json(c).get<vic::TrainConfig>();
    EXPECT_EQ(nlohmann::json(back).dump(), nlohmann::json(c).dump());
    EXPECT_THROW(nlohmann::json({{"anchor", "middle"}}).get<vic::TrainConfig>(), vic::ConfigError);
}
