#include "vic/losses.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using vic::Matrix;
using vic::Vector;

namespace {

vic::Frame frame_of(const std::vector<std::tuple<std::int64_t, double, double>>& peds) {
    vic::Frame f;
    for (const auto& [id, x, y] : peds) {
        vic::PedestrianObservation o;
        o.identity = id;
        o.x = x;
        o.y = y;
        f.observations.push_back(o);
    }
    return f;
}

}  // namespace

TEST(GroupLabels, TinyRadiusIsIdentityPairs) {
    const auto prev = frame_of({{1, 0.1, 0.1}, {2, 0.12, 0.1}, {3, 0.5, 0.5}});
    const auto curr = frame_of({{2, 0.13, 0.1}, {1, 0.11, 0.1}, {4, 0.9, 0.9}});
    const auto g = vic::build_group_labels(prev, curr, 1e-9);
    Matrix expect = Matrix::Zero(3, 3);
    expect(0, 1) = 1;
    expect(1, 0) = 1;
    EXPECT_EQ(g.y, expect);
}

TEST(GroupLabels, NeighboursWithinRadiusArePositive) {
    const auto prev = frame_of({{1, 0.5, 0.5}});
    const auto curr = frame_of({{1, 0.5, 0.5}, {2, 0.6, 0.5}, {3, 0.5, 0.4}, {4, 0.5, 0.75}});
    const auto g = vic::build_group_labels(prev, curr, 0.2);
    EXPECT_EQ(g.y, (Matrix(1, 4) << 1, 1, 1, 0).finished());
}

TEST(GroupLabels, MatchesBruteForce) {
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> u(0, 1);
    for (int t = 0; t < 50; ++t) {
        std::vector<std::tuple<std::int64_t, double, double>> a, b;
        for (int k = 0; k < 6; ++k) a.emplace_back(k, u(rng), u(rng));
        for (int k = 3; k < 9; ++k) b.emplace_back(k, u(rng), u(rng));
        std::shuffle(b.begin(), b.end(), rng);
        const auto prev = frame_of(a), curr = frame_of(b);
        const double r = 0.1 + 0.3 * u(rng);
        const auto g = vic::build_group_labels(prev, curr, r);
        for (std::size_t i = 0; i < a.size(); ++i)
            for (std::size_t j = 0; j < b.size(); ++j) {
                double expect = 0;
                for (const auto& star : b)
                    if (std::get<0>(star) == std::get<0>(a[i]) &&
                        std::hypot(std::get<1>(b[j]) - std::get<1>(star), std::get<2>(b[j]) - std::get<2>(star)) <= r)
                        expect = 1;
                EXPECT_EQ(g.y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)), expect);
            }
    }
}

TEST(GroupLabels, Errors) {
    auto prev = frame_of({{1, 0.5, 0.5}});
    const auto curr = frame_of({{1, 0.5, 0.5}});
    EXPECT_THROW(vic::build_group_labels(prev, curr, 0.0), vic::ConfigError);
    prev.observations[0].identity.reset();
    EXPECT_THROW(vic::build_group_labels(prev, curr, 0.2), vic::LabelingError);
}

TEST(LossCls, PerfectPredictionIsNearZero) {
    const Matrix y = (Matrix(2, 2) << 1, 0, 0, 1).finished();
    EXPECT_LT(vic::loss_cls(y, y).value, 1e-6);
}

TEST(LossCls, HalfIsLog2) {
    const Matrix y = (Matrix(2, 3) << 1, 0, 0, 1, 1, 0).finished();
    EXPECT_NEAR(vic::loss_cls(Matrix::Constant(2, 3, 0.5), y).value, std::log(2.0), 1e-12);
}

TEST(LossCls, HandComputed) {
    const Matrix p = (Matrix(2, 2) << 0.9, 0.2, 0.35, 0.6).finished();
    const Matrix y = (Matrix(2, 2) << 1, 0, 1, 0).finished();
    const double expect = -(std::log(0.9) + std::log(0.8) + std::log(0.35) + std::log(0.4)) / 4.0;
    EXPECT_NEAR(vic::loss_cls(p, y).value, expect, 1e-9);
}

TEST(LossCls, MinimizedAtLabels) {
    const Matrix y = (Matrix(1, 4) << 1, 0, 1, 0).finished();
    const Matrix p = (Matrix(1, 4) << 0.3, 0.7, 0.95, 0.01).finished();
    const auto l = vic::loss_cls(p, y);
    for (int j = 0; j < 4; ++j) EXPECT_EQ(l.grad(0, j) < 0, y(0, j) == 1.0);
    const Matrix logits = (Matrix(1, 4) << -1.0, 2.0, 3.0, -4.0).finished();
    const auto ll = vic::loss_cls_logits(logits, y);
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(ll.grad(0, j), (vic::sigmoid(logits(0, j)) - y(0, j)) / 4.0, 1e-15);
}

TEST(LossKl, IdenticalDistributionsNearZero) {
    const Matrix y = (Matrix(2, 3) << 1, 0, 0, 1, 0, 0).finished();
    const vic::KlConfig cfg{20, 1e-8, vic::Binning::kHard};
    EXPECT_LE(std::abs(vic::loss_kl(y, y, cfg).value), 20 * std::abs(std::log(1.0 / (1.0 + 1e-8))));
}

TEST(LossKl, TwoBinHandValue) {
    // every prediction sits at 0.5, which the half-open bins put in the upper bin
    const Matrix p = Matrix::Constant(2, 2, 0.5);
    const Matrix y = (Matrix(2, 2) << 1, 0, 0, 1).finished();
    const double eps = 1e-8;
    const double expect = 1.0 * std::log(1.0 / (0.5 + eps));
    EXPECT_NEAR(vic::loss_kl(p, y, {2, eps, vic::Binning::kHard}).value, expect, 1e-12);
}

TEST(LossKl, EmptyBinIsSmoothed) {
    const Matrix p = Matrix::Constant(1, 3, 0.55);
    const Matrix y = (Matrix(1, 3) << 1, 0, 1).finished();
    EXPECT_NEAR(vic::loss_kl(p, y, {20, 1e-8, vic::Binning::kHard}).value, std::log(1.0 / 1e-8), 1e-6);
    EXPECT_EQ(vic::loss_kl(Matrix(0, 0), Matrix(0, 0), {}).value, 0.0);
    EXPECT_THROW(vic::loss_kl(p, y, {1, 1e-8, vic::Binning::kHard}), vic::ConfigError);
}

TEST(LossKl, SoftBinGradientMatchesFiniteDifference) {
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> u(0.02, 0.98);
    Matrix p(3, 4), y(3, 4);
    for (Eigen::Index k = 0; k < p.size(); ++k) {
        p.data()[k] = u(rng);
        y.data()[k] = u(rng) < 0.3;
    }
    const vic::KlConfig cfg{10, 1e-3, vic::Binning::kSoft};
    const auto l = vic::loss_kl(p, y, cfg);
    const double h = 1e-7;
    for (Eigen::Index k = 0; k < p.size(); ++k) {
        Matrix up = p, down = p;
        up.data()[k] += h;
        down.data()[k] -= h;
        const double fd = (vic::loss_kl(up, y, cfg).value - vic::loss_kl(down, y, cfg).value) / (2 * h);
        EXPECT_NEAR(l.grad.data()[k], fd, 1e-5 * std::max(1.0, std::abs(fd)));
    }
}

TEST(Sinkhorn, ConstantCostGivesOuterProduct) {
    const Vector mu = Vector::Constant(3, 1.0 / 3), nu = Vector::Constant(4, 0.25);
    const auto r = vic::sinkhorn(Matrix::Constant(3, 4, 2.0), mu, nu);
    EXPECT_TRUE(r.converged);
    EXPECT_LT((r.plan - mu * nu.transpose()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Sinkhorn, SingleCellCarriesAllMass) {
    const auto r = vic::sinkhorn(Matrix::Constant(1, 1, 0.3), Vector::Constant(1, 1.0), Vector::Constant(1, 1.0));
    EXPECT_NEAR(r.plan(0, 0), 1.0, 1e-12);
}

TEST(Sinkhorn, SmallEpsilonConcentratesOnOptimalAssignment) {
    std::mt19937 rng(9);
    std::uniform_real_distribution<double> u(0, 1);
    int checked = 0;
    for (int t = 0; t < 40; ++t) {
        Matrix c(3, 3);
        for (Eigen::Index k = 0; k < 9; ++k) c.data()[k] = u(rng);
        std::vector<int> perm{0, 1, 2}, best_perm;
        double best = 1e9, second = 1e9;
        do {
            const double s = c(0, perm[0]) + c(1, perm[1]) + c(2, perm[2]);
            if (s < best) {
                second = best;
                best = s;
                best_perm = perm;
            } else {
                second = std::min(second, s);
            }
        } while (std::next_permutation(perm.begin(), perm.end()));
        if (second - best < 0.05) continue;  // near-ties blur the entropic plan
        ++checked;
        const Vector m = Vector::Constant(3, 1.0 / 3);
        const auto r = vic::sinkhorn(c, m, m, {0.002, 20000, 1e-10});
        double on_support = 0;
        for (int i = 0; i < 3; ++i) on_support += r.plan(i, best_perm[static_cast<std::size_t>(i)]);
        EXPECT_GT(on_support, 0.99);
    }
    EXPECT_GT(checked, 10);
}

TEST(LossOt, IdenticalOrthonormalTokensCostNothing) {
    const Matrix f = Matrix::Identity(3, 5);
    vic::OtConfig cfg;
    cfg.sinkhorn = {0.01, 5000, 1e-12};
    const auto l = vic::loss_ot(f, f, Matrix::Identity(3, 3), cfg);
    EXPECT_FALSE(l.degenerate);
    EXPECT_LT(l.value, 1e-6);
}

TEST(LossOt, ConstantFeaturesChargeUniformNegativeMass) {
    const Matrix prev = Matrix::Ones(2, 4), curr = Matrix::Ones(3, 4);
    Matrix y = Matrix::Zero(2, 3);
    y(0, 0) = 1;
    y(1, 2) = 1;
    vic::OtConfig cfg;
    cfg.lambda_neg = 1.5;
    // rows {0,1} and columns {0,2} hold positives: uniform plan of 1/4 per cell, two negatives
    const auto l = vic::loss_ot(prev, curr, y, cfg);
    EXPECT_NEAR(l.value, 1.5 * 2 * 0.25, 1e-9);
}

TEST(LossOt, NoPositivesIsDegenerate) {
    const auto l = vic::loss_ot(Matrix::Random(2, 3), Matrix::Random(2, 3), Matrix::Zero(2, 2), {});
    EXPECT_TRUE(l.degenerate);
    EXPECT_EQ(l.value, 0.0);
    EXPECT_EQ(l.d_prev.cwiseAbs().sum(), 0.0);
}

TEST(TotalLoss, SumsTerms) {
    vic::LossBreakdown b;
    EXPECT_EQ(vic::total_loss(b), 0.0);
    b.l_ot = 1.5;
    b.l_cls = 0.2;
    b.l_kl = 0.05;
    EXPECT_NEAR(vic::total_loss(b), 1.75, 1e-12);
    b.l_kl = std::nan("");
    try {
        vic::total_loss(b);
        FAIL() << "expected TrainingError";
    } catch (const vic::TrainingError& e) {
        EXPECT_NE(std::string(e.what()).find("l_kl"), std::string::npos);
    }
}
