#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "prism/scoring.hpp"

namespace prism {
namespace {

TargetDirection direction(Vector v, DirectionKind kind = DirectionKind::PrismWeighted) {
    TargetDirection d;
    d.kind = kind;
    d.vector = std::move(v);
    return d;
}

CurvatureOperator identity(int n) {
    return CurvatureOperator::from_dense(CurvatureKind::ExactDense, Matrix::Identity(n, n), 0.0, "identity");
}

TEST(ScoringTest, AlignedGradientScoresSquaredNorm) {
    const Vector d = (Vector(3) << 1.0, -2.0, 0.5).finished();
    Matrix grads(2, 3);
    grads.row(0) = d.transpose();
    grads.row(1) << 2.0, 1.0, 0.0;  // orthogonal to d
    const std::vector<TargetDirection> dirs{direction(d)};
    const auto t = score_gradients(grads, identity(3), dirs);
    EXPECT_DOUBLE_EQ(t.rows[0].h_pi, d.squaredNorm());
    EXPECT_EQ(t.rows[1].h_pi, 0.0);
    EXPECT_TRUE(std::isnan(t.rows[0].h_0));
}

TEST(ScoringTest, MatchesNaivePerExampleSolve) {
    Rng rng(3);
    const int V = 5;
    const auto m = ModelParams::random(ModelSpec::tabular(V), 8, 1.0);
    const auto pool = oracle::random_pool(rng, V, 10, 3);
    const auto targets = oracle::random_targets(rng, V, 4, 3);
    const auto curv = fit_exact_hessian(m, pool, Damping{}, 0.01);
    const std::vector<TargetDirection> dirs{target_direction_prism(m, targets), target_direction_equal(m, targets)};
    const auto t = score_pool(m, pool, curv, dirs);
    Matrix H = curv.payload();
    H.diagonal().array() += curv.damping();
    std::vector<double> want_pi;
    std::vector<double> want_0;
    for (const auto& z : pool) {
        const Vector g = sft_loss_and_grad(m, z).grad;
        const Eigen::ColPivHouseholderQR<Matrix> fresh(H);
        want_pi.push_back(g.dot(fresh.solve(dirs[0].vector)));
        want_0.push_back(g.dot(fresh.solve(dirs[1].vector)));
    }
    auto scale = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) {
            s = std::max(s, std::abs(x));
        }
        return s;
    };
    for (std::size_t i = 0; i < pool.size(); ++i) {
        EXPECT_LE(std::abs(t.rows[i].h_pi - want_pi[i]), 1e-8 * scale(want_pi));
        EXPECT_LE(std::abs(t.rows[i].h_0 - want_0[i]), 1e-8 * scale(want_0));
    }
}

TEST(ScoringTest, RanksArePermutationWithIdTieBreak) {
    Matrix grads(5, 1);
    grads << 1.0, 3.0, 3.0, -2.0, 1.0;
    const std::vector<TargetDirection> dirs{direction(Vector::Ones(1))};
    const auto t = score_gradients(grads, identity(1), dirs);
    std::vector<int> ranks;
    for (const auto& r : t.rows) {
        ranks.push_back(r.rank_pi);
    }
    EXPECT_EQ(ranks, (std::vector<int>{2, 0, 1, 4, 3}));
}

TEST(ScoringTest, DimensionMismatchRejected) {
    const std::vector<TargetDirection> dirs{direction(Vector::Ones(2))};
    EXPECT_THROW(score_gradients(Matrix::Ones(3, 4), identity(4), dirs), ValidationError);
}

TEST(ScoringTest, CurvatureScalingPreservesRanking) {
    Rng rng(5);
    const int V = 5;
    const auto m = ModelParams::random(ModelSpec::tabular(V), 2, 1.0);
    const auto pool = oracle::random_pool(rng, V, 30, 3);
    const auto targets = oracle::random_targets(rng, V, 3, 3);
    const auto curv = fit_exact_hessian(m, pool, Damping{}, 0.01);
    const std::vector<TargetDirection> dirs{target_direction_prism(m, targets)};
    const auto a = score_pool(m, pool, curv, dirs);
    const auto b = score_pool(m, pool, curv.scaled(8.0), dirs);
    const auto id = ids(a);
    EXPECT_EQ(rank_order(column(a, ScoreColumn::Prism), id), rank_order(column(b, ScoreColumn::Prism), id));
}

TEST(SelectTest, KeepAndRemove) {
    const std::vector<double> s{5.0, 1.0, 9.0};
    const std::vector<int> id{0, 1, 2};
    EXPECT_EQ(select_top(s, id, 1.0 / 3.0, SelectMode::Keep), (std::vector<int>{2}));
    EXPECT_EQ(select_top(s, id, 1.0 / 3.0, SelectMode::Remove), (std::vector<int>{0, 1}));
    EXPECT_EQ(select_top(s, id, 1.0, SelectMode::Keep), (std::vector<int>{2, 0, 1}));
}

TEST(SelectTest, BudgetRounding) {
    EXPECT_EQ(budget_count(0.05, 2000), 100u);
    EXPECT_EQ(budget_count(0.001, 10), 1u);
    EXPECT_EQ(budget_count(1.0, 7), 7u);
    EXPECT_THROW(budget_count(0.0, 10), ValidationError);
    EXPECT_THROW(budget_count(1.5, 10), ValidationError);
}

TEST(SelectTest, TiesBreakByAscendingId) {
    const std::vector<double> s{2.0, 2.0, 2.0, 1.0};
    const std::vector<int> id{3, 1, 2, 0};
    EXPECT_EQ(select_top(s, id, 0.5, SelectMode::Keep), (std::vector<int>{1, 2}));
}

TEST(AurocTest, PerfectAndReversed) {
    const std::vector<Label> l{Label::Harmful, Label::Benign, Label::Harmful, Label::Benign};
    EXPECT_EQ(auroc(std::vector<double>{0.9, 0.1, 0.8, 0.2}, l), 1.0);
    EXPECT_EQ(auroc(std::vector<double>{0.1, 0.9, 0.2, 0.8}, l), 0.0);
    EXPECT_EQ(auroc(std::vector<double>{1.0, 1.0, 1.0, 1.0}, l), 0.5);
}

TEST(AurocTest, MatchesPairCounting) {
    Rng rng(12);
    for (int k = 0; k < 50; ++k) {
        const int n = rng.integer(2, 60);
        std::vector<double> s(static_cast<std::size_t>(n));
        std::vector<Label> l(s.size());
        for (std::size_t i = 0; i < s.size(); ++i) {
            s[i] = std::round(rng.uniform() * 8.0);  // coarse values force ties
            l[i] = rng.bernoulli(0.3) ? Label::Harmful : Label::Benign;
        }
        l[0] = Label::Harmful;
        l[1] = Label::Benign;
        EXPECT_NEAR(auroc(s, l), oracle::pair_count_auroc(s, l), 1e-12);
    }
}

TEST(AurocTest, SingleClassRejected) {
    EXPECT_THROW(auroc(std::vector<double>{1.0, 2.0}, std::vector<Label>{Label::Benign, Label::Benign}),
                 ValidationError);
}

TEST(AurocTest, RandomScoresAreNearChance) {
    std::vector<Label> l(400, Label::Benign);
    for (std::size_t i = 0; i < l.size(); i += 5) {
        l[i] = Label::Harmful;
    }
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        total += auroc(random_baseline_scores(l.size(), seed), l);
    }
    const double avg = total / 200.0;
    EXPECT_GE(avg, 0.45);
    EXPECT_LE(avg, 0.55);
    EXPECT_EQ(random_baseline_scores(10, 4), random_baseline_scores(10, 4));
}

TEST(ScoreTableTest, CsvRoundTrip) {
    ScoreTable t;
    for (int i = 0; i < 4; ++i) {
        ScoreRow r;
        r.example_id = i;
        r.h_pi = 0.1 * i - 0.123456789012345;
        r.h_0 = -1.0 / (i + 3);
        r.label = i % 2 ? Label::Harmful : Label::Benign;
        t.rows.push_back(r);
    }
    assign_ranks(t);
    const auto back = parse_score_table_csv(score_table_csv(t));
    ASSERT_EQ(back.size(), 4u);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(back.rows[i].h_pi, t.rows[i].h_pi);
        EXPECT_EQ(back.rows[i].h_0, t.rows[i].h_0);
        EXPECT_TRUE(std::isnan(back.rows[i].h_unpaired));
        EXPECT_EQ(back.rows[i].rank_pi, t.rows[i].rank_pi);
        EXPECT_EQ(back.rows[i].label, t.rows[i].label);
    }
    EXPECT_THROW(parse_score_table_csv("id,score\n1,2\n"), ValidationError);
}

TEST(ScoreTableTest, SelectionManifest) {
    const auto j = selection_manifest(SelectMode::Keep, 0.05, {4, 1});
    EXPECT_EQ(j["mode"], "keep");
    EXPECT_EQ(j["budget"], 0.05);
    EXPECT_EQ(j["ids"], nlohmann::json::array({4, 1}));
}

}  // namespace
}  // namespace prism
