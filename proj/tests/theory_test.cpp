#include <cmath>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "prism/direction.hpp"
#include "prism/theory.hpp"

namespace prism {
namespace {

TEST(TheoryTest, RandomInstanceIsDeterministic) {
    const auto a = random_instance(5);
    const auto b = random_instance(5);
    EXPECT_EQ(a.fingerprint(), b.fingerprint());
    EXPECT_NE(a.fingerprint(), random_instance(6).fingerprint());
    EXPECT_GE(a.ridge, 0.01);
    EXPECT_LE(a.ridge, 0.5);
    for (const auto& t : a.targets) {
        EXPECT_FALSE(t.degenerate());
    }
}

TEST(TheoryTest, CertifiedOptimumMatchesNewtonOracle) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto inst = random_instance(seed);
        const auto opt = certified_optimum(inst);
        EXPECT_LE(opt.grad_norm, 1e-12);
        const Vector want = oracle::tabular_newton_optimum(inst.spec.vocab_size, inst.pool, inst.ridge);
        EXPECT_LE((opt.params.theta() - want).lpNorm<Eigen::Infinity>(), 1e-10);
    }
}

TEST(TheoryTest, GradientIdentityHolds) {
    for (std::uint64_t seed : {10u, 11u, 12u}) {
        const auto inst = random_instance(seed);
        const auto m = ModelParams::random(inst.spec, seed, 1.0);
        const auto r = check_grad_identity(m, inst.targets, seed);
        EXPECT_TRUE(r.passed()) << to_json(r).dump();
        EXPECT_LE(r.rel_error, 1e-4);
    }
}

TEST(TheoryTest, UpweightingResponseMatchesScore) {
    const std::vector<int> probes{0, 3};
    for (std::uint64_t seed : {20u, 21u}) {
        const auto r = check_theorem1(random_instance(seed), probes);
        EXPECT_TRUE(r.passed()) << to_json(r).dump();
        EXPECT_EQ(r.eps_schedule, kDefaultEpsSchedule);
    }
}

TEST(TheoryTest, SubsetUpweightingMatchesMeanScore) {
    const std::vector<int> subset{0, 1, 2};
    const auto r = check_theorem1_subset(random_instance(30), subset);
    EXPECT_TRUE(r.passed()) << to_json(r).dump();
}

struct GapFixture {
    ModelParams model;
    std::vector<PairedTarget> targets;
    CurvatureOperator curv;
};

GapFixture gap_fixture(std::uint64_t seed) {
    const auto inst = random_instance(seed);
    auto m = ModelParams::random(inst.spec, seed, 1.0);
    auto curv = fit_exact_hessian(m, inst.pool, Damping{}, inst.ridge);
    return {std::move(m), inst.targets, std::move(curv)};
}

TEST(TheoryTest, DirectionGapMatchesIndependentCosine) {
    for (std::uint64_t seed : {40u, 41u, 42u}) {
        const auto f = gap_fixture(seed);
        const auto r = check_direction_gap(f.model, f.targets, f.curv);
        ASSERT_TRUE(r.passed()) << to_json(r).dump();
        Matrix H = f.curv.payload();
        H.diagonal().array() += f.curv.damping();
        const Eigen::LLT<Matrix> llt(H);
        const Vector a = target_direction_prism(f.model, f.targets).vector;
        const Vector b = target_direction_equal(f.model, f.targets).vector;
        const double cos = a.dot(llt.solve(b)) / std::sqrt(a.dot(llt.solve(a)) * b.dot(llt.solve(b)));
        EXPECT_NEAR(r.measured["gain_ratio"].get<double>(), cos, 1e-8);
        EXPECT_LE(r.measured["gain_ratio"].get<double>(), 1.0 + 1e-12);
    }
}

TEST(TheoryTest, ConstantWeightsCloseTheDirectionGap) {
    const auto f = gap_fixture(43);
    const auto r = check_direction_gap(f.model, f.targets, f.curv, 2.0,
                                       std::vector<double>(f.targets.size(), 0.37));
    EXPECT_TRUE(r.passed());
    EXPECT_LE(std::abs(r.measured["ratio_gap"].get<double>()), 1e-12);
    const auto natural = check_direction_gap(f.model, f.targets, f.curv, 2.0);
    EXPECT_GT(natural.measured["ratio_gap"].get<double>(), 1e-12);
}

ScoreTable table_of(const std::vector<double>& h_pi, const std::vector<double>& h_0) {
    ScoreTable t;
    for (std::size_t i = 0; i < h_pi.size(); ++i) {
        ScoreRow r;
        r.example_id = static_cast<int>(i);
        r.h_pi = h_pi[i];
        r.h_0 = h_0[i];
        t.rows.push_back(r);
    }
    assign_ranks(t);
    return t;
}

TEST(TheoryTest, SelectionGapOnHandTable) {
    const auto t = table_of({3.0, 1.0, 2.0, 0.0}, {0.0, 3.0, 1.0, 2.0});
    const std::vector<int> m{1, 2, 4};
    const auto r = check_selection_gap(t, m, true);
    ASSERT_TRUE(r.passed());
    const auto& d = r.measured["delta_m"];
    EXPECT_DOUBLE_EQ(d[0].get<double>(), 2.0);            // 3 - 1
    EXPECT_DOUBLE_EQ(d[1].get<double>(), (5.0 - 1.0) / 2);  // {0,2} vs {1,3}
    EXPECT_DOUBLE_EQ(d[2].get<double>(), 0.0);
    EXPECT_THROW(check_selection_gap(t, std::vector<int>{5}), ValidationError);
}

TEST(TheoryTest, SelectionGapWithTies) {
    const auto t = table_of({1.0, 1.0, 1.0, 0.5, 0.5}, {0.5, 1.0, 0.2, 1.0, 0.0});
    const std::vector<int> m{1, 2, 3, 4, 5};
    const auto r = check_selection_gap(t, m, true);
    EXPECT_TRUE(r.passed());
    EXPECT_GE(r.measured["min_delta"].get<double>(), 0.0);
    EXPECT_EQ(r.measured["exhaustive_shortfall"].get<double>(), 0.0);
}

TEST(TheoryTest, InfoIdentityAndBounds) {
    const auto inst = random_instance(50);
    const auto m = ModelParams::random(inst.spec, 50, 2.0);
    std::vector<double> grid;
    for (double r = -30.0; r <= 30.0; r += 0.5) {
        grid.push_back(r);
    }
    const auto info = check_info_identity(m, inst.targets, grid);
    EXPECT_TRUE(info.passed()) << to_json(info).dump();
    EXPECT_LE(info.abs_error, 1e-6);
    EXPECT_TRUE(check_reward_bounds(m, inst.targets).passed());
}

TEST(TheoryTest, HessianCheckPassesAndDetectsTightTolerance) {
    Rng rng(60);
    const auto pool = oracle::random_pool(rng, 2, 6, 3);
    const auto m = ModelParams::random(ModelSpec::tabular(2), 60, 1.0);
    EXPECT_TRUE(check_hessian_fd(m, pool, 0.05).passed());
    EXPECT_FALSE(check_hessian_fd(m, pool, 0.05, 1e-16).passed());
}

TEST(TheoryTest, EkfacKroneckerCase) {
    const auto r = check_ekfac_kronecker(7);
    EXPECT_TRUE(r.passed()) << to_json(r).dump();
    EXPECT_LE(r.rel_error, 1e-8);
}

TEST(TheoryTest, EkfacProbeErrorIsReported) {
    const auto r = check_ekfac_vs_fisher(3, 10);
    EXPECT_TRUE(r.measured.contains("median_rel_error"));
    EXPECT_EQ(r.passed(), r.measured["median_rel_error"].get<double>() <= 0.5);
}

TEST(TheoryTest, SmallSuiteRunsDeterministically) {
    VerifyOptions o;
    o.seed = 9;
    o.grad_instances = 3;
    o.theorem1_instances = 2;
    o.theorem1_probes = 2;
    o.direction_instances = 5;
    o.selection_tables = 6;
    o.bound_draws = 10;
    const auto a = run_verify_suite(o);
    const std::vector<std::string> names{"grad_identity", "theorem1",      "theorem1_subset", "direction_gap",
                                         "selection_gap", "info_identity", "reward_bounds",   "curvature"};
    ASSERT_EQ(a.size(), names.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].name, names[i]);
        if (a[i].name != "curvature") {
            EXPECT_TRUE(a[i].passed()) << suite_to_json(a[i]).dump();
        }
    }
    o.threads = 2;
    const auto b = run_verify_suite(o);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(suite_to_json(a[i]).dump(), suite_to_json(b[i]).dump());
    }
    EXPECT_NE(suite_markdown(a).find("| check | passed | total | required | status |"), std::string::npos);
}

}  // namespace
}  // namespace prism
