#include <cmath>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "prism/preference.hpp"

namespace prism {
namespace {

TEST(PreferenceTest, IdenticalResponsesHaveZeroMargin) {
    const auto m = ModelParams::random(ModelSpec::tabular(5), 3, 1.0);
    const PairedTarget t{0, {1}, {2, 3}, {2, 3}};
    EXPECT_EQ(margin(m, t), 0.0);
    EXPECT_EQ(preference_weight(m, t), 0.5);
    EXPECT_TRUE(preference_record(m, t).degenerate);
}

TEST(PreferenceTest, UniformModelHasZeroMargin) {
    const auto m = ModelParams::zeros(ModelSpec::tabular(6));
    EXPECT_NEAR(margin(m, {0, {0}, {1, 2}, {4}}), 0.0, 1e-15);
}

TEST(PreferenceTest, MarginMatchesEnumeration) {
    Rng rng(12);
    const int V = 5;
    const auto m = ModelParams::random(ModelSpec::tabular(V), 4, 1.5);
    for (const auto& t : oracle::random_targets(rng, V, 20, 4)) {
        const long double want = oracle::tabular_normalized(m.theta(), V, t.query, t.positive) -
                                 oracle::tabular_normalized(m.theta(), V, t.query, t.negative);
        EXPECT_NEAR(margin(m, t), static_cast<double>(want), 1e-12);
    }
}

TEST(PreferenceTest, SwappingResponsesComplementsWeight) {
    Rng rng(6);
    const auto m = ModelParams::random(ModelSpec::tabular(5), 8, 2.0);
    for (auto t : oracle::random_targets(rng, 5, 30, 3)) {
        const double mg = margin(m, t);
        const double pi = preference_weight(m, t);
        std::swap(t.positive, t.negative);
        EXPECT_EQ(margin(m, t), -mg);
        // sigma(-m) and 1 - sigma(m) are different roundings of the same number.
        EXPECT_NEAR(preference_weight(m, t), 1.0 - pi, 2.3e-16);
    }
}

TEST(PreferenceTest, SigmoidValues) {
    EXPECT_EQ(sigmoid(0.0), 0.5);
    EXPECT_NEAR(sigmoid(std::log(3.0)), 0.75, 1e-15);
    EXPECT_EQ(sigmoid(1000.0), 1.0);
    EXPECT_EQ(sigmoid(-1000.0), 0.0);
    EXPECT_NEAR(softplus(0.0), std::log(2.0), 1e-16);
    EXPECT_EQ(softplus(800.0), 800.0);
    EXPECT_GT(softplus(-800.0), -1.0);
}

TEST(PreferenceTest, KlTermIsMinusLogOneMinusPi) {
    for (double m = -30.0; m <= 30.0; m += 0.125) {
        const auto s = reward_from_margins(std::vector<double>{m});
        const double kl = s.records[0].kl_term;
        // 1 - pi evaluated as sigma(-m) keeps full precision in the tail.
        EXPECT_NEAR(kl, -std::log(sigmoid(-m)), 1e-10 * std::max(1.0, std::abs(m)));
        if (std::abs(m) <= 10.0) {
            EXPECT_NEAR(kl, -std::log(1.0 - sigmoid(m)), 1e-10);
        }
    }
}

TEST(PreferenceTest, SinglePairAtEvenOddsHasRewardLog2) {
    const auto m = ModelParams::zeros(ModelSpec::tabular(4));
    const std::vector<PairedTarget> t{{0, {0}, {1}, {2}}};
    const auto s = kl_reward(m, t);
    EXPECT_NEAR(s.K, std::log(2.0), 1e-15);
    EXPECT_EQ(s.P, 0.5);
    EXPECT_EQ(s.R_pair, 1.0);
}

TEST(PreferenceTest, RewardVanishesForConfidentNegatives) {
    const auto s = reward_from_margins(std::vector<double>{-40.0, -45.0, -60.0});
    EXPECT_LT(s.K, 1e-10);
    EXPECT_LT(s.P, 1e-10);
    EXPECT_EQ(s.R_pair, 0.0);
}

TEST(PreferenceTest, RewardMatchesEnumeration) {
    Rng rng(31);
    const int V = 6;
    const auto m = ModelParams::random(ModelSpec::tabular(V), 2, 1.0);
    const auto targets = oracle::random_targets(rng, V, 8, 4);
    long double k = 0.0L;
    for (const auto& t : targets) {
        const long double mg = oracle::tabular_normalized(m.theta(), V, t.query, t.positive) -
                               oracle::tabular_normalized(m.theta(), V, t.query, t.negative);
        const long double one_minus_pi = 1.0L / (1.0L + std::exp(mg));
        k += -std::log(one_minus_pi);
    }
    EXPECT_NEAR(kl_reward(m, targets).K, static_cast<double>(k / 8.0L), 1e-12);
}

TEST(PreferenceTest, RewardIncreasesWithMargin) {
    double prev = -1.0;
    for (double mg = -5.0; mg <= 5.0; mg += 0.5) {
        const double k = reward_from_margins(std::vector<double>{mg, 0.3}).K;
        EXPECT_GT(k, prev);
        prev = k;
    }
}

TEST(PreferenceTest, RewardIncreasesAlongMarginGradient) {
    const int V = 5;
    const auto m = ModelParams::random(ModelSpec::tabular(V), 14, 1.0);
    const std::vector<PairedTarget> t{{0, {1}, {2, 0}, {3}}};
    // grad margin = -(grad lbar+ - grad lbar-)
    const Vector d = token_avg_loss_and_grad(m, t[0].query, t[0].negative).grad -
                     token_avg_loss_and_grad(m, t[0].query, t[0].positive).grad;
    const double k0 = kl_reward(m, t).K;
    const ModelParams stepped(m.spec(), m.theta() + 1e-2 * d);
    EXPECT_GT(margin(stepped, t[0]), margin(m, t[0]));
    EXPECT_GT(kl_reward(stepped, t).K, k0);
}

TEST(PreferenceTest, BoundsAtEvenOddsAndHighPreference) {
    const auto even = reward_from_margins(std::vector<double>(5, 0.0));
    EXPECT_TRUE(check_bounds(even).ok);
    EXPECT_NEAR(even.K, std::log(2.0), 1e-15);
    const double logit = std::log(0.9 / 0.1);
    const auto high = reward_from_margins(std::vector<double>(4, logit));
    EXPECT_TRUE(check_bounds(high).ok);
    EXPECT_NEAR(high.P, 0.9, 1e-15);
    EXPECT_NEAR(high.K, std::log(10.0), 1e-14);
}

TEST(PreferenceTest, BoundsHoldOnRandomDraws) {
    Rng rng(77);
    for (int k = 0; k < 1000; ++k) {
        const int V = rng.integer(2, 7);
        const auto m = ModelParams::random(ModelSpec::tabular(V), rng.next(), rng.uniform(0.01, 8.0));
        const auto s = kl_reward(m, oracle::random_targets(rng, V, rng.integer(1, 6), 4));
        const auto b = check_bounds(s);
        ASSERT_TRUE(b.ok) << b.violated;
        EXPECT_NO_THROW(require_bounds(s));
    }
}

TEST(PreferenceTest, ConstructedViolationIsNamed) {
    RewardSummary s;
    s.K = 0.2;
    s.P = 0.4;
    s.R_pair = 0.5;
    const auto b = check_bounds(s);
    EXPECT_FALSE(b.ok);
    EXPECT_NE(b.violated.find("P <= K"), std::string::npos);
    EXPECT_THROW(require_bounds(s), BoundViolation);
}

TEST(PreferenceTest, LengthMismatchIsFlagged) {
    const auto m = ModelParams::zeros(ModelSpec::tabular(4));
    EXPECT_TRUE(preference_record(m, {0, {0}, {1}, {1, 2, 3, 0, 1}}).length_flag);
    EXPECT_FALSE(preference_record(m, {0, {0}, {1, 2}, {1, 2, 3}}).length_flag);
}

TEST(PreferenceTest, EmptyTargetsRejected) {
    const auto m = ModelParams::zeros(ModelSpec::tabular(4));
    EXPECT_THROW(kl_reward(m, std::vector<PairedTarget>{}), ValidationError);
}

TEST(PreferenceTest, CsvClampsDisplayedMargins) {
    const auto s = reward_from_margins(std::vector<double>{100.0, -0.5});
    const auto csv = preference_csv(s);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "target_id,margin,pi,kl_term");
    EXPECT_EQ(csv.find("100"), std::string::npos);
}

}  // namespace
}  // namespace prism
