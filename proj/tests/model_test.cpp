#include <cmath>
#include <filesystem>
#include <limits>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "prism/corpus_io.hpp"
#include "prism/model.hpp"
#include "prism/training.hpp"

namespace prism {
namespace {

TEST(ModelTest, UniformTabularLogProb) {
    const auto m = ModelParams::zeros(ModelSpec::tabular(4));
    const TokenSequence u{0};
    const TokenSequence v{1, 2, 3};
    EXPECT_NEAR(seq_log_prob(m, u, v), -4.158883, 1e-6);
    EXPECT_NEAR(normalized_log_prob(m, u, v), -1.386294, 1e-6);
}

TEST(ModelTest, PeakedRowGivesNearCertainToken) {
    const int V = 3;
    Vector theta = Vector::Zero(V * V);
    theta[0 * V + 1] = 40.0;
    const ModelParams m(ModelSpec::tabular(V), theta);
    const double eps = (V - 1) * std::exp(-40.0);
    EXPECT_NEAR(seq_log_prob(m, {0}, {1}), std::log1p(-eps), 1e-15);
}

TEST(ModelTest, LogProbMatchesEnumeration) {
    Rng rng(7);
    for (int V : {2, 5, 9}) {
        const auto m = ModelParams::random(ModelSpec::tabular(V), rng.next(), 2.0);
        for (int k = 0; k < 20; ++k) {
            const auto u = oracle::random_tokens(rng, V, 0, 4);
            const auto v = oracle::random_tokens(rng, V, 1, 6);
            const double want = static_cast<double>(oracle::tabular_seq_log_prob(m.theta(), V, u, v));
            EXPECT_NEAR(seq_log_prob(m, u, v), want, 1e-12 * (1.0 + std::abs(want)));
        }
    }
}

TEST(ModelTest, NormalizedIsSequenceOverLength) {
    Rng rng(3);
    const auto m = ModelParams::random(ModelSpec::tabular(6), 11, 1.0);
    for (int k = 0; k < 10; ++k) {
        const auto u = oracle::random_tokens(rng, 6, 0, 3);
        const auto v = oracle::random_tokens(rng, 6, 1, 5);
        EXPECT_EQ(normalized_log_prob(m, u, v), seq_log_prob(m, u, v) / static_cast<double>(v.size()));
        EXPECT_EQ(token_avg_loss_and_grad(m, u, v).loss, -normalized_log_prob(m, u, v));
    }
}

TEST(ModelTest, RejectsOutOfRangeTokens) {
    const auto m = ModelParams::zeros(ModelSpec::tabular(4));
    EXPECT_THROW(seq_log_prob(m, {0}, {4}), InvalidTokenError);
    EXPECT_THROW(seq_log_prob(m, {-1}, {0}), InvalidTokenError);
    try {
        seq_log_prob(m, {0}, {7});
        FAIL();
    } catch (const InvalidTokenError& e) {
        EXPECT_EQ(e.token(), 7);
    }
}

TEST(ModelTest, ParameterCounts) {
    EXPECT_EQ(ModelSpec::tabular(7).parameter_count(), 49u);
    const auto s = ModelSpec::mlp(10, 2, 3, 5);
    EXPECT_EQ(s.parameter_count(), 3u * 10 + 5u * (2 * 3 + 1) + 10u * (5 + 1));
    std::size_t total = 0;
    for (const auto& b : layer_blocks(s)) {
        EXPECT_EQ(b.offset, total);
        total += static_cast<std::size_t>(b.rows * b.cols);
    }
    EXPECT_EQ(total, s.parameter_count());
    EXPECT_THROW(ModelSpec::tabular(1).validate(), ValidationError);
}

TEST(ModelTest, UniformSftGradient) {
    const int V = 4;
    const auto m = ModelParams::zeros(ModelSpec::tabular(V));
    const Example z{0, {2}, {1, 3}};
    const auto lg = sft_loss_and_grad(m, z);
    Vector want = Vector::Zero(V * V);
    for (int c = 0; c < V; ++c) {
        want[2 * V + c] = 1.0 / V - (c == 1 ? 1.0 : 0.0);
        want[1 * V + c] = 1.0 / V - (c == 3 ? 1.0 : 0.0);
    }
    EXPECT_LE((lg.grad - want).lpNorm<Eigen::Infinity>(), 1e-15);
    EXPECT_NEAR(lg.loss, 2.0 * std::log(4.0), 1e-14);
}

void expect_fd_gradient(const ModelParams& m, const Example& z, std::uint64_t seed) {
    const auto lg = sft_loss_and_grad(m, z);
    auto f = [&](const Vector& th) { return sft_loss_and_grad(ModelParams(m.spec(), th), z).loss; };
    Rng rng(seed);
    for (int k = 0; k < 20; ++k) {
        const auto i = static_cast<Eigen::Index>(rng.index(m.size()));
        const double fd = oracle::central_diff(f, m.theta(), i, 1e-5);
        EXPECT_LE(std::abs(fd - lg.grad[i]), 1e-5 * std::max(1.0, std::abs(fd))) << "coordinate " << i;
    }
}

TEST(ModelTest, TabularGradientMatchesFiniteDifference) {
    const auto m = ModelParams::random(ModelSpec::tabular(5), 21, 1.0);
    expect_fd_gradient(m, {0, {1, 4}, {0, 2, 2, 3}}, 1);
    expect_fd_gradient(m, {1, {}, {4, 1}}, 2);
}

TEST(ModelTest, MlpGradientMatchesFiniteDifference) {
    const auto m = ModelParams::random(ModelSpec::mlp(7, 2, 3, 4), 5, 0.7);
    expect_fd_gradient(m, {0, {1, 4, 2}, {0, 5, 3}}, 3);
    expect_fd_gradient(m, {1, {}, {6, 1, 1, 2}}, 4);
}

TEST(ModelTest, TokenAverageGradientScalesSummed) {
    const auto m = ModelParams::random(ModelSpec::mlp(6, 1, 2, 3), 9, 0.5);
    const Example z{0, {3}, {1, 2, 0}};
    const auto avg = token_avg_loss_and_grad(m, z.query, z.response);
    const auto sum = sft_loss_and_grad(m, z);
    EXPECT_LE((avg.grad * 3.0 - sum.grad).lpNorm<Eigen::Infinity>(), 1e-14);
}

TEST(ModelTest, MlpHandlesEmptyQuery) {
    const auto m = ModelParams::random(ModelSpec::mlp(5, 3, 2, 3), 1, 1.0);
    const auto p = next_token_probs(m, {}, {});
    EXPECT_NEAR(p.sum(), 1.0, 1e-14);
    EXPECT_TRUE(std::isfinite(seq_log_prob(m, {}, {0, 1})));
}

TEST(ModelTest, GreedyDecodeFollowsArgmax) {
    const int V = 4;
    Vector theta = Vector::Zero(V * V);
    theta[0 * V + 2] = 3.0;
    theta[2 * V + 1] = 3.0;
    theta[1 * V + 1] = 1.0;
    theta[1 * V + 3] = 1.0;
    const ModelParams m(ModelSpec::tabular(V), theta);
    EXPECT_EQ(greedy_decode(m, {0}, 3), (TokenSequence{2, 1, 1}));
}

TEST(ModelTest, PermutationCovariance) {
    const int V = 6;
    const std::vector<int> sigma{3, 0, 4, 1, 2, 5};  // fixes BOS
    const auto m = ModelParams::random(ModelSpec::tabular(V), 17, 1.5);
    Vector permuted(V * V);
    for (int r = 0; r < V; ++r) {
        for (int c = 0; c < V; ++c) {
            permuted[sigma[r] * V + sigma[c]] = m.theta()[r * V + c];
        }
    }
    const ModelParams mp(m.spec(), permuted);
    auto relabel = [&](TokenSequence s) {
        for (auto& t : s) {
            t = sigma[t];
        }
        return s;
    };
    Rng rng(2);
    for (int k = 0; k < 20; ++k) {
        const auto u = oracle::random_tokens(rng, V, 0, 3);
        const auto v = oracle::random_tokens(rng, V, 1, 4);
        EXPECT_NEAR(seq_log_prob(mp, relabel(u), relabel(v)), seq_log_prob(m, u, v), 1e-13);
    }
}

TEST(TrainingTest, MatchesIndependentNewtonSolve) {
    Rng rng(41);
    const int V = 5;
    const auto pool = oracle::random_pool(rng, V, 30, 4);
    TrainOptions opt;
    opt.ridge = 0.1;
    const auto r = train_to_local_optimum(ModelSpec::tabular(V), pool, opt);
    const Vector want = oracle::tabular_newton_optimum(V, pool, 0.1);
    EXPECT_LE((r.params.theta() - want).lpNorm<Eigen::Infinity>(), 1e-6);
    EXPECT_LE(r.grad_norm, 1e-9);
}

TEST(TrainingTest, DegenerateCorpusConcentratesMass) {
    const int V = 3;
    std::vector<Example> pool;
    for (int i = 0; i < 6; ++i) {
        pool.push_back({i, {i % 2}, {0, 0}});
    }
    TrainOptions opt;
    opt.ridge = 1e-4;
    opt.tol_grad = 1e-8;
    const auto r = train_to_local_optimum(ModelSpec::tabular(V), pool, opt);
    for (int row : {0, 1}) {
        EXPECT_GT(next_token_probs(r.params, {row}, {})[0], 0.99);
    }
}

TEST(TrainingTest, EmptyUpweightsIsBitIdentical) {
    Rng rng(5);
    const auto pool = oracle::random_pool(rng, 4, 10, 3);
    TrainOptions a;
    a.ridge = 0.05;
    TrainOptions b = a;
    b.upweights = {};
    const auto ra = train_to_local_optimum(ModelSpec::tabular(4), pool, a);
    const auto rb = train_to_local_optimum(ModelSpec::tabular(4), pool, b);
    EXPECT_EQ(ra.params.fingerprint(), rb.params.fingerprint());
    EXPECT_TRUE(ra.params.theta() == rb.params.theta());
}

TEST(TrainingTest, UpweightChangesObjective) {
    Rng rng(8);
    const auto pool = oracle::random_pool(rng, 4, 6, 3);
    const auto m = ModelParams::random(ModelSpec::tabular(4), 3, 1.0);
    Vector g0;
    Vector g1;
    const double f0 = training_objective(m, pool, 0.1, {}, &g0);
    const double f1 = training_objective(m, pool, 0.1, {{2, 0.5}}, &g1);
    const auto z = sft_loss_and_grad(m, pool[2]);
    EXPECT_NEAR(f1 - f0, 0.5 * z.loss, 1e-13);
    EXPECT_LE((g1 - g0 - 0.5 * z.grad).lpNorm<Eigen::Infinity>(), 1e-13);
}

// Steps whose predicted decrease is below the resolution of f may be accepted
// when the gradient shrinks; they may raise f by at most that resolution.
TEST(TrainingTest, ObjectiveTraceIsNonIncreasing) {
    Rng rng(13);
    const auto pool = oracle::random_pool(rng, 6, 25, 4);
    TrainOptions opt;
    opt.ridge = 0.01;
    const auto r = train_to_local_optimum(ModelSpec::tabular(6), pool, opt);
    ASSERT_GE(r.objective_trace.size(), 2u);
    for (std::size_t i = 1; i < r.objective_trace.size(); ++i) {
        const double prev = r.objective_trace[i - 1];
        EXPECT_LE(r.objective_trace[i],
                  prev + 64.0 * std::numeric_limits<double>::epsilon() * std::abs(prev));
    }
    EXPECT_LT(r.objective_trace.back(), r.objective_trace.front());
}

TEST(TrainingTest, IterationCapReportsBestGradient) {
    Rng rng(1);
    const auto pool = oracle::random_pool(rng, 5, 20, 3);
    TrainOptions opt;
    opt.max_iters = 2;
    try {
        train_to_local_optimum(ModelSpec::tabular(5), pool, opt);
        FAIL();
    } catch (const ConvergenceError& e) {
        EXPECT_GT(e.best_grad_norm(), 0.0);
    }
}

TEST(TrainingTest, FineTuneOnEmptyPoolIsIdentity) {
    const auto m = ModelParams::random(ModelSpec::tabular(4), 2, 1.0);
    const auto out = fine_tune(m, std::vector<Example>{}, {});
    EXPECT_TRUE(out.theta() == m.theta());
}

class CorpusIoTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = std::filesystem::temp_directory_path() /
               ("prism_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
                ::testing::UnitTest::GetInstance()->current_test_info()->name());
        std::filesystem::create_directories(dir_);
    }
    void TearDown() override { std::filesystem::remove_all(dir_); }
    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    std::filesystem::path dir_;
};

TEST_F(CorpusIoTest, CheckpointRoundTripIsExact) {
    const auto m = ModelParams::random(ModelSpec::mlp(6, 2, 3, 4), 99, 1.3);
    write_checkpoint(path("m.json"), m);
    const auto back = read_checkpoint(path("m.json"));
    EXPECT_TRUE(back.spec() == m.spec());
    EXPECT_TRUE(back.theta() == m.theta());
}

TEST_F(CorpusIoTest, CorpusRoundTrip) {
    Rng rng(4);
    const auto pool = oracle::random_pool(rng, 5, 7, 3);
    write_examples(path("pool.jsonl"), pool);
    const auto back = read_examples(path("pool.jsonl"));
    ASSERT_EQ(back.size(), pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
        EXPECT_EQ(back[i].id, pool[i].id);
        EXPECT_EQ(back[i].query, pool[i].query);
        EXPECT_EQ(back[i].response, pool[i].response);
    }
    const auto targets = oracle::random_targets(rng, 5, 3, 3);
    write_targets(path("t.jsonl"), targets);
    const auto tb = read_targets(path("t.jsonl"));
    ASSERT_EQ(tb.size(), 3u);
    EXPECT_EQ(tb[2].negative, targets[2].negative);
}

TEST_F(CorpusIoTest, MissingFileIsValidationError) {
    EXPECT_THROW(read_examples(path("absent.jsonl")), ValidationError);
}

TEST(CorpusValidationTest, RejectsSparseIdsAndEmptyResponses) {
    EXPECT_THROW(validate_pool({{0, {}, {1}}, {2, {}, {1}}}), ValidationError);
    EXPECT_THROW(validate_pool({{0, {1}, {}}}), ValidationError);
    EXPECT_NO_THROW(validate_pool({{0, {}, {1}}, {1, {0}, {1, 2}}}));
}

}  // namespace
}  // namespace prism
