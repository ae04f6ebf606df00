#include <cmath>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "prism/curvature.hpp"
#include "prism/training.hpp"

namespace prism {
namespace {

double rel_err(const Vector& got, const Vector& want) { return (got - want).norm() / want.norm(); }

TEST(CurvatureTest, UniformTwoTokenBlock) {
    const auto m = ModelParams::zeros(ModelSpec::tabular(2));
    const std::vector<Example> pool{{0, {0}, {1}}};
    const auto h = fit_exact_hessian(m, pool, Damping{}, 0.0);
    const Matrix& p = h.payload();
    EXPECT_NEAR(p(0, 0), 0.25, 1e-16);
    EXPECT_NEAR(p(0, 1), -0.25, 1e-16);
    EXPECT_NEAR(p(1, 0), -0.25, 1e-16);
    EXPECT_NEAR(p(1, 1), 0.25, 1e-16);
    EXPECT_EQ(p.bottomRightCorner(2, 2).cwiseAbs().maxCoeff(), 0.0);
}

TEST(CurvatureTest, UniformBlockForLargerVocab) {
    const int V = 5;
    const auto m = ModelParams::zeros(ModelSpec::tabular(V));
    const auto h = fit_exact_hessian(m, std::vector<Example>{{0, {2}, {3}}}, Damping{}, 0.0);
    const Matrix want = Matrix::Identity(V, V) / V - Matrix::Constant(V, V, 1.0 / (V * V));
    EXPECT_LE((h.payload().block(2 * V, 2 * V, V, V) - want).cwiseAbs().maxCoeff(), 1e-16);
}

TEST(CurvatureTest, UnvisitedRowsCarryOnlyRidge) {
    const int V = 4;
    const double rho = 0.3;
    const auto m = ModelParams::random(ModelSpec::tabular(V), 3, 1.0);
    const std::vector<Example> pool{{0, {1}, {2}}, {1, {2}, {1}}};
    const auto op = fit_exact_hessian(m, pool, Damping{}, rho);
    const Matrix& p = op.payload();
    for (int row : {0, 3}) {
        for (int r = 0; r < V * V; ++r) {
            for (int c = row * V; c < (row + 1) * V; ++c) {
                EXPECT_EQ(p(r, c), r == c ? 2.0 * rho : 0.0);
                EXPECT_EQ(p(c, r), r == c ? 2.0 * rho : 0.0);
            }
        }
    }
}

TEST(CurvatureTest, ExactHessianMatchesFiniteDifferenceOfGradient) {
    Rng rng(21);
    const auto m = ModelParams::random(ModelSpec::tabular(2), 4, 1.0);
    const auto pool = oracle::random_pool(rng, 2, 6, 3);
    const double rho = 0.05;
    const auto op = fit_exact_hessian(m, pool, Damping{}, rho);
    const Matrix& p = op.payload();
    const double h = 1e-5;
    for (Eigen::Index j = 0; j < 4; ++j) {
        Vector a = m.theta();
        Vector b = m.theta();
        a[j] += h;
        b[j] -= h;
        Vector ga;
        Vector gb;
        training_objective(ModelParams(m.spec(), a), pool, rho, {}, &ga);
        training_objective(ModelParams(m.spec(), b), pool, rho, {}, &gb);
        const Vector col = (ga - gb) / (2.0 * h);
        for (Eigen::Index i = 0; i < 4; ++i) {
            EXPECT_NEAR(p(i, j), col[i], 1e-4);
        }
    }
}

TEST(CurvatureTest, ExactHessianRejectsMlp) {
    const auto m = ModelParams::random(ModelSpec::mlp(4, 1, 2, 2), 1, 0.5);
    EXPECT_THROW(fit_exact_hessian(m, std::vector<Example>{{0, {1}, {2}}}, Damping{}, 0.0), UnsupportedError);
}

TEST(CurvatureTest, FisherOfSingleExampleIsRankOne) {
    const auto m = ModelParams::random(ModelSpec::mlp(5, 2, 2, 3), 8, 0.5);
    const Example z{0, {1, 2}, {3, 0}};
    const Vector g = sft_loss_and_grad(m, z).grad;
    const auto f = fit_empirical_fisher(m, std::vector<Example>{z}, Damping{});
    EXPECT_LE((f.payload() - g * g.transpose()).cwiseAbs().maxCoeff(), 1e-15 * g.squaredNorm());
}

TEST(CurvatureTest, FisherIsPsdWithIndependentTrace) {
    Rng rng(5);
    const auto m = ModelParams::random(ModelSpec::tabular(5), 6, 1.0);
    const auto pool = oracle::random_pool(rng, 5, 12, 3);
    const auto f = fit_empirical_fisher(m, pool, Damping{});
    const Eigen::SelfAdjointEigenSolver<Matrix> es(f.payload());
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10);
    long double tr = 0.0L;
    for (const auto& z : pool) {
        tr += sft_loss_and_grad(m, z).grad.squaredNorm();
    }
    tr /= pool.size();
    EXPECT_NEAR(f.payload().trace(), static_cast<double>(tr), 1e-12 * static_cast<double>(tr));
}

TEST(CurvatureTest, IdentityAndScaledIdentityPayloads) {
    Rng rng(1);
    Vector v(6);
    for (auto& x : v) {
        x = rng.normal();
    }
    const auto id = CurvatureOperator::from_dense(CurvatureKind::ExactDense, Matrix::Identity(6, 6), 0.0, "t");
    EXPECT_LE((id.inverse_apply(v) - v).lpNorm<Eigen::Infinity>(), 1e-15);
    const auto two = CurvatureOperator::from_dense(CurvatureKind::ExactDense, 2.0 * Matrix::Identity(6, 6), 0.0, "t");
    EXPECT_LE((two.inverse_apply(v) - v / 2.0).lpNorm<Eigen::Infinity>(), 1e-15);
}

TEST(CurvatureTest, DenseSolveReconstructsInput) {
    Rng rng(2);
    const auto m = ModelParams::random(ModelSpec::tabular(6), 3, 1.0);
    const auto pool = oracle::random_pool(rng, 6, 20, 3);
    for (const auto& op : {fit_exact_hessian(m, pool, Damping{}, 0.01), fit_empirical_fisher(m, pool, Damping{})}) {
        Vector v(static_cast<Eigen::Index>(m.size()));
        for (auto& x : v) {
            x = rng.normal();
        }
        const Vector x = op.inverse_apply(v);
        EXPECT_LE(rel_err(op.payload() * x + op.damping() * x, v), 1e-8);
        EXPECT_GT(v.dot(x), 0.0);
    }
}

TEST(CurvatureTest, InverseApplyIsLinear) {
    Rng rng(3);
    const auto m = ModelParams::random(ModelSpec::mlp(6, 2, 3, 4), 2, 0.5);
    const auto pool = oracle::random_pool(rng, 6, 30, 3);
    for (const auto& op : {fit_empirical_fisher(m, pool, Damping{}), fit_ekfac(m, pool, Damping{})}) {
        Vector u(static_cast<Eigen::Index>(m.size()));
        Vector v(u.size());
        for (Eigen::Index i = 0; i < u.size(); ++i) {
            u[i] = rng.normal();
            v[i] = rng.normal();
        }
        const Vector lhs = op.inverse_apply(1.7 * u - 0.4 * v);
        const Vector rhs = 1.7 * op.inverse_apply(u) - 0.4 * op.inverse_apply(v);
        EXPECT_LE(rel_err(lhs, rhs), 1e-8);
    }
}

TEST(CurvatureTest, ScalingOperatorScalesInverse) {
    Rng rng(4);
    const auto m = ModelParams::random(ModelSpec::tabular(5), 7, 1.0);
    const auto pool = oracle::random_pool(rng, 5, 15, 3);
    const auto op = fit_exact_hessian(m, pool, Damping{}, 0.02);
    Vector v(static_cast<Eigen::Index>(m.size()));
    for (auto& x : v) {
        x = rng.normal();
    }
    for (double alpha : {0.25, 3.0, 40.0}) {
        const auto s = op.scaled(alpha);
        EXPECT_DOUBLE_EQ(s.damping(), alpha * op.damping());
        EXPECT_LE(rel_err(s.inverse_apply(v), op.inverse_apply(v) / alpha), 1e-13);
    }
    EXPECT_THROW(op.scaled(0.0), ValidationError);
}

TEST(CurvatureTest, MismatchedLengthRejected) {
    const auto op = CurvatureOperator::from_dense(CurvatureKind::ExactDense, Matrix::Identity(4, 4), 0.0, "t");
    EXPECT_THROW(op.inverse_apply(Vector::Ones(3)), ValidationError);
}

TEST(CurvatureTest, IndefinitePayloadRejected) {
    Matrix p = Matrix::Identity(3, 3);
    p(2, 2) = -1.0;
    EXPECT_THROW(CurvatureOperator::from_dense(CurvatureKind::ExactDense, p, 0.5, "t"), NumericalError);
    Matrix asym = Matrix::Identity(3, 3);
    asym(0, 1) = 0.5;
    EXPECT_THROW(CurvatureOperator::from_dense(CurvatureKind::ExactDense, asym, 0.1, "t"), NumericalError);
    EXPECT_THROW(fit_exact_hessian(ModelParams::zeros(ModelSpec::tabular(2)), std::vector<Example>{{0, {0}, {1}}},
                                   Damping::absolute(0.0), 0.0),
                 ValidationError);
}

TEST(EkfacTest, SingleExampleSingleLayerIsExact) {
    Rng rng(9);
    const LayerBlock block{"w", 0, 3, 4};
    KroneckerSample s;
    s.output_grad = Vector(3);
    s.input = Vector(4);
    for (auto& x : s.output_grad) {
        x = rng.normal();
    }
    for (auto& x : s.input) {
        x = rng.normal();
    }
    const std::vector<LayerSamples> per_example{{{s}}};
    const double lambda = 0.05;
    const auto op = fit_ekfac_from_samples({block}, 12, per_example, Damping::absolute(lambda), "t");
    Vector g(12);
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 4; ++c) {
            g[r * 4 + c] = s.output_grad[r] * s.input[c];
        }
    }
    Matrix dense = g * g.transpose();
    EXPECT_LE((op.materialize() - dense).cwiseAbs().maxCoeff(), 1e-12 * dense.cwiseAbs().maxCoeff());
    dense.diagonal().array() += lambda;
    for (int k = 0; k < 5; ++k) {
        Vector v(12);
        for (auto& x : v) {
            x = rng.normal();
        }
        EXPECT_LE(rel_err(op.inverse_apply(v), dense.ldlt().solve(v)), 1e-8);
    }
}

TEST(EkfacTest, CorrectedEigenvaluesAreNonNegative) {
    Rng rng(10);
    for (int k = 0; k < 3; ++k) {
        const auto m = ModelParams::random(ModelSpec::mlp(6, 2, 3, 4), rng.next(), 0.5);
        const auto op = fit_ekfac(m, oracle::random_pool(rng, 6, 25, 3), Damping{});
        ASSERT_EQ(op.layers().size(), 3u);
        for (const auto& l : op.layers()) {
            EXPECT_GE(l.eigenvalues.minCoeff(), 0.0) << l.block.name;
        }
        EXPECT_GT(op.damping(), 0.0);
    }
}

TEST(EkfacTest, RankZeroLayerIsNamed) {
    const auto m = ModelParams::zeros(ModelSpec::mlp(4, 1, 2, 2));
    try {
        fit_ekfac(m, std::vector<Example>{{0, {1}, {2}}}, Damping{});
        FAIL();
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("layer"), std::string::npos);
    }
}

TEST(EkfacTest, PerExampleGradientsAreReconstructedFromSamples) {
    Rng rng(11);
    const auto m = ModelParams::random(ModelSpec::mlp(5, 2, 2, 3), 12, 0.7);
    const Example z{0, {1, 3}, {2, 4, 0}};
    const Vector g = sft_loss_and_grad(m, z).grad;
    const auto samples = capture_layer_samples(m, z);
    const auto blocks = layer_blocks(m.spec());
    Vector rebuilt = Vector::Zero(g.size());
    for (std::size_t l = 0; l < blocks.size(); ++l) {
        for (const auto& s : samples[l]) {
            for (int r = 0; r < blocks[l].rows; ++r) {
                for (int c = 0; c < blocks[l].cols; ++c) {
                    rebuilt[static_cast<Eigen::Index>(blocks[l].offset) + r * blocks[l].cols + c] +=
                        s.output_grad[r] * s.input[c];
                }
            }
        }
    }
    EXPECT_LE((rebuilt - g).lpNorm<Eigen::Infinity>(), 1e-13 * g.lpNorm<Eigen::Infinity>());
}

TEST(CurvatureTest, MetadataOmitsPayloadByDefault) {
    const auto op = fit_exact_hessian(ModelParams::zeros(ModelSpec::tabular(3)), std::vector<Example>{{0, {0}, {1}}},
                                      Damping{}, 0.1);
    const auto j = curvature_metadata(op);
    EXPECT_EQ(j["kind"], to_string(CurvatureKind::ExactDense));
    EXPECT_FALSE(j.contains("payload"));
    EXPECT_TRUE(curvature_metadata(op, true).contains("payload"));
    EXPECT_TRUE(j["eigenvalues"].contains("median"));
}

}  // namespace
}  // namespace prism
