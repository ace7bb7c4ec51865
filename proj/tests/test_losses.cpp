#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "qmme/kernel.hpp"
#include "qmme/losses.hpp"
#include "qmme/qmme.hpp"

using namespace qmme;

namespace {

struct Setup {
    Matrix k, g;
    std::shared_ptr<const SketchedBlocks> blocks;
    Vector response;
    std::vector<int> labels;
};

Setup make_setup(Index n, Index m, int q, std::uint64_t seed, double delta = 1e-4) {
    std::mt19937_64 gen(seed);
    Setup s;
    const Matrix a = oracle::random_matrix(n, 4, gen);
    s.k = oracle::rbf_loop(a, a, 2.0);
    std::vector<Index> rows(static_cast<std::size_t>(n));
    std::iota(rows.begin(), rows.end(), Index{0});
    std::shuffle(rows.begin(), rows.end(), gen);
    rows.resize(static_cast<std::size_t>(m));
    s.g = oracle::selector(rows, n);
    s.blocks = std::make_shared<const SketchedBlocks>(assemble_blocks(s.k, rows, delta));
    s.response = oracle::random_matrix(n, 1, gen).col(0);
    std::uniform_int_distribution<int> cls(0, q - 1);
    for (Index i = 0; i < n; ++i) s.labels.push_back(cls(gen));
    return s;
}

Vector binary(const std::vector<int>& labels) {
    Vector b(static_cast<Index>(labels.size()));
    for (std::size_t i = 0; i < labels.size(); ++i) b(static_cast<Index>(i)) = labels[i] > 0 ? 1.0 : 0.0;
    return b;
}

}  // namespace

TEST(SmoothedQuantile, CurvatureConstant) {
    EXPECT_NEAR((SmoothedQuantileLoss{0.5, 0.25}.curvature()), 1.59577, 1e-5);
}

TEST(SmoothedQuantile, MatchesReferenceAndDerivatives) {
    for (double tau : {0.1, 0.5, 0.9}) {
        const SmoothedQuantileLoss loss{tau, 0.3};
        for (double u = -2.0; u <= 2.0; u += 0.25) {
            EXPECT_NEAR(loss.value(u), oracle::smoothed_check(u, tau, 0.3), 1e-14);
            const double eps = 1e-6;
            const auto d = loss.derivs(u);
            EXPECT_NEAR(d.first, (loss.value(u + eps) - loss.value(u - eps)) / (2 * eps), 1e-8);
            EXPECT_NEAR(d.second, (loss.derivs(u + eps).first - loss.derivs(u - eps).first) / (2 * eps), 1e-7);
            EXPECT_LE(d.second, loss.curvature() + 1e-15);
        }
    }
}

TEST(SmoothedQuantile, ApproachesCheckLossForSmallBandwidth) {
    const SmoothedQuantileLoss loss{0.3, 1e-6};
    for (double u : {-1.5, -0.2, 0.4, 2.0}) EXPECT_NEAR(loss.value(u), u * (0.3 - (u < 0 ? 1.0 : 0.0)), 1e-6);
}

TEST(SmoothedQuantile, Validation) {
    EXPECT_THROW((SmoothedQuantileLoss{0.0, 0.25}.validate()), Error);
    EXPECT_THROW((SmoothedQuantileLoss{1.0, 0.25}.validate()), Error);
    EXPECT_THROW((SmoothedQuantileLoss{0.5, 0.0}.validate()), Error);
}

TEST(Logistic, ValueAtZeroIsNLogTwo) {
    const auto s = make_setup(30, 6, 2, 30);
    const LogisticProblem p(s.blocks, binary(s.labels), 0.1);
    EXPECT_NEAR(p.value(p.zero_point()), 30.0 * std::log(2.0), 1e-12);
}

TEST(Logistic, StableForLargeLogits) {
    EXPECT_NEAR(softplus(800.0), 800.0, 1e-12);
    EXPECT_NEAR(softplus(-800.0), 0.0, 1e-300);
    EXPECT_EQ(sigmoid(-800.0), 0.0);
    EXPECT_EQ(sigmoid(800.0), 1.0);
}

TEST(Glm, ObjectivesMatchReference) {
    const auto s = make_setup(40, 7, 2, 31);
    std::mt19937_64 gen(1);
    const Vector x = oracle::random_matrix(7, 1, gen, 0.5).col(0);
    const QuantileProblem qp(s.blocks, s.response, 0.2, SmoothedQuantileLoss{0.3, 0.4});
    EXPECT_NEAR(qp.value(x), oracle::quantile_objective(s.k, s.g, s.response, 0.2, 0.3, 0.4, x), 1e-11);
    const Vector b = binary(s.labels);
    const LogisticProblem lp(s.blocks, b, 0.2);
    EXPECT_NEAR(lp.value(x), oracle::logistic_objective(s.k, s.g, b, 0.2, x), 1e-11);
}

TEST(Glm, GradientAndHessianMatchFiniteDifferences) {
    const auto s = make_setup(40, 7, 2, 32);
    std::mt19937_64 gen(2);
    const Vector x = oracle::random_matrix(7, 1, gen, 0.5).col(0);
    const QuantileProblem qp(s.blocks, s.response, 0.05);
    const LogisticProblem lp(s.blocks, binary(s.labels), 0.05);
    auto check = [&](const auto& p) {
        const Vector g_fd = oracle::fd_gradient([&](const Vector& v) { return p.value(v); }, x);
        EXPECT_LT(oracle::rel(p.gradient(x), g_fd), 1e-6);
        const Matrix h_fd = oracle::fd_jacobian([&](const Vector& v) { return Vector(p.gradient(v)); }, x);
        EXPECT_LT(oracle::rel(p.exact_hessian(x), h_fd), 1e-6);
        const auto [f, g] = p.value_and_gradient(x);
        EXPECT_DOUBLE_EQ(f, p.value(x));
        EXPECT_LT((g - p.gradient(x)).norm(), 1e-14);
    };
    check(qp);
    check(lp);
}

TEST(Glm, CurvatureMatrixFormulaAndMajorization) {
    const auto s = make_setup(50, 8, 2, 33, 1e-9);
    const QuantileProblem qp(s.blocks, s.response, 0.01, SmoothedQuantileLoss{0.5, 0.25});
    const Matrix gkg = s.g * s.k * s.g.transpose();
    const Matrix gk2g = s.g * s.k * s.k * s.g.transpose();
    Matrix expected = gk2g / (std::sqrt(2.0 * M_PI) * 0.25) + 0.01 * gkg;
    expected.diagonal().array() += 1e-9;
    EXPECT_LT(oracle::rel(qp.curvature_matrix(), expected), 1e-12);

    const LogisticProblem lp(s.blocks, binary(s.labels), 0.01);
    Matrix expected_l = 0.25 * gk2g + 0.01 * gkg;
    expected_l.diagonal().array() += 1e-9;
    EXPECT_LT(oracle::rel(lp.curvature_matrix(), expected_l), 1e-12);

    for (int seed = 0; seed < 3; ++seed) {
        const auto qc = curvature_bound(qp);
        EXPECT_LE(check_majorization(Majorized(qp, qc), qp.zero_point(), 100, 3.0, seed).max_violation, 1e-8);
        const auto lc = curvature_bound(lp);
        EXPECT_LE(check_majorization(Majorized(lp, lc), lp.zero_point(), 100, 3.0, seed).max_violation, 1e-8);
    }
}

TEST(Glm, ConstructorValidation) {
    const auto s = make_setup(10, 3, 2, 34);
    EXPECT_THROW(QuantileProblem(s.blocks, Vector::Zero(9), 0.1), Error);
    EXPECT_THROW(QuantileProblem(s.blocks, s.response, -1.0), Error);
    EXPECT_THROW(QuantileProblem(nullptr, s.response, 0.1), Error);
    const QuantileProblem p(s.blocks, s.response, 0.1);
    EXPECT_THROW(p.value(Vector::Zero(4)), Error);
}

TEST(Multinomial, SpecWidthsAndBounds) {
    const MultinomialSpec standard{4, Parameterization::Standard};
    const MultinomialSpec full{4, Parameterization::Full};
    EXPECT_EQ(standard.width(), 3);
    EXPECT_EQ(full.width(), 4);
    EXPECT_LT((standard.bound() - oracle::bohning_factor(3, 4.0)).norm(), 1e-15);
    EXPECT_LT((full.bound() - oracle::bohning_factor(4, 5.0)).norm(), 1e-15);
    EXPECT_THROW((MultinomialSpec{1, Parameterization::Standard}.validate()), Error);
}

TEST(Multinomial, ObjectiveGradientHessianMatchReference) {
    for (auto param : {Parameterization::Standard, Parameterization::Full}) {
        const int q = 4;
        const auto s = make_setup(30, 4, q, 35);
        const MultinomialSpec spec{q, param};
        const MultinomialProblem p(s.blocks, s.labels, 0.1, spec);
        std::mt19937_64 gen(3);
        const Matrix x = oracle::random_matrix(4, spec.width(), gen, 0.5);
        const bool full = param == Parameterization::Full;
        EXPECT_NEAR(p.value(x), oracle::multinomial_objective(s.k, s.g, s.labels, 0.1, full, x), 1e-11);
        const Index w = spec.width();
        const Vector g_fd = oracle::fd_gradient(
            [&](const Vector& v) { return oracle::multinomial_objective(s.k, s.g, s.labels, 0.1, full, oracle::unvec(v, 4, w)); },
            oracle::vec(x));
        EXPECT_LT(oracle::rel(oracle::vec(p.gradient(x)), g_fd), 1e-6);
        const Matrix h_fd = oracle::fd_jacobian(
            [&](const Vector& v) { return oracle::vec(p.gradient(oracle::unvec(v, 4, w))); }, oracle::vec(x));
        EXPECT_LT(oracle::rel(p.exact_hessian(x), h_fd), 1e-6);
    }
}

TEST(Multinomial, ValueAtZeroIsNLogQ) {
    for (auto param : {Parameterization::Standard, Parameterization::Full}) {
        const auto s = make_setup(25, 5, 3, 36);
        const MultinomialProblem p(s.blocks, s.labels, 1.0, {3, param});
        EXPECT_NEAR(p.value(p.zero_point()), 25.0 * std::log(3.0), 1e-12);
    }
}

TEST(Multinomial, FullModelShiftInvariantWithoutPenalty) {
    const auto s = make_setup(30, 5, 3, 37);
    const MultinomialProblem p(s.blocks, s.labels, 0.0, {3, Parameterization::Full});
    std::mt19937_64 gen(4);
    const Matrix x = oracle::random_matrix(5, 3, gen, 0.5);
    const Vector v = oracle::random_matrix(5, 1, gen).col(0);
    const Matrix shifted = x + v * Eigen::RowVectorXd::Ones(3);
    EXPECT_NEAR(p.value(shifted), p.value(x), 1e-10 * (1.0 + std::abs(p.value(x))));
}

TEST(Multinomial, ProbabilitiesStableAndNormalized) {
    Matrix eta(3, 2);
    eta << 800.0, -800.0, 0.0, 0.0, -900.0, -900.0;
    const Matrix p = MultinomialProblem::class_probabilities(eta, {3, Parameterization::Standard});
    EXPECT_TRUE(p.allFinite());
    for (Index i = 0; i < 3; ++i) EXPECT_NEAR(p.row(i).sum(), 1.0, 1e-15);
    EXPECT_NEAR(p(0, 0), 1.0, 1e-15);
    EXPECT_NEAR(p(1, 2), 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(p(2, 2), 1.0, 1e-15);
}

TEST(Multinomial, LabelValidation) {
    const auto s = make_setup(10, 3, 3, 38);
    std::vector<int> bad = s.labels;
    bad[0] = 3;
    EXPECT_THROW(MultinomialProblem(s.blocks, bad, 0.1, {3, Parameterization::Standard}), Error);
    EXPECT_THROW(MultinomialProblem(s.blocks, std::vector<int>(9, 0), 0.1, {3, Parameterization::Standard}), Error);
}

TEST(Multinomial, CurvatureApplySolveAndDenseAgree) {
    for (auto param : {Parameterization::Standard, Parameterization::Full}) {
        const auto s = make_setup(40, 6, 4, 39);
        const MultinomialSpec spec{4, param};
        const MultinomialProblem p(s.blocks, s.labels, 0.3, spec);
        const auto curv = curvature_bound(p);
        const Index w = spec.width();
        Matrix h = oracle::kron(spec.bound(), s.g * s.k * s.k * s.g.transpose()) +
                   0.3 * oracle::kron(Matrix::Identity(w, w), s.g * s.k * s.g.transpose());
        h.diagonal().array() += 0.3 * 1e-4;
        EXPECT_LT(oracle::rel(dense_curvature_matrix(p), h), 1e-12);
        std::mt19937_64 gen(5);
        const Matrix v = oracle::random_matrix(6, w, gen);
        EXPECT_LT(oracle::rel(oracle::vec(curv.apply(v)), h * oracle::vec(v)), 1e-12);
        EXPECT_LT(oracle::rel(curv.apply(curv.solve(v)), v), 1e-8);
        EXPECT_NEAR(curv.norm_sq(v), oracle::vec(v).dot(h * oracle::vec(v)), 1e-10 * curv.norm_sq(v));
        EXPECT_LE(check_majorization(Majorized(p, curv), p.zero_point(), 100, 3.0, 7).max_violation, 1e-8);
    }
}

TEST(Bohning, HoldsAtVerticesAndCenter) {
    for (int q = 2; q <= 10; ++q) {
        EXPECT_GE(bohning_bound_check(Vector::Constant(q, 1.0 / q)), -1e-12);
        Vector e = Vector::Zero(q);
        e(q - 1) = 1.0;
        EXPECT_GE(bohning_bound_check(e), -1e-12);
    }
}

TEST(Bohning, RejectsNonSimplexPoints) {
    Vector p(3);
    p << 0.5, 0.6, -0.1;
    try {
        bohning_bound_check(p);
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NotASimplexPoint);
    }
    p << 0.2, 0.2, 0.2;
    EXPECT_THROW(bohning_bound_check(p), Error);
}

namespace {

// Forwards only the generic MajorantProblem members, so qmme_run takes the
// path that evaluates every gradient from scratch.
template <class P>
struct GenericOnly {
    using point_type = typename P::point_type;
    const P* p;
    double value(const point_type& x) const { return p->value(x); }
    point_type gradient(const point_type& x) const { return p->gradient(x); }
    std::pair<double, point_type> value_and_gradient(const point_type& x) const { return p->value_and_gradient(x); }
    point_type majorant_solve(const point_type& g) const { return p->majorant_solve(g); }
    double h_norm_sq(const point_type& v) const { return p->h_norm_sq(v); }
};

template <class P>
void expect_fused_matches(const P& p, const typename P::point_type& x1, const typename P::point_type& x2) {
    const auto e1 = p.predictor(x1), e2 = p.predictor(x2);
    EXPECT_NEAR(p.value_from(x1, e1), p.value(x1), 1e-12 * (1.0 + std::abs(p.value(x1))));
    const auto [g1, g2] = p.gradients_from(x1, e1, x2, e2);
    EXPECT_LT(oracle::rel(g1, p.gradient(x1)), 1e-13);
    EXPECT_LT(oracle::rel(g2, p.gradient(x2)), 1e-13);
}

template <class M>
void expect_same_iterates(const M& majorized, const typename M::point_type& x0) {
    static_assert(LinearPredictorProblem<M>);
    static_assert(!LinearPredictorProblem<GenericOnly<M>>);
    QmmeConfig cfg;
    cfg.grad_tol = 1e-7;
    const auto fast = qmme_run(majorized, x0, cfg);
    const auto plain = qmme_run(GenericOnly<M>{&majorized}, x0, cfg);
    ASSERT_TRUE(fast.converged());
    ASSERT_TRUE(plain.converged());
    EXPECT_EQ(fast.iterations, plain.iterations);
    EXPECT_LT(oracle::rel(fast.solution, plain.solution), 1e-9);
    const std::size_t common = std::min(fast.trajectory.size(), plain.trajectory.size());
    for (std::size_t k = 0; k < common; ++k) {
        EXPECT_NEAR(fast.trajectory[k].f, plain.trajectory[k].f, 1e-11 * (1.0 + std::abs(plain.trajectory[k].f)));
        // a descent break on a rounding-level tie can go either way
        const double prev = k == 0 ? plain.trajectory[k].f : plain.trajectory[k - 1].f;
        if (std::abs(plain.trajectory[k].f - prev) > 1e-10 * (1.0 + std::abs(prev))) {
            EXPECT_EQ(fast.trajectory[k].restarted, plain.trajectory[k].restarted);
        }
    }
}

}  // namespace

TEST(Predictor, FusedGradientsMatchDirect) {
    const auto s = make_setup(50, 8, 3, 61);
    std::mt19937_64 gen(62);
    const Vector u = oracle::random_matrix(8, 1, gen).col(0), v = oracle::random_matrix(8, 1, gen).col(0);
    expect_fused_matches(LogisticProblem(s.blocks, binary(s.labels), 0.2), u, v);
    expect_fused_matches(QuantileProblem(s.blocks, s.response, 0.2, {0.3, 0.25}), u, v);
    for (auto param : {Parameterization::Standard, Parameterization::Full}) {
        const MultinomialProblem p(s.blocks, s.labels, 0.2, {3, param});
        expect_fused_matches(p, oracle::random_matrix(8, p.width(), gen), oracle::random_matrix(8, p.width(), gen));
    }
}

TEST(Predictor, QmmeIteratesMatchGenericEngine) {
    const auto s = make_setup(60, 10, 3, 63);
    const LogisticProblem logistic(s.blocks, binary(s.labels), 0.05);
    const auto dense = curvature_bound(logistic);
    expect_same_iterates(Majorized(logistic, dense), logistic.zero_point());
    for (auto param : {Parameterization::Standard, Parameterization::Full}) {
        const MultinomialProblem p(s.blocks, s.labels, 0.05, {3, param});
        const auto curv = curvature_bound(p);
        expect_same_iterates(Majorized(p, curv), p.zero_point());
    }
}
