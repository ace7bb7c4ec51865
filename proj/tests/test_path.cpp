#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "qmme/model.hpp"
#include "qmme/path.hpp"

using namespace qmme;

namespace {

struct Fixture {
    ModelSpec spec;
    SimData data;
    TrainingData train;
};

Fixture make_fixture(Family family, int q = 3, Index n = 200, Index m = 16) {
    Fixture f;
    f.spec.family = family;
    f.spec.multinomial = {q, Parameterization::Standard};
    f.spec.delta = ModelSpec::default_delta(family);
    SimSpec sim;
    sim.n = n;
    sim.d = 10;
    sim.family = family;
    sim.q = q;
    sim.seed = 99;
    f.data = simulate(sim);
    auto rows = make_sketch(n, std::nullopt, SketchSpec{m, SketchStrategy::UniformRows, 5});
    f.train = make_training_data(f.spec, f.data.A, f.data.response, f.data.labels, KernelSpec{5.0}, rows);
    return f;
}

}  // namespace

TEST(Grid, EndpointsExactAndLogSpaced) {
    PathConfig cfg;
    const auto grid = lambda_grid(cfg);
    ASSERT_EQ(grid.size(), 30u);
    EXPECT_EQ(grid.front(), 10.0);
    EXPECT_EQ(grid.back(), 1e-5);
    const double ratio = grid[1] / grid[0];
    for (std::size_t j = 1; j < grid.size(); ++j) {
        EXPECT_LT(grid[j], grid[j - 1]);
        EXPECT_NEAR(grid[j] / grid[j - 1], ratio, 1e-12);
    }
    EXPECT_NEAR(ratio, std::pow(10.0, -6.0 / 29.0), 1e-14);
}

TEST(Grid, Validation) {
    PathConfig cfg;
    cfg.n_lambdas = 1;
    EXPECT_THROW(lambda_grid(cfg), Error);
    cfg = {};
    cfg.lambda_min = 20.0;
    EXPECT_THROW(lambda_grid(cfg), Error);
    cfg = {};
    cfg.lambda_min = 0.0;
    EXPECT_THROW(lambda_grid(cfg), Error);
}

TEST(Metrics, LogLikelihoodOfUniformPrediction) {
    const Matrix p = Matrix::Constant(2, 3, 1.0 / 3.0);
    const std::vector<int> labels = {0, 2};
    EXPECT_NEAR(log_likelihood(p, labels), 2.0 * std::log(1.0 / 3.0), 1e-15);
    EXPECT_THROW(log_likelihood(p, std::vector<int>{0}), Error);
    EXPECT_THROW(log_likelihood(p, std::vector<int>{0, 3}), Error);
}

TEST(Metrics, MadAndAccuracy) {
    EXPECT_DOUBLE_EQ(mean_absolute_deviation(Vector{{1.0, 2.0, 3.0}}, Vector{{0.0, 2.0, 5.0}}), 1.0);
    EXPECT_THROW(mean_absolute_deviation(Vector{{1.0}}, Vector{{1.0, 2.0}}), Error);
    Matrix p(3, 2);
    p << 0.9, 0.1, 0.2, 0.8, 0.6, 0.4;
    EXPECT_DOUBLE_EQ(accuracy(p, std::vector<int>{0, 1, 1}), 2.0 / 3.0);
    const Matrix lp = logistic_probabilities(Vector{{0.0, 30.0}});
    EXPECT_DOUBLE_EQ(lp(0, 0), 0.5);
    EXPECT_NEAR(lp(1, 1), 1.0, 1e-12);
    EXPECT_FALSE(higher_is_better(MetricKind::MAD));
    EXPECT_TRUE(higher_is_better(MetricKind::LogLik));
}

TEST(Solvers, NamesRoundTrip) {
    for (Solver s : {Solver::QMME, Solver::Newton, Solver::FISTA, Solver::AdaGD}) {
        EXPECT_EQ(parse_solver(to_string(s)), s);
    }
    EXPECT_THROW(parse_solver("lbfgs"), Error);
}

TEST(RunPath, ErrorsAreRecordedAndPathContinues) {
    PathConfig cfg;
    cfg.n_lambdas = 4;
    int calls = 0;
    auto solve = [&](double lambda, const Vector& warm) {
        ++calls;
        if (calls == 2) throw Error(ErrorCode::LineSearchFailed, "boom");
        SolverResult<Vector> r;
        r.solution = warm + Vector::Constant(1, lambda);
        r.termination = Termination::Tolerance;
        return r;
    };
    auto metric = [](const Vector& x) { return -x(0); };
    const auto path = run_path(cfg, MetricKind::LogLik, Vector(Vector::Zero(1)), solve, metric);
    ASSERT_EQ(path.entries.size(), 4u);
    EXPECT_FALSE(path.entries[1].ok());
    EXPECT_NE(path.entries[1].error.find("LineSearchFailed"), std::string::npos);
    // warm start after the failure comes from the last good entry
    EXPECT_DOUBLE_EQ(path.entries[2].solution(0), path.entries[0].solution(0) + path.entries[2].lambda);
    EXPECT_EQ(path.best_index, 0u);
}

TEST(FitPath, WarmStartsMatchColdStarts) {
    for (Family family : {Family::Quantile, Family::Logistic, Family::Multinomial}) {
        const auto fx = make_fixture(family);
        PathConfig cfg;
        cfg.n_lambdas = 6;
        cfg.lambda_min = 1e-2;
        SolveSettings settings;
        settings.qmme.grad_tol = 1e-7;
        settings.qmme.max_iters = 20000;
        const auto path = fit_path(fx.spec, fx.train, cfg, settings, default_metric(family), nullptr);
        for (const auto& e : path.entries) {
            ASSERT_TRUE(e.ok()) << e.error;
            const auto cold = solve_instance(fx.spec, fx.train, e.lambda, Solver::QMME,
                                             Matrix::Zero(fx.train.blocks->m(), fx.spec.width()), settings);
            EXPECT_NEAR(e.objective, cold.objective, 1e-8 * (1.0 + std::abs(cold.objective)))
                << to_string(family) << " lambda " << e.lambda;
        }
    }
}

TEST(FitPath, MultinomialPathFactorsOnce) {
    const auto fx = make_fixture(Family::Multinomial, 4);
    PathConfig cfg;
    cfg.n_lambdas = 8;
    factorization_counters().reset();
    const auto path = fit_path(fx.spec, fx.train, cfg, SolveSettings{}, MetricKind::LogLik, nullptr);
    EXPECT_EQ(path.entries.size(), 8u);
    EXPECT_EQ(factorization_counters().cholesky, 1);
    EXPECT_EQ(factorization_counters().schur, 1);
    EXPECT_EQ(factorization_counters().spectral, 1);
}

TEST(FitPath, ObserverSeesEverySolve) {
    const auto fx = make_fixture(Family::Logistic);
    PathConfig cfg;
    cfg.n_lambdas = 5;
    std::vector<double> seen;
    const auto path = fit_path(fx.spec, fx.train, cfg, SolveSettings{}, MetricKind::LogLik, nullptr,
                               [&](double lambda, const SolverResult<Matrix>&) { seen.push_back(lambda); });
    ASSERT_EQ(seen.size(), 5u);
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(seen[j], path.entries[j].lambda);
}

TEST(FitPath, ValidationMetricPicksBestLambda) {
    const auto fx = make_fixture(Family::Quantile);
    SimSpec sim;
    sim.n = 50;
    sim.d = 10;
    sim.seed = 1234;
    const SimData val = simulate(sim);
    const auto vd = make_validation_data(fx.data.A, fx.train, val.A, KernelSpec{5.0}, val.eta.col(0), {});
    PathConfig cfg;
    cfg.n_lambdas = 5;
    const auto path = fit_path(fx.spec, fx.train, cfg, SolveSettings{}, MetricKind::MAD, &vd);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& e : path.entries) best = std::min(best, e.metric);
    EXPECT_EQ(path.best_metric, best);
    EXPECT_EQ(path.entries[path.best_index].lambda, path.best_lambda);
}

TEST(SolveInstance, AllSolversReachSameObjective) {
    for (Family family : {Family::Logistic, Family::Multinomial}) {
        const auto fx = make_fixture(family, 3, 150, 10);
        SolveSettings settings;
        settings.qmme.grad_tol = 1e-6;
        settings.baseline.grad_tol = 1e-5;  // plain first-order methods crawl on this conditioning
        settings.qmme.max_iters = settings.baseline.max_iters = 100000;
        const Matrix x0 = Matrix::Zero(10, fx.spec.width());
        const double ref = solve_instance(fx.spec, fx.train, 0.5, Solver::Newton, x0, settings).objective;
        for (Solver s : {Solver::QMME, Solver::FISTA, Solver::AdaGD}) {
            const auto r = solve_instance(fx.spec, fx.train, 0.5, s, x0, settings);
            EXPECT_TRUE(r.converged()) << to_string(s);
            EXPECT_NEAR(r.objective, ref, 1e-9 * (1.0 + std::abs(ref))) << to_string(family) << " " << to_string(s);
        }
    }
}

TEST(SolveInstance, ShapeChecked) {
    const auto fx = make_fixture(Family::Multinomial);
    EXPECT_THROW(solve_instance(fx.spec, fx.train, 1.0, Solver::QMME, Matrix::Zero(16, 3), SolveSettings{}), Error);
}
