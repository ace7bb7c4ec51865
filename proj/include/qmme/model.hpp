#pragma once

#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qmme/baselines.hpp"
#include "qmme/datagen.hpp"
#include "qmme/error.hpp"
#include "qmme/kernel.hpp"
#include "qmme/linalg.hpp"
#include "qmme/losses.hpp"
#include "qmme/path.hpp"
#include "qmme/qmme.hpp"
#include "qmme/sylvester.hpp"

namespace qmme {

/// Loss family plus its parameters. Coefficients are always carried as an
/// m x width matrix; width is 1 for the scalar families.
struct ModelSpec {
    Family family = Family::Quantile;
    SmoothedQuantileLoss quantile{};
    MultinomialSpec multinomial{};
    double delta = 1e-9;

    static double default_delta(Family f) { return f == Family::Multinomial ? 1e-4 : 1e-9; }

    Index width() const { return family == Family::Multinomial ? multinomial.width() : 1; }

    void validate() const {
        if (family == Family::Quantile) quantile.validate();
        if (family == Family::Multinomial) multinomial.validate();
        if (!(delta >= 0.0)) throw Error(ErrorCode::InvalidConfig, "delta must be non-negative");
    }
};

/// Training side of a sketched problem. `labels` (0-based) is used by the
/// logistic and multinomial families, `response` by the quantile family.
struct TrainingData {
    std::shared_ptr<const SketchedBlocks> blocks;
    Vector response;
    std::vector<int> labels;
    std::vector<Index> sketch_rows;
};

/// Labels from a 0/1 response vector.
inline std::vector<int> binary_labels(const Vector& response) {
    std::vector<int> out(static_cast<std::size_t>(response.size()));
    for (Index i = 0; i < response.size(); ++i) {
        if (response(i) != 0.0 && response(i) != 1.0) {
            throw Error(ErrorCode::InvalidArgument, "logistic response must be 0 or 1");
        }
        out[static_cast<std::size_t>(i)] = response(i) == 1.0 ? 1 : 0;
    }
    return out;
}

/// Kernel blocks for training rows `a` with sketch rows `rows`, streaming
/// K G^T directly from the data.
inline TrainingData make_training_data(const ModelSpec& spec, const Matrix& a, Vector response,
                                       std::vector<int> labels, const KernelSpec& kernel,
                                       std::vector<Index> rows) {
    spec.validate();
    TrainingData out;
    out.blocks = std::make_shared<const SketchedBlocks>(
        assemble_blocks_from_columns(kernel_columns(a, rows, kernel), rows, spec.delta));
    if (spec.family == Family::Logistic && labels.empty()) labels = binary_labels(response);
    out.response = std::move(response);
    out.labels = std::move(labels);
    out.sketch_rows = std::move(rows);
    return out;
}

struct SolveSettings {
    QmmeConfig qmme{};
    BaselineConfig baseline{};
};

namespace detail {

inline SolverResult<Matrix> as_matrix_result(SolverResult<Vector> r) {
    SolverResult<Matrix> out;
    out.solution = std::move(r.solution);  // m x 1
    out.objective = r.objective;
    out.grad_norm = r.grad_norm;
    out.iterations = r.iterations;
    out.termination = r.termination;
    out.wall_time_s = r.wall_time_s;
    out.trajectory = std::move(r.trajectory);
    return out;
}

template <class Problem, class Point, class CurvatureFactory, class ApplyH>
SolverResult<Point> dispatch(const Problem& problem, Point x0, Solver solver, const SolveSettings& settings,
                             CurvatureFactory&& make_curvature, ApplyH&& apply_h) {
    switch (solver) {
        case Solver::QMME: {
            const auto curvature = make_curvature();
            return qmme_run(Majorized(problem, curvature), std::move(x0), settings.qmme);
        }
        case Solver::Newton: return newton_run(problem, std::move(x0), settings.baseline);
        case Solver::FISTA: {
            const double lip = lipschitz_constant(apply_h, x0);
            return fista_run(problem, std::move(x0), lip, settings.baseline);
        }
        case Solver::AdaGD: return adagd_run(problem, std::move(x0), settings.baseline);
    }
    throw Error(ErrorCode::InvalidConfig, "unknown solver");
}

}  // namespace detail

/**
 * Solve one (lambda, solver) instance from `x0` (m x width). For the
 * multinomial family with QMME, `plan` is used when given and built
 * otherwise; it is never built for the other solvers.
 */
inline SolverResult<Matrix> solve_instance(const ModelSpec& spec, const TrainingData& data, double lambda,
                                           Solver solver, Matrix x0, const SolveSettings& settings,
                                           std::shared_ptr<const SylvesterPlan> plan = nullptr) {
    const auto& blocks = data.blocks;
    if (x0.rows() != blocks->m() || x0.cols() != spec.width()) {
        throw Error(ErrorCode::ShapeMismatch, "initial point has the wrong shape");
    }
    switch (spec.family) {
        case Family::Quantile:
        case Family::Logistic: {
            auto run = [&](const auto& problem) {
                auto curvature = [&] { return curvature_bound(problem); };
                auto apply_h = [h = problem.curvature_matrix()](const Vector& v) -> Vector { return h * v; };
                return detail::as_matrix_result(
                    detail::dispatch(problem, Vector(x0.col(0)), solver, settings, curvature, apply_h));
            };
            if (spec.family == Family::Quantile) {
                return run(QuantileProblem(blocks, data.response, lambda, spec.quantile));
            }
            Vector b(static_cast<Index>(data.labels.size()));
            for (std::size_t i = 0; i < data.labels.size(); ++i) b(static_cast<Index>(i)) = data.labels[i];
            return run(LogisticProblem(blocks, std::move(b), lambda));
        }
        case Family::Multinomial: {
            const MultinomialProblem problem(blocks, data.labels, lambda, spec.multinomial);
            auto curvature = [&] {
                if (!plan) plan = make_multinomial_plan(*blocks, spec.multinomial);
                return curvature_bound(problem, plan);
            };
            const Matrix e = spec.multinomial.bound();
            auto apply_h = [&](const Matrix& v) -> Matrix {
                Matrix out = blocks->GK2Gt * v * e;
                out += lambda * (blocks->GKGt * v + blocks->delta * v);
                return out;
            };
            return detail::dispatch(problem, std::move(x0), solver, settings, curvature, apply_h);
        }
    }
    throw Error(ErrorCode::InvalidConfig, "unknown family");
}

/// Validation data for a fitted path: kernel rows against the sketch rows
/// of the training data plus the truth the metric needs.
struct ValidationData {
    Matrix kernel_rows;       // n_val x m
    Vector signal;            // true eta (quantile MAD)
    std::vector<int> labels;  // logistic / multinomial
};

inline ValidationData make_validation_data(const Matrix& train_a, const TrainingData& train,
                                           const Matrix& val_a, const KernelSpec& kernel, Vector signal,
                                           std::vector<int> labels) {
    ValidationData out;
    out.kernel_rows = cross_kernel(val_a, select_rows(train_a, train.sketch_rows), kernel);
    out.signal = std::move(signal);
    out.labels = std::move(labels);
    return out;
}

inline MetricKind default_metric(Family f) { return f == Family::Quantile ? MetricKind::MAD : MetricKind::LogLik; }

/// Class probabilities implied by coefficients x on new kernel rows.
inline Matrix predict_probabilities(const ModelSpec& spec, const Matrix& kernel_rows, const Matrix& x) {
    const Matrix eta = linear_predictor(kernel_rows, x);
    if (spec.family == Family::Logistic) return logistic_probabilities(eta.col(0));
    if (spec.family == Family::Multinomial) return MultinomialProblem::class_probabilities(eta, spec.multinomial);
    throw Error(ErrorCode::InvalidArgument, "quantile regression has no class probabilities");
}

inline double validation_metric(const ModelSpec& spec, MetricKind kind, const ValidationData& val,
                                const Matrix& x) {
    if (kind == MetricKind::MAD) {
        if (spec.family != Family::Quantile) {
            throw Error(ErrorCode::InvalidConfig, "MAD is defined for the quantile family only");
        }
        return mean_absolute_deviation(linear_predictor(val.kernel_rows, x).col(0), val.signal);
    }
    const Matrix probs = predict_probabilities(spec, val.kernel_rows, x);
    return kind == MetricKind::LogLik ? log_likelihood(probs, val.labels) : accuracy(probs, val.labels);
}

/// Called after every solve of a path with the lambda and the full result.
using PathObserver = std::function<void(double, const SolverResult<Matrix>&)>;

/**
 * Warm-started path over the lambda grid. With QMME on the multinomial
 * family a single SylvesterPlan is built during the first solve and reused
 * for every lambda; its construction time counts toward the path total.
 */
inline PathResult<Matrix> fit_path(const ModelSpec& spec, const TrainingData& data, const PathConfig& config,
                                   const SolveSettings& settings, MetricKind kind,
                                   const ValidationData* validation, const PathObserver& observer = {}) {
    config.validate();
    std::shared_ptr<const SylvesterPlan> plan;
    auto solve = [&](double lambda, const Matrix& warm) {
        if (spec.family == Family::Multinomial && config.solver == Solver::QMME && !plan) {
            plan = make_multinomial_plan(*data.blocks, spec.multinomial);
        }
        auto result = solve_instance(spec, data, lambda, config.solver, warm, settings, plan);
        if (observer) observer(lambda, result);
        return result;
    };
    auto metric = [&](const Matrix& x) {
        return validation ? validation_metric(spec, kind, *validation, x)
                          : std::numeric_limits<double>::quiet_NaN();
    };
    return run_path(config, kind, Matrix(Matrix::Zero(data.blocks->m(), spec.width())), solve, metric);
}

}  // namespace qmme
