#pragma once

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qmme/error.hpp"
#include "qmme/linalg.hpp"
#include "qmme/losses.hpp"
#include "qmme/qmme.hpp"

namespace qmme {

enum class Solver { QMME, Newton, FISTA, AdaGD };

inline const char* to_string(Solver s) {
    switch (s) {
        case Solver::QMME: return "qmme";
        case Solver::Newton: return "newton";
        case Solver::FISTA: return "fista";
        case Solver::AdaGD: return "adagd";
    }
    return "unknown";
}

inline Solver parse_solver(const std::string& name) {
    if (name == "qmme") return Solver::QMME;
    if (name == "newton") return Solver::Newton;
    if (name == "fista") return Solver::FISTA;
    if (name == "adagd") return Solver::AdaGD;
    throw Error(ErrorCode::InvalidConfig, "unknown solver '" + name + "'");
}

struct PathConfig {
    double lambda_max = 10.0;
    double lambda_min = 1e-5;
    int n_lambdas = 30;
    Solver solver = Solver::QMME;

    void validate() const {
        if (!(lambda_min > 0.0) || !(lambda_max > lambda_min)) {
            throw Error(ErrorCode::InvalidConfig, "need lambda_max > lambda_min > 0");
        }
        if (n_lambdas < 2) throw Error(ErrorCode::InvalidConfig, "n_lambdas must be >= 2");
    }
};

/// Log-linear grid from lambda_max down to lambda_min, endpoints exact.
inline std::vector<double> lambda_grid(const PathConfig& config) {
    config.validate();
    const double hi = std::log10(config.lambda_max), lo = std::log10(config.lambda_min);
    std::vector<double> grid(static_cast<std::size_t>(config.n_lambdas));
    const double last = static_cast<double>(config.n_lambdas - 1);
    for (int j = 0; j < config.n_lambdas; ++j) {
        grid[static_cast<std::size_t>(j)] = std::pow(10.0, hi - (hi - lo) * static_cast<double>(j) / last);
    }
    grid.front() = config.lambda_max;
    grid.back() = config.lambda_min;
    return grid;
}

enum class MetricKind { MAD, LogLik, Accuracy };

inline const char* to_string(MetricKind k) {
    switch (k) {
        case MetricKind::MAD: return "mad";
        case MetricKind::LogLik: return "loglik";
        case MetricKind::Accuracy: return "accuracy";
    }
    return "unknown";
}

inline bool higher_is_better(MetricKind k) { return k != MetricKind::MAD; }

inline double mean_absolute_deviation(const Vector& predicted, const Vector& truth) {
    if (predicted.size() != truth.size()) {
        throw Error(ErrorCode::LengthMismatch, "prediction and truth lengths differ");
    }
    if (truth.size() == 0) throw Error(ErrorCode::LengthMismatch, "empty validation set");
    return (predicted - truth).cwiseAbs().mean();
}

/// Sum of log probabilities of the observed classes. `probs` is n x q.
inline double log_likelihood(const Matrix& probs, std::span<const int> labels) {
    if (probs.rows() != static_cast<Index>(labels.size())) {
        throw Error(ErrorCode::LengthMismatch, "probability rows and label count differ");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int b = labels[i];
        if (b < 0 || b >= probs.cols()) throw Error(ErrorCode::InvalidArgument, "label outside [0, q)");
        total += std::log(probs(static_cast<Index>(i), b));
    }
    return total;
}

/// Fraction of rows whose largest probability sits at the observed class.
inline double accuracy(const Matrix& probs, std::span<const int> labels) {
    if (probs.rows() != static_cast<Index>(labels.size())) {
        throw Error(ErrorCode::LengthMismatch, "probability rows and label count differ");
    }
    if (labels.empty()) throw Error(ErrorCode::LengthMismatch, "empty validation set");
    Index hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        Index best = 0;
        probs.row(static_cast<Index>(i)).maxCoeff(&best);
        if (best == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

/// eta_new = K(a_new, a_sketch) x, with `kernel_rows` n_new x m.
inline Matrix linear_predictor(const Matrix& kernel_rows, const Matrix& x) {
    if (kernel_rows.cols() != x.rows()) {
        throw Error(ErrorCode::ShapeMismatch, "kernel rows have " + std::to_string(kernel_rows.cols()) +
                                                  " columns but coefficients have " +
                                                  std::to_string(x.rows()) + " rows");
    }
    return kernel_rows * x;
}

/// Logistic link as an n x 2 matrix of class probabilities (class 0, class 1).
inline Matrix logistic_probabilities(const Vector& eta) {
    Matrix p(eta.size(), 2);
    for (Index i = 0; i < eta.size(); ++i) {
        p(i, 1) = sigmoid(eta(i));
        p(i, 0) = sigmoid(-eta(i));
    }
    return p;
}

template <class Point>
struct PathEntry {
    double lambda = 0.0;
    Point solution;
    int iterations = 0;
    double wall_time_s = 0.0;
    double grad_norm = 0.0;
    double objective = 0.0;
    double metric = std::numeric_limits<double>::quiet_NaN();
    Termination termination = Termination::MaxIters;
    std::string error;  // empty unless the solver threw

    bool ok() const { return error.empty(); }
};

template <class Point>
struct PathResult {
    std::vector<PathEntry<Point>> entries;  // decreasing lambda
    double total_time_s = 0.0;
    double best_lambda = std::numeric_limits<double>::quiet_NaN();
    double best_metric = std::numeric_limits<double>::quiet_NaN();
    std::size_t best_index = 0;
};

/**
 * Solve along the lambda grid with warm starts.
 *
 * `solve(lambda, warm)` returns a SolverResult<Point>; `metric(solution)`
 * scores a solution on validation data. The reported total time covers the
 * solve calls only (including any per-lambda factorizations they do). A
 * solver error is recorded on its entry and the path continues from the
 * last good solution.
 */
template <class Point, class SolveFn, class MetricFn>
PathResult<Point> run_path(const PathConfig& config, MetricKind kind, Point x0, SolveFn&& solve,
                           MetricFn&& metric) {
    PathResult<Point> result;
    Point warm = std::move(x0);
    bool have_best = false;
    for (double lambda : lambda_grid(config)) {
        PathEntry<Point> entry;
        entry.lambda = lambda;
        detail::Stopwatch clock;
        try {
            SolverResult<Point> r = solve(lambda, static_cast<const Point&>(warm));
            entry.wall_time_s = clock.seconds();
            entry.iterations = r.iterations;
            entry.grad_norm = r.grad_norm;
            entry.objective = r.objective;
            entry.termination = r.termination;
            entry.solution = std::move(r.solution);
            if (entry.termination != Termination::NonFiniteObjective) warm = entry.solution;
        } catch (const std::exception& e) {
            entry.wall_time_s = clock.seconds();
            entry.error = e.what();
            entry.solution = warm;
        }
        result.total_time_s += entry.wall_time_s;
        if (entry.ok() && entry.termination != Termination::NonFiniteObjective) {
            entry.metric = metric(static_cast<const Point&>(entry.solution));
            const bool better = !have_best || (higher_is_better(kind) ? entry.metric > result.best_metric
                                                                     : entry.metric < result.best_metric);
            if (std::isfinite(entry.metric) && better) {
                have_best = true;
                result.best_metric = entry.metric;
                result.best_lambda = lambda;
                result.best_index = result.entries.size();
            }
        }
        result.entries.push_back(std::move(entry));
    }
    return result;
}

}  // namespace qmme
