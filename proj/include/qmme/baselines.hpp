#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>

#include "qmme/error.hpp"
#include "qmme/linalg.hpp"
#include "qmme/qmme.hpp"
#include "qmme/random.hpp"

namespace qmme {

struct BaselineConfig {
    double grad_tol = 1e-4;
    int max_iters = 1000;
    double adagd_init_step = 1e-7;
    double newton_ridge = 1e-9;
    int max_halvings = 50;
    // Objective values closer than this (relative) count as equal in the
    // Newton descent test, so rounding noise cannot block a converging step.
    double newton_descent_rtol = 1e-14;
    bool log_trajectory = true;

    void validate() const {
        if (!(grad_tol > 0.0)) throw Error(ErrorCode::InvalidConfig, "grad_tol must be positive");
        if (max_iters < 1) throw Error(ErrorCode::InvalidConfig, "max_iters must be positive");
        if (!(adagd_init_step > 0.0)) throw Error(ErrorCode::InvalidConfig, "adagd_init_step must be positive");
        if (!(newton_ridge >= 0.0)) throw Error(ErrorCode::InvalidConfig, "newton_ridge must be non-negative");
        if (max_halvings < 1) throw Error(ErrorCode::InvalidConfig, "max_halvings must be positive");
        if (!(newton_descent_rtol >= 0.0)) throw Error(ErrorCode::InvalidConfig, "newton_descent_rtol must be non-negative");
    }
};

template <class P>
concept DifferentiableProblem = requires(const P& p, const typename P::point_type& x) {
    typename P::point_type;
    { p.value(x) } -> std::convertible_to<double>;
    { p.gradient(x) } -> std::convertible_to<typename P::point_type>;
};

template <class P>
concept HessianProblem = DifferentiableProblem<P> && requires(const P& p, const typename P::point_type& x) {
    { p.exact_hessian(x) } -> std::convertible_to<Matrix>;
};

/**
 * Largest eigenvalue of a symmetric positive semidefinite operator by power
 * iteration, stopped when the Rayleigh quotient changes by less than
 * `rel_tol` relative. `shape` fixes the point type and dimensions.
 */
template <class Point, class Apply>
double lipschitz_constant(Apply&& apply, const Point& shape, double rel_tol = 1e-6, int max_iters = 100000,
                          std::uint64_t seed = 0x10f) {
    Rng rng(seed, 0x504f57);
    Point v = shape;
    for (Index i = 0; i < v.size(); ++i) v.data()[i] = rng.normal();
    v /= v.norm();
    double rayleigh = 0.0;
    for (int it = 0; it < max_iters; ++it) {
        Point w = apply(v);
        const double next = detail::inner(v, w);
        const double norm = w.norm();
        if (!(norm > 0.0)) return 0.0;
        v = w / norm;
        if (it > 0 && std::abs(next - rayleigh) <= rel_tol * std::abs(next)) return next;
        rayleigh = next;
    }
    throw Error(ErrorCode::NoConvergence, "power iteration did not reach the requested accuracy");
}

namespace detail {

inline IterationRecord baseline_record(int k, double f, double grad_norm, double beta, double seconds) {
    IterationRecord rec;
    rec.k = k;
    rec.f = f;
    rec.grad_norm = grad_norm;
    rec.potential = f;  // baselines have no potential; the objective is logged in its place
    rec.beta = beta;
    rec.wall_time_s = seconds;
    return rec;
}

template <class Point>
SolverResult<Point> finish(SolverResult<Point> result, Point x, double f, double grad_norm,
                           const Stopwatch& clock) {
    result.solution = std::move(x);
    result.objective = f;
    result.grad_norm = grad_norm;
    result.wall_time_s = clock.seconds();
    return result;
}

}  // namespace detail

/// Accelerated gradient descent with step 1/L and the classical t-sequence,
/// without restarts. The logged beta is the momentum weight (t_k - 1)/t_{k+1}.
template <DifferentiableProblem P>
SolverResult<typename P::point_type> fista_run(const P& problem, typename P::point_type x0, double lipschitz,
                                               const BaselineConfig& config) {
    using Point = typename P::point_type;
    config.validate();
    if (!(lipschitz > 0.0) || !std::isfinite(lipschitz)) {
        throw Error(ErrorCode::InvalidArgument, "FISTA needs a positive finite Lipschitz constant");
    }
    detail::Stopwatch clock;
    SolverResult<Point> result;
    auto [f, grad] = evaluate(problem, x0);
    double grad_norm = grad.norm();
    Point x = std::move(x0);
    if (!std::isfinite(f)) {
        result.termination = Termination::NonFiniteObjective;
        return detail::finish(std::move(result), std::move(x), f, grad_norm, clock);
    }
    if (grad_norm < config.grad_tol) {
        result.termination = Termination::Tolerance;
        return detail::finish(std::move(result), std::move(x), f, grad_norm, clock);
    }

    Point y = x;
    Point grad_y = grad;
    double t = 1.0;
    for (int k = 1; k <= config.max_iters; ++k) {
        Point x_next = y - grad_y / lipschitz;
        const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
        const double beta = (t - 1.0) / t_next;
        auto [f_next, grad_next] = evaluate(problem, x_next);
        if (!std::isfinite(f_next) || !grad_next.allFinite()) {
            result.termination = Termination::NonFiniteObjective;
            break;
        }
        y = x_next + beta * (x_next - x);
        x = std::move(x_next);
        t = t_next;
        f = f_next;
        grad_norm = grad_next.norm();
        result.iterations = k;
        if (config.log_trajectory) {
            result.trajectory.push_back(detail::baseline_record(k, f, grad_norm, beta, clock.seconds()));
        }
        if (grad_norm < config.grad_tol) {
            result.termination = Termination::Tolerance;
            break;
        }
        grad_y = beta == 0.0 ? std::move(grad_next) : Point(problem.gradient(y));
    }
    return detail::finish(std::move(result), std::move(x), f, grad_norm, clock);
}

/**
 * Adaptive gradient descent without line search (Malitsky and Mishchenko):
 *
 *   lambda_k = min( sqrt(1 + theta_{k-1}) lambda_{k-1},
 *                   ||x^k - x^{k-1}|| / (2 ||g^k - g^{k-1}||) ),
 *   theta_k  = lambda_k / lambda_{k-1},  theta_0 = +inf.
 *
 * The first step uses `adagd_init_step`. When the gradient difference is
 * zero the previous step is reused. The logged beta holds lambda_k.
 */
template <DifferentiableProblem P>
SolverResult<typename P::point_type> adagd_run(const P& problem, typename P::point_type x0,
                                               const BaselineConfig& config) {
    using Point = typename P::point_type;
    config.validate();
    detail::Stopwatch clock;
    SolverResult<Point> result;
    auto [f, grad] = evaluate(problem, x0);
    double grad_norm = grad.norm();
    Point x = std::move(x0);
    if (!std::isfinite(f)) {
        result.termination = Termination::NonFiniteObjective;
        return detail::finish(std::move(result), std::move(x), f, grad_norm, clock);
    }
    if (grad_norm < config.grad_tol) {
        result.termination = Termination::Tolerance;
        return detail::finish(std::move(result), std::move(x), f, grad_norm, clock);
    }

    double step = config.adagd_init_step;
    double theta = std::numeric_limits<double>::infinity();
    Point x_prev;
    Point grad_prev;
    for (int k = 1; k <= config.max_iters; ++k) {
        if (k > 1) {
            const double growth = std::sqrt(1.0 + theta) * step;
            const double diff = (grad - grad_prev).norm();
            double next = diff > 0.0 ? std::min(growth, (x - x_prev).norm() / (2.0 * diff)) : step;
            if (!std::isfinite(next) || !(next > 0.0)) next = step;
            theta = next / step;
            step = next;
        }
        Point x_next = x - step * grad;
        auto [f_next, grad_next] = evaluate(problem, x_next);
        if (!std::isfinite(f_next) || !grad_next.allFinite()) {
            result.termination = Termination::NonFiniteObjective;
            break;
        }
        x_prev = std::move(x);
        grad_prev = std::move(grad);
        x = std::move(x_next);
        grad = std::move(grad_next);
        f = f_next;
        grad_norm = grad.norm();
        result.iterations = k;
        if (config.log_trajectory) {
            result.trajectory.push_back(detail::baseline_record(k, f, grad_norm, step, clock.seconds()));
        }
        if (grad_norm < config.grad_tol) {
            result.termination = Termination::Tolerance;
            break;
        }
    }
    return detail::finish(std::move(result), std::move(x), f, grad_norm, clock);
}

/**
 * Damped Newton: d = -(hess + ridge I)^{-1} g, step s = 1 halved while
 * f(x + s d) > f(x), up to a few ulps of f. Matrix points are vectorized column-major, matching
 * the ordering of exact_hessian. The logged beta holds the accepted step s.
 */
template <HessianProblem P>
SolverResult<typename P::point_type> newton_run(const P& problem, typename P::point_type x0,
                                                const BaselineConfig& config) {
    using Point = typename P::point_type;
    config.validate();
    detail::Stopwatch clock;
    SolverResult<Point> result;
    auto [f, grad] = evaluate(problem, x0);
    double grad_norm = grad.norm();
    Point x = std::move(x0);
    if (!std::isfinite(f)) {
        result.termination = Termination::NonFiniteObjective;
        return detail::finish(std::move(result), std::move(x), f, grad_norm, clock);
    }
    if (grad_norm < config.grad_tol) {
        result.termination = Termination::Tolerance;
        return detail::finish(std::move(result), std::move(x), f, grad_norm, clock);
    }

    for (int k = 1; k <= config.max_iters; ++k) {
        Matrix hess = problem.exact_hessian(x);
        hess.diagonal().array() += config.newton_ridge;
        Eigen::LLT<Matrix, Eigen::Lower> llt(hess);
        if (llt.info() != Eigen::Success) {
            throw Error(ErrorCode::HessianSolveFailed, "Newton Hessian is not positive definite at iteration " +
                                                           std::to_string(k));
        }
        Point dir = grad;
        Eigen::Map<Vector> dir_vec(dir.data(), dir.size());
        dir_vec = -llt.solve(Eigen::Map<const Vector>(grad.data(), grad.size()));
        if (!dir.allFinite()) {
            throw Error(ErrorCode::HessianSolveFailed, "Newton direction is not finite");
        }

        double s = 1.0;
        Point trial = x + dir;
        double f_trial = problem.value(trial);
        const double f_accept = f + config.newton_descent_rtol * std::abs(f);
        int halvings = 0;
        while (!(f_trial <= f_accept)) {
            if (++halvings > config.max_halvings) {
                throw Error(ErrorCode::LineSearchFailed, "no descent after " +
                                                             std::to_string(config.max_halvings) +
                                                             " step halvings at iteration " + std::to_string(k));
            }
            s *= 0.5;
            trial = x + s * dir;
            f_trial = problem.value(trial);
        }
        auto [f_next, grad_next] = evaluate(problem, trial);
        x = std::move(trial);
        f = f_next;
        grad = std::move(grad_next);
        grad_norm = grad.norm();
        result.iterations = k;
        if (config.log_trajectory) {
            result.trajectory.push_back(detail::baseline_record(k, f, grad_norm, s, clock.seconds()));
        }
        if (grad_norm < config.grad_tol) {
            result.termination = Termination::Tolerance;
            break;
        }
    }
    return detail::finish(std::move(result), std::move(x), f, grad_norm, clock);
}

}  // namespace qmme
