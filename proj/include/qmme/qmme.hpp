#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <string>
#include <tuple>
#include <type_traits>
#include <utility>
#include <vector>

#include "qmme/error.hpp"
#include "qmme/linalg.hpp"
#include "qmme/random.hpp"

namespace qmme {

/**
 * What the QMME engine needs from an objective f with a fixed quadratic
 * majorant f(y) <= f(x) + <grad f(x), y - x> + 1/2 ||y - x||_H^2.
 *
 * `point_type` is Vector for the scalar-response problems and Matrix for
 * multinomial coefficients; both support the Eigen arithmetic and norm()
 * used below.
 */
template <class P>
concept MajorantProblem = requires(const P& p, const typename P::point_type& x) {
    typename P::point_type;
    { p.value(x) } -> std::convertible_to<double>;
    { p.gradient(x) } -> std::convertible_to<typename P::point_type>;
    { p.majorant_solve(x) } -> std::convertible_to<typename P::point_type>;  // H^{-1} g
    { p.h_norm_sq(x) } -> std::convertible_to<double>;                       // v^T H v
};

/// Objectives that can produce f and grad f from one pass over the data.
template <class P>
concept FusedEvaluation = requires(const P& p, const typename P::point_type& x) {
    { p.value_and_gradient(x) } -> std::convertible_to<std::pair<double, typename P::point_type>>;
};

/**
 * Objectives that factor through a linear predictor eta = A x. The engine
 * then extrapolates eta(y) from eta(x^k) and eta(x^{k-1}) without touching
 * A, and gets grad f(x^{k+1}) and grad f(y^{k+1}) from one product with A^T.
 */
template <class P>
concept LinearPredictorProblem =
    MajorantProblem<P> && requires(const P& p, const typename P::point_type& x) {
        { p.predictor(x) };
        { p.value_from(x, p.predictor(x)) } -> std::convertible_to<double>;
        { p.gradients_from(x, p.predictor(x), x, p.predictor(x)) }
            -> std::convertible_to<std::pair<typename P::point_type, typename P::point_type>>;
    };

namespace detail {

template <class P>
struct PredictorOf {
    using type = int;  // unused placeholder
};

template <LinearPredictorProblem P>
struct PredictorOf<P> {
    using type = decltype(std::declval<const P&>().predictor(std::declval<const typename P::point_type&>()));
};

}  // namespace detail

template <class P>
std::pair<double, typename P::point_type> evaluate(const P& p, const typename P::point_type& x) {
    if constexpr (FusedEvaluation<P>) {
        return p.value_and_gradient(x);
    } else {
        return {p.value(x), p.gradient(x)};
    }
}

enum class BetaMode { HybridRestart, CappedOneThird };

inline const char* to_string(BetaMode mode) {
    return mode == BetaMode::HybridRestart ? "hybrid" : "capped";
}

struct QmmeConfig {
    int restart_period = 50;  // P
    BetaMode beta_mode = BetaMode::HybridRestart;
    double grad_tol = 1e-4;
    int max_iters = 1000;
    bool log_trajectory = true;

    void validate() const {
        if (restart_period < 2) throw Error(ErrorCode::InvalidConfig, "restart period must be >= 2");
        if (!(grad_tol > 0.0)) throw Error(ErrorCode::InvalidConfig, "grad_tol must be positive");
        if (max_iters < 1) throw Error(ErrorCode::InvalidConfig, "max_iters must be positive");
    }
};

/// Momentum cap used by BetaMode::CappedOneThird.
inline constexpr double kCappedBeta = 0.333;

/// Extrapolation coefficient l / (l + 2), optionally capped below 1/3.
inline double beta_schedule(int l, const QmmeConfig& config) {
    const double beta = static_cast<double>(l) / static_cast<double>(l + 2);
    return config.beta_mode == BetaMode::CappedOneThird ? std::min(beta, kCappedBeta) : beta;
}

enum class RestartCause { None, DescentBreak, Period };

struct IterationRecord {
    int k = 0;
    double f = 0.0;
    double grad_norm = 0.0;
    double potential = 0.0;  // f(x^k) + 1/2 ||x^k - x^{k-1}||_H^2
    double beta = 0.0;
    bool restarted = false;
    RestartCause cause = RestartCause::None;
    double wall_time_s = 0.0;
};

enum class Termination { Tolerance, MaxIters, NonFiniteObjective };

inline const char* to_string(Termination t) {
    switch (t) {
        case Termination::Tolerance: return "tolerance";
        case Termination::MaxIters: return "max_iters";
        case Termination::NonFiniteObjective: return "non_finite_objective";
    }
    return "unknown";
}

/// Outcome of any iterative solver in this library.
template <class Point>
struct SolverResult {
    Point solution;
    double objective = 0.0;
    double grad_norm = 0.0;
    int iterations = 0;
    Termination termination = Termination::MaxIters;
    double wall_time_s = 0.0;
    std::vector<IterationRecord> trajectory;

    bool converged() const { return termination == Termination::Tolerance; }
};

namespace detail {

class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

}  // namespace detail

/**
 * Quadratic majorization-minimization with extrapolation and hybrid restart.
 *
 *   y^k     = x^k + beta_k (x^k - x^{k-1}),  beta_k = l / (l + 2)
 *   x^{k+1} = y^k - H^{-1} grad f(y^k)
 *   l <- l + 1; reset l = 1 when f(x^{k+1}) > f(x^k) or l == P.
 *
 * Starts from x^1 = x^0, so the first step is a plain MM step. Stops when
 * ||grad f(x^k)|| < grad_tol or after max_iters steps.
 */
template <MajorantProblem P>
SolverResult<typename P::point_type> qmme_run(const P& problem, typename P::point_type x0,
                                              const QmmeConfig& config) {
    using Point = typename P::point_type;
    config.validate();
    detail::Stopwatch clock;

    SolverResult<Point> result;
    auto [f, grad] = evaluate(problem, x0);
    Point x = std::move(x0);
    Point x_prev = x;
    double grad_norm = grad.norm();
    if (!std::isfinite(f)) {
        result.solution = std::move(x);
        result.objective = f;
        result.grad_norm = grad_norm;
        result.termination = Termination::NonFiniteObjective;
        return result;
    }

    result.termination = Termination::MaxIters;
    if (grad_norm < config.grad_tol) {
        result.termination = Termination::Tolerance;
    } else {
        constexpr bool linear = LinearPredictorProblem<P>;
        using Eta = typename detail::PredictorOf<P>::type;
        Eta eta{};
        if constexpr (linear) eta = problem.predictor(x);
        Point grad_y = grad;  // gradient at the next y; y^1 = x^1
        int l = 1;
        for (int k = 1; k <= config.max_iters; ++k) {
            const double beta = beta_schedule(l, config);
            Point y = x + beta * (x - x_prev);
            if constexpr (!linear) grad_y = problem.gradient(y);
            Point x_next = y - problem.majorant_solve(grad_y);

            double f_next;
            Point grad_next;
            Eta eta_next{};
            if constexpr (linear) {
                eta_next = problem.predictor(x_next);
                f_next = problem.value_from(x_next, eta_next);
            } else {
                std::tie(f_next, grad_next) = evaluate(problem, x_next);
            }
            if (!std::isfinite(f_next)) {
                result.termination = Termination::NonFiniteObjective;
                break;
            }

            ++l;
            RestartCause cause = RestartCause::None;
            if (f_next > f) {
                cause = RestartCause::DescentBreak;
            } else if (l == config.restart_period) {
                cause = RestartCause::Period;
            }
            if (cause != RestartCause::None) l = 1;

            if constexpr (linear) {
                const double b = beta_schedule(l, config);
                const Point y_next = x_next + b * (x_next - x);
                const Eta eta_y = eta_next + b * (eta_next - eta);
                std::tie(grad_next, grad_y) = problem.gradients_from(x_next, eta_next, y_next, eta_y);
            }
            if (!grad_next.allFinite()) {
                result.termination = Termination::NonFiniteObjective;
                break;
            }

            IterationRecord rec;
            if (config.log_trajectory) {
                rec.potential = f_next + 0.5 * problem.h_norm_sq(Point(x_next - x));
            }

            x_prev = std::move(x);
            x = std::move(x_next);
            if constexpr (linear) eta = std::move(eta_next);
            f = f_next;
            grad_norm = grad_next.norm();
            result.iterations = k;

            if (config.log_trajectory) {
                rec.k = k;
                rec.f = f;
                rec.grad_norm = grad_norm;
                rec.beta = beta;
                rec.restarted = cause != RestartCause::None;
                rec.cause = cause;
                rec.wall_time_s = clock.seconds();
                result.trajectory.push_back(rec);
            }
            if (grad_norm < config.grad_tol) {
                result.termination = Termination::Tolerance;
                break;
            }
        }
    }

    result.solution = std::move(x);
    result.objective = f;
    result.grad_norm = grad_norm;
    result.wall_time_s = clock.seconds();
    return result;
}

// ---------------------------------------------------------------------------
// Empirical checks of the majorant and of the MM map.

struct MajorizationReport {
    double max_violation = 0.0;  // max of f(y) - [f(x) + g^T(y-x) + 1/2||y-x||_H^2]
    double max_scaled_violation = 0.0;  // violation / (1 + |f(x)|)
    int samples = 0;
    bool valid = true;  // scaled violation <= threshold everywhere
};

namespace detail {

/// Uniform point in the ball of given radius around `center`.
template <class Point>
Point ball_sample(const Point& center, double radius, Rng& rng) {
    Point dir = center;
    for (Index i = 0; i < dir.size(); ++i) dir.data()[i] = rng.normal();
    const double n = dir.norm();
    const double r = radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(dir.size()));
    return center + (n > 0.0 ? r / n : 0.0) * dir;
}

inline double inner(const Vector& a, const Vector& b) { return a.dot(b); }
inline double inner(const Matrix& a, const Matrix& b) { return (a.array() * b.array()).sum(); }

}  // namespace detail

/// Sample point pairs near `center` and report the worst violation of the
/// quadratic upper bound. A scaled violation above `threshold` flags an
/// invalid curvature matrix.
template <MajorantProblem P>
MajorizationReport check_majorization(const P& problem, const typename P::point_type& center,
                                      int samples, double radius, std::uint64_t seed,
                                      double threshold = 1e-8) {
    using Point = typename P::point_type;
    if (samples < 1) throw Error(ErrorCode::InvalidArgument, "samples must be >= 1");
    Rng rng(seed, 0x4d414a);
    MajorizationReport report;
    report.samples = samples;
    report.max_violation = -std::numeric_limits<double>::infinity();
    report.max_scaled_violation = -std::numeric_limits<double>::infinity();
    for (int s = 0; s < samples; ++s) {
        const Point x = detail::ball_sample(center, radius, rng);
        const Point y = detail::ball_sample(center, radius, rng);
        auto [fx, gx] = evaluate(problem, x);
        const double fy = problem.value(y);
        const Point d = y - x;
        const double bound = fx + detail::inner(gx, d) + 0.5 * problem.h_norm_sq(d);
        const double violation = fy - bound;
        const double scaled = violation / (1.0 + std::abs(fx));
        report.max_violation = std::max(report.max_violation, violation);
        report.max_scaled_violation = std::max(report.max_scaled_violation, scaled);
    }
    report.valid = report.max_scaled_violation <= threshold;
    return report;
}

struct PairCheckReport {
    double max_ratio = 0.0;  // worst observed left/right ratio
    int pairs = 0;
};

/// Worst ratio ||T(x) - T(y)||_H / ||x - y||_H over sampled pairs, with
/// T(x) = x - 2 H^{-1} grad f(x). Values <= 1 mean non-expansive.
template <MajorantProblem P>
PairCheckReport check_nonexpansive(const P& problem, const typename P::point_type& center, int pairs,
                                   double radius, std::uint64_t seed) {
    using Point = typename P::point_type;
    Rng rng(seed, 0x4e4558);
    PairCheckReport report;
    report.pairs = pairs;
    for (int s = 0; s < pairs; ++s) {
        const Point x = detail::ball_sample(center, radius, rng);
        const Point y = detail::ball_sample(center, radius, rng);
        const Point tx = x - 2.0 * problem.majorant_solve(problem.gradient(x));
        const Point ty = y - 2.0 * problem.majorant_solve(problem.gradient(y));
        const double num = std::sqrt(std::max(0.0, problem.h_norm_sq(Point(tx - ty))));
        const double den = std::sqrt(std::max(0.0, problem.h_norm_sq(Point(x - y))));
        if (den > 0.0) report.max_ratio = std::max(report.max_ratio, num / den);
    }
    return report;
}

/// Worst ratio ||grad f(x) - grad f(y)|| / (L ||x - y||) over sampled pairs.
template <MajorantProblem P>
PairCheckReport check_gradient_lipschitz(const P& problem, const typename P::point_type& center,
                                         double lipschitz, int pairs, double radius,
                                         std::uint64_t seed) {
    using Point = typename P::point_type;
    Rng rng(seed, 0x4c4950);
    PairCheckReport report;
    report.pairs = pairs;
    for (int s = 0; s < pairs; ++s) {
        const Point x = detail::ball_sample(center, radius, rng);
        const Point y = detail::ball_sample(center, radius, rng);
        const double num = (problem.gradient(x) - problem.gradient(y)).norm();
        const double den = lipschitz * (x - y).norm();
        if (den > 0.0) report.max_ratio = std::max(report.max_ratio, num / den);
    }
    return report;
}

}  // namespace qmme
