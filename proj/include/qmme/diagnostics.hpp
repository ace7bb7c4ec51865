#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "qmme/datagen.hpp"
#include "qmme/kernel.hpp"
#include "qmme/linalg.hpp"
#include "qmme/losses.hpp"
#include "qmme/model.hpp"
#include "qmme/qmme.hpp"
#include "qmme/random.hpp"
#include "qmme/sylvester.hpp"

namespace qmme {

/// A simulated training problem: data, sketch and kernel blocks.
struct SimulatedInstance {
    SimData data;
    TrainingData train;
};

inline SimulatedInstance build_simulated(const ModelSpec& spec, Index n, Index m, double sigma, std::uint64_t seed,
                                         Index d = 50) {
    SimSpec sim;
    sim.n = n;
    sim.d = d;
    sim.family = spec.family;
    sim.q = spec.family == Family::Multinomial ? spec.multinomial.q : 3;
    sim.seed = seed;
    SimulatedInstance out;
    out.data = simulate(sim);
    auto rows = make_sketch(n, std::nullopt, SketchSpec{m, SketchStrategy::UniformRows, seed});
    std::vector<int> labels = out.data.labels;
    out.train = make_training_data(spec, out.data.A, out.data.response, std::move(labels), KernelSpec{sigma},
                                   std::move(rows));
    return out;
}

/// Central-difference gradient.
template <class P>
typename P::point_type fd_gradient(const P& problem, const typename P::point_type& x, double eps = 1e-6) {
    typename P::point_type g = x;
    typename P::point_type probe = x;
    for (Index i = 0; i < x.size(); ++i) {
        const double xi = x.data()[i];
        probe.data()[i] = xi + eps;
        const double up = problem.value(probe);
        probe.data()[i] = xi - eps;
        const double down = problem.value(probe);
        probe.data()[i] = xi;
        g.data()[i] = (up - down) / (2.0 * eps);
    }
    return g;
}

/// Central differences of the analytic gradient, symmetrized.
template <class P>
Matrix fd_hessian(const P& problem, const typename P::point_type& x, double eps = 1e-5) {
    const Index dim = x.size();
    Matrix h(dim, dim);
    typename P::point_type probe = x;
    for (Index j = 0; j < dim; ++j) {
        const double xj = x.data()[j];
        probe.data()[j] = xj + eps;
        const auto up = problem.gradient(probe);
        probe.data()[j] = xj - eps;
        const auto down = problem.gradient(probe);
        probe.data()[j] = xj;
        for (Index i = 0; i < dim; ++i) h(i, j) = (up.data()[i] - down.data()[i]) / (2.0 * eps);
    }
    return symmetrize(h);
}

/// Dense solve of (lambda E^{-T} (x) I + I (x) M) vec(D) = vec(rhs).
inline Matrix kronecker_sylvester(const Matrix& operand, double lambda, const Matrix& e_inverse, const Matrix& rhs) {
    const Index m = operand.rows(), w = e_inverse.rows();
    Matrix big = Matrix::Zero(m * w, m * w);
    for (Index j = 0; j < w; ++j) {
        big.block(j * m, j * m, m, m) += operand;
        for (Index l = 0; l < w; ++l) big.block(j * m, l * m, m, m).diagonal().array() += lambda * e_inverse(l, j);
    }
    const Vector sol = big.partialPivLu().solve(Eigen::Map<const Vector>(rhs.data(), rhs.size()));
    return Eigen::Map<const Matrix>(sol.data(), m, w);
}

struct CheckResult {
    std::string name;
    double value = 0.0;
    double threshold = 0.0;
    bool pass = false;
};

namespace detail {

inline double relative_gap(const Matrix& a, const Matrix& b) { return (a - b).norm() / std::max(1.0, b.norm()); }

template <class P, class C>
void append_family_checks(std::vector<CheckResult>& out, const std::string& tag, const P& problem, const C& curvature,
                          typename P::point_type center, std::uint64_t seed) {
    const Majorized maj(problem, curvature);
    const auto report = check_majorization(maj, center, 100, 2.0, seed);
    out.push_back({tag + " majorization (scaled violation)", report.max_scaled_violation, 1e-8, report.valid});
    const auto g = problem.gradient(center);
    const double gap = detail::relative_gap(g, fd_gradient(problem, center));
    out.push_back({tag + " gradient vs finite differences", gap, 1e-5, gap <= 1e-5});
    const auto ne = check_nonexpansive(maj, center, 50, 2.0, seed + 1);
    out.push_back({tag + " non-expansive ratio", ne.max_ratio, 1.0 + 1e-10, ne.max_ratio <= 1.0 + 1e-10});
}

}  // namespace detail

/// Small-instance invariant suite behind the CLI `check` command.
inline std::vector<CheckResult> run_invariant_checks(std::uint64_t seed) {
    std::vector<CheckResult> out;
    constexpr Index n = 120, m = 8;
    Rng rng(seed, 0x434b);
    auto random_point = [&rng](Index rows, Index cols) {
        Matrix x(rows, cols);
        for (Index i = 0; i < x.size(); ++i) x.data()[i] = 0.1 * rng.normal();
        return x;
    };

    ModelSpec quantile;
    quantile.family = Family::Quantile;
    const auto qi = build_simulated(quantile, n, m, 5.0, seed, 8);
    const QuantileProblem qp(qi.train.blocks, qi.train.response, 1e-2, quantile.quantile);
    detail::append_family_checks(out, "quantile", qp, curvature_bound(qp), Vector(random_point(m, 1).col(0)), seed);

    ModelSpec logistic;
    logistic.family = Family::Logistic;
    const auto li = build_simulated(logistic, n, m, 5.0, seed, 8);
    Vector b(n);
    for (Index i = 0; i < n; ++i) b(i) = li.train.labels[static_cast<std::size_t>(i)];
    const LogisticProblem lp(li.train.blocks, b, 1e-2);
    detail::append_family_checks(out, "logistic", lp, curvature_bound(lp), Vector(random_point(m, 1).col(0)), seed);

    for (auto param : {Parameterization::Standard, Parameterization::Full}) {
        ModelSpec multi;
        multi.family = Family::Multinomial;
        multi.multinomial = {3, param};
        multi.delta = 1e-4;
        const auto mi = build_simulated(multi, n, m, 5.0, seed, 8);
        const MultinomialProblem mp(mi.train.blocks, mi.train.labels, 1e-2, multi.multinomial);
        const auto curv = curvature_bound(mp);
        const std::string tag = std::string("multinomial/") + to_string(param);
        detail::append_family_checks(out, tag, mp, curv, random_point(m, multi.multinomial.width()), seed);

        const Matrix c = random_point(m, multi.multinomial.width());
        const Matrix step = curv.solve(c);
        const Matrix h = dense_curvature_matrix(mp);
        const Vector dense = h.llt().solve(Eigen::Map<const Vector>(c.data(), c.size()));
        const double gap = detail::relative_gap(step, Eigen::Map<const Matrix>(dense.data(), c.rows(), c.cols()));
        out.push_back({tag + " Sylvester step vs dense solve", gap, 1e-8, gap <= 1e-8});
    }

    for (int trial = 0; trial < 5; ++trial) {
        const Index mm = 3 + trial, w = 1 + trial % 3;
        const Matrix z = random_point(mm + 4, mm);
        Matrix gkg = z.transpose() * z / 10.0;
        gkg = symmetrize(gkg);
        const Matrix gk2g = symmetrize(gkg * gkg + 0.1 * Matrix::Identity(mm, mm));
        const auto plan = build_plan(gkg, gk2g, 1e-3, w);
        const Matrix rhs = random_point(mm, w);
        const double lambda = 0.5 + trial;
        const Matrix fast = solve_sylvester_rhs(plan, lambda, rhs);
        const double gap = detail::relative_gap(fast, kronecker_sylvester(plan.operand(), lambda, plan.e_inverse(), rhs));
        out.push_back({"Sylvester vs Kronecker oracle #" + std::to_string(trial), gap, 1e-8, gap <= 1e-8});
    }

    for (int q = 2; q <= 10; ++q) {
        double worst = 1.0;
        for (int s = 0; s < 50; ++s) {
            Vector p(q);
            for (int j = 0; j < q; ++j) p(j) = rng.gamma(1.0);
            p /= p.sum();
            worst = std::min(worst, bohning_bound_check(p));
        }
        out.push_back({"Bohning bound q=" + std::to_string(q), worst, -1e-12, worst >= -1e-12});
    }
    return out;
}

}  // namespace qmme
