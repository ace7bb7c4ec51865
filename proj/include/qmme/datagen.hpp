#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "qmme/error.hpp"
#include "qmme/linalg.hpp"
#include "qmme/losses.hpp"
#include "qmme/random.hpp"

namespace qmme {

enum class Family { Quantile, Logistic, Multinomial };

inline const char* to_string(Family f) {
    switch (f) {
        case Family::Quantile: return "quantile";
        case Family::Logistic: return "logistic";
        case Family::Multinomial: return "multinomial";
    }
    return "unknown";
}

inline Family parse_family(const std::string& name) {
    if (name == "quantile") return Family::Quantile;
    if (name == "logistic") return Family::Logistic;
    if (name == "multinomial") return Family::Multinomial;
    throw Error(ErrorCode::InvalidConfig, "unknown family '" + name + "'");
}

struct SimSpec {
    Index n = 1000;
    Index d = 50;
    double rho = 0.5;
    Family family = Family::Quantile;
    int q = 3;
    std::uint64_t seed = 0;

    void validate() const {
        if (n < 1) throw Error(ErrorCode::InvalidConfig, "n must be positive");
        if (d < 6) throw Error(ErrorCode::InvalidConfig, "d must be at least 6");
        if (!(std::abs(rho) < 1.0)) throw Error(ErrorCode::InvalidConfig, "rho must lie in (-1, 1)");
        if (family == Family::Multinomial && q < 3) {
            throw Error(ErrorCode::InvalidConfig, "simulated multinomial data needs q >= 3");
        }
    }
};

/// Simulated dataset. For quantile and logistic `eta` is n x 1; for
/// multinomial it holds the q - 1 non-reference logits and `probs` the n x q
/// class probabilities. `labels` (0-based) is filled for the multinomial
/// family; `response` holds b for quantile/logistic and labels + 1 otherwise.
struct SimData {
    Matrix A;
    Vector response;
    std::vector<int> labels;
    Matrix eta;
    Matrix probs;
};

/// Sigma_ij = rho^|i - j|.
inline Matrix ar_covariance(Index d, double rho) {
    Matrix s(d, d);
    for (Index i = 0; i < d; ++i) {
        for (Index j = 0; j < d; ++j) s(i, j) = std::pow(rho, static_cast<double>(std::abs(i - j)));
    }
    return s;
}

namespace detail {

inline double signal_one(const Eigen::Ref<const Eigen::RowVectorXd>& a) {
    const double tail = a.tail(a.size() - 5).squaredNorm();
    return -4.0 + std::sin(a(0)) + a(1) * a(2) + a(3) * a(3) * a(3) - std::abs(a(4)) + 0.1 * tail;
}

inline double signal_two(const Eigen::Ref<const Eigen::RowVectorXd>& a) {
    const double tail = a.tail(a.size() - 5).squaredNorm();
    return 4.0 + std::cos(a(0)) + a(1) * a(3) + a(4) * a(4) * a(4) - std::abs(a(2)) - 0.1 * tail;
}

}  // namespace detail

/**
 * Rows of A are N(0, Sigma) with the AR covariance. Independent RNG streams
 * are used for the design, the noise and the labels, so changing the
 * family does not change A for a given seed.
 */
inline SimData simulate(const SimSpec& spec) {
    spec.validate();
    SimData out;
    const Matrix sigma = ar_covariance(spec.d, spec.rho);
    Eigen::LLT<Matrix> llt(sigma);
    const Matrix lower = llt.matrixL();

    Rng design(spec.seed, 0x41);
    Matrix z(spec.n, spec.d);
    for (Index i = 0; i < spec.n; ++i) {
        for (Index j = 0; j < spec.d; ++j) z(i, j) = design.normal();
    }
    out.A = z * lower.transpose();

    Rng draws(spec.seed, 0x42);
    out.response.resize(spec.n);
    switch (spec.family) {
        case Family::Quantile:
        case Family::Logistic: {
            out.eta.resize(spec.n, 1);
            for (Index i = 0; i < spec.n; ++i) {
                const double eta = detail::signal_one(out.A.row(i));
                out.eta(i, 0) = eta;
                out.response(i) = spec.family == Family::Quantile ? eta + draws.student_t(1.5)
                                                                  : (draws.bernoulli(sigmoid(eta)) ? 1.0 : 0.0);
            }
            break;
        }
        case Family::Multinomial: {
            const Index w = spec.q - 1;
            out.eta = Matrix::Zero(spec.n, w);
            for (Index i = 0; i < spec.n; ++i) {
                out.eta(i, 0) = detail::signal_one(out.A.row(i));
                out.eta(i, 1) = detail::signal_two(out.A.row(i));
            }
            out.probs = MultinomialProblem::class_probabilities(
                out.eta, MultinomialSpec{spec.q, Parameterization::Standard});
            out.labels.resize(static_cast<std::size_t>(spec.n));
            for (Index i = 0; i < spec.n; ++i) {
                const int b = draws.categorical(out.probs.row(i));
                out.labels[static_cast<std::size_t>(i)] = b;
                out.response(i) = b + 1;
            }
            break;
        }
    }
    return out;
}

}  // namespace qmme
