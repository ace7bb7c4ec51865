#pragma once

#include <cmath>
#include <string>

#include "qmme/linalg.hpp"

namespace qmme {

/// 2 (I + 1 1^T) of order `qprime`: the inverse of both multinomial
/// curvature factors (E1 for the full parameterization, E2 for the standard).
inline Matrix multinomial_bound_inverse(Index qprime) {
    return 2.0 * (Matrix::Identity(qprime, qprime) + Matrix::Ones(qprime, qprime));
}

/**
 * Factors for the majorant step of kernel multinomial regression,
 *
 *     M D + D (lambda E^{-1}) = (GKG^T + delta I)^{-1} C E^{-1},
 *     M = (GKG^T + delta I)^{-1} GK^2G^T.
 *
 * Nothing here depends on lambda: the spectral factor of lambda E^{-1} is the
 * spectral factor of E^{-1} with eigenvalues scaled by lambda. One plan
 * therefore serves every iteration and every lambda of a path.
 */
class SylvesterPlan {
public:
    Index sketch_dim() const { return schur_.T.rows(); }
    Index width() const { return einv_.rows(); }
    double delta() const { return delta_; }

    const Matrix& operand() const { return operand_; }           // M
    const SchurFactor& schur() const { return schur_; }          // M = U T U^T
    const SpectralFactor& spectral() const { return spectral_; } // E^{-1} = V diag(d) V^T
    const CholeskyFactor& damped_gram() const { return chol_; }  // GKG^T + delta I
    const Matrix& e_inverse() const { return einv_; }

private:
    friend SylvesterPlan build_plan(const Matrix&, const Matrix&, double, Index, const Tolerances&);

    Matrix operand_;
    SchurFactor schur_;
    SpectralFactor spectral_;
    CholeskyFactor chol_;
    Matrix einv_;
    double delta_ = 0.0;
};

inline SylvesterPlan build_plan(const Matrix& gkg, const Matrix& gk2g, double delta, Index qprime,
                                const Tolerances& tol = default_tolerances()) {
    require_symmetric(gkg, "GKG^T", tol);
    require_symmetric(gk2g, "GK^2G^T", tol);
    if (gkg.rows() != gk2g.rows()) {
        throw Error(ErrorCode::DimensionMismatch, "GKG^T and GK^2G^T differ in size");
    }
    if (!(delta >= 0.0)) throw Error(ErrorCode::InvalidArgument, "delta must be non-negative");
    if (qprime < 1) throw Error(ErrorCode::InvalidArgument, "qprime must be at least 1");

    SylvesterPlan plan;
    plan.delta_ = delta;
    Matrix damped = gkg;
    damped.diagonal().array() += delta;
    plan.chol_ = cholesky(damped, tol);
    plan.operand_ = plan.chol_.solve(gk2g);
    plan.schur_ = real_schur_lower(plan.operand_, tol);
    plan.einv_ = multinomial_bound_inverse(qprime);
    plan.spectral_ = symmetric_eigen(plan.einv_, tol);
    return plan;
}

/**
 * Solve (T + s_j I) z_j = r_j for every column j, with T lower
 * quasi-triangular (1x1 and 2x2 diagonal blocks). This is the transformed
 * equation T Z + Z diag(s) = R. Each column is an independent block forward
 * substitution.
 */
inline Matrix solve_shifted_quasi_lower(const Matrix& t, const Vector& shifts, Matrix rhs,
                                        const Tolerances& tol = default_tolerances()) {
    const Index m = t.rows();
    if (t.cols() != m || rhs.rows() != m || rhs.cols() != shifts.size()) {
        throw Error(ErrorCode::DimensionMismatch, "shifted quasi-triangular solve: shape mismatch");
    }
    for (Index j = 0; j < rhs.cols(); ++j) {
        const double s = shifts(j);
        auto z = rhs.col(j);
        Index i = 0;
        while (i < m) {
            const bool pair = i + 1 < m && t(i, i + 1) != 0.0;
            if (!pair) {
                const double a = t(i, i) + s;
                const double scale = std::max({std::abs(t(i, i)), std::abs(s), 1e-300});
                if (std::abs(a) < tol.singular_shift * scale) {
                    throw Error(ErrorCode::SingularShift,
                                "1x1 block " + std::to_string(i) + " singular for shift column " +
                                    std::to_string(j));
                }
                z(i) /= a;
                if (i + 1 < m) z.tail(m - i - 1).noalias() -= t.col(i).tail(m - i - 1) * z(i);
                i += 1;
            } else {
                const double a = t(i, i) + s, b = t(i, i + 1);
                const double c = t(i + 1, i), d = t(i + 1, i + 1) + s;
                const double det = a * d - b * c;
                const double scale = std::max(std::abs(a * d) + std::abs(b * c), 1e-300);
                if (std::abs(det) < tol.singular_shift * scale) {
                    throw Error(ErrorCode::SingularShift,
                                "2x2 block at " + std::to_string(i) + " singular for shift column " +
                                    std::to_string(j));
                }
                const double r0 = z(i), r1 = z(i + 1);
                z(i) = (d * r0 - b * r1) / det;
                z(i + 1) = (a * r1 - c * r0) / det;
                if (i + 2 < m) {
                    z.tail(m - i - 2).noalias() -= t.block(i + 2, i, m - i - 2, 2) * z.segment(i, 2);
                }
                i += 2;
            }
        }
    }
    return rhs;
}

/// Solve M D + D (lambda E^{-1}) = rhs using the cached factors.
inline Matrix solve_sylvester_rhs(const SylvesterPlan& plan, double lambda, const Matrix& rhs,
                                  const Tolerances& tol = default_tolerances()) {
    if (rhs.rows() != plan.sketch_dim() || rhs.cols() != plan.width()) {
        throw Error(ErrorCode::DimensionMismatch,
                    "Sylvester rhs is " + std::to_string(rhs.rows()) + "x" +
                        std::to_string(rhs.cols()) + ", plan expects " +
                        std::to_string(plan.sketch_dim()) + "x" + std::to_string(plan.width()));
    }
    if (!(lambda > 0.0)) throw Error(ErrorCode::InvalidArgument, "lambda must be positive");
    const Matrix& u = plan.schur().U;
    const Matrix& v = plan.spectral().V;
    Matrix transformed = u.transpose() * rhs * v;
    const Vector shifts = lambda * plan.spectral().d;
    const Matrix z = solve_shifted_quasi_lower(plan.schur().T, shifts, std::move(transformed), tol);
    return u * z * v.transpose();
}

/// Majorant step for the multinomial curvature bound: returns D with
/// M D + D (lambda E^{-1}) = (GKG^T + delta I)^{-1} C E^{-1}.
inline Matrix solve_sylvester(const SylvesterPlan& plan, double lambda, const Matrix& ck,
                              const Tolerances& tol = default_tolerances()) {
    if (ck.rows() != plan.sketch_dim() || ck.cols() != plan.width()) {
        throw Error(ErrorCode::DimensionMismatch, "Sylvester C^k does not match the plan");
    }
    const Matrix rhs = plan.damped_gram().solve(ck * plan.e_inverse());
    return solve_sylvester_rhs(plan, lambda, rhs, tol);
}

}  // namespace qmme
