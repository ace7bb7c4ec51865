#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#ifdef QMME_HAVE_LAPACKE
#include <lapacke.h>
#endif

#include "qmme/error.hpp"

namespace qmme {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Numerical thresholds shared by the factorization and Sylvester code.
struct Tolerances {
    double symmetry = 1e-12;          // max |A - A^T| relative to max |A|
    int schur_sweeps_per_row = 30;    // QR iteration cap = sweeps_per_row * m
    double singular_shift = 1e-14;    // relative |det| floor for shifted blocks
};

inline const Tolerances& default_tolerances() {
    static const Tolerances tol{};
    return tol;
}

/// Process-wide counters of factorizations performed. Used to verify that a
/// multinomial solution path factors its matrices exactly once.
struct FactorizationCounters {
    std::atomic<long> cholesky{0};
    std::atomic<long> schur{0};
    std::atomic<long> spectral{0};

    void reset() {
        cholesky = 0;
        schur = 0;
        spectral = 0;
    }
};

inline FactorizationCounters& factorization_counters() {
    static FactorizationCounters counters;
    return counters;
}

inline double max_abs(const Matrix& a) { return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff(); }

inline bool is_symmetric(const Matrix& a, double tol = default_tolerances().symmetry) {
    if (a.rows() != a.cols()) return false;
    const double scale = std::max(max_abs(a), 1e-300);
    return max_abs(a - a.transpose()) <= tol * scale;
}

inline void require_square(const Matrix& a, const char* what) {
    if (a.rows() != a.cols()) {
        throw Error(ErrorCode::DimensionMismatch,
                    std::string(what) + " must be square, got " + std::to_string(a.rows()) + "x" +
                        std::to_string(a.cols()));
    }
}

inline void require_symmetric(const Matrix& a, const char* what,
                              const Tolerances& tol = default_tolerances()) {
    require_square(a, what);
    if (!is_symmetric(a, tol.symmetry)) {
        throw Error(ErrorCode::NotSymmetric, std::string(what) + " is not symmetric");
    }
}

/// Lower-triangular factor L with A = L L^T.
class CholeskyFactor {
public:
    CholeskyFactor() = default;

    const Matrix& lower() const { return lower_; }
    Index source_dim() const { return lower_.rows(); }

    /// A^{-1} B through one forward and one backward substitution.
    template <class Derived>
    Matrix solve(const Eigen::MatrixBase<Derived>& b) const {
        if (b.rows() != lower_.rows()) {
            throw Error(ErrorCode::DimensionMismatch,
                        "cholesky_solve: rhs has " + std::to_string(b.rows()) + " rows, factor is " +
                            std::to_string(lower_.rows()));
        }
        Matrix x = lower_.triangularView<Eigen::Lower>().solve(b);
        lower_.triangularView<Eigen::Lower>().transpose().solveInPlace(x);
        return x;
    }

    /// Reassembles L L^T.
    Matrix reconstruct() const { return lower_ * lower_.transpose(); }

private:
    explicit CholeskyFactor(Matrix lower) : lower_(std::move(lower)) {}
    friend CholeskyFactor cholesky(const Matrix& a, const Tolerances& tol);

    Matrix lower_;
};

/// Factor a symmetric positive-definite matrix. Throws NotPositiveDefinite
/// when a pivot is not strictly positive; callers respond by raising the
/// damping.
inline CholeskyFactor cholesky(const Matrix& a, const Tolerances& tol = default_tolerances()) {
    require_symmetric(a, "cholesky input", tol);
    Eigen::LLT<Matrix, Eigen::Lower> llt(a);
    if (llt.info() != Eigen::Success) {
        throw Error(ErrorCode::NotPositiveDefinite, "non-positive pivot; increase the damping");
    }
    Matrix lower = llt.matrixL();
    for (Index i = 0; i < lower.rows(); ++i) {
        if (!(lower(i, i) > 0.0) || !std::isfinite(lower(i, i))) {
            throw Error(ErrorCode::NotPositiveDefinite,
                        "pivot " + std::to_string(i) + " is not positive; increase the damping");
        }
    }
    ++factorization_counters().cholesky;
    return CholeskyFactor(std::move(lower));
}

template <class Derived>
Matrix cholesky_solve(const CholeskyFactor& factor, const Eigen::MatrixBase<Derived>& b) {
    return factor.solve(b);
}

/// Real Schur form A = U T U^T with T lower quasi-triangular.
struct SchurFactor {
    Matrix U;
    Matrix T;

    Matrix reconstruct() const { return U * T * U.transpose(); }

    /// True when rows i and i+1 form a 2x2 diagonal block of T.
    bool block_starts_at(Index i) const { return i + 1 < T.rows() && T(i, i + 1) != 0.0; }
};

namespace detail {

#ifdef QMME_HAVE_LAPACKE
// dgees on A^T (column-major, overwritten by the upper Schur form).
inline void upper_schur(const Matrix& a, Matrix& q, Matrix& s, const Tolerances&) {
    const Index m = a.rows();
    s = a.transpose();
    q.resize(m, m);
    Vector wr(m), wi(m);
    lapack_int sdim = 0;
    const lapack_int info = LAPACKE_dgees(LAPACK_COL_MAJOR, 'V', 'N', nullptr, static_cast<lapack_int>(m), s.data(),
                                          static_cast<lapack_int>(m), &sdim, wr.data(), wi.data(), q.data(),
                                          static_cast<lapack_int>(m));
    if (info > 0) throw Error(ErrorCode::NoConvergence, "dgees QR iteration failed to converge");
    if (info < 0) throw Error(ErrorCode::InvalidArgument, "dgees rejected argument " + std::to_string(-info));
}
#else
inline void upper_schur(const Matrix& a, Matrix& q, Matrix& s, const Tolerances& tol) {
    const Index m = a.rows();
    Eigen::RealSchur<Matrix> schur(m);
    schur.setMaxIterations(tol.schur_sweeps_per_row * m);
    schur.compute(a.transpose(), true);
    if (schur.info() != Eigen::Success) {
        throw Error(ErrorCode::NoConvergence, "Schur QR iteration exceeded " +
                                                  std::to_string(tol.schur_sweeps_per_row * m) + " sweeps");
    }
    q = schur.matrixU();
    s = schur.matrixT();
}
#endif

}  // namespace detail

/// Lower real Schur decomposition, obtained from the standard upper Schur
/// form of A^T: A^T = Q S Q^T implies A = Q S^T Q^T. Uses LAPACK dgees when
/// built with LAPACKE (the sweep cap then is LAPACK's own), Eigen otherwise.
inline SchurFactor real_schur_lower(const Matrix& a, const Tolerances& tol = default_tolerances()) {
    require_square(a, "real_schur_lower input");
    if (!a.allFinite()) throw Error(ErrorCode::InvalidArgument, "real_schur_lower: non-finite entries");
    const Index m = a.rows();
    SchurFactor out;
    if (m == 0) return out;
    Matrix upper;
    detail::upper_schur(a, out.U, upper, tol);
    out.T = upper.transpose();
    // Quasi-triangular structure: nothing above the first superdiagonal.
    for (Index j = 2; j < m; ++j) {
        out.T.col(j).head(j - 1).setZero();
    }
    ++factorization_counters().schur;
    return out;
}

/// Symmetric eigendecomposition A = V diag(d) V^T, d ascending.
struct SpectralFactor {
    Matrix V;
    Vector d;

    Matrix reconstruct() const { return V * d.asDiagonal() * V.transpose(); }
};

inline SpectralFactor symmetric_eigen(const Matrix& a, const Tolerances& tol = default_tolerances()) {
    require_symmetric(a, "symmetric_eigen input", tol);
    Eigen::SelfAdjointEigenSolver<Matrix> solver(a);
    if (solver.info() != Eigen::Success) {
        throw Error(ErrorCode::NoConvergence, "symmetric eigensolver did not converge");
    }
    ++factorization_counters().spectral;
    return SpectralFactor{solver.eigenvectors(), solver.eigenvalues()};
}

/// Smallest eigenvalue of a symmetric matrix (no counter bump; diagnostics only).
inline double min_eigenvalue(const Matrix& a) {
    Eigen::SelfAdjointEigenSolver<Matrix> solver(a, Eigen::EigenvaluesOnly);
    return solver.eigenvalues()(0);
}

inline double max_eigenvalue(const Matrix& a) {
    Eigen::SelfAdjointEigenSolver<Matrix> solver(a, Eigen::EigenvaluesOnly);
    return solver.eigenvalues()(a.rows() - 1);
}

inline double relative_error(const Matrix& approx, const Matrix& exact) {
    const double denom = exact.norm();
    return denom == 0.0 ? approx.norm() : (approx - exact).norm() / denom;
}

}  // namespace qmme
