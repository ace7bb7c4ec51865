#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "qmme/linalg.hpp"

using namespace qmme;

TEST(Cholesky, TwoByTwoFactor) {
    Matrix a(2, 2);
    a << 4, 2, 2, 3;
    const auto f = cholesky(a);
    Matrix expected(2, 2);
    expected << 2, 0, 1, std::sqrt(2.0);
    EXPECT_LT((f.lower() - expected).norm(), 1e-14);
    EXPECT_LT((f.reconstruct() - a).norm(), 1e-14);
}

TEST(Cholesky, SolveMatchesLu) {
    std::mt19937_64 gen(1);
    const Matrix a = oracle::random_spd(12, gen);
    const Matrix b = oracle::random_matrix(12, 3, gen);
    const auto f = cholesky(a);
    EXPECT_LT(oracle::rel(f.solve(b), a.fullPivLu().solve(b)), 1e-12);
}

TEST(Cholesky, RejectsIndefinite) {
    Matrix a(2, 2);
    a << 1, 2, 2, 1;
    try {
        cholesky(a);
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NotPositiveDefinite);
    }
}

TEST(Cholesky, RejectsAsymmetric) {
    Matrix a(2, 2);
    a << 4, 1, 0, 3;
    try {
        cholesky(a);
        FAIL() << "expected an error";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NotSymmetric);
    }
}

TEST(Cholesky, SolveShapeChecked) {
    const auto f = cholesky(Matrix::Identity(3, 3));
    EXPECT_THROW(f.solve(Matrix::Ones(2, 1)), Error);
}

TEST(Schur, RotationGivesOneTwoByTwoBlock) {
    Matrix a(2, 2);
    a << 0, -1, 1, 0;
    const auto s = real_schur_lower(a);
    EXPECT_TRUE(s.block_starts_at(0));
    EXPECT_LT((s.reconstruct() - a).norm(), 1e-13);
    EXPECT_LT((s.U.transpose() * s.U - Matrix::Identity(2, 2)).norm(), 1e-13);
}

TEST(Schur, LowerQuasiTriangular) {
    std::mt19937_64 gen(2);
    for (Index m : {1, 3, 7, 20}) {
        const Matrix a = oracle::random_matrix(m, m, gen);
        const auto s = real_schur_lower(a);
        EXPECT_LT(oracle::rel(s.reconstruct(), a), 1e-12);
        EXPECT_LT((s.U.transpose() * s.U - Matrix::Identity(m, m)).norm(), 1e-12);
        for (Index i = 0; i < m; ++i) {
            for (Index j = i + 2; j < m; ++j) EXPECT_EQ(s.T(i, j), 0.0);
        }
        // no two consecutive superdiagonal entries
        for (Index i = 0; i + 2 < m; ++i) EXPECT_FALSE(s.T(i, i + 1) != 0.0 && s.T(i + 1, i + 2) != 0.0);
    }
}

TEST(Schur, EigenvaluesMatchCharacteristicPolynomial) {
    std::mt19937_64 gen(3);
    for (Index m = 1; m <= 4; ++m) {
        const Matrix a = oracle::random_matrix(m, m, gen);
        const auto s = real_schur_lower(a);
        std::vector<std::complex<double>> got;
        Index i = 0;
        while (i < m) {
            if (s.block_starts_at(i)) {
                const double tr = s.T(i, i) + s.T(i + 1, i + 1);
                const double det = s.T(i, i) * s.T(i + 1, i + 1) - s.T(i, i + 1) * s.T(i + 1, i);
                const std::complex<double> disc = std::sqrt(std::complex<double>(tr * tr / 4 - det));
                got.push_back(tr / 2 + disc);
                got.push_back(tr / 2 - disc);
                i += 2;
            } else {
                got.emplace_back(s.T(i, i), 0.0);
                i += 1;
            }
        }
        auto want = oracle::companion_eigenvalues(a);
        oracle::sort_complex(got);
        oracle::sort_complex(want);
        ASSERT_EQ(got.size(), want.size());
        for (std::size_t k = 0; k < got.size(); ++k) EXPECT_LT(std::abs(got[k] - want[k]), 1e-8);
    }
}

TEST(Schur, RejectsNonFinite) {
    Matrix a = Matrix::Identity(2, 2);
    a(0, 1) = std::nan("");
    EXPECT_THROW(real_schur_lower(a), Error);
}

TEST(Spectral, ReconstructsAndSortsAscending) {
    std::mt19937_64 gen(4);
    const Matrix a = oracle::random_spd(6, gen);
    const auto s = symmetric_eigen(a);
    EXPECT_LT(oracle::rel(s.reconstruct(), a), 1e-12);
    for (Index i = 1; i < 6; ++i) EXPECT_LE(s.d(i - 1), s.d(i));
}

TEST(Counters, CountEachFactorization) {
    factorization_counters().reset();
    cholesky(Matrix::Identity(3, 3));
    real_schur_lower(Matrix::Identity(3, 3));
    symmetric_eigen(Matrix::Identity(3, 3));
    min_eigenvalue(Matrix::Identity(3, 3));
    EXPECT_EQ(factorization_counters().cholesky, 1);
    EXPECT_EQ(factorization_counters().schur, 1);
    EXPECT_EQ(factorization_counters().spectral, 1);
}
