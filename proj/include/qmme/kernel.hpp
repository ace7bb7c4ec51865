#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "qmme/error.hpp"
#include "qmme/linalg.hpp"
#include "qmme/random.hpp"

namespace qmme {

enum class KernelKind { RBF };

/// K(a, a') = exp(-||a - a'||^2 / (2 sigma^2)).
struct KernelSpec {
    double bandwidth = 1.0;
    KernelKind kind = KernelKind::RBF;

    void validate() const {
        if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) {
            throw Error(ErrorCode::InvalidArgument, "kernel bandwidth must be positive");
        }
    }
    double evaluate(double sq_dist) const { return std::exp(-sq_dist / (2.0 * bandwidth * bandwidth)); }
};

namespace detail {

inline unsigned worker_count(Index rows) {
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    return static_cast<unsigned>(std::min<Index>(hw, std::max<Index>(1, rows / 256)));
}

/// Rows [r0, r1) of the kernel between `a` and `b`, written into `out`.
/// Squared distances come from ||a||^2 + ||b||^2 - 2 a b^T, clamped at 0.
inline void kernel_row_block(const Matrix& a, const Matrix& b, const Vector& a_sq, const Vector& b_sq,
                             const KernelSpec& spec, Index r0, Index r1, Matrix& out) {
    const Index rows = r1 - r0;
    Matrix block = -2.0 * (a.middleRows(r0, rows) * b.transpose());
    block.colwise() += a_sq.segment(r0, rows);
    block.rowwise() += b_sq.transpose();
    const double scale = -1.0 / (2.0 * spec.bandwidth * spec.bandwidth);
    out.middleRows(r0, rows) = (block.array().max(0.0) * scale).exp().matrix();
}

/// Kernel matrix between rows of `a` and rows of `b`, parallel over fixed
/// 256-row blocks so the result does not depend on the thread count.
inline Matrix kernel_blocks(const Matrix& a, const Matrix& b, const KernelSpec& spec) {
    if (a.cols() != b.cols()) {
        throw Error(ErrorCode::DimensionMismatch, "kernel inputs have different feature counts");
    }
    constexpr Index kBlock = 256;
    const Vector a_sq = a.rowwise().squaredNorm();
    const Vector b_sq = b.rowwise().squaredNorm();
    Matrix out(a.rows(), b.rows());
    const Index n_blocks = (a.rows() + kBlock - 1) / kBlock;
    const unsigned workers = worker_count(a.rows());
    auto run = [&](unsigned w) {
        for (Index blk = w; blk < n_blocks; blk += workers) {
            const Index r0 = blk * kBlock;
            kernel_row_block(a, b, a_sq, b_sq, spec, r0, std::min(a.rows(), r0 + kBlock), out);
        }
    };
    if (workers <= 1) {
        run(0);
    } else {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(run, w);
    }
    return out;
}

}  // namespace detail

/// Symmetric n x n Gram matrix with unit diagonal.
inline Matrix gram_matrix(const Matrix& data, const KernelSpec& spec) {
    spec.validate();
    if (!data.allFinite()) throw Error(ErrorCode::InvalidArgument, "gram_matrix: non-finite data");
    Matrix k = detail::kernel_blocks(data, data, spec);
    const Index n = k.rows();
    for (Index j = 0; j < n; ++j) {
        k(j, j) = 1.0;
        // mirror the upper triangle so K is exactly symmetric
        k.row(j).head(j) = k.col(j).head(j).transpose();
    }
    return k;
}

/// Kernel between new points (rows of `query`) and reference points.
inline Matrix cross_kernel(const Matrix& query, const Matrix& reference, const KernelSpec& spec) {
    spec.validate();
    return detail::kernel_blocks(query, reference, spec);
}

inline Matrix select_rows(const Matrix& data, std::span<const Index> rows) {
    Matrix out(static_cast<Index>(rows.size()), data.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = data.row(rows[i]);
    return out;
}

/// K G^T computed directly from the data, without materializing K.
inline Matrix kernel_columns(const Matrix& data, std::span<const Index> rows, const KernelSpec& spec) {
    spec.validate();
    Matrix kgt = detail::kernel_blocks(data, select_rows(data, rows), spec);
    for (std::size_t j = 0; j < rows.size(); ++j) kgt(rows[j], static_cast<Index>(j)) = 1.0;
    return kgt;
}

enum class SketchStrategy { UniformRows, StratifiedRows };

struct SketchSpec {
    Index m = 1;
    SketchStrategy strategy = SketchStrategy::UniformRows;
    std::uint64_t seed = 0;
};

/**
 * Row indices defining a row-selection sketch G (rows of the n x n identity).
 *
 * Uniform: m distinct indices without replacement. Stratified: per-class
 * counts proportional to class frequencies with largest-remainder rounding.
 * A class with fewer members than its allocation contributes all of its
 * members and the deficit is spread round-robin over classes with spare
 * members; a message is appended to `warnings` when that happens.
 */
inline std::vector<Index> make_sketch(Index n, std::optional<std::span<const int>> labels,
                                      const SketchSpec& spec,
                                      std::vector<std::string>* warnings = nullptr) {
    if (spec.m < 1 || spec.m > n) {
        throw Error(ErrorCode::InvalidArgument,
                    "sketch dimension " + std::to_string(spec.m) + " outside [1, " +
                        std::to_string(n) + "]");
    }
    Rng rng(spec.seed, 0x534b4554);
    if (spec.strategy == SketchStrategy::UniformRows) {
        std::vector<Index> all(static_cast<std::size_t>(n));
        std::iota(all.begin(), all.end(), Index{0});
        return rng.sample_without_replacement(std::move(all), static_cast<std::size_t>(spec.m));
    }

    if (!labels || static_cast<Index>(labels->size()) != n) {
        throw Error(ErrorCode::InvalidArgument, "stratified sketch requires one label per row");
    }
    std::map<int, std::vector<Index>> members;
    for (Index i = 0; i < n; ++i) members[(*labels)[static_cast<std::size_t>(i)]].push_back(i);

    struct Stratum {
        int label;
        Index size;
        Index count;
        double remainder;
    };
    std::vector<Stratum> strata;
    Index assigned = 0;
    for (const auto& [label, rows] : members) {
        const double exact = static_cast<double>(spec.m) * static_cast<double>(rows.size()) /
                             static_cast<double>(n);
        const auto base = static_cast<Index>(std::floor(exact));
        strata.push_back({label, static_cast<Index>(rows.size()), base, exact - static_cast<double>(base)});
        assigned += base;
    }
    // largest remainder; ties go to the smaller label
    std::vector<std::size_t> order(strata.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return strata[a].remainder > strata[b].remainder;
    });
    for (std::size_t r = 0; assigned < spec.m; ++r, ++assigned) ++strata[order[r % order.size()]].count;

    Index deficit = 0;
    for (auto& s : strata) {
        if (s.count > s.size) {
            if (warnings) {
                warnings->push_back("class " + std::to_string(s.label) + " has " +
                                    std::to_string(s.size) + " rows but was allocated " +
                                    std::to_string(s.count) + "; reallocating the deficit");
            }
            deficit += s.count - s.size;
            s.count = s.size;
        }
    }
    while (deficit > 0) {
        bool progressed = false;
        for (auto& s : strata) {
            if (deficit == 0) break;
            if (s.count < s.size) {
                ++s.count;
                --deficit;
                progressed = true;
            }
        }
        if (!progressed) break;  // unreachable while m <= n
    }

    std::vector<Index> out;
    out.reserve(static_cast<std::size_t>(spec.m));
    for (const auto& s : strata) {
        auto picked = rng.sample_without_replacement(members[s.label], static_cast<std::size_t>(s.count));
        out.insert(out.end(), picked.begin(), picked.end());
    }
    return out;
}

/// Sketched kernel blocks for min_x sum_i l(b_i, (KG^T x)_i) + lambda/2 x^T GKG^T x.
struct SketchedBlocks {
    Matrix KGt;    // n x m
    Matrix GKGt;   // m x m
    Matrix GK2Gt;  // m x m, (KG^T)^T (KG^T)
    double delta = 0.0;

    Index n() const { return KGt.rows(); }
    Index m() const { return KGt.cols(); }
};

inline Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }

/// Blocks from an already computed K G^T and the sketch rows.
inline SketchedBlocks assemble_blocks_from_columns(Matrix kgt, std::span<const Index> rows, double delta) {
    if (!(delta >= 0.0)) throw Error(ErrorCode::InvalidArgument, "delta must be non-negative");
    if (kgt.cols() != static_cast<Index>(rows.size())) {
        throw Error(ErrorCode::DimensionMismatch, "K G^T column count differs from sketch size");
    }
    const Index m = kgt.cols();
    SketchedBlocks out;
    out.delta = delta;
    out.GKGt.resize(m, m);
    for (Index i = 0; i < m; ++i) {
        const Index r = rows[static_cast<std::size_t>(i)];
        if (r < 0 || r >= kgt.rows()) throw Error(ErrorCode::InvalidArgument, "sketch row out of range");
        out.GKGt.row(i) = kgt.row(r);
    }
    out.GKGt = symmetrize(out.GKGt);
    out.GK2Gt.setZero(m, m);
    out.GK2Gt.selfadjointView<Eigen::Lower>().rankUpdate(kgt.transpose());
    out.GK2Gt = out.GK2Gt.selfadjointView<Eigen::Lower>();
    out.KGt = std::move(kgt);
    return out;
}

/// Blocks for a row-selection sketch of a materialized Gram matrix.
inline SketchedBlocks assemble_blocks(const Matrix& k, std::span<const Index> rows, double delta) {
    require_square(k, "Gram matrix");
    Matrix kgt(k.rows(), static_cast<Index>(rows.size()));
    for (std::size_t j = 0; j < rows.size(); ++j) {
        const Index r = rows[j];
        if (r < 0 || r >= k.rows()) throw Error(ErrorCode::InvalidArgument, "sketch row out of range");
        kgt.col(static_cast<Index>(j)) = k.col(r);
    }
    return assemble_blocks_from_columns(std::move(kgt), rows, delta);
}

/// Blocks for an arbitrary dense sketching matrix G (m x n).
inline SketchedBlocks assemble_blocks_dense(const Matrix& k, const Matrix& g, double delta) {
    require_square(k, "Gram matrix");
    if (g.cols() != k.rows()) throw Error(ErrorCode::DimensionMismatch, "G must have n columns");
    SketchedBlocks out;
    out.delta = delta;
    out.KGt = k * g.transpose();
    out.GKGt = symmetrize(g * out.KGt);
    out.GK2Gt = symmetrize(out.KGt.transpose() * out.KGt);
    return out;
}

}  // namespace qmme
