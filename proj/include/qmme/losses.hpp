#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qmme/error.hpp"
#include "qmme/kernel.hpp"
#include "qmme/linalg.hpp"
#include "qmme/sylvester.hpp"

namespace qmme {

inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

/// Standard normal CDF through erfc, accurate in both tails.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Per-observation loss value and its first two derivatives with respect to
/// the linear predictor eta.
struct LossTerms {
    double value;
    double d1;
    double d2;
};

struct LossDerivatives {
    double first;
    double second;
};

/// Check loss convolved with a Gaussian kernel of bandwidth h.
struct SmoothedQuantileLoss {
    double tau = 0.5;
    double h = 0.25;

    void validate() const {
        if (!(tau > 0.0 && tau < 1.0)) throw Error(ErrorCode::InvalidArgument, "tau must lie in (0, 1)");
        if (!(h > 0.0)) throw Error(ErrorCode::InvalidArgument, "bandwidth h must be positive");
    }

    double value(double u) const {
        return h / std::sqrt(2.0 * std::numbers::pi) * std::exp(-u * u / (2.0 * h * h)) +
               0.5 * u * (1.0 - 2.0 * normal_cdf(-u / h)) + (tau - 0.5) * u;
    }

    /// l'(u) = Phi(u/h) - (1 - tau), l''(u) = phi(u/h) / h.
    LossDerivatives derivs(double u) const {
        return {normal_cdf(u / h) - (1.0 - tau), normal_pdf(u / h) / h};
    }

    /// sup_u l''(u) = 1 / (sqrt(2 pi) h).
    double curvature() const { return 1.0 / (std::sqrt(2.0 * std::numbers::pi) * h); }

    /// Loss on the residual r = b - eta.
    LossTerms eval(double b, double eta) const {
        const double r = b - eta;
        const auto d = derivs(r);
        return {value(r), -d.first, d.second};
    }
};

inline double sq_loss_value(double u, double tau, double h) { return SmoothedQuantileLoss{tau, h}.value(u); }

inline LossDerivatives sq_loss_derivs(double u, double tau, double h) {
    return SmoothedQuantileLoss{tau, h}.derivs(u);
}

inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// Negative Bernoulli log-likelihood with logit link, b in {0, 1}.
struct LogisticLoss {
    void validate() const {}
    double curvature() const { return 0.25; }  // sup p (1 - p)

    LossTerms eval(double b, double eta) const {
        const double p = sigmoid(eta);
        return {softplus(eta) - b * eta, p - b, p * (1.0 - p)};
    }
};

/**
 * f(x) = sum_i l(b_i, (KG^T x)_i) + lambda/2 x^T GKG^T x for a loss acting
 * on a scalar linear predictor (smoothed quantile, logistic).
 */
template <class Loss>
class GlmProblem {
public:
    using point_type = Vector;

    GlmProblem(std::shared_ptr<const SketchedBlocks> blocks, Vector response, double lambda, Loss loss = {})
        : blocks_(std::move(blocks)), response_(std::move(response)), lambda_(lambda), loss_(loss) {
        if (!blocks_) throw Error(ErrorCode::InvalidArgument, "null sketched blocks");
        loss_.validate();
        if (response_.size() != blocks_->n()) {
            throw Error(ErrorCode::ShapeMismatch, "response length " + std::to_string(response_.size()) +
                                                      " differs from n = " + std::to_string(blocks_->n()));
        }
        if (!(lambda_ >= 0.0)) throw Error(ErrorCode::InvalidArgument, "lambda must be non-negative");
    }

    const SketchedBlocks& blocks() const { return *blocks_; }
    std::shared_ptr<const SketchedBlocks> shared_blocks() const { return blocks_; }
    const Vector& response() const { return response_; }
    const Loss& loss() const { return loss_; }
    double lambda() const { return lambda_; }
    Index dim() const { return blocks_->m(); }
    Vector zero_point() const { return Vector::Zero(dim()); }

    double value(const Vector& x) const {
        check(x);
        return value_from(x, predictor(x));
    }

    Vector gradient(const Vector& x) const { return value_and_gradient(x).second; }

    std::pair<double, Vector> value_and_gradient(const Vector& x) const {
        check(x);
        const Vector eta = predictor(x);
        Vector d1(eta.size());
        const double total = loss_sum(eta, &d1);
        const Vector ridge = blocks_->GKGt * x;
        Vector g = blocks_->KGt.transpose() * d1;
        g += lambda_ * ridge;
        return {total + 0.5 * lambda_ * x.dot(ridge), std::move(g)};
    }

    /// eta = KG^T x. f and grad f depend on the data only through eta.
    Vector predictor(const Vector& x) const { return blocks_->KGt * x; }

    double value_from(const Vector& x, const Vector& eta) const {
        return loss_sum(eta, nullptr) + 0.5 * lambda_ * x.dot(blocks_->GKGt * x);
    }

    /// Gradients at two points from their predictors with one pass over KG^T.
    std::pair<Vector, Vector> gradients_from(const Vector& x1, const Vector& eta1, const Vector& x2,
                                             const Vector& eta2) const {
        Matrix d1(eta1.size(), 2);
        Vector col(eta1.size());
        loss_sum(eta1, &col);
        d1.col(0) = col;
        loss_sum(eta2, &col);
        d1.col(1) = col;
        Matrix g = blocks_->KGt.transpose() * d1;
        Matrix xs(x1.size(), 2);
        xs << x1, x2;
        g.noalias() += lambda_ * (blocks_->GKGt * xs);
        return {g.col(0), g.col(1)};
    }

    /// GK W KG^T + lambda GKG^T with W = diag(l''), an n x n weight.
    Matrix exact_hessian(const Vector& x) const {
        check(x);
        const Vector eta = blocks_->KGt * x;
        Vector w(eta.size());
        for (Index i = 0; i < eta.size(); ++i) w(i) = loss_.eval(response_(i), eta(i)).d2;
        const Matrix weighted = blocks_->KGt.array().colwise() * w.array().sqrt();
        Matrix h = lambda_ * blocks_->GKGt;
        h.template selfadjointView<Eigen::Lower>().rankUpdate(weighted.transpose());
        return h.template selfadjointView<Eigen::Lower>();
    }

    /// c GK^2G^T + lambda GKG^T + delta I, c = sup l''.
    Matrix curvature_matrix() const {
        Matrix h = loss_.curvature() * blocks_->GK2Gt + lambda_ * blocks_->GKGt;
        h.diagonal().array() += blocks_->delta;
        return symmetrize(h);
    }

private:
    double loss_sum(const Vector& eta, Vector* d1) const {
        double total = 0.0;
        for (Index i = 0; i < eta.size(); ++i) {
            const auto t = loss_.eval(response_(i), eta(i));
            total += t.value;
            if (d1) (*d1)(i) = t.d1;
        }
        return total;
    }

    void check(const Vector& x) const {
        if (x.size() != blocks_->m()) {
            throw Error(ErrorCode::ShapeMismatch, "coefficient length " + std::to_string(x.size()) +
                                                      " differs from m = " + std::to_string(blocks_->m()));
        }
    }

    std::shared_ptr<const SketchedBlocks> blocks_;
    Vector response_;
    double lambda_;
    Loss loss_;
};

using QuantileProblem = GlmProblem<SmoothedQuantileLoss>;
using LogisticProblem = GlmProblem<LogisticLoss>;

// ---------------------------------------------------------------------------
// Multinomial

enum class Parameterization { Standard, Full };

inline const char* to_string(Parameterization p) { return p == Parameterization::Standard ? "standard" : "full"; }

/// Standard: q-1 coefficient columns, class q is the reference (logit 0).
/// Full: q columns, shift invariant along 1_q.
struct MultinomialSpec {
    int q = 3;
    Parameterization param = Parameterization::Standard;

    void validate() const {
        if (q < 2) throw Error(ErrorCode::InvalidArgument, "multinomial needs q >= 2");
    }
    Index width() const { return param == Parameterization::Standard ? q - 1 : q; }

    /// Curvature factor E with Lambda_p - p p^T <= E (restricted to the
    /// coefficient columns): E2 = 1/2 (I - 1 1^T / q) for Standard,
    /// E1 = 1/2 (I - 1 1^T / (q + 1)) for Full. Both invert to 2 (I + 1 1^T).
    Matrix bound() const {
        const Index w = width();
        const double c = param == Parameterization::Standard ? 1.0 / q : 1.0 / (q + 1);
        return 0.5 * (Matrix::Identity(w, w) - c * Matrix::Ones(w, w));
    }
};

class MultinomialProblem {
public:
    using point_type = Matrix;

    /// `labels` are 0-based class ids in [0, q).
    MultinomialProblem(std::shared_ptr<const SketchedBlocks> blocks, std::vector<int> labels, double lambda,
                       MultinomialSpec spec)
        : blocks_(std::move(blocks)), labels_(std::move(labels)), lambda_(lambda), spec_(spec) {
        if (!blocks_) throw Error(ErrorCode::InvalidArgument, "null sketched blocks");
        spec_.validate();
        if (static_cast<Index>(labels_.size()) != blocks_->n()) {
            throw Error(ErrorCode::ShapeMismatch, "label count differs from n");
        }
        for (int b : labels_) {
            if (b < 0 || b >= spec_.q) throw Error(ErrorCode::InvalidArgument, "label outside [0, q)");
        }
        if (!(lambda_ >= 0.0)) throw Error(ErrorCode::InvalidArgument, "lambda must be non-negative");
    }

    const SketchedBlocks& blocks() const { return *blocks_; }
    std::shared_ptr<const SketchedBlocks> shared_blocks() const { return blocks_; }
    const std::vector<int>& labels() const { return labels_; }
    const MultinomialSpec& spec() const { return spec_; }
    double lambda() const { return lambda_; }
    Index width() const { return spec_.width(); }
    Matrix zero_point() const { return Matrix::Zero(blocks_->m(), width()); }

    /// Class probabilities (n x q) for logits over the coefficient columns.
    /// Uses a max shift; in the Standard model the reference logit 0 takes
    /// part in the shift.
    Matrix probabilities(const Matrix& eta) const { return class_probabilities(eta, spec_); }

    static Matrix class_probabilities(const Matrix& eta, const MultinomialSpec& spec) {
        const Index n = eta.rows(), w = eta.cols();
        const bool standard = spec.param == Parameterization::Standard;
        Matrix p(n, spec.q);
        for (Index i = 0; i < n; ++i) {
            double shift = eta.row(i).maxCoeff();
            if (standard) shift = std::max(shift, 0.0);
            double sum = 0.0;
            for (Index j = 0; j < w; ++j) {
                p(i, j) = std::exp(eta(i, j) - shift);
                sum += p(i, j);
            }
            if (standard) {
                p(i, w) = std::exp(-shift);
                sum += p(i, w);
            }
            p.row(i) /= sum;
        }
        return p;
    }

    double value(const Matrix& x) const { return evaluate_terms(x, false).first; }

    Matrix gradient(const Matrix& x) const { return value_and_gradient(x).second; }

    std::pair<double, Matrix> value_and_gradient(const Matrix& x) const { return evaluate_terms(x, true); }

    /// Logits over the coefficient columns, eta = KG^T x (n x width).
    Matrix predictor(const Matrix& x) const { return blocks_->KGt * x; }

    double value_from(const Matrix& x, const Matrix& eta) const {
        return loss_sum(eta, nullptr) + 0.5 * lambda_ * (x.array() * (blocks_->GKGt * x).array()).sum();
    }

    /// Gradients at two points from their logits with one pass over KG^T.
    std::pair<Matrix, Matrix> gradients_from(const Matrix& x1, const Matrix& eta1, const Matrix& x2,
                                             const Matrix& eta2) const {
        const Index n = blocks_->n(), m = blocks_->m(), w = width();
        Matrix residual(n, 2 * w), part(n, w);
        loss_sum(eta1, &part);
        residual.leftCols(w) = part;
        loss_sum(eta2, &part);
        residual.rightCols(w) = part;
        Matrix xs(m, 2 * w);
        xs << x1, x2;
        Matrix g = blocks_->KGt.transpose() * residual;
        g.noalias() += lambda_ * (blocks_->GKGt * xs);
        return {g.leftCols(w), g.rightCols(w)};
    }

    /**
     * sum_i (Lambda_{p_i} - p_i p_i^T) (x) k_i k_i^T + lambda I (x) GKG^T in
     * column-major vec ordering (index j * m + a).
     *
     * Each sample's term is the sum of outer products of the Kronecker
     * vectors L_i(:, r) (x) k_i, where L_i L_i^T = Lambda_p - p p^T with
     * L_i = Lambda^{1/2} (I - c u u^T), u = sqrt(p). The outer products are
     * accumulated in sample chunks; no Kronecker separability is used.
     */
    Matrix exact_hessian(const Matrix& x) const {
        check(x);
        const Index m = blocks_->m(), w = width(), n = blocks_->n();
        const Matrix p = probabilities(blocks_->KGt * x);
        const Index dim = m * w;
        Matrix h = Matrix::Zero(dim, dim);
        constexpr Index kChunk = 128;
        Matrix z(kChunk * w, dim);
        for (Index start = 0; start < n; start += kChunk) {
            const Index count = std::min(kChunk, n - start);
            z.setZero();
            for (Index s = 0; s < count; ++s) {
                const Index i = start + s;
                const Vector u = p.row(i).head(w).transpose().array().sqrt();
                const double t = u.squaredNorm();
                const double c = 1.0 / (1.0 + std::sqrt(std::max(0.0, 1.0 - t)));
                const auto k = blocks_->KGt.row(i);
                for (Index r = 0; r < w; ++r) {
                    for (Index j = 0; j < w; ++j) {
                        const double lij = u(j) * ((j == r ? 1.0 : 0.0) - c * u(j) * u(r));
                        if (lij != 0.0) z.row(s * w + r).segment(j * m, m) = lij * k;
                    }
                }
            }
            h.selfadjointView<Eigen::Lower>().rankUpdate(z.topRows(count * w).transpose());
        }
        h = h.selfadjointView<Eigen::Lower>();
        for (Index j = 0; j < w; ++j) h.block(j * m, j * m, m, m) += lambda_ * blocks_->GKGt;
        return h;
    }

private:
    void check(const Matrix& x) const {
        if (x.rows() != blocks_->m() || x.cols() != width()) {
            throw Error(ErrorCode::ShapeMismatch, "coefficients are " + std::to_string(x.rows()) + "x" +
                                                      std::to_string(x.cols()) + ", expected " +
                                                      std::to_string(blocks_->m()) + "x" +
                                                      std::to_string(width()));
        }
    }

    /// Sum of negative log-likelihoods; fills P - B over the coefficient
    /// columns when `residual` is given.
    double loss_sum(const Matrix& eta, Matrix* residual) const {
        const Index n = eta.rows(), w = width();
        const bool standard = spec_.param == Parameterization::Standard;
        double total = 0.0;
        for (Index i = 0; i < n; ++i) {
            double shift = eta.row(i).maxCoeff();
            if (standard) shift = std::max(shift, 0.0);
            double sum = standard ? std::exp(-shift) : 0.0;
            for (Index j = 0; j < w; ++j) sum += std::exp(eta(i, j) - shift);
            const double lse = shift + std::log(sum);
            const int b = labels_[static_cast<std::size_t>(i)];
            const double eta_b = b < w ? eta(i, b) : 0.0;
            total += lse - eta_b;
            if (residual) {
                for (Index j = 0; j < w; ++j) (*residual)(i, j) = std::exp(eta(i, j) - lse);
                if (b < w) (*residual)(i, b) -= 1.0;
            }
        }
        return total;
    }

    std::pair<double, Matrix> evaluate_terms(const Matrix& x, bool with_gradient) const {
        check(x);
        const Matrix eta = predictor(x);
        Matrix residual;
        if (with_gradient) residual.resize(eta.rows(), width());
        double total = loss_sum(eta, with_gradient ? &residual : nullptr);
        const Matrix ridge = blocks_->GKGt * x;
        total += 0.5 * lambda_ * (x.array() * ridge.array()).sum();
        if (!with_gradient) return {total, Matrix()};
        Matrix g = blocks_->KGt.transpose() * residual;
        g += lambda_ * ridge;
        return {total, std::move(g)};
    }

    std::shared_ptr<const SketchedBlocks> blocks_;
    std::vector<int> labels_;
    double lambda_;
    MultinomialSpec spec_;
};

// ---------------------------------------------------------------------------
// Curvature operators

/// Dense H with its cached Cholesky factor.
class DenseCurvature {
public:
    explicit DenseCurvature(Matrix h) : h_(std::move(h)), chol_(cholesky(h_)) {}

    const Matrix& matrix() const { return h_; }
    const CholeskyFactor& factor() const { return chol_; }

    Vector solve(const Vector& g) const { return chol_.solve(g); }
    Vector apply(const Vector& v) const { return h_ * v; }
    double norm_sq(const Vector& v) const { return v.dot(h_ * v); }

private:
    Matrix h_;
    CholeskyFactor chol_;
};

template <class Loss>
DenseCurvature curvature_bound(const GlmProblem<Loss>& problem) {
    return DenseCurvature(problem.curvature_matrix());
}

/// H = E (x) GK^2G^T + lambda I (x) GKG^T + lambda delta I, never formed;
/// solves go through a shared SylvesterPlan.
class SylvesterCurvature {
public:
    SylvesterCurvature(std::shared_ptr<const SylvesterPlan> plan, std::shared_ptr<const SketchedBlocks> blocks,
                       double lambda, Matrix bound)
        : plan_(std::move(plan)), blocks_(std::move(blocks)), lambda_(lambda), bound_(std::move(bound)) {
        if (!(lambda_ > 0.0)) {
            throw Error(ErrorCode::InvalidArgument, "Sylvester curvature requires lambda > 0");
        }
    }

    const SylvesterPlan& plan() const { return *plan_; }
    double lambda() const { return lambda_; }

    Matrix solve(const Matrix& g) const { return solve_sylvester(*plan_, lambda_, g); }

    Matrix apply(const Matrix& v) const {
        Matrix out = blocks_->GK2Gt * v * bound_;
        out += lambda_ * (blocks_->GKGt * v + plan_->delta() * v);
        return out;
    }

    double norm_sq(const Matrix& v) const { return (v.array() * apply(v).array()).sum(); }

private:
    std::shared_ptr<const SylvesterPlan> plan_;
    std::shared_ptr<const SketchedBlocks> blocks_;
    double lambda_;
    Matrix bound_;
};

/// Plan for the multinomial majorant; independent of lambda.
inline std::shared_ptr<const SylvesterPlan> make_multinomial_plan(const SketchedBlocks& blocks,
                                                                  const MultinomialSpec& spec) {
    return std::make_shared<const SylvesterPlan>(
        build_plan(blocks.GKGt, blocks.GK2Gt, blocks.delta, spec.width()));
}

inline SylvesterCurvature curvature_bound(const MultinomialProblem& problem,
                                          std::shared_ptr<const SylvesterPlan> plan) {
    return SylvesterCurvature(std::move(plan), problem.shared_blocks(), problem.lambda(),
                              problem.spec().bound());
}

inline SylvesterCurvature curvature_bound(const MultinomialProblem& problem) {
    return curvature_bound(problem, make_multinomial_plan(problem.blocks(), problem.spec()));
}

/// Dense E (x) GK^2G^T + lambda I (x) GKG^T + lambda delta I (small problems).
inline Matrix dense_curvature_matrix(const MultinomialProblem& problem) {
    const auto& b = problem.blocks();
    const Index m = b.m(), w = problem.width();
    const Matrix e = problem.spec().bound();
    Matrix h(m * w, m * w);
    for (Index j = 0; j < w; ++j) {
        for (Index l = 0; l < w; ++l) {
            h.block(j * m, l * m, m, m) = e(j, l) * b.GK2Gt;
        }
        h.block(j * m, j * m, m, m) += problem.lambda() * b.GKGt;
    }
    h.diagonal().array() += problem.lambda() * b.delta;
    return h;
}

/**
 * Binds an objective to its curvature operator so the pair satisfies
 * MajorantProblem. Holds non-owning pointers; both must outlive it.
 */
template <class Problem, class Curvature>
class Majorized {
public:
    using point_type = typename Problem::point_type;

    Majorized(const Problem& problem, const Curvature& curvature) : problem_(&problem), curvature_(&curvature) {}

    const Problem& problem() const { return *problem_; }
    const Curvature& curvature() const { return *curvature_; }

    double value(const point_type& x) const { return problem_->value(x); }
    point_type gradient(const point_type& x) const { return problem_->gradient(x); }
    std::pair<double, point_type> value_and_gradient(const point_type& x) const {
        return problem_->value_and_gradient(x);
    }
    auto predictor(const point_type& x) const
        requires requires(const Problem& p) { p.predictor(x); }
    {
        return problem_->predictor(x);
    }
    template <class Eta>
    double value_from(const point_type& x, const Eta& eta) const
        requires requires(const Problem& p) { p.value_from(x, eta); }
    {
        return problem_->value_from(x, eta);
    }
    template <class Eta>
    std::pair<point_type, point_type> gradients_from(const point_type& x1, const Eta& eta1, const point_type& x2,
                                                     const Eta& eta2) const
        requires requires(const Problem& p) { p.gradients_from(x1, eta1, x2, eta2); }
    {
        return problem_->gradients_from(x1, eta1, x2, eta2);
    }
    point_type majorant_solve(const point_type& g) const { return curvature_->solve(g); }
    double h_norm_sq(const point_type& v) const { return curvature_->norm_sq(v); }

private:
    const Problem* problem_;
    const Curvature* curvature_;
};

/**
 * lambda_min(1/2 (I - 1 1^T / q) - (Lambda_p - p p^T)) for a point p of the
 * probability simplex; non-negative when the bound holds at p.
 */
inline double bohning_bound_check(const Vector& p) {
    const Index q = p.size();
    if (q < 1 || (p.array() < -1e-12).any() || std::abs(p.sum() - 1.0) > 1e-10) {
        throw Error(ErrorCode::NotASimplexPoint, "p must be non-negative and sum to one");
    }
    Matrix gap = 0.5 * (Matrix::Identity(q, q) - Matrix::Ones(q, q) / static_cast<double>(q));
    gap -= Matrix(p.asDiagonal());
    gap += p * p.transpose();
    return min_eigenvalue(symmetrize(gap));
}

}  // namespace qmme
