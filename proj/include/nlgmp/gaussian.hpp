#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <map>
#include <string>
#include <utility>

#include "nlgmp/errors.hpp"
#include "nlgmp/tolerances.hpp"

namespace nlgmp {

// ---------------------------------------------------------------------------
// Solve telemetry
// ---------------------------------------------------------------------------

/// Counts of linear-system work, keyed by matrix dimension. Every Cholesky
/// factorization and every explicitly materialized inverse in the library
/// passes through here, so smoother sweeps can prove how much inversion
/// work each step performs.
struct SolveCounts {
    std::map<int, long> factorizations;
    std::map<int, long> inversions;

    long factorizations_of(int dim) const {
        auto it = factorizations.find(dim);
        return it == factorizations.end() ? 0 : it->second;
    }
    long inversions_of(int dim) const {
        auto it = inversions.find(dim);
        return it == inversions.end() ? 0 : it->second;
    }
    long total() const {
        long sum = 0;
        for (const auto& [dim, count] : factorizations) sum += count;
        for (const auto& [dim, count] : inversions) sum += count;
        return sum;
    }

    SolveCounts operator-(const SolveCounts& other) const {
        SolveCounts diff = *this;
        for (const auto& [dim, count] : other.factorizations) diff.factorizations[dim] -= count;
        for (const auto& [dim, count] : other.inversions) diff.inversions[dim] -= count;
        return diff;
    }
};

inline SolveCounts& solve_counters() {
    thread_local SolveCounts counters;
    return counters;
}

namespace detail {
inline void count_factorization(Eigen::Index dim) {
    ++solve_counters().factorizations[static_cast<int>(dim)];
}
inline void count_inversion(Eigen::Index dim) {
    ++solve_counters().inversions[static_cast<int>(dim)];
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Matrix helpers
// ---------------------------------------------------------------------------

inline Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& a) {
    return 0.5 * (a + a.transpose());
}

/// Largest absolute deviation from symmetry, relative to the largest entry.
inline double relative_asymmetry(const Eigen::MatrixXd& a) {
    const double scale = a.cwiseAbs().maxCoeff();
    if (scale == 0.0) return 0.0;
    return (a - a.transpose().eval()).cwiseAbs().maxCoeff() / scale;
}

inline void require_symmetric(const Eigen::MatrixXd& a, const std::string& what) {
    if (a.rows() != a.cols())
        throw DimensionError(what + " is not square (" + std::to_string(a.rows()) + "x" +
                             std::to_string(a.cols()) + ")");
    if (relative_asymmetry(a) > tolerances().scaled_symmetry())
        throw NotPsdError(what + " is not symmetric within tolerance");
}

/// Cholesky factor of a symmetric PSD matrix, lower triangular.
///
/// Returns L with L*L^T = m + jitter*I. The jitter starts at zero and
/// escalates through {1e-12, 1e-10, 1e-8} * trace(m)/n until the
/// factorization succeeds; a matrix that resists the full ladder is
/// rejected as not PSD. The all-zero matrix factors to zero directly.
inline Eigen::MatrixXd chol_psd(const Eigen::MatrixXd& m) {
    require_symmetric(m, "chol_psd input");
    const Eigen::Index n = m.rows();
    const Eigen::MatrixXd a = symmetrize(m);
    if (a.cwiseAbs().maxCoeff() == 0.0) return Eigen::MatrixXd::Zero(n, n);

    const double base = a.trace() / static_cast<double>(n);
    const double ladder[] = {0.0, 1e-12 * base, 1e-10 * base, 1e-8 * base};
    for (double jitter : ladder) {
        Eigen::LLT<Eigen::MatrixXd> llt(a + jitter * Eigen::MatrixXd::Identity(n, n));
        if (llt.info() == Eigen::Success) {
            detail::count_factorization(n);
            return llt.matrixL();
        }
    }
    throw NotPsdError("matrix is not positive semidefinite (jitter ladder exhausted)");
}

namespace detail {

/// Strict SPD factorization for solves whose contract forbids jitter repair.
inline Eigen::LLT<Eigen::MatrixXd> strict_spd_factor(const Eigen::MatrixXd& m,
                                                     const std::string& what) {
    require_symmetric(m, what);
    Eigen::LLT<Eigen::MatrixXd> llt(symmetrize(m));
    if (llt.info() != Eigen::Success)
        throw ConditioningError(what + " is singular or indefinite");
    if (llt.rcond() < tolerances().scaled_rcond_min())
        throw ConditioningError(what + " is too ill-conditioned to invert");
    count_factorization(m.rows());
    return llt;
}

/// Explicit inverse from an existing factorization; counted as an inversion.
inline Eigen::MatrixXd inverse_from_factor(const Eigen::LLT<Eigen::MatrixXd>& llt,
                                           Eigen::Index n) {
    count_inversion(n);
    return llt.solve(Eigen::MatrixXd::Identity(n, n));
}

/// Inverse of a PSD matrix through its (possibly jittered) Cholesky factor.
inline Eigen::MatrixXd inverse_of_psd(const Eigen::MatrixXd& m, const std::string& what) {
    const Eigen::MatrixXd lower = chol_psd(m);
    const Eigen::Index n = lower.rows();
    for (Eigen::Index i = 0; i < n; ++i)
        if (lower(i, i) <= 0.0) throw ConditioningError(what + " is singular");
    count_inversion(n);
    const Eigen::MatrixXd linv =
        lower.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(n, n));
    return symmetrize(linv.transpose() * linv);
}

}  // namespace detail

/// Clamp eigenvalues of a nearly-PSD symmetric matrix to zero.
///
/// Negative eigenvalues no worse than -psd_clip * ||a|| are clipped; a
/// larger violation throws NotPsdError mentioning `what`. Matrices that
/// are already PSD are returned symmetrized but otherwise untouched.
inline Eigen::MatrixXd psd_clip(const Eigen::MatrixXd& a, const std::string& what) {
    const Eigen::MatrixXd sym = symmetrize(a);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
    if (eig.info() != Eigen::Success) throw NotPsdError(what + ": eigendecomposition failed");
    const Eigen::VectorXd& values = eig.eigenvalues();
    const double norm = values.cwiseAbs().maxCoeff();
    const double min_eig = values.minCoeff();
    if (min_eig >= 0.0) return sym;
    if (min_eig < -tolerances().scaled_psd_clip() * norm)
        throw NotPsdError(what + " is indefinite beyond the clipping threshold (min eigenvalue " +
                          std::to_string(min_eig) + ")");
    return symmetrize(eig.eigenvectors() * values.cwiseMax(0.0).asDiagonal() *
                      eig.eigenvectors().transpose());
}

// ---------------------------------------------------------------------------
// Message types
// ---------------------------------------------------------------------------

/// A Gaussian message or marginal in mean-covariance form.
///
/// A vacuous ("no information") message is represented by an explicit flag
/// instead of an infinite covariance, so combining rules degenerate cleanly
/// without non-finite arithmetic.
struct GaussianMoments {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;

    GaussianMoments() = default;
    GaussianMoments(Eigen::VectorXd mean_in, Eigen::MatrixXd cov_in)
        : mean(std::move(mean_in)), cov(std::move(cov_in)) {
        if (cov.rows() != cov.cols() || cov.rows() != mean.size())
            throw DimensionError("GaussianMoments: mean length " + std::to_string(mean.size()) +
                                 " does not match covariance " + std::to_string(cov.rows()) + "x" +
                                 std::to_string(cov.cols()));
    }

    static GaussianMoments vacuous(Eigen::Index dim) {
        GaussianMoments g(Eigen::VectorXd::Zero(dim), Eigen::MatrixXd::Zero(dim, dim));
        g.vacuous_ = true;
        return g;
    }

    Eigen::Index dim() const { return mean.size(); }
    bool is_vacuous() const { return vacuous_; }

    /// Check the type invariants: symmetry and positive semidefiniteness
    /// within the configured tolerances. Throws on violation.
    void validate() const {
        if (vacuous_) return;
        require_symmetric(cov, "covariance");
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(symmetrize(cov));
        const double norm = eig.eigenvalues().cwiseAbs().maxCoeff();
        if (eig.eigenvalues().minCoeff() < -tolerances().scaled_psd_eig() * norm)
            throw NotPsdError("covariance is not positive semidefinite");
    }

   private:
    bool vacuous_ = false;
};

/// A backward-pass message in the dual (xi~, W~) parameterization.
/// The all-zero message carries no downstream information.
struct DualMessage {
    Eigen::VectorXd xi_tilde;
    Eigen::MatrixXd W_tilde;

    DualMessage() = default;
    DualMessage(Eigen::VectorXd xi, Eigen::MatrixXd w)
        : xi_tilde(std::move(xi)), W_tilde(std::move(w)) {
        if (W_tilde.rows() != W_tilde.cols() || W_tilde.rows() != xi_tilde.size())
            throw DimensionError("DualMessage: dimensions disagree");
    }

    static DualMessage zero(Eigen::Index dim) {
        return DualMessage(Eigen::VectorXd::Zero(dim), Eigen::MatrixXd::Zero(dim, dim));
    }

    Eigen::Index dim() const { return xi_tilde.size(); }
    bool is_zero() const {
        return xi_tilde.isZero(0.0) && W_tilde.isZero(0.0);
    }

    void validate() const {
        require_symmetric(W_tilde, "W_tilde");
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(symmetrize(W_tilde));
        const double norm = eig.eigenvalues().cwiseAbs().maxCoeff();
        if (norm == 0.0) return;
        if (eig.eigenvalues().minCoeff() < -tolerances().scaled_psd_eig() * norm)
            throw NotPsdError("W_tilde is not positive semidefinite");
    }
};

/// A joint Gaussian over a pair of vectors (x, y) with explicit cross block.
struct JointGaussian {
    Eigen::VectorXd mean_x;
    Eigen::VectorXd mean_y;
    Eigen::MatrixXd cov_x;
    Eigen::MatrixXd cov_y;
    Eigen::MatrixXd cross;  // Cov(x, y), n x p

    /// The stacked covariance [[cov_x, cross], [cross^T, cov_y]].
    Eigen::MatrixXd stacked() const {
        const Eigen::Index n = mean_x.size(), p = mean_y.size();
        Eigen::MatrixXd block(n + p, n + p);
        block.topLeftCorner(n, n) = cov_x;
        block.topRightCorner(n, p) = cross;
        block.bottomLeftCorner(p, n) = cross.transpose();
        block.bottomRightCorner(p, p) = cov_y;
        return block;
    }

    void validate() const {
        const Eigen::MatrixXd block = stacked();
        require_symmetric(block, "stacked joint covariance");
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(symmetrize(block));
        const double norm = eig.eigenvalues().cwiseAbs().maxCoeff();
        if (norm == 0.0) return;
        if (eig.eigenvalues().minCoeff() < -tolerances().scaled_psd_eig() * norm)
            throw NotPsdError("stacked joint covariance is not positive semidefinite");
    }
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

namespace detail {
inline void require_same_dim(const GaussianMoments& a, const GaussianMoments& b,
                             const std::string& what) {
    if (a.dim() != b.dim())
        throw DimensionError(what + ": dimensions disagree (" + std::to_string(a.dim()) + " vs " +
                             std::to_string(b.dim()) + ")");
}
}  // namespace detail

/// Combine a forward and a backward message into the marginal.
///
/// Computes V = (V_fwd^-1 + V_bwd^-1)^-1 and the precision-weighted mean
/// through a single factorization of (V_fwd + V_bwd); neither operand is
/// inverted on its own. A vacuous operand passes the other side through.
inline GaussianMoments combine_forward_backward(const GaussianMoments& fwd,
                                                const GaussianMoments& bwd) {
    detail::require_same_dim(fwd, bwd, "combine_forward_backward");
    if (bwd.is_vacuous()) return fwd;
    if (fwd.is_vacuous()) return bwd;

    const auto llt = detail::strict_spd_factor(fwd.cov + bwd.cov, "fwd.cov + bwd.cov");
    // m = m_fwd + V_fwd (V_fwd + V_bwd)^-1 (m_bwd - m_fwd)
    const Eigen::VectorXd mean = fwd.mean + fwd.cov * llt.solve(bwd.mean - fwd.mean);
    // V = V_fwd - V_fwd (V_fwd + V_bwd)^-1 V_fwd
    const Eigen::MatrixXd cov = symmetrize(fwd.cov - fwd.cov * llt.solve(fwd.cov));
    return GaussianMoments(mean, cov);
}

/// Convert a forward/backward message pair into the dual parameterization:
/// W~ = (V_fwd + V_bwd)^-1, xi~ = W~ (m_fwd - m_bwd).
/// A vacuous operand yields the zero (no-information) dual message.
inline DualMessage to_dual(const GaussianMoments& fwd, const GaussianMoments& bwd) {
    detail::require_same_dim(fwd, bwd, "to_dual");
    if (fwd.is_vacuous() || bwd.is_vacuous()) return DualMessage::zero(fwd.dim());

    const auto llt = detail::strict_spd_factor(fwd.cov + bwd.cov, "fwd.cov + bwd.cov");
    const Eigen::MatrixXd w = symmetrize(detail::inverse_from_factor(llt, fwd.dim()));
    const Eigen::VectorXd xi = llt.solve(fwd.mean - bwd.mean);
    return DualMessage(xi, w);
}

/// Recover the marginal from a forward message and a dual backward message:
/// m = m_fwd - V_fwd xi~, V = V_fwd - V_fwd W~ V_fwd.
/// Inversion-free; small indefiniteness from rounding is clipped to PSD.
inline GaussianMoments marginal_from_dual(const GaussianMoments& fwd, const DualMessage& dual) {
    if (fwd.dim() != dual.dim())
        throw DimensionError("marginal_from_dual: dimensions disagree");
    if (fwd.is_vacuous())
        throw ParamError("marginal_from_dual: forward message must carry information");
    if (dual.is_zero()) return fwd;

    const Eigen::VectorXd mean = fwd.mean - fwd.cov * dual.xi_tilde;
    const Eigen::MatrixXd cov =
        psd_clip(fwd.cov - fwd.cov * dual.W_tilde * fwd.cov, "marginal covariance");
    return GaussianMoments(mean, cov);
}

}  // namespace nlgmp
