#pragma once

#include <Eigen/Core>
#include <functional>
#include <string>

#include "nlgmp/errors.hpp"
#include "nlgmp/gaussian.hpp"
#include "nlgmp/quadrature.hpp"

namespace nlgmp {

/// Everything a forward sweep through a deterministic node y = f(x) leaves
/// behind for the backward passes:
///
///  - y_forward:    the propagated moments of y,
///  - cross:        Cov(x, y) under the same sigma-point set,
///  - x_precision:  the inverse of the forward x covariance, computed once
///                  here so the dual-form backward pass is inversion-free,
///  - lin:          the statistical linearization cross^T * x_precision,
///                  which makes the node behave as a linear one downstream.
struct ForwardPassResult {
    GaussianMoments y_forward;
    Eigen::MatrixXd cross;        // n x p
    Eigen::MatrixXd lin;          // p x n
    Eigen::MatrixXd x_precision;  // n x n

    /// Joint view over (x, y) for a given x-side message.
    JointGaussian joint(const GaussianMoments& x_forward) const {
        return JointGaussian{x_forward.mean, y_forward.mean, x_forward.cov, y_forward.cov, cross};
    }
};

/// Propagate a Gaussian message through y = f(x) with the given quadrature
/// rule. Moments, cross-covariance, and the cached precision/linearization
/// all come from the same sigma-point set, which keeps the implied joint
/// covariance consistent.
inline ForwardPassResult forward_pass(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
    const GaussianMoments& x_forward, const QuadratureRule& rule) {
    if (rule.dim() != x_forward.dim())
        throw DimensionError("forward_pass: rule dimension " + std::to_string(rule.dim()) +
                             " does not match input dimension " +
                             std::to_string(x_forward.dim()));

    const Eigen::Index n = x_forward.dim();
    const Eigen::Index count = rule.size();
    const Eigen::MatrixXd lower = chol_psd(x_forward.cov);
    const Eigen::MatrixXd x_points =
        (rule.points * lower.transpose()).rowwise() + x_forward.mean.transpose();

    Eigen::MatrixXd y_points;
    Eigen::Index p = 0;
    for (Eigen::Index i = 0; i < count; ++i) {
        const Eigen::VectorXd value = f(x_points.row(i).transpose());
        if (!value.allFinite())
            throw EvalError("f is non-finite at sigma point " + std::to_string(i));
        if (i == 0) {
            p = value.size();
            y_points.resize(count, p);
        } else if (value.size() != p) {
            throw DimensionError("f returned inconsistent output dimensions");
        }
        y_points.row(i) = value.transpose();
    }

    const Eigen::VectorXd y_mean = y_points.transpose() * rule.weights;
    const Eigen::MatrixXd y_centered = y_points.rowwise() - y_mean.transpose();
    const Eigen::MatrixXd x_centered = x_points.rowwise() - x_forward.mean.transpose();

    Eigen::MatrixXd y_cov = Eigen::MatrixXd::Zero(p, p);
    Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(n, p);
    for (Eigen::Index i = 0; i < count; ++i) {
        y_cov.noalias() += rule.weights(i) * y_centered.row(i).transpose() * y_centered.row(i);
        cross.noalias() += rule.weights(i) * x_centered.row(i).transpose() * y_centered.row(i);
    }

    ForwardPassResult result;
    try {
        result.y_forward = GaussianMoments(y_mean, psd_clip(y_cov, "forward output covariance"));
    } catch (const NotPsdError&) {
        throw NotPsdError("forward output covariance is indefinite under rule " + rule.name);
    }
    result.cross = cross;

    // one state-space inversion, cached for the whole backward sweep
    for (Eigen::Index i = 0; i < n; ++i)
        if (lower(i, i) <= 0.0)
            throw ConditioningError("forward input covariance is singular");
    detail::count_inversion(n);
    const Eigen::MatrixXd linv =
        lower.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(n, n));
    result.x_precision = symmetrize(linv.transpose() * linv);
    result.lin = cross.transpose() * result.x_precision;
    return result;
}

/// RTS-type backward pass in moment form. Given the smoothed y-side marginal,
/// produce the smoothed x-side marginal through the gain D = cross * V_y^-1.
/// Valid when all paths from x to downstream evidence run through this node.
inline GaussianMoments backward_marginal(const ForwardPassResult& fp,
                                         const GaussianMoments& x_forward,
                                         const GaussianMoments& y_marginal) {
    if (y_marginal.dim() != fp.y_forward.dim())
        throw DimensionError("backward_marginal: y dimensions disagree");
    if (x_forward.dim() != fp.cross.rows())
        throw DimensionError("backward_marginal: x dimensions disagree");
    if (y_marginal.is_vacuous()) return x_forward;

    const auto llt = detail::strict_spd_factor(fp.y_forward.cov, "forward output covariance");
    const Eigen::MatrixXd gain = llt.solve(fp.cross.transpose()).transpose();  // n x p

    const Eigen::VectorXd mean = x_forward.mean + gain * (y_marginal.mean - fp.y_forward.mean);
    const Eigen::MatrixXd cov = psd_clip(
        x_forward.cov + gain * (y_marginal.cov - fp.y_forward.cov) * gain.transpose(),
        "smoothed covariance");
    return GaussianMoments(mean, cov);
}

/// RTS-type backward pass in the dual parameterization:
/// W~_x = B W~_y B^T and xi~_x = B xi~_y with B = x_precision * cross.
/// No matrix is inverted here; B is the cached linearization transposed.
inline DualMessage backward_dual(const ForwardPassResult& fp, const DualMessage& y_dual) {
    if (y_dual.dim() != fp.y_forward.dim())
        throw DimensionError("backward_dual: y dimensions disagree");
    if (y_dual.is_zero()) return DualMessage::zero(fp.cross.rows());

    const Eigen::MatrixXd b = fp.lin.transpose();  // n x p
    return DualMessage(b * y_dual.xi_tilde, symmetrize(b * y_dual.W_tilde * b.transpose()));
}

}  // namespace nlgmp
