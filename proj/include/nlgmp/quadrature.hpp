#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nlgmp/errors.hpp"
#include "nlgmp/gaussian.hpp"

namespace nlgmp {

/// Integration nodes and weights for the standard Gaussian N(0, I).
///
/// Every rule built here is symmetric: weights sum to one, the weighted
/// node mean is zero, and the weighted node scatter is the identity.
/// `degree` is the polynomial exactness degree. Rules with negative
/// weights (unscented with kappa < 0) are legal but flagged.
struct QuadratureRule {
    Eigen::MatrixXd points;   // one node per row, l x n
    Eigen::VectorXd weights;  // length l
    int degree = 0;
    std::string name;

    Eigen::Index dim() const { return points.cols(); }
    Eigen::Index size() const { return points.rows(); }
    bool has_negative_weights() const { return weights.minCoeff() < 0.0; }
};

/// Quadrature nodes transported to the space of a concrete Gaussian input.
struct SigmaPoints {
    Eigen::MatrixXd points;   // one point per row, l x n
    Eigen::VectorXd weights;  // copied from the generating rule
};

namespace detail {
inline void require_dim(int n) {
    if (n < 1) throw ParamError("dimension must be at least 1, got " + std::to_string(n));
}
}  // namespace detail

/// Classic unscented transform: 2n+1 points, center weight kappa/(n+kappa),
/// axis points at +-sqrt(n+kappa) with weight 1/(2(n+kappa)). Degree 3.
inline QuadratureRule unscented_rule(int n, double kappa) {
    detail::require_dim(n);
    if (!(kappa > -static_cast<double>(n)))
        throw ParamError("unscented rule requires kappa > -n (kappa=" + std::to_string(kappa) +
                         ", n=" + std::to_string(n) + ")");

    const double spread = std::sqrt(n + kappa);
    QuadratureRule rule;
    rule.points = Eigen::MatrixXd::Zero(2 * n + 1, n);
    rule.weights.resize(2 * n + 1);
    rule.weights(0) = kappa / (n + kappa);
    for (int i = 0; i < n; ++i) {
        rule.points(1 + i, i) = spread;
        rule.points(1 + n + i, i) = -spread;
        rule.weights(1 + i) = 0.5 / (n + kappa);
        rule.weights(1 + n + i) = 0.5 / (n + kappa);
    }
    rule.degree = 3;
    rule.name = "ut(n=" + std::to_string(n) + ",kappa=" + std::to_string(kappa) + ")";
    return rule;
}

namespace detail {

/// 1-D probabilists' Gauss-Hermite nodes and weights via the symmetric
/// tridiagonal Jacobi matrix (Golub-Welsch). Nodes are re-symmetrized in
/// +- pairs so the rule invariants hold exactly, not just to eigensolver
/// accuracy.
inline void gauss_hermite_1d(int order, Eigen::VectorXd& nodes, Eigen::VectorXd& weights) {
    if (order == 1) {
        nodes = Eigen::VectorXd::Zero(1);
        weights = Eigen::VectorXd::Ones(1);
        return;
    }
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(order, order);
    for (int k = 1; k < order; ++k) {
        const double b = std::sqrt(static_cast<double>(k));
        jacobi(k - 1, k) = b;
        jacobi(k, k - 1) = b;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
    nodes = eig.eigenvalues();
    weights.resize(order);
    for (int i = 0; i < order; ++i) {
        const double first = eig.eigenvectors()(0, i);
        weights(i) = first * first;
    }
    // eigenvalues come back sorted; average the +- pairs
    for (int i = 0; i < order / 2; ++i) {
        const int j = order - 1 - i;
        const double node = 0.5 * (nodes(j) - nodes(i));
        nodes(j) = node;
        nodes(i) = -node;
        const double w = 0.5 * (weights(i) + weights(j));
        weights(i) = w;
        weights(j) = w;
    }
    if (order % 2 == 1) nodes(order / 2) = 0.0;
}

}  // namespace detail

/// Tensorized Gauss-Hermite rule: m^n points, exactness degree 2m-1 per axis.
/// Orders above one point grow as m^n; more than 1e7 points are refused.
inline QuadratureRule gauss_hermite_rule(int n, int order) {
    detail::require_dim(n);
    if (order < 1 || order > 20)
        throw ParamError("gauss-hermite order must be in [1, 20], got " + std::to_string(order));

    double size_estimate = 1.0;
    for (int i = 0; i < n; ++i) size_estimate *= order;
    if (size_estimate > 1e7)
        throw ParamError("gauss-hermite rule would need " + std::to_string(size_estimate) +
                         " points (limit 1e7); use a sparser rule in dimension " +
                         std::to_string(n));

    Eigen::VectorXd nodes_1d, weights_1d;
    detail::gauss_hermite_1d(order, nodes_1d, weights_1d);

    const Eigen::Index count = static_cast<Eigen::Index>(size_estimate);
    QuadratureRule rule;
    rule.points.resize(count, n);
    rule.weights.resize(count);
    std::vector<int> index(n, 0);
    for (Eigen::Index row = 0; row < count; ++row) {
        double w = 1.0;
        for (int axis = 0; axis < n; ++axis) {
            rule.points(row, axis) = nodes_1d(index[axis]);
            w *= weights_1d(index[axis]);
        }
        rule.weights(row) = w;
        for (int axis = n - 1; axis >= 0; --axis) {
            if (++index[axis] < order) break;
            index[axis] = 0;
        }
    }
    rule.degree = 2 * order - 1;
    rule.name = "ghq(n=" + std::to_string(n) + ",m=" + std::to_string(order) + ")";
    return rule;
}

/// Spherical-radial (cubature) rule: 2n points at +-sqrt(n) along each axis,
/// uniform weights 1/(2n). Degree 3.
inline QuadratureRule spherical_radial_rule(int n) {
    detail::require_dim(n);
    const double radius = std::sqrt(static_cast<double>(n));
    QuadratureRule rule;
    rule.points = Eigen::MatrixXd::Zero(2 * n, n);
    rule.weights = Eigen::VectorXd::Constant(2 * n, 0.5 / n);
    for (int i = 0; i < n; ++i) {
        rule.points(i, i) = radius;
        rule.points(n + i, i) = -radius;
    }
    rule.degree = 3;
    rule.name = "srt(n=" + std::to_string(n) + ")";
    return rule;
}

/// Transport unit-space nodes to an arbitrary Gaussian input:
/// x_i = mean + L zeta_i with L the (jitter-tolerant) Cholesky factor.
inline SigmaPoints transform_points(const QuadratureRule& rule, const GaussianMoments& input) {
    if (rule.dim() != input.dim())
        throw DimensionError("transform_points: rule dimension " + std::to_string(rule.dim()) +
                             " does not match input dimension " + std::to_string(input.dim()));
    const Eigen::MatrixXd lower = chol_psd(input.cov);
    SigmaPoints sp;
    sp.points = (rule.points * lower.transpose()).rowwise() + input.mean.transpose();
    sp.weights = rule.weights;
    return sp;
}

/// Approximate E[g(X)] for X ~ input as the weighted sum of g over the
/// transported nodes. Throws EvalError if g is non-finite at any node.
inline Eigen::VectorXd expect(const QuadratureRule& rule,
                              const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& g,
                              const GaussianMoments& input) {
    const SigmaPoints sp = transform_points(rule, input);
    Eigen::VectorXd sum;
    for (Eigen::Index i = 0; i < sp.points.rows(); ++i) {
        const Eigen::VectorXd value = g(sp.points.row(i).transpose());
        if (!value.allFinite())
            throw EvalError("integrand is non-finite at quadrature node " + std::to_string(i));
        if (i == 0)
            sum = sp.weights(i) * value;
        else
            sum += sp.weights(i) * value;
    }
    return sum;
}

// ---------------------------------------------------------------------------
// Rule construction by configuration
// ---------------------------------------------------------------------------

enum class QuadratureMethod { unscented, gauss_hermite, spherical_radial };

/// A dimension-independent recipe for building quadrature rules, so drivers
/// can instantiate matching rules for state-space and input-space nodes.
struct QuadratureSpec {
    QuadratureMethod method = QuadratureMethod::gauss_hermite;
    int order = 3;                // gauss-hermite only
    std::optional<double> kappa;  // unscented only; defaults to 3 - dim
};

inline QuadratureRule make_rule(const QuadratureSpec& spec, int dim) {
    switch (spec.method) {
        case QuadratureMethod::unscented:
            return unscented_rule(dim, spec.kappa.value_or(3.0 - dim));
        case QuadratureMethod::gauss_hermite:
            return gauss_hermite_rule(dim, spec.order);
        case QuadratureMethod::spherical_radial:
            return spherical_radial_rule(dim);
    }
    throw ParamError("unknown quadrature method");
}

}  // namespace nlgmp
