#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "nlgmp/errors.hpp"
#include "nlgmp/expr.hpp"
#include "nlgmp/gaussian.hpp"

namespace nlgmp {

/// One model map (f, g, or h): either a constant matrix (the linear case)
/// or a vector of expressions, one per output coordinate.
class ModelFn {
   public:
    ModelFn() : impl_(Eigen::MatrixXd()) {}

    static ModelFn from_matrix(Eigen::MatrixXd m) {
        ModelFn fn;
        fn.impl_ = std::move(m);
        return fn;
    }

    static ModelFn from_exprs(std::vector<Expr> components) {
        if (components.empty()) throw ParamError("ModelFn needs at least one component");
        for (const Expr& e : components)
            if (e.state_dim() != components.front().state_dim() ||
                e.input_dim() != components.front().input_dim())
                throw ParamError("ModelFn components disagree on declared dimensions");
        ModelFn fn;
        fn.impl_ = std::move(components);
        return fn;
    }

    bool is_linear() const { return std::holds_alternative<Eigen::MatrixXd>(impl_); }

    const Eigen::MatrixXd& matrix() const {
        if (!is_linear()) throw ParamError("ModelFn is not in matrix form");
        return std::get<Eigen::MatrixXd>(impl_);
    }

    const std::vector<Expr>& exprs() const { return std::get<std::vector<Expr>>(impl_); }

    Eigen::Index out_dim() const {
        if (is_linear()) return matrix().rows();
        return static_cast<Eigen::Index>(exprs().size());
    }

    Eigen::Index in_dim() const {
        if (is_linear()) return matrix().cols();
        const Expr& first = exprs().front();
        return std::max(first.state_dim(), first.input_dim());
    }

    /// True when the expression components read input variables (u*) rather
    /// than state variables; decides which evaluation slot `in` feeds.
    bool over_inputs() const { return !is_linear() && exprs().front().input_dim() > 0; }

    Eigen::VectorXd operator()(const Eigen::VectorXd& in) const {
        if (is_linear()) return matrix() * in;
        const auto& components = exprs();
        static const Eigen::VectorXd empty;
        Eigen::VectorXd out(components.size());
        for (std::size_t i = 0; i < components.size(); ++i)
            out(static_cast<Eigen::Index>(i)) =
                over_inputs() ? components[i].eval(empty, in) : components[i].eval(in, empty);
        return out;
    }

   private:
    std::variant<Eigen::MatrixXd, std::vector<Expr>> impl_;
};

/// Discrete-time model  x_i = f(x_{i-1}) + g(u_i) + w_i,  y_i = h(x_i) + v_i
/// with w ~ N(0, Q), v ~ N(0, R) and a Gaussian prior on x_0. The output
/// map h counts as linear exactly when it is given in matrix form.
struct StateSpaceModel {
    int state_dim = 0;
    int input_dim = 0;
    int obs_dim = 0;
    ModelFn f;
    std::optional<ModelFn> g;
    ModelFn h;
    Eigen::MatrixXd Q;
    Eigen::MatrixXd R;
    GaussianMoments x0_prior;

    bool h_linear() const { return h.is_linear(); }
};

/// Structural checks on a model; each violation names the offending field.
/// An empty result means the model is usable.
inline std::vector<std::string> validate_model(const StateSpaceModel& model) {
    std::vector<std::string> violations;
    const int n = model.state_dim, m = model.input_dim, p = model.obs_dim;
    if (n < 1) violations.push_back("state_dim must be at least 1");
    if (p < 1) violations.push_back("obs_dim must be at least 1");
    if (m < 0) violations.push_back("input_dim must be non-negative");

    auto check_fn = [&](const ModelFn& fn, const std::string& name, Eigen::Index out,
                        Eigen::Index in, bool expects_inputs) {
        if (fn.out_dim() != out)
            violations.push_back(name + " output dimension " + std::to_string(fn.out_dim()) +
                                 " does not match " + std::to_string(out));
        if (fn.in_dim() != in && !(in == 0 && !fn.is_linear()))
            violations.push_back(name + " input dimension " + std::to_string(fn.in_dim()) +
                                 " does not match " + std::to_string(in));
        if (!fn.is_linear() && fn.over_inputs() != expects_inputs)
            violations.push_back(name + " components reference the wrong variable kind");
    };
    check_fn(model.f, "f", n, n, false);
    if (model.g) check_fn(*model.g, "g", n, m, true);
    check_fn(model.h, "h", p, n, false);

    auto check_cov = [&](const Eigen::MatrixXd& cov, const std::string& name, Eigen::Index dim,
                         bool strict) {
        if (cov.rows() != dim || cov.cols() != dim) {
            violations.push_back(name + " is not " + std::to_string(dim) + "x" +
                                 std::to_string(dim));
            return;
        }
        if (relative_asymmetry(cov) > tolerances().scaled_symmetry()) {
            violations.push_back(name + " not symmetric");
            return;
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(symmetrize(cov));
        const double norm = eig.eigenvalues().cwiseAbs().maxCoeff();
        if (strict) {
            if (eig.eigenvalues().minCoeff() <= 0.0)
                violations.push_back(name + " not positive definite");
        } else if (norm > 0.0 &&
                   eig.eigenvalues().minCoeff() < -tolerances().scaled_psd_eig() * norm) {
            violations.push_back(name + " not positive semidefinite");
        }
    };
    check_cov(model.Q, "Q", n, false);
    check_cov(model.R, "R", p, true);

    if (model.x0_prior.dim() != n)
        violations.push_back("x0 prior dimension does not match state_dim");
    else
        check_cov(model.x0_prior.cov, "x0 covariance", n, false);
    return violations;
}

/// A simulated run: states, inputs, and observations row-per-step, plus the
/// seed that reproduces it.
struct Trajectory {
    Eigen::MatrixXd states;        // N x n, x_1..x_N
    Eigen::MatrixXd inputs;        // N x m
    Eigen::MatrixXd observations;  // N x p
    std::uint64_t seed = 0;

    Eigen::Index length() const { return states.rows(); }
};

/// Draw one trajectory of the model. The step count is the input row count;
/// the same seed always reproduces the same trajectory. Gaussian draws use
/// mt19937_64 with std::normal_distribution, so reproducibility holds within
/// one standard library, not across toolchains.
inline Trajectory simulate(const StateSpaceModel& model, const Eigen::MatrixXd& inputs,
                           std::uint64_t seed) {
    const auto violations = validate_model(model);
    if (!violations.empty()) throw ParamError("invalid model: " + violations.front());
    if (inputs.cols() != model.input_dim)
        throw DimensionError("simulate: inputs have " + std::to_string(inputs.cols()) +
                             " columns, model declares input_dim " +
                             std::to_string(model.input_dim));

    const Eigen::Index steps = inputs.rows();
    const int n = model.state_dim, p = model.obs_dim;
    const Eigen::MatrixXd root_x0 = chol_psd(model.x0_prior.cov);
    const Eigen::MatrixXd root_q = chol_psd(model.Q);
    const Eigen::MatrixXd root_r = chol_psd(model.R);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    auto draw = [&](Eigen::Index dim) {
        Eigen::VectorXd z(dim);
        for (Eigen::Index i = 0; i < dim; ++i) z(i) = normal(rng);
        return z;
    };

    Trajectory traj;
    traj.states.resize(steps, n);
    traj.inputs = inputs;
    traj.observations.resize(steps, p);
    traj.seed = seed;

    Eigen::VectorXd x = model.x0_prior.mean + root_x0 * draw(n);
    for (Eigen::Index i = 0; i < steps; ++i) {
        try {
            Eigen::VectorXd drift = model.f(x);
            if (model.g) drift += (*model.g)(inputs.row(i).transpose());
            x = drift + root_q * draw(n);
            if (!x.allFinite()) throw SimulationError("state is non-finite", i + 1);
            Eigen::VectorXd y = model.h(x) + root_r * draw(p);
            if (!y.allFinite()) throw SimulationError("observation is non-finite", i + 1);
            traj.states.row(i) = x.transpose();
            traj.observations.row(i) = y.transpose();
        } catch (const EvalError& e) {
            throw SimulationError(std::string("model evaluation failed (") + e.what() + ")",
                                  i + 1);
        }
    }
    return traj;
}

}  // namespace nlgmp
