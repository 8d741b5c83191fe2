#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "nlgmp/errors.hpp"
#include "nlgmp/gaussian.hpp"
#include "nlgmp/nonlinear_node.hpp"
#include "nlgmp/quadrature.hpp"
#include "nlgmp/state_space_model.hpp"

namespace nlgmp {

/// A per-step input: a known vector, or a Gaussian prior on the input in
/// which case the input map g is handled as a nonlinear node of its own.
using InputValue = std::variant<Eigen::VectorXd, GaussianMoments>;

inline std::vector<InputValue> deterministic_inputs(const Eigen::MatrixXd& rows) {
    std::vector<InputValue> inputs;
    inputs.reserve(rows.rows());
    for (Eigen::Index i = 0; i < rows.rows(); ++i)
        inputs.emplace_back(Eigen::VectorXd(rows.row(i).transpose()));
    return inputs;
}

inline std::vector<std::optional<Eigen::VectorXd>> all_observations(const Eigen::MatrixXd& rows) {
    std::vector<std::optional<Eigen::VectorXd>> obs;
    obs.reserve(rows.rows());
    for (Eigen::Index i = 0; i < rows.rows(); ++i)
        obs.emplace_back(Eigen::VectorXd(rows.row(i).transpose()));
    return obs;
}

/// The measurement-space solve cached at filter time: the inverse innovation
/// covariance G = (H V H^T + R)^-1, the gain K, and the residual y - H m.
/// The dual backward sweep reuses these instead of inverting anything.
struct Innovation {
    Eigen::MatrixXd info;      // G, p x p
    Eigen::MatrixXd gain;      // K, n x p
    Eigen::VectorXd residual;  // y - H m, length p
};

struct FilterStep {
    GaussianMoments predicted;  // before the measurement
    GaussianMoments filtered;   // after the measurement (= predicted when unobserved)
    /// Transition node record with the y side widened to the full predicted
    /// message (input contribution and process noise included); serves both
    /// backward parameterizations.
    ForwardPassResult transition;
    std::optional<ForwardPassResult> input_node;  // same widening, Gaussian inputs only
    std::optional<GaussianMoments> input_prior;
    std::optional<Innovation> innovation;  // linear-H observed steps only
    bool observed = false;
    SolveCounts update_solves;  // factorization work of the measurement update
};

struct FilterState {
    std::vector<FilterStep> steps;
};

struct SmoothedResult {
    std::vector<GaussianMoments> smoothed;
    std::vector<std::optional<GaussianMoments>> smoothed_inputs;
    std::vector<SolveCounts> backward_solves;  // factorization work per backward step
    /// Count of (step, coordinate) pairs where the smoothed variance exceeds
    /// the filtered variance beyond tolerance. Exact zero is only guaranteed
    /// for linear models; quadrature can perturb it slightly, so this is
    /// reported rather than enforced.
    int variance_monotonicity_violations = 0;
};

namespace detail {

inline GaussianMoments apply_variance_floor(GaussianMoments g) {
    const double floor = tolerances().variance_floor;
    for (Eigen::Index d = 0; d < g.dim(); ++d)
        if (g.cov(d, d) < floor) g.cov(d, d) = floor;
    return g;
}

template <typename Fn>
auto with_step_context(long step, Fn&& fn) {
    try {
        return fn();
    } catch (const ConditioningError& e) {
        throw ConditioningError(std::string(e.what()) + " (step " + std::to_string(step) + ")");
    } catch (const NotPsdError& e) {
        throw NotPsdError(std::string(e.what()) + " (step " + std::to_string(step) + ")");
    } catch (const EvalError& e) {
        throw EvalError(std::string(e.what()) + " (step " + std::to_string(step) + ")");
    }
}

}  // namespace detail

struct PredictResult {
    GaussianMoments predicted;
    ForwardPassResult transition;
    std::optional<ForwardPassResult> input_node;
    std::optional<GaussianMoments> input_prior;
};

/// One prediction through the transition node: propagate the previous
/// filtered message through f, add the input contribution (a shift for known
/// inputs, a forward pass through g for Gaussian ones) and the process
/// noise. The returned node records carry the widened y side so backward
/// passes can consume them directly.
inline PredictResult predict_step(const GaussianMoments& prev_filtered, const InputValue* input,
                                  const StateSpaceModel& model, const QuadratureRule& rule,
                                  const QuadratureRule* input_rule = nullptr) {
    PredictResult out;
    out.transition =
        forward_pass([&](const Eigen::VectorXd& x) { return model.f(x); }, prev_filtered, rule);

    Eigen::VectorXd mean = out.transition.y_forward.mean;
    Eigen::MatrixXd cov = out.transition.y_forward.cov;
    if (model.g && input) {
        if (std::holds_alternative<Eigen::VectorXd>(*input)) {
            mean += (*model.g)(std::get<Eigen::VectorXd>(*input));
        } else {
            const auto& prior = std::get<GaussianMoments>(*input);
            if (input_rule == nullptr)
                throw ParamError("Gaussian inputs need a quadrature rule of input dimension");
            out.input_node = forward_pass([&](const Eigen::VectorXd& u) { return (*model.g)(u); },
                                          prior, *input_rule);
            out.input_prior = prior;
            mean += out.input_node->y_forward.mean;
            cov += out.input_node->y_forward.cov;
        }
    }
    cov += model.Q;

    out.predicted = GaussianMoments(mean, symmetrize(cov));
    out.transition.y_forward = out.predicted;
    if (out.input_node) out.input_node->y_forward = out.predicted;
    return out;
}

namespace detail {

struct UpdateResult {
    GaussianMoments filtered;
    std::optional<Innovation> innovation;
};

inline UpdateResult update_with_cache(const GaussianMoments& predicted,
                                      const Eigen::VectorXd& y_obs, const StateSpaceModel& model,
                                      const QuadratureRule& rule) {
    if (y_obs.size() != model.obs_dim)
        throw DimensionError("observation length does not match obs_dim");
    if (!y_obs.allFinite()) throw EvalError("observation is non-finite");

    UpdateResult out;
    if (model.h_linear()) {
        const Eigen::MatrixXd& h = model.h.matrix();
        const Eigen::Index n = predicted.dim(), p = y_obs.size();
        const auto llt =
            strict_spd_factor(h * predicted.cov * h.transpose() + model.R, "innovation covariance");
        Innovation cache;
        cache.info = symmetrize(inverse_from_factor(llt, p));
        cache.gain = predicted.cov * h.transpose() * cache.info;
        cache.residual = y_obs - h * predicted.mean;

        const Eigen::MatrixXd closed = Eigen::MatrixXd::Identity(n, n) - cache.gain * h;
        // Joseph form keeps the updated covariance symmetric PSD
        const Eigen::MatrixXd cov = symmetrize(closed * predicted.cov * closed.transpose() +
                                               cache.gain * model.R * cache.gain.transpose());
        out.filtered = GaussianMoments(predicted.mean + cache.gain * cache.residual, cov);
        out.innovation = std::move(cache);
    } else {
        const auto fp = forward_pass([&](const Eigen::VectorXd& x) { return model.h(x); },
                                     predicted, rule);
        const auto y_marginal =
            combine_forward_backward(fp.y_forward, GaussianMoments(y_obs, model.R));
        out.filtered = backward_marginal(fp, predicted, y_marginal);
    }
    return out;
}

}  // namespace detail

/// Condition a predicted message on one observation. Linear output maps get
/// the standard innovation update; nonlinear ones pass the observation
/// likelihood backwards through the h node.
inline GaussianMoments update_step(const GaussianMoments& predicted, const Eigen::VectorXd& y_obs,
                                   const StateSpaceModel& model, const QuadratureRule& rule) {
    return detail::update_with_cache(predicted, y_obs, model, rule).filtered;
}

/// Forward sweep over the whole chain. Missing observations (empty optional)
/// skip the measurement update. Everything the backward passes need is
/// cached in the returned state.
inline FilterState run_filter(const StateSpaceModel& model,
                              const std::vector<std::optional<Eigen::VectorXd>>& observations,
                              const std::vector<InputValue>& inputs, const QuadratureSpec& spec) {
    const auto violations = validate_model(model);
    if (!violations.empty()) throw ParamError("invalid model: " + violations.front());
    if (observations.empty()) throw ParamError("run_filter needs at least one step");
    if (model.input_dim > 0 && model.g && inputs.size() != observations.size())
        throw DimensionError("run_filter: input count " + std::to_string(inputs.size()) +
                             " does not match observation count " +
                             std::to_string(observations.size()));

    const QuadratureRule rule = make_rule(spec, model.state_dim);
    std::optional<QuadratureRule> input_rule;

    FilterState fs;
    fs.steps.reserve(observations.size());
    GaussianMoments current = model.x0_prior;
    for (std::size_t i = 0; i < observations.size(); ++i) {
        const long step_number = static_cast<long>(i) + 1;
        detail::with_step_context(step_number, [&] {
            const InputValue* input = inputs.empty() ? nullptr : &inputs[i];
            if (input && std::holds_alternative<GaussianMoments>(*input) && !input_rule)
                input_rule = make_rule(spec, model.input_dim);

            PredictResult predict = predict_step(current, input, model, rule,
                                                 input_rule ? &*input_rule : nullptr);
            FilterStep step;
            step.predicted = predict.predicted;
            step.transition = std::move(predict.transition);
            step.input_node = std::move(predict.input_node);
            step.input_prior = std::move(predict.input_prior);

            if (observations[i].has_value()) {
                const SolveCounts before = solve_counters();
                auto update = detail::update_with_cache(step.predicted, *observations[i], model,
                                                        rule);
                step.update_solves = solve_counters() - before;
                step.filtered = std::move(update.filtered);
                step.innovation = std::move(update.innovation);
                step.observed = true;
            } else {
                step.filtered = step.predicted;
            }
            current = step.filtered;
            fs.steps.push_back(std::move(step));
        });
    }
    return fs;
}

namespace detail {

inline int count_variance_exceedances(const FilterState& fs,
                                      const std::vector<GaussianMoments>& smoothed) {
    int count = 0;
    for (std::size_t i = 0; i < smoothed.size(); ++i)
        for (Eigen::Index d = 0; d < smoothed[i].dim(); ++d)
            if (smoothed[i].cov(d, d) > fs.steps[i].filtered.cov(d, d) + 1e-8) ++count;
    return count;
}

}  // namespace detail

/// Moment-form backward sweep: each transition node is traversed with the
/// RTS gain, which factorizes the predicted covariance once per step.
inline SmoothedResult rts_smooth(const FilterState& fs, const StateSpaceModel&) {
    if (fs.steps.empty()) throw ParamError("rts_smooth: empty filter state");
    const long steps = static_cast<long>(fs.steps.size());

    SmoothedResult out;
    out.smoothed.resize(steps);
    out.smoothed_inputs.resize(steps);
    out.backward_solves.resize(steps);
    out.smoothed[steps - 1] = detail::apply_variance_floor(fs.steps[steps - 1].filtered);

    for (long i = steps - 1; i >= 0; --i) {
        const SolveCounts before = solve_counters();
        detail::with_step_context(i + 1, [&] {
            if (fs.steps[i].input_node)
                out.smoothed_inputs[i] =
                    detail::apply_variance_floor(backward_marginal(
                        *fs.steps[i].input_node, *fs.steps[i].input_prior, out.smoothed[i]));
            if (i > 0)
                out.smoothed[i - 1] = detail::apply_variance_floor(
                    backward_marginal(fs.steps[i].transition, fs.steps[i - 1].filtered,
                                      out.smoothed[i]));
        });
        out.backward_solves[i] = solve_counters() - before;
    }
    out.variance_monotonicity_violations = detail::count_variance_exceedances(fs, out.smoothed);
    return out;
}

/// Dual-form backward sweep. Requires a linear output map h(x) = H x; the
/// observation update reuses the gain and inverse innovation covariance
/// cached at filter time, and the transition traversal reuses the
/// statistical linearization, so no state-dimension matrix is factorized or
/// inverted anywhere in the sweep.
inline SmoothedResult mbf_smooth(const FilterState& fs, const StateSpaceModel& model) {
    if (fs.steps.empty()) throw ParamError("mbf_smooth: empty filter state");
    if (!model.h_linear())
        throw ParamError(
            "mbf_smooth requires a linear output map h(x) = H x; use rts_smooth for nonlinear "
            "outputs");

    const Eigen::MatrixXd& h = model.h.matrix();
    const Eigen::Index n = model.state_dim;
    const long steps = static_cast<long>(fs.steps.size());

    SmoothedResult out;
    out.smoothed.resize(steps);
    out.smoothed_inputs.resize(steps);
    out.backward_solves.resize(steps);

    DualMessage dual = DualMessage::zero(n);
    for (long i = steps - 1; i >= 0; --i) {
        const SolveCounts before = solve_counters();
        detail::with_step_context(i + 1, [&] {
            if (fs.steps[i].innovation) {
                const Innovation& cache = *fs.steps[i].innovation;
                const Eigen::MatrixXd closed =
                    Eigen::MatrixXd::Identity(n, n) - cache.gain * h;  // I - K H
                const Eigen::MatrixXd info_h = h.transpose() * cache.info * h;
                dual = DualMessage(
                    closed.transpose() * dual.xi_tilde -
                        h.transpose() * (cache.info * cache.residual),
                    symmetrize(closed.transpose() * dual.W_tilde * closed + info_h));
            }
            out.smoothed[i] =
                detail::apply_variance_floor(marginal_from_dual(fs.steps[i].predicted, dual));
            if (fs.steps[i].input_node)
                out.smoothed_inputs[i] = detail::apply_variance_floor(marginal_from_dual(
                    *fs.steps[i].input_prior, backward_dual(*fs.steps[i].input_node, dual)));
            if (i > 0) dual = backward_dual(fs.steps[i].transition, dual);
        });
        out.backward_solves[i] = solve_counters() - before;
    }
    out.variance_monotonicity_violations = detail::count_variance_exceedances(fs, out.smoothed);
    return out;
}

/// Root-mean-square error of estimate means against true states, averaged
/// over steps and coordinates.
inline double rmse(const std::vector<GaussianMoments>& estimates, const Eigen::MatrixXd& truth) {
    if (static_cast<Eigen::Index>(estimates.size()) != truth.rows())
        throw DimensionError("rmse: estimate count does not match truth rows");
    double sum = 0.0;
    long terms = 0;
    for (std::size_t i = 0; i < estimates.size(); ++i) {
        const Eigen::VectorXd diff =
            estimates[i].mean - truth.row(static_cast<Eigen::Index>(i)).transpose();
        sum += diff.squaredNorm();
        terms += diff.size();
    }
    return std::sqrt(sum / static_cast<double>(terms));
}

}  // namespace nlgmp
