#pragma once

// Reference implementations used only to validate the production modules.
// Everything here is written directly from the textbook equations with plain
// Eigen arithmetic and deliberately shares no solver or helper code with the
// message-passing and smoothing modules, so agreement between the two is
// evidence rather than tautology.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "nlgmp/errors.hpp"
#include "nlgmp/gaussian.hpp"
#include "nlgmp/state_space_model.hpp"

namespace nlgmp::oracle {

/// Monte-Carlo estimates of the joint moments of (X, f(X)).
struct McMoments {
    Eigen::VectorXd mean;      // E[f(X)]
    Eigen::MatrixXd cov;       // Cov(f(X))
    Eigen::MatrixXd cross;     // Cov(X, f(X))
    Eigen::VectorXd mean_se;   // standard error per mean entry
    Eigen::MatrixXd cov_se;    // standard error per covariance entry
    Eigen::MatrixXd cross_se;  // standard error per cross entry
    long sample_count = 0;
};

/// Sample-based moments of f(X) with X ~ input. Standard errors come from
/// the sample variance of each estimator. Up to 0.01% non-finite draws are
/// dropped; more than that is an error.
inline McMoments mc_moments(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                            const GaussianMoments& input, long samples, std::uint64_t seed) {
    if (samples < 10000) throw ParamError("mc_moments needs at least 1e4 samples");
    const Eigen::Index n = input.dim();

    Eigen::LLT<Eigen::MatrixXd> llt(input.cov);
    if (llt.info() != Eigen::Success)
        throw ParamError("mc_moments input covariance is not positive definite");
    const Eigen::MatrixXd root = llt.matrixL();

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;

    std::vector<Eigen::VectorXd> xs, ys;
    xs.reserve(samples);
    ys.reserve(samples);
    long bad = 0;
    for (long k = 0; k < samples; ++k) {
        Eigen::VectorXd z(n);
        for (Eigen::Index i = 0; i < n; ++i) z(i) = normal(rng);
        const Eigen::VectorXd x = input.mean + root * z;
        const Eigen::VectorXd y = f(x);
        if (!y.allFinite()) {
            ++bad;
            continue;
        }
        xs.push_back(x);
        ys.push_back(y);
    }
    if (bad * 10000 > samples)
        throw EvalError("mc_moments: more than 0.01% of samples were non-finite");

    const long count = static_cast<long>(ys.size());
    const Eigen::Index p = ys.front().size();

    Eigen::VectorXd x_mean = Eigen::VectorXd::Zero(n), y_mean = Eigen::VectorXd::Zero(p);
    for (long k = 0; k < count; ++k) {
        x_mean += xs[k];
        y_mean += ys[k];
    }
    x_mean /= count;
    y_mean /= count;

    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(p, p);
    Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(n, p);
    Eigen::MatrixXd cov_sq = Eigen::MatrixXd::Zero(p, p);
    Eigen::MatrixXd cross_sq = Eigen::MatrixXd::Zero(n, p);
    Eigen::VectorXd mean_sq = Eigen::VectorXd::Zero(p);
    for (long k = 0; k < count; ++k) {
        const Eigen::VectorXd dx = xs[k] - x_mean;
        const Eigen::VectorXd dy = ys[k] - y_mean;
        mean_sq += dy.cwiseProduct(dy);
        for (Eigen::Index i = 0; i < p; ++i)
            for (Eigen::Index j = 0; j < p; ++j) {
                const double term = dy(i) * dy(j);
                cov(i, j) += term;
                cov_sq(i, j) += term * term;
            }
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < p; ++j) {
                const double term = dx(i) * dy(j);
                cross(i, j) += term;
                cross_sq(i, j) += term * term;
            }
    }
    cov /= count - 1;
    cross /= count - 1;

    McMoments out;
    out.mean = y_mean;
    out.cov = cov;
    out.cross = cross;
    out.sample_count = count;
    out.mean_se = (mean_sq / (count - 1)).cwiseSqrt() / std::sqrt(static_cast<double>(count));
    out.cov_se.resize(p, p);
    for (Eigen::Index i = 0; i < p; ++i)
        for (Eigen::Index j = 0; j < p; ++j) {
            const double var_of_term = cov_sq(i, j) / count - std::pow(cov(i, j), 2);
            out.cov_se(i, j) = std::sqrt(std::max(var_of_term, 0.0) / count);
        }
    out.cross_se.resize(n, p);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < p; ++j) {
            const double var_of_term = cross_sq(i, j) / count - std::pow(cross(i, j), 2);
            out.cross_se(i, j) = std::sqrt(std::max(var_of_term, 0.0) / count);
        }
    return out;
}

/// Closed-form Kalman filter and RTS smoother records for a linear model.
struct KalmanReference {
    std::vector<GaussianMoments> predicted;
    std::vector<GaussianMoments> filtered;
    std::vector<GaussianMoments> smoothed;
};

/// Textbook Kalman recursion followed by the textbook RTS backward sweep.
/// Requires f, g, h in matrix form; missing observations skip the update.
inline KalmanReference kalman_reference(const StateSpaceModel& model,
                                        const std::vector<std::optional<Eigen::VectorXd>>& obs,
                                        const Eigen::MatrixXd& inputs) {
    if (!model.f.is_linear() || !model.h.is_linear() || (model.g && !model.g->is_linear()))
        throw ParamError("kalman_reference requires a fully linear model");
    const Eigen::MatrixXd a = model.f.matrix();
    const Eigen::MatrixXd h = model.h.matrix();
    const long steps = static_cast<long>(obs.size());

    KalmanReference ref;
    Eigen::VectorXd m = model.x0_prior.mean;
    Eigen::MatrixXd v = model.x0_prior.cov;
    for (long i = 0; i < steps; ++i) {
        Eigen::VectorXd m_pred = a * m;
        if (model.g) m_pred += model.g->matrix() * inputs.row(i).transpose();
        Eigen::MatrixXd v_pred = a * v * a.transpose() + model.Q;
        ref.predicted.emplace_back(m_pred, v_pred);

        if (obs[i].has_value()) {
            const Eigen::MatrixXd s = h * v_pred * h.transpose() + model.R;
            const Eigen::MatrixXd k = v_pred * h.transpose() * s.inverse();
            m = m_pred + k * (*obs[i] - h * m_pred);
            v = v_pred - k * h * v_pred;
        } else {
            m = m_pred;
            v = v_pred;
        }
        ref.filtered.emplace_back(m, Eigen::MatrixXd(0.5 * (v + v.transpose())));
    }

    ref.smoothed.resize(steps);
    ref.smoothed[steps - 1] = ref.filtered[steps - 1];
    for (long i = steps - 2; i >= 0; --i) {
        const Eigen::MatrixXd v_f = ref.filtered[i].cov;
        const Eigen::MatrixXd gain = v_f * a.transpose() * ref.predicted[i + 1].cov.inverse();
        const Eigen::VectorXd m_s =
            ref.filtered[i].mean + gain * (ref.smoothed[i + 1].mean - ref.predicted[i + 1].mean);
        Eigen::MatrixXd v_s =
            v_f + gain * (ref.smoothed[i + 1].cov - ref.predicted[i + 1].cov) * gain.transpose();
        v_s = 0.5 * (v_s + v_s.transpose());
        ref.smoothed[i] = GaussianMoments(m_s, v_s);
    }
    return ref;
}

/// Range of a 1-D evaluation grid in prior standard deviations.
struct GridSpec {
    double sd_span = 8.0;
    int points = 20001;
};

/// Dense-grid Bayes update for a scalar state: posterior proportional to
/// prior(x) * N(y_obs; h(x), r), normalized by the trapezoidal rule.
inline GaussianMoments grid_bayes_1d(const GaussianMoments& prior,
                                     const std::function<double(double)>& h, double y_obs,
                                     double r, const GridSpec& grid = {}) {
    if (prior.dim() != 1) throw ParamError("grid_bayes_1d handles scalar states only");
    if (grid.points < 10000) throw ParamError("grid_bayes_1d needs at least 1e4 grid points");
    if (grid.sd_span < 8.0) throw ParamError("grid_bayes_1d grid must span at least 8 sd");

    const double m0 = prior.mean(0);
    const double sd = std::sqrt(prior.cov(0, 0));
    const double lo = m0 - grid.sd_span * sd;
    const double hi = m0 + grid.sd_span * sd;
    const double dx = (hi - lo) / (grid.points - 1);

    std::vector<double> log_post(grid.points);
    double log_max = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < grid.points; ++i) {
        const double x = lo + i * dx;
        const double residual = y_obs - h(x);
        log_post[i] = -0.5 * (x - m0) * (x - m0) / prior.cov(0, 0) - 0.5 * residual * residual / r;
        log_max = std::max(log_max, log_post[i]);
    }
    if (!std::isfinite(log_max))
        throw EvalError("grid_bayes_1d: posterior vanished everywhere; widen the grid");

    double mass = 0.0, mean = 0.0;
    for (int i = 0; i < grid.points; ++i) {
        const double w = (i == 0 || i == grid.points - 1) ? 0.5 : 1.0;
        const double density = std::exp(log_post[i] - log_max);
        mass += w * density;
        mean += w * density * (lo + i * dx);
    }
    if (mass <= 0.0)
        throw EvalError("grid_bayes_1d: posterior mass underflow; widen the grid");
    mean /= mass;
    double var = 0.0;
    for (int i = 0; i < grid.points; ++i) {
        const double w = (i == 0 || i == grid.points - 1) ? 0.5 : 1.0;
        const double x = lo + i * dx;
        var += w * std::exp(log_post[i] - log_max) * (x - mean) * (x - mean);
    }
    var /= mass;

    Eigen::VectorXd m(1);
    m << mean;
    Eigen::MatrixXd v(1, 1);
    v << var;
    return GaussianMoments(m, v);
}

}  // namespace nlgmp::oracle
