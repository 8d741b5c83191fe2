#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "nlgmp/expr.hpp"
#include "nlgmp/nonlinear_node.hpp"
#include "nlgmp/oracle.hpp"

namespace nlgmp {
namespace {

GaussianMoments scalar_gaussian(double mean, double var) {
    Eigen::VectorXd m(1);
    m << mean;
    Eigen::MatrixXd v(1, 1);
    v << var;
    return GaussianMoments(m, v);
}

Eigen::MatrixXd random_spd(int n, std::mt19937_64& rng, double jitter = 0.3) {
    std::normal_distribution<double> normal;
    Eigen::MatrixXd m(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) m(i, j) = normal(rng);
    return m * m.transpose() + jitter * Eigen::MatrixXd::Identity(n, n);
}

Eigen::VectorXd random_vec(int n, std::mt19937_64& rng) {
    std::normal_distribution<double> normal;
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v(i) = normal(rng);
    return v;
}

std::vector<QuadratureRule> rules_for(int n) {
    return {unscented_rule(n, 3.0 - n), gauss_hermite_rule(n, 3), spherical_radial_rule(n)};
}

// Random smooth map built from the expression catalog: a full-rank linear
// part plus bounded nonlinear perturbations, so the forward output
// covariance stays invertible.
std::function<Eigen::VectorXd(const Eigen::VectorXd&)> random_smooth_map(int n, int p,
                                                                         std::mt19937_64& rng) {
    std::uniform_real_distribution<double> coef(-1.0, 1.0);
    std::vector<Expr> components;
    const char* shapes[] = {"sin", "cos", "tanh"};
    for (int i = 0; i < p; ++i) {
        std::string text;
        for (int j = 0; j < n; ++j) {
            const double a = coef(rng) + ((i + j) % n == 0 ? 1.5 : 0.0);
            text += (j ? " + " : "") + std::to_string(a) + "*x" + std::to_string(j + 1);
        }
        const int var = static_cast<int>(rng() % n) + 1;
        text += " + " + std::to_string(0.4 * coef(rng)) + "*" + shapes[rng() % 3] + "(x" +
                std::to_string(var) + ")";
        const int var2 = static_cast<int>(rng() % n) + 1;
        text += " + " + std::to_string(0.1 * coef(rng)) + "*x" + std::to_string(var) + "*x" +
                std::to_string(var2);
        components.push_back(Expr::parse(text, n, 0));
    }
    return [components](const Eigen::VectorXd& x) {
        static const Eigen::VectorXd empty;
        Eigen::VectorXd out(components.size());
        for (std::size_t i = 0; i < components.size(); ++i)
            out(static_cast<Eigen::Index>(i)) = components[i].eval(x, empty);
        return out;
    };
}

TEST(ForwardPass, IdentityReproducesInput) {
    std::mt19937_64 rng(3);
    const auto identity = [](const Eigen::VectorXd& x) { return x; };
    for (int n : {1, 2, 3}) {
        const GaussianMoments input(random_vec(n, rng), random_spd(n, rng));
        for (const auto& rule : rules_for(n)) {
            const auto fp = forward_pass(identity, input, rule);
            EXPECT_LT((fp.y_forward.mean - input.mean).cwiseAbs().maxCoeff(), 1e-12) << rule.name;
            EXPECT_LT((fp.y_forward.cov - input.cov).cwiseAbs().maxCoeff(), 1e-10) << rule.name;
            EXPECT_LT((fp.cross - input.cov).cwiseAbs().maxCoeff(), 1e-10) << rule.name;
        }
    }
}

TEST(ForwardPass, ScalarAffine) {
    const auto f = [](const Eigen::VectorXd& x) {
        return Eigen::VectorXd::Constant(1, 2.0 * x(0) + 1.0);
    };
    const auto input = scalar_gaussian(3.0, 4.0);
    for (const auto& rule : rules_for(1)) {
        const auto fp = forward_pass(f, input, rule);
        EXPECT_NEAR(fp.y_forward.mean(0), 7.0, 1e-11) << rule.name;
        EXPECT_NEAR(fp.y_forward.cov(0, 0), 16.0, 1e-11) << rule.name;
        EXPECT_NEAR(fp.cross(0, 0), 8.0, 1e-11) << rule.name;
    }
}

TEST(ForwardPass, SquareUnderGaussHermite) {
    const auto square = [](const Eigen::VectorXd& x) {
        return Eigen::VectorXd::Constant(1, x(0) * x(0));
    };
    const auto fp = forward_pass(square, scalar_gaussian(0, 1), gauss_hermite_rule(1, 3));
    EXPECT_NEAR(fp.y_forward.mean(0), 1.0, 1e-12);  // E[x^2]
    EXPECT_NEAR(fp.y_forward.cov(0, 0), 2.0, 1e-12);  // Var(x^2)
    EXPECT_NEAR(fp.cross(0, 0), 0.0, 1e-12);  // Cov(x, x^2)
}

// Degree-3 rules cannot see the variance of a quadratic; the spherical
// radial rule reports zero output variance here.
TEST(ForwardPass, SquareUnderSphericalRadialIsDegenerate) {
    const auto square = [](const Eigen::VectorXd& x) {
        return Eigen::VectorXd::Constant(1, x(0) * x(0));
    };
    const auto fp = forward_pass(square, scalar_gaussian(0, 1), spherical_radial_rule(1));
    EXPECT_NEAR(fp.y_forward.mean(0), 1.0, 1e-14);
    EXPECT_NEAR(fp.y_forward.cov(0, 0), 0.0, 1e-14);
}

TEST(ForwardPass, NonFiniteThrows) {
    const auto logarithm = [](const Eigen::VectorXd& x) {
        return Eigen::VectorXd::Constant(1, std::log(x(0)));
    };
    EXPECT_THROW(forward_pass(logarithm, scalar_gaussian(0, 1), gauss_hermite_rule(1, 3)),
                 EvalError);
}

TEST(ForwardPass, NegativeWeightIndefinitenessNamesRule) {
    // kappa = -1 in dimension 4 puts weight -1/3 on the center node; a bump
    // function peaked there drives the output variance negative.
    const auto bump = [](const Eigen::VectorXd& x) {
        return Eigen::VectorXd::Constant(1, std::exp(-x.squaredNorm()));
    };
    const GaussianMoments input(Eigen::VectorXd::Zero(4), Eigen::MatrixXd::Identity(4, 4));
    try {
        forward_pass(bump, input, unscented_rule(4, -1.0));
        FAIL() << "expected NotPsdError";
    } catch (const NotPsdError& e) {
        EXPECT_NE(std::string(e.what()).find("ut("), std::string::npos);
    }
}

TEST(ForwardPass, JointAndLinearizationInvariants) {
    std::mt19937_64 rng(17);
    for (int rep = 0; rep < 30; ++rep) {
        const int n = 1 + static_cast<int>(rng() % 4);
        const int p = 1 + static_cast<int>(rng() % 4);
        const GaussianMoments input(random_vec(n, rng), random_spd(n, rng));
        const auto f = random_smooth_map(n, p, rng);
        const auto fp = forward_pass(f, input, gauss_hermite_rule(n, 3));

        const JointGaussian joint = fp.joint(input);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(joint.stacked());
        const double norm = fp.y_forward.cov.cwiseAbs().maxCoeff();
        EXPECT_GT(eig.eigenvalues().minCoeff(), -1e-8 * std::max(norm, 1.0));

        const Eigen::MatrixXd reconstructed = fp.lin * input.cov;
        const double scale = fp.cross.cwiseAbs().maxCoeff() + 1.0;
        EXPECT_LT((reconstructed - fp.cross.transpose()).cwiseAbs().maxCoeff() / scale, 1e-9);
    }
}

TEST(BackwardMarginal, NoNewInformationReturnsForward) {
    std::mt19937_64 rng(5);
    const GaussianMoments input(random_vec(2, rng), random_spd(2, rng));
    const auto f = random_smooth_map(2, 2, rng);
    const auto fp = forward_pass(f, input, gauss_hermite_rule(2, 3));
    const auto smoothed = backward_marginal(fp, input, fp.y_forward);
    EXPECT_LT((smoothed.mean - input.mean).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((smoothed.cov - input.cov).cwiseAbs().maxCoeff(), 1e-11);
}

TEST(BackwardMarginal, VacuousYMarginalReturnsForward) {
    std::mt19937_64 rng(6);
    const GaussianMoments input(random_vec(2, rng), random_spd(2, rng));
    const auto fp = forward_pass(random_smooth_map(2, 2, rng), input, gauss_hermite_rule(2, 3));
    const auto smoothed = backward_marginal(fp, input, GaussianMoments::vacuous(2));
    EXPECT_TRUE(smoothed.mean.isApprox(input.mean, 0));
    EXPECT_TRUE(smoothed.cov.isApprox(input.cov, 0));
}

TEST(BackwardMarginal, ScalarDoubling) {
    const auto f = [](const Eigen::VectorXd& x) { return Eigen::VectorXd::Constant(1, 2.0 * x(0)); };
    const auto fp = forward_pass(f, scalar_gaussian(0, 1), gauss_hermite_rule(1, 3));
    ASSERT_NEAR(fp.y_forward.cov(0, 0), 4.0, 1e-12);
    ASSERT_NEAR(fp.cross(0, 0), 2.0, 1e-12);

    const auto smoothed = backward_marginal(fp, scalar_gaussian(0, 1), scalar_gaussian(1.6, 0.8));
    EXPECT_NEAR(smoothed.mean(0), 0.8, 1e-12);
    EXPECT_NEAR(smoothed.cov(0, 0), 0.2, 1e-12);
}

TEST(BackwardMarginal, IdentityReturnsYMarginal) {
    std::mt19937_64 rng(9);
    const auto identity = [](const Eigen::VectorXd& x) { return x; };
    const GaussianMoments input(random_vec(3, rng), random_spd(3, rng));
    const auto fp = forward_pass(identity, input, gauss_hermite_rule(3, 3));
    const GaussianMoments y_marginal(random_vec(3, rng), random_spd(3, rng));
    const auto smoothed = backward_marginal(fp, input, y_marginal);
    EXPECT_LT((smoothed.mean - y_marginal.mean).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((smoothed.cov - y_marginal.cov).cwiseAbs().maxCoeff(), 1e-7);
}

TEST(BackwardDual, ZeroPassesThrough) {
    std::mt19937_64 rng(21);
    const GaussianMoments input(random_vec(2, rng), random_spd(2, rng));
    const auto fp = forward_pass(random_smooth_map(2, 3, rng), input, gauss_hermite_rule(2, 3));
    const auto dual = backward_dual(fp, DualMessage::zero(3));
    EXPECT_TRUE(dual.xi_tilde.isZero(0.0));
    EXPECT_TRUE(dual.W_tilde.isZero(0.0));
    EXPECT_EQ(dual.dim(), 2);
}

TEST(BackwardDual, ScalarDoubling) {
    const auto f = [](const Eigen::VectorXd& x) { return Eigen::VectorXd::Constant(1, 2.0 * x(0)); };
    const auto fp = forward_pass(f, scalar_gaussian(0, 1), gauss_hermite_rule(1, 3));
    Eigen::VectorXd xi(1);
    xi << -0.4;
    Eigen::MatrixXd w(1, 1);
    w << 0.2;
    const auto dual = backward_dual(fp, DualMessage(xi, w));
    EXPECT_NEAR(dual.xi_tilde(0), -0.8, 1e-12);
    EXPECT_NEAR(dual.W_tilde(0, 0), 0.8, 1e-12);

    const auto smoothed = marginal_from_dual(scalar_gaussian(0, 1), dual);
    EXPECT_NEAR(smoothed.mean(0), 0.8, 1e-12);
    EXPECT_NEAR(smoothed.cov(0, 0), 0.2, 1e-12);
}

TEST(BackwardDual, IdentityKeepsDual) {
    std::mt19937_64 rng(25);
    const auto identity = [](const Eigen::VectorXd& x) { return x; };
    const GaussianMoments input(random_vec(2, rng), random_spd(2, rng));
    const auto fp = forward_pass(identity, input, gauss_hermite_rule(2, 3));
    const Eigen::MatrixXd w = random_spd(2, rng);
    const DualMessage dual(random_vec(2, rng), w);
    const auto back = backward_dual(fp, dual);
    EXPECT_LT((back.xi_tilde - dual.xi_tilde).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((back.W_tilde - dual.W_tilde).cwiseAbs().maxCoeff(), 1e-8);
}

// The two backward parameterizations are algebraically the same update;
// check they agree numerically on random nodes and all three rules.
TEST(BackwardPasses, ParameterizationEquivalence) {
    std::mt19937_64 rng(41);
    int checked = 0;
    for (int rep = 0; rep < 80; ++rep) {
        const int n = 1 + static_cast<int>(rng() % 4);
        const auto rules = rules_for(n);
        const auto& rule = rules[rep % rules.size()];
        // sparse degree-3 rules cannot produce an invertible y covariance
        // when p exceeds n, so keep p <= n for those
        const bool rich_rule = rule.size() > 2 * n + 1;
        const int p = 1 + static_cast<int>(rng() % (rich_rule ? 4 : n));
        const GaussianMoments input(random_vec(n, rng), random_spd(n, rng));
        const auto f = random_smooth_map(n, p, rng);
        const auto fp = forward_pass(f, input, rule);

        // the moment-form pass needs a well-conditioned y covariance
        Eigen::LLT<Eigen::MatrixXd> llt(fp.y_forward.cov);
        if (llt.info() != Eigen::Success || llt.rcond() < 1e-8) continue;

        const GaussianMoments bwd(random_vec(p, rng), random_spd(p, rng));
        const auto y_marginal = combine_forward_backward(fp.y_forward, bwd);
        const auto y_dual = to_dual(fp.y_forward, bwd);

        const auto moment_path = backward_marginal(fp, input, y_marginal);
        const auto dual_path = marginal_from_dual(input, backward_dual(fp, y_dual));

        const double mean_scale = moment_path.mean.cwiseAbs().maxCoeff() + 1.0;
        const double cov_scale = moment_path.cov.cwiseAbs().maxCoeff() + 1.0;
        EXPECT_LT((moment_path.mean - dual_path.mean).cwiseAbs().maxCoeff() / mean_scale, 1e-8)
            << rule.name;
        EXPECT_LT((moment_path.cov - dual_path.cov).cwiseAbs().maxCoeff() / cov_scale, 1e-8)
            << rule.name;
        ++checked;
    }
    EXPECT_GE(checked, 60);
}

TEST(BackwardPasses, AffineConsistency) {
    std::mt19937_64 rng(43);
    std::normal_distribution<double> normal;
    for (int rep = 0; rep < 15; ++rep) {
        const int n = 1 + static_cast<int>(rng() % 3);
        const int p = 1 + static_cast<int>(rng() % n);  // A V A^T must stay invertible
        Eigen::MatrixXd a(p, n);
        Eigen::VectorXd b(p);
        for (int i = 0; i < p; ++i) {
            b(i) = normal(rng);
            for (int j = 0; j < n; ++j) a(i, j) = normal(rng);
        }
        const GaussianMoments input(random_vec(n, rng), random_spd(n, rng, 0.6));
        const auto affine = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd { return a * x + b; };

        for (const auto& rule : rules_for(n)) {
            const auto fp = forward_pass(affine, input, rule);
            EXPECT_LT((fp.y_forward.mean - (a * input.mean + b)).cwiseAbs().maxCoeff(), 1e-11)
                << rule.name;
            EXPECT_LT((fp.y_forward.cov - a * input.cov * a.transpose()).cwiseAbs().maxCoeff(),
                      1e-11)
                << rule.name;
            EXPECT_LT((fp.cross - input.cov * a.transpose()).cwiseAbs().maxCoeff(), 1e-11)
                << rule.name;

            // the implied backward gain equals the exact RTS gain
            const Eigen::MatrixXd exact_gain =
                input.cov * a.transpose() *
                (a * input.cov * a.transpose()).inverse();
            const auto llt = fp.y_forward.cov.llt();
            const Eigen::MatrixXd gain = llt.solve(fp.cross.transpose()).transpose();
            EXPECT_LT((gain - exact_gain).cwiseAbs().maxCoeff(), 1e-9) << rule.name;
        }
    }
}

TEST(BackwardPasses, MonteCarloAgreementForSine) {
    const auto sine = [](const Eigen::VectorXd& x) {
        return Eigen::VectorXd::Constant(1, std::sin(x(0)));
    };
    const auto input = scalar_gaussian(0.5, 0.09);
    const auto fp = forward_pass(sine, input, gauss_hermite_rule(1, 10));
    const auto mc = oracle::mc_moments(sine, input, 1000000, 777);

    EXPECT_LT(std::abs(fp.y_forward.mean(0) - mc.mean(0)), 3 * mc.mean_se(0));
    EXPECT_LT(std::abs(fp.y_forward.cov(0, 0) - mc.cov(0, 0)), 3 * mc.cov_se(0, 0));
    EXPECT_LT(std::abs(fp.cross(0, 0) - mc.cross(0, 0)), 3 * mc.cross_se(0, 0));
}

}  // namespace
}  // namespace nlgmp
