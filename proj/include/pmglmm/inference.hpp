#pragma once

#include "pmglmm/solver.hpp"

namespace pmglmm {

/// Linear map B from the full model's stacked (beta, free omega) onto the
/// reduced model's; k1 x k2 with k1 < k2 and full row rank.
struct Restriction {
    MatrixXd B;

    int k1() const { return static_cast<int>(B.rows()); }
    int k2() const { return static_cast<int>(B.cols()); }
    int df() const { return k2() - k1(); }
};

enum class TestKind { lr, score, gwald };

struct TestResult {
    TestKind kind = TestKind::lr;
    double value = 0.0;
    int df = 0;
    double p = 1.0;
    std::vector<std::string> warnings;
};

/// Sample Fisher information: the negated surrogate Hessian at the solution.
MatrixXd sample_fisher(const FitResult& fit);

/// sqrt of the diagonal of the inverted information, beta entries first.
/// Throws NumericalError listing near-null directions if singular.
VectorXd std_errors(const FitResult& fit);

/// Minimum-norm embedding theta2* = B^+ theta1 via the SVD pseudo-inverse.
/// Throws DomainError if B is rank deficient.
VectorXd restriction_embed(const Restriction& restriction, const VectorXd& theta1);

/// Twice the surrogate gap between the nested fits; may be negative (the
/// surrogate is evaluated at two different solutions), flagged by a warning.
TestResult lr_stat(const FitResult& fit_full, const FitResult& fit_reduced,
                   const Restriction& restriction);

/// Score statistic at the embedded point: a fresh working state is built at
/// theta2* (random effects re-predicted there), then
/// S = -grad^T hess^-1 grad at (0,0). Embedded hyperparameters outside the
/// domain are an error, never clamped.
TestResult score_stat(const GlmmData& data, const Family& family,
                      const CovarianceSpec& cov, const VectorXd& theta2_star,
                      const Restriction& restriction, const SolverConfig& config = {});

/// Generalized Wald statistic -theta2*^T hess theta2* with the Hessian
/// evaluated at the embedded point.
TestResult gw_stat(const VectorXd& theta2_star, const MatrixXd& hess_at_theta2_star,
                   const Restriction& restriction);

/// Builds the working state and surrogate curvature at an embedded point;
/// shared by score_stat and the CLI test command.
struct EmbeddedEval {
    VectorXd grad;
    MatrixXd hess;
};
EmbeddedEval eval_at_embedded(const GlmmData& data, const Family& family,
                              const CovarianceSpec& cov, const VectorXd& theta2_star,
                              const SolverConfig& config);

/// Upper tail of the chi-square distribution with df degrees of freedom,
/// via the regularized incomplete gamma function; absolute error < 1e-10.
double chisq_sf(double x, int df);

}  // namespace pmglmm
