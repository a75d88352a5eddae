#pragma once

#include <Eigen/Cholesky>
#include <functional>

#include "pmglmm/covariance.hpp"
#include "pmglmm/family.hpp"
#include "pmglmm/types.hpp"

namespace pmglmm {

/// Solver iterate: parameters, predicted random effects, and the working
/// vectors at eta = X beta + Z gammahat.
struct WorkingState {
    VectorXd beta;
    VectorXd omega;     // full hyperparameter vector
    VectorXd gammahat;
    WorkingVectors work;
};

/// Recomputes the working vectors from (beta, gammahat).
WorkingState make_state(const GlmmData& data, const Family& family, VectorXd beta,
                        VectorXd omega, VectorXd gammahat);

/// Value, stacked gradient (alpha block then delta block over free
/// hyperparameters) and symmetrized Hessian of the surrogate objective.
struct PsiEval {
    double value = 0.0;
    VectorXd grad;
    MatrixXd hess;  // empty unless requested
};

struct CholeskyMatrix {
    MatrixXd mat;
    Eigen::LLT<MatrixXd> llt;
    double logdet = 0.0;
};

/// R = W^-1 + Z D Z^T with its cached factorization.
/// Throws NumericalError (with pivot index) if the factorization fails.
CholeskyMatrix assemble_marginal_cov(const WorkingVectors& work, const MatrixXd& Z,
                                     const MatrixXd& D);

struct PosteriorMoments {
    VectorXd mean;  // v = D Z^T R^-1 (ytilde - X beta - X alpha)
    MatrixXd cov;   // V = D - D Z^T R^-1 Z D
};

/// The working Gaussian objective
///   psi(alpha, delta) = log phi(ytilde; X(beta+alpha), R_delta),
/// with ytilde and W frozen at the state's gammahat and
/// R_delta = W^-1 + Z D(omega+delta) Z^T. delta runs over the free
/// hyperparameters only.
class Surrogate {
  public:
    Surrogate(const GlmmData& data, const CovarianceSpec& cov, WorkingVectors work,
              VectorXd beta, VectorXd omega_base);

    static Surrogate from_state(const GlmmData& data, const CovarianceSpec& cov,
                                const WorkingState& state);

    double value(const VectorXd& alpha, const VectorXd& delta) const;
    PsiEval eval(const VectorXd& alpha, const VectorXd& delta,
                 bool want_hess = true) const;

    /// Closed-form maximizer of psi over alpha at fixed delta (psi is exactly
    /// quadratic in alpha): the weighted least-squares solution.
    VectorXd profiled_alpha(const VectorXd& delta) const;

    PosteriorMoments posterior_moments(const VectorXd& alpha,
                                       const VectorXd& delta) const;

    int n_free() const { return static_cast<int>(free_.size()); }
    int p() const { return static_cast<int>(beta_.size()); }
    const VectorXd& beta() const { return beta_; }
    const VectorXd& omega() const { return omega_; }
    const WorkingVectors& work() const { return work_; }
    const CovarianceSpec& cov() const { return cov_; }

  private:
    CholeskyMatrix marginal_at(const VectorXd& delta, MatrixXd* D_out) const;

    const GlmmData& data_;
    CovarianceSpec cov_;       // kind/mask/distances; omega slot unused
    WorkingVectors work_;
    VectorXd beta_;
    VectorXd omega_;           // base hyperparameters (full)
    std::vector<int> free_;
};

/// Residuals of the Gaussian factorization identity
///   phi(ytilde; X beta + X alpha + Z gamma, W^-1) phi(gamma; 0, D)
///     = phi(gamma; v, V) phi(ytilde; X beta + X alpha, R)
/// for an arbitrary configuration, together with its four term-wise
/// decomposition residuals and the block-determinant identity
///   det(D) det(W^-1) = det(D - D Z^T R^-1 Z D) det(R).
struct FactorizationCheck {
    double log_residual = 0.0;
    double term_residual[4] = {0, 0, 0, 0};
    double det_residual = 0.0;  // relative
    double max_residual() const;
};

FactorizationCheck factorization_residual(const MatrixXd& X, const MatrixXd& Z,
                                          const VectorXd& ytilde, const VectorXd& w,
                                          const MatrixXd& D, const VectorXd& beta,
                                          const VectorXd& alpha, const VectorXd& gamma);

/// log of the multivariate normal density phi(t; mean, Sigma).
double mvn_logpdf(const VectorXd& t, const VectorXd& mean, const MatrixXd& Sigma);

/// Value/gradient/Hessian of theta -> log phi(res; 0, Sigma(theta)) given the
/// factorized Sigma, its first derivatives, and a second-derivative callback.
/// Shared by the surrogate's delta blocks and the simulation oracle estimator.
struct HyperLogDens {
    double value = 0.0;
    VectorXd grad;
    MatrixXd hess;
};
HyperLogDens gaussian_logdens_hyper(
    const CholeskyMatrix& sigma, const VectorXd& res,
    const std::vector<MatrixXd>& dSigma,
    const std::function<MatrixXd(int, int)>& d2Sigma, bool want_hess);

}  // namespace pmglmm
