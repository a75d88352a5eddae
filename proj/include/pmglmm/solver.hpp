#pragma once

#include <optional>

#include "pmglmm/objective.hpp"

namespace pmglmm {

struct SolverConfig {
    double outer_tol = 1e-8;       // max-norm of the (alpha, delta) step
    double inner_tol = 1e-10;      // max-norm of the gammahat change
    double newton_gtol = 1e-9;     // gradient tolerance of the inner Newton
    double outer_grad_tol = 1e-8;  // converged requires grad norm below this
    int max_outer = 100;
    int max_inner = 200;
    int max_newton = 50;
    int damping = 30;              // step-halving limit
    bool polish = true;            // keep iterating to stagnation once converged
    int max_polish = 40;
    VectorXd omega_init;           // starting hyperparameters (full vector);
                                   // empty selects the kind's default
    std::vector<VectorXd> starts;  // multistart omega inits
    std::uint64_t seed = 0;
    bool record_trace = true;
    std::optional<VectorXd> beta_init;   // warm start (skips initialization)
    std::optional<VectorXd> gamma_init;
};

struct TraceEntry {
    VectorXd beta;
    VectorXd omega;
    double psi = 0.0;
    double step_norm = 0.0;
};

struct FitResult {
    VectorXd beta;
    VectorXd omega;      // full hyperparameter vector
    VectorXd gammahat;
    double psi0 = 0.0;        // surrogate value at the solution
    double grad_norm = 0.0;   // max-norm of the stacked gradient at (0,0)
    MatrixXd hess;            // surrogate Hessian at (0,0)
    VectorXd se;              // standard errors, beta then free omega
    int iterations = 0;
    bool converged = false;
    std::vector<TraceEntry> trace;
    std::vector<std::string> warnings;

    // problem shape + fingerprint, used by the inference module
    int n = 0, p = 0, n_free = 0;
    std::uint64_t fingerprint = 0;
};

/// Default starting hyperparameters for a covariance kind.
VectorXd default_omega_init(const CovarianceSpec& cov);

/// Default multistart grid (matern: omega1 x omega2 in {.25,.5,.75} x {.5,1,2}).
std::vector<VectorXd> default_start_grid(const CovarianceSpec& cov);

struct PredictResult {
    VectorXd gammahat;
    WorkingVectors work;
    int iterations = 0;
};

/// Fixed point of the prediction loop: repeat
///   R <- W^-1 + Z D Z^T; gammahat <- D Z^T R^-1 (ytilde - X beta);
///   eta <- X beta + Z gammahat; refresh ytilde, W,
/// until the gammahat change max-norm drops below inner_tol.
/// Throws NumericalError after max_inner iterations without convergence.
PredictResult predict_random_effects(const GlmmData& data, const Family& family,
                                     const CovarianceSpec& cov, const VectorXd& beta,
                                     const VectorXd& omega,
                                     const WorkingVectors& init_work,
                                     const SolverConfig& config);

struct InnerSolution {
    VectorXd alpha;
    VectorXd delta;
    double psi = 0.0;
    double grad_norm = 0.0;
    int newton_steps = 0;
    int halvings = 0;
};

/// Maximizes the surrogate over (alpha, delta): alpha is profiled in closed
/// form, delta by safeguarded Newton (negative-definite correction plus
/// step-halving, every trial step kept inside the hyperparameter domain and
/// required not to decrease the objective).
InnerSolution maximize_surrogate(const Surrogate& psi, const VectorXd& delta_start,
                                 const SolverConfig& config);

/// The full outer iteration: initialization from the data, alternating
/// surrogate maximization and random-effects prediction until the parameter
/// step stalls, with standard errors from the curvature at the solution.
FitResult fit(const GlmmData& data, const Family& family, const CovarianceSpec& cov,
              const SolverConfig& config = {});

/// Runs fit from every start and returns the converged result with the
/// largest surrogate value (ties: smaller gradient norm, then first start).
FitResult multistart_fit(const GlmmData& data, const Family& family,
                         const CovarianceSpec& cov, const SolverConfig& config);

/// Selection rule used by multistart_fit, exposed for direct testing.
int select_best(const std::vector<FitResult>& fits);

}  // namespace pmglmm
