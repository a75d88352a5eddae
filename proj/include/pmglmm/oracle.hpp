#pragma once

#include "pmglmm/covariance.hpp"
#include "pmglmm/family.hpp"
#include "pmglmm/types.hpp"

namespace pmglmm {

/// Product Gauss-Hermite rule; mode centering shifts to the joint mode and
/// rescales by the Cholesky factor of the inverse negative joint Hessian.
struct QuadratureRule {
    enum class Centering { prior, mode };
    int nodes_per_dim = 40;
    Centering centering = Centering::mode;
    long max_total_nodes = 40L * 40L * 40L * 40L;  // budget: d <= 4 at default
};

/// Nodes and weights of the n-point Gauss-Hermite rule
/// (integral of e^{-t^2} f(t) dt), by Golub-Welsch.
void gauss_hermite(int n, VectorXd& nodes, VectorXd& weights);

/// Joint mode of log f(y|gamma) + log phi(gamma; 0, D) over gamma, with the
/// negated Hessian at the mode.
struct JointMode {
    VectorXd gamma;
    MatrixXd neg_hess;  // Z^T W Z + D^-1 at the mode
};
JointMode joint_mode(const GlmmData& data, const Family& family, const MatrixXd& D,
                     const VectorXd& beta);

/// Brute-force marginal log-likelihood log \int f(y|gamma) phi(gamma;0,D) dgamma
/// by the product rule, accumulated in the log domain.
double marginal_loglik(const GlmmData& data, const Family& family,
                       const CovarianceSpec& cov, const VectorXd& beta,
                       const VectorXd& omega, const QuadratureRule& rule = {});

/// Exact score (stacked beta block then free-omega block) as posterior
/// expectations over the same node set.
VectorXd marginal_score(const GlmmData& data, const Family& family,
                        const CovarianceSpec& cov, const VectorXd& beta,
                        const VectorXd& omega, const QuadratureRule& rule = {});

struct GridPoint {
    VectorXd beta;
    VectorXd omega;  // full
};
struct GridArgmax {
    VectorXd beta;
    VectorXd omega;
    double loglik = 0.0;
    int index = 0;
};

/// Exhaustive marginal_loglik over a list of candidate parameter points.
GridArgmax grid_argmax(const GlmmData& data, const Family& family,
                       const CovarianceSpec& cov, const std::vector<GridPoint>& grid,
                       const QuadratureRule& rule = {});

}  // namespace pmglmm
