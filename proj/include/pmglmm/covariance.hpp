#pragma once

#include "pmglmm/types.hpp"

namespace pmglmm {

enum class CovKind { matern, exponential, scaled_identity };

/// Variance-component model: kind, hyperparameters omega, fixed mask,
/// pairwise distances (spatial kinds only) and a diagonal jitter.
///
/// matern: omega = (w1, w2, w3), w1 in (0,1), w2 > 0, w3 > 0; entries
///   [w1/(1-w1)] (w2 d)^w3 / (2^{w3-1} Gamma(w3)) K_w3(w2 d), diagonal
///   w1/(1-w1) + jitter. exponential is matern with w3 pinned at 1/2.
/// scaled_identity: omega = (w1), w1 > 0, D = w1 I + jitter I.
struct CovarianceSpec {
    CovKind kind = CovKind::scaled_identity;
    VectorXd omega;
    std::vector<bool> fixed;   // same length as omega; true = held constant
    MatrixXd distances;        // d x d, spatial kinds only
    double jitter = 0.0;
    int dim = 0;               // d

    int r() const { return static_cast<int>(omega.size()); }
    int n_free() const;
    std::vector<int> free_indices() const;

    /// Copy of this spec with omega replaced (same kind/mask/distances).
    CovarianceSpec at(VectorXd new_omega) const;
    /// Full omega vector with delta added into the free slots.
    VectorXd omega_plus(const VectorXd& delta_free) const;
};

/// matern spec with w3 fixed at 0.5 by default (free_w3 opts it in).
CovarianceSpec make_matern(VectorXd omega, MatrixXd distances, double jitter = 0.0,
                           bool free_w3 = false);
CovarianceSpec make_exponential(double w1, double w2, MatrixXd distances,
                                double jitter = 0.0);
CovarianceSpec make_scaled_identity(double w1, int dim, double jitter = 0.0,
                                    bool fixed = false);

/// Throws DomainError naming the violated constraint; no-op when in domain.
void validate_domain(const CovarianceSpec& spec);

/// The d x d variance-component matrix D at spec.omega.
/// Throws NumericalError (with the failing pivot) if not positive definite.
MatrixXd build_covariance(const CovarianceSpec& spec);

/// Elementwise dD/d(omega_j). Analytic for w1 (all kinds), for w2 when
/// w3 = 1/2, and for scaled identity; central finite differences otherwise.
MatrixXd covariance_grad(const CovarianceSpec& spec, int j);

/// Elementwise d2D/d(omega_j1)d(omega_j2), symmetric in (j1, j2); analytic
/// where both directions have closed forms, finite differences otherwise.
MatrixXd covariance_hess(const CovarianceSpec& spec, int j1, int j2);

}  // namespace pmglmm
