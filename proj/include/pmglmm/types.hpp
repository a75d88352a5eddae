#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

namespace pmglmm {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Eigen::VectorXi;

/// Invalid user input: bad arguments, domain violations, malformed files.
struct DomainError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Numerical failure: factorization breakdown, non-convergence, budget overrun.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class FamilyKind { binomial_logit, poisson_log };

struct Family {
    FamilyKind kind = FamilyKind::poisson_log;

    bool is_binomial() const { return kind == FamilyKind::binomial_logit; }
};

/// One observed problem instance: counts, designs, optional site geometry.
///
/// Invariants enforced at construction: rank(X) = p, rank(Z) = d,
/// y integral and nonnegative, and 0 <= y_i <= m_i for binomial data.
struct GlmmData {
    VectorXd y;          // response, length n
    VectorXd m;          // binomial trials, length n (empty for poisson)
    MatrixXd X;          // fixed-effects design, n x p
    MatrixXd Z;          // random-effects design, n x d
    MatrixXd coords;     // optional site coordinates, n x 2
    MatrixXd distances;  // pairwise site distances, d x d (empty if no coords)

    int n() const { return static_cast<int>(y.size()); }
    int p() const { return static_cast<int>(X.cols()); }
    int d() const { return static_cast<int>(Z.cols()); }
};

/// Builds a validated GlmmData; throws DomainError on any violated invariant.
GlmmData make_glmm_data(const Family& family, VectorXd y, VectorXd m, MatrixXd X,
                        MatrixXd Z, MatrixXd coords = MatrixXd());

/// Linearized pseudo-data at a linear predictor: eta, ytilde, diagonal weights.
struct WorkingVectors {
    VectorXd eta;
    VectorXd ytilde;
    VectorXd w;                   // diag of W, strictly positive after clamping
    std::vector<int> clamped;     // indices where w hit the floor
};

/// FNV-1a over the response bytes; used to detect mismatched fits in tests.
std::uint64_t data_fingerprint(const GlmmData& data);

}  // namespace pmglmm
