#pragma once

#include "pmglmm/types.hpp"

namespace pmglmm {

/// Cumulant function values b, b', b'' evaluated elementwise at eta.
struct BValues {
    VectorXd b;
    VectorXd bprime;        // conditional mean
    VectorXd bdoubleprime;  // conditional variance, > 0 for finite eta
};

// Weights below this floor are clamped and the index recorded.
inline constexpr double kWeightFloor = 1e-10;

/// Evaluates the cumulant function and its first two derivatives.
/// Overflow-safe for |eta| large; never returns NaN for finite input.
/// `m` is the trials vector for the binomial family and ignored for poisson.
BValues eval_b(const Family& family, const VectorXd& m, const VectorXd& eta);

/// Working response ytilde = eta + (y - b') / b'' and weights w = b''(eta),
/// with w clamped at kWeightFloor (clamped indices recorded).
WorkingVectors working_response(const Family& family, const GlmmData& data,
                                const VectorXd& eta);

/// Family-specific starting values: eta0 from count-smoothed empirical links
/// (binomial: log[(y+.5)/(m-y+.5)], poisson: log(y+.5)), then the generic
/// working-response rule at eta0. The +0.5 correction keeps all logs finite.
WorkingVectors init_state(const Family& family, const GlmmData& data);

/// Conditional log-density log f(y | eta) with the exact normalizing term.
double loglik_conditional(const Family& family, const GlmmData& data,
                          const VectorXd& eta);

}  // namespace pmglmm
