#include "pmglmm/solver.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <limits>

namespace pmglmm {

namespace {

bool in_domain(const CovarianceSpec& spec) {
    try {
        validate_domain(spec);
        return true;
    } catch (const DomainError&) {
        return false;
    }
}

VectorXd free_components(const CovarianceSpec& cov, const VectorXd& omega_full) {
    const auto free = cov.free_indices();
    VectorXd out(free.size());
    for (size_t k = 0; k < free.size(); ++k) out[k] = omega_full[free[k]];
    return out;
}

VectorXd zero_free(const CovarianceSpec& cov) {
    VectorXd omega = cov.omega;
    for (int j : cov.free_indices()) omega[j] = 0.0;
    return omega;
}

// Ascent direction from a possibly indefinite Hessian: clip the spectrum to
// strictly negative values before inverting.
VectorXd safeguarded_newton_step(const MatrixXd& hess, const VectorXd& grad) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(hess);
    const VectorXd& lam = es.eigenvalues();
    const double scale = std::max(1.0, lam.cwiseAbs().maxCoeff());
    VectorXd inv_lam(lam.size());
    for (Eigen::Index i = 0; i < lam.size(); ++i) {
        inv_lam[i] = 1.0 / std::min(lam[i], -1e-8 * scale);
    }
    return -(es.eigenvectors() * inv_lam.asDiagonal() *
             es.eigenvectors().transpose() * grad);
}

double step_norm_of(const InnerSolution& sol) {
    double norm = sol.alpha.size() ? sol.alpha.cwiseAbs().maxCoeff() : 0.0;
    if (sol.delta.size()) norm = std::max(norm, sol.delta.cwiseAbs().maxCoeff());
    return norm;
}

}  // namespace

VectorXd default_omega_init(const CovarianceSpec& cov) {
    if (cov.kind == CovKind::scaled_identity) {
        return VectorXd::Constant(1, 1.0);
    }
    VectorXd omega(3);
    omega << 0.5, 1.0, (cov.omega.size() == 3 && cov.omega[2] > 0.0) ? cov.omega[2] : 0.5;
    return omega;
}

std::vector<VectorXd> default_start_grid(const CovarianceSpec& cov) {
    std::vector<VectorXd> starts;
    if (cov.kind == CovKind::scaled_identity) {
        for (double w : {0.25, 1.0, 4.0}) starts.push_back(VectorXd::Constant(1, w));
        return starts;
    }
    const double w3 = (cov.omega.size() == 3 && cov.omega[2] > 0.0) ? cov.omega[2] : 0.5;
    for (double w1 : {0.25, 0.5, 0.75}) {
        for (double w2 : {0.5, 1.0, 2.0}) {
            VectorXd omega(3);
            omega << w1, w2, w3;
            starts.push_back(omega);
        }
    }
    return starts;
}

PredictResult predict_random_effects(const GlmmData& data, const Family& family,
                                     const CovarianceSpec& cov, const VectorXd& beta,
                                     const VectorXd& omega,
                                     const WorkingVectors& init_work,
                                     const SolverConfig& config) {
    const MatrixXd D = build_covariance(cov.at(omega));
    const MatrixXd DZt = D * data.Z.transpose();
    PredictResult out;
    out.work = init_work;
    out.gammahat = VectorXd::Zero(data.d());
    const VectorXd Xb = data.X * beta;
    for (int it = 1; it <= config.max_inner; ++it) {
        const CholeskyMatrix R = assemble_marginal_cov(out.work, data.Z, D);
        const VectorXd gamma_next = DZt * R.llt.solve(out.work.ytilde - Xb);
        const double change = (gamma_next - out.gammahat).cwiseAbs().maxCoeff();
        out.gammahat = gamma_next;
        out.work = working_response(family, data, Xb + data.Z * out.gammahat);
        out.iterations = it;
        if (change < config.inner_tol) return out;
    }
    const double change =
        (DZt * assemble_marginal_cov(out.work, data.Z, D).llt.solve(out.work.ytilde - Xb) -
         out.gammahat)
            .cwiseAbs()
            .maxCoeff();
    throw NumericalError("random-effects prediction did not converge in " +
                         std::to_string(config.max_inner) +
                         " iterations (last change " + std::to_string(change) + ")");
}

InnerSolution maximize_surrogate(const Surrogate& psi, const VectorXd& delta_start,
                                 const SolverConfig& config) {
    InnerSolution sol;
    const int r = psi.n_free();
    const int p = psi.p();
    if (r == 0) {
        sol.delta = VectorXd();
        sol.alpha = psi.profiled_alpha(sol.delta);
        const PsiEval ev = psi.eval(sol.alpha, sol.delta, false);
        sol.psi = ev.value;
        sol.grad_norm = ev.grad.cwiseAbs().maxCoeff();
        return sol;
    }

    VectorXd delta = delta_start;
    VectorXd alpha = psi.profiled_alpha(delta);
    PsiEval ev = psi.eval(alpha, delta, true);
    for (int it = 0; it < config.max_newton; ++it) {
        const double gnorm = ev.grad.cwiseAbs().maxCoeff();
        if (gnorm < config.newton_gtol) {
            sol.alpha = alpha;
            sol.delta = delta;
            sol.psi = ev.value;
            sol.grad_norm = gnorm;
            sol.newton_steps = it;
            return sol;
        }
        const VectorXd g_delta = ev.grad.tail(r);
        const MatrixXd Haa = ev.hess.topLeftCorner(p, p);
        const MatrixXd Had = ev.hess.topRightCorner(p, r);
        const MatrixXd Hdd = ev.hess.bottomRightCorner(r, r);
        const MatrixXd Hp = Hdd - Had.transpose() * Haa.ldlt().solve(Had);
        VectorXd step = safeguarded_newton_step(Hp, g_delta);

        bool accepted = false;
        for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
            if (attempt == 1) {
                // Newton direction failed every halving: try plain ascent.
                step = g_delta / std::max(1.0, g_delta.cwiseAbs().maxCoeff());
            }
            double t = 1.0;
            for (int h = 0; h <= config.damping; ++h, t *= 0.5) {
                const VectorXd cand = delta + t * step;
                if (!in_domain(psi.cov().at(psi.cov().at(psi.omega()).omega_plus(cand)))) {
                    continue;
                }
                const VectorXd a2 = psi.profiled_alpha(cand);
                const double v2 = psi.value(a2, cand);
                if (v2 >= ev.value) {
                    if (h > 0) sol.halvings += h;
                    delta = cand;
                    alpha = a2;
                    accepted = true;
                    break;
                }
            }
        }
        if (!accepted) {
            if (gnorm < 1e-6) {
                // No ascent possible at roundoff level: accept as stationary.
                sol.alpha = alpha;
                sol.delta = delta;
                sol.psi = ev.value;
                sol.grad_norm = gnorm;
                sol.newton_steps = it;
                return sol;
            }
            throw NumericalError(
                "surrogate maximization found no feasible ascent step (gradient norm " +
                std::to_string(gnorm) + ")");
        }
        ev = psi.eval(alpha, delta, true);
    }
    throw NumericalError("surrogate maximization exceeded max_newton=" +
                         std::to_string(config.max_newton) + " (gradient norm " +
                         std::to_string(ev.grad.cwiseAbs().maxCoeff()) + ")");
}

namespace {

// One outer iteration: refresh working vectors at the current iterate,
// maximize the surrogate around it, apply the additive update, re-predict.
struct OuterStep {
    WorkingState state;
    InnerSolution sol;
    double step_norm = 0.0;
    int halvings = 0;
};

OuterStep outer_iteration(const GlmmData& data, const Family& family,
                          const CovarianceSpec& cov, VectorXd& beta, VectorXd& omega,
                          VectorXd& gammahat, const SolverConfig& config) {
    OuterStep out;
    out.state = make_state(data, family, beta, omega, gammahat);
    const Surrogate psi = Surrogate::from_state(data, cov, out.state);
    out.sol = maximize_surrogate(psi, VectorXd::Zero(psi.n_free()), config);
    beta += out.sol.alpha;
    omega = cov.at(omega).omega_plus(out.sol.delta);
    const PredictResult pred = predict_random_effects(data, family, cov, beta, omega,
                                                      out.state.work, config);
    gammahat = pred.gammahat;
    out.step_norm = step_norm_of(out.sol);
    out.halvings = out.sol.halvings;
    return out;
}

}  // namespace

FitResult fit(const GlmmData& data, const Family& family, const CovarianceSpec& cov,
              const SolverConfig& config) {
    if (cov.dim != data.d()) {
        throw DomainError("covariance dimension does not match Z columns");
    }
    const VectorXd omega_init =
        config.omega_init.size() ? config.omega_init : default_omega_init(cov);
    validate_domain(cov.at(omega_init));

    VectorXd beta, omega, gammahat;
    int total_halvings = 0;
    if (config.beta_init && config.gamma_init) {
        beta = *config.beta_init;
        omega = omega_init;
        gammahat = *config.gamma_init;
    } else {
        // Initialization: data-driven working vectors, then one maximization
        // with zero base parameters, then the first prediction pass.
        const WorkingVectors work0 = init_state(family, data);
        const Surrogate psi0(data, cov, work0, VectorXd::Zero(data.p()), zero_free(cov));
        const InnerSolution sol0 =
            maximize_surrogate(psi0, free_components(cov, omega_init), config);
        beta = sol0.alpha;
        omega = cov.at(zero_free(cov)).omega_plus(sol0.delta);
        total_halvings += sol0.halvings;
        const PredictResult pred =
            predict_random_effects(data, family, cov, beta, omega, work0, config);
        gammahat = pred.gammahat;
    }

    FitResult result;
    bool step_converged = false;
    int iterations = 0;
    double step_norm = std::numeric_limits<double>::infinity();
    for (int t = 1; t <= config.max_outer; ++t) {
        const OuterStep step = outer_iteration(data, family, cov, beta, omega,
                                               gammahat, config);
        iterations = t;
        total_halvings += step.halvings;
        step_norm = step.step_norm;
        if (config.record_trace) {
            result.trace.push_back({beta, omega, step.sol.psi, step.step_norm});
        }
        if (step.step_norm < config.outer_tol) {
            step_converged = true;
            break;
        }
    }
    if (step_converged && config.polish) {
        // Extra iterations to stagnation so the fixed point is restart-stable.
        const double scale = std::max({1.0, beta.cwiseAbs().maxCoeff(),
                                       omega.cwiseAbs().maxCoeff()});
        double prev = step_norm;
        for (int t = 0; t < config.max_polish; ++t) {
            const OuterStep step = outer_iteration(data, family, cov, beta, omega,
                                                   gammahat, config);
            ++iterations;
            total_halvings += step.halvings;
            if (config.record_trace) {
                result.trace.push_back({beta, omega, step.sol.psi, step.step_norm});
            }
            if (step.step_norm < 5e-13 * scale || step.step_norm >= prev) break;
            prev = step.step_norm;
        }
    }

    // Final state and curvature at (0, 0).
    const WorkingState state = make_state(data, family, beta, omega, gammahat);
    const Surrogate psi = Surrogate::from_state(data, cov, state);
    const PsiEval ev = psi.eval(VectorXd::Zero(data.p()), VectorXd::Zero(psi.n_free()));

    result.beta = beta;
    result.omega = omega;
    result.gammahat = gammahat;
    result.psi0 = ev.value;
    result.grad_norm = ev.grad.cwiseAbs().maxCoeff();
    result.hess = ev.hess;
    result.iterations = iterations;
    result.converged = step_converged && result.grad_norm < config.outer_grad_tol;
    result.n = data.n();
    result.p = data.p();
    result.n_free = psi.n_free();
    result.fingerprint = data_fingerprint(data);
    if (!step_converged) {
        result.warnings.push_back("outer iteration did not converge in " +
                                  std::to_string(config.max_outer) +
                                  " iterations (last step " + std::to_string(step_norm) + ")");
    } else if (!result.converged) {
        result.warnings.push_back("step criterion met but gradient norm " +
                                  std::to_string(result.grad_norm) +
                                  " exceeds outer_grad_tol");
    }
    if (total_halvings > 0) {
        result.warnings.push_back("damping engaged (" + std::to_string(total_halvings) +
                                  " step halvings)");
    }
    if (!state.work.clamped.empty()) {
        result.warnings.push_back(std::to_string(state.work.clamped.size()) +
                                  " working weights clamped at the floor");
    }

    // Standard errors from the curvature at the solution.
    const MatrixXd info = -result.hess;
    Eigen::LLT<MatrixXd> llt(info);
    if (llt.info() == Eigen::Success) {
        const MatrixXd inv = llt.solve(MatrixXd::Identity(info.rows(), info.cols()));
        result.se = inv.diagonal().cwiseMax(0.0).cwiseSqrt();
    } else {
        result.warnings.push_back("sample information not positive definite; no standard errors");
    }
    return result;
}

FitResult multistart_fit(const GlmmData& data, const Family& family,
                         const CovarianceSpec& cov, const SolverConfig& config) {
    if (config.starts.empty()) throw DomainError("multistart_fit requires nonempty starts");
    std::vector<FitResult> fits;
    std::vector<std::string> failures;
    for (size_t s = 0; s < config.starts.size(); ++s) {
        SolverConfig one = config;
        one.omega_init = config.starts[s];
        one.starts.clear();
        try {
            fits.push_back(fit(data, family, cov, one));
        } catch (const std::exception& e) {
            failures.push_back("start " + std::to_string(s) + ": " + e.what());
        }
    }
    if (fits.empty()) {
        std::string msg = "all multistart fits failed";
        for (const auto& f : failures) msg += "; " + f;
        throw NumericalError(msg);
    }
    FitResult best = fits[select_best(fits)];
    for (const auto& f : failures) best.warnings.push_back(f);
    return best;
}

int select_best(const std::vector<FitResult>& fits) {
    int best = -1;
    bool best_conv = false;
    for (int i = 0; i < static_cast<int>(fits.size()); ++i) {
        const bool conv = fits[i].converged;
        if (best < 0 || (conv && !best_conv)) {
            best = i;
            best_conv = conv;
            continue;
        }
        if (conv != best_conv) continue;  // never replace converged by non-converged
        if (fits[i].psi0 > fits[best].psi0 ||
            (fits[i].psi0 == fits[best].psi0 &&
             fits[i].grad_norm < fits[best].grad_norm)) {
            best = i;
        }
    }
    return best;
}

}  // namespace pmglmm
