#include "pmglmm/inference.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <cmath>

namespace pmglmm {

namespace {

// Regularized lower incomplete gamma P(a, x) by series (x < a+1) or
// continued fraction (x >= a+1); both converge to machine precision.
double gamma_p(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw DomainError("gamma_p: invalid arguments");
    if (x == 0.0) return 0.0;
    const double lg = std::lgamma(a);
    if (x < a + 1.0) {
        double ap = a;
        double sum = 1.0 / a;
        double del = sum;
        for (int i = 0; i < 500; ++i) {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if (std::abs(del) < std::abs(sum) * 1e-17) break;
        }
        return sum * std::exp(-x + a * std::log(x) - lg);
    }
    // Lentz's continued fraction for Q(a, x).
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 500; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-17) break;
    }
    const double q = std::exp(-x + a * std::log(x) - lg) * h;
    return 1.0 - q;
}

double chisq_p_value(double value, int df, std::vector<std::string>* warnings) {
    double x = value;
    if (x < 0.0) {
        if (warnings) {
            warnings->push_back("negative statistic (surrogate gap); p-value computed at 0");
        }
        x = 0.0;
    }
    return chisq_sf(x, df);
}

}  // namespace

double chisq_sf(double x, int df) {
    if (x < 0.0) throw DomainError("chisq_sf: x must be nonnegative");
    if (df < 1) throw DomainError("chisq_sf: df must be >= 1");
    return 1.0 - gamma_p(0.5 * df, 0.5 * x);
}

MatrixXd sample_fisher(const FitResult& fit) {
    if (!fit.converged) throw DomainError("sample_fisher requires a converged fit");
    return -fit.hess;
}

VectorXd std_errors(const FitResult& fit) {
    const MatrixXd info = sample_fisher(fit);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(info);
    const double scale = es.eigenvalues().cwiseAbs().maxCoeff();
    if (es.eigenvalues().minCoeff() <= 1e-12 * scale) {
        std::string msg = "sample information is singular; null directions:";
        for (int i = 0; i < es.eigenvalues().size(); ++i) {
            if (es.eigenvalues()[i] <= 1e-12 * scale) {
                int dominant = 0;
                es.eigenvectors().col(i).cwiseAbs().maxCoeff(&dominant);
                msg += " theta[" + std::to_string(dominant) + "]";
            }
        }
        throw NumericalError(msg);
    }
    const MatrixXd inv = info.llt().solve(MatrixXd::Identity(info.rows(), info.cols()));
    return inv.diagonal().cwiseSqrt();
}

VectorXd restriction_embed(const Restriction& restriction, const VectorXd& theta1) {
    const MatrixXd& B = restriction.B;
    if (B.rows() >= B.cols()) throw DomainError("restriction must have k1 < k2");
    if (theta1.size() != B.rows()) {
        throw DomainError("theta1 length does not match restriction rows");
    }
    Eigen::JacobiSVD<MatrixXd> svd(B, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const VectorXd& sv = svd.singularValues();
    if (sv.minCoeff() <= 1e-12 * sv.maxCoeff()) {
        throw DomainError("restriction matrix is rank deficient");
    }
    return svd.matrixV() * sv.cwiseInverse().asDiagonal() *
           (svd.matrixU().transpose() * theta1);
}

TestResult lr_stat(const FitResult& fit_full, const FitResult& fit_reduced,
                   const Restriction& restriction) {
    if (fit_full.fingerprint != fit_reduced.fingerprint ||
        fit_full.n != fit_reduced.n) {
        throw DomainError("lr_stat: fits were computed on different data");
    }
    const int k2 = fit_full.p + fit_full.n_free;
    const int k1 = fit_reduced.p + fit_reduced.n_free;
    if (restriction.k2() != k2 || restriction.k1() != k1) {
        throw DomainError("restriction dimensions do not match the fits");
    }
    TestResult out;
    out.kind = TestKind::lr;
    out.value = 2.0 * (fit_full.psi0 - fit_reduced.psi0);
    out.df = restriction.df();
    out.p = chisq_p_value(out.value, out.df, &out.warnings);
    return out;
}

EmbeddedEval eval_at_embedded(const GlmmData& data, const Family& family,
                              const CovarianceSpec& cov, const VectorXd& theta2_star,
                              const SolverConfig& config) {
    const int p = data.p();
    const int r = cov.n_free();
    if (theta2_star.size() != p + r) {
        throw DomainError("embedded parameter length does not match the full model");
    }
    const VectorXd beta = theta2_star.head(p);
    VectorXd omega = cov.omega;
    const auto free = cov.free_indices();
    for (int k = 0; k < r; ++k) omega[free[k]] = theta2_star[p + k];
    validate_domain(cov.at(omega));  // embedded omega out of domain is an error

    const PredictResult pred = predict_random_effects(
        data, family, cov, beta, omega, init_state(family, data), config);
    const WorkingState state = make_state(data, family, beta, omega, pred.gammahat);
    const Surrogate psi = Surrogate::from_state(data, cov, state);
    const PsiEval ev = psi.eval(VectorXd::Zero(p), VectorXd::Zero(r));
    return {ev.grad, ev.hess};
}

TestResult score_stat(const GlmmData& data, const Family& family,
                      const CovarianceSpec& cov, const VectorXd& theta2_star,
                      const Restriction& restriction, const SolverConfig& config) {
    const EmbeddedEval ev = eval_at_embedded(data, family, cov, theta2_star, config);
    Eigen::LDLT<MatrixXd> ldlt(ev.hess);
    if (ldlt.info() != Eigen::Success || !ldlt.isInvertible()) {
        throw NumericalError("score_stat: surrogate Hessian singular at the embedded point");
    }
    TestResult out;
    out.kind = TestKind::score;
    out.value = -ev.grad.dot(ldlt.solve(ev.grad));
    out.df = restriction.df();
    out.p = chisq_p_value(out.value, out.df, &out.warnings);
    return out;
}

TestResult gw_stat(const VectorXd& theta2_star, const MatrixXd& hess_at_theta2_star,
                   const Restriction& restriction) {
    if (theta2_star.size() != hess_at_theta2_star.rows()) {
        throw DomainError("gw_stat: dimension mismatch");
    }
    TestResult out;
    out.kind = TestKind::gwald;
    out.value = -theta2_star.dot(hess_at_theta2_star * theta2_star);
    out.df = restriction.df();
    out.p = chisq_p_value(out.value, out.df, &out.warnings);
    return out;
}

}  // namespace pmglmm
