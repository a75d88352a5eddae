#include "pmglmm/objective.hpp"

#include <cmath>
#include <functional>

namespace pmglmm {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
}

WorkingState make_state(const GlmmData& data, const Family& family, VectorXd beta,
                        VectorXd omega, VectorXd gammahat) {
    WorkingState st;
    const VectorXd eta = data.X * beta + data.Z * gammahat;
    st.work = working_response(family, data, eta);
    st.beta = std::move(beta);
    st.omega = std::move(omega);
    st.gammahat = std::move(gammahat);
    return st;
}

CholeskyMatrix assemble_marginal_cov(const WorkingVectors& work, const MatrixXd& Z,
                                     const MatrixXd& D) {
    CholeskyMatrix out;
    out.mat = Z * D * Z.transpose();
    out.mat.diagonal() += work.w.cwiseInverse();
    out.llt.compute(out.mat);
    if (out.llt.info() != Eigen::Success) {
        // locate the first nonpositive pivot for the error message
        MatrixXd A = out.mat;
        int pivot = static_cast<int>(A.rows()) - 1;
        for (int k = 0; k < A.rows(); ++k) {
            if (A(k, k) <= 0.0) {
                pivot = k;
                break;
            }
            for (int i = k + 1; i < A.rows(); ++i) {
                for (int j = k + 1; j <= i; ++j) A(i, j) -= A(i, k) * A(j, k) / A(k, k);
            }
        }
        throw NumericalError("marginal covariance factorization failed (pivot " +
                             std::to_string(pivot) + ")");
    }
    out.logdet = 2.0 * MatrixXd(out.llt.matrixL()).diagonal().array().log().sum();
    return out;
}

double mvn_logpdf(const VectorXd& t, const VectorXd& mean, const MatrixXd& Sigma) {
    Eigen::LLT<MatrixXd> llt(Sigma);
    if (llt.info() != Eigen::Success) {
        throw NumericalError("mvn_logpdf: covariance not positive definite");
    }
    const VectorXd res = t - mean;
    const double logdet = 2.0 * MatrixXd(llt.matrixL()).diagonal().array().log().sum();
    return -0.5 * static_cast<double>(t.size()) * kLog2Pi - 0.5 * logdet -
           0.5 * res.dot(llt.solve(res));
}

HyperLogDens gaussian_logdens_hyper(
    const CholeskyMatrix& sigma, const VectorXd& res,
    const std::vector<MatrixXd>& dSigma,
    const std::function<MatrixXd(int, int)>& d2Sigma, bool want_hess) {
    const int k = static_cast<int>(res.size());
    const int r = static_cast<int>(dSigma.size());
    HyperLogDens out;
    const VectorXd s = sigma.llt.solve(res);
    out.value = -0.5 * k * kLog2Pi - 0.5 * sigma.logdet - 0.5 * res.dot(s);

    std::vector<MatrixXd> S(r);  // S_j = Sigma^-1 dSigma_j, via the cached factor
    out.grad.resize(r);
    for (int j = 0; j < r; ++j) {
        S[j] = sigma.llt.solve(dSigma[j]);
        out.grad[j] = -0.5 * S[j].trace() + 0.5 * s.dot(dSigma[j] * s);
    }
    if (!want_hess) return out;

    out.hess.resize(r, r);
    for (int j1 = 0; j1 < r; ++j1) {
        for (int j2 = j1; j2 < r; ++j2) {
            const MatrixXd d2 = d2Sigma(j1, j2);
            double h = 0.5 * S[j1].cwiseProduct(S[j2].transpose()).sum();
            if (d2.size() > 0) {
                h += -0.5 * sigma.llt.solve(d2).trace() + 0.5 * s.dot(d2 * s);
            }
            h -= s.dot(dSigma[j1] * sigma.llt.solve(dSigma[j2] * s));
            out.hess(j1, j2) = h;
            out.hess(j2, j1) = h;
        }
    }
    return out;
}

Surrogate::Surrogate(const GlmmData& data, const CovarianceSpec& cov,
                     WorkingVectors work, VectorXd beta, VectorXd omega_base)
    : data_(data),
      cov_(cov),
      work_(std::move(work)),
      beta_(std::move(beta)),
      omega_(std::move(omega_base)),
      free_(cov.free_indices()) {}

Surrogate Surrogate::from_state(const GlmmData& data, const CovarianceSpec& cov,
                                const WorkingState& state) {
    return Surrogate(data, cov, state.work, state.beta, state.omega);
}

CholeskyMatrix Surrogate::marginal_at(const VectorXd& delta, MatrixXd* D_out) const {
    const CovarianceSpec pert = cov_.at(cov_.at(omega_).omega_plus(delta));
    const MatrixXd D = build_covariance(pert);
    if (D_out) *D_out = D;
    return assemble_marginal_cov(work_, data_.Z, D);
}

double Surrogate::value(const VectorXd& alpha, const VectorXd& delta) const {
    const CholeskyMatrix R = marginal_at(delta, nullptr);
    const VectorXd res = work_.ytilde - data_.X * (beta_ + alpha);
    return -0.5 * data_.n() * kLog2Pi - 0.5 * R.logdet - 0.5 * res.dot(R.llt.solve(res));
}

VectorXd Surrogate::profiled_alpha(const VectorXd& delta) const {
    const CholeskyMatrix R = marginal_at(delta, nullptr);
    const VectorXd res = work_.ytilde - data_.X * beta_;
    const MatrixXd RiX = R.llt.solve(data_.X);
    return (data_.X.transpose() * RiX)
        .ldlt()
        .solve(RiX.transpose() * res);
}

PsiEval Surrogate::eval(const VectorXd& alpha, const VectorXd& delta,
                        bool want_hess) const {
    const CovarianceSpec pert = cov_.at(cov_.at(omega_).omega_plus(delta));
    const MatrixXd D = build_covariance(pert);
    const CholeskyMatrix R = assemble_marginal_cov(work_, data_.Z, D);
    const VectorXd res = work_.ytilde - data_.X * (beta_ + alpha);
    const int r = n_free();

    std::vector<MatrixXd> dR(r);
    for (int k = 0; k < r; ++k) {
        dR[k] = data_.Z * covariance_grad(pert, free_[k]) * data_.Z.transpose();
    }
    auto d2R = [&](int k1, int k2) -> MatrixXd {
        return data_.Z * covariance_hess(pert, free_[k1], free_[k2]) *
               data_.Z.transpose();
    };
    const HyperLogDens parts = gaussian_logdens_hyper(R, res, dR, d2R, want_hess);

    PsiEval out;
    out.value = parts.value;
    const int pdim = p();
    out.grad.resize(pdim + r);
    const VectorXd s = R.llt.solve(res);
    out.grad.head(pdim) = data_.X.transpose() * s;
    out.grad.tail(r) = parts.grad;
    if (!want_hess) return out;

    out.hess.resize(pdim + r, pdim + r);
    const MatrixXd RiX = R.llt.solve(data_.X);
    out.hess.topLeftCorner(pdim, pdim) = -data_.X.transpose() * RiX;
    for (int k = 0; k < r; ++k) {
        out.hess.block(0, pdim + k, pdim, 1) = -RiX.transpose() * (dR[k] * s);
    }
    out.hess.bottomRightCorner(r, r) = parts.hess;
    out.hess.bottomLeftCorner(r, pdim) =
        out.hess.topRightCorner(pdim, r).transpose();
    out.hess = 0.5 * (out.hess + out.hess.transpose()).eval();
    return out;
}

PosteriorMoments Surrogate::posterior_moments(const VectorXd& alpha,
                                              const VectorXd& delta) const {
    MatrixXd D;
    const CholeskyMatrix R = marginal_at(delta, &D);
    const VectorXd res = work_.ytilde - data_.X * (beta_ + alpha);
    const MatrixXd DZt = D * data_.Z.transpose();
    PosteriorMoments out;
    out.mean = DZt * R.llt.solve(res);
    out.cov = D - DZt * R.llt.solve(DZt.transpose());
    return out;
}

double FactorizationCheck::max_residual() const {
    double m = log_residual;
    for (double t : term_residual) m = std::max(m, t);
    return std::max(m, det_residual);
}

FactorizationCheck factorization_residual(const MatrixXd& X, const MatrixXd& Z,
                                          const VectorXd& ytilde, const VectorXd& w,
                                          const MatrixXd& D, const VectorXd& beta,
                                          const VectorXd& alpha, const VectorXd& gamma) {
    const VectorXd mu = X * (beta + alpha);
    const MatrixXd Winv = w.cwiseInverse().asDiagonal();
    const MatrixXd W = w.asDiagonal();
    const MatrixXd R = Winv + Z * D * Z.transpose();
    Eigen::LLT<MatrixXd> lltR(R);
    Eigen::LLT<MatrixXd> lltD(D);
    if (lltR.info() != Eigen::Success || lltD.info() != Eigen::Success) {
        throw NumericalError("factorization_residual: configuration not positive definite");
    }
    const MatrixXd DZt = D * Z.transpose();
    const VectorXd res = ytilde - mu;
    const VectorXd v = DZt * lltR.solve(res);
    const MatrixXd V = D - DZt * lltR.solve(DZt.transpose());

    const double lhs = mvn_logpdf(ytilde, mu + Z * gamma, Winv) + mvn_logpdf(gamma, VectorXd::Zero(gamma.size()), D);
    const double rhs = mvn_logpdf(gamma, v, V) + mvn_logpdf(ytilde, mu, R);

    FactorizationCheck out;
    out.log_residual = std::abs(lhs - rhs);

    // Term-wise decomposition. The gamma-free quadratic term on the right
    // carries a plus sign (R^-1 + R^-1 Z D V^-1 D Z^T R^-1 collapses to W).
    Eigen::LLT<MatrixXd> lltV(V);
    const double logdetW_inv = -w.array().log().sum();
    const double logdetD = 2.0 * MatrixXd(lltD.matrixL()).diagonal().array().log().sum();
    const double logdetR = 2.0 * MatrixXd(lltR.matrixL()).diagonal().array().log().sum();
    const double logdetV = 2.0 * MatrixXd(lltV.matrixL()).diagonal().array().log().sum();

    const double T1 = -0.5 * (logdetW_inv + logdetD);
    const double T1t = -0.5 * (logdetR + logdetV);
    const double T2 = -0.5 * res.dot(W * res);
    const VectorXd Rires = lltR.solve(res);
    const double T2t = -0.5 * (res.dot(Rires) + v.dot(lltV.solve(v)));
    const double T3 = gamma.dot(Z.transpose() * (W * res));
    const double T3t = gamma.dot(lltV.solve(v));
    const double T4 = -0.5 * gamma.dot(D.llt().solve(gamma) + Z.transpose() * (W * (Z * gamma)));
    const double T4t = -0.5 * gamma.dot(lltV.solve(gamma));
    out.term_residual[0] = std::abs(T1 - T1t);
    out.term_residual[1] = std::abs(T2 - T2t);
    out.term_residual[2] = std::abs(T3 - T3t);
    out.term_residual[3] = std::abs(T4 - T4t);

    const double det_lhs = logdetD + logdetW_inv;
    const double det_rhs = logdetV + logdetR;
    out.det_residual = std::abs(det_lhs - det_rhs) / std::max(1.0, std::abs(det_lhs));
    return out;
}

}  // namespace pmglmm
