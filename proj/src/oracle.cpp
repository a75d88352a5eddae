#include "pmglmm/oracle.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

#include "pmglmm/objective.hpp"

namespace pmglmm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double joint_logpdf(const GlmmData& data, const Family& family,
                    const Eigen::LLT<MatrixXd>& lltD, double logdetD,
                    const VectorXd& beta, const VectorXd& gamma) {
    const VectorXd eta = data.X * beta + data.Z * gamma;
    const double ll = loglik_conditional(family, data, eta);
    const double lp = -0.5 * gamma.size() * kLog2Pi - 0.5 * logdetD -
                      0.5 * gamma.dot(lltD.solve(gamma));
    return ll + lp;
}

// Shared evaluation pass: log-sum-exp of the joint density over the node set,
// optionally accumulating posterior expectations of the score integrands.
struct QuadAccum {
    double loglik = 0.0;
    VectorXd score;  // empty unless requested
};

QuadAccum quadrature_pass(const GlmmData& data, const Family& family,
                          const CovarianceSpec& cov, const VectorXd& beta,
                          const VectorXd& omega, const QuadratureRule& rule,
                          bool want_score) {
    const int d = data.d();
    const double total = std::pow(static_cast<double>(rule.nodes_per_dim), d);
    if (d > 4 || total > static_cast<double>(rule.max_total_nodes)) {
        throw NumericalError("quadrature budget exceeded (" + std::to_string(d) +
                             " dimensions at " + std::to_string(rule.nodes_per_dim) +
                             " nodes per dimension)");
    }
    if (rule.nodes_per_dim < 5) throw DomainError("nodes_per_dim must be >= 5");

    const CovarianceSpec spec = cov.at(omega);
    const MatrixXd D = build_covariance(spec);
    Eigen::LLT<MatrixXd> lltD(D);
    const double logdetD =
        2.0 * MatrixXd(lltD.matrixL()).diagonal().array().log().sum();

    // Affine map gamma = center + sqrt(2) L u.
    VectorXd center = VectorXd::Zero(d);
    MatrixXd L;
    if (rule.centering == QuadratureRule::Centering::mode) {
        const JointMode mode = joint_mode(data, family, D, beta);
        center = mode.gamma;
        const MatrixXd C = mode.neg_hess.llt().solve(MatrixXd::Identity(d, d));
        L = Eigen::LLT<MatrixXd>(0.5 * (C + C.transpose())).matrixL();
    } else {
        L = MatrixXd(lltD.matrixL());
    }
    const double logdetL = L.diagonal().array().log().sum();

    VectorXd nodes, weights;
    gauss_hermite(rule.nodes_per_dim, nodes, weights);
    const VectorXd logw = weights.array().log();

    const int r = want_score ? cov.n_free() : 0;
    const auto free = spec.free_indices();
    std::vector<MatrixXd> DiGDi(r);  // D^-1 dD_j D^-1, for the omega score
    VectorXd trace_term(r);
    for (int k = 0; k < r; ++k) {
        const MatrixXd G = covariance_grad(spec, free[k]);
        const MatrixXd DiG = lltD.solve(G);
        trace_term[k] = DiG.trace();
        DiGDi[k] = lltD.solve(DiG.transpose()).transpose();
    }

    // First pass value buffer: log integrand per node (two-pass logsumexp).
    const long n_nodes = static_cast<long>(total);
    std::vector<double> logvals(n_nodes);
    std::vector<int> idx(d, 0);
    VectorXd u(d);
    double maxlog = -std::numeric_limits<double>::infinity();
    for (long k = 0; k < n_nodes; ++k) {
        double lw = 0.0;
        for (int j = 0; j < d; ++j) {
            u[j] = nodes[idx[j]];
            lw += logw[idx[j]];
        }
        const VectorXd gamma = center + std::sqrt(2.0) * (L * u);
        const double lg = joint_logpdf(data, family, lltD, logdetD, beta, gamma);
        logvals[k] = lg + u.squaredNorm() + lw;
        maxlog = std::max(maxlog, logvals[k]);
        for (int j = d - 1; j >= 0; --j) {  // odometer increment
            if (++idx[j] < rule.nodes_per_dim) break;
            idx[j] = 0;
        }
    }
    double sum = 0.0;
    for (long k = 0; k < n_nodes; ++k) sum += std::exp(logvals[k] - maxlog);

    QuadAccum out;
    out.loglik = maxlog + std::log(sum) + 0.5 * d * std::log(2.0) + logdetL;
    if (!want_score) return out;

    // Second pass: posterior-weighted expectations of the score integrands.
    out.score = VectorXd::Zero(data.p() + r);
    std::fill(idx.begin(), idx.end(), 0);
    for (long k = 0; k < n_nodes; ++k) {
        for (int j = 0; j < d; ++j) u[j] = nodes[idx[j]];
        const VectorXd gamma = center + std::sqrt(2.0) * (L * u);
        const double q = std::exp(logvals[k] - maxlog) / sum;
        const VectorXd eta = data.X * beta + data.Z * gamma;
        const BValues bv = eval_b(family, data.m, eta);
        out.score.head(data.p()) += q * (data.X.transpose() * (data.y - bv.bprime));
        for (int j = 0; j < r; ++j) {
            out.score[data.p() + j] +=
                q * (-0.5 * trace_term[j] + 0.5 * gamma.dot(DiGDi[j] * gamma));
        }
        for (int j = d - 1; j >= 0; --j) {
            if (++idx[j] < rule.nodes_per_dim) break;
            idx[j] = 0;
        }
    }
    return out;
}

}  // namespace

void gauss_hermite(int n, VectorXd& nodes, VectorXd& weights) {
    if (n < 1) throw DomainError("gauss_hermite: n must be >= 1");
    // Golub-Welsch on the Jacobi matrix of the Hermite recurrence.
    MatrixXd J = MatrixXd::Zero(n, n);
    for (int i = 1; i < n; ++i) {
        const double b = std::sqrt(0.5 * i);
        J(i, i - 1) = b;
        J(i - 1, i) = b;
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(J);
    nodes = es.eigenvalues();
    weights.resize(n);
    const double sqrt_pi = std::sqrt(3.14159265358979323846);
    for (int i = 0; i < n; ++i) {
        const double v0 = es.eigenvectors()(0, i);
        weights[i] = sqrt_pi * v0 * v0;
    }
}

JointMode joint_mode(const GlmmData& data, const Family& family, const MatrixXd& D,
                     const VectorXd& beta) {
    const int d = data.d();
    Eigen::LLT<MatrixXd> lltD(D);
    if (lltD.info() != Eigen::Success) {
        throw NumericalError("joint_mode: covariance not positive definite");
    }
    const double logdetD =
        2.0 * MatrixXd(lltD.matrixL()).diagonal().array().log().sum();
    JointMode out;
    out.gamma = VectorXd::Zero(d);
    double f = joint_logpdf(data, family, lltD, logdetD, beta, out.gamma);
    for (int it = 0; it < 200; ++it) {
        const VectorXd eta = data.X * beta + data.Z * out.gamma;
        const BValues bv = eval_b(family, data.m, eta);
        const VectorXd g =
            data.Z.transpose() * (data.y - bv.bprime) - lltD.solve(out.gamma);
        MatrixXd H = data.Z.transpose() * bv.bdoubleprime.asDiagonal() * data.Z +
                     lltD.solve(MatrixXd::Identity(d, d));
        VectorXd step = H.llt().solve(g);
        double t = 1.0;
        bool moved = false;
        for (int h = 0; h < 60; ++h, t *= 0.5) {
            const VectorXd cand = out.gamma + t * step;
            const double fc = joint_logpdf(data, family, lltD, logdetD, beta, cand);
            if (fc >= f) {
                out.gamma = cand;
                f = fc;
                moved = true;
                break;
            }
        }
        if (!moved || t * step.cwiseAbs().maxCoeff() < 1e-13) break;
    }
    const VectorXd eta = data.X * beta + data.Z * out.gamma;
    const BValues bv = eval_b(family, data.m, eta);
    out.neg_hess = data.Z.transpose() * bv.bdoubleprime.asDiagonal() * data.Z +
                   lltD.solve(MatrixXd::Identity(d, d));
    out.neg_hess = 0.5 * (out.neg_hess + out.neg_hess.transpose()).eval();
    return out;
}

double marginal_loglik(const GlmmData& data, const Family& family,
                       const CovarianceSpec& cov, const VectorXd& beta,
                       const VectorXd& omega, const QuadratureRule& rule) {
    return quadrature_pass(data, family, cov, beta, omega, rule, false).loglik;
}

VectorXd marginal_score(const GlmmData& data, const Family& family,
                        const CovarianceSpec& cov, const VectorXd& beta,
                        const VectorXd& omega, const QuadratureRule& rule) {
    return quadrature_pass(data, family, cov, beta, omega, rule, true).score;
}

GridArgmax grid_argmax(const GlmmData& data, const Family& family,
                       const CovarianceSpec& cov, const std::vector<GridPoint>& grid,
                       const QuadratureRule& rule) {
    if (grid.empty()) throw DomainError("grid_argmax: empty grid");
    GridArgmax best;
    best.loglik = -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < grid.size(); ++i) {
        const double ll =
            marginal_loglik(data, family, cov, grid[i].beta, grid[i].omega, rule);
        if (ll > best.loglik) {
            best.loglik = ll;
            best.beta = grid[i].beta;
            best.omega = grid[i].omega;
            best.index = static_cast<int>(i);
        }
    }
    return best;
}

}  // namespace pmglmm
