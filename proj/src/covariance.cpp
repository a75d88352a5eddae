#include "pmglmm/covariance.hpp"

#include <cmath>

#include "pmglmm/bessel.hpp"

namespace pmglmm {

namespace {

// Matern correlation at distance dist > 0 (unit variance factor).
double matern_corr(double w2, double w3, double dist) {
    if (dist == 0.0) return 1.0;
    const double s = w2 * dist;
    if (w3 == 0.5) return std::exp(-s);
    return std::pow(s, w3) / (std::exp2(w3 - 1.0) * std::tgamma(w3)) *
           bessel_k(w3, s);
}

double fd_step(double v) { return 1e-6 * std::max(1.0, std::abs(v)); }

MatrixXd fd_grad(const CovarianceSpec& spec, int j) {
    const double h = fd_step(spec.omega[j]);
    VectorXd up = spec.omega, dn = spec.omega;
    up[j] += h;
    dn[j] -= h;
    return (build_covariance(spec.at(up)) - build_covariance(spec.at(dn))) / (2.0 * h);
}

// Second derivative by second-order central differences on D itself;
// step ~ eps^{1/4} balances truncation against roundoff.
MatrixXd fd_hess(const CovarianceSpec& spec, int j1, int j2) {
    const double h1 = 1.2e-4 * std::max(1.0, std::abs(spec.omega[j1]));
    if (j1 == j2) {
        VectorXd up = spec.omega, dn = spec.omega;
        up[j1] += h1;
        dn[j1] -= h1;
        return (build_covariance(spec.at(up)) - 2.0 * build_covariance(spec) +
                build_covariance(spec.at(dn))) /
               (h1 * h1);
    }
    const double h2 = 1.2e-4 * std::max(1.0, std::abs(spec.omega[j2]));
    VectorXd pp = spec.omega, pm = spec.omega, mp = spec.omega, mm = spec.omega;
    pp[j1] += h1; pp[j2] += h2;
    pm[j1] += h1; pm[j2] -= h2;
    mp[j1] -= h1; mp[j2] += h2;
    mm[j1] -= h1; mm[j2] -= h2;
    return (build_covariance(spec.at(pp)) - build_covariance(spec.at(pm)) -
            build_covariance(spec.at(mp)) + build_covariance(spec.at(mm))) /
           (4.0 * h1 * h2);
}

void check_spatial_distances(const CovarianceSpec& spec) {
    const auto& dmat = spec.distances;
    if (dmat.rows() != spec.dim || dmat.cols() != spec.dim) {
        throw DomainError("distance matrix must be d x d");
    }
    for (int i = 0; i < spec.dim; ++i) {
        if (dmat(i, i) != 0.0) throw DomainError("distance matrix diagonal must be zero");
        for (int j = 0; j < i; ++j) {
            if (dmat(i, j) != dmat(j, i)) throw DomainError("distance matrix must be symmetric");
            if (dmat(i, j) < 0.0) throw DomainError("distances must be nonnegative");
            if (dmat(i, j) == 0.0 && spec.jitter <= 0.0) {
                throw DomainError("duplicate sites (zero off-diagonal distance) require jitter > 0");
            }
        }
    }
}

}  // namespace

int CovarianceSpec::n_free() const {
    int k = 0;
    for (bool f : fixed) k += f ? 0 : 1;
    return k;
}

std::vector<int> CovarianceSpec::free_indices() const {
    std::vector<int> out;
    for (int j = 0; j < r(); ++j) {
        if (!fixed[j]) out.push_back(j);
    }
    return out;
}

CovarianceSpec CovarianceSpec::at(VectorXd new_omega) const {
    CovarianceSpec copy = *this;
    copy.omega = std::move(new_omega);
    return copy;
}

VectorXd CovarianceSpec::omega_plus(const VectorXd& delta_free) const {
    const auto free = free_indices();
    if (delta_free.size() != static_cast<Eigen::Index>(free.size())) {
        throw DomainError("delta length does not match the number of free hyperparameters");
    }
    VectorXd full = omega;
    for (size_t k = 0; k < free.size(); ++k) full[free[k]] += delta_free[k];
    return full;
}

CovarianceSpec make_matern(VectorXd omega, MatrixXd distances, double jitter,
                           bool free_w3) {
    if (omega.size() == 2) {
        VectorXd full(3);
        full << omega[0], omega[1], 0.5;
        omega = full;
    }
    if (omega.size() != 3) throw DomainError("matern requires omega of length 2 or 3");
    CovarianceSpec spec;
    spec.kind = CovKind::matern;
    spec.omega = std::move(omega);
    spec.fixed = {false, false, !free_w3};
    spec.dim = static_cast<int>(distances.rows());
    spec.distances = std::move(distances);
    spec.jitter = jitter;
    return spec;
}

CovarianceSpec make_exponential(double w1, double w2, MatrixXd distances, double jitter) {
    CovarianceSpec spec;
    spec.kind = CovKind::exponential;
    spec.omega = VectorXd(3);
    spec.omega << w1, w2, 0.5;
    spec.fixed = {false, false, true};
    spec.dim = static_cast<int>(distances.rows());
    spec.distances = std::move(distances);
    spec.jitter = jitter;
    return spec;
}

CovarianceSpec make_scaled_identity(double w1, int dim, double jitter, bool fixed) {
    CovarianceSpec spec;
    spec.kind = CovKind::scaled_identity;
    spec.omega = VectorXd::Constant(1, w1);
    spec.fixed = {fixed};
    spec.dim = dim;
    spec.jitter = jitter;
    return spec;
}

void validate_domain(const CovarianceSpec& spec) {
    if (spec.fixed.size() != static_cast<size_t>(spec.r())) {
        throw DomainError("fixed mask length does not match omega length");
    }
    if (spec.jitter < 0.0) throw DomainError("jitter must be nonnegative");
    if (spec.dim < 1) throw DomainError("covariance dimension must be >= 1");
    switch (spec.kind) {
        case CovKind::scaled_identity:
            if (spec.r() != 1) throw DomainError("scaled identity requires omega of length 1");
            if (!(spec.omega[0] > 0.0)) throw DomainError("omega1 must be > 0");
            break;
        case CovKind::exponential:
        case CovKind::matern:
            if (spec.r() != 3) throw DomainError("matern requires omega of length 3");
            if (!(spec.omega[0] > 0.0 && spec.omega[0] < 1.0)) {
                throw DomainError("omega1 must be in (0,1)");
            }
            if (!(spec.omega[1] > 0.0)) throw DomainError("omega2 must be > 0");
            if (!(spec.omega[2] > 0.0)) throw DomainError("omega3 must be > 0");
            if (spec.kind == CovKind::exponential && spec.omega[2] != 0.5) {
                throw DomainError("exponential covariance requires omega3 = 0.5");
            }
            check_spatial_distances(spec);
            break;
    }
}

MatrixXd build_covariance(const CovarianceSpec& spec) {
    validate_domain(spec);
    const int d = spec.dim;
    MatrixXd D(d, d);
    if (spec.kind == CovKind::scaled_identity) {
        D = (spec.omega[0] + spec.jitter) * MatrixXd::Identity(d, d);
    } else {
        const double w1 = spec.omega[0], w2 = spec.omega[1], w3 = spec.omega[2];
        const double var = w1 / (1.0 - w1);
        for (int i = 0; i < d; ++i) {
            D(i, i) = var + spec.jitter;
            for (int j = 0; j < i; ++j) {
                const double v = var * matern_corr(w2, w3, spec.distances(i, j));
                D(i, j) = v;
                D(j, i) = v;
            }
        }
    }
    // PD check up front so every consumer sees a usable factorization error.
    Eigen::LLT<MatrixXd> llt(D);
    if (llt.info() != Eigen::Success) {
        // Rerun a plain Cholesky to locate the first failing pivot.
        MatrixXd A = D;
        int pivot = d - 1;
        double value = 0.0;
        for (int k = 0; k < d; ++k) {
            if (A(k, k) <= 0.0) {
                pivot = k;
                value = A(k, k);
                break;
            }
            const double akk = A(k, k);
            for (int i = k + 1; i < d; ++i) {
                for (int jj = k + 1; jj <= i; ++jj) {
                    A(i, jj) -= A(i, k) * A(jj, k) / akk;
                }
            }
        }
        throw NumericalError("covariance matrix not positive definite (pivot " +
                             std::to_string(pivot) + " = " + std::to_string(value) + ")");
    }
    return D;
}

MatrixXd covariance_grad(const CovarianceSpec& spec, int j) {
    validate_domain(spec);
    if (j < 0 || j >= spec.r()) throw DomainError("hyperparameter index out of range");
    const int d = spec.dim;
    if (spec.kind == CovKind::scaled_identity) {
        return MatrixXd::Identity(d, d);
    }
    const double w1 = spec.omega[0], w2 = spec.omega[1], w3 = spec.omega[2];
    if (j == 0) {
        // d/dw1 [w1/(1-w1)] = 1/(1-w1)^2 times the correlation profile.
        const double f = 1.0 / ((1.0 - w1) * (1.0 - w1));
        MatrixXd G(d, d);
        for (int i = 0; i < d; ++i) {
            G(i, i) = f;
            for (int k = 0; k < i; ++k) {
                const double v = f * matern_corr(w2, w3, spec.distances(i, k));
                G(i, k) = v;
                G(k, i) = v;
            }
        }
        return G;
    }
    if (j == 1 && w3 == 0.5) {
        // d/dw2 [var exp(-w2 dist)] = -dist var exp(-w2 dist)
        const double var = w1 / (1.0 - w1);
        MatrixXd G = MatrixXd::Zero(d, d);
        for (int i = 0; i < d; ++i) {
            for (int k = 0; k < i; ++k) {
                const double dist = spec.distances(i, k);
                const double v = -dist * var * std::exp(-w2 * dist);
                G(i, k) = v;
                G(k, i) = v;
            }
        }
        return G;
    }
    return fd_grad(spec, j);
}

MatrixXd covariance_hess(const CovarianceSpec& spec, int j1, int j2) {
    validate_domain(spec);
    if (j1 < 0 || j1 >= spec.r() || j2 < 0 || j2 >= spec.r()) {
        throw DomainError("hyperparameter index out of range");
    }
    const int d = spec.dim;
    if (spec.kind == CovKind::scaled_identity) {
        return MatrixXd::Zero(d, d);
    }
    if (j1 > j2) std::swap(j1, j2);
    const double w1 = spec.omega[0], w2 = spec.omega[1], w3 = spec.omega[2];
    const double var = w1 / (1.0 - w1);
    if (j1 == 0 && j2 == 0) {
        const double f = 2.0 / std::pow(1.0 - w1, 3);
        MatrixXd H(d, d);
        for (int i = 0; i < d; ++i) {
            H(i, i) = f;
            for (int k = 0; k < i; ++k) {
                const double v = f * matern_corr(w2, w3, spec.distances(i, k));
                H(i, k) = v;
                H(k, i) = v;
            }
        }
        return H;
    }
    if (w3 == 0.5 && j2 == 1) {
        MatrixXd H = MatrixXd::Zero(d, d);
        const double f1 = 1.0 / ((1.0 - w1) * (1.0 - w1));
        for (int i = 0; i < d; ++i) {
            for (int k = 0; k < i; ++k) {
                const double dist = spec.distances(i, k);
                const double corr_w2 = -dist * std::exp(-w2 * dist);
                double v;
                if (j1 == 0) {
                    v = f1 * corr_w2;               // cross (w1, w2)
                } else {
                    v = var * dist * dist * std::exp(-w2 * dist);  // (w2, w2)
                }
                H(i, k) = v;
                H(k, i) = v;
            }
        }
        return H;
    }
    return fd_hess(spec, j1, j2);
}

}  // namespace pmglmm
