#include "pmglmm/family.hpp"

#include <cmath>

namespace pmglmm {

namespace {

// Stable logistic: sigma(x) = 1/(1+e^-x), evaluated on the safe branch.
double logistic(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// log(1 + e^x) without overflow.
double log1pexp(double x) {
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

}  // namespace

BValues eval_b(const Family& family, const VectorXd& m, const VectorXd& eta) {
    const auto n = eta.size();
    BValues out;
    out.b.resize(n);
    out.bprime.resize(n);
    out.bdoubleprime.resize(n);
    if (family.kind == FamilyKind::poisson_log) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const double e = std::exp(eta[i]);
            out.b[i] = e;
            out.bprime[i] = e;
            out.bdoubleprime[i] = e;
        }
    } else {
        for (Eigen::Index i = 0; i < n; ++i) {
            const double mi = m[i];
            const double p = logistic(eta[i]);
            out.b[i] = mi * log1pexp(eta[i]);
            out.bprime[i] = mi * p;
            out.bdoubleprime[i] = mi * p * (1.0 - p);
        }
    }
    return out;
}

WorkingVectors working_response(const Family& family, const GlmmData& data,
                                const VectorXd& eta) {
    const BValues bv = eval_b(family, data.m, eta);
    WorkingVectors wv;
    wv.eta = eta;
    wv.w.resize(eta.size());
    wv.ytilde.resize(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
        double wi = bv.bdoubleprime[i];
        if (wi < kWeightFloor) {
            wi = kWeightFloor;
            wv.clamped.push_back(static_cast<int>(i));
        }
        wv.w[i] = wi;
        wv.ytilde[i] = eta[i] + (data.y[i] - bv.bprime[i]) / wi;
    }
    return wv;
}

WorkingVectors init_state(const Family& family, const GlmmData& data) {
    VectorXd eta0(data.n());
    if (family.kind == FamilyKind::poisson_log) {
        for (int i = 0; i < data.n(); ++i) eta0[i] = std::log(data.y[i] + 0.5);
    } else {
        for (int i = 0; i < data.n(); ++i) {
            eta0[i] = std::log((data.y[i] + 0.5) / (data.m[i] - data.y[i] + 0.5));
        }
    }
    return working_response(family, data, eta0);
}

double loglik_conditional(const Family& family, const GlmmData& data,
                          const VectorXd& eta) {
    const BValues bv = eval_b(family, data.m, eta);
    double ll = data.y.dot(eta) - bv.b.sum();
    if (family.kind == FamilyKind::poisson_log) {
        for (int i = 0; i < data.n(); ++i) ll -= std::lgamma(data.y[i] + 1.0);
    } else {
        for (int i = 0; i < data.n(); ++i) {
            ll += std::lgamma(data.m[i] + 1.0) - std::lgamma(data.y[i] + 1.0) -
                  std::lgamma(data.m[i] - data.y[i] + 1.0);
        }
    }
    return ll;
}

GlmmData make_glmm_data(const Family& family, VectorXd y, VectorXd m, MatrixXd X,
                        MatrixXd Z, MatrixXd coords) {
    GlmmData data;
    const auto n = y.size();
    if (n == 0) throw DomainError("empty response vector");
    if (X.rows() != n) throw DomainError("X row count does not match response length");
    if (Z.rows() != n) throw DomainError("Z row count does not match response length");
    for (Eigen::Index i = 0; i < n; ++i) {
        if (y[i] < 0.0 || y[i] != std::floor(y[i])) {
            throw DomainError("response must be a nonnegative integer at row " +
                              std::to_string(i));
        }
    }
    if (family.is_binomial()) {
        if (m.size() != n) throw DomainError("binomial family requires a trials vector");
        for (Eigen::Index i = 0; i < n; ++i) {
            if (m[i] < 1.0 || m[i] != std::floor(m[i])) {
                throw DomainError("trials must be integers >= 1 at row " +
                                  std::to_string(i));
            }
            if (y[i] > m[i]) {
                throw DomainError("response exceeds trials at row " + std::to_string(i));
            }
        }
    } else {
        m.resize(0);
    }
    {
        Eigen::ColPivHouseholderQR<MatrixXd> qr(X);
        if (qr.rank() != X.cols()) throw DomainError("X is rank deficient");
    }
    {
        Eigen::ColPivHouseholderQR<MatrixXd> qr(Z);
        if (qr.rank() != Z.cols()) throw DomainError("Z is rank deficient");
    }
    if (coords.size() > 0) {
        if (coords.rows() != n || coords.cols() != 2) {
            throw DomainError("coords must be n x 2");
        }
        const auto d = Z.cols();
        if (d != n) throw DomainError("site coordinates require Z to be the identity");
        data.distances.resize(d, d);
        for (Eigen::Index i = 0; i < d; ++i) {
            data.distances(i, i) = 0.0;
            for (Eigen::Index j = 0; j < i; ++j) {
                const double dist = (coords.row(i) - coords.row(j)).norm();
                data.distances(i, j) = dist;
                data.distances(j, i) = dist;
            }
        }
    }
    data.y = std::move(y);
    data.m = std::move(m);
    data.X = std::move(X);
    data.Z = std::move(Z);
    data.coords = std::move(coords);
    return data;
}

std::uint64_t data_fingerprint(const GlmmData& data) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const double* ptr, Eigen::Index count) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(ptr);
        for (Eigen::Index i = 0; i < count * static_cast<Eigen::Index>(sizeof(double)); ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    };
    mix(data.y.data(), data.y.size());
    if (data.m.size() > 0) mix(data.m.data(), data.m.size());
    mix(data.X.data(), data.X.size());
    return h;
}

}  // namespace pmglmm
