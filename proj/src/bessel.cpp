#include "pmglmm/bessel.hpp"

#include <cmath>
#include <limits>

#include "pmglmm/types.hpp"

namespace pmglmm {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kEps = std::numeric_limits<double>::epsilon();

// Power-series coefficients of 1/Gamma(1+x) for |x| <= 1 (A&S 6.1.34 shifted).
constexpr double kInvGamma[] = {
    1.00000000000000000e+00,  5.77215664901532861e-01, -6.55878071520253881e-01,
    -4.20026350340952355e-02, 1.66538611382291490e-01, -4.21977345555443367e-02,
    -9.62197152787697356e-03, 7.21894324666309954e-03, -1.16516759185906511e-03,
    -2.15241674114950973e-04, 1.28050282388116186e-04, -2.01348547807882387e-05,
    -1.25049348214267066e-06, 1.13302723198169588e-06, -2.05633841697760710e-07,
    6.11609510448141582e-09,  5.00200764446922293e-09, -1.18127457048702014e-09,
    1.04342671169110051e-10,  7.78226343990507125e-12, -3.69680561864220571e-12,
    5.10037028745447598e-13,  -2.05832605356650678e-14, -5.34812253942301798e-15,
    1.22677862823826079e-15,  -1.18125930169745877e-16};
constexpr int kInvGammaTerms = 26;

// gam1(x) = [1/Gamma(1-x) - 1/Gamma(1+x)] / (2x), gam2 the even counterpart,
// gampl = 1/Gamma(1+x), gammi = 1/Gamma(1-x). Computed from the odd/even parts
// of the series, so there is no cancellation at small x.
void temme_gammas(double x, double& gam1, double& gam2, double& gampl, double& gammi) {
    const double x2 = x * x;
    double odd = 0.0, even = 0.0;
    double xpow = 1.0;  // x^{k-1} for odd k, built from x^2 steps
    for (int k = 1; k < kInvGammaTerms; k += 2) {
        odd += kInvGamma[k] * xpow;
        xpow *= x2;
    }
    xpow = 1.0;
    for (int k = 0; k < kInvGammaTerms; k += 2) {
        even += kInvGamma[k] * xpow;
        xpow *= x2;
    }
    gam1 = -odd;
    gam2 = even;
    gampl = even + x * odd;   // 1/Gamma(1+x)
    gammi = even - x * odd;   // 1/Gamma(1-x)
}

// Temme's series for K_mu(x) and K_{mu+1}(x), |mu| <= 1/2, 0 < x <= 2.
void bessk_temme(double x, double mu, double& kmu, double& kmu1) {
    const double pimu = kPi * mu;
    const double fact = (std::abs(pimu) < kEps) ? 1.0 : pimu / std::sin(pimu);
    double d = -std::log(0.5 * x);
    double e = mu * d;
    const double fact2 = (std::abs(e) < kEps) ? 1.0 : std::sinh(e) / e;
    double gam1, gam2, gampl, gammi;
    temme_gammas(mu, gam1, gam2, gampl, gammi);
    double ff = fact * (gam1 * std::cosh(e) + gam2 * fact2 * d);
    double sum = ff;
    e = std::exp(e);
    double p = 0.5 * e / gampl;
    double q = 0.5 / (e * gammi);
    double c = 1.0;
    d = 0.25 * x * x;
    double sum1 = p;
    for (int i = 1; i <= 1000; ++i) {
        ff = (i * ff + p + q) / (i * i - mu * mu);
        c *= d / i;
        p /= (i - mu);
        q /= (i + mu);
        const double del = c * ff;
        sum += del;
        sum1 += c * (p - i * ff);
        if (std::abs(del) < std::abs(sum) * kEps) break;
    }
    kmu = sum;
    kmu1 = sum1 * 2.0 / x;
}

// Steed's continued fraction for K_mu(x) and K_{mu+1}(x), |mu| <= 1/2, x > 2.
void bessk_cf2(double x, double mu, double& kmu, double& kmu1) {
    const double a1 = 0.25 - mu * mu;
    double b = 2.0 * (1.0 + x);
    double d = 1.0 / b;
    double h = d, delh = d;
    double q1 = 0.0, q2 = 1.0;
    double q = a1, c = a1;
    double a = -a1;
    double s = 1.0 + q * delh;
    for (int i = 2; i <= 10000; ++i) {
        a -= 2 * (i - 1);
        c = -a * c / i;
        const double qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh = (b * d - 1.0) * delh;
        h += delh;
        const double dels = q * delh;
        s += dels;
        if (std::abs(dels / s) < kEps) break;
    }
    h = a1 * h;
    kmu = std::sqrt(kPi / (2.0 * x)) * std::exp(-x) / s;
    kmu1 = kmu * (mu + x + 0.5 - h) / x;
}

bool is_half_integer(double nu) {
    const double two_nu = 2.0 * nu;
    const double r = std::round(two_nu);
    return std::abs(two_nu - r) < 1e-14 && (static_cast<long long>(r) % 2 != 0);
}

}  // namespace

double bessel_k(double nu, double x) {
    if (!(x > 0.0)) throw DomainError("bessel_k: x must be positive");
    if (!(nu > 0.0)) throw DomainError("bessel_k: nu must be positive");

    if (is_half_integer(nu)) {
        // K_{1/2}(x) = sqrt(pi/(2x)) e^-x, then K_{v+1} = K_{v-1} + (2v/x) K_v.
        double km = std::sqrt(kPi / (2.0 * x)) * std::exp(-x);  // K_{-1/2} = K_{1/2}
        double k0 = km;
        for (double order = 0.5; order < nu - 0.25; order += 1.0) {
            const double kp = km + (2.0 * order / x) * k0;
            km = k0;
            k0 = kp;
        }
        return k0;
    }

    const int nl = static_cast<int>(nu + 0.5);
    const double mu = nu - nl;  // |mu| <= 1/2
    double kmu, kmu1;
    if (x <= 2.0) {
        bessk_temme(x, mu, kmu, kmu1);
    } else {
        bessk_cf2(x, mu, kmu, kmu1);
    }
    for (int i = 1; i <= nl; ++i) {
        const double knext = (2.0 * (mu + i) / x) * kmu1 + kmu;
        kmu = kmu1;
        kmu1 = knext;
    }
    return kmu;  // K_{mu+nl} = K_nu
}

}  // namespace pmglmm
