#include "diffmd/basis.hpp"

#include <cmath>

namespace diffmd {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Taylor series around x = 0: j_o(x) = x^o / (2o+1)!! * sum_k t_k,
// t_0 = 1, t_{k+1} = -x^2 / (2(k+1)(2o + 2k + 3)) * t_k. Used where the first
// ratio is < ~0.25 so the series has no cancellation.
double bessel_series(int o, double x) {
    double lead = 1.0;
    for (int k = 1; k <= o; ++k)
        lead *= x / static_cast<double>(2 * k + 1);
    double term = 1.0;
    double sum = 1.0;
    const double x2 = x * x;
    for (int k = 0; k < 200; ++k) {
        term *= -x2 / (2.0 * (k + 1) * (2.0 * o + 2.0 * k + 3.0));
        sum += term;
        if (std::abs(term) < 1e-18 * std::abs(sum))
            break;
    }
    return lead * sum;
}

} // namespace

double spherical_bessel(int degree, double x) {
    if (degree < 0)
        throw std::invalid_argument("spherical_bessel: degree must be >= 0");
    if (x < 0.0)
        throw std::invalid_argument("spherical_bessel: x must be >= 0");
    if (x < 1e-4) {
        // j_0 and j_1 also go through the series here to avoid 0/0.
        return bessel_series(degree, x);
    }
    const double j0 = std::sin(x) / x;
    if (degree == 0)
        return j0;
    const double j1 = std::sin(x) / (x * x) - std::cos(x) / x;
    if (degree == 1)
        return j1;
    // Upward recurrence is unstable for x well below the degree; hand those
    // arguments to the series instead.
    if (x < 0.7 * std::sqrt(2.0 * degree + 3.0))
        return bessel_series(degree, x);
    double jm = j0;
    double jc = j1;
    for (int o = 1; o < degree; ++o) {
        const double jn = (2.0 * o + 1.0) / x * jc - jm;
        jm = jc;
        jc = jn;
    }
    return jc;
}

double bessel_root(int degree, int n) {
    if (degree < 0 || n < 1)
        throw std::invalid_argument("bessel_root: need degree >= 0, n >= 1");
    if (degree == 0)
        return n * kPi;
    // z_{o,n} lies strictly between z_{o-1,n} and z_{o-1,n+1}.
    double lo = bessel_root(degree - 1, n);
    double hi = bessel_root(degree - 1, n + 1);
    double flo = spherical_bessel(degree, lo);
    for (int it = 0; it < 200 && hi - lo > 1e-13 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double fmid = spherical_bessel(degree, mid);
        if ((flo < 0.0) == (fmid < 0.0)) {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

namespace {

// Associated Legendre P_o^m(x) without Condon-Shortley phase, m >= 0.
double assoc_legendre(int o, int m, double x) {
    double pmm = 1.0;
    if (m > 0) {
        const double s = std::sqrt(std::max(0.0, 1.0 - x * x));
        double fact = 1.0;
        for (int i = 1; i <= m; ++i) {
            pmm *= fact * s;
            fact += 2.0;
        }
    }
    if (o == m)
        return pmm;
    double pm1 = x * (2.0 * m + 1.0) * pmm;
    if (o == m + 1)
        return pm1;
    double p = 0.0;
    for (int k = m + 2; k <= o; ++k) {
        p = ((2.0 * k - 1.0) * x * pm1 - (k + m - 1.0) * pmm) / static_cast<double>(k - m);
        pmm = pm1;
        pm1 = p;
    }
    return p;
}

} // namespace

double real_spherical_harmonic(int degree, int order, double phi, double theta) {
    if (degree < 0)
        throw std::invalid_argument("real_spherical_harmonic: degree must be >= 0");
    if (order < 0 || order > degree)
        throw std::invalid_argument("real_spherical_harmonic: need 0 <= order <= degree");
    double norm = (2.0 * degree + 1.0) / (4.0 * kPi);
    for (int k = degree - order + 1; k <= degree + order; ++k)
        norm /= static_cast<double>(k);
    norm = std::sqrt(norm);
    const double leg = assoc_legendre(degree, order, std::cos(phi));
    if (order == 0)
        return norm * leg;
    return std::sqrt(2.0) * norm * leg * std::cos(order * theta);
}

BasisSpec::BasisSpec(int degrees, int roots, int orders, double cutoff_angstrom)
    : n_deg(degrees), n_root(roots), n_ord(orders), cutoff(cutoff_angstrom) {
    if (n_deg < 1 || n_root < 1 || n_ord < 1)
        throw std::invalid_argument("BasisSpec: counts must be >= 1");
    if (!(cutoff > 0.0))
        throw std::invalid_argument("BasisSpec: cutoff must be positive");
    roots_.resize(static_cast<std::size_t>(n_deg));
    norms_.resize(static_cast<std::size_t>(n_deg));
    const double c3 = cutoff * cutoff * cutoff;
    for (int o = 0; o < n_deg; ++o) {
        for (int n = 1; n <= n_root; ++n) {
            const double z = bessel_root(o, n);
            roots_[static_cast<std::size_t>(o)].push_back(z);
            const double jnext = spherical_bessel(o + 1, z);
            norms_[static_cast<std::size_t>(o)].push_back(
                std::sqrt(2.0 / (c3 * jnext * jnext)));
        }
    }
}

double BasisSpec::root(int o, int n) const {
    if (o < 0 || o >= n_deg || n < 1 || n > n_root)
        throw std::invalid_argument("BasisSpec::root: index out of range");
    return roots_[static_cast<std::size_t>(o)][static_cast<std::size_t>(n - 1)];
}

double BasisSpec::radial_norm(int o, int n) const {
    if (o < 0 || o >= n_deg || n < 1 || n > n_root)
        throw std::invalid_argument("BasisSpec::radial_norm: index out of range");
    return norms_[static_cast<std::size_t>(o)][static_cast<std::size_t>(n - 1)];
}

Vec sbf_features(const PairGeometry& pg, const BasisSpec& spec, int which) {
    if (which != 1 && which != 2)
        throw std::invalid_argument("sbf_features: which must be 1 or 2");
    if (!(pg.distance > 0.0))
        throw DegenerateGeometryError("sbf_features: zero pair distance");
    Vec out = Vec::Zero(spec.size());
    if (pg.distance >= spec.cutoff)
        return out;
    const double phi = (which == 1) ? pg.phi_a : pg.phi_b;
    for (int o = 0; o < spec.n_deg; ++o) {
        for (int m = 0; m < spec.n_ord; ++m) {
            if (m > o)
                continue; // harmonic undefined, entry stays zero
            const double y = real_spherical_harmonic(o, m, phi, pg.theta);
            for (int n = 1; n <= spec.n_root; ++n) {
                const double radial =
                    spec.radial_norm(o, n) *
                    spherical_bessel(o, spec.root(o, n) * pg.distance / spec.cutoff);
                out(spec.flat_index(o, m, n)) = radial * y;
            }
        }
    }
    return out;
}

} // namespace diffmd
