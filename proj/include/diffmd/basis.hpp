#pragma once

#include "diffmd/geometry.hpp"
#include "diffmd/types.hpp"

#include <vector>

namespace diffmd {

// Spherical Bessel function j_o(x), o >= 0, x >= 0. Closed forms for o <= 1,
// a Taylor series near zero argument, upward recurrence otherwise.
double spherical_bessel(int degree, double x);

// n-th positive zero of j_o (n >= 1). Zeros of j_0 are n*pi; higher degrees
// are bracketed by interlacing with the previous degree and bisected to 1e-12.
double bessel_root(int degree, int n);

// Real orthonormal spherical harmonic Y_om(phi, theta), cos branch (m >= 0),
// polar angle phi measured from the axis, azimuth theta.
double real_spherical_harmonic(int degree, int order, double phi, double theta);

// Basis dimensions and interaction cutoff. Roots and radial normalization
// constants are precomputed at construction and read-only afterwards.
struct BasisSpec {
    BasisSpec(int degrees, int roots, int orders, double cutoff_angstrom);

    int n_deg;     // degrees o in [0, n_deg)
    int n_root;    // roots n in [1, n_root]
    int n_ord;     // orders m in [0, n_ord); entries with m > o are zero
    double cutoff; // Angstrom

    int size() const { return n_deg * n_ord * n_root; }
    int flat_index(int o, int m, int n) const { return (o * n_ord + m) * n_root + (n - 1); }

    double root(int o, int n) const;       // z_on
    double radial_norm(int o, int n) const; // sqrt(2 / (c^3 j_{o+1}(z_on)^2))

  private:
    std::vector<std::vector<double>> roots_;
    std::vector<std::vector<double>> norms_;
};

// Per-atom-pair stack of SBF values, rows indexed by ordered pair, columns by
// BasisSpec::flat_index.
struct SbfTensor {
    Mat values;
    const BasisSpec* spec = nullptr;
};

// One slice of Eq.-style SBF features for a pair: entry (o, m, n) =
// radial_norm(o,n) * j_o(z_on d / c) * Y_om(phi, theta), with phi = phi_a for
// which = 1 and phi = phi_b for which = 2. Distances at or beyond the cutoff
// give an all-zero vector.
Vec sbf_features(const PairGeometry& pg, const BasisSpec& spec, int which);

} // namespace diffmd
