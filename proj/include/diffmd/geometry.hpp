#pragma once

#include "diffmd/types.hpp"

namespace diffmd {

// Relative geometry of an ordered atom pair (a, b). `rel` points from a to b.
// phi_a is the angle between v_a and rel, phi_b between v_b and -rel, theta the
// dihedral between the planes spanned by (v_a, rel) and (v_b, rel).
struct PairGeometry {
    double distance = 0.0; // Angstrom, |rel|
    double phi_a = 0.0;    // [0, pi]
    double phi_b = 0.0;    // [0, pi]
    double theta = 0.0;    // [0, pi]
    Vec3 rel = Vec3::Zero();
};

// Angle between two vectors in [0, pi] via clamped arccos. Near-zero vectors
// (norm < 1e-10) give 0.
double angle_between(const Vec3& u, const Vec3& w);

// x_i - x_j. Throws std::invalid_argument on out-of-range indices.
Vec3 relative_position(const Conformation& conf, Eigen::Index i, Eigen::Index j);

// Throws DegenerateGeometryError when the atoms coincide (distance < 1e-10).
PairGeometry pair_geometry(const Conformation& conf, Eigen::Index a, Eigen::Index b);

PairGeometry pair_geometry(const Vec3& pos_a, const Vec3& pos_b, const Vec3& vel_a,
                           const Vec3& vel_b);

// sqrt( (1/n) sum_{i=t1..tn} |x_gen(i) - x_ref(i)|_F^2 ), n = tn - t1 + 1.
double armse(const Trajectory& generated, const Trajectory& reference, Eigen::Index t1,
             Eigen::Index tn);

// As armse, but each generated frame is first optimally superposed onto the
// reference frame (centroid shift + best rotation).
double kabsch_armse(const Trajectory& generated, const Trajectory& reference, Eigen::Index t1,
                    Eigen::Index tn);

// Optimal superposition of `moving` onto `target` (both N x 3): returns the
// moved coordinates minimizing the Frobenius error.
Mat kabsch_align(const Mat& moving, const Mat& target);

// x_t - x_prev elementwise. Throws std::invalid_argument on shape mismatch.
Mat velocity_from_frames(const Mat& x_t, const Mat& x_prev);

} // namespace diffmd
