#pragma once

#include <Eigen/Dense>

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace diffmd {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Vec3 = Eigen::Vector3d;
using IVec = Eigen::VectorXi;

// Geometric quantity undefined: coincident atoms, collinear angle vertex, ...
struct DegenerateGeometryError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Transition kernel evaluated where its variance vanishes (s = 0).
struct SingularKernelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite state encountered in a numeric routine.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Adaptive ODE integration could not proceed; `s` is the diffusion time at failure.
struct IntegrationError : std::runtime_error {
    IntegrationError(const std::string& msg, double s_at) : std::runtime_error(msg), s(s_at) {}
    double s;
};

// Per-frame system state. `features` holds the raw roto-translational invariants
// [|v_i|, Z_i]; they are rebuilt from velocities and atom numbers whenever either
// changes, never set directly.
struct Conformation {
    Mat positions;     // N x 3 (Angstrom)
    Mat features;      // N x 2 (dimensionless invariants)
    Mat velocities;    // N x 3 (Angstrom per frame)
    IVec atom_numbers; // N atomic numbers

    Eigen::Index size() const { return positions.rows(); }
};

// Rebuilds Conformation::features = [|v_i|_2, Z_i] per atom.
void refresh_features(Conformation& conf);

// Validates invariants and builds features. Throws std::invalid_argument on
// shape mismatch or non-finite entries.
Conformation make_conformation(Mat positions, Mat velocities, IVec atom_numbers);

void validate_conformation(const Conformation& conf);

struct Trajectory {
    std::vector<Conformation> frames;
    double dt = 1.0; // femtoseconds between frames
    std::map<std::string, std::string> meta;

    Eigen::Index n_frames() const { return static_cast<Eigen::Index>(frames.size()); }
    Eigen::Index n_atoms() const { return frames.empty() ? 0 : frames.front().size(); }
};

// Every frame must share N and atom_numbers; T >= 1; dt > 0.
void validate_trajectory(const Trajectory& traj);

// Keeps every stride-th frame starting at frame 0.
Trajectory downsample(const Trajectory& traj, int stride);

} // namespace diffmd
