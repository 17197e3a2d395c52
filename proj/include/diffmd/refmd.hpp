#pragma once

#include "diffmd/rng.hpp"
#include "diffmd/types.hpp"

#include <optional>
#include <string>
#include <vector>

namespace diffmd {

// Classic force field in reduced units: masses in units of 1, 1/(4 pi eps0) = 1.

struct BondTerm {
    int i = 0, j = 0;
    double c_l = 0.0; // force constant
    double l_0 = 0.0; // reference length
};

struct AngleTerm {
    int i = 0, j = 0, k = 0; // vertex at j
    double c_alpha = 0.0;
    double alpha_0 = 0.0; // radians
};

struct TorsionSeries {
    double u = 0.0;       // energy barrier U_ik
    double c = 1.0;       // multiplicity c_ik
    double theta_0 = 0.0; // phase angle
};

struct TorsionTerm {
    int i = 0, j = 0, k = 0, l = 0;
    std::vector<TorsionSeries> series;
};

struct LjPair {
    int i = 0, j = 0;
    double eps = 0.0; // well depth
    double x_0 = 1.0; // minimum distance
};

struct ForceFieldParams {
    std::vector<BondTerm> bonds;
    std::vector<AngleTerm> angles;
    std::vector<TorsionTerm> torsions;
    std::vector<LjPair> lj;
    Vec charges;  // per atom, empty = all zero
    double dielectric = 1.0;
    Vec masses;   // per atom

    Eigen::Index n_atoms() const { return masses.size(); }
};

void validate(const ForceFieldParams& ff);

struct GamdParams {
    double u_bar = 0.0;   // threshold energy
    double eta_u = 0.0;   // harmonic force constant
    double sigma_0 = 1.0; // reweighting std upper limit
};

// Velocity rescaling toward a target temperature every `interval` steps.
struct Thermostat {
    double temperature = 1.0; // reduced units, k_B = 1
    int interval = 10;
};

// Bond + angle + torsion + Lennard-Jones + Coulomb energy.
// Throws DegenerateGeometryError on coincident non-bonded atoms or collinear
// angle configurations.
double potential_energy(const ForceFieldParams& ff, const Mat& x);

// Analytic negative gradient of potential_energy; internal forces sum to zero.
Mat forces(const ForceFieldParams& ff, const Mat& x);

// Boost potential: 0.5 * eta_u * (u_bar - u)^2 when u < u_bar, else 0.
double gamd_boost(const GamdParams& g, double u);

// Reweighting bound: eta * (u_bar - u_avg) * sigma_u <= sigma_0.
bool gamd_sigma_check(const GamdParams& g, double u_avg, double sigma_u, double eta);

// Forces of the boosted potential U* = U + dU: F* = (1 - eta_u (u_bar - U)) F
// below threshold, plain F above.
Mat boosted_forces(const ForceFieldParams& ff, const GamdParams& g, const Mat& x);

void velocity_verlet_step(const ForceFieldParams& ff, Mat& x, Mat& v, double dt,
                          const GamdParams* boost = nullptr);

struct SimulationResult {
    Trajectory trajectory;
    std::vector<double> potential; // per recorded frame
    std::vector<double> kinetic;
};

// Records the start plus n_steps integrated frames (velocities included).
// Deterministic. Throws NumericError (with step index) on non-finite state.
SimulationResult simulate(const ForceFieldParams& ff, const Conformation& start, double dt,
                          int n_steps, const std::optional<GamdParams>& boost = std::nullopt,
                          const std::optional<Thermostat>& thermostat = std::nullopt);

double kinetic_energy(const ForceFieldParams& ff, const Mat& v);

// Maxwell-Boltzmann velocities at temperature T with zero linear and (about
// the centroid) zero angular momentum.
Mat thermal_velocities(const ForceFieldParams& ff, const Mat& x, double temperature,
                       RandomSource& rng);

struct Fixture {
    std::string name;
    ForceFieldParams ff;
    Conformation start;
    double dt = 0.01; // suggested integrator step
};

// Built-in fixtures: harmonic1d, harmonic3d, lj_trimer, butane, double_well.
Fixture make_fixture(const std::string& name);
std::vector<std::string> fixture_names();

// Structured-text fixture files (JSON): atoms, masses, charges, force-field
// term lists, start positions/velocities.
Fixture load_fixture_file(const std::string& path);
void save_fixture_file(const Fixture& fixture, const std::string& path);

} // namespace diffmd
