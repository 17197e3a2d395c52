#include "diffmd/refmd.hpp"

#include "diffmd/geometry.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace diffmd {

namespace {

constexpr double kTiny = 1e-10;

void check_atom(const ForceFieldParams& ff, int idx) {
    if (idx < 0 || idx >= ff.n_atoms())
        throw std::invalid_argument("force field term references atom out of range");
}

// Angle at vertex j and its gradient w.r.t. the three atoms.
struct AngleGeom {
    double alpha;
    Vec3 d_i, d_j, d_k;
};

AngleGeom angle_with_grad(const Vec3& xi, const Vec3& xj, const Vec3& xk) {
    const Vec3 u = xi - xj;
    const Vec3 w = xk - xj;
    const double nu = u.norm();
    const double nw = w.norm();
    if (nu < kTiny || nw < kTiny)
        throw DegenerateGeometryError("angle term: coincident atoms");
    const double cosa = std::clamp(u.dot(w) / (nu * nw), -1.0, 1.0);
    const double sina = std::sqrt(std::max(0.0, 1.0 - cosa * cosa));
    if (sina < 1e-8)
        throw DegenerateGeometryError("angle term: collinear configuration");
    AngleGeom g;
    g.alpha = std::acos(cosa);
    const Vec3 dcos_du = w / (nu * nw) - cosa * u / (nu * nu);
    const Vec3 dcos_dw = u / (nu * nw) - cosa * w / (nw * nw);
    g.d_i = -dcos_du / sina;
    g.d_k = -dcos_dw / sina;
    g.d_j = -(g.d_i + g.d_k);
    return g;
}

// Signed dihedral for the chain i-j-k-l and its gradient.
struct TorsionGeom {
    double theta;
    Vec3 d_i, d_j, d_k, d_l;
};

TorsionGeom torsion_with_grad(const Vec3& xi, const Vec3& xj, const Vec3& xk, const Vec3& xl) {
    const Vec3 b1 = xj - xi;
    const Vec3 b2 = xk - xj;
    const Vec3 b3 = xl - xk;
    const Vec3 n1 = b1.cross(b2);
    const Vec3 n2 = b2.cross(b3);
    const double nb2 = b2.norm();
    if (nb2 < kTiny)
        throw DegenerateGeometryError("torsion term: coincident middle atoms");
    if (n1.squaredNorm() < 1e-16 || n2.squaredNorm() < 1e-16)
        throw DegenerateGeometryError("torsion term: collinear configuration");
    TorsionGeom g;
    g.theta = std::atan2(n1.cross(n2).dot(b2) / nb2, n1.dot(n2));
    g.d_i = -nb2 / n1.squaredNorm() * n1;
    g.d_l = nb2 / n2.squaredNorm() * n2;
    const double p = b1.dot(b2) / b2.squaredNorm();
    const double q = b3.dot(b2) / b2.squaredNorm();
    g.d_j = -(1.0 + p) * g.d_i + q * g.d_l;
    g.d_k = p * g.d_i - (1.0 + q) * g.d_l;
    return g;
}

double lj_energy(double eps, double x0, double r) {
    const double a = x0 / r;
    const double a6 = a * a * a * a * a * a;
    return eps * (a6 * a6 - 2.0 * a6);
}

// dU/dr for the Lennard-Jones term above.
double lj_dudr(double eps, double x0, double r) {
    const double a = x0 / r;
    const double a6 = a * a * a * a * a * a;
    return -12.0 * eps / r * (a6 * a6 - a6);
}

} // namespace

void validate(const ForceFieldParams& ff) {
    const Eigen::Index n = ff.n_atoms();
    if (n < 1)
        throw std::invalid_argument("force field needs at least one atom");
    if ((ff.masses.array() <= 0.0).any())
        throw std::invalid_argument("masses must be positive");
    if (ff.charges.size() != 0 && ff.charges.size() != n)
        throw std::invalid_argument("charges must be empty or per-atom");
    if (!(ff.dielectric > 0.0))
        throw std::invalid_argument("dielectric must be positive");
    for (const auto& b : ff.bonds) {
        check_atom(ff, b.i);
        check_atom(ff, b.j);
        if (b.c_l < 0.0)
            throw std::invalid_argument("bond force constant must be >= 0");
    }
    for (const auto& a : ff.angles) {
        check_atom(ff, a.i);
        check_atom(ff, a.j);
        check_atom(ff, a.k);
        if (a.c_alpha < 0.0)
            throw std::invalid_argument("angle force constant must be >= 0");
    }
    for (const auto& t : ff.torsions) {
        check_atom(ff, t.i);
        check_atom(ff, t.j);
        check_atom(ff, t.k);
        check_atom(ff, t.l);
    }
    for (const auto& p : ff.lj) {
        check_atom(ff, p.i);
        check_atom(ff, p.j);
        if (p.eps < 0.0 || !(p.x_0 > 0.0))
            throw std::invalid_argument("LJ pair needs eps >= 0 and x_0 > 0");
    }
}

double potential_energy(const ForceFieldParams& ff, const Mat& x) {
    double u = 0.0;
    for (const auto& b : ff.bonds) {
        const double l = (x.row(b.i) - x.row(b.j)).norm();
        const double d = l - b.l_0;
        u += 0.5 * b.c_l * d * d;
    }
    for (const auto& a : ff.angles) {
        const AngleGeom g = angle_with_grad(x.row(a.i), x.row(a.j), x.row(a.k));
        const double d = g.alpha - a.alpha_0;
        u += 0.5 * a.c_alpha * d * d;
    }
    for (const auto& t : ff.torsions) {
        const TorsionGeom g = torsion_with_grad(x.row(t.i), x.row(t.j), x.row(t.k), x.row(t.l));
        for (const auto& s : t.series)
            u += 0.5 * s.u * (1.0 + std::cos(s.c * g.theta - s.theta_0));
    }
    for (const auto& p : ff.lj) {
        const double r = (x.row(p.i) - x.row(p.j)).norm();
        if (r < kTiny)
            throw DegenerateGeometryError("LJ pair: coincident atoms");
        u += lj_energy(p.eps, p.x_0, r);
    }
    if (ff.charges.size() > 0) {
        for (Eigen::Index i = 0; i < ff.n_atoms(); ++i) {
            for (Eigen::Index j = i + 1; j < ff.n_atoms(); ++j) {
                const double qq = ff.charges(i) * ff.charges(j);
                if (qq == 0.0)
                    continue;
                const double r = (x.row(i) - x.row(j)).norm();
                if (r < kTiny)
                    throw DegenerateGeometryError("Coulomb pair: coincident atoms");
                u += qq / (ff.dielectric * r);
            }
        }
    }
    return u;
}

Mat forces(const ForceFieldParams& ff, const Mat& x) {
    Mat f = Mat::Zero(x.rows(), 3);
    for (const auto& b : ff.bonds) {
        const Vec3 rij = x.row(b.i) - x.row(b.j);
        const double l = rij.norm();
        Vec3 grad; // dU/dx_i
        if (b.l_0 == 0.0) {
            grad = b.c_l * rij; // c (l - 0) * rij / l = c * rij
        } else {
            if (l < kTiny)
                throw DegenerateGeometryError("bond term: coincident atoms");
            grad = b.c_l * (l - b.l_0) / l * rij;
        }
        f.row(b.i) -= grad;
        f.row(b.j) += grad;
    }
    for (const auto& a : ff.angles) {
        const AngleGeom g = angle_with_grad(x.row(a.i), x.row(a.j), x.row(a.k));
        const double coef = a.c_alpha * (g.alpha - a.alpha_0);
        f.row(a.i) -= coef * g.d_i;
        f.row(a.j) -= coef * g.d_j;
        f.row(a.k) -= coef * g.d_k;
    }
    for (const auto& t : ff.torsions) {
        const TorsionGeom g = torsion_with_grad(x.row(t.i), x.row(t.j), x.row(t.k), x.row(t.l));
        double dudtheta = 0.0;
        for (const auto& s : t.series)
            dudtheta += -0.5 * s.u * s.c * std::sin(s.c * g.theta - s.theta_0);
        f.row(t.i) -= dudtheta * g.d_i;
        f.row(t.j) -= dudtheta * g.d_j;
        f.row(t.k) -= dudtheta * g.d_k;
        f.row(t.l) -= dudtheta * g.d_l;
    }
    for (const auto& p : ff.lj) {
        const Vec3 rij = x.row(p.i) - x.row(p.j);
        const double r = rij.norm();
        if (r < kTiny)
            throw DegenerateGeometryError("LJ pair: coincident atoms");
        const Vec3 grad = lj_dudr(p.eps, p.x_0, r) / r * rij;
        f.row(p.i) -= grad;
        f.row(p.j) += grad;
    }
    if (ff.charges.size() > 0) {
        for (Eigen::Index i = 0; i < ff.n_atoms(); ++i) {
            for (Eigen::Index j = i + 1; j < ff.n_atoms(); ++j) {
                const double qq = ff.charges(i) * ff.charges(j);
                if (qq == 0.0)
                    continue;
                const Vec3 rij = x.row(i) - x.row(j);
                const double r = rij.norm();
                if (r < kTiny)
                    throw DegenerateGeometryError("Coulomb pair: coincident atoms");
                const Vec3 grad = -qq / (ff.dielectric * r * r * r) * rij;
                f.row(i) -= grad;
                f.row(j) += grad;
            }
        }
    }
    return f;
}

double gamd_boost(const GamdParams& g, double u) {
    if (u >= g.u_bar)
        return 0.0;
    const double d = g.u_bar - u;
    return 0.5 * g.eta_u * d * d;
}

bool gamd_sigma_check(const GamdParams& g, double u_avg, double sigma_u, double eta) {
    return eta * (g.u_bar - u_avg) * sigma_u <= g.sigma_0;
}

Mat boosted_forces(const ForceFieldParams& ff, const GamdParams& g, const Mat& x) {
    const double u = potential_energy(ff, x);
    Mat f = forces(ff, x);
    if (u < g.u_bar)
        f *= 1.0 - g.eta_u * (g.u_bar - u);
    return f;
}

void velocity_verlet_step(const ForceFieldParams& ff, Mat& x, Mat& v, double dt,
                          const GamdParams* boost) {
    auto eval = [&](const Mat& pos) {
        return boost != nullptr ? boosted_forces(ff, *boost, pos) : forces(ff, pos);
    };
    const Vec inv_m = ff.masses.cwiseInverse();
    const Mat a0 = inv_m.asDiagonal() * eval(x);
    x += dt * v + 0.5 * dt * dt * a0;
    const Mat a1 = inv_m.asDiagonal() * eval(x);
    v += 0.5 * dt * (a0 + a1);
}

double kinetic_energy(const ForceFieldParams& ff, const Mat& v) {
    return 0.5 * (ff.masses.asDiagonal() * v).cwiseProduct(v).sum();
}

SimulationResult simulate(const ForceFieldParams& ff, const Conformation& start, double dt,
                          int n_steps, const std::optional<GamdParams>& boost,
                          const std::optional<Thermostat>& thermostat) {
    validate(ff);
    validate_conformation(start);
    if (ff.n_atoms() != start.size())
        throw std::invalid_argument("simulate: force field and start atom counts differ");
    if (n_steps < 1)
        throw std::invalid_argument("simulate: n_steps must be >= 1");
    if (!(dt > 0.0))
        throw std::invalid_argument("simulate: dt must be positive");

    SimulationResult result;
    result.trajectory.dt = dt;
    result.trajectory.meta["units"] = "reduced (mass 1, 1/(4 pi eps0) = 1)";
    result.trajectory.meta["integrator"] = "velocity-verlet";
    if (boost.has_value())
        result.trajectory.meta["gamd"] = "on";

    Mat x = start.positions;
    Mat v = start.velocities;
    const GamdParams* g = boost.has_value() ? &*boost : nullptr;

    auto record = [&]() {
        result.trajectory.frames.push_back(make_conformation(x, v, start.atom_numbers));
        result.potential.push_back(potential_energy(ff, x));
        result.kinetic.push_back(kinetic_energy(ff, v));
    };
    record();

    for (int step = 1; step <= n_steps; ++step) {
        velocity_verlet_step(ff, x, v, dt, g);
        if (!x.allFinite() || !v.allFinite())
            throw NumericError("simulate: non-finite state at step " + std::to_string(step));
        if (thermostat.has_value() && step % thermostat->interval == 0) {
            const double ke = kinetic_energy(ff, v);
            if (ke > 0.0) {
                const double t_inst = 2.0 * ke / (3.0 * static_cast<double>(ff.n_atoms()));
                v *= std::sqrt(thermostat->temperature / t_inst);
            }
        }
        record();
    }
    return result;
}

Mat thermal_velocities(const ForceFieldParams& ff, const Mat& x, double temperature,
                       RandomSource& rng) {
    const Eigen::Index n = ff.n_atoms();
    Mat v(n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double s = std::sqrt(temperature / ff.masses(i));
        for (int c = 0; c < 3; ++c)
            v(i, c) = s * rng.normal();
    }
    const double total_mass = ff.masses.sum();
    // Remove net linear momentum.
    const Eigen::RowVector3d p = (ff.masses.asDiagonal() * v).colwise().sum();
    for (Eigen::Index i = 0; i < n; ++i)
        v.row(i) -= p / total_mass;
    // Remove angular momentum about the center of mass.
    const Eigen::RowVector3d com = (ff.masses.asDiagonal() * x).colwise().sum() / total_mass;
    Vec3 ell = Vec3::Zero();
    Eigen::Matrix3d inertia = Eigen::Matrix3d::Zero();
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vec3 r = (x.row(i) - com).transpose();
        const Vec3 vi = v.row(i).transpose();
        ell += ff.masses(i) * r.cross(vi);
        inertia += ff.masses(i) * (r.squaredNorm() * Eigen::Matrix3d::Identity() -
                                   r * r.transpose());
    }
    const Vec3 omega = inertia.completeOrthogonalDecomposition().solve(ell);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vec3 r = (x.row(i) - com).transpose();
        v.row(i) -= omega.cross(r).transpose();
    }
    // Rescale so the kinetic temperature is exactly the target.
    const double ke = 0.5 * (ff.masses.asDiagonal() * v).cwiseProduct(v).sum();
    if (ke > 0.0)
        v *= std::sqrt(temperature * 1.5 * static_cast<double>(n) / ke);
    return v;
}

// ---------------------------------------------------------------------------
// Built-in fixtures.

namespace {

Fixture harmonic_fixture(bool three_d) {
    Fixture fx;
    fx.name = three_d ? "harmonic3d" : "harmonic1d";
    fx.ff.masses = Vec::Constant(2, 1.0);
    fx.ff.masses(0) = 1e12; // anchor
    fx.ff.bonds.push_back({0, 1, 1.0, 0.0});
    Mat pos = Mat::Zero(2, 3);
    Mat vel = Mat::Zero(2, 3);
    pos(1, 0) = 1.0;
    if (three_d) {
        pos(1, 1) = 0.5;
        pos(1, 2) = -0.25;
        vel(1, 1) = 0.3;
    }
    IVec z(2);
    z << 0, 1;
    fx.start = make_conformation(pos, vel, z);
    fx.dt = 0.01;
    return fx;
}

Fixture lj_trimer_fixture() {
    Fixture fx;
    fx.name = "lj_trimer";
    fx.ff.masses = Vec::Constant(3, 1.0);
    fx.ff.lj.push_back({0, 1, 1.0, 1.0});
    fx.ff.lj.push_back({0, 2, 1.0, 1.0});
    fx.ff.lj.push_back({1, 2, 1.0, 1.0});
    Mat pos(3, 3);
    pos << 0.0, 0.0, 0.0, //
        1.0, 0.0, 0.0,    //
        0.5, std::sqrt(3.0) / 2.0, 0.0;
    IVec z = IVec::Constant(3, 18);
    fx.start = make_conformation(pos, Mat::Zero(3, 3), z);
    fx.dt = 0.002;
    return fx;
}

Fixture butane_fixture() {
    Fixture fx;
    fx.name = "butane";
    fx.ff.masses = Vec::Constant(4, 1.0);
    for (int b = 0; b < 3; ++b)
        fx.ff.bonds.push_back({b, b + 1, 100.0, 1.0});
    const double tetra = 1.91063323624902; // 109.47 deg
    fx.ff.angles.push_back({0, 1, 2, 30.0, tetra});
    fx.ff.angles.push_back({1, 2, 3, 30.0, tetra});
    TorsionTerm t;
    t.i = 0;
    t.j = 1;
    t.k = 2;
    t.l = 3;
    t.series.push_back({0.5, 3.0, 0.0}); // single cosine term, M = 1
    fx.ff.torsions.push_back(t);
    Mat pos(4, 3);
    pos << 0.0, 0.0, 0.0, //
        1.0, 0.0, 0.0,    //
        1.33, 0.94, 0.0,  //
        2.31, 0.94, 0.25;
    IVec z = IVec::Constant(4, 6);
    fx.start = make_conformation(pos, Mat::Zero(4, 3), z);
    fx.dt = 0.002;
    return fx;
}

Fixture double_well_fixture() {
    Fixture fx;
    fx.name = "double_well";
    fx.ff.masses = Vec::Constant(2, 1.0);
    // Bond toward 3.0 plus a deep LJ well at 1.0: two radial minima with a
    // barrier near r = 2.
    fx.ff.bonds.push_back({0, 1, 1.0, 3.0});
    fx.ff.lj.push_back({0, 1, 5.0, 1.0});
    Mat pos = Mat::Zero(2, 3);
    pos(1, 0) = 3.0;
    Mat vel = Mat::Zero(2, 3);
    vel(1, 0) = -0.2;
    IVec z = IVec::Constant(2, 18);
    fx.start = make_conformation(pos, vel, z);
    fx.dt = 0.002;
    return fx;
}

} // namespace

Fixture make_fixture(const std::string& name) {
    if (name == "harmonic1d")
        return harmonic_fixture(false);
    if (name == "harmonic3d")
        return harmonic_fixture(true);
    if (name == "lj_trimer")
        return lj_trimer_fixture();
    if (name == "butane")
        return butane_fixture();
    if (name == "double_well")
        return double_well_fixture();
    throw std::invalid_argument("unknown fixture: " + name);
}

std::vector<std::string> fixture_names() {
    return {"harmonic1d", "harmonic3d", "lj_trimer", "butane", "double_well"};
}

// ---------------------------------------------------------------------------
// Fixture files.

using nlohmann::json;

Fixture load_fixture_file(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open fixture file: " + path);
    json j = json::parse(in);
    Fixture fx;
    fx.name = j.value("name", path);
    const auto& atoms = j.at("atoms");
    const Eigen::Index n = static_cast<Eigen::Index>(atoms.size());
    fx.ff.masses = Vec(n);
    fx.ff.charges = Vec::Zero(n);
    IVec z(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& a = atoms[static_cast<std::size_t>(i)];
        z(i) = a.at("z").get<int>();
        fx.ff.masses(i) = a.at("mass").get<double>();
        fx.ff.charges(i) = a.value("charge", 0.0);
    }
    if (fx.ff.charges.isZero())
        fx.ff.charges = Vec();
    fx.ff.dielectric = j.value("dielectric", 1.0);
    for (const auto& b : j.value("bonds", json::array()))
        fx.ff.bonds.push_back({b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<double>(),
                               b.at(3).get<double>()});
    for (const auto& a : j.value("angles", json::array()))
        fx.ff.angles.push_back({a.at(0).get<int>(), a.at(1).get<int>(), a.at(2).get<int>(),
                                a.at(3).get<double>(), a.at(4).get<double>()});
    for (const auto& t : j.value("torsions", json::array())) {
        TorsionTerm term;
        const auto& idx = t.at("atoms");
        term.i = idx.at(0).get<int>();
        term.j = idx.at(1).get<int>();
        term.k = idx.at(2).get<int>();
        term.l = idx.at(3).get<int>();
        for (const auto& s : t.at("series"))
            term.series.push_back(
                {s.at(0).get<double>(), s.at(1).get<double>(), s.at(2).get<double>()});
        fx.ff.torsions.push_back(term);
    }
    for (const auto& p : j.value("lj", json::array()))
        fx.ff.lj.push_back({p.at(0).get<int>(), p.at(1).get<int>(), p.at(2).get<double>(),
                            p.at(3).get<double>()});
    Mat pos(n, 3), vel = Mat::Zero(n, 3);
    const auto& jpos = j.at("positions");
    for (Eigen::Index i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c)
            pos(i, c) = jpos[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
    if (j.contains("velocities")) {
        const auto& jvel = j.at("velocities");
        for (Eigen::Index i = 0; i < n; ++i)
            for (int c = 0; c < 3; ++c)
                vel(i, c) = jvel[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
    }
    fx.start = make_conformation(std::move(pos), std::move(vel), std::move(z));
    fx.dt = j.value("dt", 0.01);
    validate(fx.ff);
    return fx;
}

void save_fixture_file(const Fixture& fx, const std::string& path) {
    json j;
    j["name"] = fx.name;
    j["dt"] = fx.dt;
    j["dielectric"] = fx.ff.dielectric;
    j["atoms"] = json::array();
    for (Eigen::Index i = 0; i < fx.ff.n_atoms(); ++i) {
        json a;
        a["z"] = fx.start.atom_numbers(i);
        a["mass"] = fx.ff.masses(i);
        if (fx.ff.charges.size() > 0)
            a["charge"] = fx.ff.charges(i);
        j["atoms"].push_back(a);
    }
    for (const auto& b : fx.ff.bonds)
        j["bonds"].push_back({b.i, b.j, b.c_l, b.l_0});
    for (const auto& a : fx.ff.angles)
        j["angles"].push_back({a.i, a.j, a.k, a.c_alpha, a.alpha_0});
    for (const auto& t : fx.ff.torsions) {
        json jt;
        jt["atoms"] = {t.i, t.j, t.k, t.l};
        jt["series"] = json::array();
        for (const auto& s : t.series)
            jt["series"].push_back({s.u, s.c, s.theta_0});
        j["torsions"].push_back(jt);
    }
    for (const auto& p : fx.ff.lj)
        j["lj"].push_back({p.i, p.j, p.eps, p.x_0});
    j["positions"] = json::array();
    j["velocities"] = json::array();
    for (Eigen::Index i = 0; i < fx.start.size(); ++i) {
        j["positions"].push_back(
            {fx.start.positions(i, 0), fx.start.positions(i, 1), fx.start.positions(i, 2)});
        j["velocities"].push_back(
            {fx.start.velocities(i, 0), fx.start.velocities(i, 1), fx.start.velocities(i, 2)});
    }
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot write fixture file: " + path);
    out << j.dump(2) << "\n";
}

} // namespace diffmd
