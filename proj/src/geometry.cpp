#include "diffmd/geometry.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>

namespace diffmd {

namespace {

constexpr double kTinyNorm = 1e-10;

void check_window(const Trajectory& generated, const Trajectory& reference, Eigen::Index t1,
                  Eigen::Index tn) {
    if (generated.n_atoms() != reference.n_atoms())
        throw std::invalid_argument("trajectories have different atom counts");
    if (t1 < 0 || tn < t1)
        throw std::invalid_argument("bad frame window: need 0 <= t1 <= tn");
    if (tn >= generated.n_frames() || tn >= reference.n_frames())
        throw std::invalid_argument("frame window exceeds trajectory length");
}

} // namespace

double angle_between(const Vec3& u, const Vec3& w) {
    const double nu = u.norm();
    const double nw = w.norm();
    if (nu < kTinyNorm || nw < kTinyNorm)
        return 0.0;
    const double c = std::clamp(u.dot(w) / (nu * nw), -1.0, 1.0);
    return std::acos(c);
}

Vec3 relative_position(const Conformation& conf, Eigen::Index i, Eigen::Index j) {
    const Eigen::Index n = conf.size();
    if (i < 0 || j < 0 || i >= n || j >= n)
        throw std::invalid_argument("relative_position: atom index out of range");
    return conf.positions.row(i) - conf.positions.row(j);
}

PairGeometry pair_geometry(const Vec3& pos_a, const Vec3& pos_b, const Vec3& vel_a,
                           const Vec3& vel_b) {
    PairGeometry pg;
    pg.rel = pos_b - pos_a;
    pg.distance = pg.rel.norm();
    if (pg.distance < kTinyNorm)
        throw DegenerateGeometryError("pair_geometry: coincident atoms");
    pg.phi_a = angle_between(vel_a, pg.rel);
    pg.phi_b = angle_between(vel_b, -pg.rel);
    const Vec3 n_a = vel_a.cross(pg.rel);
    const Vec3 n_b = vel_b.cross(pg.rel);
    pg.theta = angle_between(n_a, n_b); // 0 when either plane is degenerate
    return pg;
}

PairGeometry pair_geometry(const Conformation& conf, Eigen::Index a, Eigen::Index b) {
    const Eigen::Index n = conf.size();
    if (a < 0 || b < 0 || a >= n || b >= n || a == b)
        throw std::invalid_argument("pair_geometry: bad atom indices");
    return pair_geometry(conf.positions.row(a), conf.positions.row(b), conf.velocities.row(a),
                         conf.velocities.row(b));
}

double armse(const Trajectory& generated, const Trajectory& reference, Eigen::Index t1,
             Eigen::Index tn) {
    check_window(generated, reference, t1, tn);
    double acc = 0.0;
    for (Eigen::Index i = t1; i <= tn; ++i)
        acc += (generated.frames[static_cast<std::size_t>(i)].positions -
                reference.frames[static_cast<std::size_t>(i)].positions)
                   .squaredNorm();
    return std::sqrt(acc / static_cast<double>(tn - t1 + 1));
}

Mat kabsch_align(const Mat& moving, const Mat& target) {
    if (moving.rows() != target.rows() || moving.cols() != 3 || target.cols() != 3)
        throw std::invalid_argument("kabsch_align: shape mismatch");
    const Eigen::RowVector3d cm = moving.colwise().mean();
    const Eigen::RowVector3d ct = target.colwise().mean();
    const Mat p = moving.rowwise() - cm;
    const Mat q = target.rowwise() - ct;
    const Eigen::Matrix3d h = p.transpose() * q;
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
    d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() > 0 ? 1.0 : -1.0;
    const Eigen::Matrix3d rot = svd.matrixV() * d * svd.matrixU().transpose();
    Mat out = (rot * p.transpose()).transpose();
    out.rowwise() += ct;
    return out;
}

double kabsch_armse(const Trajectory& generated, const Trajectory& reference, Eigen::Index t1,
                    Eigen::Index tn) {
    check_window(generated, reference, t1, tn);
    double acc = 0.0;
    for (Eigen::Index i = t1; i <= tn; ++i) {
        const Mat& gen = generated.frames[static_cast<std::size_t>(i)].positions;
        const Mat& ref = reference.frames[static_cast<std::size_t>(i)].positions;
        acc += (kabsch_align(gen, ref) - ref).squaredNorm();
    }
    return std::sqrt(acc / static_cast<double>(tn - t1 + 1));
}

Mat velocity_from_frames(const Mat& x_t, const Mat& x_prev) {
    if (x_t.rows() != x_prev.rows() || x_t.cols() != x_prev.cols())
        throw std::invalid_argument("velocity_from_frames: shape mismatch");
    return x_t - x_prev;
}

} // namespace diffmd
