#include "diffmd/types.hpp"

#include <cmath>
#include <utility>

namespace diffmd {

void refresh_features(Conformation& conf) {
    const Eigen::Index n = conf.positions.rows();
    conf.features.resize(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
        conf.features(i, 0) = conf.velocities.row(i).norm();
        conf.features(i, 1) = static_cast<double>(conf.atom_numbers(i));
    }
}

Conformation make_conformation(Mat positions, Mat velocities, IVec atom_numbers) {
    Conformation conf;
    conf.positions = std::move(positions);
    conf.velocities = std::move(velocities);
    conf.atom_numbers = std::move(atom_numbers);
    refresh_features(conf);
    validate_conformation(conf);
    return conf;
}

void validate_conformation(const Conformation& conf) {
    const Eigen::Index n = conf.positions.rows();
    if (n < 1)
        throw std::invalid_argument("conformation needs at least one atom");
    if (conf.positions.cols() != 3 || conf.velocities.cols() != 3)
        throw std::invalid_argument("positions/velocities must be N x 3");
    if (conf.velocities.rows() != n || conf.atom_numbers.size() != n)
        throw std::invalid_argument("positions, velocities, atom_numbers row counts differ");
    if (!conf.positions.allFinite() || !conf.velocities.allFinite())
        throw std::invalid_argument("non-finite entries in conformation");
}

void validate_trajectory(const Trajectory& traj) {
    if (traj.frames.empty())
        throw std::invalid_argument("trajectory needs at least one frame");
    if (!(traj.dt > 0.0))
        throw std::invalid_argument("trajectory dt must be positive");
    const Conformation& first = traj.frames.front();
    for (const Conformation& frame : traj.frames) {
        validate_conformation(frame);
        if (frame.size() != first.size() || frame.atom_numbers != first.atom_numbers)
            throw std::invalid_argument("all frames must share atom roster");
    }
}

Trajectory downsample(const Trajectory& traj, int stride) {
    if (stride < 1)
        throw std::invalid_argument("stride must be >= 1");
    Trajectory out;
    out.dt = traj.dt * stride;
    out.meta = traj.meta;
    for (std::size_t i = 0; i < traj.frames.size(); i += static_cast<std::size_t>(stride))
        out.frames.push_back(traj.frames[i]);
    return out;
}

} // namespace diffmd
