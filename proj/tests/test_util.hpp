#pragma once

#include "diffmd/types.hpp"

#include <random>

namespace diffmd::testutil {

inline Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
    std::normal_distribution<double> dist;
    Eigen::Matrix3d a;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            a(i, j) = dist(rng);
    const Eigen::HouseholderQR<Eigen::Matrix3d> qr(a);
    Eigen::Matrix3d q = qr.householderQ();
    if (q.determinant() < 0)
        q.col(0) *= -1.0;
    return q;
}

inline Mat random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng,
                         double scale = 1.0) {
    std::normal_distribution<double> dist;
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j)
            m(i, j) = scale * dist(rng);
    return m;
}

// Random conformation with pairwise distances bounded away from zero.
inline Conformation random_conformation(Eigen::Index n, std::mt19937_64& rng,
                                        double position_scale = 0.6,
                                        double velocity_scale = 1.0) {
    for (int attempt = 0; attempt < 100; ++attempt) {
        Mat pos = random_matrix(n, 3, rng, position_scale);
        double min_d = 1e30;
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = i + 1; j < n; ++j)
                min_d = std::min(min_d, (pos.row(i) - pos.row(j)).norm());
        if (n > 1 && min_d < 0.05)
            continue;
        Mat vel = random_matrix(n, 3, rng, velocity_scale);
        IVec z(n);
        for (Eigen::Index i = 0; i < n; ++i)
            z(i) = 1 + static_cast<int>(i % 8);
        return make_conformation(std::move(pos), std::move(vel), std::move(z));
    }
    throw std::runtime_error("random_conformation: could not separate atoms");
}

inline Conformation transformed(const Conformation& conf, const Eigen::Matrix3d& q,
                                const Vec3& o) {
    Conformation out = conf;
    out.positions = (q * conf.positions.transpose()).transpose();
    out.positions.rowwise() += o.transpose();
    out.velocities = (q * conf.velocities.transpose()).transpose();
    refresh_features(out);
    return out;
}

} // namespace diffmd::testutil
