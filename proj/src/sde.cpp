#include "diffmd/sde.hpp"

#include <cmath>

namespace diffmd {

double acceleration_sq(const Trajectory& traj, Eigen::Index t) {
    if (t < 2)
        throw std::invalid_argument("acceleration_sq: needs t >= 2");
    if (t >= traj.n_frames())
        throw std::invalid_argument("acceleration_sq: frame index out of range");
    const Mat a = traj.frames[static_cast<std::size_t>(t)].velocities -
                  traj.frames[static_cast<std::size_t>(t - 1)].velocities;
    return a.squaredNorm();
}

Perturbed perturb(const Mat& x0, double sigma, double s, RandomSource& rng) {
    Perturbed p;
    p.noise_z = rng.normal_matrix(x0.rows(), x0.cols());
    p.x_s = x0 + kernel_std(sigma, s) * p.noise_z;
    return p;
}

Mat kernel_score(const Mat& x_s, const Mat& x0, double sigma, double s) {
    const double var = kernel_variance(sigma, s);
    if (!(var > 0.0))
        throw SingularKernelError("kernel_score: zero kernel variance at s = 0");
    return -(x_s - x0) / var;
}

Conformation disturbed_conformation(const Mat& x_tilde, const Conformation& prev) {
    Conformation conf;
    conf.positions = x_tilde;
    conf.velocities = velocity_from_frames(x_tilde, prev.positions);
    conf.atom_numbers = prev.atom_numbers;
    refresh_features(conf);
    return conf;
}

double dsm_loss_term(const EgtModel& model, const Conformation& prev, const Mat& x_next,
                     double sigma, double s, const Mat& z, EgtModel* grads,
                     RandomSource* dropout_rng) {
    const Mat x_tilde = x_next + kernel_std(sigma, s) * z;
    const Conformation tilde = disturbed_conformation(x_tilde, prev);
    const Mat target = kernel_score(x_tilde, x_next, sigma, s);
    const double lambda = lambda_weight(sigma, s);

    if (grads == nullptr) {
        EgtCache cache;
        const Mat score = egt_score(model, tilde, s, sigma, &cache, dropout_rng);
        return lambda * (score - target).squaredNorm();
    }
    double loss = 0.0;
    EgtCache cache;
    const Mat score = egt_score(model, tilde, s, sigma, &cache, dropout_rng);
    const Mat diff = score - target;
    loss = lambda * diff.squaredNorm();
    if (!std::isfinite(loss))
        throw NumericError("dsm_loss_term: non-finite loss");
    const Mat dscore = 2.0 * lambda * diff;
    egt_score_backward(model, cache, s, sigma, dscore, *grads);
    return loss;
}

double dsm_loss(const EgtModel& model, const std::vector<FramePair>& batch,
                const DiffusionConfig& cfg, Mt19937Source& rng, EgtModel* grads,
                RandomSource* dropout_rng) {
    if (batch.empty())
        throw std::invalid_argument("dsm_loss: empty batch");
    validate(cfg);
    double total = 0.0;
    EgtModel accum;
    if (grads != nullptr)
        accum = zeros_like(model);
    for (const FramePair& pair : batch) {
        const double sigma = base_sigma(cfg.schedule, pair.a_sq);
        const double s = rng.uniform(cfg.s_min, cfg.s_max);
        const Mat z = rng.normal_matrix(pair.next.positions.rows(), 3);
        total += dsm_loss_term(model, pair.prev, pair.next.positions, sigma, s, z,
                               grads != nullptr ? &accum : nullptr, dropout_rng);
    }
    if (grads != nullptr) {
        // Add the batch-mean gradient onto whatever the caller accumulated.
        const double inv = 1.0 / static_cast<double>(batch.size());
        std::vector<double*> dst;
        for_each_param(*grads, [&](const std::string&, double* data, Eigen::Index,
                                   Eigen::Index) { dst.push_back(data); });
        std::size_t idx = 0;
        for_each_param(accum, [&](const std::string&, double* data, Eigen::Index r,
                                  Eigen::Index c) {
            double* out = dst[idx++];
            for (Eigen::Index k = 0; k < r * c; ++k)
                out[k] += inv * data[k];
        });
    }
    return total / static_cast<double>(batch.size());
}

} // namespace diffmd
