#pragma once

#include "diffmd/egt.hpp"
#include "diffmd/noise.hpp"
#include "diffmd/rng.hpp"
#include "diffmd/types.hpp"

#include <optional>

namespace diffmd {

// Squared Frobenius norm of a(t-1) = v(t) - v(t-1) over all atoms.
// Requires t >= 2 so both velocities exist as frame differences.
double acceleration_sq(const Trajectory& traj, Eigen::Index t);

// x_s = x0 + sqrt(kernel_variance(sigma, s)) * z, z standard normal.
struct Perturbed {
    Mat x_s;
    Mat noise_z;
};
Perturbed perturb(const Mat& x0, double sigma, double s, RandomSource& rng);

// Analytic kernel score -(x_s - x0) / kernel_variance(sigma, s).
// Throws SingularKernelError at s = 0.
Mat kernel_score(const Mat& x_s, const Mat& x0, double sigma, double s);

// Disturbed conformation for a perturbed next frame: positions x_tilde,
// velocities x_tilde - x_prev, features rebuilt.
Conformation disturbed_conformation(const Mat& x_tilde, const Conformation& prev);

// One DSM term with the randomness fixed: perturbs x_next with noise z at time
// s and noise level sigma, evaluates the score network on the disturbed
// conformation and returns lambda(s) |s_theta - kernel_score|_F^2. When
// `grads` is non-null, parameter gradients accumulate into it.
double dsm_loss_term(const EgtModel& model, const Conformation& prev, const Mat& x_next,
                     double sigma, double s, const Mat& z, EgtModel* grads = nullptr,
                     RandomSource* dropout_rng = nullptr);

// Spec-facing entry: samples s ~ U[s_min, 1] and z, derives sigma from the
// stored squared acceleration (sigma_s when absent), averages over the batch.
struct FramePair {
    Conformation prev;
    Conformation next;
    std::optional<double> a_sq; // squared-acceleration at the pair's first frame
    std::string source;
};

double dsm_loss(const EgtModel& model, const std::vector<FramePair>& batch,
                const DiffusionConfig& cfg, Mt19937Source& rng, EgtModel* grads = nullptr,
                RandomSource* dropout_rng = nullptr);

} // namespace diffmd
