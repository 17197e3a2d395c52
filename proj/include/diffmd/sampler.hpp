#pragma once

#include "diffmd/egt.hpp"
#include "diffmd/noise.hpp"
#include "diffmd/rng.hpp"
#include "diffmd/types.hpp"

#include <functional>

namespace diffmd {

enum class SamplerMode { predictor_corrector, ode };

struct SamplerConfig {
    int n_predictor = 500;            // reverse-SDE discretization steps
    int n_corrector = 2;              // corrector count; inner loop runs n_corrector - 1
    double snr = 0.16;                // corrector signal-to-noise ratio
    double ode_abs_tol = 1e-5;
    double ode_rel_tol = 1e-5;
    double s_min = 0.1;               // smallest diffusion time
    SamplerMode mode = SamplerMode::ode;
    bool corrector_off_by_one = false; // true: run n_corrector inner iterations
};

void validate(const SamplerConfig& cfg);

// Score field over positions at diffusion time s.
using ScoreFn = std::function<Mat(const Mat& x, double s)>;

// Reverse-SDE Euler-Maruyama step from s_hi down to s_lo with g(s) = sigma^s:
// x' = x + g(s_hi)^2 score(x, s_hi) ds + g(s_hi) sqrt(ds) z.
Mat em_predictor_step(const Mat& x, const ScoreFn& score_fn, double sigma, double s_hi,
                      double s_lo, RandomSource& rng);

// Langevin step with SNR-scaled step size: delta = 2 (snr |z| / |g|)^2,
// x' = x + delta g + sqrt(2 delta) z; delta = 0 when the score vanishes.
Mat langevin_corrector_step(const Mat& x, const ScoreFn& score_fn, double s, double snr,
                            RandomSource& rng);

// Predictor-corrector chain over a uniform time grid descending from 1 to
// cfg.s_min in cfg.n_predictor steps.
Mat pc_sample(const Mat& x_prior, const ScoreFn& score_fn, double sigma,
              const SamplerConfig& cfg, RandomSource& rng);

// Probability-flow ODE dx/ds = -1/2 g(s)^2 score(x, s) integrated from s = 1
// down to cfg.s_min with an adaptive Dormand-Prince 5(4) pair. Deterministic.
// Throws IntegrationError on step-size underflow.
Mat ode_sample(const Mat& x_prior, const ScoreFn& score_fn, double sigma,
               const SamplerConfig& cfg);

// Frame-by-frame generation with the previous frame as the sampling prior.
// New-frame velocities are position differences; features are rebuilt.
Trajectory rollout(const EgtModel& model, const Conformation& start, int n_frames,
                   const NoiseSchedule& schedule, const SamplerConfig& cfg, RandomSource& rng);

} // namespace diffmd
