#pragma once

#include "diffmd/types.hpp"

#include <optional>

namespace diffmd {

// Acceleration-conditioned noise schedule. Above the threshold a_bar the base
// standard deviation is sigma_s; below it the harmonic form
// sigma_s * eta_sigma * (a_sq - a_bar)^2 applies, floored at
// sigma_s * sigma_min_frac so the kernel never degenerates.
struct NoiseSchedule {
    double sigma_s = 0.1;
    double eta_sigma = 1.0;
    double a_bar = 1.0;
    double sigma_min_frac = 1e-3;
};

struct DiffusionConfig {
    NoiseSchedule schedule;
    double s_min = 0.1;
    double s_max = 1.0;
};

void validate(const NoiseSchedule& schedule);
void validate(const DiffusionConfig& cfg);

// Base noise for a squared-acceleration value; nullopt (no acceleration
// available, first two frames) falls back to sigma_s.
double base_sigma(const NoiseSchedule& schedule, std::optional<double> a_sq);

// Closed-form variance of the transition kernel at diffusion time s for the
// variance-exploding SDE dx = sigma^s dw: (sigma^{2s} - 1) / (2 ln sigma),
// with the limit s at sigma = 1.
double kernel_variance(double sigma, double s);

double kernel_std(double sigma, double s);

// lambda(s) = kernel_variance(sigma, s): reciprocal of the expected squared
// kernel score up to the absorbed constant 3N.
double lambda_weight(double sigma, double s);

} // namespace diffmd
