#include "diffmd/noise.hpp"

#include <algorithm>
#include <cmath>

namespace diffmd {

void validate(const NoiseSchedule& schedule) {
    if (!(schedule.sigma_s > 0.0) || !(schedule.eta_sigma > 0.0) || !(schedule.a_bar > 0.0))
        throw std::invalid_argument("NoiseSchedule: sigma_s, eta_sigma, a_bar must be positive");
    if (!(schedule.sigma_min_frac > 0.0) || schedule.sigma_min_frac > 1.0)
        throw std::invalid_argument("NoiseSchedule: sigma_min_frac must be in (0, 1]");
}

void validate(const DiffusionConfig& cfg) {
    validate(cfg.schedule);
    if (!(cfg.s_min > 0.0) || !(cfg.s_min < cfg.s_max) || cfg.s_max > 1.0)
        throw std::invalid_argument("DiffusionConfig: need 0 < s_min < s_max <= 1");
}

double base_sigma(const NoiseSchedule& schedule, std::optional<double> a_sq) {
    if (!a_sq.has_value() || *a_sq >= schedule.a_bar)
        return schedule.sigma_s;
    const double d = *a_sq - schedule.a_bar;
    return std::max(schedule.sigma_s * schedule.eta_sigma * d * d,
                    schedule.sigma_s * schedule.sigma_min_frac);
}

double kernel_variance(double sigma, double s) {
    if (!(sigma > 0.0))
        throw std::invalid_argument("kernel_variance: sigma must be positive");
    if (s < 0.0 || s > 1.0)
        throw std::invalid_argument("kernel_variance: s must be in [0, 1]");
    const double log_sigma = std::log(sigma);
    if (std::abs(sigma - 1.0) < 1e-12)
        return s; // limit of the closed form
    return (std::exp(2.0 * s * log_sigma) - 1.0) / (2.0 * log_sigma);
}

double kernel_std(double sigma, double s) { return std::sqrt(kernel_variance(sigma, s)); }

double lambda_weight(double sigma, double s) {
    if (s == 0.0)
        return 0.0;
    return kernel_variance(sigma, s);
}

} // namespace diffmd
