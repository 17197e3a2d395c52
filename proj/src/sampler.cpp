#include "diffmd/sampler.hpp"

#include "diffmd/sde.hpp"

#include <cmath>

namespace diffmd {

void validate(const SamplerConfig& cfg) {
    if (cfg.n_predictor < 1)
        throw std::invalid_argument("SamplerConfig: n_predictor must be >= 1");
    if (cfg.n_corrector < 0)
        throw std::invalid_argument("SamplerConfig: n_corrector must be >= 0");
    if (!(cfg.snr > 0.0))
        throw std::invalid_argument("SamplerConfig: snr must be positive");
    if (!(cfg.ode_abs_tol > 0.0) || !(cfg.ode_rel_tol > 0.0))
        throw std::invalid_argument("SamplerConfig: tolerances must be positive");
    if (!(cfg.s_min > 0.0) || !(cfg.s_min < 1.0))
        throw std::invalid_argument("SamplerConfig: s_min must be in (0, 1)");
}

Mat em_predictor_step(const Mat& x, const ScoreFn& score_fn, double sigma, double s_hi,
                      double s_lo, RandomSource& rng) {
    if (!(0.0 <= s_lo && s_lo < s_hi && s_hi <= 1.0))
        throw std::invalid_argument("em_predictor_step: need 0 <= s_lo < s_hi <= 1");
    const double ds = s_hi - s_lo;
    const double g = std::pow(sigma, s_hi);
    const Mat z = rng.normal_matrix(x.rows(), x.cols());
    return x + g * g * ds * score_fn(x, s_hi) + g * std::sqrt(ds) * z;
}

Mat langevin_corrector_step(const Mat& x, const ScoreFn& score_fn, double s, double snr,
                            RandomSource& rng) {
    if (!(s > 0.0) || s > 1.0)
        throw std::invalid_argument("langevin_corrector_step: s must be in (0, 1]");
    const Mat g = score_fn(x, s);
    const Mat z = rng.normal_matrix(x.rows(), x.cols());
    const double gnorm = g.norm();
    if (gnorm == 0.0)
        return x;
    const double ratio = snr * z.norm() / gnorm;
    const double delta = 2.0 * ratio * ratio;
    return x + delta * g + std::sqrt(2.0 * delta) * z;
}

Mat pc_sample(const Mat& x_prior, const ScoreFn& score_fn, double sigma,
              const SamplerConfig& cfg, RandomSource& rng) {
    validate(cfg);
    Mat x = x_prior;
    const double step = (1.0 - cfg.s_min) / static_cast<double>(cfg.n_predictor);
    const int inner = cfg.corrector_off_by_one ? cfg.n_corrector : cfg.n_corrector - 1;
    for (int k = 1; k <= cfg.n_predictor; ++k) {
        const double s_hi = 1.0 - step * static_cast<double>(k - 1);
        const double s_lo = (k == cfg.n_predictor) ? cfg.s_min : 1.0 - step * static_cast<double>(k);
        x = em_predictor_step(x, score_fn, sigma, s_hi, s_lo, rng);
        for (int j = 1; j <= inner; ++j)
            x = langevin_corrector_step(x, score_fn, s_lo, cfg.snr, rng);
    }
    return x;
}

namespace {

// Dormand-Prince 5(4) coefficients.
constexpr double kA21 = 1.0 / 5.0;
constexpr double kA31 = 3.0 / 40.0, kA32 = 9.0 / 40.0;
constexpr double kA41 = 44.0 / 45.0, kA42 = -56.0 / 15.0, kA43 = 32.0 / 9.0;
constexpr double kA51 = 19372.0 / 6561.0, kA52 = -25360.0 / 2187.0, kA53 = 64448.0 / 6561.0,
                 kA54 = -212.0 / 729.0;
constexpr double kA61 = 9017.0 / 3168.0, kA62 = -355.0 / 33.0, kA63 = 46732.0 / 5247.0,
                 kA64 = 49.0 / 176.0, kA65 = -5103.0 / 18656.0;
constexpr double kB1 = 35.0 / 384.0, kB3 = 500.0 / 1113.0, kB4 = 125.0 / 192.0,
                 kB5 = -2187.0 / 6784.0, kB6 = 11.0 / 84.0;
constexpr double kE1 = kB1 - 5179.0 / 57600.0, kE3 = kB3 - 7571.0 / 16695.0,
                 kE4 = kB4 - 393.0 / 640.0, kE5 = kB5 + 92097.0 / 339200.0,
                 kE6 = kB6 - 187.0 / 2100.0, kE7 = -1.0 / 40.0;
constexpr double kC2 = 1.0 / 5.0, kC3 = 3.0 / 10.0, kC4 = 4.0 / 5.0, kC5 = 8.0 / 9.0;

} // namespace

Mat ode_sample(const Mat& x_prior, const ScoreFn& score_fn, double sigma,
               const SamplerConfig& cfg) {
    validate(cfg);
    auto field = [&](const Mat& x, double s) -> Mat {
        const double g = std::pow(sigma, s);
        return -0.5 * g * g * score_fn(x, s);
    };

    Mat x = x_prior;
    double s = 1.0;
    const double s_end = cfg.s_min;
    double h = -(1.0 - s_end) / 16.0; // first trial step, refined by control
    Mat k1 = field(x, s);
    while (s > s_end + 1e-14) {
        if (s + h < s_end)
            h = s_end - s;
        if (std::abs(h) < 1e-14)
            throw IntegrationError("ode_sample: step size underflow at s = " + std::to_string(s),
                                   s);
        const Mat k2 = field(x + h * (kA21 * k1), s + kC2 * h);
        const Mat k3 = field(x + h * (kA31 * k1 + kA32 * k2), s + kC3 * h);
        const Mat k4 = field(x + h * (kA41 * k1 + kA42 * k2 + kA43 * k3), s + kC4 * h);
        const Mat k5 = field(x + h * (kA51 * k1 + kA52 * k2 + kA53 * k3 + kA54 * k4),
                             s + kC5 * h);
        const Mat k6 =
            field(x + h * (kA61 * k1 + kA62 * k2 + kA63 * k3 + kA64 * k4 + kA65 * k5), s + h);
        const Mat x_new = x + h * (kB1 * k1 + kB3 * k3 + kB4 * k4 + kB5 * k5 + kB6 * k6);
        const Mat k7 = field(x_new, s + h);
        const Mat err =
            h * (kE1 * k1 + kE3 * k3 + kE4 * k4 + kE5 * k5 + kE6 * k6 + kE7 * k7);

        double norm_sq = 0.0;
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            for (Eigen::Index j = 0; j < x.cols(); ++j) {
                const double tol = cfg.ode_abs_tol +
                                   cfg.ode_rel_tol *
                                       std::max(std::abs(x(i, j)), std::abs(x_new(i, j)));
                const double e = err(i, j) / tol;
                norm_sq += e * e;
            }
        double err_norm = std::sqrt(norm_sq / static_cast<double>(x.size()));
        if (!std::isfinite(err_norm))
            err_norm = 1e10; // non-finite stage: reject and shrink hard

        if (err_norm <= 1.0) {
            s += h;
            x = x_new;
            k1 = k7; // first-same-as-last
        }
        const double factor =
            std::clamp(0.9 * std::pow(std::max(err_norm, 1e-10), -0.2), 0.2, 5.0);
        h *= factor;
        if (!x.allFinite())
            throw IntegrationError("ode_sample: non-finite state at s = " + std::to_string(s), s);
    }
    return x;
}

Trajectory rollout(const EgtModel& model, const Conformation& start, int n_frames,
                   const NoiseSchedule& schedule, const SamplerConfig& cfg, RandomSource& rng) {
    if (n_frames < 1)
        throw std::invalid_argument("rollout: n_frames must be >= 1");
    validate(cfg);
    validate(schedule);
    validate_conformation(start);

    Trajectory traj;
    traj.dt = 1.0;
    traj.meta["generator"] = cfg.mode == SamplerMode::ode ? "ode" : "predictor-corrector";
    traj.frames.push_back(start);

    for (int f = 1; f <= n_frames; ++f) {
        const Conformation& prev = traj.frames.back();
        std::optional<double> a_sq;
        if (traj.frames.size() >= 2) {
            const Conformation& prev2 = traj.frames[traj.frames.size() - 2];
            a_sq = (prev.velocities - prev2.velocities).squaredNorm();
        }
        const double sigma = base_sigma(schedule, a_sq);

        ScoreFn score_fn = [&](const Mat& x_cur, double s) {
            const Conformation tilde = disturbed_conformation(x_cur, prev);
            return egt_score(model, tilde, s, sigma);
        };

        Mat x_new;
        if (cfg.mode == SamplerMode::ode)
            x_new = ode_sample(prev.positions, score_fn, sigma, cfg);
        else
            x_new = pc_sample(prev.positions, score_fn, sigma, cfg, rng);

        if (!x_new.allFinite())
            throw NumericError("rollout: non-finite positions at generated frame " +
                               std::to_string(f));
        Conformation next;
        next.positions = x_new;
        next.velocities = velocity_from_frames(x_new, prev.positions);
        next.atom_numbers = prev.atom_numbers;
        refresh_features(next);
        traj.frames.push_back(std::move(next));
    }
    return traj;
}

} // namespace diffmd
