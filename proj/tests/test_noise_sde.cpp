#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "diffmd/sde.hpp"
#include "test_util.hpp"

#include <cmath>

using namespace diffmd;
using namespace diffmd::testutil;

TEST_CASE("base_sigma branches") {
    NoiseSchedule sch;
    sch.sigma_s = 0.1;
    sch.eta_sigma = 1.0;
    sch.a_bar = 1.0;

    CHECK(base_sigma(sch, 2.0) == doctest::Approx(0.1));
    CHECK(base_sigma(sch, 0.0) == doctest::Approx(0.1));
    CHECK(base_sigma(sch, 0.5) == doctest::Approx(0.025));
    CHECK(base_sigma(sch, std::nullopt) == doctest::Approx(0.1)); // first frames
    // Clamp keeps the kernel non-degenerate at the threshold boundary.
    CHECK(base_sigma(sch, 0.999999) == doctest::Approx(0.1 * sch.sigma_min_frac));
}

TEST_CASE("base_sigma monotone non-increasing below the threshold") {
    NoiseSchedule sch;
    sch.sigma_s = 0.2;
    sch.eta_sigma = 3.0;
    sch.a_bar = 2.0;
    double prev = std::numeric_limits<double>::infinity();
    for (double a = 0.0; a < sch.a_bar; a += 0.01) {
        const double s = base_sigma(sch, a);
        CHECK(s <= prev + 1e-15);
        CHECK(s > 0.0);
        prev = s;
    }
}

TEST_CASE("kernel_variance closed form") {
    CHECK(kernel_variance(2.0, 0.0) == 0.0);
    CHECK(kernel_variance(std::exp(1.0), 1.0) ==
          doctest::Approx((std::exp(2.0) - 1.0) / 2.0).epsilon(1e-12));
    CHECK(kernel_variance(1.0, 0.37) == doctest::Approx(0.37));
    for (double s : {0.1, 0.5, 0.9}) {
        CHECK(kernel_variance(1.0 + 1e-8, s) == doctest::Approx(s).epsilon(1e-6));
        CHECK(kernel_variance(1.0 - 1e-8, s) == doctest::Approx(s).epsilon(1e-6));
    }
}

TEST_CASE("perturb moment checks") {
    Mt19937Source rng(123);
    const Mat x0 = Mat::Constant(1, 3, 2.0);
    const double sigma = 0.5;
    const double s = 0.7;

    SUBCASE("s = 0 is exact") {
        const Perturbed p = perturb(x0, sigma, 0.0, rng);
        CHECK((p.x_s - x0).norm() == 0.0);
    }

    SUBCASE("empirical mean and variance match the kernel") {
        const int n = 100000;
        Vec3 mean = Vec3::Zero();
        Vec3 second = Vec3::Zero();
        for (int i = 0; i < n; ++i) {
            const Perturbed p = perturb(x0, sigma, s, rng);
            for (int c = 0; c < 3; ++c) {
                const double d = p.x_s(0, c) - x0(0, c);
                mean(c) += d;
                second(c) += d * d;
            }
        }
        mean /= n;
        second /= n;
        const double var = kernel_variance(sigma, s);
        const double se = std::sqrt(var / n);
        for (int c = 0; c < 3; ++c) {
            CHECK(std::abs(mean(c)) < 3.0 * se);
            CHECK(second(c) == doctest::Approx(var).epsilon(0.02));
        }
    }
}

TEST_CASE("kernel_score values and Stein identity") {
    const Mat x0 = Mat::Zero(2, 3);

    SUBCASE("hand values") {
        CHECK(kernel_score(x0, x0, 0.5, 0.5).norm() == 0.0);
        // sigma = e, s = ln(5)/2 gives kernel variance exactly 2; a (2,0,0)
        // displacement then scores (-1,0,0).
        const double sigma = std::exp(1.0);
        const double s = 0.5 * std::log(5.0);
        CHECK(kernel_variance(sigma, s) == doctest::Approx(2.0).epsilon(1e-12));
        Mat x_s = x0;
        x_s(0, 0) = 2.0;
        const Mat score = kernel_score(x_s, x0, sigma, s);
        CHECK(score(0, 0) == doctest::Approx(-1.0).epsilon(1e-12));
        CHECK(score(0, 1) == 0.0);
        CHECK_THROWS_AS(kernel_score(x_s, x0, sigma, 0.0), SingularKernelError);
    }

    SUBCASE("E[score . (x_s - x0)] = -3N") {
        Mt19937Source rng(321);
        const double sigma = 0.3;
        const double s = 0.6;
        const int n = 100000;
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            const Perturbed p = perturb(x0, sigma, s, rng);
            acc += kernel_score(p.x_s, x0, sigma, s).cwiseProduct(p.x_s - x0).sum();
        }
        acc /= n;
        CHECK(acc == doctest::Approx(-3.0 * 2.0).epsilon(0.02));
    }
}

TEST_CASE("lambda_weight") {
    CHECK(lambda_weight(0.4, 0.0) == 0.0);
    CHECK(lambda_weight(std::exp(1.0), 1.0) ==
          doctest::Approx((std::exp(2.0) - 1.0) / 2.0).epsilon(1e-12));

    // lambda(s) E|kernel_score|^2 is constant 3N across s.
    Mt19937Source rng(99);
    const Mat x0 = Mat::Zero(1, 3);
    const double sigma = 0.25;
    for (double s : {0.2, 0.5, 0.9}) {
        const int n = 100000;
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            const Perturbed p = perturb(x0, sigma, s, rng);
            acc += kernel_score(p.x_s, x0, sigma, s).squaredNorm();
        }
        CHECK(lambda_weight(sigma, s) * acc / n == doctest::Approx(3.0).epsilon(0.03));
    }
}

TEST_CASE("Euler-Maruyama forward simulation matches the closed-form variance") {
    // dx = sigma^s dw integrated 0 -> s ties the SDE to the kernel.
    Mt19937Source rng(2024);
    const double sigma = 0.15;
    const double s_end = 0.8;
    const int paths = 100000;
    const int substeps = 1000;
    const double ds = s_end / substeps;
    double second = 0.0;
    for (int p = 0; p < paths; ++p) {
        double x = 0.0;
        for (int k = 0; k < substeps; ++k) {
            const double g = std::pow(sigma, k * ds);
            x += g * std::sqrt(ds) * rng.normal();
        }
        second += x * x;
    }
    second /= paths;
    CHECK(second == doctest::Approx(kernel_variance(sigma, s_end)).epsilon(0.03));
}

TEST_CASE("acceleration_sq") {
    std::mt19937_64 rng(7);
    Trajectory traj;
    const Mat x0 = random_matrix(2, 3, rng);
    const Mat v = random_matrix(2, 3, rng, 0.1);

    SUBCASE("constant velocity gives zero") {
        Mat x = x0;
        for (int t = 0; t < 4; ++t) {
            traj.frames.push_back(make_conformation(x, v, IVec::Constant(2, 1)));
            x += v;
        }
        CHECK(acceleration_sq(traj, 2) == doctest::Approx(0.0));
        CHECK_THROWS_AS(acceleration_sq(traj, 1), std::invalid_argument);
    }

    SUBCASE("single atom hand value") {
        Mat vel0 = Mat::Zero(1, 3), vel1 = Mat::Zero(1, 3), vel2 = Mat::Zero(1, 3);
        vel2(0, 0) = 1.0;
        Trajectory t2;
        t2.frames.push_back(make_conformation(Mat::Zero(1, 3), vel0, IVec::Constant(1, 1)));
        t2.frames.push_back(make_conformation(Mat::Zero(1, 3), vel1, IVec::Constant(1, 1)));
        t2.frames.push_back(make_conformation(Mat::Zero(1, 3), vel2, IVec::Constant(1, 1)));
        CHECK(acceleration_sq(t2, 2) == doctest::Approx(1.0));
    }

    SUBCASE("matches the positional second difference") {
        // With frame-difference velocities, a(t-1) equals
        // x(t) - 2 x(t-1) + x(t-2).
        std::vector<Mat> xs;
        for (int t = 0; t < 5; ++t)
            xs.push_back(random_matrix(3, 3, rng));
        Trajectory t3;
        t3.frames.push_back(make_conformation(xs[0], Mat::Zero(3, 3), IVec::Constant(3, 1)));
        for (int t = 1; t < 5; ++t)
            t3.frames.push_back(
                make_conformation(xs[t], xs[t] - xs[t - 1], IVec::Constant(3, 1)));
        for (Eigen::Index t = 2; t < 5; ++t) {
            const Mat second = xs[t] - 2.0 * xs[t - 1] + xs[t - 2];
            CHECK(acceleration_sq(t3, t) == doctest::Approx(second.squaredNorm()).epsilon(1e-12));
        }
    }
}

TEST_CASE("disturbed conformation rebuilds velocities and features") {
    std::mt19937_64 rng(43);
    const Conformation prev = random_conformation(3, rng);
    const Mat x_tilde = prev.positions + random_matrix(3, 3, rng, 0.1);
    const Conformation tilde = disturbed_conformation(x_tilde, prev);
    CHECK((tilde.velocities - (x_tilde - prev.positions)).norm() == 0.0);
    for (Eigen::Index i = 0; i < 3; ++i)
        CHECK(tilde.features(i, 0) == doctest::Approx(tilde.velocities.row(i).norm()));
}

TEST_CASE("schedule and config validation") {
    NoiseSchedule bad;
    bad.sigma_s = -1.0;
    CHECK_THROWS_AS(validate(bad), std::invalid_argument);
    DiffusionConfig cfg;
    cfg.s_min = 0.0;
    CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
    cfg.s_min = 0.1;
    cfg.s_max = 1.0;
    CHECK_NOTHROW(validate(cfg));
}
