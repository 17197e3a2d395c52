#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "diffmd/sampler.hpp"
#include "diffmd/sde.hpp"
#include "test_util.hpp"

#include <cmath>

using namespace diffmd;
using namespace diffmd::testutil;

namespace {

class ZeroSource final : public RandomSource {
  public:
    double normal() override { return 0.0; }
};

class RecordingSource final : public RandomSource {
  public:
    explicit RecordingSource(std::uint64_t seed) : inner_(seed) {}
    double normal() override {
        const double z = inner_.normal();
        draws.push_back(z);
        return z;
    }
    std::vector<double> draws;

  private:
    Mt19937Source inner_;
};

// Replays recorded draws with each consecutive triple (one atom row)
// rotated by Q.
class RotatedReplaySource final : public RandomSource {
  public:
    RotatedReplaySource(std::vector<double> draws, const Eigen::Matrix3d& q)
        : draws_(std::move(draws)), q_(q) {}
    double normal() override {
        if (buffered_ == 0) {
            Vec3 z(draws_.at(at_), draws_.at(at_ + 1), draws_.at(at_ + 2));
            at_ += 3;
            row_ = q_ * z;
            buffered_ = 3;
        }
        return row_(3 - buffered_--);
    }

  private:
    std::vector<double> draws_;
    Eigen::Matrix3d q_;
    std::size_t at_ = 0;
    Vec3 row_ = Vec3::Zero();
    int buffered_ = 0;
};

// Analytic score of the marginal when the data is N(0, I): the kernel widens
// it to N(0, (1 + var(s)) I).
ScoreFn gaussian_oracle(double sigma) {
    return [sigma](const Mat& x, double s) -> Mat {
        return -x / (1.0 + kernel_variance(sigma, s));
    };
}

struct Moments {
    double mean;
    double stddev;
};

Moments moments_of(const Mat& x) {
    const double mean = x.mean();
    const double var = (x.array() - mean).square().sum() / (x.size() - 1);
    return {mean, std::sqrt(var)};
}

} // namespace

TEST_CASE("em_predictor_step hand cases") {
    std::mt19937_64 rng(3);
    const Mat x = random_matrix(4, 3, rng);
    ZeroSource zero;

    ScoreFn null_score = [](const Mat& m, double) { return Mat::Zero(m.rows(), m.cols()); };
    CHECK((em_predictor_step(x, null_score, 0.5, 1.0, 0.5, zero) - x).norm() == 0.0);

    // g = 1, score = c, ds = 0.5, no noise.
    const Mat c = random_matrix(4, 3, rng);
    ScoreFn const_score = [&](const Mat&, double) { return c; };
    const Mat stepped = em_predictor_step(x, const_score, 1.0, 1.0, 0.5, zero);
    CHECK((stepped - (x + 0.5 * c)).cwiseAbs().maxCoeff() < 1e-14);

    CHECK_THROWS_AS(em_predictor_step(x, null_score, 1.0, 0.5, 0.5, zero),
                    std::invalid_argument);
}

TEST_CASE("em predictor chain recovers the Gaussian target") {
    const double sigma = 10.0;
    const double s_min = 0.01;
    Mt19937Source rng(123);
    const int particles = 10000;

    Mat x(particles, 3);
    const double prior_std = std::sqrt(1.0 + kernel_variance(sigma, 1.0));
    for (Eigen::Index i = 0; i < particles; ++i)
        for (int c = 0; c < 3; ++c)
            x(i, c) = prior_std * rng.normal();

    SamplerConfig cfg;
    cfg.n_predictor = 500;
    cfg.n_corrector = 0;
    cfg.s_min = s_min;
    cfg.mode = SamplerMode::predictor_corrector;
    const Mat out = pc_sample(x, gaussian_oracle(sigma), sigma, cfg, rng);

    const Moments m = moments_of(out);
    CHECK(std::abs(m.mean) < 0.05);
    CHECK(m.stddev == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("langevin corrector") {
    std::mt19937_64 seed_rng(5);
    const Mat x = random_matrix(3, 3, seed_rng);

    SUBCASE("zero score leaves the state unchanged") {
        Mt19937Source rng(9);
        ScoreFn null_score = [](const Mat& m, double) { return Mat::Zero(m.rows(), m.cols()); };
        CHECK((langevin_corrector_step(x, null_score, 0.5, 0.16, rng) - x).norm() == 0.0);
    }

    SUBCASE("snr -> 0 freezes the chain") {
        Mt19937Source rng(11);
        const Mat moved = langevin_corrector_step(x, gaussian_oracle(1.0), 0.5, 1e-9, rng);
        CHECK((moved - x).cwiseAbs().maxCoeff() < 1e-8);
    }

    SUBCASE("unit Gaussian is stationary") {
        // Exact score of N(0, I); repeated steps must hold the moments.
        Mt19937Source rng(13);
        const int particles = 3400;
        Mat xs(particles, 3);
        for (Eigen::Index i = 0; i < particles; ++i)
            for (int c = 0; c < 3; ++c)
                xs(i, c) = rng.normal();
        ScoreFn unit_score = [](const Mat& m, double) -> Mat { return -m; };
        for (int step = 0; step < 50; ++step)
            xs = langevin_corrector_step(xs, unit_score, 0.5, 0.16, rng);
        const Moments m = moments_of(xs);
        CHECK(std::abs(m.mean) < 0.05);
        CHECK(m.stddev == doctest::Approx(1.0).epsilon(0.05));
    }
}

TEST_CASE("pc_sample structure") {
    std::mt19937_64 seed_rng(17);
    const Mat x = random_matrix(2, 3, seed_rng);
    SamplerConfig cfg;
    cfg.n_predictor = 8;
    cfg.s_min = 0.1;
    cfg.mode = SamplerMode::predictor_corrector;

    SUBCASE("zero score and zero noise return the prior") {
        ZeroSource zero;
        cfg.n_corrector = 3;
        ScoreFn null_score = [](const Mat& m, double) { return Mat::Zero(m.rows(), m.cols()); };
        CHECK((pc_sample(x, null_score, 0.7, cfg, zero) - x).norm() == 0.0);
    }

    SUBCASE("predictor grid descends strictly from 1 to s_min") {
        ZeroSource zero;
        cfg.n_corrector = 0;
        std::vector<double> seen;
        ScoreFn spy = [&](const Mat& m, double s) {
            seen.push_back(s);
            return Mat::Zero(m.rows(), m.cols());
        };
        pc_sample(x, spy, 0.7, cfg, zero);
        REQUIRE(static_cast<int>(seen.size()) == cfg.n_predictor);
        CHECK(seen.front() == doctest::Approx(1.0));
        for (std::size_t i = 1; i < seen.size(); ++i)
            CHECK(seen[i] < seen[i - 1]);
    }

    SUBCASE("corrector inner loop runs N_C - 1 times, flag adds one") {
        ZeroSource zero;
        cfg.n_corrector = 3;
        int calls = 0;
        ScoreFn spy = [&](const Mat& m, double) {
            ++calls;
            return Mat::Zero(m.rows(), m.cols());
        };
        pc_sample(x, spy, 0.7, cfg, zero);
        CHECK(calls == cfg.n_predictor * (1 + cfg.n_corrector - 1));
        calls = 0;
        cfg.corrector_off_by_one = true;
        pc_sample(x, spy, 0.7, cfg, zero);
        CHECK(calls == cfg.n_predictor * (1 + cfg.n_corrector));
        // N_C <= 1 is a pure predictor chain either way.
        calls = 0;
        cfg.corrector_off_by_one = false;
        cfg.n_corrector = 1;
        pc_sample(x, spy, 0.7, cfg, zero);
        CHECK(calls == cfg.n_predictor);
    }
}

TEST_CASE("ode_sample against the closed-form linear flow") {
    const double sigma = 10.0;
    SamplerConfig cfg;
    cfg.s_min = 0.01;
    cfg.mode = SamplerMode::ode;

    std::mt19937_64 seed_rng(19);
    const Mat x1 = random_matrix(50, 3, seed_rng, 1.5);

    SUBCASE("zero field is the identity") {
        ScoreFn null_score = [](const Mat& m, double) { return Mat::Zero(m.rows(), m.cols()); };
        CHECK((ode_sample(x1, null_score, sigma, cfg) - x1).norm() == 0.0);
    }

    SUBCASE("endpoint matches the analytic contraction") {
        const Mat out = ode_sample(x1, gaussian_oracle(sigma), sigma, cfg);
        const double factor = std::sqrt((1.0 + kernel_variance(sigma, cfg.s_min)) /
                                        (1.0 + kernel_variance(sigma, 1.0)));
        CHECK((out - factor * x1).cwiseAbs().maxCoeff() < 1e-4);
    }

    SUBCASE("bit-for-bit deterministic") {
        const Mat a = ode_sample(x1, gaussian_oracle(sigma), sigma, cfg);
        const Mat b = ode_sample(x1, gaussian_oracle(sigma), sigma, cfg);
        CHECK((a - b).norm() == 0.0);
    }

    SUBCASE("non-finite field aborts with the failing time") {
        ScoreFn bad = [](const Mat& m, double) {
            return Mat::Constant(m.rows(), m.cols(), std::nan(""));
        };
        CHECK_THROWS_AS(ode_sample(x1, bad, sigma, cfg), IntegrationError);
    }
}

TEST_CASE("pc and ode pushforward moments agree on the Gaussian oracle") {
    const double sigma = 10.0;
    Mt19937Source rng(21);
    const int particles = 10000;
    const double prior_std = std::sqrt(1.0 + kernel_variance(sigma, 1.0));
    Mat prior(particles, 3);
    for (Eigen::Index i = 0; i < particles; ++i)
        for (int c = 0; c < 3; ++c)
            prior(i, c) = prior_std * rng.normal();

    SamplerConfig cfg;
    cfg.s_min = 0.01;
    cfg.n_predictor = 500;
    cfg.n_corrector = 2;
    cfg.mode = SamplerMode::predictor_corrector;
    const Mat pc = pc_sample(prior, gaussian_oracle(sigma), sigma, cfg, rng);
    cfg.mode = SamplerMode::ode;
    const Mat ode = ode_sample(prior, gaussian_oracle(sigma), sigma, cfg);

    const Moments mp = moments_of(pc);
    const Moments mo = moments_of(ode);
    const double n = static_cast<double>(pc.size());
    const double se_mean = std::sqrt(mp.stddev * mp.stddev / n + mo.stddev * mo.stddev / n);
    const double se_std =
        std::sqrt(mp.stddev * mp.stddev / (2 * n) + mo.stddev * mo.stddev / (2 * n));
    CHECK(std::abs(mp.mean - mo.mean) < 3.0 * se_mean + 1e-12);
    // The single corrector sweep biases the PC variance by O(delta^2); allow it
    // on top of the estimator band.
    CHECK(std::abs(mp.stddev - mo.stddev) < 3.0 * se_std + 0.02 * mo.stddev);
}

namespace {

// Random but fully-formed model used by rollout tests.
EgtModel rollout_model(std::uint64_t seed) {
    EgtHyper h;
    h.layers = 2;
    h.heads = 2;
    h.psi_h = 8;
    h.psi_att = 8;
    h.psi_t = 4;
    h.ffn_hidden = 8;
    h.dropout = 0.0;
    h.cutoff = 1.6;
    return make_egt_model(h, seed);
}

} // namespace

TEST_CASE("rollout basics") {
    const EgtModel model = rollout_model(31);
    std::mt19937_64 seed_rng(37);
    const Conformation start = random_conformation(3, seed_rng, 0.5, 0.05);

    NoiseSchedule schedule;
    schedule.sigma_s = 0.1;
    SamplerConfig cfg;
    cfg.mode = SamplerMode::ode;
    cfg.s_min = 0.1;

    SUBCASE("n_frames = 1 appends exactly one frame") {
        Mt19937Source rng(1);
        const Trajectory traj = rollout(model, start, 1, schedule, cfg, rng);
        CHECK(traj.n_frames() == 2);
        CHECK((traj.frames[0].positions - start.positions).norm() == 0.0);
        CHECK((traj.frames[1].velocities -
               (traj.frames[1].positions - traj.frames[0].positions))
                  .norm() == 0.0);
    }

    SUBCASE("frozen score is a fixed point") {
        EgtModel frozen = rollout_model(41);
        for (auto& layer : frozen.layers) {
            layer.f_v.w1.setZero();
            layer.f_v.b1.setZero();
            layer.f_v.w2.setZero();
            layer.f_v.b2.setZero();
        }
        // Atoms beyond the cutoff: attention fully masked, so the score net
        // cannot move anything.
        Mat pos(2, 3);
        pos << 0, 0, 0, 4, 0, 0;
        const Conformation far =
            make_conformation(pos, Mat::Zero(2, 3), IVec::Constant(2, 18));
        Mt19937Source rng(2);
        const Trajectory traj = rollout(frozen, far, 4, schedule, cfg, rng);
        for (const auto& frame : traj.frames)
            CHECK((frame.positions - far.positions).norm() == 0.0);
    }

    SUBCASE("rejects bad frame counts") {
        Mt19937Source rng(3);
        CHECK_THROWS_AS(rollout(model, start, 0, schedule, cfg, rng), std::invalid_argument);
    }
}

TEST_CASE("rollout is equivariant when the noise rotates with the frame") {
    const EgtModel model = rollout_model(43);
    std::mt19937_64 seed_rng(47);
    const Conformation start = random_conformation(3, seed_rng, 0.5, 0.05);
    const Eigen::Matrix3d q = random_rotation(seed_rng);
    const Vec3 o(0.7, -0.3, 1.1);
    const Conformation start_moved = transformed(start, q, o);

    NoiseSchedule schedule;
    schedule.sigma_s = 0.1;
    SamplerConfig cfg;
    cfg.mode = SamplerMode::predictor_corrector;
    cfg.n_predictor = 20;
    cfg.n_corrector = 2;
    cfg.s_min = 0.1;

    RecordingSource record(7);
    const Trajectory base = rollout(model, start, 3, schedule, cfg, record);
    RotatedReplaySource replay(record.draws, q);
    const Trajectory moved = rollout(model, start_moved, 3, schedule, cfg, replay);

    for (Eigen::Index t = 0; t < base.n_frames(); ++t) {
        Mat expected =
            (q * base.frames[static_cast<std::size_t>(t)].positions.transpose()).transpose();
        expected.rowwise() += o.transpose();
        const Mat& got = moved.frames[static_cast<std::size_t>(t)].positions;
        CHECK((got - expected).cwiseAbs().maxCoeff() /
                  std::max(1.0, expected.cwiseAbs().maxCoeff()) <
              1e-8);
    }
}

TEST_CASE("sampler config validation") {
    SamplerConfig cfg;
    cfg.n_predictor = 0;
    CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
    cfg = SamplerConfig{};
    cfg.s_min = 1.0;
    CHECK_THROWS_AS(validate(cfg), std::invalid_argument);
    cfg = SamplerConfig{};
    CHECK_NOTHROW(validate(cfg));
}
