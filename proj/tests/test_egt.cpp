#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "diffmd/egt.hpp"
#include "diffmd/sde.hpp"
#include "test_util.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace diffmd;
using namespace diffmd::testutil;

namespace {

EgtHyper mini_hyper() {
    EgtHyper h;
    h.layers = 2;
    h.heads = 2;
    h.psi_h = 8;
    h.psi_att = 8;
    h.psi_t = 4;
    h.ffn_hidden = 8;
    h.dropout = 0.0;
    h.act = Activation::relu;
    h.basis_deg = 2;
    h.basis_root = 2;
    h.basis_ord = 2;
    h.cutoff = 1.6;
    return h;
}

// Forces an MLP to a constant scalar output.
void force_constant(Mlp& mlp, double value) {
    mlp.w1.setZero();
    mlp.b1.setZero();
    mlp.w2.setZero();
    mlp.b2.setConstant(value);
}

struct FlatParams {
    std::vector<double*> data;
    std::vector<Eigen::Index> count;
    std::vector<std::string> names;
};

FlatParams flatten(EgtModel& model) {
    FlatParams fp;
    for_each_param(model, [&](const std::string& name, double* d, Eigen::Index r,
                              Eigen::Index c) {
        fp.data.push_back(d);
        fp.count.push_back(r * c);
        fp.names.push_back(name);
    });
    return fp;
}

} // namespace

TEST_CASE("mlp forward/backward against finite differences") {
    std::mt19937_64 rng(3);
    for (Activation act : {Activation::relu, Activation::tanh_act}) {
        Mlp mlp;
        mlp.w1 = random_matrix(5, 7, rng, 0.6);
        mlp.b1 = random_matrix(7, 1, rng, 0.2).col(0);
        mlp.w2 = random_matrix(7, 3, rng, 0.6);
        mlp.b2 = random_matrix(3, 1, rng, 0.2).col(0);
        mlp.act = act;
        const Mat x = random_matrix(4, 5, rng);
        const Mat target = random_matrix(4, 3, rng);

        auto loss_of = [&](const Mlp& m) {
            return (mlp_forward(m, x) - target).squaredNorm();
        };

        MlpCache cache;
        const Mat out = mlp_forward(mlp, x, &cache);
        Mlp grads = mlp;
        grads.w1.setZero();
        grads.b1.setZero();
        grads.w2.setZero();
        grads.b2.setZero();
        mlp_backward(mlp, cache, 2.0 * (out - target), grads);

        const double h = 1e-6;
        auto fd_check = [&](Mat& param, const Mat& grad) {
            for (Eigen::Index i = 0; i < param.rows(); ++i)
                for (Eigen::Index j = 0; j < param.cols(); ++j) {
                    const double keep = param(i, j);
                    param(i, j) = keep + h;
                    const double up = loss_of(mlp);
                    param(i, j) = keep - h;
                    const double dn = loss_of(mlp);
                    param(i, j) = keep;
                    CHECK(grad(i, j) == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-4));
                }
        };
        fd_check(mlp.w1, grads.w1);
        fd_check(mlp.w2, grads.w2);

        // Output-layer gradient in closed form: input^T (2 err).
        const Mat closed = cache.hidden.transpose() * (2.0 * (out - target));
        CHECK((grads.w2 - closed).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("node features") {
    std::mt19937_64 rng(5);
    const EgtModel model = make_egt_model(mini_hyper(), 11);

    SUBCASE("zero velocities zero the norm channel") {
        Conformation conf = random_conformation(4, rng);
        conf.velocities.setZero();
        refresh_features(conf);
        CHECK(conf.features.col(0).norm() == 0.0);
        CHECK_NOTHROW(build_node_features(model, conf, 0.5));
    }

    SUBCASE("rigid transforms leave features unchanged") {
        const Conformation conf = random_conformation(4, rng);
        const Conformation moved =
            transformed(conf, random_rotation(rng), Vec3(0.4, -2.0, 1.0));
        const Mat a = build_node_features(model, conf, 0.3);
        const Mat b = build_node_features(model, moved, 0.3);
        CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
    }

    SUBCASE("distinct diffusion times give distinct features") {
        const Conformation conf = random_conformation(4, rng);
        const Mat a = build_node_features(model, conf, 0.0);
        const Mat b = build_node_features(model, conf, 1.0);
        CHECK((a - b).cwiseAbs().maxCoeff() > 1e-8);
        CHECK_THROWS_AS(build_node_features(model, conf, 1.5), std::invalid_argument);
    }
}

TEST_CASE("egl single isolated atom reduces to the velocity identity") {
    EgtHyper hyper = mini_hyper();
    EgtModel model = make_egt_model(hyper, 2);
    force_constant(model.layers[0].f_v, 1.0);

    std::mt19937_64 rng(7);
    const Conformation conf = random_conformation(1, rng);
    const Mat h = build_node_features(model, conf, 0.5);
    Mat x_out, v_out, h_out;
    egl_forward(model.layers[0], model.basis, conf.atom_numbers, conf.positions,
                conf.velocities, h, 1, x_out, v_out, h_out);
    CHECK((v_out - conf.velocities).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((x_out - (conf.positions + conf.velocities)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("attention rows are softmax-normalized over unmasked pairs") {
    EgtHyper hyper = mini_hyper();
    const EgtModel model = make_egt_model(hyper, 3);
    std::mt19937_64 rng(9);
    const Conformation conf = random_conformation(5, rng, 0.6);
    EgtCache cache;
    egt_score(model, conf, 0.5, 0.2, &cache);
    const Eigen::Index n = conf.size();
    for (const EglCache& layer : cache.layers) {
        for (int hh = 0; hh < hyper.heads; ++hh) {
            for (Eigen::Index i = 0; i < n; ++i) {
                double sum = 0.0;
                bool any = false;
                for (Eigen::Index j = 0; j < n; ++j) {
                    if (!cache.pairs.mask[static_cast<std::size_t>(i * n + j)])
                        continue;
                    any = true;
                    sum += layer.attn(i * n + j, hh);
                }
                if (any)
                    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("egl and egt are equivariant under rigid transforms") {
    EgtHyper hyper = mini_hyper();
    hyper.layers = 3;
    const EgtModel model = make_egt_model(hyper, 17);
    std::mt19937_64 rng(19);
    const double sigma = 0.3;
    const double s = 0.6;

    for (int trial = 0; trial < 50; ++trial) {
        const Conformation conf = random_conformation(5, rng, 0.6);
        const Eigen::Matrix3d q = random_rotation(rng);
        const Vec3 o = random_matrix(3, 1, rng, 2.0);
        const Conformation moved = transformed(conf, q, o);

        // Single layer.
        const Mat h0 = build_node_features(model, conf, s);
        Mat x1, v1, h1;
        egl_forward(model.layers[0], model.basis, conf.atom_numbers, conf.positions,
                    conf.velocities, h0, hyper.layers, x1, v1, h1);
        Mat x2, v2, h2;
        egl_forward(model.layers[0], model.basis, moved.atom_numbers, moved.positions,
                    moved.velocities, build_node_features(model, moved, s), hyper.layers, x2,
                    v2, h2);
        Mat x1_moved = (q * x1.transpose()).transpose();
        x1_moved.rowwise() += o.transpose();
        const Mat v1_moved = (q * v1.transpose()).transpose();
        const double scale = std::max(1.0, x2.cwiseAbs().maxCoeff());
        CHECK((x2 - x1_moved).cwiseAbs().maxCoeff() / scale < 1e-8);
        CHECK((v2 - v1_moved).cwiseAbs().maxCoeff() /
                  std::max(1.0, v2.cwiseAbs().maxCoeff()) <
              1e-8);
        CHECK((h2 - h1).cwiseAbs().maxCoeff() / std::max(1.0, h2.cwiseAbs().maxCoeff()) <
              1e-8);

        // Full stack: score rotates without the translation.
        const Mat score = egt_score(model, conf, s, sigma);
        const Mat score_moved = egt_score(model, moved, s, sigma);
        const Mat expected = (q * score.transpose()).transpose();
        CHECK((score_moved - expected).cwiseAbs().maxCoeff() /
                  std::max(1.0, expected.cwiseAbs().maxCoeff()) <
              1e-8);
    }
}

TEST_CASE("attention matrices invariant under rigid transforms") {
    const EgtModel model = make_egt_model(mini_hyper(), 23);
    std::mt19937_64 rng(29);
    for (int trial = 0; trial < 20; ++trial) {
        const Conformation conf = random_conformation(4, rng, 0.6);
        const Conformation moved =
            transformed(conf, random_rotation(rng), random_matrix(3, 1, rng, 3.0));
        EgtCache ca, cb;
        egt_score(model, conf, 0.4, 0.2, &ca);
        egt_score(model, moved, 0.4, 0.2, &cb);
        for (std::size_t l = 0; l < ca.layers.size(); ++l)
            CHECK((ca.layers[l].attn - cb.layers[l].attn).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("score is translation invariant and permutation equivariant") {
    const EgtModel model = make_egt_model(mini_hyper(), 31);
    std::mt19937_64 rng(37);
    const Conformation conf = random_conformation(5, rng, 0.6);

    SUBCASE("translation") {
        Conformation moved = conf;
        moved.positions.rowwise() += Eigen::RowVector3d(3.0, -1.0, 0.5);
        refresh_features(moved);
        const Mat a = egt_score(model, conf, 0.5, 0.2);
        const Mat b = egt_score(model, moved, 0.5, 0.2);
        CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
    }

    SUBCASE("permutation") {
        std::vector<Eigen::Index> perm = {3, 0, 4, 1, 2};
        Conformation shuffled;
        shuffled.positions = Mat(5, 3);
        shuffled.velocities = Mat(5, 3);
        shuffled.atom_numbers = IVec(5);
        for (Eigen::Index i = 0; i < 5; ++i) {
            shuffled.positions.row(i) = conf.positions.row(perm[static_cast<std::size_t>(i)]);
            shuffled.velocities.row(i) = conf.velocities.row(perm[static_cast<std::size_t>(i)]);
            shuffled.atom_numbers(i) = conf.atom_numbers(perm[static_cast<std::size_t>(i)]);
        }
        refresh_features(shuffled);
        const Mat a = egt_score(model, conf, 0.5, 0.2);
        const Mat b = egt_score(model, shuffled, 0.5, 0.2);
        for (Eigen::Index i = 0; i < 5; ++i)
            CHECK((b.row(i) - a.row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() <
                  1e-12);
    }

    SUBCASE("s = 0 is singular") {
        CHECK_THROWS_AS(egt_score(model, conf, 0.0, 0.2), SingularKernelError);
    }
}

TEST_CASE("masked attention with zero f_v gives zero score") {
    EgtHyper hyper = mini_hyper();
    EgtModel model = make_egt_model(hyper, 41);
    for (auto& layer : model.layers)
        force_constant(layer.f_v, 0.0);
    // Atoms farther apart than the cutoff: every pair masked.
    Mat pos(3, 3);
    pos << 0, 0, 0, 5, 0, 0, 0, 5, 0;
    std::mt19937_64 rng(43);
    const Conformation conf =
        make_conformation(pos, random_matrix(3, 3, rng), IVec::Constant(3, 6));
    const Mat score = egt_score(model, conf, 0.5, 0.2);
    CHECK(score.norm() == 0.0);
}

TEST_CASE("position update telescopes the per-layer velocities") {
    EgtHyper hyper = mini_hyper();
    hyper.layers = 4;
    const EgtModel model = make_egt_model(hyper, 47);
    std::mt19937_64 rng(53);
    const Conformation conf = random_conformation(4, rng, 0.6);
    EgtCache cache;
    egt_score(model, conf, 0.7, 0.2, &cache);
    Mat acc = Mat::Zero(4, 3);
    for (const EglCache& layer : cache.layers)
        acc += layer.v_out;
    const Mat diff = cache.x_final - conf.positions;
    CHECK((diff - acc / hyper.layers).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("parameter gradients match central finite differences") {
    // Miniature model: N = 4, psi_h = 8, L = 2. The loss is one DSM term with
    // frozen randomness, so central differences see a smooth function.
    EgtModel model = make_egt_model(mini_hyper(), 101);
    std::mt19937_64 rng(59);
    const Conformation prev = random_conformation(4, rng, 0.55);
    const Mat x_next = prev.positions + random_matrix(4, 3, rng, 0.05);
    const Mat z = random_matrix(4, 3, rng);
    const double sigma = 0.25;
    const double s = 0.62;

    EgtModel grads = zeros_like(model);
    dsm_loss_term(model, prev, x_next, sigma, s, z, &grads);

    FlatParams pm = flatten(model);
    FlatParams pg = flatten(grads);
    const double h = 1e-5;
    double worst = 0.0;
    std::string worst_name;
    Eigen::Index checked = 0;
    for (std::size_t a = 0; a < pm.data.size(); ++a) {
        for (Eigen::Index k = 0; k < pm.count[a]; ++k) {
            const double keep = pm.data[a][k];
            pm.data[a][k] = keep + h;
            const double up = dsm_loss_term(model, prev, x_next, sigma, s, z);
            pm.data[a][k] = keep - h;
            const double dn = dsm_loss_term(model, prev, x_next, sigma, s, z);
            pm.data[a][k] = keep;
            const double fd = (up - dn) / (2.0 * h);
            const double ad = pg.data[a][k];
            const double denom = std::max({std::abs(fd), std::abs(ad), 1e-5});
            const double rel = std::abs(fd - ad) / denom;
            if (rel > worst) {
                worst = rel;
                worst_name = pm.names[a];
            }
            ++checked;
        }
    }
    INFO("worst relative error ", worst, " at ", worst_name, " over ", checked, " params");
    CHECK(worst < 1e-4);
    CHECK(checked == param_count(model));
}

TEST_CASE("egt_param_gradients generic contract") {
    EgtModel model = make_egt_model(mini_hyper(), 61);
    std::mt19937_64 rng(67);
    const Conformation conf = random_conformation(4, rng, 0.55);

    SUBCASE("constant loss gives zero gradients") {
        EgtModel grads = zeros_like(model);
        const double value = egt_param_gradients(
            model, conf, 0.5, 0.2, [](const Mat&, Mat&) { return 3.5; }, grads);
        CHECK(value == 3.5);
        double total = 0.0;
        for_each_param(grads, [&](const std::string&, double* d, Eigen::Index r,
                                  Eigen::Index c) {
            for (Eigen::Index k = 0; k < r * c; ++k)
                total += std::abs(d[k]);
        });
        CHECK(total == 0.0);
    }

    SUBCASE("non-finite loss raises") {
        EgtModel grads = zeros_like(model);
        CHECK_THROWS_AS(egt_param_gradients(
                            model, conf, 0.5, 0.2,
                            [](const Mat&, Mat&) { return std::nan(""); }, grads),
                        NumericError);
    }
}

TEST_CASE("dropout applies only when a generator is supplied") {
    EgtHyper hyper = mini_hyper();
    hyper.dropout = 0.5;
    const EgtModel model = make_egt_model(hyper, 71);
    std::mt19937_64 rng(73);
    const Conformation conf = random_conformation(4, rng, 0.55);

    const Mat eval1 = egt_score(model, conf, 0.5, 0.2);
    const Mat eval2 = egt_score(model, conf, 0.5, 0.2);
    CHECK((eval1 - eval2).norm() == 0.0);

    Mt19937Source drop(5);
    const Mat t1 = egt_score(model, conf, 0.5, 0.2, nullptr, &drop);
    const Mat t2 = egt_score(model, conf, 0.5, 0.2, nullptr, &drop);
    CHECK((t1 - t2).norm() > 1e-10);
}

TEST_CASE("checkpoint round trip is bit exact") {
    namespace fs = std::filesystem;
    const EgtModel model = make_egt_model(mini_hyper(), 79);
    const fs::path path = fs::temp_directory_path() / "diffmd_egt_test.ckpt";

    save_checkpoint(model, path.string(), 42);
    std::uint64_t seed = 0;
    EgtModel back = load_checkpoint(path.string(), &seed);
    CHECK(seed == 42);

    std::mt19937_64 rng(83);
    const Conformation conf = random_conformation(4, rng, 0.55);
    const Mat a = egt_score(model, conf, 0.5, 0.2);
    const Mat b = egt_score(back, conf, 0.5, 0.2);
    CHECK((a - b).norm() == 0.0);

    SUBCASE("truncated file fails loudly") {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
        in.close();
        std::ofstream out(path, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
        out.close();
        CHECK_THROWS(load_checkpoint(path.string()));
    }

    SUBCASE("bad magic fails loudly") {
        std::ofstream out(path, std::ios::binary);
        out << "NOTACKPTxxxxxxxxxxxxxxxxxxxx";
        out.close();
        CHECK_THROWS_WITH_AS(load_checkpoint(path.string()),
                             doctest::Contains("bad magic"), std::runtime_error);
    }
    fs::remove(path);
}
