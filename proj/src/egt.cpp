#include "diffmd/egt.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace diffmd {

namespace {

Mat activate(const Mat& pre, Activation act) {
    if (act == Activation::relu)
        return pre.cwiseMax(0.0);
    return pre.array().tanh().matrix();
}

Mat activate_grad(const Mat& pre, Activation act) {
    if (act == Activation::relu)
        return (pre.array() > 0.0).cast<double>().matrix();
    return (1.0 - pre.array().tanh().square()).matrix();
}

} // namespace

Mat mlp_forward(const Mlp& mlp, const Mat& x, MlpCache* cache, RandomSource* dropout_rng,
                double dropout) {
    Mat pre = (x * mlp.w1).rowwise() + mlp.b1.transpose();
    Mat hidden = activate(pre, mlp.act);
    Mat drop;
    if (dropout_rng != nullptr && dropout > 0.0) {
        drop = Mat(hidden.rows(), hidden.cols());
        std::uniform_real_distribution<double> u(0.0, 1.0);
        auto& engine = static_cast<Mt19937Source*>(dropout_rng)->engine();
        const double keep = 1.0 - dropout;
        for (Eigen::Index i = 0; i < drop.rows(); ++i)
            for (Eigen::Index j = 0; j < drop.cols(); ++j)
                drop(i, j) = u(engine) < keep ? 1.0 / keep : 0.0;
        hidden = hidden.cwiseProduct(drop);
    }
    Mat out = (hidden * mlp.w2).rowwise() + mlp.b2.transpose();
    if (cache != nullptr) {
        cache->input = x;
        cache->pre = std::move(pre);
        cache->hidden = std::move(hidden);
        cache->drop = std::move(drop);
    }
    return out;
}

Mat mlp_backward(const Mlp& mlp, const MlpCache& cache, const Mat& gout, Mlp& grads) {
    grads.w2 += cache.hidden.transpose() * gout;
    grads.b2 += gout.colwise().sum().transpose();
    Mat ghidden = gout * mlp.w2.transpose();
    if (cache.drop.size() > 0)
        ghidden = ghidden.cwiseProduct(cache.drop);
    Mat gpre = ghidden.cwiseProduct(activate_grad(cache.pre, mlp.act));
    grads.w1 += cache.input.transpose() * gpre;
    grads.b1 += gpre.colwise().sum().transpose();
    return gpre * mlp.w1.transpose();
}

namespace {

Mat init_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& engine) {
    std::normal_distribution<double> dist(0.0, 1.0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(rows));
    Mat m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i)
            m(i, j) = scale * dist(engine);
    return m;
}

Mlp init_mlp(Eigen::Index in, Eigen::Index hidden, Eigen::Index out, Activation act,
             std::mt19937_64& engine) {
    Mlp mlp;
    mlp.w1 = init_matrix(in, hidden, engine);
    mlp.b1 = Vec::Zero(hidden);
    mlp.w2 = init_matrix(hidden, out, engine);
    mlp.b2 = Vec::Zero(out);
    mlp.act = act;
    return mlp;
}

void validate_hyper(const EgtHyper& h) {
    if (h.layers < 1 || h.heads < 1 || h.psi_h < 1 || h.psi_att < 1 || h.ffn_hidden < 1)
        throw std::invalid_argument("EgtHyper: dimensions must be >= 1");
    if (h.psi_att % h.heads != 0)
        throw std::invalid_argument("EgtHyper: psi_att must be divisible by heads");
    if (h.psi_t < 2 || h.psi_t % 2 != 0)
        throw std::invalid_argument("EgtHyper: psi_t must be even and >= 2");
    if (h.dropout < 0.0 || h.dropout >= 1.0)
        throw std::invalid_argument("EgtHyper: dropout must be in [0, 1)");
}

} // namespace

EgtModel make_egt_model(const EgtHyper& hyper, std::uint64_t seed) {
    validate_hyper(hyper);
    EgtModel model;
    model.hyper = hyper;
    model.basis = BasisSpec(hyper.basis_deg, hyper.basis_root, hyper.basis_ord, hyper.cutoff);
    std::mt19937_64 engine(seed);
    model.w_in = init_matrix(2, hyper.psi_h, engine);
    model.b_in = Vec::Zero(hyper.psi_h);
    model.w_time = init_matrix(hyper.psi_t, hyper.psi_h, engine);
    const Eigen::Index sbf = model.basis.size();
    for (int l = 0; l < hyper.layers; ++l) {
        EglParams p;
        p.w_q = init_matrix(hyper.psi_h, hyper.psi_att, engine);
        p.w_k = init_matrix(hyper.psi_h, hyper.psi_att, engine);
        p.w_m = init_matrix(hyper.psi_h, hyper.psi_att, engine);
        p.w_sbf1 = init_matrix(hyper.psi_att + sbf, hyper.psi_att, engine);
        p.w_sbf2 = init_matrix(hyper.psi_att + sbf, hyper.psi_att, engine);
        p.f_v = init_mlp(hyper.psi_h, hyper.ffn_hidden, 1, hyper.act, engine);
        p.f_h = init_mlp(hyper.psi_att, hyper.ffn_hidden, hyper.psi_h, hyper.act, engine);
        p.heads = hyper.heads;
        model.layers.push_back(std::move(p));
    }
    return model;
}

EgtModel zeros_like(const EgtModel& model) {
    EgtModel z = model;
    for_each_param(z, [](const std::string&, double* data, Eigen::Index rows, Eigen::Index cols) {
        std::fill(data, data + rows * cols, 0.0);
    });
    return z;
}

void for_each_param(EgtModel& model, const ParamVisitor& visit) {
    auto mat = [&](const std::string& name, Mat& m) { visit(name, m.data(), m.rows(), m.cols()); };
    auto vec = [&](const std::string& name, Vec& v) { visit(name, v.data(), v.size(), 1); };
    mat("w_in", model.w_in);
    vec("b_in", model.b_in);
    mat("w_time", model.w_time);
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const std::string pre = "layers[" + std::to_string(l) + "].";
        EglParams& p = model.layers[l];
        mat(pre + "w_q", p.w_q);
        mat(pre + "w_k", p.w_k);
        mat(pre + "w_m", p.w_m);
        mat(pre + "w_sbf1", p.w_sbf1);
        mat(pre + "w_sbf2", p.w_sbf2);
        mat(pre + "f_v.w1", p.f_v.w1);
        vec(pre + "f_v.b1", p.f_v.b1);
        mat(pre + "f_v.w2", p.f_v.w2);
        vec(pre + "f_v.b2", p.f_v.b2);
        mat(pre + "f_h.w1", p.f_h.w1);
        vec(pre + "f_h.b1", p.f_h.b1);
        mat(pre + "f_h.w2", p.f_h.w2);
        vec(pre + "f_h.b2", p.f_h.b2);
    }
}

Eigen::Index param_count(const EgtModel& model) {
    Eigen::Index total = 0;
    for_each_param(const_cast<EgtModel&>(model),
                   [&](const std::string&, double*, Eigen::Index r, Eigen::Index c) {
                       total += r * c;
                   });
    return total;
}

PairTable build_pair_table(const Conformation& conf, const BasisSpec& basis) {
    const Eigen::Index n = conf.size();
    PairTable table;
    table.n = n;
    table.sbf1 = Mat::Zero(n * n, basis.size());
    table.sbf2 = Mat::Zero(n * n, basis.size());
    table.mask.assign(static_cast<std::size_t>(n * n), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i == j)
                continue;
            const PairGeometry pg = pair_geometry(conf, i, j);
            if (pg.distance >= basis.cutoff)
                continue;
            const Eigen::Index p = i * n + j;
            table.mask[static_cast<std::size_t>(p)] = 1;
            table.sbf1.row(p) = sbf_features(pg, basis, 1);
            table.sbf2.row(p) = sbf_features(pg, basis, 2);
        }
    }
    return table;
}

namespace {

using RowMajorMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstRowMajorMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

} // namespace

void egl_forward(const EglParams& params, const PairTable& pairs, const Mat& x, const Mat& v,
                 const Mat& h, int layer_count, Mat& x_out, Mat& v_out, Mat& h_out,
                 EglCache* cache, RandomSource* dropout_rng, double dropout) {
    const Eigen::Index n = x.rows();
    const Eigen::Index psi_att = params.w_q.cols();
    const int heads = params.heads;
    if (psi_att % heads != 0)
        throw std::invalid_argument("egl_forward: psi_att not divisible by heads");
    const Eigen::Index dh = psi_att / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    if (pairs.n != n)
        throw std::invalid_argument("egl_forward: pair table size mismatch");
    if (layer_count < 1)
        throw std::invalid_argument("egl_forward: layer_count must be >= 1");

    const Mat qh = h * params.w_q;
    const Mat kh = h * params.w_k;
    const Mat mm = h * params.w_m;

    const Mat qh1 = qh * params.w_sbf1.topRows(psi_att);
    const Mat kh2 = kh * params.w_sbf2.topRows(psi_att);
    const Mat sbf1t = pairs.sbf1 * params.w_sbf1.bottomRows(params.w_sbf1.rows() - psi_att);
    const Mat sbf2t = pairs.sbf2 * params.w_sbf2.bottomRows(params.w_sbf2.rows() - psi_att);

    Mat qpair = Mat::Zero(n * n, psi_att);
    Mat kpair = Mat::Zero(n * n, psi_att);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            const Eigen::Index p = i * n + j;
            if (!pairs.mask[static_cast<std::size_t>(p)])
                continue;
            qpair.row(p) = qh1.row(i) + sbf1t.row(p);
            kpair.row(p) = kh2.row(j) + sbf2t.row(p);
        }
    }

    // Row softmax over unmasked j, per query atom and head.
    Mat attn = Mat::Zero(n * n, heads);
    for (int hh = 0; hh < heads; ++hh) {
        for (Eigen::Index i = 0; i < n; ++i) {
            double maxlogit = -std::numeric_limits<double>::infinity();
            for (Eigen::Index j = 0; j < n; ++j) {
                const Eigen::Index p = i * n + j;
                if (!pairs.mask[static_cast<std::size_t>(p)])
                    continue;
                const double a =
                    scale * qpair.row(p).segment(hh * dh, dh).dot(kpair.row(p).segment(hh * dh, dh));
                attn(p, hh) = a;
                maxlogit = std::max(maxlogit, a);
            }
            if (!std::isfinite(maxlogit))
                continue; // isolated atom: aggregate stays zero
            double denom = 0.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                const Eigen::Index p = i * n + j;
                if (!pairs.mask[static_cast<std::size_t>(p)])
                    continue;
                attn(p, hh) = std::exp(attn(p, hh) - maxlogit);
                denom += attn(p, hh);
            }
            for (Eigen::Index j = 0; j < n; ++j) {
                const Eigen::Index p = i * n + j;
                if (pairs.mask[static_cast<std::size_t>(p)])
                    attn(p, hh) /= denom;
            }
        }
    }

    Mat attn_drop = attn;
    Mat drop;
    if (dropout_rng != nullptr && dropout > 0.0) {
        drop = Mat::Zero(n * n, heads);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        auto& engine = static_cast<Mt19937Source*>(dropout_rng)->engine();
        const double keep = 1.0 - dropout;
        for (Eigen::Index p = 0; p < n * n; ++p)
            for (int hh = 0; hh < heads; ++hh)
                drop(p, hh) = u(engine) < keep ? 1.0 / keep : 0.0;
        attn_drop = attn.cwiseProduct(drop);
    }

    Mat phimean = Mat::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            phimean(i, j) = attn_drop.row(i * n + j).mean();

    MlpCache fv_cache;
    const Mat fv_out = mlp_forward(params.f_v, h, &fv_cache); // N x 1
    const Vec fv = fv_out.col(0);

    const Vec row_w = phimean.rowwise().sum();
    v_out = fv.asDiagonal() * v + row_w.asDiagonal() * x - phimean * x;
    x_out = x + v_out / static_cast<double>(layer_count);

    Mat agg(n, psi_att);
    for (int hh = 0; hh < heads; ++hh) {
        ConstRowMajorMap a(attn_drop.col(hh).data(), n, n);
        agg.middleCols(hh * dh, dh) = a * mm.middleCols(hh * dh, dh);
    }

    MlpCache fh_cache;
    h_out = mlp_forward(params.f_h, agg, &fh_cache, dropout_rng, dropout);

    if (cache != nullptr) {
        cache->x = x;
        cache->v = v;
        cache->h = h;
        cache->qh = qh;
        cache->kh = kh;
        cache->mm = mm;
        cache->qpair = std::move(qpair);
        cache->kpair = std::move(kpair);
        cache->attn = std::move(attn);
        cache->attn_drop = std::move(attn_drop);
        cache->drop = std::move(drop);
        cache->phimean = std::move(phimean);
        cache->agg = std::move(agg);
        cache->fv = fv;
        cache->fv_cache = std::move(fv_cache);
        cache->fh_cache = std::move(fh_cache);
        cache->v_out = v_out;
        cache->x_out = x_out;
        cache->h_out = h_out;
    }
}

void egl_forward(const EglParams& params, const BasisSpec& basis, const IVec& atom_numbers,
                 const Mat& x, const Mat& v, const Mat& h, int layer_count, Mat& x_out,
                 Mat& v_out, Mat& h_out) {
    Conformation conf = make_conformation(x, v, atom_numbers);
    const PairTable pairs = build_pair_table(conf, basis);
    egl_forward(params, pairs, x, v, h, layer_count, x_out, v_out, h_out);
}

void egl_backward(const EglParams& params, const PairTable& pairs, const EglCache& cache,
                  int layer_count, const Mat& gx_out, const Mat& gv_out, const Mat& gh_out,
                  Mat& gx, Mat& gv, Mat& gh, EglParams& grads) {
    const Eigen::Index n = cache.x.rows();
    const Eigen::Index psi_att = params.w_q.cols();
    const int heads = params.heads;
    const Eigen::Index dh = psi_att / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    gx = gx_out;
    const Mat gvt = gv_out + gx_out / static_cast<double>(layer_count);

    // Feature path: h_out = f_h(agg).
    const Mat gagg = mlp_backward(params.f_h, cache.fh_cache, gh_out, grads.f_h);
    Mat gattn_drop = Mat::Zero(n * n, heads);
    Mat gmm = Mat::Zero(n, psi_att);
    for (int hh = 0; hh < heads; ++hh) {
        ConstRowMajorMap a(cache.attn_drop.col(hh).data(), n, n);
        const Mat ga = gagg.middleCols(hh * dh, dh) * cache.mm.middleCols(hh * dh, dh).transpose();
        RowMajorMap(gattn_drop.col(hh).data(), n, n) = ga;
        gmm.middleCols(hh * dh, dh) = a.transpose() * gagg.middleCols(hh * dh, dh);
    }

    // Velocity path: v_out = fv .* v + sum_j phimean_ij (x_i - x_j).
    const Vec gfv = cache.v.cwiseProduct(gvt).rowwise().sum();
    gv = cache.fv.asDiagonal() * gvt;
    const Vec row_w = cache.phimean.rowwise().sum();
    gx += row_w.asDiagonal() * gvt - cache.phimean.transpose() * gvt;
    const Vec rowdot = cache.x.cwiseProduct(gvt).rowwise().sum();
    const Mat cross = gvt * cache.x.transpose(); // (i,j) = gvt_i . x_j
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            const Eigen::Index p = i * n + j;
            if (!pairs.mask[static_cast<std::size_t>(p)])
                continue;
            const double gphi = rowdot(i) - cross(i, j);
            for (int hh = 0; hh < heads; ++hh)
                gattn_drop(p, hh) += gphi / static_cast<double>(heads);
        }
    }

    Mat gattn = gattn_drop;
    if (cache.drop.size() > 0)
        gattn = gattn.cwiseProduct(cache.drop);

    // Softmax backward per (query atom, head).
    Mat glogit = Mat::Zero(n * n, heads);
    for (int hh = 0; hh < heads; ++hh) {
        for (Eigen::Index i = 0; i < n; ++i) {
            double dot = 0.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                const Eigen::Index p = i * n + j;
                if (pairs.mask[static_cast<std::size_t>(p)])
                    dot += cache.attn(p, hh) * gattn(p, hh);
            }
            for (Eigen::Index j = 0; j < n; ++j) {
                const Eigen::Index p = i * n + j;
                if (pairs.mask[static_cast<std::size_t>(p)])
                    glogit(p, hh) = cache.attn(p, hh) * (gattn(p, hh) - dot);
            }
        }
    }

    Mat gqpair = Mat::Zero(n * n, psi_att);
    Mat gkpair = Mat::Zero(n * n, psi_att);
    for (Eigen::Index p = 0; p < n * n; ++p) {
        if (!pairs.mask[static_cast<std::size_t>(p)])
            continue;
        for (int hh = 0; hh < heads; ++hh) {
            const double g = glogit(p, hh) * scale;
            if (g == 0.0)
                continue;
            gqpair.row(p).segment(hh * dh, dh) += g * cache.kpair.row(p).segment(hh * dh, dh);
            gkpair.row(p).segment(hh * dh, dh) += g * cache.qpair.row(p).segment(hh * dh, dh);
        }
    }

    Mat gqh1 = Mat::Zero(n, psi_att);
    Mat gkh2 = Mat::Zero(n, psi_att);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) {
            const Eigen::Index p = i * n + j;
            if (!pairs.mask[static_cast<std::size_t>(p)])
                continue;
            gqh1.row(i) += gqpair.row(p);
            gkh2.row(j) += gkpair.row(p);
        }

    const Eigen::Index sbf = params.w_sbf1.rows() - psi_att;
    grads.w_sbf1.topRows(psi_att) += cache.qh.transpose() * gqh1;
    grads.w_sbf1.bottomRows(sbf) += pairs.sbf1.transpose() * gqpair;
    grads.w_sbf2.topRows(psi_att) += cache.kh.transpose() * gkh2;
    grads.w_sbf2.bottomRows(sbf) += pairs.sbf2.transpose() * gkpair;

    const Mat gqh = gqh1 * params.w_sbf1.topRows(psi_att).transpose();
    const Mat gkh = gkh2 * params.w_sbf2.topRows(psi_att).transpose();

    grads.w_q += cache.h.transpose() * gqh;
    grads.w_k += cache.h.transpose() * gkh;
    grads.w_m += cache.h.transpose() * gmm;

    Mat gfv_mat(n, 1);
    gfv_mat.col(0) = gfv;
    const Mat gh_fv = mlp_backward(params.f_v, cache.fv_cache, gfv_mat, grads.f_v);

    gh = gqh * params.w_q.transpose() + gkh * params.w_k.transpose() +
         gmm * params.w_m.transpose() + gh_fv;
}

Vec time_features(double s, int psi_t) {
    Vec tau(psi_t);
    double freq = 3.14159265358979323846;
    for (int k = 0; k < psi_t / 2; ++k) {
        tau(2 * k) = std::sin(freq * s);
        tau(2 * k + 1) = std::cos(freq * s);
        freq *= 2.0;
    }
    return tau;
}

Mat build_node_features(const EgtModel& model, const Conformation& conf, double s) {
    if (s < 0.0 || s > 1.0)
        throw std::invalid_argument("build_node_features: s must be in [0, 1]");
    const Vec tau = time_features(s, model.hyper.psi_t);
    Mat h0 = conf.features * model.w_in;
    h0.rowwise() += model.b_in.transpose() + (tau.transpose() * model.w_time);
    return h0;
}

Mat egt_score(const EgtModel& model, const Conformation& conf, double s, double sigma,
              EgtCache* cache, RandomSource* dropout_rng) {
    if (s < 0.0 || s > 1.0)
        throw std::invalid_argument("egt_score: s must be in [0, 1]");
    const double std_dev = kernel_std(sigma, s);
    if (!(std_dev > 0.0))
        throw SingularKernelError("egt_score: kernel std is zero at s = 0");

    EgtCache local;
    EgtCache& c = cache != nullptr ? *cache : local;
    c.pairs = build_pair_table(conf, model.basis);
    c.tau = time_features(s, model.hyper.psi_t);
    c.raw = conf.features;
    c.h0 = build_node_features(model, conf, s);
    c.layers.resize(model.layers.size());

    Mat x = conf.positions;
    Mat v = conf.velocities;
    Mat h = c.h0;
    const int total = model.hyper.layers;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        Mat x_next, v_next, h_next;
        egl_forward(model.layers[l], c.pairs, x, v, h, total, x_next, v_next, h_next,
                    &c.layers[l], dropout_rng, model.hyper.dropout);
        x = std::move(x_next);
        v = std::move(v_next);
        h = std::move(h_next);
    }
    c.x_final = x;
    return (x - conf.positions) / std_dev;
}

void egt_score_backward(const EgtModel& model, const EgtCache& cache, double s, double sigma,
                        const Mat& dscore, EgtModel& grads) {
    const double std_dev = kernel_std(sigma, s);
    Mat gx = dscore / std_dev;
    Mat gv = Mat::Zero(gx.rows(), 3);
    Mat gh = Mat::Zero(gx.rows(), model.hyper.psi_h);
    const int total = model.hyper.layers;
    for (std::size_t l = model.layers.size(); l-- > 0;) {
        Mat gx_in, gv_in, gh_in;
        egl_backward(model.layers[l], cache.pairs, cache.layers[l], total, gx, gv, gh, gx_in,
                     gv_in, gh_in, grads.layers[l]);
        gx = std::move(gx_in);
        gv = std::move(gv_in);
        gh = std::move(gh_in);
    }
    // gh now targets h0 = raw * w_in + b_in + tau^T w_time.
    grads.w_in += cache.raw.transpose() * gh;
    const Vec colsum = gh.colwise().sum().transpose();
    grads.b_in += colsum;
    grads.w_time += cache.tau * colsum.transpose();
    // Gradients w.r.t. the input positions/velocities are discarded.
}

double egt_param_gradients(const EgtModel& model, const Conformation& conf, double s,
                           double sigma, const ScoreLossFn& loss, EgtModel& grads) {
    EgtCache cache;
    const Mat score = egt_score(model, conf, s, sigma, &cache);
    Mat dscore = Mat::Zero(score.rows(), score.cols());
    const double value = loss(score, dscore);
    if (!std::isfinite(value))
        throw NumericError("egt_param_gradients: non-finite loss");
    egt_score_backward(model, cache, s, sigma, dscore, grads);
    return value;
}

// ---------------------------------------------------------------------------
// Checkpoint format (little-endian): magic, version, hyperparameters, training
// seed, then named parameter arrays with shape headers.

namespace {

constexpr char kMagic[8] = {'D', 'I', 'F', 'F', 'M', 'D', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename T> void write_pod(std::ostream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T> T read_pod(std::istream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in)
        throw std::runtime_error("checkpoint: truncated file");
    return value;
}

} // namespace

void save_checkpoint(const EgtModel& model, const std::string& path, std::uint64_t train_seed) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw std::runtime_error("checkpoint: cannot open for writing: " + path);
    out.write(kMagic, sizeof(kMagic));
    write_pod(out, kVersion);
    const EgtHyper& h = model.hyper;
    for (int v : {h.layers, h.heads, h.psi_h, h.psi_att, h.psi_t, h.ffn_hidden,
                  static_cast<int>(h.act), h.basis_deg, h.basis_root, h.basis_ord})
        write_pod(out, static_cast<std::int32_t>(v));
    write_pod(out, h.dropout);
    write_pod(out, h.cutoff);
    write_pod(out, train_seed);

    std::uint32_t count = 0;
    for_each_param(const_cast<EgtModel&>(model),
                   [&](const std::string&, double*, Eigen::Index, Eigen::Index) { ++count; });
    write_pod(out, count);
    for_each_param(const_cast<EgtModel&>(model), [&](const std::string& name, double* data,
                                                     Eigen::Index rows, Eigen::Index cols) {
        write_pod(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_pod(out, static_cast<std::int64_t>(rows));
        write_pod(out, static_cast<std::int64_t>(cols));
        out.write(reinterpret_cast<const char*>(data),
                  static_cast<std::streamsize>(sizeof(double) * rows * cols));
    });
    if (!out)
        throw std::runtime_error("checkpoint: write failed: " + path);
}

EgtModel load_checkpoint(const std::string& path, std::uint64_t* train_seed) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("checkpoint: cannot open for reading: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("checkpoint: bad magic header");
    const auto version = read_pod<std::uint32_t>(in);
    if (version != kVersion)
        throw std::runtime_error("checkpoint: incompatible version " + std::to_string(version));
    EgtHyper h;
    h.layers = read_pod<std::int32_t>(in);
    h.heads = read_pod<std::int32_t>(in);
    h.psi_h = read_pod<std::int32_t>(in);
    h.psi_att = read_pod<std::int32_t>(in);
    h.psi_t = read_pod<std::int32_t>(in);
    h.ffn_hidden = read_pod<std::int32_t>(in);
    h.act = static_cast<Activation>(read_pod<std::int32_t>(in));
    h.basis_deg = read_pod<std::int32_t>(in);
    h.basis_root = read_pod<std::int32_t>(in);
    h.basis_ord = read_pod<std::int32_t>(in);
    h.dropout = read_pod<double>(in);
    h.cutoff = read_pod<double>(in);
    const auto seed = read_pod<std::uint64_t>(in);
    if (train_seed != nullptr)
        *train_seed = seed;

    EgtModel model = make_egt_model(h, 0);
    const auto count = read_pod<std::uint32_t>(in);
    std::uint32_t expected = 0;
    for_each_param(model,
                   [&](const std::string&, double*, Eigen::Index, Eigen::Index) { ++expected; });
    if (count != expected)
        throw std::runtime_error("checkpoint: parameter array count mismatch");
    for_each_param(model, [&](const std::string& name, double* data, Eigen::Index rows,
                              Eigen::Index cols) {
        const auto name_len = read_pod<std::uint32_t>(in);
        std::string file_name(name_len, '\0');
        in.read(file_name.data(), name_len);
        const auto file_rows = read_pod<std::int64_t>(in);
        const auto file_cols = read_pod<std::int64_t>(in);
        if (!in || file_name != name || file_rows != rows || file_cols != cols)
            throw std::runtime_error("checkpoint: incompatible array " + file_name);
        in.read(reinterpret_cast<char*>(data),
                static_cast<std::streamsize>(sizeof(double) * rows * cols));
        if (!in)
            throw std::runtime_error("checkpoint: truncated array " + name);
    });
    return model;
}

} // namespace diffmd
