#pragma once

#include "diffmd/basis.hpp"
#include "diffmd/noise.hpp"
#include "diffmd/rng.hpp"
#include "diffmd/types.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace diffmd {

enum class Activation { relu, tanh_act };

// Two-layer perceptron, rows = items: out = act(x w1 + b1) w2 + b2.
struct Mlp {
    Mat w1;
    Vec b1;
    Mat w2;
    Vec b2;
    Activation act = Activation::relu;
};

struct MlpCache {
    Mat input;
    Mat pre;    // pre-activation
    Mat hidden; // post-activation (post-dropout when enabled)
    Mat drop;   // inverted dropout factors, empty when disabled
};

Mat mlp_forward(const Mlp& mlp, const Mat& x, MlpCache* cache = nullptr,
                RandomSource* dropout_rng = nullptr, double dropout = 0.0);

// Returns d(loss)/d(input), accumulates parameter gradients into `grads`.
Mat mlp_backward(const Mlp& mlp, const MlpCache& cache, const Mat& gout, Mlp& grads);

// One equivariant geometric layer.
struct EglParams {
    Mat w_q, w_k, w_m; // psi_h x psi_att
    Mat w_sbf1;        // (psi_att + |SBF|) x psi_att
    Mat w_sbf2;        // (psi_att + |SBF|) x psi_att
    Mlp f_v;           // psi_h -> 1
    Mlp f_h;           // psi_att -> psi_h
    int heads = 1;
};

struct EgtHyper {
    int layers = 6;
    int heads = 8;
    int psi_h = 128;
    int psi_att = 128;
    int psi_t = 16;       // sinusoidal time-feature width (even)
    int ffn_hidden = 2048;
    double dropout = 0.1; // attention weights and MLP hidden layers, training only
    Activation act = Activation::relu;
    int basis_deg = 2;
    int basis_root = 2;
    int basis_ord = 2;
    double cutoff = 1.6; // Angstrom interaction cutoff
};

struct EgtModel {
    EgtHyper hyper;
    BasisSpec basis{2, 2, 2, 1.6};
    Mat w_in;   // 2 x psi_h node-feature embedding
    Vec b_in;   // psi_h
    Mat w_time; // psi_t x psi_h
    std::vector<EglParams> layers;
};

EgtModel make_egt_model(const EgtHyper& hyper, std::uint64_t seed);

// Same shapes, all parameters zero. Used for gradients and optimizer moments.
EgtModel zeros_like(const EgtModel& model);

// Visits every parameter array (vectors as n x 1), in a fixed order.
using ParamVisitor = std::function<void(const std::string& name, double* data, Eigen::Index rows,
                                        Eigen::Index cols)>;
void for_each_param(EgtModel& model, const ParamVisitor& visit);
Eigen::Index param_count(const EgtModel& model);

// Pairwise SBF features and the attention mask, computed once per score
// evaluation from the input frame and held fixed across layers.
struct PairTable {
    Eigen::Index n = 0;
    Mat sbf1, sbf2;         // (n*n) x |SBF|, row p = i*n + j
    std::vector<char> mask; // 1 = pair attends (i != j, distance < cutoff)
};

PairTable build_pair_table(const Conformation& conf, const BasisSpec& basis);

struct EglCache {
    Mat x, v, h;        // layer inputs
    Mat qh, kh, mm;     // N x psi_att
    Mat qpair, kpair;   // (N*N) x psi_att
    Mat attn;           // (N*N) x heads, post-softmax
    Mat attn_drop;      // after attention dropout (same as attn when disabled)
    Mat drop;           // dropout factors, empty when disabled
    Mat phimean;        // N x N head-mean attention
    Mat agg;            // N x psi_att head-concatenated value aggregate
    Vec fv;             // N
    MlpCache fv_cache, fh_cache;
    Mat v_out, x_out, h_out;
};

void egl_forward(const EglParams& params, const PairTable& pairs, const Mat& x, const Mat& v,
                 const Mat& h, int layer_count, Mat& x_out, Mat& v_out, Mat& h_out,
                 EglCache* cache = nullptr, RandomSource* dropout_rng = nullptr,
                 double dropout = 0.0);

// Convenience overload matching the layer contract directly: builds the pair
// table from (x, v) and runs one layer.
void egl_forward(const EglParams& params, const BasisSpec& basis, const IVec& atom_numbers,
                 const Mat& x, const Mat& v, const Mat& h, int layer_count, Mat& x_out,
                 Mat& v_out, Mat& h_out);

// Returns d(loss)/d(x, v, h) of the layer inputs, accumulating parameter grads.
void egl_backward(const EglParams& params, const PairTable& pairs, const EglCache& cache,
                  int layer_count, const Mat& gx_out, const Mat& gv_out, const Mat& gh_out,
                  Mat& gx, Mat& gv, Mat& gh, EglParams& grads);

// Sinusoidal features of the diffusion time, geometric frequencies.
Vec time_features(double s, int psi_t);

// Invariant node features: [|v_i|, Z_i] embedded to psi_h plus the projected
// time embedding.
Mat build_node_features(const EgtModel& model, const Conformation& conf, double s);

struct EgtCache {
    PairTable pairs;
    Vec tau;
    Mat raw; // N x 2
    Mat h0;
    std::vector<EglCache> layers;
    Mat x_final;
};

// Score head: (x^(L) - x^(0)) / kernel_std(sigma, s). Rotation-equivariant,
// translation-invariant. Throws SingularKernelError at s = 0.
Mat egt_score(const EgtModel& model, const Conformation& conf, double s, double sigma,
              EgtCache* cache = nullptr, RandomSource* dropout_rng = nullptr);

void egt_score_backward(const EgtModel& model, const EgtCache& cache, double s, double sigma,
                        const Mat& dscore, EgtModel& grads);

// Gradients of a caller-defined scalar loss of the score output for one
// conformation. `loss` receives the score and must fill d(loss)/d(score);
// returns the loss value. Parameter gradients accumulate into `grads`.
using ScoreLossFn = std::function<double(const Mat& score, Mat& dscore)>;
double egt_param_gradients(const EgtModel& model, const Conformation& conf, double s,
                           double sigma, const ScoreLossFn& loss, EgtModel& grads);

// Checkpoint file: magic + version + hyperparameters + named parameter arrays
// with shape headers + the training RNG seed. Round-trips bit-exactly.
void save_checkpoint(const EgtModel& model, const std::string& path, std::uint64_t train_seed);
EgtModel load_checkpoint(const std::string& path, std::uint64_t* train_seed = nullptr);

} // namespace diffmd
