#include "diffmd/train.hpp"

#include "diffmd/geometry.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <thread>

namespace diffmd {

FramePairDataset frame_pairs(const Trajectory& traj, const std::string& source) {
    validate_trajectory(traj);
    FramePairDataset ds;
    ds.sources.push_back(source);
    for (Eigen::Index t = 0; t + 1 < traj.n_frames(); ++t) {
        FramePair pair;
        pair.prev = traj.frames[static_cast<std::size_t>(t)];
        pair.next = traj.frames[static_cast<std::size_t>(t + 1)];
        if (t >= 2)
            pair.a_sq = acceleration_sq(traj, t);
        pair.source = source;
        ds.pairs.push_back(std::move(pair));
    }
    return ds;
}

S2lSplit s2l_split(const Trajectory& traj, Eigen::Index n_train, Eigen::Index n_holdout) {
    if (n_train < 1 || n_holdout < 2)
        throw std::invalid_argument("s2l_split: need n_train >= 1 and n_holdout >= 2");
    if (n_holdout % 2 != 0)
        throw std::invalid_argument("s2l_split: n_holdout must be even for equal halves");
    const FramePairDataset all = frame_pairs(traj, "s2l");
    if (static_cast<Eigen::Index>(all.size()) < n_train + n_holdout)
        throw std::invalid_argument("s2l_split: trajectory too short for requested split");
    S2lSplit split;
    const auto begin = all.pairs.begin();
    split.train.pairs.assign(begin, begin + n_train);
    split.val.pairs.assign(begin + n_train, begin + n_train + n_holdout / 2);
    split.test.pairs.assign(begin + n_train + n_holdout / 2, begin + n_train + n_holdout);
    split.train.sources = split.val.sources = split.test.sources = all.sources;
    return split;
}

O2oSplit o2o_split(const std::vector<Trajectory>& trajs, std::size_t k) {
    if (trajs.size() <= k)
        throw std::invalid_argument("o2o_split: need more trajectories than k");
    O2oSplit split;
    for (const Trajectory& traj : trajs) {
        validate_trajectory(traj);
        // Copy-start baseline: predict x(t0) for every later frame.
        Trajectory frozen = traj;
        for (auto& frame : frozen.frames)
            frame = traj.frames.front();
        split.baseline_armse.push_back(
            traj.n_frames() > 1 ? armse(frozen, traj, 1, traj.n_frames() - 1) : 0.0);
    }
    std::vector<std::size_t> order(trajs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return split.baseline_armse[a] > split.baseline_armse[b];
    });
    split.val_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    split.train_indices.assign(order.begin() + static_cast<std::ptrdiff_t>(k), order.end());
    std::sort(split.val_indices.begin(), split.val_indices.end());
    std::sort(split.train_indices.begin(), split.train_indices.end());
    return split;
}

void validate(const TrainConfig& cfg) {
    if (!(cfg.lr >= 0.0) || !(cfg.weight_decay >= 0.0) || !(cfg.lr_floor > 0.0))
        throw std::invalid_argument("TrainConfig: rates must be non-negative");
    if (cfg.epochs < 1 || cfg.batch < 1 || cfg.plateau_patience < 1 || cfg.eval_every < 1)
        throw std::invalid_argument("TrainConfig: counts must be >= 1");
    if (cfg.threads < 1)
        throw std::invalid_argument("TrainConfig: threads must be >= 1");
}

void write_history(const std::string& path, const std::vector<EpochRecord>& history) {
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot write history: " + path);
    for (const EpochRecord& r : history) {
        nlohmann::json j;
        j["epoch"] = r.epoch;
        j["train_loss"] = r.train_loss;
        j["val_loss"] = r.val_loss;
        j["lr"] = r.lr;
        out << j.dump() << "\n";
    }
}

std::vector<EpochRecord> read_history(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot read history: " + path);
    std::vector<EpochRecord> history;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        const auto j = nlohmann::json::parse(line);
        EpochRecord r;
        r.epoch = j.at("epoch").get<int>();
        r.train_loss = j.at("train_loss").get<double>();
        r.val_loss = j.at("val_loss").get<double>();
        r.lr = j.at("lr").get<double>();
        history.push_back(r);
    }
    return history;
}

AdamOptimizer::AdamOptimizer(const EgtModel& model, double lr, double weight_decay)
    : lr_(lr), weight_decay_(weight_decay), m_(zeros_like(model)), v_(zeros_like(model)) {}

void AdamOptimizer::step(EgtModel& model, const EgtModel& grads) {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));

    std::vector<double*> g_ptrs, m_ptrs, v_ptrs;
    for_each_param(const_cast<EgtModel&>(grads),
                   [&](const std::string&, double* d, Eigen::Index, Eigen::Index) {
                       g_ptrs.push_back(d);
                   });
    for_each_param(m_, [&](const std::string&, double* d, Eigen::Index, Eigen::Index) {
        m_ptrs.push_back(d);
    });
    for_each_param(v_, [&](const std::string&, double* d, Eigen::Index, Eigen::Index) {
        v_ptrs.push_back(d);
    });
    std::size_t idx = 0;
    for_each_param(model, [&](const std::string&, double* p, Eigen::Index r, Eigen::Index c) {
        double* g = g_ptrs[idx];
        double* m = m_ptrs[idx];
        double* v = v_ptrs[idx];
        const Eigen::Index n = r * c;
        for (Eigen::Index k = 0; k < n; ++k) {
            m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
            v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            p[k] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * p[k]);
        }
        ++idx;
    });
}

namespace {

// Deterministic per-item draws for one batch: s and z are pre-sampled in item
// order so data-parallel evaluation reproduces the single-thread result.
struct BatchDraws {
    std::vector<double> s;
    std::vector<Mat> z;
};

BatchDraws draw_batch(const std::vector<const FramePair*>& batch, const DiffusionConfig& cfg,
                      Mt19937Source& rng) {
    BatchDraws draws;
    for (const FramePair* pair : batch) {
        draws.s.push_back(rng.uniform(cfg.s_min, cfg.s_max));
        draws.z.push_back(rng.normal_matrix(pair->next.positions.rows(), 3));
    }
    return draws;
}

double batch_loss(const EgtModel& model, const std::vector<const FramePair*>& batch,
                  const BatchDraws& draws, const DiffusionConfig& cfg, EgtModel* grads,
                  RandomSource* dropout_rng, int threads) {
    const std::size_t n = batch.size();
    auto eval_range = [&](std::size_t lo, std::size_t hi, EgtModel* g, double* loss_out) {
        double acc = 0.0;
        for (std::size_t i = lo; i < hi; ++i) {
            const FramePair& pair = *batch[i];
            const double sigma = base_sigma(cfg.schedule, pair.a_sq);
            acc += dsm_loss_term(model, pair.prev, pair.next.positions, sigma, draws.s[i],
                                 draws.z[i], g, dropout_rng);
        }
        *loss_out = acc;
    };

    double total = 0.0;
    if (threads <= 1 || n < 2) {
        EgtModel local = grads != nullptr ? zeros_like(model) : EgtModel{};
        eval_range(0, n, grads != nullptr ? &local : nullptr, &total);
        if (grads != nullptr)
            *grads = std::move(local);
    } else {
        // Static partition; partial gradients reduce in chunk order.
        const std::size_t k =
            std::min<std::size_t>(static_cast<std::size_t>(threads), n);
        std::vector<EgtModel> partial;
        std::vector<double> losses(k, 0.0);
        if (grads != nullptr)
            for (std::size_t c = 0; c < k; ++c)
                partial.push_back(zeros_like(model));
        std::vector<std::thread> pool;
        for (std::size_t c = 0; c < k; ++c) {
            const std::size_t lo = c * n / k;
            const std::size_t hi = (c + 1) * n / k;
            pool.emplace_back(eval_range, lo, hi, grads != nullptr ? &partial[c] : nullptr,
                              &losses[c]);
        }
        for (auto& th : pool)
            th.join();
        for (double l : losses)
            total += l;
        if (grads != nullptr) {
            *grads = std::move(partial[0]);
            for (std::size_t c = 1; c < k; ++c) {
                std::vector<double*> dst;
                for_each_param(*grads, [&](const std::string&, double* d, Eigen::Index,
                                           Eigen::Index) { dst.push_back(d); });
                std::size_t idx = 0;
                for_each_param(partial[c], [&](const std::string&, double* d, Eigen::Index r,
                                               Eigen::Index cc) {
                    double* out = dst[idx++];
                    for (Eigen::Index e = 0; e < r * cc; ++e)
                        out[e] += d[e];
                });
            }
        }
    }

    const double inv = 1.0 / static_cast<double>(n);
    if (grads != nullptr)
        for_each_param(*grads, [&](const std::string&, double* d, Eigen::Index r,
                                   Eigen::Index c) {
            for (Eigen::Index e = 0; e < r * c; ++e)
                d[e] *= inv;
        });
    return total * inv;
}

} // namespace

TrainResult train_loop(EgtModel& model, const FramePairDataset& data,
                       const FramePairDataset& val, const DiffusionConfig& diffusion,
                       const TrainConfig& cfg,
                       const std::function<void(const EpochRecord&)>& on_epoch) {
    if (data.empty() || val.empty())
        throw std::invalid_argument("train_loop: datasets must be non-empty");
    validate(cfg);
    validate(diffusion);
    if (cfg.threads > 1 && model.hyper.dropout > 0.0)
        throw std::invalid_argument(
            "train_loop: data-parallel evaluation requires dropout 0 (shared RNG)");

    Mt19937Source shuffle_rng(cfg.seed);
    Mt19937Source noise_rng(cfg.seed + 0x9e3779b97f4a7c15ULL);
    const std::uint64_t val_seed = cfg.seed + 0x517cc1b727220a95ULL;

    AdamOptimizer opt(model, cfg.lr, cfg.weight_decay);
    PlateauScheduler scheduler(cfg.lr, cfg.lr_floor, cfg.plateau_patience);
    TrainResult result;

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
        double train_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch)) {
            std::vector<const FramePair*> batch;
            const std::size_t hi =
                std::min(order.size(), at + static_cast<std::size_t>(cfg.batch));
            for (std::size_t i = at; i < hi; ++i)
                batch.push_back(&data.pairs[order[i]]);
            const BatchDraws draws = draw_batch(batch, diffusion, noise_rng);
            EgtModel grads;
            double loss;
            try {
                loss = batch_loss(model, batch, draws, diffusion, &grads, &noise_rng,
                                  cfg.threads);
            } catch (const NumericError& e) {
                throw NumericError("train_loop: " + std::string(e.what()) + " (epoch " +
                                   std::to_string(epoch) + ", step " +
                                   std::to_string(batches + 1) + ")");
            }
            if (!std::isfinite(loss))
                throw NumericError("train_loop: non-finite loss at epoch " +
                                   std::to_string(epoch) + ", step " +
                                   std::to_string(batches + 1));
            opt.step(model, grads);
            train_loss += loss;
            ++batches;
        }
        train_loss /= static_cast<double>(batches);

        // Fixed validation noise stream: identical perturbations every epoch,
        // dropout disabled.
        Mt19937Source val_rng(val_seed);
        std::vector<const FramePair*> val_batch;
        for (const FramePair& p : val.pairs)
            val_batch.push_back(&p);
        const BatchDraws val_draws = draw_batch(val_batch, diffusion, val_rng);
        const double val_loss =
            batch_loss(model, val_batch, val_draws, diffusion, nullptr, nullptr, cfg.threads);

        opt.set_lr(scheduler.observe(val_loss));

        EpochRecord record{epoch, train_loss, val_loss, opt.lr()};
        result.history.push_back(record);
        if (on_epoch)
            on_epoch(record);
    }
    return result;
}

EgtModel checkpoint_roundtrip(const EgtModel& model, const std::string& path,
                              std::uint64_t train_seed) {
    save_checkpoint(model, path, train_seed);
    std::uint64_t seed_back = 0;
    EgtModel loaded = load_checkpoint(path, &seed_back);
    if (seed_back != train_seed)
        throw std::runtime_error("checkpoint_roundtrip: seed mismatch");
    std::vector<const double*> a;
    std::vector<Eigen::Index> an;
    for_each_param(const_cast<EgtModel&>(model),
                   [&](const std::string&, double* d, Eigen::Index r, Eigen::Index c) {
                       a.push_back(d);
                       an.push_back(r * c);
                   });
    std::size_t idx = 0;
    bool ok = true;
    for_each_param(loaded, [&](const std::string&, double* d, Eigen::Index r, Eigen::Index c) {
        const double* ref = a[idx];
        if (an[idx] != r * c)
            ok = false;
        else
            for (Eigen::Index k = 0; k < r * c; ++k)
                if (std::memcmp(&ref[k], &d[k], sizeof(double)) != 0)
                    ok = false;
        ++idx;
    });
    if (!ok)
        throw std::runtime_error("checkpoint_roundtrip: reloaded parameters differ");
    return loaded;
}

} // namespace diffmd
