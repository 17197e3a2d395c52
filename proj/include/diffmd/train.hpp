#pragma once

#include "diffmd/egt.hpp"
#include "diffmd/sde.hpp"
#include "diffmd/types.hpp"

#include <algorithm>
#include <limits>
#include <string>
#include <vector>

namespace diffmd {

struct FramePairDataset {
    std::vector<FramePair> pairs;
    std::vector<std::string> sources;

    std::size_t size() const { return pairs.size(); }
    bool empty() const { return pairs.empty(); }
};

// Consecutive frame pairs of one trajectory; squared acceleration attached
// where two preceding velocities exist.
FramePairDataset frame_pairs(const Trajectory& traj, const std::string& source);

struct S2lSplit {
    FramePairDataset train, val, test;
};

// First n_train consecutive pairs train; the next n_holdout pairs split into
// equal val/test halves, order preserved.
S2lSplit s2l_split(const Trajectory& traj, Eigen::Index n_train, Eigen::Index n_holdout);

struct O2oSplit {
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> val_indices;
    std::vector<double> baseline_armse; // copy-start ARMSE per input trajectory
};

// The k trajectories with the largest copy-start baseline ARMSE become
// validation; ties break by input order.
O2oSplit o2o_split(const std::vector<Trajectory>& trajs, std::size_t k);

struct TrainConfig {
    double lr = 5e-4;
    double weight_decay = 1e-10;
    int epochs = 200;
    int batch = 200;
    int eval_every = 5; // epochs between progress prints
    std::uint64_t seed = 1;
    double lr_floor = 1e-7;
    int plateau_patience = 5;
    int threads = 1; // data-parallel batch evaluation, fixed reduction order
};

void validate(const TrainConfig& cfg);

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;
};

// One JSON object per line: {"epoch":..,"train_loss":..,"val_loss":..,"lr":..}.
void write_history(const std::string& path, const std::vector<EpochRecord>& history);
std::vector<EpochRecord> read_history(const std::string& path);

// Reduce-on-plateau: when the observed validation loss fails to improve for
// `patience` consecutive observations, the rate decays by 10x down to `floor`.
class PlateauScheduler {
  public:
    PlateauScheduler(double lr, double floor, int patience)
        : lr_(lr), floor_(floor), patience_(patience) {}

    // Feeds one validation loss; returns the rate to use next.
    double observe(double val_loss) {
        if (val_loss < best_) {
            best_ = val_loss;
            stale_ = 0;
        } else if (++stale_ >= patience_) {
            if (lr_ > floor_)
                lr_ = std::max(lr_ * 0.1, floor_);
            stale_ = 0;
        }
        return lr_;
    }
    double lr() const { return lr_; }

  private:
    double lr_;
    double floor_;
    int patience_;
    double best_ = std::numeric_limits<double>::infinity();
    int stale_ = 0;
};

// Adam with decoupled weight decay over the model parameter arrays.
class AdamOptimizer {
  public:
    AdamOptimizer(const EgtModel& model, double lr, double weight_decay);

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    void step(EgtModel& model, const EgtModel& grads);

  private:
    double lr_;
    double weight_decay_;
    double beta1_ = 0.9;
    double beta2_ = 0.999;
    double eps_ = 1e-8;
    long step_count_ = 0;
    EgtModel m_, v_;
};

struct TrainResult {
    std::vector<EpochRecord> history;
};

// Epochs of shuffled mini-batches minimizing the DSM objective with AdamW.
// Validation runs each epoch with dropout off and a fixed noise stream; a
// plateau of `plateau_patience` epochs decays lr by 10x down to lr_floor.
// Deterministic for a fixed config with threads = 1.
TrainResult train_loop(EgtModel& model, const FramePairDataset& data,
                       const FramePairDataset& val, const DiffusionConfig& diffusion,
                       const TrainConfig& cfg,
                       const std::function<void(const EpochRecord&)>& on_epoch = nullptr);

// Save + load + verify: returns the reloaded model after checking that every
// parameter round-trips bit-exactly.
EgtModel checkpoint_roundtrip(const EgtModel& model, const std::string& path,
                              std::uint64_t train_seed);

} // namespace diffmd
