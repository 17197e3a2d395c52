#pragma once

#include "diffmd/noise.hpp"
#include "diffmd/refmd.hpp"
#include "diffmd/sampler.hpp"
#include "diffmd/train.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>

namespace diffmd {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumeric = 3;

struct SimulateConfig {
    std::string fixture = "lj_trimer"; // built-in name or fixture file path
    std::optional<double> dt;          // defaults to the fixture suggestion
    int n_steps = 1000;
    int record_stride = 1;
    std::optional<double> init_temperature; // Maxwell-Boltzmann start velocities
    std::optional<Thermostat> thermostat;
    std::optional<GamdParams> gamd;
    std::string out = "trajectory.xyz";
};

struct ModelConfig {
    EgtHyper hyper; // defaults mirror the reference architecture constants
};

struct TrainCommandConfig {
    std::string data;             // trajectory file
    Eigen::Index n_train = 1000;
    Eigen::Index n_holdout = 400; // split evenly into val/test
    TrainConfig train;
    std::string checkpoint = "model.ckpt";
    std::string history = "history.jsonl";
};

struct GenerateConfig {
    std::string checkpoint;
    std::string start_traj;       // trajectory supplying the start frame
    Eigen::Index start_frame = 0;
    int n_frames = 100;
    std::string out = "generated.xyz";
};

struct EvaluateConfig {
    std::string generated;
    std::string reference;
    std::optional<Eigen::Index> t1; // defaults to 1
    std::optional<Eigen::Index> tn; // defaults to the common last frame
    bool kabsch = false;
    std::string dump_csv;           // per-frame errors, empty = off
    std::string report;             // metric report path, empty = stdout only
};

struct RunConfig {
    std::uint64_t seed = 1;
    std::string out_dir = ".";
    NoiseSchedule schedule;
    DiffusionConfig diffusion; // schedule mirrored inside
    SamplerConfig sampler;
    SimulateConfig simulate;
    ModelConfig model;
    TrainCommandConfig train;
    GenerateConfig generate;
    EvaluateConfig evaluate;
};

// Parses a config file; unknown keys anywhere are rejected.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
nlohmann::json run_config_json(const RunConfig& cfg);

// Writes content to a temp file in the target directory, then renames.
void atomic_write_file(const std::string& path, const std::string& content);

// Subcommand entry points; return process exit codes and write the resolved
// config next to their outputs.
int cmd_simulate(const RunConfig& cfg);
int cmd_train(const RunConfig& cfg);
int cmd_generate(const RunConfig& cfg);
int cmd_evaluate(const RunConfig& cfg);

} // namespace diffmd
