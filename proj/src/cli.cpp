#include "diffmd/cli.hpp"

#include "diffmd/geometry.hpp"
#include "diffmd/xyz_io.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace diffmd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& context) {
    if (!j.is_object())
        throw std::invalid_argument("config: section '" + context + "' must be an object");
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* name : allowed)
            if (key == name)
                ok = true;
        if (!ok)
            throw std::invalid_argument("config: unknown key '" + key + "' in " + context);
    }
}

} // namespace

RunConfig parse_run_config(const json& j) {
    RunConfig cfg;
    check_keys(j,
               {"seed", "out_dir", "schedule", "diffusion", "sampler", "model", "simulate",
                "train", "generate", "evaluate"},
               "top level");
    cfg.seed = j.value("seed", cfg.seed);
    cfg.out_dir = j.value("out_dir", cfg.out_dir);

    if (j.contains("schedule")) {
        const json& s = j.at("schedule");
        check_keys(s, {"sigma_s", "eta_sigma", "a_bar", "sigma_min_frac"}, "schedule");
        cfg.schedule.sigma_s = s.value("sigma_s", cfg.schedule.sigma_s);
        cfg.schedule.eta_sigma = s.value("eta_sigma", cfg.schedule.eta_sigma);
        cfg.schedule.a_bar = s.value("a_bar", cfg.schedule.a_bar);
        cfg.schedule.sigma_min_frac = s.value("sigma_min_frac", cfg.schedule.sigma_min_frac);
    }
    cfg.diffusion.schedule = cfg.schedule;
    if (j.contains("diffusion")) {
        const json& d = j.at("diffusion");
        check_keys(d, {"s_min", "s_max"}, "diffusion");
        cfg.diffusion.s_min = d.value("s_min", cfg.diffusion.s_min);
        cfg.diffusion.s_max = d.value("s_max", cfg.diffusion.s_max);
    }
    cfg.sampler.s_min = cfg.diffusion.s_min;
    if (j.contains("sampler")) {
        const json& s = j.at("sampler");
        check_keys(s,
                   {"mode", "n_predictor", "n_corrector", "snr", "ode_abs_tol", "ode_rel_tol",
                    "s_min", "corrector_off_by_one"},
                   "sampler");
        const std::string mode = s.value("mode", std::string("ode"));
        if (mode == "ode")
            cfg.sampler.mode = SamplerMode::ode;
        else if (mode == "predictor-corrector" || mode == "pc")
            cfg.sampler.mode = SamplerMode::predictor_corrector;
        else
            throw std::invalid_argument("config: sampler.mode must be 'ode' or 'predictor-corrector'");
        cfg.sampler.n_predictor = s.value("n_predictor", cfg.sampler.n_predictor);
        cfg.sampler.n_corrector = s.value("n_corrector", cfg.sampler.n_corrector);
        cfg.sampler.snr = s.value("snr", cfg.sampler.snr);
        cfg.sampler.ode_abs_tol = s.value("ode_abs_tol", cfg.sampler.ode_abs_tol);
        cfg.sampler.ode_rel_tol = s.value("ode_rel_tol", cfg.sampler.ode_rel_tol);
        cfg.sampler.s_min = s.value("s_min", cfg.sampler.s_min);
        cfg.sampler.corrector_off_by_one =
            s.value("corrector_off_by_one", cfg.sampler.corrector_off_by_one);
    }
    if (j.contains("model")) {
        const json& m = j.at("model");
        check_keys(m,
                   {"layers", "heads", "psi_h", "psi_att", "psi_t", "ffn_hidden", "dropout",
                    "activation", "basis"},
                   "model");
        EgtHyper& h = cfg.model.hyper;
        h.layers = m.value("layers", h.layers);
        h.heads = m.value("heads", h.heads);
        h.psi_h = m.value("psi_h", h.psi_h);
        h.psi_att = m.value("psi_att", h.psi_att);
        h.psi_t = m.value("psi_t", h.psi_t);
        h.ffn_hidden = m.value("ffn_hidden", h.ffn_hidden);
        h.dropout = m.value("dropout", h.dropout);
        const std::string act = m.value("activation", std::string("relu"));
        if (act == "relu")
            h.act = Activation::relu;
        else if (act == "tanh")
            h.act = Activation::tanh_act;
        else
            throw std::invalid_argument("config: model.activation must be 'relu' or 'tanh'");
        if (m.contains("basis")) {
            const json& b = m.at("basis");
            check_keys(b, {"n_deg", "n_root", "n_ord", "cutoff"}, "model.basis");
            h.basis_deg = b.value("n_deg", h.basis_deg);
            h.basis_root = b.value("n_root", h.basis_root);
            h.basis_ord = b.value("n_ord", h.basis_ord);
            h.cutoff = b.value("cutoff", h.cutoff);
        }
    }
    if (j.contains("simulate")) {
        const json& s = j.at("simulate");
        check_keys(s,
                   {"fixture", "dt", "n_steps", "record_stride", "init_temperature",
                    "thermostat", "gamd", "out"},
                   "simulate");
        cfg.simulate.fixture = s.value("fixture", cfg.simulate.fixture);
        if (s.contains("dt"))
            cfg.simulate.dt = s.at("dt").get<double>();
        cfg.simulate.n_steps = s.value("n_steps", cfg.simulate.n_steps);
        cfg.simulate.record_stride = s.value("record_stride", cfg.simulate.record_stride);
        if (s.contains("init_temperature"))
            cfg.simulate.init_temperature = s.at("init_temperature").get<double>();
        if (s.contains("thermostat")) {
            const json& t = s.at("thermostat");
            check_keys(t, {"temperature", "interval"}, "simulate.thermostat");
            Thermostat th;
            th.temperature = t.value("temperature", th.temperature);
            th.interval = t.value("interval", th.interval);
            cfg.simulate.thermostat = th;
        }
        if (s.contains("gamd")) {
            const json& g = s.at("gamd");
            check_keys(g, {"u_bar", "eta_u", "sigma_0"}, "simulate.gamd");
            GamdParams gp;
            gp.u_bar = g.value("u_bar", gp.u_bar);
            gp.eta_u = g.value("eta_u", gp.eta_u);
            gp.sigma_0 = g.value("sigma_0", gp.sigma_0);
            cfg.simulate.gamd = gp;
        }
        cfg.simulate.out = s.value("out", cfg.simulate.out);
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        check_keys(t,
                   {"data", "n_train", "n_holdout", "lr", "weight_decay", "epochs", "batch",
                    "eval_every", "lr_floor", "plateau_patience", "threads", "checkpoint",
                    "history"},
                   "train");
        cfg.train.data = t.value("data", cfg.train.data);
        cfg.train.n_train = t.value("n_train", cfg.train.n_train);
        cfg.train.n_holdout = t.value("n_holdout", cfg.train.n_holdout);
        cfg.train.train.lr = t.value("lr", cfg.train.train.lr);
        cfg.train.train.weight_decay = t.value("weight_decay", cfg.train.train.weight_decay);
        cfg.train.train.epochs = t.value("epochs", cfg.train.train.epochs);
        cfg.train.train.batch = t.value("batch", cfg.train.train.batch);
        cfg.train.train.eval_every = t.value("eval_every", cfg.train.train.eval_every);
        cfg.train.train.lr_floor = t.value("lr_floor", cfg.train.train.lr_floor);
        cfg.train.train.plateau_patience =
            t.value("plateau_patience", cfg.train.train.plateau_patience);
        cfg.train.train.threads = t.value("threads", cfg.train.train.threads);
        cfg.train.checkpoint = t.value("checkpoint", cfg.train.checkpoint);
        cfg.train.history = t.value("history", cfg.train.history);
    }
    if (j.contains("generate")) {
        const json& g = j.at("generate");
        check_keys(g, {"checkpoint", "start_traj", "start_frame", "n_frames", "out"},
                   "generate");
        cfg.generate.checkpoint = g.value("checkpoint", cfg.generate.checkpoint);
        cfg.generate.start_traj = g.value("start_traj", cfg.generate.start_traj);
        cfg.generate.start_frame = g.value("start_frame", cfg.generate.start_frame);
        cfg.generate.n_frames = g.value("n_frames", cfg.generate.n_frames);
        cfg.generate.out = g.value("out", cfg.generate.out);
    }
    if (j.contains("evaluate")) {
        const json& e = j.at("evaluate");
        check_keys(e, {"generated", "reference", "t1", "tn", "kabsch", "dump_csv", "report"},
                   "evaluate");
        cfg.evaluate.generated = e.value("generated", cfg.evaluate.generated);
        cfg.evaluate.reference = e.value("reference", cfg.evaluate.reference);
        if (e.contains("t1"))
            cfg.evaluate.t1 = e.at("t1").get<Eigen::Index>();
        if (e.contains("tn"))
            cfg.evaluate.tn = e.at("tn").get<Eigen::Index>();
        cfg.evaluate.kabsch = e.value("kabsch", cfg.evaluate.kabsch);
        cfg.evaluate.dump_csv = e.value("dump_csv", cfg.evaluate.dump_csv);
        cfg.evaluate.report = e.value("report", cfg.evaluate.report);
    }
    cfg.sampler.s_min = std::min(cfg.sampler.s_min, 0.999999);
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open config: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument("config parse error in " + path + ": " + e.what());
    }
    return parse_run_config(j);
}

json run_config_json(const RunConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["out_dir"] = cfg.out_dir;
    j["schedule"] = {{"sigma_s", cfg.schedule.sigma_s},
                     {"eta_sigma", cfg.schedule.eta_sigma},
                     {"a_bar", cfg.schedule.a_bar},
                     {"sigma_min_frac", cfg.schedule.sigma_min_frac}};
    j["diffusion"] = {{"s_min", cfg.diffusion.s_min}, {"s_max", cfg.diffusion.s_max}};
    j["sampler"] = {{"mode", cfg.sampler.mode == SamplerMode::ode ? "ode" : "predictor-corrector"},
                    {"n_predictor", cfg.sampler.n_predictor},
                    {"n_corrector", cfg.sampler.n_corrector},
                    {"snr", cfg.sampler.snr},
                    {"ode_abs_tol", cfg.sampler.ode_abs_tol},
                    {"ode_rel_tol", cfg.sampler.ode_rel_tol},
                    {"s_min", cfg.sampler.s_min},
                    {"corrector_off_by_one", cfg.sampler.corrector_off_by_one}};
    const EgtHyper& h = cfg.model.hyper;
    j["model"] = {{"layers", h.layers},
                  {"heads", h.heads},
                  {"psi_h", h.psi_h},
                  {"psi_att", h.psi_att},
                  {"psi_t", h.psi_t},
                  {"ffn_hidden", h.ffn_hidden},
                  {"dropout", h.dropout},
                  {"activation", h.act == Activation::relu ? "relu" : "tanh"},
                  {"basis",
                   {{"n_deg", h.basis_deg},
                    {"n_root", h.basis_root},
                    {"n_ord", h.basis_ord},
                    {"cutoff", h.cutoff}}}};
    j["simulate"] = {{"fixture", cfg.simulate.fixture},
                     {"n_steps", cfg.simulate.n_steps},
                     {"record_stride", cfg.simulate.record_stride},
                     {"out", cfg.simulate.out}};
    if (cfg.simulate.dt.has_value())
        j["simulate"]["dt"] = *cfg.simulate.dt;
    if (cfg.simulate.init_temperature.has_value())
        j["simulate"]["init_temperature"] = *cfg.simulate.init_temperature;
    if (cfg.simulate.thermostat.has_value())
        j["simulate"]["thermostat"] = {{"temperature", cfg.simulate.thermostat->temperature},
                                       {"interval", cfg.simulate.thermostat->interval}};
    if (cfg.simulate.gamd.has_value())
        j["simulate"]["gamd"] = {{"u_bar", cfg.simulate.gamd->u_bar},
                                 {"eta_u", cfg.simulate.gamd->eta_u},
                                 {"sigma_0", cfg.simulate.gamd->sigma_0}};
    j["train"] = {{"data", cfg.train.data},
                  {"n_train", cfg.train.n_train},
                  {"n_holdout", cfg.train.n_holdout},
                  {"lr", cfg.train.train.lr},
                  {"weight_decay", cfg.train.train.weight_decay},
                  {"epochs", cfg.train.train.epochs},
                  {"batch", cfg.train.train.batch},
                  {"eval_every", cfg.train.train.eval_every},
                  {"lr_floor", cfg.train.train.lr_floor},
                  {"plateau_patience", cfg.train.train.plateau_patience},
                  {"threads", cfg.train.train.threads},
                  {"checkpoint", cfg.train.checkpoint},
                  {"history", cfg.train.history}};
    j["generate"] = {{"checkpoint", cfg.generate.checkpoint},
                     {"start_traj", cfg.generate.start_traj},
                     {"start_frame", cfg.generate.start_frame},
                     {"n_frames", cfg.generate.n_frames},
                     {"out", cfg.generate.out}};
    j["evaluate"] = {{"generated", cfg.evaluate.generated},
                     {"reference", cfg.evaluate.reference},
                     {"kabsch", cfg.evaluate.kabsch},
                     {"dump_csv", cfg.evaluate.dump_csv},
                     {"report", cfg.evaluate.report}};
    if (cfg.evaluate.t1.has_value())
        j["evaluate"]["t1"] = *cfg.evaluate.t1;
    if (cfg.evaluate.tn.has_value())
        j["evaluate"]["tn"] = *cfg.evaluate.tn;
    return j;
}

void atomic_write_file(const std::string& path, const std::string& content) {
    const fs::path target(path);
    if (target.has_parent_path())
        fs::create_directories(target.parent_path());
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out)
            throw std::runtime_error("cannot open for writing: " + tmp.string());
        out << content;
        if (!out)
            throw std::runtime_error("write failed: " + tmp.string());
    }
    fs::rename(tmp, target);
}

namespace {

fs::path out_path(const RunConfig& cfg, const std::string& file) {
    const fs::path p(file);
    if (p.is_absolute())
        return p;
    return fs::path(cfg.out_dir) / p;
}

void write_resolved_config(const RunConfig& cfg, const std::string& command) {
    atomic_write_file(out_path(cfg, "resolved_config_" + command + ".json").string(),
                      run_config_json(cfg).dump(2) + "\n");
}

std::string to_string_xyz(const Trajectory& traj) {
    std::ostringstream ss;
    write_xyz(ss, traj);
    return ss.str();
}

int run_command(const char* name, const std::function<void()>& body) {
    try {
        body();
        return kExitOk;
    } catch (const NumericError& e) {
        std::cerr << name << ": numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const IntegrationError& e) {
        std::cerr << name << ": numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << name << ": error: " << e.what() << "\n";
        return kExitUsage;
    }
}

} // namespace

int cmd_simulate(const RunConfig& cfg) {
    return run_command("simulate", [&]() {
        Fixture fx = fs::exists(cfg.simulate.fixture) && !fs::is_directory(cfg.simulate.fixture)
                         ? load_fixture_file(cfg.simulate.fixture)
                         : make_fixture(cfg.simulate.fixture);
        const double dt = cfg.simulate.dt.value_or(fx.dt);
        if (cfg.simulate.init_temperature.has_value()) {
            Mt19937Source rng(cfg.seed);
            fx.start.velocities = thermal_velocities(fx.ff, fx.start.positions,
                                                     *cfg.simulate.init_temperature, rng);
            refresh_features(fx.start);
        }
        SimulationResult result = simulate(fx.ff, fx.start, dt, cfg.simulate.n_steps,
                                           cfg.simulate.gamd, cfg.simulate.thermostat);
        Trajectory out_traj = cfg.simulate.record_stride > 1
                                  ? downsample(result.trajectory, cfg.simulate.record_stride)
                                  : result.trajectory;
        out_traj.meta["fixture"] = fx.name;
        out_traj.meta["seed"] = std::to_string(cfg.seed);
        atomic_write_file(out_path(cfg, cfg.simulate.out).string(), to_string_xyz(out_traj));

        json side;
        side["units"] = "reduced (mass 1, 1/(4 pi eps0) = 1)";
        side["dt"] = dt;
        side["record_stride"] = cfg.simulate.record_stride;
        side["seed"] = cfg.seed;
        side["fixture"] = fx.name;
        side["gamd"] = cfg.simulate.gamd.has_value();
        json energy = json::array();
        for (std::size_t i = 0; i < result.potential.size(); ++i)
            energy.push_back({{"potential", result.potential[i]},
                              {"kinetic", result.kinetic[i]},
                              {"total", result.potential[i] + result.kinetic[i]}});
        side["energy_trace"] = energy;
        atomic_write_file(out_path(cfg, cfg.simulate.out + ".meta.json").string(),
                          side.dump(2) + "\n");
        write_resolved_config(cfg, "simulate");
        std::cout << "simulate: wrote " << out_traj.n_frames() << " frames to "
                  << out_path(cfg, cfg.simulate.out).string() << "\n";
    });
}

int cmd_train(const RunConfig& cfg) {
    return run_command("train", [&]() {
        const Trajectory traj = read_xyz_file(cfg.train.data);
        const S2lSplit split = s2l_split(traj, cfg.train.n_train, cfg.train.n_holdout);
        TrainConfig tc = cfg.train.train;
        tc.seed = cfg.seed;
        EgtModel model = make_egt_model(cfg.model.hyper, cfg.seed);
        DiffusionConfig diffusion = cfg.diffusion;
        diffusion.schedule = cfg.schedule;
        const TrainResult result =
            train_loop(model, split.train, split.val, diffusion, tc, [&](const EpochRecord& r) {
                if (r.epoch % tc.eval_every == 0 || r.epoch == tc.epochs)
                    std::cout << "epoch " << r.epoch << " train " << r.train_loss << " val "
                              << r.val_loss << " lr " << r.lr << "\n";
            });

        const fs::path ckpt = out_path(cfg, cfg.train.checkpoint);
        if (ckpt.has_parent_path())
            fs::create_directories(ckpt.parent_path());
        fs::path tmp = ckpt;
        tmp += ".tmp";
        save_checkpoint(model, tmp.string(), cfg.seed);
        fs::rename(tmp, ckpt);

        std::ostringstream hist;
        for (const EpochRecord& r : result.history) {
            json jr = {{"epoch", r.epoch},
                       {"train_loss", r.train_loss},
                       {"val_loss", r.val_loss},
                       {"lr", r.lr}};
            hist << jr.dump() << "\n";
        }
        atomic_write_file(out_path(cfg, cfg.train.history).string(), hist.str());
        write_resolved_config(cfg, "train");
        std::cout << "train: wrote " << ckpt.string() << "\n";
    });
}

int cmd_generate(const RunConfig& cfg) {
    return run_command("generate", [&]() {
        EgtModel model = load_checkpoint(cfg.generate.checkpoint);
        const Trajectory start_traj = read_xyz_file(cfg.generate.start_traj);
        if (cfg.generate.start_frame < 0 || cfg.generate.start_frame >= start_traj.n_frames())
            throw std::invalid_argument("generate: start_frame out of range");
        const Conformation& start =
            start_traj.frames[static_cast<std::size_t>(cfg.generate.start_frame)];
        Mt19937Source rng(cfg.seed);
        Trajectory generated =
            rollout(model, start, cfg.generate.n_frames, cfg.schedule, cfg.sampler, rng);
        generated.dt = start_traj.dt;
        generated.meta["checkpoint"] = cfg.generate.checkpoint;
        generated.meta["seed"] = std::to_string(cfg.seed);
        atomic_write_file(out_path(cfg, cfg.generate.out).string(), to_string_xyz(generated));
        write_resolved_config(cfg, "generate");
        std::cout << "generate: wrote " << generated.n_frames() << " frames (incl. start) to "
                  << out_path(cfg, cfg.generate.out).string() << "\n";
    });
}

int cmd_evaluate(const RunConfig& cfg) {
    return run_command("evaluate", [&]() {
        const Trajectory gen = read_xyz_file(cfg.evaluate.generated);
        const Trajectory ref = read_xyz_file(cfg.evaluate.reference);
        if (gen.n_atoms() != ref.n_atoms() ||
            gen.frames.front().atom_numbers != ref.frames.front().atom_numbers)
            throw std::invalid_argument("evaluate: atom rosters differ");
        const Eigen::Index last = std::min(gen.n_frames(), ref.n_frames()) - 1;
        const Eigen::Index t1 = cfg.evaluate.t1.value_or(last >= 1 ? 1 : 0);
        const Eigen::Index tn = cfg.evaluate.tn.value_or(last);
        if (t1 > tn || tn > last)
            throw std::invalid_argument("evaluate: bad frame window");

        const double model_armse = armse(gen, ref, t1, tn);
        const Eigen::Index t0 = t1 > 0 ? t1 - 1 : 0;

        // Baselines read the reference only: copy-prev shifts by one frame,
        // copy-start freezes the window's preceding frame.
        Trajectory copy_prev = ref;
        for (Eigen::Index i = t1; i <= tn; ++i)
            copy_prev.frames[static_cast<std::size_t>(i)] =
                ref.frames[static_cast<std::size_t>(i > 0 ? i - 1 : 0)];
        Trajectory copy_start = ref;
        for (Eigen::Index i = t1; i <= tn; ++i)
            copy_start.frames[static_cast<std::size_t>(i)] =
                ref.frames[static_cast<std::size_t>(t0)];
        const double prev_armse = armse(copy_prev, ref, t1, tn);
        const double start_armse = armse(copy_start, ref, t1, tn);

        json report;
        report["t1"] = t1;
        report["tn"] = tn;
        report["armse"] = model_armse;
        report["copy_prev_armse"] = prev_armse;
        report["copy_start_armse"] = start_armse;
        std::cout << "ARMSE            " << model_armse << "\n";
        if (cfg.evaluate.kabsch) {
            const double k = kabsch_armse(gen, ref, t1, tn);
            report["kabsch_armse"] = k;
            std::cout << "kabsch-ARMSE     " << k << "\n";
        }
        std::cout << "copy-prev ARMSE  " << prev_armse << "\n";
        std::cout << "copy-start ARMSE " << start_armse << "\n";

        if (!cfg.evaluate.dump_csv.empty()) {
            std::ostringstream csv;
            csv << "frame,frobenius_error,copy_prev_error,copy_start_error\n";
            for (Eigen::Index i = t1; i <= tn; ++i) {
                const auto u = static_cast<std::size_t>(i);
                csv << i << ','
                    << (gen.frames[u].positions - ref.frames[u].positions).norm() << ','
                    << (copy_prev.frames[u].positions - ref.frames[u].positions).norm() << ','
                    << (copy_start.frames[u].positions - ref.frames[u].positions).norm()
                    << "\n";
            }
            atomic_write_file(out_path(cfg, cfg.evaluate.dump_csv).string(), csv.str());
        }
        if (!cfg.evaluate.report.empty())
            atomic_write_file(out_path(cfg, cfg.evaluate.report).string(),
                              report.dump(2) + "\n");
        write_resolved_config(cfg, "evaluate");
    });
}

} // namespace diffmd
