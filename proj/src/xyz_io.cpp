#include "diffmd/xyz_io.hpp"

#include "diffmd/geometry.hpp"

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace diffmd {

namespace {

constexpr std::array<const char*, 37> kSymbols = {
    "X",  "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne", "Na", "Mg",
    "Al", "Si", "P",  "S",  "Cl", "Ar", "K",  "Ca", "Sc", "Ti", "V",  "Cr", "Mn",
    "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr"};

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

std::string element_symbol(int atomic_number) {
    if (atomic_number >= 0 && atomic_number < static_cast<int>(kSymbols.size()))
        return kSymbols[static_cast<std::size_t>(atomic_number)];
    return "Z" + std::to_string(atomic_number);
}

int atomic_number_from_symbol(const std::string& symbol) {
    for (std::size_t z = 0; z < kSymbols.size(); ++z)
        if (symbol == kSymbols[z])
            return static_cast<int>(z);
    if (symbol.size() > 1 && symbol[0] == 'Z') {
        try {
            return std::stoi(symbol.substr(1));
        } catch (const std::exception&) {
        }
    }
    // Bare integers are accepted too.
    try {
        std::size_t used = 0;
        const int z = std::stoi(symbol, &used);
        if (used == symbol.size())
            return z;
    } catch (const std::exception&) {
    }
    throw std::invalid_argument("unknown element symbol: " + symbol);
}

void write_xyz(std::ostream& out, const Trajectory& traj) {
    validate_trajectory(traj);
    for (std::size_t t = 0; t < traj.frames.size(); ++t) {
        const Conformation& frame = traj.frames[t];
        out << frame.size() << "\n";
        out << "t=" << t << " dt=" << format_double(traj.dt) << "\n";
        for (Eigen::Index i = 0; i < frame.size(); ++i) {
            out << element_symbol(frame.atom_numbers(i));
            for (int c = 0; c < 3; ++c)
                out << ' ' << format_double(frame.positions(i, c));
            for (int c = 0; c < 3; ++c)
                out << ' ' << format_double(frame.velocities(i, c));
            out << "\n";
        }
    }
}

void write_xyz_file(const std::string& path, const Trajectory& traj) {
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot open for writing: " + path);
    write_xyz(out, traj);
    if (!out)
        throw std::runtime_error("write failed: " + path);
}

Trajectory read_xyz(std::istream& in) {
    Trajectory traj;
    std::string line;
    bool any_velocities = false;
    while (std::getline(in, line)) {
        std::istringstream head(line);
        Eigen::Index n = 0;
        if (!(head >> n)) {
            if (line.find_first_not_of(" \t\r") == std::string::npos)
                continue; // trailing blank line
            throw std::invalid_argument("xyz: expected atom count, got: " + line);
        }
        if (n < 1)
            throw std::invalid_argument("xyz: atom count must be >= 1");
        if (!std::getline(in, line))
            throw std::invalid_argument("xyz: missing comment line");
        std::istringstream comment(line);
        std::string token;
        while (comment >> token) {
            if (token.rfind("dt=", 0) == 0)
                traj.dt = std::stod(token.substr(3));
        }

        Mat pos(n, 3);
        Mat vel = Mat::Zero(n, 3);
        IVec z(n);
        bool frame_has_vel = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (!std::getline(in, line))
                throw std::invalid_argument("xyz: truncated frame");
            std::istringstream row(line);
            std::string sym;
            if (!(row >> sym))
                throw std::invalid_argument("xyz: bad atom line: " + line);
            z(i) = atomic_number_from_symbol(sym);
            std::vector<double> vals;
            double v = 0.0;
            while (row >> v)
                vals.push_back(v);
            if (vals.size() != 3 && vals.size() != 6)
                throw std::invalid_argument("xyz: atom line needs 3 or 6 coordinates: " + line);
            for (int c = 0; c < 3; ++c)
                pos(i, c) = vals[static_cast<std::size_t>(c)];
            if (vals.size() == 6) {
                frame_has_vel = true;
                for (int c = 0; c < 3; ++c)
                    vel(i, c) = vals[static_cast<std::size_t>(c) + 3];
            }
        }
        if (!traj.frames.empty() && frame_has_vel != any_velocities)
            throw std::invalid_argument("xyz: mixed frames with and without velocities");
        any_velocities = frame_has_vel;
        traj.frames.push_back(make_conformation(std::move(pos), std::move(vel), std::move(z)));
    }
    if (traj.frames.empty())
        throw std::invalid_argument("xyz: no frames found");
    if (!any_velocities) {
        for (std::size_t t = 1; t < traj.frames.size(); ++t) {
            traj.frames[t].velocities =
                velocity_from_frames(traj.frames[t].positions, traj.frames[t - 1].positions);
            refresh_features(traj.frames[t]);
        }
    }
    validate_trajectory(traj);
    return traj;
}

Trajectory read_xyz_file(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open for reading: " + path);
    return read_xyz(in);
}

} // namespace diffmd
