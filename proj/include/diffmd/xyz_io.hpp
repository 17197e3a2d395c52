#pragma once

#include "diffmd/types.hpp"

#include <iosfwd>
#include <string>

namespace diffmd {

// Extended-XYZ trajectory format, per frame:
//   line 1: atom count N
//   line 2: comment "t=<frame> dt=<fs>"
//   N lines: "SYMBOL x y z vx vy vz"
// Files without the three velocity columns are accepted; velocities are then
// reconstructed as frame differences (first frame gets zeros).

std::string element_symbol(int atomic_number);
int atomic_number_from_symbol(const std::string& symbol);

void write_xyz(std::ostream& out, const Trajectory& traj);
void write_xyz_file(const std::string& path, const Trajectory& traj);

Trajectory read_xyz(std::istream& in);
Trajectory read_xyz_file(const std::string& path);

} // namespace diffmd
