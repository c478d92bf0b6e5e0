#pragma once

#include <string>

#include "nesde/synthdata.hpp"

// JSON Lines dataset files: line 0 is the header, each following line is one
// trajectory.

namespace nesde {

void write_dataset(const Dataset& ds, const std::string& path);
Dataset read_dataset(const std::string& path);

Json trajectory_to_json(const Trajectory& traj);
Trajectory trajectory_from_json(const Json& j);

}  // namespace nesde
