#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "sgfuse/config.h"
#include "sgfuse/json_io.h"
#include "sgfuse/wire.h"

namespace sgfuse {

struct TimedPose {
  double timestamp = 0.0;
  Pose pose;
};

struct RobotTruth {
  Pose frame;                       // world pose of the robot's local frame
  std::vector<TimedPose> trajectory;  // world poses, one per agent node
  std::vector<Pose> odometry;       // local odometric estimates, same order
};

struct GroundTruth {
  std::map<RobotId, RobotTruth> robots;
  std::vector<ObjectSpec> objects;  // world frame
  // Objects seen by at least one robot with semantics.
  std::vector<bool> object_observed;
  std::vector<Vector3> places;  // world positions of places seen by any robot
  std::map<std::uint64_t, bool> loop_closure_outlier;
};

Json ground_truth_to_json(const GroundTruth& truth);
GroundTruth ground_truth_from_json(const Json& doc, const std::string& path);

struct SimulationOutput {
  std::vector<Event> events;  // graph updates, loop closures, backend ticks
  GroundTruth truth;
};

// Deterministic in (scenario, seed). Throws std::invalid_argument when the
// scenario cannot be simulated.
SimulationOutput simulate(const ScenarioConfig& scenario);

// Waypoint polyline resampled every `step` meters, yaw along the direction of
// travel, in the world frame.
std::vector<Pose> sample_trajectory(const RobotSpec& robot);

// The 8 corners and 6 face centres of an object's box.
std::vector<Vector3> object_surface_points(const ObjectSpec& object);

// Grid of place positions described by the world spec.
std::vector<Vector3> place_grid(const PlaceGridSpec& spec);

}  // namespace sgfuse
