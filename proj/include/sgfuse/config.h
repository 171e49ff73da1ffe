#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sgfuse/alignment.h"
#include "sgfuse/deformation.h"
#include "sgfuse/gnc.h"
#include "sgfuse/json_io.h"
#include "sgfuse/reconciliation.h"
#include "sgfuse/scene_graph.h"

namespace sgfuse {

struct ObjectSpec {
  int label = 0;
  Vector3 position = Vector3::Zero();
  Vector3 extent = Vector3::Ones();  // full side lengths
};

struct PlaceGridSpec {
  Vector3 min = Vector3::Zero();
  Vector3 max = Vector3::Zero();
  double spacing = 1.0;
  double radius = 0.5;
};

struct WorldSpec {
  Aabb bounds;
  std::vector<Aabb> rooms;
  std::vector<ObjectSpec> objects;
  PlaceGridSpec places;
  double mesh_spacing = 2.0;
};

// Standard deviations; for odometry they are per meter travelled.
struct NoiseSpec {
  double rotation = 0.0;
  double translation = 0.0;
};

struct RobotSpec {
  RobotId id = 0;
  std::vector<Vector3> waypoints;
  std::size_t laps = 1;  // the waypoint loop is traversed this many times
  double step = 1.0;     // meters per simulation step
  NoiseSpec odometry_noise;
  std::size_t snapshot_period = 10;
  bool has_semantics = true;
  bool has_mesh = true;
  double sensor_range = 3.0;
  // Steps during which newly observed places may still be linked to agents
  // and to each other.
  std::size_t active_window = 5;
  std::size_t dense_per_control = 4;
};

struct LoopClosureSpec {
  double detection_radius = 1.0;
  double intra_rate = 0.0;
  double inter_rate = 0.0;
  std::size_t max_per_pair = 30;
  std::size_t min_intra_separation = 20;
  double outlier_rate = 0.0;
  // "bernoulli": each closure is an outlier independently. "exact": each
  // robot pair gets exactly round(outlier_rate * max_per_pair) outliers
  // among its first max_per_pair closures.
  std::string outlier_assignment = "bernoulli";
  NoiseSpec noise;
};

struct SolverSpec {
  GncConfig gnc;
  AlignmentConfig alignment;
  ReconciliationConfig reconciliation;
  InformationTable information;

  void validate() const;
};

struct ScenarioConfig {
  std::string name = "scenario";
  std::uint64_t seed = 0;
  WorldSpec world;
  std::vector<RobotSpec> robots;
  LoopClosureSpec loop_closures;
  std::size_t backend_period = 50;
  SolverSpec solver;
  double object_threshold = 1.0;
};

// Throws ParseError naming the offending field path.
ScenarioConfig scenario_from_json(const Json& doc, const std::string& path = "$");
ScenarioConfig load_scenario(const std::string& file);
Json scenario_to_json(const ScenarioConfig& cfg);

SolverSpec solver_from_json(const Json& doc, const std::string& path);
Json solver_to_json(const SolverSpec& spec);

}  // namespace sgfuse
