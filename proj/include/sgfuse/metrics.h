#pragma once

#include <map>
#include <optional>
#include <vector>

#include "sgfuse/config.h"
#include "sgfuse/scene_graph.h"
#include "sgfuse/simulator.h"

namespace sgfuse {

struct TimedPosition {
  double timestamp = 0.0;
  Vector3 position = Vector3::Zero();
};

// Translational RMSE over poses whose timestamps match within 1e-6 s.
// Throws std::invalid_argument when no timestamps match.
double evaluate_ate(const std::vector<TimedPosition>& estimate,
                    const std::vector<TimedPosition>& truth);

// Rigid transform (no scale) minimizing Σ‖T·srcᵢ − dstᵢ‖².
Pose align_rigid(const std::vector<Vector3>& src, const std::vector<Vector3>& dst);

struct LabeledPoint {
  int label = 0;
  Vector3 position = Vector3::Zero();
};

// Percentages in [0, 100]. An empty denominator yields 0 with the flag cleared.
struct ObjectMetrics {
  double found = 0.0;
  double correct = 0.0;
  bool found_defined = false;
  bool correct_defined = false;
  std::size_t estimated = 0;
  std::size_t truth = 0;
};

ObjectMetrics evaluate_objects(const std::vector<LabeledPoint>& estimated,
                               const std::vector<LabeledPoint>& truth, double threshold);

struct PlaceMetrics {
  std::size_t count = 0;
  double mean = 0.0;
  double median = 0.0;
  double max = 0.0;
};

// Distance from every estimated place to its nearest ground-truth place.
PlaceMetrics evaluate_places(const std::vector<Vector3>& estimated,
                             const std::vector<Vector3>& truth);

/// Metrics of a backend graph against ground truth. Global-frame robots are
/// compared in the root robot's frame after one rigid alignment fitted on the
/// root trajectory; local-frame robots only get a per-robot ATE with their own
/// alignment.
struct GraphEvaluation {
  RobotId root = 0;
  std::map<RobotId, double> ate;
  std::map<RobotId, bool> ate_global;
  std::optional<double> ate_multi;     // over global-frame robots
  std::optional<double> ate_odometry;  // odometry only, same robots
  ObjectMetrics objects;
  PlaceMetrics places;
};

GraphEvaluation evaluate_graph(const SceneGraph& graph, const GroundTruth& truth,
                               double object_threshold);

}  // namespace sgfuse
