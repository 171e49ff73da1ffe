#pragma once

#include <cstddef>
#include <set>
#include <vector>

#include "sgfuse/liegroup.h"
#include "sgfuse/scene_graph.h"

namespace sgfuse {

enum class CandidateKind : std::uint8_t { Place = 0, Object = 1 };
enum class CandidateStatus : std::uint8_t { Proposed = 0, Valid = 1, Invalid = 2 };

/// Proposed identification of node b with node a (a < b, different robots).
struct MergeCandidate {
  NodeId a;
  NodeId b;
  CandidateKind kind = CandidateKind::Place;
  // Maps b's geometry onto a's; identity for places.
  Pose relative_transform;
  CandidateStatus status = CandidateStatus::Proposed;

  bool operator==(const MergeCandidate&) const = default;
};

struct IcpConfig {
  int max_iterations = 50;
  double tolerance = 1e-10;
  double max_correspondence_distance = 0.25;
  std::size_t max_points = 1000;

  void validate() const;
};

struct ReconciliationConfig {
  double place_distance_max = 0.01;
  double place_radius_diff_max = 0.01;
  double undo_ratio_threshold = 0.5;
  IcpConfig icp;

  void validate() const;
};

// Candidates for cross-robot place pairs within distance and radius bounds.
// Only robots in `initialized` take part. Sorted by (a, b).
std::vector<MergeCandidate> propose_place_merges(const SceneGraph& graph,
                                                 const std::set<RobotId>& initialized,
                                                 const ReconciliationConfig& cfg);

// Candidates for cross-robot objects with equal labels and intersecting boxes.
// Candidates whose ICP fails are returned with status Invalid.
std::vector<MergeCandidate> propose_object_merges(const SceneGraph& graph,
                                                  const std::set<RobotId>& initialized,
                                                  const ReconciliationConfig& cfg);

struct IcpResult {
  bool success = false;
  Pose transform;  // maps b onto a
  int iterations = 0;
  std::size_t correspondences = 0;
};

IcpResult icp_object_transform(const std::vector<Vector3>& vertices_a,
                               const std::vector<Vector3>& vertices_b, const IcpConfig& cfg);

// Deterministic farthest-point subsample starting from the first point.
std::vector<Vector3> farthest_point_subsample(const std::vector<Vector3>& points,
                                              std::size_t cap);

// Live mesh vertex positions supporting an object.
std::vector<Vector3> object_vertices(const SceneGraph& graph, const NodeId& object);

struct ApplyReport {
  std::size_t proposed = 0;
  std::size_t valid = 0;
  std::size_t applied = 0;
  std::size_t undone = 0;
  std::size_t skipped = 0;  // valid but conflicting with an earlier merge
  double ratio = 1.0;       // valid / proposed (1 when nothing is proposed)
  std::vector<MergeRecord> records;
};

// Marks candidates from the inlier mask (one entry per candidate), applies the
// valid merges, and undoes all of them when valid/proposed falls below the
// threshold.
ApplyReport validate_and_apply(SceneGraph& graph, std::vector<MergeCandidate>& candidates,
                               const std::vector<bool>& inlier_mask,
                               const ReconciliationConfig& cfg);

}  // namespace sgfuse
