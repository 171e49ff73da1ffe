#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "sgfuse/gnc.h"
#include "sgfuse/liegroup.h"
#include "sgfuse/loop_closure.h"
#include "sgfuse/reconciliation.h"
#include "sgfuse/scene_graph.h"

namespace sgfuse {

enum class EdgeType : std::uint8_t {
  Odometry = 0,
  LoopClosure = 1,
  Rigidity = 2,
  MergeFactor = 3,
  PlaceAgent = 4,
  PlaceObject = 5,
};

std::string_view edge_type_name(EdgeType type);

// Diagonal information values (rotation, translation) per edge family.
// place_agent and place_object edges use the rigidity entry.
struct InformationTable {
  std::array<double, 2> odometry{1e2, 1e2};
  std::array<double, 2> loop_closure{1e2, 1e2};
  std::array<double, 2> rigidity{1e3, 1e3};
  std::array<double, 2> merge_factor{1e1, 1e1};

  Twist diagonal(EdgeType type) const;
  void validate() const;
};

struct DeformationEdge {
  EdgeType type = EdgeType::Odometry;
  std::size_t i = 0;
  std::size_t j = 0;
  Pose measurement;
  Twist omega_diag = Twist::Ones();
  bool robust = false;
  std::optional<std::size_t> source;  // loop-closure or candidate index
};

struct DeformationGraph {
  std::vector<NodeId> frame_ids;  // sorted
  std::vector<Pose> frames;       // initial guess
  std::map<NodeId, std::size_t> index;
  std::vector<DeformationEdge> edges;
  std::vector<std::size_t> anchors;  // one per connected component
  // Edge index of each candidate's merge factor (none for Invalid ones).
  std::vector<std::optional<std::size_t>> candidate_edges;
  std::vector<std::string> skipped;  // content left out, with reasons

  std::size_t count(EdgeType type) const;
};

// Builds the graph over the given robots. Everything is taken in the frame the
// graph currently stores; loop closures touching other robots are skipped.
DeformationGraph build_deformation_graph(const SceneGraph& graph,
                                         const std::vector<LoopClosure>& loop_closures,
                                         const std::vector<MergeCandidate>& candidates,
                                         const std::set<RobotId>& robots,
                                         const InformationTable& info);

struct DeformationSolution {
  std::vector<Pose> frames;
  std::vector<double> weights;  // per edge
  std::vector<bool> inliers;    // per edge; trusted edges are always inliers
  bool converged = false;
  int iterations = 0;
  // Σ wᵢ rᵢᵀΩᵢrᵢ with the final weights, at the initial guess and at the solution.
  double initial_objective = 0.0;
  double final_objective = 0.0;
  GncResult gnc;
};

RobustProblem deformation_problem(const DeformationGraph& dg);
DeformationSolution optimize_deformation(const DeformationGraph& dg, const GncConfig& config);

// Inlier flag per candidate (false for candidates without a merge factor).
std::vector<bool> candidate_mask(const DeformationGraph& dg, const DeformationSolution& sol);

struct MeshBinding {
  std::vector<std::size_t> controls;  // indices into the control list
  std::vector<double> weights;        // nonnegative, sum to 1
};

// Binds each vertex to its b nearest controls with inverse-distance weights.
std::vector<MeshBinding> bind_mesh(const std::vector<Vector3>& control_positions,
                                   const std::vector<Vector3>& vertices, std::size_t b = 4);

// v' = Σⱼ wⱼ (Rⱼ (v − gⱼ) + gⱼ + tⱼ) with (Rⱼ, tⱼ) the change of control j
// from its rest frame to its solved frame. Vertices with an empty binding stay.
std::vector<Vector3> interpolate_mesh(const std::vector<Pose>& rest_frames,
                                      const std::vector<Pose>& solved_frames,
                                      const std::vector<MeshBinding>& bindings,
                                      const std::vector<Vector3>& vertices);

// Writes solved frames into the graph: agent poses, place and mesh-control
// positions, dense vertices, and object centroids/boxes recomputed from
// their vertices.
void write_back(SceneGraph& graph, const DeformationGraph& dg, const std::vector<Pose>& solved);

// FRAME id qw qx qy qz tx ty tz / EDGE type id1 id2 <pose7> <omega-diag6>
void write_edgelist(std::ostream& out, const DeformationGraph& dg,
                    const std::vector<Pose>* solved = nullptr);

}  // namespace sgfuse
