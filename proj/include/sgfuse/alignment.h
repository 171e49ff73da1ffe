#pragma once

#include <cstddef>
#include <map>
#include <set>
#include <utility>
#include <vector>

#include "sgfuse/gnc.h"
#include "sgfuse/liegroup.h"
#include "sgfuse/loop_closure.h"
#include "sgfuse/scene_graph.h"

namespace sgfuse {

struct AlignmentConfig {
  std::size_t k_min_inliers = 5;
  double realign_translation_threshold = 10.0;
  // Σ of the pose-averaging residuals (rotation rad², translation m²).
  Covariance6 sigma = Covariance6::Diagonal(
      (Twist() << 0.05 * 0.05, 0.05 * 0.05, 0.05 * 0.05, 0.25 * 0.25, 0.25 * 0.25, 0.25 * 0.25)
          .finished());
  GncConfig gnc;

  void validate() const;
};

using RobotPair = std::pair<RobotId, RobotId>;  // first < second

/// Estimate of X^a_b: robot b's local frame expressed in robot a's frame.
struct FrameEstimate {
  RobotPair pair{0, 0};
  Pose estimate;
  std::size_t inlier_count = 0;
  std::size_t samples_used = 0;
  std::vector<bool> inliers;
};

// pose_a · measurement · pose_b⁻¹. Throws std::invalid_argument for
// intra-robot loop closures.
Pose frame_sample(const LoopClosure& lc, const Pose& pose_a, const Pose& pose_b);

// Index of the sample minimizing Σⱼ min(‖sⱼ ⊟ sᵢ‖²_Σ, ε²); ties go to the
// lowest index.
std::size_t truncated_medoid(const std::vector<Pose>& samples, const Covariance6& sigma,
                             double eps2);

FrameEstimate robust_pose_average(const std::vector<Pose>& samples, const AlignmentConfig& cfg);

struct DependenceEdge {
  RobotPair pair{0, 0};
  std::size_t inlier_count = 0;
};

// Kruskal on inlier count (descending), ties by (first, second) ascending.
// Disconnected inputs yield a forest.
std::vector<DependenceEdge> spanning_tree(const std::set<RobotId>& robots,
                                          std::vector<DependenceEdge> edges);

// Global frame per reachable robot; the root maps to identity. Edges whose
// estimate fails the k-inlier gate are not traversed. Robots in `pinned`
// keep the given frame and still extend the tree to their neighbors.
std::map<RobotId, Pose> chain_to_global(RobotId root, const std::vector<DependenceEdge>& tree,
                                        const std::map<RobotPair, FrameEstimate>& estimates,
                                        std::size_t k_min_inliers,
                                        const std::map<RobotId, Pose>& pinned = {});

bool needs_realign(const FrameEstimate& initial, const Pose& optimized_relative,
                   const AlignmentConfig& cfg);

// Frame samples per robot pair from inter-robot loop closures whose agents
// exist in the graph. Samples are oriented as X^first_second.
std::map<RobotPair, std::vector<Pose>> collect_frame_samples(
    const SceneGraph& graph, const std::vector<LoopClosure>& loop_closures);

/// Frames cached across backend iterations. A robot's frame is recomputed
/// only until it is initialized, and again after a re-alignment fires.
struct AlignmentState {
  std::map<RobotId, Pose> frames;
  // The estimate through which each non-root robot was initialized.
  std::map<RobotId, std::pair<RobotId, FrameEstimate>> initialized_by;
};

struct AlignmentReport {
  RobotId root = 0;
  std::map<RobotId, Pose> frames;  // initialized robots only
  std::map<RobotPair, FrameEstimate> estimates;
  std::vector<DependenceEdge> tree;
};

AlignmentReport update_alignment(AlignmentState& state, const SceneGraph& graph,
                                 const std::vector<LoopClosure>& loop_closures,
                                 const AlignmentConfig& cfg);

// Robots whose optimized relative frame disagrees with their initial
// estimate; their cached frames are dropped from `state`.
std::vector<RobotId> apply_realign(AlignmentState& state,
                                   const std::map<RobotId, Pose>& optimized_frames,
                                   const AlignmentConfig& cfg);

}  // namespace sgfuse
