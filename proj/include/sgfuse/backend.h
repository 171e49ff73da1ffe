#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "sgfuse/alignment.h"
#include "sgfuse/config.h"
#include "sgfuse/deformation.h"
#include "sgfuse/frontend.h"
#include "sgfuse/reconciliation.h"

namespace sgfuse {

struct StageTiming {
  std::string stage;
  double seconds = 0.0;
};

struct IterationReport {
  std::uint64_t index = 0;
  std::string failed_stage;  // empty on success
  std::string error;
  AlignmentReport alignment;
  std::set<RobotId> initialized;
  std::vector<MergeCandidate> candidates;
  ApplyReport apply;
  std::vector<RobotId> realigned;
  // Inlier decision per loop-closure id, for closures that entered a solve.
  std::map<std::uint64_t, bool> loop_closure_inlier;
  std::size_t deformation_frames = 0;
  std::size_t deformation_edges = 0;
  // Summed over every solve of the iteration (global and per-robot).
  double objective_before = 0.0;
  double objective_after = 0.0;
  bool objective_increased = false;  // some solve ended above its start (1e-9 slack)
  std::vector<std::string> skipped;
  std::vector<StageTiming> timings;

  bool ok() const { return failed_stage.empty(); }
};

/**
 * Runs backend iterations on frontend snapshots. Each iteration works on a
 * private copy and publishes the result in one pointer swap, so graph() never
 * exposes a half-updated state. A failing stage leaves the published graph
 * and the alignment cache as they were.
 */
class Backend {
 public:
  explicit Backend(SolverSpec spec);

  IterationReport iterate(const FrontendSnapshot& snapshot);

  // Latest published graph; null before the first successful iteration.
  std::shared_ptr<const SceneGraph> graph() const;
  const AlignmentState& alignment() const { return alignment_; }
  const SolverSpec& spec() const { return spec_; }

  // Global deformation graph and solution of the last successful iteration.
  const DeformationGraph& last_deformation() const { return last_dg_; }
  const std::vector<Pose>& last_solution() const { return last_solution_; }

 private:
  SolverSpec spec_;
  AlignmentState alignment_;
  std::uint64_t iterations_ = 0;
  mutable std::mutex mutex_;
  std::shared_ptr<const SceneGraph> published_;
  DeformationGraph last_dg_;
  std::vector<Pose> last_solution_;
};

}  // namespace sgfuse
