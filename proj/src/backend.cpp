#include "sgfuse/backend.h"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>

namespace sgfuse {

namespace {

class StageClock {
 public:
  explicit StageClock(std::vector<StageTiming>& out) : out_(out) {}

  void start(std::string stage) {
    stop();
    stage_ = std::move(stage);
    begin_ = std::chrono::steady_clock::now();
  }

  void stop() {
    if (!stage_.empty()) {
      const std::chrono::duration<double> d = std::chrono::steady_clock::now() - begin_;
      out_.push_back({stage_, d.count()});
    }
    stage_.clear();
  }

  const std::string& stage() const { return stage_; }

 private:
  std::vector<StageTiming>& out_;
  std::string stage_;
  std::chrono::steady_clock::time_point begin_;
};

void record_solve(IterationReport& report, const DeformationGraph& dg,
                  const DeformationSolution& sol, const std::vector<LoopClosure>& lcs) {
  report.deformation_frames += dg.frames.size();
  report.deformation_edges += dg.edges.size();
  report.objective_before += sol.initial_objective;
  report.objective_after += sol.final_objective;
  if (sol.final_objective > sol.initial_objective + 1e-9 * std::max(1.0, sol.initial_objective)) {
    report.objective_increased = true;
  }
  for (std::size_t e = 0; e < dg.edges.size(); ++e) {
    const DeformationEdge& edge = dg.edges[e];
    if (edge.type == EdgeType::LoopClosure && edge.source) {
      report.loop_closure_inlier[lcs.at(*edge.source).id] = sol.inliers[e];
    }
  }
  report.skipped.insert(report.skipped.end(), dg.skipped.begin(), dg.skipped.end());
}

}  // namespace

Backend::Backend(SolverSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  spec_.alignment.gnc = spec_.gnc;
}

std::shared_ptr<const SceneGraph> Backend::graph() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return published_;
}

IterationReport Backend::iterate(const FrontendSnapshot& snapshot) {
  IterationReport report;
  report.index = ++iterations_;
  StageClock clock(report.timings);
  try {
    clock.start("alignment");
    SceneGraph graph = *snapshot.graph;
    const std::vector<LoopClosure>& lcs = *snapshot.loop_closures;
    AlignmentState state = alignment_;
    report.alignment = update_alignment(state, graph, lcs, spec_.alignment);
    for (const auto& [robot, frame] : report.alignment.frames) {
      report.initialized.insert(robot);
    }

    clock.start("transform");
    for (const auto& [robot, frame] : report.alignment.frames) {
      graph.transform_robot(robot, frame);
      graph.robot(robot).frame = FrameStatus::Global;
    }

    clock.start("proposal");
    if (report.initialized.size() >= 2) {
      report.candidates =
          propose_place_merges(graph, report.initialized, spec_.reconciliation);
      const auto objects =
          propose_object_merges(graph, report.initialized, spec_.reconciliation);
      report.candidates.insert(report.candidates.end(), objects.begin(), objects.end());
    }

    clock.start("optimization");
    const DeformationGraph dg = build_deformation_graph(graph, lcs, report.candidates,
                                                        report.initialized, spec_.information);
    const DeformationSolution sol = optimize_deformation(dg, spec_.gnc);
    record_solve(report, dg, sol, lcs);
    std::vector<std::pair<DeformationGraph, DeformationSolution>> local;
    for (const auto& [robot, info] : graph.robots()) {
      if (report.initialized.count(robot) > 0) {
        continue;
      }
      DeformationGraph ldg = build_deformation_graph(graph, lcs, {}, {robot}, spec_.information);
      DeformationSolution lsol = optimize_deformation(ldg, spec_.gnc);
      record_solve(report, ldg, lsol, lcs);
      local.emplace_back(std::move(ldg), std::move(lsol));
    }

    clock.start("write_back");
    write_back(graph, dg, sol.frames);
    for (const auto& [ldg, lsol] : local) {
      write_back(graph, ldg, lsol.frames);
    }

    clock.start("reconciliation");
    const std::vector<bool> mask = candidate_mask(dg, sol);
    report.apply = validate_and_apply(graph, report.candidates, mask, spec_.reconciliation);

    clock.start("realign");
    std::map<RobotId, Pose> optimized;
    for (const RobotId robot : report.initialized) {
      const auto agents = snapshot.graph->live_nodes(Layer::Agent, robot);
      if (agents.empty()) {
        continue;
      }
      const auto it = dg.index.find(agents.front());
      if (it == dg.index.end()) {
        continue;
      }
      const Pose& odom = snapshot.graph->get<AgentNode>(agents.front()).pose;
      optimized[robot] = sol.frames[it->second] * odom.inverse();
    }
    report.realigned = apply_realign(state, optimized, spec_.alignment);

    clock.start("publish");
    graph.check_invariants();
    auto next = std::make_shared<const SceneGraph>(std::move(graph));
    {
      std::lock_guard<std::mutex> lock(mutex_);
      published_ = std::move(next);
    }
    alignment_ = std::move(state);
    last_dg_ = dg;
    last_solution_ = sol.frames;
    clock.stop();
  } catch (const std::exception& e) {
    report.failed_stage = clock.stage();
    report.error = e.what();
    clock.stop();
    spdlog::error("backend iteration {} failed in stage '{}': {}", report.index,
                  report.failed_stage, report.error);
  }
  return report;
}

}  // namespace sgfuse
