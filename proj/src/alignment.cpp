#include "sgfuse/alignment.h"

#include <algorithm>
#include <functional>
#include <limits>
#include <numeric>
#include <queue>
#include <stdexcept>

namespace sgfuse {

void AlignmentConfig::validate() const {
  if (k_min_inliers < 1) {
    throw std::invalid_argument("alignment k_min_inliers must be at least 1");
  }
  if (!(realign_translation_threshold > 0.0)) {
    throw std::invalid_argument("alignment realign_translation_threshold must be positive");
  }
  gnc.validate();
}

Pose frame_sample(const LoopClosure& lc, const Pose& pose_a, const Pose& pose_b) {
  if (lc.intra_robot()) {
    throw std::invalid_argument("frame_sample needs an inter-robot loop closure");
  }
  return pose_a * lc.measurement * pose_b.inverse();
}

std::size_t truncated_medoid(const std::vector<Pose>& samples, const Covariance6& sigma,
                             double eps2) {
  std::size_t best = 0;
  double best_cost = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    double cost = 0.0;
    for (std::size_t j = 0; j < samples.size(); ++j) {
      if (i != j) {
        cost += std::min(mahalanobis_sq(boxminus(samples[i], samples[j]), sigma), eps2);
      }
    }
    if (cost < best_cost) {
      best_cost = cost;
      best = i;
    }
  }
  return best;
}

FrameEstimate robust_pose_average(const std::vector<Pose>& samples, const AlignmentConfig& cfg) {
  if (samples.empty()) {
    throw std::invalid_argument("robust_pose_average needs at least one sample");
  }
  const double eps = cfg.gnc.inlier_threshold ? *cfg.gnc.inlier_threshold
                                              : chi2_inlier_threshold(6);
  RobustProblem problem;
  problem.values.add(samples[truncated_medoid(samples, cfg.sigma, eps * eps)]);
  for (const Pose& s : samples) {
    problem.residuals.push_back(
        std::make_shared<PosePriorResidual>(0, s, cfg.sigma.information(), true));
  }
  const GncResult result = solve_gnc(problem, cfg.gnc);
  FrameEstimate est;
  est.estimate = result.values.pose(0);
  est.samples_used = samples.size();
  est.inliers = result.inliers;
  est.inlier_count = static_cast<std::size_t>(
      std::count(result.inliers.begin(), result.inliers.end(), true));
  return est;
}

std::vector<DependenceEdge> spanning_tree(const std::set<RobotId>& robots,
                                          std::vector<DependenceEdge> edges) {
  std::sort(edges.begin(), edges.end(), [](const DependenceEdge& a, const DependenceEdge& b) {
    if (a.inlier_count != b.inlier_count) {
      return a.inlier_count > b.inlier_count;
    }
    return a.pair < b.pair;
  });
  std::map<RobotId, RobotId> parent;
  for (const RobotId r : robots) {
    parent[r] = r;
  }
  std::function<RobotId(RobotId)> find = [&](RobotId r) {
    while (parent[r] != r) {
      parent[r] = parent[parent[r]];
      r = parent[r];
    }
    return r;
  };
  std::vector<DependenceEdge> tree;
  for (const DependenceEdge& e : edges) {
    if (e.pair.first == e.pair.second || robots.count(e.pair.first) == 0 ||
        robots.count(e.pair.second) == 0) {
      continue;
    }
    const RobotId ra = find(e.pair.first);
    const RobotId rb = find(e.pair.second);
    if (ra != rb) {
      parent[std::max(ra, rb)] = std::min(ra, rb);
      tree.push_back(e);
    }
  }
  return tree;
}

std::map<RobotId, Pose> chain_to_global(RobotId root, const std::vector<DependenceEdge>& tree,
                                        const std::map<RobotPair, FrameEstimate>& estimates,
                                        std::size_t k_min_inliers,
                                        const std::map<RobotId, Pose>& pinned) {
  std::map<RobotId, std::vector<RobotPair>> adjacency;
  for (const DependenceEdge& e : tree) {
    adjacency[e.pair.first].push_back(e.pair);
    adjacency[e.pair.second].push_back(e.pair);
  }
  std::map<RobotId, Pose> frames;
  frames[root] = Pose::Identity();
  std::queue<RobotId> queue;
  queue.push(root);
  std::set<RobotId> visited{root};
  while (!queue.empty()) {
    const RobotId r = queue.front();
    queue.pop();
    for (const RobotPair& pair : adjacency[r]) {
      const RobotId other = pair.first == r ? pair.second : pair.first;
      if (visited.count(other) > 0) {
        continue;
      }
      const auto pin = pinned.find(other);
      if (pin != pinned.end()) {
        frames[other] = pin->second;
      } else {
        const auto est = estimates.find(pair);
        if (est == estimates.end() || est->second.inlier_count < k_min_inliers) {
          continue;
        }
        const Pose rel = pair.first == r ? est->second.estimate : est->second.estimate.inverse();
        frames[other] = frames.at(r) * rel;
      }
      visited.insert(other);
      queue.push(other);
    }
  }
  return frames;
}

bool needs_realign(const FrameEstimate& initial, const Pose& optimized_relative,
                   const AlignmentConfig& cfg) {
  return (initial.estimate.translation() - optimized_relative.translation()).norm() >
         cfg.realign_translation_threshold;
}

std::map<RobotPair, std::vector<Pose>> collect_frame_samples(
    const SceneGraph& graph, const std::vector<LoopClosure>& loop_closures) {
  std::map<RobotPair, std::vector<Pose>> samples;
  for (const LoopClosure& lc : loop_closures) {
    if (lc.intra_robot() || !graph.has_node(lc.from) || !graph.has_node(lc.to)) {
      continue;
    }
    const Pose& pa = graph.get<AgentNode>(lc.from).pose;
    const Pose& pb = graph.get<AgentNode>(lc.to).pose;
    const Pose s = frame_sample(lc, pa, pb);
    if (lc.from.robot < lc.to.robot) {
      samples[{lc.from.robot, lc.to.robot}].push_back(s);
    } else {
      samples[{lc.to.robot, lc.from.robot}].push_back(s.inverse());
    }
  }
  return samples;
}

AlignmentReport update_alignment(AlignmentState& state, const SceneGraph& graph,
                                 const std::vector<LoopClosure>& loop_closures,
                                 const AlignmentConfig& cfg) {
  AlignmentReport report;
  std::set<RobotId> robots;
  for (const auto& [id, info] : graph.robots()) {
    robots.insert(id);
  }
  if (robots.empty()) {
    return report;
  }
  report.root = *robots.begin();

  std::vector<DependenceEdge> edges;
  for (const auto& [pair, samples] : collect_frame_samples(graph, loop_closures)) {
    FrameEstimate est = robust_pose_average(samples, cfg);
    est.pair = pair;
    edges.push_back(DependenceEdge{pair, est.inlier_count});
    report.estimates.emplace(pair, std::move(est));
  }
  report.tree = spanning_tree(robots, edges);

  std::map<RobotId, Pose> pinned;
  for (const auto& [robot, frame] : state.frames) {
    if (robots.count(robot) > 0 && robot != report.root) {
      pinned.emplace(robot, frame);
    }
  }
  report.frames =
      chain_to_global(report.root, report.tree, report.estimates, cfg.k_min_inliers, pinned);
  // Cached robots stay initialized even if the current tree does not reach them.
  for (const auto& [robot, frame] : pinned) {
    report.frames.emplace(robot, frame);
  }

  // Record how newly initialized robots were reached.
  std::map<RobotId, std::vector<RobotPair>> adjacency;
  for (const DependenceEdge& e : report.tree) {
    adjacency[e.pair.first].push_back(e.pair);
    adjacency[e.pair.second].push_back(e.pair);
  }
  for (const auto& [robot, frame] : report.frames) {
    if (state.frames.count(robot) > 0 || robot == report.root) {
      continue;
    }
    for (const RobotPair& pair : adjacency[robot]) {
      const RobotId other = pair.first == robot ? pair.second : pair.first;
      const auto est = report.estimates.find(pair);
      if (report.frames.count(other) > 0 && est != report.estimates.end() &&
          est->second.inlier_count >= cfg.k_min_inliers) {
        state.initialized_by[robot] = {other, est->second};
        break;
      }
    }
  }
  state.frames = report.frames;
  return report;
}

std::vector<RobotId> apply_realign(AlignmentState& state,
                                   const std::map<RobotId, Pose>& optimized_frames,
                                   const AlignmentConfig& cfg) {
  std::vector<RobotId> fired;
  for (const auto& [robot, origin] : state.initialized_by) {
    const auto& [other, initial] = origin;
    const auto fr = optimized_frames.find(robot);
    const auto fo = optimized_frames.find(other);
    if (fr == optimized_frames.end() || fo == optimized_frames.end()) {
      continue;
    }
    // Estimates are stored as X^first_second.
    const Pose& first = initial.pair.first == other ? fo->second : fr->second;
    const Pose& second = initial.pair.first == other ? fr->second : fo->second;
    if (needs_realign(initial, first.inverse() * second, cfg)) {
      fired.push_back(robot);
    }
  }
  for (const RobotId r : fired) {
    state.frames.erase(r);
    state.initialized_by.erase(r);
  }
  return fired;
}

}  // namespace sgfuse
