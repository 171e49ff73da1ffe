#include "sgfuse/deformation.h"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace sgfuse {

std::string_view edge_type_name(EdgeType type) {
  switch (type) {
    case EdgeType::Odometry:
      return "odometry";
    case EdgeType::LoopClosure:
      return "loop_closure";
    case EdgeType::Rigidity:
      return "rigidity";
    case EdgeType::MergeFactor:
      return "merge_factor";
    case EdgeType::PlaceAgent:
      return "place_agent";
    case EdgeType::PlaceObject:
      return "place_object";
  }
  return "unknown";
}

Twist InformationTable::diagonal(EdgeType type) const {
  std::array<double, 2> v{};
  switch (type) {
    case EdgeType::Odometry:
      v = odometry;
      break;
    case EdgeType::LoopClosure:
      v = loop_closure;
      break;
    case EdgeType::MergeFactor:
      v = merge_factor;
      break;
    case EdgeType::Rigidity:
    case EdgeType::PlaceAgent:
    case EdgeType::PlaceObject:
      v = rigidity;
      break;
  }
  Twist d;
  d << v[0], v[0], v[0], v[1], v[1], v[1];
  return d;
}

void InformationTable::validate() const {
  for (const auto& v : {odometry, loop_closure, rigidity, merge_factor}) {
    if (!(v[0] > 0.0) || !(v[1] > 0.0)) {
      throw std::invalid_argument("information values must be positive");
    }
  }
}

std::size_t DeformationGraph::count(EdgeType type) const {
  return static_cast<std::size_t>(std::count_if(
      edges.begin(), edges.end(), [type](const DeformationEdge& e) { return e.type == type; }));
}

namespace {

struct PendingEdge {
  EdgeType type;
  NodeId a;
  NodeId b;
  std::optional<Pose> measurement;  // unset: current relative pose
  bool robust;
  std::optional<std::size_t> source;
};

Pose frame_of(const SceneGraph& graph, const NodeId& id) {
  const NodePayload& p = graph.node(id).payload;
  switch (id.layer) {
    case Layer::Agent:
      return std::get<AgentNode>(p).pose;
    case Layer::Object:
      return Pose::Translation(std::get<ObjectNode>(p).centroid);
    case Layer::Place:
      return Pose::Translation(std::get<PlaceNode>(p).position);
    case Layer::Mesh:
      return Pose::Translation(std::get<MeshNode>(p).position);
    case Layer::Room:
      break;
  }
  throw std::invalid_argument("rooms carry no deformation frame");
}

std::optional<NodeId> nearest_node(const SceneGraph& graph, const std::vector<NodeId>& ids,
                                   const Vector3& p) {
  std::optional<NodeId> best;
  double best_d = std::numeric_limits<double>::infinity();
  for (const NodeId& id : ids) {
    const double d = (frame_of(graph, id).translation() - p).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = id;
    }
  }
  return best;
}

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) {
      parent_[std::max(a, b)] = std::min(a, b);
    }
  }

 private:
  std::vector<std::size_t> parent_;
};

}  // namespace

DeformationGraph build_deformation_graph(const SceneGraph& graph,
                                         const std::vector<LoopClosure>& loop_closures,
                                         const std::vector<MergeCandidate>& candidates,
                                         const std::set<RobotId>& robots,
                                         const InformationTable& info) {
  DeformationGraph dg;
  auto participates = [&](const NodeId& id) {
    return robots.count(id.robot) > 0 && graph.has_node(id) && graph.is_live(id);
  };

  std::set<NodeId> candidate_objects;
  for (const MergeCandidate& c : candidates) {
    if (c.status != CandidateStatus::Invalid && c.kind == CandidateKind::Object &&
        participates(c.a) && participates(c.b)) {
      candidate_objects.insert(c.a);
      candidate_objects.insert(c.b);
    }
  }

  std::vector<PendingEdge> pending;
  for (const RobotId r : robots) {
    if (!graph.has_robot(r)) {
      dg.skipped.push_back("robot " + std::to_string(r) + " not in graph");
      continue;
    }
    const std::vector<NodeId> agents = graph.live_nodes(Layer::Agent, r);
    const std::vector<NodeId> places = graph.live_nodes(Layer::Place, r);
    for (std::size_t k = 1; k < agents.size(); ++k) {
      pending.push_back({EdgeType::Odometry, agents[k - 1], agents[k], std::nullopt, false, {}});
    }
    for (const NodeId& m : graph.live_nodes(Layer::Mesh, r)) {
      const Vector3& p = graph.get<MeshNode>(m).position;
      std::optional<NodeId> host = nearest_node(graph, places, p);
      if (!host) {
        host = nearest_node(graph, agents, p);
      }
      if (host) {
        pending.push_back({EdgeType::Rigidity, *host, m, std::nullopt, false, {}});
      } else {
        dg.skipped.push_back("mesh control " + m.str() + " has no place or agent to attach to");
      }
    }
  }

  for (const Edge& e : graph.edges()) {
    if (!participates(e.source) || !participates(e.target)) {
      continue;
    }
    const Layer ls = e.source.layer;
    const Layer lt = e.target.layer;
    if (e.kind == EdgeKind::Adjacency && ls == Layer::Place && lt == Layer::Place) {
      pending.push_back({EdgeType::Rigidity, e.source, e.target, std::nullopt, false, {}});
    } else if (e.kind == EdgeKind::Inclusion && ls == Layer::Agent && lt == Layer::Place) {
      pending.push_back({EdgeType::PlaceAgent, e.target, e.source, std::nullopt, false, {}});
    } else if (e.kind == EdgeKind::Inclusion && ls == Layer::Object && lt == Layer::Place &&
               candidate_objects.count(e.source) > 0) {
      pending.push_back({EdgeType::PlaceObject, e.target, e.source, std::nullopt, false, {}});
    }
  }

  for (const NodeId& obj : candidate_objects) {
    for (const NodeId& v : graph.get<ObjectNode>(obj).vertex_ids) {
      if (participates(v)) {
        pending.push_back({EdgeType::Rigidity, obj, v, std::nullopt, false, {}});
      }
    }
  }

  for (std::size_t k = 0; k < loop_closures.size(); ++k) {
    const LoopClosure& lc = loop_closures[k];
    if (participates(lc.from) && participates(lc.to) && lc.from != lc.to) {
      pending.push_back({EdgeType::LoopClosure, lc.from, lc.to, lc.measurement, true, k});
    }
  }

  dg.candidate_edges.assign(candidates.size(), std::nullopt);
  std::vector<std::optional<std::size_t>> candidate_pending(candidates.size());
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const MergeCandidate& c = candidates[k];
    if (c.status == CandidateStatus::Invalid || !participates(c.a) || !participates(c.b)) {
      continue;
    }
    Pose meas = Pose::Identity();
    if (c.kind == CandidateKind::Object) {
      meas = frame_of(graph, c.a).inverse() * c.relative_transform * frame_of(graph, c.b);
    }
    candidate_pending[k] = pending.size();
    pending.push_back({EdgeType::MergeFactor, c.a, c.b, meas, true, k});
  }

  std::set<NodeId> used;
  for (const PendingEdge& e : pending) {
    used.insert(e.a);
    used.insert(e.b);
  }
  for (const NodeId& id : used) {
    dg.index[id] = dg.frame_ids.size();
    dg.frame_ids.push_back(id);
    dg.frames.push_back(frame_of(graph, id));
  }
  for (const PendingEdge& e : pending) {
    DeformationEdge edge;
    edge.type = e.type;
    edge.i = dg.index.at(e.a);
    edge.j = dg.index.at(e.b);
    edge.measurement =
        e.measurement ? *e.measurement : dg.frames[edge.i].inverse() * dg.frames[edge.j];
    edge.omega_diag = info.diagonal(e.type);
    edge.robust = e.robust;
    edge.source = e.source;
    if (e.type == EdgeType::MergeFactor) {
      dg.candidate_edges[*e.source] = dg.edges.size();
    }
    dg.edges.push_back(edge);
  }

  UnionFind uf(dg.frames.size());
  for (const DeformationEdge& e : dg.edges) {
    uf.unite(e.i, e.j);
  }
  for (std::size_t f = 0; f < dg.frames.size(); ++f) {
    if (uf.find(f) == f) {
      dg.anchors.push_back(f);
    }
  }
  return dg;
}

namespace {

// Information of the weak priors that keep components joined only by robust
// edges from drifting along their gauge when those edges are rejected.
constexpr double kGaugePriorInformation = 1e-8;

}  // namespace

RobustProblem deformation_problem(const DeformationGraph& dg) {
  RobustProblem problem;
  std::vector<bool> anchored(dg.frames.size(), false);
  for (const std::size_t a : dg.anchors) {
    anchored[a] = true;
  }
  for (std::size_t f = 0; f < dg.frames.size(); ++f) {
    problem.values.add(dg.frames[f], anchored[f]);
  }
  for (const DeformationEdge& e : dg.edges) {
    problem.residuals.push_back(std::make_shared<BetweenPoseResidual>(
        e.i, e.j, e.measurement, Matrix6(e.omega_diag.asDiagonal()), e.robust));
  }
  UnionFind trusted(dg.frames.size());
  for (const DeformationEdge& e : dg.edges) {
    if (!e.robust) {
      trusted.unite(e.i, e.j);
    }
  }
  for (std::size_t f = 0; f < dg.frames.size(); ++f) {
    if (trusted.find(f) == f && !anchored[f]) {
      problem.residuals.push_back(std::make_shared<PosePriorResidual>(
          f, dg.frames[f], Matrix6::Identity() * kGaugePriorInformation, false));
    }
  }
  return problem;
}

DeformationSolution optimize_deformation(const DeformationGraph& dg, const GncConfig& config) {
  DeformationSolution sol;
  sol.frames = dg.frames;
  sol.weights.assign(dg.edges.size(), 1.0);
  sol.inliers.assign(dg.edges.size(), true);
  if (dg.edges.empty()) {
    sol.converged = true;
    return sol;
  }
  const RobustProblem problem = deformation_problem(dg);
  sol.gnc = solve_gnc(problem, config);
  for (std::size_t f = 0; f < dg.frames.size(); ++f) {
    sol.frames[f] = sol.gnc.values.pose(f);
  }
  for (std::size_t e = 0; e < dg.edges.size(); ++e) {
    sol.weights[e] = sol.gnc.weights[e];
    sol.inliers[e] = sol.gnc.inliers[e];
  }
  sol.converged = sol.gnc.converged;
  sol.iterations = sol.gnc.iterations;
  for (std::size_t r = 0; r < problem.residuals.size(); ++r) {
    const double w = sol.gnc.weights[r];
    sol.initial_objective += w * problem.residuals[r]->squared_norm(problem.values);
    sol.final_objective += w * problem.residuals[r]->squared_norm(sol.gnc.values);
  }
  return sol;
}

std::vector<bool> candidate_mask(const DeformationGraph& dg, const DeformationSolution& sol) {
  std::vector<bool> mask(dg.candidate_edges.size(), false);
  for (std::size_t k = 0; k < mask.size(); ++k) {
    if (dg.candidate_edges[k]) {
      mask[k] = sol.inliers[*dg.candidate_edges[k]];
    }
  }
  return mask;
}

std::vector<MeshBinding> bind_mesh(const std::vector<Vector3>& control_positions,
                                   const std::vector<Vector3>& vertices, std::size_t b) {
  std::vector<MeshBinding> out(vertices.size());
  if (control_positions.empty() || b == 0) {
    return out;
  }
  const std::size_t k = std::min(b, control_positions.size());
  std::vector<std::pair<double, std::size_t>> dist(control_positions.size());
  for (std::size_t v = 0; v < vertices.size(); ++v) {
    for (std::size_t c = 0; c < control_positions.size(); ++c) {
      dist[c] = {(control_positions[c] - vertices[v]).norm(), c};
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    MeshBinding& binding = out[v];
    if (dist[0].first < 1e-12) {
      binding.controls = {dist[0].second};
      binding.weights = {1.0};
      continue;
    }
    double total = 0.0;
    for (std::size_t n = 0; n < k; ++n) {
      binding.controls.push_back(dist[n].second);
      binding.weights.push_back(1.0 / dist[n].first);
      total += binding.weights.back();
    }
    for (double& w : binding.weights) {
      w /= total;
    }
  }
  return out;
}

std::vector<Vector3> interpolate_mesh(const std::vector<Pose>& rest_frames,
                                      const std::vector<Pose>& solved_frames,
                                      const std::vector<MeshBinding>& bindings,
                                      const std::vector<Vector3>& vertices) {
  if (bindings.size() != vertices.size() || rest_frames.size() != solved_frames.size()) {
    throw std::invalid_argument("interpolate_mesh: size mismatch");
  }
  std::vector<Matrix3> rotation(rest_frames.size());
  for (std::size_t j = 0; j < rest_frames.size(); ++j) {
    rotation[j] = (solved_frames[j].rotation() * rest_frames[j].rotation().conjugate())
                      .toRotationMatrix();
  }
  std::vector<Vector3> out(vertices.size());
  for (std::size_t v = 0; v < vertices.size(); ++v) {
    const MeshBinding& b = bindings[v];
    if (b.controls.empty()) {
      out[v] = vertices[v];
      continue;
    }
    Vector3 sum = Vector3::Zero();
    for (std::size_t n = 0; n < b.controls.size(); ++n) {
      const std::size_t j = b.controls[n];
      const Vector3& g = rest_frames[j].translation();
      const Vector3& g_new = solved_frames[j].translation();
      sum += b.weights[n] * (rotation[j] * (vertices[v] - g) + g_new);
    }
    out[v] = sum;
  }
  return out;
}

void write_back(SceneGraph& graph, const DeformationGraph& dg, const std::vector<Pose>& solved) {
  if (solved.size() != dg.frames.size()) {
    throw std::invalid_argument("write_back: one solved frame per graph frame required");
  }
  std::map<RobotId, std::vector<std::size_t>> controls_by_robot;
  std::set<RobotId> robots;
  for (std::size_t f = 0; f < dg.frame_ids.size(); ++f) {
    const NodeId& id = dg.frame_ids[f];
    robots.insert(id.robot);
    if (id.layer == Layer::Mesh) {
      controls_by_robot[id.robot].push_back(f);
    }
  }

  for (const auto& [robot, controls] : controls_by_robot) {
    RobotInfo& info = graph.robot(robot);
    if (info.mesh_vertices.empty()) {
      continue;
    }
    std::vector<Vector3> rest_positions;
    std::vector<Pose> rest;
    std::vector<Pose> moved;
    for (const std::size_t f : controls) {
      rest_positions.push_back(dg.frames[f].translation());
      rest.push_back(dg.frames[f]);
      moved.push_back(solved[f]);
    }
    const auto bindings = bind_mesh(rest_positions, info.mesh_vertices);
    info.mesh_vertices = interpolate_mesh(rest, moved, bindings, info.mesh_vertices);
  }

  for (std::size_t f = 0; f < dg.frame_ids.size(); ++f) {
    const NodeId& id = dg.frame_ids[f];
    NodePayload payload = graph.node(id).payload;
    if (auto* agent = std::get_if<AgentNode>(&payload)) {
      agent->pose = solved[f];
    } else if (auto* place = std::get_if<PlaceNode>(&payload)) {
      place->position = solved[f].translation();
    } else if (auto* mesh = std::get_if<MeshNode>(&payload)) {
      mesh->position = solved[f].translation();
    } else {
      continue;
    }
    graph.set_payload(id, std::move(payload));
  }

  for (const RobotId r : robots) {
    for (const NodeId& obj : graph.live_nodes(Layer::Object, r)) {
      if (graph.recompute_object_geometry(obj)) {
        continue;
      }
      const auto it = dg.index.find(obj);
      if (it == dg.index.end()) {
        continue;
      }
      const Pose delta = solved[it->second] * dg.frames[it->second].inverse();
      ObjectNode node = graph.get<ObjectNode>(obj);
      node.centroid = delta * node.centroid;
      node.bbox = node.bbox.transformed(delta);
      graph.set_payload(obj, node);
    }
  }
}

void write_edgelist(std::ostream& out, const DeformationGraph& dg,
                    const std::vector<Pose>* solved) {
  const auto flags = out.flags();
  const auto precision = out.precision();
  out << std::setprecision(17);
  auto pose7 = [&](const Pose& p) {
    const auto a = p.to_array();
    for (std::size_t k = 0; k < 7; ++k) {
      out << ' ' << a[k];
    }
  };
  for (std::size_t f = 0; f < dg.frames.size(); ++f) {
    out << "FRAME " << dg.frame_ids[f].str();
    pose7(solved != nullptr ? (*solved)[f] : dg.frames[f]);
    out << '\n';
  }
  for (const DeformationEdge& e : dg.edges) {
    out << "EDGE " << edge_type_name(e.type) << ' ' << dg.frame_ids[e.i].str() << ' '
        << dg.frame_ids[e.j].str();
    pose7(e.measurement);
    for (int k = 0; k < 6; ++k) {
      out << ' ' << e.omega_diag[k];
    }
    out << '\n';
  }
  out.flags(flags);
  out.precision(precision);
}

}  // namespace sgfuse
