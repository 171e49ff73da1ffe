#include "sgfuse/frontend.h"

#include "sgfuse/serialization.h"

namespace sgfuse {

namespace {

void validate_update(const GraphUpdate& update) {
  const SceneGraph& g = update.graph;
  if (g.robots().size() != 1 || !g.has_robot(update.robot)) {
    throw ParseError("graph update for robot " + std::to_string(update.robot) +
                     " must describe exactly that robot");
  }
  if (g.robot(update.robot).frame != FrameStatus::Local) {
    throw ParseError("graph update for robot " + std::to_string(update.robot) +
                     " is not in the robot's local frame");
  }
  if (!g.journal().empty()) {
    throw ParseError("graph update for robot " + std::to_string(update.robot) +
                     " carries merge records");
  }
  for (const auto& [id, node] : g.nodes()) {
    if (id.robot != update.robot || !node.live()) {
      throw ParseError("graph update for robot " + std::to_string(update.robot) +
                       " contains foreign or merged node " + id.str());
    }
  }
  try {
    g.check_invariants();
  } catch (const SceneGraphError& e) {
    throw ParseError(std::string("graph update violates invariants: ") + e.what());
  }
}

}  // namespace

Json graph_update_to_json(const GraphUpdate& update) {
  return Json{{"robot", update.robot},
              {"sequence", update.sequence},
              {"graph", graph_to_json(update.graph)}};
}

GraphUpdate graph_update_from_json(const Json& value, const std::string& path) {
  GraphUpdate update;
  const std::uint64_t robot = get_uint(require(value, "robot", path), path + ".robot");
  if (robot > std::numeric_limits<RobotId>::max()) {
    throw ParseError(path + ".robot: out of range");
  }
  update.robot = static_cast<RobotId>(robot);
  update.sequence = get_uint(require(value, "sequence", path), path + ".sequence");
  update.graph = graph_from_json(require(value, "graph", path), path + ".graph");
  return update;
}

std::uint64_t BandwidthReport::total(Channel channel) const {
  std::uint64_t sum = 0;
  for (const auto& [robot, bytes] : per_robot) {
    sum += bytes[static_cast<std::size_t>(channel)];
  }
  return sum;
}

std::array<std::uint64_t, 2> update_channel_bytes(const GraphUpdate& update,
                                                  std::uint64_t message_bytes) {
  std::uint64_t mesh = 0;
  for (const auto& [id, node] : update.graph.nodes()) {
    if (id.layer == Layer::Mesh) {
      Json j = payload_to_json(node.payload);
      j["id"] = id.str();
      mesh += canonical_dump(j).size() + 1;
    }
  }
  for (const auto& [robot, info] : update.graph.robots()) {
    for (const auto& v : info.mesh_vertices) {
      mesh += canonical_dump(to_json(v)).size() + 1;
    }
  }
  mesh = std::min(mesh, message_bytes);
  return {message_bytes - mesh, mesh};
}

DiffStats Frontend::ingest(const GraphUpdate& update) {
  validate_update(update);
  const RobotId robot = update.robot;

  std::lock_guard lock(mutex_);
  DiffStats stats;
  const auto last = sequences_.find(robot);
  if (last != sequences_.end() && update.sequence <= last->second) {
    ++stale_;
    stats.stale = true;
    return stats;
  }

  const NodeId lo{robot, Layer::Agent, 0};
  for (auto it = graph_.nodes().lower_bound(lo);
       it != graph_.nodes().end() && it->first.robot == robot; ++it) {
    if (!update.graph.has_node(it->first)) {
      ++stats.nodes_removed;
    }
  }
  for (const auto& [id, node] : update.graph.nodes()) {
    if (!graph_.has_node(id)) {
      ++stats.nodes_added;
    } else if (graph_.node(id) == node) {
      ++stats.nodes_unchanged;
    } else {
      ++stats.nodes_changed;
    }
  }
  for (const Edge& e : graph_.edges()) {
    if (e.source.robot == robot && !update.graph.has_edge(e)) {
      ++stats.edges_removed;
    }
  }
  for (const Edge& e : update.graph.edges()) {
    if (graph_.has_edge(e)) {
      ++stats.edges_unchanged;
    } else {
      ++stats.edges_added;
    }
  }

  if (graph_.has_robot(robot)) {
    graph_.remove_robot(robot);
  }
  graph_.add_robot(update.graph.robot(robot));
  for (const auto& [id, node] : update.graph.nodes()) {
    graph_.add_node(id, node.payload);
  }
  for (const Edge& e : update.graph.edges()) {
    graph_.add_edge(e);
  }
  sequences_[robot] = update.sequence;
  return stats;
}

void Frontend::add_loop_closure(const LoopClosure& lc) {
  std::lock_guard lock(mutex_);
  if (loop_closure_index_.count(lc.id) > 0) {
    return;
  }
  loop_closure_index_[lc.id] = loop_closures_.size();
  loop_closures_.push_back(lc);
}

void Frontend::record_bandwidth(RobotId robot, Channel channel, std::uint64_t bytes) {
  std::lock_guard lock(mutex_);
  auto& counters = bandwidth_.per_robot[robot];
  counters[static_cast<std::size_t>(channel)] += bytes;
  bandwidth_.messages.push_back(MessageSize{robot, channel, bytes});
}

FrontendSnapshot Frontend::snapshot() const {
  std::lock_guard lock(mutex_);
  FrontendSnapshot snap;
  snap.graph = std::make_shared<const SceneGraph>(graph_);
  snap.loop_closures = std::make_shared<const std::vector<LoopClosure>>(loop_closures_);
  snap.sequences = sequences_;
  return snap;
}

std::size_t Frontend::stale_count() const {
  std::lock_guard lock(mutex_);
  return stale_;
}

BandwidthReport Frontend::bandwidth() const {
  std::lock_guard lock(mutex_);
  return bandwidth_;
}

}  // namespace sgfuse
