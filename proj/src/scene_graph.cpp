#include "sgfuse/scene_graph.h"

#include <algorithm>
#include <charconv>
#include <limits>
#include <sstream>

namespace sgfuse {

namespace {

using Code = SceneGraphError::Code;

[[noreturn]] void fail(Code code, const std::string& what) { throw SceneGraphError(code, what); }

std::uint64_t parse_uint(std::string_view text, std::string_view full) {
  std::uint64_t value = 0;
  const auto* begin = text.data();
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (text.empty() || ec != std::errc() || ptr != end) {
    throw std::invalid_argument("malformed node id '" + std::string(full) + "'");
  }
  return value;
}

Vector3 transform_point(const Pose& pose, const Vector3& p) { return pose * p; }

}  // namespace

std::string_view layer_name(Layer layer) {
  switch (layer) {
    case Layer::Agent:
      return "agent";
    case Layer::Object:
      return "object";
    case Layer::Place:
      return "place";
    case Layer::Room:
      return "room";
    case Layer::Mesh:
      return "mesh";
  }
  return "unknown";
}

std::optional<Layer> parse_layer(std::string_view name) {
  for (const Layer layer : kAllLayers) {
    if (layer_name(layer) == name) {
      return layer;
    }
  }
  return std::nullopt;
}

std::string NodeId::str() const {
  std::ostringstream ss;
  ss << robot << '/' << layer_name(layer) << '/' << index;
  return ss.str();
}

NodeId NodeId::parse(std::string_view text) {
  const auto first = text.find('/');
  const auto second = first == std::string_view::npos ? first : text.find('/', first + 1);
  if (second == std::string_view::npos) {
    throw std::invalid_argument("malformed node id '" + std::string(text) + "'");
  }
  const auto layer = parse_layer(text.substr(first + 1, second - first - 1));
  if (!layer) {
    throw std::invalid_argument("unknown layer in node id '" + std::string(text) + "'");
  }
  const std::uint64_t robot = parse_uint(text.substr(0, first), text);
  if (robot > std::numeric_limits<RobotId>::max()) {
    throw std::invalid_argument("robot id out of range in '" + std::string(text) + "'");
  }
  return NodeId{static_cast<RobotId>(robot), *layer, parse_uint(text.substr(second + 1), text)};
}

bool Aabb::contains(const Vector3& p, double tol) const {
  return ((p.array() >= min.array() - tol) && (p.array() <= max.array() + tol)).all();
}

bool Aabb::intersects(const Aabb& other) const {
  return (min.array() <= other.max.array()).all() && (other.min.array() <= max.array()).all();
}

Aabb Aabb::FromPoints(const std::vector<Vector3>& points) {
  Aabb box;
  if (points.empty()) {
    return box;
  }
  box.min = points.front();
  box.max = points.front();
  for (const auto& p : points) {
    box.min = box.min.cwiseMin(p);
    box.max = box.max.cwiseMax(p);
  }
  return box;
}

Aabb Aabb::Union(const Aabb& a, const Aabb& b) {
  return Aabb{a.min.cwiseMin(b.min), a.max.cwiseMax(b.max)};
}

Aabb Aabb::transformed(const Pose& pose) const {
  std::vector<Vector3> corners;
  corners.reserve(8);
  for (int i = 0; i < 8; ++i) {
    const Vector3 c((i & 1) ? max.x() : min.x(), (i & 2) ? max.y() : min.y(),
                    (i & 4) ? max.z() : min.z());
    corners.push_back(pose * c);
  }
  return FromPoints(corners);
}

Layer payload_layer(const NodePayload& payload) { return static_cast<Layer>(payload.index()); }

Edge Edge::Adjacent(const NodeId& a, const NodeId& b) {
  return a < b ? Edge{EdgeKind::Adjacency, a, b} : Edge{EdgeKind::Adjacency, b, a};
}

Edge Edge::Inclusion(const NodeId& child, const NodeId& parent) {
  return Edge{EdgeKind::Inclusion, child, parent};
}

bool inclusion_allowed(Layer child, Layer parent) {
  return (child == Layer::Object && parent == Layer::Place) ||
         (child == Layer::Agent && parent == Layer::Place) ||
         (child == Layer::Place && parent == Layer::Room);
}

RobotCapabilities RobotCapabilities::FromFlags(bool has_semantics, bool has_mesh) {
  RobotCapabilities caps;
  caps.has_semantics = has_semantics;
  caps.has_mesh = has_mesh;
  caps.layers_provided = {Layer::Agent, Layer::Place, Layer::Room};
  if (has_semantics) {
    caps.layers_provided.insert(Layer::Object);
  }
  if (has_mesh) {
    caps.layers_provided.insert(Layer::Mesh);
  }
  return caps;
}

void SceneGraph::add_robot(RobotInfo info) {
  if (robots_.count(info.id)) {
    fail(Code::DuplicateId, "robot " + std::to_string(info.id) + " already present");
  }
  robots_.emplace(info.id, std::move(info));
}

const RobotInfo& SceneGraph::robot(RobotId id) const {
  const auto it = robots_.find(id);
  if (it == robots_.end()) {
    fail(Code::UnknownRobot, "unknown robot " + std::to_string(id));
  }
  return it->second;
}

RobotInfo& SceneGraph::robot(RobotId id) {
  const auto it = robots_.find(id);
  if (it == robots_.end()) {
    fail(Code::UnknownRobot, "unknown robot " + std::to_string(id));
  }
  return it->second;
}

void SceneGraph::remove_robot(RobotId id) {
  robot(id);
  std::vector<NodeId> owned;
  for (const auto& [node_id, node] : nodes_) {
    if (node_id.robot == id) {
      owned.push_back(node_id);
    }
  }
  for (const auto& node_id : owned) {
    remove_node(node_id);
  }
  robots_.erase(id);
}

void SceneGraph::add_node(const NodeId& id, NodePayload payload) {
  if (nodes_.count(id)) {
    fail(Code::DuplicateId, "node " + id.str() + " already present");
  }
  if (payload_layer(payload) != id.layer) {
    fail(Code::InvalidEdge, "payload layer does not match id " + id.str());
  }
  const RobotInfo& info = robot(id.robot);
  if (!info.capabilities.layers_provided.count(id.layer)) {
    fail(Code::LayerNotProvided,
         "robot " + std::to_string(id.robot) + " does not provide layer " +
             std::string(layer_name(id.layer)));
  }
  nodes_.emplace(id, Node{std::move(payload), std::nullopt});
}

void SceneGraph::remove_node(const NodeId& id) {
  if (!nodes_.count(id)) {
    fail(Code::UnknownId, "unknown node " + id.str());
  }
  for (const auto& edge : incident_edges(id)) {
    remove_edge(edge);
  }
  incidence_.erase(id);
  nodes_.erase(id);
}

bool SceneGraph::is_live(const NodeId& id) const {
  const auto it = nodes_.find(id);
  return it != nodes_.end() && it->second.live();
}

const Node& SceneGraph::node(const NodeId& id) const {
  const auto it = nodes_.find(id);
  if (it == nodes_.end()) {
    fail(Code::UnknownId, "unknown node " + id.str());
  }
  return it->second;
}

void SceneGraph::set_payload(const NodeId& id, NodePayload payload) {
  const auto it = nodes_.find(id);
  if (it == nodes_.end()) {
    fail(Code::UnknownId, "unknown node " + id.str());
  }
  if (payload_layer(payload) != id.layer) {
    fail(Code::InvalidEdge, "payload layer does not match id " + id.str());
  }
  it->second.payload = std::move(payload);
}

void SceneGraph::add_edge(const Edge& edge) {
  for (const auto* end : {&edge.source, &edge.target}) {
    if (!is_live(*end)) {
      fail(Code::UnknownId, "edge endpoint " + end->str() + " is not a live node");
    }
  }
  if (edge.source == edge.target) {
    fail(Code::InvalidEdge, "self edge on " + edge.source.str());
  }
  if (edge.kind == EdgeKind::Adjacency) {
    if (edge.source.layer != edge.target.layer) {
      fail(Code::InvalidEdge, "adjacency edge must join nodes of one layer");
    }
    if (!(edge.source < edge.target)) {
      fail(Code::InvalidEdge, "adjacency edge must be stored with source < target");
    }
  } else if (!inclusion_allowed(edge.source.layer, edge.target.layer)) {
    fail(Code::InvalidEdge, "inclusion edge " + edge.source.str() + " -> " + edge.target.str() +
                                " does not point one layer up");
  }
  if (edges_.count(edge)) {
    fail(Code::DuplicateId, "edge " + edge.source.str() + " - " + edge.target.str() + " exists");
  }
  edges_.insert(edge);
  incidence_[edge.source].insert(edge);
  incidence_[edge.target].insert(edge);
}

void SceneGraph::remove_edge(const Edge& edge) {
  if (!edges_.erase(edge)) {
    fail(Code::UnknownId, "unknown edge " + edge.source.str() + " - " + edge.target.str());
  }
  for (const auto* end : {&edge.source, &edge.target}) {
    auto it = incidence_.find(*end);
    if (it != incidence_.end()) {
      it->second.erase(edge);
      if (it->second.empty()) {
        incidence_.erase(it);
      }
    }
  }
}

std::vector<Edge> SceneGraph::incident_edges(const NodeId& id) const {
  const auto it = incidence_.find(id);
  if (it == incidence_.end()) {
    return {};
  }
  return {it->second.begin(), it->second.end()};
}

MergeRecord SceneGraph::merge_nodes(const NodeId& keep, const NodeId& absorb) {
  if (keep == absorb) {
    fail(Code::SelfMerge, "cannot merge " + keep.str() + " into itself");
  }
  for (const auto* id : {&keep, &absorb}) {
    if (!has_node(*id)) {
      fail(Code::UnknownId, "unknown node " + id->str());
    }
    if (!is_live(*id)) {
      fail(Code::NodeMerged, "node " + id->str() + " is already merged");
    }
  }
  if (keep.layer != absorb.layer) {
    fail(Code::CrossLayerMerge, "cannot merge " + absorb.str() + " into " + keep.str());
  }
  if (keep.robot == absorb.robot) {
    fail(Code::SameRobotMerge, "merged nodes must come from distinct robots");
  }

  MergeRecord record;
  record.sequence = journal_.empty() ? 0 : journal_.back().sequence + 1;
  record.keep = keep;
  record.absorb = absorb;
  record.keep_before = node(keep).payload;

  for (const auto& edge : incident_edges(absorb)) {
    remove_edge(edge);
    record.removed_edges.push_back(edge);
  }
  for (const auto& edge : record.removed_edges) {
    const NodeId& other = edge.other(absorb);
    if (other == keep) {
      continue;
    }
    const Edge rewired = edge.kind == EdgeKind::Adjacency
                             ? Edge::Adjacent(keep, other)
                             : (edge.source == absorb ? Edge::Inclusion(keep, other)
                                                      : Edge::Inclusion(other, keep));
    if (!has_edge(rewired)) {
      add_edge(rewired);
      record.added_edges.push_back(rewired);
    }
  }

  if (keep.layer == Layer::Object) {
    ObjectNode merged = get<ObjectNode>(keep);
    const ObjectNode& other = get<ObjectNode>(absorb);
    merged.vertex_ids.insert(merged.vertex_ids.end(), other.vertex_ids.begin(),
                             other.vertex_ids.end());
    std::sort(merged.vertex_ids.begin(), merged.vertex_ids.end());
    merged.vertex_ids.erase(std::unique(merged.vertex_ids.begin(), merged.vertex_ids.end()),
                            merged.vertex_ids.end());
    merged.bbox = Aabb::Union(merged.bbox, other.bbox);
    merged.centroid = merged.bbox.center();
    nodes_.at(keep).payload = merged;
    recompute_object_geometry(keep);
  }

  nodes_.at(absorb).merged_into = keep;
  journal_.push_back(record);
  return record;
}

void SceneGraph::undo_merge(const MergeRecord& record) {
  if (journal_.empty()) {
    fail(Code::EmptyJournal, "no merge to undo");
  }
  const auto it = std::find(journal_.begin(), journal_.end(), record);
  if (it == journal_.end()) {
    fail(Code::StaleRecord, "merge record " + std::to_string(record.sequence) +
                                " is not in the journal");
  }

  std::set<NodeId> touched = {record.keep, record.absorb};
  for (const auto* edges : {&record.removed_edges, &record.added_edges}) {
    for (const auto& edge : *edges) {
      touched.insert(edge.source);
      touched.insert(edge.target);
    }
  }
  for (auto later = std::next(it); later != journal_.end(); ++later) {
    if (touched.count(later->keep) || touched.count(later->absorb)) {
      fail(Code::StaleRecord, "merge record " + std::to_string(record.sequence) +
                                  " is shadowed by later merge " +
                                  std::to_string(later->sequence));
    }
  }

  for (const auto& edge : record.added_edges) {
    remove_edge(edge);
  }
  nodes_.at(record.absorb).merged_into.reset();
  nodes_.at(record.keep).payload = record.keep_before;
  for (const auto& edge : record.removed_edges) {
    add_edge(edge);
  }
  journal_.erase(it);
}

std::vector<NodeId> SceneGraph::live_nodes(Layer layer, std::optional<RobotId> robot) const {
  std::vector<NodeId> out;
  for (const auto& [id, node] : nodes_) {
    if (id.layer == layer && node.live() && (!robot || id.robot == *robot)) {
      out.push_back(id);
    }
  }
  return out;
}

std::size_t SceneGraph::num_live_nodes(Layer layer) const {
  return live_nodes(layer).size();
}

void SceneGraph::transform_robot(RobotId robot_id, const Pose& transform) {
  RobotInfo& info = robot(robot_id);
  for (auto& p : info.mesh_vertices) {
    p = transform_point(transform, p);
  }
  for (auto& [id, node] : nodes_) {
    if (id.robot != robot_id) {
      continue;
    }
    std::visit(
        [&](auto& payload) {
          using T = std::decay_t<decltype(payload)>;
          if constexpr (std::is_same_v<T, AgentNode>) {
            payload.pose = transform * payload.pose;
          } else if constexpr (std::is_same_v<T, ObjectNode> || std::is_same_v<T, RoomNode>) {
            payload.centroid = transform_point(transform, payload.centroid);
            payload.bbox = payload.bbox.transformed(transform);
          } else if constexpr (std::is_same_v<T, PlaceNode>) {
            payload.position = transform_point(transform, payload.position);
          } else {
            payload.position = transform_point(transform, payload.position);
          }
        },
        node.payload);
  }
}

bool SceneGraph::recompute_object_geometry(const NodeId& object) {
  ObjectNode payload = get<ObjectNode>(object);
  std::vector<Vector3> points;
  for (const auto& vid : payload.vertex_ids) {
    const auto it = nodes_.find(vid);
    if (it != nodes_.end() && it->second.live() && vid.layer == Layer::Mesh) {
      points.push_back(std::get<MeshNode>(it->second.payload).position);
    }
  }
  if (points.empty()) {
    return false;
  }
  Vector3 sum = Vector3::Zero();
  for (const auto& p : points) {
    sum += p;
  }
  payload.centroid = sum / static_cast<double>(points.size());
  payload.bbox = Aabb::FromPoints(points);
  nodes_.at(object).payload = payload;
  return true;
}

void SceneGraph::check_invariants() const {
  auto violation = [](const std::string& what) { fail(Code::InvariantViolation, what); };

  std::set<NodeId> absorbed;
  for (const auto& record : journal_) {
    if (!absorbed.insert(record.absorb).second) {
      violation("node " + record.absorb.str() + " absorbed twice in journal");
    }
  }

  std::map<RobotId, double> last_stamp;
  for (const auto& [id, node] : nodes_) {
    if (!robots_.count(id.robot)) {
      violation("node " + id.str() + " belongs to unknown robot");
    }
    if (!robots_.at(id.robot).capabilities.layers_provided.count(id.layer)) {
      violation("node " + id.str() + " outside the robot's provided layers");
    }
    if (payload_layer(node.payload) != id.layer) {
      violation("node " + id.str() + " payload in wrong layer");
    }
    if (node.live() == (absorbed.count(id) > 0)) {
      violation("tombstone state of " + id.str() + " disagrees with merge journal");
    }
    if (!node.live() && incidence_.count(id)) {
      violation("tombstoned node " + id.str() + " still has edges");
    }
    if (const auto* agent = std::get_if<AgentNode>(&node.payload)) {
      auto [it, inserted] = last_stamp.try_emplace(id.robot, agent->timestamp);
      if (!inserted) {
        if (!(agent->timestamp > it->second)) {
          violation("agent timestamps of robot " + std::to_string(id.robot) +
                    " not strictly increasing at " + id.str());
        }
        it->second = agent->timestamp;
      }
    } else if (const auto* obj = std::get_if<ObjectNode>(&node.payload)) {
      if (!obj->bbox.valid()) {
        violation("object " + id.str() + " has inverted bounding box");
      }
      if (!obj->bbox.contains(obj->centroid, 1e-9)) {
        violation("object " + id.str() + " centroid outside its bounding box");
      }
    } else if (const auto* place = std::get_if<PlaceNode>(&node.payload)) {
      if (!(place->radius > 0.0)) {
        violation("place " + id.str() + " has non-positive radius");
      }
    } else if (const auto* room = std::get_if<RoomNode>(&node.payload)) {
      if (!room->bbox.valid()) {
        violation("room " + id.str() + " has inverted bounding box");
      }
    }
  }

  for (const auto& edge : edges_) {
    if (!is_live(edge.source) || !is_live(edge.target)) {
      violation("edge " + edge.source.str() + " - " + edge.target.str() +
                " references a dead node");
    }
    if (edge.kind == EdgeKind::Inclusion && !inclusion_allowed(edge.source.layer, edge.target.layer)) {
      violation("inclusion edge " + edge.source.str() + " -> " + edge.target.str() +
                " violates layer order");
    }
    if (edge.kind == EdgeKind::Adjacency &&
        (edge.source.layer != edge.target.layer || !(edge.source < edge.target))) {
      violation("malformed adjacency edge " + edge.source.str() + " - " + edge.target.str());
    }
  }
}

bool SceneGraph::operator==(const SceneGraph& other) const {
  return robots_ == other.robots_ && nodes_ == other.nodes_ && edges_ == other.edges_ &&
         journal_ == other.journal_;
}

}  // namespace sgfuse
