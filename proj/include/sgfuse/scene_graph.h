#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "sgfuse/liegroup.h"

namespace sgfuse {

enum class Layer : std::uint8_t { Agent = 0, Object = 1, Place = 2, Room = 3, Mesh = 4 };

inline constexpr std::array<Layer, 5> kAllLayers = {Layer::Agent, Layer::Object, Layer::Place,
                                                    Layer::Room, Layer::Mesh};

std::string_view layer_name(Layer layer);
std::optional<Layer> parse_layer(std::string_view name);

using RobotId = std::uint32_t;

struct NodeId {
  RobotId robot = 0;
  Layer layer = Layer::Agent;
  std::uint64_t index = 0;

  auto operator<=>(const NodeId&) const = default;

  // "<robot>/<layer>/<index>"
  std::string str() const;
  static NodeId parse(std::string_view text);
};

struct Aabb {
  Vector3 min = Vector3::Zero();
  Vector3 max = Vector3::Zero();

  bool operator==(const Aabb&) const = default;

  bool valid() const { return (min.array() <= max.array()).all(); }
  bool contains(const Vector3& p, double tol = 0.0) const;
  // Closed boxes: touching faces count as overlap.
  bool intersects(const Aabb& other) const;
  Vector3 center() const { return 0.5 * (min + max); }

  static Aabb FromPoints(const std::vector<Vector3>& points);
  static Aabb Union(const Aabb& a, const Aabb& b);
  // Axis-aligned hull of the transformed box corners.
  Aabb transformed(const Pose& pose) const;
};

struct AgentNode {
  Pose pose;
  double timestamp = 0.0;
  bool operator==(const AgentNode&) const = default;
};

struct ObjectNode {
  Vector3 centroid = Vector3::Zero();
  Aabb bbox;
  int label = 0;
  std::vector<NodeId> vertex_ids;  // Mesh layer nodes supporting this object
  bool operator==(const ObjectNode&) const = default;
};

struct PlaceNode {
  Vector3 position = Vector3::Zero();
  double radius = 1.0;
  bool operator==(const PlaceNode&) const = default;
};

struct RoomNode {
  Vector3 centroid = Vector3::Zero();
  Aabb bbox;
  bool operator==(const RoomNode&) const = default;
};

struct MeshNode {
  Vector3 position = Vector3::Zero();
  bool operator==(const MeshNode&) const = default;
};

// Alternative index equals the Layer value.
using NodePayload = std::variant<AgentNode, ObjectNode, PlaceNode, RoomNode, MeshNode>;

Layer payload_layer(const NodePayload& payload);

struct Node {
  NodePayload payload;
  std::optional<NodeId> merged_into;  // set while tombstoned by a merge
  bool operator==(const Node&) const = default;
  bool live() const { return !merged_into.has_value(); }
};

enum class EdgeKind : std::uint8_t { Adjacency = 0, Inclusion = 1 };

/// Adjacency edges are undirected and stored with source < target. Inclusion
/// edges point from child to parent (object->place, agent->place, place->room).
struct Edge {
  EdgeKind kind = EdgeKind::Adjacency;
  NodeId source;
  NodeId target;

  auto operator<=>(const Edge&) const = default;

  static Edge Adjacent(const NodeId& a, const NodeId& b);
  static Edge Inclusion(const NodeId& child, const NodeId& parent);
  bool touches(const NodeId& id) const { return source == id || target == id; }
  const NodeId& other(const NodeId& id) const { return source == id ? target : source; }
};

bool inclusion_allowed(Layer child, Layer parent);

struct RobotCapabilities {
  bool has_semantics = true;
  bool has_mesh = true;
  std::set<Layer> layers_provided;

  bool operator==(const RobotCapabilities&) const = default;

  // Layers derived from the two sensing flags.
  static RobotCapabilities FromFlags(bool has_semantics, bool has_mesh);
};

enum class FrameStatus : std::uint8_t { Local = 0, Global = 1 };

struct RobotInfo {
  RobotId id = 0;
  RobotCapabilities capabilities = RobotCapabilities::FromFlags(true, true);
  FrameStatus frame = FrameStatus::Local;
  // Dense mesh vertices (positions only), bound to Mesh layer control nodes.
  std::vector<Vector3> mesh_vertices;

  bool operator==(const RobotInfo&) const = default;
};

struct MergeRecord {
  std::uint64_t sequence = 0;
  NodeId keep;
  NodeId absorb;
  std::vector<Edge> removed_edges;
  std::vector<Edge> added_edges;
  NodePayload keep_before;

  bool operator==(const MergeRecord&) const = default;
};

class SceneGraphError : public std::runtime_error {
 public:
  enum class Code {
    DuplicateId,
    UnknownId,
    UnknownRobot,
    InvalidEdge,
    CrossLayerMerge,
    SelfMerge,
    SameRobotMerge,
    NodeMerged,
    EmptyJournal,
    StaleRecord,
    LayerNotProvided,
    InvariantViolation,
  };

  SceneGraphError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Code code() const { return code_; }

 private:
  Code code_;
};

namespace detail {
struct GraphAccess;
}  // namespace detail

class SceneGraph {
 public:
  void add_robot(RobotInfo info);
  bool has_robot(RobotId id) const { return robots_.count(id) > 0; }
  const RobotInfo& robot(RobotId id) const;
  RobotInfo& robot(RobotId id);
  const std::map<RobotId, RobotInfo>& robots() const { return robots_; }
  // Removes the robot together with all of its nodes and their incident edges.
  void remove_robot(RobotId id);

  void add_node(const NodeId& id, NodePayload payload);
  void remove_node(const NodeId& id);
  bool has_node(const NodeId& id) const { return nodes_.count(id) > 0; }
  bool is_live(const NodeId& id) const;
  const Node& node(const NodeId& id) const;
  void set_payload(const NodeId& id, NodePayload payload);

  template <typename T>
  const T& get(const NodeId& id) const {
    return std::get<T>(node(id).payload);
  }

  void add_edge(const Edge& edge);
  void remove_edge(const Edge& edge);
  bool has_edge(const Edge& edge) const { return edges_.count(edge) > 0; }
  std::vector<Edge> incident_edges(const NodeId& id) const;

  MergeRecord merge_nodes(const NodeId& keep, const NodeId& absorb);
  void undo_merge(const MergeRecord& record);

  const std::map<NodeId, Node>& nodes() const { return nodes_; }
  const std::set<Edge>& edges() const { return edges_; }
  const std::vector<MergeRecord>& journal() const { return journal_; }

  // Live nodes of one layer (optionally one robot), in id order.
  std::vector<NodeId> live_nodes(Layer layer, std::optional<RobotId> robot = std::nullopt) const;
  std::size_t num_live_nodes(Layer layer) const;

  // Rigidly moves every node and dense vertex owned by the robot.
  void transform_robot(RobotId robot, const Pose& transform);

  // Object centroid/bbox from the positions of its live supporting vertices.
  // Returns false (and leaves the node unchanged) when no vertex is available.
  bool recompute_object_geometry(const NodeId& object);

  // Throws SceneGraphError(InvariantViolation) describing the first violation.
  void check_invariants() const;

  bool operator==(const SceneGraph& other) const;

 private:
  friend struct detail::GraphAccess;

  std::map<RobotId, RobotInfo> robots_;
  std::map<NodeId, Node> nodes_;
  std::set<Edge> edges_;
  std::map<NodeId, std::set<Edge>> incidence_;
  std::vector<MergeRecord> journal_;
};

}  // namespace sgfuse
