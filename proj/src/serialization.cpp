#include "sgfuse/serialization.h"

namespace sgfuse {

namespace {

std::string idx(const std::string& path, std::size_t i) {
  return path + "[" + std::to_string(i) + "]";
}

NodeId node_id_from_json(const Json& value, const std::string& path) {
  try {
    return NodeId::parse(get_string(value, path));
  } catch (const std::invalid_argument& e) {
    throw ParseError(path + ": " + e.what());
  }
}

Json edge_to_json(const Edge& edge) {
  return Json{{"kind", edge.kind == EdgeKind::Adjacency ? "adjacency" : "inclusion"},
              {"source", edge.source.str()},
              {"target", edge.target.str()}};
}

Edge edge_from_json(const Json& value, const std::string& path) {
  const std::string kind = get_string(require(value, "kind", path), path + ".kind");
  Edge edge;
  if (kind == "adjacency") {
    edge.kind = EdgeKind::Adjacency;
  } else if (kind == "inclusion") {
    edge.kind = EdgeKind::Inclusion;
  } else {
    throw ParseError(path + ".kind: unknown edge kind '" + kind + "'");
  }
  edge.source = node_id_from_json(require(value, "source", path), path + ".source");
  edge.target = node_id_from_json(require(value, "target", path), path + ".target");
  return edge;
}

Json edges_to_json(const std::vector<Edge>& edges) {
  Json arr = Json::array();
  for (const auto& e : edges) {
    arr.push_back(edge_to_json(e));
  }
  return arr;
}

std::vector<Edge> edges_from_json(const Json& value, const std::string& path) {
  std::vector<Edge> edges;
  const Json& arr = get_array(value, path);
  for (std::size_t i = 0; i < arr.size(); ++i) {
    edges.push_back(edge_from_json(arr[i], idx(path, i)));
  }
  return edges;
}

Json aabb_fields(Json j, const Aabb& box) {
  j["bbox_min"] = to_json(box.min);
  j["bbox_max"] = to_json(box.max);
  return j;
}

Aabb aabb_from_json(const Json& value, const std::string& path) {
  return Aabb{vector3_from_json(require(value, "bbox_min", path), path + ".bbox_min"),
              vector3_from_json(require(value, "bbox_max", path), path + ".bbox_max")};
}

}  // namespace

namespace detail {

struct GraphAccess {
  static std::map<NodeId, Node>& nodes(SceneGraph& g) { return g.nodes_; }
  static std::vector<MergeRecord>& journal(SceneGraph& g) { return g.journal_; }
};

}  // namespace detail

Json payload_to_json(const NodePayload& payload) {
  return std::visit(
      [](const auto& p) -> Json {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, AgentNode>) {
          return Json{{"pose", to_json(p.pose)}, {"timestamp", p.timestamp}};
        } else if constexpr (std::is_same_v<T, ObjectNode>) {
          Json vertices = Json::array();
          for (const auto& v : p.vertex_ids) {
            vertices.push_back(v.str());
          }
          return aabb_fields(Json{{"centroid", to_json(p.centroid)},
                                  {"label", p.label},
                                  {"vertices", vertices}},
                             p.bbox);
        } else if constexpr (std::is_same_v<T, PlaceNode>) {
          return Json{{"position", to_json(p.position)}, {"radius", p.radius}};
        } else if constexpr (std::is_same_v<T, RoomNode>) {
          return aabb_fields(Json{{"centroid", to_json(p.centroid)}}, p.bbox);
        } else {
          return Json{{"position", to_json(p.position)}};
        }
      },
      payload);
}

NodePayload payload_from_json(Layer layer, const Json& value, const std::string& path) {
  auto field = [&](const char* key) -> const Json& { return require(value, key, path); };
  auto sub = [&](const char* key) { return path + "." + key; };
  switch (layer) {
    case Layer::Agent:
      return AgentNode{pose_from_json(field("pose"), sub("pose")),
                       get_double(field("timestamp"), sub("timestamp"))};
    case Layer::Object: {
      ObjectNode obj;
      obj.centroid = vector3_from_json(field("centroid"), sub("centroid"));
      obj.bbox = aabb_from_json(value, path);
      const std::int64_t label = get_int(field("label"), sub("label"));
      if (label < std::numeric_limits<int>::min() || label > std::numeric_limits<int>::max()) {
        throw ParseError(sub("label") + ": out of range");
      }
      obj.label = static_cast<int>(label);
      const Json& verts = get_array(field("vertices"), sub("vertices"));
      for (std::size_t i = 0; i < verts.size(); ++i) {
        obj.vertex_ids.push_back(node_id_from_json(verts[i], idx(sub("vertices"), i)));
      }
      return obj;
    }
    case Layer::Place:
      return PlaceNode{vector3_from_json(field("position"), sub("position")),
                       get_double(field("radius"), sub("radius"))};
    case Layer::Room:
      return RoomNode{vector3_from_json(field("centroid"), sub("centroid")),
                      aabb_from_json(value, path)};
    case Layer::Mesh:
      return MeshNode{vector3_from_json(field("position"), sub("position"))};
  }
  throw ParseError(path + ": unknown layer");
}

Json graph_to_json(const SceneGraph& graph) {
  Json doc = Json::object();

  Json layers = Json::array();
  for (const Layer layer : kAllLayers) {
    layers.push_back(std::string(layer_name(layer)));
  }
  doc["layers"] = layers;

  Json robots = Json::array();
  for (const auto& [id, info] : graph.robots()) {
    Json provided = Json::array();
    for (const Layer layer : info.capabilities.layers_provided) {
      provided.push_back(std::string(layer_name(layer)));
    }
    Json vertices = Json::array();
    for (const auto& v : info.mesh_vertices) {
      vertices.push_back(to_json(v));
    }
    robots.push_back(Json{{"id", id},
                          {"has_semantics", info.capabilities.has_semantics},
                          {"has_mesh", info.capabilities.has_mesh},
                          {"layers", provided},
                          {"frame", info.frame == FrameStatus::Global ? "global" : "local"},
                          {"mesh_vertices", vertices}});
  }
  doc["robots"] = robots;

  Json nodes = Json::array();
  for (const auto& [id, node] : graph.nodes()) {
    Json j = payload_to_json(node.payload);
    j["id"] = id.str();
    if (node.merged_into) {
      j["merged_into"] = node.merged_into->str();
    }
    nodes.push_back(j);
  }
  doc["nodes"] = nodes;

  doc["edges"] = edges_to_json({graph.edges().begin(), graph.edges().end()});

  Json merges = Json::array();
  for (const auto& record : graph.journal()) {
    merges.push_back(Json{{"sequence", record.sequence},
                          {"keep", record.keep.str()},
                          {"absorb", record.absorb.str()},
                          {"removed_edges", edges_to_json(record.removed_edges)},
                          {"added_edges", edges_to_json(record.added_edges)},
                          {"keep_before", payload_to_json(record.keep_before)}});
  }
  doc["merges"] = merges;
  return doc;
}

SceneGraph graph_from_json(const Json& doc, const std::string& path) {
  SceneGraph graph;

  const Json& layers = get_array(require(doc, "layers", path), path + ".layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (!parse_layer(get_string(layers[i], idx(path + ".layers", i)))) {
      throw ParseError(idx(path + ".layers", i) + ": unknown layer");
    }
  }

  const std::string rpath = path + ".robots";
  const Json& robots = get_array(require(doc, "robots", path), rpath);
  for (std::size_t i = 0; i < robots.size(); ++i) {
    const std::string p = idx(rpath, i);
    const Json& r = robots[i];
    RobotInfo info;
    const std::uint64_t id = get_uint(require(r, "id", p), p + ".id");
    if (id > std::numeric_limits<RobotId>::max()) {
      throw ParseError(p + ".id: out of range");
    }
    info.id = static_cast<RobotId>(id);
    info.capabilities.has_semantics =
        get_bool(require(r, "has_semantics", p), p + ".has_semantics");
    info.capabilities.has_mesh = get_bool(require(r, "has_mesh", p), p + ".has_mesh");
    const Json& provided = get_array(require(r, "layers", p), p + ".layers");
    for (std::size_t k = 0; k < provided.size(); ++k) {
      const auto layer = parse_layer(get_string(provided[k], idx(p + ".layers", k)));
      if (!layer) {
        throw ParseError(idx(p + ".layers", k) + ": unknown layer");
      }
      info.capabilities.layers_provided.insert(*layer);
    }
    const std::string frame = get_string(require(r, "frame", p), p + ".frame");
    if (frame != "local" && frame != "global") {
      throw ParseError(p + ".frame: expected 'local' or 'global'");
    }
    info.frame = frame == "global" ? FrameStatus::Global : FrameStatus::Local;
    const Json& verts = get_array(require(r, "mesh_vertices", p), p + ".mesh_vertices");
    info.mesh_vertices.reserve(verts.size());
    for (std::size_t k = 0; k < verts.size(); ++k) {
      info.mesh_vertices.push_back(vector3_from_json(verts[k], idx(p + ".mesh_vertices", k)));
    }
    if (graph.has_robot(info.id)) {
      throw ParseError(p + ".id: duplicate robot");
    }
    graph.add_robot(std::move(info));
  }

  const std::string npath = path + ".nodes";
  const Json& nodes = get_array(require(doc, "nodes", path), npath);
  std::vector<std::pair<NodeId, NodeId>> tombstones;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const std::string p = idx(npath, i);
    const NodeId id = node_id_from_json(require(nodes[i], "id", p), p + ".id");
    try {
      graph.add_node(id, payload_from_json(id.layer, nodes[i], p));
    } catch (const SceneGraphError& e) {
      throw ParseError(p + ": " + e.what());
    }
    if (nodes[i].contains("merged_into")) {
      tombstones.emplace_back(id, node_id_from_json(nodes[i]["merged_into"], p + ".merged_into"));
    }
  }

  const std::vector<Edge> edges = edges_from_json(require(doc, "edges", path), path + ".edges");
  for (std::size_t i = 0; i < edges.size(); ++i) {
    try {
      graph.add_edge(edges[i]);
    } catch (const SceneGraphError& e) {
      throw ParseError(idx(path + ".edges", i) + ": " + e.what());
    }
  }

  for (const auto& [id, keep] : tombstones) {
    if (!graph.has_node(keep)) {
      throw ParseError(npath + ": node " + id.str() + " merged into unknown " + keep.str());
    }
    detail::GraphAccess::nodes(graph).at(id).merged_into = keep;
  }

  const std::string mpath = path + ".merges";
  const Json& merges = get_array(require(doc, "merges", path), mpath);
  for (std::size_t i = 0; i < merges.size(); ++i) {
    const std::string p = idx(mpath, i);
    const Json& m = merges[i];
    MergeRecord record;
    record.sequence = get_uint(require(m, "sequence", p), p + ".sequence");
    record.keep = node_id_from_json(require(m, "keep", p), p + ".keep");
    record.absorb = node_id_from_json(require(m, "absorb", p), p + ".absorb");
    record.removed_edges = edges_from_json(require(m, "removed_edges", p), p + ".removed_edges");
    record.added_edges = edges_from_json(require(m, "added_edges", p), p + ".added_edges");
    record.keep_before =
        payload_from_json(record.keep.layer, require(m, "keep_before", p), p + ".keep_before");
    detail::GraphAccess::journal(graph).push_back(std::move(record));
  }

  try {
    graph.check_invariants();
  } catch (const SceneGraphError& e) {
    throw ParseError(path + ": " + e.what());
  }
  return graph;
}

std::string serialize(const SceneGraph& graph) { return canonical_dump(graph_to_json(graph)); }

SceneGraph deserialize(std::string_view text) {
  return graph_from_json(parse_json(text, "scene graph"), "$");
}

}  // namespace sgfuse
