#pragma once

#include <string>
#include <string_view>

#include "sgfuse/json_io.h"
#include "sgfuse/scene_graph.h"

namespace sgfuse {

Json graph_to_json(const SceneGraph& graph);
SceneGraph graph_from_json(const Json& doc, const std::string& path);

// Canonical UTF-8 JSON: sorted nodes and edges, 17 significant digits.
std::string serialize(const SceneGraph& graph);
SceneGraph deserialize(std::string_view text);

Json payload_to_json(const NodePayload& payload);
NodePayload payload_from_json(Layer layer, const Json& value, const std::string& path);

}  // namespace sgfuse
