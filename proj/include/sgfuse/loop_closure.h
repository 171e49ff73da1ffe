#pragma once

#include <cstdint>
#include <string>

#include "sgfuse/json_io.h"
#include "sgfuse/liegroup.h"
#include "sgfuse/scene_graph.h"

namespace sgfuse {

/// Relative pose of agent `to` expressed in the frame of agent `from`.
struct LoopClosure {
  std::uint64_t id = 0;
  NodeId from;
  NodeId to;
  Pose measurement;
  Covariance6 covariance = Covariance6::Identity();

  bool intra_robot() const { return from.robot == to.robot; }
};

Json loop_closure_to_json(const LoopClosure& lc);
LoopClosure loop_closure_from_json(const Json& value, const std::string& path);

}  // namespace sgfuse
