#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include "sgfuse/json_io.h"
#include "sgfuse/loop_closure.h"
#include "sgfuse/scene_graph.h"

namespace sgfuse {

/// A robot's entire current local scene graph, sent periodically.
struct GraphUpdate {
  RobotId robot = 0;
  std::uint64_t sequence = 0;
  SceneGraph graph;
};

Json graph_update_to_json(const GraphUpdate& update);
GraphUpdate graph_update_from_json(const Json& value, const std::string& path);

struct DiffStats {
  std::size_t nodes_added = 0;
  std::size_t nodes_removed = 0;
  std::size_t nodes_changed = 0;
  std::size_t nodes_unchanged = 0;
  std::size_t edges_added = 0;
  std::size_t edges_removed = 0;
  std::size_t edges_unchanged = 0;
  bool stale = false;

  bool zero() const {
    return nodes_added == 0 && nodes_removed == 0 && nodes_changed == 0 && edges_added == 0 &&
           edges_removed == 0;
  }
};

enum class Channel : std::uint8_t { Graph = 0, MeshControl = 1, LoopClosureAux = 2 };

inline constexpr std::size_t kNumChannels = 3;

struct MessageSize {
  RobotId robot = 0;
  Channel channel = Channel::Graph;
  std::uint64_t bytes = 0;
};

struct BandwidthReport {
  std::map<RobotId, std::array<std::uint64_t, kNumChannels>> per_robot;
  std::vector<MessageSize> messages;

  std::uint64_t total(Channel channel) const;
};

// Bytes of one encoded update message attributed to the graph and
// mesh-control channels. The mesh share is the encoded size of the mesh layer
// nodes plus the dense vertices; the rest of the message counts as graph.
std::array<std::uint64_t, 2> update_channel_bytes(const GraphUpdate& update,
                                                  std::uint64_t message_bytes);

struct FrontendSnapshot {
  std::shared_ptr<const SceneGraph> graph;
  std::shared_ptr<const std::vector<LoopClosure>> loop_closures;
  std::map<RobotId, std::uint64_t> sequences;
};

/**
 * Union of the latest snapshot received from every robot, kept free of
 * merges and optimization. Ingest is single-writer; snapshot() may be called
 * from any thread and returns an immutable copy.
 */
class Frontend {
 public:
  // Replaces the robot's portion of the graph. Stale updates are dropped and
  // counted; malformed payloads throw ParseError without modifying state.
  DiffStats ingest(const GraphUpdate& update);
  // Loop closures are kept in arrival order; duplicates (same id) are ignored.
  void add_loop_closure(const LoopClosure& lc);
  void record_bandwidth(RobotId robot, Channel channel, std::uint64_t bytes);

  FrontendSnapshot snapshot() const;
  std::size_t stale_count() const;
  BandwidthReport bandwidth() const;

 private:
  mutable std::mutex mutex_;
  SceneGraph graph_;
  std::vector<LoopClosure> loop_closures_;
  std::map<std::uint64_t, std::size_t> loop_closure_index_;
  std::map<RobotId, std::uint64_t> sequences_;
  std::size_t stale_ = 0;
  BandwidthReport bandwidth_;
};

}  // namespace sgfuse
