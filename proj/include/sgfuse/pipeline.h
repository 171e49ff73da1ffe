#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <vector>

#include "sgfuse/backend.h"
#include "sgfuse/frontend.h"
#include "sgfuse/metrics.h"
#include "sgfuse/simulator.h"
#include "sgfuse/wire.h"

namespace sgfuse {

/// What a backend iteration saw and produced. The frontend counters are
/// captured when the tick event is ingested, so they do not depend on thread
/// timing.
struct IterationOutput {
  IterationReport report;
  FrontendSnapshot snapshot;
  BandwidthReport bandwidth;
  std::size_t stale = 0;
  std::shared_ptr<const SceneGraph> graph;  // published after the iteration
};

using IterationCallback = std::function<void(const IterationOutput&, const Backend&)>;

struct PipelineOptions {
  // Run each backend iteration inline at its tick instead of on a separate thread.
  bool serial = false;
};

struct PipelineResult {
  std::shared_ptr<const SceneGraph> graph;
  std::size_t iterations = 0;
  std::size_t failed_iterations = 0;
  BandwidthReport bandwidth;
  std::size_t stale = 0;
};

// Feeds the events through a frontend and runs a backend iteration at every
// tick. Session headers are ignored.
PipelineResult run_pipeline(const std::vector<Event>& events, Backend& backend,
                            const PipelineOptions& options,
                            const IterationCallback& on_iteration = {});

// Bytes of one event on the wire, split by channel.
void record_event_bandwidth(Frontend& frontend, const Event& event);

/// Metrics CSV, one row per backend iteration. The first line names the schema
/// version; wall-clock columns are kept out so runs compare byte for byte.
class MetricsCsv {
 public:
  MetricsCsv(std::ostream& out, std::vector<RobotId> robots, const GroundTruth* truth,
             double object_threshold);
  void write(const IterationOutput& output);

 private:
  std::ostream& out_;
  std::vector<RobotId> robots_;
  const GroundTruth* truth_;
  double threshold_;
};

// Per-stage wall-clock seconds, one row per iteration and stage.
void write_timing_header(std::ostream& out);
void write_timing(std::ostream& out, const IterationReport& report);

Json candidate_to_json(const MergeCandidate& c);
MergeCandidate candidate_from_json(const Json& value, const std::string& path);

/// Backend state dump: graph, loop closures, candidates, and the set of
/// initialized robots.
struct StateDump {
  std::uint64_t iteration = 0;
  SceneGraph graph;
  std::vector<LoopClosure> loop_closures;
  std::vector<MergeCandidate> candidates;
  std::set<RobotId> initialized;
  SolverSpec solver;
};

Json state_to_json(const StateDump& state);
// Accepts a state dump or a bare scene graph document.
StateDump state_from_json(const Json& doc, const std::string& path);

}  // namespace sgfuse
