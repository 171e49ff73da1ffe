#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sgfuse/config.h"
#include "sgfuse/pipeline.h"
#include "sgfuse/simulator.h"
#include "sgfuse/wire.h"

namespace sgfuse {

struct RunOptions {
  std::string out_dir;
  std::optional<std::string> record;    // update stream file
  std::optional<std::string> dump_dir;  // per-iteration state and edge lists
  bool timing = false;
  bool serial = false;
};

struct RunSummary {
  std::size_t iterations = 0;
  std::size_t failed_iterations = 0;
  std::string final_graph;  // canonical JSON
};

// Applies SGFUSE_SEED when set. Throws ParseError on a malformed value.
void apply_seed_override(ScenarioConfig& scenario);

// Session header carrying what a replay needs to rebuild the backend.
SessionHeader make_session_header(const ScenarioConfig& scenario);
SolverSpec solver_from_header(const SessionHeader& header);

// Simulates, runs the pipeline, and writes metrics.csv, final_graph.json and
// ground_truth.json (plus optional recording, dumps and timing.csv).
RunSummary run_scenario(const ScenarioConfig& scenario, const RunOptions& options);

// Replays a recorded stream whose first event is a session header. Writes
// final_graph.json and metrics.csv (with ground-truth columns when given).
RunSummary replay_events(const std::vector<Event>& events, const RunOptions& options,
                         const GroundTruth* truth);

// Reads a recording as NDJSON or length-prefixed frames, detected from the
// first byte.
std::vector<Event> read_recording(const std::string& path);
void write_recording(const std::string& path, const std::vector<Event>& events);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace sgfuse
