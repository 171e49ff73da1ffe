#include "sgfuse/app.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sgfuse/serialization.h"

namespace sgfuse {

namespace fs = std::filesystem;

namespace {

std::string dump_name(const std::string& stem, std::uint64_t index, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%04llu%s", stem.c_str(),
                static_cast<unsigned long long>(index), ext);
  return buf;
}

std::vector<RobotId> header_robots(const SessionHeader& header) {
  std::vector<RobotId> out;
  if (header.config.contains("robots")) {
    const Json& arr = get_array(header.config["robots"], "session.config.robots");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      out.push_back(static_cast<RobotId>(
          get_uint(arr[i], "session.config.robots[" + std::to_string(i) + "]")));
    }
  }
  return out;
}

RunSummary drive(const std::vector<Event>& events, const SolverSpec& solver,
                 const std::vector<RobotId>& robots, const GroundTruth* truth,
                 double threshold, const RunOptions& options) {
  fs::create_directories(options.out_dir);
  if (options.dump_dir) {
    fs::create_directories(*options.dump_dir);
  }
  std::ofstream metrics(fs::path(options.out_dir) / "metrics.csv", std::ios::binary);
  if (!metrics) {
    throw std::runtime_error("cannot write metrics.csv in '" + options.out_dir + "'");
  }
  std::ofstream timing;
  if (options.timing) {
    timing.open(fs::path(options.out_dir) / "timing.csv", std::ios::binary);
    write_timing_header(timing);
  }
  MetricsCsv csv(metrics, robots, truth, threshold);

  Backend backend(solver);
  auto on_iteration = [&](const IterationOutput& out, const Backend& b) {
    csv.write(out);
    if (options.timing) {
      write_timing(timing, out.report);
    }
    if (options.dump_dir && out.graph) {
      StateDump state;
      state.iteration = out.report.index;
      state.graph = *out.graph;
      state.loop_closures = *out.snapshot.loop_closures;
      state.candidates = out.report.candidates;
      state.initialized = out.report.initialized;
      state.solver = b.spec();
      write_file((fs::path(*options.dump_dir) / dump_name("state", out.report.index, ".json")).string(),
                 canonical_dump(state_to_json(state)) + "\n");
      if (out.report.ok()) {
        std::ostringstream edges;
        write_edgelist(edges, b.last_deformation(), &b.last_solution());
        write_file(
            (fs::path(*options.dump_dir) / dump_name("deformation", out.report.index, ".txt"))
                .string(),
            edges.str());
      }
    }
  };
  PipelineOptions popts;
  popts.serial = options.serial;
  const PipelineResult result = run_pipeline(events, backend, popts, on_iteration);

  RunSummary summary;
  summary.iterations = result.iterations;
  summary.failed_iterations = result.failed_iterations;
  const SceneGraph empty;
  summary.final_graph = serialize(result.graph ? *result.graph : empty);
  write_file((fs::path(options.out_dir) / "final_graph.json").string(), summary.final_graph + "\n");
  return summary;
}

}  // namespace

void apply_seed_override(ScenarioConfig& scenario) {
  const char* env = std::getenv("SGFUSE_SEED");
  if (env == nullptr || *env == '\0') {
    return;
  }
  try {
    std::size_t used = 0;
    const unsigned long long seed = std::stoull(env, &used, 10);
    if (used != std::string(env).size()) {
      throw std::invalid_argument("trailing characters");
    }
    scenario.seed = seed;
  } catch (const std::exception&) {
    throw ParseError(std::string("SGFUSE_SEED: expected a non-negative integer, got '") + env + "'");
  }
}

SessionHeader make_session_header(const ScenarioConfig& scenario) {
  Json robots = Json::array();
  for (const RobotSpec& r : scenario.robots) {
    robots.push_back(r.id);
  }
  return SessionHeader{Json{{"scenario", scenario.name},
                            {"seed", scenario.seed},
                            {"robots", robots},
                            {"object_threshold", scenario.object_threshold},
                            {"solver", solver_to_json(scenario.solver)}}};
}

SolverSpec solver_from_header(const SessionHeader& header) {
  return solver_from_json(require(header.config, "solver", "session.config"),
                          "session.config.solver");
}

RunSummary run_scenario(const ScenarioConfig& scenario, const RunOptions& options) {
  SimulationOutput sim = simulate(scenario);
  std::vector<Event> events;
  events.reserve(sim.events.size() + 1);
  events.push_back(make_session_header(scenario));
  events.insert(events.end(), sim.events.begin(), sim.events.end());
  if (options.record) {
    write_recording(*options.record, events);
  }
  fs::create_directories(options.out_dir);
  write_file((fs::path(options.out_dir) / "ground_truth.json").string(),
             canonical_dump(ground_truth_to_json(sim.truth)) + "\n");
  std::vector<RobotId> robots;
  for (const RobotSpec& r : scenario.robots) {
    robots.push_back(r.id);
  }
  std::sort(robots.begin(), robots.end());
  return drive(events, scenario.solver, robots, &sim.truth, scenario.object_threshold, options);
}

RunSummary replay_events(const std::vector<Event>& events, const RunOptions& options,
                         const GroundTruth* truth) {
  if (events.empty() || !std::holds_alternative<SessionHeader>(events.front())) {
    throw ParseError("replay: stream must start with a session header");
  }
  const auto& header = std::get<SessionHeader>(events.front());
  double threshold = 1.0;
  if (header.config.contains("object_threshold")) {
    threshold = get_double(header.config["object_threshold"], "session.config.object_threshold");
  }
  return drive(events, solver_from_header(header), header_robots(header), truth, threshold,
               options);
}

std::vector<Event> read_recording(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open '" + path + "'");
  }
  const int first = in.peek();
  if (first == '{' || first == ' ' || first == '\n') {
    return read_ndjson(in, path);
  }
  return read_frames(in, path);
}

void write_recording(const std::string& path, const std::vector<Event>& events) {
  const fs::path p(path);
  if (p.has_parent_path()) {
    fs::create_directories(p.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write '" + path + "'");
  }
  if (p.extension() == ".ndjson" || p.extension() == ".jsonl") {
    write_ndjson(out, events);
  } else {
    write_frames(out, events);
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open '" + path + "'");
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write '" + path + "'");
  }
  out << content;
}

}  // namespace sgfuse
