#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <iostream>
#include <sstream>

#include "sgfuse/app.h"
#include "sgfuse/metrics.h"
#include "sgfuse/serialization.h"

using namespace sgfuse;

namespace {

int cmd_run(const std::string& scenario_path, const RunOptions& options) {
  ScenarioConfig scenario = load_scenario(scenario_path);
  apply_seed_override(scenario);
  const RunSummary s = run_scenario(scenario, options);
  spdlog::info("run '{}' seed {}: {} backend iterations ({} failed), outputs in {}",
               scenario.name, scenario.seed, s.iterations, s.failed_iterations, options.out_dir);
  return s.failed_iterations == 0 ? 0 : 3;
}

int cmd_replay(const std::string& input, const RunOptions& options,
               const std::string& truth_path) {
  const InputSource src = parse_input_source(input);
  std::vector<Event> events;
  if (src.kind == InputSource::Kind::Tcp) {
    TcpFrameListener listener(src.host, src.port);
    spdlog::info("listening on {}:{}", src.host, listener.port());
    events = listener.receive_all();
  } else {
    events = read_recording(src.path);
  }
  std::optional<GroundTruth> truth;
  if (!truth_path.empty()) {
    truth = ground_truth_from_json(parse_json(read_file(truth_path), truth_path), truth_path + ": $");
  }
  const RunSummary s = replay_events(events, options, truth ? &*truth : nullptr);
  spdlog::info("replayed {} events: {} backend iterations ({} failed)", events.size(),
               s.iterations, s.failed_iterations);
  return s.failed_iterations == 0 ? 0 : 3;
}

int cmd_send(const std::string& recording, const std::string& target) {
  const InputSource dst = parse_input_source(target);
  if (dst.kind != InputSource::Kind::Tcp) {
    throw std::invalid_argument("send: target must be tcp://host:port");
  }
  const auto events = read_recording(recording);
  send_frames_tcp(dst.host, dst.port, events);
  spdlog::info("sent {} events to {}:{}", events.size(), dst.host, dst.port);
  return 0;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

int cmd_eval(const std::string& est_path, const std::string& gt_path, double threshold) {
  const StateDump est = state_from_json(parse_json(read_file(est_path), est_path), est_path + ": $");
  const GroundTruth gt =
      ground_truth_from_json(parse_json(read_file(gt_path), gt_path), gt_path + ": $");
  const GraphEvaluation ev = evaluate_graph(est.graph, gt, threshold);
  std::cout << "metric,value\n";
  for (const auto& [robot, ate] : ev.ate) {
    std::cout << "ate_robot_" << robot << (ev.ate_global.at(robot) ? "" : "_local") << ','
              << fmt(ate) << '\n';
  }
  std::cout << "ate_multi," << (ev.ate_multi ? fmt(*ev.ate_multi) : "nan") << '\n';
  std::cout << "ate_odometry," << (ev.ate_odometry ? fmt(*ev.ate_odometry) : "nan") << '\n';
  std::cout << "objects_found_pct," << fmt(ev.objects.found) << '\n';
  std::cout << "objects_correct_pct," << fmt(ev.objects.correct) << '\n';
  std::cout << "objects_found_defined," << ev.objects.found_defined << '\n';
  std::cout << "objects_correct_defined," << ev.objects.correct_defined << '\n';
  std::cout << "objects_estimated," << ev.objects.estimated << '\n';
  std::cout << "objects_truth," << ev.objects.truth << '\n';
  std::cout << "places_estimated," << ev.places.count << '\n';
  std::cout << "place_err_mean," << fmt(ev.places.mean) << '\n';
  std::cout << "place_err_median," << fmt(ev.places.median) << '\n';
  std::cout << "place_err_max," << fmt(ev.places.max) << '\n';
  return 0;
}

int cmd_dump(const std::string& state_path, const std::string& format, const std::string& out) {
  const StateDump state =
      state_from_json(parse_json(read_file(state_path), state_path), state_path + ": $");
  std::ostringstream text;
  if (format == "json") {
    text << serialize(state.graph) << '\n';
  } else {
    const DeformationGraph dg = build_deformation_graph(
        state.graph, state.loop_closures, state.candidates, state.initialized,
        state.solver.information);
    write_edgelist(text, dg);
  }
  if (out.empty() || out == "-") {
    std::cout << text.str();
  } else {
    write_file(out, text.str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-robot scene graph fusion: simulate, fuse, replay and evaluate."};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Log debug output");

  RunOptions run_opts;
  std::string scenario_path;
  std::string record;
  std::string dump_dir;
  auto* run = app.add_subcommand("run", "Simulate a scenario and run the fusion pipeline");
  run->add_option("scenario", scenario_path, "Scenario JSON file")->required();
  run->add_option("-o,--out", run_opts.out_dir, "Output directory")->default_val("sgfuse_out");
  run->add_option("--record", record, "Record the update stream (.ndjson, otherwise framed)");
  run->add_option("--dump-dir", dump_dir, "Write per-iteration state and deformation graphs");
  run->add_flag("--timing", run_opts.timing, "Write per-stage wall-clock times to timing.csv");
  run->add_flag("--serial", run_opts.serial, "Run backend iterations inline at each tick");

  RunOptions replay_opts;
  std::string replay_input;
  std::string truth_path;
  std::string replay_dump;
  auto* replay = app.add_subcommand("replay", "Rebuild the backend from a recorded stream");
  replay->add_option("input", replay_input, "Recording path, file:<path> or tcp://host:port")
      ->required();
  replay->add_option("-o,--out", replay_opts.out_dir, "Output directory")
      ->default_val("sgfuse_replay");
  replay->add_option("--truth", truth_path, "Ground truth JSON for the metric columns");
  replay->add_option("--dump-dir", replay_dump, "Write per-iteration state and deformation graphs");
  replay->add_flag("--timing", replay_opts.timing, "Write per-stage wall-clock times");
  replay->add_flag("--serial", replay_opts.serial, "Run backend iterations inline");

  std::string send_file;
  std::string send_target;
  auto* send = app.add_subcommand("send", "Stream a recording to a listening replay");
  send->add_option("recording", send_file, "Recording path")->required();
  send->add_option("target", send_target, "tcp://host:port")->required();

  std::string est_path;
  std::string gt_path;
  double threshold = 1.0;
  auto* eval = app.add_subcommand("eval", "Evaluate a scene graph against ground truth");
  eval->add_option("estimate", est_path, "Scene graph or state dump JSON")->required();
  eval->add_option("truth", gt_path, "Ground truth JSON")->required();
  eval->add_option("--threshold", threshold, "Object distance threshold in meters")
      ->default_val(1.0)
      ->check(CLI::PositiveNumber);

  std::string state_path;
  std::string format = "json";
  std::string dump_out;
  auto* dump = app.add_subcommand("dump-graph", "Print a scene graph or its deformation graph");
  dump->add_option("state", state_path, "Scene graph or state dump JSON")->required();
  dump->add_option("--format", format, "json or edgelist")
      ->default_val("json")
      ->check(CLI::IsMember({"json", "edgelist"}));
  dump->add_option("-o,--out", dump_out, "Output file (default stdout)");

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);
  spdlog::set_default_logger(spdlog::stderr_color_mt("sgfuse"));
  spdlog::set_pattern("[%l] %v");

  try {
    if (*run) {
      if (!record.empty()) run_opts.record = record;
      if (!dump_dir.empty()) run_opts.dump_dir = dump_dir;
      return cmd_run(scenario_path, run_opts);
    }
    if (*replay) {
      if (!replay_dump.empty()) replay_opts.dump_dir = replay_dump;
      return cmd_replay(replay_input, replay_opts, truth_path);
    }
    if (*send) {
      return cmd_send(send_file, send_target);
    }
    if (*eval) {
      return cmd_eval(est_path, gt_path, threshold);
    }
    if (*dump) {
      return cmd_dump(state_path, format, dump_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "sgfuse: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
