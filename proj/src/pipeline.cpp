#include "sgfuse/pipeline.h"

#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <mutex>
#include <thread>

#include "sgfuse/serialization.h"

namespace sgfuse {

namespace {

struct TickItem {
  FrontendSnapshot snapshot;
  BandwidthReport bandwidth;
  std::size_t stale = 0;
};

std::string num(double v) {
  if (std::isnan(v)) {
    return "nan";
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::string num(std::optional<double> v) { return v ? num(*v) : "nan"; }

const char* kind_name(CandidateKind k) { return k == CandidateKind::Place ? "place" : "object"; }

const char* status_name(CandidateStatus s) {
  switch (s) {
    case CandidateStatus::Proposed:
      return "proposed";
    case CandidateStatus::Valid:
      return "valid";
    case CandidateStatus::Invalid:
      return "invalid";
  }
  return "proposed";
}

}  // namespace

void record_event_bandwidth(Frontend& frontend, const Event& event) {
  if (const auto* update = std::get_if<GraphUpdate>(&event)) {
    const auto bytes = update_channel_bytes(*update, encode_event(event).size());
    frontend.record_bandwidth(update->robot, Channel::Graph, bytes[0]);
    frontend.record_bandwidth(update->robot, Channel::MeshControl, bytes[1]);
  } else if (const auto* lc = std::get_if<LoopClosure>(&event)) {
    frontend.record_bandwidth(lc->to.robot, Channel::LoopClosureAux, encode_event(event).size());
  }
}

PipelineResult run_pipeline(const std::vector<Event>& events, Backend& backend,
                            const PipelineOptions& options,
                            const IterationCallback& on_iteration) {
  Frontend frontend;
  PipelineResult result;

  auto run_one = [&](const TickItem& item) {
    IterationOutput out;
    out.report = backend.iterate(item.snapshot);
    out.snapshot = item.snapshot;
    out.bandwidth = item.bandwidth;
    out.stale = item.stale;
    out.graph = backend.graph();
    ++result.iterations;
    if (!out.report.ok()) {
      ++result.failed_iterations;
    }
    if (on_iteration) {
      on_iteration(out, backend);
    }
  };

  std::mutex mutex;
  std::condition_variable cv;
  std::deque<TickItem> queue;
  bool closed = false;
  std::exception_ptr backend_error;
  std::thread worker;
  if (!options.serial) {
    worker = std::thread([&] {
      try {
        for (;;) {
          TickItem item;
          {
            std::unique_lock<std::mutex> lock(mutex);
            cv.wait(lock, [&] { return closed || !queue.empty(); });
            if (queue.empty()) {
              return;
            }
            item = std::move(queue.front());
            queue.pop_front();
          }
          run_one(item);
        }
      } catch (...) {
        backend_error = std::current_exception();
      }
    });
  }

  auto close_worker = [&] {
    if (worker.joinable()) {
      {
        std::lock_guard<std::mutex> lock(mutex);
        closed = true;
      }
      cv.notify_all();
      worker.join();
    }
  };

  try {
    for (const Event& event : events) {
      record_event_bandwidth(frontend, event);
      if (const auto* update = std::get_if<GraphUpdate>(&event)) {
        frontend.ingest(*update);
      } else if (const auto* lc = std::get_if<LoopClosure>(&event)) {
        frontend.add_loop_closure(*lc);
      } else if (std::holds_alternative<BackendTick>(event)) {
        TickItem item{frontend.snapshot(), frontend.bandwidth(), frontend.stale_count()};
        if (options.serial) {
          run_one(item);
        } else {
          {
            std::lock_guard<std::mutex> lock(mutex);
            queue.push_back(std::move(item));
          }
          cv.notify_one();
        }
      }
    }
  } catch (...) {
    close_worker();
    throw;
  }
  close_worker();
  if (backend_error) {
    std::rethrow_exception(backend_error);
  }
  result.graph = backend.graph();
  result.bandwidth = frontend.bandwidth();
  result.stale = frontend.stale_count();
  return result;
}

MetricsCsv::MetricsCsv(std::ostream& out, std::vector<RobotId> robots, const GroundTruth* truth,
                       double object_threshold)
    : out_(out), robots_(std::move(robots)), truth_(truth), threshold_(object_threshold) {
  out_ << "# sgfuse-metrics v1\n";
  out_ << "iteration,status,robots_initialized";
  if (truth_) {
    for (const RobotId r : robots_) {
      out_ << ",ate_robot_" << r;
    }
    out_ << ",ate_multi,ate_odometry,objects_found_pct,objects_correct_pct,objects_found_defined,"
            "objects_correct_defined,objects_estimated,objects_truth,place_err_mean,"
            "place_err_median,place_err_max,frame_err_trans_max,frame_err_rot_deg_max,"
            "lc_outliers_rejected,lc_outliers_accepted,lc_inliers_accepted,lc_inliers_rejected";
  }
  out_ << ",live_objects,live_places,candidates_proposed,candidates_valid,merges_applied,"
          "merges_undone,merges_skipped,valid_ratio,realigned,lc_total,lc_accepted,"
          "deformation_frames,deformation_edges,objective_before,objective_after,"
          "objective_increased,bw_graph,bw_mesh,bw_aux,stale_updates\n";
}

void MetricsCsv::write(const IterationOutput& o) {
  const IterationReport& r = o.report;
  out_ << r.index << ',' << (r.ok() ? "ok" : "failed:" + r.failed_stage) << ','
       << r.initialized.size();
  if (truth_) {
    std::optional<GraphEvaluation> ev;
    if (o.graph) {
      ev = evaluate_graph(*o.graph, *truth_, threshold_);
    }
    for (const RobotId robot : robots_) {
      out_ << ',';
      if (ev && ev->ate.count(robot)) {
        out_ << num(ev->ate.at(robot));
      } else {
        out_ << "nan";
      }
    }
    double frame_t = 0.0;
    double frame_r = 0.0;
    if (!r.initialized.empty() && truth_->robots.count(r.alignment.root)) {
      const Pose root = truth_->robots.at(r.alignment.root).frame;
      for (const auto& [robot, est] : r.alignment.frames) {
        if (truth_->robots.count(robot) == 0) {
          continue;
        }
        const Pose gt = root.inverse() * truth_->robots.at(robot).frame;
        const Pose err = est.inverse() * gt;
        frame_t = std::max(frame_t, (est.translation() - gt.translation()).norm());
        frame_r = std::max(frame_r, rotation_angle(err) * 180.0 / M_PI);
      }
    }
    std::size_t out_rej = 0, out_acc = 0, in_acc = 0, in_rej = 0;
    for (const auto& [id, inlier] : r.loop_closure_inlier) {
      const auto it = truth_->loop_closure_outlier.find(id);
      if (it == truth_->loop_closure_outlier.end()) {
        continue;
      }
      if (it->second) {
        (inlier ? out_acc : out_rej)++;
      } else {
        (inlier ? in_acc : in_rej)++;
      }
    }
    if (ev) {
      out_ << ',' << num(ev->ate_multi) << ',' << num(ev->ate_odometry) << ','
           << num(ev->objects.found) << ',' << num(ev->objects.correct) << ','
           << ev->objects.found_defined << ',' << ev->objects.correct_defined << ','
           << ev->objects.estimated << ',' << ev->objects.truth << ',' << num(ev->places.mean)
           << ',' << num(ev->places.median) << ',' << num(ev->places.max);
    } else {
      out_ << ",nan,nan,nan,nan,0,0,0,0,nan,nan,nan";
    }
    out_ << ',' << num(frame_t) << ',' << num(frame_r) << ',' << out_rej << ',' << out_acc << ','
         << in_acc << ',' << in_rej;
  }
  const std::size_t live_objects = o.graph ? o.graph->num_live_nodes(Layer::Object) : 0;
  const std::size_t live_places = o.graph ? o.graph->num_live_nodes(Layer::Place) : 0;
  std::size_t accepted = 0;
  for (const auto& [id, inlier] : r.loop_closure_inlier) {
    accepted += inlier ? 1 : 0;
  }
  out_ << ',' << live_objects << ',' << live_places << ',' << r.apply.proposed << ','
       << r.apply.valid << ',' << r.apply.applied << ',' << r.apply.undone << ','
       << r.apply.skipped << ',' << num(r.apply.ratio) << ',' << r.realigned.size() << ','
       << r.loop_closure_inlier.size() << ',' << accepted << ',' << r.deformation_frames << ','
       << r.deformation_edges << ',' << num(r.objective_before) << ','
       << num(r.objective_after) << ',' << r.objective_increased << ','
       << o.bandwidth.total(Channel::Graph) << ',' << o.bandwidth.total(Channel::MeshControl)
       << ',' << o.bandwidth.total(Channel::LoopClosureAux) << ',' << o.stale << '\n';
}

void write_timing_header(std::ostream& out) { out << "iteration,stage,seconds\n"; }

void write_timing(std::ostream& out, const IterationReport& report) {
  for (const StageTiming& t : report.timings) {
    out << report.index << ',' << t.stage << ',' << num(t.seconds) << '\n';
  }
}

Json candidate_to_json(const MergeCandidate& c) {
  return Json{{"a", c.a.str()},
              {"b", c.b.str()},
              {"kind", kind_name(c.kind)},
              {"relative_transform", to_json(c.relative_transform)},
              {"status", status_name(c.status)}};
}

MergeCandidate candidate_from_json(const Json& value, const std::string& path) {
  MergeCandidate c;
  try {
    c.a = NodeId::parse(get_string(require(value, "a", path), path + ".a"));
    c.b = NodeId::parse(get_string(require(value, "b", path), path + ".b"));
  } catch (const std::invalid_argument& e) {
    throw ParseError(path + ": " + e.what());
  }
  const std::string kind = get_string(require(value, "kind", path), path + ".kind");
  if (kind == "place") {
    c.kind = CandidateKind::Place;
  } else if (kind == "object") {
    c.kind = CandidateKind::Object;
  } else {
    throw ParseError(path + ".kind: expected 'place' or 'object'");
  }
  c.relative_transform =
      pose_from_json(require(value, "relative_transform", path), path + ".relative_transform");
  const std::string status = get_string(require(value, "status", path), path + ".status");
  if (status == "proposed") {
    c.status = CandidateStatus::Proposed;
  } else if (status == "valid") {
    c.status = CandidateStatus::Valid;
  } else if (status == "invalid") {
    c.status = CandidateStatus::Invalid;
  } else {
    throw ParseError(path + ".status: expected 'proposed', 'valid' or 'invalid'");
  }
  return c;
}

Json state_to_json(const StateDump& state) {
  Json lcs = Json::array();
  for (const LoopClosure& lc : state.loop_closures) {
    lcs.push_back(loop_closure_to_json(lc));
  }
  Json candidates = Json::array();
  for (const MergeCandidate& c : state.candidates) {
    candidates.push_back(candidate_to_json(c));
  }
  return Json{{"iteration", state.iteration},
              {"graph", graph_to_json(state.graph)},
              {"loop_closures", lcs},
              {"candidates", candidates},
              {"initialized", state.initialized},
              {"solver", solver_to_json(state.solver)}};
}

StateDump state_from_json(const Json& doc, const std::string& path) {
  StateDump state;
  if (doc.is_object() && !doc.contains("graph")) {
    state.graph = graph_from_json(doc, path);
    for (const auto& [id, info] : state.graph.robots()) {
      if (info.frame == FrameStatus::Global) {
        state.initialized.insert(id);
      }
    }
    return state;
  }
  state.iteration = get_uint(require(doc, "iteration", path), path + ".iteration");
  state.graph = graph_from_json(require(doc, "graph", path), path + ".graph");
  const Json& lcs = get_array(require(doc, "loop_closures", path), path + ".loop_closures");
  for (std::size_t i = 0; i < lcs.size(); ++i) {
    state.loop_closures.push_back(
        loop_closure_from_json(lcs[i], path + ".loop_closures[" + std::to_string(i) + "]"));
  }
  const Json& cs = get_array(require(doc, "candidates", path), path + ".candidates");
  for (std::size_t i = 0; i < cs.size(); ++i) {
    state.candidates.push_back(
        candidate_from_json(cs[i], path + ".candidates[" + std::to_string(i) + "]"));
  }
  const Json& init = get_array(require(doc, "initialized", path), path + ".initialized");
  for (std::size_t i = 0; i < init.size(); ++i) {
    state.initialized.insert(static_cast<RobotId>(
        get_uint(init[i], path + ".initialized[" + std::to_string(i) + "]")));
  }
  state.solver = solver_from_json(require(doc, "solver", path), path + ".solver");
  return state;
}

}  // namespace sgfuse
