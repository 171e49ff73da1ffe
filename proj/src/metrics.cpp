#include "sgfuse/metrics.h"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace sgfuse {

namespace {

constexpr double kTimeTolerance = 1e-6;

std::vector<std::pair<Vector3, Vector3>> associate(const std::vector<TimedPosition>& estimate,
                                                   const std::vector<TimedPosition>& truth) {
  std::vector<TimedPosition> sorted = truth;
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
  std::vector<std::pair<Vector3, Vector3>> out;
  for (const TimedPosition& e : estimate) {
    auto it = std::lower_bound(sorted.begin(), sorted.end(), e.timestamp - kTimeTolerance,
                               [](const TimedPosition& a, double t) { return a.timestamp < t; });
    if (it != sorted.end() && std::abs(it->timestamp - e.timestamp) <= kTimeTolerance) {
      out.emplace_back(e.position, it->position);
    }
  }
  return out;
}

double rmse(const std::vector<std::pair<Vector3, Vector3>>& pairs, const Pose& align) {
  double sum = 0.0;
  for (const auto& [e, g] : pairs) {
    sum += (align.rotation() * e + align.translation() - g).squaredNorm();
  }
  return std::sqrt(sum / static_cast<double>(pairs.size()));
}

Pose align_pairs(const std::vector<std::pair<Vector3, Vector3>>& pairs) {
  std::vector<Vector3> src;
  std::vector<Vector3> dst;
  for (const auto& [e, g] : pairs) {
    src.push_back(e);
    dst.push_back(g);
  }
  return align_rigid(src, dst);
}

}  // namespace

double evaluate_ate(const std::vector<TimedPosition>& estimate,
                    const std::vector<TimedPosition>& truth) {
  const auto pairs = associate(estimate, truth);
  if (pairs.empty()) {
    throw std::invalid_argument("evaluate_ate: no matching timestamps");
  }
  return rmse(pairs, Pose::Identity());
}

Pose align_rigid(const std::vector<Vector3>& src, const std::vector<Vector3>& dst) {
  if (src.size() != dst.size() || src.empty()) {
    throw std::invalid_argument("align_rigid: need matched, nonempty point sets");
  }
  if (src.size() < 3) {
    Vector3 d = Vector3::Zero();
    for (std::size_t i = 0; i < src.size(); ++i) {
      d += dst[i] - src[i];
    }
    return Pose::Translation(d / static_cast<double>(src.size()));
  }
  Eigen::Matrix3Xd a(3, src.size());
  Eigen::Matrix3Xd b(3, dst.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    a.col(static_cast<Eigen::Index>(i)) = src[i];
    b.col(static_cast<Eigen::Index>(i)) = dst[i];
  }
  const Eigen::Matrix4d t = Eigen::umeyama(a, b, false);
  return Pose(Matrix3(t.topLeftCorner<3, 3>()), Vector3(t.topRightCorner<3, 1>()));
}

ObjectMetrics evaluate_objects(const std::vector<LabeledPoint>& estimated,
                               const std::vector<LabeledPoint>& truth, double threshold) {
  if (!(threshold > 0.0)) {
    throw std::invalid_argument("evaluate_objects: threshold must be positive");
  }
  auto matched = [threshold](const LabeledPoint& p, const std::vector<LabeledPoint>& set) {
    return std::any_of(set.begin(), set.end(), [&](const LabeledPoint& q) {
      return q.label == p.label && (q.position - p.position).norm() <= threshold;
    });
  };
  ObjectMetrics m;
  m.estimated = estimated.size();
  m.truth = truth.size();
  if (!estimated.empty()) {
    const auto hits = std::count_if(estimated.begin(), estimated.end(),
                                    [&](const LabeledPoint& p) { return matched(p, truth); });
    m.correct = 100.0 * static_cast<double>(hits) / static_cast<double>(estimated.size());
    m.correct_defined = true;
  }
  if (!truth.empty()) {
    const auto hits = std::count_if(truth.begin(), truth.end(),
                                    [&](const LabeledPoint& p) { return matched(p, estimated); });
    m.found = 100.0 * static_cast<double>(hits) / static_cast<double>(truth.size());
    m.found_defined = true;
  }
  return m;
}

PlaceMetrics evaluate_places(const std::vector<Vector3>& estimated,
                             const std::vector<Vector3>& truth) {
  PlaceMetrics m;
  if (estimated.empty() || truth.empty()) {
    return m;
  }
  std::vector<double> err;
  err.reserve(estimated.size());
  for (const Vector3& p : estimated) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vector3& q : truth) {
      best = std::min(best, (p - q).norm());
    }
    err.push_back(best);
  }
  m.count = err.size();
  double sum = 0.0;
  for (const double e : err) {
    sum += e;
  }
  m.mean = sum / static_cast<double>(err.size());
  std::sort(err.begin(), err.end());
  const std::size_t n = err.size();
  m.median = n % 2 == 1 ? err[n / 2] : 0.5 * (err[n / 2 - 1] + err[n / 2]);
  m.max = err.back();
  return m;
}

GraphEvaluation evaluate_graph(const SceneGraph& graph, const GroundTruth& truth,
                               double object_threshold) {
  GraphEvaluation ev;
  if (graph.robots().empty()) {
    return ev;
  }
  ev.root = graph.robots().begin()->first;
  const auto root_truth = truth.robots.find(ev.root);
  if (root_truth == truth.robots.end()) {
    throw std::invalid_argument("ground truth lacks root robot " + std::to_string(ev.root));
  }
  const Pose to_eval = root_truth->second.frame.inverse();

  auto gt_track = [&](RobotId r) {
    std::vector<TimedPosition> out;
    for (const TimedPose& tp : truth.robots.at(r).trajectory) {
      out.push_back({tp.timestamp, to_eval * tp.pose.translation()});
    }
    return out;
  };
  auto est_track = [&](RobotId r) {
    std::vector<TimedPosition> out;
    for (const NodeId& id : graph.live_nodes(Layer::Agent, r)) {
      const AgentNode& a = graph.get<AgentNode>(id);
      out.push_back({a.timestamp, a.pose.translation()});
    }
    return out;
  };
  auto odom_track = [&](RobotId r) {
    const RobotTruth& rt = truth.robots.at(r);
    const Pose frame = to_eval * rt.frame;
    std::vector<TimedPosition> out;
    for (std::size_t k = 0; k < rt.odometry.size() && k < rt.trajectory.size(); ++k) {
      out.push_back({rt.trajectory[k].timestamp, frame * rt.odometry[k].translation()});
    }
    return out;
  };

  // The global frame is the root's local frame, so the root decides the alignment.
  Pose align = Pose::Identity();
  Pose odom_align = Pose::Identity();
  {
    const auto pairs = associate(est_track(ev.root), gt_track(ev.root));
    if (!pairs.empty()) {
      align = align_pairs(pairs);
    }
    const auto odom_pairs = associate(odom_track(ev.root), gt_track(ev.root));
    if (!odom_pairs.empty()) {
      odom_align = align_pairs(odom_pairs);
    }
  }

  std::vector<std::pair<Vector3, Vector3>> all;
  std::vector<std::pair<Vector3, Vector3>> all_odom;
  std::set<RobotId> global;
  for (const auto& [r, info] : graph.robots()) {
    if (truth.robots.count(r) == 0) {
      continue;
    }
    const auto pairs = associate(est_track(r), gt_track(r));
    if (pairs.empty()) {
      continue;
    }
    const bool is_global = info.frame == FrameStatus::Global || r == ev.root;
    ev.ate_global[r] = is_global;
    if (is_global) {
      global.insert(r);
      ev.ate[r] = rmse(pairs, align);
      all.insert(all.end(), pairs.begin(), pairs.end());
      const auto odom_pairs = associate(odom_track(r), gt_track(r));
      all_odom.insert(all_odom.end(), odom_pairs.begin(), odom_pairs.end());
    } else {
      ev.ate[r] = rmse(pairs, align_pairs(pairs));
    }
  }
  if (!all.empty()) {
    ev.ate_multi = rmse(all, align);
  }
  if (!all_odom.empty()) {
    ev.ate_odometry = rmse(all_odom, odom_align);
  }

  std::vector<LabeledPoint> est_objects;
  std::vector<Vector3> est_places;
  for (const RobotId r : global) {
    for (const NodeId& id : graph.live_nodes(Layer::Object, r)) {
      const ObjectNode& o = graph.get<ObjectNode>(id);
      est_objects.push_back({o.label, align * o.centroid});
    }
    for (const NodeId& id : graph.live_nodes(Layer::Place, r)) {
      est_places.push_back(align * graph.get<PlaceNode>(id).position);
    }
  }
  std::vector<LabeledPoint> gt_objects;
  for (std::size_t i = 0; i < truth.objects.size(); ++i) {
    if (truth.object_observed.at(i)) {
      gt_objects.push_back({truth.objects[i].label, to_eval * truth.objects[i].position});
    }
  }
  std::vector<Vector3> gt_places;
  for (const Vector3& p : truth.places) {
    gt_places.push_back(to_eval * p);
  }
  ev.objects = evaluate_objects(est_objects, gt_objects, object_threshold);
  ev.places = evaluate_places(est_places, gt_places);
  return ev;
}

}  // namespace sgfuse
