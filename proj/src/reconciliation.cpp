#include "sgfuse/reconciliation.h"

#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <unordered_map>

namespace sgfuse {

void IcpConfig::validate() const {
  if (max_iterations < 1 || !(tolerance > 0.0) || !(max_correspondence_distance > 0.0) ||
      max_points < 3) {
    throw std::invalid_argument("icp settings out of range");
  }
}

void ReconciliationConfig::validate() const {
  if (!(place_distance_max > 0.0) || !(place_radius_diff_max > 0.0)) {
    throw std::invalid_argument("place merge thresholds must be positive");
  }
  if (!(undo_ratio_threshold > 0.0 && undo_ratio_threshold <= 1.0)) {
    throw std::invalid_argument("undo_ratio_threshold must lie in (0, 1]");
  }
  icp.validate();
}

namespace {

struct CellHash {
  std::size_t operator()(const std::array<std::int64_t, 3>& c) const {
    std::size_t h = 1469598103934665603ull;
    for (const auto v : c) {
      h ^= static_cast<std::size_t>(v);
      h *= 1099511628211ull;
    }
    return h;
  }
};

std::array<std::int64_t, 3> cell_of(const Vector3& p, double cell) {
  return {static_cast<std::int64_t>(std::floor(p.x() / cell)),
          static_cast<std::int64_t>(std::floor(p.y() / cell)),
          static_cast<std::int64_t>(std::floor(p.z() / cell))};
}

std::vector<NodeId> live_of_initialized(const SceneGraph& graph, Layer layer,
                                        const std::set<RobotId>& initialized) {
  std::vector<NodeId> out;
  for (const RobotId r : initialized) {
    if (graph.has_robot(r)) {
      const auto ids = graph.live_nodes(layer, r);
      out.insert(out.end(), ids.begin(), ids.end());
    }
  }
  return out;
}

}  // namespace

std::vector<MergeCandidate> propose_place_merges(const SceneGraph& graph,
                                                 const std::set<RobotId>& initialized,
                                                 const ReconciliationConfig& cfg) {
  const std::vector<NodeId> places = live_of_initialized(graph, Layer::Place, initialized);
  const double cell = cfg.place_distance_max;
  std::unordered_map<std::array<std::int64_t, 3>, std::vector<std::size_t>, CellHash> grid;
  for (std::size_t i = 0; i < places.size(); ++i) {
    grid[cell_of(graph.get<PlaceNode>(places[i]).position, cell)].push_back(i);
  }
  std::vector<MergeCandidate> out;
  for (std::size_t i = 0; i < places.size(); ++i) {
    const PlaceNode& pa = graph.get<PlaceNode>(places[i]);
    const auto c = cell_of(pa.position, cell);
    for (std::int64_t dx = -1; dx <= 1; ++dx) {
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          const auto it = grid.find({c[0] + dx, c[1] + dy, c[2] + dz});
          if (it == grid.end()) {
            continue;
          }
          for (const std::size_t j : it->second) {
            if (!(places[i] < places[j]) || places[i].robot == places[j].robot) {
              continue;
            }
            const PlaceNode& pb = graph.get<PlaceNode>(places[j]);
            if ((pa.position - pb.position).norm() <= cfg.place_distance_max &&
                std::abs(pa.radius - pb.radius) <= cfg.place_radius_diff_max) {
              out.push_back(MergeCandidate{places[i], places[j], CandidateKind::Place,
                                           Pose::Identity(), CandidateStatus::Proposed});
            }
          }
        }
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const MergeCandidate& x, const MergeCandidate& y) {
    return std::tie(x.a, x.b) < std::tie(y.a, y.b);
  });
  return out;
}

std::vector<Vector3> object_vertices(const SceneGraph& graph, const NodeId& object) {
  std::vector<Vector3> out;
  for (const NodeId& v : graph.get<ObjectNode>(object).vertex_ids) {
    if (graph.has_node(v) && graph.is_live(v)) {
      out.push_back(graph.get<MeshNode>(v).position);
    }
  }
  return out;
}

std::vector<MergeCandidate> propose_object_merges(const SceneGraph& graph,
                                                  const std::set<RobotId>& initialized,
                                                  const ReconciliationConfig& cfg) {
  const std::vector<NodeId> objects = live_of_initialized(graph, Layer::Object, initialized);
  std::vector<MergeCandidate> out;
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const ObjectNode& oa = graph.get<ObjectNode>(objects[i]);
    for (std::size_t j = 0; j < objects.size(); ++j) {
      if (!(objects[i] < objects[j]) || objects[i].robot == objects[j].robot) {
        continue;
      }
      const ObjectNode& ob = graph.get<ObjectNode>(objects[j]);
      if (oa.label != ob.label || !oa.bbox.intersects(ob.bbox)) {
        continue;
      }
      MergeCandidate cand{objects[i], objects[j], CandidateKind::Object, Pose::Identity(),
                          CandidateStatus::Proposed};
      const IcpResult icp = icp_object_transform(object_vertices(graph, objects[i]),
                                                 object_vertices(graph, objects[j]), cfg.icp);
      if (icp.success) {
        cand.relative_transform = icp.transform;
      } else {
        cand.status = CandidateStatus::Invalid;
      }
      out.push_back(cand);
    }
  }
  std::sort(out.begin(), out.end(), [](const MergeCandidate& x, const MergeCandidate& y) {
    return std::tie(x.a, x.b) < std::tie(y.a, y.b);
  });
  return out;
}

std::vector<Vector3> farthest_point_subsample(const std::vector<Vector3>& points,
                                              std::size_t cap) {
  if (points.size() <= cap) {
    return points;
  }
  std::vector<Vector3> out;
  out.reserve(cap);
  std::vector<double> dist(points.size(), std::numeric_limits<double>::infinity());
  std::size_t next = 0;
  while (out.size() < cap) {
    out.push_back(points[next]);
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      dist[i] = std::min(dist[i], (points[i] - points[next]).squaredNorm());
      if (dist[i] > best_d) {
        best_d = dist[i];
        best = i;
      }
    }
    next = best;
  }
  return out;
}

namespace {

std::size_t nearest(const std::vector<Vector3>& set, const Vector3& p, double* d2) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < set.size(); ++i) {
    const double d = (set[i] - p).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  *d2 = best_d;
  return best;
}

}  // namespace

IcpResult icp_object_transform(const std::vector<Vector3>& vertices_a,
                               const std::vector<Vector3>& vertices_b, const IcpConfig& cfg) {
  IcpResult result;
  if (vertices_a.size() < 3 || vertices_b.size() < 3) {
    return result;
  }
  const std::vector<Vector3> a = farthest_point_subsample(vertices_a, cfg.max_points);
  const std::vector<Vector3> b = farthest_point_subsample(vertices_b, cfg.max_points);

  Vector3 ca = Vector3::Zero();
  Vector3 cb = Vector3::Zero();
  for (const auto& p : a) {
    ca += p;
  }
  for (const auto& p : b) {
    cb += p;
  }
  ca /= static_cast<double>(a.size());
  cb /= static_cast<double>(b.size());
  Pose current = Pose::Translation(ca - cb);

  const double max_d2 = cfg.max_correspondence_distance * cfg.max_correspondence_distance;
  std::vector<Vector3> moved(b.size());
  for (int it = 0; it < cfg.max_iterations; ++it) {
    ++result.iterations;
    for (std::size_t i = 0; i < b.size(); ++i) {
      moved[i] = current * b[i];
    }
    std::vector<std::size_t> src_idx;
    std::vector<std::size_t> dst_idx;
    for (std::size_t i = 0; i < moved.size(); ++i) {
      double d2 = 0.0;
      const std::size_t j = nearest(a, moved[i], &d2);
      if (d2 > max_d2) {
        continue;
      }
      double back_d2 = 0.0;
      if (nearest(moved, a[j], &back_d2) == i) {
        src_idx.push_back(i);
        dst_idx.push_back(j);
      }
    }
    if (src_idx.size() < 3) {
      result.success = false;
      result.correspondences = src_idx.size();
      return result;
    }
    Eigen::Matrix3Xd src(3, src_idx.size());
    Eigen::Matrix3Xd dst(3, dst_idx.size());
    for (std::size_t k = 0; k < src_idx.size(); ++k) {
      src.col(static_cast<Eigen::Index>(k)) = b[src_idx[k]];
      dst.col(static_cast<Eigen::Index>(k)) = a[dst_idx[k]];
    }
    const Eigen::Matrix4d m = Eigen::umeyama(src, dst, false);
    const Pose next(Matrix3(m.topLeftCorner<3, 3>()), Vector3(m.topRightCorner<3, 1>()));
    const double update = boxminus(current, next).norm();
    current = next;
    result.correspondences = src_idx.size();
    if (update < cfg.tolerance) {
      break;
    }
  }
  result.success = true;
  result.transform = current;
  return result;
}

ApplyReport validate_and_apply(SceneGraph& graph, std::vector<MergeCandidate>& candidates,
                               const std::vector<bool>& inlier_mask,
                               const ReconciliationConfig& cfg) {
  if (inlier_mask.size() != candidates.size()) {
    throw std::invalid_argument("validate_and_apply needs one mask entry per candidate");
  }
  ApplyReport report;
  report.proposed = candidates.size();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    MergeCandidate& c = candidates[i];
    if (c.status != CandidateStatus::Invalid && inlier_mask[i]) {
      c.status = CandidateStatus::Valid;
      ++report.valid;
    } else {
      c.status = CandidateStatus::Invalid;
    }
  }
  report.ratio = report.proposed == 0
                     ? 1.0
                     : static_cast<double>(report.valid) / static_cast<double>(report.proposed);

  // Merges are applied first and rolled back if the ratio rule rejects them.
  std::map<NodeId, NodeId> parent;
  auto find = [&](NodeId id) {
    for (auto it = parent.find(id); it != parent.end() && !(it->second == id);
         it = parent.find(id)) {
      id = it->second;
    }
    return id;
  };
  for (const MergeCandidate& c : candidates) {
    if (c.status != CandidateStatus::Valid) {
      continue;
    }
    const NodeId ra = find(c.a);
    const NodeId rb = find(c.b);
    if (ra == rb || ra.robot == rb.robot || !graph.is_live(ra) || !graph.is_live(rb)) {
      ++report.skipped;
      continue;
    }
    const NodeId keep = std::min(ra, rb);
    const NodeId absorb = std::max(ra, rb);
    report.records.push_back(graph.merge_nodes(keep, absorb));
    parent[absorb] = keep;
  }
  report.applied = report.records.size();
  if (report.proposed > 0 && report.ratio < cfg.undo_ratio_threshold) {
    for (auto it = report.records.rbegin(); it != report.records.rend(); ++it) {
      graph.undo_merge(*it);
    }
    report.undone = report.records.size();
    report.applied = 0;
    report.records.clear();
  }
  return report;
}

}  // namespace sgfuse
