#include "sgfuse/simulator.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

namespace sgfuse {

namespace {

constexpr double kStepSeconds = 1.0;

Vector3 apply(const Pose& pose, const Vector3& p) { return pose.rotation() * p + pose.translation(); }

Twist noise_twist(std::mt19937_64& rng, double sigma_rot, double sigma_trans) {
  Twist v = Twist::Zero();
  if (sigma_rot > 0.0) {
    std::normal_distribution<double> n(0.0, sigma_rot);
    for (int i = 0; i < 3; ++i) {
      v[i] = n(rng);
    }
  }
  if (sigma_trans > 0.0) {
    std::normal_distribution<double> n(0.0, sigma_trans);
    for (int i = 3; i < 6; ++i) {
      v[i] = n(rng);
    }
  }
  return v;
}

std::vector<Vector3> floor_controls(const WorldSpec& world) {
  std::vector<Vector3> out;
  const double s = world.mesh_spacing;
  for (double x = world.bounds.min.x(); x <= world.bounds.max.x() + 1e-9; x += s) {
    for (double y = world.bounds.min.y(); y <= world.bounds.max.y() + 1e-9; y += s) {
      out.emplace_back(x, y, world.bounds.min.z());
    }
  }
  return out;
}

std::vector<Vector3> dense_around(const Vector3& c, std::size_t n, double radius) {
  std::vector<Vector3> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = 2.0 * M_PI * static_cast<double>(i) / static_cast<double>(n);
    out.push_back(c + Vector3(radius * std::cos(a), radius * std::sin(a), 0.0));
  }
  return out;
}

struct GridIndex {
  std::size_t nx = 0;
  std::size_t ny = 0;
};

struct RobotSim {
  const RobotSpec* spec = nullptr;
  std::vector<Pose> truth;
  std::vector<Pose> odom;
  Pose frame;
  SceneGraph graph;
  std::size_t next_step = 0;
  std::uint64_t sequence = 0;
  std::uint64_t next_index[5] = {0, 0, 0, 0, 0};
  std::map<std::size_t, NodeId> places;            // grid index -> node
  std::map<std::size_t, std::size_t> place_first;  // grid index -> step first seen
  std::map<std::size_t, NodeId> objects;
  std::map<std::size_t, NodeId> rooms;
  std::set<std::size_t> floor_seen;

  bool done() const { return next_step >= truth.size(); }

  NodeId fresh(Layer layer) {
    return NodeId{spec->id, layer, next_index[static_cast<int>(layer)]++};
  }

  // World point as observed from the current step, in the local frame.
  Vector3 observe(std::size_t k, const Vector3& world) const {
    return apply(odom[k] * truth[k].inverse(), world);
  }
};

class Simulator {
 public:
  explicit Simulator(const ScenarioConfig& cfg)
      : cfg_(cfg), rng_(cfg.seed), grid_(place_grid(cfg.world.places)), floor_(floor_controls(cfg.world)) {
    const auto& g = cfg.world.places;
    grid_dims_.nx = static_cast<std::size_t>(std::floor((g.max.x() - g.min.x()) / g.spacing + 1e-9)) + 1;
    grid_dims_.ny = static_cast<std::size_t>(std::floor((g.max.y() - g.min.y()) / g.spacing + 1e-9)) + 1;
    truth_.objects = cfg.world.objects;
    truth_.object_observed.assign(cfg.world.objects.size(), false);
    place_seen_.assign(grid_.size(), false);

    for (const RobotSpec& spec : cfg.robots) {
      RobotSim sim;
      sim.spec = &spec;
      sim.truth = sample_trajectory(spec);
      sim.frame = sim.truth.front();
      RobotInfo info;
      info.id = spec.id;
      info.capabilities = RobotCapabilities::FromFlags(spec.has_semantics, spec.has_mesh);
      sim.graph.add_robot(std::move(info));
      robots_.emplace(spec.id, std::move(sim));
    }
    setup_exact_outliers();
  }

  SimulationOutput run() {
    std::uint64_t tick = 0;
    for (std::size_t t = 0;; ++t) {
      bool any = false;
      for (auto& [id, sim] : robots_) {
        if (sim.done()) {
          continue;
        }
        any = true;
        const std::size_t k = sim.next_step++;
        step(sim, k);
        loop_closures(sim, k);
        if (k % sim.spec->snapshot_period == 0 || sim.done()) {
          snapshot(sim);
        }
      }
      if (!any) {
        break;
      }
      if ((t + 1) % cfg_.backend_period == 0) {
        events_.push_back(BackendTick{++tick});
      }
    }
    events_.push_back(BackendTick{++tick});

    for (auto& [id, sim] : robots_) {
      RobotTruth rt;
      rt.frame = sim.frame;
      for (std::size_t k = 0; k < sim.truth.size(); ++k) {
        rt.trajectory.push_back({static_cast<double>(k) * kStepSeconds, sim.truth[k]});
      }
      rt.odometry = sim.odom;
      truth_.robots.emplace(id, std::move(rt));
    }
    for (std::size_t i = 0; i < grid_.size(); ++i) {
      if (place_seen_[i]) {
        truth_.places.push_back(grid_[i]);
      }
    }
    return SimulationOutput{std::move(events_), std::move(truth_)};
  }

 private:
  void setup_exact_outliers() {
    const auto& lc = cfg_.loop_closures;
    if (lc.outlier_assignment != "exact") {
      return;
    }
    const auto n_out = static_cast<std::size_t>(
        std::llround(lc.outlier_rate * static_cast<double>(lc.max_per_pair)));
    for (auto a = robots_.begin(); a != robots_.end(); ++a) {
      for (auto b = std::next(a); b != robots_.end(); ++b) {
        std::vector<std::size_t> slots(lc.max_per_pair);
        std::iota(slots.begin(), slots.end(), 0);
        std::shuffle(slots.begin(), slots.end(), rng_);
        exact_outliers_[{a->first, b->first}] =
            std::set<std::size_t>(slots.begin(), slots.begin() + static_cast<std::ptrdiff_t>(n_out));
      }
    }
  }

  void step(RobotSim& sim, std::size_t k) {
    const RobotSpec& spec = *sim.spec;
    if (k == 0) {
      sim.odom.push_back(Pose::Identity());
    } else {
      const bool noisy = spec.odometry_noise.rotation > 0.0 || spec.odometry_noise.translation > 0.0;
      if (noisy) {
        const Pose delta = sim.truth[k - 1].inverse() * sim.truth[k];
        const double d = delta.translation().norm();
        const Twist n = noise_twist(rng_, spec.odometry_noise.rotation * d,
                                    spec.odometry_noise.translation * d);
        sim.odom.push_back(sim.odom[k - 1] * delta * exp_map(n));
      } else {
        sim.odom.push_back(sim.frame.inverse() * sim.truth[k]);
      }
    }

    SceneGraph& g = sim.graph;
    const NodeId agent{spec.id, Layer::Agent, k};
    sim.next_index[0] = k + 1;
    g.add_node(agent, AgentNode{sim.odom[k], static_cast<double>(k) * kStepSeconds});
    const Vector3 here = sim.truth[k].translation();
    const double range = spec.sensor_range;

    // Places, with adjacency among those first seen inside the active window.
    for (std::size_t i = 0; i < grid_.size(); ++i) {
      if (sim.places.count(i) || (grid_[i] - here).norm() > range) {
        continue;
      }
      const NodeId id = sim.fresh(Layer::Place);
      g.add_node(id, PlaceNode{sim.observe(k, grid_[i]), cfg_.world.places.radius});
      sim.places.emplace(i, id);
      sim.place_first.emplace(i, k);
      place_seen_[i] = true;
      for (const std::size_t n : grid_neighbors(i)) {
        const auto it = sim.places.find(n);
        if (it != sim.places.end() && sim.place_first.at(n) + spec.active_window >= k) {
          g.add_edge(Edge::Adjacent(id, it->second));
        }
      }
      for (std::size_t r = 0; r < cfg_.world.rooms.size(); ++r) {
        if (cfg_.world.rooms[r].contains(grid_[i])) {
          g.add_edge(Edge::Inclusion(id, room_node(sim, k, r)));
          break;
        }
      }
    }

    // Agent to the nearest place still inside the active window.
    std::optional<NodeId> host;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [i, id] : sim.places) {
      const double d = (grid_[i] - here).norm();
      if (sim.place_first.at(i) + spec.active_window >= k && d <= range && d < best) {
        best = d;
        host = id;
      }
    }
    if (host) {
      g.add_edge(Edge::Inclusion(agent, *host));
    }

    if (spec.has_mesh) {
      RobotInfo& info = g.robot(spec.id);
      for (std::size_t c = 0; c < floor_.size(); ++c) {
        if (sim.floor_seen.count(c) || (floor_[c] - here).norm() > range) {
          continue;
        }
        sim.floor_seen.insert(c);
        g.add_node(sim.fresh(Layer::Mesh), MeshNode{sim.observe(k, floor_[c])});
        for (const Vector3& v : dense_around(floor_[c], spec.dense_per_control,
                                            0.3 * cfg_.world.mesh_spacing)) {
          info.mesh_vertices.push_back(sim.observe(k, v));
        }
      }
    }

    if (spec.has_semantics) {
      for (std::size_t o = 0; o < cfg_.world.objects.size(); ++o) {
        const ObjectSpec& spec_o = cfg_.world.objects[o];
        if (sim.objects.count(o) || (spec_o.position - here).norm() > range) {
          continue;
        }
        add_object(sim, k, o);
        truth_.object_observed[o] = true;
      }
    }
  }

  NodeId room_node(RobotSim& sim, std::size_t k, std::size_t r) {
    const auto it = sim.rooms.find(r);
    if (it != sim.rooms.end()) {
      return it->second;
    }
    const Aabb& box = cfg_.world.rooms[r];
    const Pose to_local = sim.odom[k] * sim.truth[k].inverse();
    const NodeId id = sim.fresh(Layer::Room);
    sim.graph.add_node(id, RoomNode{apply(to_local, box.center()), box.transformed(to_local)});
    sim.rooms.emplace(r, id);
    return id;
  }

  void add_object(RobotSim& sim, std::size_t k, std::size_t o) {
    const ObjectSpec& spec_o = cfg_.world.objects[o];
    SceneGraph& g = sim.graph;
    const std::vector<Vector3> surface = object_surface_points(spec_o);
    std::vector<Vector3> local;
    for (const Vector3& p : surface) {
      local.push_back(sim.observe(k, p));
    }
    ObjectNode node;
    node.label = spec_o.label;
    if (sim.spec->has_mesh) {
      RobotInfo& info = g.robot(sim.spec->id);
      const double r = 0.1 * spec_o.extent.minCoeff();
      for (std::size_t i = 0; i < surface.size(); ++i) {
        const NodeId v = sim.fresh(Layer::Mesh);
        g.add_node(v, MeshNode{local[i]});
        node.vertex_ids.push_back(v);
        for (const Vector3& d : dense_around(surface[i], sim.spec->dense_per_control, r)) {
          info.mesh_vertices.push_back(sim.observe(k, d));
        }
      }
    }
    Vector3 sum = Vector3::Zero();
    for (const Vector3& p : local) {
      sum += p;
    }
    node.centroid = sum / static_cast<double>(local.size());
    node.bbox = Aabb::FromPoints(local);
    const NodeId id = sim.fresh(Layer::Object);
    g.add_node(id, node);
    sim.objects.emplace(o, id);

    std::optional<NodeId> parent;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [i, pid] : sim.places) {
      const double d = (grid_[i] - spec_o.position).norm();
      if (d < best) {
        best = d;
        parent = pid;
      }
    }
    if (parent) {
      g.add_edge(Edge::Inclusion(id, *parent));
    }
  }

  std::vector<std::size_t> grid_neighbors(std::size_t i) const {
    const std::size_t ny = grid_dims_.ny;
    const std::size_t x = i / ny;
    const std::size_t y = i % ny;
    std::vector<std::size_t> out;
    if (x > 0) out.push_back(i - ny);
    if (x + 1 < grid_dims_.nx) out.push_back(i + ny);
    if (y > 0) out.push_back(i - 1);
    if (y + 1 < ny) out.push_back(i + 1);
    return out;
  }

  // Nearest agent of `other` (among indices < limit) within the detection radius.
  std::optional<std::size_t> nearest_agent(const RobotSim& other, std::size_t limit,
                                           const Vector3& p) const {
    std::optional<std::size_t> best;
    double best_d = cfg_.loop_closures.detection_radius;
    for (std::size_t j = 0; j < limit && j < other.truth.size(); ++j) {
      const double d = (other.truth[j].translation() - p).norm();
      if (d <= best_d) {
        best_d = d;
        best = j;
      }
    }
    return best;
  }

  void emit_loop_closure(const RobotSim& a, std::size_t ka, const RobotSim& b, std::size_t kb,
                         bool outlier) {
    const auto& spec = cfg_.loop_closures;
    LoopClosure lc;
    lc.id = next_lc_++;
    lc.from = NodeId{a.spec->id, Layer::Agent, ka};
    lc.to = NodeId{b.spec->id, Layer::Agent, kb};
    if (outlier) {
      const Aabb& box = cfg_.world.bounds;
      std::uniform_real_distribution<double> ux(box.min.x(), box.max.x());
      std::uniform_real_distribution<double> uy(box.min.y(), box.max.y());
      std::uniform_real_distribution<double> uz(box.min.z(), box.max.z());
      const Eigen::Quaterniond q = random_rotation(rng_);
      const Vector3 t(ux(rng_), uy(rng_), uz(rng_));
      lc.measurement = a.truth[ka].inverse() * Pose(q, t);
    } else {
      const Twist n = noise_twist(rng_, spec.noise.rotation, spec.noise.translation);
      lc.measurement = a.truth[ka].inverse() * b.truth[kb] * exp_map(n);
    }
    const double sr = std::max(spec.noise.rotation, 1e-3);
    const double st = std::max(spec.noise.translation, 1e-3);
    Twist var;
    var << sr * sr, sr * sr, sr * sr, st * st, st * st, st * st;
    lc.covariance = Covariance6::Diagonal(var);
    truth_.loop_closure_outlier[lc.id] = outlier;
    events_.push_back(lc);
  }

  void loop_closures(RobotSim& sim, std::size_t k) {
    const auto& spec = cfg_.loop_closures;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const Vector3 p = sim.truth[k].translation();

    if (spec.intra_rate > 0.0 && k >= spec.min_intra_separation) {
      const auto j = nearest_agent(sim, k - spec.min_intra_separation + 1, p);
      if (j && u(rng_) < spec.intra_rate) {
        emit_loop_closure(sim, *j, sim, k, u(rng_) < spec.outlier_rate);
      }
    }

    if (spec.inter_rate <= 0.0) {
      return;
    }
    for (auto& [oid, other] : robots_) {
      if (oid == sim.spec->id) {
        continue;
      }
      const RobotPair pair{std::min(oid, sim.spec->id), std::max(oid, sim.spec->id)};
      std::size_t& count = pair_count_[pair];
      if (count >= spec.max_per_pair) {
        continue;
      }
      const auto j = nearest_agent(other, other.next_step, p);
      if (!j || u(rng_) >= spec.inter_rate) {
        continue;
      }
      bool outlier;
      if (spec.outlier_assignment == "exact") {
        outlier = exact_outliers_.at(pair).count(count) > 0;
      } else {
        outlier = u(rng_) < spec.outlier_rate;
      }
      ++count;
      emit_loop_closure(other, *j, sim, k, outlier);
    }
  }

  void snapshot(RobotSim& sim) {
    events_.push_back(GraphUpdate{sim.spec->id, ++sim.sequence, sim.graph});
  }

  const ScenarioConfig& cfg_;
  std::mt19937_64 rng_;
  std::vector<Vector3> grid_;
  GridIndex grid_dims_;
  std::vector<Vector3> floor_;
  std::vector<bool> place_seen_;
  std::map<RobotId, RobotSim> robots_;
  std::map<RobotPair, std::size_t> pair_count_;
  std::map<RobotPair, std::set<std::size_t>> exact_outliers_;
  std::uint64_t next_lc_ = 0;
  std::vector<Event> events_;
  GroundTruth truth_;
};

}  // namespace

std::vector<Pose> sample_trajectory(const RobotSpec& robot) {
  std::vector<Vector3> route;
  for (std::size_t lap = 0; lap < robot.laps; ++lap) {
    route.insert(route.end(), robot.waypoints.begin(), robot.waypoints.end());
  }
  std::vector<std::pair<Vector3, Vector3>> segments;
  for (std::size_t i = 1; i < route.size(); ++i) {
    if ((route[i] - route[i - 1]).norm() > 1e-9) {
      segments.emplace_back(route[i - 1], route[i]);
    }
  }
  if (segments.empty()) {
    throw std::invalid_argument("robot " + std::to_string(robot.id) + ": waypoints do not move");
  }
  auto yaw_of = [](const std::pair<Vector3, Vector3>& s) {
    const Vector3 d = s.second - s.first;
    return std::atan2(d.y(), d.x());
  };
  std::vector<Pose> out;
  out.push_back(Pose::RotZ(yaw_of(segments[0]), segments[0].first));
  double carry = 0.0;  // distance already travelled along the current segment
  std::size_t s = 0;
  while (s < segments.size()) {
    const auto& seg = segments[s];
    const double len = (seg.second - seg.first).norm();
    const double next = carry + robot.step;
    if (next < len - 1e-9) {
      carry = next;
      out.push_back(Pose::RotZ(yaw_of(seg), seg.first + (carry / len) * (seg.second - seg.first)));
      continue;
    }
    // Stop at the segment end, then continue along the next one.
    carry = 0.0;
    ++s;
    const double yaw = s < segments.size() ? yaw_of(segments[s]) : yaw_of(seg);
    out.push_back(Pose::RotZ(yaw, seg.second));
  }
  return out;
}

std::vector<Vector3> object_surface_points(const ObjectSpec& object) {
  const Vector3 h = 0.5 * object.extent;
  std::vector<Vector3> out;
  for (int sx : {-1, 1}) {
    for (int sy : {-1, 1}) {
      for (int sz : {-1, 1}) {
        out.push_back(object.position + Vector3(sx * h.x(), sy * h.y(), sz * h.z()));
      }
    }
  }
  for (int axis = 0; axis < 3; ++axis) {
    for (int sign : {-1, 1}) {
      Vector3 p = object.position;
      p[axis] += sign * h[axis];
      out.push_back(p);
    }
  }
  return out;
}

std::vector<Vector3> place_grid(const PlaceGridSpec& spec) {
  std::vector<Vector3> out;
  const auto nx = static_cast<std::size_t>(std::floor((spec.max.x() - spec.min.x()) / spec.spacing + 1e-9)) + 1;
  const auto ny = static_cast<std::size_t>(std::floor((spec.max.y() - spec.min.y()) / spec.spacing + 1e-9)) + 1;
  for (std::size_t x = 0; x < nx; ++x) {
    for (std::size_t y = 0; y < ny; ++y) {
      out.emplace_back(spec.min.x() + static_cast<double>(x) * spec.spacing,
                       spec.min.y() + static_cast<double>(y) * spec.spacing, spec.min.z());
    }
  }
  return out;
}

SimulationOutput simulate(const ScenarioConfig& scenario) {
  return Simulator(scenario).run();
}

Json ground_truth_to_json(const GroundTruth& truth) {
  Json robots = Json::array();
  for (const auto& [id, rt] : truth.robots) {
    Json traj = Json::array();
    for (const TimedPose& tp : rt.trajectory) {
      traj.push_back(Json{{"timestamp", tp.timestamp}, {"pose", to_json(tp.pose)}});
    }
    Json odom = Json::array();
    for (const Pose& p : rt.odometry) {
      odom.push_back(to_json(p));
    }
    robots.push_back(
        Json{{"id", id}, {"frame", to_json(rt.frame)}, {"trajectory", traj}, {"odometry", odom}});
  }
  Json objects = Json::array();
  for (std::size_t i = 0; i < truth.objects.size(); ++i) {
    const ObjectSpec& o = truth.objects[i];
    objects.push_back(Json{{"label", o.label},
                           {"position", to_json(o.position)},
                           {"extent", to_json(o.extent)},
                           {"observed", truth.object_observed.at(i)}});
  }
  Json places = Json::array();
  for (const Vector3& p : truth.places) {
    places.push_back(to_json(p));
  }
  Json lcs = Json::array();
  for (const auto& [id, outlier] : truth.loop_closure_outlier) {
    lcs.push_back(Json{{"id", id}, {"outlier", outlier}});
  }
  return Json{{"robots", robots}, {"objects", objects}, {"places", places}, {"loop_closures", lcs}};
}

GroundTruth ground_truth_from_json(const Json& doc, const std::string& path) {
  GroundTruth truth;
  auto idx = [](const std::string& p, std::size_t i) { return p + "[" + std::to_string(i) + "]"; };

  const std::string rpath = path + ".robots";
  const Json& robots = get_array(require(doc, "robots", path), rpath);
  for (std::size_t i = 0; i < robots.size(); ++i) {
    const std::string p = idx(rpath, i);
    const std::uint64_t id = get_uint(require(robots[i], "id", p), p + ".id");
    RobotTruth rt;
    rt.frame = pose_from_json(require(robots[i], "frame", p), p + ".frame");
    const Json& traj = get_array(require(robots[i], "trajectory", p), p + ".trajectory");
    for (std::size_t k = 0; k < traj.size(); ++k) {
      const std::string tp = idx(p + ".trajectory", k);
      rt.trajectory.push_back({get_double(require(traj[k], "timestamp", tp), tp + ".timestamp"),
                               pose_from_json(require(traj[k], "pose", tp), tp + ".pose")});
    }
    const Json& odom = get_array(require(robots[i], "odometry", p), p + ".odometry");
    for (std::size_t k = 0; k < odom.size(); ++k) {
      rt.odometry.push_back(pose_from_json(odom[k], idx(p + ".odometry", k)));
    }
    if (!truth.robots.emplace(static_cast<RobotId>(id), std::move(rt)).second) {
      throw ParseError(p + ".id: duplicate robot");
    }
  }

  const std::string opath = path + ".objects";
  const Json& objects = get_array(require(doc, "objects", path), opath);
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const std::string p = idx(opath, i);
    ObjectSpec o;
    o.label = static_cast<int>(get_int(require(objects[i], "label", p), p + ".label"));
    o.position = vector3_from_json(require(objects[i], "position", p), p + ".position");
    o.extent = vector3_from_json(require(objects[i], "extent", p), p + ".extent");
    truth.objects.push_back(o);
    truth.object_observed.push_back(get_bool(require(objects[i], "observed", p), p + ".observed"));
  }

  const std::string ppath = path + ".places";
  const Json& places = get_array(require(doc, "places", path), ppath);
  for (std::size_t i = 0; i < places.size(); ++i) {
    truth.places.push_back(vector3_from_json(places[i], idx(ppath, i)));
  }

  const std::string lpath = path + ".loop_closures";
  const Json& lcs = get_array(require(doc, "loop_closures", path), lpath);
  for (std::size_t i = 0; i < lcs.size(); ++i) {
    const std::string p = idx(lpath, i);
    truth.loop_closure_outlier[get_uint(require(lcs[i], "id", p), p + ".id")] =
        get_bool(require(lcs[i], "outlier", p), p + ".outlier");
  }
  return truth;
}

}  // namespace sgfuse
