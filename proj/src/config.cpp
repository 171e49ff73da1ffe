#include "sgfuse/config.h"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace sgfuse {

namespace {

/// Reads fields of one JSON object and rejects keys nobody asked for.
class Fields {
 public:
  Fields(const Json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) {
      throw ParseError(path_ + ": expected an object");
    }
  }

  std::string at(const std::string& key) const { return path_ + "." + key; }

  const Json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    return it == obj_.end() || it->is_null() ? nullptr : &*it;
  }

  const Json& need(const std::string& key) {
    const Json* v = find(key);
    if (v == nullptr) {
      throw ParseError(at(key) + ": missing field");
    }
    return *v;
  }

  double number(const std::string& key, double fallback) {
    const Json* v = find(key);
    return v ? get_double(*v, at(key)) : fallback;
  }

  double positive(const std::string& key, double fallback) {
    const double d = number(key, fallback);
    if (!(d > 0.0)) {
      throw ParseError(at(key) + ": must be positive");
    }
    return d;
  }

  double nonnegative(const std::string& key, double fallback) {
    const double d = number(key, fallback);
    if (!(d >= 0.0)) {
      throw ParseError(at(key) + ": must be nonnegative");
    }
    return d;
  }

  std::uint64_t count(const std::string& key, std::uint64_t fallback) {
    const Json* v = find(key);
    return v ? get_uint(*v, at(key)) : fallback;
  }

  bool flag(const std::string& key, bool fallback) {
    const Json* v = find(key);
    return v ? get_bool(*v, at(key)) : fallback;
  }

  std::string text(const std::string& key, const std::string& fallback) {
    const Json* v = find(key);
    return v ? get_string(*v, at(key)) : fallback;
  }

  Vector3 vec3(const std::string& key) { return vector3_from_json(need(key), at(key)); }

  std::array<double, 2> pair(const std::string& key, std::array<double, 2> fallback) {
    const Json* v = find(key);
    if (v == nullptr) {
      return fallback;
    }
    const Json& arr = get_array(*v, at(key));
    if (arr.size() != 2) {
      throw ParseError(at(key) + ": expected [rotation, translation]");
    }
    std::array<double, 2> out{get_double(arr[0], at(key) + "[0]"),
                              get_double(arr[1], at(key) + "[1]")};
    if (!(out[0] > 0.0) || !(out[1] > 0.0)) {
      throw ParseError(at(key) + ": values must be positive");
    }
    return out;
  }

  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (seen_.count(key) == 0) {
        throw ParseError(at(key) + ": unknown field");
      }
    }
  }

 private:
  const Json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string idx(const std::string& path, std::size_t i) {
  return path + "[" + std::to_string(i) + "]";
}

Aabb box_from(const Json& value, const std::string& path) {
  Fields f(value, path);
  Aabb box{f.vec3("min"), f.vec3("max")};
  f.finish();
  if (!box.valid()) {
    throw ParseError(path + ": min must not exceed max");
  }
  return box;
}

Json box_to(const Aabb& box) { return Json{{"min", to_json(box.min)}, {"max", to_json(box.max)}}; }

NoiseSpec noise_from(const Json* value, const std::string& path) {
  NoiseSpec n;
  if (value == nullptr) {
    return n;
  }
  Fields f(*value, path);
  n.rotation = f.nonnegative("rotation", 0.0);
  n.translation = f.nonnegative("translation", 0.0);
  f.finish();
  return n;
}

Json noise_to(const NoiseSpec& n) {
  return Json{{"rotation", n.rotation}, {"translation", n.translation}};
}

template <typename Fn>
void rethrow_invalid(const std::string& path, Fn&& fn) {
  try {
    fn();
  } catch (const std::invalid_argument& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace

void SolverSpec::validate() const {
  gnc.validate();
  alignment.validate();
  reconciliation.validate();
  information.validate();
}

SolverSpec solver_from_json(const Json& doc, const std::string& path) {
  SolverSpec spec;
  Fields f(doc, path);
  if (const Json* g = f.find("gnc")) {
    Fields gf(*g, f.at("gnc"));
    if (const Json* eps = gf.find("inlier_threshold")) {
      spec.gnc.inlier_threshold = get_double(*eps, gf.at("inlier_threshold"));
    }
    spec.gnc.mu_update_factor = gf.number("mu_update_factor", spec.gnc.mu_update_factor);
    spec.gnc.max_outer_iterations = static_cast<int>(
        gf.count("max_outer_iterations", static_cast<std::uint64_t>(spec.gnc.max_outer_iterations)));
    spec.gnc.weight_tolerance = gf.positive("weight_tolerance", spec.gnc.weight_tolerance);
    spec.gnc.inner.max_iterations = static_cast<int>(gf.count(
        "inner_max_iterations", static_cast<std::uint64_t>(spec.gnc.inner.max_iterations)));
    spec.gnc.inner.tolerance = gf.positive("inner_tolerance", spec.gnc.inner.tolerance);
    gf.finish();
    rethrow_invalid(f.at("gnc"), [&] { spec.gnc.validate(); });
  }
  spec.alignment.gnc = spec.gnc;
  if (const Json* a = f.find("alignment")) {
    Fields af(*a, f.at("alignment"));
    spec.alignment.k_min_inliers = af.count("k_min_inliers", spec.alignment.k_min_inliers);
    spec.alignment.realign_translation_threshold = af.positive(
        "realign_translation_threshold", spec.alignment.realign_translation_threshold);
    const double sr = af.positive("sigma_rotation", std::sqrt(spec.alignment.sigma.matrix()(0, 0)));
    const double st =
        af.positive("sigma_translation", std::sqrt(spec.alignment.sigma.matrix()(3, 3)));
    af.finish();
    Twist var;
    var << sr * sr, sr * sr, sr * sr, st * st, st * st, st * st;
    spec.alignment.sigma = Covariance6::Diagonal(var);
    rethrow_invalid(f.at("alignment"), [&] { spec.alignment.validate(); });
  }
  if (const Json* r = f.find("reconciliation")) {
    Fields rf(*r, f.at("reconciliation"));
    auto& rc = spec.reconciliation;
    rc.place_distance_max = rf.positive("place_distance_max", rc.place_distance_max);
    rc.place_radius_diff_max = rf.positive("place_radius_diff_max", rc.place_radius_diff_max);
    rc.undo_ratio_threshold = rf.positive("undo_ratio_threshold", rc.undo_ratio_threshold);
    if (const Json* icp = rf.find("icp")) {
      Fields icf(*icp, rf.at("icp"));
      rc.icp.max_iterations = static_cast<int>(
          icf.count("max_iterations", static_cast<std::uint64_t>(rc.icp.max_iterations)));
      rc.icp.tolerance = icf.positive("tolerance", rc.icp.tolerance);
      rc.icp.max_correspondence_distance =
          icf.positive("max_correspondence_distance", rc.icp.max_correspondence_distance);
      rc.icp.max_points = icf.count("max_points", rc.icp.max_points);
      icf.finish();
    }
    rf.finish();
    rethrow_invalid(f.at("reconciliation"), [&] { rc.validate(); });
  }
  if (const Json* in = f.find("information")) {
    Fields inf(*in, f.at("information"));
    auto& t = spec.information;
    t.odometry = inf.pair("odometry", t.odometry);
    t.loop_closure = inf.pair("loop_closure", t.loop_closure);
    t.rigidity = inf.pair("rigidity", t.rigidity);
    t.merge_factor = inf.pair("merge_factor", t.merge_factor);
    inf.finish();
  }
  f.finish();
  return spec;
}

Json solver_to_json(const SolverSpec& spec) {
  Json gnc{{"mu_update_factor", spec.gnc.mu_update_factor},
           {"max_outer_iterations", spec.gnc.max_outer_iterations},
           {"weight_tolerance", spec.gnc.weight_tolerance},
           {"inner_max_iterations", spec.gnc.inner.max_iterations},
           {"inner_tolerance", spec.gnc.inner.tolerance}};
  if (spec.gnc.inlier_threshold) {
    gnc["inlier_threshold"] = *spec.gnc.inlier_threshold;
  }
  const auto& rc = spec.reconciliation;
  const auto& t = spec.information;
  return Json{
      {"gnc", gnc},
      {"alignment",
       {{"k_min_inliers", spec.alignment.k_min_inliers},
        {"realign_translation_threshold", spec.alignment.realign_translation_threshold},
        {"sigma_rotation", std::sqrt(spec.alignment.sigma.matrix()(0, 0))},
        {"sigma_translation", std::sqrt(spec.alignment.sigma.matrix()(3, 3))}}},
      {"reconciliation",
       {{"place_distance_max", rc.place_distance_max},
        {"place_radius_diff_max", rc.place_radius_diff_max},
        {"undo_ratio_threshold", rc.undo_ratio_threshold},
        {"icp",
         {{"max_iterations", rc.icp.max_iterations},
          {"tolerance", rc.icp.tolerance},
          {"max_correspondence_distance", rc.icp.max_correspondence_distance},
          {"max_points", rc.icp.max_points}}}}},
      {"information",
       {{"odometry", t.odometry},
        {"loop_closure", t.loop_closure},
        {"rigidity", t.rigidity},
        {"merge_factor", t.merge_factor}}}};
}

ScenarioConfig scenario_from_json(const Json& doc, const std::string& path) {
  ScenarioConfig cfg;
  Fields f(doc, path);
  cfg.name = f.text("name", cfg.name);
  cfg.seed = f.count("seed", cfg.seed);

  {
    Fields wf(f.need("world"), f.at("world"));
    WorldSpec& w = cfg.world;
    w.bounds = box_from(wf.need("bounds"), wf.at("bounds"));
    if (const Json* rooms = wf.find("rooms")) {
      const Json& arr = get_array(*rooms, wf.at("rooms"));
      for (std::size_t i = 0; i < arr.size(); ++i) {
        w.rooms.push_back(box_from(arr[i], idx(wf.at("rooms"), i)));
      }
    }
    if (const Json* objects = wf.find("objects")) {
      const Json& arr = get_array(*objects, wf.at("objects"));
      for (std::size_t i = 0; i < arr.size(); ++i) {
        Fields of(arr[i], idx(wf.at("objects"), i));
        ObjectSpec o;
        const std::int64_t label = get_int(of.need("label"), of.at("label"));
        if (label < 0 || label > 1000000) {
          throw ParseError(of.at("label") + ": out of range");
        }
        o.label = static_cast<int>(label);
        o.position = of.vec3("position");
        o.extent = of.vec3("extent");
        of.finish();
        if (!(o.extent.array() > 0.0).all()) {
          throw ParseError(of.at("extent") + ": all components must be positive");
        }
        w.objects.push_back(o);
      }
    }
    {
      Fields pf(wf.need("places"), wf.at("places"));
      w.places.min = pf.vec3("min");
      w.places.max = pf.vec3("max");
      w.places.spacing = pf.positive("spacing", w.places.spacing);
      w.places.radius = pf.positive("radius", w.places.radius);
      pf.finish();
      if (!(w.places.min.array() <= w.places.max.array()).all()) {
        throw ParseError(wf.at("places") + ": min must not exceed max");
      }
    }
    w.mesh_spacing = wf.positive("mesh_spacing", w.mesh_spacing);
    wf.finish();
  }

  {
    const std::string rpath = f.at("robots");
    const Json& arr = get_array(f.need("robots"), rpath);
    if (arr.empty()) {
      throw ParseError(rpath + ": at least one robot required");
    }
    std::set<RobotId> ids;
    for (std::size_t i = 0; i < arr.size(); ++i) {
      Fields rf(arr[i], idx(rpath, i));
      RobotSpec r;
      const std::uint64_t id = get_uint(rf.need("id"), rf.at("id"));
      if (id > 1000000) {
        throw ParseError(rf.at("id") + ": out of range");
      }
      r.id = static_cast<RobotId>(id);
      if (!ids.insert(r.id).second) {
        throw ParseError(rf.at("id") + ": duplicate robot id");
      }
      const Json& wps = get_array(rf.need("waypoints"), rf.at("waypoints"));
      if (wps.size() < 2) {
        throw ParseError(rf.at("waypoints") + ": at least two waypoints required");
      }
      for (std::size_t k = 0; k < wps.size(); ++k) {
        r.waypoints.push_back(vector3_from_json(wps[k], idx(rf.at("waypoints"), k)));
      }
      r.laps = rf.count("laps", r.laps);
      if (r.laps < 1) {
        throw ParseError(rf.at("laps") + ": must be at least 1");
      }
      r.step = rf.positive("step", r.step);
      r.odometry_noise = noise_from(rf.find("odometry_noise"), rf.at("odometry_noise"));
      r.snapshot_period = rf.count("snapshot_period", r.snapshot_period);
      if (r.snapshot_period < 1) {
        throw ParseError(rf.at("snapshot_period") + ": must be at least 1");
      }
      r.has_semantics = rf.flag("has_semantics", r.has_semantics);
      r.has_mesh = rf.flag("has_mesh", r.has_mesh);
      r.sensor_range = rf.positive("sensor_range", r.sensor_range);
      r.active_window = rf.count("active_window", r.active_window);
      r.dense_per_control = rf.count("dense_per_control", r.dense_per_control);
      rf.finish();
      cfg.robots.push_back(std::move(r));
    }
  }

  if (const Json* lc = f.find("loop_closures")) {
    Fields lf(*lc, f.at("loop_closures"));
    auto& l = cfg.loop_closures;
    l.detection_radius = lf.positive("detection_radius", l.detection_radius);
    l.intra_rate = lf.nonnegative("intra_rate", l.intra_rate);
    l.inter_rate = lf.nonnegative("inter_rate", l.inter_rate);
    l.max_per_pair = lf.count("max_per_pair", l.max_per_pair);
    l.min_intra_separation = lf.count("min_intra_separation", l.min_intra_separation);
    l.outlier_rate = lf.nonnegative("outlier_rate", l.outlier_rate);
    l.outlier_assignment = lf.text("outlier_assignment", l.outlier_assignment);
    l.noise = noise_from(lf.find("noise"), lf.at("noise"));
    lf.finish();
    if (l.intra_rate > 1.0) {
      throw ParseError(lf.at("intra_rate") + ": must lie in [0, 1]");
    }
    if (l.inter_rate > 1.0) {
      throw ParseError(lf.at("inter_rate") + ": must lie in [0, 1]");
    }
    if (!(l.outlier_rate < 1.0)) {
      throw ParseError(lf.at("outlier_rate") + ": must lie in [0, 1)");
    }
    if (l.outlier_assignment != "bernoulli" && l.outlier_assignment != "exact") {
      throw ParseError(lf.at("outlier_assignment") + ": expected 'bernoulli' or 'exact'");
    }
  }

  cfg.backend_period = f.count("backend_period", cfg.backend_period);
  if (cfg.backend_period < 1) {
    throw ParseError(f.at("backend_period") + ": must be at least 1");
  }
  if (const Json* s = f.find("solver")) {
    cfg.solver = solver_from_json(*s, f.at("solver"));
  }
  if (const Json* e = f.find("evaluation")) {
    Fields ef(*e, f.at("evaluation"));
    cfg.object_threshold = ef.positive("object_threshold", cfg.object_threshold);
    ef.finish();
  }
  f.finish();
  return cfg;
}

ScenarioConfig load_scenario(const std::string& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open scenario file '" + file + "'");
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return scenario_from_json(parse_json(ss.str(), file), file + ": $");
}

Json scenario_to_json(const ScenarioConfig& cfg) {
  Json rooms = Json::array();
  for (const Aabb& r : cfg.world.rooms) {
    rooms.push_back(box_to(r));
  }
  Json objects = Json::array();
  for (const ObjectSpec& o : cfg.world.objects) {
    objects.push_back(
        Json{{"label", o.label}, {"position", to_json(o.position)}, {"extent", to_json(o.extent)}});
  }
  Json robots = Json::array();
  for (const RobotSpec& r : cfg.robots) {
    Json wps = Json::array();
    for (const Vector3& w : r.waypoints) {
      wps.push_back(to_json(w));
    }
    robots.push_back(Json{{"id", r.id},
                          {"waypoints", wps},
                          {"laps", r.laps},
                          {"step", r.step},
                          {"odometry_noise", noise_to(r.odometry_noise)},
                          {"snapshot_period", r.snapshot_period},
                          {"has_semantics", r.has_semantics},
                          {"has_mesh", r.has_mesh},
                          {"sensor_range", r.sensor_range},
                          {"active_window", r.active_window},
                          {"dense_per_control", r.dense_per_control}});
  }
  const auto& l = cfg.loop_closures;
  return Json{
      {"name", cfg.name},
      {"seed", cfg.seed},
      {"world",
       {{"bounds", box_to(cfg.world.bounds)},
        {"rooms", rooms},
        {"objects", objects},
        {"places",
         {{"min", to_json(cfg.world.places.min)},
          {"max", to_json(cfg.world.places.max)},
          {"spacing", cfg.world.places.spacing},
          {"radius", cfg.world.places.radius}}},
        {"mesh_spacing", cfg.world.mesh_spacing}}},
      {"robots", robots},
      {"loop_closures",
       {{"detection_radius", l.detection_radius},
        {"intra_rate", l.intra_rate},
        {"inter_rate", l.inter_rate},
        {"max_per_pair", l.max_per_pair},
        {"min_intra_separation", l.min_intra_separation},
        {"outlier_rate", l.outlier_rate},
        {"outlier_assignment", l.outlier_assignment},
        {"noise", noise_to(l.noise)}}},
      {"backend_period", cfg.backend_period},
      {"solver", solver_to_json(cfg.solver)},
      {"evaluation", {{"object_threshold", cfg.object_threshold}}}};
}

}  // namespace sgfuse
