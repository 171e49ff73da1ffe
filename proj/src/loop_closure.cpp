#include "sgfuse/loop_closure.h"

namespace sgfuse {

Json loop_closure_to_json(const LoopClosure& lc) {
  Json cov = Json::array();
  for (int r = 0; r < 6; ++r) {
    for (int c = 0; c < 6; ++c) {
      cov.push_back(lc.covariance.matrix()(r, c));
    }
  }
  return Json{{"id", lc.id},
              {"from", lc.from.str()},
              {"to", lc.to.str()},
              {"measurement", to_json(lc.measurement)},
              {"covariance", cov}};
}

LoopClosure loop_closure_from_json(const Json& value, const std::string& path) {
  LoopClosure lc;
  lc.id = get_uint(require(value, "id", path), path + ".id");
  try {
    lc.from = NodeId::parse(get_string(require(value, "from", path), path + ".from"));
    lc.to = NodeId::parse(get_string(require(value, "to", path), path + ".to"));
  } catch (const std::invalid_argument& e) {
    throw ParseError(path + ": " + e.what());
  }
  if (lc.from.layer != Layer::Agent || lc.to.layer != Layer::Agent) {
    throw ParseError(path + ": loop closure endpoints must be agent nodes");
  }
  lc.measurement = pose_from_json(require(value, "measurement", path), path + ".measurement");
  const Json& cov = get_array(require(value, "covariance", path), path + ".covariance");
  if (cov.size() != 36) {
    throw ParseError(path + ".covariance: expected 36 numbers (row-major 6x6)");
  }
  Matrix6 m;
  for (int i = 0; i < 36; ++i) {
    m(i / 6, i % 6) = get_double(cov[i], path + ".covariance[" + std::to_string(i) + "]");
  }
  try {
    lc.covariance = Covariance6(m);
  } catch (const std::invalid_argument& e) {
    throw ParseError(path + ".covariance: " + e.what());
  }
  return lc;
}

}  // namespace sgfuse
