#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <random>

#include "sgfuse/reconciliation.h"
#include "sgfuse/serialization.h"
#include "test_util.h"

namespace sgfuse {
namespace {

using test::pose_gap;

// Horn's closed-form absolute orientation with known correspondences (dst ≈ T·src).
Pose horn(const std::vector<Vector3>& src, const std::vector<Vector3>& dst) {
  Vector3 cs = Vector3::Zero();
  Vector3 cd = Vector3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    cs += src[i];
    cd += dst[i];
  }
  cs /= double(src.size());
  cd /= double(dst.size());
  Matrix3 s = Matrix3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    s += (src[i] - cs) * (dst[i] - cd).transpose();
  }
  Eigen::Matrix4d n;
  n << s(0, 0) + s(1, 1) + s(2, 2), s(1, 2) - s(2, 1), s(2, 0) - s(0, 2), s(0, 1) - s(1, 0),
      s(1, 2) - s(2, 1), s(0, 0) - s(1, 1) - s(2, 2), s(0, 1) + s(1, 0), s(2, 0) + s(0, 2),
      s(2, 0) - s(0, 2), s(0, 1) + s(1, 0), -s(0, 0) + s(1, 1) - s(2, 2), s(1, 2) + s(2, 1),
      s(0, 1) - s(1, 0), s(2, 0) + s(0, 2), s(1, 2) + s(2, 1), -s(0, 0) - s(1, 1) + s(2, 2);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(n);
  const Eigen::Vector4d q = es.eigenvectors().col(3);
  const Eigen::Quaterniond rot(q[0], q[1], q[2], q[3]);
  const Matrix3 r = rot.normalized().toRotationMatrix();
  return Pose(r, cd - r * cs);
}

std::vector<Vector3> box_cloud(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Vector3> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.emplace_back(1.6 * u(rng), 0.9 * u(rng), 0.4 * u(rng));
  }
  return out;
}

void add_robot(SceneGraph& g, RobotId r) {
  RobotInfo info;
  info.id = r;
  g.add_robot(info);
}

// Brute-force scan over every pair.
std::vector<std::pair<NodeId, NodeId>> brute_places(const SceneGraph& g,
                                                    const ReconciliationConfig& cfg) {
  std::vector<std::pair<NodeId, NodeId>> out;
  const auto places = g.live_nodes(Layer::Place);
  for (const NodeId& a : places) {
    for (const NodeId& b : places) {
      if (!(a < b) || a.robot == b.robot) {
        continue;
      }
      const auto& pa = g.get<PlaceNode>(a);
      const auto& pb = g.get<PlaceNode>(b);
      if ((pa.position - pb.position).norm() <= cfg.place_distance_max &&
          std::abs(pa.radius - pb.radius) <= cfg.place_radius_diff_max) {
        out.emplace_back(a, b);
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

TEST(Reconciliation, PlaceProposalsMatchBruteForce) {
  ReconciliationConfig cfg;
  cfg.place_distance_max = 0.3;
  cfg.place_radius_diff_max = 0.1;
  for (int seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> pos(-3.0, 3.0);
    std::uniform_real_distribution<double> rad(0.5, 0.8);
    SceneGraph g;
    for (RobotId r = 0; r < 3; ++r) {
      add_robot(g, r);
      for (std::uint64_t i = 0; i < 120; ++i) {
        g.add_node({r, Layer::Place, i}, PlaceNode{Vector3(pos(rng), pos(rng), 0.1 * pos(rng)),
                                                   rad(rng)});
      }
    }
    const auto got = propose_place_merges(g, {0, 1, 2}, cfg);
    std::vector<std::pair<NodeId, NodeId>> pairs;
    for (const auto& c : got) {
      EXPECT_EQ(c.kind, CandidateKind::Place);
      EXPECT_LT(pose_gap(c.relative_transform, Pose::Identity()), 1e-15);
      pairs.emplace_back(c.a, c.b);
    }
    EXPECT_EQ(pairs, brute_places(g, cfg)) << "seed " << seed;

    // Uninitialized robots take no part.
    for (const auto& c : propose_place_merges(g, {0, 2}, cfg)) {
      EXPECT_NE(c.a.robot, 1u);
      EXPECT_NE(c.b.robot, 1u);
    }
  }
}

TEST(Reconciliation, PlaceBoundaryIsInclusive) {
  ReconciliationConfig cfg;
  cfg.place_distance_max = 0.5;
  cfg.place_radius_diff_max = 0.25;
  SceneGraph g;
  add_robot(g, 0);
  add_robot(g, 1);
  g.add_node({0, Layer::Place, 0}, PlaceNode{Vector3(0, 0, 0), 1.0});
  g.add_node({1, Layer::Place, 0}, PlaceNode{Vector3(0.5, 0, 0), 1.25});
  g.add_node({1, Layer::Place, 1}, PlaceNode{Vector3(0.5, 0, 0), 1.5});
  const auto got = propose_place_merges(g, {0, 1}, cfg);
  ASSERT_EQ(got.size(), 1u);
  EXPECT_EQ(got[0].b, (NodeId{1, Layer::Place, 0}));
}

TEST(Reconciliation, IcpMatchesHornOracle) {
  IcpConfig cfg;
  cfg.max_correspondence_distance = 0.5;
  for (int seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(40 + seed);
    const std::vector<Vector3> a = box_cloud(rng, 150);
    Twist v = test::random_twist(rng, 1.0);
    v.head<3>() *= 0.08;
    v.tail<3>() *= 0.1;
    const Pose truth = exp_map(v);  // maps b onto a
    std::vector<Vector3> b;
    for (const auto& p : a) {
      b.push_back(truth.inverse() * p);
    }
    const IcpResult r = icp_object_transform(a, b, cfg);
    ASSERT_TRUE(r.success) << "seed " << seed;
    const Pose oracle = horn(b, a);
    EXPECT_LT(pose_gap(oracle, truth), 1e-9);
    EXPECT_LT(pose_gap(r.transform, oracle), 1e-6) << "seed " << seed;
  }
}

TEST(Reconciliation, IcpNeedsThreePoints) {
  const std::vector<Vector3> two{Vector3::Zero(), Vector3::UnitX()};
  EXPECT_FALSE(icp_object_transform(two, two, IcpConfig{}).success);
  // Far-apart clouds of different shapes yield no mutual correspondences.
  IcpConfig cfg;
  cfg.max_correspondence_distance = 0.01;
  const std::vector<Vector3> a{Vector3(0, 0, 0), Vector3(1, 0, 0), Vector3(0, 1, 0)};
  const std::vector<Vector3> b{Vector3(0, 0, 0), Vector3(3, 0, 0), Vector3(0, 0, 5)};
  EXPECT_FALSE(icp_object_transform(a, b, cfg).success);
}

TEST(Reconciliation, FarthestPointSubsample) {
  std::vector<Vector3> pts;
  for (int i = 0; i <= 10; ++i) {
    pts.emplace_back(double(i), 0, 0);
  }
  const auto three = farthest_point_subsample(pts, 3);
  ASSERT_EQ(three.size(), 3u);
  EXPECT_EQ(three[0], Vector3(0, 0, 0));
  EXPECT_EQ(three[1], Vector3(10, 0, 0));
  EXPECT_EQ(three[2], Vector3(5, 0, 0));
  EXPECT_EQ(farthest_point_subsample(pts, 50).size(), pts.size());

  // Covering radius never grows as the cap increases.
  std::mt19937_64 rng(5);
  const auto cloud = box_cloud(rng, 400);
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t cap : {4u, 16u, 64u, 256u}) {
    const auto sub = farthest_point_subsample(cloud, cap);
    double cover = 0.0;
    for (const auto& p : cloud) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& s : sub) {
        best = std::min(best, (p - s).norm());
      }
      cover = std::max(cover, best);
    }
    EXPECT_LE(cover, prev + 1e-12);
    prev = cover;
  }
}

// Two robots observing the same objects; robot 1's copy is shifted by `offset`.
SceneGraph object_graph(std::size_t n, const Vector3& offset) {
  SceneGraph g;
  std::mt19937_64 rng(9);
  for (RobotId r : {0u, 1u}) {
    add_robot(g, r);
    std::uint64_t mesh = 0;
    for (std::uint64_t i = 0; i < n; ++i) {
      std::mt19937_64 local(100 + i);
      auto cloud = box_cloud(local, 30);
      ObjectNode obj;
      obj.label = int(i % 3);
      Vector3 lo = Vector3::Constant(1e9);
      Vector3 hi = Vector3::Constant(-1e9);
      Vector3 sum = Vector3::Zero();
      for (auto p : cloud) {
        p += Vector3(4.0 * double(i), 0, 0) + (r == 1 ? offset : Vector3::Zero());
        const NodeId vid{r, Layer::Mesh, mesh++};
        g.add_node(vid, MeshNode{p});
        obj.vertex_ids.push_back(vid);
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
        sum += p;
      }
      obj.bbox = Aabb{lo, hi};
      obj.centroid = sum / double(cloud.size());
      g.add_node({r, Layer::Object, i}, obj);
    }
  }
  (void)rng;
  return g;
}

TEST(Reconciliation, ObjectProposalsNeedLabelAndOverlap) {
  const SceneGraph g = object_graph(5, Vector3(0.05, 0, 0));
  ReconciliationConfig cfg;
  const auto cands = propose_object_merges(g, {0, 1}, cfg);
  ASSERT_EQ(cands.size(), 5u);
  for (const auto& c : cands) {
    EXPECT_EQ(c.kind, CandidateKind::Object);
    EXPECT_EQ(c.a.index, c.b.index);
    EXPECT_EQ(c.status, CandidateStatus::Proposed);
    EXPECT_LT(pose_gap(c.relative_transform, Pose::Translation(Vector3(-0.05, 0, 0))), 1e-6);
  }
  EXPECT_TRUE(propose_object_merges(g, {0}, cfg).empty());
  // Boxes no longer overlap.
  EXPECT_TRUE(propose_object_merges(object_graph(5, Vector3(0, 3.0, 0)), {0, 1}, cfg).empty());
}

std::vector<MergeCandidate> place_candidates(SceneGraph& g, std::size_t n) {
  add_robot(g, 0);
  add_robot(g, 1);
  std::vector<MergeCandidate> cands;
  for (std::uint64_t i = 0; i < n; ++i) {
    const Vector3 p(double(i) * 3.0, 0, 0);
    g.add_node({0, Layer::Place, i}, PlaceNode{p, 1.0});
    g.add_node({1, Layer::Place, i}, PlaceNode{p, 1.0});
    cands.push_back(MergeCandidate{{0, Layer::Place, i}, {1, Layer::Place, i}});
  }
  return cands;
}

TEST(Reconciliation, UndoBelowRatioRestoresGraph) {
  SceneGraph g;
  auto cands = place_candidates(g, 10);
  const std::string before = serialize(g);
  std::vector<bool> mask(10, false);
  for (int i = 0; i < 4; ++i) {
    mask[std::size_t(i)] = true;
  }
  const ApplyReport rep = validate_and_apply(g, cands, mask, ReconciliationConfig{});
  EXPECT_EQ(rep.valid, 4u);
  EXPECT_DOUBLE_EQ(rep.ratio, 0.4);
  EXPECT_EQ(rep.applied, 0u);
  EXPECT_EQ(rep.undone, 4u);
  EXPECT_EQ(serialize(g), before);
  EXPECT_EQ(g.num_live_nodes(Layer::Place), 20u);
}

TEST(Reconciliation, ApplyAtRatioThreshold) {
  SceneGraph g;
  auto cands = place_candidates(g, 10);
  std::vector<bool> mask(10, false);
  for (int i = 0; i < 5; ++i) {
    mask[std::size_t(i)] = true;
  }
  const ApplyReport rep = validate_and_apply(g, cands, mask, ReconciliationConfig{});
  EXPECT_EQ(rep.applied, 5u);
  EXPECT_EQ(rep.undone, 0u);
  EXPECT_EQ(g.num_live_nodes(Layer::Place), 15u);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(cands[i].status, i < 5 ? CandidateStatus::Valid : CandidateStatus::Invalid);
    EXPECT_EQ(g.is_live(cands[i].b), i >= 5);
  }
  g.check_invariants();
}

TEST(Reconciliation, ConflictingMergesAreSkipped) {
  SceneGraph g;
  auto cands = place_candidates(g, 2);
  // Both robot-1 places claim robot-0 place 0, and 1/0 claims 0/1 through a chain.
  cands.push_back(MergeCandidate{{0, Layer::Place, 0}, {1, Layer::Place, 1}});
  const ApplyReport rep = validate_and_apply(g, cands, {true, true, true}, ReconciliationConfig{});
  EXPECT_EQ(rep.applied, 2u);
  EXPECT_EQ(rep.skipped, 1u);
  g.check_invariants();
}

TEST(Reconciliation, MaskSizeMismatchThrows) {
  SceneGraph g;
  auto cands = place_candidates(g, 3);
  EXPECT_THROW(validate_and_apply(g, cands, {true}, ReconciliationConfig{}),
               std::invalid_argument);
}

TEST(Reconciliation, ConfigValidation) {
  ReconciliationConfig cfg;
  cfg.place_distance_max = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = ReconciliationConfig{};
  cfg.icp.max_iterations = 0;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

}  // namespace
}  // namespace sgfuse
