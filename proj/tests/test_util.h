#pragma once

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "sgfuse/liegroup.h"
#include "sgfuse/scene_graph.h"

namespace sgfuse::test {

inline double pose_gap(const Pose& a, const Pose& b) {
  return (a.matrix() - b.matrix()).cwiseAbs().maxCoeff();
}

inline Twist random_twist(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Twist v;
  for (int i = 0; i < 6; ++i) {
    v[i] = u(rng);
  }
  return v;
}

// Rotation matrix from axis-angle, computed with Rodrigues' formula directly.
inline Matrix3 rodrigues(const Vector3& w) {
  const double th = w.norm();
  if (th < 1e-12) {
    return Matrix3::Identity() + skew(w);
  }
  const Matrix3 k = skew(w / th);
  return Matrix3::Identity() + std::sin(th) * k + (1.0 - std::cos(th)) * k * k;
}

// Two-robot graph with one node on every layer per robot.
inline SceneGraph small_graph() {
  SceneGraph g;
  for (RobotId r : {0u, 1u}) {
    RobotInfo info;
    info.id = r;
    info.mesh_vertices = {Vector3(0.5, 0.25, 0.0), Vector3(1.0, -0.5, 0.125)};
    g.add_robot(info);
    const double o = static_cast<double>(r) * 0.5;
    g.add_node({r, Layer::Agent, 0}, AgentNode{Pose::RotZ(0.25, Vector3(o, 0.0, 1.0)), 0.0});
    g.add_node({r, Layer::Agent, 1}, AgentNode{Pose::RotZ(0.5, Vector3(o + 1.0, 0.0, 1.0)), 1.0});
    g.add_node({r, Layer::Place, 0}, PlaceNode{Vector3(o + 0.5, 0.5, 1.0), 0.75});
    g.add_node({r, Layer::Room, 0},
               RoomNode{Vector3(o + 2.0, 2.0, 1.5), Aabb{Vector3(o, 0, 0), Vector3(o + 4, 4, 3)}});
    g.add_node({r, Layer::Mesh, 0}, MeshNode{Vector3(o + 1.0, 1.0, 0.0)});
    g.add_node({r, Layer::Mesh, 1}, MeshNode{Vector3(o + 1.5, 1.0, 0.5)});
    ObjectNode obj;
    obj.label = 3;
    obj.vertex_ids = {{r, Layer::Mesh, 0}, {r, Layer::Mesh, 1}};
    obj.centroid = Vector3(o + 1.25, 1.0, 0.25);
    obj.bbox = Aabb{Vector3(o + 1.0, 1.0, 0.0), Vector3(o + 1.5, 1.0, 0.5)};
    g.add_node({r, Layer::Object, 0}, obj);
    g.add_edge(Edge::Inclusion({r, Layer::Agent, 0}, {r, Layer::Place, 0}));
    g.add_edge(Edge::Inclusion({r, Layer::Object, 0}, {r, Layer::Place, 0}));
    g.add_edge(Edge::Inclusion({r, Layer::Place, 0}, {r, Layer::Room, 0}));
  }
  return g;
}

}  // namespace sgfuse::test
