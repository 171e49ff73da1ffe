#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <random>

namespace sgfuse {

using Vector3 = Eigen::Vector3d;
using Matrix3 = Eigen::Matrix3d;
using Matrix6 = Eigen::Matrix<double, 6, 6>;

// Tangent vector of SE(3), rotation first: (wx, wy, wz, vx, vy, vz).
using Twist = Eigen::Matrix<double, 6, 1>;

/**
 * Rigid body transform stored as a unit quaternion and a translation.
 *
 * The quaternion is kept in canonical form (qw >= 0; when qw == 0 the first
 * nonzero vector component is positive), so two poses describing the same
 * transform compare equal component-wise.
 */
class Pose {
 public:
  Pose() : rotation_(Eigen::Quaterniond::Identity()), translation_(Vector3::Zero()) {}
  Pose(const Eigen::Quaterniond& rotation, const Vector3& translation);
  Pose(const Matrix3& rotation, const Vector3& translation);

  static Pose Identity() { return Pose(); }
  static Pose Translation(const Vector3& t) { return Pose(Eigen::Quaterniond::Identity(), t); }
  static Pose Rotation(const Eigen::Quaterniond& q) { return Pose(q, Vector3::Zero()); }
  static Pose RotZ(double angle, const Vector3& t = Vector3::Zero());

  // (qw, qx, qy, qz, tx, ty, tz)
  static Pose FromArray(const std::array<double, 7>& a);
  std::array<double, 7> to_array() const;

  const Eigen::Quaterniond& rotation() const { return rotation_; }
  Matrix3 rotation_matrix() const { return rotation_.toRotationMatrix(); }
  const Vector3& translation() const { return translation_; }
  Eigen::Matrix4d matrix() const;

  Pose operator*(const Pose& other) const;
  Vector3 operator*(const Vector3& point) const { return rotation_ * point + translation_; }
  Pose inverse() const;

  bool operator==(const Pose& other) const { return to_array() == other.to_array(); }
  bool operator!=(const Pose& other) const { return !(*this == other); }

 private:
  void canonicalize();

  Eigen::Quaterniond rotation_;
  Vector3 translation_;
};

Matrix3 skew(const Vector3& v);

Eigen::Quaterniond so3_exp(const Vector3& omega);
// Principal logarithm; the result has norm in [0, pi].
Vector3 so3_log(const Eigen::Quaterniond& q);
Matrix3 so3_left_jacobian(const Vector3& omega);
Matrix3 so3_left_jacobian_inverse(const Vector3& omega);

Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& x);
Pose exp_map(const Twist& v);
Twist log_map(const Pose& x);

// Right perturbation: x * exp(v).
Pose boxplus(const Pose& x, const Twist& v);
// Tangent-space representation of inverse(x) * y.
Twist boxminus(const Pose& x, const Pose& y);

// Ad(T) such that T * exp(v) * inverse(T) == exp(Ad(T) v).
Matrix6 adjoint(const Pose& x);
// Jr(v)^-1: log(exp(v) * exp(d)) ~= v + Jr^-1(v) d for small d.
Matrix6 se3_right_jacobian_inverse(const Twist& v);

double rotation_angle(const Pose& x);
double chordal_distance(const Pose& a, const Pose& b);

/// Symmetric positive definite 6x6 covariance. Validated on construction.
class Covariance6 {
 public:
  explicit Covariance6(const Matrix6& sigma);

  static Covariance6 Identity() { return Covariance6(Matrix6::Identity()); }
  static Covariance6 Diagonal(const Twist& variances);
  // Diagonal information values (rotation block, translation block).
  static Covariance6 FromInformationDiagonal(double rotation_info, double translation_info);

  const Matrix6& matrix() const { return sigma_; }
  const Matrix6& information() const { return information_; }

 private:
  Matrix6 sigma_;
  Matrix6 information_;
};

// v^T sigma^-1 v
double mahalanobis_sq(const Twist& v, const Covariance6& sigma);

Eigen::Quaterniond random_rotation(std::mt19937_64& rng);
Pose random_pose(std::mt19937_64& rng, double translation_scale);

}  // namespace sgfuse
