#include "sgfuse/liegroup.h"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <stdexcept>

namespace sgfuse {

namespace {

constexpr double kSmallAngle = 1e-8;

Eigen::Quaterniond canonical(Eigen::Quaterniond q) {
  // Unit quaternions are left bit-identical so serialized poses roundtrip exactly.
  if (std::abs(q.norm() - 1.0) > 1e-15) {
    q.normalize();
  }
  bool flip = q.w() < 0.0;
  if (q.w() == 0.0) {
    for (int i = 0; i < 3; ++i) {
      if (q.vec()[i] != 0.0) {
        flip = q.vec()[i] < 0.0;
        break;
      }
    }
  }
  if (flip) {
    q.coeffs() *= -1.0;
  }
  return q;
}

// (theta - sin theta) / theta^3
double coeff_b(double theta) {
  if (theta < 1e-2) {
    const double t2 = theta * theta;
    return 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0;
  }
  return (theta - std::sin(theta)) / (theta * theta * theta);
}

// (1 - cos theta) / theta^2
double coeff_a(double theta) {
  if (theta < kSmallAngle) {
    return 0.5;
  }
  const double s = std::sin(0.5 * theta);
  return 2.0 * s * s / (theta * theta);
}

}  // namespace

Pose::Pose(const Eigen::Quaterniond& rotation, const Vector3& translation)
    : rotation_(rotation), translation_(translation) {
  canonicalize();
}

Pose::Pose(const Matrix3& rotation, const Vector3& translation)
    : rotation_(Eigen::Quaterniond(rotation)), translation_(translation) {
  canonicalize();
}

Pose Pose::RotZ(double angle, const Vector3& t) {
  return Pose(Eigen::Quaterniond(Eigen::AngleAxisd(angle, Vector3::UnitZ())), t);
}

Pose Pose::FromArray(const std::array<double, 7>& a) {
  return Pose(Eigen::Quaterniond(a[0], a[1], a[2], a[3]), Vector3(a[4], a[5], a[6]));
}

std::array<double, 7> Pose::to_array() const {
  return {rotation_.w(),     rotation_.x(),     rotation_.y(),    rotation_.z(),
          translation_.x(), translation_.y(), translation_.z()};
}

Eigen::Matrix4d Pose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation_matrix();
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

Pose Pose::operator*(const Pose& other) const {
  return Pose(rotation_ * other.rotation_, rotation_ * other.translation_ + translation_);
}

Pose Pose::inverse() const {
  const Eigen::Quaterniond inv = rotation_.conjugate();
  return Pose(inv, -(inv * translation_));
}

void Pose::canonicalize() {
  const double norm = rotation_.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw std::invalid_argument("pose rotation quaternion must be finite and nonzero");
  }
  rotation_ = canonical(rotation_);
}

Matrix3 skew(const Vector3& v) {
  Matrix3 s;
  // clang-format off
  s <<    0.0, -v.z(),  v.y(),
        v.z(),    0.0, -v.x(),
       -v.y(),  v.x(),    0.0;
  // clang-format on
  return s;
}

Eigen::Quaterniond so3_exp(const Vector3& omega) {
  const double theta = omega.norm();
  if (theta < kSmallAngle) {
    const double t2 = theta * theta;
    Eigen::Quaterniond q;
    q.w() = 1.0 - t2 / 8.0;
    q.vec() = 0.5 * (1.0 - t2 / 24.0) * omega;
    return q.normalized();
  }
  const double half = 0.5 * theta;
  Eigen::Quaterniond q;
  q.w() = std::cos(half);
  q.vec() = (std::sin(half) / theta) * omega;
  return q;
}

Vector3 so3_log(const Eigen::Quaterniond& q_in) {
  const Eigen::Quaterniond q = canonical(q_in);
  const double n = q.vec().norm();
  const double w = q.w();
  if (n < 0.5 * kSmallAngle) {
    // 2 atan(n / w) / n ~= (2 / w) (1 - n^2 / (3 w^2))
    return (2.0 / w) * (1.0 - n * n / (3.0 * w * w)) * q.vec();
  }
  const double theta = 2.0 * std::atan2(n, w);
  return (theta / n) * q.vec();
}

Matrix3 so3_left_jacobian(const Vector3& omega) {
  const double theta = omega.norm();
  const Matrix3 w = skew(omega);
  return Matrix3::Identity() + coeff_a(theta) * w + coeff_b(theta) * w * w;
}

Matrix3 so3_left_jacobian_inverse(const Vector3& omega) {
  const double theta = omega.norm();
  const Matrix3 w = skew(omega);
  double c;
  if (theta < 1e-2) {
    const double t2 = theta * theta;
    c = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0;
  } else {
    const double half = 0.5 * theta;
    c = (1.0 - half * std::cos(half) / std::sin(half)) / (theta * theta);
  }
  return Matrix3::Identity() - 0.5 * w + c * w * w;
}

Pose compose(const Pose& a, const Pose& b) { return a * b; }

Pose inverse(const Pose& x) { return x.inverse(); }

Pose exp_map(const Twist& v) {
  const Vector3 omega = v.head<3>();
  const Vector3 rho = v.tail<3>();
  return Pose(so3_exp(omega), so3_left_jacobian(omega) * rho);
}

Twist log_map(const Pose& x) {
  Twist v;
  const Vector3 omega = so3_log(x.rotation());
  v.head<3>() = omega;
  v.tail<3>() = so3_left_jacobian_inverse(omega) * x.translation();
  return v;
}

Pose boxplus(const Pose& x, const Twist& v) { return x * exp_map(v); }

Twist boxminus(const Pose& x, const Pose& y) { return log_map(x.inverse() * y); }

Matrix6 adjoint(const Pose& x) {
  const Matrix3 r = x.rotation_matrix();
  Matrix6 ad = Matrix6::Zero();
  ad.topLeftCorner<3, 3>() = r;
  ad.bottomRightCorner<3, 3>() = r;
  ad.bottomLeftCorner<3, 3>() = skew(x.translation()) * r;
  return ad;
}

namespace {

// Coupling block of the SE(3) left Jacobian, rotation-first layout.
Matrix3 se3_q_block(const Vector3& rho, const Vector3& phi) {
  const double theta = phi.norm();
  double c1, c2, c3;
  if (theta < 0.1) {
    const double t2 = theta * theta;
    const double t4 = t2 * t2;
    c1 = 1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0;
    c2 = 1.0 / 24.0 - t2 / 720.0 + t4 / 40320.0;
    c3 = 1.0 / 120.0 - t2 / 2520.0 + t4 / 120960.0;
  } else {
    const double s = std::sin(theta);
    const double c = std::cos(theta);
    const double t2 = theta * theta;
    c1 = (theta - s) / (t2 * theta);
    c2 = (t2 + 2.0 * c - 2.0) / (2.0 * t2 * t2);
    c3 = (2.0 * theta - 3.0 * s + theta * c) / (2.0 * t2 * t2 * theta);
  }
  const Matrix3 p = skew(phi);
  const Matrix3 r = skew(rho);
  const Matrix3 pr = p * r;
  const Matrix3 rp = r * p;
  const Matrix3 prp = pr * p;
  return 0.5 * r + c1 * (pr + rp + prp) + c2 * (p * pr + rp * p - 3.0 * prp) +
         c3 * (prp * p + p * prp);
}

}  // namespace

Matrix6 se3_right_jacobian_inverse(const Twist& v) {
  // Jr(v) = Jl(-v); Jl = [[A, 0], [Q, A]] in rotation-first layout.
  const Vector3 phi = -v.head<3>();
  const Vector3 rho = -v.tail<3>();
  const Matrix3 a_inv = so3_left_jacobian_inverse(phi);
  const Matrix3 q = se3_q_block(rho, phi);
  Matrix6 out = Matrix6::Zero();
  out.topLeftCorner<3, 3>() = a_inv;
  out.bottomRightCorner<3, 3>() = a_inv;
  out.bottomLeftCorner<3, 3>() = -a_inv * q * a_inv;
  return out;
}

double rotation_angle(const Pose& x) { return so3_log(x.rotation()).norm(); }

double chordal_distance(const Pose& a, const Pose& b) {
  const double dr = (a.rotation_matrix() - b.rotation_matrix()).squaredNorm();
  const double dt = (a.translation() - b.translation()).squaredNorm();
  return std::sqrt(dr + dt);
}

Covariance6::Covariance6(const Matrix6& sigma) : sigma_(sigma) {
  if (!sigma.allFinite()) {
    throw std::invalid_argument("covariance must be finite");
  }
  if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
    throw std::invalid_argument("covariance must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix6> eig(sigma);
  if (eig.info() != Eigen::Success || eig.eigenvalues().minCoeff() <= 0.0) {
    throw std::invalid_argument("covariance must be positive definite");
  }
  information_ = eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() *
                 eig.eigenvectors().transpose();
  information_ = 0.5 * (information_ + information_.transpose());
}

Covariance6 Covariance6::Diagonal(const Twist& variances) {
  return Covariance6(Matrix6(variances.asDiagonal()));
}

Covariance6 Covariance6::FromInformationDiagonal(double rotation_info, double translation_info) {
  Twist var;
  var << Vector3::Constant(1.0 / rotation_info), Vector3::Constant(1.0 / translation_info);
  return Diagonal(var);
}

double mahalanobis_sq(const Twist& v, const Covariance6& sigma) {
  return v.dot(sigma.information() * v);
}

Eigen::Quaterniond random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  return q.normalized();
}

Pose random_pose(std::mt19937_64& rng, double translation_scale) {
  std::uniform_real_distribution<double> u(-translation_scale, translation_scale);
  const Eigen::Quaterniond q = random_rotation(rng);
  return Pose(q, Vector3(u(rng), u(rng), u(rng)));
}

}  // namespace sgfuse
