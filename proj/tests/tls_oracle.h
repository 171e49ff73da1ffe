#pragma once

#include <cstdint>
#include <limits>
#include <random>

#include "sgfuse/gnc.h"

namespace sgfuse::test {

// Robust averaging in R³ with a known outlier labeling.
struct AveragingProblem {
  std::vector<Vector3> z;
  std::vector<bool> outlier;
  double eps = 1.0;
};

inline AveragingProblem make_averaging(std::mt19937_64& rng, int n, int n_out, double eps) {
  AveragingProblem p;
  p.eps = eps;
  std::normal_distribution<double> noise(0.0, 0.1 * eps);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Vector3 truth(u(rng) * 5, u(rng) * 5, u(rng) * 5);
  for (int i = 0; i < n; ++i) {
    if (i < n_out) {
      Vector3 dir(u(rng), u(rng), u(rng));
      dir.normalize();
      // Margin > 3ε from the truth and spread out so outliers do not agree.
      p.z.push_back(truth + dir * eps * (4.0 + 6.0 * (u(rng) + 1.0)));
      p.outlier.push_back(true);
    } else {
      p.z.push_back(truth + Vector3(noise(rng), noise(rng), noise(rng)));
      p.outlier.push_back(false);
    }
  }
  return p;
}

inline RobustProblem to_problem(const AveragingProblem& p, const Vector3& start) {
  RobustProblem prob;
  prob.values.add(VectorX(start));
  for (const Vector3& z : p.z) {
    prob.residuals.push_back(
        std::make_shared<VectorPriorResidual>(0, VectorX(z), MatrixX::Identity(3, 3), true));
  }
  return prob;
}

// Exhaustive TLS: the optimum's inlier set is the subset whose mean minimizes
// Σ min(r², ε²).
inline std::vector<bool> brute_force_tls(const AveragingProblem& p) {
  const std::size_t n = p.z.size();
  const double eps2 = p.eps * p.eps;
  double best = std::numeric_limits<double>::infinity();
  Vector3 best_x = Vector3::Zero();
  for (std::uint32_t mask = 1; mask < (1u << n); ++mask) {
    Vector3 mean = Vector3::Zero();
    int count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask & (1u << i)) {
        mean += p.z[i];
        ++count;
      }
    }
    mean /= count;
    double cost = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      cost += std::min((p.z[i] - mean).squaredNorm(), eps2);
    }
    if (cost < best) {
      best = cost;
      best_x = mean;
    }
  }
  std::vector<bool> inliers(n);
  for (std::size_t i = 0; i < n; ++i) {
    inliers[i] = (p.z[i] - best_x).squaredNorm() <= eps2;
  }
  return inliers;
}

}  // namespace sgfuse::test
