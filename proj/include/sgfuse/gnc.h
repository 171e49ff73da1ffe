#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <memory>
#include <optional>
#include <utility>
#include <variant>
#include <vector>

#include "sgfuse/liegroup.h"

namespace sgfuse {

using VectorX = Eigen::VectorXd;
using MatrixX = Eigen::MatrixXd;

using Variable = std::variant<Pose, VectorX>;

/// Manifold-valued unknowns. Poses are perturbed on the right, vectors
/// additively. Fixed variables keep their value during a solve.
class Values {
 public:
  std::size_t add(Variable value, bool fixed = false);

  std::size_t size() const { return values_.size(); }
  const Variable& at(std::size_t i) const { return values_.at(i); }
  const Pose& pose(std::size_t i) const { return std::get<Pose>(values_.at(i)); }
  const VectorX& vector(std::size_t i) const { return std::get<VectorX>(values_.at(i)); }
  void set(std::size_t i, Variable value);
  bool fixed(std::size_t i) const { return fixed_.at(i); }
  void set_fixed(std::size_t i, bool fixed) { fixed_.at(i) = fixed; }
  int tangent_dim(std::size_t i) const;
  void retract(std::size_t i, const VectorX& delta);

  bool operator==(const Values& other) const;

 private:
  std::vector<Variable> values_;
  std::vector<bool> fixed_;
};

/// A residual e(x) with information Ω; its squared Mahalanobis norm is eᵀΩe.
class Residual {
 public:
  Residual(std::vector<std::size_t> keys, MatrixX information, bool robust);
  virtual ~Residual() = default;

  const std::vector<std::size_t>& keys() const { return keys_; }
  const MatrixX& information() const { return information_; }
  bool robust() const { return robust_; }
  int dim() const { return static_cast<int>(information_.rows()); }

  // Error and, when requested, one Jacobian per key w.r.t. its tangent space.
  virtual VectorX error(const Values& values, std::vector<MatrixX>* jacobians) const = 0;
  double squared_norm(const Values& values) const;

 private:
  std::vector<std::size_t> keys_;
  MatrixX information_;
  bool robust_;
};

// log(E⁻¹ · Tᵢ⁻¹ · Tⱼ)
class BetweenPoseResidual : public Residual {
 public:
  BetweenPoseResidual(std::size_t i, std::size_t j, const Pose& measurement,
                      const Matrix6& information, bool robust);
  VectorX error(const Values& values, std::vector<MatrixX>* jacobians) const override;
  const Pose& measurement() const { return measurement_; }

 private:
  Pose measurement_;
};

// log(Z⁻¹ · X)
class PosePriorResidual : public Residual {
 public:
  PosePriorResidual(std::size_t i, const Pose& measurement, const Matrix6& information,
                    bool robust);
  VectorX error(const Values& values, std::vector<MatrixX>* jacobians) const override;

 private:
  Pose measurement_;
};

// x − z
class VectorPriorResidual : public Residual {
 public:
  VectorPriorResidual(std::size_t i, VectorX measurement, MatrixX information, bool robust);
  VectorX error(const Values& values, std::vector<MatrixX>* jacobians) const override;

 private:
  VectorX measurement_;
};

struct RobustProblem {
  Values values;  // initial guess
  std::vector<std::shared_ptr<const Residual>> residuals;

  // Throws std::invalid_argument when a residual references a missing or
  // incompatible variable.
  void validate() const;
};

struct InnerSolverConfig {
  int max_iterations = 20;
  double tolerance = 1e-10;  // on the update norm
};

struct GncConfig {
  // Mahalanobis norm bound for an inlier; when unset each residual uses the
  // square root of the chi-square 0.99 quantile at its dimension.
  std::optional<double> inlier_threshold;
  double mu_update_factor = 1.4;
  int max_outer_iterations = 200;
  double weight_tolerance = 1e-3;
  InnerSolverConfig inner;

  void validate() const;
};

struct SolveReport {
  Values values;
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  bool converged = false;
  // Free variables left unconstrained by the weighted residuals.
  std::vector<std::size_t> rank_deficient;
};

// Minimizes Σ wᵢ eᵢᵀΩᵢeᵢ by Gauss-Newton from `initial`.
SolveReport solve_weighted(const RobustProblem& problem, const Values& initial,
                           const std::vector<double>& weights, const InnerSolverConfig& config);

struct SurrogateStep {
  double mu = 0.0;
  double before = 0.0;
  double after = 0.0;
};

struct GncResult {
  Values values;
  std::vector<double> weights;
  std::vector<bool> inliers;  // weight > 0.5
  bool converged = false;
  bool no_inliers = false;  // every robust weight went to zero
  int iterations = 0;
  std::vector<std::size_t> rank_deficient;
  std::vector<SurrogateStep> trace;
};

GncResult solve_gnc(const RobustProblem& problem, const GncConfig& config);

// sqrt of the chi-square quantile with `dim` degrees of freedom.
double chi2_inlier_threshold(int dim, double probability = 0.99);

// Closed-form TLS weight for squared residual r2, threshold eps2, and μ.
double tls_weight(double r2, double eps2, double mu);

// Σ [w r² + μ(1−w)ε²/(μ+w)] over robust residuals plus Σ r² over trusted ones.
double gnc_surrogate(const std::vector<double>& r2, const std::vector<double>& eps2,
                     const std::vector<double>& weights, const std::vector<bool>& robust,
                     double mu);

}  // namespace sgfuse
