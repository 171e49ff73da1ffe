#include "sgfuse/gnc.h"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace sgfuse {

std::size_t Values::add(Variable value, bool fixed) {
  values_.push_back(std::move(value));
  fixed_.push_back(fixed);
  return values_.size() - 1;
}

void Values::set(std::size_t i, Variable value) {
  if (value.index() != values_.at(i).index()) {
    throw std::invalid_argument("variable kind cannot change");
  }
  values_[i] = std::move(value);
}

int Values::tangent_dim(std::size_t i) const {
  const Variable& v = values_.at(i);
  if (std::holds_alternative<Pose>(v)) {
    return 6;
  }
  return static_cast<int>(std::get<VectorX>(v).size());
}

void Values::retract(std::size_t i, const VectorX& delta) {
  Variable& v = values_.at(i);
  if (auto* pose = std::get_if<Pose>(&v)) {
    *pose = boxplus(*pose, Twist(delta));
  } else {
    std::get<VectorX>(v) += delta;
  }
}

bool Values::operator==(const Values& other) const {
  if (fixed_ != other.fixed_ || values_.size() != other.values_.size()) {
    return false;
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (values_[i].index() != other.values_[i].index()) {
      return false;
    }
    if (const auto* p = std::get_if<Pose>(&values_[i])) {
      if (*p != std::get<Pose>(other.values_[i])) {
        return false;
      }
    } else {
      const VectorX& a = std::get<VectorX>(values_[i]);
      const VectorX& b = std::get<VectorX>(other.values_[i]);
      if (a.size() != b.size() || a != b) {
        return false;
      }
    }
  }
  return true;
}

Residual::Residual(std::vector<std::size_t> keys, MatrixX information, bool robust)
    : keys_(std::move(keys)), information_(std::move(information)), robust_(robust) {
  if (information_.rows() != information_.cols() || information_.rows() == 0) {
    throw std::invalid_argument("residual information must be a nonempty square matrix");
  }
}

double Residual::squared_norm(const Values& values) const {
  const VectorX e = error(values, nullptr);
  return e.dot(information_ * e);
}

BetweenPoseResidual::BetweenPoseResidual(std::size_t i, std::size_t j, const Pose& measurement,
                                         const Matrix6& information, bool robust)
    : Residual({i, j}, information, robust), measurement_(measurement) {}

VectorX BetweenPoseResidual::error(const Values& values, std::vector<MatrixX>* jacobians) const {
  const Pose& ti = values.pose(keys()[0]);
  const Pose& tj = values.pose(keys()[1]);
  const Pose rel = ti.inverse() * tj;
  const Twist e = log_map(measurement_.inverse() * rel);
  if (jacobians != nullptr) {
    const Matrix6 jr_inv = se3_right_jacobian_inverse(e);
    jacobians->resize(2);
    (*jacobians)[0] = -jr_inv * adjoint(rel.inverse());
    (*jacobians)[1] = jr_inv;
  }
  return e;
}

PosePriorResidual::PosePriorResidual(std::size_t i, const Pose& measurement,
                                     const Matrix6& information, bool robust)
    : Residual({i}, information, robust), measurement_(measurement) {}

VectorX PosePriorResidual::error(const Values& values, std::vector<MatrixX>* jacobians) const {
  const Twist e = log_map(measurement_.inverse() * values.pose(keys()[0]));
  if (jacobians != nullptr) {
    jacobians->assign(1, se3_right_jacobian_inverse(e));
  }
  return e;
}

VectorPriorResidual::VectorPriorResidual(std::size_t i, VectorX measurement, MatrixX information,
                                         bool robust)
    : Residual({i}, std::move(information), robust), measurement_(std::move(measurement)) {
  if (measurement_.size() != dim()) {
    throw std::invalid_argument("vector prior dimension mismatch");
  }
}

VectorX VectorPriorResidual::error(const Values& values, std::vector<MatrixX>* jacobians) const {
  const VectorX& x = values.vector(keys()[0]);
  if (jacobians != nullptr) {
    jacobians->assign(1, MatrixX::Identity(dim(), dim()));
  }
  return x - measurement_;
}

void RobustProblem::validate() const {
  for (std::size_t r = 0; r < residuals.size(); ++r) {
    const Residual& res = *residuals[r];
    const auto& keys = res.keys();
    for (std::size_t k = 0; k < keys.size(); ++k) {
      if (keys[k] >= values.size()) {
        throw std::invalid_argument("residual " + std::to_string(r) + " references variable " +
                                    std::to_string(keys[k]) + " which does not exist");
      }
      for (std::size_t m = k + 1; m < keys.size(); ++m) {
        if (keys[k] == keys[m]) {
          throw std::invalid_argument("residual " + std::to_string(r) +
                                      " references one variable twice");
        }
      }
    }
    std::vector<MatrixX> jac;
    const VectorX e = res.error(values, &jac);
    if (e.size() != res.dim()) {
      throw std::invalid_argument("residual " + std::to_string(r) +
                                  " dimension does not match its information matrix");
    }
    for (std::size_t k = 0; k < keys.size(); ++k) {
      if (jac[k].rows() != res.dim() || jac[k].cols() != values.tangent_dim(keys[k])) {
        throw std::invalid_argument("residual " + std::to_string(r) +
                                    " Jacobian does not match variable " + std::to_string(keys[k]));
      }
    }
  }
}

void GncConfig::validate() const {
  if (inlier_threshold && !(*inlier_threshold > 0.0)) {
    throw std::invalid_argument("gnc inlier_threshold must be positive");
  }
  if (!(mu_update_factor > 1.0)) {
    throw std::invalid_argument("gnc mu_update_factor must be greater than 1");
  }
  if (max_outer_iterations < 1 || inner.max_iterations < 1) {
    throw std::invalid_argument("gnc iteration caps must be at least 1");
  }
  if (!(inner.tolerance > 0.0) || !(weight_tolerance > 0.0) || !(weight_tolerance < 0.5)) {
    throw std::invalid_argument("gnc tolerances out of range");
  }
}

namespace {

using SparseMatrix = Eigen::SparseMatrix<double>;

/**
 * Sparse normal equations with a fixed block pattern. The symbolic analysis
 * is done once and reused for every weight vector and damping value.
 */
class NormalEquations {
 public:
  explicit NormalEquations(const RobustProblem& problem) : problem_(problem) {
    const Values& values = problem.values;
    offsets_.assign(values.size(), -1);
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!values.fixed(i)) {
        offsets_[i] = dim_;
        free_.push_back(i);
        dim_ += values.tangent_dim(i);
      }
    }

    std::map<std::pair<std::size_t, std::size_t>, std::size_t> block_ids;
    auto block_of = [&](std::size_t a, std::size_t b) {
      const auto key = std::make_pair(a, b);
      const auto it = block_ids.find(key);
      if (it != block_ids.end()) {
        return it->second;
      }
      block_ids.emplace(key, blocks_.size());
      blocks_.push_back(Block{a, b, {}});
      return blocks_.size() - 1;
    };
    for (const std::size_t v : free_) {
      diag_block_.push_back(block_of(v, v));
    }
    residual_blocks_.resize(problem.residuals.size());
    for (std::size_t r = 0; r < problem.residuals.size(); ++r) {
      const auto& keys = problem.residuals[r]->keys();
      for (std::size_t p = 0; p < keys.size(); ++p) {
        for (std::size_t q = 0; q < keys.size(); ++q) {
          const std::size_t a = keys[p];
          const std::size_t b = keys[q];
          if (offsets_[a] < 0 || offsets_[b] < 0 || offsets_[a] < offsets_[b]) {
            continue;
          }
          residual_blocks_[r].push_back(BlockUse{p, q, block_of(a, b)});
        }
      }
    }

    std::vector<Eigen::Triplet<double>> triplets;
    for (const Block& blk : blocks_) {
      const int ra = offsets_[blk.row];
      const int cb = offsets_[blk.col];
      const int da = values.tangent_dim(blk.row);
      const int db = values.tangent_dim(blk.col);
      for (int j = 0; j < db; ++j) {
        for (int i = 0; i < da; ++i) {
          triplets.emplace_back(ra + i, cb + j, 1.0);
        }
      }
    }
    matrix_.resize(dim_, dim_);
    matrix_.setFromTriplets(triplets.begin(), triplets.end());
    matrix_.makeCompressed();
    for (Block& blk : blocks_) {
      const int ra = offsets_[blk.row];
      const int cb = offsets_[blk.col];
      const int db = values.tangent_dim(blk.col);
      for (int j = 0; j < db; ++j) {
        const int col = cb + j;
        const int* begin = matrix_.innerIndexPtr() + matrix_.outerIndexPtr()[col];
        const int* end = matrix_.innerIndexPtr() + matrix_.outerIndexPtr()[col + 1];
        blk.column_start.push_back(static_cast<int>(std::lower_bound(begin, end, ra) -
                                                    matrix_.innerIndexPtr()));
      }
    }
    if (dim_ > 0) {
      llt_.analyzePattern(matrix_);
    }
  }

  int dim() const { return dim_; }

  double cost(const Values& values, const std::vector<double>& weights) const {
    double total = 0.0;
    for (std::size_t r = 0; r < problem_.residuals.size(); ++r) {
      if (weights[r] > 0.0) {
        total += weights[r] * problem_.residuals[r]->squared_norm(values);
      }
    }
    return total;
  }

  // Linearizes at `values`; returns the cost there.
  double linearize(const Values& values, const std::vector<double>& weights) {
    std::fill(matrix_.valuePtr(), matrix_.valuePtr() + matrix_.nonZeros(), 0.0);
    gradient_ = VectorX::Zero(dim_);
    double total = 0.0;
    std::vector<MatrixX> jac;
    for (std::size_t r = 0; r < problem_.residuals.size(); ++r) {
      const double w = weights[r];
      if (!(w > 0.0)) {
        continue;
      }
      const Residual& res = *problem_.residuals[r];
      const VectorX e = res.error(values, &jac);
      const MatrixX& info = res.information();
      const VectorX info_e = info * e;
      total += w * e.dot(info_e);
      const auto& keys = res.keys();
      for (std::size_t p = 0; p < keys.size(); ++p) {
        const int off = offsets_[keys[p]];
        if (off >= 0) {
          gradient_.segment(off, jac[p].cols()) += w * jac[p].transpose() * info_e;
        }
      }
      for (const BlockUse& use : residual_blocks_[r]) {
        const MatrixX h = w * jac[use.p].transpose() * info * jac[use.q];
        add_block(blocks_[use.block], h);
      }
    }
    return total;
  }

  // Free variables whose diagonal block received no information.
  std::vector<std::size_t> unconstrained() const {
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < free_.size(); ++k) {
      const Block& blk = blocks_[diag_block_[k]];
      double max_abs = 0.0;
      const int d = static_cast<int>(blk.column_start.size());
      for (int j = 0; j < d; ++j) {
        for (int i = 0; i < d; ++i) {
          max_abs = std::max(max_abs, std::abs(matrix_.valuePtr()[blk.column_start[j] + i]));
        }
      }
      if (max_abs < 1e-12) {
        out.push_back(free_[k]);
      }
    }
    return out;
  }

  // Solves (H + λI) δ = −g. Returns false when the factorization fails.
  bool solve(double lambda, VectorX& delta) {
    SparseMatrix h = matrix_;
    if (lambda > 0.0) {
      for (std::size_t k = 0; k < free_.size(); ++k) {
        const Block& blk = blocks_[diag_block_[k]];
        for (std::size_t j = 0; j < blk.column_start.size(); ++j) {
          h.valuePtr()[blk.column_start[j] + static_cast<int>(j)] += lambda;
        }
      }
    }
    llt_.factorize(h);
    if (llt_.info() != Eigen::Success) {
      return false;
    }
    delta = llt_.solve(-gradient_);
    return llt_.info() == Eigen::Success && delta.allFinite();
  }

  Values retract(const Values& values, const VectorX& delta) const {
    Values out = values;
    for (const std::size_t v : free_) {
      out.retract(v, delta.segment(offsets_[v], values.tangent_dim(v)));
    }
    return out;
  }

 private:
  struct Block {
    std::size_t row;
    std::size_t col;
    std::vector<int> column_start;
  };
  struct BlockUse {
    std::size_t p;
    std::size_t q;
    std::size_t block;
  };

  void add_block(const Block& blk, const MatrixX& h) {
    double* values = matrix_.valuePtr();
    for (int j = 0; j < h.cols(); ++j) {
      double* col = values + blk.column_start[j];
      for (int i = 0; i < h.rows(); ++i) {
        col[i] += h(i, j);
      }
    }
  }

  const RobustProblem& problem_;
  std::vector<int> offsets_;
  std::vector<std::size_t> free_;
  int dim_ = 0;
  std::vector<Block> blocks_;
  std::vector<std::size_t> diag_block_;
  std::vector<std::vector<BlockUse>> residual_blocks_;
  SparseMatrix matrix_;
  VectorX gradient_;
  Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> llt_;
};

constexpr double kInitialDamping = 1e-6;
constexpr double kMaxDamping = 1e12;

SolveReport gauss_newton(NormalEquations& system, const Values& initial,
                         const std::vector<double>& weights, const InnerSolverConfig& config) {
  SolveReport report;
  report.values = initial;
  report.initial_cost = system.cost(initial, weights);
  report.final_cost = report.initial_cost;
  if (system.dim() == 0) {
    report.converged = true;
    return report;
  }
  std::vector<std::size_t> deficient;
  for (int it = 0; it < config.max_iterations; ++it) {
    ++report.iterations;
    const double cost = system.linearize(report.values, weights);
    if (it == 0) {
      deficient = system.unconstrained();
    }
    VectorX delta;
    double lambda = deficient.empty() ? 0.0 : kInitialDamping;
    bool accepted = false;
    while (lambda <= kMaxDamping) {
      if (system.solve(lambda, delta)) {
        if (delta.norm() < config.tolerance) {
          report.converged = true;
          break;
        }
        Values candidate = system.retract(report.values, delta);
        const double new_cost = system.cost(candidate, weights);
        if (new_cost <= cost) {
          report.values = std::move(candidate);
          report.final_cost = new_cost;
          accepted = true;
          break;
        }
      }
      lambda = lambda == 0.0 ? kInitialDamping : lambda * 10.0;
    }
    if (report.converged) {
      break;
    }
    if (!accepted) {
      // No damping level decreases the cost: a local minimum to working precision.
      report.converged = true;
      break;
    }
    if (delta.norm() < config.tolerance) {
      report.converged = true;
      break;
    }
  }
  report.rank_deficient = std::move(deficient);
  return report;
}

}  // namespace

SolveReport solve_weighted(const RobustProblem& problem, const Values& initial,
                           const std::vector<double>& weights, const InnerSolverConfig& config) {
  if (weights.size() != problem.residuals.size()) {
    throw std::invalid_argument("one weight per residual required");
  }
  for (const double w : weights) {
    if (!(w >= 0.0 && w <= 1.0)) {
      throw std::invalid_argument("weights must lie in [0, 1]");
    }
  }
  NormalEquations system(problem);
  return gauss_newton(system, initial, weights, config);
}

double chi2_inlier_threshold(int dim, double probability) {
  const boost::math::chi_squared dist(static_cast<double>(dim));
  return std::sqrt(boost::math::quantile(dist, probability));
}

double tls_weight(double r2, double eps2, double mu) {
  if (r2 >= (mu + 1.0) / mu * eps2) {
    return 0.0;
  }
  if (r2 <= mu / (mu + 1.0) * eps2) {
    return 1.0;
  }
  const double w = std::sqrt(eps2 * mu * (mu + 1.0) / r2) - mu;
  return std::clamp(w, 0.0, 1.0);
}

double gnc_surrogate(const std::vector<double>& r2, const std::vector<double>& eps2,
                     const std::vector<double>& weights, const std::vector<bool>& robust,
                     double mu) {
  double total = 0.0;
  for (std::size_t i = 0; i < r2.size(); ++i) {
    if (robust[i]) {
      const double w = weights[i];
      total += w * r2[i] + mu * (1.0 - w) * eps2[i] / (mu + w);
    } else {
      total += r2[i];
    }
  }
  return total;
}

GncResult solve_gnc(const RobustProblem& problem, const GncConfig& config) {
  config.validate();
  if (problem.residuals.empty()) {
    throw std::invalid_argument("solve_gnc needs at least one residual");
  }
  const std::size_t n = problem.residuals.size();
  std::vector<bool> robust(n);
  std::vector<double> eps2(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Residual& res = *problem.residuals[i];
    robust[i] = res.robust();
    const double eps = config.inlier_threshold ? *config.inlier_threshold
                                               : chi2_inlier_threshold(res.dim());
    eps2[i] = eps * eps;
  }
  auto squared_norms = [&](const Values& values) {
    std::vector<double> r2(n);
    for (std::size_t i = 0; i < n; ++i) {
      r2[i] = problem.residuals[i]->squared_norm(values);
    }
    return r2;
  };

  NormalEquations system(problem);
  GncResult result;
  result.values = problem.values;
  std::vector<double> r2 = squared_norms(result.values);

  double max_ratio = 0.0;
  bool any_robust = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (robust[i]) {
      any_robust = true;
      max_ratio = std::max(max_ratio, r2[i] / eps2[i]);
    }
  }
  const double denom = 2.0 * max_ratio - 1.0;
  double mu = denom > 0.0 ? 1.0 / denom : 1e8;

  auto update_weights = [&](std::vector<double>& w) {
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = robust[i] ? tls_weight(r2[i], eps2[i], mu) : 1.0;
    }
  };
  auto binary = [&](const std::vector<double>& w) {
    for (std::size_t i = 0; i < n; ++i) {
      if (robust[i] && w[i] > config.weight_tolerance && w[i] < 1.0 - config.weight_tolerance) {
        return false;
      }
    }
    return true;
  };

  result.weights.assign(n, 1.0);
  if (any_robust) {
    update_weights(result.weights);
  }
  for (int it = 0; it < config.max_outer_iterations; ++it) {
    ++result.iterations;
    const double before = gnc_surrogate(r2, eps2, result.weights, robust, mu);
    SolveReport inner = gauss_newton(system, result.values, result.weights, config.inner);
    result.values = std::move(inner.values);
    result.rank_deficient = std::move(inner.rank_deficient);
    r2 = squared_norms(result.values);
    result.trace.push_back(
        SurrogateStep{mu, before, gnc_surrogate(r2, eps2, result.weights, robust, mu)});
    if (!any_robust) {
      result.converged = true;
      break;
    }
    const std::vector<double> previous = result.weights;
    update_weights(result.weights);
    if (binary(result.weights)) {
      result.converged = true;
      // Refit under the settled weights so the estimate matches them.
      if (result.weights != previous) {
        const double settled = gnc_surrogate(r2, eps2, result.weights, robust, mu);
        SolveReport final_fit = gauss_newton(system, result.values, result.weights, config.inner);
        result.values = std::move(final_fit.values);
        result.rank_deficient = std::move(final_fit.rank_deficient);
        r2 = squared_norms(result.values);
        result.trace.push_back(
            SurrogateStep{mu, settled, gnc_surrogate(r2, eps2, result.weights, robust, mu)});
      }
      break;
    }
    mu *= config.mu_update_factor;
  }

  result.inliers.resize(n);
  result.no_inliers = any_robust;
  for (std::size_t i = 0; i < n; ++i) {
    result.inliers[i] = result.weights[i] > 0.5;
    if (robust[i] && result.weights[i] > 0.0) {
      result.no_inliers = false;
    }
  }
  return result;
}

}  // namespace sgfuse
