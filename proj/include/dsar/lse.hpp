#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <vector>

#include "dsar/errors.hpp"
#include "dsar/network.hpp"
#include "dsar/theta.hpp"

namespace dsar::lse {

/// Diagonals of D = (I + ρ² diag(WᵀW))⁻¹ and Ḋ = ∂D/∂ρ = -2ρD² diag(WᵀW).
struct DiagonalFactors {
  Eigen::VectorXd d;
  Eigen::VectorXd d_dot;
};

DiagonalFactors d_factors(const Eigen::VectorXd& dtilde, double rho);

/// S v = v - ρWv and Sᵀv = v - ρWᵀv, applied without forming S.
Eigen::VectorXd apply_s(const SparseNetwork& net, double rho, const Eigen::VectorXd& v);
Eigen::VectorXd apply_st(const SparseNetwork& net, double rho, const Eigen::VectorXd& v);

/// F = D Sᵀ(Sy - Xβ) over the whole network.
Eigen::VectorXd eval_F_global(const SparseNetwork& net, const Eigen::VectorXd& y,
                              const Eigen::MatrixXd& x, const Theta& theta);

/// F_i(θ) for the shard's local nodes, in local_nodes order.
Eigen::VectorXd eval_F_local(const WorkerShard& shard, const Theta& theta);

struct ObjectiveEval {
  double value = 0.0;
  Eigen::VectorXd gradient;  ///< filled for order ≥ 1
  Eigen::MatrixXd hessian;   ///< filled for order 2
};

/// Q_k(θ) = N_k⁻¹ Σ_{i∈S_k} F_i(θ)² with exact first and second derivatives.
ObjectiveEval eval_objective(const WorkerShard& shard, const Theta& theta, int order = 2);

struct SolverOptions {
  int max_iter = 100;
  double grad_tol = 1e-8;
  double step_tol = 1e-12;
  double rho_min = -0.99;
  double rho_max = 0.99;
  double armijo = 1e-4;
  /// Extra starting values of ρ tried when the default start fails.
  int multistart = 3;
  /// Condition-number limit for Hessians that get inverted.
  double max_condition = 1e12;

  void validate() const;
};

struct LocalSummary {
  int worker_id = 0;
  Theta theta_hat;
  Eigen::MatrixXd hessian_at_opt;  ///< empty when not transmitted (OS)
  Index n_local = 0;
  double sigma2_eps_local = 0.0;
  int iterations = 0;
  double grad_norm = 0.0;
  std::size_t byte_size = 0;
};

/// Raised when Newton iterations run out; carries the last iterate.
class NotConverged : public SolverError {
 public:
  NotConverged(const std::string& what, Theta last, double grad_norm)
      : SolverError(what), last_(std::move(last)), grad_norm_(grad_norm) {}
  const Theta& last_iterate() const { return last_; }
  double grad_norm() const { return grad_norm_; }

 private:
  Theta last_;
  double grad_norm_;
};

/// ρ = 0 with the OLS β of the shard's own rows.
Theta default_init(const WorkerShard& shard);

/// Projected Newton with Armijo backtracking and a profile fallback.
/// Tries `opts.multistart` spread starting values of ρ if the default start
/// does not converge.
LocalSummary fit_local(const WorkerShard& shard, const SolverOptions& opts = {});
LocalSummary fit_local(const WorkerShard& shard, const Theta& init,
                       const SolverOptions& opts = {});

/// θ - Q̈_k(θ)⁻¹ Q̇_k(θ), with no line search.
Theta one_newton_step(const WorkerShard& shard, const Theta& at,
                      double max_condition = 1e12);

/// One Newton step plus the Hessian it used.
struct Refinement {
  Theta theta;
  Eigen::MatrixXd hessian;
};
Refinement newton_refine(const WorkerShard& shard, const Theta& at,
                         double max_condition = 1e12);

/// N_k⁻¹ Σ (y_i - ρ(Wy)_i - x_iᵀβ)² over the shard.
double residual_variance(const WorkerShard& shard, const Theta& theta);

/// Ratio of extreme absolute eigenvalues of a symmetric matrix (∞ when
/// the smallest is zero).
double condition_number(const Eigen::MatrixXd& symmetric);

/// Canonical encoding: tag, worker id, N_k, p, θ̂, σ̂²_local, Hessian flag
/// and the (p+1)² Hessian entries when present.
std::vector<std::uint8_t> serialize(const LocalSummary& s);
LocalSummary deserialize_summary(std::span<const std::uint8_t> bytes);

}  // namespace dsar::lse
