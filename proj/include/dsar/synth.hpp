#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "dsar/data.hpp"
#include "dsar/network.hpp"
#include "dsar/theta.hpp"

namespace dsar::synth {

enum class NetworkKind { sbm, powerlaw };

struct NetworkSpec {
  NetworkKind kind = NetworkKind::sbm;
  Index n_nodes = 2000;
  int sbm_blocks = 20;
  double sbm_p_in = 0.01;   ///< within-block edge probability
  double sbm_p_out = 0.001; ///< across-block edge probability
  double pl_alpha = 3.0;
  std::uint64_t seed = 0;
  /// Give every node that follows nobody one random followee.
  bool ensure_min_outdegree = false;

  /// SBM with p_in = 20/N and p_out = 2/N over 20 blocks.
  static NetworkSpec sbm_default(Index n, std::uint64_t seed = 0);
  static NetworkSpec powerlaw_default(Index n, std::uint64_t seed = 0);

  void validate() const;
};

/// Block labels are uniform over M; a_ij and a_ji are drawn independently.
SparseNetwork gen_sbm(const NetworkSpec& spec);

/// In-degree of each node drawn from P(k) ∝ k^-α on 1..N-1, followers drawn
/// uniformly without replacement.
SparseNetwork gen_powerlaw(const NetworkSpec& spec);

SparseNetwork gen_network(const NetworkSpec& spec);

/// Normalized probabilities P(k) ∝ k^-α for k = 1..k_max (index 0 ↔ k = 1).
std::vector<double> powerlaw_pmf(double alpha, Index k_max);

Eigen::MatrixXd gen_covariates(Index n_nodes, Index p, std::uint64_t seed);

enum class NoiseKind {
  iid_gaussian,
  iid_student_t,
  sparse_correlated,
  equicorrelated,
  heteroscedastic,
};

struct CorrelatedPair {
  NodeId i = 0, j = 0;
  double value = 0.0;  ///< cov(ε_i, ε_j)
};

struct NoiseModel {
  NoiseKind kind = NoiseKind::iid_gaussian;
  double sigma = 1.0;  ///< marginal SD for the homoscedastic kinds
  double t_dof = 5.0;
  std::vector<CorrelatedPair> sparse_pairs;
  double gamma = 0.0;        ///< common covariance for equicorrelated noise
  Eigen::VectorXd variances; ///< σ_i² for heteroscedastic noise

  void validate(Index n_nodes) const;
};

struct TrueModel {
  Theta theta0;
  NoiseModel noise;

  /// ρ = 0.4, β = (0.2, 0.4, 0.6, 0.8, 1.0), standard normal noise.
  static TrueModel simulation_default();
};

Eigen::VectorXd gen_noise(const NoiseModel& model, Index n_nodes, std::uint64_t seed);

/// Solves (I - ρW) y = rhs by the fixed-point sweep y ← ρWy + rhs until the
/// residual ∞-norm is at most tol.
Eigen::VectorXd solve_sar(const SparseNetwork& net, double rho,
                          const Eigen::VectorXd& rhs, double tol = 1e-10,
                          int max_iter = 10000);

/// y = (I - ρ₀W)⁻¹(Xβ₀ + ε) with ε drawn from model.noise under `seed`.
Eigen::VectorXd synth_response(const SparseNetwork& net, const Eigen::MatrixXd& x,
                               const TrueModel& model, std::uint64_t seed);

/// Network, covariates and response from one base seed, each drawn from its
/// own derived stream.
Dataset make_dataset(NetworkSpec spec, Index p, const TrueModel& model,
                     std::uint64_t seed);

}  // namespace dsar::synth
