#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "dsar/data.hpp"
#include "dsar/network.hpp"
#include "dsar/theta.hpp"

namespace dsar::infer {

/// σ̂²_ε = N⁻¹‖Sy - Xβ̂‖² and σ̂² = σ̂²_ε + N⁻¹‖Xβ̂‖².
struct VariancePlugins {
  double sigma2_eps_hat = 0.0;
  double sigma2_tilde_hat = 0.0;
};

/// A worker's share of the plug-in sums, so the master can pool them.
struct PluginSums {
  double ssr = 0.0;        ///< Σ (y_i - ρ(Wy)_i - x_iᵀβ)²
  double fitted_sq = 0.0;  ///< Σ (x_iᵀβ)²
  Index n = 0;
};

PluginSums plugin_sums(const WorkerShard& shard, const Theta& theta);
VariancePlugins combine_plugins(std::span<const PluginSums> parts);
VariancePlugins estimate_plugins(const Theta& theta, const Dataset& data);

/// Sign of the ρβ block of Σ̂₁. `derived` matches the covariance of the
/// score; `printed` flips it.
enum class CrossTermSign { derived, printed };

/// Column-compressed N×m matrix, column c belonging to the c-th local node.
struct SparseColumns {
  Index n_rows = 0;
  std::vector<Index> ptr{0};
  std::vector<NodeId> rows;
  std::vector<double> vals;

  Index cols() const { return static_cast<Index>(ptr.size()) - 1; }
  Index nnz() const { return static_cast<Index>(rows.size()); }

  /// Columns placed at the given global column ids (N×N result).
  ColSparse scatter(std::span<const NodeId> col_ids) const;
  /// R · this, for a dense d×N matrix R.
  Eigen::MatrixXd left_multiply(const Eigen::MatrixXd& r) const;
};

/// Shard-local factors of Ξ_k, V_1k, V_2k and T_1k, T_2k, T_3k. For local
/// node i (column c):
///   Ξ_k   = Σ_c xi1_c (D_i e_i)ᵀ
///   V_1k  = Σ_c v1_c e_iᵀ
///   V_2k  = Σ_c mt_c b_cᵀ              (mt_c = M̃ e_i, b_c = D_i S e_i)
///   T_mk  = Σ_c tm_coef_c b_cᵀ         (m = 1, 2; T_3k rows likewise)
struct ShardFactors {
  int worker_id = 0;
  Index n_total = 0;
  std::vector<NodeId> local_nodes;
  Eigen::VectorXd d_local;  ///< D_i for local nodes
  SparseColumns xi1, v1, mt, b;
  Eigen::VectorXd t1_coef, t2_coef;
  Eigen::MatrixXd t3_coef;  ///< N_k × p

  Index n_local() const { return static_cast<Index>(local_nodes.size()); }
  Index p() const { return t3_coef.cols(); }

  // Global N×N (or vector) forms; these are sparse and meant for tests and
  // the exact path.
  ColSparse xi() const;
  ColSparse v1_matrix() const;
  ColSparse v2_matrix() const;
  Eigen::VectorXd t1() const;
  Eigen::VectorXd t2() const;
  Eigen::MatrixXd t3() const;  ///< N × p, i.e. T_3kᵀ
};

ShardFactors build_xi_vt(const WorkerShard& shard, const Theta& theta);

/// Exact Σ̂₁ over all workers' factors. Depends on the partition only
/// through floating-point summation order.
Eigen::MatrixXd sigma1_exact(std::span<const ShardFactors> factors,
                             const VariancePlugins& plugins,
                             CrossTermSign sign = CrossTermSign::derived);

/// Shared random projectors R₁, R₂ (d×N), regenerated from the seed by
/// every worker.
struct Projectors {
  Index d = 0;
  Index n = 0;
  bool sparse = false;
  bool identity = false;
  std::uint64_t seed = 0;
  Eigen::MatrixXd r1, r2;

  std::uint64_t fingerprint() const;
};

/// Dense mode draws N(0, 1/d) entries. Sparse mode uses ±√(3/d) with
/// probability 1/6 each and 0 otherwise; both give E(RᵀR) = I.
Projectors make_projectors(Index n_nodes, Index d, std::uint64_t seed, bool sparse);

/// R₁ = R₂ = I (d = N). Test hook: projection becomes a pass-through.
Projectors identity_projectors(Index n_nodes);

/// ⌊log N⌋ + 1.
Index default_projection_dim(Index n_nodes);

/// Sparse projectors are the default from this many nodes on.
constexpr Index kSparseProjectionThreshold = 100000;

struct InferencePack {
  int worker_id = 0;
  Index n_local = 0;
  Index d = 0;
  Index p = 0;
  std::uint64_t fingerprint = 0;
  Eigen::MatrixXd xi1_r, xi2_r, v1_r, v2_r;  ///< d×d
  Eigen::VectorXd t1_r, t2_r;                ///< d
  Eigen::MatrixXd t3_r;                      ///< p×d
  PluginSums plugins;
  std::size_t byte_size = 0;
};

InferencePack build_pack(const ShardFactors& f, const Projectors& proj,
                         const PluginSums& plugins);

/// Σ̂₁ᴿ assembled from pack contents only. Throws ProtocolError when packs
/// disagree on d, p or projector fingerprint.
Eigen::MatrixXd sigma1_projected(std::span<const InferencePack> packs,
                                 CrossTermSign sign = CrossTermSign::derived);
Eigen::MatrixXd sigma1_projected(std::span<const InferencePack> packs,
                                 const VariancePlugins& plugins,
                                 CrossTermSign sign = CrossTermSign::derived);

std::vector<std::uint8_t> serialize(const InferencePack& pack);
InferencePack deserialize_pack(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> serialize(const ShardFactors& f, const PluginSums& plugins);
std::pair<ShardFactors, PluginSums> deserialize_factors(std::span<const std::uint8_t> bytes);

enum class InferenceMode { exact, projected };

struct SandwichCovariance {
  Eigen::MatrixXd sigma1_hat;
  Eigen::MatrixXd sigma2_hat;
  Eigen::MatrixXd covariance;  ///< Σ̂₂⁻¹Σ̂₁Σ̂₂⁻¹ / N
  InferenceMode mode = InferenceMode::exact;
  Index n_nodes = 0;
};

/// Symmetrizes Σ̂₁ first. Throws InferenceError when Σ̂₂ is singular or a
/// variance comes out negative (in projected mode: increase d).
SandwichCovariance sandwich(const Eigen::MatrixXd& sigma1, const Eigen::MatrixXd& sigma2,
                            Index n_nodes, InferenceMode mode = InferenceMode::exact,
                            double max_condition = 1e12);

/// Φ⁻¹(p) for p ∈ (0, 1).
double normal_quantile(double p);

struct Interval {
  std::string parameter;
  double estimate = 0.0;
  double se = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double p_value = 1.0;  ///< two-sided, H₀: parameter = 0
};

std::vector<Interval> confidence_intervals(const Theta& theta,
                                           const SandwichCovariance& cov,
                                           double level = 0.95);

/// CSV "parameter,estimate,se,ci_low,ci_high,p_value".
void write_intervals_csv(std::ostream& out, std::span<const Interval> rows);

}  // namespace dsar::infer
