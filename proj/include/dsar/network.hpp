#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace dsar {

using NodeId = std::int32_t;
using Index = Eigen::Index;

using RowSparse = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using ColSparse = Eigen::SparseMatrix<double, Eigen::ColMajor>;

/// Global graph: adjacency A (row = follower, column = followee), the
/// row-normalized weights W, and d̃_i = Σ_k w_ki².
class SparseNetwork {
 public:
  SparseNetwork() = default;

  Index n_nodes() const { return weights_.rows(); }
  Index n_edges() const { return weights_.nonZeros(); }

  const RowSparse& adjacency() const { return adjacency_; }
  const RowSparse& weights() const { return weights_; }
  /// Same matrix as weights(), stored column-major so W_{·i} is contiguous.
  const ColSparse& weights_by_column() const { return weights_t_; }
  const Eigen::VectorXd& col_sq_sums() const { return col_sq_sums_; }

  /// Nodes whose W row is zero because they follow nobody.
  const std::vector<NodeId>& zero_out_degree() const { return zero_rows_; }
  Index out_degree(NodeId i) const;
  Index in_degree(NodeId i) const;

  /// Column i of WᵀW (the second-order weights w⁽²⁾_{ji}), as (j, value)
  /// pairs sorted by j. Entries that cancel exactly are still reported.
  std::vector<std::pair<NodeId, double>> second_order(NodeId i) const;

  /// y ↦ W y and y ↦ Wᵀ y.
  Eigen::VectorXd apply(const Eigen::VectorXd& y) const { return weights_ * y; }
  Eigen::VectorXd apply_transpose(const Eigen::VectorXd& y) const;

  friend SparseNetwork row_normalize(const RowSparse& adjacency);

 private:
  RowSparse adjacency_;
  RowSparse weights_;
  ColSparse weights_t_;
  Eigen::VectorXd col_sq_sums_;
  std::vector<NodeId> zero_rows_;
};

/// Builds W by dividing each row by its sum. Self-loops are dropped with a
/// warning, and rows with no entries stay zero (also with a warning). Applying
/// it to an already normalized W returns the same W.
SparseNetwork row_normalize(const RowSparse& adjacency);

/// Adjacency from a directed edge list. Duplicate edges collapse to one.
SparseNetwork network_from_edges(Index n_nodes,
                                 std::span<const std::pair<NodeId, NodeId>> edges);

/// Directed edges of the adjacency, row-major order.
std::vector<std::pair<NodeId, NodeId>> edge_list(const SparseNetwork& net);

struct Partition {
  std::vector<int> assignment;             ///< node → worker
  std::vector<std::vector<NodeId>> sets;   ///< S_k, ascending
  std::vector<double> alphas;              ///< N_k / N

  int k_workers() const { return static_cast<int>(sets.size()); }
  Index n_nodes() const { return static_cast<Index>(assignment.size()); }
  Index size(int k) const { return static_cast<Index>(sets.at(k).size()); }
};

/// Random permutation split into K sets whose sizes differ by at most one.
/// The N mod K larger sets go to randomly chosen workers.
Partition partition_uniform(Index n_nodes, int k_workers, std::uint64_t seed);

/// Partition from an explicit node → worker map. Every worker must own at
/// least one node.
Partition partition_from_assignment(std::vector<int> assignment, int k_workers);

/// Sparse rows keyed by local node: row r lists (global id, weight) pairs.
struct NeighborLists {
  std::vector<Index> ptr{0};
  std::vector<NodeId> ids;
  std::vector<double> weights;

  Index rows() const { return static_cast<Index>(ptr.size()) - 1; }
  std::span<const NodeId> ids_of(Index r) const {
    return {ids.data() + ptr[r], static_cast<std::size_t>(ptr[r + 1] - ptr[r])};
  }
  std::span<const double> weights_of(Index r) const {
    return {weights.data() + ptr[r], static_cast<std::size_t>(ptr[r + 1] - ptr[r])};
  }
};

/// θ-free per-node statistics that F_i(θ) needs:
/// a = (Wy)_i, b = (Wᵀy)_i, c = (WᵀWy)_i, z = (WᵀX)_i.
struct LocalStats {
  Eigen::VectorXd a, b, c;
  Eigen::MatrixXd z;
};

/// Everything worker k needs to evaluate F_i for i ∈ S_k and to build its
/// inference factors. Holds no reference to the global network.
struct WorkerShard {
  int worker_id = 0;
  Index n_total = 0;  ///< N of the global network
  std::vector<NodeId> local_nodes;

  NeighborLists out_rows;      ///< W_{i·}: j with w_ij ≠ 0
  NeighborLists in_cols;       ///< W_{·i}: j with w_ji ≠ 0
  NeighborLists second_order;  ///< j with w⁽²⁾_{ji} ≠ 0, including i itself

  /// Sorted union of local nodes and every node in a stored neighborhood,
  /// with the response and d̃ of each.
  std::vector<NodeId> stored_nodes;
  Eigen::VectorXd stored_y;
  Eigen::VectorXd stored_dtilde;

  /// Covariate rows for local nodes and their in-neighbors, sorted by id.
  std::vector<NodeId> covariate_nodes;
  Eigen::MatrixXd covariate_rows;

  Eigen::VectorXd local_y;
  Eigen::MatrixXd local_x;
  Eigen::VectorXd dtilde;  ///< d̃_i for local nodes
  LocalStats stats;

  Index n_local() const { return static_cast<Index>(local_nodes.size()); }
  Index p() const { return local_x.cols(); }

  /// Position of a global id in stored_nodes, or -1.
  Index stored_index(NodeId j) const;
};

WorkerShard build_shard(const SparseNetwork& net, const Partition& part,
                        const Eigen::VectorXd& y, const Eigen::MatrixXd& x,
                        int k);

/// All K shards, built in parallel.
std::vector<WorkerShard> build_shards(const SparseNetwork& net,
                                      const Partition& part,
                                      const Eigen::VectorXd& y,
                                      const Eigen::MatrixXd& x,
                                      unsigned threads = 0);

struct StorageReport {
  std::vector<Index> stored_per_worker;  ///< |stored_nodes| per shard
  std::vector<Index> local_per_worker;
  Index n_nodes = 0;
  double duplication_factor = 0.0;  ///< Σ_k stored / N
};

StorageReport shard_storage_report(std::span<const WorkerShard> shards);

// Edge-list text format: one "src dst" pair per line, whitespace separated.
// A line with a single token declares an isolated node. Blank lines and
// lines starting with '#' are skipped.

struct NodeIndex {
  std::vector<std::string> labels;  ///< dense index → original id

  std::unordered_map<std::string, NodeId> lookup;
  bool numeric = false;  ///< labels are integers; "007" and "7" then match

  /// Dense index of a label, or -1.
  NodeId find(const std::string& label) const;
  /// Identity mapping "0".."n-1".
  static NodeIndex identity(Index n);
};

struct EdgeListData {
  SparseNetwork network;
  NodeIndex index;
};

/// Reads an edge list and remaps ids to 0..N-1. Ids are ordered numerically
/// when every id is an integer, lexicographically otherwise.
EdgeListData read_edge_list(std::istream& in);
EdgeListData read_edge_list_file(const std::string& path);

/// Writes "src dst" lines; isolated nodes are written as single tokens so
/// that the node count survives a round trip.
void write_edge_list(std::ostream& out, const SparseNetwork& net,
                     const NodeIndex* index = nullptr);

/// CSV "index,label" describing the remapping.
void write_remap_csv(std::ostream& out, const NodeIndex& index);

}  // namespace dsar
