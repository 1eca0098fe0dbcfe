#include "dsar/network.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "dsar/errors.hpp"
#include "dsar/log.hpp"
#include "dsar/parallel.hpp"
#include "dsar/rng.hpp"

namespace dsar {

using Triplet = Eigen::Triplet<double>;

Index SparseNetwork::out_degree(NodeId i) const {
  return adjacency_.outerIndexPtr()[i + 1] - adjacency_.outerIndexPtr()[i];
}

Index SparseNetwork::in_degree(NodeId i) const {
  return weights_t_.outerIndexPtr()[i + 1] - weights_t_.outerIndexPtr()[i];
}

Eigen::VectorXd SparseNetwork::apply_transpose(const Eigen::VectorXd& y) const {
  return weights_.transpose() * y;
}

std::vector<std::pair<NodeId, double>> SparseNetwork::second_order(NodeId i) const {
  std::vector<std::pair<NodeId, double>> acc;
  for (ColSparse::InnerIterator in(weights_t_, i); in; ++in) {
    const auto k = static_cast<NodeId>(in.row());
    for (RowSparse::InnerIterator out(weights_, k); out; ++out)
      acc.emplace_back(static_cast<NodeId>(out.col()), in.value() * out.value());
  }
  std::sort(acc.begin(), acc.end(),
            [](const auto& l, const auto& r) { return l.first < r.first; });
  std::vector<std::pair<NodeId, double>> merged;
  for (const auto& [j, v] : acc) {
    if (!merged.empty() && merged.back().first == j)
      merged.back().second += v;
    else
      merged.emplace_back(j, v);
  }
  return merged;
}

SparseNetwork row_normalize(const RowSparse& input) {
  if (input.rows() != input.cols())
    throw DimensionError("adjacency must be square, got " +
                         std::to_string(input.rows()) + "x" +
                         std::to_string(input.cols()));
  const Index n = input.rows();
  std::vector<Triplet> kept;
  kept.reserve(static_cast<std::size_t>(input.nonZeros()));
  Index loops = 0;
  for (Index i = 0; i < n; ++i) {
    for (RowSparse::InnerIterator it(input, i); it; ++it) {
      if (it.value() < 0.0 || !std::isfinite(it.value()))
        throw ModelError("adjacency entries must be finite and nonnegative");
      if (it.value() == 0.0) continue;
      if (it.col() == i) {
        ++loops;
        continue;
      }
      kept.emplace_back(i, it.col(), it.value());
    }
  }
  if (loops > 0)
    log::warn("removed " + std::to_string(loops) + " self-loop(s) from adjacency");

  SparseNetwork net;
  RowSparse values(n, n);
  values.setFromTriplets(kept.begin(), kept.end());
  values.makeCompressed();

  net.adjacency_ = values;
  for (Index k = 0; k < net.adjacency_.nonZeros(); ++k)
    net.adjacency_.valuePtr()[k] = 1.0;

  net.weights_ = values;
  for (Index i = 0; i < n; ++i) {
    double sum = 0.0;
    for (RowSparse::InnerIterator it(net.weights_, i); it; ++it) sum += it.value();
    if (sum == 0.0) {
      net.zero_rows_.push_back(static_cast<NodeId>(i));
      continue;
    }
    for (RowSparse::InnerIterator it(net.weights_, i); it; ++it) it.valueRef() /= sum;
  }
  if (!net.zero_rows_.empty())
    log::warn(std::to_string(net.zero_rows_.size()) +
              " node(s) have zero out-degree; their W rows are left at zero");

  net.weights_t_ = ColSparse(net.weights_);
  net.weights_t_.makeCompressed();
  net.col_sq_sums_ = Eigen::VectorXd::Zero(n);
  for (Index i = 0; i < n; ++i)
    for (RowSparse::InnerIterator it(net.weights_, i); it; ++it)
      net.col_sq_sums_[it.col()] += it.value() * it.value();
  return net;
}

SparseNetwork network_from_edges(Index n_nodes,
                                 std::span<const std::pair<NodeId, NodeId>> edges) {
  std::vector<Triplet> t;
  t.reserve(edges.size());
  for (const auto& [src, dst] : edges) {
    if (src < 0 || dst < 0 || src >= n_nodes || dst >= n_nodes)
      throw DimensionError("edge (" + std::to_string(src) + ", " +
                           std::to_string(dst) + ") outside 0.." +
                           std::to_string(n_nodes - 1));
    t.emplace_back(src, dst, 1.0);
  }
  RowSparse a(n_nodes, n_nodes);
  // Duplicates collapse to a single 0/1 entry.
  a.setFromTriplets(t.begin(), t.end(), [](double, double) { return 1.0; });
  return row_normalize(a);
}

std::vector<std::pair<NodeId, NodeId>> edge_list(const SparseNetwork& net) {
  std::vector<std::pair<NodeId, NodeId>> out;
  out.reserve(static_cast<std::size_t>(net.adjacency().nonZeros()));
  for (Index i = 0; i < net.n_nodes(); ++i)
    for (RowSparse::InnerIterator it(net.adjacency(), i); it; ++it)
      out.emplace_back(static_cast<NodeId>(i), static_cast<NodeId>(it.col()));
  return out;
}

// --- partitions ------------------------------------------------------------

Partition partition_from_assignment(std::vector<int> assignment, int k_workers) {
  if (k_workers < 1) throw ConfigError("number of workers must be at least 1");
  Partition part;
  part.sets.assign(static_cast<std::size_t>(k_workers), {});
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    const int k = assignment[i];
    if (k < 0 || k >= k_workers)
      throw ConfigError("node " + std::to_string(i) + " assigned to worker " +
                        std::to_string(k) + " of " + std::to_string(k_workers));
    part.sets[static_cast<std::size_t>(k)].push_back(static_cast<NodeId>(i));
  }
  const auto n = static_cast<double>(assignment.size());
  for (int k = 0; k < k_workers; ++k) {
    if (part.sets[static_cast<std::size_t>(k)].empty())
      throw ConfigError("worker " + std::to_string(k) + " owns no nodes");
    part.alphas.push_back(static_cast<double>(part.sets[static_cast<std::size_t>(k)].size()) / n);
  }
  part.assignment = std::move(assignment);
  return part;
}

Partition partition_uniform(Index n_nodes, int k_workers, std::uint64_t seed) {
  if (k_workers < 1) throw ConfigError("number of workers must be at least 1");
  if (n_nodes < k_workers)
    throw ConfigError("cannot split " + std::to_string(n_nodes) + " nodes over " +
                      std::to_string(k_workers) + " workers");
  auto rng = make_engine(seed);
  std::vector<NodeId> perm(static_cast<std::size_t>(n_nodes));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);

  std::vector<Index> sizes(static_cast<std::size_t>(k_workers), n_nodes / k_workers);
  std::vector<int> workers(static_cast<std::size_t>(k_workers));
  std::iota(workers.begin(), workers.end(), 0);
  std::shuffle(workers.begin(), workers.end(), rng);
  for (Index r = 0; r < n_nodes % k_workers; ++r) ++sizes[static_cast<std::size_t>(workers[static_cast<std::size_t>(r)])];

  std::vector<int> assignment(static_cast<std::size_t>(n_nodes));
  std::size_t pos = 0;
  for (int k = 0; k < k_workers; ++k)
    for (Index c = 0; c < sizes[static_cast<std::size_t>(k)]; ++c)
      assignment[static_cast<std::size_t>(perm[pos++])] = k;
  return partition_from_assignment(std::move(assignment), k_workers);
}

// --- shards ----------------------------------------------------------------

Index WorkerShard::stored_index(NodeId j) const {
  auto it = std::lower_bound(stored_nodes.begin(), stored_nodes.end(), j);
  if (it == stored_nodes.end() || *it != j) return -1;
  return it - stored_nodes.begin();
}

namespace {

void append_row(NeighborLists& lists, std::vector<NodeId>& seen,
                const std::vector<std::pair<NodeId, double>>& row) {
  for (const auto& [j, w] : row) {
    lists.ids.push_back(j);
    lists.weights.push_back(w);
    seen.push_back(j);
  }
  lists.ptr.push_back(static_cast<Index>(lists.ids.size()));
}

}  // namespace

WorkerShard build_shard(const SparseNetwork& net, const Partition& part,
                        const Eigen::VectorXd& y, const Eigen::MatrixXd& x, int k) {
  const Index n = net.n_nodes();
  if (y.size() != n || x.rows() != n)
    throw DimensionError("response/covariates have " + std::to_string(y.size()) +
                         "/" + std::to_string(x.rows()) + " rows, network has " +
                         std::to_string(n) + " nodes");
  if (part.n_nodes() != n)
    throw DimensionError("partition covers " + std::to_string(part.n_nodes()) +
                         " nodes, network has " + std::to_string(n));
  if (k < 0 || k >= part.k_workers())
    throw ConfigError("worker index " + std::to_string(k) + " out of range 0.." +
                      std::to_string(part.k_workers() - 1));

  WorkerShard s;
  s.worker_id = k;
  s.n_total = n;
  s.local_nodes = part.sets[static_cast<std::size_t>(k)];
  std::sort(s.local_nodes.begin(), s.local_nodes.end());
  const Index nk = s.n_local();
  const Index p = x.cols();

  std::vector<NodeId> stored(s.local_nodes.begin(), s.local_nodes.end());
  std::vector<NodeId> cov(s.local_nodes.begin(), s.local_nodes.end());
  const auto& w = net.weights();
  const auto& wt = net.weights_by_column();
  std::vector<std::pair<NodeId, double>> row;
  for (NodeId i : s.local_nodes) {
    row.clear();
    for (RowSparse::InnerIterator it(w, i); it; ++it)
      row.emplace_back(static_cast<NodeId>(it.col()), it.value());
    append_row(s.out_rows, stored, row);

    row.clear();
    for (ColSparse::InnerIterator it(wt, i); it; ++it)
      row.emplace_back(static_cast<NodeId>(it.row()), it.value());
    const auto before = stored.size();
    append_row(s.in_cols, stored, row);
    cov.insert(cov.end(), stored.begin() + static_cast<std::ptrdiff_t>(before), stored.end());

    append_row(s.second_order, stored, net.second_order(i));
  }
  std::sort(stored.begin(), stored.end());
  stored.erase(std::unique(stored.begin(), stored.end()), stored.end());
  std::sort(cov.begin(), cov.end());
  cov.erase(std::unique(cov.begin(), cov.end()), cov.end());

  s.stored_nodes = std::move(stored);
  s.stored_y.resize(static_cast<Index>(s.stored_nodes.size()));
  s.stored_dtilde.resize(static_cast<Index>(s.stored_nodes.size()));
  for (std::size_t r = 0; r < s.stored_nodes.size(); ++r) {
    s.stored_y[static_cast<Index>(r)] = y[s.stored_nodes[r]];
    s.stored_dtilde[static_cast<Index>(r)] = net.col_sq_sums()[s.stored_nodes[r]];
  }
  s.covariate_nodes = std::move(cov);
  s.covariate_rows.resize(static_cast<Index>(s.covariate_nodes.size()), p);
  for (std::size_t r = 0; r < s.covariate_nodes.size(); ++r)
    s.covariate_rows.row(static_cast<Index>(r)) = x.row(s.covariate_nodes[r]);

  s.local_y.resize(nk);
  s.local_x.resize(nk, p);
  s.dtilde.resize(nk);
  for (Index r = 0; r < nk; ++r) {
    const NodeId i = s.local_nodes[static_cast<std::size_t>(r)];
    s.local_y[r] = y[i];
    s.local_x.row(r) = x.row(i);
    s.dtilde[r] = net.col_sq_sums()[i];
  }

  // Statistics are assembled from the stored copies only, so they are
  // exactly what a worker without the global network would compute.
  auto stored_y = [&](NodeId j) { return s.stored_y[s.stored_index(j)]; };
  auto cov_row = [&](NodeId j) {
    auto it = std::lower_bound(s.covariate_nodes.begin(), s.covariate_nodes.end(), j);
    return s.covariate_rows.row(it - s.covariate_nodes.begin());
  };
  s.stats.a = Eigen::VectorXd::Zero(nk);
  s.stats.b = Eigen::VectorXd::Zero(nk);
  s.stats.c = Eigen::VectorXd::Zero(nk);
  s.stats.z = Eigen::MatrixXd::Zero(nk, p);
  for (Index r = 0; r < nk; ++r) {
    auto ids = s.out_rows.ids_of(r);
    auto ws = s.out_rows.weights_of(r);
    for (std::size_t q = 0; q < ids.size(); ++q) s.stats.a[r] += ws[q] * stored_y(ids[q]);
    ids = s.in_cols.ids_of(r);
    ws = s.in_cols.weights_of(r);
    for (std::size_t q = 0; q < ids.size(); ++q) {
      s.stats.b[r] += ws[q] * stored_y(ids[q]);
      s.stats.z.row(r) += ws[q] * cov_row(ids[q]);
    }
    ids = s.second_order.ids_of(r);
    ws = s.second_order.weights_of(r);
    for (std::size_t q = 0; q < ids.size(); ++q) s.stats.c[r] += ws[q] * stored_y(ids[q]);
  }
  return s;
}

std::vector<WorkerShard> build_shards(const SparseNetwork& net, const Partition& part,
                                      const Eigen::VectorXd& y,
                                      const Eigen::MatrixXd& x, unsigned threads) {
  std::vector<WorkerShard> shards(static_cast<std::size_t>(part.k_workers()));
  parallel_for(shards.size(), threads, [&](std::size_t k) {
    shards[k] = build_shard(net, part, y, x, static_cast<int>(k));
  });
  return shards;
}

StorageReport shard_storage_report(std::span<const WorkerShard> shards) {
  StorageReport rep;
  Index total = 0;
  for (const auto& s : shards) {
    rep.stored_per_worker.push_back(static_cast<Index>(s.stored_nodes.size()));
    rep.local_per_worker.push_back(s.n_local());
    total += static_cast<Index>(s.stored_nodes.size());
    rep.n_nodes = s.n_total;
  }
  rep.duplication_factor =
      rep.n_nodes > 0 ? static_cast<double>(total) / static_cast<double>(rep.n_nodes) : 0.0;
  return rep;
}

// --- edge lists ------------------------------------------------------------

namespace {

bool parse_integer(const std::string& s, long long& v) {
  const char* b = s.data();
  const char* e = b + s.size();
  auto [ptr, ec] = std::from_chars(b, e, v);
  return ec == std::errc() && ptr == e;
}

}  // namespace

NodeId NodeIndex::find(const std::string& label) const {
  auto it = lookup.find(label);
  if (it == lookup.end() && numeric) {
    long long v = 0;
    if (parse_integer(label, v)) it = lookup.find(std::to_string(v));
  }
  return it == lookup.end() ? -1 : it->second;
}

NodeIndex NodeIndex::identity(Index n) {
  NodeIndex idx;
  idx.labels.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    idx.labels.push_back(std::to_string(i));
    idx.lookup.emplace(idx.labels.back(), static_cast<NodeId>(i));
  }
  idx.numeric = true;
  return idx;
}

EdgeListData read_edge_list(std::istream& in) {
  std::vector<std::pair<std::string, std::string>> raw;
  std::vector<std::string> isolated;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string a, b, extra;
    if (!(ls >> a) || a.front() == '#') continue;
    if (!(ls >> b)) {
      isolated.push_back(a);
      continue;
    }
    if (ls >> extra)
      throw IoError("edge list line " + std::to_string(line_no) +
                    ": expected 'src dst', found extra field '" + extra + "'");
    raw.emplace_back(std::move(a), std::move(b));
  }

  std::vector<std::string> labels = isolated;
  for (const auto& [a, b] : raw) {
    labels.push_back(a);
    labels.push_back(b);
  }
  bool numeric = true;
  std::vector<long long> values(labels.size());
  for (std::size_t i = 0; i < labels.size() && numeric; ++i)
    numeric = parse_integer(labels[i], values[i]);
  if (numeric) {
    std::vector<std::size_t> order(labels.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t l, std::size_t r) { return values[l] < values[r]; });
    std::vector<std::string> sorted;
    sorted.reserve(labels.size());
    long long last = 0;
    for (std::size_t q = 0; q < order.size(); ++q) {
      if (q > 0 && values[order[q]] == last) continue;
      last = values[order[q]];
      sorted.push_back(std::to_string(last));
    }
    labels = std::move(sorted);
  } else {
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  }

  EdgeListData data;
  for (std::size_t i = 0; i < labels.size(); ++i)
    data.index.lookup.emplace(labels[i], static_cast<NodeId>(i));
  data.index.labels = std::move(labels);
  data.index.numeric = numeric;
  auto id_of = [&](const std::string& s) { return data.index.find(s); };
  std::vector<std::pair<NodeId, NodeId>> edges;
  edges.reserve(raw.size());
  for (const auto& [a, b] : raw) edges.emplace_back(id_of(a), id_of(b));
  data.network = network_from_edges(static_cast<Index>(data.index.labels.size()), edges);
  return data;
}

EdgeListData read_edge_list_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open edge list '" + path + "'");
  return read_edge_list(in);
}

void write_edge_list(std::ostream& out, const SparseNetwork& net, const NodeIndex* index) {
  auto label = [&](Index i) {
    return index ? index->labels.at(static_cast<std::size_t>(i)) : std::to_string(i);
  };
  const auto& a = net.adjacency();
  for (Index i = 0; i < net.n_nodes(); ++i) {
    if (net.out_degree(static_cast<NodeId>(i)) == 0 &&
        net.in_degree(static_cast<NodeId>(i)) == 0)
      out << label(i) << '\n';
    for (RowSparse::InnerIterator it(a, i); it; ++it)
      out << label(i) << ' ' << label(it.col()) << '\n';
  }
}

void write_remap_csv(std::ostream& out, const NodeIndex& index) {
  out << "index,label\n";
  for (std::size_t i = 0; i < index.labels.size(); ++i)
    out << i << ',' << index.labels[i] << '\n';
}

}  // namespace dsar
