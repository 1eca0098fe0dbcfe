#include "dsar/inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>
#include <random>

#include "dsar/errors.hpp"
#include "dsar/lse.hpp"
#include "dsar/rng.hpp"
#include "dsar/wire.hpp"

namespace dsar::infer {

// --- plug-ins --------------------------------------------------------------

PluginSums plugin_sums(const WorkerShard& shard, const Theta& theta) {
  PluginSums s;
  const Eigen::VectorXd fitted = shard.local_x * theta.beta;
  s.ssr = (shard.local_y - theta.rho * shard.stats.a - fitted).squaredNorm();
  s.fitted_sq = fitted.squaredNorm();
  s.n = shard.n_local();
  return s;
}

VariancePlugins combine_plugins(std::span<const PluginSums> parts) {
  PluginSums total;
  for (const auto& p : parts) {
    total.ssr += p.ssr;
    total.fitted_sq += p.fitted_sq;
    total.n += p.n;
  }
  if (total.n == 0) throw InferenceError("no plug-in contributions");
  const double n = static_cast<double>(total.n);
  return {total.ssr / n, (total.ssr + total.fitted_sq) / n};
}

VariancePlugins estimate_plugins(const Theta& theta, const Dataset& data) {
  const Eigen::VectorXd fitted = data.x * theta.beta;
  const double n = static_cast<double>(data.n_nodes());
  const double ssr = (lse::apply_s(data.network, theta.rho, data.y) - fitted).squaredNorm();
  return {ssr / n, (ssr + fitted.squaredNorm()) / n};
}

// --- sparse columns ----------------------------------------------------------

ColSparse SparseColumns::scatter(std::span<const NodeId> col_ids) const {
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(rows.size());
  for (Index c = 0; c < cols(); ++c)
    for (Index q = ptr[c]; q < ptr[c + 1]; ++q)
      t.emplace_back(rows[q], col_ids[static_cast<std::size_t>(c)], vals[q]);
  ColSparse m(n_rows, n_rows);
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

Eigen::MatrixXd SparseColumns::left_multiply(const Eigen::MatrixXd& r) const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(r.rows(), cols());
  for (Index c = 0; c < cols(); ++c)
    for (Index q = ptr[c]; q < ptr[c + 1]; ++q) out.col(c) += vals[q] * r.col(rows[q]);
  return out;
}

namespace {

using Entries = std::vector<std::pair<NodeId, double>>;

/// Accumulates scaled sparse vectors and merges duplicate ids.
class SparseVec {
 public:
  void add(NodeId j, double v) { e_.emplace_back(j, v); }
  void add(std::span<const NodeId> ids, std::span<const double> ws, double scale) {
    for (std::size_t q = 0; q < ids.size(); ++q) e_.emplace_back(ids[q], scale * ws[q]);
  }
  void add(const Entries& other, double scale) {
    for (const auto& [j, v] : other) e_.emplace_back(j, scale * v);
  }
  Entries take() {
    std::sort(e_.begin(), e_.end(), [](const auto& l, const auto& r) { return l.first < r.first; });
    Entries out;
    for (const auto& [j, v] : e_) {
      if (!out.empty() && out.back().first == j)
        out.back().second += v;
      else
        out.emplace_back(j, v);
    }
    e_.clear();
    return out;
  }

 private:
  Entries e_;
};

void push_column(SparseColumns& m, const Entries& col) {
  for (const auto& [j, v] : col) {
    m.rows.push_back(j);
    m.vals.push_back(v);
  }
  m.ptr.push_back(static_cast<Index>(m.rows.size()));
}

}  // namespace

ShardFactors build_xi_vt(const WorkerShard& shard, const Theta& theta) {
  if (theta.beta.size() != shard.p())
    throw DimensionError("beta has length " + std::to_string(theta.beta.size()) +
                         ", shard has " + std::to_string(shard.p()) + " covariates");
  const double rho = theta.rho;
  const auto dd = lse::d_factors(shard.stored_dtilde, rho);
  auto D = [&](NodeId j) { return dd.d[shard.stored_index(j)]; };
  auto Dd = [&](NodeId j) { return dd.d_dot[shard.stored_index(j)]; };
  auto scaled = [](Entries v, auto&& diag) {
    for (auto& [j, x] : v) x *= diag(j);
    return v;
  };

  ShardFactors f;
  f.worker_id = shard.worker_id;
  f.n_total = shard.n_total;
  f.local_nodes = shard.local_nodes;
  const Index nk = shard.n_local();
  f.d_local.resize(nk);
  for (auto* m : {&f.xi1, &f.v1, &f.mt, &f.b}) m->n_rows = shard.n_total;

  SparseVec acc;
  for (Index c = 0; c < nk; ++c) {
    const NodeId i = shard.local_nodes[static_cast<std::size_t>(c)];
    const double di = D(i), ddi = Dd(i);
    f.d_local[c] = di;
    const auto in_ids = shard.in_cols.ids_of(c);
    const auto in_w = shard.in_cols.weights_of(c);
    const auto out_ids = shard.out_rows.ids_of(c);
    const auto out_w = shard.out_rows.weights_of(c);
    const auto w2_ids = shard.second_order.ids_of(c);
    const auto w2_w = shard.second_order.weights_of(c);

    acc.add(in_ids, in_w, 1.0);
    acc.add(w2_ids, w2_w, -rho);
    const Entries stw = acc.take();  // SᵀW e_i
    acc.add(out_ids, out_w, 1.0);
    acc.add(w2_ids, w2_w, -rho);
    const Entries wts = acc.take();  // WᵀS e_i
    acc.add(i, 1.0);
    acc.add(in_ids, in_w, -rho);
    acc.add(out_ids, out_w, -rho);
    acc.add(w2_ids, w2_w, rho * rho);
    const Entries sts = acc.take();  // SᵀS e_i

    // Ξ_{k,1} e_c = Ḋ_i SᵀS e_i - D_i SᵀW e_i - D_i WᵀS e_i
    acc.add(sts, ddi);
    acc.add(stw, -di);
    acc.add(wts, -di);
    const Entries xi1 = acc.take();
    push_column(f.xi1, xi1);

    // V_{1k} e_i = D Sᵀ e_i
    acc.add(i, 1.0);
    acc.add(out_ids, out_w, -rho);
    push_column(f.v1, scaled(acc.take(), D));

    // M̃ e_i = Ḋ∘Ξ_{k,1}e_c + D∘(D_i w⁽²⁾ - Ḋ_i WᵀS e_i - Ḋ_i SᵀW e_i)
    acc.add(w2_ids, w2_w, di);
    acc.add(wts, -ddi);
    acc.add(stw, -ddi);
    Entries mt = scaled(acc.take(), D);
    acc.add(mt, 1.0);
    acc.add(scaled(xi1, Dd), 1.0);
    push_column(f.mt, acc.take());

    // D_i S e_i
    acc.add(i, di);
    acc.add(in_ids, in_w, -rho * di);
    push_column(f.b, acc.take());
  }

  const auto& s = shard.stats;
  f.t1_coef = f.d_local.cwiseProduct(s.a - rho * s.c);
  f.t2_coef = f.d_local.cwiseProduct(s.b - rho * s.c);
  f.t3_coef = f.d_local.asDiagonal() * (shard.local_x - rho * s.z);
  return f;
}

ColSparse ShardFactors::xi() const {
  SparseColumns scaled = xi1;
  for (Index c = 0; c < scaled.cols(); ++c)
    for (Index q = scaled.ptr[c]; q < scaled.ptr[c + 1]; ++q) scaled.vals[q] *= d_local[c];
  return scaled.scatter(local_nodes);
}

ColSparse ShardFactors::v1_matrix() const { return v1.scatter(local_nodes); }

ColSparse ShardFactors::v2_matrix() const {
  const ColSparse m = mt.scatter(local_nodes);
  const ColSparse bb = b.scatter(local_nodes);
  return ColSparse(m * ColSparse(bb.transpose()));
}

namespace {

Eigen::VectorXd combine_b(const SparseColumns& b, const Eigen::VectorXd& coef) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(b.n_rows);
  for (Index c = 0; c < b.cols(); ++c)
    for (Index q = b.ptr[c]; q < b.ptr[c + 1]; ++q) out[b.rows[q]] += coef[c] * b.vals[q];
  return out;
}

}  // namespace

Eigen::VectorXd ShardFactors::t1() const { return combine_b(b, t1_coef); }
Eigen::VectorXd ShardFactors::t2() const { return combine_b(b, t2_coef); }

Eigen::MatrixXd ShardFactors::t3() const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n_total, p());
  for (Index c = 0; c < b.cols(); ++c)
    for (Index q = b.ptr[c]; q < b.ptr[c + 1]; ++q)
      out.row(b.rows[q]) += b.vals[q] * t3_coef.row(c);
  return out;
}

// --- Σ̂₁ --------------------------------------------------------------------

namespace {

struct Sigma1Terms {
  double tr_xi = 0.0;  ///< Σ_{k,l} tr(Ξ_k Ξ_l)
  double tr_v = 0.0;   ///< Σ_{k,l} tr(V_1kᵀ V_2l)
  double t1t2 = 0.0;   ///< T₁T₂ᵀ with T_m = Σ_k T_mk
  double t1t1 = 0.0;
  Eigen::VectorXd t3t1;  ///< T₃T₁ᵀ
  Eigen::MatrixXd t3t3;  ///< T₃T₃ᵀ
};

// With √(α_kα_l)/√(N_kN_l) = 1/N every pairwise term collapses to the
// pooled factors.
Eigen::MatrixXd assemble(const Sigma1Terms& t, const VariancePlugins& pl, Index n,
                         CrossTermSign sign) {
  const double s2 = pl.sigma2_eps_hat;
  const double s4 = s2 * s2;
  const double scale = 4.0 / static_cast<double>(n);
  const Index p = t.t3t1.size();
  Eigen::MatrixXd m(p + 1, p + 1);
  const double inv_tilde = pl.sigma2_tilde_hat > 0.0 ? 1.0 / pl.sigma2_tilde_hat : 0.0;
  m(0, 0) = scale * (s4 * (t.tr_xi + t.tr_v + inv_tilde * 2.0 * t.t1t2) + s2 * t.t1t1);
  const double sgn = sign == CrossTermSign::derived ? 1.0 : -1.0;
  const Eigen::VectorXd cross = sgn * scale * s2 * t.t3t1;
  m.block(1, 0, p, 1) = cross;
  m.block(0, 1, 1, p) = cross.transpose();
  m.bottomRightCorner(p, p) = scale * s2 * t.t3t3;
  return m;
}

}  // namespace

Eigen::MatrixXd sigma1_exact(std::span<const ShardFactors> factors,
                             const VariancePlugins& plugins, CrossTermSign sign) {
  if (factors.empty()) throw InferenceError("no inference factors supplied");
  const Index n_total = factors.front().n_total;
  const Index p = factors.front().p();
  Index n = 0;
  ColSparse xi(n_total, n_total), v1(n_total, n_total), mt(n_total, n_total),
      b(n_total, n_total);
  Eigen::VectorXd t1 = Eigen::VectorXd::Zero(n_total), t2 = t1;
  Eigen::MatrixXd t3 = Eigen::MatrixXd::Zero(n_total, p);
  for (const auto& f : factors) {
    if (f.n_total != n_total || f.p() != p)
      throw ProtocolError("inference factors disagree on N or p");
    n += f.n_local();
    xi += f.xi();
    v1 += f.v1_matrix();
    mt += f.mt.scatter(f.local_nodes);
    b += f.b.scatter(f.local_nodes);
    t1 += f.t1();
    t2 += f.t2();
    t3 += f.t3();
  }
  Sigma1Terms t;
  t.tr_xi = xi.cwiseProduct(ColSparse(xi.transpose())).sum();
  // tr(V₁ᵀ M̃' Bᵀ) = Σ (V₁ᵀ M̃') ∘ B, with M̃' the stacked M̃ e_i columns.
  const ColSparse v1t_mt = ColSparse(v1.transpose()) * mt;
  t.tr_v = v1t_mt.cwiseProduct(b).sum();
  t.t1t2 = t1.dot(t2);
  t.t1t1 = t1.squaredNorm();
  t.t3t1 = t3.transpose() * t1;
  t.t3t3 = t3.transpose() * t3;
  return assemble(t, plugins, n, sign);
}

// --- projectors -------------------------------------------------------------

std::uint64_t Projectors::fingerprint() const {
  std::uint64_t h = mix64(seed);
  h = mix64(h ^ static_cast<std::uint64_t>(d));
  h = mix64(h ^ static_cast<std::uint64_t>(n));
  h = mix64(h ^ (sparse ? 0x5u : 0x3u) ^ (identity ? 0x100u : 0u));
  return h;
}

Index default_projection_dim(Index n_nodes) {
  return static_cast<Index>(std::floor(std::log(static_cast<double>(n_nodes)))) + 1;
}

Projectors make_projectors(Index n_nodes, Index d, std::uint64_t seed, bool sparse) {
  if (d < 1) throw ConfigError("projection dimension must be at least 1");
  if (n_nodes < 1) throw ConfigError("projection needs at least one node");
  Projectors p;
  p.d = d;
  p.n = n_nodes;
  p.sparse = sparse;
  p.seed = seed;
  auto fill = [&](Eigen::MatrixXd& r, std::uint64_t stream) {
    auto rng = make_engine(derive_seed(seed, stream));
    r.resize(d, n_nodes);
    if (sparse) {
      const double v = std::sqrt(3.0 / static_cast<double>(d));
      std::uniform_int_distribution<int> six(0, 5);
      for (Index k = 0; k < r.size(); ++k) {
        const int u = six(rng);
        r.data()[k] = u == 0 ? v : (u == 1 ? -v : 0.0);
      }
    } else {
      std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
      for (Index k = 0; k < r.size(); ++k) r.data()[k] = normal(rng);
    }
  };
  fill(p.r1, 1);
  fill(p.r2, 2);
  return p;
}

Projectors identity_projectors(Index n_nodes) {
  Projectors p;
  p.d = n_nodes;
  p.n = n_nodes;
  p.identity = true;
  p.r1 = Eigen::MatrixXd::Identity(n_nodes, n_nodes);
  p.r2 = p.r1;
  return p;
}

// --- packs ------------------------------------------------------------------

InferencePack build_pack(const ShardFactors& f, const Projectors& proj,
                         const PluginSums& plugins) {
  if (proj.n != f.n_total)
    throw DimensionError("projectors cover " + std::to_string(proj.n) +
                         " nodes, factors " + std::to_string(f.n_total));
  InferencePack pk;
  pk.worker_id = f.worker_id;
  pk.n_local = f.n_local();
  pk.d = proj.d;
  pk.p = f.p();
  pk.fingerprint = proj.fingerprint();
  pk.plugins = plugins;

  const Index nk = f.n_local();
  Eigen::MatrixXd r1_loc(proj.d, nk), r2_loc(proj.d, nk);
  for (Index c = 0; c < nk; ++c) {
    r1_loc.col(c) = proj.r1.col(f.local_nodes[static_cast<std::size_t>(c)]);
    r2_loc.col(c) = proj.r2.col(f.local_nodes[static_cast<std::size_t>(c)]);
  }
  const Eigen::MatrixXd r1_xi = f.xi1.left_multiply(proj.r1);
  const Eigen::MatrixXd r2_xi = f.xi1.left_multiply(proj.r2);
  // Ξ_k = Ξ_{k,1} (D J)ᵀ, so R₁Ξ_kR₂ᵀ = (R₁Ξ_{k,1})(R₂ D J)ᵀ.
  pk.xi1_r = r1_xi * (r2_loc * f.d_local.asDiagonal()).transpose();
  pk.xi2_r = r2_xi * (r1_loc * f.d_local.asDiagonal()).transpose();
  pk.v1_r = f.v1.left_multiply(proj.r1) * r2_loc.transpose();
  const Eigen::MatrixXd r1_b = f.b.left_multiply(proj.r1);
  pk.v2_r = f.mt.left_multiply(proj.r1) * f.b.left_multiply(proj.r2).transpose();
  pk.t1_r = r1_b * f.t1_coef;
  pk.t2_r = r1_b * f.t2_coef;
  pk.t3_r = f.t3_coef.transpose() * r1_b.transpose();
  pk.byte_size = serialize(pk).size();
  return pk;
}

Eigen::MatrixXd sigma1_projected(std::span<const InferencePack> packs,
                                 const VariancePlugins& plugins, CrossTermSign sign) {
  if (packs.empty()) throw InferenceError("no inference packs supplied");
  const auto& first = packs.front();
  const Index d = first.d, p = first.p;
  Eigen::MatrixXd xi1 = Eigen::MatrixXd::Zero(d, d), xi2 = xi1, v1 = xi1, v2 = xi1;
  Eigen::VectorXd t1 = Eigen::VectorXd::Zero(d), t2 = t1;
  Eigen::MatrixXd t3 = Eigen::MatrixXd::Zero(p, d);
  Index n = 0;
  for (const auto& pk : packs) {
    if (pk.d != d || pk.p != p)
      throw ProtocolError("worker " + std::to_string(pk.worker_id) +
                          " sent a pack with d = " + std::to_string(pk.d) +
                          ", p = " + std::to_string(pk.p) + "; expected d = " +
                          std::to_string(d) + ", p = " + std::to_string(p));
    if (pk.fingerprint != first.fingerprint)
      throw ProtocolError("worker " + std::to_string(pk.worker_id) +
                          " used different projectors (fingerprint mismatch)");
    xi1 += pk.xi1_r;
    xi2 += pk.xi2_r;
    v1 += pk.v1_r;
    v2 += pk.v2_r;
    t1 += pk.t1_r;
    t2 += pk.t2_r;
    t3 += pk.t3_r;
    n += pk.n_local;
  }
  Sigma1Terms t;
  t.tr_xi = xi1.cwiseProduct(xi2.transpose()).sum();
  t.tr_v = v1.cwiseProduct(v2).sum();
  t.t1t2 = t1.dot(t2);
  t.t1t1 = t1.squaredNorm();
  t.t3t1 = t3 * t1;
  t.t3t3 = t3 * t3.transpose();
  return assemble(t, plugins, n, sign);
}

Eigen::MatrixXd sigma1_projected(std::span<const InferencePack> packs, CrossTermSign sign) {
  std::vector<PluginSums> sums;
  for (const auto& pk : packs) sums.push_back(pk.plugins);
  return sigma1_projected(packs, combine_plugins(sums), sign);
}

// --- serialization ------------------------------------------------------------

namespace {

constexpr std::uint32_t kPackTag = wire::make_tag('I', 'P', 'C', 'K');
constexpr std::uint32_t kFactorTag = wire::make_tag('X', 'F', 'A', 'C');

void write_plugins(wire::Writer& w, const PluginSums& s) {
  w.f64(s.ssr);
  w.f64(s.fitted_sq);
  w.u64(static_cast<std::uint64_t>(s.n));
}

PluginSums read_plugins(wire::Reader& r) {
  PluginSums s;
  s.ssr = r.f64();
  s.fitted_sq = r.f64();
  s.n = static_cast<Index>(r.u64());
  return s;
}

void write_columns(wire::Writer& w, const SparseColumns& m) {
  w.u64(static_cast<std::uint64_t>(m.cols()));
  w.u64(static_cast<std::uint64_t>(m.nnz()));
  for (Index c = 1; c <= m.cols(); ++c) w.u64(static_cast<std::uint64_t>(m.ptr[c]));
  for (NodeId j : m.rows) w.i32(j);
  w.f64s(m.vals);
}

SparseColumns read_columns(wire::Reader& r, Index n_rows) {
  SparseColumns m;
  m.n_rows = n_rows;
  const auto cols = r.u64();
  const auto nnz = r.u64();
  if (nnz > r.remaining()) throw ProtocolError("sparse factor larger than payload");
  for (std::uint64_t c = 0; c < cols; ++c) m.ptr.push_back(static_cast<Index>(r.u64()));
  if (m.ptr.back() != static_cast<Index>(nnz)) throw ProtocolError("corrupt sparse factor");
  m.rows.resize(nnz);
  for (auto& j : m.rows) {
    j = r.i32();
    if (j < 0 || j >= n_rows) throw ProtocolError("sparse factor row out of range");
  }
  m.vals.resize(nnz);
  for (auto& v : m.vals) v = r.f64();
  return m;
}

}  // namespace

std::vector<std::uint8_t> serialize(const InferencePack& pk) {
  wire::Writer w;
  w.u32(kPackTag);
  w.i32(pk.worker_id);
  w.u64(static_cast<std::uint64_t>(pk.n_local));
  w.u32(static_cast<std::uint32_t>(pk.d));
  w.u32(static_cast<std::uint32_t>(pk.p));
  w.u64(pk.fingerprint);
  write_plugins(w, pk.plugins);
  for (const auto* m : {&pk.xi1_r, &pk.xi2_r, &pk.v1_r, &pk.v2_r}) w.matrix(*m);
  w.vector(pk.t1_r);
  w.vector(pk.t2_r);
  w.matrix(pk.t3_r);
  return std::move(w).take();
}

InferencePack deserialize_pack(std::span<const std::uint8_t> bytes) {
  wire::Reader r(bytes);
  wire::expect_tag(r, kPackTag, "inference pack");
  InferencePack pk;
  pk.worker_id = r.i32();
  pk.n_local = static_cast<Index>(r.u64());
  pk.d = r.u32();
  pk.p = r.u32();
  pk.fingerprint = r.u64();
  pk.plugins = read_plugins(r);
  for (auto* m : {&pk.xi1_r, &pk.xi2_r, &pk.v1_r, &pk.v2_r}) *m = r.matrix(pk.d, pk.d);
  pk.t1_r = r.vector(pk.d);
  pk.t2_r = r.vector(pk.d);
  pk.t3_r = r.matrix(pk.p, pk.d);
  r.expect_end();
  pk.byte_size = bytes.size();
  return pk;
}

std::vector<std::uint8_t> serialize(const ShardFactors& f, const PluginSums& plugins) {
  wire::Writer w;
  w.u32(kFactorTag);
  w.i32(f.worker_id);
  w.u64(static_cast<std::uint64_t>(f.n_total));
  w.u64(static_cast<std::uint64_t>(f.n_local()));
  w.u32(static_cast<std::uint32_t>(f.p()));
  write_plugins(w, plugins);
  for (NodeId i : f.local_nodes) w.i32(i);
  w.vector(f.d_local);
  for (const auto* m : {&f.xi1, &f.v1, &f.mt, &f.b}) write_columns(w, *m);
  w.vector(f.t1_coef);
  w.vector(f.t2_coef);
  w.matrix(f.t3_coef);
  return std::move(w).take();
}

std::pair<ShardFactors, PluginSums> deserialize_factors(std::span<const std::uint8_t> bytes) {
  wire::Reader r(bytes);
  wire::expect_tag(r, kFactorTag, "inference factor set");
  ShardFactors f;
  f.worker_id = r.i32();
  f.n_total = static_cast<Index>(r.u64());
  const auto nk = static_cast<Index>(r.u64());
  const auto p = static_cast<Index>(r.u32());
  if (static_cast<std::uint64_t>(nk) > r.remaining()) throw ProtocolError("corrupt factor header");
  const PluginSums plugins = read_plugins(r);
  f.local_nodes.resize(static_cast<std::size_t>(nk));
  for (auto& i : f.local_nodes) i = r.i32();
  f.d_local = r.vector(nk);
  for (auto* m : {&f.xi1, &f.v1, &f.mt, &f.b}) {
    *m = read_columns(r, f.n_total);
    if (m->cols() != nk) throw ProtocolError("factor column count does not match N_k");
  }
  f.t1_coef = r.vector(nk);
  f.t2_coef = r.vector(nk);
  f.t3_coef = r.matrix(nk, p);
  r.expect_end();
  return {std::move(f), plugins};
}

// --- sandwich and intervals ---------------------------------------------------------

SandwichCovariance sandwich(const Eigen::MatrixXd& sigma1, const Eigen::MatrixXd& sigma2,
                            Index n_nodes, InferenceMode mode, double max_condition) {
  if (sigma1.rows() != sigma1.cols() || sigma2.rows() != sigma2.cols() ||
      sigma1.rows() != sigma2.rows())
    throw DimensionError("sandwich factors must be square and of equal size");
  if (n_nodes < 1) throw DimensionError("sandwich needs N >= 1");
  const double cond = lse::condition_number(0.5 * (sigma2 + sigma2.transpose()));
  if (!(cond <= max_condition))
    throw InferenceError("pooled Hessian is singular (condition number " +
                         std::to_string(cond) + ")");
  SandwichCovariance out;
  out.mode = mode;
  out.n_nodes = n_nodes;
  out.sigma1_hat = 0.5 * (sigma1 + sigma1.transpose());
  out.sigma2_hat = sigma2;
  const Eigen::MatrixXd inv = sigma2.fullPivLu().inverse();
  Eigen::MatrixXd cov = inv * out.sigma1_hat * inv.transpose() / static_cast<double>(n_nodes);
  out.covariance = 0.5 * (cov + cov.transpose());
  for (Index j = 0; j < out.covariance.rows(); ++j) {
    if (!(out.covariance(j, j) >= 0.0))
      throw InferenceError(
          "estimated variance of " + Theta::parameter_name(j) + " is negative (" +
          std::to_string(out.covariance(j, j)) + ")" +
          (mode == InferenceMode::projected ? "; increase the projection dimension d" : ""));
  }
  return out;
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ConfigError("normal quantile needs p in (0, 1)");
  // Acklam's rational approximation, then one Halley step against erfc.
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00, 2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(x * x / 2.0);
  return x - u / (1.0 + x * u / 2.0);
}

std::vector<Interval> confidence_intervals(const Theta& theta, const SandwichCovariance& cov,
                                           double level) {
  if (!(level >= 0.0 && level < 1.0))
    throw ConfigError("confidence level must lie in [0, 1)");
  const Eigen::VectorXd est = theta.to_vector();
  if (cov.covariance.rows() != est.size())
    throw DimensionError("covariance does not match the parameter dimension");
  const double z = normal_quantile(0.5 + level / 2.0);
  std::vector<Interval> out;
  for (Index j = 0; j < est.size(); ++j) {
    Interval iv;
    iv.parameter = Theta::parameter_name(j);
    iv.estimate = est[j];
    iv.se = std::sqrt(cov.covariance(j, j));
    iv.lower = est[j] - z * iv.se;
    iv.upper = est[j] + z * iv.se;
    iv.p_value = iv.se > 0.0 ? std::erfc(std::abs(est[j] / iv.se) / std::numbers::sqrt2)
                             : (est[j] == 0.0 ? 1.0 : 0.0);
    out.push_back(iv);
  }
  return out;
}

void write_intervals_csv(std::ostream& out, std::span<const Interval> rows) {
  out << "parameter,estimate,se,ci_low,ci_high,p_value\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.10g,%.10g,%.10g,%.10g,%.6g\n", r.parameter.c_str(),
                  r.estimate, r.se, r.lower, r.upper, r.p_value);
    out << buf;
  }
}

}  // namespace dsar::infer
