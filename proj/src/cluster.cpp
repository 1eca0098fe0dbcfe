#include "dsar/cluster.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <tuple>

#include "dsar/log.hpp"
#include "dsar/parallel.hpp"
#include "dsar/wire.hpp"

namespace dsar::cluster {

std::string to_string(Method m) {
  switch (m) {
    case Method::os: return "os";
    case Method::wlse: return "wlse";
    case Method::twlse: return "twlse";
  }
  return "?";
}

Method parse_method(std::string_view s) {
  if (s == "os") return Method::os;
  if (s == "wlse") return Method::wlse;
  if (s == "twlse") return Method::twlse;
  throw ConfigError("unknown method '" + std::string(s) + "' (expected os, wlse or twlse)");
}

std::string to_string(PayloadKind k) {
  switch (k) {
    case PayloadKind::local_summary: return "local_summary";
    case PayloadKind::broadcast_theta: return "broadcast_theta";
    case PayloadKind::refined_summary: return "refined_summary";
    case PayloadKind::inference_pack: return "inference_pack";
  }
  return "?";
}

std::string to_string(InferenceChoice c) {
  switch (c) {
    case InferenceChoice::none: return "none";
    case InferenceChoice::exact: return "exact";
    case InferenceChoice::projected: return "projected";
  }
  return "?";
}

InferenceChoice parse_inference(std::string_view s) {
  if (s == "none") return InferenceChoice::none;
  if (s == "exact") return InferenceChoice::exact;
  if (s == "projected") return InferenceChoice::projected;
  throw ConfigError("unknown inference mode '" + std::string(s) +
                    "' (expected none, exact or projected)");
}

// --- message log --------------------------------------------------------------

MessageLog::MessageLog(const MessageLog& other) {
  std::lock_guard lock(other.mutex_);
  messages_ = other.messages_;
}

MessageLog& MessageLog::operator=(const MessageLog& other) {
  if (this == &other) return *this;
  std::vector<Message> copy;
  {
    std::lock_guard lock(other.mutex_);
    copy = other.messages_;
  }
  std::lock_guard lock(mutex_);
  messages_ = std::move(copy);
  return *this;
}

void MessageLog::append(const Message& m) {
  std::lock_guard lock(mutex_);
  messages_.push_back(m);
}

std::vector<Message> MessageLog::messages() const {
  std::vector<Message> out;
  {
    std::lock_guard lock(mutex_);
    out = messages_;
  }
  auto key = [](const Message& m) {
    const int worker = m.from == kMaster ? m.to : m.from;
    return std::make_tuple(m.round, worker, m.from == kMaster ? 0 : 1, static_cast<int>(m.kind));
  };
  std::sort(out.begin(), out.end(),
            [&](const Message& a, const Message& b) { return key(a) < key(b); });
  return out;
}

std::size_t MessageLog::total_bytes() const {
  std::lock_guard lock(mutex_);
  std::size_t s = 0;
  for (const auto& m : messages_) s += m.payload_bytes;
  return s;
}

std::size_t MessageLog::bytes_of(PayloadKind kind) const {
  std::lock_guard lock(mutex_);
  std::size_t s = 0;
  for (const auto& m : messages_)
    if (m.kind == kind) s += m.payload_bytes;
  return s;
}

std::size_t MessageLog::count(PayloadKind kind) const {
  std::lock_guard lock(mutex_);
  return static_cast<std::size_t>(std::count_if(
      messages_.begin(), messages_.end(), [&](const Message& m) { return m.kind == kind; }));
}

int MessageLog::rounds() const {
  std::lock_guard lock(mutex_);
  int r = 0;
  for (const auto& m : messages_) r = std::max(r, m.round);
  return r;
}

void MessageLog::write_csv(std::ostream& out) const {
  auto endpoint = [](int id) { return id == kMaster ? std::string("master") : std::to_string(id); };
  out << "round,from,to,kind,bytes\n";
  for (const auto& m : messages())
    out << m.round << ',' << endpoint(m.from) << ',' << endpoint(m.to) << ','
        << to_string(m.kind) << ',' << m.payload_bytes << '\n';
}

// --- aggregation --------------------------------------------------------------

namespace {

void check_alphas(std::span<const double> alphas, std::size_t k) {
  if (alphas.size() != k)
    throw ConfigError(std::to_string(alphas.size()) + " weights for " + std::to_string(k) +
                      " workers");
  double s = 0.0;
  for (double a : alphas) {
    if (!(a >= 0.0)) throw ConfigError("worker weights must be nonnegative");
    s += a;
  }
  if (std::abs(s - 1.0) > 1e-9) throw ConfigError("worker weights must sum to 1");
}

/// {Σ α_k H_k}⁻¹ Σ α_k H_k θ_k, plus the pooled matrix.
std::pair<Eigen::VectorXd, Eigen::MatrixXd> weighted_combine(
    std::span<const Eigen::MatrixXd> hessians, std::span<const Eigen::VectorXd> thetas,
    std::span<const double> alphas, double max_condition) {
  const Index q = thetas.front().size();
  Eigen::MatrixXd pooled = Eigen::MatrixXd::Zero(q, q);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(q);
  for (std::size_t k = 0; k < thetas.size(); ++k) {
    if (thetas[k].size() != q || hessians[k].rows() != q || hessians[k].cols() != q)
      throw ProtocolError("worker " + std::to_string(k) + " sent a payload of the wrong shape");
    pooled += alphas[k] * hessians[k];
    rhs += alphas[k] * (hessians[k] * thetas[k]);
  }
  const double cond = lse::condition_number(0.5 * (pooled + pooled.transpose()));
  if (!(cond <= max_condition))
    throw AggregationError("pooled Hessian is singular or ill-conditioned (condition number " +
                           std::to_string(cond) + ")");
  return {pooled.fullPivLu().solve(rhs), pooled};
}

}  // namespace

AggregateEstimate aggregate_os(std::span<const lse::LocalSummary> summaries) {
  if (summaries.empty()) throw AggregationError("no local summaries to aggregate");
  const Index q = summaries.front().theta_hat.dim();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(q);
  for (const auto& s : summaries) {
    if (s.theta_hat.dim() != q) throw ProtocolError("local summaries disagree on p");
    mean += s.theta_hat.to_vector();
  }
  AggregateEstimate e;
  e.method = Method::os;
  e.theta = Theta::from_vector(mean / static_cast<double>(summaries.size()));
  e.rounds_used = 1;
  return e;
}

AggregateEstimate aggregate_wlse(std::span<const lse::LocalSummary> summaries,
                                 std::span<const double> alphas, double max_condition) {
  if (summaries.empty()) throw AggregationError("no local summaries to aggregate");
  check_alphas(alphas, summaries.size());
  std::vector<Eigen::MatrixXd> h;
  std::vector<Eigen::VectorXd> t;
  for (const auto& s : summaries) {
    if (s.hessian_at_opt.size() == 0)
      throw ProtocolError("worker " + std::to_string(s.worker_id) +
                          " sent no Hessian; WLSE needs one from every worker");
    h.push_back(s.hessian_at_opt);
    t.push_back(s.theta_hat.to_vector());
  }
  auto [theta, pooled] = weighted_combine(h, t, alphas, max_condition);
  AggregateEstimate e;
  e.method = Method::wlse;
  e.theta = Theta::from_vector(theta);
  e.sigma2_hat = std::move(pooled);
  e.rounds_used = 1;
  return e;
}

namespace {
constexpr std::uint32_t kRefinedTag = wire::make_tag('R', 'S', 'U', 'M');
constexpr std::uint32_t kThetaTag = wire::make_tag('B', 'C', 'S', 'T');
}  // namespace

std::vector<std::uint8_t> serialize(const RefinedSummary& r) {
  const Index p = r.theta.beta.size();
  if (r.hessian.rows() != p + 1 || r.hessian.cols() != p + 1)
    throw DimensionError("refined Hessian shape does not match p");
  wire::Writer w;
  w.u32(kRefinedTag);
  w.i32(r.worker_id);
  w.u64(static_cast<std::uint64_t>(r.n_local));
  w.u32(static_cast<std::uint32_t>(p));
  w.u8(r.refit ? 1 : 0);
  w.f64(r.theta.rho);
  w.vector(r.theta.beta);
  w.matrix(r.hessian);
  return std::move(w).take();
}

RefinedSummary deserialize_refined(std::span<const std::uint8_t> bytes) {
  wire::Reader rd(bytes);
  wire::expect_tag(rd, kRefinedTag, "refined summary");
  RefinedSummary r;
  r.worker_id = rd.i32();
  r.n_local = static_cast<Index>(rd.u64());
  const auto p = static_cast<Index>(rd.u32());
  r.refit = rd.u8() != 0;
  r.theta.rho = rd.f64();
  r.theta.beta = rd.vector(p);
  r.hessian = rd.matrix(p + 1, p + 1);
  rd.expect_end();
  r.byte_size = bytes.size();
  return r;
}

std::vector<std::uint8_t> serialize_theta(const Theta& t) {
  wire::Writer w;
  w.u32(kThetaTag);
  w.u32(static_cast<std::uint32_t>(t.beta.size()));
  w.f64(t.rho);
  w.vector(t.beta);
  return std::move(w).take();
}

Theta deserialize_theta(std::span<const std::uint8_t> bytes) {
  wire::Reader r(bytes);
  wire::expect_tag(r, kThetaTag, "broadcast estimate");
  Theta t;
  const auto p = static_cast<Index>(r.u32());
  t.rho = r.f64();
  t.beta = r.vector(p);
  r.expect_end();
  return t;
}

RefinedSummary refine_worker(const WorkerShard& shard, const Theta& broadcast,
                             const lse::SolverOptions& solver, bool refit) {
  RefinedSummary r;
  r.worker_id = shard.worker_id;
  r.n_local = shard.n_local();
  try {
    auto step = lse::newton_refine(shard, broadcast, solver.max_condition);
    r.theta = std::move(step.theta);
    r.hessian = std::move(step.hessian);
  } catch (const AggregationError& e) {
    if (!refit) throw;
    log::warn(std::string(e.what()) + "; refitting from the broadcast estimate");
    r.theta = lse::fit_local(shard, broadcast, solver).theta_hat;
    r.hessian = lse::eval_objective(shard, broadcast, 2).hessian;
    r.refit = true;
  }
  r.byte_size = serialize(r).size();
  return r;
}

AggregateEstimate combine_refined(std::span<const RefinedSummary> refined,
                                  std::span<const double> alphas, double max_condition) {
  if (refined.empty()) throw AggregationError("no refined summaries to combine");
  check_alphas(alphas, refined.size());
  std::vector<Eigen::MatrixXd> h;
  std::vector<Eigen::VectorXd> t;
  for (const auto& r : refined) {
    h.push_back(r.hessian);
    t.push_back(r.theta.to_vector());
  }
  auto [theta, pooled] = weighted_combine(h, t, alphas, max_condition);
  AggregateEstimate e;
  e.method = Method::twlse;
  e.theta = Theta::from_vector(theta);
  e.sigma2_hat = std::move(pooled);
  e.rounds_used = 2;
  return e;
}

namespace {

template <typename Fn>
void run_workers(std::size_t k, unsigned threads, const std::string& stage, Fn&& fn) {
  parallel_for(k, threads, [&](std::size_t w) {
    try {
      fn(w);
    } catch (const WorkerFailure&) {
      throw;
    } catch (const std::exception& e) {
      throw WorkerFailure(static_cast<int>(w), stage, e.what());
    }
  });
}

}  // namespace

AggregateEstimate run_twlse(std::span<const WorkerShard> shards, std::span<const double> alphas,
                            const AggregateEstimate& first_pass,
                            const lse::SolverOptions& solver, MessageLog* log,
                            unsigned threads) {
  if (first_pass.method != Method::wlse)
    throw ConfigError("the two-step estimator starts from a WLSE first pass");
  const auto bcast = serialize_theta(first_pass.theta);
  std::vector<std::vector<std::uint8_t>> replies(shards.size());
  run_workers(shards.size(), threads, "refinement", [&](std::size_t k) {
    const auto& shard = shards[k];
    if (log) log->append({kMaster, shard.worker_id, 2, PayloadKind::broadcast_theta, bcast.size()});
    const Theta at = deserialize_theta(bcast);
    replies[k] = serialize(refine_worker(shard, at, solver));
    if (log)
      log->append({shard.worker_id, kMaster, 2, PayloadKind::refined_summary, replies[k].size()});
  });
  std::vector<RefinedSummary> refined;
  for (const auto& b : replies) refined.push_back(deserialize_refined(b));
  auto e = combine_refined(refined, alphas, solver.max_condition);
  e.total_bytes = first_pass.total_bytes + shards.size() * bcast.size();
  for (const auto& b : replies) e.total_bytes += b.size();
  return e;
}

PipelineResult run_pipeline(std::span<const WorkerShard> shards, const Partition& part,
                            const PipelineOptions& opts) {
  opts.solver.validate();
  const auto K = shards.size();
  if (K == 0) throw ConfigError("no workers");
  if (static_cast<int>(K) != part.k_workers() || part.alphas.size() != K)
    throw ConfigError("partition has " + std::to_string(part.k_workers()) + " workers but " +
                      std::to_string(K) + " shards were given");
  if (opts.method == Method::os && opts.inference != InferenceChoice::none)
    throw ConfigError("inference needs the wlse or twlse method (os sends no Hessians)");
  for (std::size_t k = 0; k < K; ++k)
    if (shards[k].worker_id != static_cast<int>(k))
      throw ConfigError("shard " + std::to_string(k) + " carries worker id " +
                        std::to_string(shards[k].worker_id));

  PipelineResult res;
  using Clock = std::chrono::steady_clock;
  auto seconds_since = [](Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
  };
  const auto t_start = Clock::now();
  const Index n_total = shards.front().n_total;
  const bool send_hessian = opts.method != Method::os;

  // Round 1: local fits.
  std::vector<std::vector<std::uint8_t>> r1(K);
  run_workers(K, opts.threads, "local fit", [&](std::size_t k) {
    auto s = lse::fit_local(shards[k], opts.solver);
    if (!send_hessian) s.hessian_at_opt.resize(0, 0);
    r1[k] = lse::serialize(s);
    res.log.append({static_cast<int>(k), kMaster, 1, PayloadKind::local_summary, r1[k].size()});
  });
  for (const auto& b : r1) res.summaries.push_back(lse::deserialize_summary(b));

  if (opts.method == Method::os) {
    res.estimate = aggregate_os(res.summaries);
    res.estimate.total_bytes = res.log.total_bytes();
    res.seconds_round1 = seconds_since(t_start);
    return res;
  }
  auto wlse = aggregate_wlse(res.summaries, part.alphas, opts.solver.max_condition);
  wlse.total_bytes = res.log.total_bytes();
  res.seconds_round1 = seconds_since(t_start);
  const bool infer_on = opts.inference != InferenceChoice::none;
  if (opts.method == Method::wlse && !infer_on) {
    res.estimate = wlse;
    return res;
  }
  const auto t_round2 = Clock::now();

  // Round 2: broadcast θ̂^w; workers refine (twlse) and/or send inference payloads.
  const bool refine = opts.method == Method::twlse;
  const auto bcast = serialize_theta(wlse.theta);
  std::optional<infer::Projectors> proj;
  if (opts.inference == InferenceChoice::projected) {
    res.proj_dim = opts.proj_dim > 0 ? opts.proj_dim : infer::default_projection_dim(n_total);
    const bool sparse = opts.proj_sparse.value_or(n_total >= infer::kSparseProjectionThreshold);
    // Every worker would draw the same matrices from the shared seed; they
    // are generated once here and read by all in-process workers.
    proj = infer::make_projectors(n_total, res.proj_dim, opts.proj_seed, sparse);
  }
  std::vector<std::vector<std::uint8_t>> refined_bytes(K), infer_bytes(K);
  run_workers(K, opts.threads, "round 2", [&](std::size_t k) {
    const auto& shard = shards[k];
    const int id = static_cast<int>(k);
    res.log.append({kMaster, id, 2, PayloadKind::broadcast_theta, bcast.size()});
    const Theta at = deserialize_theta(bcast);
    if (refine) {
      refined_bytes[k] = serialize(refine_worker(shard, at, opts.solver, opts.refit_on_singular));
      res.log.append({id, kMaster, 2, PayloadKind::refined_summary, refined_bytes[k].size()});
    }
    if (infer_on) {
      const auto factors = infer::build_xi_vt(shard, at);
      const auto sums = infer::plugin_sums(shard, at);
      infer_bytes[k] = opts.inference == InferenceChoice::exact
                           ? infer::serialize(factors, sums)
                           : infer::serialize(infer::build_pack(factors, *proj, sums));
      res.log.append({id, kMaster, 2, PayloadKind::inference_pack, infer_bytes[k].size()});
    }
  });

  if (refine) {
    std::vector<RefinedSummary> refined;
    for (const auto& b : refined_bytes) refined.push_back(deserialize_refined(b));
    res.estimate = combine_refined(refined, part.alphas, opts.solver.max_condition);
    res.first_pass = wlse;
  } else {
    res.estimate = wlse;
    res.estimate.rounds_used = 2;
  }
  res.estimate.total_bytes = res.log.total_bytes();

  if (infer_on) {
    Eigen::MatrixXd sigma1;
    infer::InferenceMode mode;
    if (opts.inference == InferenceChoice::exact) {
      std::vector<infer::ShardFactors> factors;
      std::vector<infer::PluginSums> sums;
      for (const auto& b : infer_bytes) {
        auto [f, s] = infer::deserialize_factors(b);
        factors.push_back(std::move(f));
        sums.push_back(s);
      }
      res.plugins = infer::combine_plugins(sums);
      sigma1 = infer::sigma1_exact(factors, *res.plugins, opts.cross_sign);
      mode = infer::InferenceMode::exact;
    } else {
      std::vector<infer::InferencePack> packs;
      std::vector<infer::PluginSums> sums;
      for (const auto& b : infer_bytes) {
        packs.push_back(infer::deserialize_pack(b));
        sums.push_back(packs.back().plugins);
      }
      res.plugins = infer::combine_plugins(sums);
      sigma1 = infer::sigma1_projected(packs, *res.plugins, opts.cross_sign);
      mode = infer::InferenceMode::projected;
    }
    res.sigma1_hat = sigma1;
    res.covariance = infer::sandwich(sigma1, res.estimate.sigma2_hat, n_total, mode,
                                     opts.solver.max_condition);
    res.intervals = infer::confidence_intervals(res.estimate.theta, *res.covariance, opts.level);
  }
  res.seconds_round2 = seconds_since(t_round2);
  return res;
}

PipelineResult run_pipeline(const Dataset& data, const Partition& part,
                            const PipelineOptions& opts) {
  if (part.n_nodes() != data.n_nodes())
    throw ConfigError("partition covers " + std::to_string(part.n_nodes()) +
                      " nodes, dataset has " + std::to_string(data.n_nodes()));
  const auto shards = build_shards(data.network, part, data.y, data.x, opts.threads);
  return run_pipeline(shards, part, opts);
}

}  // namespace dsar::cluster
