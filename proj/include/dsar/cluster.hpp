#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dsar/data.hpp"
#include "dsar/errors.hpp"
#include "dsar/inference.hpp"
#include "dsar/lse.hpp"
#include "dsar/network.hpp"
#include "dsar/theta.hpp"

namespace dsar::cluster {

enum class Method { os, wlse, twlse };

std::string to_string(Method m);
/// Accepts "os", "wlse", "twlse"; anything else raises ConfigError.
Method parse_method(std::string_view s);

enum class PayloadKind { local_summary, broadcast_theta, refined_summary, inference_pack };

std::string to_string(PayloadKind k);

/// Endpoint id of the master; workers use their worker id.
constexpr int kMaster = -1;

struct Message {
  int from = 0;
  int to = 0;
  int round = 0;
  PayloadKind kind = PayloadKind::local_summary;
  std::size_t payload_bytes = 0;
};

/// Append-only log shared by concurrently running workers.
class MessageLog {
 public:
  MessageLog() = default;
  MessageLog(const MessageLog& other);
  MessageLog& operator=(const MessageLog& other);

  void append(const Message& m);
  /// Messages ordered by (round, worker id, direction, kind).
  std::vector<Message> messages() const;
  std::size_t total_bytes() const;
  std::size_t bytes_of(PayloadKind kind) const;
  std::size_t count(PayloadKind kind) const;
  int rounds() const;

  /// CSV "round,from,to,kind,bytes"; the master appears as "master".
  void write_csv(std::ostream& out) const;

 private:
  mutable std::mutex mutex_;
  std::vector<Message> messages_;
};

struct AggregateEstimate {
  Method method = Method::wlse;
  Theta theta;
  Eigen::MatrixXd sigma2_hat;  ///< Σ α_k Q̈_k; empty for os
  int rounds_used = 0;
  std::size_t total_bytes = 0;
};

/// Plain average of the local estimates.
AggregateEstimate aggregate_os(std::span<const lse::LocalSummary> summaries);

/// {Σ α_k H_k}⁻¹ Σ α_k H_k θ̂_k over the transmitted Hessians.
AggregateEstimate aggregate_wlse(std::span<const lse::LocalSummary> summaries,
                                 std::span<const double> alphas,
                                 double max_condition = 1e12);

/// Second-round worker reply: θ̂_k⁽²⁾ and Q̈_k at the broadcast estimate.
struct RefinedSummary {
  int worker_id = 0;
  Index n_local = 0;
  Theta theta;
  Eigen::MatrixXd hessian;
  bool refit = false;  ///< Newton step was impossible; θ came from fit_local
  std::size_t byte_size = 0;
};

std::vector<std::uint8_t> serialize(const RefinedSummary& r);
RefinedSummary deserialize_refined(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> serialize_theta(const Theta& t);
Theta deserialize_theta(std::span<const std::uint8_t> bytes);

/// Worker side of round two. A Hessian too ill-conditioned for a Newton step
/// falls back to fit_local started at the broadcast value when `refit` is set.
RefinedSummary refine_worker(const WorkerShard& shard, const Theta& broadcast,
                             const lse::SolverOptions& solver, bool refit = true);

/// {Σ α_k H_k(θ̂^w)}⁻¹ Σ α_k H_k(θ̂^w) θ̂_k⁽²⁾.
AggregateEstimate combine_refined(std::span<const RefinedSummary> refined,
                                  std::span<const double> alphas,
                                  double max_condition = 1e12);

/// Broadcast θ̂^w, refine on every worker and recombine. Messages are
/// appended to `log` when one is given.
AggregateEstimate run_twlse(std::span<const WorkerShard> shards,
                            std::span<const double> alphas,
                            const AggregateEstimate& first_pass,
                            const lse::SolverOptions& solver = {},
                            MessageLog* log = nullptr, unsigned threads = 0);

enum class InferenceChoice { none, exact, projected };

std::string to_string(InferenceChoice c);
InferenceChoice parse_inference(std::string_view s);

struct PipelineOptions {
  Method method = Method::twlse;
  lse::SolverOptions solver;
  InferenceChoice inference = InferenceChoice::none;
  Index proj_dim = 0;              ///< 0: ⌊log N⌋ + 1
  std::uint64_t proj_seed = 2024;
  std::optional<bool> proj_sparse; ///< unset: sparse from 10⁵ nodes on
  infer::CrossTermSign cross_sign = infer::CrossTermSign::derived;
  double level = 0.95;
  unsigned threads = 0;            ///< 0: hardware concurrency
  bool refit_on_singular = true;
};

struct PipelineResult {
  AggregateEstimate estimate;
  MessageLog log;
  std::vector<lse::LocalSummary> summaries;
  /// The wlse aggregate a twlse run started from (bytes of round 1 only).
  std::optional<AggregateEstimate> first_pass;
  Eigen::MatrixXd sigma1_hat;  ///< empty without inference
  std::optional<infer::SandwichCovariance> covariance;
  std::optional<infer::VariancePlugins> plugins;
  std::vector<infer::Interval> intervals;
  Index proj_dim = 0;
  double seconds_round1 = 0.0;  ///< local fits and first aggregation
  double seconds_round2 = 0.0;  ///< broadcast, refinement, inference
};

/// A worker failed; carries the worker id and the pipeline stage.
class WorkerFailure : public Error {
 public:
  WorkerFailure(int worker_id, std::string stage, const std::string& cause)
      : Error("worker " + std::to_string(worker_id) + " failed during " + stage + ": " + cause),
        worker_id_(worker_id),
        stage_(std::move(stage)) {}
  int worker_id() const noexcept { return worker_id_; }
  const std::string& stage() const noexcept { return stage_; }

 private:
  int worker_id_;
  std::string stage_;
};

/// Runs local fits, aggregation and, if asked, inference. Inference needs
/// wlse or twlse; it adds one broadcast round to wlse and rides on the
/// second round of twlse. The inference packs and plug-ins are evaluated at
/// the broadcast estimate θ̂^w.
PipelineResult run_pipeline(std::span<const WorkerShard> shards, const Partition& part,
                            const PipelineOptions& opts);
PipelineResult run_pipeline(const Dataset& data, const Partition& part,
                            const PipelineOptions& opts);

}  // namespace dsar::cluster
