#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dsar/cluster.hpp"
#include "dsar/data.hpp"
#include "dsar/lse.hpp"
#include "dsar/synth.hpp"

namespace dsar::harness {

// Config files are "key = value" lines; '#' starts a comment. Edge
// probabilities accept "c/N" and the equicorrelation accepts "N^e", both
// resolved against network.n. Keys:
//
//   network.kind         sbm | powerlaw
//   network.n            node count
//   network.blocks       SBM block count
//   network.p_in         SBM within-block probability
//   network.p_out        SBM across-block probability
//   network.alpha        power-law exponent
//   network.ensure_min_outdegree   true | false
//   model.rho            ρ₀
//   model.beta           comma-separated β₀ (its length sets p)
//   noise.kind           gaussian | student_t | equicorrelated |
//                        heteroscedastic | sparse_correlated
//   noise.sigma, noise.dof, noise.gamma
//   noise.var_low, noise.var_high   σ_i² ~ U[low, high] per node
//   noise.pairs, noise.pair_cov     random disjoint correlated pairs
//   workers              K
//   methods              comma list of global, os, wlse, twlse
//   replicates           R
//   seed                 base seed
//   inference            none | exact | projected
//   proj.dim             0 for ⌊log N⌋ + 1
//   proj.sparse          auto | true | false
//   level                confidence level
//   cross_sign           derived | printed
//   solver.max_iter, solver.grad_tol, solver.rho_min, solver.rho_max,
//   solver.multistart
//   threads              replicate-level threads (0: all cores)
//   fail_fast            true | false
//   out                  output directory

/// "global" is the single-shard fit, the REE reference.
enum class MethodId { global, os, wlse, twlse };

std::string to_string(MethodId m);
MethodId parse_method_id(const std::string& s);

struct ExperimentConfig {
  synth::NetworkSpec network = synth::NetworkSpec::sbm_default(2000);
  synth::TrueModel model = synth::TrueModel::simulation_default();
  /// Heteroscedastic variance range; the per-node variances are drawn
  /// afresh in every replicate.
  double var_low = 1.0, var_high = 1.0;
  /// Sparse correlated noise: this many disjoint random pairs per replicate.
  Index noise_pairs = 0;
  double pair_cov = 0.0;
  int k_workers = 40;
  std::vector<MethodId> methods{MethodId::global, MethodId::os, MethodId::wlse,
                                MethodId::twlse};
  int replicates = 100;
  std::uint64_t seed = 1;
  cluster::InferenceChoice inference = cluster::InferenceChoice::projected;
  Index proj_dim = 0;
  std::optional<bool> proj_sparse;
  double level = 0.95;
  infer::CrossTermSign cross_sign = infer::CrossTermSign::derived;
  lse::SolverOptions solver;
  unsigned threads = 0;
  bool fail_fast = false;
  std::string out;

  Index p() const { return model.theta0.beta.size(); }
  bool has(MethodId m) const;
  void validate() const;
  /// Echo in the config-file syntax; parse_config reads it back.
  std::string to_text() const;
};

ExperimentConfig parse_config(std::istream& in, ExperimentConfig base = {});
ExperimentConfig load_config(const std::string& path, ExperimentConfig base = {});
/// Applies one "key = value" setting.
void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value);

/// One method's output on one replicate.
struct MethodOutcome {
  Theta theta;
  std::optional<Eigen::VectorXd> se;  ///< absent when no covariance
  std::size_t bytes = 0;
  int rounds = 0;
  double seconds = 0.0;
};

struct ReplicateResult {
  int index = 0;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  std::map<MethodId, MethodOutcome> outcomes;
};

/// Draws replicate r's dataset from the seed derived from (base seed, r).
Dataset replicate_dataset(const ExperimentConfig& cfg, int r);

/// Runs all configured methods on one dataset.
ReplicateResult run_replicate(const ExperimentConfig& cfg, const Dataset& data, int r,
                              unsigned worker_threads = 1);

struct ParameterMetrics {
  MethodId method = MethodId::global;
  std::string parameter;
  double true_value = 0.0;
  double mean = 0.0;
  double sd = 0.0;
  double rmse = 0.0;
  double ree = std::nan("");      ///< rmse_global / rmse; NaN without global
  double mean_se = std::nan("");
  double cp = std::nan("");       ///< NaN where no intervals exist
  int n = 0;
};

struct MethodMetrics {
  MethodId method = MethodId::global;
  int rounds = 0;
  double mean_bytes = 0.0;
  double mean_seconds = 0.0;
  int n_ok = 0;
};

struct MetricsTable {
  std::vector<ParameterMetrics> parameters;
  std::vector<MethodMetrics> methods;
  int replicates = 0;
  int failures = 0;
  std::vector<std::string> failure_messages;

  const ParameterMetrics& at(MethodId m, const std::string& parameter) const;
};

/// Reduces replicate results in replicate order, so the result does not
/// depend on how replicates were scheduled.
MetricsTable summarize(const ExperimentConfig& cfg, std::vector<ReplicateResult> results);

struct ExperimentResult {
  MetricsTable metrics;
  std::vector<ReplicateResult> replicates;
};

ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// The K = 1 pipeline.
cluster::AggregateEstimate fit_global(const Dataset& data, const lse::SolverOptions& solver = {});

void write_metrics_csv(std::ostream& out, const MetricsTable& t);
void write_method_csv(std::ostream& out, const MetricsTable& t);
void write_replicates_csv(std::ostream& out, const std::vector<ReplicateResult>& reps);
/// Aligned plain-text table for terminals.
void print_table(std::ostream& out, const MetricsTable& t);

/// JSON metadata: config echo, seeds, build revision, failure count.
std::string run_metadata_json(const ExperimentConfig& cfg, const MetricsTable& t);

/// Writes metrics.csv, methods.csv, replicates.csv and run.json under dir.
void write_experiment(const std::string& dir, const ExperimentConfig& cfg,
                      const ExperimentResult& r);

struct RealDataOptions {
  CsvOptions csv;
  int k_workers = 1;
  std::uint64_t seed = 1;
  bool standardize = true;
  cluster::PipelineOptions pipeline;
};

struct RealDataResult {
  Dataset data;  ///< after standardization
  Partition partition;
  cluster::PipelineResult pipeline;
};

RealDataResult estimate_real(const std::string& edge_path, const std::string& csv_path,
                             const RealDataOptions& opts);

struct TimingRow {
  Index n_nodes = 0;
  MethodId method = MethodId::global;
  double seconds = 0.0;
};

/// Wall-clock per method per N, every method run as its own pipeline on the
/// same data. Uses cfg for everything except network.n.
std::vector<TimingRow> timing_report(const ExperimentConfig& cfg,
                                     const std::vector<Index>& n_values);
void write_timing_csv(std::ostream& out, const std::vector<TimingRow>& rows);

}  // namespace dsar::harness
