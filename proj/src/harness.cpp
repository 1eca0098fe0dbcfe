#include "dsar/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>
#include <sstream>

#include "dsar/errors.hpp"
#include "dsar/log.hpp"
#include "dsar/parallel.hpp"
#include "dsar/rng.hpp"

#ifndef DSAR_GIT_REVISION
#define DSAR_GIT_REVISION "unknown"
#endif

namespace dsar::harness {

std::string to_string(MethodId m) {
  switch (m) {
    case MethodId::global: return "global";
    case MethodId::os: return "os";
    case MethodId::wlse: return "wlse";
    case MethodId::twlse: return "twlse";
  }
  return "?";
}

MethodId parse_method_id(const std::string& s) {
  if (s == "global") return MethodId::global;
  if (s == "os") return MethodId::os;
  if (s == "wlse") return MethodId::wlse;
  if (s == "twlse") return MethodId::twlse;
  throw ConfigError("unknown method '" + s + "' (expected global, os, wlse or twlse)");
}

// --- config -------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("setting '" + key + "': '" + v + "' is not a number");
  }
}

long long to_int(const std::string& key, const std::string& v) {
  const double d = to_double(key, v);
  if (d != std::floor(d)) throw ConfigError("setting '" + key + "': '" + v + "' is not an integer");
  return static_cast<long long>(d);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("setting '" + key + "': '" + v + "' is not true/false");
}

/// "c/N", "N^e" or a plain number, evaluated at n.
double scaled_value(const std::string& key, const std::string& v, Index n) {
  const double nn = static_cast<double>(n);
  if (v.size() > 2 && v.compare(v.size() - 2, 2, "/N") == 0)
    return to_double(key, trim(v.substr(0, v.size() - 2))) / nn;
  if (v.rfind("N^", 0) == 0) return std::pow(nn, to_double(key, trim(v.substr(2))));
  return to_double(key, v);
}

void resolve(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  const Index n = cfg.network.n_nodes;
  if (key == "network.p_in") cfg.network.sbm_p_in = std::min(1.0, scaled_value(key, value, n));
  if (key == "network.p_out") cfg.network.sbm_p_out = std::min(1.0, scaled_value(key, value, n));
  if (key == "noise.gamma") cfg.model.noise.gamma = scaled_value(key, value, n);
}

}  // namespace

bool ExperimentConfig::has(MethodId m) const {
  return std::find(methods.begin(), methods.end(), m) != methods.end();
}

void ExperimentConfig::validate() const {
  network.validate();
  if (replicates < 1) throw ConfigError("replicates must be at least 1");
  if (k_workers < 1) throw ConfigError("workers must be at least 1");
  if (k_workers > network.n_nodes) throw ConfigError("more workers than nodes");
  if (methods.empty()) throw ConfigError("no methods configured");
  if (p() < 1) throw ConfigError("model.beta must have at least one entry");
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("level must lie in (0, 1)");
  if (model.noise.kind == synth::NoiseKind::heteroscedastic &&
      !(var_low >= 0.0 && var_low <= var_high))
    throw ConfigError("need 0 <= noise.var_low <= noise.var_high");
  if (model.noise.kind == synth::NoiseKind::sparse_correlated && 2 * noise_pairs > network.n_nodes)
    throw ConfigError("too many correlated pairs for the node count");
  if (model.noise.kind != synth::NoiseKind::heteroscedastic &&
      model.noise.kind != synth::NoiseKind::sparse_correlated)
    model.noise.validate(network.n_nodes);
  solver.validate();
}

void apply_setting(ExperimentConfig& cfg, const std::string& key_in, const std::string& value_in) {
  const std::string key = trim(key_in), v = trim(value_in);
  auto& net = cfg.network;
  auto& noise = cfg.model.noise;
  if (key == "network.kind") {
    if (v == "sbm") net.kind = synth::NetworkKind::sbm;
    else if (v == "powerlaw") net.kind = synth::NetworkKind::powerlaw;
    else throw ConfigError("network.kind must be sbm or powerlaw");
  } else if (key == "network.n") {
    // SBM probabilities are held as c/N: changing N keeps the mean degree.
    const Index n = to_int(key, v);
    if (n < 2) throw ConfigError("network.n must be at least 2");
    const double scale = static_cast<double>(net.n_nodes) / static_cast<double>(n);
    net.sbm_p_in = std::min(1.0, net.sbm_p_in * scale);
    net.sbm_p_out = std::min(1.0, net.sbm_p_out * scale);
    net.n_nodes = n;
  } else if (key == "network.blocks") {
    net.sbm_blocks = static_cast<int>(to_int(key, v));
  } else if (key == "network.p_in" || key == "network.p_out" || key == "noise.gamma") {
    resolve(cfg, key, v);
  } else if (key == "network.alpha") {
    net.pl_alpha = to_double(key, v);
  } else if (key == "network.ensure_min_outdegree") {
    net.ensure_min_outdegree = to_bool(key, v);
  } else if (key == "model.rho") {
    cfg.model.theta0.rho = to_double(key, v);
  } else if (key == "model.beta") {
    const auto items = split_list(v);
    cfg.model.theta0.beta.resize(static_cast<Index>(items.size()));
    for (std::size_t j = 0; j < items.size(); ++j)
      cfg.model.theta0.beta[static_cast<Index>(j)] = to_double(key, items[j]);
  } else if (key == "noise.kind") {
    if (v == "gaussian") noise.kind = synth::NoiseKind::iid_gaussian;
    else if (v == "student_t") noise.kind = synth::NoiseKind::iid_student_t;
    else if (v == "equicorrelated") noise.kind = synth::NoiseKind::equicorrelated;
    else if (v == "heteroscedastic") noise.kind = synth::NoiseKind::heteroscedastic;
    else if (v == "sparse_correlated") noise.kind = synth::NoiseKind::sparse_correlated;
    else throw ConfigError("unknown noise.kind '" + v + "'");
  } else if (key == "noise.sigma") {
    noise.sigma = to_double(key, v);
  } else if (key == "noise.dof") {
    noise.t_dof = to_double(key, v);
  } else if (key == "noise.var_low") {
    cfg.var_low = to_double(key, v);
  } else if (key == "noise.var_high") {
    cfg.var_high = to_double(key, v);
  } else if (key == "noise.pairs") {
    cfg.noise_pairs = to_int(key, v);
  } else if (key == "noise.pair_cov") {
    cfg.pair_cov = to_double(key, v);
  } else if (key == "workers") {
    cfg.k_workers = static_cast<int>(to_int(key, v));
  } else if (key == "methods") {
    cfg.methods.clear();
    for (const auto& m : split_list(v)) cfg.methods.push_back(parse_method_id(m));
  } else if (key == "replicates") {
    cfg.replicates = static_cast<int>(to_int(key, v));
  } else if (key == "seed") {
    cfg.seed = static_cast<std::uint64_t>(to_int(key, v));
  } else if (key == "inference") {
    cfg.inference = cluster::parse_inference(v);
  } else if (key == "proj.dim") {
    cfg.proj_dim = to_int(key, v);
  } else if (key == "proj.sparse") {
    if (v == "auto") cfg.proj_sparse.reset();
    else cfg.proj_sparse = to_bool(key, v);
  } else if (key == "level") {
    cfg.level = to_double(key, v);
  } else if (key == "cross_sign") {
    if (v == "derived") cfg.cross_sign = infer::CrossTermSign::derived;
    else if (v == "printed") cfg.cross_sign = infer::CrossTermSign::printed;
    else throw ConfigError("cross_sign must be derived or printed");
  } else if (key == "solver.max_iter") {
    cfg.solver.max_iter = static_cast<int>(to_int(key, v));
  } else if (key == "solver.grad_tol") {
    cfg.solver.grad_tol = to_double(key, v);
  } else if (key == "solver.rho_min") {
    cfg.solver.rho_min = to_double(key, v);
  } else if (key == "solver.rho_max") {
    cfg.solver.rho_max = to_double(key, v);
  } else if (key == "solver.multistart") {
    cfg.solver.multistart = static_cast<int>(to_int(key, v));
  } else if (key == "threads") {
    cfg.threads = static_cast<unsigned>(to_int(key, v));
  } else if (key == "fail_fast") {
    cfg.fail_fast = to_bool(key, v);
  } else if (key == "out") {
    cfg.out = v;
  } else {
    throw ConfigError("unknown setting '" + key + "'");
  }
}

ExperimentConfig parse_config(std::istream& in, ExperimentConfig cfg) {
  // network.n is applied first so that "c/N" values resolve against it
  // regardless of line order.
  std::vector<std::pair<std::string, std::string>> settings;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    settings.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  std::stable_partition(settings.begin(), settings.end(),
                        [](const auto& kv) { return kv.first == "network.n"; });
  for (const auto& [k, v] : settings) apply_setting(cfg, k, v);
  return cfg;
}

ExperimentConfig load_config(const std::string& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  return parse_config(in, std::move(base));
}

std::string ExperimentConfig::to_text() const {
  std::ostringstream o;
  o << std::setprecision(17);
  auto noise_name = [&] {
    switch (model.noise.kind) {
      case synth::NoiseKind::iid_gaussian: return "gaussian";
      case synth::NoiseKind::iid_student_t: return "student_t";
      case synth::NoiseKind::equicorrelated: return "equicorrelated";
      case synth::NoiseKind::heteroscedastic: return "heteroscedastic";
      case synth::NoiseKind::sparse_correlated: return "sparse_correlated";
    }
    return "gaussian";
  };
  o << "network.kind = " << (network.kind == synth::NetworkKind::sbm ? "sbm" : "powerlaw") << '\n'
    << "network.n = " << network.n_nodes << '\n'
    << "network.blocks = " << network.sbm_blocks << '\n'
    << "network.p_in = " << network.sbm_p_in << '\n'
    << "network.p_out = " << network.sbm_p_out << '\n'
    << "network.alpha = " << network.pl_alpha << '\n'
    << "network.ensure_min_outdegree = " << (network.ensure_min_outdegree ? "true" : "false") << '\n'
    << "model.rho = " << model.theta0.rho << '\n'
    << "model.beta = ";
  for (Index j = 0; j < p(); ++j) o << (j ? "," : "") << model.theta0.beta[j];
  o << '\n'
    << "noise.kind = " << noise_name() << '\n'
    << "noise.sigma = " << model.noise.sigma << '\n'
    << "noise.dof = " << model.noise.t_dof << '\n'
    << "noise.gamma = " << model.noise.gamma << '\n'
    << "noise.var_low = " << var_low << '\n'
    << "noise.var_high = " << var_high << '\n'
    << "noise.pairs = " << noise_pairs << '\n'
    << "noise.pair_cov = " << pair_cov << '\n'
    << "workers = " << k_workers << '\n'
    << "methods = ";
  for (std::size_t i = 0; i < methods.size(); ++i) o << (i ? "," : "") << to_string(methods[i]);
  o << '\n'
    << "replicates = " << replicates << '\n'
    << "seed = " << seed << '\n'
    << "inference = " << cluster::to_string(inference) << '\n'
    << "proj.dim = " << proj_dim << '\n'
    << "proj.sparse = " << (proj_sparse ? (*proj_sparse ? "true" : "false") : "auto") << '\n'
    << "level = " << level << '\n'
    << "cross_sign = " << (cross_sign == infer::CrossTermSign::derived ? "derived" : "printed") << '\n'
    << "solver.max_iter = " << solver.max_iter << '\n'
    << "solver.grad_tol = " << solver.grad_tol << '\n'
    << "solver.rho_min = " << solver.rho_min << '\n'
    << "solver.rho_max = " << solver.rho_max << '\n'
    << "solver.multistart = " << solver.multistart << '\n'
    << "threads = " << threads << '\n'
    << "fail_fast = " << (fail_fast ? "true" : "false") << '\n';
  if (!out.empty()) o << "out = " << out << '\n';
  return o.str();
}

// --- replicates -----------------------------------------------------------------

namespace {

std::uint64_t replicate_seed(const ExperimentConfig& cfg, int r) {
  return derive_seed(derive_seed(cfg.seed, Stream::replicate), static_cast<std::uint64_t>(r));
}

constexpr std::uint64_t kNoiseParamStream = 101;

synth::TrueModel replicate_model(const ExperimentConfig& cfg, std::uint64_t rseed) {
  auto model = cfg.model;
  const Index n = cfg.network.n_nodes;
  auto rng = make_engine(derive_seed(rseed, kNoiseParamStream));
  if (model.noise.kind == synth::NoiseKind::heteroscedastic) {
    std::uniform_real_distribution<double> u(cfg.var_low, cfg.var_high);
    model.noise.variances.resize(n);
    for (Index i = 0; i < n; ++i) model.noise.variances[i] = u(rng);
  } else if (model.noise.kind == synth::NoiseKind::sparse_correlated) {
    std::vector<NodeId> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    model.noise.sparse_pairs.clear();
    for (Index q = 0; q < cfg.noise_pairs; ++q)
      model.noise.sparse_pairs.push_back({perm[static_cast<std::size_t>(2 * q)],
                                          perm[static_cast<std::size_t>(2 * q + 1)], cfg.pair_cov});
  }
  return model;
}

Eigen::VectorXd se_of(const infer::SandwichCovariance& c) {
  return c.covariance.diagonal().cwiseSqrt();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

Dataset replicate_dataset(const ExperimentConfig& cfg, int r) {
  const auto rseed = replicate_seed(cfg, r);
  return synth::make_dataset(cfg.network, cfg.p(), replicate_model(cfg, rseed), rseed);
}

cluster::AggregateEstimate fit_global(const Dataset& data, const lse::SolverOptions& solver) {
  const auto part = partition_uniform(data.n_nodes(), 1, 0);
  cluster::PipelineOptions o;
  o.method = cluster::Method::wlse;
  o.solver = solver;
  o.threads = 1;
  return cluster::run_pipeline(data, part, o).estimate;
}

ReplicateResult run_replicate(const ExperimentConfig& cfg, const Dataset& data, int r,
                              unsigned worker_threads) {
  ReplicateResult res;
  res.index = r;
  res.seed = replicate_seed(cfg, r);
  const Index n = data.n_nodes();
  try {
    if (cfg.has(MethodId::global)) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto g = fit_global(data, cfg.solver);
      res.outcomes[MethodId::global] = {g.theta, std::nullopt, 0, 0, seconds_since(t0)};
    }
    const bool any_dist =
        cfg.has(MethodId::os) || cfg.has(MethodId::wlse) || cfg.has(MethodId::twlse);
    if (!any_dist) return res;

    // One pipeline run provides every distributed method: os and wlse are
    // the first round of twlse.
    cluster::PipelineOptions o;
    o.method = cfg.has(MethodId::twlse)  ? cluster::Method::twlse
               : cfg.has(MethodId::wlse) ? cluster::Method::wlse
                                         : cluster::Method::os;
    o.solver = cfg.solver;
    o.inference = o.method == cluster::Method::os ? cluster::InferenceChoice::none : cfg.inference;
    o.proj_dim = cfg.proj_dim;
    o.proj_seed = derive_seed(res.seed, Stream::projection);
    o.proj_sparse = cfg.proj_sparse;
    o.cross_sign = cfg.cross_sign;
    o.level = cfg.level;
    o.threads = worker_threads;
    const auto part = partition_uniform(n, cfg.k_workers, derive_seed(res.seed, Stream::partition));
    const auto pr = cluster::run_pipeline(data, part, o);
    const bool inferred = pr.covariance.has_value();

    if (cfg.has(MethodId::os)) {
      std::size_t bytes = 0;
      for (auto s : pr.summaries) {
        s.hessian_at_opt.resize(0, 0);
        bytes += lse::serialize(s).size();
      }
      res.outcomes[MethodId::os] = {cluster::aggregate_os(pr.summaries).theta, std::nullopt,
                                    bytes, 1, pr.seconds_round1};
    }
    if (cfg.has(MethodId::twlse)) {
      MethodOutcome m{pr.estimate.theta, std::nullopt, pr.estimate.total_bytes, 2,
                      pr.seconds_round1 + pr.seconds_round2};
      if (inferred) m.se = se_of(*pr.covariance);
      res.outcomes[MethodId::twlse] = m;
    }
    if (cfg.has(MethodId::wlse)) {
      const auto& first = o.method == cluster::Method::twlse ? *pr.first_pass : pr.estimate;
      MethodOutcome m{first.theta, std::nullopt, first.total_bytes, 1, pr.seconds_round1};
      if (inferred) {
        // A wlse run with inference sends the same broadcast and packs.
        m.bytes = pr.log.bytes_of(cluster::PayloadKind::local_summary) +
                  pr.log.bytes_of(cluster::PayloadKind::broadcast_theta) +
                  pr.log.bytes_of(cluster::PayloadKind::inference_pack);
        m.rounds = 2;
        m.seconds += pr.seconds_round2;
        try {
          m.se = se_of(infer::sandwich(pr.sigma1_hat, first.sigma2_hat, n, pr.covariance->mode,
                                       cfg.solver.max_condition));
        } catch (const InferenceError& e) {
          log::warn("replicate " + std::to_string(r) + ": no wlse standard errors: " + e.what());
        }
      }
      res.outcomes[MethodId::wlse] = m;
    }
  } catch (const std::exception& e) {
    if (cfg.fail_fast) throw;
    res.failed = true;
    res.error = e.what();
    res.outcomes.clear();
  }
  return res;
}

// --- metrics --------------------------------------------------------------------

const ParameterMetrics& MetricsTable::at(MethodId m, const std::string& parameter) const {
  for (const auto& p : parameters)
    if (p.method == m && p.parameter == parameter) return p;
  throw ConfigError("no metrics for " + to_string(m) + "/" + parameter);
}

MetricsTable summarize(const ExperimentConfig& cfg, std::vector<ReplicateResult> results) {
  std::sort(results.begin(), results.end(),
            [](const auto& a, const auto& b) { return a.index < b.index; });
  MetricsTable t;
  t.replicates = static_cast<int>(results.size());
  for (const auto& r : results)
    if (r.failed) {
      ++t.failures;
      t.failure_messages.push_back("replicate " + std::to_string(r.index) + ": " + r.error);
    }
  const Eigen::VectorXd theta0 = cfg.model.theta0.to_vector();
  const double z = infer::normal_quantile(0.5 + cfg.level / 2.0);
  std::vector<MethodId> order;
  for (MethodId m : {MethodId::global, MethodId::os, MethodId::wlse, MethodId::twlse})
    if (cfg.has(m)) order.push_back(m);

  for (MethodId m : order) {
    MethodMetrics mm;
    mm.method = m;
    for (const auto& r : results) {
      const auto it = r.outcomes.find(m);
      if (it == r.outcomes.end()) continue;
      ++mm.n_ok;
      mm.rounds = it->second.rounds;
      mm.mean_bytes += static_cast<double>(it->second.bytes);
      mm.mean_seconds += it->second.seconds;
    }
    if (mm.n_ok > 0) {
      mm.mean_bytes /= mm.n_ok;
      mm.mean_seconds /= mm.n_ok;
    }
    t.methods.push_back(mm);

    for (Index j = 0; j < theta0.size(); ++j) {
      ParameterMetrics pm;
      pm.method = m;
      pm.parameter = Theta::parameter_name(j);
      pm.true_value = theta0[j];
      double sum = 0.0, sq_err = 0.0, se_sum = 0.0;
      int n_se = 0, covered = 0;
      std::vector<double> values;
      for (const auto& r : results) {
        const auto it = r.outcomes.find(m);
        if (it == r.outcomes.end()) continue;
        const double v = it->second.theta.to_vector()[j];
        values.push_back(v);
        sum += v;
        sq_err += (v - theta0[j]) * (v - theta0[j]);
        if (it->second.se) {
          const double se = (*it->second.se)[j];
          ++n_se;
          se_sum += se;
          covered += std::abs(v - theta0[j]) <= z * se;
        }
      }
      pm.n = static_cast<int>(values.size());
      if (pm.n > 0) {
        pm.mean = sum / pm.n;
        pm.rmse = std::sqrt(sq_err / pm.n);
        double ss = 0.0;
        for (double v : values) ss += (v - pm.mean) * (v - pm.mean);
        pm.sd = pm.n > 1 ? std::sqrt(ss / (pm.n - 1)) : 0.0;
      }
      if (n_se > 0) {
        pm.mean_se = se_sum / n_se;
        pm.cp = static_cast<double>(covered) / n_se;
      }
      t.parameters.push_back(pm);
    }
  }
  if (cfg.has(MethodId::global)) {
    for (auto& pm : t.parameters) {
      const auto& g = t.at(MethodId::global, pm.parameter);
      pm.ree = pm.rmse > 0.0 ? g.rmse / pm.rmse : (g.rmse == 0.0 ? 1.0 : std::nan(""));
    }
  }
  return t;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentResult out;
  out.replicates.resize(static_cast<std::size_t>(cfg.replicates));
  const unsigned threads = cfg.threads == 0 ? default_thread_count() : cfg.threads;
  // With several replicates in flight each pipeline runs its workers inline.
  const unsigned inner = threads > 1 ? 1u : 0u;
  parallel_for(out.replicates.size(), threads, [&](std::size_t r) {
    const int ri = static_cast<int>(r);
    ReplicateResult res;
    try {
      res = run_replicate(cfg, replicate_dataset(cfg, ri), ri, inner);
    } catch (const std::exception& e) {
      if (cfg.fail_fast) throw;
      res.index = ri;
      res.failed = true;
      res.error = e.what();
    }
    out.replicates[r] = std::move(res);
  });
  out.metrics = summarize(cfg, out.replicates);
  if (out.metrics.failures > 0)
    log::warn(std::to_string(out.metrics.failures) + " of " + std::to_string(cfg.replicates) +
              " replicates failed and were excluded");
  return out;
}

// --- output ---------------------------------------------------------------------

namespace {

std::string num(double v, int prec = 6) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

}  // namespace

void write_metrics_csv(std::ostream& out, const MetricsTable& t) {
  out << "method,parameter,true_value,mean,sd,rmse,ree,mean_se,cp,n\n";
  for (const auto& p : t.parameters)
    out << to_string(p.method) << ',' << p.parameter << ',' << num(p.true_value, 10) << ','
        << num(p.mean, 10) << ',' << num(p.sd) << ',' << num(p.rmse) << ',' << num(p.ree) << ','
        << num(p.mean_se) << ',' << num(p.cp) << ',' << p.n << '\n';
}

void write_method_csv(std::ostream& out, const MetricsTable& t) {
  out << "method,rounds,mean_bytes,mean_seconds,n_ok\n";
  for (const auto& m : t.methods)
    out << to_string(m.method) << ',' << m.rounds << ',' << num(m.mean_bytes, 10) << ','
        << num(m.mean_seconds) << ',' << m.n_ok << '\n';
}

void write_replicates_csv(std::ostream& out, const std::vector<ReplicateResult>& reps) {
  out << "replicate,seed,method,parameter,estimate,se,bytes,failed\n";
  for (const auto& r : reps) {
    if (r.failed) {
      out << r.index << ',' << r.seed << ",,,,,,1\n";
      continue;
    }
    for (const auto& [m, o] : r.outcomes) {
      const Eigen::VectorXd v = o.theta.to_vector();
      for (Index j = 0; j < v.size(); ++j)
        out << r.index << ',' << r.seed << ',' << to_string(m) << ',' << Theta::parameter_name(j)
            << ',' << num(v[j], 17) << ',' << (o.se ? num((*o.se)[j], 10) : "") << ','
            << o.bytes << ",0\n";
    }
  }
}

void print_table(std::ostream& out, const MetricsTable& t) {
  char line[160];
  std::snprintf(line, sizeof line, "%-7s %-6s %10s %10s %10s %8s %7s\n", "method", "param",
                "mean", "rmse", "mean_se", "ree", "cp");
  out << line;
  auto cell = [](double v, const char* fmt) {
    char b[32];
    if (std::isnan(v)) return std::string("-");
    std::snprintf(b, sizeof b, fmt, v);
    return std::string(b);
  };
  for (const auto& p : t.parameters) {
    std::snprintf(line, sizeof line, "%-7s %-6s %10s %10s %10s %8s %7s\n",
                  to_string(p.method).c_str(), p.parameter.c_str(), cell(p.mean, "%.4f").c_str(),
                  cell(p.rmse, "%.5f").c_str(), cell(p.mean_se, "%.5f").c_str(),
                  cell(p.ree, "%.3f").c_str(), cell(p.cp, "%.3f").c_str());
    out << line;
  }
  out << '\n';
  std::snprintf(line, sizeof line, "%-7s %6s %14s %12s\n", "method", "rounds", "bytes", "seconds");
  out << line;
  for (const auto& m : t.methods) {
    std::snprintf(line, sizeof line, "%-7s %6d %14.0f %12.4f\n", to_string(m.method).c_str(),
                  m.rounds, m.mean_bytes, m.mean_seconds);
    out << line;
  }
  if (t.failures > 0) out << t.failures << " replicate(s) failed\n";
}

std::string run_metadata_json(const ExperimentConfig& cfg, const MetricsTable& t) {
  nlohmann::json j;
  nlohmann::json conf = nlohmann::json::object();
  std::istringstream in(cfg.to_text());
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) conf[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  j["config"] = conf;
  j["base_seed"] = cfg.seed;
  std::vector<std::uint64_t> seeds;
  for (int r = 0; r < cfg.replicates; ++r) seeds.push_back(replicate_seed(cfg, r));
  j["replicate_seeds"] = seeds;
  j["revision"] = DSAR_GIT_REVISION;
  j["replicates"] = t.replicates;
  j["failures"] = t.failures;
  j["failure_messages"] = t.failure_messages;
  return j.dump(2);
}

void write_experiment(const std::string& dir, const ExperimentConfig& cfg,
                      const ExperimentResult& r) {
  std::filesystem::create_directories(dir);
  auto open = [&](const std::string& name) {
    std::ofstream f(std::filesystem::path(dir) / name);
    if (!f) throw IoError("cannot write " + (std::filesystem::path(dir) / name).string());
    return f;
  };
  {
    auto f = open("metrics.csv");
    write_metrics_csv(f, r.metrics);
  }
  {
    auto f = open("methods.csv");
    write_method_csv(f, r.metrics);
  }
  {
    auto f = open("replicates.csv");
    write_replicates_csv(f, r.replicates);
  }
  {
    auto f = open("run.json");
    f << run_metadata_json(cfg, r.metrics) << '\n';
  }
}

// --- real data and timing ----------------------------------------------------------

RealDataResult estimate_real(const std::string& edge_path, const std::string& csv_path,
                             const RealDataOptions& opts) {
  RealDataResult out;
  out.data = load_dataset(edge_path, csv_path, opts.csv);
  if (opts.standardize) standardize(out.data);
  if (opts.k_workers < 1 || opts.k_workers > out.data.n_nodes())
    throw ConfigError("workers must lie in [1, N]");
  out.partition = partition_uniform(out.data.n_nodes(), opts.k_workers, opts.seed);
  out.pipeline = cluster::run_pipeline(out.data, out.partition, opts.pipeline);
  return out;
}

std::vector<TimingRow> timing_report(const ExperimentConfig& cfg_in,
                                     const std::vector<Index>& n_values) {
  std::vector<TimingRow> rows;
  for (Index n : n_values) {
    ExperimentConfig cfg = cfg_in;
    // Keep the expected degree fixed when N changes.
    const double scale = static_cast<double>(cfg.network.n_nodes) / static_cast<double>(n);
    cfg.network.sbm_p_in = std::min(1.0, cfg.network.sbm_p_in * scale);
    cfg.network.sbm_p_out = std::min(1.0, cfg.network.sbm_p_out * scale);
    cfg.network.n_nodes = n;
    cfg.validate();
    const auto data = replicate_dataset(cfg, 0);
    for (MethodId m : cfg.methods) {
      const auto t0 = std::chrono::steady_clock::now();
      if (m == MethodId::global) {
        fit_global(data, cfg.solver);
      } else {
        cluster::PipelineOptions o;
        o.method = m == MethodId::os     ? cluster::Method::os
                   : m == MethodId::wlse ? cluster::Method::wlse
                                         : cluster::Method::twlse;
        o.solver = cfg.solver;
        o.threads = cfg.threads;
        cluster::run_pipeline(data, partition_uniform(n, cfg.k_workers, cfg.seed), o);
      }
      rows.push_back({n, m, seconds_since(t0)});
    }
  }
  return rows;
}

void write_timing_csv(std::ostream& out, const std::vector<TimingRow>& rows) {
  out << "n_nodes,method,seconds\n";
  for (const auto& r : rows) out << r.n_nodes << ',' << to_string(r.method) << ',' << num(r.seconds) << '\n';
}

}  // namespace dsar::harness
