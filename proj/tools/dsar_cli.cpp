// dsar: command-line front end.
//
//   dsar synth  --config f --seed s --out prefix         write one synthetic dataset
//   dsar fit    --edges e --csv c --workers K --method m  point estimates
//   dsar infer  --edges e --csv c ... --infer projected   estimates and intervals
//   dsar bench  --config f --replicates R --out dir       Monte Carlo replication
//   dsar report --config f --sizes 2000,4000 --out t.csv  timing sweep
//
// Every subcommand also takes --set key=value (repeatable) for any config key.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "dsar/cluster.hpp"
#include "dsar/data.hpp"
#include "dsar/errors.hpp"
#include "dsar/harness.hpp"
#include "dsar/log.hpp"

namespace {

using namespace dsar;
using harness::ExperimentConfig;

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> method;
  std::optional<int> replicates;
  std::string out;
  std::string infer = "";
  Index proj_dim = 0;
  std::uint64_t proj_seed = 2024;
  std::optional<bool> proj_sparse;
  bool paper_scale = false;
  bool min_outdegree = false;
  std::optional<unsigned> threads;
  double level = 0.95;
  bool quiet = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "key = value config file")->check(CLI::ExistingFile);
  app->add_option("--set", c.sets, "extra config setting key=value");
  app->add_option("--seed", c.seed, "base seed");
  app->add_option("--workers", c.workers, "number of workers K")->check(CLI::PositiveNumber);
  app->add_option("--out", c.out, "output path");
  app->add_option("--threads", c.threads, "threads (0: all cores)");
  app->add_flag("--paper-scale", c.paper_scale, "R = 500 instead of the desk default");
  app->add_flag("--ensure-min-outdegree", c.min_outdegree,
                "give every node that follows nobody one random followee");
  app->add_flag("-q,--quiet", c.quiet, "only errors on stderr");
}

void add_infer(CLI::App* app, Common& c, const std::string& def) {
  c.infer = def;
  app->add_option("--infer", c.infer, "none | exact | projected")
      ->check(CLI::IsMember({"none", "exact", "projected"}));
  app->add_option("--proj-dim", c.proj_dim, "projection dimension d (0: floor(log N) + 1)");
  app->add_option("--proj-seed", c.proj_seed, "projector seed");
  app->add_option("--proj-sparse", c.proj_sparse, "sparse projectors (default: from N = 1e5)");
  app->add_option("--level", c.level, "confidence level")->check(CLI::Range(0.5, 0.9999));
}

ExperimentConfig build_config(const Common& c) {
  ExperimentConfig cfg;
  if (!c.config.empty()) cfg = harness::load_config(c.config);
  std::ostringstream extra;
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    extra << s << '\n';
  }
  std::istringstream in(extra.str());
  cfg = harness::parse_config(in, cfg);
  if (c.paper_scale) cfg.replicates = 500;
  if (c.seed) cfg.seed = *c.seed;
  if (c.workers) cfg.k_workers = *c.workers;
  if (c.replicates) cfg.replicates = *c.replicates;
  if (c.threads) cfg.threads = *c.threads;
  if (c.min_outdegree) cfg.network.ensure_min_outdegree = true;
  if (!c.infer.empty()) cfg.inference = cluster::parse_inference(c.infer);
  cfg.proj_dim = c.proj_dim;
  if (c.proj_sparse) cfg.proj_sparse = c.proj_sparse;
  cfg.level = c.level;
  if (c.method) {
    cfg.methods.clear();
    std::stringstream ss(*c.method);
    std::string m;
    while (std::getline(ss, m, ',')) cfg.methods.push_back(harness::parse_method_id(m));
  }
  if (!c.out.empty()) cfg.out = c.out;
  return cfg;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write '" + path + "'");
  return f;
}

int cmd_synth(const Common& c) {
  auto cfg = build_config(c);
  cfg.validate();
  const auto data = harness::replicate_dataset(cfg, 0);
  const std::string prefix = c.out.empty() ? "synthetic" : c.out;
  save_dataset(prefix, data);
  std::cout << "wrote " << prefix << ".edges and " << prefix << ".csv (" << data.n_nodes()
            << " nodes, " << data.network.n_edges() << " edges, p = " << data.p() << ")\n";
  return 0;
}

struct RealArgs {
  std::string edges, csv, id = "id", response = "y";
  bool raw = false;
  std::string log_csv;
};

void add_real(CLI::App* app, RealArgs& r) {
  app->add_option("--edges", r.edges, "edge list file")->required()->check(CLI::ExistingFile);
  app->add_option("--csv", r.csv, "node CSV file")->required()->check(CLI::ExistingFile);
  app->add_option("--id-column", r.id, "id column name");
  app->add_option("--response", r.response, "response column name");
  app->add_flag("--no-standardize", r.raw, "keep the columns as read");
  app->add_option("--message-log", r.log_csv, "write the message log CSV here");
}

int cmd_estimate(const Common& c, const RealArgs& r, bool with_inference) {
  harness::RealDataOptions o;
  o.csv.id_column = r.id;
  o.csv.response_column = r.response;
  o.standardize = !r.raw;
  o.k_workers = c.workers.value_or(1);
  o.seed = c.seed.value_or(1);
  o.pipeline.method = cluster::parse_method(c.method.value_or("twlse"));
  o.pipeline.inference = with_inference ? cluster::parse_inference(c.infer)
                                        : cluster::InferenceChoice::none;
  o.pipeline.proj_dim = c.proj_dim;
  o.pipeline.proj_seed = c.proj_seed;
  o.pipeline.proj_sparse = c.proj_sparse;
  o.pipeline.level = c.level;
  o.pipeline.threads = c.threads.value_or(0);
  const auto res = harness::estimate_real(r.edges, r.csv, o);
  const auto& est = res.pipeline.estimate;

  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!c.out.empty()) {
    file = open_out(c.out);
    out = &file;
  }
  if (!res.pipeline.intervals.empty()) {
    infer::write_intervals_csv(*out, res.pipeline.intervals);
  } else {
    *out << "parameter,estimate\n";
    const Eigen::VectorXd v = est.theta.to_vector();
    for (Index j = 0; j < v.size(); ++j) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.10g", v[j]);
      *out << Theta::parameter_name(j) << ',' << buf << '\n';
    }
  }
  if (!r.log_csv.empty()) {
    auto f = open_out(r.log_csv);
    res.pipeline.log.write_csv(f);
  }
  if (!c.quiet)
    std::cerr << "method " << cluster::to_string(est.method) << ", K = " << o.k_workers << ", "
              << est.rounds_used << " round(s), " << est.total_bytes << " bytes\n";
  return 0;
}

int cmd_bench(const Common& c) {
  auto cfg = build_config(c);
  cfg.validate();
  if (!c.quiet)
    std::cerr << "running " << cfg.replicates << " replicates, N = " << cfg.network.n_nodes
              << ", K = " << cfg.k_workers << '\n';
  const auto r = harness::run_experiment(cfg);
  harness::print_table(std::cout, r.metrics);
  if (!cfg.out.empty()) {
    harness::write_experiment(cfg.out, cfg, r);
    if (!c.quiet) std::cerr << "results in " << cfg.out << '\n';
  }
  return r.metrics.failures == cfg.replicates ? 1 : 0;
}

int cmd_report(const Common& c, const std::vector<Index>& sizes) {
  auto cfg = build_config(c);
  const auto rows = harness::timing_report(cfg, sizes);
  if (c.out.empty()) {
    harness::write_timing_csv(std::cout, rows);
  } else {
    auto f = open_out(c.out);
    harness::write_timing_csv(f, rows);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributed estimation and inference for spatial autoregression"};
  app.require_subcommand(1);

  Common synth_c, fit_c, infer_c, bench_c, report_c;
  RealArgs fit_r, infer_r;
  std::vector<Index> sizes{1000, 2000, 4000};

  auto* synth = app.add_subcommand("synth", "write a synthetic dataset (edge list + node CSV)");
  add_common(synth, synth_c);

  auto* fit = app.add_subcommand("fit", "estimate θ on a dataset");
  add_common(fit, fit_c);
  add_real(fit, fit_r);
  fit->add_option("--method", fit_c.method, "os | wlse | twlse")
      ->check(CLI::IsMember({"os", "wlse", "twlse"}));

  auto* inf = app.add_subcommand("infer", "estimate θ with confidence intervals");
  add_common(inf, infer_c);
  add_real(inf, infer_r);
  add_infer(inf, infer_c, "projected");
  inf->add_option("--method", infer_c.method, "wlse | twlse")
      ->check(CLI::IsMember({"wlse", "twlse"}));

  auto* bench = app.add_subcommand("bench", "Monte Carlo replication of the estimators");
  add_common(bench, bench_c);
  add_infer(bench, bench_c, "projected");
  bench->add_option("--replicates", bench_c.replicates, "replicates R")
      ->check(CLI::PositiveNumber);
  bench->add_option("--method", bench_c.method, "comma list of global, os, wlse, twlse");

  auto* report = app.add_subcommand("report", "wall-clock timing sweep over N");
  add_common(report, report_c);
  report->add_option("--sizes", sizes, "node counts")->delimiter(',');
  report->add_option("--method", report_c.method, "comma list of global, os, wlse, twlse");

  CLI11_PARSE(app, argc, argv);

  try {
    for (const Common* c : {&synth_c, &fit_c, &infer_c, &bench_c, &report_c})
      if (c->quiet) dsar::log::set_threshold(dsar::log::Level::error);
    if (synth->parsed()) return cmd_synth(synth_c);
    if (fit->parsed()) return cmd_estimate(fit_c, fit_r, false);
    if (inf->parsed()) return cmd_estimate(infer_c, infer_r, true);
    if (bench->parsed()) return cmd_bench(bench_c);
    if (report->parsed()) return cmd_report(report_c, sizes);
  } catch (const dsar::cluster::WorkerFailure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
