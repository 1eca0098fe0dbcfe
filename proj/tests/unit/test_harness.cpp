#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "dsar/errors.hpp"
#include "dsar/harness.hpp"
#include "helpers.hpp"

using namespace dsar;
using namespace dsar::harness;
using testing_support::QuietLog;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig c;
  std::istringstream in(
      "network.n = 400\n"
      "workers = 4\n"
      "replicates = 4\n"
      "seed = 11\n"
      "threads = 1\n");
  return parse_config(in, c);
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("dsar_test_" + name);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("config parsing resolves c/N against network.n in any order") {
  std::istringstream in(
      "# comment line\n"
      "network.p_in = 30/N   # trailing comment\n"
      "network.n = 1000\n"
      "noise.kind = equicorrelated\n"
      "noise.gamma = N^-0.6\n"
      "model.beta = 1, 2\n"
      "methods = global,twlse\n"
      "proj.sparse = true\n");
  const auto c = parse_config(in);
  CHECK(c.network.n_nodes == 1000);
  CHECK(c.network.sbm_p_in == doctest::Approx(0.03));
  CHECK(c.network.sbm_p_out == doctest::Approx(2.0 / 1000));  // default 2/N kept
  CHECK(c.model.noise.gamma == doctest::Approx(std::pow(1000.0, -0.6)));
  CHECK(c.p() == 2);
  CHECK(c.methods.size() == 2);
  CHECK(c.has(MethodId::twlse));
  CHECK_FALSE(c.has(MethodId::os));
  CHECK(*c.proj_sparse);
}

TEST_CASE("config text echo parses back to the same config") {
  auto c = small_config();
  c.level = 0.9;
  c.cross_sign = infer::CrossTermSign::printed;
  c.inference = cluster::InferenceChoice::exact;
  std::istringstream in(c.to_text());
  const auto back = parse_config(in);
  CHECK(back.to_text() == c.to_text());
}

TEST_CASE("bad config values are rejected") {
  ExperimentConfig c;
  CHECK_THROWS_AS(apply_setting(c, "workers", "two"), ConfigError);
  CHECK_THROWS_AS(apply_setting(c, "no.such.key", "1"), ConfigError);
  CHECK_THROWS_AS(apply_setting(c, "methods", "global,mle"), ConfigError);
  std::istringstream in("replicates\n");
  CHECK_THROWS_AS(parse_config(in), ConfigError);
  c.replicates = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/dsar.conf"), IoError);
}

TEST_CASE("R = 1 with the global method only gives ree = 1") {
  QuietLog quiet;
  auto c = small_config();
  c.replicates = 1;
  c.methods = {MethodId::global};
  const auto r = run_experiment(c);
  REQUIRE(r.metrics.parameters.size() == 6);
  for (const auto& p : r.metrics.parameters) {
    CHECK(p.ree == 1.0);
    CHECK(std::isnan(p.cp));
  }
}

TEST_CASE("fit_global equals fit_local on the all-nodes shard") {
  QuietLog quiet;
  const auto data = replicate_dataset(small_config(), 0);
  const auto part = partition_uniform(data.n_nodes(), 1, 0);
  const auto local = lse::fit_local(build_shard(data.network, part, data.y, data.x, 0));
  const auto g = fit_global(data);
  CHECK((g.theta.to_vector() - local.theta_hat.to_vector()).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("experiments are deterministic across thread counts and replicate order") {
  QuietLog quiet;
  auto c = small_config();
  const auto a = run_experiment(c);
  c.threads = 3;
  const auto b = run_experiment(c);
  std::ostringstream ca, cb;
  write_metrics_csv(ca, a.metrics);
  write_metrics_csv(cb, b.metrics);
  CHECK(ca.str() == cb.str());

  auto shuffled = a.replicates;
  std::mt19937 g(5);
  std::shuffle(shuffled.begin(), shuffled.end(), g);
  std::ostringstream cs;
  write_metrics_csv(cs, summarize(c, shuffled));
  CHECK(cs.str() == ca.str());

  // Data draws do not depend on which methods run.
  auto only = c;
  only.methods = {MethodId::global};
  CHECK(replicate_dataset(only, 2).y == replicate_dataset(c, 2).y);
}

TEST_CASE("metrics carry coverage for wlse and twlse only") {
  QuietLog quiet;
  const auto r = run_experiment(small_config());
  CHECK(r.metrics.failures == 0);
  CHECK(std::isnan(r.metrics.at(MethodId::os, "rho").cp));
  CHECK(std::isnan(r.metrics.at(MethodId::global, "rho").cp));
  const double cp = r.metrics.at(MethodId::twlse, "rho").cp;
  CHECK(cp >= 0.0);
  CHECK(cp <= 1.0);
  CHECK(r.metrics.at(MethodId::global, "rho").ree == 1.0);
  for (const auto& m : r.metrics.methods) {
    if (m.method == MethodId::os) CHECK(m.rounds == 1);
    if (m.method == MethodId::twlse) CHECK(m.rounds == 2);
  }
  // os sends no Hessians, so it is the cheapest distributed method.
  double os = 0, tw = 0;
  for (const auto& m : r.metrics.methods) {
    if (m.method == MethodId::os) os = m.mean_bytes;
    if (m.method == MethodId::twlse) tw = m.mean_bytes;
  }
  CHECK(os > 0);
  CHECK(os < tw);

  const auto d = scratch_dir("experiment");
  write_experiment(d.string(), small_config(), r);
  for (const char* f : {"metrics.csv", "methods.csv", "replicates.csv", "run.json"})
    CHECK(std::filesystem::exists(d / f));
  std::ifstream js(d / "run.json");
  std::string text((std::istreambuf_iterator<char>(js)), {});
  CHECK(text.find("replicate_seeds") != std::string::npos);
}

TEST_CASE("failing replicates are counted and excluded") {
  QuietLog quiet;
  auto c = small_config();
  c.replicates = 2;
  c.solver.max_iter = 1;
  c.solver.multistart = 0;
  const auto r = run_experiment(c);
  CHECK(r.metrics.failures + r.metrics.at(MethodId::twlse, "rho").n == 2);
  c.fail_fast = true;
  if (r.metrics.failures > 0) CHECK_THROWS(run_experiment(c));
}

TEST_CASE("estimate_real reproduces the in-memory fit after an export") {
  QuietLog quiet;
  auto data = replicate_dataset(small_config(), 1);
  const auto d = scratch_dir("real");
  save_dataset((d / "net").string(), data);

  RealDataOptions o;
  o.k_workers = 4;
  o.seed = 9;
  o.standardize = false;
  o.pipeline.method = cluster::Method::twlse;
  o.pipeline.inference = cluster::InferenceChoice::exact;
  const auto r = estimate_real((d / "net.edges").string(), (d / "net.csv").string(), o);

  const auto mem =
      cluster::run_pipeline(data, partition_uniform(data.n_nodes(), 4, 9), o.pipeline);
  CHECK((r.pipeline.estimate.theta.to_vector() - mem.estimate.theta.to_vector())
            .lpNorm<Eigen::Infinity>() < 1e-10);
  CHECK((r.pipeline.covariance->covariance - mem.covariance->covariance).norm() < 1e-10);
}

TEST_CASE("a hand-made five-node file runs end to end") {
  QuietLog quiet;
  const auto d = scratch_dir("five");
  {
    std::ofstream e(d / "g.edges");
    e << "a b\na c\nb c\nc d\nd e\ne a\nb e\n";
    std::ofstream c(d / "g.csv");
    c << "id,y,x1\n"
         "a,1.2,0.5\n"
         "b,-0.3,1.5\n"
         "c,0.8,-0.2\n"
         "d,2.1,0.9\n"
         "e,-1.0,-1.1\n";
  }
  RealDataOptions o;
  o.pipeline.method = cluster::Method::wlse;
  const auto r = estimate_real((d / "g.edges").string(), (d / "g.csv").string(), o);
  CHECK(r.data.n_nodes() == 5);
  CHECK(r.data.y.mean() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::isfinite(r.pipeline.estimate.theta.rho));

  {
    std::ofstream c(d / "bad.csv");
    c << "id,y,x1\na,1,2\nzz,1,2\n";
  }
  CHECK_THROWS_AS(estimate_real((d / "g.edges").string(), (d / "bad.csv").string(), o), Error);
}

TEST_CASE("timing report covers every method and N") {
  QuietLog quiet;
  auto c = small_config();
  c.k_workers = 1;
  const auto rows = timing_report(c, {200, 400});
  CHECK(rows.size() == 8);
  std::ostringstream out;
  write_timing_csv(out, rows);
  CHECK(out.str().rfind("n_nodes,method,seconds\n200,global,", 0) == 0);
}
