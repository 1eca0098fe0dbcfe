#include <cmath>
#include <sstream>

#include "doctest.h"
#include "dsar/data.hpp"
#include "dsar/errors.hpp"
#include "dsar/rng.hpp"
#include "dsar/synth.hpp"
#include "helpers.hpp"
#include "oracle.hpp"

using namespace dsar;
using namespace dsar::synth;
using testing_support::QuietLog;

TEST_CASE("SBM edge densities match the block probabilities") {
  QuietLog quiet;
  NetworkSpec spec;
  spec.n_nodes = 3000;
  spec.sbm_blocks = 10;
  spec.sbm_p_in = 0.02;
  spec.sbm_p_out = 0.002;
  spec.seed = 1;
  const auto net = gen_sbm(spec);
  // Expected out-degree: p_in (N/M - 1) + p_out (N - N/M).
  const double expect = 0.02 * 299.0 + 0.002 * 2700.0;
  const double mean_deg = static_cast<double>(net.n_edges()) / 3000.0;
  // sd of the mean is about √(expect/N) ≈ 0.06.
  CHECK(std::abs(mean_deg - expect) < 0.3);
  CHECK(net.n_edges() == gen_sbm(spec).n_edges());
  spec.seed = 2;
  CHECK(net.n_edges() != gen_sbm(spec).n_edges());
}

TEST_CASE("SBM with p = 1 within blocks and 0 across gives cliques") {
  NetworkSpec spec;
  spec.n_nodes = 30;
  spec.sbm_blocks = 1;
  spec.sbm_p_in = 1.0;
  spec.sbm_p_out = 0.0;
  const auto net = gen_sbm(spec);
  CHECK(net.n_edges() == 30 * 29);
  spec.sbm_p_in = 1.5;
  CHECK_THROWS_AS(gen_sbm(spec), ConfigError);
}

TEST_CASE("sbm_default uses 20 blocks with 20/N and 2/N") {
  const auto s = NetworkSpec::sbm_default(2000, 3);
  CHECK(s.sbm_blocks == 20);
  CHECK(s.sbm_p_in == doctest::Approx(0.01));
  CHECK(s.sbm_p_out == doctest::Approx(0.001));
}

TEST_CASE("power-law in-degrees follow the target law") {
  const auto pmf = powerlaw_pmf(3.0, 999);
  double total = 0.0;
  for (double v : pmf) total += v;
  CHECK(total == doctest::Approx(1.0));
  CHECK(pmf[1] / pmf[0] == doctest::Approx(0.125));

  auto spec = NetworkSpec::powerlaw_default(4000, 5);
  const auto net = gen_powerlaw(spec);
  Eigen::VectorXd indeg = Eigen::VectorXd::Zero(4000);
  const Eigen::MatrixXd dense_count = Eigen::MatrixXd(net.adjacency()).colwise().sum();
  indeg = dense_count.transpose();
  // P(k = 1) = 1/ζ(3) ≈ 0.8319 for the untruncated law.
  const double share1 = (indeg.array() == 1.0).cast<double>().mean();
  CHECK(std::abs(share1 - 0.8319) < 0.025);
  CHECK(indeg.minCoeff() >= 1.0);
  CHECK(net.n_edges() == gen_powerlaw(spec).n_edges());
}

TEST_CASE("ensure_min_outdegree removes zero rows") {
  QuietLog quiet;
  auto spec = NetworkSpec::sbm_default(500, 8);
  spec.sbm_p_in = 0.002;
  spec.sbm_p_out = 0.0;
  CHECK(!gen_sbm(spec).zero_out_degree().empty());
  spec.ensure_min_outdegree = true;
  const auto net = gen_sbm(spec);
  CHECK(net.zero_out_degree().empty());
  for (Index i = 0; i < 500; ++i) CHECK(net.weights().coeff(i, i) == 0.0);
}

TEST_CASE("covariates are standard normal and reproducible") {
  const auto x = gen_covariates(20000, 3, 4);
  CHECK(std::abs(x.mean()) < 0.02);
  CHECK(std::abs(x.array().square().mean() - 1.0) < 0.02);
  CHECK(x == gen_covariates(20000, 3, 4));
  CHECK_THROWS_AS(gen_covariates(10, 0, 1), ConfigError);
}

TEST_CASE("noise kinds have the specified second moments") {
  const Index n = 40000;
  NoiseModel m;
  m.sigma = 2.0;
  auto e = gen_noise(m, n, 1);
  CHECK(e.array().square().mean() == doctest::Approx(4.0).epsilon(0.03));

  m.kind = NoiseKind::iid_student_t;
  m.sigma = 1.0;
  e = gen_noise(m, n, 2);
  CHECK(e.array().square().mean() == doctest::Approx(1.0).epsilon(0.06));

  m.kind = NoiseKind::heteroscedastic;
  m.variances = Eigen::VectorXd::LinSpaced(n, 0.5, 1.5);
  e = gen_noise(m, n, 3);
  CHECK(e.array().square().mean() == doctest::Approx(1.0).epsilon(0.03));
  m.variances.resize(3);
  CHECK_THROWS_AS(gen_noise(m, n, 3), ModelError);
}

TEST_CASE("equicorrelated noise has variance sigma^2 and covariance gamma") {
  NoiseModel m;
  m.kind = NoiseKind::equicorrelated;
  m.sigma = 1.0;
  m.gamma = 0.3;
  const Index n = 4;
  const int reps = 40000;
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(n, n);
  for (int r = 0; r < reps; ++r) {
    const auto e = gen_noise(m, n, static_cast<std::uint64_t>(r));
    acc += e * e.transpose();
  }
  acc /= reps;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) CHECK(std::abs(acc(i, j) - (i == j ? 1.0 : 0.3)) < 0.03);
  m.gamma = 1.0;
  CHECK_THROWS_AS(gen_noise(m, n, 1), ModelError);
}

TEST_CASE("sparse correlated noise reproduces the pair covariances") {
  NoiseModel m;
  m.kind = NoiseKind::sparse_correlated;
  m.sparse_pairs = {{0, 1, 0.5}, {2, 3, -0.4}};
  const int reps = 40000;
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(5, 5);
  for (int r = 0; r < reps; ++r) {
    const auto e = gen_noise(m, 5, 100 + static_cast<std::uint64_t>(r));
    acc += e * e.transpose();
  }
  acc /= reps;
  Eigen::MatrixXd target = Eigen::MatrixXd::Identity(5, 5);
  target(0, 1) = target(1, 0) = 0.5;
  target(2, 3) = target(3, 2) = -0.4;
  CHECK((acc - target).cwiseAbs().maxCoeff() < 0.03);
  m.sparse_pairs = {{0, 0, 0.5}};
  CHECK_THROWS_AS(gen_noise(m, 5, 1), ModelError);
  m.sparse_pairs = {{0, 1, 2.0}};
  CHECK_THROWS_AS(gen_noise(m, 5, 1), ModelError);
}

TEST_CASE("solve_sar matches a dense solve") {
  QuietLog quiet;
  const auto net = testing_support::random_digraph(100, 0.05, 6);
  const Eigen::MatrixXd w = oracle::dense(net.weights());
  const Eigen::VectorXd rhs = Eigen::VectorXd::LinSpaced(100, -1, 1);
  for (double rho : {-0.9, 0.0, 0.4, 0.95}) {
    const Eigen::VectorXd y = solve_sar(net, rho, rhs);
    const Eigen::VectorXd ref = (Eigen::MatrixXd::Identity(100, 100) - rho * w).lu().solve(rhs);
    CHECK((y - ref).lpNorm<Eigen::Infinity>() < 1e-8);
  }
  CHECK_THROWS_AS(solve_sar(net, 1.0, rhs), SolverError);
  CHECK_THROWS_AS(solve_sar(net, 0.99, rhs, 1e-14, 3), SolverError);
}

TEST_CASE("make_dataset draws each component from its own stream") {
  QuietLog quiet;
  const auto model = TrueModel::simulation_default();
  const auto a = make_dataset(NetworkSpec::sbm_default(300), 5, model, 9);
  const auto b = make_dataset(NetworkSpec::sbm_default(300), 5, model, 9);
  CHECK(a.y == b.y);
  CHECK(a.x == b.x);
  CHECK(a.x == gen_covariates(300, 5, derive_seed(9, Stream::covariates)));
  const auto c = make_dataset(NetworkSpec::sbm_default(300), 5, model, 10);
  CHECK(a.y != c.y);
  const Eigen::MatrixXd w = oracle::dense(a.network.weights());
  const Eigen::VectorXd eps = a.y - 0.4 * w * a.y - a.x * model.theta0.beta;
  CHECK((eps - gen_noise(model.noise, 300, derive_seed(9, Stream::noise)))
            .lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("node CSV round trip and ingest validation") {
  QuietLog quiet;
  const auto data = make_dataset(NetworkSpec::sbm_default(50), 2, [] {
    auto m = TrueModel::simulation_default();
    m.theta0.beta = Eigen::Vector2d(1.0, -1.0);
    return m;
  }(), 3);
  std::ostringstream edges, csv;
  write_edge_list(edges, data.network, &data.index);
  write_node_csv(csv, data);
  {
    std::istringstream ein(edges.str()), cin(csv.str());
    const auto back = read_node_csv(cin, read_edge_list(ein));
    CHECK(back.y == data.y);
    CHECK(back.x == data.x);
    CHECK(Eigen::MatrixXd(back.network.weights()) == Eigen::MatrixXd(data.network.weights()));
  }
  auto load = [](const std::string& e, const std::string& c) {
    std::istringstream ein(e), cin(c);
    return read_node_csv(cin, read_edge_list(ein));
  };
  const std::string two = "a b\nb a\n";
  CHECK(load(two, "id,y,x1\na,1,2\nb,3,4\n").y == Eigen::Vector2d(1, 3));
  CHECK(load(two, "x1,y,id\n2,1,a\n4,3,b\n").x == Eigen::Vector2d(2, 4));
  CHECK_THROWS_AS(load(two, "id,y,x1\na,1,2\n"), IoError);
  CHECK_THROWS_AS(load(two, "id,y,x1\na,1,2\nb,3,4\nc,5,6\n"), IoError);
  CHECK_THROWS_AS(load(two, "id,y,x1\na,1,2\na,3,4\n"), IoError);
  CHECK_THROWS_AS(load(two, "id,y,x1\na,1,oops\nb,3,4\n"), IoError);
  CHECK_THROWS_AS(load(two, "id,y,x1\na,1\nb,3,4\n"), IoError);
  CHECK_THROWS_AS(load(two, "node,y,x1\na,1,2\nb,3,4\n"), IoError);
}

TEST_CASE("standardize centers and scales") {
  Dataset d;
  d.y = Eigen::Vector3d(1, 2, 6);
  d.x.resize(3, 2);
  d.x << 1, 5, 2, 5, 3, 5;
  standardize(d);
  CHECK(std::abs(d.y.mean()) < 1e-15);
  CHECK((d.y.array() - d.y.mean()).square().sum() / 2.0 == doctest::Approx(1.0));
  CHECK(d.x.col(0) == Eigen::Vector3d(-1, 0, 1));
  CHECK(d.x.col(1) == Eigen::Vector3d::Zero());
}
