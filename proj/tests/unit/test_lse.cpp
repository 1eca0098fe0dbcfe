#include <cmath>

#include "doctest.h"
#include "dsar/errors.hpp"
#include "dsar/lse.hpp"
#include "dsar/network.hpp"
#include "helpers.hpp"
#include "oracle.hpp"

using namespace dsar;
using testing_support::QuietLog;

namespace {

double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

WorkerShard whole(const Dataset& d) {
  return build_shard(d.network, partition_uniform(d.n_nodes(), 1, 1), d.y, d.x, 0);
}

}  // namespace

TEST_CASE("d_factors match D and its derivative") {
  QuietLog quiet;
  const auto net = testing_support::random_digraph(30, 0.1, 4);
  const Eigen::MatrixXd w = oracle::dense(net.weights());
  for (double rho : {-0.7, 0.0, 0.35, 0.9}) {
    const auto f = lse::d_factors(net.col_sq_sums(), rho);
    const auto m = oracle::ds(w, rho);
    CHECK(max_abs(f.d - m.d.diagonal()) < 1e-15);
    CHECK(max_abs(f.d_dot - m.d_dot.diagonal()) < 1e-15);
    const double h = 1e-6;
    const Eigen::VectorXd fd = (lse::d_factors(net.col_sq_sums(), rho + h).d -
                                lse::d_factors(net.col_sq_sums(), rho - h).d) /
                               (2 * h);
    CHECK(max_abs(fd - f.d_dot) < 1e-8);
  }
}

TEST_CASE("eval_F_global equals the dense definition") {
  QuietLog quiet;
  const auto data = testing_support::small_dataset(80, 0.05, 8, 3);
  const Eigen::MatrixXd w = oracle::dense(data.network.weights());
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto t = testing_support::random_theta(3, s);
    CHECK(max_abs(lse::eval_F_global(data.network, data.y, data.x, t) -
                  oracle::F(w, data.y, data.x, t)) < 1e-12);
  }
  CHECK_THROWS_AS(lse::eval_F_global(data.network, data.y, data.x,
                                     testing_support::random_theta(2, 1)),
                  DimensionError);
}

TEST_CASE("objective value, gradient and Hessian agree with the dense oracle") {
  QuietLog quiet;
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const auto data = testing_support::small_dataset(60, 0.06, seed, 2);
    const Eigen::MatrixXd w = oracle::dense(data.network.weights());
    const auto part = partition_uniform(60, 3, seed);
    const auto shards = build_shards(data.network, part, data.y, data.x, 1);
    const auto t = testing_support::random_theta(2, seed + 50);
    for (const auto& s : shards) {
      const auto ev = lse::eval_objective(s, t, 2);
      CHECK(std::abs(ev.value - oracle::Q(w, data.y, data.x, t, s.local_nodes)) < 1e-12);

      auto q = [&](const Eigen::VectorXd& v) {
        return oracle::Q(w, data.y, data.x, Theta::from_vector(v), s.local_nodes);
      };
      const Eigen::VectorXd g_fd = oracle::fd_gradient(q, t.to_vector());
      CHECK(max_abs(ev.gradient - g_fd) < 1e-6 * (1.0 + max_abs(g_fd)));

      auto grad = [&](const Eigen::VectorXd& v) {
        return lse::eval_objective(s, Theta::from_vector(v), 1).gradient;
      };
      const Eigen::MatrixXd h_fd = oracle::fd_jacobian(grad, t.to_vector(), 1e-5);
      CHECK(max_abs(ev.hessian - h_fd) < 1e-6 * (1.0 + max_abs(h_fd)));
      CHECK(max_abs(ev.hessian - ev.hessian.transpose()) == 0.0);
    }
  }
}

TEST_CASE("lower-order evaluation leaves derivative fields empty") {
  QuietLog quiet;
  const auto data = testing_support::small_dataset(30, 0.1, 2, 2);
  const auto s = whole(data);
  const auto t = testing_support::random_theta(2, 3);
  const auto e0 = lse::eval_objective(s, t, 0);
  CHECK(e0.gradient.size() == 0);
  CHECK(e0.hessian.size() == 0);
  CHECK(lse::eval_objective(s, t, 1).hessian.size() == 0);
  CHECK_THROWS_AS(lse::eval_objective(s, t, 3), ConfigError);
}

TEST_CASE("fit_local reaches a stationary local minimum near the truth") {
  QuietLog quiet;
  const auto data = testing_support::small_dataset(400, 0.02, 17, 3);
  const auto s = whole(data);
  const auto fit = lse::fit_local(s);
  CHECK(fit.grad_norm <= 1e-8);
  CHECK(std::abs(fit.theta_hat.rho - 0.4) < 0.15);
  CHECK(max_abs(fit.theta_hat.beta - Eigen::Vector3d(0.2, 0.4, 0.6)) < 0.25);

  const Eigen::MatrixXd w = oracle::dense(data.network.weights());
  const auto nodes = testing_support::all_nodes(400);
  const double q0 = oracle::Q(w, data.y, data.x, fit.theta_hat, nodes);
  for (Index j = 0; j < 4; ++j)
    for (double h : {-1e-3, 1e-3}) {
      Eigen::VectorXd v = fit.theta_hat.to_vector();
      v[j] += h;
      CHECK(oracle::Q(w, data.y, data.x, Theta::from_vector(v), nodes) >= q0);
    }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(fit.hessian_at_opt);
  CHECK(es.eigenvalues().minCoeff() > 0.0);
  CHECK(fit.n_local == 400);
}

TEST_CASE("fit_local is deterministic and independent of a nearby start") {
  QuietLog quiet;
  const auto data = testing_support::small_dataset(200, 0.03, 5, 2);
  const auto s = whole(data);
  const auto a = lse::fit_local(s);
  const auto b = lse::fit_local(s);
  CHECK(a.theta_hat.to_vector() == b.theta_hat.to_vector());
  Theta near = a.theta_hat;
  near.rho += 0.05;
  const auto c = lse::fit_local(s, near);
  CHECK(max_abs(c.theta_hat.to_vector() - a.theta_hat.to_vector()) < 1e-7);
}

TEST_CASE("NotConverged carries the last iterate") {
  QuietLog quiet;
  const auto data = testing_support::small_dataset(100, 0.05, 9, 2);
  const auto s = whole(data);
  lse::SolverOptions o;
  o.max_iter = 1;
  o.grad_tol = 1e-300;
  o.step_tol = 0.0;
  Theta init{-0.5, Eigen::Vector2d(3.0, -3.0)};
  try {
    lse::fit_local(s, init, o);
    FAIL("expected NotConverged");
  } catch (const lse::NotConverged& e) {
    CHECK(e.last_iterate().beta.size() == 2);
    CHECK(e.last_iterate().to_vector() != init.to_vector());
    CHECK(std::string(e.what()).find("worker 0") != std::string::npos);
  }
  o.max_iter = 0;
  CHECK_THROWS_AS(lse::fit_local(s, o), ConfigError);
}

TEST_CASE("one Newton step from the optimum stays put and rejects singular Hessians") {
  QuietLog quiet;
  const auto data = testing_support::small_dataset(150, 0.04, 21, 2);
  const auto s = whole(data);
  const auto fit = lse::fit_local(s);
  const auto step = lse::one_newton_step(s, fit.theta_hat);
  CHECK(max_abs(step.to_vector() - fit.theta_hat.to_vector()) < 1e-8);

  auto bad = data;
  bad.x.col(1) = bad.x.col(0);
  const auto sb = whole(bad);
  try {
    lse::newton_refine(sb, Theta{0.2, Eigen::Vector2d(0.1, 0.1)});
    FAIL("expected AggregationError");
  } catch (const AggregationError& e) {
    CHECK(e.worker_id() == 0);
    CHECK(std::string(e.what()).find("fit_local") != std::string::npos);
  }
}

TEST_CASE("condition_number on known spectra") {
  CHECK(lse::condition_number(Eigen::Vector2d(1.0, 100.0).asDiagonal().toDenseMatrix()) ==
        doctest::Approx(100.0));
  CHECK(std::isinf(lse::condition_number(Eigen::Matrix2d::Zero())));
}

TEST_CASE("residual_variance uses only the row y - rho Wy - X beta") {
  QuietLog quiet;
  const auto data = testing_support::small_dataset(50, 0.08, 13, 2);
  const auto s = whole(data);
  const Theta t{0.3, Eigen::Vector2d(0.5, -0.5)};
  const Eigen::MatrixXd w = oracle::dense(data.network.weights());
  const Eigen::VectorXd e = data.y - 0.3 * w * data.y - data.x * t.beta;
  CHECK(lse::residual_variance(s, t) == doctest::Approx(e.squaredNorm() / 50.0).epsilon(1e-12));
}

TEST_CASE("local summary serialization round-trips bit for bit") {
  QuietLog quiet;
  const auto data = testing_support::small_dataset(80, 0.05, 3, 4);
  auto s = lse::fit_local(whole(data));
  s.worker_id = 7;
  const auto bytes = lse::serialize(s);
  const auto back = lse::deserialize_summary(bytes);
  CHECK(back.worker_id == 7);
  CHECK(back.n_local == s.n_local);
  CHECK(back.theta_hat.to_vector() == s.theta_hat.to_vector());
  CHECK(back.hessian_at_opt == s.hessian_at_opt);
  CHECK(back.sigma2_eps_local == s.sigma2_eps_local);
  CHECK(lse::serialize(back) == bytes);

  auto os = s;
  os.hessian_at_opt.resize(0, 0);
  const auto small = lse::serialize(os);
  CHECK(small.size() + 25 * 8 == bytes.size());
  CHECK(lse::deserialize_summary(small).hessian_at_opt.size() == 0);

  std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 3);
  CHECK_THROWS_AS(lse::deserialize_summary(cut), ProtocolError);
  auto extra = bytes;
  extra.push_back(0);
  CHECK_THROWS_AS(lse::deserialize_summary(extra), ProtocolError);
  auto wrong = bytes;
  wrong[0] ^= 0xFF;
  CHECK_THROWS_AS(lse::deserialize_summary(wrong), ProtocolError);
}

TEST_CASE("shard derivatives equal the closed-form dense derivatives") {
  QuietLog quiet;
  for (std::uint64_t seed = 21; seed <= 24; ++seed) {
    const auto data = testing_support::small_dataset(80, 0.05, seed, 3);
    const Eigen::MatrixXd w = oracle::dense(data.network.weights());
    const auto part = partition_uniform(80, 4, seed);
    const auto t = testing_support::random_theta(3, seed + 7);
    for (const auto& s : build_shards(data.network, part, data.y, data.x)) {
      const auto ev = lse::eval_objective(s, t, 2);
      const auto o = oracle::analytic_derivatives(w, data.y, data.x, t, s.local_nodes);
      CHECK(max_abs(ev.gradient - o.gradient) < 1e-10 * (1.0 + max_abs(o.gradient)));
      CHECK(max_abs(ev.hessian - o.hessian) < 1e-10 * (1.0 + max_abs(o.hessian)));
    }
  }
}
