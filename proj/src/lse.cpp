#include "dsar/lse.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "dsar/wire.hpp"

namespace dsar::lse {

DiagonalFactors d_factors(const Eigen::VectorXd& dtilde, double rho) {
  DiagonalFactors f;
  f.d = (1.0 + rho * rho * dtilde.array()).inverse().matrix();
  f.d_dot = (-2.0 * rho * f.d.array().square() * dtilde.array()).matrix();
  return f;
}

Eigen::VectorXd apply_s(const SparseNetwork& net, double rho, const Eigen::VectorXd& v) {
  return v - rho * net.apply(v);
}

Eigen::VectorXd apply_st(const SparseNetwork& net, double rho, const Eigen::VectorXd& v) {
  return v - rho * net.apply_transpose(v);
}

Eigen::VectorXd eval_F_global(const SparseNetwork& net, const Eigen::VectorXd& y,
                              const Eigen::MatrixXd& x, const Theta& theta) {
  if (y.size() != net.n_nodes() || x.rows() != net.n_nodes() || x.cols() != theta.beta.size())
    throw DimensionError("data shape does not match network/parameter");
  const auto f = d_factors(net.col_sq_sums(), theta.rho);
  const Eigen::VectorXd u = apply_s(net, theta.rho, y) - x * theta.beta;
  return f.d.cwiseProduct(apply_st(net, theta.rho, u));
}

namespace {

void check_dims(const WorkerShard& shard, const Theta& theta) {
  if (theta.beta.size() != shard.p())
    throw DimensionError("beta has length " + std::to_string(theta.beta.size()) +
                         ", shard has " + std::to_string(shard.p()) + " covariates");
}

void check_finite(const WorkerShard& shard) {
  const auto& st = shard.stats;
  if (!shard.local_y.allFinite() || !shard.local_x.allFinite() || !st.a.allFinite() ||
      !st.b.allFinite() || !st.c.allFinite() || !st.z.allFinite() || !shard.dtilde.allFinite())
    throw ModelError("worker " + std::to_string(shard.worker_id) +
                     ": shard data contain non-finite values");
}

}  // namespace

Eigen::VectorXd eval_F_local(const WorkerShard& shard, const Theta& theta) {
  check_dims(shard, theta);
  const double rho = theta.rho;
  const auto& s = shard.stats;
  const auto f = d_factors(shard.dtilde, rho);
  const Eigen::VectorXd r = shard.local_y - rho * (s.a + s.b) + rho * rho * s.c -
                            (shard.local_x - rho * s.z) * theta.beta;
  return f.d.cwiseProduct(r);
}

ObjectiveEval eval_objective(const WorkerShard& shard, const Theta& theta, int order) {
  if (order < 0 || order > 2)
    throw ConfigError("objective derivatives of order " + std::to_string(order) +
                      " are not supported");
  check_dims(shard, theta);
  const double rho = theta.rho;
  const auto& s = shard.stats;
  const double n = static_cast<double>(shard.n_local());
  const Index p = shard.p();
  const auto& dt = shard.dtilde.array();

  const Eigen::ArrayXd d = (1.0 + rho * rho * dt).inverse();
  const Eigen::MatrixXd u = shard.local_x - rho * s.z;
  const Eigen::ArrayXd r = (shard.local_y - rho * (s.a + s.b) + rho * rho * s.c - u * theta.beta).array();
  const Eigen::ArrayXd F = d * r;

  ObjectiveEval ev;
  ev.value = F.square().sum() / n;
  if (order == 0) return ev;

  const Eigen::ArrayXd d1 = -2.0 * rho * dt * d.square();
  const Eigen::ArrayXd r_rho = (-(s.a + s.b) + 2.0 * rho * s.c + s.z * theta.beta).array();
  const Eigen::ArrayXd F_rho = d1 * r + d * r_rho;
  const Eigen::MatrixXd F_beta = -(d.matrix().asDiagonal() * u);

  ev.gradient.resize(p + 1);
  ev.gradient[0] = 2.0 / n * (F * F_rho).sum();
  ev.gradient.tail(p) = 2.0 / n * (F_beta.transpose() * F.matrix());
  if (order == 1) return ev;

  const Eigen::ArrayXd d2 = -2.0 * dt * d.square() + 8.0 * rho * rho * dt.square() * d.cube();
  const Eigen::ArrayXd F_rr = d2 * r + 2.0 * d1 * r_rho + 2.0 * d * s.c.array();
  const Eigen::MatrixXd F_rb = -(d1.matrix().asDiagonal() * u) + d.matrix().asDiagonal() * s.z;

  ev.hessian.resize(p + 1, p + 1);
  ev.hessian(0, 0) = 2.0 / n * (F_rho.square() + F * F_rr).sum();
  const Eigen::VectorXd h_rb =
      2.0 / n * (F_beta.transpose() * F_rho.matrix() + F_rb.transpose() * F.matrix());
  ev.hessian.block(1, 0, p, 1) = h_rb;
  ev.hessian.block(0, 1, 1, p) = h_rb.transpose();
  ev.hessian.bottomRightCorner(p, p) = 2.0 / n * (F_beta.transpose() * F_beta);
  return ev;
}

void SolverOptions::validate() const {
  if (max_iter < 1) throw ConfigError("max_iter must be positive");
  if (!(rho_min < rho_max) || rho_min <= -1.0 || rho_max >= 1.0)
    throw ConfigError("rho bounds must satisfy -1 < rho_min < rho_max < 1");
  if (!(grad_tol > 0.0)) throw ConfigError("grad_tol must be positive");
  if (multistart < 0) throw ConfigError("multistart count must be nonnegative");
}

double residual_variance(const WorkerShard& shard, const Theta& theta) {
  check_dims(shard, theta);
  const Eigen::VectorXd e =
      shard.local_y - theta.rho * shard.stats.a - shard.local_x * theta.beta;
  return e.squaredNorm() / static_cast<double>(shard.n_local());
}

Theta default_init(const WorkerShard& shard) {
  Theta t;
  t.rho = 0.0;
  t.beta = shard.local_x.colPivHouseholderQr().solve(shard.local_y);
  return t;
}

double condition_number(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  const Eigen::VectorXd ev = es.eigenvalues().cwiseAbs();
  const double lo = ev.minCoeff();
  if (lo == 0.0 || !std::isfinite(lo)) return std::numeric_limits<double>::infinity();
  return ev.maxCoeff() / lo;
}

namespace {

struct Iterate {
  Theta theta;
  ObjectiveEval ev;
};

Theta clamp(Theta t, const SolverOptions& o) {
  t.rho = std::clamp(t.rho, o.rho_min, o.rho_max);
  return t;
}

bool rho_pinned(const Theta& t, const Eigen::VectorXd& g, const SolverOptions& o) {
  return (t.rho <= o.rho_min && g[0] > 0.0) || (t.rho >= o.rho_max && g[0] < 0.0);
}

Eigen::VectorXd projected_gradient(const Theta& t, const Eigen::VectorXd& g,
                                   const SolverOptions& o) {
  Eigen::VectorXd pg = g;
  if (rho_pinned(t, g, o)) pg[0] = 0.0;
  return pg;
}

std::optional<Eigen::VectorXd> newton_direction(const Iterate& it, bool pinned) {
  const auto& g = it.ev.gradient;
  const auto& h = it.ev.hessian;
  const Index p = g.size() - 1;
  Eigen::VectorXd step = Eigen::VectorXd::Zero(g.size());
  if (pinned) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(h.bottomRightCorner(p, p));
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return std::nullopt;
    step.tail(p) = -ldlt.solve(g.tail(p));
  } else {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return std::nullopt;
    step = -ldlt.solve(g);
  }
  if (!step.allFinite() || g.dot(step) >= 0.0) return std::nullopt;
  return step;
}

std::optional<Theta> armijo_search(const WorkerShard& shard, const Iterate& it,
                                   const Eigen::VectorXd& step, const SolverOptions& o) {
  const Eigen::VectorXd x0 = it.theta.to_vector();
  double t = 1.0;
  for (int k = 0; k < 60; ++k, t *= 0.5) {
    Eigen::VectorXd x = x0 + t * step;
    x[0] = std::clamp(x[0], o.rho_min, o.rho_max);
    const Eigen::VectorXd disp = x - x0;
    if (disp.lpNorm<Eigen::Infinity>() == 0.0) return std::nullopt;
    const Theta cand = Theta::from_vector(x);
    const double q = eval_objective(shard, cand, 0).value;
    if (std::isfinite(q) && q <= it.ev.value + o.armijo * it.ev.gradient.dot(disp))
      return cand;
  }
  return std::nullopt;
}

/// Exact minimizer over β for fixed ρ: weighted least squares with weights D².
Eigen::VectorXd profile_beta(const WorkerShard& shard, double rho) {
  const auto& s = shard.stats;
  const Eigen::VectorXd d = d_factors(shard.dtilde, rho).d;
  const Eigen::MatrixXd u = d.asDiagonal() * (shard.local_x - rho * s.z);
  const Eigen::VectorXd r0 =
      d.cwiseProduct(shard.local_y - rho * (s.a + s.b) + rho * rho * s.c);
  return u.colPivHouseholderQr().solve(r0);
}

Theta profile_step(const WorkerShard& shard, const Theta& from, const SolverOptions& o) {
  Theta base{from.rho, profile_beta(shard, from.rho)};
  const auto ev = eval_objective(shard, base, 2);
  const Index p = shard.p();
  const double g = ev.gradient[0];
  const auto& h = ev.hessian;
  const Eigen::VectorXd hrb = h.block(1, 0, p, 1);
  const double schur =
      h(0, 0) - hrb.dot(h.bottomRightCorner(p, p).ldlt().solve(hrb));
  double step = (schur > 0.0 && std::isfinite(schur)) ? -g / schur : (g > 0.0 ? -0.1 : 0.1);
  for (int k = 0; k < 60; ++k, step *= 0.5) {
    const double rho = std::clamp(from.rho + step, o.rho_min, o.rho_max);
    if (rho == base.rho) break;
    Theta cand{rho, profile_beta(shard, rho)};
    if (eval_objective(shard, cand, 0).value < ev.value) return cand;
  }
  return base;
}

LocalSummary newton(const WorkerShard& shard, const Theta& init, const SolverOptions& o) {
  Iterate cur{clamp(init, o), {}};
  cur.ev = eval_objective(shard, cur.theta, 2);
  double gnorm = 0.0;
  for (int iter = 0; iter < o.max_iter; ++iter) {
    gnorm = projected_gradient(cur.theta, cur.ev.gradient, o).lpNorm<Eigen::Infinity>();
    bool done = gnorm <= o.grad_tol;
    if (!done) {
      std::optional<Theta> next;
      if (auto dir = newton_direction(cur, rho_pinned(cur.theta, cur.ev.gradient, o)))
        next = armijo_search(shard, cur, *dir, o);
      if (!next) next = profile_step(shard, cur.theta, o);
      const double moved = (next->to_vector() - cur.theta.to_vector()).lpNorm<Eigen::Infinity>();
      cur.theta = std::move(*next);
      cur.ev = eval_objective(shard, cur.theta, 2);
      done = moved <= o.step_tol;
      if (done)
        gnorm = projected_gradient(cur.theta, cur.ev.gradient, o).lpNorm<Eigen::Infinity>();
    }
    if (done) {
      LocalSummary s;
      s.worker_id = shard.worker_id;
      s.theta_hat = cur.theta;
      s.hessian_at_opt = cur.ev.hessian;
      s.n_local = shard.n_local();
      s.sigma2_eps_local = residual_variance(shard, cur.theta);
      s.iterations = iter;
      s.grad_norm = gnorm;
      s.byte_size = serialize(s).size();
      return s;
    }
  }
  throw NotConverged("worker " + std::to_string(shard.worker_id) +
                         ": local fit did not converge in " + std::to_string(o.max_iter) +
                         " iterations (gradient norm " + std::to_string(gnorm) +
                         ", rho " + std::to_string(cur.theta.rho) + ")",
                     cur.theta, gnorm);
}

}  // namespace

LocalSummary fit_local(const WorkerShard& shard, const Theta& init, const SolverOptions& opts) {
  opts.validate();
  check_dims(shard, init);
  check_finite(shard);
  return newton(shard, init, opts);
}

LocalSummary fit_local(const WorkerShard& shard, const SolverOptions& opts) {
  opts.validate();
  check_finite(shard);
  const Theta init = default_init(shard);
  std::optional<NotConverged> first_error;
  std::optional<LocalSummary> best;
  try {
    best = newton(shard, init, opts);
    if (best->grad_norm <= opts.grad_tol) return *best;
  } catch (const NotConverged& e) {
    first_error = e;
  }
  const double span = opts.rho_max - opts.rho_min;
  for (int m = 0; m < opts.multistart; ++m) {
    Theta start = init;
    start.rho = opts.rho_min + span * (m + 1) / (opts.multistart + 1);
    start.beta = profile_beta(shard, start.rho);
    try {
      auto s = newton(shard, start, opts);
      const bool better =
          !best || (s.grad_norm <= opts.grad_tol && best->grad_norm > opts.grad_tol) ||
          eval_objective(shard, s.theta_hat, 0).value <
              eval_objective(shard, best->theta_hat, 0).value;
      if (better) best = std::move(s);
    } catch (const NotConverged&) {
    }
  }
  if (best) return *best;
  throw *first_error;
}

Refinement newton_refine(const WorkerShard& shard, const Theta& at, double max_condition) {
  const auto ev = eval_objective(shard, at, 2);
  const double cond = condition_number(ev.hessian);
  if (!(cond <= max_condition))
    throw AggregationError("worker " + std::to_string(shard.worker_id) +
                               ": Hessian condition number " + std::to_string(cond) +
                               " exceeds limit; refit this worker with fit_local",
                           shard.worker_id);
  const Eigen::VectorXd step = ev.hessian.fullPivLu().solve(ev.gradient);
  return {Theta::from_vector(at.to_vector() - step), ev.hessian};
}

Theta one_newton_step(const WorkerShard& shard, const Theta& at, double max_condition) {
  return newton_refine(shard, at, max_condition).theta;
}

namespace {
constexpr std::uint32_t kSummaryTag = wire::make_tag('L', 'S', 'U', 'M');
}

std::vector<std::uint8_t> serialize(const LocalSummary& s) {
  wire::Writer w;
  const Index p = s.theta_hat.beta.size();
  w.u32(kSummaryTag);
  w.i32(s.worker_id);
  w.u64(static_cast<std::uint64_t>(s.n_local));
  w.u32(static_cast<std::uint32_t>(p));
  w.f64(s.theta_hat.rho);
  w.vector(s.theta_hat.beta);
  w.f64(s.sigma2_eps_local);
  const bool has_h = s.hessian_at_opt.size() > 0;
  w.u8(has_h ? 1 : 0);
  if (has_h) {
    if (s.hessian_at_opt.rows() != p + 1 || s.hessian_at_opt.cols() != p + 1)
      throw DimensionError("summary Hessian shape does not match p");
    w.matrix(s.hessian_at_opt);
  }
  return std::move(w).take();
}

LocalSummary deserialize_summary(std::span<const std::uint8_t> bytes) {
  wire::Reader r(bytes);
  wire::expect_tag(r, kSummaryTag, "local summary");
  LocalSummary s;
  s.worker_id = r.i32();
  s.n_local = static_cast<Index>(r.u64());
  const auto p = static_cast<Index>(r.u32());
  s.theta_hat.rho = r.f64();
  s.theta_hat.beta = r.vector(p);
  s.sigma2_eps_local = r.f64();
  if (r.u8()) s.hessian_at_opt = r.matrix(p + 1, p + 1);
  r.expect_end();
  s.byte_size = bytes.size();
  return s;
}

}  // namespace dsar::lse
