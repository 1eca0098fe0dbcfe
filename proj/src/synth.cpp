#include "dsar/synth.hpp"

#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <random>
#include <unordered_set>

#include "dsar/errors.hpp"
#include "dsar/rng.hpp"

namespace dsar::synth {

using Triplet = Eigen::Triplet<double>;

NetworkSpec NetworkSpec::sbm_default(Index n, std::uint64_t seed) {
  NetworkSpec s;
  s.kind = NetworkKind::sbm;
  s.n_nodes = n;
  s.sbm_blocks = 20;
  s.sbm_p_in = std::min(1.0, 20.0 / static_cast<double>(n));
  s.sbm_p_out = std::min(1.0, 2.0 / static_cast<double>(n));
  s.seed = seed;
  return s;
}

NetworkSpec NetworkSpec::powerlaw_default(Index n, std::uint64_t seed) {
  NetworkSpec s;
  s.kind = NetworkKind::powerlaw;
  s.n_nodes = n;
  s.pl_alpha = 3.0;
  s.seed = seed;
  return s;
}

void NetworkSpec::validate() const {
  if (n_nodes < 1) throw ConfigError("network needs at least one node");
  if (kind == NetworkKind::sbm) {
    if (sbm_blocks < 1) throw ConfigError("SBM needs at least one block");
    for (double p : {sbm_p_in, sbm_p_out})
      if (!(p >= 0.0 && p <= 1.0))
        throw ConfigError("SBM edge probabilities must lie in [0, 1]");
  } else if (!(pl_alpha > 1.0)) {
    throw ConfigError("power-law exponent must exceed 1");
  }
}

namespace {

void add_min_outdegree(std::vector<Triplet>& edges, Index n, Engine& rng) {
  if (n < 2) return;
  std::vector<char> has_out(static_cast<std::size_t>(n), 0);
  for (const auto& t : edges) has_out[static_cast<std::size_t>(t.row())] = 1;
  std::uniform_int_distribution<Index> pick(0, n - 2);
  for (Index i = 0; i < n; ++i) {
    if (has_out[static_cast<std::size_t>(i)]) continue;
    Index j = pick(rng);
    if (j >= i) ++j;
    edges.emplace_back(i, j, 1.0);
  }
}

SparseNetwork finish(std::vector<Triplet>& edges, const NetworkSpec& spec, Engine& rng) {
  if (spec.ensure_min_outdegree) add_min_outdegree(edges, spec.n_nodes, rng);
  RowSparse a(spec.n_nodes, spec.n_nodes);
  a.setFromTriplets(edges.begin(), edges.end(), [](double, double) { return 1.0; });
  return row_normalize(a);
}

}  // namespace

SparseNetwork gen_sbm(const NetworkSpec& spec) {
  spec.validate();
  auto rng = make_engine(spec.seed);
  const Index n = spec.n_nodes;
  const int m = spec.sbm_blocks;
  std::uniform_int_distribution<int> label_dist(0, m - 1);
  std::vector<int> label(static_cast<std::size_t>(n));
  std::vector<std::vector<Index>> members(static_cast<std::size_t>(m));
  for (Index i = 0; i < n; ++i) {
    label[static_cast<std::size_t>(i)] = label_dist(rng);
    members[static_cast<std::size_t>(label[static_cast<std::size_t>(i)])].push_back(i);
  }

  std::vector<Triplet> edges;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  // Geometric skipping: the gap to the next success among Bernoulli(p)
  // trials is floor(log U / log(1-p)).
  for (Index i = 0; i < n; ++i) {
    for (int b = 0; b < m; ++b) {
      const double p = (b == label[static_cast<std::size_t>(i)]) ? spec.sbm_p_in : spec.sbm_p_out;
      if (p <= 0.0) continue;
      const auto& cand = members[static_cast<std::size_t>(b)];
      const auto size = static_cast<Index>(cand.size());
      if (p >= 1.0) {
        for (Index j : cand)
          if (j != i) edges.emplace_back(i, j, 1.0);
        continue;
      }
      const double log_q = std::log1p(-p);
      Index pos = -1;
      while (true) {
        const double u = 1.0 - unif(rng);  // (0, 1]
        const double skip = std::floor(std::log(u) / log_q);
        if (skip >= static_cast<double>(size)) break;
        pos += 1 + static_cast<Index>(skip);
        if (pos >= size) break;
        const Index j = cand[static_cast<std::size_t>(pos)];
        if (j != i) edges.emplace_back(i, j, 1.0);
      }
    }
  }
  return finish(edges, spec, rng);
}

std::vector<double> powerlaw_pmf(double alpha, Index k_max) {
  std::vector<double> pmf(static_cast<std::size_t>(std::max<Index>(k_max, 0)));
  double total = 0.0;
  for (Index k = 1; k <= k_max; ++k) {
    pmf[static_cast<std::size_t>(k - 1)] = std::pow(static_cast<double>(k), -alpha);
    total += pmf[static_cast<std::size_t>(k - 1)];
  }
  for (double& v : pmf) v /= total;
  return pmf;
}

SparseNetwork gen_powerlaw(const NetworkSpec& spec) {
  spec.validate();
  auto rng = make_engine(spec.seed);
  const Index n = spec.n_nodes;
  std::vector<Triplet> edges;
  if (n >= 2) {
    const auto pmf = powerlaw_pmf(spec.pl_alpha, n - 1);
    std::discrete_distribution<Index> degree(pmf.begin(), pmf.end());
    std::unordered_set<Index> chosen;
    for (Index i = 0; i < n; ++i) {
      const Index d = degree(rng) + 1;
      // Floyd's algorithm over the n-1 nodes other than i.
      chosen.clear();
      for (Index r = n - 1 - d; r < n - 1; ++r) {
        Index t = std::uniform_int_distribution<Index>(0, r)(rng);
        if (!chosen.insert(t).second) chosen.insert(r);
      }
      for (Index t : chosen) {
        const Index follower = t >= i ? t + 1 : t;
        edges.emplace_back(follower, i, 1.0);
      }
    }
    // Triplet order depends on hash-set iteration; sorting keeps the
    // result independent of the standard library.
    std::sort(edges.begin(), edges.end(), [](const Triplet& l, const Triplet& r) {
      return l.row() != r.row() ? l.row() < r.row() : l.col() < r.col();
    });
  }
  return finish(edges, spec, rng);
}

SparseNetwork gen_network(const NetworkSpec& spec) {
  return spec.kind == NetworkKind::sbm ? gen_sbm(spec) : gen_powerlaw(spec);
}

Eigen::MatrixXd gen_covariates(Index n_nodes, Index p, std::uint64_t seed) {
  if (p < 1) throw ConfigError("covariate dimension must be at least 1");
  auto rng = make_engine(seed);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd x(n_nodes, p);
  for (Index i = 0; i < n_nodes; ++i)
    for (Index j = 0; j < p; ++j) x(i, j) = normal(rng);
  return x;
}

TrueModel TrueModel::simulation_default() {
  TrueModel m;
  m.theta0.rho = 0.4;
  m.theta0.beta.resize(5);
  m.theta0.beta << 0.2, 0.4, 0.6, 0.8, 1.0;
  return m;
}

void NoiseModel::validate(Index n) const {
  if (!(sigma >= 0.0)) throw ModelError("noise scale must be nonnegative");
  switch (kind) {
    case NoiseKind::iid_gaussian:
      break;
    case NoiseKind::iid_student_t:
      if (!(t_dof > 2.0))
        throw ModelError("Student-t noise needs more than 2 degrees of freedom");
      break;
    case NoiseKind::equicorrelated:
      if (!(gamma >= 0.0 && gamma < sigma * sigma))
        throw ModelError("equicorrelation must lie in [0, sigma^2)");
      break;
    case NoiseKind::heteroscedastic:
      if (variances.size() != n)
        throw ModelError("heteroscedastic noise needs one variance per node");
      if ((variances.array() < 0.0).any())
        throw ModelError("noise variances must be nonnegative");
      break;
    case NoiseKind::sparse_correlated:
      for (const auto& pr : sparse_pairs)
        if (pr.i < 0 || pr.j < 0 || pr.i >= n || pr.j >= n || pr.i == pr.j)
          throw ModelError("correlated pair (" + std::to_string(pr.i) + ", " +
                           std::to_string(pr.j) + ") is not an off-diagonal index");
      break;
  }
}

Eigen::VectorXd gen_noise(const NoiseModel& model, Index n, std::uint64_t seed) {
  model.validate(n);
  auto rng = make_engine(seed);
  std::normal_distribution<double> normal;
  Eigen::VectorXd z(n);
  if (model.kind == NoiseKind::iid_student_t) {
    std::student_t_distribution<double> t(model.t_dof);
    const double scale = std::sqrt((model.t_dof - 2.0) / model.t_dof);
    for (Index i = 0; i < n; ++i) z[i] = scale * t(rng);
  } else {
    for (Index i = 0; i < n; ++i) z[i] = normal(rng);
  }

  switch (model.kind) {
    case NoiseKind::iid_gaussian:
    case NoiseKind::iid_student_t:
      return model.sigma * z;
    case NoiseKind::heteroscedastic:
      return model.variances.array().sqrt() * z.array();
    case NoiseKind::equicorrelated: {
      // (√λ I + c 11ᵀ)² = λI + γ11ᵀ with λ = σ² - γ.
      const double lambda = model.sigma * model.sigma - model.gamma;
      const double root = std::sqrt(lambda);
      const double c = (std::sqrt(lambda + model.gamma * static_cast<double>(n)) - root) /
                       static_cast<double>(n);
      return (root * z.array() + c * z.sum()).matrix();
    }
    case NoiseKind::sparse_correlated: {
      std::vector<Triplet> t;
      for (Index i = 0; i < n; ++i) t.emplace_back(i, i, model.sigma * model.sigma);
      for (const auto& pr : model.sparse_pairs) {
        t.emplace_back(pr.i, pr.j, pr.value);
        t.emplace_back(pr.j, pr.i, pr.value);
      }
      Eigen::SparseMatrix<double> cov(n, n);
      cov.setFromTriplets(t.begin(), t.end());
      Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt(cov);
      if (llt.info() != Eigen::Success)
        throw ModelError("noise covariance is not positive definite");
      Eigen::VectorXd lz = llt.matrixL() * z;
      return llt.permutationPinv() * lz;
    }
  }
  return z;
}

Eigen::VectorXd solve_sar(const SparseNetwork& net, double rho, const Eigen::VectorXd& rhs,
                          double tol, int max_iter) {
  if (rhs.size() != net.n_nodes())
    throw DimensionError("right-hand side length does not match the network");
  if (!(std::abs(rho) < 1.0))
    throw SolverError("|rho| = " + std::to_string(std::abs(rho)) +
                      " >= 1: the fixed-point sweep need not converge "
                      "(rows of W sum to at most 1)");
  Eigen::VectorXd y = rhs;
  double resid = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    Eigen::VectorXd next = rho * net.apply(y) + rhs;
    resid = (next - y).lpNorm<Eigen::Infinity>();
    y.swap(next);
    // Residual of the updated iterate is |ρ| times the last change at most.
    if (std::abs(rho) * resid <= tol) {
      const double check = (y - rho * net.apply(y) - rhs).lpNorm<Eigen::Infinity>();
      if (check <= tol) return y;
    }
  }
  throw SolverError("fixed-point solve did not reach tolerance after " +
                    std::to_string(max_iter) + " sweeps (last change " +
                    std::to_string(resid) + ", contraction bound |rho| = " +
                    std::to_string(std::abs(rho)) + ")");
}

Eigen::VectorXd synth_response(const SparseNetwork& net, const Eigen::MatrixXd& x,
                               const TrueModel& model, std::uint64_t seed) {
  if (x.rows() != net.n_nodes() || x.cols() != model.theta0.beta.size())
    throw DimensionError("covariates are " + std::to_string(x.rows()) + "x" +
                         std::to_string(x.cols()) + ", expected " +
                         std::to_string(net.n_nodes()) + "x" +
                         std::to_string(model.theta0.beta.size()));
  Eigen::VectorXd rhs = x * model.theta0.beta + gen_noise(model.noise, net.n_nodes(), seed);
  if (model.theta0.rho == 0.0) return rhs;
  return solve_sar(net, model.theta0.rho, rhs);
}

Dataset make_dataset(NetworkSpec spec, Index p, const TrueModel& model, std::uint64_t seed) {
  spec.seed = derive_seed(seed, Stream::network);
  Dataset data;
  data.network = gen_network(spec);
  data.x = gen_covariates(spec.n_nodes, p, derive_seed(seed, Stream::covariates));
  data.y = synth_response(data.network, data.x, model, derive_seed(seed, Stream::noise));
  data.index = NodeIndex::identity(spec.n_nodes);
  return data;
}

}  // namespace dsar::synth
