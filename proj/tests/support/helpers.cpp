#include "helpers.hpp"

#include <random>

#include "dsar/log.hpp"
#include "dsar/rng.hpp"
#include "dsar/synth.hpp"

namespace testing_support {

dsar::SparseNetwork random_digraph(dsar::Index n, double p, std::uint64_t seed) {
  auto rng = dsar::make_engine(seed);
  std::bernoulli_distribution edge(p);
  std::vector<std::pair<dsar::NodeId, dsar::NodeId>> edges;
  for (dsar::Index i = 0; i < n; ++i)
    for (dsar::Index j = 0; j < n; ++j)
      if (i != j && edge(rng))
        edges.emplace_back(static_cast<dsar::NodeId>(i), static_cast<dsar::NodeId>(j));
  return dsar::network_from_edges(n, edges);
}

dsar::Dataset small_dataset(dsar::Index n, double p_edge, std::uint64_t seed, dsar::Index p,
                            double noise_sd) {
  dsar::Dataset d;
  d.network = random_digraph(n, p_edge, seed);
  auto model = dsar::synth::TrueModel::simulation_default();
  model.theta0.beta = Eigen::VectorXd::LinSpaced(p, 0.2, 0.2 * static_cast<double>(p));
  model.noise.sigma = noise_sd;
  d.x = dsar::synth::gen_covariates(n, p, dsar::derive_seed(seed, 11));
  d.y = dsar::synth::synth_response(d.network, d.x, model, dsar::derive_seed(seed, 12));
  d.index = dsar::NodeIndex::identity(n);
  return d;
}

dsar::Theta random_theta(dsar::Index p, std::uint64_t seed) {
  auto rng = dsar::make_engine(seed);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  std::normal_distribution<double> z;
  dsar::Theta t;
  t.rho = u(rng);
  t.beta.resize(p);
  for (dsar::Index j = 0; j < p; ++j) t.beta[j] = z(rng);
  return t;
}

std::vector<dsar::NodeId> all_nodes(dsar::Index n) {
  std::vector<dsar::NodeId> v(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<dsar::NodeId>(i);
  return v;
}

namespace {
int current_threshold = static_cast<int>(dsar::log::Level::warning);
}

QuietLog::QuietLog() : saved_(current_threshold) {
  current_threshold = static_cast<int>(dsar::log::Level::error);
  dsar::log::set_threshold(dsar::log::Level::error);
}

QuietLog::~QuietLog() {
  current_threshold = saved_;
  dsar::log::set_threshold(static_cast<dsar::log::Level>(saved_));
}

}  // namespace testing_support
