#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "dsar/data.hpp"
#include "dsar/network.hpp"
#include "dsar/theta.hpp"

namespace testing_support {

/// Directed Bernoulli(p) graph on n nodes.
dsar::SparseNetwork random_digraph(dsar::Index n, double p, std::uint64_t seed);

/// Small synthetic dataset on a random digraph with the standard θ₀.
dsar::Dataset small_dataset(dsar::Index n, double p_edge, std::uint64_t seed,
                            dsar::Index p = 5, double noise_sd = 1.0);

/// θ with ρ uniform on [-0.8, 0.8] and β standard normal.
dsar::Theta random_theta(dsar::Index p, std::uint64_t seed);

std::vector<dsar::NodeId> all_nodes(dsar::Index n);

/// Silences library warnings for the lifetime of the object.
class QuietLog {
 public:
  QuietLog();
  ~QuietLog();

 private:
  int saved_;
};

}  // namespace testing_support
