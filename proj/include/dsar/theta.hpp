#pragma once

#include <Eigen/Dense>
#include <string>

namespace dsar {

/// θ = (ρ, β). Vector form puts ρ first.
struct Theta {
  double rho = 0.0;
  Eigen::VectorXd beta;

  Eigen::Index dim() const { return beta.size() + 1; }

  Eigen::VectorXd to_vector() const {
    Eigen::VectorXd v(dim());
    v[0] = rho;
    v.tail(beta.size()) = beta;
    return v;
  }

  static Theta from_vector(const Eigen::VectorXd& v) {
    return Theta{v[0], v.tail(v.size() - 1)};
  }

  /// "rho", "beta1", ... in vector order.
  static std::string parameter_name(Eigen::Index j) {
    return j == 0 ? "rho" : "beta" + std::to_string(j);
  }
};

}  // namespace dsar
