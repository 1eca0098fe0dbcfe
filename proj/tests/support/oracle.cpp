#include "oracle.hpp"

namespace oracle {

Mat dense(const dsar::RowSparse& m) { return Mat(m); }

Mat row_normalize(const Mat& a) {
  Mat w = a;
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    const double s = w.row(i).sum();
    if (s != 0.0) w.row(i) /= s;
  }
  return w;
}

Ds ds(const Mat& w, double rho) {
  const Eigen::Index n = w.rows();
  const Vec dt = (w.transpose() * w).diagonal();
  Ds out;
  out.d = Mat::Zero(n, n);
  out.d_dot = Mat::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.d(i, i) = 1.0 / (1.0 + rho * rho * dt[i]);
    out.d_dot(i, i) = -2.0 * rho * out.d(i, i) * out.d(i, i) * dt[i];
  }
  out.s = Mat::Identity(n, n) - rho * w;
  return out;
}

Vec F(const Mat& w, const Vec& y, const Mat& x, const dsar::Theta& t) {
  const auto m = ds(w, t.rho);
  return m.d * m.s.transpose() * (m.s * y - x * t.beta);
}

double Q(const Mat& w, const Vec& y, const Mat& x, const dsar::Theta& t,
         const std::vector<dsar::NodeId>& nodes) {
  const Vec f = F(w, y, x, t);
  double s = 0.0;
  for (auto i : nodes) s += f[i] * f[i];
  return s / static_cast<double>(nodes.size());
}

Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double h) {
  Vec g(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    Vec a = x, b = x;
    a[j] += h;
    b[j] -= h;
    g[j] = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

Mat fd_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x, double h) {
  const Vec f0 = f(x);
  Mat jac(f0.size(), x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    Vec a = x, b = x;
    a[j] += h;
    b[j] -= h;
    jac.col(j) = (f(a) - f(b)) / (2.0 * h);
  }
  return jac;
}

Factors factors(const Mat& w, const Vec& y, const Mat& x, const dsar::Theta& t,
                const std::vector<dsar::NodeId>& nodes) {
  const Eigen::Index n = w.rows();
  const auto m = ds(w, t.rho);
  const Mat& D = m.d;
  const Mat& S = m.s;
  const Mat& Dd = m.d_dot;
  Mat J = Mat::Zero(n, n);
  for (auto i : nodes) J(i, i) = 1.0;
  const Mat mtilde = Dd * S.transpose() * S * Dd - Dd * S.transpose() * w * D -
                     Dd * w.transpose() * S * D - D * w.transpose() * S * Dd +
                     D * w.transpose() * w * D - D * S.transpose() * w * Dd;
  Factors f;
  f.xi = (S.transpose() * S * Dd - S.transpose() * w * D - w.transpose() * S * D) * J * D;
  f.v1 = D * S.transpose() * J;
  f.v2 = mtilde * J * D * S.transpose();
  f.t1 = (y.transpose() * w.transpose() * S * D * J * D * S.transpose()).transpose();
  f.t2 = (y.transpose() * S.transpose() * w * D * J * D * S.transpose()).transpose();
  f.t3 = x.transpose() * S * D * J * D * S.transpose();
  return f;
}

Mat sigma1_pairwise(const Mat& w, const Vec& y, const Mat& x, const dsar::Theta& t,
                    const std::vector<std::vector<dsar::NodeId>>& sets, double s2,
                    double s2_tilde, double cross_sign) {
  const auto K = sets.size();
  const Eigen::Index p = x.cols();
  double n = 0.0;
  for (const auto& s : sets) n += static_cast<double>(s.size());
  std::vector<Factors> f;
  for (const auto& s : sets) f.push_back(factors(w, y, x, t, s));
  Mat total = Mat::Zero(p + 1, p + 1);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t l = 0; l < K; ++l) {
      const double nk = static_cast<double>(sets[k].size());
      const double nl = static_cast<double>(sets[l].size());
      const double weight = std::sqrt((nk / n) * (nl / n));
      const double c = 4.0 / std::sqrt(nk * nl);
      Mat blk(p + 1, p + 1);
      blk(0, 0) = c * (s2 * s2 *
                           ((f[k].xi * f[l].xi).trace() + (f[k].v1.transpose() * f[l].v2).trace() +
                            (f[k].t1.dot(f[l].t2) + f[k].t2.dot(f[l].t1)) / s2_tilde) +
                       s2 * f[k].t1.dot(f[l].t1));
      // ρβ block: T_1k T_3lᵀ; the βρ block is the transposed pairing.
      const Vec rb = cross_sign * c * s2 * (f[l].t3 * f[k].t1);
      blk.block(0, 1, 1, p) = rb.transpose();
      blk.block(1, 0, p, 1) = cross_sign * c * s2 * (f[k].t3 * f[l].t1);
      blk.bottomRightCorner(p, p) = c * s2 * f[k].t3 * f[l].t3.transpose();
      total += weight * blk;
    }
  }
  return total;
}

Mat sigma1_true(const Mat& w, const Mat& x, const dsar::Theta& t0, double sigma2) {
  const Eigen::Index n = w.rows(), p = x.cols();
  const auto m = ds(w, t0.rho);
  const Mat sinv = m.s.inverse();
  const Mat P = m.s * m.d;  // Fᵀ = εᵀ P
  const Mat G = m.d_dot * m.s.transpose() - m.d * w.transpose() -
                m.d * m.s.transpose() * w * sinv;
  const Vec h = -m.d * m.s.transpose() * w * sinv * x * t0.beta;
  const Mat A = P * G;      // ρ component: εᵀAε + aᵀε
  const Vec a = P * h;
  const Mat B = -P * m.d * m.s.transpose() * x;  // β components: linear, columns
  const double s4 = sigma2 * sigma2;
  Mat cov(p + 1, p + 1);
  cov(0, 0) = s4 * ((A * A).trace() + (A * A.transpose()).trace()) + sigma2 * a.dot(a);
  for (Eigen::Index j = 0; j < p; ++j) {
    cov(0, j + 1) = cov(j + 1, 0) = sigma2 * a.dot(B.col(j));
    for (Eigen::Index k = 0; k < p; ++k) cov(j + 1, k + 1) = sigma2 * B.col(j).dot(B.col(k));
  }
  // Q̇ = (2/N)(...), so cov(√N Q̇) = (4/N) cov(...).
  return 4.0 / static_cast<double>(n) * cov;
}

Vec sqrt_n_score(const Mat& w, const Vec& y, const Mat& x, const dsar::Theta& t) {
  std::vector<dsar::NodeId> all(static_cast<std::size_t>(w.rows()));
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<dsar::NodeId>(i);
  // Analytic score: Q̇ = (2/N) Σ F_i ∇F_i, with ∇F from the dense chain rule.
  const Eigen::Index n = w.rows();
  const auto m = ds(w, t.rho);
  const Vec u = m.s * y - x * t.beta;
  const Vec f = m.d * m.s.transpose() * u;
  const Vec f_rho = m.d_dot * m.s.transpose() * u - m.d * w.transpose() * u -
                    m.d * m.s.transpose() * (w * y);
  const Mat f_beta = -m.d * m.s.transpose() * x;
  Vec g(t.dim());
  g[0] = 2.0 / static_cast<double>(n) * f.dot(f_rho);
  g.tail(x.cols()) = 2.0 / static_cast<double>(n) * f_beta.transpose() * f;
  return std::sqrt(static_cast<double>(n)) * g;
}

Mat dense_hessian(const Mat& w, const Vec& y, const Mat& x, const dsar::Theta& t,
                  const std::vector<dsar::NodeId>& nodes) {
  auto q = [&](const Vec& v) { return Q(w, y, x, dsar::Theta::from_vector(v), nodes); };
  auto g = [&](const Vec& v) { return fd_gradient(q, v, 1e-5); };
  return fd_jacobian(g, t.to_vector(), 1e-4);
}

}  // namespace oracle

namespace oracle {

Derivatives analytic_derivatives(const Mat& w, const Vec& y, const Mat& x, const dsar::Theta& t,
                                 const std::vector<dsar::NodeId>& nodes) {
  const Eigen::Index n = w.rows(), p = x.cols();
  const double rho = t.rho;
  const auto m = ds(w, rho);
  const Vec dt = (w.transpose() * w).diagonal();
  Mat dd = Mat::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double a = 1.0 + rho * rho * dt[i];
    dd(i, i) = (6.0 * rho * rho * dt[i] * dt[i] - 2.0 * dt[i]) / (a * a * a);
  }
  const Vec r = m.s * y - x * t.beta;
  const Vec wy = w * y;
  const Vec f = m.d * m.s.transpose() * r;
  const Vec st_r_dot = -w.transpose() * r - m.s.transpose() * wy;
  const Vec f_rho = m.d_dot * m.s.transpose() * r + m.d * st_r_dot;
  const Vec f_rhorho = dd * m.s.transpose() * r + 2.0 * m.d_dot * st_r_dot +
                       m.d * (2.0 * w.transpose() * wy);
  const Mat f_beta = -m.d * m.s.transpose() * x;
  const Mat f_rhobeta = -m.d_dot * m.s.transpose() * x + m.d * w.transpose() * x;

  Derivatives out;
  out.gradient = Vec::Zero(p + 1);
  out.hessian = Mat::Zero(p + 1, p + 1);
  const double scale = 2.0 / static_cast<double>(nodes.size());
  for (auto i : nodes) {
    Vec j(p + 1);
    j[0] = f_rho[i];
    j.tail(p) = f_beta.row(i).transpose();
    out.gradient += scale * f[i] * j;
    out.hessian += scale * j * j.transpose();
    out.hessian(0, 0) += scale * f[i] * f_rhorho[i];
    out.hessian.block(0, 1, 1, p) += scale * f[i] * f_rhobeta.row(i);
    out.hessian.block(1, 0, p, 1) += scale * f[i] * f_rhobeta.row(i).transpose();
  }
  return out;
}

}  // namespace oracle
