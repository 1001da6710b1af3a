#pragma once

// Brute-force QP oracle: enumerate every subset of inequalities treated as
// equalities, solve the KKT system, keep the best primal/dual feasible point.
// Only meant for a handful of inequalities and strictly convex objectives.

#include <limits>
#include <optional>
#include <random>

#include "iip/qp.hpp"

namespace iip::testing {

inline std::optional<VectorXd> enumerate_active_sets(const QProblem& p) {
  const Eigen::Index m = p.num_vars();
  const Eigen::Index n_eq = p.A_eq.rows();
  const Eigen::Index n_in = p.A_in.rows();
  std::optional<VectorXd> best;
  double best_obj = std::numeric_limits<double>::infinity();
  for (unsigned mask = 0; mask < (1u << n_in); ++mask) {
    std::vector<Eigen::Index> act;
    for (Eigen::Index i = 0; i < n_in; ++i) {
      if (mask & (1u << i)) act.push_back(i);
    }
    const Eigen::Index k = n_eq + static_cast<Eigen::Index>(act.size());
    MatrixXd a(k, m);
    VectorXd b(k);
    a.topRows(n_eq) = p.A_eq;
    b.head(n_eq) = p.b_eq;
    for (std::size_t j = 0; j < act.size(); ++j) {
      a.row(n_eq + j) = p.A_in.row(act[j]);
      b(n_eq + j) = p.b_in(act[j]);
    }
    MatrixXd kkt = MatrixXd::Zero(m + k, m + k);
    kkt.topLeftCorner(m, m) = p.H;
    kkt.topRightCorner(m, k) = -a.transpose();
    kkt.bottomLeftCorner(k, m) = a;
    VectorXd rhs(m + k);
    rhs << -p.f, b;
    Eigen::FullPivLU<MatrixXd> lu(kkt);
    if (lu.rank() < m + k) continue;
    const VectorXd sol = lu.solve(rhs);
    const VectorXd z = sol.head(m);
    const VectorXd mult = sol.tail(k);
    bool ok = true;
    for (std::size_t j = 0; j < act.size(); ++j) ok &= mult(n_eq + j) >= -1e-9;
    if (n_in > 0) ok &= (p.A_in * z - p.b_in).minCoeff() >= -1e-9;
    if (!ok) continue;
    const double obj = p.objective(z);
    if (obj < best_obj) {
      best_obj = obj;
      best = z;
    }
  }
  return best;
}

/// Random strictly convex QP with a known feasible point.
inline QProblem random_qp(std::mt19937& rng, int m, int n_eq, int n_in) {
  std::normal_distribution<double> nd;
  auto randm = [&](int r, int c) {
    MatrixXd a(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) a(i, j) = nd(rng);
    return a;
  };
  const MatrixXd l = randm(m, m);
  const MatrixXd h = l * l.transpose() + 0.1 * MatrixXd::Identity(m, m);
  const VectorXd f = randm(m, 1);
  const VectorXd feasible = randm(m, 1);
  const MatrixXd a_eq = randm(n_eq, m);
  const MatrixXd a_in = randm(n_in, m);
  VectorXd slack = randm(n_in, 1).cwiseAbs();
  return QProblem(h, f, a_eq, a_eq * feasible, a_in, a_in * feasible - slack);
}

}  // namespace iip::testing
