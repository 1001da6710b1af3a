#pragma once

// Dense convex QP
//
//   min  1/2 z^T H z + f^T z
//   s.t. A_eq z  = b_eq
//        A_in z >= b_in
//
// Strictly convex problems are solved with the Goldfarb-Idnani dual
// active-set method: start at the unconstrained minimum, then repeatedly add
// the most violated constraint, dropping active ones whose multipliers would
// turn negative. The projection operators are rebuilt from scratch at every
// active-set change; problems here have tens of variables at most.
//
// Positive semidefinite H is handled by proximal-point outer iterations,
// each of which is a strictly convex solve with H + rho I. The final active
// set is polished by a direct KKT solve with iterative refinement.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "iip/linalg.hpp"

namespace iip {

struct QProblem {
  MatrixXd H;
  VectorXd f;
  MatrixXd A_eq;
  VectorXd b_eq;
  MatrixXd A_in;  // A_in z >= b_in
  VectorXd b_in;

  QProblem() = default;
  QProblem(MatrixXd h, VectorXd f_in, MatrixXd a_eq, VectorXd beq, MatrixXd a_in, VectorXd bin)
      : H(symmetrize(h)), f(std::move(f_in)), A_eq(std::move(a_eq)), b_eq(std::move(beq)),
        A_in(std::move(a_in)), b_in(std::move(bin)) {
    validate();
  }

  Eigen::Index num_vars() const { return H.rows(); }

  void validate() const {
    const Eigen::Index m = H.rows();
    require_shape(H, m, m, "H");
    require_size(f, m, "f");
    require_shape(A_eq, A_eq.rows(), m, "A_eq");
    require_size(b_eq, A_eq.rows(), "b_eq");
    require_shape(A_in, A_in.rows(), m, "A_in");
    require_size(b_in, A_in.rows(), "b_in");
  }

  double objective(const VectorXd& z) const { return 0.5 * z.dot(H * z) + f.dot(z); }
};

enum class QStatus { kOptimal, kInfeasible, kMaxIter, kUnbounded };

inline const char* to_string(QStatus s) {
  switch (s) {
    case QStatus::kOptimal:
      return "optimal";
    case QStatus::kInfeasible:
      return "infeasible";
    case QStatus::kMaxIter:
      return "max_iter";
    case QStatus::kUnbounded:
      return "unbounded";
  }
  return "?";
}

struct QSolution {
  VectorXd z;
  VectorXd y_eq;   // multipliers of the equalities
  VectorXd mu_in;  // multipliers of the inequalities, >= 0
  QStatus status = QStatus::kMaxIter;
  int iterations = 0;
  double stationarity = 0.0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double complementarity = 0.0;
  std::vector<int> pruned_equalities;  // dependent rows dropped from A_eq
};

struct QpOptions {
  double tolerance = 1e-8;
  int max_iterations = 200;
  int max_prox_iterations = 2000;
  double prox_weight = 1e-6;  // relative to the largest eigenvalue of H
};

/// Fills the KKT residual fields of sol for the given problem.
inline void compute_kkt_residuals(const QProblem& p, QSolution& sol) {
  VectorXd grad = p.H * sol.z + p.f;
  if (p.A_eq.rows() > 0) grad -= p.A_eq.transpose() * sol.y_eq;
  if (p.A_in.rows() > 0) grad -= p.A_in.transpose() * sol.mu_in;
  sol.stationarity = grad.size() ? grad.cwiseAbs().maxCoeff() : 0.0;
  double primal = 0.0, comp = 0.0, dual = 0.0;
  if (p.A_eq.rows() > 0) primal = (p.A_eq * sol.z - p.b_eq).cwiseAbs().maxCoeff();
  if (p.A_in.rows() > 0) {
    const VectorXd slack = p.A_in * sol.z - p.b_in;
    primal = std::max(primal, std::max(0.0, -slack.minCoeff()));
    dual = std::max(0.0, -sol.mu_in.minCoeff());
    comp = (sol.mu_in.array() * slack.array()).abs().maxCoeff();
  }
  sol.primal_residual = primal;
  sol.dual_residual = dual;
  sol.complementarity = comp;
}

class QpSolver {
 public:
  explicit QpSolver(QpOptions options = {}) : options_(options) {}

  const QpOptions& options() const { return options_; }

  QSolution solve(const QProblem& problem, const std::optional<VectorXd>& warm_start = std::nullopt) {
    problem.validate();
    const Eigen::Index m = problem.num_vars();
    std::vector<int> priority;
    if (warm_start) {
      require_size(*warm_start, m, "warm_start");
      if (problem.A_in.rows() > 0) {
        const VectorXd slack = problem.A_in * *warm_start - problem.b_in;
        for (Eigen::Index i = 0; i < slack.size(); ++i) {
          if (std::abs(slack(i)) <= 1e-6 * (1.0 + std::abs(problem.b_in(i)))) priority.push_back(static_cast<int>(i));
        }
      }
    }

    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(problem.H, Eigen::EigenvaluesOnly);
    const double lmax = m > 0 ? std::max(eig.eigenvalues().maxCoeff(), 0.0) : 0.0;
    const double lmin = m > 0 ? eig.eigenvalues().minCoeff() : 0.0;
    const double scale = std::max(1.0, lmax);

    QSolution sol;
    if (lmin > 1e-10 * scale) {
      sol = solve_strict(problem.H, problem.f, problem, priority);
    } else {
      sol = solve_proximal(problem, priority, options_.prox_weight * scale);
    }
    compute_kkt_residuals(problem, sol);
    if (sol.status == QStatus::kOptimal) polish(problem, sol);
    return sol;
  }

 private:
  static double kkt_error(const QSolution& s) {
    return std::max({s.stationarity, s.primal_residual, s.dual_residual, s.complementarity});
  }

  /// Re-solves the KKT system of the identified active set against the
  /// original data with iterative refinement. The dual active-set updates
  /// lose accuracy on badly scaled Hessians; this recovers it.
  void polish(const QProblem& p, QSolution& sol) const {
    const Eigen::Index m = p.num_vars();
    std::vector<int> eq_rows, in_rows;
    for (Eigen::Index i = 0; i < p.A_eq.rows(); ++i) {
      if (std::find(sol.pruned_equalities.begin(), sol.pruned_equalities.end(), i) == sol.pruned_equalities.end()) {
        eq_rows.push_back(static_cast<int>(i));
      }
    }
    for (Eigen::Index i = 0; i < p.A_in.rows(); ++i) {
      if (sol.mu_in(i) > 0.0) in_rows.push_back(static_cast<int>(i));
    }
    const auto na = static_cast<Eigen::Index>(eq_rows.size() + in_rows.size());
    MatrixXd a(na, m);
    VectorXd b(na);
    Eigen::Index r = 0;
    for (int i : eq_rows) {
      a.row(r) = p.A_eq.row(i);
      b(r++) = p.b_eq(i);
    }
    for (int i : in_rows) {
      a.row(r) = p.A_in.row(i);
      b(r++) = p.b_in(i);
    }
    MatrixXd kkt = MatrixXd::Zero(m + na, m + na);
    kkt.topLeftCorner(m, m) = p.H;
    kkt.topRightCorner(m, na) = -a.transpose();
    kkt.bottomLeftCorner(na, m) = a;
    VectorXd rhs(m + na);
    rhs << -p.f, b;
    const Eigen::FullPivLU<MatrixXd> lu(kkt);
    const bool regular = lu.isInvertible();
    Eigen::CompleteOrthogonalDecomposition<MatrixXd> cod;
    if (!regular) cod.compute(kkt);  // semidefinite H: the active-set system can be singular but consistent
    VectorXd x(m + na);
    x << sol.z, VectorXd::Zero(na);
    r = static_cast<Eigen::Index>(eq_rows.size());
    for (std::size_t k = 0; k < eq_rows.size(); ++k) x(m + static_cast<Eigen::Index>(k)) = sol.y_eq(eq_rows[k]);
    for (std::size_t k = 0; k < in_rows.size(); ++k) x(m + r + static_cast<Eigen::Index>(k)) = sol.mu_in(in_rows[k]);
    for (int it = 0; it < 3; ++it) {
      const VectorXd res = rhs - kkt * x;
      x += regular ? VectorXd(lu.solve(res)) : VectorXd(cod.solve(res));
    }

    QSolution cand = sol;
    cand.z = x.head(m);
    cand.y_eq.setZero();
    cand.mu_in.setZero();
    for (std::size_t k = 0; k < eq_rows.size(); ++k) cand.y_eq(eq_rows[k]) = x(m + static_cast<Eigen::Index>(k));
    for (std::size_t k = 0; k < in_rows.size(); ++k) cand.mu_in(in_rows[k]) = x(m + r + static_cast<Eigen::Index>(k));
    compute_kkt_residuals(p, cand);
    if (kkt_error(cand) < kkt_error(sol)) sol = cand;
  }

  struct Active {
    bool equality;
    int index;
  };

  QSolution solve_proximal(const QProblem& p, std::vector<int> priority, double rho) {
    const Eigen::Index m = p.num_vars();
    const MatrixXd g = p.H + rho * MatrixXd::Identity(m, m);
    VectorXd center = VectorXd::Zero(m);
    QSolution sol;
    int total_iterations = 0;
    for (int k = 0; k < options_.max_prox_iterations; ++k) {
      sol = solve_strict(g, p.f - rho * center, p, priority);
      total_iterations += sol.iterations;
      if (sol.status != QStatus::kOptimal) break;
      const double step = (sol.z - center).cwiseAbs().maxCoeff();
      if (!std::isfinite(sol.z.norm()) || sol.z.norm() > 1e12) {
        sol.status = QStatus::kUnbounded;
        break;
      }
      center = sol.z;
      priority.clear();
      for (Eigen::Index i = 0; i < sol.mu_in.size(); ++i) {
        if (sol.mu_in(i) > 0.0) priority.push_back(static_cast<int>(i));
      }
      if (rho * step <= 0.01 * options_.tolerance) break;
      if (k + 1 == options_.max_prox_iterations) sol.status = QStatus::kMaxIter;
    }
    sol.iterations = total_iterations;
    return sol;
  }

  QSolution solve_strict(const MatrixXd& g, const VectorXd& g0, const QProblem& p, const std::vector<int>& priority) {
    const Eigen::Index m = g.rows();
    const Eigen::Index n_eq = p.A_eq.rows();
    const Eigen::Index n_in = p.A_in.rows();
    const Eigen::LLT<MatrixXd> llt(g);
    const MatrixXd g_inv = llt.solve(MatrixXd::Identity(m, m));

    QSolution sol;
    sol.y_eq = VectorXd::Zero(n_eq);
    sol.mu_in = VectorXd::Zero(n_in);
    VectorXd x = -g_inv * g0;

    std::vector<Active> active;
    std::vector<double> u;  // multipliers of the active constraints
    MatrixXd n_mat(m, 0);   // active normals as columns
    MatrixXd h_op = g_inv;  // reduced inverse Hessian
    MatrixXd n_star(0, m);  // (N^T G^-1 N)^-1 N^T G^-1

    auto normal = [&](const Active& a) -> VectorXd {
      return a.equality ? VectorXd(p.A_eq.row(a.index).transpose()) : VectorXd(p.A_in.row(a.index).transpose());
    };
    auto rebuild = [&]() {
      n_mat.resize(m, static_cast<Eigen::Index>(active.size()));
      for (std::size_t k = 0; k < active.size(); ++k) n_mat.col(static_cast<Eigen::Index>(k)) = normal(active[k]);
      if (active.empty()) {
        h_op = g_inv;
        n_star.resize(0, m);
        return;
      }
      const MatrixXd ginv_n = g_inv * n_mat;
      const MatrixXd gram = n_mat.transpose() * ginv_n;
      n_star = gram.ldlt().solve(ginv_n.transpose());
      h_op = g_inv - ginv_n * n_star;
    };
    auto directions = [&](const VectorXd& np, VectorXd& z, VectorXd& r) {
      z = h_op * np;
      r = active.empty() ? VectorXd(0) : VectorXd(n_star * np);
    };
    auto degenerate = [&](const VectorXd& z, const VectorXd& np) {
      const double curvature = z.dot(np);
      return !(curvature > 1e-12 * np.dot(g_inv * np));
    };

    // Equality constraints first; they are never dropped.
    for (Eigen::Index i = 0; i < n_eq; ++i) {
      const VectorXd np = p.A_eq.row(i).transpose();
      const double s = np.dot(x) - p.b_eq(i);
      VectorXd z, r;
      directions(np, z, r);
      if (degenerate(z, np)) {
        if (std::abs(s) <= 1e-9 * (1.0 + std::abs(p.b_eq(i)))) {
          sol.pruned_equalities.push_back(static_cast<int>(i));
          continue;
        }
        sol.status = QStatus::kInfeasible;
        sol.z = x;
        return sol;
      }
      const double t = -s / z.dot(np);
      x += t * z;
      for (std::size_t k = 0; k < u.size(); ++k) u[k] -= t * r(static_cast<Eigen::Index>(k));
      active.push_back({true, static_cast<int>(i)});
      u.push_back(t);
      rebuild();
    }

    std::vector<bool> is_active(static_cast<std::size_t>(n_in), false);
    const double inf = std::numeric_limits<double>::infinity();
    int iterations = 0;
    auto finish = [&](QStatus status) {
      sol.status = status;
      sol.z = x;
      sol.iterations = iterations;
      for (std::size_t k = 0; k < active.size(); ++k) {
        if (active[k].equality) {
          sol.y_eq(active[k].index) = u[k];
        } else {
          sol.mu_in(active[k].index) = u[k];
        }
      }
      return sol;
    };

    while (true) {
      // Pick a violated inequality, preferring warm-start candidates.
      int chosen = -1;
      double worst = 0.0;
      for (int i : priority) {
        if (i < n_in && !is_active[i]) {
          const double s = p.A_in.row(i).dot(x) - p.b_in(i);
          if (s < -violation_tol(i, p)) {
            chosen = i;
            break;
          }
        }
      }
      if (chosen < 0) {
        for (Eigen::Index i = 0; i < n_in; ++i) {
          if (is_active[i]) continue;
          const double s = p.A_in.row(i).dot(x) - p.b_in(i);
          if (s < -violation_tol(static_cast<int>(i), p) && s < worst) {
            worst = s;
            chosen = static_cast<int>(i);
          }
        }
      }
      if (chosen < 0) return finish(QStatus::kOptimal);

      const VectorXd np = p.A_in.row(chosen).transpose();
      double u_new = 0.0;
      while (true) {
        if (++iterations > options_.max_iterations) return finish(QStatus::kMaxIter);
        VectorXd z, r;
        directions(np, z, r);
        // Dual step length: first active inequality whose multiplier hits zero.
        double t1 = inf;
        int drop = -1;
        for (std::size_t k = 0; k < active.size(); ++k) {
          const auto kk = static_cast<Eigen::Index>(k);
          if (active[k].equality || r(kk) <= 0.0) continue;
          const double ratio = u[k] / r(kk);
          if (ratio < t1) {
            t1 = ratio;
            drop = static_cast<int>(k);
          }
        }
        const double s = np.dot(x) - p.b_in(chosen);
        const double t2 = degenerate(z, np) ? inf : -s / z.dot(np);
        const double t = std::min(t1, t2);
        if (!std::isfinite(t)) return finish(QStatus::kInfeasible);

        if (std::isfinite(t2)) x += t * z;
        for (std::size_t k = 0; k < u.size(); ++k) u[k] -= t * r(static_cast<Eigen::Index>(k));
        u_new += t;
        if (t == t2) {
          active.push_back({false, chosen});
          u.push_back(u_new);
          is_active[chosen] = true;
          rebuild();
          break;
        }
        is_active[active[drop].index] = false;
        active.erase(active.begin() + drop);
        u.erase(u.begin() + drop);
        rebuild();
      }
    }
  }

  static double violation_tol(int i, const QProblem& p) {
    return 1e-11 * (1.0 + std::abs(p.b_in(i)) + p.A_in.row(i).cwiseAbs().sum());
  }

  QpOptions options_;
};

inline QSolution solve_qp(const QProblem& problem, const std::optional<VectorXd>& warm_start = std::nullopt,
                          const QpOptions& options = {}) {
  QpSolver solver(options);
  return solver.solve(problem, warm_start);
}

}  // namespace iip
