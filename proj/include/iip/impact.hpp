#pragma once

// Rigid, no-slip impacts and the impact-invariant subspace.
//
// An impact at configuration q applies an impulse Lambda through the contact
// Jacobian J:  M (v+ - v-) = J^T Lambda,  J v+ = 0.  Velocities in the left
// nullspace of M^-1 J^T are unchanged by *any* impulse; P spans that space.

#include <sstream>

#include "iip/model.hpp"

namespace iip {

struct ImpactResult {
  VectorXd impulse;        // N s, one entry per constraint row
  VectorXd post_velocity;  // v+
  double energy_dissipated = 0.0;
};

struct InvariantBasis {
  MatrixXd P;  // (n - c) x n, orthonormal rows
  MatrixXd Q;  // n x n, P^T P
  VectorXd q;
  ContactSet contacts;
};

/// Quadratic cost-to-go x^T S x with x = (q, v).
struct CostToGo {
  MatrixXd S;
  double t = 0.0;
};

namespace detail {

inline std::string describe_rank_deficiency(const MatrixXd& gram, const ContactSet* contacts) {
  // Report which constraint rows are (numerically) linear combinations of earlier ones.
  std::ostringstream os;
  os << "singular contact Gram matrix (rank " << numerical_rank(gram) << " < " << gram.rows()
     << "); redundant constraint rows:";
  MatrixXd basis(0, gram.cols());
  for (Eigen::Index r = 0; r < gram.rows(); ++r) {
    MatrixXd trial(basis.rows() + 1, gram.cols());
    trial << basis, gram.row(r);
    if (numerical_rank(trial) <= basis.rows()) {
      os << " " << r;
      if (contacts != nullptr) {
        os << " (point " << contacts->points()[r / 2] << (r % 2 == 0 ? ", tangential)" : ", normal)");
      }
    } else {
      basis = trial;
    }
  }
  return os.str();
}

}  // namespace detail

/// Lambda = -(J M^-1 J^T)^-1 J v- for explicit M and J.
inline VectorXd solve_impulse(const MatrixXd& mass, const MatrixXd& jac, const VectorXd& v_minus,
                              const ContactSet* contacts = nullptr) {
  require_shape(mass, jac.cols(), jac.cols(), "M");
  require_size(v_minus, jac.cols(), "v_minus");
  if (jac.rows() == 0) return VectorXd::Zero(0);
  const MatrixXd gram = jac * mass.ldlt().solve(jac.transpose());
  if (numerical_rank(gram) < gram.rows()) {
    throw SingularContactError(detail::describe_rank_deficiency(gram, contacts));
  }
  return -gram.ldlt().solve(jac * v_minus);
}

/// v+ = v- + M^-1 J^T Lambda for explicit M and J.
inline ImpactResult apply_reset_map(const MatrixXd& mass, const MatrixXd& jac, const VectorXd& v_minus,
                                    const ContactSet* contacts = nullptr) {
  ImpactResult out;
  out.impulse = solve_impulse(mass, jac, v_minus, contacts);
  out.post_velocity = v_minus;
  if (jac.rows() > 0) out.post_velocity += mass.ldlt().solve(jac.transpose() * out.impulse);
  out.energy_dissipated = 0.5 * v_minus.dot(mass * v_minus) - 0.5 * out.post_velocity.dot(mass * out.post_velocity);
  return out;
}

/// Orthonormal rows spanning the left nullspace of M^-1 J^T.
inline MatrixXd invariant_subspace(const MatrixXd& mass, const MatrixXd& jac) {
  const Eigen::Index n = mass.rows();
  require_shape(jac, jac.rows(), n, "J");
  if (jac.rows() == 0) return MatrixXd::Identity(n, n);
  const MatrixXd j_minv = mass.ldlt().solve(jac.transpose()).transpose();
  Eigen::JacobiSVD<MatrixXd> svd(j_minv, Eigen::ComputeFullV);
  const VectorXd& s = svd.singularValues();
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > kRankTolerance * s(0)) ++rank;
  }
  if (rank < jac.rows()) {
    throw SingularContactError("rank-deficient contact Jacobian (rank " + std::to_string(rank) + " < " +
                               std::to_string(jac.rows()) + "); prune dependent contacts");
  }
  return svd.matrixV().rightCols(n - rank).transpose();
}

/// Lambda = -(J M^-1 J^T)^-1 J v-.
inline VectorXd solve_impulse(const RobotModel& model, const VectorXd& q, const VectorXd& v_minus,
                              const ContactSet& contacts) {
  detail::check_v(v_minus);
  return solve_impulse(mass_matrix(model, q), contact_jacobian(model, q, contacts), v_minus, &contacts);
}

/// Rigid reset map: q+ = q-, v+ = v- + M^-1 J^T Lambda.
inline ImpactResult apply_reset_map(const RobotModel& model, const RobotState& state, const ContactSet& contacts) {
  detail::check_v(state.v);
  return apply_reset_map(mass_matrix(model, state.q), contact_jacobian(model, state.q, contacts), state.v,
                         &contacts);
}

/// Velocity block of the reset map, I - M^-1 J^T (J M^-1 J^T)^-1 J.
inline MatrixXd reset_velocity_projector(const RobotModel& model, const VectorXd& q, const ContactSet& contacts) {
  const MatrixXd jac = contact_jacobian(model, q, contacts);
  if (jac.rows() == 0) return MatrixXd::Identity(kNumCoords, kNumCoords);
  const MatrixXd mass = mass_matrix(model, q);
  const MatrixXd minv_jt = mass.ldlt().solve(jac.transpose());
  const MatrixXd gram = jac * minv_jt;
  if (numerical_rank(gram) < gram.rows()) {
    throw SingularContactError(detail::describe_rank_deficiency(gram, &contacts));
  }
  return MatrixXd::Identity(kNumCoords, kNumCoords) - minv_jt * gram.ldlt().solve(jac);
}

/// Orthonormal basis of the impact-invariant subspace at q.
inline InvariantBasis invariant_basis(const RobotModel& model, const VectorXd& q, const ContactSet& contacts) {
  InvariantBasis out;
  out.q = q;
  out.contacts = contacts;
  const MatrixXd jac = contact_jacobian(model, q, contacts);
  out.P = invariant_subspace(mass_matrix(model, q), jac);
  out.Q = out.P.transpose() * out.P;
  return out;
}

/// Total angular momentum about a world point (counter-clockwise positive).
inline double angular_momentum_about_point(const RobotModel& model, const RobotState& state, const Vec2& point) {
  detail::check_v(state.v);
  double l = 0.0;
  for (int i = 0; i < kNumLinks; ++i) {
    const Vec2 local = detail::com_local(model, i);
    const Vec2 r = point_position(model, state.q, i, local) - point;
    const Vec2 vel = point_jacobian(model, state.q, i, local) * state.v;
    l += model.links[i].mass * cross2(r, vel) + model.links[i].inertia * detail::angle_row(i).dot(state.v);
  }
  return l;
}

/// Jacobian of the full-state reset x = (q, v) -> (q, v+). The q-dependence of
/// v+ is taken by central differences with step fd_step.
inline MatrixXd linearize_reset_map(const RobotModel& model, const RobotState& state, const ContactSet& contacts,
                                    double fd_step = 1e-6) {
  constexpr int n = kNumCoords;
  MatrixXd r = MatrixXd::Zero(2 * n, 2 * n);
  r.topLeftCorner(n, n).setIdentity();
  r.bottomRightCorner(n, n) = reset_velocity_projector(model, state.q, contacts);
  if (contacts.empty()) return r;
  for (int k = 0; k < n; ++k) {
    RobotState plus = state, minus = state;
    plus.q(k) += fd_step;
    minus.q(k) -= fd_step;
    r.block(n, k, n, 1) = (reset_velocity_projector(model, plus.q, contacts) * state.v -
                           reset_velocity_projector(model, minus.q, contacts) * state.v) /
                          (2.0 * fd_step);
  }
  return r;
}

/// S(t-) = R^T S(t+) R, symmetrized.
inline CostToGo map_cost_to_go(const CostToGo& s_plus, const MatrixXd& r_hat) {
  const Eigen::Index dim = s_plus.S.rows();
  require_shape(s_plus.S, dim, dim, "S_plus");
  require_shape(r_hat, dim, dim, "R_hat");
  return CostToGo{symmetrize(r_hat.transpose() * s_plus.S * r_hat), s_plus.t};
}

}  // namespace iip
