#pragma once

// Impact-invariant projection of velocity tracking errors.
//
// Joint space: the error is multiplied by Q = P^T P.
// Task space: the generalized velocity is corrected by the impulse-reachable
// velocity change that best explains the output velocity error,
//
//   qdot_lambda = M^-1 J_l^T (J_y M^-1 J_l^T)^+ (ydot_des - J_y v),
//
// and the projected error is ydot_des - J_y v - alpha * J_y qdot_lambda.

#include <cmath>

#include "iip/impact.hpp"

namespace iip {

/// Time window [t_switch - half_width, t_switch + half_width] around a nominal impact.
struct ProjectionWindow {
  double t_switch = 0.0;     // s
  double half_width = 0.025; // s
  double tau = 0.005;        // s, blending time constant

  void validate() const {
    if (!(half_width > 0.0) || !(tau > 0.0)) throw Error("projection window needs half_width > 0 and tau > 0");
  }
  double start() const { return t_switch - half_width; }
  double end() const { return t_switch + half_width; }
  bool contains(double t) const { return t >= start() && t <= end(); }
};

struct OutputTrackingError {
  std::string output;
  VectorXd ydot_des;
  VectorXd ydot;  // J_y v
  MatrixXd J_y;
  VectorXd ydot_proj;
};

/// Correction for explicit M, J_lambda, stacked J_y.
inline VectorXd task_space_correction(const MatrixXd& mass, const MatrixXd& j_lambda, const MatrixXd& j_y,
                                      const VectorXd& v, const VectorXd& ydot_des) {
  const Eigen::Index n = mass.rows();
  require_shape(mass, n, n, "M");
  require_shape(j_lambda, j_lambda.rows(), n, "J_lambda");
  require_shape(j_y, j_y.rows(), n, "J_y");
  require_size(v, n, "v");
  require_size(ydot_des, j_y.rows(), "ydot_des");
  if (j_lambda.rows() == 0 || j_y.rows() == 0) return VectorXd::Zero(n);
  const MatrixXd minv_jt = mass.ldlt().solve(j_lambda.transpose());
  const MatrixXd impulse = pseudo_inverse(j_y * minv_jt) * (ydot_des - j_y * v);
  return minv_jt * impulse;
}

inline VectorXd task_space_correction(const RobotModel& model, const VectorXd& q, const VectorXd& v,
                                      const MatrixXd& j_y, const VectorXd& ydot_des, const ContactSet& contacts) {
  detail::check_v(v);
  return task_space_correction(mass_matrix(model, q), contact_jacobian(model, q, contacts), j_y, v, ydot_des);
}

inline VectorXd projected_error(const VectorXd& ydot_des, const MatrixXd& j_y, const VectorXd& v,
                                const VectorXd& q_lambda, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error("alpha must lie in [0, 1]");
  require_size(ydot_des, j_y.rows(), "ydot_des");
  require_size(v, j_y.cols(), "v");
  require_size(q_lambda, j_y.cols(), "q_lambda");
  return ydot_des - j_y * v - alpha * (j_y * q_lambda);
}

inline OutputTrackingError make_tracking_error(std::string output, const VectorXd& ydot_des, const MatrixXd& j_y,
                                               const VectorXd& v, const VectorXd& q_lambda, double alpha) {
  return OutputTrackingError{std::move(output), ydot_des, j_y * v, j_y,
                             projected_error(ydot_des, j_y, v, q_lambda, alpha)};
}

/// 1 - exp(-(t - t_switch + T) / tau) inside the window, 0 outside.
inline double blend_alpha(double t, const ProjectionWindow& w) {
  if (t < w.start() || t > w.end()) return 0.0;
  return 1.0 - std::exp(-(t - w.start()) / w.tau);
}

/// Q (qdot_des - qdot).
inline VectorXd joint_projection_error(const MatrixXd& q_proj, const VectorXd& qdot_err) {
  require_shape(q_proj, qdot_err.size(), qdot_err.size(), "Q");
  return q_proj * qdot_err;
}

}  // namespace iip
