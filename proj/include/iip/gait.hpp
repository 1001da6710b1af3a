#pragma once

// Periodic walking reference for the planar biped.
//
// One step is designed in task space (stance foot pinned, hip position,
// torso pitch, swing foot position), mapped to generalized coordinates by
// closed-form leg inverse kinematics and fitted with quintic Hermite pieces.
// The second step mirrors the first. The post-impact velocity of each step
// is the rigid reset of the previous pre-impact velocity, so the reference
// is reset-consistent by construction.

#include <cmath>
#include <string>

#include "iip/trajectory.hpp"

namespace iip {

struct GaitParams {
  double step_length = 0.3;   // m, hip travel over one period (two steps)
  double period = 0.8;        // s, two steps
  double clearance = 0.05;    // m, swing foot apex height
  double hip_height = 0.0;    // m, 0 picks a height from the leg length
  double leg_extension = 0.96;  // fraction of full leg reach used by the auto hip height
  double torso_pitch = 0.0;   // rad
  double landing_speed = 0.1; // m/s, vertical swing foot speed at touchdown
  double knot_spacing = 0.005;  // s

  void validate() const {
    if (!(period > 0.0)) throw Error("gait period must be > 0 s");
    if (!(step_length >= 0.0)) throw Error("gait step_length must be >= 0 m");
    if (!(clearance >= 0.0)) throw Error("gait clearance must be >= 0 m");
    if (!(hip_height >= 0.0)) throw Error("gait hip_height must be >= 0 m");
    if (!(leg_extension > 0.0 && leg_extension < 1.0)) throw Error("gait leg_extension must lie in (0, 1)");
    if (!(landing_speed >= 0.0)) throw Error("gait landing_speed must be >= 0 m/s");
    if (!(knot_spacing > 0.0)) throw Error("gait knot_spacing must be > 0 s");
  }
};

struct LegGeometry {
  double thigh = 0.0;   // m, hip to knee
  double shank = 0.0;   // m, knee to foot
  double foot_angle = 0.0;  // rad, direction of the foot offset in the shank frame
  double reach() const { return thigh + shank; }
};

inline LegGeometry leg_geometry(const RobotModel& model, bool left) {
  const auto& foot = model.contacts.at(model.contact_index(left ? "left_foot" : "right_foot"));
  const int thigh = left ? kLeftThigh : kRightThigh;
  const int shank = left ? kLeftShank : kRightShank;
  if (foot.link != shank) throw Error("gait generation expects each foot on its shank");
  const Vec2 knee = detail::distal_local(model, thigh);
  LegGeometry g;
  g.thigh = knee.norm();
  g.shank = foot.offset.norm();
  g.foot_angle = std::atan2(foot.offset.x(), -foot.offset.y());
  if (std::abs(std::atan2(knee.x(), -knee.y())) > 1e-12) throw Error("gait generation expects a straight thigh");
  return g;
}

/// Hip and knee angles placing the foot at `foot` (world) for a hip at `hip`.
/// The knee bends backwards (negative angle).
inline std::array<double, 2> leg_inverse_kinematics(const LegGeometry& g, const Vec2& hip, const Vec2& foot,
                                                    double pitch) {
  const Vec2 r = foot - hip;
  const double dist = r.norm();
  if (dist > g.reach() - 1e-9) {
    throw Error("hip-to-foot distance " + std::to_string(dist) + " m exceeds the leg reach " +
                std::to_string(g.reach()) + " m");
  }
  if (dist < std::abs(g.thigh - g.shank) + 1e-9) {
    throw Error("hip-to-foot distance " + std::to_string(dist) + " m is below the folded leg length");
  }
  const double c = (dist * dist - g.thigh * g.thigh - g.shank * g.shank) / (2.0 * g.thigh * g.shank);
  const double bend = -std::acos(std::clamp(c, -1.0, 1.0));
  const Vec2 u(g.shank * std::sin(bend), -g.thigh - g.shank * std::cos(bend));
  const double thigh_angle = std::atan2(r.x(), -r.y()) - std::atan2(u.x(), -u.y());
  return {thigh_angle - pitch, bend - g.foot_angle};
}

/// Swaps the legs of a configuration or velocity; base coordinates are unchanged.
inline VectorXd mirror_legs(const VectorXd& q) {
  VectorXd m = q;
  m(kLeftHip) = q(kRightHip);
  m(kLeftKnee) = q(kRightKnee);
  m(kRightHip) = q(kLeftHip);
  m(kRightKnee) = q(kLeftKnee);
  return m;
}

namespace detail {

/// Task coordinates for one step with the left leg in stance:
/// w = (stance foot x, z, hip x, z, pitch, swing foot x, z).
struct StepTask {
  static constexpr int kDim = 7;
  std::array<PiecewisePolynomial, kDim> w;

  Eigen::Matrix<double, kDim, 3> eval(double t, Side side) const {
    Eigen::Matrix<double, kDim, 3> out;
    for (int i = 0; i < kDim; ++i) {
      const OutputSample s = w[i].eval(t, side);
      out.row(i) << s.y, s.ydot, s.yddot;
    }
    return out;
  }
};

inline MatrixXd task_jacobian(const RobotModel& model, const VectorXd& q) {
  MatrixXd j = MatrixXd::Zero(7, kNumCoords);
  j.topRows(2) = contact_jacobian(model, q, ContactSet({model.contact_index("left_foot")}));
  j(2, kX) = 1.0;
  j(3, kZ) = 1.0;
  j(4, kPitch) = 1.0;
  j.bottomRows(2) = contact_jacobian(model, q, ContactSet({model.contact_index("right_foot")}));
  return j;
}

inline VectorXd task_bias(const RobotModel& model, const VectorXd& q, const VectorXd& v) {
  VectorXd b = VectorXd::Zero(7);
  b.head(2) = contact_jacobian_dot_v(model, q, v, ContactSet({model.contact_index("left_foot")}));
  b.tail(2) = contact_jacobian_dot_v(model, q, v, ContactSet({model.contact_index("right_foot")}));
  return b;
}

inline VectorXd task_to_q(const RobotModel& model, const VectorXd& w) {
  const LegGeometry left = leg_geometry(model, true);
  const LegGeometry right = leg_geometry(model, false);
  const Vec2 hip(w(2), w(3));
  VectorXd q(kNumCoords);
  q(kX) = w(2);
  q(kZ) = w(3);
  q(kPitch) = w(4);
  const auto l = leg_inverse_kinematics(left, hip, Vec2(w(0), w(1)), w(4));
  const auto r = leg_inverse_kinematics(right, hip, Vec2(w(5), w(6)), w(4));
  q(kLeftHip) = l[0];
  q(kLeftKnee) = l[1];
  q(kRightHip) = r[0];
  q(kRightKnee) = r[1];
  return q;
}

/// Full state (q, v, vdot) from task position, velocity and acceleration.
inline StateSample task_to_state(const RobotModel& model, const Eigen::Matrix<double, 7, 3>& w) {
  StateSample s;
  s.q = task_to_q(model, w.col(0));
  const MatrixXd j = task_jacobian(model, s.q);
  Eigen::FullPivLU<MatrixXd> lu(j);
  if (!lu.isInvertible()) throw Error("gait passes through a kinematic singularity (straight leg)");
  s.v = lu.solve(VectorXd(w.col(1)));
  s.a = lu.solve(VectorXd(w.col(2)) - task_bias(model, s.q, s.v));
  return s;
}

}  // namespace detail

/// Generates a two-step periodic walking reference (left stance, then right).
inline ReferenceTrajectory generate_walking_gait(const RobotModel& model, const GaitParams& params) {
  params.validate();
  model.validate();
  const int left_id = model.contact_index("left_foot");
  const int right_id = model.contact_index("right_foot");
  const LegGeometry left = leg_geometry(model, true);
  const LegGeometry right = leg_geometry(model, false);
  const double reach = std::min(left.reach(), right.reach());

  const bool standing = params.step_length == 0.0;
  const double t_step = 0.5 * params.period;
  const double d = 0.5 * params.step_length;  // hip advance per step
  const double clearance = standing ? 0.0 : params.clearance;
  const double landing = standing ? 0.0 : params.landing_speed;

  // The hip sits above the midpoint of the feet at double support.
  const double half_span = 0.5 * d;
  double h = params.hip_height;
  if (h == 0.0) {
    const double extended = params.leg_extension * reach;
    if (half_span >= extended) {
      throw Error("step_length " + std::to_string(params.step_length) + " m is too long for the leg reach " +
                  std::to_string(reach) + " m");
    }
    h = std::sqrt(extended * extended - half_span * half_span);
  }
  if (std::hypot(half_span, h) > reach - 1e-6) {
    throw Error("step_length " + std::to_string(params.step_length) + " m with hip height " + std::to_string(h) +
                " m exceeds the leg reach " + std::to_string(reach) + " m");
  }
  if (clearance >= h - std::abs(left.thigh - left.shank)) {
    throw Error("clearance " + std::to_string(clearance) + " m is unreachable at hip height " + std::to_string(h) +
                " m");
  }

  // Knot grid over one step, with an even segment count so the swing apex is a knot.
  int n_seg = static_cast<int>(std::ceil(t_step / params.knot_spacing));
  if (n_seg % 2) ++n_seg;
  std::vector<double> knots(n_seg + 1);
  for (int k = 0; k <= n_seg; ++k) knots[k] = t_step * k / n_seg;

  // Pre-impact state: hip moving at the mean speed, swing foot landing vertically.
  const double v_hip = d / t_step;
  Eigen::Matrix<double, 7, 3> w_end;
  w_end.col(0) << 0.0, 0.0, half_span, h, params.torso_pitch, d, 0.0;
  w_end.col(1) << 0.0, 0.0, v_hip, 0.0, 0.0, 0.0, -landing;
  w_end.col(2).setZero();
  const StateSample pre = detail::task_to_state(model, w_end);

  // Post-impact state, relabelled so that the left leg is again in stance.
  RobotState s_pre{pre.q, pre.v, t_step};
  const VectorXd v_post = apply_reset_map(model, s_pre, ContactSet({right_id})).post_velocity;
  VectorXd q0 = mirror_legs(pre.q);
  q0(kX) -= d;
  const VectorXd v0 = mirror_legs(v_post);
  const VectorXd wdot0 = detail::task_jacobian(model, q0) * v0;

  Eigen::Matrix<double, 7, 1> w_start;
  w_start << 0.0, 0.0, -half_span, h, params.torso_pitch, -d, 0.0;

  auto cubic = [&](double y0, double v0_, double y1, double v1) {
    return PiecewisePolynomial({0.0, t_step}, {PiecewisePolynomial::cubic_hermite(t_step, y0, v0_, y1, v1)});
  };
  detail::StepTask task;
  task.w[0] = cubic(0.0, 0.0, 0.0, 0.0);
  task.w[1] = cubic(0.0, 0.0, 0.0, 0.0);
  task.w[2] = cubic(w_start(2), wdot0(2), w_end(2, 0), w_end(2, 1));
  task.w[3] = cubic(h, wdot0(3), h, 0.0);
  task.w[4] = cubic(params.torso_pitch, wdot0(4), params.torso_pitch, 0.0);
  task.w[5] = cubic(-d, wdot0(5), d, 0.0);
  const double half = 0.5 * t_step;
  task.w[6] = PiecewisePolynomial(
      {0.0, half, t_step}, {PiecewisePolynomial::cubic_hermite(half, 0.0, wdot0(6), clearance, 0.0),
                            PiecewisePolynomial::cubic_hermite(half, clearance, 0.0, 0.0, -landing)});

  // Exact one-sided state samples at the knots of the first step.
  std::vector<StateSample> left_of(n_seg + 1), right_of(n_seg + 1);
  for (int k = 0; k <= n_seg; ++k) {
    right_of[k] = detail::task_to_state(model, task.eval(knots[k], Side::kPre));
    left_of[k] = detail::task_to_state(model, task.eval(knots[k], Side::kPost));
  }
  // Pin the endpoints to the exact impact data so the reset relation holds to round-off.
  left_of[0].q = q0;
  left_of[0].v = v0;
  right_of[n_seg].q = pre.q;
  right_of[n_seg].v = pre.v;

  ReferenceTrajectory ref;
  std::vector<double> breaks(2 * n_seg + 1);
  for (int k = 0; k <= 2 * n_seg; ++k) breaks[k] = (k <= n_seg) ? knots[k] : t_step + knots[k - n_seg];
  breaks[2 * n_seg] = params.period;
  for (int i = 0; i < kNumCoords; ++i) {
    std::vector<std::vector<double>> coeffs;
    coeffs.reserve(2 * n_seg);
    for (int step = 0; step < 2; ++step) {
      for (int k = 0; k < n_seg; ++k) {
        const StateSample& a = left_of[k];
        const StateSample& b = right_of[k + 1];
        VectorXd qa = a.q, va = a.v, aa = a.a, qb = b.q, vb = b.v, ab = b.a;
        if (step == 1) {
          qa = mirror_legs(qa);
          va = mirror_legs(va);
          aa = mirror_legs(aa);
          qb = mirror_legs(qb);
          vb = mirror_legs(vb);
          ab = mirror_legs(ab);
        }
        // Shift so the hip starts at x = 0.
        qa(kX) += half_span + step * d;
        qb(kX) += half_span + step * d;
        coeffs.push_back(PiecewisePolynomial::quintic_hermite(breaks[step * n_seg + k + 1] - breaks[step * n_seg + k],
                                                              {qa(i), va(i), aa(i)}, {qb(i), vb(i), ab(i)}));
      }
    }
    ref.outputs[kCoordNames[i]] = PiecewisePolynomial(breaks, coeffs);
  }
  ref.period = params.period;
  ref.period_offsets["x"] = params.step_length;
  ref.modes = {ModeSpec{0, "left_stance", 0.0, t_step, ContactSet({left_id})},
               ModeSpec{1, "right_stance", t_step, params.period, ContactSet({right_id})}};
  ref.impact_times = {t_step, params.period};
  ref.mirror_pairs = {{"left_hip", "right_hip"}, {"left_knee", "right_knee"}};
  ref.validate();
  return ref;
}

}  // namespace iip
