#pragma once

// Feedback controllers for the planar biped.
//
// Joint space:  u = u_ff + K_p q~ + K_d e_v, tracking the four joint angles.
// Operational space: a QP over (vdot, u, lambda) minimizing the weighted
// output acceleration error, subject to the manipulator equation, the stance
// constraint J vdot + Jdot v = 0, a linear friction cone and torque bounds.
//
// Commanded output accelerations use stabilizing PD feedback,
//
//   yddot_cmd = yddot_des + K_p (y_des - y) + K_d e_v,
//
// where e_v is the output velocity error ydot_des - ydot. Inside a window
// around each nominal impact the variants differ only in e_v:
//   default               e_v unchanged
//   no_derivative_window  e_v = 0
//   impact_invariant      e_v blended towards its impact-invariant projection
// The state machine is purely time-based; it never looks at actual contact.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "iip/model_io.hpp"
#include "iip/projection.hpp"
#include "iip/qp.hpp"
#include "iip/trajectory.hpp"

namespace iip {

enum class Variant { kDefault, kNoDerivativeWindow, kImpactInvariant };
enum class ControllerType { kJointSpace, kOsc };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::kDefault:
      return "default";
    case Variant::kNoDerivativeWindow:
      return "no_derivative_window";
    case Variant::kImpactInvariant:
      return "impact_invariant";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "default") return Variant::kDefault;
  if (s == "no_derivative_window" || s == "no_derivative") return Variant::kNoDerivativeWindow;
  if (s == "impact_invariant") return Variant::kImpactInvariant;
  throw ParseError("unknown controller variant '" + s + "'");
}

inline const char* to_string(ControllerType t) { return t == ControllerType::kJointSpace ? "joint_space" : "osc"; }

inline ControllerType parse_controller_type(const std::string& s) {
  if (s == "joint_space") return ControllerType::kJointSpace;
  if (s == "osc") return ControllerType::kOsc;
  throw ParseError("unknown controller type '" + s + "'");
}

/// A tracked output: either a selection of generalized coordinates or the
/// planar position of a model contact point.
struct OutputDef {
  enum class Kind { kCoordinates, kPoint };

  std::string name;
  Kind kind = Kind::kCoordinates;
  std::vector<int> coords;  // kCoordinates
  int point = -1;           // kPoint, model contact point id
  VectorXd kp, kd, weight;  // diagonals

  int dim() const { return kind == Kind::kCoordinates ? static_cast<int>(coords.size()) : 2; }

  void validate(const RobotModel& model) const {
    if (name.empty()) throw Error("output needs a name");
    if (kind == Kind::kCoordinates) {
      if (coords.empty()) throw Error("output '" + name + "' selects no coordinates");
      for (int c : coords) {
        if (c < 0 || c >= kNumCoords) throw Error("output '" + name + "' selects an invalid coordinate");
      }
    } else {
      contact_point(model, point);
    }
    for (const VectorXd* g : {&kp, &kd, &weight}) {
      if (g->size() != dim()) {
        throw DimensionError("output '" + name + "': gains need " + std::to_string(dim()) + " entries");
      }
      if ((g->array() < 0.0).any()) throw Error("output '" + name + "': gains and weights must be nonnegative");
    }
  }

  double value_of(const RobotModel& model, const VectorXd& q, int i) const {
    if (kind == Kind::kCoordinates) return q(coords[i]);
    return contact_point_position(model, q, point)(i);
  }

  VectorXd position(const RobotModel& model, const VectorXd& q) const {
    VectorXd y(dim());
    for (int i = 0; i < dim(); ++i) y(i) = value_of(model, q, i);
    return y;
  }

  MatrixXd jacobian(const RobotModel& model, const VectorXd& q) const {
    if (kind == Kind::kPoint) return contact_jacobian(model, q, ContactSet({point}));
    MatrixXd j = MatrixXd::Zero(dim(), kNumCoords);
    for (int i = 0; i < dim(); ++i) j(i, coords[i]) = 1.0;
    return j;
  }

  VectorXd jacobian_dot_v(const RobotModel& model, const VectorXd& q, const VectorXd& v) const {
    if (kind == Kind::kPoint) return contact_jacobian_dot_v(model, q, v, ContactSet({point}));
    return VectorXd::Zero(dim());
  }
};

struct ControllerSpec {
  ControllerType type = ControllerType::kJointSpace;
  Variant variant = Variant::kDefault;
  double window_half_width = 0.025;  // s
  double tau = 0.005;                // s
  VectorXd joint_kp = VectorXd::Constant(kNumJoints, 100.0);  // per actuator
  VectorXd joint_kd = VectorXd::Constant(kNumJoints, 10.0);
  std::vector<OutputDef> outputs;                         // operational space outputs
  std::map<int, std::vector<std::string>> mode_outputs;  // active outputs per mode id
  ModeSchedule schedule;                                  // taken from the reference when empty
  VectorXd torque_limit;                                  // empty: use the model's
  double reg_u = 1e-4;       // QP regularization on torques
  double reg_lambda = 1e-6;  // on contact forces
  double reg_vdot = 1e-8;    // on accelerations
  QpOptions qp;

  ProjectionWindow window_at(double t_switch) const { return ProjectionWindow{t_switch, window_half_width, tau}; }

  const OutputDef& output(const std::string& name) const {
    for (const auto& o : outputs) {
      if (o.name == name) return o;
    }
    throw Error("unknown controller output '" + name + "'");
  }

  void validate(const RobotModel& model) const {
    ProjectionWindow{0.0, window_half_width, tau}.validate();
    require_size(joint_kp, model.num_actuators(), "joint_kp");
    require_size(joint_kd, model.num_actuators(), "joint_kd");
    if ((joint_kp.array() < 0.0).any() || (joint_kd.array() < 0.0).any()) {
      throw Error("joint gains must be nonnegative");
    }
    std::set<std::string> names;
    for (const auto& o : outputs) {
      o.validate(model);
      if (!names.insert(o.name).second) throw Error("duplicate controller output '" + o.name + "'");
    }
    for (const auto& [id, list] : mode_outputs) {
      for (const auto& n : list) {
        if (!names.count(n)) throw Error("mode " + std::to_string(id) + " names unknown output '" + n + "'");
      }
    }
    if (type == ControllerType::kOsc && outputs.empty()) throw Error("operational space controller has no outputs");
    if (torque_limit.size() != 0) {
      require_size(torque_limit, model.num_actuators(), "torque_limit");
      if ((torque_limit.array() <= 0.0).any()) throw Error("torque limits must be positive");
    }
    if (!schedule.modes.empty()) schedule.validate_schedule("controller schedule");
    if (reg_u < 0.0 || reg_lambda < 0.0 || reg_vdot < 0.0) throw Error("QP regularization must be nonnegative");
  }
};

/// Planar walker defaults: pitch, hip height and swing foot position in OSC;
/// hip and knee angles in joint space.
inline ControllerSpec default_controller_spec(const RobotModel& model, ControllerType type,
                                              Variant variant = Variant::kDefault) {
  ControllerSpec spec;
  spec.type = type;
  spec.variant = variant;
  auto coord_output = [](std::string name, int coord, double kp, double kd) {
    OutputDef o;
    o.name = std::move(name);
    o.coords = {coord};
    o.kp = VectorXd::Constant(1, kp);
    o.kd = VectorXd::Constant(1, kd);
    o.weight = VectorXd::Ones(1);
    return o;
  };
  auto point_output = [&](const std::string& contact) {
    OutputDef o;
    o.name = contact;
    o.kind = OutputDef::Kind::kPoint;
    o.point = model.contact_index(contact);
    o.kp = VectorXd::Constant(2, 100.0);
    o.kd = VectorXd::Constant(2, 10.0);
    o.weight = VectorXd::Ones(2);
    return o;
  };
  spec.outputs = {coord_output("pitch", kPitch, 100.0, 10.0), coord_output("base_height", kZ, 100.0, 10.0),
                  point_output("left_foot"), point_output("right_foot")};
  spec.mode_outputs[0] = {"pitch", "base_height", "right_foot"};
  spec.mode_outputs[1] = {"pitch", "base_height", "left_foot"};
  return spec;
}

// ---------------------------------------------------------------------------
// State machine

struct FsmState {
  int mode_id = 0;
  ContactSet contacts;      // nominal stance contacts
  bool in_window = false;
  double alpha = 0.0;
  double t_switch = 0.0;    // nearest nominal impact
  ContactSet impacting;     // contacts established by that impact
};

/// Points present after an impact that were not present before it.
inline ContactSet impacting_contacts(const ModeSchedule& schedule, double t_switch) {
  const ContactSet& before = schedule.mode_at(t_switch, Side::kPre).contacts;
  const ContactSet& after = schedule.mode_at(t_switch, Side::kPost).contacts;
  std::vector<int> added;
  for (int p : after.points()) {
    if (!before.contains(p)) added.push_back(p);
  }
  return added.empty() ? after : ContactSet(added);
}

inline FsmState fsm_mode(const ControllerSpec& spec, double t) {
  const ModeSchedule& s = spec.schedule;
  if (s.modes.empty()) throw Error("controller schedule is empty");
  FsmState out;
  const ModeSpec& mode = s.mode_at(t);
  out.mode_id = mode.id;
  out.contacts = mode.contacts;
  const double ti = s.nearest_impact(t);
  if (std::isfinite(ti)) {
    out.t_switch = ti;
    const ProjectionWindow w = spec.window_at(ti);
    out.in_window = w.contains(t);
    out.alpha = blend_alpha(t, w);
    out.impacting = impacting_contacts(s, ti);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands

struct OutputError {
  std::string name;
  VectorXd y_err;      // y_des - y
  VectorXd ydot_err;   // ydot_des - ydot
  VectorXd ydot_used;  // velocity error actually fed back
};

struct ControlCommand {
  VectorXd u;         // applied torques, within limits
  VectorXd u_ff;      // feedforward part
  VectorXd lambda;    // contact forces (solved or least-squares)
  VectorXd vdot;      // accelerations (OSC) or reference accelerations (joint space)
  FsmState fsm;
  std::vector<OutputError> errors;
  bool saturated = false;
  bool fallback = false;  // QP failed, feedforward only
  QStatus qp_status = QStatus::kOptimal;
  int qp_iterations = 0;
};

inline VectorXd torque_limits(const RobotModel& model, const ControllerSpec& spec) {
  return spec.torque_limit.size() ? spec.torque_limit : model.torque_limit;
}

/// Least-squares constrained inverse dynamics: B u + J^T lambda = M vdot + h.
inline std::pair<VectorXd, VectorXd> inverse_dynamics(const RobotModel& model, const VectorXd& q, const VectorXd& v,
                                                      const VectorXd& vdot, const ContactSet& contacts) {
  const MatrixXd b = model.actuation_matrix();
  const MatrixXd j = contact_jacobian(model, q, contacts);
  MatrixXd a(kNumCoords, b.cols() + j.rows());
  a << b, j.transpose();
  const VectorXd rhs = mass_matrix(model, q) * vdot + bias_forces(model, q, v);
  const VectorXd x = a.completeOrthogonalDecomposition().solve(rhs);
  return {x.head(b.cols()), x.tail(j.rows())};
}

inline VectorXd clip_torques(const VectorXd& u, const VectorXd& limit, bool& saturated) {
  const VectorXd clipped = u.cwiseMax(-limit).cwiseMin(limit);
  saturated = (clipped - u).cwiseAbs().maxCoeff() > 0.0;
  return clipped;
}

/// Velocity error fed back by the joint-space law (full generalized vector).
inline VectorXd joint_velocity_feedback(const RobotModel& model, const VectorXd& q, const VectorXd& v_err,
                                        const ControllerSpec& spec, const FsmState& fsm) {
  if (!fsm.in_window || spec.variant == Variant::kDefault) return v_err;
  if (spec.variant == Variant::kNoDerivativeWindow) return VectorXd::Zero(v_err.size());
  const MatrixXd q_proj = invariant_basis(model, q, fsm.impacting).Q;
  return (1.0 - fsm.alpha) * v_err + fsm.alpha * joint_projection_error(q_proj, v_err);
}

inline ControlCommand joint_space_control(const RobotModel& model, const RobotState& state,
                                          const ReferenceTrajectory& ref, const ControllerSpec& spec,
                                          const FsmState& fsm) {
  const StateSample des = eval_state(ref, state.t);
  ControlCommand cmd;
  cmd.fsm = fsm;
  auto [u_ff, lambda] = inverse_dynamics(model, state.q, state.v, des.a, fsm.contacts);
  const VectorXd q_err = des.q - state.q;
  const VectorXd v_err = des.v - state.v;
  const VectorXd v_used = joint_velocity_feedback(model, state.q, v_err, spec, fsm);
  VectorXd u = u_ff;
  OutputError e{"joints", VectorXd(model.num_actuators()), VectorXd(model.num_actuators()),
                VectorXd(model.num_actuators())};
  for (int k = 0; k < model.num_actuators(); ++k) {
    const int j = model.actuated[k];
    u(k) += spec.joint_kp(k) * q_err(j) + spec.joint_kd(k) * v_used(j);
    e.y_err(k) = q_err(j);
    e.ydot_err(k) = v_err(j);
    e.ydot_used(k) = v_used(j);
  }
  cmd.errors.push_back(std::move(e));
  cmd.u_ff = u_ff;
  cmd.lambda = lambda;
  cmd.vdot = des.a;
  cmd.u = clip_torques(u, torque_limits(model, spec), cmd.saturated);
  return cmd;
}

// ---------------------------------------------------------------------------
// Operational space control

struct OutputReference {
  VectorXd y, ydot, yddot;
};

inline OutputReference output_reference(const RobotModel& model, const OutputDef& o, const StateSample& des) {
  OutputReference r;
  const MatrixXd j = o.jacobian(model, des.q);
  r.y = o.position(model, des.q);
  r.ydot = j * des.v;
  r.yddot = j * des.a + o.jacobian_dot_v(model, des.q, des.v);
  return r;
}

inline std::vector<const OutputDef*> active_outputs(const ControllerSpec& spec, int mode_id) {
  std::vector<const OutputDef*> out;
  auto it = spec.mode_outputs.find(mode_id);
  if (it == spec.mode_outputs.end()) {
    for (const auto& o : spec.outputs) out.push_back(&o);
  } else {
    for (const auto& n : it->second) out.push_back(&spec.output(n));
  }
  return out;
}

/// Per-output tracking errors, with the variant's treatment of the velocity error.
inline std::vector<OutputError> osc_output_errors(const RobotModel& model, const RobotState& state,
                                                  const StateSample& des, const ControllerSpec& spec,
                                                  const FsmState& fsm, const std::vector<const OutputDef*>& outs) {
  std::vector<OutputError> errs;
  int total = 0;
  for (const OutputDef* o : outs) total += o->dim();
  MatrixXd j_y(total, kNumCoords);
  VectorXd ydot_des(total);
  int row = 0;
  for (const OutputDef* o : outs) {
    const OutputReference r = output_reference(model, *o, des);
    const MatrixXd j = o->jacobian(model, state.q);
    OutputError e;
    e.name = o->name;
    e.y_err = r.y - o->position(model, state.q);
    e.ydot_err = r.ydot - j * state.v;
    e.ydot_used = e.ydot_err;
    j_y.middleRows(row, o->dim()) = j;
    ydot_des.segment(row, o->dim()) = r.ydot;
    row += o->dim();
    errs.push_back(std::move(e));
  }
  if (!fsm.in_window || spec.variant == Variant::kDefault) return errs;
  VectorXd used;
  if (spec.variant == Variant::kNoDerivativeWindow) {
    used = VectorXd::Zero(total);
  } else {
    const VectorXd q_lambda = task_space_correction(model, state.q, state.v, j_y, ydot_des, fsm.impacting);
    used = projected_error(ydot_des, j_y, state.v, q_lambda, fsm.alpha);
  }
  row = 0;
  for (auto& e : errs) {
    e.ydot_used = used.segment(row, e.ydot_err.size());
    row += static_cast<int>(e.ydot_err.size());
  }
  return errs;
}

/// The OSC quadratic program over z = (vdot, u, lambda).
inline QProblem build_osc_qp(const RobotModel& model, const RobotState& state, const StateSample& des,
                             const ControllerSpec& spec, const FsmState& fsm,
                             const std::vector<const OutputDef*>& outs, const std::vector<OutputError>& errs) {
  const int n = kNumCoords;
  const int nu = model.num_actuators();
  const int nl = fsm.contacts.dim();
  const int m = n + nu + nl;
  MatrixXd h = MatrixXd::Zero(m, m);
  VectorXd f = VectorXd::Zero(m);
  for (std::size_t i = 0; i < outs.size(); ++i) {
    const OutputDef& o = *outs[i];
    const OutputReference r = output_reference(model, o, des);
    const VectorXd cmd = r.yddot + o.kp.cwiseProduct(errs[i].y_err) + o.kd.cwiseProduct(errs[i].ydot_used);
    const MatrixXd j = o.jacobian(model, state.q);
    const VectorXd resid0 = o.jacobian_dot_v(model, state.q, state.v) - cmd;  // yddot - cmd = J vdot + resid0
    const MatrixXd wj = o.weight.asDiagonal() * j;
    h.topLeftCorner(n, n) += 2.0 * j.transpose() * wj;
    f.head(n) += 2.0 * wj.transpose() * resid0;
  }
  h.topLeftCorner(n, n).diagonal().array() += 2.0 * spec.reg_vdot;
  h.block(n, n, nu, nu).diagonal().array() += 2.0 * spec.reg_u;
  if (nl) h.bottomRightCorner(nl, nl).diagonal().array() += 2.0 * spec.reg_lambda;

  const MatrixXd mass = mass_matrix(model, state.q);
  const MatrixXd jc = contact_jacobian(model, state.q, fsm.contacts);
  MatrixXd a_eq = MatrixXd::Zero(n + nl, m);
  VectorXd b_eq(n + nl);
  a_eq.block(0, 0, n, n) = mass;
  a_eq.block(0, n, n, nu) = -model.actuation_matrix();
  if (nl) a_eq.block(0, n + nu, n, nl) = -jc.transpose();
  b_eq.head(n) = -bias_forces(model, state.q, state.v);
  if (nl) {
    a_eq.block(n, 0, nl, n) = jc;
    b_eq.tail(nl) = -contact_jacobian_dot_v(model, state.q, state.v, fsm.contacts);
  }

  const VectorXd limit = torque_limits(model, spec);
  const int n_in = 2 * nu + 3 * fsm.contacts.size();
  MatrixXd a_in = MatrixXd::Zero(n_in, m);
  VectorXd b_in(n_in);
  int r = 0;
  for (int k = 0; k < nu; ++k) {
    a_in(r, n + k) = 1.0;
    b_in(r++) = -limit(k);
    a_in(r, n + k) = -1.0;
    b_in(r++) = -limit(k);
  }
  for (int c = 0; c < fsm.contacts.size(); ++c) {
    const int t_idx = n + nu + 2 * c, n_idx = t_idx + 1;
    a_in(r, n_idx) = 1.0;  // lambda_n >= 0
    b_in(r++) = 0.0;
    a_in(r, n_idx) = model.mu;  // mu lambda_n - lambda_t >= 0
    a_in(r, t_idx) = -1.0;
    b_in(r++) = 0.0;
    a_in(r, n_idx) = model.mu;  // mu lambda_n + lambda_t >= 0
    a_in(r, t_idx) = 1.0;
    b_in(r++) = 0.0;
  }
  return QProblem(h, f, a_eq, b_eq, a_in, b_in);
}

inline ControlCommand osc_control(const RobotModel& model, const RobotState& state, const ReferenceTrajectory& ref,
                                  const ControllerSpec& spec, const FsmState& fsm, QpSolver& solver,
                                  const std::optional<VectorXd>& warm_start = std::nullopt) {
  const StateSample des = eval_state(ref, state.t);
  const auto outs = active_outputs(spec, fsm.mode_id);
  ControlCommand cmd;
  cmd.fsm = fsm;
  cmd.errors = osc_output_errors(model, state, des, spec, fsm, outs);
  const QProblem qp = build_osc_qp(model, state, des, spec, fsm, outs, cmd.errors);
  std::optional<VectorXd> warm;
  if (warm_start && warm_start->size() == qp.num_vars()) warm = warm_start;
  const QSolution sol = solver.solve(qp, warm);
  cmd.qp_status = sol.status;
  cmd.qp_iterations = sol.iterations;
  auto [u_ff, lambda_ff] = inverse_dynamics(model, state.q, state.v, des.a, fsm.contacts);
  cmd.u_ff = u_ff;
  const int nu = model.num_actuators();
  if (sol.status == QStatus::kOptimal) {
    cmd.vdot = sol.z.head(kNumCoords);
    cmd.lambda = sol.z.tail(fsm.contacts.dim());
    cmd.u = clip_torques(sol.z.segment(kNumCoords, nu), torque_limits(model, spec), cmd.saturated);
  } else {
    cmd.fallback = true;
    cmd.vdot = des.a;
    cmd.lambda = lambda_ff;
    cmd.u = clip_torques(u_ff, torque_limits(model, spec), cmd.saturated);
  }
  return cmd;
}

// ---------------------------------------------------------------------------

/// Stateful controller: owns the schedule binding and the QP warm start.
class Controller {
 public:
  Controller(RobotModel model, ReferenceTrajectory ref, ControllerSpec spec)
      : model_(std::move(model)), ref_(std::move(ref)), spec_(std::move(spec)), solver_(spec_.qp) {
    if (spec_.schedule.modes.empty()) spec_.schedule = static_cast<const ModeSchedule&>(ref_);
    spec_.validate(model_);
    if (!has_full_state(ref_)) throw Error("controller reference must contain every generalized coordinate");
  }

  ControlCommand compute(const RobotState& state) {
    const FsmState fsm = fsm_mode(spec_, state.t);
    if (spec_.type == ControllerType::kJointSpace) return joint_space_control(model_, state, ref_, spec_, fsm);
    ControlCommand cmd = osc_control(model_, state, ref_, spec_, fsm, solver_, warm_);
    if (!cmd.fallback) {
      warm_ = VectorXd(kNumCoords + cmd.u.size() + cmd.lambda.size());
      *warm_ << cmd.vdot, cmd.u, cmd.lambda;
    }
    return cmd;
  }

  void reset() { warm_.reset(); }

  const RobotModel& model() const { return model_; }
  const ReferenceTrajectory& reference() const { return ref_; }
  const ControllerSpec& spec() const { return spec_; }

 private:
  RobotModel model_;
  ReferenceTrajectory ref_;
  ControllerSpec spec_;
  QpSolver solver_;
  std::optional<VectorXd> warm_;
};

// ---------------------------------------------------------------------------
// Controller config file (JSON). Every key is optional; omitted keys keep
// the defaults of default_controller_spec.
//
//   {
//     "type": "joint_space",                  // or "osc"
//     "variant": "impact_invariant",          // default | no_derivative_window | impact_invariant
//     "window": {"half_width": 0.025, "tau": 0.005},          // s
//     "joint_gains": {"kp": 100.0, "kd": 10.0},               // scalar or one per actuator
//     "outputs": [ {"name": "pitch", "coords": ["pitch"], "kp": 100, "kd": 10, "weight": 1},
//                  {"name": "left_foot", "point": "left_foot", "kp": [100, 100], ...} ],
//     "mode_outputs": {"0": ["pitch", "base_height", "right_foot"], ...},
//     "regularization": {"u": 1e-4, "lambda": 1e-6, "vdot": 1e-8},
//     "torque_limit": 150.0,
//     "qp": {"tolerance": 1e-8, "max_iterations": 200}
//   }
//
// Mode times and contacts always come from the reference trajectory.

namespace detail {

inline VectorXd gain_vector(const nlohmann::json& j, int dim, const std::string& where) {
  if (j.is_number()) return VectorXd::Constant(dim, j.get<double>());
  if (j.is_array() && static_cast<int>(j.size()) == dim) {
    VectorXd v(dim);
    for (int i = 0; i < dim; ++i) {
      if (!j[i].is_number()) throw ParseError(where + ": expected numbers");
      v(i) = j[i].get<double>();
    }
    return v;
  }
  throw ParseError(where + ": expected a number or an array of " + std::to_string(dim) + " numbers");
}

}  // namespace detail

inline ControllerSpec controller_spec_from_json(const nlohmann::json& j, const RobotModel& model) {
  detail::reject_unknown_keys(j,
                              {"type", "variant", "window", "joint_gains", "outputs", "mode_outputs",
                               "regularization", "torque_limit", "qp"},
                              "controller");
  const ControllerType type =
      j.contains("type") ? parse_controller_type(j.at("type").get<std::string>()) : ControllerType::kJointSpace;
  ControllerSpec spec = default_controller_spec(model, type);
  if (j.contains("variant")) spec.variant = parse_variant(j.at("variant").get<std::string>());
  if (j.contains("window")) {
    const auto& w = j.at("window");
    detail::reject_unknown_keys(w, {"half_width", "tau"}, "controller.window");
    if (w.contains("half_width")) spec.window_half_width = detail::number_field(w, "half_width", "controller.window");
    if (w.contains("tau")) spec.tau = detail::number_field(w, "tau", "controller.window");
  }
  if (j.contains("joint_gains")) {
    const auto& g = j.at("joint_gains");
    detail::reject_unknown_keys(g, {"kp", "kd"}, "controller.joint_gains");
    if (g.contains("kp")) spec.joint_kp = detail::gain_vector(g.at("kp"), model.num_actuators(), "joint_gains.kp");
    if (g.contains("kd")) spec.joint_kd = detail::gain_vector(g.at("kd"), model.num_actuators(), "joint_gains.kd");
  }
  if (j.contains("outputs")) {
    spec.outputs.clear();
    spec.mode_outputs.clear();
    for (std::size_t i = 0; i < j.at("outputs").size(); ++i) {
      const auto& o = j.at("outputs")[i];
      const std::string where = "controller.outputs[" + std::to_string(i) + "]";
      detail::reject_unknown_keys(o, {"name", "coords", "point", "kp", "kd", "weight"}, where);
      OutputDef def;
      if (!o.contains("name")) throw ParseError(where + ": missing key 'name'");
      def.name = o.at("name").get<std::string>();
      if (o.contains("coords") == o.contains("point")) {
        throw ParseError(where + ": give exactly one of 'coords' or 'point'");
      }
      if (o.contains("coords")) {
        for (const auto& c : o.at("coords")) def.coords.push_back(detail::coord_by_name(c.get<std::string>(), where));
      } else {
        def.kind = OutputDef::Kind::kPoint;
        try {
          def.point = model.contact_index(o.at("point").get<std::string>());
        } catch (const Error& e) {
          throw ParseError(where + ": " + e.what());
        }
      }
      def.kp = o.contains("kp") ? detail::gain_vector(o.at("kp"), def.dim(), where + ".kp")
                                : VectorXd::Constant(def.dim(), 100.0);
      def.kd = o.contains("kd") ? detail::gain_vector(o.at("kd"), def.dim(), where + ".kd")
                                : VectorXd::Constant(def.dim(), 10.0);
      def.weight = o.contains("weight") ? detail::gain_vector(o.at("weight"), def.dim(), where + ".weight")
                                        : VectorXd::Ones(def.dim());
      spec.outputs.push_back(std::move(def));
    }
  }
  if (j.contains("mode_outputs")) {
    spec.mode_outputs.clear();
    for (const auto& [key, list] : j.at("mode_outputs").items()) {
      int id = 0;
      try {
        id = std::stoi(key);
      } catch (const std::exception&) {
        throw ParseError("controller.mode_outputs: mode key '" + key + "' is not an integer");
      }
      spec.mode_outputs[id] = list.get<std::vector<std::string>>();
    }
  }
  if (j.contains("regularization")) {
    const auto& r = j.at("regularization");
    detail::reject_unknown_keys(r, {"u", "lambda", "vdot"}, "controller.regularization");
    if (r.contains("u")) spec.reg_u = detail::number_field(r, "u", "controller.regularization");
    if (r.contains("lambda")) spec.reg_lambda = detail::number_field(r, "lambda", "controller.regularization");
    if (r.contains("vdot")) spec.reg_vdot = detail::number_field(r, "vdot", "controller.regularization");
  }
  if (j.contains("torque_limit")) {
    spec.torque_limit = detail::gain_vector(j.at("torque_limit"), model.num_actuators(), "controller.torque_limit");
  }
  if (j.contains("qp")) {
    const auto& q = j.at("qp");
    detail::reject_unknown_keys(q, {"tolerance", "max_iterations"}, "controller.qp");
    if (q.contains("tolerance")) spec.qp.tolerance = detail::number_field(q, "tolerance", "controller.qp");
    if (q.contains("max_iterations")) spec.qp.max_iterations = q.at("max_iterations").get<int>();
  }
  try {
    spec.validate(model);
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError(std::string("controller: ") + e.what());
  }
  return spec;
}

inline ControllerSpec load_controller_spec(const std::string& path, const RobotModel& model) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open controller file '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("controller file '" + path + "': " + e.what());
  }
  return controller_spec_from_json(j, model);
}

}  // namespace iip
