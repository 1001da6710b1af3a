#pragma once

// Closed-loop simulation of the planar biped.
//
// Two ground models:
//   rigid_hybrid  stance points are bilateral holonomic constraints
//                 (Baumgarte-stabilized); touchdowns are located by
//                 bisection and resolved with the rigid no-slip reset map;
//                 a stance point lifts off when its normal force goes
//                 negative.
//   compliant     penalty springs with velocity-proportional damping and
//                 regularized Coulomb friction. The stiffness is chosen so
//                 the full robot weight on one foot sinks it by the
//                 penetration allowance.
//
// Both integrate with fixed-step RK4. The controller is sampled with a
// zero-order hold and its state machine stays purely time-based.

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "iip/control.hpp"
#include "iip/impact.hpp"

namespace iip {

// ---------------------------------------------------------------------------
// Terrain

/// Piecewise-constant ground height. Each step raises (or lowers) the ground
/// to `height` for x >= x_start, until the next step.
struct TerrainStep {
  double x_start = 0.0;  // m
  double height = 0.0;   // m
};

struct Terrain {
  std::vector<TerrainStep> steps;  // sorted by x_start

  double height(double x) const {
    double h = 0.0;
    for (const auto& s : steps) {
      if (x >= s.x_start) h = s.height;
    }
    return h;
  }

  void validate() const {
    for (std::size_t i = 0; i < steps.size(); ++i) {
      if (!std::isfinite(steps[i].x_start) || !std::isfinite(steps[i].height)) {
        throw Error("terrain step " + std::to_string(i) + " is not finite");
      }
      if (i > 0 && steps[i].x_start <= steps[i - 1].x_start) {
        throw Error("terrain steps must be sorted by x_start");
      }
    }
  }

  /// Signed height of a point above the ground directly below it.
  double clearance(const Vec2& p) const { return p.y() - height(p.x()); }
};

// ---------------------------------------------------------------------------
// Configuration and results

enum class ContactModel { kRigidHybrid, kCompliant };

inline const char* to_string(ContactModel m) { return m == ContactModel::kRigidHybrid ? "rigid_hybrid" : "compliant"; }

inline ContactModel parse_contact_model(const std::string& s) {
  if (s == "rigid_hybrid" || s == "rigid") return ContactModel::kRigidHybrid;
  if (s == "compliant") return ContactModel::kCompliant;
  throw ParseError("unknown contact model '" + s + "'");
}

struct SimConfig {
  double dt = 1e-4;              // s, integration step
  double control_period = 1e-3;  // s, zero-order hold; rounded to a multiple of dt
  ContactModel contact_model = ContactModel::kRigidHybrid;
  double penetration_allowance = 1e-3;  // m
  double contact_damping = 50.0;        // s/m
  double slip_velocity = 0.01;          // m/s, friction regularization
  Terrain terrain;
  double t_start = 0.0;  // s
  double t_end = 1.0;    // s
  double event_tolerance = 1e-9;  // m
  double baumgarte_omega = 100.0;  // 1/s
  double baumgarte_zeta = 1.0;
  double divergence_limit = 1e3;  // max |v| before the run is abandoned
  int log_every = 1;              // log one sample per this many steps

  int control_ratio() const { return std::max(1, static_cast<int>(std::lround(control_period / dt))); }

  void validate() const {
    if (!(dt > 0.0)) throw Error("sim dt must be positive");
    if (!(control_period > 0.0)) throw Error("control period must be positive");
    if (contact_model == ContactModel::kCompliant && !(penetration_allowance > 0.0)) {
      throw Error("penetration allowance must be positive for the compliant ground");
    }
    if (!(contact_damping >= 0.0) || !(slip_velocity > 0.0)) throw Error("invalid contact damping or slip velocity");
    if (!(t_end > t_start)) throw Error("sim t_end must exceed t_start");
    if (!(event_tolerance > 0.0)) throw Error("event tolerance must be positive");
    if (!(baumgarte_omega >= 0.0) || !(baumgarte_zeta >= 0.0)) throw Error("invalid Baumgarte parameters");
    if (log_every < 1) throw Error("log_every must be at least 1");
    terrain.validate();
  }
};

struct SimSample {
  double t = 0.0;
  VectorXd q, v, u;
  VectorXd lambda;  // (x, z) force per model contact point, zero when not in contact
  int mode = 0;     // controller FSM mode
  unsigned contact_mask = 0;  // physical contact, bit k for contact point k
  double alpha = 0.0;
  VectorXd errors;  // controller output errors, see SimResult::error_names
};

enum class EventKind { kTouchdown, kLiftoff };

inline const char* to_string(EventKind k) { return k == EventKind::kTouchdown ? "touchdown" : "liftoff"; }

struct ContactEvent {
  double t = 0.0;
  int point = 0;
  EventKind kind = EventKind::kTouchdown;
  Vec2 impulse = Vec2::Zero();  // N s on the touching point (rigid ground)
  double ke_pre = 0.0;
  double ke_post = 0.0;
  double residual = 0.0;  // max |J v+| over the constrained points
  bool complementary = true;  // false when no sticking contact subset had nonnegative normal impulses
};

enum class Termination { kCompleted, kDiverged, kSingular, kControllerError };

inline const char* to_string(Termination r) {
  switch (r) {
    case Termination::kCompleted:
      return "completed";
    case Termination::kDiverged:
      return "diverged";
    case Termination::kSingular:
      return "singular";
    case Termination::kControllerError:
      return "controller_error";
  }
  return "?";
}

struct SimResult {
  std::vector<SimSample> samples;
  std::vector<ContactEvent> events;
  std::vector<std::string> error_names;
  Termination termination = Termination::kCompleted;
  std::string message;

  bool ok() const { return termination == Termination::kCompleted; }

  std::optional<ContactEvent> first_touchdown(int point, double after = -1e300) const {
    for (const auto& e : events) {
      if (e.kind == EventKind::kTouchdown && e.point == point && e.t > after) return e;
    }
    return std::nullopt;
  }
};

// ---------------------------------------------------------------------------
// Rigid ground

/// A stance point pinned at a world anchor.
struct PinnedContact {
  int point = 0;
  Vec2 anchor = Vec2::Zero();
};

using PinnedContacts = std::vector<PinnedContact>;

inline ContactSet contact_set_of(const PinnedContacts& pins) {
  std::vector<int> ids;
  for (const auto& p : pins) ids.push_back(p.point);
  return ContactSet(ids);
}

struct ConstrainedAcceleration {
  VectorXd vdot;
  VectorXd lambda;  // per pinned point (x, z), force on the robot
};

/// Solves M vdot + h = B u + J^T lambda with J vdot + Jdot v = -2 zeta w J v - w^2 phi.
inline ConstrainedAcceleration constrained_dynamics(const RobotModel& model, const VectorXd& q, const VectorXd& v,
                                                    const VectorXd& u, const PinnedContacts& pins,
                                                    double omega = 100.0, double zeta = 1.0) {
  const MatrixXd mass = mass_matrix(model, q);
  const VectorXd rhs = model.actuation_matrix() * u - bias_forces(model, q, v);
  const Eigen::LLT<MatrixXd> llt(mass);
  ConstrainedAcceleration out;
  if (pins.empty()) {
    out.vdot = llt.solve(rhs);
    out.lambda.resize(0);
    return out;
  }
  const ContactSet cs = contact_set_of(pins);
  const MatrixXd jac = contact_jacobian(model, q, cs);
  VectorXd phi(jac.rows());
  for (std::size_t k = 0; k < pins.size(); ++k) {
    phi.segment<2>(2 * k) = contact_point_position(model, q, pins[k].point) - pins[k].anchor;
  }
  const VectorXd target = -contact_jacobian_dot_v(model, q, v, cs) - 2.0 * zeta * omega * (jac * v) -
                          omega * omega * phi;
  const MatrixXd minv_jt = llt.solve(jac.transpose());
  const MatrixXd gram = jac * minv_jt;
  if (numerical_rank(gram) < gram.rows()) throw SingularContactError(detail::describe_rank_deficiency(gram, &cs));
  const VectorXd free_acc = llt.solve(rhs);
  out.lambda = gram.ldlt().solve(target - jac * free_acc);
  out.vdot = free_acc + minv_jt * out.lambda;
  return out;
}

namespace detail {

/// One classical RK4 step of xdot = f(x) for x = (q, v, extra...).
template <class F>
VectorXd rk4(const VectorXd& x, double h, F&& f) {
  const VectorXd k1 = f(x);
  const VectorXd k2 = f(x + 0.5 * h * k1);
  const VectorXd k3 = f(x + 0.5 * h * k2);
  const VectorXd k4 = f(x + h * k3);
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

inline VectorXd pack(const RobotState& s) {
  VectorXd x(2 * kNumCoords);
  x << s.q, s.v;
  return x;
}

}  // namespace detail

/// Advances the constrained dynamics by dt with u held constant.
inline RobotState step_rigid(const RobotModel& model, const RobotState& state, const PinnedContacts& pins,
                             const VectorXd& u, double dt, double omega = 100.0, double zeta = 1.0) {
  auto f = [&](const VectorXd& x) {
    const VectorXd q = x.head(kNumCoords);
    const VectorXd v = x.tail(kNumCoords);
    VectorXd dx(2 * kNumCoords);
    dx << v, constrained_dynamics(model, q, v, u, pins, omega, zeta).vdot;
    return dx;
  };
  const VectorXd x = detail::rk4(detail::pack(state), dt, f);
  return RobotState{x.head(kNumCoords), x.tail(kNumCoords), state.t + dt};
}

/// Pins the given points where they currently are.
inline RobotState step_rigid(const RobotModel& model, const RobotState& state, const ContactSet& contacts,
                             const VectorXd& u, double dt) {
  PinnedContacts pins;
  for (int p : contacts.points()) pins.push_back({p, contact_point_position(model, state.q, p)});
  return step_rigid(model, state, pins, u, dt);
}

/// Smallest s in (lo, hi] with f(s) <= 0, given f(lo) > 0 >= f(hi). Stops once
/// |f| <= tol or the bracket collapses.
template <class F>
double bisect_crossing(F&& f, double lo, double hi, double tol) {
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const double fm = f(mid);
    if (fm > 0.0) {
      lo = mid;
    } else {
      hi = mid;
      if (fm >= -tol) break;
    }
  }
  return hi;
}

/// Earliest touchdown of any listed point between two consecutive states,
/// found by bisection on the linearly interpolated configuration.
inline std::optional<double> detect_touchdown(const RobotModel& model, const RobotState& prev, const RobotState& next,
                                              const Terrain& terrain, const std::vector<int>& points,
                                              double tol = 1e-9) {
  std::optional<double> best;
  for (int p : points) {
    auto height = [&](double s) {
      const VectorXd q = (1.0 - s) * prev.q + s * next.q;
      return terrain.clearance(contact_point_position(model, q, p));
    };
    if (height(0.0) <= 0.0 || height(1.0) > 0.0) continue;
    const double s = bisect_crossing(height, 0.0, 1.0, tol);
    const double t = prev.t + s * (next.t - prev.t);
    if (!best || t < *best) best = t;
  }
  return best;
}

/// Touchdown overload for every model contact point.
inline std::optional<double> detect_touchdown(const RobotModel& model, const RobotState& prev, const RobotState& next,
                                              const Terrain& terrain) {
  std::vector<int> all(model.contacts.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  return detect_touchdown(model, prev, next, terrain, all);
}

// ---------------------------------------------------------------------------
// Compliant ground

/// Spring constant that sinks one foot carrying the full robot weight by
/// exactly the allowance (ignoring damping).
inline double compliant_stiffness(const RobotModel& model, double allowance) {
  return model.total_mass() * model.gravity / allowance;
}

/// Ground reaction (x, z) on each model contact point.
inline std::vector<Vec2> compliant_contact_force(const RobotModel& model, const VectorXd& q, const VectorXd& v,
                                                 const Terrain& terrain, double allowance, double damping = 50.0,
                                                 double slip_velocity = 0.01) {
  const double k = compliant_stiffness(model, allowance);
  std::vector<Vec2> forces(model.contacts.size(), Vec2::Zero());
  for (std::size_t i = 0; i < model.contacts.size(); ++i) {
    const int p = static_cast<int>(i);
    const Vec2 pos = contact_point_position(model, q, p);
    const double pen = -terrain.clearance(pos);
    if (pen <= 0.0) continue;
    const Vec2 vel = point_jacobian(model, q, model.contacts[i].link, model.contacts[i].offset) * v;
    const double normal = std::max(0.0, k * pen * (1.0 - damping * vel.y()));
    const double slip = std::clamp(vel.x() / slip_velocity, -1.0, 1.0);
    forces[i] = Vec2(-model.mu * normal * slip, normal);
  }
  return forces;
}

/// Augmented RK4 step on the compliant ground. The state carries two extra
/// entries accumulating actuator work and contact work (J).
inline VectorXd step_compliant(const RobotModel& model, const VectorXd& x, const VectorXd& u, double dt,
                               const SimConfig& cfg) {
  const MatrixXd b = model.actuation_matrix();
  auto f = [&](const VectorXd& s) {
    const VectorXd q = s.head(kNumCoords);
    const VectorXd v = s.segment(kNumCoords, kNumCoords);
    const auto forces = compliant_contact_force(model, q, v, cfg.terrain, cfg.penetration_allowance,
                                                cfg.contact_damping, cfg.slip_velocity);
    VectorXd gen = b * u - bias_forces(model, q, v);
    double contact_power = 0.0;
    for (std::size_t i = 0; i < forces.size(); ++i) {
      if (forces[i].isZero()) continue;
      const MatrixXd jp = point_jacobian(model, q, model.contacts[i].link, model.contacts[i].offset);
      gen += jp.transpose() * forces[i];
      contact_power += forces[i].dot(jp * v);
    }
    VectorXd ds(s.size());
    ds << v, mass_matrix(model, q).llt().solve(gen), u.dot(b.transpose() * v), contact_power;
    return ds;
  };
  return detail::rk4(x, dt, f);
}

// ---------------------------------------------------------------------------
// Closed loop

namespace detail {

inline double max_abs(const VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

inline std::vector<std::string> error_names_of(const ControlCommand& cmd) {
  std::vector<std::string> names;
  for (const auto& e : cmd.errors) {
    for (Eigen::Index i = 0; i < e.y_err.size(); ++i) names.push_back("err_" + e.name + "_" + std::to_string(i));
    for (Eigen::Index i = 0; i < e.ydot_err.size(); ++i) names.push_back("derr_" + e.name + "_" + std::to_string(i));
  }
  return names;
}

inline VectorXd error_values_of(const ControlCommand& cmd) {
  std::vector<double> vals;
  for (const auto& e : cmd.errors) {
    for (Eigen::Index i = 0; i < e.y_err.size(); ++i) vals.push_back(e.y_err(i));
    for (Eigen::Index i = 0; i < e.ydot_err.size(); ++i) vals.push_back(e.ydot_err(i));
  }
  return Eigen::Map<VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

inline unsigned mask_of(const PinnedContacts& pins) {
  unsigned m = 0;
  for (const auto& p : pins) m |= 1u << p.point;
  return m;
}

struct ImpactResolution {
  PinnedContacts pins;  // stance after the impact
  ImpactResult impact;  // impulse rows follow `pins`
  bool complementary = true;
};

/// Rigid impact of `point` while `pins` are already in stance. Among the
/// subsets of touching points that contain the new one, picks the largest
/// whose normal impulses are nonnegative and whose released points do not
/// move into the ground afterwards. Sticking contact can make every subset
/// inconsistent (the planar Painleve case); the plastic impact on all
/// touching points is then applied and flagged, and the lift-off check
/// releases whichever point is pulled.
inline ImpactResolution resolve_impact(const RobotModel& model, const RobotState& s, const PinnedContacts& pins,
                                       int point, const Terrain& terrain) {
  constexpr double kTol = 1e-12;
  const Vec2 pos = contact_point_position(model, s.q, point);
  PinnedContacts touching = pins;
  touching.push_back({point, Vec2(pos.x(), terrain.height(pos.x()))});
  const int n = static_cast<int>(touching.size());
  for (int size = n; size >= 1; --size) {
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
      if (!(mask & (1u << (n - 1))) || std::popcount(mask) != size) continue;
      PinnedContacts kept;
      for (int k = 0; k < n; ++k) {
        if (mask & (1u << k)) kept.push_back(touching[k]);
      }
      ImpactResult r = apply_reset_map(model, s, contact_set_of(kept));
      bool ok = true;
      for (int k = 0; k < size; ++k) ok = ok && r.impulse(2 * k + 1) >= -kTol;
      for (int k = 0; k < n; ++k) {
        if (mask & (1u << k)) continue;
        const auto& cp = model.contacts[touching[k].point];
        ok = ok && (point_jacobian(model, s.q, cp.link, cp.offset) * r.post_velocity).y() >= -kTol;
      }
      if (ok) return {std::move(kept), std::move(r), true};
    }
  }
  ImpactResult all = apply_reset_map(model, s, contact_set_of(touching));
  return {std::move(touching), std::move(all), false};
}

}  // namespace detail

/// Closed-loop rollout from an explicit initial state. In rigid mode the
/// initial stance is the set of points within the event tolerance of the
/// ground; pass `initial_pins` to override.
inline SimResult rollout(const RobotModel& model, Controller& controller, const SimConfig& cfg, RobotState init,
                         std::optional<PinnedContacts> initial_pins = std::nullopt) {
  cfg.validate();
  controller.reset();
  SimResult res;
  const int ncp = static_cast<int>(model.contacts.size());
  const int ratio = cfg.control_ratio();
  const long steps = std::lround((cfg.t_end - cfg.t_start) / cfg.dt);
  const bool rigid = cfg.contact_model == ContactModel::kRigidHybrid;

  RobotState s = std::move(init);
  s.t = cfg.t_start;
  PinnedContacts pins;
  if (initial_pins) {
    pins = *initial_pins;
  } else if (rigid) {
    for (int p = 0; p < ncp; ++p) {
      const Vec2 pos = contact_point_position(model, s.q, p);
      if (cfg.terrain.clearance(pos) <= 1e-6) pins.push_back({p, Vec2(pos.x(), cfg.terrain.height(pos.x()))});
    }
  }
  VectorXd work = VectorXd::Zero(2);
  std::vector<bool> touching(ncp, false);
  for (int p = 0; p < ncp; ++p) touching[p] = cfg.terrain.clearance(contact_point_position(model, s.q, p)) <= 0.0;

  ControlCommand cmd;
  auto log_sample = [&](const RobotState& st) {
    SimSample smp;
    smp.t = st.t;
    smp.q = st.q;
    smp.v = st.v;
    smp.u = cmd.u;
    smp.lambda = VectorXd::Zero(2 * ncp);
    if (rigid) {
      if (!pins.empty()) {
        const VectorXd lam = constrained_dynamics(model, st.q, st.v, cmd.u, pins, cfg.baumgarte_omega,
                                                  cfg.baumgarte_zeta).lambda;
        for (std::size_t k = 0; k < pins.size(); ++k) smp.lambda.segment<2>(2 * pins[k].point) = lam.segment<2>(2 * k);
      }
      smp.contact_mask = detail::mask_of(pins);
    } else {
      const auto forces = compliant_contact_force(model, st.q, st.v, cfg.terrain, cfg.penetration_allowance,
                                                  cfg.contact_damping, cfg.slip_velocity);
      for (int p = 0; p < ncp; ++p) {
        smp.lambda.segment<2>(2 * p) = forces[p];
        if (forces[p].y() > 0.0) smp.contact_mask |= 1u << p;
      }
    }
    smp.mode = cmd.fsm.mode_id;
    smp.alpha = cmd.fsm.alpha;
    smp.errors = detail::error_values_of(cmd);
    res.samples.push_back(std::move(smp));
  };
  auto fail = [&](Termination why, const std::string& msg) {
    res.termination = why;
    res.message = msg;
    return res;
  };

  try {
    for (long k = 0; k <= steps; ++k) {
      const double t_grid = cfg.t_start + static_cast<double>(k) * cfg.dt;
      s.t = t_grid;
      if (k % ratio == 0) {
        try {
          cmd = controller.compute(s);
        } catch (const Error& e) {
          return fail(Termination::kControllerError, e.what());
        }
        if (res.error_names.empty()) res.error_names = detail::error_names_of(cmd);
      }
      if (k % cfg.log_every == 0) log_sample(s);
      if (k == steps) break;
      if (!s.q.allFinite() || !s.v.allFinite() || detail::max_abs(s.v) > cfg.divergence_limit) {
        return fail(Termination::kDiverged, "velocity exceeded the divergence limit at t = " + std::to_string(s.t));
      }

      const double t_next = cfg.t_start + static_cast<double>(k + 1) * cfg.dt;
      if (!rigid) {
        VectorXd x(2 * kNumCoords + 2);
        x << s.q, s.v, work;
        x = step_compliant(model, x, cmd.u, t_next - s.t, cfg);
        s.q = x.head(kNumCoords);
        s.v = x.segment(kNumCoords, kNumCoords);
        work = x.tail(2);
        s.t = t_next;
        for (int p = 0; p < ncp; ++p) {
          const bool now = cfg.terrain.clearance(contact_point_position(model, s.q, p)) <= 0.0;
          if (now != touching[p]) {
            const double ke = kinetic_energy(model, s.q, s.v);
            res.events.push_back({s.t, p, now ? EventKind::kTouchdown : EventKind::kLiftoff, Vec2::Zero(), ke, ke,
                                  0.0});
            touching[p] = now;
          }
        }
        continue;
      }

      // Rigid: integrate to the next grid time, stopping at touchdowns.
      while (s.t < t_next) {
        const double h = t_next - s.t;
        std::vector<int> swing;
        for (int p = 0; p < ncp; ++p) {
          bool pinned = false;
          for (const auto& pin : pins) pinned = pinned || pin.point == p;
          if (!pinned) swing.push_back(p);
        }
        auto advance = [&](double dt) {
          return step_rigid(model, s, pins, cmd.u, dt, cfg.baumgarte_omega, cfg.baumgarte_zeta);
        };
        RobotState next = advance(h);
        // Earliest touchdown along the integrator's own trajectory.
        int hit = -1;
        double hit_dt = h;
        for (int p : swing) {
          auto height = [&](double dt) {
            return cfg.terrain.clearance(contact_point_position(model, advance(dt).q, p));
          };
          if (cfg.terrain.clearance(contact_point_position(model, s.q, p)) <= 0.0) continue;
          if (cfg.terrain.clearance(contact_point_position(model, next.q, p)) > 0.0) continue;
          const double dt_hit = bisect_crossing(height, 0.0, h, cfg.event_tolerance);
          if (dt_hit < hit_dt || hit < 0) {
            hit = p;
            hit_dt = dt_hit;
          }
        }
        if (hit >= 0) {
          s = advance(hit_dt);
          if (hit_dt >= h) s.t = t_next;
          const double ke_pre = kinetic_energy(model, s.q, s.v);
          auto [new_pins, impact, complementary] = detail::resolve_impact(model, s, pins, hit, cfg.terrain);
          pins = std::move(new_pins);
          s.v = impact.post_velocity;
          ContactEvent ev;
          ev.t = s.t;
          ev.point = hit;
          ev.kind = EventKind::kTouchdown;
          const ContactSet cs = contact_set_of(pins);
          for (std::size_t j = 0; j < pins.size(); ++j) {
            if (pins[j].point == hit) ev.impulse = impact.impulse.segment<2>(2 * j);
          }
          ev.ke_pre = ke_pre;
          ev.ke_post = kinetic_energy(model, s.q, s.v);
          ev.residual = detail::max_abs(contact_jacobian(model, s.q, cs) * s.v);
          ev.complementary = complementary;
          res.events.push_back(ev);
        } else {
          s = next;
          s.t = t_next;
        }
        // Unilateral release: drop points pulled towards the ground.
        while (!pins.empty()) {
          const VectorXd lam =
              constrained_dynamics(model, s.q, s.v, cmd.u, pins, cfg.baumgarte_omega, cfg.baumgarte_zeta).lambda;
          int worst = -1;
          for (std::size_t j = 0; j < pins.size(); ++j) {
            if (lam(2 * j + 1) < 0.0 && (worst < 0 || lam(2 * j + 1) < lam(2 * worst + 1))) worst = static_cast<int>(j);
          }
          if (worst < 0) break;
          const double ke = kinetic_energy(model, s.q, s.v);
          res.events.push_back({s.t, pins[worst].point, EventKind::kLiftoff, Vec2::Zero(), ke, ke, 0.0});
          pins.erase(pins.begin() + worst);
        }
      }
    }
  } catch (const SingularContactError& e) {
    return fail(Termination::kSingular, e.what());
  }
  return res;
}

/// Rollout starting on the reference at cfg.t_start.
inline SimResult rollout(const RobotModel& model, Controller& controller, const SimConfig& cfg) {
  const StateSample x0 = eval_state(controller.reference(), cfg.t_start, Side::kPost);
  return rollout(model, controller, cfg, RobotState{x0.q, x0.v, cfg.t_start});
}

// ---------------------------------------------------------------------------
// CSV

inline std::vector<std::string> timeseries_columns(const RobotModel& model, const SimResult& r) {
  std::vector<std::string> cols{"t"};
  for (int i = 0; i < kNumCoords; ++i) cols.push_back("q" + std::to_string(i));
  for (int i = 0; i < kNumCoords; ++i) cols.push_back("v" + std::to_string(i));
  for (int i = 0; i < model.num_actuators(); ++i) cols.push_back("u" + std::to_string(i));
  for (std::size_t i = 0; i < 2 * model.contacts.size(); ++i) cols.push_back("lam" + std::to_string(i));
  cols.insert(cols.end(), {"mode", "contact", "alpha"});
  cols.insert(cols.end(), r.error_names.begin(), r.error_names.end());
  return cols;
}

inline void write_timeseries_csv(std::ostream& os, const RobotModel& model, const SimResult& r) {
  const auto cols = timeseries_columns(model, r);
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << "\n" << std::setprecision(17);
  for (const auto& s : r.samples) {
    os << s.t;
    for (const VectorXd* vec : {&s.q, &s.v, &s.u, &s.lambda}) {
      for (Eigen::Index i = 0; i < vec->size(); ++i) os << "," << (*vec)(i);
    }
    os << "," << s.mode << "," << s.contact_mask << "," << s.alpha;
    for (Eigen::Index i = 0; i < s.errors.size(); ++i) os << "," << s.errors(i);
    for (std::size_t i = s.errors.size(); i < r.error_names.size(); ++i) os << ",nan";
    os << "\n";
  }
}

inline void write_events_csv(std::ostream& os, const SimResult& r) {
  os << "t,point,kind,impulse_x,impulse_z,ke_pre,ke_post,residual,complementary\n" << std::setprecision(17);
  for (const auto& e : r.events) {
    os << e.t << "," << e.point << "," << to_string(e.kind) << "," << e.impulse.x() << "," << e.impulse.y() << ","
       << e.ke_pre << "," << e.ke_post << "," << e.residual << "," << (e.complementary ? 1 : 0) << "\n";
  }
}

}  // namespace iip
