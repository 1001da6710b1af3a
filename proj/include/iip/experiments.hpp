#pragma once

// Experiment harness: the walking comparison between controller variants,
// terrain height / ground stiffness / window duration sweeps, the control
// effort and acceleration error metrics, and offline projection of logged
// velocities onto the impact-invariant subspace.
//
// Every experiment studies one nominal impact t_s, the first after
// ExperimentSpec::t_start. Metrics use a fixed window common to all cells:
//
//   J_mot = int_{t_s - h}^{t_s + h} sum_k u_k^2 dt
//   J_acc = median over nearby samples of  sum_i a_i^T W_i a_i / J_ref,
//           a_i = K_p (y_des - y) + K_d (ydot_des - ydot)
//
// with h = metric_half_width and J_ref the value produced by a 7 cm base
// height error alone.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "iip/gait.hpp"
#include "iip/sim.hpp"

namespace iip {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// ---------------------------------------------------------------------------
// Metrics

/// Trapezoidal integral of sum_k u_k^2 over [t0, tf], clipped to the window
/// by linear interpolation between logged samples.
inline double metric_jmot(const SimResult& r, double t0, double tf) {
  if (!(tf > t0)) throw Error("J_mot window is empty");
  if (r.samples.size() < 2) throw Error("J_mot needs at least two logged samples");
  constexpr double kTol = 1e-9;
  if (t0 < r.samples.front().t - kTol || tf > r.samples.back().t + kTol) {
    throw Error("J_mot window lies outside the simulated horizon");
  }
  double total = 0.0;
  for (std::size_t i = 1; i < r.samples.size(); ++i) {
    const double ta = r.samples[i - 1].t, tb = r.samples[i].t;
    const double lo = std::max(ta, t0), hi = std::min(tb, tf);
    if (!(hi > lo)) continue;
    const double fa = r.samples[i - 1].u.squaredNorm(), fb = r.samples[i].u.squaredNorm();
    auto f = [&](double t) { return fa + (fb - fa) * (t - ta) / (tb - ta); };
    total += 0.5 * (hi - lo) * (f(lo) + f(hi));
  }
  return total;
}

struct JaccSettings {
  std::vector<std::string> outputs{"pitch", "base_height"};
  std::string reference_output = "base_height";
  double reference_error = 0.07;  // m, error that maps to J_acc = 1
  int samples = 5;
  double spread = 0.002;  // s, samples cover [t - spread, t + spread]
};

/// Unnormalized weighted acceleration error at one state.
inline double jacc_instant(const RobotModel& model, const ControllerSpec& spec, const ReferenceTrajectory& ref,
                           const VectorXd& q, const VectorXd& v, double t, const JaccSettings& settings) {
  const StateSample des = eval_state(ref, t);
  double total = 0.0;
  for (const auto& name : settings.outputs) {
    const OutputDef& o = spec.output(name);
    const OutputReference r = output_reference(model, o, des);
    const VectorXd e = r.y - o.position(model, q);
    const VectorXd edot = r.ydot - o.jacobian(model, q) * v;
    const VectorXd a = o.kp.cwiseProduct(e) + o.kd.cwiseProduct(edot);
    total += a.dot(o.weight.cwiseProduct(a));
  }
  return total;
}

/// J_acc of a pure reference_error offset in the reference output.
inline double jacc_normalization(const ControllerSpec& spec, const JaccSettings& settings) {
  const OutputDef& o = spec.output(settings.reference_output);
  if (o.dim() != 1) throw DimensionError("J_acc reference output must be one-dimensional");
  const double a = o.kp(0) * settings.reference_error;
  const double n = a * a * o.weight(0);
  if (!(n > 0.0)) throw Error("J_acc normalization is zero; check the reference output gains");
  return n;
}

/// Index of the logged sample closest in time to t.
inline std::size_t nearest_sample(const SimResult& r, double t) {
  if (r.samples.empty()) throw Error("empty log");
  const double dt_tol = r.samples.size() > 1 ? r.samples[1].t - r.samples[0].t : 0.0;
  if (t < r.samples.front().t - dt_tol || t > r.samples.back().t + dt_tol) {
    throw Error("sample time " + std::to_string(t) + " s lies outside the log");
  }
  auto it = std::lower_bound(r.samples.begin(), r.samples.end(), t,
                             [](const SimSample& s, double x) { return s.t < x; });
  if (it == r.samples.end()) return r.samples.size() - 1;
  const std::size_t k = static_cast<std::size_t>(it - r.samples.begin());
  if (k > 0 && std::abs(r.samples[k - 1].t - t) <= std::abs(it->t - t)) return k - 1;
  return k;
}

/// Median normalized J_acc over samples spread around t_sample.
inline double metric_jacc(const RobotModel& model, const SimResult& r, const ControllerSpec& spec,
                          const ReferenceTrajectory& ref, double t_sample, const JaccSettings& settings = {}) {
  if (settings.samples < 1 || settings.spread < 0.0) throw Error("invalid J_acc sampling settings");
  const double norm = jacc_normalization(spec, settings);
  std::vector<double> vals;
  for (int k = 0; k < settings.samples; ++k) {
    const double f = settings.samples == 1 ? 0.0 : 2.0 * k / (settings.samples - 1) - 1.0;
    const SimSample& s = r.samples[nearest_sample(r, t_sample + f * settings.spread)];
    vals.push_back(jacc_instant(model, spec, ref, s.q, s.v, s.t, settings) / norm);
  }
  std::sort(vals.begin(), vals.end());
  const std::size_t n = vals.size();
  return n % 2 ? vals[n / 2] : 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
}

// ---------------------------------------------------------------------------
// Perturbations and per-leg errors

/// Actuated coordinates that move the given contact point.
inline std::vector<int> point_joints(const RobotModel& model, const VectorXd& q, int point) {
  const MatrixXd j = contact_jacobian(model, q, ContactSet({point}));
  std::vector<int> out;
  for (int idx : model.actuated) {
    if (j.col(idx).norm() > 1e-12) out.push_back(idx);
  }
  return out;
}

/// Adds dvz to the vertical velocity of `point` through its own leg joints
/// (minimum-norm change); the base velocity is untouched.
inline VectorXd perturb_point_velocity(const RobotModel& model, const VectorXd& q, VectorXd v, int point, double dvz) {
  const std::vector<int> joints = point_joints(model, q, point);
  if (joints.empty()) throw Error("contact point is not moved by any actuated joint");
  const MatrixXd j = contact_jacobian(model, q, ContactSet({point}));
  MatrixXd jl(2, static_cast<Eigen::Index>(joints.size()));
  for (std::size_t k = 0; k < joints.size(); ++k) jl.col(static_cast<Eigen::Index>(k)) = j.col(joints[k]);
  const VectorXd dq = jl.completeOrthogonalDecomposition().solve(Vec2(0.0, dvz));
  for (std::size_t k = 0; k < joints.size(); ++k) v(joints[k]) += dq(static_cast<Eigen::Index>(k));
  return v;
}

/// Integral over [t0, t1] of the Euclidean norm of the joint velocity error
/// v_des - v restricted to `joints`; NaN when the log does not cover t1.
inline double integrated_velocity_error(const SimResult& r, const ReferenceTrajectory& ref,
                                        const std::vector<int>& joints, double t0, double t1) {
  if (r.samples.empty() || r.samples.back().t < t1 - 1e-9 || r.samples.front().t > t0 + 1e-9) return kNaN;
  auto err = [&](const SimSample& s) {
    const VectorXd e = eval_state(ref, s.t).v - s.v;
    double sq = 0.0;
    for (int j : joints) sq += e(j) * e(j);
    return std::sqrt(sq);
  };
  double total = 0.0;
  for (std::size_t i = 1; i < r.samples.size(); ++i) {
    const SimSample& a = r.samples[i - 1];
    const SimSample& b = r.samples[i];
    if (a.t < t0 - 1e-12 || b.t > t1 + 1e-12) continue;
    total += 0.5 * (b.t - a.t) * (err(a) + err(b));
  }
  return total;
}

// ---------------------------------------------------------------------------
// Experiment definitions

enum class ExperimentKind { kWalkingComparison, kHeightSweep, kStiffnessSweep, kWindowSweep };

inline const char* to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::kWalkingComparison:
      return "walking_comparison";
    case ExperimentKind::kHeightSweep:
      return "height_sweep";
    case ExperimentKind::kStiffnessSweep:
      return "stiffness_sweep";
    case ExperimentKind::kWindowSweep:
      return "window_sweep";
  }
  return "?";
}

inline ExperimentKind parse_experiment_kind(const std::string& s) {
  for (ExperimentKind k : {ExperimentKind::kWalkingComparison, ExperimentKind::kHeightSweep,
                           ExperimentKind::kStiffnessSweep, ExperimentKind::kWindowSweep}) {
    if (s == to_string(k)) return k;
  }
  if (s == "height") return ExperimentKind::kHeightSweep;
  if (s == "stiffness") return ExperimentKind::kStiffnessSweep;
  if (s == "window") return ExperimentKind::kWindowSweep;
  throw ParseError("unknown experiment kind '" + s + "'");
}

struct ExperimentSpec {
  ExperimentKind kind = ExperimentKind::kWalkingComparison;
  std::vector<Variant> variants{Variant::kDefault, Variant::kNoDerivativeWindow, Variant::kImpactInvariant};
  double perturbation = -0.1;              // m/s, swing foot vertical velocity change; negative is downward
  std::vector<double> windows{0.025};      // s, projection window half-width T
  std::vector<double> heights{0.0};        // m, terrain step under the landing foot
  std::vector<double> allowances{0.0};     // m, compliant ground allowance; 0 selects rigid ground
  std::uint64_t seed = 0;                  // recorded only; every run is deterministic
  std::string out_dir;

  double t_start = 0.0;             // s, the studied impact is the first nominal impact after this
  double perturb_lead = 0.05;       // s, walking segments start this long before the impact
  double metric_half_width = 0.05;  // s, J_mot over [t_s - h, t_s + h], J_acc sampled at t_s + h
  double error_horizon = 0.1;       // s, velocity errors integrated over [touchdown, touchdown + horizon]
  double rigid_dt = 1e-4;           // s
  double compliant_dt = 1e-5;       // s
  double log_period = 1e-4;         // s
  int threads = 0;                  // 0: one per hardware thread
  JaccSettings jacc;

  bool walking() const { return kind == ExperimentKind::kWalkingComparison; }

  void validate() const {
    if (variants.empty()) throw Error("experiment needs at least one controller variant");
    if (windows.empty() || heights.empty() || allowances.empty()) throw Error("sweep lists must be nonempty");
    for (double w : windows) {
      if (!(w > 0.0)) throw Error("window durations must be positive");
    }
    for (double a : allowances) {
      if (!(a >= 0.0)) throw Error("penetration allowances must be >= 0 (0 selects rigid ground)");
    }
    for (double h : heights) {
      if (!std::isfinite(h)) throw Error("terrain heights must be finite");
    }
    if (!std::isfinite(perturbation)) throw Error("perturbation must be finite");
    if (!(perturb_lead > 0.0) || !(metric_half_width > 0.0) || !(error_horizon > 0.0)) {
      throw Error("experiment time spans must be positive");
    }
    if (!(rigid_dt > 0.0) || !(compliant_dt > 0.0) || !(log_period > 0.0)) throw Error("time steps must be positive");
  }
};

/// Defaults per experiment kind. Sweeps start at the beginning of the step
/// with no perturbation; the terrain or ground is what differs.
inline ExperimentSpec default_experiment(ExperimentKind kind) {
  ExperimentSpec s;
  s.kind = kind;
  switch (kind) {
    case ExperimentKind::kWalkingComparison:
      break;
    case ExperimentKind::kHeightSweep:
      s.perturbation = 0.0;
      s.windows = {0.025, 0.05};
      s.heights = {0.0, 0.025, 0.05};
      break;
    case ExperimentKind::kStiffnessSweep:
      s.perturbation = 0.0;
      s.windows = {0.025, 0.05};
      s.allowances = {1e-5, 1e-4, 1e-3, 5e-3};
      break;
    case ExperimentKind::kWindowSweep:
      s.perturbation = 0.0;
      s.windows = {0.01, 0.02, 0.03, 0.04, 0.05};
      s.heights = {0.025};
      break;
  }
  return s;
}

/// Reference used by the sweeps: a hard landing, so that a few centimetres
/// of terrain shift the touchdown by well under the 50 ms window.
inline GaitParams sweep_gait_params() {
  GaitParams p;
  p.landing_speed = 1.0;
  p.clearance = 0.1;
  return p;
}

struct Cell {
  Variant variant = Variant::kDefault;
  double height = 0.0;     // m
  double allowance = 0.0;  // m, 0 is rigid
  double window = 0.025;   // s
};

inline std::string format_number(double x) {
  std::ostringstream os;
  os << std::setprecision(6) << x;
  return os.str();
}

inline std::string cell_id(const ExperimentSpec& spec, const Cell& c) {
  return std::string(to_string(spec.kind)) + "_h" + format_number(c.height) + "_a" + format_number(c.allowance) +
         "_w" + format_number(c.window * 1e3) + "_" + to_string(c.variant);
}

/// Full cross product heights x allowances x windows x variants, in that
/// nesting order.
inline std::vector<Cell> experiment_cells(const ExperimentSpec& spec) {
  std::vector<Cell> cells;
  for (double h : spec.heights) {
    for (double a : spec.allowances) {
      for (double w : spec.windows) {
        for (Variant v : spec.variants) cells.push_back(Cell{v, h, a, w});
      }
    }
  }
  return cells;
}

inline double sweep_value(const ExperimentSpec& spec, const Cell& c) {
  switch (spec.kind) {
    case ExperimentKind::kWalkingComparison:
      return spec.perturbation;
    case ExperimentKind::kHeightSweep:
      return c.height;
    case ExperimentKind::kStiffnessSweep:
      return c.allowance;
    case ExperimentKind::kWindowSweep:
      return c.window;
  }
  return kNaN;
}

// ---------------------------------------------------------------------------
// Config hashing

/// FNV-1a over a canonical text rendering of everything that must match
/// between cells being compared.
class ConfigHasher {
 public:
  ConfigHasher& add(const std::string& s) {
    text_ << s.size() << ':' << s << ';';
    return *this;
  }
  ConfigHasher& add(double x) {
    text_ << std::hexfloat << x << std::defaultfloat << ';';
    return *this;
  }
  ConfigHasher& add(long long x) {
    text_ << x << ';';
    return *this;
  }
  ConfigHasher& add(const VectorXd& v) {
    add(static_cast<long long>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) add(v(i));
    return *this;
  }

  std::string hex() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text_.str()) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
  }

 private:
  std::ostringstream text_;
};

/// Hash of gains, outputs, reference and sim config. The variant and the
/// window half-width are excluded: they are what a comparison varies.
inline std::string comparison_hash(const ControllerSpec& c, const ReferenceTrajectory& ref, const SimConfig& sim,
                                   double perturbation) {
  ConfigHasher h;
  h.add(to_string(c.type)).add(c.tau).add(c.joint_kp).add(c.joint_kd);
  for (const auto& o : c.outputs) {
    h.add(o.name).add(static_cast<long long>(o.kind)).add(static_cast<long long>(o.point));
    for (int k : o.coords) h.add(static_cast<long long>(k));
    h.add(o.kp).add(o.kd).add(o.weight);
  }
  for (const auto& [id, names] : c.mode_outputs) {
    h.add(static_cast<long long>(id));
    for (const auto& n : names) h.add(n);
  }
  h.add(c.torque_limit).add(c.reg_u).add(c.reg_lambda).add(c.reg_vdot);
  h.add(serialize_trajectory(ref));
  h.add(sim.dt).add(sim.control_period).add(std::string(to_string(sim.contact_model)));
  h.add(sim.penetration_allowance).add(sim.contact_damping).add(sim.slip_velocity);
  for (const auto& st : sim.terrain.steps) h.add(st.x_start).add(st.height);
  h.add(sim.t_start).add(sim.t_end).add(sim.event_tolerance).add(sim.baumgarte_omega).add(sim.baumgarte_zeta);
  h.add(sim.divergence_limit).add(static_cast<long long>(sim.log_every));
  h.add(perturbation);
  return h.hex();
}

// ---------------------------------------------------------------------------
// Running cells

struct MetricsRow {
  std::string experiment;
  std::string cell;
  std::string variant;
  double sweep_value = kNaN;
  double height = 0.0;       // m
  double allowance = 0.0;    // m, 0 is rigid
  double window = 0.0;       // s
  double perturbation = 0.0; // m/s
  double j_mot = kNaN;       // N^2 m^2 s
  double j_acc = kNaN;       // normalized
  double e_impacting = kNaN;      // rad/s * s
  double e_non_impacting = kNaN;  // rad/s * s
  double touchdown = kNaN;        // s
  bool success = false;
  std::string status;
  std::uint64_t seed = 0;
  std::string config_hash;
};

struct CellResult {
  Cell cell;
  MetricsRow row;
  SimResult sim;
  std::vector<int> impacting_joints, non_impacting_joints;
};

struct ExperimentResult {
  ExperimentSpec spec;
  double t_impact = 0.0;
  int impacting_point = -1;
  std::vector<CellResult> cells;
};

/// Timing and geometry shared by every cell of an experiment.
struct ExperimentSetup {
  double t_impact = 0.0;
  double sim_start = 0.0;
  double sim_end = 0.0;
  int impacting_point = -1;
  ContactSet stance;
  double step_x = 0.0;  // terrain steps begin here
};

inline ExperimentSetup experiment_setup(const RobotModel& model, const ReferenceTrajectory& ref,
                                        const ExperimentSpec& spec) {
  ExperimentSetup s;
  s.t_impact = ref.next_impact_after(spec.t_start);
  if (!std::isfinite(s.t_impact)) throw Error("reference has no impact after t_start");
  s.sim_start = spec.walking() ? s.t_impact - spec.perturb_lead : spec.t_start;
  if (s.sim_start < 0.0) throw Error("experiment would start before the reference does");
  const double tail = spec.walking() ? std::max(spec.metric_half_width, spec.perturb_lead + spec.error_horizon)
                                     : spec.metric_half_width;
  s.sim_end = s.t_impact + tail + spec.jacc.spread + 0.003;
  const ContactSet hit = impacting_contacts(ref, s.t_impact);
  if (hit.size() != 1) throw Error("experiments expect a single impacting contact point");
  s.impacting_point = hit.points().front();
  s.stance = ref.mode_at(s.sim_start, Side::kPost).contacts;
  if (s.stance.size() == 0) throw Error("experiments expect a stance contact at the start");
  const double x_stance = contact_point_position(model, eval_state(ref, s.sim_start).q, s.stance.points().front()).x();
  const double x_land = contact_point_position(model, eval_state(ref, s.t_impact, Side::kPre).q, s.impacting_point).x();
  s.step_x = 0.5 * (x_stance + x_land);
  return s;
}

inline SimConfig cell_sim_config(const ExperimentSpec& spec, const ExperimentSetup& setup, const Cell& c) {
  SimConfig cfg;
  cfg.t_start = setup.sim_start;
  cfg.t_end = setup.sim_end;
  if (c.allowance > 0.0) {
    cfg.contact_model = ContactModel::kCompliant;
    cfg.penetration_allowance = c.allowance;
    cfg.dt = spec.compliant_dt;
  } else {
    cfg.dt = spec.rigid_dt;
  }
  cfg.log_every = std::max(1, static_cast<int>(std::lround(spec.log_period / cfg.dt)));
  if (c.height != 0.0) cfg.terrain.steps = {{setup.step_x, c.height}};
  return cfg;
}

inline CellResult run_cell(const RobotModel& model, const ReferenceTrajectory& ref, const ControllerSpec& base,
                           const ExperimentSpec& spec, const ExperimentSetup& setup, const Cell& c) {
  CellResult out;
  out.cell = c;
  MetricsRow& row = out.row;
  row.experiment = to_string(spec.kind);
  row.cell = cell_id(spec, c);
  row.variant = to_string(c.variant);
  row.sweep_value = sweep_value(spec, c);
  row.height = c.height;
  row.allowance = c.allowance;
  row.window = c.window;
  row.perturbation = spec.perturbation;
  row.seed = spec.seed;

  ControllerSpec cs = base;
  cs.variant = c.variant;
  cs.window_half_width = c.window;
  const SimConfig cfg = cell_sim_config(spec, setup, c);
  row.config_hash = comparison_hash(cs, ref, cfg, spec.perturbation);

  try {
    const StateSample x0 = eval_state(ref, setup.sim_start);
    RobotState init{x0.q, x0.v, setup.sim_start};
    if (spec.perturbation != 0.0) {
      init.v = perturb_point_velocity(model, init.q, init.v, setup.impacting_point, spec.perturbation);
    }
    out.impacting_joints = point_joints(model, init.q, setup.impacting_point);
    out.non_impacting_joints = point_joints(model, init.q, setup.stance.points().front());

    Controller controller(model, ref, cs);
    std::optional<PinnedContacts> pins;
    if (cfg.contact_model == ContactModel::kRigidHybrid) {
      pins = PinnedContacts{};
      for (int p : setup.stance.points()) {
        const Vec2 pos = contact_point_position(model, init.q, p);
        pins->push_back({p, Vec2(pos.x(), cfg.terrain.height(pos.x()))});
      }
    }
    out.sim = rollout(model, controller, cfg, init, pins);
    row.status = to_string(out.sim.termination);

    const double t0 = setup.t_impact - spec.metric_half_width;
    const double tf = setup.t_impact + spec.metric_half_width;
    if (out.sim.ok()) {
      row.j_mot = metric_jmot(out.sim, std::max(t0, setup.sim_start), tf);
      row.j_acc = metric_jacc(model, out.sim, cs, ref, tf, spec.jacc);
    }
    if (const auto td = out.sim.first_touchdown(setup.impacting_point)) {
      row.touchdown = td->t;
      const double t1 = td->t + spec.error_horizon;
      row.e_impacting = integrated_velocity_error(out.sim, ref, out.impacting_joints, td->t, t1);
      row.e_non_impacting = integrated_velocity_error(out.sim, ref, out.non_impacting_joints, td->t, t1);
    } else if (out.sim.ok()) {
      row.status = "no_touchdown";
    }
    row.success = out.sim.ok() && std::isfinite(row.touchdown) &&
                  (!spec.walking() || (std::isfinite(row.e_impacting) && std::isfinite(row.e_non_impacting)));
  } catch (const std::exception& e) {
    row.success = false;
    row.status = "error";
    out.sim.message = e.what();
  }
  return out;
}

/// Runs every cell of the cross product on a worker pool. Results come back
/// in cell order regardless of scheduling. The default variant ignores the
/// window, so it is simulated once per (height, allowance).
inline ExperimentResult run_experiment(const RobotModel& model, const ReferenceTrajectory& ref,
                                       const ControllerSpec& base, const ExperimentSpec& spec) {
  spec.validate();
  base.validate(model);
  ExperimentResult res;
  res.spec = spec;
  const ExperimentSetup setup = experiment_setup(model, ref, spec);
  res.t_impact = setup.t_impact;
  res.impacting_point = setup.impacting_point;

  const std::vector<Cell> cells = experiment_cells(spec);
  std::vector<std::size_t> source(cells.size());
  std::vector<std::size_t> unique;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    source[i] = i;
    if (cells[i].variant == Variant::kDefault) {
      for (std::size_t k : unique) {
        const Cell& o = cells[k];
        if (o.variant == Variant::kDefault && o.height == cells[i].height && o.allowance == cells[i].allowance) {
          source[i] = k;
          break;
        }
      }
    }
    if (source[i] == i) unique.push_back(i);
  }

  std::vector<CellResult> computed(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k; (k = next++) < unique.size();) {
      computed[unique[k]] = run_cell(model, ref, base, spec, setup, cells[unique[k]]);
    }
  };
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t nthreads =
      std::min<std::size_t>(unique.size(), spec.threads > 0 ? static_cast<std::size_t>(spec.threads) : hw);
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < nthreads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (std::size_t i = 0; i < cells.size(); ++i) {
    CellResult r = computed[source[i]];
    if (source[i] != i) {
      // Same simulation, relabelled for this cell's window.
      const Cell& c = cells[i];
      r.cell = c;
      r.row.cell = cell_id(spec, c);
      r.row.window = c.window;
      r.row.sweep_value = sweep_value(spec, c);
    }
    res.cells.push_back(std::move(r));
  }
  return res;
}

inline ExperimentResult run_walking_comparison(const RobotModel& model, const ReferenceTrajectory& ref,
                                               const ControllerSpec& base, const ExperimentSpec& spec) {
  if (!spec.walking()) throw Error("run_walking_comparison needs a walking_comparison spec");
  return run_experiment(model, ref, base, spec);
}

inline ExperimentResult run_sweep(const RobotModel& model, const ReferenceTrajectory& ref, const ControllerSpec& base,
                                  const ExperimentSpec& spec) {
  if (spec.walking()) throw Error("run_sweep needs a sweep spec");
  return run_experiment(model, ref, base, spec);
}

inline std::vector<MetricsRow> metrics_of(const ExperimentResult& r) {
  std::vector<MetricsRow> rows;
  for (const auto& c : r.cells) rows.push_back(c.row);
  return rows;
}

/// Row for (variant, height, allowance, window); throws when absent.
inline const MetricsRow& find_row(const std::vector<MetricsRow>& rows, Variant v, double height, double allowance,
                                  double window) {
  for (const auto& r : rows) {
    if (r.variant == to_string(v) && r.height == height && r.allowance == allowance && r.window == window) return r;
  }
  throw Error("no metrics row for the requested cell");
}

// ---------------------------------------------------------------------------
// CSV

inline const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols{
      "experiment", "cell",      "variant",     "sweep_value",     "height",    "allowance",
      "window_ms",  "perturbation", "j_mot",    "j_acc",           "e_impacting", "e_non_impacting",
      "touchdown",  "success",   "status",      "seed",            "config_hash"};
  return cols;
}

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricsRow>& rows) {
  const auto& cols = metrics_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << "\n" << std::setprecision(17);
  for (const auto& r : rows) {
    os << r.experiment << "," << r.cell << "," << r.variant << "," << r.sweep_value << "," << r.height << ","
       << r.allowance << "," << r.window * 1e3 << "," << r.perturbation << "," << r.j_mot << "," << r.j_acc << ","
       << r.e_impacting << "," << r.e_non_impacting << "," << r.touchdown << "," << (r.success ? 1 : 0) << ","
       << r.status << "," << r.seed << "," << r.config_hash << "\n";
  }
}

/// Minimal CSV table: a header row and comma-separated cells without quoting.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return static_cast<int>(i);
    }
    return -1;
  }

  int require_column(const std::string& name) const {
    const int c = column(name);
    if (c < 0) throw ParseError("CSV is missing column '" + name + "'");
    return c;
  }

  double number(std::size_t row, int col) const {
    const std::string& s = rows.at(row).at(static_cast<std::size_t>(col));
    char* end = nullptr;
    const double x = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) {
      throw ParseError("CSV row " + std::to_string(row + 2) + ", column '" + header[col] + "': not a number");
    }
    return x;
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline CsvTable read_csv(std::istream& is) {
  CsvTable t;
  std::string line;
  if (!std::getline(is, line)) throw ParseError("CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  t.header = split_csv_line(line);
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != t.header.size()) {
      throw ParseError("CSV row " + std::to_string(t.rows.size() + 2) + " has " + std::to_string(cells.size()) +
                       " cells, header has " + std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  return t;
}

inline std::vector<MetricsRow> read_metrics_csv(std::istream& is) {
  const CsvTable t = read_csv(is);
  for (const auto& c : metrics_columns()) t.require_column(c);
  std::vector<MetricsRow> rows;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    auto text = [&](const char* c) { return t.rows[i][static_cast<std::size_t>(t.column(c))]; };
    auto num = [&](const char* c) { return t.number(i, t.column(c)); };
    MetricsRow r;
    r.experiment = text("experiment");
    r.cell = text("cell");
    r.variant = text("variant");
    r.sweep_value = num("sweep_value");
    r.height = num("height");
    r.allowance = num("allowance");
    r.window = num("window_ms") * 1e-3;
    r.perturbation = num("perturbation");
    r.j_mot = num("j_mot");
    r.j_acc = num("j_acc");
    r.e_impacting = num("e_impacting");
    r.e_non_impacting = num("e_non_impacting");
    r.touchdown = num("touchdown");
    r.success = num("success") != 0.0;
    r.status = text("status");
    r.seed = static_cast<std::uint64_t>(std::stoull(text("seed")));
    r.config_hash = text("config_hash");
    rows.push_back(std::move(r));
  }
  return rows;
}

/// Per-joint velocity errors v_des - v, the per-leg error norms and the
/// applied torques.
inline void write_leg_errors_csv(std::ostream& os, const RobotModel& model, const ReferenceTrajectory& ref,
                                 const CellResult& c) {
  os << "t";
  for (int j : model.actuated) os << ",verr_" << kCoordNames[j];
  os << ",impacting_norm,non_impacting_norm";
  for (int k = 0; k < model.num_actuators(); ++k) os << ",u" << k;
  os << "\n" << std::setprecision(17);
  auto norm = [](const VectorXd& e, const std::vector<int>& joints) {
    double sq = 0.0;
    for (int j : joints) sq += e(j) * e(j);
    return std::sqrt(sq);
  };
  for (const auto& s : c.sim.samples) {
    const VectorXd e = eval_state(ref, s.t).v - s.v;
    os << s.t;
    for (int j : model.actuated) os << "," << e(j);
    os << "," << norm(e, c.impacting_joints) << "," << norm(e, c.non_impacting_joints);
    for (Eigen::Index k = 0; k < s.u.size(); ++k) os << "," << s.u(k);
    os << "\n";
  }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
  if (!f) throw Error("failed writing " + path.string());
}

/// metrics.csv plus timeseries/, events/ and leg_errors/ per cell.
inline void write_experiment_outputs(const std::filesystem::path& dir, const RobotModel& model,
                                     const ReferenceTrajectory& ref, const ExperimentResult& r) {
  std::ostringstream metrics;
  write_metrics_csv(metrics, metrics_of(r));
  write_text_file(dir / "metrics.csv", metrics.str());
  for (const auto& c : r.cells) {
    std::ostringstream ts, ev, le;
    write_timeseries_csv(ts, model, c.sim);
    write_events_csv(ev, c.sim);
    write_leg_errors_csv(le, model, ref, c);
    write_text_file(dir / "timeseries" / (c.row.cell + ".csv"), ts.str());
    write_text_file(dir / "events" / (c.row.cell + ".csv"), ev.str());
    write_text_file(dir / "leg_errors" / (c.row.cell + ".csv"), le.str());
  }
}

// ---------------------------------------------------------------------------
// Offline projection of logged velocities

struct VelocityLog {
  std::vector<double> t;
  std::vector<VectorXd> q, v;
};

/// Reads t, q0..q6, v0..v6 from a table such as a timeseries CSV; other
/// columns are ignored.
inline VelocityLog velocity_log_from_csv(const CsvTable& table) {
  VelocityLog log;
  const int tc = table.require_column("t");
  std::vector<int> qc, vc;
  for (int i = 0; i < kNumCoords; ++i) {
    qc.push_back(table.require_column("q" + std::to_string(i)));
    vc.push_back(table.require_column("v" + std::to_string(i)));
  }
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    VectorXd q(kNumCoords), v(kNumCoords);
    for (int i = 0; i < kNumCoords; ++i) {
      q(i) = table.number(r, qc[i]);
      v(i) = table.number(r, vc[i]);
    }
    if (!q.allFinite() || !v.allFinite()) throw ParseError("CSV row " + std::to_string(r + 2) + " is not finite");
    log.t.push_back(table.number(r, tc));
    log.q.push_back(std::move(q));
    log.v.push_back(std::move(v));
  }
  if (log.t.empty()) throw ParseError("velocity log has no rows");
  return log;
}

/// Q(q) v per sample, with Q the projector onto the impact-invariant
/// subspace of `contacts`.
inline std::vector<VectorXd> project_velocities(const RobotModel& model, const VelocityLog& log,
                                                const ContactSet& contacts) {
  std::vector<VectorXd> out;
  out.reserve(log.v.size());
  for (std::size_t i = 0; i < log.v.size(); ++i) out.push_back(invariant_basis(model, log.q[i], contacts).Q * log.v[i]);
  return out;
}

/// Sum of |x_{k+1} - x_k| for coordinate `coord` over samples in [t0, t1].
inline double total_variation(const std::vector<double>& t, const std::vector<VectorXd>& x, int coord, double t0,
                              double t1) {
  double tv = 0.0;
  for (std::size_t i = 1; i < t.size(); ++i) {
    if (t[i - 1] < t0 || t[i] > t1) continue;
    tv += std::abs(x[i](coord) - x[i - 1](coord));
  }
  return tv;
}

inline void write_projected_csv(std::ostream& os, const VelocityLog& log, const std::vector<VectorXd>& projected) {
  os << "t";
  for (int i = 0; i < kNumCoords; ++i) os << ",v" << i;
  for (int i = 0; i < kNumCoords; ++i) os << ",vproj" << i;
  os << "\n" << std::setprecision(17);
  for (std::size_t k = 0; k < log.t.size(); ++k) {
    os << log.t[k];
    for (int i = 0; i < kNumCoords; ++i) os << "," << log.v[k](i);
    for (int i = 0; i < kNumCoords; ++i) os << "," << projected[k](i);
    os << "\n";
  }
}

/// Projects a logged velocity CSV and writes raw and projected series.
inline void project_log(const RobotModel& model, const std::string& in_csv, const ContactSet& contacts,
                        const std::string& out_csv) {
  std::ifstream in(in_csv);
  if (!in) throw Error("cannot open " + in_csv);
  const VelocityLog log = velocity_log_from_csv(read_csv(in));
  std::ostringstream os;
  write_projected_csv(os, log, project_velocities(model, log, contacts));
  write_text_file(out_csv, os.str());
}

}  // namespace iip
