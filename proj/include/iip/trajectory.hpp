#pragma once

// Reference trajectories: scalar piecewise polynomials per output, a hybrid
// mode schedule and the nominal impact times at which velocity jumps are
// allowed.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "iip/impact.hpp"

namespace iip {

enum class Side { kPre, kPost };

struct OutputSample {
  double y = 0.0;
  double ydot = 0.0;
  double yddot = 0.0;
};

/// Polynomial pieces in local time: segment k is sum_i c[k][i] (t - t_k)^i on [t_k, t_{k+1}].
class PiecewisePolynomial {
 public:
  PiecewisePolynomial() = default;
  PiecewisePolynomial(std::vector<double> breakpoints, std::vector<std::vector<double>> coefficients)
      : breaks_(std::move(breakpoints)), coeffs_(std::move(coefficients)) {
    if (breaks_.size() < 2 || coeffs_.size() + 1 != breaks_.size()) {
      throw Error("piecewise polynomial needs n + 1 breakpoints for n segments");
    }
    for (std::size_t k = 0; k + 1 < breaks_.size(); ++k) {
      if (!(breaks_[k + 1] > breaks_[k])) throw Error("breakpoints must be strictly increasing");
      if (coeffs_[k].empty()) throw Error("empty polynomial segment");
    }
  }

  /// Quintic segment matching value, slope and curvature at both ends.
  static std::vector<double> quintic_hermite(double h, const OutputSample& a, const OutputSample& b) {
    const double c0 = a.y, c1 = a.ydot, c2 = 0.5 * a.yddot;
    // Remaining coefficients solve the end conditions at local time h.
    const double r0 = b.y - (c0 + c1 * h + c2 * h * h);
    const double r1 = b.ydot - (c1 + 2 * c2 * h);
    const double r2 = b.yddot - 2 * c2;
    const double h2 = h * h, h3 = h2 * h, h4 = h3 * h, h5 = h4 * h;
    const double c3 = (10 * r0 - 4 * r1 * h + 0.5 * r2 * h2) / h3;
    const double c4 = (-15 * r0 + 7 * r1 * h - r2 * h2) / h4;
    const double c5 = (6 * r0 - 3 * r1 * h + 0.5 * r2 * h2) / h5;
    return {c0, c1, c2, c3, c4, c5};
  }

  static std::vector<double> cubic_hermite(double h, double y0, double v0, double y1, double v1) {
    const double c2 = (3 * (y1 - y0) / h - 2 * v0 - v1) / h;
    const double c3 = (2 * (y0 - y1) / h + v0 + v1) / (h * h);
    return {y0, v0, c2, c3};
  }

  const std::vector<double>& breakpoints() const { return breaks_; }
  const std::vector<std::vector<double>>& coefficients() const { return coeffs_; }
  double start() const { return breaks_.front(); }
  double end() const { return breaks_.back(); }
  std::size_t num_segments() const { return coeffs_.size(); }

  /// Segment used at t. At an interior breakpoint, kPre selects the segment
  /// ending there and kPost the one starting there.
  std::size_t segment(double t, Side side = Side::kPost) const {
    if (t <= breaks_.front()) return 0;
    if (t >= breaks_.back()) return coeffs_.size() - 1;
    auto it = std::upper_bound(breaks_.begin(), breaks_.end(), t);
    std::size_t k = static_cast<std::size_t>(it - breaks_.begin()) - 1;
    if (side == Side::kPre && t == breaks_[k] && k > 0) --k;
    return k;
  }

  OutputSample eval_segment(std::size_t k, double t) const {
    const auto& c = coeffs_[k];
    const double s = t - breaks_[k];
    OutputSample out;
    for (std::size_t i = c.size(); i-- > 0;) out.y = out.y * s + c[i];
    for (std::size_t i = c.size(); i-- > 1;) out.ydot = out.ydot * s + static_cast<double>(i) * c[i];
    for (std::size_t i = c.size(); i-- > 2;) out.yddot = out.yddot * s + static_cast<double>(i * (i - 1)) * c[i];
    return out;
  }

  OutputSample eval(double t, Side side = Side::kPost) const { return eval_segment(segment(t, side), t); }

 private:
  std::vector<double> breaks_;
  std::vector<std::vector<double>> coeffs_;
};

struct ModeSpec {
  int id = 0;
  std::string name;
  double t_start = 0.0;
  double t_end = 0.0;
  ContactSet contacts;
};

/// Time-based hybrid schedule shared by references and controller state machines.
struct ModeSchedule {
  std::vector<ModeSpec> modes;
  std::vector<double> impact_times;
  double period = 0.0;  // 0 for non-periodic schedules

  static constexpr double kTimeTol = 1e-12;

  double start() const { return modes.empty() ? 0.0 : modes.front().t_start; }

  /// Splits t into a time inside the first period and the number of elapsed periods.
  std::pair<double, long> wrap(double t, Side side = Side::kPost) const {
    if (period <= 0.0) return {t, 0};
    const double t0 = start();
    long k = static_cast<long>(std::floor((t - t0) / period));
    double tw = t - k * period;
    if (std::abs(tw - t0 - period) < kTimeTol) {
      ++k;
      tw = t0;
    }
    if (std::abs(tw - t0) < kTimeTol) tw = t0;
    if (side == Side::kPre && tw == t0 && k > 0) {
      --k;
      tw = t0 + period;
    }
    return {tw, k};
  }

  /// Snaps a wrapped time onto a nearby impact time so one-sided evaluation is exact.
  double snap(double tw) const {
    for (double ti : impact_times) {
      if (std::abs(tw - ti) < kTimeTol) return ti;
    }
    return tw;
  }

  /// Mode active at t (right-continuous; at an impact time kPre picks the ending mode).
  const ModeSpec& mode_at(double t, Side side = Side::kPost) const {
    if (modes.empty()) throw Error("schedule has no modes");
    auto [tw, k] = wrap(t, side);
    (void)k;
    tw = snap(tw);
    if (tw <= modes.front().t_start) return modes.front();
    for (std::size_t i = 0; i < modes.size(); ++i) {
      const auto& m = modes[i];
      const bool last = i + 1 == modes.size();
      if (side == Side::kPre ? (tw > m.t_start && tw <= m.t_end) : (tw >= m.t_start && (tw < m.t_end || last))) {
        return m;
      }
    }
    return modes.back();
  }

  /// Next nominal impact time strictly after t (accounting for periodic repetition).
  double next_impact_after(double t) const {
    if (impact_times.empty()) return std::numeric_limits<double>::infinity();
    auto [tw, k] = wrap(t);
    for (int rep = 0; rep < 3; ++rep) {
      for (double ti : impact_times) {
        const double abs_t = ti + static_cast<double>(k + rep) * period;
        if (abs_t > t + kTimeTol) return abs_t;
      }
      if (period <= 0.0) break;
    }
    return std::numeric_limits<double>::infinity();
  }

  /// All nominal impact times in [t0, t1].
  std::vector<double> impacts_between(double t0, double t1) const {
    std::vector<double> out;
    if (impact_times.empty()) return out;
    if (period <= 0.0) {
      for (double ti : impact_times) {
        if (ti >= t0 && ti <= t1) out.push_back(ti);
      }
      return out;
    }
    const long k0 = static_cast<long>(std::floor((t0 - start()) / period)) - 1;
    for (long k = k0;; ++k) {
      bool beyond = true;
      for (double ti : impact_times) {
        const double abs_t = ti + static_cast<double>(k) * period;
        if (abs_t <= t1) beyond = false;
        if (abs_t >= t0 && abs_t <= t1) out.push_back(abs_t);
      }
      if (beyond) break;
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end(), [](double a, double b) { return std::abs(a - b) < kTimeTol; }),
              out.end());
    return out;
  }

  bool is_impact_time(double tw) const {
    return std::any_of(impact_times.begin(), impact_times.end(),
                       [&](double ti) { return std::abs(ti - tw) < 1e-9; });
  }

  /// Nominal impact time closest to t, or +inf when there is none.
  double nearest_impact(double t) const {
    double best = std::numeric_limits<double>::infinity();
    const double span = period > 0.0 ? period : 0.0;
    for (double ti : impacts_between(t - span - 1.0, t + span + 1.0)) {
      if (std::abs(ti - t) < std::abs(best - t)) best = ti;
    }
    return best;
  }

  void validate_schedule(const std::string& what) const {
    if (modes.empty()) throw ParseError(what + ": empty mode schedule");
    for (std::size_t i = 0; i < modes.size(); ++i) {
      if (!(modes[i].t_end > modes[i].t_start)) {
        throw ParseError(what + ": mode " + std::to_string(modes[i].id) + " has t_end <= t_start");
      }
      if (i > 0 && std::abs(modes[i].t_start - modes[i - 1].t_end) > kTimeTol) {
        throw ParseError(what + ": modes must be contiguous and time-ordered (mode " + std::to_string(modes[i].id) +
                         ")");
      }
    }
    if (period < 0.0) throw ParseError(what + ": negative period");
    if (period > 0.0 && std::abs(modes.back().t_end - modes.front().t_start - period) > kTimeTol) {
      throw ParseError(what + ": period must equal the span of the mode schedule");
    }
    for (double ti : impact_times) {
      if (ti < start() - kTimeTol || ti > modes.back().t_end + kTimeTol) {
        throw ParseError(what + ": impact time outside the schedule");
      }
    }
  }
};

struct ReferenceTrajectory : ModeSchedule {
  std::map<std::string, PiecewisePolynomial> outputs;
  std::map<std::string, double> period_offsets;  // added to an output per elapsed period
  std::vector<std::pair<std::string, std::string>> mirror_pairs;

  static constexpr double kContinuityTol = 1e-9;

  bool has_output(const std::string& id) const { return outputs.count(id) > 0; }

  const PiecewisePolynomial& output(const std::string& id) const {
    auto it = outputs.find(id);
    if (it == outputs.end()) throw Error("unknown output '" + id + "'");
    return it->second;
  }

  OutputSample eval(const std::string& id, double t, Side side = Side::kPost) const {
    const auto& pp = output(id);
    auto [tw, k] = wrap(t, side);
    tw = snap(tw);
    OutputSample s = pp.eval(tw, side);
    if (k != 0) {
      auto it = period_offsets.find(id);
      if (it != period_offsets.end()) s.y += static_cast<double>(k) * it->second;
    }
    return s;
  }

  /// Checks the schedule and continuity invariants; throws ParseError on violation.
  void validate() const {
    validate_schedule("trajectory");
    if (outputs.empty()) throw ParseError("trajectory: no outputs");
    for (const auto& [name, pp] : outputs) {
      const auto& br = pp.breakpoints();
      for (std::size_t k = 1; k + 1 < br.size(); ++k) {
        const OutputSample a = pp.eval_segment(k - 1, br[k]);
        const OutputSample b = pp.eval_segment(k, br[k]);
        if (std::abs(a.y - b.y) > kContinuityTol) {
          throw ParseError("trajectory: output '" + name + "' is discontinuous in position at t = " +
                           std::to_string(br[k]));
        }
        if (std::abs(a.ydot - b.ydot) > kContinuityTol && !is_impact_time(br[k])) {
          throw ParseError("trajectory: output '" + name + "' has a velocity jump at non-impact time t = " +
                           std::to_string(br[k]));
        }
      }
      if (period > 0.0) {
        const double off = period_offsets.count(name) ? period_offsets.at(name) : 0.0;
        const OutputSample a = pp.eval(pp.end(), Side::kPre);
        const OutputSample b = pp.eval(pp.start(), Side::kPost);
        if (std::abs(a.y - (b.y + off)) > kContinuityTol) {
          throw ParseError("trajectory: output '" + name + "' is not periodic in position");
        }
        if (std::abs(a.ydot - b.ydot) > kContinuityTol && !is_impact_time(pp.end())) {
          throw ParseError("trajectory: output '" + name + "' has a velocity jump at the period boundary");
        }
      }
    }
    for (const auto& [a, b] : mirror_pairs) {
      if (!has_output(a) || !has_output(b)) throw ParseError("trajectory: mirror pair names an unknown output");
    }
  }
};

/// Generalized coordinates stored as outputs named after the coordinates.
inline bool has_full_state(const ReferenceTrajectory& ref) {
  for (const char* name : kCoordNames) {
    if (!ref.has_output(name)) return false;
  }
  return true;
}

struct StateSample {
  VectorXd q, v, a;
};

inline StateSample eval_state(const ReferenceTrajectory& ref, double t, Side side = Side::kPost) {
  StateSample s{VectorXd(kNumCoords), VectorXd(kNumCoords), VectorXd(kNumCoords)};
  for (int i = 0; i < kNumCoords; ++i) {
    const OutputSample o = ref.eval(kCoordNames[i], t, side);
    s.q(i) = o.y;
    s.v(i) = o.ydot;
    s.a(i) = o.yddot;
  }
  return s;
}

/// Largest |v_des(t+) - reset(v_des(t-))| over the impact times of one period.
inline double reset_consistency_error(const RobotModel& model, const ReferenceTrajectory& ref) {
  if (!has_full_state(ref)) throw Error("reset consistency needs all generalized coordinates as outputs");
  double worst = 0.0;
  for (double ti : ref.impact_times) {
    const StateSample pre = eval_state(ref, ti, Side::kPre);
    const StateSample post = eval_state(ref, ti, Side::kPost);
    const ContactSet& contacts = ref.mode_at(ti, Side::kPost).contacts;
    RobotState s{pre.q, pre.v, ti};
    const VectorXd vplus = apply_reset_map(model, s, contacts).post_velocity;
    worst = std::max(worst, (post.v - vplus).cwiseAbs().maxCoeff());
  }
  return worst;
}

// ---------------------------------------------------------------------------
// File format (JSON):
//
//   {
//     "format": "iip-trajectory", "version": 1,
//     "period": 0.8,                                  // 0 when not periodic
//     "outputs": [ {"name": "x", "breakpoints": [...],
//                   "coefficients": [[c0, c1, ...], ...],   // local-time power basis
//                   "period_offset": 0.3}, ... ],
//     "modes": [ {"id": 0, "name": "left_stance", "t_start": 0.0, "t_end": 0.4,
//                 "contacts": [0]}, ... ],
//     "impact_times": [0.4, 0.8],
//     "mirror_pairs": [["left_hip", "right_hip"], ...]
//   }

inline constexpr int kTrajectoryFormatVersion = 1;

inline nlohmann::json trajectory_to_json(const ReferenceTrajectory& ref) {
  nlohmann::json j;
  j["format"] = "iip-trajectory";
  j["version"] = kTrajectoryFormatVersion;
  j["period"] = ref.period;
  j["outputs"] = nlohmann::json::array();
  for (const auto& [name, pp] : ref.outputs) {
    nlohmann::json o;
    o["name"] = name;
    o["breakpoints"] = pp.breakpoints();
    o["coefficients"] = pp.coefficients();
    if (ref.period_offsets.count(name)) o["period_offset"] = ref.period_offsets.at(name);
    j["outputs"].push_back(o);
  }
  j["modes"] = nlohmann::json::array();
  for (const auto& m : ref.modes) {
    j["modes"].push_back(
        {{"id", m.id}, {"name", m.name}, {"t_start", m.t_start}, {"t_end", m.t_end}, {"contacts", m.contacts.points()}});
  }
  j["impact_times"] = ref.impact_times;
  j["mirror_pairs"] = nlohmann::json::array();
  for (const auto& [a, b] : ref.mirror_pairs) j["mirror_pairs"].push_back({a, b});
  return j;
}

namespace detail {

template <typename T>
T field(const nlohmann::json& obj, const std::string& key, const std::string& where) {
  if (!obj.contains(key)) throw ParseError(where + ": missing field '" + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(where + ": field '" + key + "' has the wrong type (" + e.what() + ")");
  }
}

}  // namespace detail

inline ReferenceTrajectory trajectory_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("trajectory: expected an object");
  if (detail::field<std::string>(j, "format", "trajectory") != "iip-trajectory") {
    throw ParseError("trajectory: field 'format' must be \"iip-trajectory\"");
  }
  const int version = detail::field<int>(j, "version", "trajectory");
  if (version != kTrajectoryFormatVersion) {
    throw ParseError("trajectory: unsupported version " + std::to_string(version));
  }
  ReferenceTrajectory ref;
  ref.period = detail::field<double>(j, "period", "trajectory");
  const auto outputs = detail::field<nlohmann::json>(j, "outputs", "trajectory");
  if (!outputs.is_array()) throw ParseError("trajectory: field 'outputs' must be an array");
  for (std::size_t k = 0; k < outputs.size(); ++k) {
    const std::string where = "outputs[" + std::to_string(k) + "]";
    const auto& o = outputs[k];
    const auto name = detail::field<std::string>(o, "name", where);
    try {
      ref.outputs[name] = PiecewisePolynomial(detail::field<std::vector<double>>(o, "breakpoints", where),
                                              detail::field<std::vector<std::vector<double>>>(o, "coefficients", where));
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(where + ": " + e.what());
    }
    if (o.contains("period_offset")) ref.period_offsets[name] = detail::field<double>(o, "period_offset", where);
  }
  const auto modes = detail::field<nlohmann::json>(j, "modes", "trajectory");
  if (!modes.is_array()) throw ParseError("trajectory: field 'modes' must be an array");
  for (std::size_t k = 0; k < modes.size(); ++k) {
    const std::string where = "modes[" + std::to_string(k) + "]";
    const auto& m = modes[k];
    ModeSpec spec;
    spec.id = detail::field<int>(m, "id", where);
    spec.name = m.value("name", std::string());
    spec.t_start = detail::field<double>(m, "t_start", where);
    spec.t_end = detail::field<double>(m, "t_end", where);
    try {
      spec.contacts = ContactSet(detail::field<std::vector<int>>(m, "contacts", where));
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(where + ": " + e.what());
    }
    ref.modes.push_back(spec);
  }
  ref.impact_times = detail::field<std::vector<double>>(j, "impact_times", "trajectory");
  if (j.contains("mirror_pairs")) {
    for (const auto& p : j["mirror_pairs"]) {
      if (!p.is_array() || p.size() != 2) throw ParseError("trajectory: mirror_pairs entries must be pairs");
      ref.mirror_pairs.emplace_back(p[0].get<std::string>(), p[1].get<std::string>());
    }
  }
  ref.validate();
  return ref;
}

inline std::string serialize_trajectory(const ReferenceTrajectory& ref) { return trajectory_to_json(ref).dump(1); }

inline ReferenceTrajectory parse_trajectory(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("trajectory: ") + e.what());
  }
  return trajectory_from_json(j);
}

inline void save_trajectory(const ReferenceTrajectory& ref, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write trajectory file '" + path + "'");
  out << serialize_trajectory(ref) << "\n";
}

inline ReferenceTrajectory load_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open trajectory file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_trajectory(ss.str());
}

}  // namespace iip
