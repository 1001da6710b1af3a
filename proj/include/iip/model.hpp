#pragma once

// Planar five-link biped: kinematics and Lagrangian dynamics
//
//   M(q) vdot + C(q, v) + g(q) = B u + J(q)^T lambda
//
// Generalized coordinates (floating base first):
//   q = (x, z, pitch, left_hip, left_knee, right_hip, right_knee)
// (x, z) is the hip position in the world, pitch is the absolute torso
// angle, hips are measured relative to the torso and knees relative to the
// thigh. All angles are counter-clockwise positive. With every angle at zero
// the torso points straight up and both legs hang straight down.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "iip/linalg.hpp"

namespace iip {

enum Coord : int {
  kX = 0,
  kZ = 1,
  kPitch = 2,
  kLeftHip = 3,
  kLeftKnee = 4,
  kRightHip = 5,
  kRightKnee = 6,
};

enum LinkId : int {
  kTorso = 0,
  kLeftThigh = 1,
  kLeftShank = 2,
  kRightThigh = 3,
  kRightShank = 4,
};

inline constexpr int kNumCoords = 7;
inline constexpr int kNumBaseCoords = 3;
inline constexpr int kNumJoints = 4;
inline constexpr int kNumLinks = 5;

inline constexpr std::array<const char*, kNumLinks> kLinkNames = {
    "torso", "left_thigh", "left_shank", "right_thigh", "right_shank"};
inline constexpr std::array<const char*, kNumCoords> kCoordNames = {
    "x", "z", "pitch", "left_hip", "left_knee", "right_hip", "right_knee"};

struct LinkParams {
  std::string name;
  double mass = 0.0;        // kg
  double length = 0.0;      // m
  double com_offset = 0.0;  // m, along the link axis from its proximal joint
  double inertia = 0.0;     // kg m^2 about the link COM
};

/// A point rigidly attached to a link. The offset is expressed in the link's
/// rest frame: legs hang along -z, the torso points along +z.
struct ContactPoint {
  std::string name;
  int link = kLeftShank;
  Vec2 offset = Vec2::Zero();
};

struct RobotModel {
  std::array<LinkParams, kNumLinks> links;
  std::vector<int> actuated;  // generalized velocity index per actuator column of B
  std::vector<ContactPoint> contacts;
  double gravity = 9.81;  // m/s^2
  double mu = 0.8;
  VectorXd torque_limit;  // N m, one per actuator

  int num_positions() const { return kNumCoords; }
  int num_velocities() const { return kNumCoords; }
  int num_actuators() const { return static_cast<int>(actuated.size()); }

  double total_mass() const {
    double m = 0.0;
    for (const auto& l : links) m += l.mass;
    return m;
  }

  MatrixXd actuation_matrix() const {
    MatrixXd b = MatrixXd::Zero(kNumCoords, num_actuators());
    for (int k = 0; k < num_actuators(); ++k) b(actuated[k], k) = 1.0;
    return b;
  }

  int contact_index(const std::string& name) const {
    for (std::size_t i = 0; i < contacts.size(); ++i) {
      if (contacts[i].name == name) return static_cast<int>(i);
    }
    throw Error("unknown contact point '" + name + "'");
  }

  void validate() const {
    for (int i = 0; i < kNumLinks; ++i) {
      const auto& l = links[i];
      if (!(l.mass > 0.0) || !(l.length > 0.0) || !(l.inertia > 0.0)) {
        throw Error("link '" + l.name + "': mass, length and inertia must be strictly positive");
      }
      if (!std::isfinite(l.com_offset)) throw Error("link '" + l.name + "': com_offset not finite");
    }
    if (num_actuators() != kNumJoints) {
      throw Error("five-link model requires exactly 4 actuated joints, got " +
                  std::to_string(num_actuators()));
    }
    std::vector<int> sorted = actuated;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw Error("actuated joints must be unique");
    }
    for (int idx : actuated) {
      if (idx < kNumBaseCoords || idx >= kNumCoords) {
        throw Error("actuated index " + std::to_string(idx) + " is not a joint coordinate");
      }
    }
    if (torque_limit.size() != num_actuators() || (torque_limit.array() <= 0.0).any()) {
      throw Error("torque_limit must hold one positive value per actuator");
    }
    if (!(gravity >= 0.0) || !(mu >= 0.0)) throw Error("gravity and mu must be nonnegative");
    for (const auto& c : contacts) {
      if (c.link < 0 || c.link >= kNumLinks) throw Error("contact '" + c.name + "' has invalid link");
      if (!c.offset.allFinite()) throw Error("contact '" + c.name + "' offset not finite");
    }
  }

  /// Representative Rabbit-like parameter set (about 32 kg, 0.8 m legs).
  static RobotModel five_link_default() {
    RobotModel m;
    m.links = {LinkParams{"torso", 12.0, 0.625, 0.24, 1.33},
               LinkParams{"left_thigh", 6.8, 0.4, 0.11, 0.47},
               LinkParams{"left_shank", 3.2, 0.4, 0.24, 0.20},
               LinkParams{"right_thigh", 6.8, 0.4, 0.11, 0.47},
               LinkParams{"right_shank", 3.2, 0.4, 0.24, 0.20}};
    m.actuated = {kLeftHip, kLeftKnee, kRightHip, kRightKnee};
    m.contacts = {ContactPoint{"left_foot", kLeftShank, Vec2(0.0, -0.4)},
                  ContactPoint{"right_foot", kRightShank, Vec2(0.0, -0.4)}};
    m.gravity = 9.81;
    m.mu = 0.8;
    m.torque_limit = VectorXd::Constant(4, 150.0);
    return m;
  }
};

struct RobotState {
  VectorXd q = VectorXd::Zero(kNumCoords);
  VectorXd v = VectorXd::Zero(kNumCoords);
  double t = 0.0;
};

/// Ordered set of active contact points. Each planar point contributes a
/// tangential (x) and a normal (z) constraint row.
class ContactSet {
 public:
  ContactSet() = default;
  explicit ContactSet(std::vector<int> points) : points_(std::move(points)) {
    std::vector<int> sorted = points_;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw Error("contact identifiers must be unique");
    }
  }

  const std::vector<int>& points() const { return points_; }
  int size() const { return static_cast<int>(points_.size()); }
  int dim() const { return 2 * size(); }
  bool empty() const { return points_.empty(); }
  bool contains(int id) const { return std::find(points_.begin(), points_.end(), id) != points_.end(); }

  friend bool operator==(const ContactSet& a, const ContactSet& b) { return a.points_ == b.points_; }

 private:
  std::vector<int> points_;
};

namespace detail {

using Row7 = Eigen::Matrix<double, 1, kNumCoords>;

inline Mat2 rotation(double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  Mat2 r;
  r << c, -s, s, c;
  return r;
}

inline Vec2 perp(const Vec2& r) { return Vec2(-r.y(), r.x()); }

/// Row mapping v to the absolute angular rate of a link.
inline Row7 angle_row(int link) {
  Row7 a = Row7::Zero();
  a(kPitch) = 1.0;
  switch (link) {
    case kTorso:
      break;
    case kLeftThigh:
      a(kLeftHip) = 1.0;
      break;
    case kLeftShank:
      a(kLeftHip) = 1.0;
      a(kLeftKnee) = 1.0;
      break;
    case kRightThigh:
      a(kRightHip) = 1.0;
      break;
    case kRightShank:
      a(kRightHip) = 1.0;
      a(kRightKnee) = 1.0;
      break;
    default:
      throw Error("invalid link id " + std::to_string(link));
  }
  return a;
}

inline int parent_of(int link) {
  if (link == kLeftShank) return kLeftThigh;
  if (link == kRightShank) return kRightThigh;
  return -1;
}

inline Vec2 com_local(const RobotModel& model, int link) {
  const double c = model.links[link].com_offset;
  return link == kTorso ? Vec2(0.0, c) : Vec2(0.0, -c);
}

inline Vec2 distal_local(const RobotModel& model, int link) {
  return Vec2(0.0, -model.links[link].length);
}

inline void check_q(const VectorXd& q) {
  require_size(q, kNumCoords, "q");
  if (!q.allFinite()) throw Error("q has non-finite entries");
}

inline void check_v(const VectorXd& v) {
  require_size(v, kNumCoords, "v");
  if (!v.allFinite()) throw Error("v has non-finite entries");
}

/// A point on a link and the chain of (link, local point) segments leading to it.
struct ChainPoint {
  std::array<std::pair<int, Vec2>, 2> segments;
  int count = 0;
};

inline ChainPoint chain_to(const RobotModel& model, int link, const Vec2& local) {
  ChainPoint cp;
  const int parent = parent_of(link);
  if (parent >= 0) cp.segments[cp.count++] = {parent, distal_local(model, parent)};
  cp.segments[cp.count++] = {link, local};
  return cp;
}

}  // namespace detail

/// Absolute angle of a link.
inline double link_angle(const VectorXd& q, int link) {
  return detail::angle_row(link).dot(q.head<kNumCoords>());
}

/// World position of a point given in a link's rest frame.
inline Vec2 point_position(const RobotModel& model, const VectorXd& q, int link, const Vec2& local) {
  detail::check_q(q);
  Vec2 p(q(kX), q(kZ));
  const auto chain = detail::chain_to(model, link, local);
  for (int i = 0; i < chain.count; ++i) {
    const auto& [l, r] = chain.segments[i];
    p += detail::rotation(link_angle(q, l)) * r;
  }
  return p;
}

/// d(point_position)/dq, a 2 x 7 matrix.
inline MatrixXd point_jacobian(const RobotModel& model, const VectorXd& q, int link, const Vec2& local) {
  detail::check_q(q);
  MatrixXd j = MatrixXd::Zero(2, kNumCoords);
  j(0, kX) = 1.0;
  j(1, kZ) = 1.0;
  const auto chain = detail::chain_to(model, link, local);
  for (int i = 0; i < chain.count; ++i) {
    const auto& [l, r] = chain.segments[i];
    const Vec2 arm = detail::perp(detail::rotation(link_angle(q, l)) * r);
    j += arm * detail::angle_row(l);
  }
  return j;
}

/// Jdot * v for a point on a link (centripetal acceleration terms).
inline Vec2 point_bias_acceleration(const RobotModel& model, const VectorXd& q, const VectorXd& v,
                                    int link, const Vec2& local) {
  detail::check_q(q);
  detail::check_v(v);
  Vec2 a = Vec2::Zero();
  const auto chain = detail::chain_to(model, link, local);
  for (int i = 0; i < chain.count; ++i) {
    const auto& [l, r] = chain.segments[i];
    const double w = detail::angle_row(l).dot(v);
    a -= w * w * (detail::rotation(link_angle(q, l)) * r);
  }
  return a;
}

inline MatrixXd mass_matrix(const RobotModel& model, const VectorXd& q) {
  detail::check_q(q);
  MatrixXd m = MatrixXd::Zero(kNumCoords, kNumCoords);
  for (int i = 0; i < kNumLinks; ++i) {
    const MatrixXd jc = point_jacobian(model, q, i, detail::com_local(model, i));
    const detail::Row7 a = detail::angle_row(i);
    m.noalias() += model.links[i].mass * jc.transpose() * jc;
    m.noalias() += model.links[i].inertia * a.transpose() * a;
  }
  return m;
}

/// g(q): gradient of the potential energy.
inline VectorXd gravity_vector(const RobotModel& model, const VectorXd& q) {
  detail::check_q(q);
  VectorXd g = VectorXd::Zero(kNumCoords);
  for (int i = 0; i < kNumLinks; ++i) {
    const MatrixXd jc = point_jacobian(model, q, i, detail::com_local(model, i));
    g += model.links[i].mass * model.gravity * jc.row(1).transpose();
  }
  return g;
}

/// C(q, v) + g(q). Link angular rates are linear in v with constant
/// coefficients, so the Coriolis term reduces to sum_i m_i Jc_i^T (Jcdot_i v).
inline VectorXd bias_forces(const RobotModel& model, const VectorXd& q, const VectorXd& v) {
  detail::check_v(v);
  VectorXd h = gravity_vector(model, q);
  for (int i = 0; i < kNumLinks; ++i) {
    const Vec2 local = detail::com_local(model, i);
    const MatrixXd jc = point_jacobian(model, q, i, local);
    h += model.links[i].mass * jc.transpose() * point_bias_acceleration(model, q, v, i, local);
  }
  return h;
}

inline double kinetic_energy(const RobotModel& model, const VectorXd& q, const VectorXd& v) {
  detail::check_v(v);
  return 0.5 * v.dot(mass_matrix(model, q) * v);
}

inline double potential_energy(const RobotModel& model, const VectorXd& q) {
  double pe = 0.0;
  for (int i = 0; i < kNumLinks; ++i) {
    pe += model.links[i].mass * model.gravity * point_position(model, q, i, detail::com_local(model, i)).y();
  }
  return pe;
}

inline Vec2 center_of_mass(const RobotModel& model, const VectorXd& q) {
  Vec2 c = Vec2::Zero();
  for (int i = 0; i < kNumLinks; ++i) {
    c += model.links[i].mass * point_position(model, q, i, detail::com_local(model, i));
  }
  return c / model.total_mass();
}

inline const ContactPoint& contact_point(const RobotModel& model, int point_id) {
  if (point_id < 0 || point_id >= static_cast<int>(model.contacts.size())) {
    throw Error("unknown contact point id " + std::to_string(point_id));
  }
  return model.contacts[point_id];
}

inline Vec2 contact_point_position(const RobotModel& model, const VectorXd& q, int point_id) {
  const auto& cp = contact_point(model, point_id);
  return point_position(model, q, cp.link, cp.offset);
}

/// Stacked contact Jacobian, two rows (tangential, normal) per active point.
inline MatrixXd contact_jacobian(const RobotModel& model, const VectorXd& q, const ContactSet& contacts) {
  detail::check_q(q);
  MatrixXd j(contacts.dim(), kNumCoords);
  for (int k = 0; k < contacts.size(); ++k) {
    const auto& cp = contact_point(model, contacts.points()[k]);
    j.middleRows(2 * k, 2) = point_jacobian(model, q, cp.link, cp.offset);
  }
  return j;
}

inline VectorXd contact_jacobian_dot_v(const RobotModel& model, const VectorXd& q, const VectorXd& v,
                                       const ContactSet& contacts) {
  VectorXd out(contacts.dim());
  for (int k = 0; k < contacts.size(); ++k) {
    const auto& cp = contact_point(model, contacts.points()[k]);
    out.segment<2>(2 * k) = point_bias_acceleration(model, q, v, cp.link, cp.offset);
  }
  return out;
}

/// Indices of the joint coordinates belonging to each leg (hip, knee).
inline std::array<int, 2> leg_joints(bool left) {
  return left ? std::array<int, 2>{kLeftHip, kLeftKnee} : std::array<int, 2>{kRightHip, kRightKnee};
}

}  // namespace iip
