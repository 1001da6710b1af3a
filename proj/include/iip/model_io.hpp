#pragma once

// Robot model file (JSON).
//
//   {
//     "links": [ {"name": "torso", "mass": 12.0, "length": 0.625,
//                 "com_offset": 0.24, "inertia": 1.33}, ... ],   // all five links
//     "actuated_joints": ["left_hip", "left_knee", "right_hip", "right_knee"],
//     "contacts": [ {"name": "left_foot", "link": "left_shank", "offset": [0.0, -0.4]}, ... ],
//     "gravity": 9.81,
//     "mu": 0.8,
//     "torque_limit": 150.0            // scalar or one value per actuated joint
//   }
//
// Link names are torso, left_thigh, left_shank, right_thigh, right_shank.
// com_offset is measured along the link axis from the proximal joint (up for
// the torso, down for the legs). Contact offsets are in the link rest frame.
// Generalized coordinates are ordered (x, z, pitch, left_hip, left_knee,
// right_hip, right_knee). Unknown keys are rejected.

#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "iip/model.hpp"

namespace iip {

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& obj, const std::set<std::string>& allowed,
                                const std::string& where) {
  if (!obj.is_object()) throw ParseError(where + ": expected an object");
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.count(key)) throw ParseError(where + ": unknown key '" + key + "'");
  }
}

inline double number_field(const nlohmann::json& obj, const std::string& key, const std::string& where) {
  if (!obj.contains(key)) throw ParseError(where + ": missing key '" + key + "'");
  if (!obj.at(key).is_number()) throw ParseError(where + ": '" + key + "' must be a number");
  return obj.at(key).get<double>();
}

inline int link_by_name(const std::string& name, const std::string& where) {
  for (int i = 0; i < kNumLinks; ++i) {
    if (name == kLinkNames[i]) return i;
  }
  throw ParseError(where + ": unknown link '" + name + "'");
}

inline int coord_by_name(const std::string& name, const std::string& where) {
  for (int i = 0; i < kNumCoords; ++i) {
    if (name == kCoordNames[i]) return i;
  }
  throw ParseError(where + ": unknown joint '" + name + "'");
}

}  // namespace detail

inline RobotModel model_from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(j, {"links", "actuated_joints", "contacts", "gravity", "mu", "torque_limit"},
                              "model");
  RobotModel m;
  if (!j.contains("links") || !j["links"].is_array()) throw ParseError("model: 'links' must be an array");
  std::array<bool, kNumLinks> seen{};
  for (std::size_t k = 0; k < j["links"].size(); ++k) {
    const auto& l = j["links"][k];
    const std::string where = "links[" + std::to_string(k) + "]";
    detail::reject_unknown_keys(l, {"name", "mass", "length", "com_offset", "inertia"}, where);
    if (!l.contains("name") || !l["name"].is_string()) throw ParseError(where + ": missing 'name'");
    const int id = detail::link_by_name(l["name"].get<std::string>(), where);
    if (seen[id]) throw ParseError(where + ": duplicate link '" + std::string(kLinkNames[id]) + "'");
    seen[id] = true;
    m.links[id] = LinkParams{kLinkNames[id], detail::number_field(l, "mass", where),
                             detail::number_field(l, "length", where),
                             detail::number_field(l, "com_offset", where),
                             detail::number_field(l, "inertia", where)};
  }
  for (int i = 0; i < kNumLinks; ++i) {
    if (!seen[i]) throw ParseError("model: missing link '" + std::string(kLinkNames[i]) + "'");
  }

  if (!j.contains("actuated_joints") || !j["actuated_joints"].is_array()) {
    throw ParseError("model: 'actuated_joints' must be an array");
  }
  for (const auto& name : j["actuated_joints"]) {
    if (!name.is_string()) throw ParseError("actuated_joints: entries must be strings");
    m.actuated.push_back(detail::coord_by_name(name.get<std::string>(), "actuated_joints"));
  }

  if (!j.contains("contacts") || !j["contacts"].is_array()) throw ParseError("model: 'contacts' must be an array");
  for (std::size_t k = 0; k < j["contacts"].size(); ++k) {
    const auto& c = j["contacts"][k];
    const std::string where = "contacts[" + std::to_string(k) + "]";
    detail::reject_unknown_keys(c, {"name", "link", "offset"}, where);
    if (!c.contains("link") || !c["link"].is_string()) throw ParseError(where + ": missing 'link'");
    if (!c.contains("offset") || !c["offset"].is_array() || c["offset"].size() != 2) {
      throw ParseError(where + ": 'offset' must be a 2-element array");
    }
    ContactPoint cp;
    cp.name = c.value("name", std::string(where));
    cp.link = detail::link_by_name(c["link"].get<std::string>(), where);
    cp.offset = Vec2(c["offset"][0].get<double>(), c["offset"][1].get<double>());
    m.contacts.push_back(cp);
  }

  m.gravity = detail::number_field(j, "gravity", "model");
  m.mu = j.contains("mu") ? detail::number_field(j, "mu", "model") : 0.8;
  if (!j.contains("torque_limit")) throw ParseError("model: missing key 'torque_limit'");
  const auto& tl = j["torque_limit"];
  if (tl.is_number()) {
    m.torque_limit = VectorXd::Constant(m.num_actuators(), tl.get<double>());
  } else if (tl.is_array()) {
    m.torque_limit.resize(static_cast<Eigen::Index>(tl.size()));
    for (std::size_t k = 0; k < tl.size(); ++k) m.torque_limit(k) = tl[k].get<double>();
  } else {
    throw ParseError("model: 'torque_limit' must be a number or an array");
  }
  try {
    m.validate();
  } catch (const ParseError&) {
    throw;
  } catch (const Error& e) {
    throw ParseError(std::string("model: ") + e.what());
  }
  return m;
}

inline nlohmann::json model_to_json(const RobotModel& m) {
  nlohmann::json j;
  for (const auto& l : m.links) {
    j["links"].push_back(
        {{"name", l.name}, {"mass", l.mass}, {"length", l.length}, {"com_offset", l.com_offset}, {"inertia", l.inertia}});
  }
  for (int idx : m.actuated) j["actuated_joints"].push_back(kCoordNames[idx]);
  for (const auto& c : m.contacts) {
    j["contacts"].push_back({{"name", c.name}, {"link", kLinkNames[c.link]}, {"offset", {c.offset.x(), c.offset.y()}}});
  }
  j["gravity"] = m.gravity;
  j["mu"] = m.mu;
  j["torque_limit"] = std::vector<double>(m.torque_limit.data(), m.torque_limit.data() + m.torque_limit.size());
  return j;
}

inline RobotModel parse_model(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("model: ") + e.what());
  }
  return model_from_json(j);
}

inline RobotModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open model file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_model(ss.str());
}

}  // namespace iip
