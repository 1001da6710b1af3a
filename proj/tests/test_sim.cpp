#include <gtest/gtest.h>

#include <sstream>

#include "iip/gait.hpp"
#include "iip/sim.hpp"
#include "test_util.hpp"

namespace iip {
namespace {

constexpr int kLeft = 0;
constexpr int kRight = 1;

class SimFixture : public ::testing::Test {
 protected:
  RobotModel model = RobotModel::five_link_default();
  ReferenceTrajectory ref = generate_walking_gait(model, GaitParams{});

  // Both feet on the ground at the first nominal impact.
  VectorXd double_support_q() const { return eval_state(ref, 0.4, Side::kPre).q; }

  double total_energy(const VectorXd& q, const VectorXd& v) const {
    return kinetic_energy(model, q, v) + potential_energy(model, q);
  }
};

TEST(Terrain, PiecewiseConstantHeight) {
  Terrain t{{{0.1, 0.02}, {0.3, -0.01}}};
  EXPECT_EQ(t.height(0.0), 0.0);
  EXPECT_EQ(t.height(0.1), 0.02);
  EXPECT_EQ(t.height(0.25), 0.02);
  EXPECT_EQ(t.height(0.31), -0.01);
  EXPECT_NEAR(t.clearance(Vec2(0.2, 0.05)), 0.03, 1e-15);
  EXPECT_NO_THROW(t.validate());
  Terrain bad{{{0.3, 0.0}, {0.1, 0.0}}};
  EXPECT_THROW(bad.validate(), Error);
}

TEST(SimConfigTest, RejectsInvalidSettings) {
  SimConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.control_ratio(), 10);
  c.dt = 0.0;
  EXPECT_THROW(c.validate(), Error);
  c = SimConfig{};
  c.contact_model = ContactModel::kCompliant;
  c.penetration_allowance = 0.0;
  EXPECT_THROW(c.validate(), Error);
  c = SimConfig{};
  c.t_end = c.t_start;
  EXPECT_THROW(c.validate(), Error);
  EXPECT_EQ(parse_contact_model("rigid_hybrid"), ContactModel::kRigidHybrid);
  EXPECT_EQ(parse_contact_model("compliant"), ContactModel::kCompliant);
  EXPECT_THROW(parse_contact_model("mud"), ParseError);
}

TEST_F(SimFixture, FreeFlightIsBallistic) {
  // With no torque and no joint motion, every body falls together.
  RobotState s{double_support_q(), VectorXd::Zero(kNumCoords), 0.0};
  s.q(kZ) += 0.5;
  s.v(kX) = 0.3;
  s.v(kZ) = 1.0;
  const RobotState s0 = s;
  const VectorXd u = VectorXd::Zero(model.num_actuators());
  const double dt = 1e-3;
  for (int k = 0; k < 300; ++k) s = step_rigid(model, s, PinnedContacts{}, u, dt);
  const double t = s.t;
  EXPECT_NEAR(t, 0.3, 1e-12);
  EXPECT_NEAR(s.q(kX), s0.q(kX) + 0.3 * t, 1e-8);
  EXPECT_NEAR(s.q(kZ), s0.q(kZ) + t - 0.5 * model.gravity * t * t, 1e-8);
  EXPECT_NEAR(s.v(kZ), 1.0 - model.gravity * t, 1e-8);
  for (int i = kPitch; i < kNumCoords; ++i) {
    EXPECT_NEAR(s.q(i), s0.q(i), 1e-8) << kCoordNames[i];
    EXPECT_NEAR(s.v(i), 0.0, 1e-8) << kCoordNames[i];
  }
}

TEST_F(SimFixture, StaticStanceIsAnEquilibrium) {
  const VectorXd q = double_support_q();
  const VectorXd zero = VectorXd::Zero(kNumCoords);
  const ContactSet both({kLeft, kRight});
  const VectorXd u = inverse_dynamics(model, q, zero, zero, both).first;
  RobotState s{q, zero, 0.0};
  for (int k = 0; k < 5000; ++k) s = step_rigid(model, s, both, u, 1e-4);
  EXPECT_LT((s.q - q).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT(s.v.cwiseAbs().maxCoeff(), 1e-8);
}

TEST_F(SimFixture, PinnedStanceFootDoesNotDrift) {
  // Unactuated collapse about a single stance foot.
  RobotState s = RobotState{eval_state(ref, 0.1).q, eval_state(ref, 0.1).v, 0.0};
  const Vec2 anchor = contact_point_position(model, s.q, kLeft);
  const PinnedContacts pins{{kLeft, anchor}};
  const VectorXd u = VectorXd::Zero(model.num_actuators());
  double drift = 0.0;
  for (int k = 0; k < 3000; ++k) {
    s = step_rigid(model, s, pins, u, 1e-4);
    drift = std::max(drift, (contact_point_position(model, s.q, kLeft) - anchor).norm());
  }
  EXPECT_LT(drift, 1e-6);
}

TEST_F(SimFixture, ConstrainedDynamicsSatisfiesTheManipulatorEquation) {
  testing::StateSampler sampler(11);
  for (int trial = 0; trial < 20; ++trial) {
    const VectorXd q = sampler.q(), v = sampler.v(), u = sampler.vec(model.num_actuators(), 20.0);
    const PinnedContacts pins{{kLeft, contact_point_position(model, q, kLeft)}};
    const auto acc = constrained_dynamics(model, q, v, u, pins);
    const MatrixXd j = contact_jacobian(model, q, ContactSet({kLeft}));
    const VectorXd resid = mass_matrix(model, q) * acc.vdot + bias_forces(model, q, v) -
                           model.actuation_matrix() * u - j.transpose() * acc.lambda;
    EXPECT_LT(resid.cwiseAbs().maxCoeff(), 1e-9);
    // Anchored at the current position: J vdot + Jdot v = -2 zeta w J v.
    const VectorXd c = j * acc.vdot + contact_jacobian_dot_v(model, q, v, ContactSet({kLeft})) + 200.0 * (j * v);
    EXPECT_LT(c.cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST_F(SimFixture, DetectsLinearCrossingTime) {
  RobotState prev{eval_state(ref, 0.2).q, VectorXd::Zero(kNumCoords), 1.0};
  const double h0 = contact_point_position(model, prev.q, kRight).y();
  prev.q(kZ) += 0.01 - h0;  // right foot 1 cm up
  RobotState next = prev;
  next.q(kZ) -= 0.04;  // 3 cm below at the end of the step
  next.t = 1.001;
  const auto t = detect_touchdown(model, prev, next, Terrain{}, {kRight});
  ASSERT_TRUE(t.has_value());
  EXPECT_NEAR(*t, 1.00025, 1e-10);

  // Already below at the start, or above at the end: no crossing.
  EXPECT_FALSE(detect_touchdown(model, next, next, Terrain{}, {kRight}).has_value());
  RobotState high = prev;
  high.q(kZ) += 0.1;
  RobotState high_next = next;
  high_next.q(kZ) += 0.1;
  EXPECT_FALSE(detect_touchdown(model, high, high_next, Terrain{}, {kRight}).has_value());

  // A raised step moves the crossing earlier.
  const double x = contact_point_position(model, prev.q, kRight).x();
  const auto t_step = detect_touchdown(model, prev, next, Terrain{{{x - 0.01, 0.005}}}, {kRight});
  ASSERT_TRUE(t_step.has_value());
  EXPECT_NEAR(*t_step, 1.0 + 0.001 * 0.005 / 0.04, 1e-10);
}

TEST(Bisection, FindsRootWithinTolerance) {
  const double s = bisect_crossing([](double x) { return 0.3 - x; }, 0.0, 1.0, 1e-12);
  EXPECT_NEAR(s, 0.3, 1e-12);
  EXPECT_LE(0.3 - s, 0.0);
}

TEST_F(SimFixture, CompliantCalibrationMatchesAllowance) {
  // Static oracle: sink one foot until its force carries the full weight.
  const double allowance = 1e-3;
  VectorXd q = eval_state(ref, 0.1).q;
  const VectorXd v = VectorXd::Zero(kNumCoords);
  const double foot0 = contact_point_position(model, q, kLeft).y();
  auto force_at = [&](double pen) {
    VectorXd qq = q;
    qq(kZ) += -foot0 - pen;
    return compliant_contact_force(model, qq, v, Terrain{}, allowance)[kLeft].y();
  };
  const double weight = model.total_mass() * model.gravity;
  double lo = 0.0, hi = 0.1;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (force_at(mid) < weight ? lo : hi) = mid;
  }
  EXPECT_LT(std::abs(lo - allowance) / allowance, 0.2);
  EXPECT_EQ(force_at(-1e-6), 0.0);
}

TEST_F(SimFixture, CompliantForceProperties) {
  testing::StateSampler sampler(5);
  for (int trial = 0; trial < 50; ++trial) {
    VectorXd q = sampler.q();
    const VectorXd v = sampler.v();
    const double low = std::min(contact_point_position(model, q, kLeft).y(), contact_point_position(model, q, kRight).y());
    q(kZ) -= low + sampler.uniform(-0.01, 0.01);
    const auto f = compliant_contact_force(model, q, v, Terrain{}, 1e-3);
    for (int p : {kLeft, kRight}) {
      const double clearance = contact_point_position(model, q, p).y();
      if (clearance > 0.0) EXPECT_EQ(f[p], Vec2::Zero());
      EXPECT_GE(f[p].y(), 0.0);
      EXPECT_LE(std::abs(f[p].x()), model.mu * f[p].y() + 1e-12);
    }
  }
}

// Largest per-step mismatch between the energy change and the accumulated
// work, for a drop onto the compliant ground at the given speed.
double worst_energy_mismatch(const RobotModel& model, const VectorXd& q_land, double speed, double dt) {
  SimConfig cfg;
  cfg.contact_model = ContactModel::kCompliant;
  cfg.penetration_allowance = 1e-3;
  VectorXd x = VectorXd::Zero(2 * kNumCoords + 2);
  x.head(kNumCoords) = q_land;
  x(kZ) += 0.01;
  x(kNumCoords + kX) = 0.2;
  x(kNumCoords + kZ) = -speed;
  const VectorXd u = (VectorXd(4) << 20.0, -10.0, 15.0, -5.0).finished();
  auto energy = [&](const VectorXd& s) {
    return kinetic_energy(model, s.head(kNumCoords), s.segment(kNumCoords, kNumCoords)) +
           potential_energy(model, s.head(kNumCoords));
  };
  double worst = 0.0;
  const long steps = std::lround(0.2 / dt);
  for (long k = 0; k < steps; ++k) {
    const VectorXd next = step_compliant(model, x, u, dt, cfg);
    worst = std::max(worst, std::abs(energy(next) - energy(x) - (next.tail(2) - x.tail(2)).sum()));
    x = next;
  }
  EXPECT_LT(x(2 * kNumCoords + 1), 0.0);  // the ground dissipated energy
  return worst;
}

TEST_F(SimFixture, CompliantEnergyAccountsForWork) {
  // Touchdown at the gait's landing speed with the default step.
  EXPECT_LT(worst_energy_mismatch(model, double_support_q(), 0.1, 1e-4), 1e-3);
  // A hard landing needs the finer step used by the compliant experiments.
  EXPECT_LT(worst_energy_mismatch(model, double_support_q(), 0.5, 1e-5), 1e-3);
}

TEST_F(SimFixture, SofterGroundResolvesImpactsMoreSlowly) {
  auto resolution_time = [&](double allowance, double dt) {
    SimConfig cfg;
    cfg.contact_model = ContactModel::kCompliant;
    cfg.penetration_allowance = allowance;
    VectorXd q = double_support_q();
    q(kZ) += 1e-9;
    VectorXd v = VectorXd::Zero(kNumCoords);
    v(kZ) = -0.5;
    VectorXd x(2 * kNumCoords + 2);
    x << q, v, 0.0, 0.0;
    const ContactSet both({kLeft, kRight});
    const double pre = (contact_jacobian(model, q, both) * v).norm();
    const VectorXd u = VectorXd::Zero(model.num_actuators());
    for (int k = 1; k < 100000; ++k) {
      x = step_compliant(model, x, u, dt, cfg);
      const VectorXd qk = x.head(kNumCoords), vk = x.segment(kNumCoords, kNumCoords);
      if ((contact_jacobian(model, qk, both) * vk).norm() < 0.05 * pre) return k * dt;
    }
    return 1.0;
  };
  const double stiff = resolution_time(1e-5, 1e-6);
  const double soft = resolution_time(5e-3, 1e-5);
  EXPECT_LT(stiff, 0.01);
  EXPECT_GT(soft, 2.0 * stiff);
}

TEST_F(SimFixture, ImpactResolutionRespectsComplementarity) {
  testing::StateSampler sampler(21);
  int checked = 0, complementary = 0;
  for (int trial = 0; trial < 200; ++trial) {
    RobotState s{sampler.q(), sampler.v(), 0.0};
    // The pinned stance foot is at rest.
    s.v = reset_velocity_projector(model, s.q, ContactSet({kLeft})) * s.v;
    const Vec2 left = contact_point_position(model, s.q, kLeft);
    s.q(kZ) -= left.y();
    const Vec2 right = contact_point_position(model, s.q, kRight);
    if (std::abs(left.x() - right.x()) < 0.05) continue;
    // Ground at the right foot's height on its side of the midpoint.
    const double mid = 0.5 * (left.x() + right.x());
    const Terrain flat = right.x() > left.x() ? Terrain{{{mid, right.y()}}}
                                              : Terrain{{{-1e3, right.y()}, {mid, 0.0}}};
    const MatrixXd jr = contact_jacobian(model, s.q, ContactSet({kRight}));
    if ((jr * s.v)(1) >= -0.05) continue;
    const PinnedContacts pins{{kLeft, contact_point_position(model, s.q, kLeft)}};
    try {
      const auto res = detail::resolve_impact(model, s, pins, kRight, flat);
      const double ke_pre = kinetic_energy(model, s.q, s.v);
      const double ke_post = kinetic_energy(model, s.q, res.impact.post_velocity);
      EXPECT_LE(ke_post, ke_pre + 1e-9 * std::max(1.0, ke_pre));
      const MatrixXd jk = contact_jacobian(model, s.q, contact_set_of(res.pins));
      EXPECT_LT((jk * res.impact.post_velocity).cwiseAbs().maxCoeff(), 1e-10);
      ASSERT_EQ(res.pins.back().point, kRight);
      ++checked;
      if (!res.complementary) {
        EXPECT_EQ(res.pins.size(), 2u);
        continue;
      }
      ++complementary;
      for (std::size_t k = 0; k < res.pins.size(); ++k) EXPECT_GE(res.impact.impulse(2 * k + 1), -1e-12);
      if (res.pins.size() == 1) {
        const MatrixXd jl = contact_jacobian(model, s.q, ContactSet({kLeft}));
        EXPECT_GE((jl * res.impact.post_velocity)(1), -1e-12);
      }
    } catch (const SingularContactError&) {
    }
  }
  EXPECT_GT(complementary, checked / 2);
  EXPECT_GT(checked, 20);
}

class ClosedLoopFixture : public SimFixture {
 protected:
  SimResult walk(Variant variant, double t_end = 0.9) {
    Controller c(model, ref, default_controller_spec(model, ControllerType::kJointSpace, variant));
    SimConfig cfg;
    cfg.t_end = t_end;
    return rollout(model, c, cfg);
  }
};

TEST_F(ClosedLoopFixture, WalkingImpactsAreRigidAndDissipative) {
  const SimResult r = walk(Variant::kDefault);
  ASSERT_TRUE(r.ok()) << r.message;
  const auto first = r.first_touchdown(kRight);
  ASSERT_TRUE(first.has_value());
  EXPECT_NEAR(first->t, 0.4, 0.03);
  const auto second = r.first_touchdown(kLeft, first->t);
  ASSERT_TRUE(second.has_value());
  EXPECT_NEAR(second->t, 0.8, 0.05);
  int touchdowns = 0;
  for (const auto& e : r.events) {
    if (e.kind != EventKind::kTouchdown) continue;
    ++touchdowns;
    EXPECT_LT(e.residual, 1e-10);
    EXPECT_LE(e.ke_post, e.ke_pre + 1e-12);
    if (e.complementary) EXPECT_GE(e.impulse.y(), 0.0);
  }
  EXPECT_GE(touchdowns, 2);
  // The stance foot carries the weight between events.
  const auto& mid = r.samples[r.samples.size() / 4];
  EXPECT_EQ(mid.contact_mask, 1u << kLeft);
  EXPECT_GT(mid.lambda(2 * kLeft + 1), 0.0);
  // Samples sit on the grid plus one extra per touchdown.
  EXPECT_NEAR(r.samples.back().t, 0.9, 1e-12);
}

TEST_F(ClosedLoopFixture, ReplayIsDeterministic) {
  const SimResult a = walk(Variant::kImpactInvariant, 0.5);
  const SimResult b = walk(Variant::kImpactInvariant, 0.5);
  ASSERT_EQ(a.samples.size(), b.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    ASSERT_EQ(a.samples[i].q, b.samples[i].q);
    ASSERT_EQ(a.samples[i].u, b.samples[i].u);
  }
  ASSERT_EQ(a.events.size(), b.events.size());
}

TEST_F(ClosedLoopFixture, DivergenceStopsTheRun) {
  Controller c(model, ref, default_controller_spec(model, ControllerType::kJointSpace));
  SimConfig cfg;
  cfg.t_end = 0.2;
  cfg.divergence_limit = 1e-6;
  const SimResult r = rollout(model, c, cfg);
  EXPECT_EQ(r.termination, Termination::kDiverged);
  EXPECT_FALSE(r.ok());
}

TEST_F(ClosedLoopFixture, CompliantWalkTouchesDown) {
  Controller c(model, ref, default_controller_spec(model, ControllerType::kJointSpace));
  SimConfig cfg;
  cfg.contact_model = ContactModel::kCompliant;
  cfg.penetration_allowance = 1e-3;
  cfg.dt = 1e-5;
  cfg.t_start = 0.3;
  cfg.t_end = 0.45;
  const SimResult r = rollout(model, c, cfg);
  ASSERT_TRUE(r.ok()) << r.message;
  const auto td = r.first_touchdown(kRight);
  ASSERT_TRUE(td.has_value());
  EXPECT_NEAR(td->t, 0.4, 0.02);
  // Static stance sinks by roughly the allowance.
  const auto& s = r.samples[r.samples.size() / 4];
  EXPECT_NEAR(-contact_point_position(model, s.q, kLeft).y(), 1e-3, 5e-4);
}

TEST_F(ClosedLoopFixture, CsvRowsMatchHeader) {
  const SimResult r = walk(Variant::kDefault, 0.45);
  std::ostringstream ts, ev;
  write_timeseries_csv(ts, model, r);
  write_events_csv(ev, r);
  std::istringstream in(ts.str());
  std::string header, row;
  std::getline(in, header);
  const auto count = [](const std::string& s) { return std::count(s.begin(), s.end(), ','); };
  EXPECT_EQ(static_cast<std::size_t>(count(header)) + 1, timeseries_columns(model, r).size());
  std::size_t rows = 0;
  while (std::getline(in, row)) {
    EXPECT_EQ(count(row), count(header));
    ++rows;
  }
  EXPECT_EQ(rows, r.samples.size());
  EXPECT_NE(ev.str().find("touchdown"), std::string::npos);
}

}  // namespace
}  // namespace iip
