#include <gtest/gtest.h>

#include <functional>
#include <numbers>
#include <set>
#include <sstream>

#include "iip/experiments.hpp"
#include "test_util.hpp"

namespace iip {
namespace {

constexpr int kLeft = 0;
constexpr int kRight = 1;

SimResult log_of(const std::vector<double>& t, const std::function<VectorXd(double)>& u) {
  SimResult r;
  for (double ti : t) {
    SimSample s;
    s.t = ti;
    s.u = u(ti);
    r.samples.push_back(s);
  }
  return r;
}

std::vector<double> grid(double t0, double t1, double dt) {
  std::vector<double> t;
  const long n = std::lround((t1 - t0) / dt);
  for (long k = 0; k <= n; ++k) t.push_back(t0 + k * dt);
  return t;
}

TEST(MetricJmot, ZeroTorqueIsFree) {
  const SimResult r = log_of(grid(0.0, 0.2, 1e-3), [](double) { return VectorXd::Zero(4); });
  EXPECT_EQ(metric_jmot(r, 0.0, 0.2), 0.0);
}

TEST(MetricJmot, ConstantUnitTorques) {
  const SimResult r = log_of(grid(0.0, 0.1, 1e-4), [](double) { return VectorXd::Ones(4); });
  EXPECT_NEAR(metric_jmot(r, 0.0, 0.1), 0.4, 1e-12);
}

TEST(MetricJmot, SinusoidMatchesClosedForm) {
  const double w = 2.0 * std::numbers::pi * 3.0;
  const SimResult r = log_of(grid(0.0, 0.5, 1e-4), [&](double t) {
    VectorXd u(4);
    u << 10.0 * std::sin(w * t), 5.0 * std::cos(w * t), 2.0, 0.0;
    return u;
  });
  const double t0 = 0.05, tf = 0.37;
  // int sin^2 = t/2 - sin(2wt)/(4w), int cos^2 = t/2 + sin(2wt)/(4w)
  auto prim = [&](double t) {
    const double s = std::sin(2.0 * w * t) / (4.0 * w);
    return 100.0 * (t / 2.0 - s) + 25.0 * (t / 2.0 + s) + 4.0 * t;
  };
  const double exact = prim(tf) - prim(t0);
  EXPECT_LT(std::abs(metric_jmot(r, t0, tf) - exact) / exact, 1e-4);
}

TEST(MetricJmot, ClipsBetweenSamples) {
  // sum u^2 = t on a coarse grid is integrated exactly by interpolation.
  const SimResult r = log_of(grid(0.0, 1.0, 0.1), [](double t) { return VectorXd::Constant(1, std::sqrt(t)); });
  EXPECT_NEAR(metric_jmot(r, 0.25, 0.62), 0.5 * (0.62 * 0.62 - 0.25 * 0.25), 1e-12);
}

TEST(MetricJmot, RejectsBadWindows) {
  const SimResult r = log_of(grid(0.0, 0.1, 1e-3), [](double) { return VectorXd::Ones(4); });
  EXPECT_THROW(metric_jmot(r, 0.05, 0.05), Error);
  EXPECT_THROW(metric_jmot(r, 0.06, 0.05), Error);
  EXPECT_THROW(metric_jmot(r, -0.01, 0.05), Error);
  EXPECT_THROW(metric_jmot(r, 0.05, 0.2), Error);
}

class MetricsFixture : public ::testing::Test {
 protected:
  RobotModel model = RobotModel::five_link_default();
  ReferenceTrajectory ref = generate_walking_gait(model, GaitParams{});
  ControllerSpec spec = default_controller_spec(model, ControllerType::kOsc);

  // Log that follows the reference plus fixed offsets.
  SimResult offset_log(const VectorXd& dq, const VectorXd& dv, double t0, double t1) const {
    SimResult r;
    for (double t : grid(t0, t1, 1e-4)) {
      const StateSample des = eval_state(ref, t);
      SimSample s;
      s.t = t;
      s.q = des.q + dq;
      s.v = des.v + dv;
      s.u = VectorXd::Zero(4);
      r.samples.push_back(s);
    }
    return r;
  }
};

TEST_F(MetricsFixture, JaccIsZeroOnTheReference) {
  const VectorXd zero = VectorXd::Zero(kNumCoords);
  EXPECT_LT(metric_jacc(model, offset_log(zero, zero, 0.1, 0.2), spec, ref, 0.15), 1e-20);
}

TEST_F(MetricsFixture, SevenCentimetreHeightErrorIsOne) {
  VectorXd dq = VectorXd::Zero(kNumCoords);
  dq(kZ) = -0.07;
  const VectorXd zero = VectorXd::Zero(kNumCoords);
  EXPECT_NEAR(metric_jacc(model, offset_log(dq, zero, 0.1, 0.2), spec, ref, 0.15), 1.0, 1e-9);
}

TEST_F(MetricsFixture, JaccMatchesDirectFormula) {
  ControllerSpec s = spec;
  for (OutputDef& o : s.outputs) {
    if (o.name == "pitch") {
      o.kp(0) = 40.0;
      o.kd(0) = 7.0;
      o.weight(0) = 2.5;
    } else if (o.name == "base_height") {
      o.kp(0) = 90.0;
      o.kd(0) = 12.0;
      o.weight(0) = 0.5;
    }
  }
  VectorXd dq = VectorXd::Zero(kNumCoords), dv = VectorXd::Zero(kNumCoords);
  dq(kPitch) = 0.03;
  dq(kZ) = -0.01;
  dv(kPitch) = -0.2;
  dv(kZ) = 0.15;
  dv(kLeftKnee) = 3.0;  // not an output
  const double a_pitch = 40.0 * -0.03 + 7.0 * 0.2;
  const double a_height = 90.0 * 0.01 + 12.0 * -0.15;
  const double expected = (2.5 * a_pitch * a_pitch + 0.5 * a_height * a_height) / (90.0 * 0.07 * 90.0 * 0.07 * 0.5);
  EXPECT_NEAR(metric_jacc(model, offset_log(dq, dv, 0.1, 0.2), s, ref, 0.15), expected, 1e-9 * expected);
}

TEST_F(MetricsFixture, JaccTakesTheMedianOfNearbySamples) {
  const VectorXd zero = VectorXd::Zero(kNumCoords);
  SimResult r = offset_log(zero, zero, 0.1, 0.2);
  // One outlier sample at the centre does not move the median.
  const std::size_t mid = nearest_sample(r, 0.15);
  r.samples[mid].q(kZ) += 0.5;
  EXPECT_LT(metric_jacc(model, r, spec, ref, 0.15), 1e-20);
  EXPECT_THROW(metric_jacc(model, r, spec, ref, 0.3), Error);
  EXPECT_THROW(metric_jacc(model, r, spec, ref, 0.05), Error);
}

TEST_F(MetricsFixture, PerturbationMovesOnlyTheSwingFootVertically) {
  testing::StateSampler sampler(3);
  for (int trial = 0; trial < 20; ++trial) {
    const VectorXd q = sampler.q(), v = sampler.v();
    const VectorXd vp = perturb_point_velocity(model, q, v, kRight, -0.1);
    const MatrixXd j = contact_jacobian(model, q, ContactSet({kRight}));
    const VectorXd dfoot = j * (vp - v);
    EXPECT_NEAR(dfoot(0), 0.0, 1e-12);
    EXPECT_NEAR(dfoot(1), -0.1, 1e-12);
    for (int i : {int{kX}, int{kZ}, int{kPitch}, int{kLeftHip}, int{kLeftKnee}}) EXPECT_EQ(vp(i), v(i));
  }
  EXPECT_EQ(point_joints(model, sampler.q(), kLeft), (std::vector<int>{kLeftHip, kLeftKnee}));
}

TEST(ExperimentSpecTest, ValidatesLists) {
  ExperimentSpec s;
  EXPECT_NO_THROW(s.validate());
  s.windows = {};
  EXPECT_THROW(s.validate(), Error);
  s = ExperimentSpec{};
  s.windows = {0.0};
  EXPECT_THROW(s.validate(), Error);
  s = ExperimentSpec{};
  s.heights = {};
  EXPECT_THROW(s.validate(), Error);
  s = ExperimentSpec{};
  s.allowances = {-1e-3};
  EXPECT_THROW(s.validate(), Error);
  s = ExperimentSpec{};
  s.variants = {};
  EXPECT_THROW(s.validate(), Error);
  EXPECT_EQ(parse_experiment_kind("stiffness_sweep"), ExperimentKind::kStiffnessSweep);
  EXPECT_EQ(parse_experiment_kind("height"), ExperimentKind::kHeightSweep);
  EXPECT_THROW(parse_experiment_kind("jump"), ParseError);
}

TEST(ExperimentSpecTest, CellsFormTheFullCrossProduct) {
  ExperimentSpec s = default_experiment(ExperimentKind::kHeightSweep);
  s.allowances = {0.0, 1e-3};
  const auto cells = experiment_cells(s);
  EXPECT_EQ(cells.size(), 3u * 2u * 2u * 3u);
  std::set<std::string> ids;
  for (const auto& c : cells) ids.insert(cell_id(s, c));
  EXPECT_EQ(ids.size(), cells.size());
  EXPECT_EQ(cells.front().variant, Variant::kDefault);
  EXPECT_EQ(cells.back().height, 0.05);
}

class WalkingFixture : public ::testing::Test {
 protected:
  RobotModel model = RobotModel::five_link_default();
  ReferenceTrajectory ref = generate_walking_gait(model, GaitParams{});
  ControllerSpec base = default_controller_spec(model, ControllerType::kJointSpace);

  ExperimentResult walk(double perturbation, int threads = 1) const {
    ExperimentSpec s = default_experiment(ExperimentKind::kWalkingComparison);
    s.perturbation = perturbation;
    s.threads = threads;
    return run_walking_comparison(model, ref, base, s);
  }

  static std::string table(const ExperimentResult& r) {
    std::ostringstream os;
    write_metrics_csv(os, metrics_of(r));
    return os.str();
  }
};

TEST_F(WalkingFixture, RowsAreCompleteAndComparable) {
  const ExperimentResult r = walk(-0.1);
  ASSERT_EQ(r.cells.size(), 3u);
  EXPECT_EQ(r.impacting_point, kRight);
  EXPECT_NEAR(r.t_impact, 0.4, 1e-12);
  for (const auto& c : r.cells) {
    const MetricsRow& row = c.row;
    EXPECT_TRUE(row.success) << row.cell << " " << row.status;
    EXPECT_GE(row.j_mot, 0.0);
    EXPECT_GE(row.j_acc, 0.0);
    EXPECT_GT(row.e_impacting, 0.0);
    EXPECT_GT(row.e_non_impacting, 0.0);
    // A downward push lands early.
    EXPECT_LT(row.touchdown, 0.4);
    EXPECT_EQ(row.config_hash, r.cells.front().row.config_hash);
    EXPECT_EQ(c.impacting_joints, (std::vector<int>{kRightHip, kRightKnee}));
    EXPECT_EQ(c.non_impacting_joints, (std::vector<int>{kLeftHip, kLeftKnee}));
  }
}

TEST_F(WalkingFixture, RepeatedRunsGiveIdenticalTables) {
  const std::string a = table(walk(-0.1));
  EXPECT_EQ(a, table(walk(-0.1)));
  EXPECT_EQ(a, table(walk(-0.1, 3)));
}

TEST_F(WalkingFixture, UnperturbedVariantsNearlyAgree) {
  // Tracking is not exact, so touchdown misses the nominal time by about a
  // millisecond and the windows change the torques slightly.
  const auto rows = metrics_of(walk(0.0));
  for (const auto& r : rows) {
    ASSERT_TRUE(r.success);
    EXPECT_NEAR(r.touchdown, 0.4, 2e-3);
    EXPECT_NEAR(r.e_impacting / rows[0].e_impacting, 1.0, 0.1) << r.variant;
    EXPECT_NEAR(r.e_non_impacting / rows[0].e_non_impacting, 1.0, 0.15) << r.variant;
    EXPECT_NEAR(r.j_mot / rows[0].j_mot, 1.0, 0.03) << r.variant;
  }
}

TEST_F(WalkingFixture, DivergentCellsAreFlagged) {
  ExperimentSpec s = default_experiment(ExperimentKind::kWalkingComparison);
  s.perturbation = -5e3;
  s.variants = {Variant::kDefault};
  const ExperimentResult r = run_walking_comparison(model, ref, base, s);
  ASSERT_EQ(r.cells.size(), 1u);
  EXPECT_FALSE(r.cells[0].row.success);
  EXPECT_EQ(r.cells[0].row.status, "diverged");
  EXPECT_TRUE(std::isnan(r.cells[0].row.j_mot));
}

TEST_F(WalkingFixture, MetricsCsvRoundTrips) {
  const auto rows = metrics_of(walk(-0.1));
  std::ostringstream os;
  write_metrics_csv(os, rows);
  std::istringstream is(os.str());
  const auto back = read_metrics_csv(is);
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].cell, rows[i].cell);
    EXPECT_EQ(back[i].j_mot, rows[i].j_mot);
    EXPECT_EQ(back[i].e_impacting, rows[i].e_impacting);
    EXPECT_NEAR(back[i].window, rows[i].window, 1e-15);
    EXPECT_EQ(back[i].success, rows[i].success);
    EXPECT_EQ(back[i].config_hash, rows[i].config_hash);
  }
}

TEST_F(WalkingFixture, WritesPerCellFiles) {
  const ExperimentResult r = walk(-0.1);
  const auto dir = std::filesystem::temp_directory_path() / "iip_test_walking_outputs";
  std::filesystem::remove_all(dir);
  write_experiment_outputs(dir, model, ref, r);
  EXPECT_TRUE(std::filesystem::exists(dir / "metrics.csv"));
  for (const auto& c : r.cells) {
    for (const char* sub : {"timeseries", "events", "leg_errors"}) {
      EXPECT_TRUE(std::filesystem::exists(dir / sub / (c.row.cell + ".csv"))) << sub << " " << c.row.cell;
    }
  }
  std::ifstream f(dir / "leg_errors" / (r.cells[0].row.cell + ".csv"));
  const CsvTable t = read_csv(f);
  EXPECT_GE(t.column("impacting_norm"), 0);
  EXPECT_EQ(t.rows.size(), r.cells[0].sim.samples.size());
  std::filesystem::remove_all(dir);
}

TEST(Sweep, HashesGroupCellsAndDefaultIgnoresTheWindow) {
  const RobotModel model = RobotModel::five_link_default();
  const ReferenceTrajectory ref = generate_walking_gait(model, sweep_gait_params());
  ExperimentSpec s = default_experiment(ExperimentKind::kHeightSweep);
  s.heights = {0.0, 0.025};
  s.windows = {0.025, 0.05};
  s.variants = {Variant::kDefault, Variant::kImpactInvariant};
  const auto rows = metrics_of(run_sweep(model, ref, default_controller_spec(model, ControllerType::kOsc), s));
  ASSERT_EQ(rows.size(), 8u);
  for (const auto& r : rows) {
    EXPECT_TRUE(r.success) << r.cell;
    EXPECT_EQ(r.sweep_value, r.height);
    EXPECT_EQ(r.config_hash, rows[r.height == 0.0 ? 0 : 4].config_hash);
  }
  EXPECT_NE(rows[0].config_hash, rows[4].config_hash);
  const MetricsRow& d25 = find_row(rows, Variant::kDefault, 0.025, 0.0, 0.025);
  const MetricsRow& d50 = find_row(rows, Variant::kDefault, 0.025, 0.0, 0.05);
  EXPECT_EQ(d25.j_mot, d50.j_mot);
  EXPECT_NE(d25.cell, d50.cell);
  // A raised step lands early.
  EXPECT_LT(d25.touchdown, find_row(rows, Variant::kDefault, 0.0, 0.0, 0.05).touchdown - 0.01);
  EXPECT_THROW(run_walking_comparison(model, ref, default_controller_spec(model, ControllerType::kOsc), s), Error);
}

TEST(Sweep, AccelerationErrorIsMoreSensitiveToTheWindowThanEffort) {
  const RobotModel model = RobotModel::five_link_default();
  const ReferenceTrajectory ref = generate_walking_gait(model, sweep_gait_params());
  ExperimentSpec s = default_experiment(ExperimentKind::kWindowSweep);
  s.variants = {Variant::kImpactInvariant};
  const auto rows = metrics_of(run_sweep(model, ref, default_controller_spec(model, ControllerType::kOsc), s));
  auto spread = [&](double MetricsRow::*field) {
    double lo = 1e300, hi = -1e300, sum = 0.0;
    for (const auto& r : rows) {
      lo = std::min(lo, r.*field);
      hi = std::max(hi, r.*field);
      sum += r.*field;
    }
    return (hi - lo) / (sum / rows.size());
  };
  EXPECT_GT(spread(&MetricsRow::j_acc), 2.0 * spread(&MetricsRow::j_mot));
}

class ProjectionLogFixture : public ::testing::Test {
 protected:
  RobotModel model = RobotModel::five_link_default();
};

TEST_F(ProjectionLogFixture, NoContactsLeavesVelocitiesUnchanged) {
  testing::StateSampler sampler(1);
  VelocityLog log;
  const VectorXd q = sampler.q(), v = sampler.v();
  for (int k = 0; k < 10; ++k) {
    log.t.push_back(0.01 * k);
    log.q.push_back(q);
    log.v.push_back(v);
  }
  const auto p = project_velocities(model, log, ContactSet{});
  for (const auto& pv : p) EXPECT_LT((pv - v).cwiseAbs().maxCoeff(), 1e-14);
}

TEST_F(ProjectionLogFixture, ImpulsiveJumpIsRemoved) {
  testing::StateSampler sampler(6);
  for (int trial = 0; trial < 20; ++trial) {
    const VectorXd q = sampler.q(), v = sampler.v();
    const ContactSet c({kRight});
    const VectorXd lambda = sampler.vec(2, 10.0);
    const VectorXd jump =
        mass_matrix(model, q).ldlt().solve(contact_jacobian(model, q, c).transpose() * lambda);
    VelocityLog log;
    for (int k = 0; k < 6; ++k) {
      log.t.push_back(0.001 * k);
      log.q.push_back(q);
      log.v.push_back(k < 3 ? v : VectorXd(v + jump));
    }
    const auto p = project_velocities(model, log, c);
    EXPECT_LT((p[3] - p[2]).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_GT((log.v[3] - log.v[2]).cwiseAbs().maxCoeff(), 1e-3);
  }
}

TEST_F(ProjectionLogFixture, WalkingLogIsSmootherAfterProjection) {
  const ReferenceTrajectory ref = generate_walking_gait(model, GaitParams{});
  Controller c(model, ref, default_controller_spec(model, ControllerType::kJointSpace));
  SimConfig cfg;
  cfg.t_start = 0.3;
  cfg.t_end = 0.45;
  const SimResult sim = rollout(model, c, cfg);
  ASSERT_TRUE(sim.ok());
  const auto td = sim.first_touchdown(kRight);
  ASSERT_TRUE(td.has_value());

  // Through the CSV path, as the command-line tool reads it.
  std::ostringstream ts;
  write_timeseries_csv(ts, model, sim);
  std::istringstream in(ts.str());
  const VelocityLog log = velocity_log_from_csv(read_csv(in));
  ASSERT_EQ(log.t.size(), sim.samples.size());
  const auto p = project_velocities(model, log, ContactSet({kRight}));
  // Velocity change across the touchdown sample.
  std::size_t k = 0;
  while (log.t[k + 1] < td->t) ++k;
  const VectorXd jump = (log.v[k + 2] - log.v[k]).cwiseAbs();
  for (int j : model.actuated) {
    const double raw = total_variation(log.t, log.v, j, td->t - 0.01, td->t + 0.01);
    const double proj = total_variation(log.t, p, j, td->t - 0.01, td->t + 0.01);
    if (jump(j) > 0.05) {
      EXPECT_LT(proj, 0.95 * raw) << kCoordNames[j];
    } else {
      // Barely touched by the impulse; the smooth motion is kept.
      EXPECT_LT(proj, 1.01 * raw) << kCoordNames[j];
    }
  }
  EXPECT_LT(jump(kLeftHip), 0.05);
  EXPECT_GT(jump(kRightKnee), 0.05);
}

TEST(CsvTableTest, RejectsMalformedInput) {
  std::istringstream empty("");
  EXPECT_THROW(read_csv(empty), ParseError);
  std::istringstream ragged("t,a\n0,1\n1\n");
  EXPECT_THROW(read_csv(ragged), ParseError);
  std::istringstream text("t,q0\n0,abc\n");
  const CsvTable t = read_csv(text);
  EXPECT_THROW(t.number(0, 1), ParseError);
  EXPECT_THROW(velocity_log_from_csv(t), ParseError);
  std::istringstream ok("t,x\r\n0.5,2\r\n");
  const CsvTable u = read_csv(ok);
  EXPECT_EQ(u.number(0, u.require_column("x")), 2.0);
}

}  // namespace
}  // namespace iip
