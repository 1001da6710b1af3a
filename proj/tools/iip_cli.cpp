// Command-line harness: closed-loop simulation, the walking comparison,
// parameter sweeps, gait generation and offline velocity projection.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <sstream>

#include "iip/experiments.hpp"

namespace {

using namespace iip;

struct CommonOptions {
  std::string model_path;
  std::string traj_path;
  std::string controller;
  std::vector<std::string> variants;
  double perturb = -0.1;
  std::vector<double> window_ms;
  std::vector<double> heights;
  std::vector<double> allowances;
  std::uint64_t seed = 0;
  std::string out_dir = "out";
  int threads = 0;
};

RobotModel model_of(const CommonOptions& o) {
  return o.model_path.empty() ? RobotModel::five_link_default() : load_model(o.model_path);
}

ReferenceTrajectory reference_of(const CommonOptions& o, const RobotModel& model, const GaitParams& fallback) {
  return o.traj_path.empty() ? generate_walking_gait(model, fallback) : load_trajectory(o.traj_path);
}

/// `--controller` takes a type name or a JSON config path.
ControllerSpec controller_of(const CommonOptions& o, const RobotModel& model, ControllerType fallback) {
  if (o.controller.empty()) return default_controller_spec(model, fallback);
  if (std::filesystem::path(o.controller).extension() == ".json") return load_controller_spec(o.controller, model);
  return default_controller_spec(model, parse_controller_type(o.controller));
}

/// Overrides the spec's lists with whatever was given on the command line.
void apply_lists(const CommonOptions& o, ExperimentSpec& spec) {
  if (!o.variants.empty()) {
    spec.variants.clear();
    for (const auto& v : o.variants) spec.variants.push_back(parse_variant(v));
  }
  if (!o.window_ms.empty()) {
    spec.windows.clear();
    for (double w : o.window_ms) spec.windows.push_back(w * 1e-3);
  }
  if (!o.heights.empty()) spec.heights = o.heights;
  if (!o.allowances.empty()) spec.allowances = o.allowances;
  spec.seed = o.seed;
  spec.out_dir = o.out_dir;
  spec.threads = o.threads;
}

void print_summary(const ExperimentResult& r) {
  std::cout << std::left << std::setw(52) << "cell" << std::setw(14) << "j_mot" << std::setw(12) << "j_acc"
            << std::setw(12) << "e_imp" << std::setw(12) << "e_non" << "status\n";
  std::cout << std::setprecision(5);
  for (const auto& c : r.cells) {
    const MetricsRow& m = c.row;
    std::cout << std::setw(52) << m.cell << std::setw(14) << m.j_mot << std::setw(12) << m.j_acc << std::setw(12)
              << m.e_impacting << std::setw(12) << m.e_non_impacting << m.status << "\n";
  }
}

void add_common(CLI::App* sub, CommonOptions& o, bool lists) {
  sub->add_option("--model", o.model_path, "Robot model JSON (default: built-in five-link walker)");
  sub->add_option("--traj", o.traj_path, "Reference trajectory JSON (default: generated gait)");
  sub->add_option("--controller", o.controller, "joint_space, osc, or a controller config JSON");
  sub->add_option("--perturb", o.perturb, "Swing foot vertical velocity change at the start, m/s (negative is down)");
  sub->add_option("--seed", o.seed, "Recorded with the results; runs are deterministic");
  sub->add_option("--out-dir", o.out_dir, "Output directory")->capture_default_str();
  sub->add_option("--threads", o.threads, "Worker threads (0: one per core)");
  if (lists) {
    sub->add_option("--variant", o.variants, "Controller variants")->delimiter(',');
    sub->add_option("--window-ms", o.window_ms, "Projection window half-widths, ms")->delimiter(',');
    sub->add_option("--heights", o.heights, "Terrain step heights under the landing foot, m")->delimiter(',');
    sub->add_option("--allowances", o.allowances, "Ground penetration allowances, m (0: rigid)")->delimiter(',');
  }
}

int run(int argc, char** argv) {
  CLI::App app{"Impact-invariant control experiments for a planar five-link biped"};
  app.require_subcommand(1);

  CommonOptions sim_o, walk_o, sweep_o;
  double t_start = 0.0, t_end = 0.9;

  auto* sim = app.add_subcommand("simulate", "One closed-loop rollout");
  add_common(sim, sim_o, true);
  sim->add_option("--t-start", t_start, "Start time on the reference, s")->capture_default_str();
  sim->add_option("--t-end", t_end, "End time, s")->capture_default_str();

  auto* walk = app.add_subcommand("compare-walking", "Controller variants after a swing foot perturbation");
  add_common(walk, walk_o, true);

  std::string kind;
  auto* sweep = app.add_subcommand("sweep", "Terrain height, ground stiffness or window duration sweep");
  add_common(sweep, sweep_o, true);
  sweep->add_option("--kind", kind, "height, stiffness or window (default: inferred from the lists)");

  GaitParams gait;
  std::string gait_out = "gait.json";
  auto* gen = app.add_subcommand("gen-gait", "Generate a periodic walking reference");
  gen->add_option("--step-length", gait.step_length, "Hip travel per period, m")->capture_default_str();
  gen->add_option("--period", gait.period, "Period (two steps), s")->capture_default_str();
  gen->add_option("--clearance", gait.clearance, "Swing foot apex height, m")->capture_default_str();
  gen->add_option("--landing-speed", gait.landing_speed, "Swing foot vertical speed at touchdown, m/s")
      ->capture_default_str();
  gen->add_option("--out", gait_out, "Output trajectory JSON")->capture_default_str();

  std::string proj_model, proj_in, proj_out = "projected.csv";
  std::vector<std::string> proj_contacts;
  auto* proj = app.add_subcommand("project-log", "Project logged velocities onto the impact-invariant subspace");
  proj->add_option("--model", proj_model, "Robot model JSON (default: built-in five-link walker)");
  proj->add_option("--in", proj_in, "CSV with t, q0..q6, v0..v6 columns")->required();
  proj->add_option("--contacts", proj_contacts, "Impacting contact names")->delimiter(',')->required();
  proj->add_option("--out", proj_out, "Output CSV")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  if (*sim) {
    const RobotModel model = model_of(sim_o);
    const ReferenceTrajectory ref = reference_of(sim_o, model, GaitParams{});
    const ControllerSpec base = controller_of(sim_o, model, ControllerType::kJointSpace);
    ExperimentSpec spec = default_experiment(ExperimentKind::kHeightSweep);
    spec.heights = {0.0};
    spec.windows = {base.window_half_width};
    spec.variants = {base.variant};
    spec.t_start = t_start;
    spec.perturbation = sim_o.perturb;
    apply_lists(sim_o, spec);
    spec.validate();
    ExperimentSetup setup = experiment_setup(model, ref, spec);
    setup.sim_end = std::max(setup.sim_end, t_end);
    const Cell cell{spec.variants.front(), spec.heights.front(), spec.allowances.front(), spec.windows.front()};
    ExperimentResult r;
    r.spec = spec;
    r.t_impact = setup.t_impact;
    r.impacting_point = setup.impacting_point;
    r.cells.push_back(run_cell(model, ref, base, spec, setup, cell));
    r.cells[0].row.experiment = "simulate";
    r.cells[0].row.cell = "simulate";
    write_experiment_outputs(sim_o.out_dir, model, ref, r);
    print_summary(r);
    return r.cells[0].sim.ok() ? 0 : 2;
  }
  if (*walk) {
    const RobotModel model = model_of(walk_o);
    const ReferenceTrajectory ref = reference_of(walk_o, model, GaitParams{});
    ExperimentSpec spec = default_experiment(ExperimentKind::kWalkingComparison);
    spec.perturbation = walk_o.perturb;
    apply_lists(walk_o, spec);
    const ExperimentResult r =
        run_walking_comparison(model, ref, controller_of(walk_o, model, ControllerType::kJointSpace), spec);
    write_experiment_outputs(walk_o.out_dir, model, ref, r);
    print_summary(r);
    return 0;
  }
  if (*sweep) {
    ExperimentKind k = ExperimentKind::kWindowSweep;
    if (!kind.empty()) {
      k = parse_experiment_kind(kind);
    } else if (sweep_o.allowances.size() > 1) {
      k = ExperimentKind::kStiffnessSweep;
    } else if (sweep_o.heights.size() > 1 || sweep_o.window_ms.size() <= 1) {
      k = ExperimentKind::kHeightSweep;
    }
    if (k == ExperimentKind::kWalkingComparison) throw ParseError("use compare-walking for the walking comparison");
    const RobotModel model = model_of(sweep_o);
    const ReferenceTrajectory ref = reference_of(sweep_o, model, sweep_gait_params());
    ExperimentSpec spec = default_experiment(k);
    spec.perturbation = sweep->count("--perturb") ? sweep_o.perturb : 0.0;
    apply_lists(sweep_o, spec);
    const ExperimentResult r = run_sweep(model, ref, controller_of(sweep_o, model, ControllerType::kOsc), spec);
    write_experiment_outputs(sweep_o.out_dir, model, ref, r);
    print_summary(r);
    return 0;
  }
  if (*gen) {
    const RobotModel model = RobotModel::five_link_default();
    const ReferenceTrajectory ref = generate_walking_gait(model, gait);
    save_trajectory(ref, gait_out);
    std::cout << "wrote " << gait_out << " (reset consistency " << reset_consistency_error(model, ref) << ")\n";
    return 0;
  }
  if (*proj) {
    const RobotModel model = proj_model.empty() ? RobotModel::five_link_default() : load_model(proj_model);
    std::vector<int> ids;
    for (const auto& name : proj_contacts) ids.push_back(model.contact_index(name));
    project_log(model, proj_in, ContactSet(ids), proj_out);
    std::cout << "wrote " << proj_out << "\n";
    return 0;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
