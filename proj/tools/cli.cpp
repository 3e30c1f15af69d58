#include "cli.hpp"

#include <atomic>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "vonctl/error.hpp"
#include "vonctl/eval.hpp"
#include "vonctl/io.hpp"
#include "vonctl/server.hpp"
#include "vonctl/session.hpp"

namespace vonctl::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class MissingFile : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

const fs::path& existing(const fs::path& p) {
  if (!fs::exists(p)) throw MissingFile("no such file: " + p.string());
  return p;
}

Pressure parse_pressure(const std::string& text) {
  std::stringstream ss(text);
  std::string item;
  std::vector<double> v;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ContractViolation("pressure '" + text + "' is not four comma-separated numbers");
    }
  }
  if (v.size() != 4) throw ContractViolation("pressure '" + text + "' is not four comma-separated numbers");
  return {v[0], v[1], v[2], v[3]};
}

std::string slug(const std::string& s) {
  std::string out;
  for (char c : s)
    if (std::isalnum(static_cast<unsigned char>(c))) out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

json pressure_json(const Pressure& p) { return json{p[0], p[1], p[2], p[3]}; }

// Step recordings for setpoints and static-hold states default to the
// validation protocol: 300 s, seed 2.
Dataset step_data_or_default(const std::string& path) {
  if (!path.empty()) return load_dataset(existing(path));
  return generate_dataset(ExcitationProfile::step, 300.0, 2, PlantParams{});
}

void emit(std::ostream& out, bool as_json, const json& result, const std::string& text) {
  if (as_json)
    out << result.dump() << '\n';
  else
    out << text;
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string kind = "sinusoidal", plant = "scr", out;
  double duration = 900.0;
  std::uint64_t seed = 1, plant_seed = 1;
  int pairs = 3;
};

int gen_data(const GenDataArgs& a, bool as_json, std::ostream& out) {
  Dataset d;
  if (a.plant == "scr") {
    if (a.kind != "sinusoidal" && a.kind != "step") throw ContractViolation("kind must be sinusoidal or step");
    d = generate_dataset(a.kind == "step" ? ExcitationProfile::step : ExcitationProfile::sinusoidal, a.duration, a.seed,
                         PlantParams{});
  } else {
    d = generate_linear_latent_dataset(make_linear_latent_plant(a.pairs, a.plant_seed), a.duration, a.seed);
  }
  save_dataset(a.out, d);
  emit(out, as_json, {{"out", a.out}, {"frames", d.size()}, {"height", d.height}, {"width", d.width}},
       "wrote " + std::to_string(d.size()) + " frames to " + a.out + "\n");
  return kOk;
}

struct TrainArgs {
  std::string config, family = "oscillator", decoder = "keypoint", data, validation, out;
  int epochs = -1, steps = -1;
  std::int64_t seed = -1;
  bool quiet = false;
};

int train_cmd(const TrainArgs& a, bool as_json, std::ostream& out, std::ostream& err) {
  TrainConfig c = a.config.empty()
                      ? default_config(model_family_from_string(a.family), decoder_kind_from_string(a.decoder))
                      : config_from_json(read_text_file(existing(a.config)));
  if (a.epochs >= 0) {
    c.epochs = a.epochs;
    c.horizon_schedule = default_horizon_schedule(c.epochs);
  }
  if (a.steps >= 0) c.steps_per_epoch = a.steps;
  if (a.seed >= 0) c.seed = static_cast<std::uint64_t>(a.seed);
  const Dataset train_set = load_dataset(existing(a.data));
  const Dataset val_set = load_dataset(existing(a.validation));
  const auto t0 = std::chrono::steady_clock::now();
  const Checkpoint ck = train(c, train_set, val_set, [&](const EpochRecord& r) {
    if (a.quiet) return;
    err << "epoch " << r.epoch << " H=" << r.horizon << " loss " << std::scientific << std::setprecision(3)
        << r.loss.total << " (static " << r.loss.static_rec << ", dyn " << r.loss.dyn << ", latent " << r.loss.latent
        << ", rest " << r.loss.rest << ", kl " << r.loss.kl << ")" << std::defaultfloat << '\n';
  });
  save_checkpoint(a.out, ck);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ostringstream text;
  text << "saved " << c.name << " to " << a.out << " (latent scale " << ck.latent_scale << ", reconstruction floor "
       << ck.reconstruction_floor << ", " << secs << " s)\n";
  emit(out, as_json,
       {{"out", a.out},
        {"name", c.name},
        {"latent_scale", ck.latent_scale},
        {"reconstruction_floor", ck.reconstruction_floor},
        {"final_loss", ck.history.empty() ? 0.0 : ck.history.back().loss.total},
        {"seconds", secs}},
       text.str());
  return kOk;
}

struct OptimizeArgs {
  std::string checkpoint, waypoints, suite, out, mode = "next", kind = "auto";
  int horizon = -1, iterations = 500;
  double lr = 0.5, p_max = kDatasetPressureMax;
  std::uint64_t seed = 0;
  // Explicit weights; NaN keeps the preset (or the Setp. Normal row without one).
  double w_q = NAN, w_qdot = NAN, w_qk = NAN, w_qdotk = NAN, w_qf = NAN, w_qdotf = NAN, w_r = NAN, w_du = NAN,
         du_max = NAN;
};

int optimize_cmd(const OptimizeArgs& a, bool as_json, std::ostream& out, std::ostream& err) {
  const Checkpoint ck = load_checkpoint(existing(a.checkpoint));
  const WaypointExport w = waypoints_from_json(read_text_file(existing(a.waypoints)));
  if (w.waypoints.empty()) throw ContractViolation("waypoint file has no waypoints");
  if (w.height != ck.height || w.width != ck.width) throw ContractViolation("waypoint images do not match the model");

  const TrajectorySuite& preset = trajectory_suite(a.suite.empty() ? "Setp. Normal" : a.suite);
  CostWeights weights = preset.weights();
  int T = a.suite.empty() ? w.horizon : preset.T;
  if (a.horizon > 0) T = a.horizon;
  const int K = static_cast<int>(w.waypoints.size());
  if (!a.suite.empty() && K != preset.K)
    err << "note: " << preset.name << " uses K=" << preset.K << ", the file has " << K << " waypoints\n";
  auto set = [](double& field, double v) {
    if (!std::isnan(v)) field = v;
  };
  set(weights.w_q, a.w_q);
  set(weights.w_qdot, a.w_qdot);
  set(weights.w_qk, a.w_qk);
  set(weights.w_qdotk, a.w_qdotk);
  set(weights.w_qf, a.w_qf);
  set(weights.w_qdotf, a.w_qdotf);
  set(weights.w_r, a.w_r);
  set(weights.w_du, a.w_du);
  if (!std::isnan(a.du_max)) weights.du_max = Pressure::Constant(a.du_max);
  weights.mode = target_mode_from_string(a.mode);

  bool all_static = true;
  for (const auto& s : w.waypoints) all_static = all_static && s.is_static;
  std::string suite_name = preset.name;
  if (a.suite.empty() || a.kind != "auto") {
    const bool setpoint = a.kind == "auto" ? all_static : a.kind == "setpoint";
    suite_name = setpoint ? "Setp. custom" : "Dyn. custom";
  }
  const TrajectoryTask task = waypoint_task(w, suite_name, a.p_max);

  OptimizerSettings opt;
  opt.iterations = a.iterations;
  opt.lr = a.lr;
  opt.seed = a.seed;
  OcpSolution sol;
  const SolutionRecord rec = solve_task(ck, task, T, weights, opt, a.p_max, w.model_id.empty() ? ck.config.name : w.model_id, &sol);
  write_text_file(a.out, solution_to_json(rec));
  for (const auto& warn : sol.warnings) err << "warning: " << warn << '\n';
  std::ostringstream text;
  text << "T=" << T << " K=" << K << " cost " << rec.cost.total << " (best iteration " << rec.best_iteration
       << ") -> " << a.out << '\n';
  emit(out, as_json,
       {{"out", a.out},
        {"suite", task.suite},
        {"T", T},
        {"K", K},
        {"tau", rec.tau},
        {"cost", rec.cost.total},
        {"best_iteration", rec.best_iteration},
        {"final_command", pressure_json(rec.u.back())},
        {"warnings", sol.warnings}},
       text.str());
  return kOk;
}

struct ExecuteArgs {
  std::string solution, out;
  double lag = -1.0;
};

int execute_cmd(const ExecuteArgs& a, bool as_json, std::ostream& out) {
  const SolutionRecord s = solution_from_json(read_text_file(existing(a.solution)));
  PlantParams plant;
  if (a.lag >= 0.0) plant.lag = a.lag;
  const Dataset rec = execute_solution(s, plant);
  if (!a.out.empty()) save_dataset(a.out, rec);
  const TrajectoryResult r = score_solution(s, rec);
  std::ostringstream text;
  text << "waypoint MSE " << r.mse << " (initial " << r.initial_mse << ", ratio " << r.mse / r.initial_mse << ")\n";
  emit(out, as_json, {{"mse", r.mse}, {"initial_mse", r.initial_mse}, {"frames", rec.size()}, {"out", a.out}},
       text.str());
  return kOk;
}

struct StressArgs {
  std::string checkpoint, test = "all", data, out, target = "95,20,90,10";
  int states = 50;
};

int stress_cmd(const StressArgs& a, bool as_json, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(existing(a.checkpoint));
  if (a.test != "all" && a.test != "static-hold" && a.test != "ramp" && a.test != "release")
    throw ContractViolation("test must be static-hold, ramp, release or all");
  RunReport report;
  json summary{{"reconstruction_floor", ck.reconstruction_floor}};
  std::ostringstream text;
  const double floor = ck.reconstruction_floor;
  const std::string model = ck.config.name;
  if (a.test == "all" || a.test == "static-hold") {
    const auto states = static_targets(step_data_or_default(a.data), a.states);
    const StaticHoldResult h = stress_static_hold(ck, states);
    int within = 0;
    for (std::size_t i = 0; i < h.series.size(); ++i) {
      report.series.push_back({"static_hold_" + std::to_string(i), model, h.series[i]});
      within += h.drift[i] < 5.0 * floor;
    }
    summary["static_hold"] = {{"states", h.drift.size()}, {"below_5x_floor", within}, {"drift", h.drift}};
    text << "static hold: " << within << "/" << h.drift.size() << " states drift below 5x the floor\n";
  }
  if (a.test == "all" || a.test == "release") {
    const ReleaseResult r = stress_release(ck, release_profile(), 250);
    report.series.push_back({"release", model, r.mse_to_rest});
    summary["release"] = {{"final_mse", r.mse_to_rest.back()}, {"floor_ratio", r.mse_to_rest.back() / floor}};
    text << "release: final MSE to rest " << r.mse_to_rest.back() << " (" << r.mse_to_rest.back() / floor
         << "x floor)\n";
  }
  if (a.test == "all" || a.test == "ramp") {
    const Pressure target = parse_pressure(a.target);
    PlantParams plant;
    plant.p_max = std::max(plant.p_max, target.maxCoeff());
    const Observation goal = render(PlantState::at_equilibrium(target, plant), plant);
    const RampResult r = stress_ramp_extrapolate(ck, target, goal);
    report.series.push_back({"ramp_mse", model, r.mse});
    std::vector<double> exc, stiff;
    for (std::size_t i = 0; i < r.excitation.size(); ++i) {
      exc.push_back(r.excitation[i].norm());
      stiff.push_back(r.stiffness[i].norm());
    }
    if (!exc.empty()) {
      report.series.push_back({"ramp_excitation_norm", model, exc});
      report.series.push_back({"ramp_stiffness_norm", model, stiff});
    }
    summary["ramp"] = {{"target", pressure_json(target)}, {"final_mse", r.mse.back()},
                       {"force_residual", r.force_residual}};
    text << "ramp: final MSE " << r.mse.back() << ", force residual " << r.force_residual << '\n';
  }
  if (!a.out.empty()) write_text_file(a.out, report_to_json(report));
  emit(out, as_json, summary, text.str());
  return kOk;
}

struct AblateArgs {
  std::string config, train, validation, out_dir;
  int epochs = -1, steps = -1, windows = 50, setpoints = 50, iterations = 500;
  bool quiet = false;
};

int ablate_cmd(const AblateArgs& a, bool as_json, std::ostream& out, std::ostream& err) {
  TrainConfig base = a.config.empty() ? default_config(ModelFamily::oscillator, DecoderKind::keypoint_broadcast)
                                      : config_from_json(read_text_file(existing(a.config)));
  if (a.epochs >= 0) {
    base.epochs = a.epochs;
    base.horizon_schedule = default_horizon_schedule(base.epochs);
  }
  if (a.steps >= 0) base.steps_per_epoch = a.steps;
  const Dataset train_set = load_dataset(existing(a.train));
  const Dataset val_set = load_dataset(existing(a.validation));
  fs::create_directories(a.out_dir);
  AblationData data{&train_set, &val_set, a.windows, 25, a.setpoints, a.iterations};
  RunReport report;
  report.ablations = run_ablation_study(base, data, [&](const std::string& name, const Checkpoint& ck) {
    save_checkpoint(fs::path(a.out_dir) / (name + ".json"), ck);
    if (!a.quiet) err << "trained " << name << '\n';
  });
  write_text_file(fs::path(a.out_dir) / "report.json", report_to_json(report));
  json entries = json::array();
  std::ostringstream text;
  for (const auto& e : report.ablations) {
    entries.push_back({{"name", e.name},
                       {"changed", e.changed},
                       {"multistep_mse", std::isfinite(e.multistep_mse) ? json(e.multistep_mse) : json(nullptr)},
                       {"pressure_mae", std::isfinite(e.pressure_mae) ? json(e.pressure_mae) : json(nullptr)},
                       {"error", e.error}});
    text << e.name << "\tmultistep " << e.multistep_mse << "\tpressure MAE " << e.pressure_mae
         << (e.error.empty() ? "" : "\t" + e.error) << '\n';
  }
  emit(out, as_json, {{"out_dir", a.out_dir}, {"ablations", entries}}, text.str());
  return kOk;
}

struct SuiteArgs {
  std::vector<std::string> checkpoints, suites;
  std::string data, out_dir;
  int iterations = 500, setpoints = 8;
  std::uint64_t seed = 7;
};

int suite_cmd(const SuiteArgs& a, bool as_json, std::ostream& out, std::ostream& err) {
  std::vector<std::string> suites = a.suites;
  if (suites.empty())
    for (const auto& s : trajectory_suites()) suites.push_back(s.name);
  const PlantParams plant;
  const Dataset step = step_data_or_default(a.data);
  fs::create_directories(a.out_dir);
  RunReport report;
  for (const auto& path : a.checkpoints) {
    const Checkpoint ck = load_checkpoint(existing(path));
    const std::string model = fs::path(path).stem().string();
    const fs::path dir = fs::path(a.out_dir) / model;
    fs::create_directories(dir);
    for (const auto& name : suites) {
      const TrajectorySuite& suite = trajectory_suite(name);
      const SuiteTasks st = suite_tasks(suite, ck, step, plant, a.seed);
      for (const auto& t : st.tasks) {
        const TaskRun run = run_task(ck, t, plant, suite, st.p_max, a.iterations, model);
        const std::string stem = slug(suite.name) + "_" + std::to_string(t.index);
        write_text_file(dir / (stem + ".solution.json"), solution_to_json(run.record));
        save_dataset(dir / (stem + ".scrd"), run.recording);
        report.trajectories.push_back(run.result);
        err << model << '\t' << suite.name << '\t' << t.index << "\tMSE " << run.result.mse << " (initial "
            << run.result.initial_mse << ")\n";
      }
    }
  }
  write_text_file(fs::path(a.out_dir) / "report.json", report_to_json(report));
  json agg = json::array();
  std::ostringstream text;
  for (const auto& g : aggregate(report)) {
    agg.push_back({{"model", g.model}, {"suite", g.suite}, {"count", g.count}, {"mean_mse", g.mean_mse}});
    text << g.model << '\t' << g.suite << '\t' << g.count << '\t' << g.mean_mse << '\n';
  }
  emit(out, as_json, {{"out_dir", a.out_dir}, {"aggregates", agg}}, text.str());
  return kOk;
}

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string out, table;
  bool check = false;
};

// Rescores every solution/recording pair below `dir`, ordered by file name
// within the order the stored report lists them.
std::vector<TrajectoryResult> rescore_directory(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (e.is_regular_file() && name.size() > 14 && name.ends_with(".solution.json")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<TrajectoryResult> out;
  for (const auto& f : files) {
    const std::string stem = f.filename().string().substr(0, f.filename().string().size() - 14);
    const SolutionRecord s = solution_from_json(read_text_file(f));
    out.push_back(score_solution(s, load_dataset(existing(f.parent_path() / (stem + ".scrd")))));
  }
  return out;
}

int report_cmd(const ReportArgs& a, bool as_json, std::ostream& out) {
  RunReport merged;
  int mismatches = 0;
  for (const auto& in : a.inputs) {
    const fs::path p = existing(in);
    if (fs::is_directory(p)) {
      std::vector<TrajectoryResult> rescored = rescore_directory(p);
      const fs::path stored_path = p / "report.json";
      if (fs::exists(stored_path)) {
        const RunReport stored = report_from_json(read_text_file(stored_path));
        // Match each stored trajectory to its rescored twin.
        for (const auto& t : stored.trajectories) {
          auto it = std::find_if(rescored.begin(), rescored.end(), [&](const TrajectoryResult& r) {
            return r.model == t.model && r.suite == t.suite && r.index == t.index;
          });
          if (it == rescored.end() || !(*it == t)) ++mismatches;
        }
        if (stored.trajectories.size() != rescored.size()) ++mismatches;
        merged.ablations.insert(merged.ablations.end(), stored.ablations.begin(), stored.ablations.end());
        merged.series.insert(merged.series.end(), stored.series.begin(), stored.series.end());
      }
      merged.trajectories.insert(merged.trajectories.end(), rescored.begin(), rescored.end());
    } else {
      const RunReport r = report_from_json(read_text_file(p));
      merged.trajectories.insert(merged.trajectories.end(), r.trajectories.begin(), r.trajectories.end());
      merged.ablations.insert(merged.ablations.end(), r.ablations.begin(), r.ablations.end());
      merged.series.insert(merged.series.end(), r.series.begin(), r.series.end());
    }
  }
  if (!a.out.empty()) write_text_file(a.out, report_to_json(merged));
  if (!a.table.empty()) write_text_file(a.table, report_table(merged));
  json agg = json::array();
  for (const auto& g : aggregate(merged))
    agg.push_back({{"model", g.model}, {"suite", g.suite}, {"count", g.count}, {"mean_mse", g.mean_mse}});
  emit(out, as_json, {{"aggregates", agg}, {"mismatches", mismatches}}, report_table(merged));
  if (a.check && mismatches > 0)
    throw CheckFailed(std::to_string(mismatches) + " stored results differ from the recomputed ones");
  return kOk;
}

struct ServeArgs {
  std::string checkpoints = "checkpoints", host = "127.0.0.1";
  int port = 8765;
  double tick_hz = 50.0, duration = 0.0;
};

std::atomic<bool> g_interrupted{false};
extern "C" void on_signal(int) { g_interrupted = true; }

int serve_cmd(const ServeArgs& a, std::ostream& out, std::ostream& err) {
  const fs::path dir = checkpoint_directory(a.checkpoints);
  auto registry = std::make_shared<ModelRegistry>(ModelRegistry::from_directory(existing(dir)));
  Server server(registry, {a.host, a.port, a.tick_hz});
  const int port = server.start();
  out << json{{"host", a.host}, {"port", port}, {"models", registry->ids()}}.dump() << std::endl;
  err << "serving " << registry->ids().size() << " models from " << dir.string() << " on " << a.host << ':' << port
      << '\n';
  g_interrupted = false;
  auto previous_int = std::signal(SIGINT, on_signal);
  auto previous_term = std::signal(SIGTERM, on_signal);
  const auto start = std::chrono::steady_clock::now();
  while (!g_interrupted &&
         (a.duration <= 0.0 || std::chrono::steady_clock::now() - start < std::chrono::duration<double>(a.duration)))
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  server.stop();
  std::signal(SIGINT, previous_int);
  std::signal(SIGTERM, previous_term);
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Latent dynamics identification and open-loop control workbench", "vonctl"};
  app.require_subcommand(1);
  app.fallthrough();
  bool as_json = false;
  app.add_flag("--json", as_json, "Print machine-readable results on standard output");

  GenDataArgs gd;
  auto* c_gen = app.add_subcommand("gen-data", "Record a dataset from the plant");
  c_gen->add_option("--kind", gd.kind, "sinusoidal or step")->check(CLI::IsMember({"sinusoidal", "step"}));
  c_gen->add_option("--duration", gd.duration, "Seconds")->check(CLI::PositiveNumber);
  c_gen->add_option("--seed", gd.seed);
  c_gen->add_option("--plant", gd.plant, "scr or linear-latent")->check(CLI::IsMember({"scr", "linear-latent"}));
  c_gen->add_option("--pairs", gd.pairs, "Latent pairs of the linear-latent plant")->check(CLI::PositiveNumber);
  c_gen->add_option("--plant-seed", gd.plant_seed, "Seed of the linear-latent plant");
  c_gen->add_option("--out", gd.out)->required();

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train a model and write a checkpoint");
  c_train->add_option("--config", tr.config, "Config JSON (missing keys keep defaults)");
  c_train->add_option("--family", tr.family, "Without --config: koopman, mlp or oscillator");
  c_train->add_option("--decoder", tr.decoder, "Without --config: keypoint or dense");
  c_train->add_option("--data", tr.data)->required();
  c_train->add_option("--validation", tr.validation)->required();
  c_train->add_option("--out", tr.out)->required();
  c_train->add_option("--epochs", tr.epochs, "Override; also resets the horizon schedule");
  c_train->add_option("--steps-per-epoch", tr.steps);
  c_train->add_option("--seed", tr.seed);
  c_train->add_flag("--quiet", tr.quiet);

  OptimizeArgs op;
  auto* c_opt = app.add_subcommand("optimize", "Solve the control problem for a waypoint file");
  c_opt->add_option("--checkpoint", op.checkpoint)->required();
  c_opt->add_option("--waypoints", op.waypoints, "Waypoint export; the first entry is the start")->required();
  c_opt->add_option("--suite", op.suite, "Trajectory preset, e.g. \"Dyn. Fast\"");
  c_opt->add_option("--horizon", op.horizon, "Overrides the preset or file horizon");
  c_opt->add_option("--iterations", op.iterations)->check(CLI::NonNegativeNumber);
  c_opt->add_option("--lr", op.lr)->check(CLI::PositiveNumber);
  c_opt->add_option("--seed", op.seed);
  c_opt->add_option("--p-max", op.p_max, "Upper pressure bound in kPa")->check(CLI::PositiveNumber);
  c_opt->add_option("--mode", op.mode, "Active target rule")->check(CLI::IsMember({"next", "closest"}));
  c_opt->add_option("--kind", op.kind, "Scoring: auto, setpoint or dynamic")
      ->check(CLI::IsMember({"auto", "setpoint", "dynamic"}));
  c_opt->add_option("--w-q", op.w_q);
  c_opt->add_option("--w-qdot", op.w_qdot);
  c_opt->add_option("--w-qk", op.w_qk);
  c_opt->add_option("--w-qdotk", op.w_qdotk);
  c_opt->add_option("--w-qf", op.w_qf);
  c_opt->add_option("--w-qdotf", op.w_qdotf);
  c_opt->add_option("--w-r", op.w_r);
  c_opt->add_option("--w-du", op.w_du);
  c_opt->add_option("--du-max", op.du_max);
  c_opt->add_option("--out", op.out)->required();

  ExecuteArgs ex;
  auto* c_exec = app.add_subcommand("execute", "Run a solution open loop on the plant");
  c_exec->add_option("--solution", ex.solution)->required();
  c_exec->add_option("--out", ex.out, "Recording (dataset file)");
  c_exec->add_option("--lag", ex.lag, "Actuator time constant override in seconds");

  StressArgs st;
  auto* c_stress = app.add_subcommand("stress", "Static hold, ramp and release tests");
  c_stress->add_option("--checkpoint", st.checkpoint)->required();
  c_stress->add_option("--test", st.test)->check(CLI::IsMember({"all", "static-hold", "ramp", "release"}));
  c_stress->add_option("--data", st.data, "Step dataset for static states (default: generated, seed 2)");
  c_stress->add_option("--states", st.states)->check(CLI::PositiveNumber);
  c_stress->add_option("--target", st.target, "Ramp target pressures p0,p1,p2,p3");
  c_stress->add_option("--out", st.out, "Report with the time series");

  AblateArgs ab;
  auto* c_abl = app.add_subcommand("ablate", "Train the base model and its seven ablations");
  c_abl->add_option("--config", ab.config, "Base config (default: oscillator + keypoint)");
  c_abl->add_option("--train", ab.train)->required();
  c_abl->add_option("--validation", ab.validation, "Step dataset")->required();
  c_abl->add_option("--out-dir", ab.out_dir)->required();
  c_abl->add_option("--epochs", ab.epochs);
  c_abl->add_option("--steps-per-epoch", ab.steps);
  c_abl->add_option("--windows", ab.windows);
  c_abl->add_option("--setpoints", ab.setpoints);
  c_abl->add_option("--iterations", ab.iterations);
  c_abl->add_flag("--quiet", ab.quiet);

  SuiteArgs su;
  auto* c_suite = app.add_subcommand("suite", "Optimize and execute trajectory suites, keeping every artifact");
  c_suite->add_option("--checkpoint", su.checkpoints)->required();
  c_suite->add_option("--suite", su.suites, "Suite names (default: all six)");
  c_suite->add_option("--data", su.data, "Step dataset for setpoints (default: generated, seed 2)");
  c_suite->add_option("--out-dir", su.out_dir)->required();
  c_suite->add_option("--iterations", su.iterations);
  c_suite->add_option("--seed", su.seed, "Seed for dynamic and extrapolated targets");

  ReportArgs rp;
  auto* c_report = app.add_subcommand("report", "Merge and recompute results");
  c_report->add_option("--input", rp.inputs, "Run directories or report files")->required();
  c_report->add_option("--out", rp.out);
  c_report->add_option("--table", rp.table, "Tab-separated table");
  c_report->add_flag("--check", rp.check, "Fail unless stored results match the recomputed ones");

  ServeArgs sv;
  auto* c_serve = app.add_subcommand("serve", "Live simulator service");
  c_serve->add_option("--checkpoints", sv.checkpoints, "Directory (overridden by VONCTL_CHECKPOINT_DIR)");
  c_serve->add_option("--host", sv.host);
  c_serve->add_option("--port", sv.port);
  c_serve->add_option("--tick-hz", sv.tick_hz)->check(CLI::PositiveNumber);
  c_serve->add_option("--duration", sv.duration, "Stop after this many seconds (0: run until interrupted)");

  std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    err << "run with --help for usage\n";
    return kUsage;
  }

  try {
    if (c_gen->parsed()) return gen_data(gd, as_json, out);
    if (c_train->parsed()) return train_cmd(tr, as_json, out, err);
    if (c_opt->parsed()) return optimize_cmd(op, as_json, out, err);
    if (c_exec->parsed()) return execute_cmd(ex, as_json, out);
    if (c_stress->parsed()) return stress_cmd(st, as_json, out);
    if (c_abl->parsed()) return ablate_cmd(ab, as_json, out, err);
    if (c_suite->parsed()) return suite_cmd(su, as_json, out, err);
    if (c_report->parsed()) return report_cmd(rp, as_json, out);
    if (c_serve->parsed()) return serve_cmd(sv, out, err);
  } catch (const MissingFile& e) {
    err << "error: " << e.what() << '\n';
    return kMissingFile;
  } catch (const VersionMismatch& e) {
    err << "error: " << e.what() << '\n';
    return kVersionMismatch;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kFormatError;
  } catch (const ContractViolation& e) {
    err << "error: " << e.what() << '\n';
    return kInvalidInput;
  } catch (const TrainingDivergence& e) {
    err << "error: " << e.what() << '\n';
    return kDiverged;
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kDiverged;
  } catch (const CheckFailed& e) {
    err << "error: " << e.what() << '\n';
    return kCheckFailed;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kUsage;
}

}  // namespace vonctl::cli
