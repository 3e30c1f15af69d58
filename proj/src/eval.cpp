#include "vonctl/eval.hpp"

#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include <json.hpp>

#include "vonctl/error.hpp"

namespace vonctl {

Dataset execute_open_loop(const ControlSequence& u_cmd, const PlantState& initial, const PlantParams& params) {
  Dataset rec;
  rec.height = params.height;
  rec.width = params.width;
  rec.rate = 1.0 / kControlDt;
  rec.u_rest = rest_pressure();
  const Observation o_rest = render(PlantState::rest(), params);
  for (Eigen::Index i = 0; i < o_rest.size(); ++i) rec.o_rest.push_back(static_cast<float>(o_rest[i]));
  PlantState s = initial;
  const std::size_t T = u_cmd.size();
  for (std::size_t i = 0; i <= T; ++i) {
    const Pressure& cmd = i < T ? u_cmd[i] : (T > 0 ? u_cmd.back() : s.p_act);
    rec.push_back(static_cast<double>(i) * kControlDt, cmd, s.p_act, render(s, params));
    if (i < T) s = plant_step(s, u_cmd[i], params);
  }
  return rec;
}

double waypoint_mse(const Dataset& executed, const std::vector<Observation>& targets, const std::vector<int>& tau,
                    SuiteKind kind, TargetMode mode) {
  if (targets.size() != tau.size() || targets.empty()) throw ContractViolation("waypoint_mse: targets and tau differ");
  const int T = tau.back();
  if (executed.size() < static_cast<std::size_t>(T) + 1) throw ContractViolation("waypoint_mse: too few frames");
  if (kind == SuiteKind::setpoint) {
    double s = 0.0;
    for (int i = 1; i <= T; ++i) s += image_mse(executed.observation(i), targets[active_target(i, tau, mode)]);
    return s / T;
  }
  if (tau.size() == 1) return image_mse(executed.observation(tau[0]), targets[0]);
  double s = 0.0;
  for (std::size_t k = 1; k < tau.size(); ++k) s += image_mse(executed.observation(tau[k]), targets[k]);
  return s / static_cast<double>(tau.size() - 1);
}

double pressure_mae(const std::vector<Pressure>& predicted, const std::vector<Pressure>& realized) {
  if (predicted.size() != realized.size()) throw ContractViolation("pressure_mae: sizes differ");
  if (predicted.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) s += (predicted[i] - realized[i]).cwiseAbs().sum();
  return s / (kInputChannels * static_cast<double>(predicted.size()));
}

std::vector<StaticTarget> static_targets(const Dataset& step_data, int count) {
  const std::vector<std::size_t> frames = static_frames(step_data);
  if (count < 1 || frames.size() < static_cast<std::size_t>(count))
    throw ContractViolation("step dataset has " + std::to_string(frames.size()) + " settled frames, " +
                            std::to_string(count) + " requested");
  std::vector<StaticTarget> out;
  for (int i = 0; i < count; ++i) {
    const std::size_t j = count > 1 ? (frames.size() - 1) * static_cast<std::size_t>(i) / (count - 1) : 0;
    const std::size_t f = frames[j];
    out.push_back({step_data.observation(f), step_data.u_cmd[f - 1]});
  }
  return out;
}

OcpProblem setpoint_problem(const Checkpoint& ck, const StaticTarget& from, const StaticTarget& to,
                            const TrajectorySuite& suite, double p_max) {
  std::vector<WaypointTarget> t(2);
  t[0].observation = from.observation;
  t[1].observation = to.observation;
  WaypointSet w = make_waypoints(t, ck.model.encoder, suite.T);
  const LatentState x0{w.z.front(), Vec::Zero(ck.model.latent_dim())};
  OcpProblem p = make_problem(ck, x0, from.pressure.cwiseMin(p_max), suite.T, std::move(w), suite.weights());
  p.p_max = p_max;
  return p;
}

std::vector<StaticTarget> extrapolated_targets(int count, const PlantParams& plant, std::uint64_t seed, double p_max) {
  if (!(p_max > kDatasetPressureMax)) throw ContractViolation("extrapolated targets need p_max above the dataset range");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> high(kDatasetPressureMax, p_max), any(0.0, p_max);
  std::uniform_int_distribution<int> channel(0, kInputChannels - 1);
  std::vector<StaticTarget> out;
  for (int i = 0; i < count; ++i) {
    Pressure p(any(rng), any(rng), any(rng), any(rng));
    p[channel(rng)] = high(rng);
    PlantParams pp = plant;
    pp.p_max = p_max;
    out.push_back({render(PlantState::at_equilibrium(p, pp), pp), p});
  }
  return out;
}

std::vector<TrajectoryTask> setpoint_tasks(const std::string& suite, const StaticTarget& rest,
                                           const std::vector<StaticTarget>& targets, const PlantParams& plant) {
  std::vector<StaticTarget> chain{rest};
  chain.insert(chain.end(), targets.begin(), targets.end());
  chain.push_back(rest);
  PlantParams pp = plant;
  pp.p_max = std::max(plant.p_max, 100.0);
  std::vector<TrajectoryTask> out;
  for (std::size_t i = 0; i + 1 < chain.size(); ++i) {
    TrajectoryTask t;
    t.suite = suite;
    t.index = static_cast<int>(i);
    t.initial = PlantState::at_equilibrium(chain[i].pressure, pp);
    t.u0 = chain[i].pressure;
    t.targets.resize(2);
    t.targets[0].observation = chain[i].observation;
    t.targets[1].observation = chain[i + 1].observation;
    t.target_pressure = chain[i + 1].pressure;
    out.push_back(std::move(t));
  }
  return out;
}

namespace {

ControlSequence dynamic_commands(const TrajectorySuite& suite, const PlantParams& plant, std::mt19937_64& rng) {
  const bool upswing = suite.name == "Dyn. Upswing";
  const bool fast = suite.name == "Dyn. Fast";
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  // Antagonistic pair c carries 43 +- d_c(t).
  struct Wave { double amp, freq, phase; };
  std::array<std::vector<Wave>, 2> waves;
  if (upswing) {
    const double wn = std::sqrt(plant.stiffness[0] / plant.inertia[0]);
    const double zeta = plant.damping[0] / (2.0 * std::sqrt(plant.stiffness[0] * plant.inertia[0]));
    const double f = wn * std::sqrt(std::max(0.0, 1.0 - zeta * zeta)) / (2.0 * std::numbers::pi);
    const double sign = unit(rng) < 0.5 ? -1.0 : 1.0;
    waves[0].push_back({sign * kPressureCenter, f * (0.95 + 0.1 * unit(rng)), 0.0});
    waves[1].push_back({sign * kPressureCenter * (0.5 + 0.5 * unit(rng)), waves[0][0].freq, 0.0});
  } else {
    const double lo = fast ? 0.8 : 0.1, hi = fast ? 1.6 : 0.5;
    for (auto& w : waves)
      for (int j = 0; j < 2; ++j) w.push_back({20.0 * unit(rng), lo + (hi - lo) * unit(rng), phase(rng)});
  }
  ControlSequence u;
  for (int i = 0; i <= suite.T; ++i) {
    const double t = i * kControlDt;
    const double fade = t < 0.5 ? 0.5 * (1.0 - std::cos(std::numbers::pi * t / 0.5)) : 1.0;
    Pressure p;
    for (int c = 0; c < 2; ++c) {
      double d = 0.0;
      for (const auto& w : waves[c]) d += w.amp * (std::sin(2.0 * std::numbers::pi * w.freq * t + w.phase) - std::sin(w.phase));
      d = std::clamp(fade * d, -kPressureCenter, kPressureCenter);
      p[2 * c] = kPressureCenter + d;
      p[2 * c + 1] = kPressureCenter - d;
    }
    u.push_back(p);
  }
  return u;
}

}  // namespace

std::vector<TrajectoryTask> dynamic_tasks(const TrajectorySuite& suite, const PlantParams& plant, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::vector<int> tau = schedule_waypoints(suite.K, suite.T);
  std::vector<TrajectoryTask> out;
  for (int n = 0; n < suite.n; ++n) {
    const ControlSequence u = dynamic_commands(suite, plant, rng);
    const Dataset rec = execute_open_loop(u, PlantState::rest(), plant);
    TrajectoryTask t;
    t.suite = suite.name;
    t.index = n;
    t.initial = PlantState::rest();
    t.u0 = rest_pressure();
    for (std::size_t k = 0; k < tau.size(); ++k) {
      WaypointTarget w;
      w.observation = rec.observation(tau[k]);
      w.is_static = k == 0;
      if (k > 0) {
        w.previous = rec.observation(tau[k] - 1);
        w.next = rec.observation(tau[k] + 1);
      }
      t.targets.push_back(std::move(w));
    }
    t.target_pressure = u[suite.T - 1];
    t.generating = u;
    out.push_back(std::move(t));
  }
  return out;
}

TrajectoryTask waypoint_task(const WaypointExport& w, const std::string& suite, double p_max) {
  if (w.waypoints.empty()) throw ContractViolation("waypoint_task: no waypoints");
  TrajectoryTask task;
  task.suite = suite;
  task.targets = waypoint_targets(w);
  task.u0 = w.waypoints.front().u;
  PlantParams plant;
  plant.p_max = std::max(plant.p_max, p_max);
  task.initial = PlantState::at_equilibrium(task.u0.cwiseMin(p_max).cwiseMax(0.0), plant);
  task.target_pressure = w.waypoints.back().u;
  return task;
}

SuiteTasks suite_tasks(const TrajectorySuite& suite, const Checkpoint& ck, const Dataset& step_data,
                       const PlantParams& plant, std::uint64_t seed) {
  SuiteTasks out;
  const StaticTarget rest{ck.o_rest, ck.u_rest};
  if (suite.name == "Setp. Normal") {
    out.tasks = setpoint_tasks(suite.name, rest, static_targets(step_data, suite.n - 1), plant);
  } else if (suite.name == "Setp. Extrap.") {
    out.p_max = 100.0;
    out.tasks = setpoint_tasks(suite.name, rest, extrapolated_targets(suite.n - 1, plant, seed, out.p_max), plant);
  } else {
    out.tasks = dynamic_tasks(suite, plant, seed);
  }
  return out;
}

SuiteKind suite_kind(const std::string& suite_name) {
  return suite_name.rfind("Setp", 0) == 0 ? SuiteKind::setpoint : SuiteKind::dynamic;
}

TrajectoryResult score_solution(const SolutionRecord& s, const Dataset& recording) {
  TrajectoryResult r;
  r.suite = s.suite;
  r.model = s.model_id;
  r.index = s.index;
  r.mse = waypoint_mse(recording, s.targets, s.tau, s.kind, s.mode);
  r.initial_mse = s.initial_mse;
  r.predicted_cost = s.cost.total;
  r.final_command = s.u.back();
  r.target_pressure = s.target_pressure;
  return r;
}

SolutionRecord solve_task(const Checkpoint& ck, const TrajectoryTask& task, int horizon, const CostWeights& weights,
                          const OptimizerSettings& optimizer, double p_max, const std::string& model_id,
                          OcpSolution* solution) {
  WaypointSet w = make_waypoints(task.targets, ck.model.encoder, horizon);
  const LatentState x0{w.z.front(), w.zdot.front()};
  OcpProblem p = make_problem(ck, x0, task.u0.cwiseMax(0.0).cwiseMin(p_max), horizon, std::move(w), weights);
  p.p_max = p_max;
  p.optimizer = optimizer;
  OcpSolution s = solve_ocp(p);

  SolutionRecord rec;
  rec.model_id = model_id.empty() ? ck.config.name : model_id;
  rec.suite = task.suite;
  rec.index = task.index;
  rec.kind = suite_kind(task.suite);
  rec.mode = p.weights.mode;
  rec.tau = p.waypoints.tau;
  rec.targets = p.waypoints.observations;
  rec.plant_initial = task.initial;
  rec.u0 = p.u0;
  rec.p_max = p_max;
  rec.u = s.u;
  rec.cost = s.cost;
  rec.trace = s.trace;
  rec.best_iteration = s.best_iteration;
  rec.initial_mse = image_mse(task.targets.front().observation, task.targets.back().observation);
  rec.target_pressure = task.target_pressure;
  if (solution) *solution = std::move(s);
  return rec;
}

Dataset execute_solution(const SolutionRecord& s, const PlantParams& plant) {
  PlantParams pp = plant;
  pp.p_max = std::max(plant.p_max, s.p_max);
  return execute_open_loop(s.u, s.plant_initial, pp);
}

TaskRun run_task(const Checkpoint& ck, const TrajectoryTask& task, const PlantParams& plant,
                 const TrajectorySuite& suite, double p_max, int iterations, const std::string& model_id) {
  TaskRun run;
  OptimizerSettings opt;
  opt.iterations = iterations;
  TrajectoryTask t = task;
  t.suite = suite.name;
  run.record = solve_task(ck, t, suite.T, suite.weights(), opt, p_max, model_id, &run.solution);
  run.recording = execute_solution(run.record, plant);
  run.result = score_solution(run.record, run.recording);
  return run;
}

std::vector<TrajectoryResult> run_setpoint_suite(const Checkpoint& ck, const std::vector<StaticTarget>& targets,
                                                 const PlantParams& plant, const TrajectorySuite& suite,
                                                 double p_max) {
  std::vector<TrajectoryResult> out;
  for (const auto& t : setpoint_tasks(suite.name, {ck.o_rest, ck.u_rest}, targets, plant))
    out.push_back(run_task(ck, t, plant, suite, p_max).result);
  return out;
}

double setpoint_pressure_mae(const Checkpoint& ck, const std::vector<StaticTarget>& targets, int iterations) {
  const StaticTarget rest{ck.o_rest, ck.u_rest};
  const TrajectorySuite& suite = trajectory_suite("Setp. Normal");
  std::vector<Pressure> predicted, realized;
  for (const auto& t : targets) {
    OcpProblem p = setpoint_problem(ck, rest, t, suite);
    p.optimizer.iterations = iterations;
    predicted.push_back(solve_ocp(p).u.back());
    realized.push_back(t.pressure);
  }
  return pressure_mae(predicted, realized);
}

// ---------------------------------------------------------------------------
// Stress tests

StaticHoldResult stress_static_hold(const Checkpoint& ck, const std::vector<StaticTarget>& states, int steps) {
  StaticHoldResult out;
  const LatentModel& m = ck.model;
  for (const auto& st : states) {
    const LatentState x0{m.encoder.mean(st.observation), Vec::Zero(m.latent_dim())};
    const ControlSequence u(steps, st.pressure);
    std::vector<double> series;
    series.reserve(steps);
    try {
      const Rollout r = rollout(m.dynamics, x0, u);
      for (const auto& x : r.states) series.push_back(image_mse(m.decoder.decode(x.z), st.observation));
    } catch (const DivergenceError& e) {
      series.resize(steps, std::numeric_limits<double>::infinity());
    }
    out.drift.push_back(*std::max_element(series.begin(), series.end()));
    out.series.push_back(std::move(series));
  }
  return out;
}

ControlSequence cosine_ramp(const Pressure& from, const Pressure& to, int ramp_steps, int hold_steps) {
  ControlSequence u;
  for (int i = 0; i < ramp_steps; ++i) {
    const double a = 0.5 * (1.0 - std::cos(std::numbers::pi * i / ramp_steps));
    u.push_back(from + a * (to - from));
  }
  for (int i = 0; i < hold_steps; ++i) u.push_back(to);
  return u;
}

RampResult stress_ramp_extrapolate(const Checkpoint& ck, const Pressure& target, const Observation& target_observation,
                                   int ramp_steps, int hold_steps) {
  const LatentModel& m = ck.model;
  RampResult out;
  out.u = cosine_ramp(ck.u_rest, target, ramp_steps, hold_steps);
  const LatentState x0{m.encoder.mean(ck.o_rest), Vec::Zero(m.latent_dim())};
  const Rollout r = rollout(m.dynamics, x0, out.u);
  const auto* osc = std::get_if<OscillatorModel>(&m.dynamics);
  for (std::size_t i = 0; i < r.states.size(); ++i) {
    out.mse.push_back(image_mse(m.decoder.decode(r.states[i].z), target_observation));
    if (osc) {
      const OscillatorForces f = oscillator_forces(*osc, r.states[i], out.u[i]);
      out.excitation.push_back(f.excitation);
      out.stiffness.push_back(f.stiffness);
    }
  }
  out.final_state = r.states.back();
  if (osc) {
    const OscillatorForces f = oscillator_forces(*osc, out.final_state, target);
    out.force_residual = (f.excitation + f.stiffness).norm() / f.excitation.norm();
  }
  return out;
}

ControlSequence release_profile(int excitation_steps, int release_steps) {
  const double freq[] = {0.5, 0.7, 0.9, 1.1};
  const double sign[] = {1.0, -1.0, 1.0, -1.0};
  ControlSequence u;
  for (int i = 0; i < excitation_steps; ++i) {
    const double t = i * kControlDt;
    Pressure p;
    for (int c = 0; c < kInputChannels; ++c)
      p[c] = kPressureCenter + sign[c] * 20.0 * (1.0 - std::cos(2.0 * std::numbers::pi * freq[c] * t));
    u.push_back(p);
  }
  for (int i = 0; i < release_steps; ++i) u.push_back(rest_pressure());
  return u;
}

ReleaseResult stress_release(const Checkpoint& ck, const ControlSequence& u, int release_step) {
  const LatentModel& m = ck.model;
  ReleaseResult out;
  out.u = u;
  out.release_step = release_step;
  const LatentState x0{m.encoder.mean(ck.o_rest), Vec::Zero(m.latent_dim())};
  const Rollout r = rollout(m.dynamics, x0, u);
  for (const auto& x : r.states) out.mse_to_rest.push_back(image_mse(m.decoder.decode(x.z), ck.o_rest));
  return out;
}

// ---------------------------------------------------------------------------
// Ablations

std::vector<AblationEntry> run_ablation_study(const TrainConfig& base, const AblationData& data,
                                              const CheckpointCallback& on_trained) {
  if (!data.train || !data.validation) throw ContractViolation("ablation study needs datasets");
  std::vector<TrainConfig> configs{base};
  for (const auto& c : ablation_configs(base)) configs.push_back(c);
  const auto windows = spaced_windows(*data.validation, data.windows, data.horizon);
  const auto targets = static_targets(*data.validation, data.setpoints);
  std::vector<AblationEntry> out;
  for (const auto& c : configs) {
    AblationEntry e;
    e.name = c.name;
    e.changed = config_diff(base, c);
    if (&c != &configs.front() && e.changed.size() != 1)
      throw ContractViolation("ablation '" + c.name + "' changes " + std::to_string(e.changed.size()) + " fields");
    try {
      const Checkpoint ck = train(c, *data.train, *data.validation);
      if (on_trained) on_trained(c.name, ck);
      e.multistep_mse = loss_dyn_multistep(*data.validation, windows, ck.model, data.horizon);
      e.pressure_mae = setpoint_pressure_mae(ck, targets, data.ocp_iterations);
    } catch (const std::exception& ex) {
      e.error = ex.what();
      e.multistep_mse = e.pressure_mae = std::numeric_limits<double>::quiet_NaN();
    }
    out.push_back(e);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

std::vector<Aggregate> aggregate(const RunReport& report) {
  std::map<std::pair<std::string, std::string>, std::pair<int, double>> acc;
  for (const auto& t : report.trajectories) {
    for (const std::string& suite : {t.suite, std::string("all")}) {
      auto& a = acc[{t.model, suite}];
      a.first += 1;
      a.second += t.mse;
    }
  }
  std::vector<Aggregate> out;
  for (const auto& [key, v] : acc) out.push_back({key.first, key.second, v.first, v.second / v.first});
  return out;
}

namespace {

using nlohmann::json;

// NaN marks a failed ablation; JSON has no NaN, so it travels as null.
json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double number_from(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

json pressure_json(const Pressure& p) { return json{p[0], p[1], p[2], p[3]}; }
Pressure pressure_of(const json& j) {
  if (!j.is_array() || j.size() != 4) throw FormatError("pressure needs 4 entries");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

}  // namespace

std::string report_to_json(const RunReport& r) {
  json traj = json::array(), abl = json::array(), series = json::array(), agg = json::array();
  for (const auto& t : r.trajectories)
    traj.push_back({{"suite", t.suite},
                    {"model", t.model},
                    {"index", t.index},
                    {"mse", number(t.mse)},
                    {"initial_mse", number(t.initial_mse)},
                    {"predicted_cost", number(t.predicted_cost)},
                    {"final_command", pressure_json(t.final_command)},
                    {"target_pressure", pressure_json(t.target_pressure)}});
  for (const auto& a : r.ablations)
    abl.push_back({{"name", a.name},
                   {"changed", a.changed},
                   {"multistep_mse", number(a.multistep_mse)},
                   {"pressure_mae", number(a.pressure_mae)},
                   {"error", a.error}});
  for (const auto& s : r.series) {
    json v = json::array();
    for (double x : s.values) v.push_back(number(x));
    series.push_back({{"name", s.name}, {"model", s.model}, {"values", v}});
  }
  for (const auto& a : aggregate(r))
    agg.push_back({{"model", a.model}, {"suite", a.suite}, {"count", a.count}, {"mean_mse", a.mean_mse}});
  json j{{"format", "vonctl-report"}, {"version", kReportFormatVersion},      {"trajectories", traj},
         {"ablations", abl},          {"series", series}, {"aggregates", agg}};
  return j.dump(1);
}

RunReport report_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object() || j.value("format", std::string()) != "vonctl-report") throw FormatError("not a report");
  if (j.at("version").get<int>() != kReportFormatVersion)
    throw VersionMismatch("report", j.at("version").get<int>(), kReportFormatVersion);
  try {
    RunReport r;
    for (const auto& t : j.at("trajectories"))
      r.trajectories.push_back({t.at("suite").get<std::string>(), t.at("model").get<std::string>(),
                                t.at("index").get<int>(), number_from(t.at("mse")), number_from(t.at("initial_mse")),
                                number_from(t.at("predicted_cost")), pressure_of(t.at("final_command")),
                                pressure_of(t.at("target_pressure"))});
    for (const auto& a : j.at("ablations"))
      r.ablations.push_back({a.at("name").get<std::string>(), a.at("changed").get<std::vector<std::string>>(),
                             number_from(a.at("multistep_mse")), number_from(a.at("pressure_mae")),
                             a.at("error").get<std::string>()});
    for (const auto& s : j.at("series")) {
      SeriesRecord rec{s.at("name").get<std::string>(), s.at("model").get<std::string>(), {}};
      for (const auto& v : s.at("values")) rec.values.push_back(number_from(v));
      r.series.push_back(std::move(rec));
    }
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed report: ") + e.what());
  }
}

std::string report_table(const RunReport& r) {
  std::ostringstream os;
  os.precision(6);
  os << "kind\tmodel\tsuite\tindex\tmse\tinitial_mse\n";
  for (const auto& t : r.trajectories)
    os << "trajectory\t" << t.model << '\t' << t.suite << '\t' << t.index << '\t' << t.mse << '\t' << t.initial_mse
       << '\n';
  for (const auto& a : aggregate(r))
    os << "aggregate\t" << a.model << '\t' << a.suite << '\t' << a.count << '\t' << a.mean_mse << "\t\n";
  if (!r.ablations.empty()) os << "\nablation\tchanged\tmultistep_mse\tpressure_mae\terror\n";
  for (const auto& a : r.ablations) {
    os << a.name << '\t';
    for (std::size_t i = 0; i < a.changed.size(); ++i) os << (i ? "," : "") << a.changed[i];
    os << '\t' << a.multistep_mse << '\t' << a.pressure_mae << '\t' << a.error << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Solutions

bool SolutionRecord::operator==(const SolutionRecord& o) const {
  auto same = [](const Vec& a, const Vec& b) { return a.size() == b.size() && a == b; };
  if (targets.size() != o.targets.size()) return false;
  for (std::size_t k = 0; k < targets.size(); ++k)
    if (!same(targets[k], o.targets[k])) return false;
  const auto cost_fields = [](const CostBreakdown& c) {
    return std::array{c.tracking, c.tracking_velocity, c.waypoint, c.waypoint_velocity, c.terminal,
                      c.terminal_velocity, c.increment, c.increment_excess, c.total};
  };
  return model_id == o.model_id && suite == o.suite && index == o.index && kind == o.kind && mode == o.mode &&
         tau == o.tau && plant_initial.q == o.plant_initial.q && plant_initial.qdot == o.plant_initial.qdot &&
         plant_initial.p_act == o.plant_initial.p_act && u0 == o.u0 && p_max == o.p_max && u == o.u &&
         cost_fields(cost) == cost_fields(o.cost) && trace == o.trace && best_iteration == o.best_iteration &&
         initial_mse == o.initial_mse && target_pressure == o.target_pressure;
}

namespace {

json vec_json(const Vec& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }
Vec vec_of(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

std::string solution_to_json(const SolutionRecord& s) {
  json targets = json::array(), u = json::array();
  for (const auto& t : s.targets) targets.push_back(vec_json(t));
  for (const auto& p : s.u) u.push_back(pressure_json(p));
  const CostBreakdown& c = s.cost;
  json j{{"format", "vonctl-solution"},
         {"version", kSolutionFormatVersion},
         {"model_id", s.model_id},
         {"suite", s.suite},
         {"index", s.index},
         {"kind", s.kind == SuiteKind::setpoint ? "setpoint" : "dynamic"},
         {"mode", to_string(s.mode)},
         {"tau", s.tau},
         {"targets", targets},
         {"plant_initial",
          {{"q", {s.plant_initial.q[0], s.plant_initial.q[1]}},
           {"qdot", {s.plant_initial.qdot[0], s.plant_initial.qdot[1]}},
           {"p_act", pressure_json(s.plant_initial.p_act)}}},
         {"u0", pressure_json(s.u0)},
         {"p_max", s.p_max},
         {"u", u},
         {"cost",
          {{"tracking", c.tracking},
           {"tracking_velocity", c.tracking_velocity},
           {"waypoint", c.waypoint},
           {"waypoint_velocity", c.waypoint_velocity},
           {"terminal", c.terminal},
           {"terminal_velocity", c.terminal_velocity},
           {"increment", c.increment},
           {"increment_excess", c.increment_excess},
           {"total", c.total}}},
         {"trace", s.trace},
         {"best_iteration", s.best_iteration},
         {"initial_mse", s.initial_mse},
         {"target_pressure", pressure_json(s.target_pressure)}};
  return j.dump();
}

SolutionRecord solution_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object() || j.value("format", std::string()) != "vonctl-solution") throw FormatError("not a solution file");
  const int version = j.at("version").get<int>();
  if (version != kSolutionFormatVersion) throw VersionMismatch("solution", version, kSolutionFormatVersion);
  try {
    SolutionRecord s;
    s.model_id = j.at("model_id").get<std::string>();
    s.suite = j.at("suite").get<std::string>();
    s.index = j.at("index").get<int>();
    const std::string kind = j.at("kind").get<std::string>();
    if (kind != "setpoint" && kind != "dynamic") throw FormatError("unknown suite kind '" + kind + "'");
    s.kind = kind == "setpoint" ? SuiteKind::setpoint : SuiteKind::dynamic;
    s.mode = target_mode_from_string(j.at("mode").get<std::string>());
    s.tau = j.at("tau").get<std::vector<int>>();
    for (const auto& t : j.at("targets")) s.targets.push_back(vec_of(t));
    const json& pi = j.at("plant_initial");
    s.plant_initial.q = {pi.at("q").at(0).get<double>(), pi.at("q").at(1).get<double>()};
    s.plant_initial.qdot = {pi.at("qdot").at(0).get<double>(), pi.at("qdot").at(1).get<double>()};
    s.plant_initial.p_act = pressure_of(pi.at("p_act"));
    s.u0 = pressure_of(j.at("u0"));
    s.p_max = j.at("p_max").get<double>();
    for (const auto& p : j.at("u")) s.u.push_back(pressure_of(p));
    const json& c = j.at("cost");
    s.cost = {c.at("tracking").get<double>(),  c.at("tracking_velocity").get<double>(),
              c.at("waypoint").get<double>(),  c.at("waypoint_velocity").get<double>(),
              c.at("terminal").get<double>(),  c.at("terminal_velocity").get<double>(),
              c.at("increment").get<double>(), c.at("increment_excess").get<double>(),
              c.at("total").get<double>()};
    s.trace = j.at("trace").get<std::vector<double>>();
    s.best_iteration = j.at("best_iteration").get<int>();
    s.initial_mse = j.at("initial_mse").get<double>();
    s.target_pressure = pressure_of(j.at("target_pressure"));
    if (s.tau.size() != s.targets.size() || s.tau.empty()) throw FormatError("solution needs one target per waypoint");
    if (s.u.size() != static_cast<std::size_t>(s.tau.back())) throw FormatError("solution length differs from the horizon");
    return s;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed solution: ") + e.what());
  } catch (const ContractViolation& e) {
    throw FormatError(std::string("malformed solution: ") + e.what());
  }
}

}  // namespace vonctl
