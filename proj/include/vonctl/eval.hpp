#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vonctl/io.hpp"
#include "vonctl/ocp.hpp"
#include "vonctl/plant.hpp"
#include "vonctl/training.hpp"

namespace vonctl {

/// Applies `u_cmd` at 50 Hz from `initial` without feedback. Frame 0 is the
/// initial observation, frame i the observation after i steps (T + 1 frames).
/// Frame i carries u_cmd[i]; the last frame repeats the final command.
Dataset execute_open_loop(const ControlSequence& u_cmd, const PlantState& initial, const PlantParams& params);

enum class SuiteKind { setpoint, dynamic };

/// Dynamic: mean image MSE at frames tau_2..tau_K against the targets.
/// Setpoint: mean over frames 1..T against the active target.
double waypoint_mse(const Dataset& executed, const std::vector<Observation>& targets, const std::vector<int>& tau,
                    SuiteKind kind, TargetMode mode = TargetMode::next);

/// Mean absolute difference in kPa over every channel of every pair.
double pressure_mae(const std::vector<Pressure>& predicted, const std::vector<Pressure>& realized);

/// A settled plant configuration used as a setpoint.
struct StaticTarget {
  Observation observation;
  Pressure pressure;  // the hold command that produced it
};

/// Settled frames of a step dataset, `count` of them evenly spread.
std::vector<StaticTarget> static_targets(const Dataset& step_data, int count);

/// Static start at `from`, target `to`, both as static waypoints [from, to].
OcpProblem setpoint_problem(const Checkpoint& ck, const StaticTarget& from, const StaticTarget& to,
                            const TrajectorySuite& suite, double p_max = kDatasetPressureMax);

struct TrajectoryResult {
  std::string suite;
  std::string model;
  int index = 0;
  double mse = 0.0;          // waypoint_mse of the executed frames
  double initial_mse = 0.0;  // MSE between the initial observation and the final target
  double predicted_cost = 0.0;
  Pressure final_command = Pressure::Zero();
  Pressure target_pressure = Pressure::Zero();  // pressure behind the final target when known
  bool operator==(const TrajectoryResult&) const = default;
};

/// Plant equilibria at random holds with at least one chamber in
/// [kDatasetPressureMax, p_max] and the rest in [0, p_max].
std::vector<StaticTarget> extrapolated_targets(int count, const PlantParams& plant, std::uint64_t seed,
                                               double p_max = 100.0);

/// One trajectory problem of a suite: where the plant starts and what it should show.
struct TrajectoryTask {
  std::string suite;
  int index = 0;
  PlantState initial;
  Pressure u0 = rest_pressure();
  std::vector<WaypointTarget> targets;  // targets[0] is the initial observation
  Pressure target_pressure = Pressure::Zero();
  ControlSequence generating;  // commands behind dynamic targets, empty for setpoints
};

/// Chain rest -> t1 -> ... -> tn -> rest, one static task per leg.
std::vector<TrajectoryTask> setpoint_tasks(const std::string& suite, const StaticTarget& rest,
                                           const std::vector<StaticTarget>& targets, const PlantParams& plant);

/// Dynamic suites: a scripted command sequence is run on the plant from rest
/// and the waypoints are its frames at the scheduled indices. Upswing pumps at
/// the plant's first resonance; Fast uses 0.8-1.6 Hz content, Normal and Long 0.1-0.5 Hz.
std::vector<TrajectoryTask> dynamic_tasks(const TrajectorySuite& suite, const PlantParams& plant, std::uint64_t seed);

/// Task from a waypoint export. The plant starts settled at the first
/// waypoint's pressures (clamped to p_max); the suite name decides scoring.
TrajectoryTask waypoint_task(const WaypointExport& w, const std::string& suite, double p_max = kDatasetPressureMax);

struct SuiteTasks {
  std::vector<TrajectoryTask> tasks;
  double p_max = kDatasetPressureMax;
};

/// Tasks of a named suite. Setp. Normal targets are settled frames of
/// `step_data`, Setp. Extrap. targets are extrapolated holds (p_max 100),
/// dynamic suites use `seed` for their scripted commands.
SuiteTasks suite_tasks(const TrajectorySuite& suite, const Checkpoint& ck, const Dataset& step_data,
                       const PlantParams& plant, std::uint64_t seed);

/// Everything needed to execute an optimized sequence and to score the
/// recording again later.
struct SolutionRecord {
  std::string model_id;
  std::string suite;
  int index = 0;
  SuiteKind kind = SuiteKind::dynamic;
  TargetMode mode = TargetMode::next;
  std::vector<int> tau;
  std::vector<Observation> targets;  // target observations, one per waypoint
  PlantState plant_initial;
  Pressure u0 = rest_pressure();
  double p_max = kDatasetPressureMax;
  ControlSequence u;
  CostBreakdown cost;
  std::vector<double> trace;
  int best_iteration = 0;
  double initial_mse = 0.0;
  Pressure target_pressure = Pressure::Zero();
  bool operator==(const SolutionRecord& o) const;
};

inline constexpr int kSolutionFormatVersion = 1;
inline constexpr int kReportFormatVersion = 1;

std::string solution_to_json(const SolutionRecord& s);
SolutionRecord solution_from_json(const std::string& text);

/// Result of a recording made from `s` (a pure function of both).
TrajectoryResult score_solution(const SolutionRecord& s, const Dataset& recording);

/// Solves the task's OCP; `solution` receives the full solver output when given.
SolutionRecord solve_task(const Checkpoint& ck, const TrajectoryTask& task, int horizon, const CostWeights& weights,
                          const OptimizerSettings& optimizer, double p_max, const std::string& model_id,
                          OcpSolution* solution = nullptr);
/// Open-loop execution of a stored solution on the plant (clamped at
/// max(plant.p_max, s.p_max)).
Dataset execute_solution(const SolutionRecord& s, const PlantParams& plant);

struct TaskRun {
  OcpSolution solution;
  SolutionRecord record;
  Dataset recording;
  TrajectoryResult result;
};

TaskRun run_task(const Checkpoint& ck, const TrajectoryTask& task, const PlantParams& plant,
                 const TrajectorySuite& suite, double p_max = kDatasetPressureMax, int iterations = 500,
                 const std::string& model_id = "");

/// Suite kind from the name: "Setp." suites are setpoints.
SuiteKind suite_kind(const std::string& suite_name);

/// The Setp. Normal chain rest -> t1 -> ... -> t8 -> rest (9 problems) executed
/// open loop on the plant.
std::vector<TrajectoryResult> run_setpoint_suite(const Checkpoint& ck, const std::vector<StaticTarget>& targets,
                                                 const PlantParams& plant, const TrajectorySuite& suite,
                                                 double p_max = kDatasetPressureMax);

/// Setpoint solves from rest to each target; returns the MAE between final
/// commanded and generating pressures.
double setpoint_pressure_mae(const Checkpoint& ck, const std::vector<StaticTarget>& targets, int iterations = 500);

// ---------------------------------------------------------------------------
// Stress tests

struct StaticHoldResult {
  std::vector<std::vector<double>> series;  // per state, 500 MSE values
  std::vector<double> drift;                // max of each series
};

StaticHoldResult stress_static_hold(const Checkpoint& ck, const std::vector<StaticTarget>& states, int steps = 500);

/// u(t) = u_from + (u_to - u_from) (1 - cos(pi t / ramp)) / 2 for t < ramp, then u_to.
ControlSequence cosine_ramp(const Pressure& from, const Pressure& to, int ramp_steps, int hold_steps);

struct RampResult {
  ControlSequence u;
  std::vector<double> mse;  // decoded prediction vs the target observation
  std::vector<Vec> excitation;  // B(u) per step (oscillator models only)
  std::vector<Vec> stiffness;   // -K (z - z0) per step
  double force_residual = 0.0;  // ||B(u) - K(z - z0)|| / ||B(u)|| at the end
  LatentState final_state;
};

RampResult stress_ramp_extrapolate(const Checkpoint& ck, const Pressure& target, const Observation& target_observation,
                                   int ramp_steps = 100, int hold_steps = 400);

struct ReleaseResult {
  ControlSequence u;
  std::vector<double> mse_to_rest;
  int release_step = 0;
};

/// 5 s of cosine excitation inside the dataset range, then the rest pressure.
ControlSequence release_profile(int excitation_steps = 250, int release_steps = 500);
ReleaseResult stress_release(const Checkpoint& ck, const ControlSequence& u, int release_step);

// ---------------------------------------------------------------------------
// Ablation study

struct AblationEntry {
  std::string name;
  std::vector<std::string> changed;  // config fields differing from the base
  double multistep_mse = 0.0;
  double pressure_mae = 0.0;
  std::string error;  // non-empty when training failed
  bool operator==(const AblationEntry&) const = default;
};

struct AblationData {
  const Dataset* train = nullptr;
  const Dataset* validation = nullptr;  // step dataset
  int windows = 50;
  int horizon = 25;
  int setpoints = 50;
  int ocp_iterations = 500;
};

using CheckpointCallback = std::function<void(const std::string& name, const Checkpoint&)>;

std::vector<AblationEntry> run_ablation_study(const TrainConfig& base, const AblationData& data,
                                              const CheckpointCallback& on_trained = {});

// ---------------------------------------------------------------------------
// Reports

struct SeriesRecord {
  std::string name;
  std::string model;
  std::vector<double> values;
  bool operator==(const SeriesRecord&) const = default;
};

struct RunReport {
  std::vector<TrajectoryResult> trajectories;
  std::vector<AblationEntry> ablations;
  std::vector<SeriesRecord> series;
  bool operator==(const RunReport&) const = default;
};

struct Aggregate {
  std::string model;
  std::string suite;
  int count = 0;
  double mean_mse = 0.0;
};

/// Arithmetic means of the trajectory MSEs per (model, suite), plus per model over all suites (suite "all").
std::vector<Aggregate> aggregate(const RunReport& report);

std::string report_to_json(const RunReport& r);
RunReport report_from_json(const std::string& text);
/// Tab-separated table of trajectories and ablations.
std::string report_table(const RunReport& r);

}  // namespace vonctl
