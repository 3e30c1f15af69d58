#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vonctl/dynamics.hpp"
#include "vonctl/training.hpp"

namespace vonctl {

/// Waypoint state indices tau_1..tau_K (1-based state indices, tau_K = T).
std::vector<int> schedule_waypoints(int K, int T);

enum class TargetMode { next, closest };
std::string to_string(TargetMode m);
TargetMode target_mode_from_string(const std::string& s);

/// 0-based index of the waypoint active at state index i (1 <= i <= T).
int active_target(int i, const std::vector<int>& tau, TargetMode mode);

/// ||max(|du| - du_max, 0)||^2
double increment_penalty(const Pressure& du, const Pressure& du_max);

struct WaypointSet {
  std::vector<Observation> observations;
  std::vector<Vec> z;
  std::vector<Vec> zdot;
  std::vector<int> tau;
  std::vector<bool> is_static;
  int size() const { return static_cast<int>(z.size()); }
};

struct WaypointTarget {
  Observation observation;
  bool is_static = true;
  // Optional neighbouring frames for a velocity target.
  std::optional<Observation> previous;
  std::optional<Observation> next;
};

/// Encodes targets in mean mode; velocities come from latent_velocity when
/// both neighbours are given and the target is not static, else zero.
WaypointSet make_waypoints(const std::vector<WaypointTarget>& targets, const Encoder& enc, int T);

struct CostWeights {
  double w_q = 0.0;
  double w_qdot = 0.0;
  double w_qk = 0.0;
  double w_qdotk = 0.0;
  double w_qf = 0.0;
  double w_qdotf = 0.0;
  double w_r = 1e-3;
  double w_du = 1.0;
  Pressure du_max = Pressure::Constant(2.0);
  TargetMode mode = TargetMode::next;

  CostWeights scaled(double c) const;
  bool operator==(const CostWeights&) const = default;
};

struct OptimizerSettings {
  int iterations = 500;
  double lr = 0.5;
  std::uint64_t seed = 0;
  double init_jitter = 0.0;  // kPa std of optional random perturbation of the constant-hold start
};

struct OcpProblem {
  DynModel model;
  double latent_scale = 1.0;
  LatentState initial;
  Pressure u0 = rest_pressure();
  int horizon = 100;
  WaypointSet waypoints;
  CostWeights weights;
  OptimizerSettings optimizer;
  double p_min = 0.0;
  double p_max = kDatasetPressureMax;

  void validate() const;
};

OcpProblem make_problem(const Checkpoint& ck, const LatentState& initial, const Pressure& u0, int horizon,
                        WaypointSet waypoints, const CostWeights& weights);

struct CostBreakdown {
  double tracking = 0.0;
  double tracking_velocity = 0.0;
  double waypoint = 0.0;
  double waypoint_velocity = 0.0;
  double terminal = 0.0;
  double terminal_velocity = 0.0;
  double increment = 0.0;
  double increment_excess = 0.0;
  double total = 0.0;
};

struct CostEvaluation {
  CostBreakdown cost;
  std::vector<LatentState> states;  // xi(1) .. xi(T)
  std::vector<Pressure> gradient;   // dJ/du(i), i = 0 .. T-1 (empty unless requested)
};

/// `useq` holds u(0) .. u(T-1); u(0) is the fixed initial input.
CostEvaluation ocp_cost(const ControlSequence& useq, const OcpProblem& problem, bool with_gradient = false);

struct OcpSolution {
  ControlSequence u;                   // u(0) .. u(T-1)
  std::vector<LatentState> predicted;  // xi(1) .. xi(T)
  CostBreakdown cost;
  std::vector<double> trace;  // cost at every iteration
  int best_iteration = 0;
  std::vector<std::string> warnings;
};

OcpSolution solve_ocp(const OcpProblem& problem);

/// One row of the trajectory-suite table.
struct TrajectorySuite {
  std::string name;
  int n = 0;
  int T = 0;
  int K = 0;
  double w_q = 0, w_qdot = 0, w_qk = 0, w_qdotk = 0, w_qf = 0, w_qdotf = 0;
  bool operator==(const TrajectorySuite&) const = default;

  CostWeights weights() const;
};

const std::vector<TrajectorySuite>& trajectory_suites();
const TrajectorySuite& trajectory_suite(const std::string& name);

}  // namespace vonctl
