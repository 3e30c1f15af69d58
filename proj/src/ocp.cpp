#include "vonctl/ocp.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <optional>

#include "vonctl/error.hpp"

namespace vonctl {

std::vector<int> schedule_waypoints(int K, int T) {
  if (K < 1 || T < 1) throw ContractViolation("schedule_waypoints: K and T must be positive");
  if (K > T) throw ContractViolation("schedule_waypoints: more waypoints than steps");
  if (K == 1) return {T};
  std::vector<int> tau;
  const long den = K - 1;
  for (int k = 1; k <= K; ++k) {
    const long num = static_cast<long>(k - 1) * (T - 1);
    tau.push_back(1 + static_cast<int>((2 * num + den) / (2 * den)));  // round half up
  }
  return tau;
}

std::string to_string(TargetMode m) { return m == TargetMode::next ? "next" : "closest"; }

TargetMode target_mode_from_string(const std::string& s) {
  if (s == "next") return TargetMode::next;
  if (s == "closest") return TargetMode::closest;
  throw ContractViolation("unknown target mode '" + s + "'");
}

int active_target(int i, const std::vector<int>& tau, TargetMode mode) {
  if (tau.empty()) throw ContractViolation("active_target: no waypoints");
  const int K = static_cast<int>(tau.size());
  if (mode == TargetMode::next) {
    for (int k = 0; k < K; ++k)
      if (tau[k] >= i) return k;
    return K - 1;
  }
  int best = 0;
  for (int k = 1; k < K; ++k)
    if (std::abs(i - tau[k]) < std::abs(i - tau[best])) best = k;
  return best;
}

double increment_penalty(const Pressure& du, const Pressure& du_max) {
  return (du.cwiseAbs() - du_max).cwiseMax(0.0).squaredNorm();
}

WaypointSet make_waypoints(const std::vector<WaypointTarget>& targets, const Encoder& enc, int T) {
  if (targets.empty()) throw ContractViolation("make_waypoints: no targets");
  WaypointSet w;
  w.tau = schedule_waypoints(static_cast<int>(targets.size()), T);
  const int P = enc.net.input_dim();
  for (const auto& t : targets) {
    if (t.observation.size() != P) throw ContractViolation("make_waypoints: observation size mismatch");
    w.observations.push_back(t.observation);
    w.z.push_back(enc.mean(t.observation));
    w.is_static.push_back(t.is_static);
    if (!t.is_static && t.previous && t.next) {
      if (t.previous->size() != P || t.next->size() != P)
        throw ContractViolation("make_waypoints: neighbour frame size mismatch");
      w.zdot.push_back(latent_velocity(*t.previous, t.observation, *t.next, enc));
    } else {
      w.zdot.push_back(Vec::Zero(enc.latent_dim));
    }
  }
  return w;
}

CostWeights CostWeights::scaled(double c) const {
  CostWeights w = *this;
  for (double* v : {&w.w_q, &w.w_qdot, &w.w_qk, &w.w_qdotk, &w.w_qf, &w.w_qdotf, &w.w_r, &w.w_du}) *v *= c;
  return w;
}

void OcpProblem::validate() const {
  const int K = waypoints.size();
  if (horizon < 1) throw ContractViolation("OCP horizon must be positive");
  if (K < 1 || static_cast<int>(waypoints.tau.size()) != K || static_cast<int>(waypoints.zdot.size()) != K)
    throw ContractViolation("OCP waypoint set is inconsistent");
  for (int k = 0; k < K; ++k) {
    if (k > 0 && waypoints.tau[k] <= waypoints.tau[k - 1]) throw ContractViolation("waypoint indices must increase");
    if (waypoints.z[k].size() != latent_dim(model) || waypoints.zdot[k].size() != latent_dim(model))
      throw ContractViolation("waypoint latent size mismatch");
  }
  if (waypoints.tau.front() < 1 || waypoints.tau.back() > horizon)
    throw ContractViolation("waypoint indices outside the horizon");
  if (initial.z.size() != latent_dim(model) || initial.zdot.size() != latent_dim(model))
    throw ContractViolation("initial state size mismatch");
  if (!(latent_scale > 0.0)) throw ContractViolation("latent scale must be positive");
  if (!(p_max > p_min)) throw ContractViolation("invalid pressure bounds");
  if ((u0.array() < p_min).any() || (u0.array() > p_max).any())
    throw ContractViolation("initial input outside the pressure bounds");
  const CostWeights& w = weights;
  for (double v : {w.w_q, w.w_qdot, w.w_qk, w.w_qdotk, w.w_qf, w.w_qdotf, w.w_r, w.w_du})
    if (!(v >= 0.0)) throw ContractViolation("cost weights must be non-negative");
  if ((w.du_max.array() <= 0.0).any()) throw ContractViolation("increment bound must be positive");
  if (optimizer.iterations < 0 || !(optimizer.lr > 0.0)) throw ContractViolation("invalid optimizer settings");
}

OcpProblem make_problem(const Checkpoint& ck, const LatentState& initial, const Pressure& u0, int horizon,
                        WaypointSet waypoints, const CostWeights& weights) {
  OcpProblem p;
  p.model = ck.model.dynamics;
  p.latent_scale = ck.latent_scale;
  p.initial = initial;
  p.u0 = u0;
  p.horizon = horizon;
  p.waypoints = std::move(waypoints);
  p.weights = weights;
  return p;
}

CostEvaluation ocp_cost(const ControlSequence& useq, const OcpProblem& problem, bool with_gradient) {
  const int T = problem.horizon;
  if (static_cast<int>(useq.size()) != T) throw ContractViolation("control sequence length must equal the horizon");
  const WaypointSet& wp = problem.waypoints;
  const CostWeights& w = problem.weights;
  const int K = wp.size();
  const int L = latent_dim(problem.model);
  const double inv_s2 = 1.0 / (problem.latent_scale * problem.latent_scale);

  Rollout r = rollout(problem.model, problem.initial, useq);
  CostEvaluation out;
  CostBreakdown& c = out.cost;
  std::vector<Vec> dstates(T, Vec::Zero(2 * L));

  auto add = [&](int i, const Vec& target_z, const Vec& target_v, double wz, double wv, double& acc_z,
                 double& acc_v) {
    const LatentState& s = r.states[i - 1];
    const Vec ez = s.z - target_z, ev = s.zdot - target_v;
    acc_z += wz * inv_s2 * ez.squaredNorm();
    acc_v += wv * inv_s2 * ev.squaredNorm();
    if (with_gradient) {
      dstates[i - 1].head(L) += 2.0 * wz * inv_s2 * ez;
      dstates[i - 1].tail(L) += 2.0 * wv * inv_s2 * ev;
    }
  };

  if (w.w_q != 0.0 || w.w_qdot != 0.0)
    for (int i = 1; i <= T; ++i) {
      const int k = active_target(i, wp.tau, w.mode);
      add(i, wp.z[k], wp.zdot[k], w.w_q / T, w.w_qdot / T, c.tracking, c.tracking_velocity);
    }
  if (w.w_qk != 0.0 || w.w_qdotk != 0.0)
    for (int k = 0; k < K; ++k) add(wp.tau[k], wp.z[k], wp.zdot[k], w.w_qk / K, w.w_qdotk / K, c.waypoint,
                                    c.waypoint_velocity);
  if (w.w_qf != 0.0 || w.w_qdotf != 0.0) {
    const int k = active_target(T, wp.tau, w.mode);
    add(T, wp.z[k], wp.zdot[k], w.w_qf, w.w_qdotf, c.terminal, c.terminal_velocity);
  }

  std::vector<Pressure> gu(T, Pressure::Zero());
  if (T > 1) {
    const double scale = 1.0 / (T - 1);
    for (int i = 1; i < T; ++i) {
      const Pressure du = useq[i] - useq[i - 1];
      const Pressure excess = (du.cwiseAbs() - w.du_max).cwiseMax(0.0);
      c.increment += w.w_r * scale * du.squaredNorm();
      c.increment_excess += w.w_du * scale * excess.squaredNorm();
      if (with_gradient) {
        const Pressure g = 2.0 * scale * (w.w_r * du + w.w_du * excess.cwiseProduct(du.cwiseSign()));
        gu[i] += g;
        gu[i - 1] -= g;
      }
    }
  }
  c.total = c.tracking + c.tracking_velocity + c.waypoint + c.waypoint_velocity + c.terminal + c.terminal_velocity +
            c.increment + c.increment_excess;

  if (with_gradient) {
    const RolloutGradient g = rollout_vjp(r.tape, dstates);
    for (int i = 0; i < T; ++i) gu[i] += g.du[i];
    out.gradient = std::move(gu);
  }
  out.states = std::move(r.states);
  return out;
}

OcpSolution solve_ocp(const OcpProblem& problem) {
  problem.validate();
  const int T = problem.horizon;
  ControlSequence u(T, problem.u0);
  if (problem.optimizer.init_jitter > 0.0) {
    std::mt19937_64 rng(problem.optimizer.seed);
    std::normal_distribution<double> n(0.0, problem.optimizer.init_jitter);
    for (int i = 1; i < T; ++i)
      for (int c = 0; c < kInputChannels; ++c) u[i][c] = std::clamp(u[i][c] + n(rng), problem.p_min, problem.p_max);
  }
  const int free = 4 * (T - 1);
  Vec x(free);
  for (int i = 1; i < T; ++i) x.segment<4>(4 * (i - 1)) = u[i];

  OcpSolution sol;
  CostEvaluation first;
  try {
    first = ocp_cost(u, problem, false);
  } catch (const DivergenceError&) {
    throw DivergenceError(0, "OCP rollout diverges at the initial controls");
  }
  if (!std::isfinite(first.cost.total)) throw DivergenceError(0, "OCP cost is not finite at the initial controls");

  std::optional<Adam> adam;
  ControlSequence best_u = u;
  double best = std::numeric_limits<double>::infinity();
  const int iters = problem.optimizer.iterations;
  for (int k = 0; k <= iters; ++k) {
    CostEvaluation e;
    try {
      e = ocp_cost(u, problem, k < iters);
    } catch (const DivergenceError&) {
      sol.warnings.push_back("rollout diverged at iteration " + std::to_string(k));
      break;
    }
    sol.trace.push_back(e.cost.total);
    if (e.cost.total < best) {
      best = e.cost.total;
      best_u = u;
      sol.best_iteration = k;
    }
    if (k == iters) break;
    Vec g(free);
    for (int i = 1; i < T; ++i) g.segment<4>(4 * (i - 1)) = e.gradient[i];
    if (!adam) {
      // Epsilon tied to the initial gradient scale keeps the iterates invariant
      // under a common rescaling of all cost weights.
      const double rms = free > 0 ? g.norm() / std::sqrt(static_cast<double>(free)) : 0.0;
      adam.emplace(free, 0.9, 0.999, rms > 0.0 ? 1e-8 * rms : 1e-300);
    }
    adam->step(x, g, cosine_decay(problem.optimizer.lr, k, iters));
    x = x.cwiseMax(problem.p_min).cwiseMin(problem.p_max);
    for (int i = 1; i < T; ++i) u[i] = x.segment<4>(4 * (i - 1));
  }
  for (std::size_t k = 11; k < sol.trace.size(); ++k)
    if (sol.trace[k] > sol.trace[k - 1] * (1.0 + 1e-9)) {
      sol.warnings.push_back("cost increased after iteration 10 (first at iteration " + std::to_string(k) + ")");
      break;
    }
  const CostEvaluation fin = ocp_cost(best_u, problem, false);
  sol.u = best_u;
  sol.cost = fin.cost;
  sol.predicted = fin.states;
  return sol;
}

CostWeights TrajectorySuite::weights() const {
  CostWeights w;
  w.w_q = w_q;
  w.w_qdot = w_qdot;
  w.w_qk = w_qk;
  w.w_qdotk = w_qdotk;
  w.w_qf = w_qf;
  w.w_qdotf = w_qdotf;
  return w;
}

const std::vector<TrajectorySuite>& trajectory_suites() {
  static const std::vector<TrajectorySuite> suites{
      {"Setp. Normal", 9, 100, 2, 1, 0.002, 0, 0, 0, 0},   {"Setp. Extrap.", 6, 100, 2, 1, 0.002, 0, 0, 0, 0},
      {"Dyn. Normal", 5, 200, 8, 1, 0, 0, 0, 0, 0.002},    {"Dyn. Fast", 3, 150, 8, 1, 0, 0, 0, 0, 0.002},
      {"Dyn. Upswing", 3, 150, 3, 0, 0, 1, 0.002, 0, 0},   {"Dyn. Long", 5, 1000, 22, 1, 0, 0, 0, 0, 0.002},
  };
  return suites;
}

namespace {
std::string slug(const std::string& s) {
  std::string out;
  for (char ch : s)
    if (std::isalnum(static_cast<unsigned char>(ch))) out += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}
}  // namespace

const TrajectorySuite& trajectory_suite(const std::string& name) {
  for (const auto& s : trajectory_suites())
    if (slug(s.name) == slug(name)) return s;
  throw ContractViolation("unknown trajectory suite '" + name + "'");
}

}  // namespace vonctl
