#include "vonctl/plant.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "vonctl/error.hpp"

namespace vonctl {

namespace {

double sinc(double x) { return std::abs(x) < 1e-8 ? 1.0 - x * x / 6.0 : std::sin(x) / x; }

Pressure clamp_pressure(const Pressure& u, double p_max) { return u.cwiseMax(0.0).cwiseMin(p_max); }

}  // namespace

Eigen::Vector2d plant_torque(const Pressure& p, const PlantParams& params) {
  const double t0 = params.gain[0] * (p[0] - p[1]);
  const double t1 = params.gain[1] * (p[2] - p[3]);
  return {t0 + params.coupling * t1 + params.bias_torque, t1 + params.bias_torque};
}

PlantState PlantState::at_equilibrium(const Pressure& p, const PlantParams& params) {
  PlantState s;
  s.p_act = clamp_pressure(p, params.p_max);
  const Eigen::Vector2d tau = plant_torque(s.p_act, params);
  s.q = {tau[0] / params.stiffness[0], tau[1] / params.stiffness[1]};
  return s;
}

PlantState plant_step(const PlantState& s, const Pressure& u_cmd, const PlantParams& params, double dt) {
  if (!(dt > 0.0)) throw ContractViolation("plant_step: dt must be positive");
  PlantState out = s;
  const Pressure target = clamp_pressure(u_cmd, params.p_max);
  if (params.lag > 0.0)
    out.p_act = s.p_act + std::min(1.0, dt / params.lag) * (target - s.p_act);
  else
    out.p_act = target;

  const Eigen::Vector2d tau = plant_torque(out.p_act, params);
  const double h = dt / params.substeps;
  // Implicit midpoint per segment: symplectic, and for this linear
  // oscillator the energy change per substep is exactly -h d vmid^2 + h tau vmid.
  for (int seg = 0; seg < 2; ++seg) {
    const double j = params.inertia[seg];
    const double k = params.stiffness[seg];
    const double d = params.damping[seg];
    double q = out.q[seg];
    double v = out.qdot[seg];
    const double lhs = j / h + k * h / 4.0 + d / 2.0;
    const double rhs_v = j / h - k * h / 4.0 - d / 2.0;
    for (int i = 0; i < params.substeps; ++i) {
      const double v_next = (v * rhs_v + tau[seg] - k * q) / lhs;
      q += 0.5 * h * (v + v_next);
      v = v_next;
    }
    out.q[seg] = q;
    out.qdot[seg] = v;
  }
  return out;
}

double plant_energy(const PlantState& s, const PlantParams& params) {
  double e = 0.0;
  for (int seg = 0; seg < 2; ++seg)
    e += 0.5 * params.inertia[seg] * s.qdot[seg] * s.qdot[seg] + 0.5 * params.stiffness[seg] * s.q[seg] * s.q[seg];
  return e;
}

Observation render(const PlantState& s, const PlantParams& params) {
  constexpr int kPointsPerSegment = 24;
  const int h = params.height;
  const int w = params.width;
  const double cx = 0.5 * (w - 1);
  const double length = params.segment_length;
  const double spacing = length / kPointsPerSegment;
  const double sigma = params.line_sigma;
  const double amplitude = 0.9 * spacing / (std::sqrt(2.0 * std::numbers::pi) * sigma);

  // Centre-line samples as offsets from the base.
  std::vector<Eigen::Vector2d> points;
  Eigen::Vector2d start(0.0, 0.0);
  double heading = 0.0;
  for (int seg = 0; seg < 2; ++seg) {
    const double curvature = s.q[seg] / length;
    const int count = seg == 0 ? kPointsPerSegment : kPointsPerSegment + 1;
    for (int k = 0; k < count; ++k) {
      const double arc = k * spacing;
      const double half = 0.5 * curvature * arc;
      const double chord = arc * sinc(half);
      points.emplace_back(start.x() + chord * std::sin(heading + half), start.y() + chord * std::cos(heading + half));
    }
    const double half = 0.5 * s.q[seg];
    const double chord = length * sinc(half);
    start += Eigen::Vector2d(chord * std::sin(heading + half), chord * std::cos(heading + half));
    heading += s.q[seg];
  }

  const Eigen::Index n = static_cast<Eigen::Index>(points.size());
  Mat gy(h, n);
  Mat gx(w, n);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (Eigen::Index p = 0; p < n; ++p) {
    for (int j = 0; j < w; ++j) {
      const double dx = (j - cx) - points[p].x();
      gx(j, p) = std::exp(-dx * dx * inv);
    }
    for (int i = 0; i < h; ++i) {
      const double dy = (i - params.base_y) - points[p].y();
      gy(i, p) = std::exp(-dy * dy * inv);
    }
  }
  // image(i, j) = amplitude * sum_p gy(i, p) gx(j, p), stored row-major.
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> image = amplitude * gy * gx.transpose();
  Observation out = Eigen::Map<const Vec>(image.data(), h * w);
  return out.cwiseMax(0.0).cwiseMin(1.0);
}

double image_mse(const Observation& a, const Observation& b) {
  if (a.size() != b.size()) throw ContractViolation("image_mse: size mismatch");
  return (a - b).squaredNorm() / static_cast<double>(a.size());
}

// ---------------------------------------------------------------------------
// Dataset

std::span<const float> Dataset::frame(std::size_t i) const {
  if (i >= size()) throw ContractViolation("dataset frame index out of range");
  return {pixels.data() + i * frame_size(), static_cast<std::size_t>(frame_size())};
}

Observation Dataset::observation(std::size_t i) const {
  const auto f = frame(i);
  return Eigen::Map<const Eigen::VectorXf>(f.data(), static_cast<Eigen::Index>(f.size())).cast<double>();
}

Observation Dataset::rest_observation() const {
  return Eigen::Map<const Eigen::VectorXf>(o_rest.data(), static_cast<Eigen::Index>(o_rest.size())).cast<double>();
}

void Dataset::push_back(double t, const Pressure& cmd, const Pressure& act, const Observation& obs) {
  if (obs.size() != frame_size()) throw ContractViolation("observation size does not match dataset");
  time.push_back(t);
  u_cmd.push_back(cmd);
  p_act.push_back(act);
  for (Eigen::Index i = 0; i < obs.size(); ++i) pixels.push_back(static_cast<float>(obs[i]));
}

namespace {

struct ChannelProfile {
  std::vector<double> knot_time;
  std::vector<double> knot_value;
  std::array<double, 3> amp{};
  std::array<double, 3> freq{};
  std::array<double, 3> phase{};

  double operator()(double t) const {
    auto it = std::upper_bound(knot_time.begin(), knot_time.end(), t);
    const std::size_t k = static_cast<std::size_t>(std::distance(knot_time.begin(), it));
    double base;
    if (k == 0) {
      base = knot_value.front();
    } else if (k >= knot_time.size()) {
      base = knot_value.back();
    } else {
      const double a = (t - knot_time[k - 1]) / (knot_time[k] - knot_time[k - 1]);
      base = (1.0 - a) * knot_value[k - 1] + a * knot_value[k];
    }
    double wave = 0.0;
    for (int c = 0; c < 3; ++c) wave += amp[c] * std::sin(2.0 * std::numbers::pi * freq[c] * t + phase[c]);
    const double fade = std::min(1.0, t / 2.0);
    return std::clamp(base + fade * wave, 0.0, kDatasetPressureMax);
  }
};

}  // namespace

std::vector<Pressure> command_profile(ExcitationProfile kind, std::size_t excitation_frames, std::mt19937_64& rng) {
  constexpr double rate = 1.0 / kControlDt;
  std::uniform_real_distribution<double> level(0.0, kDatasetPressureMax);
  const double span = static_cast<double>(excitation_frames) / rate + 10.0;
  std::vector<Pressure> commands;
  commands.reserve(excitation_frames);
  if (kind == ExcitationProfile::sinusoidal) {
    std::uniform_real_distribution<double> gap(2.0, 6.0);
    std::uniform_real_distribution<double> amp(0.0, 10.0);
    std::uniform_real_distribution<double> freq(0.05, 1.2);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    std::array<ChannelProfile, kInputChannels> channels;
    for (auto& ch : channels) {
      ch.knot_time.push_back(0.0);
      ch.knot_value.push_back(kPressureCenter);
      double t = 0.0;
      while (t < span) {
        t += gap(rng);
        ch.knot_time.push_back(t);
        ch.knot_value.push_back(level(rng));
      }
      for (int c = 0; c < 3; ++c) {
        ch.amp[c] = amp(rng);
        ch.freq[c] = freq(rng);
        ch.phase[c] = phase(rng);
      }
    }
    for (std::size_t i = 0; i < excitation_frames; ++i) {
      const double t = static_cast<double>(i) / rate;
      Pressure u;
      for (int c = 0; c < kInputChannels; ++c) u[c] = channels[c](t);
      commands.push_back(u);
    }
  } else {
    std::uniform_real_distribution<double> hold(1.0, 4.0);
    while (commands.size() < excitation_frames) {
      const std::size_t n = static_cast<std::size_t>(std::llround(hold(rng) * rate));
      const Pressure u(level(rng), level(rng), level(rng), level(rng));
      for (std::size_t i = 0; i < n && commands.size() < excitation_frames; ++i) commands.push_back(u);
    }
  }
  return commands;
}

Dataset generate_dataset(ExcitationProfile kind, double duration_s, std::uint64_t seed, const PlantParams& params) {
  if (duration_s < 10.0) throw ContractViolation("generate_dataset: duration must be at least 10 s");
  constexpr double rate = 1.0 / kControlDt;
  const std::size_t frames = static_cast<std::size_t>(std::llround(duration_s * rate));
  const std::size_t lead = static_cast<std::size_t>(std::llround(kRestLeadSeconds * rate));
  std::mt19937_64 rng(seed);

  Dataset data;
  data.height = params.height;
  data.width = params.width;
  data.rate = rate;
  data.u_rest = rest_pressure();
  const PlantState rest = PlantState::rest();
  const Observation o_rest = render(rest, params);
  for (Eigen::Index i = 0; i < o_rest.size(); ++i) data.o_rest.push_back(static_cast<float>(o_rest[i]));
  data.time.reserve(frames);
  data.pixels.reserve(frames * params.height * params.width);

  const std::vector<Pressure> commands =
      command_profile(kind, frames > lead ? frames - lead : 0, rng);

  PlantState state = rest;
  for (std::size_t i = 0; i < frames; ++i) {
    const Pressure cmd = i < lead ? data.u_rest : commands[i - lead];
    data.push_back(static_cast<double>(i) / rate, cmd, state.p_act, i < lead ? o_rest : render(state, params));
    state = plant_step(state, cmd, params, kControlDt);
  }
  return data;
}

std::vector<std::size_t> static_frames(const Dataset& data, double min_hold_s) {
  std::vector<std::size_t> out;
  const std::size_t lead = static_cast<std::size_t>(std::llround(kRestLeadSeconds * data.rate));
  const std::size_t min_len = static_cast<std::size_t>(std::llround(min_hold_s * data.rate));
  std::size_t start = lead;
  for (std::size_t i = lead; i < data.size(); ++i) {
    const bool last = i + 1 == data.size();
    if (last || data.u_cmd[i + 1] != data.u_cmd[i]) {
      // The frame after the last command of the hold shows the settled state.
      if (!last && i + 1 - start >= min_len) out.push_back(i + 1);
      start = i + 1;
    }
  }
  return out;
}

}  // namespace vonctl
