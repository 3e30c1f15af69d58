#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "vonctl/dynamics.hpp"

namespace vonctl {

/// Flattened row-major grayscale image, values in [0, 1].
using Observation = Vec;

/// Two-segment planar arm driven by two antagonistic chamber pairs.
struct PlantParams {
  std::array<double, 2> stiffness{1.0, 1.0};
  std::array<double, 2> damping{0.08, 0.08};
  std::array<double, 2> inertia{0.01, 0.01};
  std::array<double, 2> gain{0.012, 0.012};  // torque per kPa of pair difference
  double coupling = 0.25;      // share of the distal torque felt by the base segment
  double bias_torque = 0.0;    // constant load, e.g. gravity
  double segment_length = 12.0;  // pixels
  double lag = 0.08;             // actuator time constant in seconds; 0 disables
  double p_max = 100.0;          // commands are clamped to [0, p_max]
  int substeps = 4;
  int height = 32;
  int width = 32;
  double line_sigma = 1.0;  // Gaussian cross-section, pixels
  double base_y = 2.0;
};

struct PlantState {
  Eigen::Vector2d q = Eigen::Vector2d::Zero();
  Eigen::Vector2d qdot = Eigen::Vector2d::Zero();
  Pressure p_act = Pressure::Constant(kPressureCenter);

  static PlantState rest() { return {}; }
  static PlantState at_equilibrium(const Pressure& p, const PlantParams& params);
};

/// Equal pressure in every chamber: zero net torque.
inline Pressure rest_pressure() { return Pressure::Constant(kPressureCenter); }

PlantState plant_step(const PlantState& s, const Pressure& u_cmd, const PlantParams& params, double dt = kControlDt);
Observation render(const PlantState& s, const PlantParams& params);
double plant_energy(const PlantState& s, const PlantParams& params);
Eigen::Vector2d plant_torque(const Pressure& p, const PlantParams& params);

double image_mse(const Observation& a, const Observation& b);

enum class ExcitationProfile { sinusoidal, step };

/// A uniformly sampled recording. Frame i holds the observation and actual
/// pressures at time i / rate and the command applied until frame i + 1.
struct Dataset {
  int height = 32;
  int width = 32;
  double rate = 50.0;
  std::vector<double> time;
  std::vector<Pressure> u_cmd;
  std::vector<Pressure> p_act;
  std::vector<float> pixels;  // frame-major, height * width per frame
  Pressure u_rest = rest_pressure();
  std::vector<float> o_rest;

  std::size_t size() const { return time.size(); }
  int frame_size() const { return height * width; }
  std::span<const float> frame(std::size_t i) const;
  Observation observation(std::size_t i) const;
  Observation rest_observation() const;
  /// Model input for the transition i -> i + 1 (the pressure measured at i + 1).
  const Pressure& transition_input(std::size_t i) const { return p_act.at(i + 1); }
  void push_back(double t, const Pressure& cmd, const Pressure& act, const Observation& obs);

  bool operator==(const Dataset&) const = default;
};

inline constexpr double kRestLeadSeconds = 2.0;

/// Commanded pressures for the excitation phase, one per control step.
std::vector<Pressure> command_profile(ExcitationProfile kind, std::size_t frames, std::mt19937_64& rng);

Dataset generate_dataset(ExcitationProfile kind, double duration_s, std::uint64_t seed, const PlantParams& params);

/// Last frame of every constant-command hold lasting at least `min_hold_s`
/// (the leading rest segment excluded).
std::vector<std::size_t> static_frames(const Dataset& data, double min_hold_s = 2.0);

}  // namespace vonctl
