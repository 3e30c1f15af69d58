#pragma once

#include <cmath>
#include <functional>
#include <random>

#include "vonctl/dynamics.hpp"

namespace vonctl::testing {

inline double relative_error(const Vec& a, const Vec& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-300});
  return (a - b).norm() / scale;
}

/// Central differences of a scalar function of a flat parameter vector.
inline Vec central_difference(const std::function<double(const Vec&)>& f, const Vec& x, double h = 1e-5) {
  Vec g(x.size());
  Vec probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double fp = f(probe);
    probe[i] = x[i] - h;
    const double fm = f(probe);
    probe[i] = x[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline Mat random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Mat m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  return m;
}

inline Vec random_vector(Eigen::Index n, std::mt19937_64& rng, double scale = 1.0) {
  return random_matrix(n, 1, rng, scale).col(0);
}

/// Symmetric positive definite with eigenvalues in [lo, hi].
inline Mat random_spd(Eigen::Index n, std::mt19937_64& rng, double lo, double hi) {
  Eigen::HouseholderQR<Mat> qr(random_matrix(n, n, rng));
  const Mat q = qr.householderQ();
  std::uniform_real_distribution<double> eig(lo, hi);
  Vec lambda(n);
  for (Eigen::Index i = 0; i < n; ++i) lambda[i] = eig(rng);
  return q * lambda.asDiagonal() * q.transpose();
}

inline Pressure random_pressure(std::mt19937_64& rng, double lo = 0.0, double hi = 86.0) {
  std::uniform_real_distribution<double> p(lo, hi);
  return Pressure(p(rng), p(rng), p(rng), p(rng));
}

inline ControlSequence random_controls(std::size_t horizon, std::mt19937_64& rng) {
  ControlSequence u;
  for (std::size_t i = 0; i < horizon; ++i) u.push_back(random_pressure(rng));
  return u;
}

inline LatentState random_state(int n, std::mt19937_64& rng, double scale = 0.5) {
  return {random_vector(n, rng, scale), random_vector(n, rng, scale)};
}

inline ExcitationNet random_excitation(int n, std::mt19937_64& rng, bool linear) {
  if (linear) return ExcitationNet::make_linear(random_matrix(n, kInputChannels, rng, 0.5));
  return ExcitationNet::make_mlp(n, rng, 16, 2, 1.0);
}

inline KoopmanModel random_koopman(int n, std::mt19937_64& rng, bool linear_excitation = false) {
  KoopmanModel m;
  m.A = Mat::Identity(2 * n, 2 * n) + random_matrix(2 * n, 2 * n, rng, 0.08);
  m.bnet = random_excitation(2 * n, rng, linear_excitation);
  m.z0 = random_vector(n, rng, 0.3);
  return m;
}

inline MlpDynModel random_mlp_model(int n, std::mt19937_64& rng, bool linear_excitation = false) {
  MlpDynModel m;
  m.fmlp = Mlp({2 * n, 16, 16, n}, rng, 1.0);
  m.bnet = random_excitation(n, rng, linear_excitation);
  m.z0 = random_vector(n, rng, 0.3);
  return m;
}

inline OscillatorModel random_oscillator(int n, std::mt19937_64& rng, DampingMode damping = DampingMode::full,
                                         IntegrationMode integration = IntegrationMode::implicit_damping,
                                         bool linear_excitation = false) {
  OscillatorModel m;
  std::uniform_real_distribution<double> mraw(-0.5, 1.0);
  m.mass_raw = Vec(n);
  for (int i = 0; i < n; ++i) m.mass_raw[i] = mraw(rng);
  m.K = random_spd(n, rng, 1.0, 10.0) + random_matrix(n, n, rng, 0.1);
  m.D = random_spd(n, rng, 0.5, 2.0) + random_matrix(n, n, rng, 0.1);
  m.z0 = random_vector(n, rng, 0.3);
  m.alpha_raw = 0.3;
  m.beta_raw = -1.0;
  m.bnet = random_excitation(n, rng, linear_excitation);
  m.damping = damping;
  m.integration = integration;
  return m;
}

}  // namespace vonctl::testing
