#pragma once

#include <cstring>

#include "test_support.hpp"
#include "vonctl/io.hpp"

namespace vonctl::testing {

/// Untrained oscillator checkpoint with a linear excitation that vanishes at
/// u_rest, so (z0, 0) is a fixed point under the rest pressure.
inline Checkpoint session_checkpoint(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TrainConfig c = default_config(ModelFamily::oscillator, DecoderKind::keypoint_broadcast);
  c.latent_pairs = 2;
  c.encoder_hidden = {16};
  Checkpoint ck;
  ck.config = c;
  ck.model = init_latent_model(c, 32, 32, rng);
  OscillatorModel o = random_oscillator(4, rng);
  Mat w = random_matrix(4, 4, rng, 2.0);
  w = w * (Mat::Identity(4, 4) - Mat::Constant(4, 4, 0.25));
  o.bnet = ExcitationNet::make_linear(w);
  ck.model.dynamics = o;
  ck.height = ck.width = 32;
  ck.u_rest = rest_pressure();
  ck.o_rest = render(PlantState::rest(), PlantParams{});
  return ck;
}

inline Vec params_of(LatentModel m) {
  ParamList p;
  m.append_params(p);
  return gather(p);
}

inline bool bit_equal(const Vec& a, const Vec& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

/// Small checkpoint with every parameter perturbed away from short decimals.
inline Checkpoint random_checkpoint(ModelFamily family, DecoderKind decoder, ExcitationKind excitation, DampingMode damping,
                             std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  TrainConfig c = default_config(family, decoder);
  c.excitation = excitation;
  c.damping = damping;
  c.encoder_hidden = {7};
  c.decoder_hidden = {5, 6};
  c.keypoint_components = 2;
  c.fmlp_hidden = 4;
  c.seed = seed;
  Checkpoint ck;
  ck.config = c;
  ck.height = 6;
  ck.width = 5;
  ck.model = init_latent_model(c, 6, 5, rng);
  // Perturb every parameter with values that have no short decimal form.
  ParamList p;
  ck.model.append_params(p);
  Vec theta = gather(p);
  theta += random_matrix(theta.size(), 1, rng, 1.0 / 3.0).col(0);
  scatter(p, theta);
  ck.latent_scale = 0.1 + std::abs(random_matrix(1, 1, rng)(0, 0));
  ck.reconstruction_floor = 1.0 / 7.0;
  ck.o_rest = random_matrix(30, 1, rng).col(0).cwiseAbs();
  ck.u_rest = Pressure(43.0, 1.0 / 3.0, 85.999, 0.1);
  ck.history.push_back({0, 2, 1e-3 / 3.0, {0.1, 0.2, 0.3, 0.4, 0.5, std::exp(1.0)}});
  ck.declared_deviations = {"a", "b"};
  return ck;
}

}  // namespace vonctl::testing
