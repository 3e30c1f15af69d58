#pragma once

#include <Eigen/Dense>

#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "vonctl/nn.hpp"

namespace vonctl {

inline constexpr int kInputChannels = 4;
inline constexpr double kControlDt = 0.02;  // 50 Hz
inline constexpr double kDatasetPressureMax = 86.0;
inline constexpr double kPressureCenter = 43.0;

using Pressure = Eigen::Vector4d;
using ControlSequence = std::vector<Pressure>;

/// Latent coordinates z and velocities zdot; xi = [z; zdot].
struct LatentState {
  Vec z;
  Vec zdot;

  Vec xi() const;
  static LatentState from_xi(const Vec& xi);
  static LatentState at_rest(const Vec& z0);
  Eigen::Index dim() const { return z.size(); }
  bool finite() const { return z.allFinite() && zdot.allFinite(); }
};

enum class ExcitationKind { mlp, linear };

/// Input map u (kPa, 4 channels) -> latent force (2m).
struct ExcitationNet {
  ExcitationKind kind = ExcitationKind::mlp;
  Mlp mlp;     // used when kind == mlp; input is u / 43 - 1
  Mat linear;  // used when kind == linear; force = linear * (u / 86)

  struct Cache {
    Mlp::Cache mlp;
  };

  static ExcitationNet make_mlp(int latent_dim, std::mt19937_64& rng, int hidden = 32, int hidden_layers = 2,
                                double output_gain = 0.5);
  static ExcitationNet make_linear(Mat matrix);
  static ExcitationNet zeros_like(const ExcitationNet& other);

  int output_dim() const;
  Vec operator()(const Pressure& u) const;
  Vec forward(const Pressure& u, Cache& cache) const;
  /// Accumulates parameter cotangents into `grad`; returns the cotangent on u.
  Pressure backward(const Pressure& u, const Cache& cache, const Vec& g, ExcitationNet& grad) const;
  void append_params(const std::string& prefix, ParamList& out);
};

/// xi' = A xi + B(u)
struct KoopmanModel {
  Mat A;
  ExcitationNet bnet;
  Vec z0;  // learnable rest latent; not used by the update itself
  double dt = kControlDt;
};

/// zdot' = f(xi) + B(u);  z' = z + dt zdot'
struct MlpDynModel {
  Mlp fmlp;
  ExcitationNet bnet;
  Vec z0;  // learnable rest latent; not used by the update itself
  double dt = kControlDt;
};

enum class DampingMode { full, rayleigh };
enum class IntegrationMode { implicit_damping, explicit_damping };

/// M zdd + D zd + K (z - z0) = B(u), symplectic Euler with diagonal implicit damping.
struct OscillatorModel {
  Vec mass_raw;  // M = diag(softplus(mass_raw))
  Mat D;         // ignored when damping == rayleigh
  Mat K;
  Vec z0;
  double alpha_raw = 0.0;  // rayleigh: D = softplus(alpha_raw) M + softplus(beta_raw) K
  double beta_raw = 0.0;
  ExcitationNet bnet;
  double dt = kControlDt;
  DampingMode damping = DampingMode::full;
  IntegrationMode integration = IntegrationMode::implicit_damping;

  Vec mass() const;
  Mat damping_matrix() const;
  /// Diagonal of Gamma = diag(I + dt M^-1 D); all ones in explicit mode.
  Vec implicit_factor() const;
};

using DynModel = std::variant<KoopmanModel, MlpDynModel, OscillatorModel>;

int latent_dim(const DynModel& model);
double model_dt(const DynModel& model);
const Vec& rest_latent(const DynModel& model);
Vec& rest_latent(DynModel& model);
const ExcitationNet& excitation(const DynModel& model);
std::string family_name(const DynModel& model);
DynModel zeros_like(const DynModel& model);
void append_params(DynModel& model, const std::string& prefix, ParamList& out);

LatentState step_koopman(const LatentState& xi, const Pressure& u, const KoopmanModel& model);
LatentState step_mlp(const LatentState& xi, const Pressure& u, const MlpDynModel& model);
LatentState step_oscillator(const LatentState& xi, const Pressure& u, const OscillatorModel& model);
LatentState step(const DynModel& model, const LatentState& xi, const Pressure& u);

struct TapeEntry {
  Vec xi;  // state entering the step
  Pressure u;
  ExcitationNet::Cache bnet;
  Mlp::Cache fmlp;
};

/// Everything needed to replay a rollout backward.
struct RolloutTape {
  DynModel model;
  std::vector<TapeEntry> entries;
  Vec final_xi;

  std::size_t horizon() const { return entries.size(); }
};

struct Rollout {
  std::vector<LatentState> states;  // xi(1) ... xi(T)
  RolloutTape tape;
};

/// Throws DivergenceError naming the first non-finite state index (1-based).
Rollout rollout(const DynModel& model, const LatentState& xi0, std::span<const Pressure> useq);

/// Re-runs the forward pass recorded on the tape.
std::vector<LatentState> replay(const RolloutTape& tape);

struct RolloutGradient {
  std::vector<Pressure> du;  // dJ/du(i), i = 0 .. T-1
  DynModel dparams;          // same shape as the model
  Vec dxi0;                  // dJ/dxi(0)
};

/// Reverse-mode gradient of J given dJ/dxi(i) for i = 1 .. T (each of size 4m).
RolloutGradient rollout_vjp(const RolloutTape& tape, std::span<const Vec> dstates);

/// Exact one-step map of (z - z0, zdot) with zero excitation.
Mat linearized_update_matrix(const OscillatorModel& model);

/// 1/2 zd' M zd + 1/2 (z - z0)' K (z - z0)
double oscillator_energy(const OscillatorModel& model, const LatentState& xi);

struct OscillatorForces {
  Vec excitation;  // B(u)
  Vec stiffness;   // -K (z - z0)
};
OscillatorForces oscillator_forces(const OscillatorModel& model, const LatentState& xi, const Pressure& u);

}  // namespace vonctl
