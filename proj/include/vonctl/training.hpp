#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "vonctl/autoencoder.hpp"
#include "vonctl/dynamics.hpp"
#include "vonctl/plant.hpp"

namespace vonctl {

enum class ModelFamily { koopman, mlp, oscillator };

std::string to_string(ModelFamily f);
ModelFamily model_family_from_string(const std::string& s);
std::string to_string(ExcitationKind k);
ExcitationKind excitation_kind_from_string(const std::string& s);
std::string to_string(DampingMode d);
DampingMode damping_mode_from_string(const std::string& s);
std::string to_string(IntegrationMode m);
IntegrationMode integration_mode_from_string(const std::string& s);

struct LossWeights {
  double static_rec = 1.0;
  double dyn = 1.0;
  double latent = 1.0;
  double rest = 0.5;
  bool operator==(const LossWeights&) const = default;
};

struct HorizonStage {
  int epoch = 0;  // first epoch using this horizon
  int horizon = 1;
  bool operator==(const HorizonStage&) const = default;
};

/// H = 2, 5, 10, 25 starting at 0, 20, 40, 60 and 80 % of the epochs (the
/// first two stages share H = 2).
std::vector<HorizonStage> default_horizon_schedule(int epochs);
int horizon_at(const std::vector<HorizonStage>& schedule, int epoch);

struct TrainConfig {
  std::string name = "von";
  ModelFamily family = ModelFamily::oscillator;
  DecoderKind decoder = DecoderKind::keypoint_broadcast;
  ExcitationKind excitation = ExcitationKind::mlp;
  LossWeights loss_weights;
  double beta = 1e-4;
  bool kl_mean_correction = true;
  std::vector<HorizonStage> horizon_schedule = default_horizon_schedule(40);
  DampingMode damping = DampingMode::full;
  IntegrationMode integration = IntegrationMode::implicit_damping;
  int latent_pairs = 3;
  std::vector<int> encoder_hidden{128, 128};
  std::vector<int> decoder_hidden{128, 128};
  int keypoint_components = 4;
  int fmlp_hidden = 64;
  double lr = 1e-3;
  int epochs = 40;
  int steps_per_epoch = 100;
  int batch_size = 32;
  std::uint64_t seed = 1;

  int latent_dim() const { return 2 * latent_pairs; }
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Defaults for one of the six main configurations. The mean-corrected KL is
/// used for the oscillator + keypoint combination only.
TrainConfig default_config(ModelFamily family, DecoderKind decoder);

/// Names of the top-level fields in which two configs differ (`name` ignored).
std::vector<std::string> config_diff(const TrainConfig& a, const TrainConfig& b);

/// The seven single-change variants of `base`, numbered 1..7 in order.
std::vector<TrainConfig> ablation_configs(const TrainConfig& base);

/// Encoder, decoder and latent dynamics trained jointly.
struct LatentModel {
  Encoder encoder;
  Decoder decoder;
  DynModel dynamics;

  static LatentModel zeros_like(const LatentModel& other);
  void append_params(ParamList& out);
  int latent_dim() const { return encoder.latent_dim; }
};

LatentModel init_latent_model(const TrainConfig& config, int height, int width, std::mt19937_64& rng);
DynModel init_dynamics(const TrainConfig& config, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Losses. Windows are identified by start frame s and use frames s-1 .. s+H+1.

struct Window {
  std::size_t start = 0;
};

void check_window(const Dataset& data, std::size_t start, int horizon);

/// Mean over windows and h = 1..H of the image MSE between the decoded h-step
/// prediction and frame s + h.
double loss_dyn_multistep(const Dataset& data, std::span<const std::size_t> starts, const LatentModel& model,
                          int horizon);

/// Mean over windows and h of MSE(z_hat, z) + MSE(dt zdot_hat, dt zdot), with
/// targets from the encoder mean and latent_velocity.
double loss_latent_multistep(const Dataset& data, std::span<const std::size_t> starts, const LatentModel& model,
                             int horizon);

double loss_rest(const Encoder& enc, const DynModel& dyn, const Observation& o_rest, const Pressure& u_rest);

/// -(1/2N) sum_i sum_j (1 + logvar - (mu - z0)^2 - exp(logvar)), one sample per column.
double loss_kl(const Mat& mu, const Mat& logvar, const Vec& z0);

struct LossBreakdown {
  double static_rec = 0.0;
  double dyn = 0.0;
  double latent = 0.0;
  double rest = 0.0;
  double kl = 0.0;
  double total = 0.0;
};

struct Batch {
  std::vector<std::size_t> starts;
  int horizon = 1;
  Mat noise;  // latent_dim x (starts.size() * (horizon + 1)), reparameterisation noise
};

Batch sample_batch(const Dataset& data, int batch_size, int horizon, int latent_dim, std::mt19937_64& rng);

/// Weighted training objective on one batch. When `grad` is non-null the exact
/// gradient is accumulated into it.
LossBreakdown evaluate_batch(const LatentModel& model, const TrainConfig& config, const Dataset& data,
                             const Batch& batch, LatentModel* grad);

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  int epoch = 0;
  int horizon = 1;
  double lr = 0.0;
  LossBreakdown loss;  // mean over the epoch's steps
  bool operator==(const EpochRecord& o) const;
};

struct Checkpoint {
  TrainConfig config;
  LatentModel model;
  double latent_scale = 1.0;          // mean per-dimension std of validation latents
  double reconstruction_floor = 0.0;  // mean autoencoding MSE on validation frames
  Observation o_rest;
  Pressure u_rest = rest_pressure();
  int height = 32;
  int width = 32;
  std::vector<EpochRecord> history;
  std::vector<std::string> declared_deviations;

  const Vec& z0() const { return rest_latent(model.dynamics); }
};

using ProgressCallback = std::function<void(const EpochRecord&)>;

Checkpoint train(const TrainConfig& config, const Dataset& train_set, const Dataset& val_set,
                 const ProgressCallback& progress = {});

/// Mean-mode encodings of every frame, one column per frame.
Mat encode_dataset(const Encoder& enc, const Dataset& data);
double latent_scale(const Encoder& enc, const Dataset& data);
double reconstruction_floor(const LatentModel& model, const Dataset& data);


/// Evenly spaced valid window starts (deterministic).
std::vector<std::size_t> spaced_windows(const Dataset& data, int count, int horizon);

// ---------------------------------------------------------------------------
// Linear-latent synthetic plant: a linear oscillator in latent space rendered
// through a fixed keypoint decoder. Used as an identifiable ground truth.

struct LinearLatentPlant {
  OscillatorModel dynamics;  // linear excitation, z0 = 0
  Decoder renderer;
};

LinearLatentPlant make_linear_latent_plant(int latent_pairs, std::uint64_t seed);
Dataset generate_linear_latent_dataset(const LinearLatentPlant& plant, double duration_s, std::uint64_t seed);

}  // namespace vonctl
