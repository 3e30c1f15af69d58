#include "vonctl/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "vonctl/error.hpp"

namespace vonctl {

// ---------------------------------------------------------------------------
// Enum names

std::string to_string(ModelFamily f) {
  switch (f) {
    case ModelFamily::koopman: return "koopman";
    case ModelFamily::mlp: return "mlp";
    case ModelFamily::oscillator: return "oscillator";
  }
  return "?";
}

ModelFamily model_family_from_string(const std::string& s) {
  if (s == "koopman") return ModelFamily::koopman;
  if (s == "mlp") return ModelFamily::mlp;
  if (s == "oscillator") return ModelFamily::oscillator;
  throw ContractViolation("unknown model family '" + s + "'");
}

std::string to_string(ExcitationKind k) { return k == ExcitationKind::mlp ? "mlp" : "linear"; }

ExcitationKind excitation_kind_from_string(const std::string& s) {
  if (s == "mlp") return ExcitationKind::mlp;
  if (s == "linear") return ExcitationKind::linear;
  throw ContractViolation("unknown excitation kind '" + s + "'");
}

std::string to_string(DampingMode d) { return d == DampingMode::full ? "full" : "rayleigh"; }

DampingMode damping_mode_from_string(const std::string& s) {
  if (s == "full") return DampingMode::full;
  if (s == "rayleigh") return DampingMode::rayleigh;
  throw ContractViolation("unknown damping mode '" + s + "'");
}

std::string to_string(IntegrationMode m) {
  return m == IntegrationMode::implicit_damping ? "implicit_damping" : "explicit_damping";
}

IntegrationMode integration_mode_from_string(const std::string& s) {
  if (s == "implicit_damping") return IntegrationMode::implicit_damping;
  if (s == "explicit_damping") return IntegrationMode::explicit_damping;
  throw ContractViolation("unknown integration mode '" + s + "'");
}

// ---------------------------------------------------------------------------
// Configuration

std::vector<HorizonStage> default_horizon_schedule(int epochs) {
  std::vector<HorizonStage> out{{0, 2}};
  const int horizons[] = {5, 10, 25};
  const double fractions[] = {0.4, 0.6, 0.8};
  for (int i = 0; i < 3; ++i) {
    const int e = static_cast<int>(std::lround(fractions[i] * epochs));
    if (e > out.back().epoch)
      out.push_back({e, horizons[i]});
    else
      out.back().horizon = horizons[i];
  }
  return out;
}

int horizon_at(const std::vector<HorizonStage>& schedule, int epoch) {
  if (schedule.empty()) throw ContractViolation("empty horizon schedule");
  int h = schedule.front().horizon;
  for (const auto& s : schedule)
    if (s.epoch <= epoch) h = s.horizon;
  return h;
}

void TrainConfig::validate() const {
  if (horizon_schedule.empty()) throw ContractViolation("horizon schedule is empty");
  if (horizon_schedule.front().epoch != 0) throw ContractViolation("horizon schedule must start at epoch 0");
  for (std::size_t i = 0; i < horizon_schedule.size(); ++i) {
    if (horizon_schedule[i].horizon < 1) throw ContractViolation("horizon must be at least 1");
    if (i > 0 && (horizon_schedule[i].epoch <= horizon_schedule[i - 1].epoch ||
                  horizon_schedule[i].horizon < horizon_schedule[i - 1].horizon))
      throw ContractViolation("horizon schedule must be increasing");
  }
  if (latent_pairs < 1) throw ContractViolation("latent_pairs must be positive");
  if (epochs < 0 || steps_per_epoch < 1 || batch_size < 1) throw ContractViolation("invalid training length");
  if (!(lr > 0.0) || beta < 0.0) throw ContractViolation("invalid learning rate or beta");
  const LossWeights& w = loss_weights;
  if (w.static_rec < 0 || w.dyn < 0 || w.latent < 0 || w.rest < 0) throw ContractViolation("negative loss weight");
}

TrainConfig default_config(ModelFamily family, DecoderKind decoder) {
  TrainConfig c;
  c.family = family;
  c.decoder = decoder;
  c.kl_mean_correction = family == ModelFamily::oscillator && decoder == DecoderKind::keypoint_broadcast;
  c.name = to_string(family) + (decoder == DecoderKind::keypoint_broadcast ? "_keypoint" : "_dense");
  if (c.kl_mean_correction) c.name = "von";
  return c;
}

std::vector<std::string> config_diff(const TrainConfig& a, const TrainConfig& b) {
  std::vector<std::string> out;
  auto cmp = [&](const char* name, bool same) {
    if (!same) out.emplace_back(name);
  };
  cmp("family", a.family == b.family);
  cmp("decoder", a.decoder == b.decoder);
  cmp("excitation", a.excitation == b.excitation);
  cmp("loss_weights", a.loss_weights == b.loss_weights);
  cmp("beta", a.beta == b.beta);
  cmp("kl_mean_correction", a.kl_mean_correction == b.kl_mean_correction);
  cmp("horizon_schedule", a.horizon_schedule == b.horizon_schedule);
  cmp("damping", a.damping == b.damping);
  cmp("integration", a.integration == b.integration);
  cmp("latent_pairs", a.latent_pairs == b.latent_pairs);
  cmp("encoder_hidden", a.encoder_hidden == b.encoder_hidden);
  cmp("decoder_hidden", a.decoder_hidden == b.decoder_hidden);
  cmp("keypoint_components", a.keypoint_components == b.keypoint_components);
  cmp("fmlp_hidden", a.fmlp_hidden == b.fmlp_hidden);
  cmp("lr", a.lr == b.lr);
  cmp("epochs", a.epochs == b.epochs);
  cmp("steps_per_epoch", a.steps_per_epoch == b.steps_per_epoch);
  cmp("batch_size", a.batch_size == b.batch_size);
  cmp("seed", a.seed == b.seed);
  return out;
}

std::vector<TrainConfig> ablation_configs(const TrainConfig& base) {
  std::vector<TrainConfig> out(7, base);
  out[0].excitation = ExcitationKind::linear;
  out[1].loss_weights = LossWeights{1.0, 5.0, 1.0, 1.0};
  out[2].beta = 0.01;
  out[3].loss_weights.rest = 0.0;
  out[4].horizon_schedule = {{0, 1}};
  out[5].damping = DampingMode::rayleigh;
  out[6].integration = IntegrationMode::explicit_damping;
  const char* names[] = {"linear_excitation", "dyn_weighted_loss", "beta_0.01",    "no_rest_loss",
                         "no_multistep",      "rayleigh_damping",  "explicit_damping"};
  for (int i = 0; i < 7; ++i) out[i].name = base.name + "_ablation" + std::to_string(i + 1) + "_" + names[i];
  return out;
}

// ---------------------------------------------------------------------------
// Model construction

LatentModel LatentModel::zeros_like(const LatentModel& other) {
  return {Encoder::zeros_like(other.encoder), Decoder::zeros_like(other.decoder), vonctl::zeros_like(other.dynamics)};
}

void LatentModel::append_params(ParamList& out) {
  encoder.append_params("encoder", out);
  decoder.append_params("decoder", out);
  vonctl::append_params(dynamics, "dynamics", out);
}

namespace {

// Initial oscillator: light mass so that unit-scale forces move the latents,
// natural frequency near 7 rad/s and moderate damping.
constexpr double kInitMass = 0.02;
constexpr double kInitStiffness = 1.0;
constexpr double kInitDamping = 0.1;

OscillatorModel initial_oscillator(int n, const ExcitationNet& bnet) {
  OscillatorModel o;
  o.mass_raw = Vec::Constant(n, inverse_softplus(kInitMass));
  o.K = kInitStiffness * Mat::Identity(n, n);
  o.D = kInitDamping * Mat::Identity(n, n);
  o.z0 = Vec::Zero(n);
  o.bnet = bnet;
  return o;
}

ExcitationNet make_excitation(ExcitationKind kind, int out_dim, double scale, std::mt19937_64& rng) {
  if (kind == ExcitationKind::mlp) return ExcitationNet::make_mlp(out_dim, rng, 32, 2, scale);
  std::normal_distribution<double> normal(0.0, scale);
  Mat b(out_dim, kInputChannels);
  for (Eigen::Index j = 0; j < b.cols(); ++j)
    for (Eigen::Index i = 0; i < b.rows(); ++i) b(i, j) = normal(rng);
  return ExcitationNet::make_linear(b);
}

}  // namespace

DynModel init_dynamics(const TrainConfig& config, std::mt19937_64& rng) {
  const int n = config.latent_dim();
  switch (config.family) {
    case ModelFamily::koopman: {
      KoopmanModel k;
      k.A = linearized_update_matrix(initial_oscillator(n, ExcitationNet::make_linear(Mat::Zero(n, 4))));
      k.bnet = make_excitation(config.excitation, 2 * n, 0.02, rng);
      k.z0 = Vec::Zero(n);
      return k;
    }
    case ModelFamily::mlp: {
      MlpDynModel m;
      m.fmlp = Mlp({2 * n, config.fmlp_hidden, config.fmlp_hidden, n}, rng, 0.1);
      m.bnet = make_excitation(config.excitation, n, 0.1, rng);
      m.z0 = Vec::Zero(n);
      return m;
    }
    case ModelFamily::oscillator: {
      OscillatorModel o = initial_oscillator(n, make_excitation(config.excitation, n, 0.5, rng));
      o.damping = config.damping;
      o.integration = config.integration;
      if (o.damping == DampingMode::rayleigh) {
        // D = a M + b K with the same initial diagonal damping.
        o.alpha_raw = inverse_softplus(0.5 * kInitDamping / kInitMass);
        o.beta_raw = inverse_softplus(0.5 * kInitDamping / kInitStiffness);
      }
      return o;
    }
  }
  throw ContractViolation("unknown model family");
}

LatentModel init_latent_model(const TrainConfig& config, int height, int width, std::mt19937_64& rng) {
  config.validate();
  const int n = config.latent_dim();
  LatentModel m;
  m.encoder = Encoder::make(height * width, n, config.encoder_hidden, rng);
  m.decoder = config.decoder == DecoderKind::dense
                  ? Decoder::make_dense(n, height * width, config.decoder_hidden, rng)
                  : Decoder::make_keypoint(n, height, width, config.keypoint_components, rng);
  m.dynamics = init_dynamics(config, rng);
  return m;
}

// ---------------------------------------------------------------------------
// Losses

void check_window(const Dataset& data, std::size_t start, int horizon) {
  if (horizon < 1) throw ContractViolation("horizon must be at least 1");
  if (start < 1 || start + static_cast<std::size_t>(horizon) + 1 >= data.size())
    throw ContractViolation("window at frame " + std::to_string(start) + " with horizon " + std::to_string(horizon) +
                            " exceeds the sequence");
}

namespace {

double mse(const Vec& a, const Vec& b) { return (a - b).squaredNorm() / static_cast<double>(a.size()); }

ControlSequence window_inputs(const Dataset& data, std::size_t start, int horizon) {
  ControlSequence u;
  for (int h = 0; h < horizon; ++h) u.push_back(data.transition_input(start + h));
  return u;
}

LatentState window_initial_state(const Dataset& data, std::size_t s, const Encoder& enc, double dt) {
  return {enc.mean(data.observation(s)),
          latent_velocity(data.observation(s - 1), data.observation(s), data.observation(s + 1), enc, dt)};
}

}  // namespace

double loss_dyn_multistep(const Dataset& data, std::span<const std::size_t> starts, const LatentModel& model,
                          int horizon) {
  if (starts.empty()) return 0.0;
  const double dt = model_dt(model.dynamics);
  double total = 0.0;
  for (std::size_t s : starts) {
    check_window(data, s, horizon);
    const ControlSequence u = window_inputs(data, s, horizon);
    const Rollout r = rollout(model.dynamics, window_initial_state(data, s, model.encoder, dt), u);
    for (int h = 1; h <= horizon; ++h)
      total += mse(model.decoder.decode(r.states[h - 1].z), data.observation(s + h));
  }
  return total / static_cast<double>(starts.size() * horizon);
}

double loss_latent_multistep(const Dataset& data, std::span<const std::size_t> starts, const LatentModel& model,
                             int horizon) {
  if (starts.empty()) return 0.0;
  const double dt = model_dt(model.dynamics);
  double total = 0.0;
  for (std::size_t s : starts) {
    check_window(data, s, horizon);
    const ControlSequence u = window_inputs(data, s, horizon);
    const Rollout r = rollout(model.dynamics, window_initial_state(data, s, model.encoder, dt), u);
    for (int h = 1; h <= horizon; ++h) {
      const LatentState target = window_initial_state(data, s + h, model.encoder, dt);
      total += mse(r.states[h - 1].z, target.z) + mse(dt * r.states[h - 1].zdot, dt * target.zdot);
    }
  }
  return total / static_cast<double>(starts.size() * horizon);
}

double loss_rest(const Encoder& enc, const DynModel& dyn, const Observation& o_rest, const Pressure& u_rest) {
  const Vec& z0 = rest_latent(dyn);
  const Vec zr = enc.mean(o_rest);
  const LatentState next = step(dyn, LatentState::at_rest(zr), u_rest);
  const double dt = model_dt(dyn);
  return 0.5 * (mse(zr, z0) + (mse(next.z, z0) + (dt * next.zdot).squaredNorm() / next.zdot.size()));
}

double loss_kl(const Mat& mu, const Mat& logvar, const Vec& z0) {
  if (mu.rows() != z0.size() || logvar.rows() != mu.rows() || logvar.cols() != mu.cols())
    throw ContractViolation("loss_kl: shape mismatch");
  if (mu.cols() == 0) return 0.0;
  const Mat d = mu.colwise() - z0;
  const double s = (1.0 + logvar.array() - d.array().square() - logvar.array().exp()).sum();
  return -s / (2.0 * static_cast<double>(mu.cols()));
}

Batch sample_batch(const Dataset& data, int batch_size, int horizon, int latent_dim, std::mt19937_64& rng) {
  if (data.size() < static_cast<std::size_t>(horizon) + 3)
    throw ContractViolation("horizon " + std::to_string(horizon) + " exceeds the sequence length");
  Batch b;
  b.horizon = horizon;
  std::uniform_int_distribution<std::size_t> pick(1, data.size() - horizon - 2);
  for (int n = 0; n < batch_size; ++n) b.starts.push_back(pick(rng));
  std::normal_distribution<double> normal(0.0, 1.0);
  b.noise.resize(latent_dim, batch_size * (horizon + 1));
  for (Eigen::Index j = 0; j < b.noise.cols(); ++j)
    for (Eigen::Index i = 0; i < b.noise.rows(); ++i) b.noise(i, j) = normal(rng);
  return b;
}

namespace {

void add_dynamics(DynModel& acc, DynModel& g) {
  ParamList a, b;
  append_params(acc, "", a);
  append_params(g, "", b);
  scatter(a, gather(a) + gather(b));
}

}  // namespace

LossBreakdown evaluate_batch(const LatentModel& model, const TrainConfig& config, const Dataset& data,
                             const Batch& batch, LatentModel* grad) {
  const int H = batch.horizon;
  const int N = static_cast<int>(batch.starts.size());
  const int L = model.latent_dim();
  const int P = data.frame_size();
  const int cols = N * (H + 1);
  const double dt = model_dt(model.dynamics);
  if (batch.noise.rows() != L || batch.noise.cols() != cols) throw ContractViolation("batch noise has wrong shape");
  for (std::size_t s : batch.starts) check_window(data, s, H);

  auto frame = [&](std::size_t i) { return Eigen::Map<const Eigen::VectorXf>(data.frame(i).data(), P); };

  // Frames s..s+H and their central differences.
  Mat X(P, cols), V(P, cols);
  for (int n = 0; n < N; ++n)
    for (int j = 0; j <= H; ++j) {
      const std::size_t i = batch.starts[n] + j;
      const int c = n * (H + 1) + j;
      X.col(c) = frame(i).cast<double>();
      V.col(c) = (frame(i + 1) - frame(i - 1)).cast<double>() / (2.0 * dt);
    }

  Mlp::TangentCache tcache;
  Mat Y, T;
  Y = model.encoder.net.forward_tangent(X, V, tcache, T);
  const Mat mu = Y.topRows(L);
  const Mat logvar = Y.bottomRows(L);
  const Mat zdot = T.topRows(L);

  const LossWeights& w = config.loss_weights;
  LossBreakdown out;
  Mat g_mu = Mat::Zero(L, cols), g_lv = Mat::Zero(L, cols), g_zdot = Mat::Zero(L, cols);
  Vec g_z0 = Vec::Zero(L);

  // Static reconstruction through the reparameterised sample.
  const Mat sigma = (0.5 * logvar.array()).exp().matrix();
  const Mat zs = mu + sigma.cwiseProduct(batch.noise);
  Decoder::Cache scache;
  const Mat R = model.decoder.forward(zs, scache);
  out.static_rec = (R - X).squaredNorm() / (static_cast<double>(P) * cols);

  // KL.
  const Vec& z_rest = rest_latent(model.dynamics);
  const Vec z0kl = config.kl_mean_correction ? z_rest : Vec::Zero(L);
  out.kl = loss_kl(mu, logvar, z0kl);

  // Multi-step rollouts.
  std::vector<Rollout> rollouts;
  rollouts.reserve(N);
  Mat Zp(L, N * H);
  for (int n = 0; n < N; ++n) {
    const int c0 = n * (H + 1);
    const ControlSequence u = window_inputs(data, batch.starts[n], H);
    rollouts.push_back(rollout(model.dynamics, LatentState{mu.col(c0), zdot.col(c0)}, u));
    for (int h = 1; h <= H; ++h) Zp.col(n * H + h - 1) = rollouts.back().states[h - 1].z;
  }
  Decoder::Cache dcache;
  const Mat Dp = model.decoder.forward(Zp, dcache);
  Mat Xt(P, N * H);
  for (int n = 0; n < N; ++n) Xt.middleCols(n * H, H) = X.middleCols(n * (H + 1) + 1, H);
  out.dyn = (Dp - Xt).squaredNorm() / (static_cast<double>(P) * N * H);

  double latent = 0.0;
  for (int n = 0; n < N; ++n)
    for (int h = 1; h <= H; ++h) {
      const LatentState& p = rollouts[n].states[h - 1];
      const int c = n * (H + 1) + h;
      latent += (p.z - mu.col(c)).squaredNorm() / L + dt * dt * (p.zdot - zdot.col(c)).squaredNorm() / L;
    }
  out.latent = latent / (static_cast<double>(N) * H);

  // Rest-state loss.
  Mlp::Cache rcache;
  const Vec ry = model.encoder.net.forward(data.rest_observation(), rcache).col(0);
  const Vec zr = ry.head(L);
  const Rollout rest_step = rollout(model.dynamics, LatentState::at_rest(zr), std::span<const Pressure>(&data.u_rest, 1));
  const LatentState& rn = rest_step.states.front();
  out.rest = 0.5 * ((zr - z_rest).squaredNorm() / L + (rn.z - z_rest).squaredNorm() / L +
                    dt * dt * rn.zdot.squaredNorm() / L);

  out.total = w.static_rec * out.static_rec + w.dyn * out.dyn + w.latent * out.latent + w.rest * out.rest +
              config.beta * out.kl;
  if (grad == nullptr) return out;

  // ---- reverse pass ----
  {
    const Mat gR = (2.0 * w.static_rec / (static_cast<double>(P) * cols)) * (R - X);
    const Mat gzs = model.decoder.backward(scache, gR, grad->decoder);
    g_mu += gzs;
    g_lv += (0.5 * gzs.array() * batch.noise.array() * sigma.array()).matrix();
  }
  {
    const double k = config.beta / static_cast<double>(cols);
    const Mat d = mu.colwise() - z0kl;
    g_mu += k * d;
    g_lv += (-0.5 * k) * (1.0 - logvar.array().exp()).matrix();
    if (config.kl_mean_correction) g_z0 -= k * d.rowwise().sum();
  }
  const Mat gDp = (2.0 * w.dyn / (static_cast<double>(P) * N * H)) * (Dp - Xt);
  const Mat gZp = model.decoder.backward(dcache, gDp, grad->decoder);
  const double kl_scale = 2.0 * w.latent / (static_cast<double>(L) * N * H);
  for (int n = 0; n < N; ++n) {
    std::vector<Vec> dstates(H);
    for (int h = 1; h <= H; ++h) {
      const LatentState& p = rollouts[n].states[h - 1];
      const int c = n * (H + 1) + h;
      const Vec ez = kl_scale * (p.z - mu.col(c));
      const Vec ev = kl_scale * dt * dt * (p.zdot - zdot.col(c));
      g_mu.col(c) -= ez;
      g_zdot.col(c) -= ev;
      Vec d(2 * L);
      d << ez + gZp.col(n * H + h - 1), ev;
      dstates[h - 1] = d;
    }
    RolloutGradient rg = rollout_vjp(rollouts[n].tape, dstates);
    add_dynamics(grad->dynamics, rg.dparams);
    const int c0 = n * (H + 1);
    g_mu.col(c0) += rg.dxi0.head(L);
    g_zdot.col(c0) += rg.dxi0.tail(L);
  }
  {
    const double k = w.rest / L;
    Vec g_zr = k * (zr - z_rest);
    g_z0 -= k * (zr - z_rest);
    Vec d(2 * L);
    d << k * (rn.z - z_rest), k * dt * dt * rn.zdot;
    g_z0 -= k * (rn.z - z_rest);
    const Vec ds[] = {d};
    RolloutGradient rg = rollout_vjp(rest_step.tape, ds);
    add_dynamics(grad->dynamics, rg.dparams);
    g_zr += rg.dxi0.head(L);
    Vec gy = Vec::Zero(2 * L);
    gy.head(L) = g_zr;
    model.encoder.net.backward(rcache, gy, grad->encoder.net, false);
  }
  rest_latent(grad->dynamics) += g_z0;

  Mat gY(2 * L, cols), gT = Mat::Zero(2 * L, cols);
  gY << g_mu, g_lv;
  gT.topRows(L) = g_zdot;
  model.encoder.net.backward_tangent(tcache, gY, gT, grad->encoder.net);
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

bool EpochRecord::operator==(const EpochRecord& o) const {
  return epoch == o.epoch && horizon == o.horizon && lr == o.lr && loss.static_rec == o.loss.static_rec &&
         loss.dyn == o.loss.dyn && loss.latent == o.loss.latent && loss.rest == o.loss.rest && loss.kl == o.loss.kl &&
         loss.total == o.loss.total;
}

Mat encode_dataset(const Encoder& enc, const Dataset& data) {
  const int P = data.frame_size();
  Mat out(enc.latent_dim, static_cast<Eigen::Index>(data.size()));
  constexpr std::size_t chunk = 512;
  for (std::size_t first = 0; first < data.size(); first += chunk) {
    const std::size_t n = std::min(chunk, data.size() - first);
    Mat X(P, static_cast<Eigen::Index>(n));
    for (std::size_t j = 0; j < n; ++j)
      X.col(static_cast<Eigen::Index>(j)) =
          Eigen::Map<const Eigen::VectorXf>(data.frame(first + j).data(), P).cast<double>();
    out.middleCols(static_cast<Eigen::Index>(first), static_cast<Eigen::Index>(n)) = enc.forward(X).mu;
  }
  return out;
}

double latent_scale(const Encoder& enc, const Dataset& data) {
  const Mat z = encode_dataset(enc, data);
  if (z.cols() < 2) throw ContractViolation("latent_scale needs at least two frames");
  const Vec mean = z.rowwise().mean();
  const Vec var = (z.colwise() - mean).array().square().rowwise().mean();
  return var.array().sqrt().mean();
}

double reconstruction_floor(const LatentModel& model, const Dataset& data) {
  const int P = data.frame_size();
  const Mat z = encode_dataset(model.encoder, data);
  double total = 0.0;
  constexpr Eigen::Index chunk = 512;
  for (Eigen::Index first = 0; first < z.cols(); first += chunk) {
    const Eigen::Index n = std::min(chunk, z.cols() - first);
    const Mat R = model.decoder.forward(z.middleCols(first, n));
    for (Eigen::Index j = 0; j < n; ++j)
      total += (R.col(j) - Eigen::Map<const Eigen::VectorXf>(data.frame(first + j).data(), P).cast<double>())
                   .squaredNorm() /
               P;
  }
  return total / static_cast<double>(z.cols());
}

std::vector<std::size_t> spaced_windows(const Dataset& data, int count, int horizon) {
  if (data.size() < static_cast<std::size_t>(horizon) + 3 || count < 1)
    throw ContractViolation("spaced_windows: dataset too short");
  const std::size_t lead = static_cast<std::size_t>(std::llround(kRestLeadSeconds * data.rate));
  const std::size_t first = std::min(std::max<std::size_t>(lead, 1), data.size() - horizon - 2);
  const std::size_t last = data.size() - horizon - 2;
  std::vector<std::size_t> out;
  for (int i = 0; i < count; ++i)
    out.push_back(first + (count > 1 ? (last - first) * static_cast<std::size_t>(i) / (count - 1) : 0));
  return out;
}

namespace {

std::vector<std::string> deviations(const TrainConfig& c) {
  std::vector<std::string> out;
  if (c.decoder == DecoderKind::keypoint_broadcast)
    out.emplace_back("keypoint_broadcast decoder replaces the attention broadcast decoder");
  out.emplace_back("dense encoder instead of a convolutional beta-VAE");
  out.emplace_back("latent size, network sizes, learning rate, epochs and horizon schedule are workbench defaults");
  return out;
}

}  // namespace

Checkpoint train(const TrainConfig& config, const Dataset& train_set, const Dataset& val_set,
                 const ProgressCallback& progress) {
  config.validate();
  if (train_set.height != val_set.height || train_set.width != val_set.width)
    throw ContractViolation("train and validation frames differ in size");
  std::mt19937_64 rng(config.seed);
  Checkpoint ck;
  ck.config = config;
  ck.height = train_set.height;
  ck.width = train_set.width;
  ck.o_rest = train_set.rest_observation();
  ck.u_rest = train_set.u_rest;
  ck.declared_deviations = deviations(config);
  ck.model = init_latent_model(config, train_set.height, train_set.width, rng);

  ParamList params;
  ck.model.append_params(params);
  LatentModel grad = LatentModel::zeros_like(ck.model);
  ParamList gparams;
  grad.append_params(gparams);
  Vec theta = gather(params);
  const Vec zero = Vec::Zero(theta.size());
  Adam adam(theta.size());

  const long total_steps = static_cast<long>(config.epochs) * config.steps_per_epoch;
  long k = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const int H = horizon_at(config.horizon_schedule, epoch);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.horizon = H;
    rec.lr = cosine_decay(config.lr, k, total_steps);
    for (int s = 0; s < config.steps_per_epoch; ++s, ++k) {
      const Batch batch = sample_batch(train_set, config.batch_size, H, config.latent_dim(), rng);
      scatter(gparams, zero);
      LossBreakdown l;
      try {
        l = evaluate_batch(ck.model, config, train_set, batch, &grad);
      } catch (const DivergenceError&) {
        throw TrainingDivergence(epoch, s);
      }
      const Vec g = gather(gparams);
      if (!std::isfinite(l.total) || !g.allFinite()) throw TrainingDivergence(epoch, s);
      adam.step(theta, g, cosine_decay(config.lr, k, total_steps));
      scatter(params, theta);
      rec.loss.static_rec += l.static_rec;
      rec.loss.dyn += l.dyn;
      rec.loss.latent += l.latent;
      rec.loss.rest += l.rest;
      rec.loss.kl += l.kl;
      rec.loss.total += l.total;
    }
    const double inv = 1.0 / config.steps_per_epoch;
    for (double* v : {&rec.loss.static_rec, &rec.loss.dyn, &rec.loss.latent, &rec.loss.rest, &rec.loss.kl,
                      &rec.loss.total})
      *v *= inv;
    ck.history.push_back(rec);
    if (progress) progress(rec);
  }
  ck.latent_scale = latent_scale(ck.model.encoder, val_set);
  ck.reconstruction_floor = reconstruction_floor(ck.model, val_set);
  return ck;
}

// ---------------------------------------------------------------------------
// Linear-latent synthetic plant

LinearLatentPlant make_linear_latent_plant(int latent_pairs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int n = 2 * latent_pairs;
  LinearLatentPlant p;
  OscillatorModel& o = p.dynamics;
  std::uniform_real_distribution<double> omega(4.0, 9.0), zeta(0.2, 0.4), sign(-1.0, 1.0);
  o.mass_raw = Vec::Constant(n, inverse_softplus(1.0));
  o.K = Mat::Zero(n, n);
  o.D = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    const double w = omega(rng);
    o.K(i, i) = w * w;
    o.D(i, i) = 2.0 * zeta(rng) * w;
  }
  o.z0 = Vec::Zero(n);
  // Full-range inputs displace each latent by roughly +-1.5 around the rest pose.
  Mat B(n, kInputChannels);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < kInputChannels; ++j) B(i, j) = o.K(i, i) * 1.5 * sign(rng);
  o.bnet = ExcitationNet::make_linear(B);

  p.renderer = Decoder::make_keypoint(n, 32, 32, 3, rng);
  KeypointDecoder& k = p.renderer.keypoint;
  k.affine = 2.5 * Eigen::Matrix2d::Identity();
  k.offset = Eigen::Vector2d(15.5, 15.5);
  k.amplitude.setConstant(4.0);
  k.log_width.setConstant(std::log(1.5));
  k.background.setConstant(-5.0);
  // Keep the rest pose of each blob apart from the others.
  const Vec z_rest = (o.K.inverse() * B * 0.5);
  for (int b = 0; b < latent_pairs; ++b) {
    const double angle = 2.0 * std::numbers::pi * b / latent_pairs;
    const Eigen::Vector2d home(7.0 * std::cos(angle), 7.0 * std::sin(angle));
    const Eigen::Vector2d shift = home - k.affine * z_rest.segment<2>(2 * b);
    for (int r = 0; r < k.components(); ++r) {
      k.offset_x(r, b) = shift.x() + 0.8 * sign(rng);
      k.offset_y(r, b) = shift.y() + 0.8 * sign(rng);
    }
  }
  return p;
}

Dataset generate_linear_latent_dataset(const LinearLatentPlant& plant, double duration_s, std::uint64_t seed) {
  constexpr double rate = 1.0 / kControlDt;
  const std::size_t frames = static_cast<std::size_t>(std::llround(duration_s * rate));
  const std::size_t lead = static_cast<std::size_t>(std::llround(kRestLeadSeconds * rate));
  if (frames <= lead + 3) throw ContractViolation("linear latent dataset too short");
  std::mt19937_64 rng(seed);
  const std::vector<Pressure> commands = command_profile(ExcitationProfile::sinusoidal, frames - lead, rng);

  const KeypointDecoder& k = plant.renderer.keypoint;
  Dataset data;
  data.height = k.height;
  data.width = k.width;
  data.rate = rate;
  data.u_rest = rest_pressure();
  const OscillatorModel& o = plant.dynamics;
  const Vec z_rest = o.K.inverse() * o.bnet(data.u_rest);
  LatentState state = LatentState::at_rest(z_rest);
  const Observation o_rest = plant.renderer.decode(z_rest);
  for (Eigen::Index i = 0; i < o_rest.size(); ++i) data.o_rest.push_back(static_cast<float>(o_rest[i]));
  // No actuator lag: the pressure reaching frame i is the command issued at i - 1.
  Pressure previous = data.u_rest;
  for (std::size_t i = 0; i < frames; ++i) {
    const Pressure u = i < lead ? data.u_rest : commands[i - lead];
    data.push_back(static_cast<double>(i) / rate, u, previous, plant.renderer.decode(state.z));
    state = step_oscillator(state, u, o);
    previous = u;
  }
  return data;
}

}  // namespace vonctl
