#include "vonctl/dynamics.hpp"

#include <cmath>

#include "vonctl/error.hpp"

namespace vonctl {

Vec LatentState::xi() const {
  Vec out(z.size() + zdot.size());
  out << z, zdot;
  return out;
}

LatentState LatentState::from_xi(const Vec& xi) {
  if (xi.size() % 2 != 0) throw ContractViolation("latent state must have even dimension");
  const Eigen::Index n = xi.size() / 2;
  return {xi.head(n), xi.tail(n)};
}

LatentState LatentState::at_rest(const Vec& z0) { return {z0, Vec::Zero(z0.size())}; }

// ---------------------------------------------------------------------------
// Excitation

ExcitationNet ExcitationNet::make_mlp(int latent_dim, std::mt19937_64& rng, int hidden, int hidden_layers,
                                      double output_gain) {
  std::vector<int> sizes{kInputChannels};
  for (int i = 0; i < hidden_layers; ++i) sizes.push_back(hidden);
  sizes.push_back(latent_dim);
  ExcitationNet net;
  net.kind = ExcitationKind::mlp;
  net.mlp = Mlp(sizes, rng, output_gain);
  return net;
}

ExcitationNet ExcitationNet::make_linear(Mat matrix) {
  if (matrix.cols() != kInputChannels) throw ContractViolation("linear excitation must have 4 columns");
  ExcitationNet net;
  net.kind = ExcitationKind::linear;
  net.linear = std::move(matrix);
  return net;
}

ExcitationNet ExcitationNet::zeros_like(const ExcitationNet& other) {
  ExcitationNet z;
  z.kind = other.kind;
  if (other.kind == ExcitationKind::mlp)
    z.mlp = Mlp::zeros_like(other.mlp);
  else
    z.linear = Mat::Zero(other.linear.rows(), other.linear.cols());
  return z;
}

int ExcitationNet::output_dim() const {
  return kind == ExcitationKind::mlp ? mlp.output_dim() : static_cast<int>(linear.rows());
}

Vec ExcitationNet::operator()(const Pressure& u) const {
  if (kind == ExcitationKind::linear) return linear * (u / kDatasetPressureMax);
  const Vec x = u / kPressureCenter - Pressure::Ones();
  return mlp.forward(x);
}

Vec ExcitationNet::forward(const Pressure& u, Cache& cache) const {
  if (kind == ExcitationKind::linear) return linear * (u / kDatasetPressureMax);
  const Vec x = u / kPressureCenter - Pressure::Ones();
  return mlp.forward(x, cache.mlp);
}

Pressure ExcitationNet::backward(const Pressure& u, const Cache& cache, const Vec& g, ExcitationNet& grad) const {
  if (kind == ExcitationKind::linear) {
    grad.linear.noalias() += g * (u / kDatasetPressureMax).transpose();
    return linear.transpose() * g / kDatasetPressureMax;
  }
  const Mat gx = mlp.backward(cache.mlp, g, grad.mlp, true);
  return gx.col(0) / kPressureCenter;
}

void ExcitationNet::append_params(const std::string& prefix, ParamList& out) {
  if (kind == ExcitationKind::mlp)
    mlp.append_params(prefix, out);
  else
    out.push_back({prefix + ".B", linear.data(), linear.size()});
}

namespace {

void check_state(const LatentState& xi, int n) {
  if (xi.z.size() != n || xi.zdot.size() != n)
    throw ContractViolation("latent state dimension " + std::to_string(xi.z.size()) + "/" +
                            std::to_string(xi.zdot.size()) + " does not match model dimension " +
                            std::to_string(n));
}

}  // namespace

// ---------------------------------------------------------------------------
// Oscillator helpers

Vec OscillatorModel::mass() const { return mass_raw.unaryExpr([](double x) { return softplus(x); }); }

Mat OscillatorModel::damping_matrix() const {
  if (damping == DampingMode::full) return D;
  const double alpha = softplus(alpha_raw);
  const double beta = softplus(beta_raw);
  Mat out = beta * K;
  out.diagonal() += alpha * mass();
  return out;
}

Vec OscillatorModel::implicit_factor() const {
  const Eigen::Index n = K.rows();
  if (integration == IntegrationMode::explicit_damping) return Vec::Ones(n);
  return Vec::Ones(n) + dt * damping_matrix().diagonal().cwiseQuotient(mass());
}

// ---------------------------------------------------------------------------
// Variant plumbing

int latent_dim(const DynModel& model) {
  return std::visit([](const auto& m) { return static_cast<int>(m.z0.size()); }, model);
}

double model_dt(const DynModel& model) {
  return std::visit([](const auto& m) { return m.dt; }, model);
}

const Vec& rest_latent(const DynModel& model) {
  return std::visit([](const auto& m) -> const Vec& { return m.z0; }, model);
}

Vec& rest_latent(DynModel& model) {
  return std::visit([](auto& m) -> Vec& { return m.z0; }, model);
}

const ExcitationNet& excitation(const DynModel& model) {
  return std::visit([](const auto& m) -> const ExcitationNet& { return m.bnet; }, model);
}

std::string family_name(const DynModel& model) {
  switch (model.index()) {
    case 0:
      return "koopman";
    case 1:
      return "mlp";
    default:
      return "oscillator";
  }
}

DynModel zeros_like(const DynModel& model) {
  if (const auto* k = std::get_if<KoopmanModel>(&model)) {
    KoopmanModel z = *k;
    z.A.setZero();
    z.z0.setZero();
    z.bnet = ExcitationNet::zeros_like(k->bnet);
    return z;
  }
  if (const auto* m = std::get_if<MlpDynModel>(&model)) {
    MlpDynModel z = *m;
    z.fmlp = Mlp::zeros_like(m->fmlp);
    z.z0.setZero();
    z.bnet = ExcitationNet::zeros_like(m->bnet);
    return z;
  }
  const auto& o = std::get<OscillatorModel>(model);
  OscillatorModel z = o;
  z.mass_raw.setZero();
  z.D.setZero();
  z.K.setZero();
  z.z0.setZero();
  z.alpha_raw = 0.0;
  z.beta_raw = 0.0;
  z.bnet = ExcitationNet::zeros_like(o.bnet);
  return z;
}

void append_params(DynModel& model, const std::string& prefix, ParamList& out) {
  if (auto* k = std::get_if<KoopmanModel>(&model)) {
    out.push_back({prefix + ".A", k->A.data(), k->A.size()});
    out.push_back({prefix + ".z0", k->z0.data(), k->z0.size()});
    k->bnet.append_params(prefix + ".bnet", out);
  } else if (auto* m = std::get_if<MlpDynModel>(&model)) {
    m->fmlp.append_params(prefix + ".fmlp", out);
    out.push_back({prefix + ".z0", m->z0.data(), m->z0.size()});
    m->bnet.append_params(prefix + ".bnet", out);
  } else {
    auto& o = std::get<OscillatorModel>(model);
    out.push_back({prefix + ".mass_raw", o.mass_raw.data(), o.mass_raw.size()});
    if (o.damping == DampingMode::full) {
      out.push_back({prefix + ".D", o.D.data(), o.D.size()});
    } else {
      out.push_back({prefix + ".alpha_raw", &o.alpha_raw, 1});
      out.push_back({prefix + ".beta_raw", &o.beta_raw, 1});
    }
    out.push_back({prefix + ".K", o.K.data(), o.K.size()});
    out.push_back({prefix + ".z0", o.z0.data(), o.z0.size()});
    o.bnet.append_params(prefix + ".bnet", out);
  }
}

// ---------------------------------------------------------------------------
// Single steps

namespace {

LatentState koopman_forward(const LatentState& s, const Pressure& u, const KoopmanModel& model,
                            ExcitationNet::Cache* cache) {
  const int n = static_cast<int>(model.z0.size());
  check_state(s, n);
  if (model.A.rows() != 2 * n || model.A.cols() != 2 * n) throw ContractViolation("Koopman A must be 4m x 4m");
  const Vec b = cache ? model.bnet.forward(u, *cache) : model.bnet(u);
  return LatentState::from_xi(model.A * s.xi() + b);
}

LatentState mlp_forward(const LatentState& s, const Pressure& u, const MlpDynModel& model,
                        ExcitationNet::Cache* bcache, Mlp::Cache* fcache) {
  const int n = static_cast<int>(model.z0.size());
  check_state(s, n);
  const Vec xi = s.xi();
  const Vec f = fcache ? Vec(model.fmlp.forward(xi, *fcache)) : Vec(model.fmlp.forward(xi));
  const Vec b = bcache ? model.bnet.forward(u, *bcache) : model.bnet(u);
  LatentState out;
  out.zdot = f + b;
  out.z = s.z + model.dt * out.zdot;
  return out;
}

LatentState oscillator_forward(const LatentState& s, const Pressure& u, const OscillatorModel& model,
                               ExcitationNet::Cache* cache) {
  const int n = static_cast<int>(model.z0.size());
  check_state(s, n);
  const Vec mass = model.mass();
  const Vec b = cache ? model.bnet.forward(u, *cache) : model.bnet(u);
  const Vec force = b - model.K * (s.z - model.z0);
  LatentState out;
  if (model.integration == IntegrationMode::implicit_damping) {
    const Vec gamma = model.implicit_factor();
    for (int j = 0; j < n; ++j)
      if (gamma[j] == 0.0 || !std::isfinite(gamma[j])) throw SingularityError(j, gamma[j]);
    out.zdot = (s.zdot + model.dt * force.cwiseQuotient(mass)).cwiseQuotient(gamma);
  } else {
    const Vec total = force - model.damping_matrix() * s.zdot;
    out.zdot = s.zdot + model.dt * total.cwiseQuotient(mass);
  }
  out.z = s.z + model.dt * out.zdot;
  return out;
}

LatentState step_with_cache(const DynModel& model, const LatentState& s, const Pressure& u, TapeEntry& entry) {
  if (const auto* k = std::get_if<KoopmanModel>(&model)) return koopman_forward(s, u, *k, &entry.bnet);
  if (const auto* m = std::get_if<MlpDynModel>(&model)) return mlp_forward(s, u, *m, &entry.bnet, &entry.fmlp);
  return oscillator_forward(s, u, std::get<OscillatorModel>(model), &entry.bnet);
}

}  // namespace

LatentState step_koopman(const LatentState& xi, const Pressure& u, const KoopmanModel& model) {
  return koopman_forward(xi, u, model, nullptr);
}

LatentState step_mlp(const LatentState& xi, const Pressure& u, const MlpDynModel& model) {
  return mlp_forward(xi, u, model, nullptr, nullptr);
}

LatentState step_oscillator(const LatentState& xi, const Pressure& u, const OscillatorModel& model) {
  return oscillator_forward(xi, u, model, nullptr);
}

LatentState step(const DynModel& model, const LatentState& xi, const Pressure& u) {
  if (const auto* k = std::get_if<KoopmanModel>(&model)) return step_koopman(xi, u, *k);
  if (const auto* m = std::get_if<MlpDynModel>(&model)) return step_mlp(xi, u, *m);
  return step_oscillator(xi, u, std::get<OscillatorModel>(model));
}

// ---------------------------------------------------------------------------
// Rollout

Rollout rollout(const DynModel& model, const LatentState& xi0, std::span<const Pressure> useq) {
  if (useq.empty()) throw ContractViolation("rollout needs at least one control");
  Rollout out;
  out.tape.model = model;
  out.tape.entries.resize(useq.size());
  out.states.reserve(useq.size());
  LatentState current = xi0;
  for (std::size_t i = 0; i < useq.size(); ++i) {
    TapeEntry& entry = out.tape.entries[i];
    entry.xi = current.xi();
    entry.u = useq[i];
    current = step_with_cache(model, current, useq[i], entry);
    if (!current.finite()) throw DivergenceError(static_cast<int>(i + 1));
    out.states.push_back(current);
  }
  out.tape.final_xi = current.xi();
  return out;
}

std::vector<LatentState> replay(const RolloutTape& tape) {
  std::vector<LatentState> states;
  if (tape.entries.empty()) return states;
  LatentState current = LatentState::from_xi(tape.entries.front().xi);
  for (const auto& entry : tape.entries) {
    current = step(tape.model, current, entry.u);
    states.push_back(current);
  }
  return states;
}

// ---------------------------------------------------------------------------
// Reverse mode

namespace {

// Each backward_* takes the cotangent on xi(i+1) and returns it on xi(i),
// accumulating parameter cotangents and writing du.

Vec koopman_backward(const KoopmanModel& model, const TapeEntry& e, const Vec& g, KoopmanModel& grad,
                     Pressure& du) {
  grad.A.noalias() += g * e.xi.transpose();
  du = model.bnet.backward(e.u, e.bnet, g, grad.bnet);
  return model.A.transpose() * g;
}

Vec mlp_backward(const MlpDynModel& model, const TapeEntry& e, const Vec& g, MlpDynModel& grad, Pressure& du) {
  const Eigen::Index n = model.z0.size();
  const Vec gz_next = g.head(n);
  const Vec gv_next = g.tail(n) + model.dt * gz_next;
  du = model.bnet.backward(e.u, e.bnet, gv_next, grad.bnet);
  Vec gxi = model.fmlp.backward(e.fmlp, gv_next, grad.fmlp, true).col(0);
  gxi.head(n) += gz_next;
  return gxi;
}

Vec oscillator_backward(const OscillatorModel& model, const TapeEntry& e, const Vec& g, OscillatorModel& grad,
                        Pressure& du) {
  const Eigen::Index n = model.z0.size();
  const double dt = model.dt;
  const Vec z = e.xi.head(n);
  const Vec v = e.xi.tail(n);
  const Vec mass = model.mass();
  const Vec dz = z - model.z0;
  const Vec b = model.bnet(e.u);
  const Vec force = b - model.K * dz;

  const Vec gz_next = g.head(n);
  const Vec gv_next = g.tail(n) + dt * gz_next;

  Vec gmass = Vec::Zero(n);
  Vec gforce(n);
  Vec gv(n);
  Mat gdamp;  // cotangent on the full damping matrix (explicit mode)
  Vec gdamp_diag = Vec::Zero(n);

  if (model.integration == IntegrationMode::implicit_damping) {
    const Vec gamma = model.implicit_factor();
    const Vec r = v + dt * force.cwiseQuotient(mass);
    const Vec v_next = r.cwiseQuotient(gamma);
    const Vec gr = gv_next.cwiseQuotient(gamma);
    const Vec ggamma = -gv_next.cwiseProduct(v_next).cwiseQuotient(gamma);
    gv = gr;
    gforce = dt * gr.cwiseQuotient(mass);
    gmass.array() -= dt * gr.array() * force.array() / mass.array().square();
    // gamma = 1 + dt * diag(D) / M
    const Vec ddiag = model.damping_matrix().diagonal();
    gdamp_diag = dt * ggamma.cwiseQuotient(mass);
    gmass.array() -= dt * ggamma.array() * ddiag.array() / mass.array().square();
  } else {
    const Mat dmat = model.damping_matrix();
    const Vec total = force - dmat * v;
    const Vec gs = dt * gv_next.cwiseQuotient(mass);
    gmass.array() -= dt * gv_next.array() * total.array() / mass.array().square();
    gv = gv_next - dmat.transpose() * gs;
    gdamp = -gs * v.transpose();
    gforce = gs;
  }

  // force = B(u) - K (z - z0)
  du = model.bnet.backward(e.u, e.bnet, gforce, grad.bnet);
  grad.K.noalias() -= gforce * dz.transpose();
  Vec gz = gz_next - model.K.transpose() * gforce;
  grad.z0 += model.K.transpose() * gforce;

  // Damping parameters.
  if (model.damping == DampingMode::full) {
    if (gdamp.size() > 0)
      grad.D += gdamp;
    else
      grad.D.diagonal() += gdamp_diag;
  } else {
    const double alpha = softplus(model.alpha_raw);
    const double beta = softplus(model.beta_raw);
    double galpha = 0.0;
    double gbeta = 0.0;
    if (gdamp.size() > 0) {
      galpha = gdamp.diagonal().dot(mass);
      gmass += alpha * gdamp.diagonal();
      gbeta = (gdamp.array() * model.K.array()).sum();
      grad.K += beta * gdamp;
    } else {
      galpha = gdamp_diag.dot(mass);
      gmass += alpha * gdamp_diag;
      gbeta = gdamp_diag.dot(model.K.diagonal());
      grad.K.diagonal() += beta * gdamp_diag;
    }
    grad.alpha_raw += galpha * sigmoid(model.alpha_raw);
    grad.beta_raw += gbeta * sigmoid(model.beta_raw);
  }
  grad.mass_raw.array() += gmass.array() * model.mass_raw.unaryExpr([](double x) { return sigmoid(x); }).array();

  Vec gxi(2 * n);
  gxi << gz, gv;
  return gxi;
}

}  // namespace

RolloutGradient rollout_vjp(const RolloutTape& tape, std::span<const Vec> dstates) {
  const std::size_t horizon = tape.entries.size();
  if (dstates.size() != horizon)
    throw ContractViolation("rollout_vjp: " + std::to_string(dstates.size()) + " cotangents for a horizon of " +
                            std::to_string(horizon));
  const int state_dim = 2 * latent_dim(tape.model);
  for (const auto& d : dstates)
    if (d.size() != state_dim) throw ContractViolation("rollout_vjp: cotangent dimension mismatch");

  RolloutGradient out;
  out.dparams = zeros_like(tape.model);
  out.du.assign(horizon, Pressure::Zero());
  Vec g = Vec::Zero(state_dim);
  for (std::size_t k = horizon; k-- > 0;) {
    g += dstates[k];
    const TapeEntry& e = tape.entries[k];
    if (const auto* km = std::get_if<KoopmanModel>(&tape.model)) {
      g = koopman_backward(*km, e, g, std::get<KoopmanModel>(out.dparams), out.du[k]);
    } else if (const auto* mm = std::get_if<MlpDynModel>(&tape.model)) {
      g = mlp_backward(*mm, e, g, std::get<MlpDynModel>(out.dparams), out.du[k]);
    } else {
      g = oscillator_backward(std::get<OscillatorModel>(tape.model), e, g,
                              std::get<OscillatorModel>(out.dparams), out.du[k]);
    }
  }
  out.dxi0 = std::move(g);
  return out;
}

// ---------------------------------------------------------------------------
// Diagnostics

Mat linearized_update_matrix(const OscillatorModel& model) {
  const Eigen::Index n = model.z0.size();
  const double dt = model.dt;
  const Vec inv_mass = model.mass().cwiseInverse();
  const Mat minv_k = inv_mass.asDiagonal() * model.K;
  const Mat I = Mat::Identity(n, n);
  Mat vz;  // d zdot' / d z
  Mat vv;  // d zdot' / d zdot
  if (model.integration == IntegrationMode::implicit_damping) {
    const Vec inv_gamma = model.implicit_factor().cwiseInverse();
    vz = -dt * inv_gamma.asDiagonal() * minv_k;
    vv = inv_gamma.asDiagonal();
  } else {
    vz = -dt * minv_k;
    vv = I - dt * inv_mass.asDiagonal() * model.damping_matrix();
  }
  Mat out(2 * n, 2 * n);
  out.topLeftCorner(n, n) = I + dt * vz;
  out.topRightCorner(n, n) = dt * vv;
  out.bottomLeftCorner(n, n) = vz;
  out.bottomRightCorner(n, n) = vv;
  return out;
}

double oscillator_energy(const OscillatorModel& model, const LatentState& xi) {
  const Vec dz = xi.z - model.z0;
  return 0.5 * xi.zdot.dot(model.mass().asDiagonal() * xi.zdot) + 0.5 * dz.dot(model.K * dz);
}

OscillatorForces oscillator_forces(const OscillatorModel& model, const LatentState& xi, const Pressure& u) {
  return {model.bnet(u), -model.K * (xi.z - model.z0)};
}

}  // namespace vonctl
