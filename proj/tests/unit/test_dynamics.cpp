#include <doctest.h>

#include <Eigen/Eigenvalues>

#include "test_support.hpp"
#include "vonctl/dynamics.hpp"
#include "vonctl/error.hpp"

using namespace vonctl;
using namespace vonctl::testing;

namespace {

OscillatorModel scalar_oscillator(double m, double k, double d, double dt) {
  OscillatorModel o;
  o.mass_raw = Vec::Constant(1, inverse_softplus(m));
  o.K = Mat::Constant(1, 1, k);
  o.D = Mat::Constant(1, 1, d);
  o.z0 = Vec::Zero(1);
  o.bnet = ExcitationNet::make_linear(Mat::Zero(1, kInputChannels));
  o.dt = dt;
  return o;
}

ExcitationNet constant_excitation(const Vec& c) {
  std::mt19937_64 rng(0);
  ExcitationNet net = ExcitationNet::make_mlp(static_cast<int>(c.size()), rng, 4, 1);
  for (auto& w : net.mlp.weights) w.setZero();
  net.mlp.biases.back() = c;
  return net;
}

// J = sum_i w_i . xi_i + 0.1 * sum_i |xi_i|^2
double test_objective(const std::vector<LatentState>& states, const std::vector<Vec>& w) {
  double j = 0.0;
  for (std::size_t i = 0; i < states.size(); ++i) {
    const Vec xi = states[i].xi();
    j += w[i].dot(xi) + 0.1 * xi.squaredNorm();
  }
  return j;
}

std::vector<Vec> test_cotangents(const std::vector<LatentState>& states, const std::vector<Vec>& w) {
  std::vector<Vec> out;
  for (std::size_t i = 0; i < states.size(); ++i) out.push_back(w[i] + 0.2 * states[i].xi());
  return out;
}

double vjp_fd_error(const DynModel& model, std::mt19937_64& rng, int horizon) {
  const int n = latent_dim(model);
  const LatentState xi0 = random_state(n, rng);
  ControlSequence u = random_controls(horizon, rng);
  std::vector<Vec> w;
  for (int i = 0; i < horizon; ++i) w.push_back(random_vector(2 * n, rng));

  const Rollout r = rollout(model, xi0, u);
  const RolloutGradient g = rollout_vjp(r.tape, test_cotangents(r.states, w));

  // Flatten (u, params, xi0) and compare against central differences.
  DynModel probe = model;
  ParamList params;
  append_params(probe, "m", params);
  DynModel grad = g.dparams;
  ParamList grads;
  append_params(grad, "g", grads);

  const Eigen::Index nu = 4 * horizon;
  const Eigen::Index np = total_size(params);
  Vec x(nu + np + 2 * n);
  Vec analytic(x.size());
  for (int i = 0; i < horizon; ++i) {
    x.segment(4 * i, 4) = u[i];
    analytic.segment(4 * i, 4) = g.du[i];
  }
  x.segment(nu, np) = gather(params);
  analytic.segment(nu, np) = gather(grads);
  x.tail(2 * n) = xi0.xi();
  analytic.tail(2 * n) = g.dxi0;

  auto f = [&](const Vec& v) {
    ControlSequence uu(horizon);
    for (int i = 0; i < horizon; ++i) uu[i] = v.segment(4 * i, 4);
    scatter(params, v.segment(nu, np));
    return test_objective(rollout(probe, LatentState::from_xi(v.tail(2 * n)), uu).states, w);
  };
  const Vec numeric = central_difference(f, x, 1e-5);
  return relative_error(analytic, numeric);
}

}  // namespace

TEST_CASE("koopman identity and zero dynamics") {
  std::mt19937_64 rng(1);
  KoopmanModel m;
  m.A = Mat::Identity(4, 4);
  m.bnet = ExcitationNet::make_linear(Mat::Zero(4, 4));
  m.z0 = Vec::Zero(2);
  const LatentState xi = random_state(2, rng);
  const Pressure u(10, 20, 30, 40);
  CHECK((step_koopman(xi, u, m).xi() - xi.xi()).norm() == 0.0);

  m.A.setZero();
  Mat pad = Mat::Zero(4, 4);
  pad.topLeftCorner(4, 4) = kDatasetPressureMax * Mat::Identity(4, 4);
  m.bnet = ExcitationNet::make_linear(pad);
  CHECK((step_koopman(xi, u, m).xi() - Vec(u)).norm() < 1e-12);
}

TEST_CASE("koopman three-step rollout matches closed form") {
  std::mt19937_64 rng(2);
  KoopmanModel m;
  m.A = random_matrix(4, 4, rng, 0.5);
  m.bnet = ExcitationNet::make_linear(random_matrix(4, 4, rng));
  m.z0 = Vec::Zero(2);
  const LatentState xi0 = random_state(2, rng);
  const Pressure u = random_pressure(rng);
  const ControlSequence useq(3, u);
  const Vec b = m.bnet.linear * (u / kDatasetPressureMax);
  const Mat& A = m.A;
  const Vec expected = A * A * A * xi0.xi() + A * A * b + A * b + b;
  const Rollout r = rollout(m, xi0, useq);
  CHECK((r.states.back().xi() - expected).norm() < 1e-10);
}

TEST_CASE("koopman rollout agrees with matrix powers over long horizons") {
  std::mt19937_64 rng(9);
  KoopmanModel m = random_koopman(3, rng, true);
  m.A *= 0.97;
  const LatentState xi0 = random_state(3, rng);
  const ControlSequence useq = random_controls(60, rng);
  const Rollout r = rollout(m, xi0, useq);
  Vec x = xi0.xi();
  for (std::size_t i = 0; i < useq.size(); ++i) {
    x = m.A * x + m.bnet.linear * (useq[i] / kDatasetPressureMax);
    CHECK((r.states[i].xi() - x).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("mlp step integrates with the new velocity") {
  std::mt19937_64 rng(3);
  MlpDynModel m;
  m.fmlp = Mlp({4, 5, 2}, rng);
  for (auto& w : m.fmlp.weights) w.setZero();
  m.bnet = constant_excitation(Vec::Zero(2));
  m.z0 = Vec::Zero(2);
  const LatentState xi = random_state(2, rng);
  const Pressure u(1, 2, 3, 4);
  LatentState next = step_mlp(xi, u, m);
  CHECK(next.zdot.norm() == 0.0);
  CHECK((next.z - xi.z).norm() == 0.0);

  const Vec c(Eigen::Vector2d(1.5, -2.0));
  m.bnet = constant_excitation(c);
  next = step_mlp(xi, u, m);
  CHECK((next.z - (xi.z + 0.02 * c)).norm() < 1e-15);

  MlpDynModel r = random_mlp_model(2, rng);
  next = step_mlp(xi, u, r);
  const Vec f = r.fmlp.forward(Mat(xi.xi())).col(0);
  const Vec bu = r.bnet(u);
  CHECK((next.z - (xi.z + r.dt * (f + bu))).norm() < 1e-14);
}

TEST_CASE("oscillator rest state is a fixed point") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    OscillatorModel o = random_oscillator(6, rng);
    o.bnet = ExcitationNet::make_linear(Mat::Zero(6, 4));
    const LatentState next = step_oscillator(LatentState::at_rest(o.z0), Pressure::Constant(43.0), o);
    CHECK((next.z - o.z0).norm() == 0.0);
    CHECK(next.zdot.norm() == 0.0);
  }
}

TEST_CASE("oscillator without damping is plain symplectic Euler") {
  std::mt19937_64 rng(5);
  OscillatorModel o = random_oscillator(4, rng);
  o.D.setZero();
  const LatentState xi = random_state(4, rng);
  const Pressure u = random_pressure(rng);
  const LatentState next = step_oscillator(xi, u, o);
  const Vec v = xi.zdot + o.dt * (o.bnet(u) - o.K * (xi.z - o.z0)).cwiseQuotient(o.mass());
  CHECK((next.zdot - v).norm() < 1e-14);
  CHECK((next.z - (xi.z + o.dt * v)).norm() < 1e-14);
}

TEST_CASE("scalar oscillator hand check") {
  const OscillatorModel o = scalar_oscillator(1.0, 1.0, 1.0, 0.1);
  const LatentState next = step_oscillator({Vec::Ones(1), Vec::Zero(1)}, Pressure::Zero(), o);
  CHECK(std::abs(next.zdot[0] - (-1.0 / 11.0)) < 1e-12);
  CHECK(std::abs(next.z[0] - 109.0 / 110.0) < 1e-12);
}

TEST_CASE("singular implicit factor names the offending entry") {
  std::mt19937_64 rng(6);
  OscillatorModel o = random_oscillator(3, rng);
  o.dt = 0.25;
  o.D(1, 1) = -4.0 * o.mass()[1];
  try {
    step_oscillator(random_state(3, rng), Pressure::Zero(), o);
    FAIL("expected SingularityError");
  } catch (const SingularityError& e) {
    CHECK(e.index() == 1);
  }
}

TEST_CASE("dimension mismatch is a contract violation") {
  std::mt19937_64 rng(7);
  const OscillatorModel o = random_oscillator(3, rng);
  CHECK_THROWS_AS(step_oscillator(random_state(2, rng), Pressure::Zero(), o), ContractViolation);
  const KoopmanModel k = random_koopman(2, rng);
  CHECK_THROWS_AS(step_koopman(random_state(3, rng), Pressure::Zero(), k), ContractViolation);
}

TEST_CASE("explicit damping mode adds the full damping force") {
  std::mt19937_64 rng(8);
  OscillatorModel o = random_oscillator(3, rng, DampingMode::full, IntegrationMode::explicit_damping);
  const LatentState xi = random_state(3, rng);
  const Pressure u = random_pressure(rng);
  const LatentState next = step_oscillator(xi, u, o);
  const Vec f = o.bnet(u) - o.K * (xi.z - o.z0) - o.D * xi.zdot;
  CHECK((next.zdot - (xi.zdot + o.dt * f.cwiseQuotient(o.mass()))).norm() < 1e-14);
}

TEST_CASE("rayleigh damping combines mass and stiffness") {
  std::mt19937_64 rng(10);
  const OscillatorModel o = random_oscillator(3, rng, DampingMode::rayleigh);
  const Mat expected = softplus(o.alpha_raw) * Mat(o.mass().asDiagonal()) + softplus(o.beta_raw) * o.K;
  CHECK((o.damping_matrix() - expected).norm() < 1e-14);
}

TEST_CASE("rollout matches sequential steps and replays bit-exactly") {
  std::mt19937_64 rng(11);
  const std::vector<DynModel> models{random_koopman(3, rng), random_mlp_model(3, rng), random_oscillator(3, rng)};
  for (const auto& model : models) {
    const LatentState xi0 = random_state(3, rng);
    const ControlSequence u = random_controls(5, rng);
    const Rollout r = rollout(model, xi0, u);
    REQUIRE(r.states.size() == 5);
    LatentState s = xi0;
    for (int i = 0; i < 5; ++i) {
      s = step(model, s, u[i]);
      CHECK((r.states[i].xi() - s.xi()).norm() == 0.0);
    }
    const auto replayed = replay(r.tape);
    for (int i = 0; i < 5; ++i) CHECK((replayed[i].xi() - r.states[i].xi()).norm() == 0.0);
    CHECK(r.tape.horizon() == 5);
  }
}

TEST_CASE("rollout edge cases") {
  std::mt19937_64 rng(12);
  KoopmanModel k;
  k.A = Mat::Identity(6, 6);
  k.bnet = ExcitationNet::make_linear(Mat::Zero(6, 4));
  k.z0 = Vec::Zero(3);
  const LatentState xi0 = random_state(3, rng);
  const Rollout r = rollout(k, xi0, random_controls(7, rng));
  for (const auto& s : r.states) CHECK((s.xi() - xi0.xi()).norm() == 0.0);

  CHECK_THROWS_AS(rollout(k, xi0, ControlSequence{}), ContractViolation);

  k.A *= 1e200;
  try {
    rollout(k, xi0, random_controls(4, rng));
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.step() == 2);
  }
}

TEST_CASE("rollout_vjp on linear koopman matches analytic adjoint") {
  std::mt19937_64 rng(13);
  KoopmanModel m = random_koopman(2, rng, true);
  const LatentState xi0 = random_state(2, rng);
  const ControlSequence u = random_controls(6, rng);
  const Rollout r = rollout(m, xi0, u);
  std::vector<Vec> cot(6, Vec::Zero(4));
  const Vec xT = r.states.back().xi();
  cot.back() = 2.0 * xT;  // J = |xi(T)|^2
  const RolloutGradient g = rollout_vjp(r.tape, cot);

  Vec adj = 2.0 * xT;
  for (int i = 5; i >= 0; --i) {
    const Vec du = m.bnet.linear.transpose() * adj / kDatasetPressureMax;
    CHECK((g.du[i] - du).norm() < 1e-10 * (1.0 + du.norm()));
    adj = m.A.transpose() * adj;
  }
  CHECK((g.dxi0 - adj).norm() < 1e-10 * adj.norm());
}

TEST_CASE("constant objective gives zero gradients") {
  std::mt19937_64 rng(14);
  const OscillatorModel o = random_oscillator(3, rng);
  const Rollout r = rollout(o, random_state(3, rng), random_controls(4, rng));
  const RolloutGradient g = rollout_vjp(r.tape, std::vector<Vec>(4, Vec::Zero(6)));
  for (const auto& du : g.du) CHECK(du.norm() == 0.0);
  CHECK(g.dxi0.norm() == 0.0);
  DynModel grad = g.dparams;
  ParamList gp;
  append_params(grad, "g", gp);
  CHECK(gather(gp).norm() == 0.0);
  CHECK_THROWS_AS(rollout_vjp(r.tape, std::vector<Vec>(3, Vec::Zero(6))), ContractViolation);
}

TEST_CASE("rollout_vjp matches finite differences for every family") {
  std::mt19937_64 rng(15);
  std::uniform_int_distribution<int> horizon(1, 12);
  for (int trial = 0; trial < 3; ++trial) {
    CHECK(vjp_fd_error(random_koopman(2, rng, trial % 2 == 0), rng, horizon(rng)) < 1e-5);
    CHECK(vjp_fd_error(random_mlp_model(2, rng, trial % 2 == 1), rng, horizon(rng)) < 1e-5);
    CHECK(vjp_fd_error(random_oscillator(2, rng), rng, horizon(rng)) < 1e-5);
    CHECK(vjp_fd_error(random_oscillator(2, rng, DampingMode::rayleigh), rng, horizon(rng)) < 1e-5);
    CHECK(vjp_fd_error(random_oscillator(2, rng, DampingMode::full, IntegrationMode::explicit_damping), rng,
                       horizon(rng)) < 1e-5);
    CHECK(vjp_fd_error(random_oscillator(2, rng, DampingMode::rayleigh, IntegrationMode::explicit_damping, true),
                       rng, horizon(rng)) < 1e-5);
  }
}

TEST_CASE("linearized update matrix") {
  OscillatorModel free = scalar_oscillator(1.0, 0.0, 0.0, 0.02);
  Mat expected(2, 2);
  expected << 1.0, 0.02, 0.0, 1.0;
  CHECK((linearized_update_matrix(free) - expected).norm() < 1e-15);

  const OscillatorModel o = scalar_oscillator(1.0, 1.0, 1.0, 0.1);
  expected << 1.0 - 0.01 / 1.1, 0.1 / 1.1, -0.1 / 1.1, 1.0 / 1.1;
  CHECK((linearized_update_matrix(o) - expected).norm() < 1e-14);

  std::mt19937_64 rng(16);
  for (int trial = 0; trial < 10; ++trial) {
    OscillatorModel r = random_oscillator(3, rng);
    r.K = random_spd(3, rng, 0.5, 10.0);
    r.D = random_spd(3, rng, 0.0, 2.0);
    const Mat lin = linearized_update_matrix(r);
    CHECK(lin.eigenvalues().cwiseAbs().maxCoeff() <= 1.0 + 1e-9);

    // Agrees with the Jacobian of the step at zero excitation.
    r.bnet = ExcitationNet::make_linear(Mat::Zero(3, 4));
    const LatentState s = random_state(3, rng);
    Mat jac(6, 6);
    for (int j = 0; j < 6; ++j) {
      Vec p = s.xi(), m = s.xi();
      p[j] += 1e-6;
      m[j] -= 1e-6;
      jac.col(j) = (step_oscillator(LatentState::from_xi(p), Pressure::Zero(), r).xi() -
                    step_oscillator(LatentState::from_xi(m), Pressure::Zero(), r).xi()) /
                   2e-6;
    }
    CHECK((jac - lin).norm() < 1e-8);
  }
}

TEST_CASE("damped oscillator dissipates and undamped stays bounded") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 3; ++trial) {
    OscillatorModel o = random_oscillator(4, rng);
    o.K = random_spd(4, rng, 1.0, 10.0);
    o.D = random_spd(4, rng, 0.5, 2.0);
    o.bnet = ExcitationNet::make_linear(Mat::Zero(4, 4));
    LatentState s{o.z0 + random_vector(4, rng), random_vector(4, rng)};
    const double e0 = oscillator_energy(o, s);
    for (int i = 0; i < 2000; ++i) s = step_oscillator(s, Pressure::Zero(), o);
    CHECK(oscillator_energy(o, s) < e0);

    o.D.setZero();
    s = {o.z0 + random_vector(4, rng), random_vector(4, rng)};
    const double f0 = oscillator_energy(o, s);
    for (int i = 0; i < 5000; ++i) {
      s = step_oscillator(s, Pressure::Zero(), o);
      CHECK(std::abs(oscillator_energy(o, s) - f0) < 0.1 * f0);
    }
  }
}
