#include <doctest.h>

#include "test_support.hpp"
#include "vonctl/error.hpp"
#include "vonctl/plant.hpp"

using namespace vonctl;
using namespace vonctl::testing;

namespace {

Observation mirror(const Observation& o, int h, int w) {
  Observation out(o.size());
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) out[i * w + j] = o[i * w + (w - 1 - j)];
  return out;
}

}  // namespace

TEST_CASE("rest command keeps the rest state") {
  const PlantParams params;
  PlantState s = PlantState::rest();
  for (int i = 0; i < 100; ++i) s = plant_step(s, rest_pressure(), params);
  CHECK(s.q.norm() == 0.0);
  CHECK(s.qdot.norm() == 0.0);
  CHECK((s.p_act - rest_pressure()).norm() == 0.0);
}

TEST_CASE("lag disabled makes pressures jump to the command") {
  PlantParams params;
  params.lag = 0.0;
  const Pressure u(80, 10, 30, 60);
  const PlantState s = plant_step(PlantState::rest(), u, params);
  CHECK((s.p_act - u).norm() == 0.0);
  const PlantState c = plant_step(PlantState::rest(), Pressure(150, -4, 30, 60), params);
  CHECK(c.p_act[0] == params.p_max);
  CHECK(c.p_act[1] == 0.0);
}

TEST_CASE("first-order lag follows the exponential filter") {
  const PlantParams params;
  PlantState s = PlantState::rest();
  const Pressure u = Pressure::Constant(80.0);
  s = plant_step(s, u, params);
  CHECK(s.p_act[0] == doctest::Approx(43.0 + 0.25 * 37.0));
}

TEST_CASE("constant torque settles at tau / k") {
  PlantParams params;
  params.lag = 0.0;
  params.coupling = 0.0;
  const Pressure u(70, 20, 43, 43);
  const double tau = params.gain[0] * 50.0;
  const double time_constant = 2.0 * params.inertia[0] / params.damping[0];
  PlantState s = PlantState::rest();
  const int steps = static_cast<int>(std::ceil(20.0 * time_constant / kControlDt));
  for (int i = 0; i < steps; ++i) s = plant_step(s, u, params);
  CHECK(std::abs(s.q[0] - tau / params.stiffness[0]) < 0.01 * tau / params.stiffness[0]);
  CHECK(std::abs(s.q[1]) < 1e-12);
}

TEST_CASE("equilibrium helper is a fixed point") {
  const PlantParams params;
  const Pressure p(12, 70, 55, 3);
  const PlantState eq = PlantState::at_equilibrium(p, params);
  const PlantState next = plant_step(eq, p, params);
  CHECK((next.q - eq.q).norm() < 1e-12);
  CHECK(next.qdot.norm() < 1e-12);
}

TEST_CASE("plant energy never increases without torque") {
  PlantParams params;
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    PlantState s;
    s.q = random_vector(2, rng, 0.8);
    s.qdot = random_vector(2, rng, 3.0);
    double e = plant_energy(s, params);
    for (int i = 0; i < 500; ++i) {
      s = plant_step(s, rest_pressure(), params);
      const double next = plant_energy(s, params);
      CHECK(next <= e);
      e = next;
    }
  }
}

TEST_CASE("render symmetry and determinism") {
  const PlantParams params;
  const Observation straight = render(PlantState::rest(), params);
  CHECK((straight - mirror(straight, params.height, params.width)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(straight.maxCoeff() <= 1.0);
  CHECK(straight.minCoeff() >= 0.0);
  CHECK(straight.maxCoeff() > 0.5);

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    PlantState s;
    s.q = random_vector(2, rng, 0.7);
    PlantState m = s;
    m.q = -s.q;
    const Observation a = render(s, params);
    CHECK((a - mirror(render(m, params), params.height, params.width)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((a - render(s, params)).norm() == 0.0);
  }
}

TEST_CASE("distinct poses render distinctly") {
  const PlantParams params;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> q(-1.2, 1.2);
  int checked = 0;
  while (checked < 50) {
    PlantState a, b;
    a.q = {q(rng), q(rng)};
    b.q = {q(rng), q(rng)};
    if ((a.q - b.q).cwiseAbs().maxCoeff() <= 0.2) continue;
    CHECK(image_mse(render(a, params), render(b, params)) > 1e-3);
    ++checked;
  }
}

TEST_CASE("dataset generation") {
  const PlantParams params;
  const Dataset a = generate_dataset(ExcitationProfile::sinusoidal, 20.0, 11, params);
  const Dataset b = generate_dataset(ExcitationProfile::sinusoidal, 20.0, 11, params);
  CHECK(a == b);
  CHECK(a.size() == 1000);
  for (const auto& u : a.u_cmd) {
    CHECK(u.minCoeff() >= 0.0);
    CHECK(u.maxCoeff() <= 86.0);
  }
  for (std::size_t i = 1; i < a.size(); ++i) CHECK(a.time[i] - a.time[i - 1] == doctest::Approx(0.02));
  CHECK(a.rest_observation() == a.observation(0));
  CHECK((a.rest_observation() - render(PlantState::rest(), params).cast<float>().cast<double>()).norm() == 0.0);
  CHECK_THROWS_AS(generate_dataset(ExcitationProfile::step, 5.0, 1, params), ContractViolation);

  const Dataset c = generate_dataset(ExcitationProfile::sinusoidal, 20.0, 12, params);
  CHECK_FALSE(a == c);
}

TEST_CASE("step dataset holds and static frames") {
  const PlantParams params;
  const Dataset d = generate_dataset(ExcitationProfile::step, 120.0, 5, params);
  const auto frames = static_frames(d, 2.0);
  REQUIRE(frames.size() > 5);
  for (auto i : frames) {
    // Settled: actual pressure equals the held command, neighbours look alike.
    CHECK((d.p_act[i] - d.u_cmd[i - 1]).norm() < 1e-3);
    CHECK(image_mse(d.observation(i), d.observation(i - 5)) < 1e-5);
  }
}

TEST_CASE("full-length recording has 45000 samples") {
  const PlantParams params;
  const Dataset d = generate_dataset(ExcitationProfile::step, 900.0, 1, params);
  CHECK(d.size() == 45000);
}
