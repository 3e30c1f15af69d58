#include <doctest.h>

#include <algorithm>

#include "test_support.hpp"
#include "vonctl/error.hpp"
#include "vonctl/training.hpp"

using namespace vonctl;
using vonctl::testing::random_matrix;
using vonctl::testing::relative_error;

namespace {

TrainConfig small_config(ModelFamily family, DecoderKind decoder) {
  TrainConfig c = default_config(family, decoder);
  c.latent_pairs = 2;
  c.encoder_hidden = {12};
  c.decoder_hidden = {10};
  c.keypoint_components = 2;
  c.fmlp_hidden = 8;
  c.batch_size = 3;
  return c;
}

// Small frames keep the finite-difference checks fast.
Dataset small_dataset(std::uint64_t seed) {
  PlantParams params;
  params.height = 10;
  params.width = 8;
  params.segment_length = 3.5;
  params.base_y = 0.5;
  params.line_sigma = 0.8;
  return generate_dataset(ExcitationProfile::sinusoidal, 12.0, seed, params);
}

LatentModel perturbed_model(const TrainConfig& c, const Dataset& d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  LatentModel m = init_latent_model(c, d.height, d.width, rng);
  rest_latent(m.dynamics) = random_matrix(c.latent_dim(), 1, rng, 0.3).col(0);
  if (auto* o = std::get_if<OscillatorModel>(&m.dynamics)) {
    o->D += random_matrix(o->D.rows(), o->D.cols(), rng, 0.02);
    o->K += random_matrix(o->K.rows(), o->K.cols(), rng, 0.1);
  }
  return m;
}

double direct_mse(const Vec& a, const Vec& b) { return (a - b).squaredNorm() / a.size(); }

}  // namespace

TEST_CASE("KL term") {
  const Vec z0 = Vec::Constant(1, 0.7);
  CHECK(loss_kl(Mat::Constant(1, 1, 0.7), Mat::Zero(1, 1), z0) == 0.0);
  CHECK(loss_kl(Mat::Constant(1, 1, 1.7), Mat::Zero(1, 1), z0) == doctest::Approx(0.5).epsilon(1e-15));

  std::mt19937_64 rng(1);
  const Mat mu = random_matrix(4, 7, rng), lv = random_matrix(4, 7, rng, 0.5);
  const Vec c = random_matrix(4, 1, rng).col(0);
  double s = 0.0;
  for (int i = 0; i < 7; ++i)
    for (int j = 0; j < 4; ++j) s += 1.0 + lv(j, i) - std::pow(mu(j, i) - c[j], 2) - std::exp(lv(j, i));
  CHECK(std::abs(loss_kl(mu, lv, c) - (-s / 14.0)) < 1e-12);
  CHECK_THROWS_AS(loss_kl(mu, lv, Vec::Zero(3)), ContractViolation);
}

TEST_CASE("rest loss") {
  const Dataset d = small_dataset(2);
  std::mt19937_64 rng(3);
  TrainConfig c = small_config(ModelFamily::oscillator, DecoderKind::keypoint_broadcast);
  c.excitation = ExcitationKind::linear;
  LatentModel m = init_latent_model(c, d.height, d.width, rng);
  auto& osc = std::get<OscillatorModel>(m.dynamics);

  SUBCASE("exact equilibrium gives zero") {
    osc.z0 = m.encoder.mean(d.rest_observation());
    osc.bnet.linear.setZero();
    CHECK(loss_rest(m.encoder, m.dynamics, d.rest_observation(), d.u_rest) == 0.0);
  }
  SUBCASE("random case matches the formula") {
    osc.z0 = random_matrix(4, 1, rng).col(0);
    const Vec zr = m.encoder.mean(d.rest_observation());
    const LatentState n = step_oscillator(LatentState::at_rest(zr), d.u_rest, osc);
    const double expect =
        0.5 * (direct_mse(zr, osc.z0) + direct_mse(n.z, osc.z0) + direct_mse(0.02 * n.zdot, Vec::Zero(4)));
    CHECK(std::abs(loss_rest(m.encoder, m.dynamics, d.rest_observation(), d.u_rest) - expect) < 1e-12);
  }
}

TEST_CASE("multi-step losses") {
  const Dataset d = small_dataset(4);
  const TrainConfig c = small_config(ModelFamily::oscillator, DecoderKind::keypoint_broadcast);
  const LatentModel m = perturbed_model(c, d, 5);
  const std::vector<std::size_t> starts{150, 222, 400};

  SUBCASE("H = 1 is the single-step decoded error") {
    double s = 0.0;
    for (std::size_t st : starts) {
      const LatentState x0{m.encoder.mean(d.observation(st)),
                           latent_velocity(d.observation(st - 1), d.observation(st), d.observation(st + 1), m.encoder)};
      const LatentState x1 = step(m.dynamics, x0, d.p_act[st + 1]);
      s += direct_mse(m.decoder.decode(x1.z), d.observation(st + 1));
    }
    CHECK(std::abs(loss_dyn_multistep(d, starts, m, 1) - s / 3.0) < 1e-12);
  }
  SUBCASE("latent loss matches a direct evaluation") {
    const int H = 4;
    const double dt = 0.02;
    double s = 0.0;
    for (std::size_t st : starts) {
      auto enc_state = [&](std::size_t i) {
        return LatentState{m.encoder.mean(d.observation(i)),
                           latent_velocity(d.observation(i - 1), d.observation(i), d.observation(i + 1), m.encoder)};
      };
      LatentState x = enc_state(st);
      for (int h = 1; h <= H; ++h) {
        x = step(m.dynamics, x, d.p_act[st + h]);
        const LatentState t = enc_state(st + h);
        s += direct_mse(x.z, t.z) + direct_mse(dt * x.zdot, dt * t.zdot);
      }
    }
    CHECK(std::abs(loss_latent_multistep(d, starts, m, H) - s / (3.0 * H)) < 1e-12);
  }
  SUBCASE("non-negative and bounded by the sequence") {
    CHECK(loss_dyn_multistep(d, starts, m, 5) >= 0.0);
    CHECK(loss_latent_multistep(d, starts, m, 5) >= 0.0);
    const std::vector<std::size_t> late{d.size() - 3};
    CHECK_THROWS_AS(loss_dyn_multistep(d, late, m, 2), ContractViolation);
    CHECK_THROWS_AS(loss_latent_multistep(d, late, m, 2), ContractViolation);
    const std::vector<std::size_t> first{0};
    CHECK_THROWS_AS(loss_dyn_multistep(d, first, m, 1), ContractViolation);
  }
}

TEST_CASE("velocity term scales with dt squared") {
  // MSE(dt a, dt b) = dt^2 MSE(a, b): for a fixed velocity error, doubling dt quadruples the term.
  std::mt19937_64 rng(6);
  const Vec a = random_matrix(6, 1, rng).col(0), b = random_matrix(6, 1, rng).col(0);
  const double t1 = direct_mse(0.02 * a, 0.02 * b), t2 = direct_mse(0.04 * a, 0.04 * b);
  CHECK(std::abs(t2 / t1 - 4.0) < 1e-12);
}

TEST_CASE("perfect model and decoder give a vanishing dynamic loss") {
  const LinearLatentPlant plant = make_linear_latent_plant(2, 7);
  const Dataset d = generate_linear_latent_dataset(plant, 12.0, 8);
  const int L = 4;
  // Ground-truth latent trajectory.
  std::vector<LatentState> truth{
      LatentState::at_rest(plant.dynamics.K.inverse() * plant.dynamics.bnet(d.u_rest))};
  for (std::size_t i = 0; i + 1 < d.size(); ++i)
    truth.push_back(step_oscillator(truth.back(), d.transition_input(i), plant.dynamics));
  for (std::size_t i = 0; i < d.size(); ++i)
    REQUIRE((plant.renderer.decode(truth[i].z) - d.observation(i)).cwiseAbs().maxCoeff() < 1e-6);

  // Linear encoder that is exact on the frames each window touches.
  const std::vector<std::size_t> starts{180, 430};
  const double dt = 0.02;
  Mat O(d.frame_size(), 3 * starts.size()), Z(L, 3 * starts.size());
  for (std::size_t w = 0; w < starts.size(); ++w) {
    const LatentState& x = truth[starts[w]];
    for (int j = -1; j <= 1; ++j) {
      O.col(3 * w + j + 1) = d.observation(starts[w] + j);
      Z.col(3 * w + j + 1) = x.z + j * dt * x.zdot;
    }
  }
  const Mat We = Z * (O.transpose() * O).ldlt().solve(O.transpose());
  LatentModel m;
  std::mt19937_64 rng(9);
  m.encoder = Encoder::make(d.frame_size(), L, {}, rng);
  m.encoder.net.weights[0].setZero();
  m.encoder.net.weights[0].topRows(L) = We;
  m.encoder.net.biases[0].setZero();
  m.decoder = plant.renderer;
  m.dynamics = plant.dynamics;
  CHECK(loss_dyn_multistep(d, starts, m, 25) < 1e-8);
}

TEST_CASE("batched objective matches the individual losses") {
  const Dataset d = small_dataset(10);
  for (auto [family, decoder] : {std::pair{ModelFamily::oscillator, DecoderKind::keypoint_broadcast},
                                 std::pair{ModelFamily::koopman, DecoderKind::dense},
                                 std::pair{ModelFamily::mlp, DecoderKind::keypoint_broadcast}}) {
    CAPTURE(to_string(family));
    TrainConfig c = small_config(family, decoder);
    c.beta = 0.3;
    const LatentModel m = perturbed_model(c, d, 11);
    std::mt19937_64 rng(12);
    const Batch b = sample_batch(d, 3, 4, c.latent_dim(), rng);
    const LossBreakdown l = evaluate_batch(m, c, d, b, nullptr);
    CHECK(std::abs(l.dyn - loss_dyn_multistep(d, b.starts, m, 4)) < 1e-10);
    CHECK(std::abs(l.latent - loss_latent_multistep(d, b.starts, m, 4)) < 1e-10);
    CHECK(std::abs(l.rest - loss_rest(m.encoder, m.dynamics, d.rest_observation(), d.u_rest)) < 1e-10);

    // Static reconstruction and KL evaluated frame by frame.
    double stat = 0.0;
    Mat mu(c.latent_dim(), b.noise.cols()), lv(c.latent_dim(), b.noise.cols());
    for (std::size_t n = 0; n < b.starts.size(); ++n)
      for (int j = 0; j <= 4; ++j) {
        const int col = static_cast<int>(n) * 5 + j;
        const auto out = m.encoder.forward(d.observation(b.starts[n] + j));
        mu.col(col) = out.mu.col(0);
        lv.col(col) = out.logvar.col(0);
        const Vec z = out.mu.col(0) + (0.5 * out.logvar.col(0).array()).exp().matrix().cwiseProduct(b.noise.col(col));
        stat += direct_mse(m.decoder.decode(z), d.observation(b.starts[n] + j));
      }
    CHECK(std::abs(l.static_rec - stat / 15.0) < 1e-10);
    const Vec z0 = c.kl_mean_correction ? rest_latent(m.dynamics) : Vec::Zero(c.latent_dim());
    CHECK(std::abs(l.kl - loss_kl(mu, lv, z0)) < 1e-10);
    const LossWeights& w = c.loss_weights;
    CHECK(std::abs(l.total - (w.static_rec * l.static_rec + w.dyn * l.dyn + w.latent * l.latent + w.rest * l.rest +
                              c.beta * l.kl)) < 1e-12);
  }
}

TEST_CASE("training gradient matches finite differences on random parameters") {
  const Dataset d = small_dataset(13);
  struct Case {
    ModelFamily family;
    DecoderKind decoder;
    ExcitationKind excitation;
    DampingMode damping;
  };
  const Case cases[] = {
      {ModelFamily::oscillator, DecoderKind::keypoint_broadcast, ExcitationKind::mlp, DampingMode::full},
      {ModelFamily::oscillator, DecoderKind::dense, ExcitationKind::linear, DampingMode::rayleigh},
      {ModelFamily::koopman, DecoderKind::keypoint_broadcast, ExcitationKind::linear, DampingMode::full},
      {ModelFamily::koopman, DecoderKind::dense, ExcitationKind::mlp, DampingMode::full},
      {ModelFamily::mlp, DecoderKind::keypoint_broadcast, ExcitationKind::mlp, DampingMode::full},
      {ModelFamily::mlp, DecoderKind::dense, ExcitationKind::mlp, DampingMode::full},
  };
  std::uint64_t seed = 20;
  for (const Case& k : cases) {
    TrainConfig c = small_config(k.family, k.decoder);
    c.excitation = k.excitation;
    c.damping = k.damping;
    c.beta = 0.05;
    c.kl_mean_correction = k.family == ModelFamily::oscillator;
    CAPTURE(to_string(k.family));
    CAPTURE(to_string(k.decoder));
    std::mt19937_64 rng(++seed);
    LatentModel m = init_latent_model(c, d.height, d.width, rng);
    const Batch b = sample_batch(d, 3, 3, c.latent_dim(), rng);

    LatentModel g = LatentModel::zeros_like(m);
    evaluate_batch(m, c, d, b, &g);
    ParamList params, gparams;
    m.append_params(params);
    g.append_params(gparams);
    const Vec theta = gather(params);
    const Vec analytic = gather(gparams);

    std::uniform_int_distribution<Eigen::Index> pick(0, theta.size() - 1);
    Vec a(20), fd(20);
    for (int i = 0; i < 20; ++i) {
      const Eigen::Index idx = pick(rng);
      const double h = 1e-5 * std::max(1.0, std::abs(theta[idx]));
      Vec t = theta;
      t[idx] = theta[idx] + h;
      scatter(params, t);
      const double fp = evaluate_batch(m, c, d, b, nullptr).total;
      t[idx] = theta[idx] - h;
      scatter(params, t);
      const double fm = evaluate_batch(m, c, d, b, nullptr).total;
      scatter(params, theta);
      a[i] = analytic[idx];
      fd[i] = (fp - fm) / (2 * h);
    }
    CHECK(relative_error(a, fd) < 1e-4);

    // Full check on the dynamics parameters, which are few.
    ParamList dyn;
    append_params(m.dynamics, "", dyn);
    LatentModel g2 = LatentModel::zeros_like(m);
    evaluate_batch(m, c, d, b, &g2);
    ParamList gdyn;
    append_params(g2.dynamics, "", gdyn);
    const Vec td = gather(dyn);
    const Vec ad = gather(gdyn);
    Vec fdd(td.size());
    for (Eigen::Index i = 0; i < td.size(); ++i) {
      const double h = 1e-6 * std::max(1.0, std::abs(td[i]));
      Vec t = td;
      t[i] += h;
      scatter(dyn, t);
      const double fp = evaluate_batch(m, c, d, b, nullptr).total;
      t[i] -= 2 * h;
      scatter(dyn, t);
      const double fm = evaluate_batch(m, c, d, b, nullptr).total;
      fdd[i] = (fp - fm) / (2 * h);
    }
    scatter(dyn, td);
    CHECK(relative_error(ad, fdd) < 1e-4);
  }
}

TEST_CASE("horizon schedule") {
  const auto s = default_horizon_schedule(40);
  REQUIRE(s.size() == 4);
  CHECK(s[0].epoch == 0);
  CHECK(s[0].horizon == 2);
  CHECK(s[1].epoch == 16);
  CHECK(s[1].horizon == 5);
  CHECK(s[2].epoch == 24);
  CHECK(s[3].epoch == 32);
  CHECK(s[3].horizon == 25);
  int prev = 0;
  for (int e = 0; e < 40; ++e) {
    const int h = horizon_at(s, e);
    CHECK(h >= prev);
    prev = h;
  }
  CHECK(horizon_at(s, 7) == 2);
  CHECK(horizon_at(s, 39) == 25);
  for (int epochs : {1, 3, 5, 10, 100}) CHECK(default_horizon_schedule(epochs).back().horizon == 25);

  TrainConfig c;
  c.horizon_schedule = {{0, 5}, {3, 2}};
  CHECK_THROWS_AS(c.validate(), ContractViolation);
}

TEST_CASE("each ablation changes exactly one field") {
  const TrainConfig base = default_config(ModelFamily::oscillator, DecoderKind::keypoint_broadcast);
  CHECK(base.kl_mean_correction);
  CHECK_FALSE(default_config(ModelFamily::koopman, DecoderKind::keypoint_broadcast).kl_mean_correction);
  const auto abl = ablation_configs(base);
  REQUIRE(abl.size() == 7);
  const char* expected[] = {"excitation", "loss_weights", "beta", "loss_weights", "horizon_schedule", "damping",
                            "integration"};
  for (int i = 0; i < 7; ++i) {
    const auto diff = config_diff(base, abl[i]);
    REQUIRE(diff.size() == 1);
    CHECK(diff[0] == expected[i]);
  }
  CHECK(abl[2].beta == 0.01);
  CHECK(abl[3].loss_weights.rest == 0.0);
  CHECK(abl[4].horizon_schedule == std::vector<HorizonStage>{{0, 1}});
}

TEST_CASE("training is deterministic and zero epochs keeps the initialization") {
  const Dataset train_set = small_dataset(30);
  const Dataset val_set = small_dataset(31);
  TrainConfig c = small_config(ModelFamily::oscillator, DecoderKind::keypoint_broadcast);
  c.epochs = 0;
  const Checkpoint ck0 = train(c, train_set, val_set);
  std::mt19937_64 rng(c.seed);
  LatentModel init = init_latent_model(c, train_set.height, train_set.width, rng);
  ParamList a, b;
  init.append_params(a);
  LatentModel copy = ck0.model;
  copy.append_params(b);
  CHECK((gather(a) - gather(b)).norm() == 0.0);
  CHECK(ck0.latent_scale > 0.0);
  CHECK(ck0.reconstruction_floor > 0.0);
  CHECK(ck0.history.empty());

  c.epochs = 3;
  c.steps_per_epoch = 4;
  c.horizon_schedule = default_horizon_schedule(3);
  std::vector<EpochRecord> seen;
  const Checkpoint r1 = train(c, train_set, val_set, [&](const EpochRecord& r) { seen.push_back(r); });
  const Checkpoint r2 = train(c, train_set, val_set);
  REQUIRE(r1.history.size() == 3);
  CHECK(r1.history == r2.history);
  CHECK(seen == r1.history);
  CHECK(r1.latent_scale == r2.latent_scale);
  c.seed = 2;
  CHECK_FALSE(train(c, train_set, val_set).history == r1.history);
}

TEST_CASE("linear latent plant dataset") {
  const LinearLatentPlant plant = make_linear_latent_plant(2, 1);
  const Dataset a = generate_linear_latent_dataset(plant, 12.0, 3);
  CHECK(a.size() == 600);
  CHECK(a == generate_linear_latent_dataset(plant, 12.0, 3));
  CHECK((a.observation(0) - a.rest_observation()).norm() < 1e-6);
  CHECK(*std::min_element(a.pixels.begin(), a.pixels.end()) >= 0.0f);
  CHECK(*std::max_element(a.pixels.begin(), a.pixels.end()) <= 1.0f);
}
