#include <doctest.h>

#include "test_support.hpp"
#include "vonctl/error.hpp"
#include "vonctl/nn.hpp"

using namespace vonctl;
using namespace vonctl::testing;

namespace {

double weighted_output(const Mlp& net, const Mat& x, const Mat& wy) { return (net.forward(x).array() * wy.array()).sum(); }

}  // namespace

TEST_CASE("mlp backward matches finite differences") {
  std::mt19937_64 rng(3);
  Mlp net({5, 7, 6, 3}, rng);
  const Mat x = random_matrix(5, 4, rng);
  const Mat wy = random_matrix(3, 4, rng);

  Mlp::Cache cache;
  net.forward(x, cache);
  Mlp grad = Mlp::zeros_like(net);
  const Mat gx = net.backward(cache, wy, grad, true);

  ParamList params;
  net.append_params("net", params);
  ParamList grads;
  grad.append_params("net", grads);
  const Vec theta = gather(params);
  const Vec analytic = gather(grads);
  Mlp probe = net;
  ParamList probe_params;
  probe.append_params("net", probe_params);
  const Vec numeric = central_difference(
      [&](const Vec& t) {
        scatter(probe_params, t);
        return weighted_output(probe, x, wy);
      },
      theta);
  CHECK(relative_error(analytic, numeric) < 1e-7);

  const Vec xflat = Eigen::Map<const Vec>(x.data(), x.size());
  const Vec gx_numeric = central_difference(
      [&](const Vec& xf) { return weighted_output(net, Eigen::Map<const Mat>(xf.data(), 5, 4), wy); }, xflat);
  CHECK(relative_error(Eigen::Map<const Vec>(gx.data(), gx.size()), gx_numeric) < 1e-7);
}

TEST_CASE("forward tangent is the exact directional derivative") {
  std::mt19937_64 rng(5);
  Mlp net({6, 8, 8, 4}, rng);
  const Mat x = random_matrix(6, 3, rng);
  const Mat v = random_matrix(6, 3, rng);
  Mlp::TangentCache cache;
  Mat jv;
  const Mat y = net.forward_tangent(x, v, cache, jv);
  CHECK((y - net.forward(x)).norm() < 1e-14);
  const double h = 1e-5;
  const Mat fd = (net.forward(x + h * v) - net.forward(x - h * v)) / (2 * h);
  CHECK((fd - jv).norm() / jv.norm() < 1e-8);
}

TEST_CASE("backward through the tangent matches finite differences") {
  std::mt19937_64 rng(7);
  Mlp net({5, 6, 6, 4}, rng);
  const Mat x = random_matrix(5, 3, rng);
  const Mat v = random_matrix(5, 3, rng);
  const Mat wy = random_matrix(4, 3, rng);
  const Mat wt = random_matrix(4, 3, rng);
  auto loss = [&](const Mlp& n) {
    Mlp::TangentCache c;
    Mat jv;
    const Mat y = n.forward_tangent(x, v, c, jv);
    return (y.array() * wy.array()).sum() + (jv.array() * wt.array()).sum();
  };
  Mlp::TangentCache cache;
  Mat jv;
  net.forward_tangent(x, v, cache, jv);
  Mlp grad = Mlp::zeros_like(net);
  net.backward_tangent(cache, wy, wt, grad);

  ParamList grads;
  grad.append_params("g", grads);
  Mlp probe = net;
  ParamList probe_params;
  probe.append_params("p", probe_params);
  const Vec numeric = central_difference(
      [&](const Vec& t) {
        scatter(probe_params, t);
        return loss(probe);
      },
      gather(probe_params));
  CHECK(relative_error(gather(grads), numeric) < 1e-7);
}

TEST_CASE("adam minimizes a quadratic") {
  Vec x = Vec::Constant(3, 5.0);
  const Vec target(Eigen::Vector3d(1.0, -2.0, 0.5));
  Adam adam(3);
  for (int i = 0; i < 2000; ++i) adam.step(x, 2.0 * (x - target), 0.05);
  CHECK((x - target).norm() < 1e-3);
}

TEST_CASE("gather and scatter are inverse") {
  std::mt19937_64 rng(1);
  Mlp net({3, 4, 2}, rng);
  ParamList params;
  net.append_params("n", params);
  const Vec flat = gather(params);
  CHECK(flat.size() == 3 * 4 + 4 + 4 * 2 + 2);
  scatter(params, 2.0 * flat);
  CHECK((gather(params) - 2.0 * flat).norm() == 0.0);
  CHECK_THROWS_AS(scatter(params, Vec::Zero(3)), ContractViolation);
}

TEST_CASE("cosine decay endpoints") {
  CHECK(cosine_decay(1.0, 0, 100) == doctest::Approx(1.0));
  CHECK(cosine_decay(1.0, 50, 100) == doctest::Approx(0.5));
  CHECK(cosine_decay(1.0, 100, 100) == doctest::Approx(0.0));
  CHECK(cosine_decay(1.0, 100, 100, 0.1) == doctest::Approx(0.1));
}
