#include "vonctl/nn.hpp"

#include <cmath>
#include <numbers>

#include "vonctl/error.hpp"

namespace vonctl {

Eigen::Index total_size(const ParamList& params) {
  Eigen::Index n = 0;
  for (const auto& p : params) n += p.size;
  return n;
}

Vec gather(const ParamList& params) {
  Vec flat(total_size(params));
  Eigen::Index offset = 0;
  for (const auto& p : params) {
    flat.segment(offset, p.size) = Eigen::Map<const Vec>(p.data, p.size);
    offset += p.size;
  }
  return flat;
}

void scatter(const ParamList& params, const Vec& flat) {
  if (flat.size() != total_size(params)) throw ContractViolation("scatter: size mismatch");
  Eigen::Index offset = 0;
  for (const auto& p : params) {
    Eigen::Map<Vec>(p.data, p.size) = flat.segment(offset, p.size);
    offset += p.size;
  }
}

Mlp::Mlp(const std::vector<int>& sizes, std::mt19937_64& rng, double output_gain) {
  if (sizes.size() < 2) throw ContractViolation("Mlp needs at least input and output sizes");
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const int fan_in = sizes[l];
    const int fan_out = sizes[l + 1];
    double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    if (l + 2 == sizes.size()) scale *= output_gain;
    Mat w(fan_out, fan_in);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = scale * normal(rng);
    weights.push_back(std::move(w));
    biases.push_back(Vec::Zero(fan_out));
  }
}

Mlp Mlp::zeros_like(const Mlp& other) {
  Mlp z;
  for (const auto& w : other.weights) z.weights.push_back(Mat::Zero(w.rows(), w.cols()));
  for (const auto& b : other.biases) z.biases.push_back(Vec::Zero(b.size()));
  return z;
}

Mat Mlp::forward(const Mat& x) const {
  Mat h = x;
  for (int l = 0; l < num_layers(); ++l) {
    Mat a = weights[l] * h;
    a.colwise() += biases[l];
    if (l + 1 < num_layers())
      h = a.array().tanh().matrix();
    else
      h = std::move(a);
  }
  return h;
}

Mat Mlp::forward(const Mat& x, Cache& cache) const {
  cache.activations.resize(num_layers());
  cache.activations[0] = x;
  Mat out;
  for (int l = 0; l < num_layers(); ++l) {
    Mat a = weights[l] * cache.activations[l];
    a.colwise() += biases[l];
    if (l + 1 < num_layers())
      cache.activations[l + 1] = a.array().tanh().matrix();
    else
      out = std::move(a);
  }
  return out;
}

Mat Mlp::backward(const Cache& cache, const Mat& grad_out, Mlp& grad, bool want_input) const {
  Mat g = grad_out;
  for (int l = num_layers() - 1; l >= 0; --l) {
    const Mat& input = cache.activations[l];
    grad.weights[l].noalias() += g * input.transpose();
    grad.biases[l] += g.rowwise().sum();
    if (l == 0 && !want_input) return Mat();
    Mat gin = weights[l].transpose() * g;
    if (l > 0) gin.array() *= 1.0 - input.array().square();
    g = std::move(gin);
  }
  return g;
}

Mat Mlp::forward_tangent(const Mat& x, const Mat& v, TangentCache& cache, Mat& out_tangent) const {
  cache.activations.resize(num_layers());
  cache.tangents.resize(num_layers());
  cache.pre_tangents.resize(num_layers());
  cache.activations[0] = x;
  cache.tangents[0] = v;
  Mat out;
  for (int l = 0; l < num_layers(); ++l) {
    Mat a = weights[l] * cache.activations[l];
    a.colwise() += biases[l];
    Mat da = weights[l] * cache.tangents[l];
    if (l + 1 < num_layers()) {
      Mat h = a.array().tanh().matrix();
      cache.tangents[l + 1] = (da.array() * (1.0 - h.array().square())).matrix();
      cache.activations[l + 1] = std::move(h);
      cache.pre_tangents[l + 1] = std::move(da);
    } else {
      out = std::move(a);
      out_tangent = std::move(da);
    }
  }
  return out;
}

void Mlp::backward_tangent(const TangentCache& cache, const Mat& grad_out, const Mat& grad_tangent,
                           Mlp& grad) const {
  // g: cotangent on the pre-activation a_l, gd: cotangent on its tangent.
  Mat g = grad_out;
  Mat gd = grad_tangent;
  for (int l = num_layers() - 1; l >= 0; --l) {
    const Mat& h = cache.activations[l];
    const Mat& dh = cache.tangents[l];
    grad.weights[l].noalias() += g * h.transpose();
    grad.weights[l].noalias() += gd * dh.transpose();
    grad.biases[l] += g.rowwise().sum();
    if (l == 0) return;
    Mat gh = weights[l].transpose() * g;
    Mat gdh = weights[l].transpose() * gd;
    // h = tanh(a), dh = (1 - h^2) da
    const auto s = 1.0 - h.array().square();
    Mat gda = (gdh.array() * s).matrix();
    gh.array() -= 2.0 * gdh.array() * cache.pre_tangents[l].array() * h.array();
    g = (gh.array() * s).matrix();
    gd = std::move(gda);
  }
}

void Mlp::append_params(const std::string& prefix, ParamList& out) {
  for (int l = 0; l < num_layers(); ++l) {
    out.push_back({prefix + ".W" + std::to_string(l), weights[l].data(), weights[l].size()});
    out.push_back({prefix + ".b" + std::to_string(l), biases[l].data(), biases[l].size()});
  }
}

void Mlp::add_scaled(const Mlp& other, double scale) {
  for (int l = 0; l < num_layers(); ++l) {
    weights[l] += scale * other.weights[l];
    biases[l] += scale * other.biases[l];
  }
}

Adam::Adam(Eigen::Index n, double beta1, double beta2, double eps)
    : m_(Vec::Zero(n)), v_(Vec::Zero(n)), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(Vec& params, const Vec& grad, double lr) {
  if (grad.size() != m_.size() || params.size() != m_.size()) throw ContractViolation("Adam: size mismatch");
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  params.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

double cosine_decay(double lr, long k, long n, double floor_fraction) {
  if (n <= 0) return lr;
  const double frac = std::min(1.0, static_cast<double>(k) / static_cast<double>(n));
  const double c = 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
  return lr * (floor_fraction + (1.0 - floor_fraction) * c);
}

}  // namespace vonctl
