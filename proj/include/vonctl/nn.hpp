#pragma once

#include <Eigen/Dense>

#include <random>
#include <string>
#include <vector>

namespace vonctl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Non-owning view of one parameter tensor, flattened in storage order.
struct ParamView {
  std::string name;
  double* data;
  Eigen::Index size;
};
using ParamList = std::vector<ParamView>;

Eigen::Index total_size(const ParamList& params);
Vec gather(const ParamList& params);
void scatter(const ParamList& params, const Vec& flat);

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double inverse_softplus(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }

/// Dense feed-forward network: tanh hidden layers, affine output layer.
///
/// Inputs and outputs are column-batched (one sample per column). Besides
/// the usual forward/backward pair, the network supports a forward-mode
/// directional derivative (`forward_tangent`) and the reverse pass through
/// that derivative (`backward_tangent`), which training needs to
/// differentiate encoder-Jacobian velocities.
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::vector<int>& sizes, std::mt19937_64& rng, double output_gain = 1.0);

  /// Same shapes, all parameters zero. Used as a gradient accumulator.
  static Mlp zeros_like(const Mlp& other);

  int input_dim() const { return static_cast<int>(weights.front().cols()); }
  int output_dim() const { return static_cast<int>(weights.back().rows()); }
  int num_layers() const { return static_cast<int>(weights.size()); }
  bool empty() const { return weights.empty(); }

  struct Cache {
    // activations[0] is the input, activations[l] the tanh output of hidden layer l.
    std::vector<Mat> activations;
  };
  struct TangentCache {
    std::vector<Mat> activations;
    std::vector<Mat> tangents;
    std::vector<Mat> pre_tangents;  // tangent of the pre-activation feeding activations[l]
  };

  Mat forward(const Mat& x) const;
  Mat forward(const Mat& x, Cache& cache) const;

  /// Accumulates parameter gradients into `grad`. Returns the input cotangent
  /// (empty matrix when `want_input` is false).
  Mat backward(const Cache& cache, const Mat& grad_out, Mlp& grad, bool want_input = true) const;

  /// Returns y = f(x) and writes J_f(x) v into `out_tangent`.
  Mat forward_tangent(const Mat& x, const Mat& v, TangentCache& cache, Mat& out_tangent) const;

  /// Reverse pass for the pair (y, J v) given cotangents on both. The input
  /// and its tangent are treated as constants.
  void backward_tangent(const TangentCache& cache, const Mat& grad_out, const Mat& grad_tangent, Mlp& grad) const;

  void append_params(const std::string& prefix, ParamList& out);

  void add_scaled(const Mlp& other, double scale);

  std::vector<Mat> weights;
  std::vector<Vec> biases;
};

/// Adaptive-moment optimizer over a flat parameter vector.
class Adam {
 public:
  explicit Adam(Eigen::Index n, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(Vec& params, const Vec& grad, double lr);
  long iterations() const { return t_; }

 private:
  Vec m_;
  Vec v_;
  double beta1_;
  double beta2_;
  double eps_;
  long t_ = 0;
};

/// lr * 0.5 * (1 + cos(pi * k / n)), with a floor of `floor_fraction * lr`.
double cosine_decay(double lr, long k, long n, double floor_fraction = 0.0);

}  // namespace vonctl
