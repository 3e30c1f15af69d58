#include "vonctl/autoencoder.hpp"

#include <cmath>

#include "vonctl/error.hpp"

namespace vonctl {

using RowImage = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// ---------------------------------------------------------------------------
// Encoder

Encoder Encoder::make(int pixels, int latent_dim, const std::vector<int>& hidden, std::mt19937_64& rng) {
  std::vector<int> sizes{pixels};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(2 * latent_dim);
  Encoder enc;
  enc.latent_dim = latent_dim;
  enc.net = Mlp(sizes, rng, 1.0);
  // Start with a small posterior spread.
  enc.net.weights.back().bottomRows(latent_dim) *= 0.1;
  enc.net.biases.back().tail(latent_dim).setConstant(-4.0);
  return enc;
}

Encoder Encoder::zeros_like(const Encoder& other) {
  Encoder z;
  z.latent_dim = other.latent_dim;
  z.net = Mlp::zeros_like(other.net);
  return z;
}

Encoder::Output Encoder::forward(const Mat& obs) const {
  const Mat y = net.forward(obs);
  return {y.topRows(latent_dim), y.bottomRows(latent_dim)};
}

Vec Encoder::mean(const Observation& obs) const {
  if (obs.size() != net.input_dim()) throw ContractViolation("observation size does not match the encoder");
  return net.forward(obs).col(0).head(latent_dim);
}

void Encoder::append_params(const std::string& prefix, ParamList& out) { net.append_params(prefix, out); }

Encoding encode(const Observation& obs, const Encoder& enc, EncodeMode mode, std::mt19937_64* rng) {
  if (obs.size() != enc.net.input_dim()) throw ContractViolation("observation size does not match the encoder");
  const Vec y = enc.net.forward(obs).col(0);
  Encoding out{Vec(), y.head(enc.latent_dim), y.tail(enc.latent_dim)};
  out.z = out.mu;
  if (mode == EncodeMode::sample) {
    if (rng == nullptr) throw ContractViolation("sample mode needs a random generator");
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index j = 0; j < out.z.size(); ++j) out.z[j] += std::exp(0.5 * out.logvar[j]) * normal(*rng);
  }
  return out;
}

Vec latent_velocity(const Observation& o_prev, const Observation& o, const Observation& o_next, const Encoder& enc,
                    double dt) {
  if (o_prev.size() != o.size() || o_next.size() != o.size())
    throw ContractViolation("latent_velocity: frame sizes differ");
  const Vec v = (o_next - o_prev) / (2.0 * dt);
  Mlp::TangentCache cache;
  Mat jv;
  enc.net.forward_tangent(o, v, cache, jv);
  return jv.col(0).head(enc.latent_dim);
}

// ---------------------------------------------------------------------------
// Keypoint decoder

Eigen::Vector2d KeypointDecoder::blob_position(const Vec& z, int k) const {
  return affine * z.segment<2>(2 * k) + offset;
}

namespace {

struct Profiles {
  Vec gx, gy;  // Gaussian profiles along columns (x) and rows (y)
  Vec dx, dy;  // pixel coordinate minus component centre
};

Profiles component_profiles(const KeypointDecoder& d, const Eigen::Vector2d& centre, double width) {
  Profiles p;
  p.dx = Vec::LinSpaced(d.width, 0.0, d.width - 1.0).array() - centre.x();
  p.dy = Vec::LinSpaced(d.height, 0.0, d.height - 1.0).array() - centre.y();
  const double inv = 1.0 / (2.0 * width * width);
  p.gx = (-p.dx.array().square() * inv).exp();
  p.gy = (-p.dy.array().square() * inv).exp();
  return p;
}

void add_stamp(const KeypointDecoder& d, const Vec& z, int k, Eigen::Ref<RowImage> logits) {
  const Eigen::Vector2d pos = d.blob_position(z, k);
  for (int r = 0; r < d.components(); ++r) {
    const Eigen::Vector2d centre = pos + Eigen::Vector2d(d.offset_x(r, k), d.offset_y(r, k));
    const Profiles p = component_profiles(d, centre, std::exp(d.log_width(r, k)));
    logits.noalias() += d.amplitude(r, k) * p.gy * p.gx.transpose();
  }
}

Mat keypoint_forward(const KeypointDecoder& d, const Mat& z) {
  const int pixels = d.height * d.width;
  Mat out(pixels, z.cols());
  RowImage logits(d.height, d.width);
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    logits = Eigen::Map<const RowImage>(d.background.data(), d.height, d.width);
    const Vec zc = z.col(c);
    for (int k = 0; k < d.blobs(); ++k) add_stamp(d, zc, k, logits);
    out.col(c) = Eigen::Map<const Vec>(logits.data(), pixels).unaryExpr([](double x) { return sigmoid(x); });
  }
  return out;
}

Mat keypoint_backward(const KeypointDecoder& d, const Mat& z, const Mat& out, const Mat& grad_out,
                      KeypointDecoder& grad) {
  const int pixels = d.height * d.width;
  Mat gz = Mat::Zero(z.rows(), z.cols());
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    const Vec gl = grad_out.col(c).array() * out.col(c).array() * (1.0 - out.col(c).array());
    grad.background += gl;
    const Eigen::Map<const RowImage> G(gl.data(), d.height, d.width);
    const Vec zc = z.col(c);
    for (int k = 0; k < d.blobs(); ++k) {
      const Eigen::Vector2d pos = d.blob_position(zc, k);
      Eigen::Vector2d gpos = Eigen::Vector2d::Zero();
      for (int r = 0; r < d.components(); ++r) {
        const double amp = d.amplitude(r, k);
        const double s = std::exp(d.log_width(r, k));
        const double s2 = s * s;
        const Eigen::Vector2d centre = pos + Eigen::Vector2d(d.offset_x(r, k), d.offset_y(r, k));
        const Profiles p = component_profiles(d, centre, s);
        const Vec a = G * p.gx;  // per-row sums weighted by gx
        const Vec vx = p.gx.cwiseProduct(p.dx);
        const Vec b = G * vx;
        const Vec vxx = vx.cwiseProduct(p.dx);
        const Vec gy_dy = p.gy.cwiseProduct(p.dy);
        const double g_amp = p.gy.dot(a);
        const double g_cx = amp * p.gy.dot(b) / s2;
        const double g_cy = amp * gy_dy.dot(a) / s2;
        const double g_s = amp * (p.gy.dot(G * vxx) + gy_dy.cwiseProduct(p.dy).dot(a)) / (s2 * s);
        grad.amplitude(r, k) += g_amp;
        grad.offset_x(r, k) += g_cx;
        grad.offset_y(r, k) += g_cy;
        grad.log_width(r, k) += g_s * s;
        gpos += Eigen::Vector2d(g_cx, g_cy);
      }
      grad.offset += gpos;
      grad.affine += gpos * zc.segment<2>(2 * k).transpose();
      gz.col(c).segment<2>(2 * k) += d.affine.transpose() * gpos;
    }
  }
  (void)pixels;
  return gz;
}

}  // namespace

Vec KeypointDecoder::blob_stamp(const Vec& z, int k) const {
  RowImage logits = RowImage::Zero(height, width);
  add_stamp(*this, z, k, logits);
  return Eigen::Map<const Vec>(logits.data(), height * width);
}

// ---------------------------------------------------------------------------
// Decoder

Decoder Decoder::make_dense(int latent_dim, int pixels, const std::vector<int>& hidden, std::mt19937_64& rng) {
  std::vector<int> sizes{latent_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(pixels);
  Decoder d;
  d.kind = DecoderKind::dense;
  d.dense.net = Mlp(sizes, rng, 1.0);
  d.dense.net.biases.back().setConstant(-3.0);
  return d;
}

Decoder Decoder::make_keypoint(int latent_dim, int height, int width, int components, std::mt19937_64& rng) {
  if (latent_dim % 2 != 0) throw ContractViolation("keypoint decoder needs an even latent dimension");
  const int blobs = latent_dim / 2;
  Decoder d;
  d.kind = DecoderKind::keypoint_broadcast;
  KeypointDecoder& k = d.keypoint;
  k.height = height;
  k.width = width;
  k.affine = 3.0 * Eigen::Matrix2d::Identity();
  k.offset = Eigen::Vector2d(0.5 * (width - 1), 0.45 * height);
  k.amplitude = Mat::Constant(components, blobs, 3.0);
  k.offset_x = Mat(components, blobs);
  k.offset_y = Mat(components, blobs);
  k.log_width = Mat::Constant(components, blobs, std::log(1.5));
  std::normal_distribution<double> jitter(0.0, 1.0);
  for (int b = 0; b < blobs; ++b) {
    // Spread the blobs along the vertical axis so they start on distinct image regions.
    const double along = blobs > 1 ? (b - 0.5 * (blobs - 1)) * 0.5 * height / blobs : 0.0;
    for (int r = 0; r < components; ++r) {
      k.offset_x(r, b) = jitter(rng);
      k.offset_y(r, b) = along + jitter(rng);
    }
  }
  k.background = Vec::Constant(height * width, -3.0);
  return d;
}

Decoder Decoder::zeros_like(const Decoder& other) {
  Decoder z = other;
  if (other.kind == DecoderKind::dense) {
    z.dense.net = Mlp::zeros_like(other.dense.net);
  } else {
    KeypointDecoder& k = z.keypoint;
    k.affine.setZero();
    k.offset.setZero();
    k.amplitude.setZero();
    k.offset_x.setZero();
    k.offset_y.setZero();
    k.log_width.setZero();
    k.background.setZero();
  }
  return z;
}

int Decoder::latent_dim() const {
  return kind == DecoderKind::dense ? dense.net.input_dim() : 2 * keypoint.blobs();
}

int Decoder::pixels() const {
  return kind == DecoderKind::dense ? dense.net.output_dim() : keypoint.height * keypoint.width;
}

Mat Decoder::forward(const Mat& z) const {
  if (z.rows() != latent_dim()) throw ContractViolation("decoder: latent dimension mismatch");
  if (kind == DecoderKind::keypoint_broadcast) return keypoint_forward(keypoint, z);
  return dense.net.forward(z).unaryExpr([](double x) { return sigmoid(x); });
}

Mat Decoder::forward(const Mat& z, Cache& cache) const {
  if (z.rows() != latent_dim()) throw ContractViolation("decoder: latent dimension mismatch");
  cache.z = z;
  if (kind == DecoderKind::keypoint_broadcast)
    cache.out = keypoint_forward(keypoint, z);
  else
    cache.out = dense.net.forward(z, cache.mlp).unaryExpr([](double x) { return sigmoid(x); });
  return cache.out;
}

Mat Decoder::backward(const Cache& cache, const Mat& grad_out, Decoder& grad) const {
  if (kind == DecoderKind::keypoint_broadcast)
    return keypoint_backward(keypoint, cache.z, cache.out, grad_out, grad.keypoint);
  const Mat glogit = (grad_out.array() * cache.out.array() * (1.0 - cache.out.array())).matrix();
  return dense.net.backward(cache.mlp, glogit, grad.dense.net, true);
}

void Decoder::append_params(const std::string& prefix, ParamList& out) {
  if (kind == DecoderKind::dense) {
    dense.net.append_params(prefix, out);
    return;
  }
  KeypointDecoder& k = keypoint;
  out.push_back({prefix + ".affine", k.affine.data(), 4});
  out.push_back({prefix + ".offset", k.offset.data(), 2});
  out.push_back({prefix + ".amplitude", k.amplitude.data(), k.amplitude.size()});
  out.push_back({prefix + ".offset_x", k.offset_x.data(), k.offset_x.size()});
  out.push_back({prefix + ".offset_y", k.offset_y.data(), k.offset_y.size()});
  out.push_back({prefix + ".log_width", k.log_width.data(), k.log_width.size()});
  out.push_back({prefix + ".background", k.background.data(), k.background.size()});
}

std::string to_string(DecoderKind kind) {
  return kind == DecoderKind::dense ? "dense" : "keypoint_broadcast";
}

DecoderKind decoder_kind_from_string(const std::string& s) {
  if (s == "dense") return DecoderKind::dense;
  if (s == "keypoint_broadcast" || s == "keypoint") return DecoderKind::keypoint_broadcast;
  throw ContractViolation("unknown decoder kind '" + s + "'");
}

}  // namespace vonctl
