#pragma once

#include <Eigen/Dense>

#include <random>
#include <string>
#include <vector>

#include "vonctl/nn.hpp"
#include "vonctl/plant.hpp"

namespace vonctl {

/// Dense observation -> (mu, log variance) network.
struct Encoder {
  Mlp net;
  int latent_dim = 6;

  static Encoder make(int pixels, int latent_dim, const std::vector<int>& hidden, std::mt19937_64& rng);
  static Encoder zeros_like(const Encoder& other);

  struct Output {
    Mat mu;
    Mat logvar;
  };
  Output forward(const Mat& obs) const;
  Vec mean(const Observation& obs) const;
  void append_params(const std::string& prefix, ParamList& out);
};

enum class EncodeMode { sample, mean };

struct Encoding {
  Vec z;
  Vec mu;
  Vec logvar;
};

/// Sample mode draws z = mu + sigma * eps from `rng`; mean mode returns mu.
Encoding encode(const Observation& obs, const Encoder& enc, EncodeMode mode, std::mt19937_64* rng = nullptr);

/// J_phi(o) (o_next - o_prev) / (2 dt), evaluated as an exact directional derivative.
Vec latent_velocity(const Observation& o_prev, const Observation& o, const Observation& o_next, const Encoder& enc,
                    double dt = kControlDt);

enum class DecoderKind { dense, keypoint_broadcast };

/// Each 2-D latent pair places one blob template at affine(z_pair); the
/// stamps are summed on a learned background and squashed by a sigmoid.
struct KeypointDecoder {
  int height = 32;
  int width = 32;
  Eigen::Matrix2d affine = Eigen::Matrix2d::Identity();  // pixels per latent unit
  Eigen::Vector2d offset = Eigen::Vector2d::Zero();      // (x, y) pixel position of z = 0
  Mat amplitude;  // components x blobs
  Mat offset_x;   // component centre relative to the blob position
  Mat offset_y;
  Mat log_width;
  Vec background;  // logits, height * width

  int blobs() const { return static_cast<int>(amplitude.cols()); }
  int components() const { return static_cast<int>(amplitude.rows()); }
  Eigen::Vector2d blob_position(const Vec& z, int k) const;
  /// Logit contribution of blob k alone (row-major image).
  Vec blob_stamp(const Vec& z, int k) const;
};

struct DenseDecoder {
  Mlp net;
};

struct Decoder {
  DecoderKind kind = DecoderKind::keypoint_broadcast;
  DenseDecoder dense;
  KeypointDecoder keypoint;

  static Decoder make_dense(int latent_dim, int pixels, const std::vector<int>& hidden, std::mt19937_64& rng);
  static Decoder make_keypoint(int latent_dim, int height, int width, int components, std::mt19937_64& rng);
  static Decoder zeros_like(const Decoder& other);

  int latent_dim() const;
  int pixels() const;

  struct Cache {
    Mat z;
    Mat out;
    Mlp::Cache mlp;
  };
  Mat forward(const Mat& z) const;
  Mat forward(const Mat& z, Cache& cache) const;
  Observation decode(const Vec& z) const { return forward(z).col(0); }
  /// Cotangent on the output pixels -> cotangent on z; accumulates parameters into grad.
  Mat backward(const Cache& cache, const Mat& grad_out, Decoder& grad) const;
  void append_params(const std::string& prefix, ParamList& out);
};

std::string to_string(DecoderKind kind);
DecoderKind decoder_kind_from_string(const std::string& s);

}  // namespace vonctl
