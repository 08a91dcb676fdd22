#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "sdscl/ops.hpp"
#include "sdscl/tensor_io.hpp"

namespace sdscl {

/// Deterministic parameter initializer.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  Tensor uniform_fan_in(Shape shape, std::size_t fan_in);
  Tensor uniform(Shape shape, double bound);
  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

/// Maps a [B,3,T,N] skeleton tensor to [B,C,T,N] features without changing T or N.
class Encoder {
 public:
  virtual ~Encoder() = default;

  virtual Tensor encode(const Tensor& x, Mode mode) = 0;
  virtual std::size_t channels() const = 0;
  /// Trainable tensors, in a fixed order with stable names.
  virtual std::vector<NamedTensor> parameters() const = 0;
  /// Non-trainable state (batch-norm statistics).
  virtual std::vector<NamedTensor> buffers() const { return {}; }
  /// Deep copy with independent storage.
  virtual std::unique_ptr<Encoder> clone() const = 0;
};

/// Default encoder: channel lift, then `blocks` residual blocks of
/// joint mixing -> temporal conv -> batch norm -> leaky ReLU.
class MixingEncoder final : public Encoder {
 public:
  MixingEncoder(std::size_t channels, std::size_t joints, std::size_t blocks, Initializer& init);

  Tensor encode(const Tensor& x, Mode mode) override;
  std::size_t channels() const override { return channels_; }
  std::size_t joints() const { return joints_; }
  std::vector<NamedTensor> parameters() const override;
  std::vector<NamedTensor> buffers() const override;
  std::unique_ptr<Encoder> clone() const override;

  /// Pre-norm activation of block 0 (joint mixing + temporal conv); exposed for tests.
  Tensor block_preactivation(const Tensor& x, std::size_t block_index) const;

  struct Block {
    Tensor joint_mix;  ///< [N,N]
    Tensor kernel;     ///< [C,3]
    Tensor gamma, beta;
    BatchNormState bn;
  };

 private:
  MixingEncoder() = default;

  std::size_t channels_ = 0;
  std::size_t joints_ = 0;
  Tensor lift_weight_;  // [C,3]
  Tensor lift_bias_;    // [C]
  std::vector<Block> blocks_;
};

/// Trivial encoder: a learnable 3 -> C channel lift and nothing else.
class LinearLiftEncoder final : public Encoder {
 public:
  LinearLiftEncoder(std::size_t channels, Initializer& init);

  Tensor encode(const Tensor& x, Mode mode) override;
  std::size_t channels() const override { return channels_; }
  std::vector<NamedTensor> parameters() const override;
  std::unique_ptr<Encoder> clone() const override;

 private:
  LinearLiftEncoder() = default;

  std::size_t channels_ = 0;
  Tensor weight_;
  Tensor bias_;
};

enum class EncoderKind { mixing, linear_lift };

EncoderKind encoder_kind_from_string(const std::string& name);
std::string to_string(EncoderKind kind);

std::unique_ptr<Encoder> make_encoder(EncoderKind kind, std::size_t channels, std::size_t joints, std::size_t blocks,
                                      Initializer& init);

/// Prefixes every name with `prefix` + '.'.
std::vector<NamedTensor> prefixed(const std::string& prefix, std::vector<NamedTensor> tensors);

}  // namespace sdscl
