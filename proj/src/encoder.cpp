#include "sdscl/encoder.hpp"

#include <cmath>

#include "sdscl/errors.hpp"

namespace sdscl {

Tensor Initializer::uniform(Shape shape, double bound) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng_);
  return Tensor::from_values(std::move(shape), std::move(v), true);
}

Tensor Initializer::uniform_fan_in(Shape shape, std::size_t fan_in) {
  return uniform(std::move(shape), 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

namespace {

void require_skeleton(const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != 3) {
    throw DimensionError("encoder: expected [B,3,T,N] input, got " + shape_to_string(x.shape()));
  }
}

BatchNormState clone_state(const BatchNormState& s) {
  BatchNormState out;
  out.running_mean = s.running_mean.clone();
  out.running_var = s.running_var.clone();
  out.tracked = s.tracked.clone();
  out.momentum = s.momentum;
  out.eps = s.eps;
  return out;
}

}  // namespace

MixingEncoder::MixingEncoder(std::size_t channels, std::size_t joints, std::size_t blocks, Initializer& init)
    : channels_(channels), joints_(joints) {
  if (channels == 0 || joints == 0) throw ArgumentError("MixingEncoder: channels and joints must be positive");
  lift_weight_ = init.uniform_fan_in({channels, 3}, 3);
  lift_bias_ = Tensor::zeros({channels}, true);
  for (std::size_t l = 0; l < blocks; ++l) {
    Block b;
    // Near-identity mixing and a centered kernel keep early training stable.
    b.joint_mix = init.uniform({joints, joints}, 0.5 / std::sqrt(static_cast<double>(joints)));
    for (std::size_t n = 0; n < joints; ++n) b.joint_mix.mutable_values()[n * joints + n] += 1.0;
    b.kernel = init.uniform({channels, 3}, 0.5);
    for (std::size_t c = 0; c < channels; ++c) b.kernel.mutable_values()[c * 3 + 1] += 0.5;
    b.gamma = Tensor::full({channels}, 1.0, true);
    b.beta = Tensor::zeros({channels}, true);
    b.bn = BatchNormState(channels);
    blocks_.push_back(std::move(b));
  }
}

Tensor MixingEncoder::block_preactivation(const Tensor& x, std::size_t block_index) const {
  const auto& b = blocks_.at(block_index);
  return conv1d_temporal(linear(x, b.joint_mix, Tensor{}, 3), b.kernel);
}

Tensor MixingEncoder::encode(const Tensor& x, Mode mode) {
  require_skeleton(x);
  if (x.dim(3) != joints_) {
    throw DimensionError("encoder: built for " + std::to_string(joints_) + " joints, input is " +
                         shape_to_string(x.shape()));
  }
  Tensor h = linear(x, lift_weight_, lift_bias_, 1);
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    auto& b = blocks_[l];
    Tensor y = batch_norm(block_preactivation(h, l), b.gamma, b.beta, b.bn, mode);
    h = add(leaky_relu(y), h);
  }
  return h;
}

std::vector<NamedTensor> MixingEncoder::parameters() const {
  std::vector<NamedTensor> out{{"lift.weight", lift_weight_}, {"lift.bias", lift_bias_}};
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const auto p = "block" + std::to_string(l) + ".";
    const auto& b = blocks_[l];
    out.push_back({p + "joint_mix", b.joint_mix});
    out.push_back({p + "kernel", b.kernel});
    out.push_back({p + "bn.gamma", b.gamma});
    out.push_back({p + "bn.beta", b.beta});
  }
  return out;
}

std::vector<NamedTensor> MixingEncoder::buffers() const {
  std::vector<NamedTensor> out;
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const auto p = "block" + std::to_string(l) + ".bn.";
    const auto& b = blocks_[l];
    out.push_back({p + "running_mean", b.bn.running_mean});
    out.push_back({p + "running_var", b.bn.running_var});
    out.push_back({p + "tracked", b.bn.tracked});
  }
  return out;
}

std::unique_ptr<Encoder> MixingEncoder::clone() const {
  std::unique_ptr<MixingEncoder> out(new MixingEncoder());
  out->channels_ = channels_;
  out->joints_ = joints_;
  out->lift_weight_ = lift_weight_.clone(lift_weight_.requires_grad());
  out->lift_bias_ = lift_bias_.clone(lift_bias_.requires_grad());
  for (const auto& b : blocks_) {
    Block c;
    c.joint_mix = b.joint_mix.clone(b.joint_mix.requires_grad());
    c.kernel = b.kernel.clone(b.kernel.requires_grad());
    c.gamma = b.gamma.clone(b.gamma.requires_grad());
    c.beta = b.beta.clone(b.beta.requires_grad());
    c.bn = clone_state(b.bn);
    out->blocks_.push_back(std::move(c));
  }
  return out;
}

LinearLiftEncoder::LinearLiftEncoder(std::size_t channels, Initializer& init) : channels_(channels) {
  if (channels == 0) throw ArgumentError("LinearLiftEncoder: channels must be positive");
  weight_ = init.uniform_fan_in({channels, 3}, 3);
  bias_ = Tensor::zeros({channels}, true);
}

Tensor LinearLiftEncoder::encode(const Tensor& x, Mode) {
  require_skeleton(x);
  return linear(x, weight_, bias_, 1);
}

std::vector<NamedTensor> LinearLiftEncoder::parameters() const {
  return {{"lift.weight", weight_}, {"lift.bias", bias_}};
}

std::unique_ptr<Encoder> LinearLiftEncoder::clone() const {
  std::unique_ptr<LinearLiftEncoder> out(new LinearLiftEncoder());
  out->channels_ = channels_;
  out->weight_ = weight_.clone(weight_.requires_grad());
  out->bias_ = bias_.clone(bias_.requires_grad());
  return out;
}

EncoderKind encoder_kind_from_string(const std::string& name) {
  if (name == "mixing") return EncoderKind::mixing;
  if (name == "linear_lift") return EncoderKind::linear_lift;
  throw ArgumentError("unknown encoder '" + name + "' (expected mixing|linear_lift)");
}

std::string to_string(EncoderKind kind) { return kind == EncoderKind::mixing ? "mixing" : "linear_lift"; }

std::unique_ptr<Encoder> make_encoder(EncoderKind kind, std::size_t channels, std::size_t joints, std::size_t blocks,
                                      Initializer& init) {
  if (kind == EncoderKind::linear_lift) return std::make_unique<LinearLiftEncoder>(channels, init);
  return std::make_unique<MixingEncoder>(channels, joints, blocks, init);
}

std::vector<NamedTensor> prefixed(const std::string& prefix, std::vector<NamedTensor> tensors) {
  for (auto& t : tensors) t.name = prefix + "." + t.name;
  return tensors;
}

}  // namespace sdscl
