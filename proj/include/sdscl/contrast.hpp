#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "sdscl/encoder.hpp"
#include "sdscl/siia.hpp"

namespace sdscl {

enum class Pooling { mean, max };

Pooling pooling_from_string(const std::string& name);
std::string to_string(Pooling p);

/// Two-layer perceptron on the channel axis (axis 1): linear -> [batch norm] -> leaky ReLU -> linear.
struct Mlp {
  Tensor w1, b1, w2, b2;
  Tensor gamma, beta;  ///< defined only with batch norm
  BatchNormState bn;

  Mlp() = default;
  Mlp(std::size_t in, std::size_t hidden, std::size_t out, bool batch_norm, Initializer& init);
  Tensor operator()(const Tensor& x, Mode mode = Mode::train);
  bool normalized() const { return gamma.defined(); }
  std::vector<NamedTensor> parameters(const std::string& prefix) const;
  std::vector<NamedTensor> buffers(const std::string& prefix) const;
};

struct ContrastConfig {
  std::size_t channels = 16;
  /// Embedding width C'; 0 means "same as channels".
  std::size_t embed_channels = 0;
  double temperature = 0.07;
  Pooling pooling = Pooling::mean;
  /// One MLP for both spatial and temporal squeezing.
  bool share_squeeze_heads = false;
  /// Batch norm between the two layers of every head MLP.
  bool head_batch_norm = true;

  std::size_t embed_width() const { return embed_channels ? embed_channels : channels; }
};

/// Squeeze heads and the temperature of the contrastive objective.
class ContrastHeads {
 public:
  ContrastHeads(const ContrastConfig& config, Initializer& init);

  /// Pool over joints then MLP: [B,C,T,N] -> [B,C',T,1].
  Tensor squeeze_spatial(const Tensor& g, Mode mode = Mode::train);
  /// Pool over frames then MLP: [B,C,T,N] -> [B,C',1,N].
  Tensor squeeze_temporal(const Tensor& h, Mode mode = Mode::train);
  /// Channel concat, pool over T and N, MLP: 4 x [B,C,T,N] -> [B,4C',1,1].
  Tensor global_embed(const Tensor& g_tra, const Tensor& g_ter, const Tensor& h_tra, const Tensor& h_ter,
                      Mode mode = Mode::train);

  double temperature() const { return config_.temperature; }
  const ContrastConfig& config() const { return config_; }
  std::vector<NamedTensor> parameters() const;
  std::vector<NamedTensor> buffers() const;

 private:
  Mlp& temporal_mlp() { return config_.share_squeeze_heads ? spatial_ : temporal_; }

  ContrastConfig config_;
  Mlp spatial_;
  Mlp temporal_;
  Mlp global_;
};

/// NT-Xent over the union of two aligned sets, per group.
///
/// `set_a` and `set_b` are [G,M,D]: G independent groups of M vectors. Within a
/// group the union has 2M vectors; vector i's positive is (i + M) mod 2M and its
/// denominator ranges over every other vector of the group, positive included.
/// Returns the mean over all 2M*G anchors. Zero-norm vectors throw DegenerateInputError.
Tensor nt_xent_union(const Tensor& set_a, const Tensor& set_b, double tau);

struct EmbeddingSets {
  Tensor u_tra_j, u_ter_j, u_tra_m, u_ter_m;  ///< [B,C',T,1]
  Tensor v_tra_j, v_ter_j, v_tra_m, v_ter_m;  ///< [B,C',1,N]
  Tensor z_j, z_m;                            ///< [B,4C',1,1]
};

EmbeddingSets embed(const SiiaOutput& joint, const SiiaOutput& motion, ContrastHeads& heads, Mode mode = Mode::train);

/// Frame-level loss: sum of the four joint/motion pairings (tra_j,tra_m), (tra_j,ter_m),
/// (ter_j,tra_m), (ter_j,ter_m); negatives are other frames of the same sequence.
Tensor stl(const EmbeddingSets& e, double tau, std::array<double, 4>* terms = nullptr);
/// Joint-level mirror of stl.
Tensor tsl(const EmbeddingSets& e, double tau, std::array<double, 4>* terms = nullptr);
/// Skeleton-level loss over the 2B union of z_j and z_m.
Tensor gl(const Tensor& z_j, const Tensor& z_m, double tau);

struct LossToggles {
  bool stl = true;
  bool tsl = true;
  bool gl = true;

  bool any() const { return stl || tsl || gl; }
};

struct LossReport {
  double stl = 0.0, tsl = 0.0, gl = 0.0, total = 0.0;
  std::array<double, 4> stl_terms{}, tsl_terms{};
};

struct TotalLoss {
  Tensor loss;
  LossReport report;
};

/// Sum of the enabled terms. Disabled terms are still evaluated for the report
/// but contribute nothing to `loss`. An empty toggle set is a ConfigError.
TotalLoss total_loss(const SiiaOutput& joint, const SiiaOutput& motion, ContrastHeads& heads,
                     const LossToggles& toggles, Mode mode = Mode::train);

}  // namespace sdscl
