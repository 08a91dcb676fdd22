#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sdscl/encoder.hpp"
#include "sdscl/ops.hpp"
#include "sdscl/tensor_io.hpp"

namespace sdscl {

enum class Modality { joint, motion };

Modality modality_from_string(const std::string& name);
std::string to_string(Modality m);

/// Spatial view puts joints on the attention axis ([B,S,N,T*Ce]); temporal view
/// puts frames there ([B,S,T,N*Ce]). Channel c maps to head c / Ce, slot c % Ce.
enum class Layout { spatial, temporal };

Tensor to_view(const Tensor& features, std::size_t heads, Layout layout);
/// Inverse of to_view; `frames`/`joints` recover the [B,C,T,N] extents.
Tensor from_view(const Tensor& view, Layout layout, std::size_t frames, std::size_t joints);

struct SiiaConfig {
  std::size_t channels = 16;
  std::size_t heads = 4;
  /// Separate Q/K/V projections for the spatial and temporal views.
  bool separate_decoupling_projections = false;
  /// One FFN per modality shared by all four branches.
  bool tie_ffn = false;
  /// Detach the opposite modality's keys/values in inter-attention branches.
  bool stop_grad_inter = false;
};

struct Projection {
  Tensor weight;  ///< [C,C]
  Tensor bias;    ///< [C]
};

struct QkvProjections {
  Projection query, key, value;
};

/// phi: linear layer followed by batch norm.
struct Ffn {
  Tensor weight, bias, gamma, beta;
  BatchNormState bn;
};

enum Branch : std::size_t { spa_tra = 0, spa_ter = 1, tem_tra = 2, tem_ter = 3 };
const char* branch_name(std::size_t branch);

struct ModalityParams {
  QkvProjections spatial;
  std::optional<QkvProjections> temporal;
  std::array<Ffn, 4> ffn;

  const QkvProjections& projections(Layout layout) const {
    return layout == Layout::temporal && temporal ? *temporal : spatial;
  }
  Ffn& ffn_for(std::size_t branch, bool tied) { return ffn[tied ? 0 : branch]; }
};

struct SiiaParams {
  SiiaConfig config;
  ModalityParams joint;
  ModalityParams motion;

  SiiaParams(const SiiaConfig& config, Initializer& init);

  std::size_t head_width() const { return config.channels / config.heads; }
  ModalityParams& of(Modality m) { return m == Modality::joint ? joint : motion; }
  const ModalityParams& of(Modality m) const { return m == Modality::joint ? joint : motion; }

  std::vector<NamedTensor> parameters() const;
  std::vector<NamedTensor> buffers() const;
  /// Copies every weight of `from` onto `to` (ties the modalities).
  void tie_modalities(Modality from, Modality to);
};

struct Qkv {
  Tensor q, k, v;  ///< each [B,C,T,N]
};

/// Channel-axis affine projections of `f` for one modality.
Qkv project_qkv(const Tensor& f, const SiiaParams& params, Modality modality, Layout layout = Layout::spatial);

/// tanh(Q K^T / sqrt(C_hat)) where C_hat is the feature width of the view
/// (Ce*T for spatial, Ce*N for temporal).
Tensor attention_map(const Tensor& q_view, const Tensor& k_view);

/// leaky_relu(phi(concat_heads(map * V)) + residual), shape [B,C,T,N].
Tensor attend_fuse(const Tensor& map, const Tensor& v_view, Layout layout, const Tensor& residual, Ffn& ffn,
                   Mode mode);

/// Four attention maps of one modality: spatial [B,S,N,N], temporal [B,S,T,T].
struct AttentionMaps {
  Tensor spa_tra, spa_ter, tem_tra, tem_ter;
  const Tensor& operator[](std::size_t branch) const;
};

struct SiiaOutput {
  Tensor g_tra, g_ter, h_tra, h_ter;
  const Tensor& operator[](std::size_t branch) const;
};

struct SiiaResult {
  SiiaOutput features;
  AttentionMaps maps;
};

/// Joint SIIA: queries from joints, intra keys/values from joints, inter keys/values from motions.
SiiaResult j_siia(const Tensor& f_j, const Tensor& f_m, SiiaParams& params, Mode mode);
/// Motion SIIA: the mirror image with the modalities swapped.
SiiaResult m_siia(const Tensor& f_m, const Tensor& f_j, SiiaParams& params, Mode mode);

struct SiiaPair {
  SiiaResult joint;
  SiiaResult motion;
};

/// Both blocks, sharing each modality's projections.
SiiaPair siia_forward(const Tensor& f_j, const Tensor& f_m, SiiaParams& params, Mode mode);

enum class Aggregation {
  row_sum,   ///< sum of each map row, averaged over heads and batch
  row_mean,  ///< mean of each map row, averaged over heads and batch
};

struct SaliencyRow {
  std::string kind;  ///< spa_tra | spa_ter | tem_tra | tem_ter
  Modality modality = Modality::joint;
  std::size_t index = 0;
  double saliency = 0.0;
};

/// Per-joint (spatial maps) and per-frame (temporal maps) saliency.
std::vector<SaliencyRow> export_attention(const AttentionMaps& maps, Modality modality,
                                          Aggregation aggregation = Aggregation::row_sum);

/// CSV with header `kind,modality,index,saliency`.
void write_saliency_csv(std::ostream& os, const std::vector<SaliencyRow>& rows);

}  // namespace sdscl
