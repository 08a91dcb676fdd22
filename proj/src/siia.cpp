#include "sdscl/siia.hpp"

#include <cmath>
#include <ostream>

#include "sdscl/errors.hpp"

namespace sdscl {

Modality modality_from_string(const std::string& name) {
  if (name == "joint") return Modality::joint;
  if (name == "motion") return Modality::motion;
  throw ArgumentError("unknown modality '" + name + "' (expected joint|motion)");
}

std::string to_string(Modality m) { return m == Modality::joint ? "joint" : "motion"; }

const char* branch_name(std::size_t branch) {
  static constexpr const char* names[] = {"spa_tra", "spa_ter", "tem_tra", "tem_ter"};
  if (branch >= 4) throw ArgumentError("branch index out of range");
  return names[branch];
}

Tensor to_view(const Tensor& features, std::size_t heads, Layout layout) {
  if (features.rank() != 4) throw DimensionError("to_view: expected [B,C,T,N], got " + shape_to_string(features.shape()));
  const std::size_t B = features.dim(0), C = features.dim(1), T = features.dim(2), N = features.dim(3);
  if (heads == 0 || C % heads != 0) {
    throw DimensionError("to_view: " + std::to_string(C) + " channels are not divisible by " + std::to_string(heads) +
                         " heads");
  }
  const std::size_t ce = C / heads;
  Tensor split = reshape(features, {B, heads, ce, T, N});
  if (layout == Layout::spatial) {
    return reshape(permute(split, {0, 1, 4, 3, 2}), {B, heads, N, T * ce});
  }
  return reshape(permute(split, {0, 1, 3, 4, 2}), {B, heads, T, N * ce});
}

Tensor from_view(const Tensor& view, Layout layout, std::size_t frames, std::size_t joints) {
  if (view.rank() != 4) throw DimensionError("from_view: expected a rank-4 view, got " + shape_to_string(view.shape()));
  const std::size_t B = view.dim(0), S = view.dim(1);
  const std::size_t total = view.numel() / (B * S);
  if (total % (frames * joints) != 0) throw DimensionError("from_view: view does not match frames x joints");
  const std::size_t ce = total / (frames * joints);
  if (layout == Layout::spatial) {
    if (view.dim(2) != joints) throw DimensionError("from_view: spatial view has wrong joint extent");
    Tensor split = reshape(view, {B, S, joints, frames, ce});
    return reshape(permute(split, {0, 1, 4, 3, 2}), {B, S * ce, frames, joints});
  }
  if (view.dim(2) != frames) throw DimensionError("from_view: temporal view has wrong frame extent");
  Tensor split = reshape(view, {B, S, frames, joints, ce});
  return reshape(permute(split, {0, 1, 4, 2, 3}), {B, S * ce, frames, joints});
}

namespace {

Projection make_projection(std::size_t C, Initializer& init) {
  return {init.uniform_fan_in({C, C}, C), Tensor::zeros({C}, true)};
}

QkvProjections make_qkv(std::size_t C, Initializer& init) {
  auto q = make_projection(C, init);
  auto k = make_projection(C, init);
  auto v = make_projection(C, init);
  return {q, k, v};
}

ModalityParams make_modality(const SiiaConfig& cfg, Initializer& init) {
  ModalityParams p;
  p.spatial = make_qkv(cfg.channels, init);
  if (cfg.separate_decoupling_projections) p.temporal = make_qkv(cfg.channels, init);
  for (auto& f : p.ffn) {
    f.weight = init.uniform_fan_in({cfg.channels, cfg.channels}, cfg.channels);
    f.bias = Tensor::zeros({cfg.channels}, true);
    f.gamma = Tensor::full({cfg.channels}, 1.0, true);
    f.beta = Tensor::zeros({cfg.channels}, true);
    f.bn = BatchNormState(cfg.channels);
  }
  return p;
}

void append_qkv(std::vector<NamedTensor>& out, const std::string& prefix, const QkvProjections& p) {
  out.push_back({prefix + "query.weight", p.query.weight});
  out.push_back({prefix + "query.bias", p.query.bias});
  out.push_back({prefix + "key.weight", p.key.weight});
  out.push_back({prefix + "key.bias", p.key.bias});
  out.push_back({prefix + "value.weight", p.value.weight});
  out.push_back({prefix + "value.bias", p.value.bias});
}

void copy_values(const Tensor& from, Tensor& to) {
  auto src = from.values();
  auto dst = to.mutable_values();
  std::copy(src.begin(), src.end(), dst.begin());
}

void copy_qkv(const QkvProjections& from, QkvProjections& to) {
  copy_values(from.query.weight, to.query.weight);
  copy_values(from.query.bias, to.query.bias);
  copy_values(from.key.weight, to.key.weight);
  copy_values(from.key.bias, to.key.bias);
  copy_values(from.value.weight, to.value.weight);
  copy_values(from.value.bias, to.value.bias);
}

}  // namespace

SiiaParams::SiiaParams(const SiiaConfig& cfg, Initializer& init) : config(cfg) {
  if (cfg.heads == 0 || cfg.channels % cfg.heads != 0) {
    throw ArgumentError("SIIA: channels (" + std::to_string(cfg.channels) + ") must be divisible by heads (" +
                        std::to_string(cfg.heads) + ")");
  }
  joint = make_modality(cfg, init);
  motion = make_modality(cfg, init);
}

std::vector<NamedTensor> SiiaParams::parameters() const {
  std::vector<NamedTensor> out;
  for (auto m : {Modality::joint, Modality::motion}) {
    const auto& p = of(m);
    const std::string base = to_string(m) + ".";
    append_qkv(out, base + (p.temporal ? "spatial." : ""), p.spatial);
    if (p.temporal) append_qkv(out, base + "temporal.", *p.temporal);
    const std::size_t n_ffn = config.tie_ffn ? 1 : 4;
    for (std::size_t b = 0; b < n_ffn; ++b) {
      const std::string f = base + "ffn." + (config.tie_ffn ? std::string("shared") : branch_name(b)) + ".";
      out.push_back({f + "weight", p.ffn[b].weight});
      out.push_back({f + "bias", p.ffn[b].bias});
      out.push_back({f + "bn.gamma", p.ffn[b].gamma});
      out.push_back({f + "bn.beta", p.ffn[b].beta});
    }
  }
  return out;
}

std::vector<NamedTensor> SiiaParams::buffers() const {
  std::vector<NamedTensor> out;
  for (auto m : {Modality::joint, Modality::motion}) {
    const auto& p = of(m);
    const std::size_t n_ffn = config.tie_ffn ? 1 : 4;
    for (std::size_t b = 0; b < n_ffn; ++b) {
      const std::string f =
          to_string(m) + ".ffn." + (config.tie_ffn ? std::string("shared") : branch_name(b)) + ".bn.";
      out.push_back({f + "running_mean", p.ffn[b].bn.running_mean});
      out.push_back({f + "running_var", p.ffn[b].bn.running_var});
      out.push_back({f + "tracked", p.ffn[b].bn.tracked});
    }
  }
  return out;
}

void SiiaParams::tie_modalities(Modality from, Modality to) {
  const auto& src = of(from);
  auto& dst = of(to);
  copy_qkv(src.spatial, dst.spatial);
  if (src.temporal && dst.temporal) copy_qkv(*src.temporal, *dst.temporal);
  for (std::size_t b = 0; b < 4; ++b) {
    copy_values(src.ffn[b].weight, dst.ffn[b].weight);
    copy_values(src.ffn[b].bias, dst.ffn[b].bias);
    copy_values(src.ffn[b].gamma, dst.ffn[b].gamma);
    copy_values(src.ffn[b].beta, dst.ffn[b].beta);
  }
}

Qkv project_qkv(const Tensor& f, const SiiaParams& params, Modality modality, Layout layout) {
  if (f.rank() != 4 || f.dim(1) != params.config.channels) {
    throw DimensionError("project_qkv: expected [B," + std::to_string(params.config.channels) + ",T,N], got " +
                         shape_to_string(f.shape()));
  }
  const auto& p = params.of(modality).projections(layout);
  return {linear(f, p.query.weight, p.query.bias, 1), linear(f, p.key.weight, p.key.bias, 1),
          linear(f, p.value.weight, p.value.bias, 1)};
}

Tensor attention_map(const Tensor& q_view, const Tensor& k_view) {
  if (q_view.rank() != 4 || q_view.shape() != k_view.shape()) {
    throw DimensionError("attention_map: query view " + shape_to_string(q_view.shape()) + " and key view " +
                         shape_to_string(k_view.shape()) + " are not in the same layout");
  }
  const double c_hat = static_cast<double>(q_view.dim(3));
  Tensor scores = matmul(q_view, permute(k_view, {0, 1, 3, 2}));
  return tanh(scale(scores, 1.0 / std::sqrt(c_hat)));
}

Tensor attend_fuse(const Tensor& map, const Tensor& v_view, Layout layout, const Tensor& residual, Ffn& ffn,
                   Mode mode) {
  if (residual.rank() != 4) throw DimensionError("attend_fuse: residual must be [B,C,T,N]");
  const std::size_t T = residual.dim(2), N = residual.dim(3);
  const std::size_t positions = layout == Layout::spatial ? N : T;
  if (map.rank() != 4 || map.dim(2) != positions || map.dim(3) != positions || v_view.rank() != 4 ||
      v_view.dim(2) != positions || map.dim(0) != v_view.dim(0) || map.dim(1) != v_view.dim(1)) {
    throw DimensionError("attend_fuse: map " + shape_to_string(map.shape()) + " incompatible with values " +
                         shape_to_string(v_view.shape()));
  }
  Tensor attended = from_view(matmul(map, v_view), layout, T, N);
  if (attended.shape() != residual.shape()) {
    throw DimensionError("attend_fuse: attended features " + shape_to_string(attended.shape()) +
                         " do not match residual " + shape_to_string(residual.shape()));
  }
  Tensor phi = batch_norm(linear(attended, ffn.weight, ffn.bias, 1), ffn.gamma, ffn.beta, ffn.bn, mode);
  return leaky_relu(add(phi, residual));
}

const Tensor& AttentionMaps::operator[](std::size_t branch) const {
  switch (branch) {
    case Branch::spa_tra: return spa_tra;
    case Branch::spa_ter: return spa_ter;
    case Branch::tem_tra: return tem_tra;
    case Branch::tem_ter: return tem_ter;
    default: throw ArgumentError("branch index out of range");
  }
}

const Tensor& SiiaOutput::operator[](std::size_t branch) const {
  switch (branch) {
    case spa_tra: return g_tra;
    case spa_ter: return g_ter;
    case tem_tra: return h_tra;
    case tem_ter: return h_ter;
    default: throw ArgumentError("branch index out of range");
  }
}

namespace {

struct Views {
  Tensor q, k, v;
};

Views views_of(const Qkv& qkv, std::size_t heads, Layout layout) {
  return {to_view(qkv.q, heads, layout), to_view(qkv.k, heads, layout), to_view(qkv.v, heads, layout)};
}

/// Projected views of one modality in both layouts.
struct ModalityViews {
  Views spatial, temporal;
};

ModalityViews modality_views(const Tensor& f, const SiiaParams& params, Modality m) {
  const auto S = params.config.heads;
  if (params.config.separate_decoupling_projections) {
    return {views_of(project_qkv(f, params, m, Layout::spatial), S, Layout::spatial),
            views_of(project_qkv(f, params, m, Layout::temporal), S, Layout::temporal)};
  }
  auto qkv = project_qkv(f, params, m, Layout::spatial);
  return {views_of(qkv, S, Layout::spatial), views_of(qkv, S, Layout::temporal)};
}

SiiaResult run_block(const ModalityViews& self, const ModalityViews& other, const Tensor& residual,
                     SiiaParams& params, Modality query_modality, Mode mode) {
  auto& mp = params.of(query_modality);
  const bool tied = params.config.tie_ffn;
  const bool stop = params.config.stop_grad_inter;
  auto inter = [stop](const Tensor& t) { return stop ? stop_gradient(t) : t; };

  SiiaResult r;
  r.maps.spa_tra = attention_map(self.spatial.q, self.spatial.k);
  r.maps.spa_ter = attention_map(self.spatial.q, inter(other.spatial.k));
  r.maps.tem_tra = attention_map(self.temporal.q, self.temporal.k);
  r.maps.tem_ter = attention_map(self.temporal.q, inter(other.temporal.k));

  r.features.g_tra = attend_fuse(r.maps.spa_tra, self.spatial.v, Layout::spatial, residual, mp.ffn_for(spa_tra, tied), mode);
  r.features.g_ter =
      attend_fuse(r.maps.spa_ter, inter(other.spatial.v), Layout::spatial, residual, mp.ffn_for(spa_ter, tied), mode);
  r.features.h_tra =
      attend_fuse(r.maps.tem_tra, self.temporal.v, Layout::temporal, residual, mp.ffn_for(tem_tra, tied), mode);
  r.features.h_ter =
      attend_fuse(r.maps.tem_ter, inter(other.temporal.v), Layout::temporal, residual, mp.ffn_for(tem_ter, tied), mode);
  return r;
}

void require_pair(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("SIIA: joint and motion features differ in shape: " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
}

}  // namespace

SiiaResult j_siia(const Tensor& f_j, const Tensor& f_m, SiiaParams& params, Mode mode) {
  require_pair(f_j, f_m);
  auto vj = modality_views(f_j, params, Modality::joint);
  auto vm = modality_views(f_m, params, Modality::motion);
  return run_block(vj, vm, f_j, params, Modality::joint, mode);
}

SiiaResult m_siia(const Tensor& f_m, const Tensor& f_j, SiiaParams& params, Mode mode) {
  require_pair(f_j, f_m);
  auto vj = modality_views(f_j, params, Modality::joint);
  auto vm = modality_views(f_m, params, Modality::motion);
  return run_block(vm, vj, f_m, params, Modality::motion, mode);
}

SiiaPair siia_forward(const Tensor& f_j, const Tensor& f_m, SiiaParams& params, Mode mode) {
  require_pair(f_j, f_m);
  auto vj = modality_views(f_j, params, Modality::joint);
  auto vm = modality_views(f_m, params, Modality::motion);
  SiiaPair out;
  out.joint = run_block(vj, vm, f_j, params, Modality::joint, mode);
  out.motion = run_block(vm, vj, f_m, params, Modality::motion, mode);
  return out;
}

std::vector<SaliencyRow> export_attention(const AttentionMaps& maps, Modality modality, Aggregation aggregation) {
  std::vector<SaliencyRow> rows;
  for (std::size_t branch = 0; branch < 4; ++branch) {
    const Tensor& map = maps[branch];
    if (!map.defined()) throw StateError("export_attention: maps not computed");
    const std::size_t B = map.dim(0), S = map.dim(1), P = map.dim(2), Q = map.dim(3);
    auto v = map.values();
    for (std::size_t i = 0; i < P; ++i) {
      double total = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t s = 0; s < S; ++s)
          for (std::size_t k = 0; k < Q; ++k) total += v[((b * S + s) * P + i) * Q + k];
      double sal = total / static_cast<double>(B * S);
      if (aggregation == Aggregation::row_mean) sal /= static_cast<double>(Q);
      rows.push_back({branch_name(branch), modality, i, sal});
    }
  }
  return rows;
}

void write_saliency_csv(std::ostream& os, const std::vector<SaliencyRow>& rows) {
  os << "kind,modality,index,saliency\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g", r.saliency);
    os << r.kind << ',' << to_string(r.modality) << ',' << r.index << ',' << buf << '\n';
  }
}

}  // namespace sdscl
