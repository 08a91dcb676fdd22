#include "sdscl/contrast.hpp"

#include "sdscl/errors.hpp"

namespace sdscl {

Pooling pooling_from_string(const std::string& name) {
  if (name == "mean") return Pooling::mean;
  if (name == "max") return Pooling::max;
  throw ArgumentError("unknown pooling '" + name + "' (expected mean|max)");
}

std::string to_string(Pooling p) { return p == Pooling::mean ? "mean" : "max"; }

Mlp::Mlp(std::size_t in, std::size_t hidden, std::size_t out, bool batch_norm, Initializer& init)
    : w1(init.uniform_fan_in({hidden, in}, in)),
      b1(Tensor::zeros({hidden}, true)),
      w2(init.uniform_fan_in({out, hidden}, hidden)),
      b2(Tensor::zeros({out}, true)) {
  if (batch_norm) {
    gamma = Tensor::full({hidden}, 1.0, true);
    beta = Tensor::zeros({hidden}, true);
    bn = BatchNormState(hidden);
  }
}

Tensor Mlp::operator()(const Tensor& x, Mode mode) {
  Tensor h = linear(x, w1, b1, 1);
  if (normalized()) h = batch_norm(h, gamma, beta, bn, mode);
  return linear(leaky_relu(h), w2, b2, 1);
}

std::vector<NamedTensor> Mlp::parameters(const std::string& prefix) const {
  std::vector<NamedTensor> out{{prefix + ".fc1.weight", w1}, {prefix + ".fc1.bias", b1}};
  if (normalized()) {
    out.push_back({prefix + ".bn.gamma", gamma});
    out.push_back({prefix + ".bn.beta", beta});
  }
  out.push_back({prefix + ".fc2.weight", w2});
  out.push_back({prefix + ".fc2.bias", b2});
  return out;
}

std::vector<NamedTensor> Mlp::buffers(const std::string& prefix) const {
  if (!normalized()) return {};
  return {{prefix + ".bn.running_mean", bn.running_mean},
          {prefix + ".bn.running_var", bn.running_var},
          {prefix + ".bn.tracked", bn.tracked}};
}

ContrastHeads::ContrastHeads(const ContrastConfig& config, Initializer& init) : config_(config) {
  if (!(config.temperature > 0.0)) throw ArgumentError("contrast: temperature must be positive");
  const std::size_t C = config.channels, E = config.embed_width();
  if (E < 2) throw ArgumentError("contrast: embedding width must be at least 2");
  const bool bn = config.head_batch_norm;
  spatial_ = Mlp(C, E, E, bn, init);
  if (!config.share_squeeze_heads) temporal_ = Mlp(C, E, E, bn, init);
  global_ = Mlp(4 * C, 4 * E, 4 * E, bn, init);
}

namespace {

ReduceMode reduce_mode(Pooling p) { return p == Pooling::mean ? ReduceMode::mean : ReduceMode::max; }

void require_features(const Tensor& t, std::size_t channels, const char* op) {
  if (t.rank() != 4 || t.dim(1) != channels) {
    throw DimensionError(std::string(op) + ": expected [B," + std::to_string(channels) + ",T,N], got " +
                         shape_to_string(t.shape()));
  }
}

}  // namespace

Tensor ContrastHeads::squeeze_spatial(const Tensor& g, Mode mode) {
  require_features(g, config_.channels, "squeeze_spatial");
  return spatial_(reduce(g, {3}, reduce_mode(config_.pooling)), mode);
}

Tensor ContrastHeads::squeeze_temporal(const Tensor& h, Mode mode) {
  require_features(h, config_.channels, "squeeze_temporal");
  return temporal_mlp()(reduce(h, {2}, reduce_mode(config_.pooling)), mode);
}

Tensor ContrastHeads::global_embed(const Tensor& g_tra, const Tensor& g_ter, const Tensor& h_tra,
                                   const Tensor& h_ter, Mode mode) {
  for (const auto* t : {&g_tra, &g_ter, &h_tra, &h_ter}) require_features(*t, config_.channels, "global_embed");
  if (g_ter.shape() != g_tra.shape() || h_tra.shape() != g_tra.shape() || h_ter.shape() != g_tra.shape()) {
    throw DimensionError("global_embed: the four features must share one shape");
  }
  Tensor stacked = concat({g_tra, g_ter, h_tra, h_ter}, 1);
  return global_(reduce(stacked, {2, 3}, reduce_mode(config_.pooling)), mode);
}

std::vector<NamedTensor> ContrastHeads::parameters() const {
  auto out = spatial_.parameters(config_.share_squeeze_heads ? "squeeze" : "spatial");
  if (!config_.share_squeeze_heads) {
    auto t = temporal_.parameters("temporal");
    out.insert(out.end(), t.begin(), t.end());
  }
  auto g = global_.parameters("global");
  out.insert(out.end(), g.begin(), g.end());
  return out;
}

std::vector<NamedTensor> ContrastHeads::buffers() const {
  auto out = spatial_.buffers(config_.share_squeeze_heads ? "squeeze" : "spatial");
  if (!config_.share_squeeze_heads) {
    auto t = temporal_.buffers("temporal");
    out.insert(out.end(), t.begin(), t.end());
  }
  auto g = global_.buffers("global");
  out.insert(out.end(), g.begin(), g.end());
  return out;
}

Tensor nt_xent_union(const Tensor& set_a, const Tensor& set_b, double tau) {
  if (!(tau > 0.0)) throw ArgumentError("nt_xent_union: temperature must be positive");
  if (set_a.rank() != 3 || set_a.shape() != set_b.shape()) {
    throw DimensionError("nt_xent_union: sets must both be [G,M,D], got " + shape_to_string(set_a.shape()) + " and " +
                         shape_to_string(set_b.shape()));
  }
  const std::size_t G = set_a.dim(0), M = set_a.dim(1), U = 2 * M;

  Tensor unit = l2_normalize(concat({set_a, set_b}, 1), 2);
  Tensor logits = scale(matmul(unit, permute(unit, {0, 2, 1})), 1.0 / tau);

  // exp(-1e9) underflows to exactly 0, which drops self-similarity from the denominator.
  std::vector<double> self_mask(G * U * U, 0.0), positive(G * U * U, 0.0);
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t i = 0; i < U; ++i) {
      self_mask[(g * U + i) * U + i] = -1e9;
      positive[(g * U + i) * U + (i + M) % U] = 1.0;
    }
  Tensor masked = add(logits, Tensor::from_values({G, U, U}, std::move(self_mask)));
  Tensor log_denominator = logsumexp(masked, 2);
  Tensor positive_logit = reduce(mul(logits, Tensor::from_values({G, U, U}, std::move(positive))), {2}, ReduceMode::sum);
  return mean(sub(log_denominator, positive_logit));
}

namespace {

/// [B,C',T,1] or [B,C',1,N] -> [B,P,C'].
Tensor positions_as_set(const Tensor& e) {
  const std::size_t B = e.dim(0), C = e.dim(1), P = e.dim(2) * e.dim(3);
  return permute(reshape(e, {B, C, P}), {0, 2, 1});
}

Tensor four_pairings(const Tensor& tra_j, const Tensor& ter_j, const Tensor& tra_m, const Tensor& ter_m, double tau,
                     std::array<double, 4>* terms) {
  const std::array<std::pair<const Tensor*, const Tensor*>, 4> pairs{
      {{&tra_j, &tra_m}, {&tra_j, &ter_m}, {&ter_j, &tra_m}, {&ter_j, &ter_m}}};
  Tensor total;
  for (std::size_t k = 0; k < 4; ++k) {
    Tensor term = nt_xent_union(positions_as_set(*pairs[k].first), positions_as_set(*pairs[k].second), tau);
    if (terms) (*terms)[k] = term.item();
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

}  // namespace

EmbeddingSets embed(const SiiaOutput& joint, const SiiaOutput& motion, ContrastHeads& heads, Mode mode) {
  EmbeddingSets e;
  e.u_tra_j = heads.squeeze_spatial(joint.g_tra, mode);
  e.u_ter_j = heads.squeeze_spatial(joint.g_ter, mode);
  e.u_tra_m = heads.squeeze_spatial(motion.g_tra, mode);
  e.u_ter_m = heads.squeeze_spatial(motion.g_ter, mode);
  e.v_tra_j = heads.squeeze_temporal(joint.h_tra, mode);
  e.v_ter_j = heads.squeeze_temporal(joint.h_ter, mode);
  e.v_tra_m = heads.squeeze_temporal(motion.h_tra, mode);
  e.v_ter_m = heads.squeeze_temporal(motion.h_ter, mode);
  e.z_j = heads.global_embed(joint.g_tra, joint.g_ter, joint.h_tra, joint.h_ter, mode);
  e.z_m = heads.global_embed(motion.g_tra, motion.g_ter, motion.h_tra, motion.h_ter, mode);
  return e;
}

Tensor stl(const EmbeddingSets& e, double tau, std::array<double, 4>* terms) {
  if (!e.u_tra_j.defined()) throw ArgumentError("stl: spatial-squeezing embeddings missing");
  if (e.u_tra_j.dim(2) < 2) throw ArgumentError("stl: needs at least 2 frames");
  return four_pairings(e.u_tra_j, e.u_ter_j, e.u_tra_m, e.u_ter_m, tau, terms);
}

Tensor tsl(const EmbeddingSets& e, double tau, std::array<double, 4>* terms) {
  if (!e.v_tra_j.defined()) throw ArgumentError("tsl: temporal-squeezing embeddings missing");
  if (e.v_tra_j.dim(3) < 2) throw ArgumentError("tsl: needs at least 2 joints");
  return four_pairings(e.v_tra_j, e.v_ter_j, e.v_tra_m, e.v_ter_m, tau, terms);
}

Tensor gl(const Tensor& z_j, const Tensor& z_m, double tau) {
  if (z_j.rank() != 4 || z_j.shape() != z_m.shape()) {
    throw DimensionError("gl: z_j and z_m must share a [B,D,1,1] shape");
  }
  const std::size_t B = z_j.dim(0), D = z_j.dim(1);
  return nt_xent_union(reshape(z_j, {1, B, D}), reshape(z_m, {1, B, D}), tau);
}

TotalLoss total_loss(const SiiaOutput& joint, const SiiaOutput& motion, ContrastHeads& heads,
                     const LossToggles& toggles, Mode mode) {
  if (!toggles.any()) throw ConfigError("total_loss: at least one of STL, TSL, GL must be enabled");
  const double tau = heads.temperature();
  const auto e = embed(joint, motion, heads, mode);
  TotalLoss out;
  Tensor l_stl = stl(e, tau, &out.report.stl_terms);
  Tensor l_tsl = tsl(e, tau, &out.report.tsl_terms);
  Tensor l_gl = gl(e.z_j, e.z_m, tau);
  out.report.stl = l_stl.item();
  out.report.tsl = l_tsl.item();
  out.report.gl = l_gl.item();
  for (auto [on, term] : {std::pair{toggles.stl, &l_stl}, std::pair{toggles.tsl, &l_tsl}, std::pair{toggles.gl, &l_gl}}) {
    if (!on) continue;
    out.loss = out.loss.defined() ? add(out.loss, *term) : *term;
  }
  out.report.total = out.loss.item();
  return out;
}

}  // namespace sdscl
