#include "sdscl/grad_suite.hpp"

#include <memory>
#include <random>

#include "sdscl/contrast.hpp"
#include "sdscl/errors.hpp"
#include "sdscl/siia.hpp"
#include "sdscl/training.hpp"

namespace sdscl {

CheckScope check_scope_from_string(const std::string& name) {
  if (name == "ops") return CheckScope::ops;
  if (name == "siia") return CheckScope::siia;
  if (name == "losses") return CheckScope::losses;
  if (name == "end2end") return CheckScope::end2end;
  throw ArgumentError("unknown gradient-check scope '" + name + "' (expected ops|siia|losses|end2end)");
}

std::string to_string(CheckScope scope) {
  switch (scope) {
    case CheckScope::ops: return "ops";
    case CheckScope::siia: return "siia";
    case CheckScope::losses: return "losses";
    case CheckScope::end2end: return "end2end";
  }
  return "?";
}

namespace {

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  Tensor uniform(Shape shape, double lo, double hi, bool grad = true) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = d(rng_);
    return Tensor::from_values(std::move(shape), std::move(v), grad);
  }
  /// Uniform in [-1, 1].
  Tensor unit(Shape shape, bool grad = true) { return uniform(std::move(shape), -1.0, 1.0, grad); }

 private:
  std::mt19937_64 rng_;
};

/// Scalar probe of a tensor-valued result: sum(out * w) with fixed random w, so
/// every output element contributes with a distinct weight.
Tensor probe(const Tensor& out, const Tensor& weights) { return sum(mul(out, weights)); }

std::vector<Tensor> tensors_of(const std::vector<NamedTensor>& named) {
  std::vector<Tensor> out;
  for (const auto& n : named) out.push_back(n.tensor);
  return out;
}

void add_op_cases(std::vector<GradientCase>& cases, Sampler& s, const CheckExtents& x) {
  const Shape shape4{x.batch, x.channels, x.frames, x.joints};
  auto unary = [&](const std::string& name, Tensor in, std::function<Tensor(const Tensor&)> op) {
    Tensor w = s.unit(op(in.detach()).shape(), false);
    cases.push_back({name, [in, w, op] { return probe(op(in), w); }, {in}});
  };
  auto binary = [&](const std::string& name, Tensor a, Tensor b, std::function<Tensor(const Tensor&, const Tensor&)> op) {
    Tensor w = s.unit(op(a.detach(), b.detach()).shape(), false);
    cases.push_back({name, [a, b, w, op] { return probe(op(a, b), w); }, {a, b}});
  };

  binary("add", s.unit(shape4), s.unit(shape4), [](auto& a, auto& b) { return add(a, b); });
  binary("sub", s.unit(shape4), s.unit(shape4), [](auto& a, auto& b) { return sub(a, b); });
  binary("mul", s.unit(shape4), s.unit(shape4), [](auto& a, auto& b) { return mul(a, b); });
  {
    Tensor a = s.unit(shape4);
    Tensor w = s.unit(shape4, false);
    cases.push_back({"mul_self", [a, w] { return probe(mul(a, a), w); }, {a}});
  }
  unary("tanh", s.unit(shape4), [](auto& t) { return tanh(t); });
  unary("exp", s.uniform(shape4, -1.5, 1.5), [](auto& t) { return exp(t); });
  unary("log", s.uniform(shape4, 0.5, 2.0), [](auto& t) { return log(t); });
  unary("leaky_relu", s.unit(shape4), [](auto& t) { return leaky_relu(t); });
  unary("scale", s.unit(shape4), [](auto& t) { return scale(t, -0.37); });
  {
    // The stopped operand requires grad but is not perturbed: finite differences see its true
    // derivative, which the marker deliberately discards.
    Tensor a = s.unit(shape4), b = s.unit(shape4);
    Tensor w = s.unit(shape4, false);
    cases.push_back({"stop_gradient", [a, b, w] { return probe(mul(stop_gradient(a), b), w); }, {b}});
  }
  binary("matmul", s.unit({x.batch, x.heads, x.joints, x.frames}), s.unit({x.batch, x.heads, x.frames, x.joints}),
         [](auto& a, auto& b) { return matmul(a, b); });
  unary("permute", s.unit(shape4), [](auto& t) { return permute(t, {2, 0, 3, 1}); });
  unary("reshape", s.unit(shape4), [x](auto& t) { return reshape(t, {x.batch * x.channels, x.frames * x.joints}); });
  unary("permute_reshape", s.unit(shape4), [x](auto& t) {
    const std::size_t axes[] = {0, 3, 1, 2};
    return permute_reshape(t, axes, {x.batch, x.joints, x.channels * x.frames});
  });
  unary("reduce_mean", s.unit(shape4), [](auto& t) { return reduce(t, {2, 3}, ReduceMode::mean); });
  unary("reduce_sum", s.unit(shape4), [](auto& t) { return reduce(t, {0, 2}, ReduceMode::sum); });
  unary("reduce_max", s.unit(shape4), [](auto& t) { return reduce(t, {3}, ReduceMode::max); });
  unary("sum", s.unit(shape4), [](auto& t) { return sum(t); });
  unary("mean", s.unit(shape4), [](auto& t) { return mean(t); });
  binary("concat", s.unit(shape4), s.unit({x.batch, 3, x.frames, x.joints}),
         [](auto& a, auto& b) { return concat({a, b}, 1); });
  unary("slice", s.unit(shape4), [x](auto& t) { return slice(t, 2, 1, x.frames - 2); });
  {
    Tensor in = s.unit(shape4), weight = s.unit({5, x.channels}), bias = s.unit({5});
    Tensor w = s.unit({x.batch, 5, x.frames, x.joints}, false);
    cases.push_back({"linear", [=] { return probe(linear(in, weight, bias, 1), w); }, {in, weight, bias}});
  }
  {
    Tensor in = s.unit({x.batch, x.joints, x.frames, x.channels}), weight = s.unit({4, x.channels});
    Tensor w = s.unit({x.batch, x.joints, x.frames, 4}, false);
    cases.push_back({"linear_last_axis", [=] { return probe(linear(in, weight, Tensor(), 3), w); }, {in, weight}});
  }
  {
    Tensor in = s.unit(shape4), gamma = s.uniform({x.channels}, 0.5, 1.5), beta = s.unit({x.channels});
    Tensor w = s.unit(shape4, false);
    auto state = std::make_shared<BatchNormState>(x.channels);
    cases.push_back({"batch_norm_train",
                     [=] { return probe(batch_norm(in, gamma, beta, *state, Mode::train), w); },
                     {in, gamma, beta}});
  }
  {
    Tensor in = s.unit(shape4), gamma = s.uniform({x.channels}, 0.5, 1.5), beta = s.unit({x.channels});
    Tensor w = s.unit(shape4, false);
    auto state = std::make_shared<BatchNormState>(x.channels);
    batch_norm(s.unit(shape4, false), gamma.detach(), beta.detach(), *state, Mode::train);
    cases.push_back({"batch_norm_eval",
                     [=] { return probe(batch_norm(in, gamma, beta, *state, Mode::eval), w); },
                     {in, gamma, beta}});
  }
  binary("conv1d_temporal", s.unit(shape4), s.unit({x.channels, 3}),
         [](auto& a, auto& k) { return conv1d_temporal(a, k); });
  unary("l2_normalize", s.unit(shape4), [](auto& t) { return l2_normalize(t, 1); });
  unary("logsumexp", s.unit(shape4), [](auto& t) { return logsumexp(t, 2); });
  unary("softmax", s.unit(shape4), [](auto& t) { return softmax(t, 3); });
}

SiiaConfig siia_config(const CheckExtents& x) {
  SiiaConfig c;
  c.channels = x.channels;
  c.heads = x.heads;
  return c;
}

void add_siia_cases(std::vector<GradientCase>& cases, Sampler& s, const CheckExtents& x, std::uint64_t seed) {
  const Shape shape4{x.batch, x.channels, x.frames, x.joints};
  // stop_grad_inter is left out: it discards part of the true derivative by design.
  struct Variant {
    const char* name;
    bool separate, tied;
  };
  for (const Variant v : {Variant{"siia", false, false}, Variant{"siia_separate_projections", true, false},
                          Variant{"siia_tied_ffn", false, true}}) {
    SiiaConfig c = siia_config(x);
    c.separate_decoupling_projections = v.separate;
    c.tie_ffn = v.tied;
    Initializer init(seed ^ 0xA5A5);
    auto params = std::make_shared<SiiaParams>(c, init);
    Tensor f_j = s.unit(shape4), f_m = s.unit(shape4);
    std::vector<Tensor> w;
    for (int i = 0; i < 8; ++i) w.push_back(s.unit(shape4, false));
    std::vector<Tensor> inputs{f_j, f_m};
    for (auto& t : tensors_of(params->parameters())) inputs.push_back(t);
    cases.push_back({v.name,
                     [=] {
                       auto out = siia_forward(f_j, f_m, *params, Mode::train);
                       Tensor total;
                       for (std::size_t b = 0; b < 4; ++b) {
                         Tensor t = add(probe(out.joint.features[b], w[b]), probe(out.motion.features[b], w[4 + b]));
                         total = total.defined() ? add(total, t) : t;
                       }
                       return total;
                     },
                     inputs});
  }
  {
    // The maps themselves, before any value mixing.
    Tensor q = s.unit({x.batch, x.heads, x.joints, x.frames * x.channels / x.heads});
    Tensor k = s.unit(q.shape());
    Tensor w = s.unit({x.batch, x.heads, x.joints, x.joints}, false);
    cases.push_back({"attention_map", [=] { return probe(attention_map(q, k), w); }, {q, k}});
  }
}

ContrastConfig contrast_config(const CheckExtents& x) {
  ContrastConfig c;
  c.channels = x.channels;
  return c;
}

void add_loss_cases(std::vector<GradientCase>& cases, Sampler& s, const CheckExtents& x, std::uint64_t seed) {
  const std::size_t B = x.batch, C = x.channels, T = x.frames, N = x.joints;
  {
    Tensor a = s.unit({3, 4, 5}), b = s.unit({3, 4, 5});
    cases.push_back({"nt_xent_union", [=] { return nt_xent_union(a, b, 0.5); }, {a, b}});
  }
  auto frame_set = [&] { return s.unit({B, C, T, 1}); };
  auto joint_set = [&] { return s.unit({B, C, 1, N}); };
  {
    EmbeddingSets e;
    e.u_tra_j = frame_set(), e.u_ter_j = frame_set(), e.u_tra_m = frame_set(), e.u_ter_m = frame_set();
    cases.push_back({"stl", [=] { return stl(e, 0.5); }, {e.u_tra_j, e.u_ter_j, e.u_tra_m, e.u_ter_m}});
  }
  {
    EmbeddingSets e;
    e.v_tra_j = joint_set(), e.v_ter_j = joint_set(), e.v_tra_m = joint_set(), e.v_ter_m = joint_set();
    cases.push_back({"tsl", [=] { return tsl(e, 0.5); }, {e.v_tra_j, e.v_ter_j, e.v_tra_m, e.v_ter_m}});
  }
  {
    Tensor z_j = s.unit({B, 4 * C, 1, 1}), z_m = s.unit({B, 4 * C, 1, 1});
    cases.push_back({"gl", [=] { return gl(z_j, z_m, 0.5); }, {z_j, z_m}});
  }
  {
    // Full objective on SIIA-shaped features, through the squeeze heads.
    Initializer init(seed ^ 0x5A5A);
    auto heads = std::make_shared<ContrastHeads>(contrast_config(x), init);
    SiiaOutput j, m;
    for (auto* t : {&j.g_tra, &j.g_ter, &j.h_tra, &j.h_ter, &m.g_tra, &m.g_ter, &m.h_tra, &m.h_ter})
      *t = s.unit({B, C, T, N});
    std::vector<Tensor> inputs{j.g_tra, j.g_ter, j.h_tra, j.h_ter, m.g_tra, m.g_ter, m.h_tra, m.h_ter};
    for (auto& t : tensors_of(heads->parameters())) inputs.push_back(t);
    cases.push_back({"total_loss", [=] { return total_loss(j, m, *heads, LossToggles{}).loss; }, inputs});
  }
}

void add_end_to_end_case(std::vector<GradientCase>& cases, Sampler& s, const CheckExtents& x, std::uint64_t seed) {
  ModelConfig c;
  c.channels = x.channels;
  c.encoder_blocks = 2;
  c.siia = siia_config(x);
  c.contrast = contrast_config(x);
  auto model = std::make_shared<Model>(c, x.joints, seed ^ 0x3C3C);
  BatchPair batch;
  batch.joints = s.unit({x.batch, 3, x.frames, x.joints});
  batch.motion = s.unit({x.batch, 3, x.frames, x.joints});
  std::vector<Tensor> inputs{batch.joints, batch.motion};
  for (auto& t : tensors_of(model->parameters())) inputs.push_back(t);
  cases.push_back({"end2end", [=] { return model->pretrain_loss(batch, Mode::train).loss; }, inputs});
}

}  // namespace

std::vector<GradientCase> gradient_cases(CheckScope scope, std::uint64_t seed, const CheckExtents& extents) {
  if (extents.frames < 3 || extents.joints < 2 || extents.batch < 2 || extents.channels % extents.heads != 0) {
    throw ArgumentError("gradient_cases: extents too small or channels not divisible by heads");
  }
  Sampler sampler(seed);
  std::vector<GradientCase> cases;
  switch (scope) {
    case CheckScope::ops: add_op_cases(cases, sampler, extents); break;
    case CheckScope::siia: add_siia_cases(cases, sampler, extents, seed); break;
    case CheckScope::losses: add_loss_cases(cases, sampler, extents, seed); break;
    case CheckScope::end2end: add_end_to_end_case(cases, sampler, extents, seed); break;
  }
  return cases;
}

GradCheckOptions suite_options(CheckScope scope) {
  GradCheckOptions o;
  o.refine_failures = true;
  if (scope != CheckScope::ops) o.max_elements_per_input = 32;
  return o;
}

std::vector<GradientOutcome> run_gradient_cases(CheckScope scope, std::uint64_t seed, const GradCheckOptions& options,
                                                const CheckExtents& extents) {
  std::vector<GradientOutcome> out;
  for (auto& c : gradient_cases(scope, seed, extents)) {
    GradCheckOptions o = options;
    o.sample_seed = seed;
    const auto report = grad_check(c.f, c.inputs, o);
    out.push_back({c.name, report.entries.size(), report.skipped, report.max_rel_error, report.passed});
  }
  return out;
}

}  // namespace sdscl
