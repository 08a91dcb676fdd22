#include "sdscl/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "sdscl/errors.hpp"

namespace sdscl {

namespace {

double* grad_of(Node& self, std::size_t i) {
  auto& in = *self.inputs[i];
  return in.requires_grad ? in.grad.data() : nullptr;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

/// Splits a shape around `axis` into (outer, extent, inner) products.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void require_axis(const Tensor& t, std::size_t axis, const char* op) {
  if (axis >= t.rank()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                         shape_to_string(t.shape()));
  }
}

template <typename Fwd, typename Deriv>
Tensor unary(const char* op, const Tensor& t, Fwd fwd, Deriv deriv) {
  auto in = t.values();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return make_result(op, t.shape(), std::move(out), {t}, [deriv](Node& self) {
    double* gx = grad_of(self, 0);
    if (!gx) return;
    const auto& x = self.inputs[0]->value;
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += self.grad[i] * deriv(x[i], self.value[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  auto x = a.values();
  auto y = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (double* g = grad_of(self, k)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  auto x = a.values();
  auto y = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_result("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  auto x = a.values();
  auto y = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    const auto& x = self.inputs[0]->value;
    const auto& y = self.inputs[1]->value;
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * y[i];
    }
    if (double* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * x[i];
    }
  });
}

Tensor tanh(const Tensor& t) {
  return unary(
      "tanh", t, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& t) {
  return unary(
      "exp", t, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& t) {
  for (double x : t.values()) {
    if (!(x > 0.0)) throw DomainError("log of non-positive value " + std::to_string(x));
  }
  return unary(
      "log", t, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor leaky_relu(const Tensor& t, double slope) {
  return unary(
      "leaky_relu", t, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Tensor scale(const Tensor& t, double factor) {
  return unary(
      "scale", t, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Tensor stop_gradient(const Tensor& t) { return t.detach(); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  auto mismatch = [&] {
    return DimensionError("matmul: incompatible shapes " + shape_to_string(sa) + " and " + shape_to_string(sb));
  };
  if (sa.size() < 2 || sa.size() != sb.size()) throw mismatch();
  const std::size_t r = sa.size();
  if (!std::equal(sa.begin(), sa.end() - 2, sb.begin())) throw mismatch();
  const std::size_t m = sa[r - 2], k = sa[r - 1], n = sb[r - 1];
  if (sb[r - 2] != k) throw mismatch();
  std::size_t batch = 1;
  for (std::size_t i = 0; i + 2 < r; ++i) batch *= sa[i];

  Shape out_shape = sa;
  out_shape[r - 1] = n;
  std::vector<double> out(batch * m * n, 0.0);
  auto x = a.values();
  auto y = b.values();
  for (std::size_t p = 0; p < batch; ++p) {
    const double* A = x.data() + p * m * k;
    const double* B = y.data() + p * k * n;
    double* C = out.data() + p * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t q = 0; q < k; ++q) {
        const double aiq = A[i * k + q];
        for (std::size_t j = 0; j < n; ++j) C[i * n + j] += aiq * B[q * n + j];
      }
    }
  }
  return make_result("matmul", std::move(out_shape), std::move(out), {a, b}, [batch, m, k, n](Node& self) {
    const auto& x = self.inputs[0]->value;
    const auto& y = self.inputs[1]->value;
    double* ga = grad_of(self, 0);
    double* gb = grad_of(self, 1);
    for (std::size_t p = 0; p < batch; ++p) {
      const double* A = x.data() + p * m * k;
      const double* B = y.data() + p * k * n;
      const double* G = self.grad.data() + p * m * n;
      if (ga) {
        double* GA = ga + p * m * k;
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t q = 0; q < k; ++q) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * B[q * n + j];
            GA[i * k + q] += s;
          }
      }
      if (gb) {
        double* GB = gb + p * k * n;
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t q = 0; q < k; ++q) {
            const double aiq = A[i * k + q];
            for (std::size_t j = 0; j < n; ++j) GB[q * n + j] += aiq * G[i * n + j];
          }
      }
    }
  });
}

Tensor permute(const Tensor& t, std::span<const std::size_t> axes) {
  const auto& s = t.shape();
  const std::size_t r = s.size();
  if (axes.size() != r) throw ArgumentError("permute: axis order length does not match rank");
  std::vector<bool> seen(r, false);
  for (auto a : axes) {
    if (a >= r || seen[a]) throw ArgumentError("permute: axis order is not a permutation");
    seen[a] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = s[axes[i]];
  const auto in_strides = strides_of(s);
  std::vector<std::size_t> step(r);  // input stride for each output axis
  for (std::size_t i = 0; i < r; ++i) step[i] = in_strides[axes[i]];

  const std::size_t n = t.numel();
  auto src = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> coord(r, 0);
  std::size_t offset = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    (*src)[flat] = offset;
    for (std::size_t ax = r; ax-- > 0;) {
      offset += step[ax];
      if (++coord[ax] < out_shape[ax]) break;
      offset -= step[ax] * out_shape[ax];
      coord[ax] = 0;
    }
  }
  auto x = t.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x[(*src)[i]];
  return make_result("permute", std::move(out_shape), std::move(out), {t}, [src](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[(*src)[i]] += self.grad[i];
  });
}

Tensor permute(const Tensor& t, std::initializer_list<std::size_t> axes) {
  return permute(t, std::span<const std::size_t>(axes.begin(), axes.size()));
}

Tensor reshape(const Tensor& t, Shape shape) {
  if (shape_numel(shape) != t.numel()) {
    throw DimensionError("reshape: cannot view " + shape_to_string(t.shape()) + " as " + shape_to_string(shape));
  }
  std::vector<double> out(t.values().begin(), t.values().end());
  return make_result("reshape", std::move(shape), std::move(out), {t}, [](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor permute_reshape(const Tensor& t, std::span<const std::size_t> axes, Shape shape) {
  return reshape(permute(t, axes), std::move(shape));
}

Tensor reduce(const Tensor& t, std::span<const std::size_t> axes, ReduceMode mode) {
  if (axes.empty()) throw ArgumentError("reduce: empty axis list");
  const auto& s = t.shape();
  const std::size_t r = s.size();
  std::vector<bool> reduced(r, false);
  for (auto a : axes) {
    if (a >= r) throw ArgumentError("reduce: axis " + std::to_string(a) + " out of range for " + shape_to_string(s));
    if (reduced[a]) throw ArgumentError("reduce: repeated axis " + std::to_string(a));
    reduced[a] = true;
  }
  Shape out_shape = s;
  std::size_t count = 1;
  for (std::size_t i = 0; i < r; ++i) {
    if (reduced[i]) {
      count *= s[i];
      out_shape[i] = 1;
    }
  }
  const auto out_strides = strides_of(out_shape);
  const std::size_t n = t.numel();
  auto dst = std::make_shared<std::vector<std::size_t>>(n);
  {
    std::vector<std::size_t> coord(r, 0);
    std::size_t offset = 0;
    for (std::size_t flat = 0; flat < n; ++flat) {
      (*dst)[flat] = offset;
      for (std::size_t ax = r; ax-- > 0;) {
        const std::size_t st = reduced[ax] ? 0 : out_strides[ax];
        offset += st;
        if (++coord[ax] < s[ax]) break;
        offset -= st * s[ax];
        coord[ax] = 0;
      }
    }
  }
  const std::size_t out_n = shape_numel(out_shape);
  auto x = t.values();
  std::vector<double> out(out_n, 0.0);
  if (mode == ReduceMode::max) {
    auto arg = std::make_shared<std::vector<std::size_t>>(out_n, n);
    for (std::size_t i = 0; i < n; ++i) {
      auto& a = (*arg)[(*dst)[i]];
      if (a == n || x[i] > x[a]) a = i;
    }
    for (std::size_t o = 0; o < out_n; ++o) out[o] = x[(*arg)[o]];
    return make_result("reduce_max", std::move(out_shape), std::move(out), {t}, [arg](Node& self) {
      double* g = grad_of(self, 0);
      if (!g) return;
      for (std::size_t o = 0; o < self.grad.size(); ++o) g[(*arg)[o]] += self.grad[o];
    });
  }
  for (std::size_t i = 0; i < n; ++i) out[(*dst)[i]] += x[i];
  const double factor = mode == ReduceMode::mean ? 1.0 / static_cast<double>(count) : 1.0;
  if (mode == ReduceMode::mean) {
    for (auto& v : out) v *= factor;
  }
  return make_result(mode == ReduceMode::mean ? "reduce_mean" : "reduce_sum", std::move(out_shape), std::move(out),
                     {t}, [dst, factor](Node& self) {
                       double* g = grad_of(self, 0);
                       if (!g) return;
                       for (std::size_t i = 0; i < dst->size(); ++i) g[i] += factor * self.grad[(*dst)[i]];
                     });
}

Tensor reduce(const Tensor& t, std::initializer_list<std::size_t> axes, ReduceMode mode) {
  return reduce(t, std::span<const std::size_t>(axes.begin(), axes.size()), mode);
}

Tensor sum(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v;
  return make_result("sum", Shape{1}, {s}, {t}, [](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    const std::size_t n = self.inputs[0]->value.size();
    for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& t) { return scale(sum(t), 1.0 / static_cast<double>(t.numel())); }

Tensor concat(std::span<const Tensor> tensors, std::size_t axis) {
  if (tensors.empty()) throw ArgumentError("concat: no inputs");
  const auto& first = tensors.front().shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + shape_to_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  auto extents = std::make_shared<std::vector<std::size_t>>();
  for (const auto& t : tensors) {
    const auto& s = t.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
    if (!ok) {
      throw DimensionError("concat: incompatible shapes " + shape_to_string(first) + " and " + shape_to_string(s));
    }
    extents->push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  const auto split = split_at(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::size_t base = 0;
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    auto x = tensors[k].values();
    const std::size_t block = (*extents)[k] * split.inner;
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(x.data() + o * block, block, out.data() + o * split.extent * split.inner + base);
    }
    base += block;
  }
  std::vector<Tensor> inputs(tensors.begin(), tensors.end());
  return make_result("concat", std::move(out_shape), std::move(out), std::move(inputs), [extents, split](Node& self) {
    std::size_t base = 0;
    for (std::size_t k = 0; k < extents->size(); ++k) {
      const std::size_t block = (*extents)[k] * split.inner;
      if (double* g = grad_of(self, k)) {
        for (std::size_t o = 0; o < split.outer; ++o) {
          const double* src = self.grad.data() + o * split.extent * split.inner + base;
          for (std::size_t i = 0; i < block; ++i) g[o * block + i] += src[i];
        }
      }
      base += block;
    }
  });
}

Tensor concat(std::initializer_list<Tensor> tensors, std::size_t axis) {
  return concat(std::span<const Tensor>(tensors.begin(), tensors.size()), axis);
}

Tensor slice(const Tensor& t, std::size_t axis, std::size_t start, std::size_t length) {
  require_axis(t, axis, "slice");
  const auto split = split_at(t.shape(), axis);
  if (length == 0 || start + length > split.extent) {
    throw DimensionError("slice: range [" + std::to_string(start) + "," + std::to_string(start + length) +
                         ") exceeds extent of " + shape_to_string(t.shape()));
  }
  Shape out_shape = t.shape();
  out_shape[axis] = length;
  auto x = t.values();
  std::vector<double> out(split.outer * length * split.inner);
  const std::size_t block = length * split.inner;
  for (std::size_t o = 0; o < split.outer; ++o) {
    std::copy_n(x.data() + (o * split.extent + start) * split.inner, block, out.data() + o * block);
  }
  return make_result("slice", std::move(out_shape), std::move(out), {t}, [split, start, block](Node& self) {
    double* g = grad_of(self, 0);
    if (!g) return;
    for (std::size_t o = 0; o < split.outer; ++o) {
      double* dst = g + (o * split.extent + start) * split.inner;
      for (std::size_t i = 0; i < block; ++i) dst[i] += self.grad[o * block + i];
    }
  });
}

Tensor linear(const Tensor& t, const Tensor& weight, const Tensor& bias, std::size_t axis) {
  require_axis(t, axis, "linear");
  if (weight.rank() != 2 || weight.dim(1) != t.dim(axis)) {
    throw DimensionError("linear: weight " + shape_to_string(weight.shape()) + " does not map axis " +
                         std::to_string(axis) + " of " + shape_to_string(t.shape()));
  }
  const std::size_t cout = weight.dim(0);
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != cout)) {
    throw DimensionError("linear: bias " + shape_to_string(bias.shape()) + " does not match weight " +
                         shape_to_string(weight.shape()));
  }
  const auto split = split_at(t.shape(), axis);
  const std::size_t cin = split.extent, inner = split.inner;
  Shape out_shape = t.shape();
  out_shape[axis] = cout;
  std::vector<double> out(split.outer * cout * inner, 0.0);
  auto x = t.values();
  auto w = weight.values();
  for (std::size_t o = 0; o < split.outer; ++o) {
    const double* X = x.data() + o * cin * inner;
    double* Y = out.data() + o * cout * inner;
    for (std::size_t j = 0; j < cout; ++j) {
      double* yj = Y + j * inner;
      if (has_bias) std::fill_n(yj, inner, bias.values()[j]);
      for (std::size_t c = 0; c < cin; ++c) {
        const double wjc = w[j * cin + c];
        const double* xc = X + c * inner;
        for (std::size_t i = 0; i < inner; ++i) yj[i] += wjc * xc[i];
      }
    }
  }
  std::vector<Tensor> inputs{t, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result("linear", std::move(out_shape), std::move(out), std::move(inputs),
                     [split, cin, cout, inner, has_bias](Node& self) {
                       const auto& x = self.inputs[0]->value;
                       const auto& w = self.inputs[1]->value;
                       double* gx = grad_of(self, 0);
                       double* gw = grad_of(self, 1);
                       double* gb = has_bias ? grad_of(self, 2) : nullptr;
                       for (std::size_t o = 0; o < split.outer; ++o) {
                         const double* X = x.data() + o * cin * inner;
                         const double* G = self.grad.data() + o * cout * inner;
                         for (std::size_t j = 0; j < cout; ++j) {
                           const double* gj = G + j * inner;
                           if (gb) {
                             for (std::size_t i = 0; i < inner; ++i) gb[j] += gj[i];
                           }
                           for (std::size_t c = 0; c < cin; ++c) {
                             const double* xc = X + c * inner;
                             if (gw) {
                               double s = 0.0;
                               for (std::size_t i = 0; i < inner; ++i) s += gj[i] * xc[i];
                               gw[j * cin + c] += s;
                             }
                             if (gx) {
                               const double wjc = w[j * cin + c];
                               double* gxc = gx + o * cin * inner + c * inner;
                               for (std::size_t i = 0; i < inner; ++i) gxc[i] += wjc * gj[i];
                             }
                           }
                         }
                       }
                     });
}

BatchNormState::BatchNormState(std::size_t channels) {
  if (channels > 0) {
    running_mean = Tensor::zeros({channels});
    running_var = Tensor::full({channels}, 1.0);
    tracked = Tensor::zeros({1});
  }
}

Tensor batch_norm(const Tensor& t, const Tensor& gamma, const Tensor& beta, BatchNormState& state, Mode mode) {
  if (t.rank() < 2) throw DimensionError("batch_norm: needs at least [B,C], got " + shape_to_string(t.shape()));
  const std::size_t batch = t.dim(0), channels = t.dim(1);
  const std::size_t inner = t.numel() / (batch * channels);
  if (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels}) {
    throw DimensionError("batch_norm: gamma/beta must be [" + std::to_string(channels) + "], got " +
                         shape_to_string(gamma.shape()) + " and " + shape_to_string(beta.shape()));
  }
  if (!state.running_mean.defined() || state.running_mean.shape() != Shape{channels}) {
    throw DimensionError("batch_norm: running statistics do not match " + std::to_string(channels) + " channels");
  }
  const double count = static_cast<double>(batch * inner);
  auto x = t.values();
  auto g = gamma.values();
  auto b = beta.values();
  std::vector<double> out(x.size());
  auto at = [channels, inner](std::size_t n, std::size_t c, std::size_t i) { return (n * channels + c) * inner + i; };

  if (mode == Mode::eval) {
    if (!state.has_statistics()) throw StateError("batch_norm: eval mode before any train step");
    auto inv_std = std::make_shared<std::vector<double>>(channels);
    auto rm = state.running_mean.values();
    auto rv = state.running_var.values();
    for (std::size_t c = 0; c < channels; ++c) (*inv_std)[c] = 1.0 / std::sqrt(rv[c] + state.eps);
    auto xhat = std::make_shared<std::vector<double>>(x.size());
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t i = 0; i < inner; ++i) {
          const auto k = at(n, c, i);
          (*xhat)[k] = (x[k] - rm[c]) * (*inv_std)[c];
          out[k] = g[c] * (*xhat)[k] + b[c];
        }
    return make_result("batch_norm_eval", t.shape(), std::move(out), {t, gamma, beta},
                       [inv_std, xhat, batch, channels, inner, at](Node& self) {
                         const auto& gm = self.inputs[1]->value;
                         double* gx = grad_of(self, 0);
                         double* gg = grad_of(self, 1);
                         double* gb = grad_of(self, 2);
                         for (std::size_t n = 0; n < batch; ++n)
                           for (std::size_t c = 0; c < channels; ++c)
                             for (std::size_t i = 0; i < inner; ++i) {
                               const auto k = at(n, c, i);
                               const double dy = self.grad[k];
                               if (gx) gx[k] += dy * gm[c] * (*inv_std)[c];
                               if (gg) gg[c] += dy * (*xhat)[k];
                               if (gb) gb[c] += dy;
                             }
                       });
  }

  auto inv_std = std::make_shared<std::vector<double>>(channels);
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto rm = state.running_mean.mutable_values();
  auto rv = state.running_var.mutable_values();
  for (std::size_t c = 0; c < channels; ++c) {
    double mu = 0.0;
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t i = 0; i < inner; ++i) mu += x[at(n, c, i)];
    mu /= count;
    double var = 0.0;
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t i = 0; i < inner; ++i) {
        const double d = x[at(n, c, i)] - mu;
        var += d * d;
      }
    var /= count;
    const double is = 1.0 / std::sqrt(var + state.eps);
    (*inv_std)[c] = is;
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t i = 0; i < inner; ++i) {
        const auto k = at(n, c, i);
        (*xhat)[k] = (x[k] - mu) * is;
        out[k] = g[c] * (*xhat)[k] + b[c];
      }
    const double unbiased = count > 1.0 ? var * count / (count - 1.0) : var;
    rm[c] = (1.0 - state.momentum) * rm[c] + state.momentum * mu;
    rv[c] = (1.0 - state.momentum) * rv[c] + state.momentum * unbiased;
  }
  state.tracked.mutable_values()[0] += 1.0;
  return make_result("batch_norm_train", t.shape(), std::move(out), {t, gamma, beta},
                     [inv_std, xhat, batch, channels, inner, count, at](Node& self) {
                       const auto& gm = self.inputs[1]->value;
                       double* gx = grad_of(self, 0);
                       double* gg = grad_of(self, 1);
                       double* gb = grad_of(self, 2);
                       for (std::size_t c = 0; c < channels; ++c) {
                         double sum_dy = 0.0, sum_dy_xhat = 0.0;
                         for (std::size_t n = 0; n < batch; ++n)
                           for (std::size_t i = 0; i < inner; ++i) {
                             const auto k = at(n, c, i);
                             sum_dy += self.grad[k];
                             sum_dy_xhat += self.grad[k] * (*xhat)[k];
                           }
                         if (gg) gg[c] += sum_dy_xhat;
                         if (gb) gb[c] += sum_dy;
                         if (!gx) continue;
                         const double f = gm[c] * (*inv_std)[c] / count;
                         for (std::size_t n = 0; n < batch; ++n)
                           for (std::size_t i = 0; i < inner; ++i) {
                             const auto k = at(n, c, i);
                             gx[k] += f * (count * self.grad[k] - sum_dy - (*xhat)[k] * sum_dy_xhat);
                           }
                       }
                     });
}

Tensor conv1d_temporal(const Tensor& t, const Tensor& kernel) {
  if (t.rank() != 4) throw DimensionError("conv1d_temporal: expected [B,C,T,N], got " + shape_to_string(t.shape()));
  const std::size_t B = t.dim(0), C = t.dim(1), T = t.dim(2), N = t.dim(3);
  if (kernel.shape() != Shape{C, 3}) {
    throw DimensionError("conv1d_temporal: kernel must be [" + std::to_string(C) + ",3], got " +
                         shape_to_string(kernel.shape()));
  }
  auto x = t.values();
  auto w = kernel.values();
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const double* X = x.data() + (b * C + c) * T * N;
      double* Y = out.data() + (b * C + c) * T * N;
      for (std::size_t tt = 0; tt < T; ++tt)
        for (std::size_t k = 0; k < 3; ++k) {
          if ((tt == 0 && k == 0) || (tt + 1 == T && k == 2)) continue;
          const std::size_t src = tt + k - 1;
          const double wk = w[c * 3 + k];
          for (std::size_t n = 0; n < N; ++n) Y[tt * N + n] += wk * X[src * N + n];
        }
    }
  return make_result("conv1d_temporal", t.shape(), std::move(out), {t, kernel}, [B, C, T, N](Node& self) {
    const auto& x = self.inputs[0]->value;
    const auto& w = self.inputs[1]->value;
    double* gx = grad_of(self, 0);
    double* gw = grad_of(self, 1);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t base = (b * C + c) * T * N;
        for (std::size_t tt = 0; tt < T; ++tt)
          for (std::size_t k = 0; k < 3; ++k) {
            if ((tt == 0 && k == 0) || (tt + 1 == T && k == 2)) continue;
            const std::size_t src = tt + k - 1;
            for (std::size_t n = 0; n < N; ++n) {
              const double dy = self.grad[base + tt * N + n];
              if (gx) gx[base + src * N + n] += w[c * 3 + k] * dy;
              if (gw) gw[c * 3 + k] += x[base + src * N + n] * dy;
            }
          }
      }
  });
}

Tensor l2_normalize(const Tensor& t, std::size_t axis) {
  require_axis(t, axis, "l2_normalize");
  const auto split = split_at(t.shape(), axis);
  auto x = t.values();
  std::vector<double> out(x.size());
  auto norms = std::make_shared<std::vector<double>>(split.outer * split.inner);
  for (std::size_t o = 0; o < split.outer; ++o)
    for (std::size_t i = 0; i < split.inner; ++i) {
      double s = 0.0;
      for (std::size_t c = 0; c < split.extent; ++c) {
        const double v = x[(o * split.extent + c) * split.inner + i];
        s += v * v;
      }
      const double norm = std::sqrt(s);
      if (!(norm > 1e-12)) throw DegenerateInputError("l2_normalize: vector norm below 1e-12");
      (*norms)[o * split.inner + i] = norm;
      for (std::size_t c = 0; c < split.extent; ++c) {
        const auto k = (o * split.extent + c) * split.inner + i;
        out[k] = x[k] / norm;
      }
    }
  return make_result("l2_normalize", t.shape(), std::move(out), {t}, [split, norms](Node& self) {
    double* gx = grad_of(self, 0);
    if (!gx) return;
    const auto& y = self.value;
    for (std::size_t o = 0; o < split.outer; ++o)
      for (std::size_t i = 0; i < split.inner; ++i) {
        double dot = 0.0;
        for (std::size_t c = 0; c < split.extent; ++c) {
          const auto k = (o * split.extent + c) * split.inner + i;
          dot += y[k] * self.grad[k];
        }
        const double norm = (*norms)[o * split.inner + i];
        for (std::size_t c = 0; c < split.extent; ++c) {
          const auto k = (o * split.extent + c) * split.inner + i;
          gx[k] += (self.grad[k] - y[k] * dot) / norm;
        }
      }
  });
}

Tensor logsumexp(const Tensor& t, std::size_t axis) {
  require_axis(t, axis, "logsumexp");
  const auto split = split_at(t.shape(), axis);
  auto x = t.values();
  Shape out_shape = t.shape();
  out_shape[axis] = 1;
  std::vector<double> out(split.outer * split.inner);
  for (std::size_t o = 0; o < split.outer; ++o)
    for (std::size_t i = 0; i < split.inner; ++i) {
      double m = x[o * split.extent * split.inner + i];
      for (std::size_t c = 1; c < split.extent; ++c) m = std::max(m, x[(o * split.extent + c) * split.inner + i]);
      double s = 0.0;
      for (std::size_t c = 0; c < split.extent; ++c) s += std::exp(x[(o * split.extent + c) * split.inner + i] - m);
      out[o * split.inner + i] = m + std::log(s);
    }
  return make_result("logsumexp", std::move(out_shape), std::move(out), {t}, [split](Node& self) {
    double* gx = grad_of(self, 0);
    if (!gx) return;
    const auto& x = self.inputs[0]->value;
    for (std::size_t o = 0; o < split.outer; ++o)
      for (std::size_t i = 0; i < split.inner; ++i) {
        const double lse = self.value[o * split.inner + i];
        const double g = self.grad[o * split.inner + i];
        for (std::size_t c = 0; c < split.extent; ++c) {
          const auto k = (o * split.extent + c) * split.inner + i;
          gx[k] += g * std::exp(x[k] - lse);
        }
      }
  });
}

Tensor softmax(const Tensor& t, std::size_t axis) {
  require_axis(t, axis, "softmax");
  const auto split = split_at(t.shape(), axis);
  auto x = t.values();
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < split.outer; ++o)
    for (std::size_t i = 0; i < split.inner; ++i) {
      auto idx = [&](std::size_t c) { return (o * split.extent + c) * split.inner + i; };
      double m = x[idx(0)];
      for (std::size_t c = 1; c < split.extent; ++c) m = std::max(m, x[idx(c)]);
      double s = 0.0;
      for (std::size_t c = 0; c < split.extent; ++c) {
        out[idx(c)] = std::exp(x[idx(c)] - m);
        s += out[idx(c)];
      }
      for (std::size_t c = 0; c < split.extent; ++c) out[idx(c)] /= s;
    }
  return make_result("softmax", t.shape(), std::move(out), {t}, [split](Node& self) {
    double* gx = grad_of(self, 0);
    if (!gx) return;
    const auto& y = self.value;
    for (std::size_t o = 0; o < split.outer; ++o)
      for (std::size_t i = 0; i < split.inner; ++i) {
        auto idx = [&](std::size_t c) { return (o * split.extent + c) * split.inner + i; };
        double dot = 0.0;
        for (std::size_t c = 0; c < split.extent; ++c) dot += y[idx(c)] * self.grad[idx(c)];
        for (std::size_t c = 0; c < split.extent; ++c) gx[idx(c)] += y[idx(c)] * (self.grad[idx(c)] - dot);
      }
  });
}

}  // namespace sdscl
