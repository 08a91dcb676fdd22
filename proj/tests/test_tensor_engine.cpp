#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "helpers.hpp"
#include "sdscl/errors.hpp"
#include "sdscl/grad_check.hpp"
#include "sdscl/grad_suite.hpp"
#include "sdscl/ops.hpp"
#include "sdscl/siia.hpp"
#include "sdscl/tensor_io.hpp"

using namespace sdscl;
using sdscl::test::random_tensor;
using sdscl::test::to_vector;

namespace {

GradCheckReport check(const std::function<Tensor()>& f, std::vector<Tensor> in, double tol = 1e-5) {
  GradCheckOptions o;
  o.tolerance = tol;
  return grad_check(f, std::move(in), o);
}

}  // namespace

TEST(Tensor, ShapeInvariants) {
  auto t = Tensor::zeros({2, 3, 4});
  EXPECT_EQ(t.numel(), 24u);
  EXPECT_EQ(t.values().size(), 24u);
  EXPECT_THROW(Tensor::from_values({2, 2}, {1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor::zeros({2, 0}), DimensionError);
  EXPECT_THROW(Tensor().shape(), StateError);
}

TEST(Matmul, IdentityAndDot) {
  auto eye = Tensor::from_values({2, 2}, {1, 0, 0, 1});
  auto b = Tensor::from_values({2, 2}, {2, 3, 4, 5});
  EXPECT_EQ(to_vector(matmul(eye, b)), (std::vector<double>{2, 3, 4, 5}));
  auto r = matmul(Tensor::from_values({1, 2}, {1, 2}), Tensor::from_values({2, 1}, {3, 4}));
  EXPECT_EQ(r.shape(), (Shape{1, 1}));
  EXPECT_DOUBLE_EQ(r.item(), 11.0);
}

TEST(Matmul, MismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4,2]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  auto a = random_tensor({3, 4}, 1), b = random_tensor({4, 2}, 2);
  auto r = check([&] { return sum(matmul(a, b)); }, {a, b}, 1e-6);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(PermuteReshape, AttentionViewShapes) {
  auto x = random_tensor({1, 4, 2, 3}, 3, false);
  EXPECT_EQ(to_view(x, 2, Layout::spatial).shape(), (Shape{1, 2, 3, 4}));
  EXPECT_EQ(to_view(x, 2, Layout::temporal).shape(), (Shape{1, 2, 2, 6}));
}

TEST(PermuteReshape, RoundTripIsBitExact) {
  auto x = random_tensor({2, 8, 6, 5}, 4, false);
  for (auto layout : {Layout::spatial, Layout::temporal}) {
    auto back = from_view(to_view(x, 2, layout), layout, 6, 5);
    EXPECT_EQ(to_vector(back), to_vector(x));
  }
  EXPECT_THROW(reshape(x, {7, 7}), DimensionError);
}

TEST(Elementwise, Examples) {
  auto z = Tensor::from_values({1}, {0.0}, true);
  auto y = tanh(z);
  EXPECT_EQ(y.item(), 0.0);
  backward(sum(y));
  EXPECT_DOUBLE_EQ(z.grad()[0], 1.0);
  EXPECT_DOUBLE_EQ(leaky_relu(Tensor::from_values({1}, {-2.0})).item(), -0.02);
  EXPECT_THROW(log(Tensor::from_values({2}, {1.0, 0.0})), DomainError);
  EXPECT_THROW(log(Tensor::from_values({1}, {-1.0})), DomainError);
}

TEST(Elementwise, TanhGradientAtRandomPoints) {
  auto x = random_tensor({10}, 5);
  auto r = check([&] { return sum(tanh(x)); }, {x}, 1e-8);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(Reduce, Examples) {
  EXPECT_DOUBLE_EQ(reduce(Tensor::from_values({3}, {2, 4, 6}), {0}, ReduceMode::mean).item(), 4.0);
  auto ones = Tensor::full({4}, 1.0, true);
  auto s = reduce(ones, {0}, ReduceMode::sum);
  EXPECT_DOUBLE_EQ(s.item(), 4.0);
  backward(s);
  EXPECT_EQ(to_vector(Tensor::from_values({4}, {ones.grad().begin(), ones.grad().end()})),
            (std::vector<double>{1, 1, 1, 1}));
}

TEST(Reduce, MaxRoutesToFirstMaximum) {
  auto x = Tensor::from_values({3}, {3, 5, 5}, true);
  auto m = reduce(x, {0}, ReduceMode::max);
  EXPECT_DOUBLE_EQ(m.item(), 5.0);
  backward(m);
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{0, 1, 0}));
}

TEST(Reduce, KeepsAxesAndRejectsBadAxes) {
  auto x = random_tensor({2, 3, 4}, 6, false);
  EXPECT_EQ(reduce(x, {0, 2}, ReduceMode::sum).shape(), (Shape{1, 3, 1}));
  EXPECT_THROW(reduce(x, std::initializer_list<std::size_t>{}, ReduceMode::sum), ArgumentError);
  EXPECT_THROW(reduce(x, {1, 1}, ReduceMode::sum), ArgumentError);
}

TEST(Concat, ShapesAndInverse) {
  auto a = random_tensor({1, 2}, 7, false), b = random_tensor({1, 2}, 8, false);
  auto c = concat({a, b}, 1);
  EXPECT_EQ(c.shape(), (Shape{1, 4}));
  EXPECT_EQ(to_vector(slice(c, 1, 0, 2)), to_vector(a));
  EXPECT_EQ(to_vector(slice(c, 1, 2, 2)), to_vector(b));
  auto f = random_tensor({2, 3, 4, 5}, 9, false);
  EXPECT_EQ(concat({f, f, f, f}, 1).shape(), (Shape{2, 12, 4, 5}));
  EXPECT_THROW(concat({a, random_tensor({2, 2}, 1, false)}, 1), DimensionError);
}

TEST(Linear, Examples) {
  auto x = random_tensor({2, 3, 2, 2}, 10, false);
  auto eye = Tensor::from_values({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_EQ(to_vector(linear(x, eye, Tensor::zeros({3}), 1)), to_vector(x));
  auto y = linear(Tensor::from_values({1, 1}, {3}), Tensor::from_values({1, 1}, {2}), Tensor::from_values({1}, {1}), 1);
  EXPECT_DOUBLE_EQ(y.item(), 7.0);
  EXPECT_THROW(linear(x, Tensor::zeros({3, 4}), Tensor(), 1), DimensionError);
}

TEST(Linear, GradientWrtWeightAndBias) {
  auto x = random_tensor({2, 3, 2, 2}, 11), w = random_tensor({4, 3}, 12), b = random_tensor({4}, 13);
  auto weights = random_tensor({2, 4, 2, 2}, 14, false);
  auto r = check([&] { return sum(mul(linear(x, w, b, 1), weights)); }, {w, b}, 1e-6);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(BatchNorm, TrainModeNormalizes) {
  // Variance 1 - eps/var holds within 1e-6 only when var >= 10, hence the wide inputs.
  auto x = random_tensor({4, 3, 5, 6}, 15, false, -10.0, 10.0);
  BatchNormState state(3);
  auto y = batch_norm(x, Tensor::full({3}, 1.0), Tensor::zeros({3}), state, Mode::train);
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    const std::size_t n = 4 * 5 * 6;
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t i = 0; i < 30; ++i) m += y.values()[(b * 3 + c) * 30 + i] / n;
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t i = 0; i < 30; ++i) v += std::pow(y.values()[(b * 3 + c) * 30 + i] - m, 2) / n;
    EXPECT_LE(std::abs(m), 1e-6);
    EXPECT_NEAR(v, 1.0, 1e-6);
  }
}

TEST(BatchNorm, ZeroGammaGivesBeta) {
  auto x = random_tensor({2, 3, 2, 2}, 16, false);
  BatchNormState state(3);
  auto beta = Tensor::from_values({3}, {0.5, -1.0, 2.0});
  auto y = batch_norm(x, Tensor::zeros({3}), beta, state, Mode::train);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_DOUBLE_EQ(y.values()[i], beta.values()[(i / 4) % 3]);
}

TEST(BatchNorm, EvalBeforeTrainIsStateError) {
  BatchNormState state(3);
  EXPECT_THROW(batch_norm(Tensor::zeros({2, 3}), Tensor::full({3}, 1.0), Tensor::zeros({3}), state, Mode::eval),
               StateError);
}

TEST(BatchNorm, RunningStatisticsUseMomentum) {
  auto x = random_tensor({4, 2, 3}, 17, false);
  BatchNormState state(2);
  batch_norm(x, Tensor::full({2}, 1.0), Tensor::zeros({2}), state, Mode::train);
  double m0 = 0;
  for (std::size_t b = 0; b < 4; ++b)
    for (std::size_t i = 0; i < 3; ++i) m0 += x.values()[(b * 2) * 3 + i] / 12.0;
  EXPECT_NEAR(state.running_mean.values()[0], 0.1 * m0, 1e-15);
  EXPECT_DOUBLE_EQ(state.tracked.item(), 1.0);
}

TEST(BatchNorm, GradientSmallInput) {
  auto x = random_tensor({2, 3, 2, 2}, 18), g = random_tensor({3}, 19), b = random_tensor({3}, 20);
  auto w = random_tensor({2, 3, 2, 2}, 21, false);
  BatchNormState state(3);
  auto r = check([&] { return sum(mul(batch_norm(x, g, b, state, Mode::train), w)); }, {x, g, b});
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(Conv1d, IdentityAndDifference) {
  auto x = random_tensor({2, 3, 5, 4}, 22, false);
  std::vector<double> id, diff;
  for (int c = 0; c < 3; ++c) id.insert(id.end(), {0, 1, 0}), diff.insert(diff.end(), {-1, 1, 0});
  EXPECT_EQ(to_vector(conv1d_temporal(x, Tensor::from_values({3, 3}, id))), to_vector(x));
  // Constant in time: every frame after the first sees x[t] - x[t-1] = 0.
  auto c = Tensor::full({1, 3, 5, 2}, 1.5);
  auto y = conv1d_temporal(c, Tensor::from_values({3, 3}, diff));
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t t = 1; t < 5; ++t)
      for (std::size_t n = 0; n < 2; ++n) EXPECT_EQ(y.at({0, ch, t, n}), 0.0);
}

TEST(Conv1d, Gradient) {
  auto x = random_tensor({2, 3, 5, 4}, 23), k = random_tensor({3, 3}, 24);
  auto w = random_tensor({2, 3, 5, 4}, 25, false);
  auto r = check([&] { return sum(mul(conv1d_temporal(x, k), w)); }, {x, k}, 1e-6);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(L2Normalize, Examples) {
  auto y = l2_normalize(Tensor::from_values({1, 2}, {3, 4}), 1);
  EXPECT_DOUBLE_EQ(y.values()[0], 0.6);
  EXPECT_DOUBLE_EQ(y.values()[1], 0.8);
  auto unit = Tensor::from_values({1, 2}, {0.6, 0.8});
  EXPECT_NEAR(test::max_abs_diff(l2_normalize(unit, 1), unit), 0.0, 1e-16);
  auto x = random_tensor({3, 4}, 26, false);
  EXPECT_LE(test::max_abs_diff(l2_normalize(scale(x, 5.0), 1), l2_normalize(x, 1)), 1e-15);
  EXPECT_THROW(l2_normalize(Tensor::zeros({1, 3}), 1), DegenerateInputError);
}

TEST(Backward, SumGivesOnesAndNeedsScalar) {
  auto x = random_tensor({2, 3}, 27);
  backward(sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
  EXPECT_THROW(backward(x), ArgumentError);
}

TEST(Backward, FullGraphTanhXW) {
  auto x = random_tensor({3, 4}, 28), w = random_tensor({4, 2}, 29);
  auto r = check([&] { return sum(tanh(matmul(x, w))); }, {x, w});
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(Backward, StopGradientBlocksFlow) {
  auto x = random_tensor({4}, 30), y = random_tensor({4}, 31);
  backward(sum(mul(stop_gradient(x), y)));
  for (double g : x.grad()) EXPECT_EQ(g, 0.0);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(y.grad()[i], x.values()[i]);
}

TEST(Backward, GradientsAccumulateUntilZeroed) {
  auto x = random_tensor({3}, 32);
  backward(sum(x));
  backward(sum(x));
  EXPECT_EQ(x.grad()[0], 2.0);
  x.zero_grad();
  backward(sum(x));
  EXPECT_EQ(x.grad()[0], 1.0);
}

TEST(Tape, TopologicalOrder) {
  auto a = random_tensor({2}, 33);
  auto b = tanh(a);
  auto c = mul(b, a);
  auto d = sum(c);
  auto tape = Tape::record(d);
  const auto nodes = tape.nodes();
  auto pos = [&](const Tensor& t) {
    return std::find(nodes.begin(), nodes.end(), t.node().get()) - nodes.begin();
  };
  for (std::size_t i = 0; i < nodes.size(); ++i)
    for (const auto& in : nodes[i]->inputs) {
      auto p = std::find(nodes.begin(), nodes.end(), in.get()) - nodes.begin();
      EXPECT_LT(static_cast<std::size_t>(p), i);
    }
  EXPECT_LT(pos(b), pos(c));
  EXPECT_LT(pos(c), pos(d));
}

TEST(Forward, Deterministic) {
  auto a = random_tensor({3, 5}, 34, false), b = random_tensor({5, 2}, 35, false);
  EXPECT_EQ(to_vector(softmax(matmul(a, b), 1)), to_vector(softmax(matmul(a, b), 1)));
}

TEST(GradCheck, SquareAtThree) {
  auto x = Tensor::from_values({1}, {3.0}, true);
  auto r = grad_check([&] { return sum(mul(x, x)); }, {x});
  EXPECT_TRUE(r.passed);
  ASSERT_EQ(r.entries.size(), 1u);
  EXPECT_NEAR(r.entries[0].analytic, 6.0, 1e-12);
  EXPECT_NEAR(r.entries[0].numeric, 6.0, 1e-8);
}

TEST(GradCheck, CorruptedGradientFails) {
  auto x = random_tensor({2, 8, 6, 5}, 36);
  GradCheckOptions o;
  o.corrupt_factor = 1.01;
  auto r = grad_check([&] { return sum(tanh(x)); }, {x}, o);
  EXPECT_FALSE(r.passed);
}

TEST(GradCheck, CorruptionSurvivesRefinement) {
  // Refinement must not turn a wrong gradient into a skipped entry.
  auto x = random_tensor({5}, 37);
  GradCheckOptions o;
  o.corrupt_factor = 1.01;
  o.refine_failures = true;
  auto r = grad_check([&] { return sum(exp(x)); }, {x}, o);
  EXPECT_FALSE(r.passed);
  EXPECT_EQ(r.skipped, 0u);
}

TEST(GradCheck, NonFiniteIsEvaluationError) {
  auto x = Tensor::from_values({1}, {1.0}, true);
  EXPECT_THROW(grad_check([&] { return sum(scale(x, std::numeric_limits<double>::infinity())); }, {x}),
               EvaluationError);
}

TEST(GradCheck, KinkIsSkippedNotFailed) {
  // |x| at 0 through leaky ReLU: the central difference straddles the kink.
  auto x = Tensor::from_values({1}, {2e-6}, true);
  GradCheckOptions o;
  o.refine_failures = true;
  o.max_skip_fraction = 1.0;
  auto r = grad_check([&] { return sum(leaky_relu(x, -1.0)); }, {x}, o);
  EXPECT_EQ(r.skipped, 1u);
  EXPECT_TRUE(r.passed);
}

TEST(GradSuite, OpsScopeOverSeveralSeeds) {
  for (std::uint64_t seed = 0; seed < 3; ++seed)
    for (const auto& r : run_gradient_cases(CheckScope::ops, seed, suite_options(CheckScope::ops)))
      EXPECT_TRUE(r.passed) << r.name << " seed " << seed << " err " << r.max_rel_error;
}

TEST(GradSuite, ScopeNames) {
  for (auto s : {CheckScope::ops, CheckScope::siia, CheckScope::losses, CheckScope::end2end})
    EXPECT_EQ(check_scope_from_string(to_string(s)), s);
  EXPECT_THROW(check_scope_from_string("all"), ArgumentError);
}

TEST(TensorIo, DumpRoundTripsExactly) {
  auto t = random_tensor({2, 3, 2}, 38, false);
  std::stringstream ss;
  write_tensor(ss, t);
  std::string header;
  std::getline(ss, header);
  EXPECT_EQ(header, "shape: 2 3 2");
  ss.seekg(0);
  EXPECT_EQ(to_vector(read_tensor(ss)), to_vector(t));
  std::stringstream bad("3 4\n1\n");
  EXPECT_THROW(read_tensor(bad), ParseError);
}

TEST(TensorIo, CheckpointRestoreChecksNamesAndShapes) {
  const auto dir = std::filesystem::temp_directory_path() / "sdscl_test_ckpt";
  std::filesystem::remove_all(dir);
  auto a = random_tensor({2, 2}, 39, false), b = random_tensor({3}, 40, false);
  save_checkpoint(dir, {{"a", a}, {"b", b}});
  std::vector<NamedTensor> targets{{"a", Tensor::zeros({2, 2})}, {"b", Tensor::zeros({3})}};
  restore_checkpoint(dir, targets);
  EXPECT_EQ(to_vector(targets[0].tensor), to_vector(a));
  std::vector<NamedTensor> wrong{{"a", Tensor::zeros({4})}};
  EXPECT_THROW(restore_checkpoint(dir, wrong), SchemaError);
  std::vector<NamedTensor> missing{{"c", Tensor::zeros({1})}};
  EXPECT_THROW(restore_checkpoint(dir, missing), SchemaError);
  std::filesystem::remove_all(dir);
}
