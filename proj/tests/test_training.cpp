#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "helpers.hpp"
#include "sdscl/errors.hpp"
#include "sdscl/training.hpp"

using namespace sdscl;
using sdscl::test::random_tensor;
using sdscl::test::to_vector;

namespace {

SgdConfig schedule(double base, std::size_t warmup, std::vector<std::size_t> milestones, std::size_t total) {
  SgdConfig c;
  c.base_lr = base;
  c.warmup_epochs = warmup;
  c.decay_milestones = std::move(milestones);
  c.total_epochs = total;
  return c;
}

ModelConfig small_model() {
  ModelConfig m;
  m.channels = 8;
  m.siia.channels = 8;
  m.siia.heads = 2;
  m.contrast.channels = 8;
  return m;
}

Dataset small_data(std::size_t per_class, std::uint64_t seed) {
  SyntheticConfig c;
  c.per_class = per_class;
  c.frames = 12;
  c.joints = 5;
  c.seed = seed;
  return generate_synthetic(c);
}

SgdConfig short_run(std::size_t epochs, std::size_t batch) {
  SgdConfig c;
  c.base_lr = 0.01;
  c.total_epochs = epochs;
  c.batch_size = batch;
  return c;
}

std::vector<double> flatten(const std::vector<NamedTensor>& tensors) {
  std::vector<double> out;
  for (const auto& t : tensors) out.insert(out.end(), t.tensor.values().begin(), t.tensor.values().end());
  return out;
}

}  // namespace

TEST(LrAt, WarmupExamples) {
  auto c = schedule(0.001, 5, {}, 70);
  EXPECT_NEAR(lr_at(0, c), 0.0002, 1e-15);
  EXPECT_NEAR(lr_at(4, c), 0.001, 1e-15);
  EXPECT_NEAR(lr_at(10, c), 0.001, 1e-15);
}

TEST(LrAt, StepDecayAfterMilestone) {
  auto c = schedule(0.001, 5, {60}, 70);
  EXPECT_NEAR(lr_at(59, c), 0.001, 1e-15);
  EXPECT_NEAR(lr_at(61, c), 0.0001, 1e-15);
  EXPECT_DOUBLE_EQ(lr_at(0, schedule(0.3, 0, {}, 10)), 0.3);
}

TEST(LrAt, PiecewiseMonotone) {
  for (std::size_t warmup = 0; warmup < 6; ++warmup) {
    auto c = schedule(0.05, warmup, {8, 15, 22}, 30);
    for (std::size_t e = 1; e < 30; ++e) {
      if (e < warmup) EXPECT_GE(lr_at(e, c), lr_at(e - 1, c));
      else if (e > warmup) EXPECT_LE(lr_at(e, c), lr_at(e - 1, c));
    }
  }
}

TEST(SgdConfig, Validation) {
  auto ok = schedule(0.1, 0, {5, 8}, 10);
  EXPECT_NO_THROW(ok.validate());
  auto bad = ok;
  bad.base_lr = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = ok;
  bad.momentum = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = ok;
  bad.decay_milestones = {8, 5};
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = ok;
  bad.decay_milestones = {10};
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Sgd, ZeroLearningRateIsNoOp) {
  auto p = random_tensor({3, 4}, 1);
  backward(sum(mul(p, p)));
  auto before = to_vector(p);
  SgdConfig c;
  Sgd opt({{"p", p}}, c);
  opt.step(0.0);
  EXPECT_EQ(to_vector(p), before);
}

TEST(Sgd, PlainGradientDescent) {
  auto p = random_tensor({5}, 2);
  backward(sum(mul(p, p)));
  auto before = to_vector(p);
  SgdConfig c;
  c.momentum = 0.0;
  c.weight_decay = 0.0;
  Sgd opt({{"p", p}}, c);
  opt.step(0.1);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(p.values()[i], before[i] - 0.1 * 2 * before[i], 1e-15);
}

TEST(Sgd, NesterovMatchesScalarSimulation) {
  auto theta = Tensor::from_values({1}, {1.0}, true);
  SgdConfig c;
  c.momentum = 0.9;
  c.weight_decay = 0.0;
  c.nesterov = true;
  Sgd opt({{"theta", theta}}, c);
  double x = 1.0, buf = 0.0;
  for (int step = 0; step < 2; ++step) {
    opt.zero_grad();
    backward(scale(mul(theta, theta), 0.5));
    opt.step(0.1);
    const double g = x;
    buf = 0.9 * buf + g;
    x -= 0.1 * (g + 0.9 * buf);
    EXPECT_NEAR(theta.values()[0], x, 1e-12) << "step " << step;
  }
}

TEST(Sgd, WeightDecayShrinksUntouchedParameter) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto p = random_tensor({4}, seed);
    SgdConfig c;
    c.weight_decay = 1e-2;
    Sgd opt({{"p", p}}, c);
    double prev = std::inner_product(p.values().begin(), p.values().end(), p.values().begin(), 0.0);
    for (int s = 0; s < 3; ++s) {
      opt.step(0.1);
      double now = std::inner_product(p.values().begin(), p.values().end(), p.values().begin(), 0.0);
      EXPECT_LT(now, prev);
      prev = now;
    }
  }
}

TEST(Sgd, FrozenParameterUntouched) {
  auto frozen = random_tensor({3}, 3, false);
  auto before = to_vector(frozen);
  SgdConfig c;
  Sgd opt({{"frozen", frozen}}, c);
  opt.step(1.0);
  EXPECT_EQ(to_vector(frozen), before);
}

TEST(Sgd, BuffersShapeMatchParameters) {
  auto a = random_tensor({2, 3}, 1);
  auto b = random_tensor({4}, 2);
  Sgd opt({{"a", a}, {"b", b}}, SgdConfig{});
  auto bufs = opt.buffers();
  ASSERT_EQ(bufs.size(), 2u);
  EXPECT_EQ(bufs[0].name, "momentum.a");
  EXPECT_EQ(bufs[0].tensor.shape(), a.shape());
  EXPECT_EQ(bufs[1].tensor.shape(), b.shape());
}

TEST(CrossEntropy, UniformLogitsGiveLogK) {
  std::vector<int> labels{0, 3, 2};
  EXPECT_NEAR(cross_entropy(Tensor::zeros({3, 4}), labels).item(), std::log(4.0), 1e-15);
  std::vector<int> bad{0, 4, 1};
  EXPECT_THROW(cross_entropy(Tensor::zeros({3, 4}), bad), DataError);
}

TEST(RecognitionHead, SoftmaxSumsToOne) {
  Initializer init(0);
  RecognitionHead head(6, 5, 4, init);
  auto x = random_tensor({7, 6}, 1, false, -5, 5);
  auto p = softmax(head.logits(x), 1);
  for (std::size_t r = 0; r < 7; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < 4; ++k) s += p.at({r, k});
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(RecognitionHead, OneHotFeaturesAreLearnedPerfectly) {
  Initializer init(1);
  RecognitionHead head(4, 0, 4, init);
  std::vector<double> feats;
  std::vector<int> labels;
  for (int i = 0; i < 40; ++i) {
    for (int k = 0; k < 4; ++k) feats.push_back(k == i % 4 ? 1.0 : 0.0);
    labels.push_back(i % 4);
  }
  auto x = Tensor::from_values({40, 4}, feats);
  SgdConfig c;
  c.weight_decay = 0.0;
  Sgd opt(head.parameters(), c);
  for (int s = 0; s < 50; ++s) {
    opt.zero_grad();
    backward(cross_entropy(head.logits(x), labels));
    opt.step(0.5);
  }
  auto logits = head.logits(x);
  for (std::size_t r = 0; r < 40; ++r) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < 4; ++k)
      if (logits.at({r, k}) > logits.at({r, best})) best = k;
    EXPECT_EQ(static_cast<int>(best), labels[r]);
  }
}

TEST(EpochBatches, DropsTailUnlessKept) {
  std::vector<std::size_t> pool(10);
  std::iota(pool.begin(), pool.end(), 0);
  std::mt19937_64 rng(0);
  auto dropped = epoch_batches(pool, 4, rng);
  EXPECT_EQ(dropped.size(), 2u);
  auto kept = epoch_batches(pool, 4, rng, true);
  ASSERT_EQ(kept.size(), 3u);
  EXPECT_EQ(kept.back().size(), 2u);
}

TEST(Pretrain, SameSeedSameMetrics) {
  auto data = small_data(6, 0);
  auto run = [&] {
    Model model(small_model(), data.joints(), 5);
    std::ostringstream log;
    pretrain(data, model, short_run(2, 4), 8, &log);
    return std::make_pair(log.str(), flatten(model.parameters()));
  };
  auto a = run();
  auto b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  EXPECT_FALSE(a.first.empty());
  std::ostringstream header;
  write_metrics_header(header);
  EXPECT_EQ(header.str(), "epoch,step,stl,tsl,gl,total,lr\n");
}

TEST(Pretrain, BatchOfOneIsRejected) {
  auto data = small_data(2, 0);
  Model model(small_model(), data.joints(), 0);
  try {
    pretrain(data, model, short_run(1, 1), 8);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("batch_size"), std::string::npos) << e.what();
  }
}

TEST(Evaluate, BatchSizeInvariantAndChecked) {
  auto data = small_data(5, 1);
  Model model(small_model(), data.joints(), 2);
  calibrate_batch_norm(model, data, 8, 8);
  Initializer init(head_seed(2));
  RecognitionHead head(16, 0, 4, init);
  std::vector<int> p1, p7;
  const double a = evaluate(model, head, data, 8, 1, &p1);
  const double b = evaluate(model, head, data, 8, 7, &p7);
  EXPECT_EQ(a, b);
  EXPECT_EQ(p1, p7);
  EXPECT_THROW(evaluate(model, head, Dataset{}, 8), ArgumentError);
}

TEST(Finetune, SingleClassIsTriviallyPerfect) {
  auto base = small_data(4, 0);
  Dataset one;
  one.num_classes = 1;
  for (std::size_t i = 0; i < base.size(); ++i) {
    if (*base.sequences[i].label != 0) continue;
    one.sequences.push_back(base.sequences[i]);
    one.labeled_mask.push_back(true);
  }
  Model model(small_model(), one.joints(), 0);
  Initializer init(0);
  RecognitionHead head(16, 0, 1, init);
  auto r = finetune(one, one, model, head, short_run(1, 2), 8);
  EXPECT_EQ(r.test_accuracy, 1.0);
}

TEST(Finetune, LabelOutOfRangeIsDataError) {
  auto data = small_data(3, 0);
  data.num_classes = 2;
  Model model(small_model(), data.joints(), 0);
  Initializer init(0);
  RecognitionHead head(16, 0, 2, init);
  EXPECT_THROW(finetune(data, data, model, head, short_run(1, 4), 8), DataError);
}

TEST(Finetune, ZeroEncoderScaleLeavesEncoderAlone) {
  auto data = small_data(4, 0);
  Model model(small_model(), data.joints(), 0);
  auto before = flatten(model.encoder_parameters());
  Initializer init(0);
  RecognitionHead head(16, 0, 4, init);
  FinetuneOptions opts;
  opts.freeze_statistics = true;
  opts.encoder_lr_scale = 0.0;
  finetune(data, data, model, head, short_run(2, 4), 8, opts);
  EXPECT_EQ(flatten(model.encoder_parameters()), before);
  opts.encoder_lr_scale = -1.0;
  EXPECT_THROW(opts.validate(), ConfigError);
}

TEST(LinearProbe, EncoderIsFrozen) {
  auto data = small_data(5, 2);
  auto [train, test] = stratified_split(data, 0.2, 0);
  Model model(small_model(), data.joints(), 3);
  pretrain(train, model, short_run(1, 4), 8);
  auto before = flatten(model.encoder_parameters());
  auto before_all = flatten(model.parameters());
  Initializer init(head_seed(3));
  RecognitionHead head(16, 0, 4, init);
  auto r = linear_probe(train, test, model, head, short_run(3, 4), 8);
  EXPECT_EQ(flatten(model.encoder_parameters()), before);
  EXPECT_EQ(flatten(model.parameters()), before_all);
  EXPECT_GE(r.test_accuracy, 0.0);
  EXPECT_LE(r.test_accuracy, 1.0);
}

TEST(Model, SeparateEncodersDoubleEncoderParameters) {
  auto shared = small_model();
  auto separate = shared;
  separate.separate_encoders = true;
  Model a(shared, 5, 0), b(separate, 5, 0);
  EXPECT_EQ(b.encoder_parameters().size(), 2 * a.encoder_parameters().size());
}
