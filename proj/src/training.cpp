#include "sdscl/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include <fmt/format.h>

#include "sdscl/errors.hpp"

namespace sdscl {

void SgdConfig::validate() const {
  if (!(base_lr > 0.0)) throw ConfigError("base_lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(decay_factor > 0.0)) throw ConfigError("decay_factor must be > 0");
  if (total_epochs == 0) throw ConfigError("total_epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  for (std::size_t i = 0; i < decay_milestones.size(); ++i) {
    if (decay_milestones[i] >= total_epochs) throw ConfigError("decay_milestones must be < total_epochs");
    if (i > 0 && decay_milestones[i] <= decay_milestones[i - 1]) {
      throw ConfigError("decay_milestones must be strictly increasing");
    }
  }
}

double lr_at(std::size_t epoch, const SgdConfig& config) {
  if (epoch < config.warmup_epochs) {
    return config.base_lr * static_cast<double>(epoch + 1) / static_cast<double>(config.warmup_epochs);
  }
  const auto passed = std::count_if(config.decay_milestones.begin(), config.decay_milestones.end(),
                                    [epoch](std::size_t m) { return m <= epoch; });
  return config.base_lr * std::pow(config.decay_factor, static_cast<double>(passed));
}

Sgd::Sgd(std::vector<NamedTensor> params, const SgdConfig& config)
    : params_(std::move(params)),
      momentum_(config.momentum),
      nesterov_(config.nesterov),
      weight_decay_(config.weight_decay) {
  velocity_.reserve(params_.size());
  for (const auto& p : params_) velocity_.push_back(Tensor::zeros(p.tensor.shape()));
}

void Sgd::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& param = params_[i].tensor;
    if (!param.requires_grad()) continue;
    auto theta = param.mutable_values();
    auto buf = velocity_[i].mutable_values();
    const auto grad = param.grad();
    if (buf.size() != theta.size() || (!grad.empty() && grad.size() != theta.size())) {
      throw StateError("sgd: buffer/gradient shape mismatch for '" + params_[i].name + "'");
    }
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double g = (grad.empty() ? 0.0 : grad[k]) + weight_decay_ * theta[k];
      buf[k] = momentum_ * buf[k] + g;
      theta[k] -= lr * (nesterov_ ? g + momentum_ * buf[k] : buf[k]);
    }
  }
}

void Sgd::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

std::vector<NamedTensor> Sgd::buffers() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < params_.size(); ++i) out.push_back({"momentum." + params_[i].name, velocity_[i]});
  return out;
}

namespace {

ModelConfig normalized(ModelConfig c) {
  c.siia.channels = c.channels;
  c.contrast.channels = c.channels;
  return c;
}

template <class T>
void append(std::vector<T>& dst, std::vector<T> src) {
  dst.insert(dst.end(), std::make_move_iterator(src.begin()), std::make_move_iterator(src.end()));
}

}  // namespace

Model::Model(const ModelConfig& config, std::size_t joints, std::uint64_t seed)
    : Model(normalized(config), joints, Initializer(seed)) {}

Model::Model(const ModelConfig& config, std::size_t joints, Initializer&& init)
    : config_(config),
      joint_encoder_(make_encoder(config.encoder, config.channels, joints, config.encoder_blocks, init)),
      motion_encoder_(config.separate_encoders
                          ? make_encoder(config.encoder, config.channels, joints, config.encoder_blocks, init)
                          : nullptr),
      siia_(config.siia, init),
      heads_(config.contrast, init) {}

Encoder& Model::encoder(Modality m) {
  return m == Modality::motion && motion_encoder_ ? *motion_encoder_ : *joint_encoder_;
}

Model::Features Model::encode(const BatchPair& batch, Mode mode) {
  if (motion_encoder_) {
    return {joint_encoder_->encode(batch.joints, mode), motion_encoder_->encode(batch.motion, mode)};
  }
  // One call over both modalities, so batch-norm statistics are shared the same
  // way in train and eval mode.
  const std::size_t B = batch.joints.dim(0);
  Tensor f = joint_encoder_->encode(concat({batch.joints, batch.motion}, 0), mode);
  return {slice(f, 0, 0, B), slice(f, 0, B, B)};
}

SiiaPair Model::attend(const BatchPair& batch, Mode mode) {
  auto f = encode(batch, mode);
  return siia_forward(f.f_j, f.f_m, siia_, mode);
}

TotalLoss Model::pretrain_loss(const BatchPair& batch, Mode mode) {
  auto pair = attend(batch, mode);
  return total_loss(pair.joint.features, pair.motion.features, heads_, config_.losses, mode);
}

Tensor Model::pooled_features(const BatchPair& batch, Mode mode) {
  auto f = encode(batch, mode);
  const std::size_t B = f.f_j.dim(0), C = f.f_j.dim(1);
  Tensor pooled = reduce(concat({f.f_j, f.f_m}, 1), {2, 3}, ReduceMode::mean);
  return reshape(pooled, {B, 2 * C});
}

std::vector<NamedTensor> Model::encoder_parameters() const {
  auto out = prefixed("encoder", joint_encoder_->parameters());
  if (motion_encoder_) append(out, prefixed("motion_encoder", motion_encoder_->parameters()));
  return out;
}

std::vector<NamedTensor> Model::encoder_buffers() const {
  auto out = prefixed("encoder", joint_encoder_->buffers());
  if (motion_encoder_) append(out, prefixed("motion_encoder", motion_encoder_->buffers()));
  return out;
}

std::vector<NamedTensor> Model::parameters() const {
  auto out = encoder_parameters();
  append(out, prefixed("siia", siia_.parameters()));
  append(out, prefixed("heads", heads_.parameters()));
  return out;
}

std::vector<NamedTensor> Model::buffers() const {
  auto out = encoder_buffers();
  append(out, prefixed("siia", siia_.buffers()));
  append(out, prefixed("heads", heads_.buffers()));
  return out;
}

std::vector<NamedTensor> Model::state() const {
  auto out = parameters();
  append(out, buffers());
  return out;
}

RecognitionHead::RecognitionHead(std::size_t in, std::size_t hidden, int num_classes, Initializer& init)
    : num_classes_(num_classes) {
  if (num_classes < 1) throw ArgumentError("RecognitionHead: num_classes must be >= 1");
  if (in == 0) throw ArgumentError("RecognitionHead: input width must be positive");
  const auto K = static_cast<std::size_t>(num_classes);
  if (hidden == 0) {
    w2_ = init.uniform_fan_in({K, in}, in);
  } else {
    w1_ = init.uniform_fan_in({hidden, in}, in);
    b1_ = Tensor::zeros({hidden}, true);
    w2_ = init.uniform_fan_in({K, hidden}, hidden);
  }
  b2_ = Tensor::zeros({K}, true);
}

void RecognitionHead::fit_standardization(const Tensor& features) {
  if (features.rank() != 2 || features.dim(0) == 0) throw DimensionError("fit_standardization: expected [R,D]");
  const std::size_t R = features.dim(0), D = features.dim(1);
  std::vector<double> mean(D, 0.0), var(D, 0.0);
  const auto v = features.values();
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t d = 0; d < D; ++d) mean[d] += v[r * D + d] / static_cast<double>(R);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t d = 0; d < D; ++d) var[d] += (v[r * D + d] - mean[d]) * (v[r * D + d] - mean[d]) / static_cast<double>(R);
  std::vector<double> shift(D), factor(D);
  for (std::size_t d = 0; d < D; ++d) {
    factor[d] = 1.0 / std::sqrt(var[d] + 1e-4);
    shift[d] = -mean[d] * factor[d];
  }
  shift_ = Tensor::from_values({1, D}, std::move(shift));
  factor_ = Tensor::from_values({1, D}, std::move(factor));
}

Tensor RecognitionHead::logits(const Tensor& features) const {
  if (features.rank() != 2) throw DimensionError("RecognitionHead: expected [B,D], got " + shape_to_string(features.shape()));
  Tensor x = features;
  if (factor_.defined()) {
    const std::size_t B = features.dim(0), D = features.dim(1);
    if (D != factor_.dim(1)) throw DimensionError("RecognitionHead: feature width changed since standardization");
    std::vector<double> f, s;
    f.reserve(B * D);
    s.reserve(B * D);
    for (std::size_t b = 0; b < B; ++b) {
      f.insert(f.end(), factor_.values().begin(), factor_.values().end());
      s.insert(s.end(), shift_.values().begin(), shift_.values().end());
    }
    x = add(mul(x, Tensor::from_values({B, D}, std::move(f))), Tensor::from_values({B, D}, std::move(s)));
  }
  Tensor h = w1_.defined() ? leaky_relu(linear(x, w1_, b1_, 1)) : x;
  return linear(h, w2_, b2_, 1);
}

std::vector<NamedTensor> RecognitionHead::parameters() const {
  std::vector<NamedTensor> out;
  if (w1_.defined()) {
    out.push_back({"fc1.weight", w1_});
    out.push_back({"fc1.bias", b1_});
  }
  out.push_back({"fc2.weight", w2_});
  out.push_back({"fc2.bias", b2_});
  return out;
}

std::vector<NamedTensor> RecognitionHead::buffers() const {
  if (!factor_.defined()) return {};
  return {{"input.shift", shift_}, {"input.factor", factor_}};
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("cross_entropy: logits " + shape_to_string(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  std::vector<double> onehot(B * K, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= K) {
      throw DataError("cross_entropy: label " + std::to_string(labels[b]) + " outside [0," + std::to_string(K) + ")");
    }
    onehot[b * K + static_cast<std::size_t>(labels[b])] = 1.0;
  }
  Tensor target = reduce(mul(logits, Tensor::from_values({B, K}, std::move(onehot))), {1}, ReduceMode::sum);
  return mean(sub(logsumexp(logits, 1), target));
}

std::vector<std::vector<std::size_t>> epoch_batches(std::span<const std::size_t> pool, std::size_t batch_size,
                                                     std::mt19937_64& rng, bool keep_tail) {
  if (batch_size == 0) throw ArgumentError("epoch_batches: batch_size must be positive");
  std::vector<std::size_t> order(pool.begin(), pool.end());
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    if (end - start < batch_size && !keep_tail) break;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

void write_metrics_header(std::ostream& os) { os << "epoch,step,stl,tsl,gl,total,lr\n"; }

namespace {

void require_finite(double value, const char* what) {
  if (!std::isfinite(value)) throw EvaluationError(std::string(what) + ": loss became non-finite");
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> out(n);
  std::iota(out.begin(), out.end(), std::size_t{0});
  return out;
}

void check_labels(const Dataset& data, int num_classes, const char* what) {
  for (const auto& seq : data.sequences) {
    if (seq.label && (*seq.label < 0 || *seq.label >= num_classes)) {
      throw DataError(std::string(what) + ": label " + std::to_string(*seq.label) + " outside [0," +
                      std::to_string(num_classes) + ")");
    }
  }
}

bool encoder_has_statistics(const Model& model) {
  for (const auto& b : model.encoder_buffers()) {
    if (b.name.ends_with(".tracked") && !(b.tensor.item() > 0.0)) return false;
  }
  return true;
}

/// Rows of a [R,D] tensor, detached.
Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows) {
  const std::size_t D = t.dim(1);
  std::vector<double> out;
  out.reserve(rows.size() * D);
  const auto v = t.values();
  for (auto r : rows) out.insert(out.end(), v.begin() + static_cast<std::ptrdiff_t>(r * D),
                                 v.begin() + static_cast<std::ptrdiff_t>((r + 1) * D));
  return Tensor::from_values({rows.size(), D}, std::move(out));
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  const auto v = logits.values();
  std::vector<int> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    const auto row = v.subspan(b * K, K);
    out[b] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

double accuracy(std::span<const int> predicted, const Dataset& split) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == *split.sequences[i].label;
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

}  // namespace

PretrainResult pretrain(const Dataset& data, Model& model, const SgdConfig& config, std::size_t frames,
                        std::ostream* metrics) {
  config.validate();
  if (config.batch_size < 2) {
    throw ConfigError("batch_size must be >= 2 for pretraining: with one sequence per batch the global loss "
                      "has no negatives and is identically zero");
  }
  if (data.size() < config.batch_size) {
    throw DataError("pretrain: " + std::to_string(data.size()) + " sequences, fewer than batch_size " +
                    std::to_string(config.batch_size));
  }
  TrainState state;
  state.rng.seed(config.seed);
  Sgd optimizer(model.parameters(), config);
  const auto pool = all_indices(data.size());
  PretrainResult result;
  double epoch_sum = 0.0;
  std::size_t epoch_steps = 0;
  for (; state.epoch < config.total_epochs; ++state.epoch) {
    const double lr = lr_at(state.epoch, config);
    epoch_sum = 0.0;
    epoch_steps = 0;
    for (const auto& indices : epoch_batches(pool, config.batch_size, state.rng)) {
      auto batch = make_batch(data, indices, frames);
      optimizer.zero_grad();
      auto out = model.pretrain_loss(batch, Mode::train);
      require_finite(out.report.total, "pretrain");
      backward(out.loss);
      optimizer.step(lr);
      if (result.steps.empty()) result.initial_total = out.report.total;
      result.steps.push_back(out.report);
      epoch_sum += out.report.total;
      ++epoch_steps;
      if (metrics) {
        const auto& r = out.report;
        // Shortest round-trip formatting: replayed runs compare byte for byte.
        *metrics << fmt::format("{},{},{},{},{},{},{}\n", state.epoch, state.step, r.stl, r.tsl, r.gl, r.total, lr);
      }
      ++state.step;
    }
  }
  result.final_total = epoch_steps ? epoch_sum / static_cast<double>(epoch_steps) : result.initial_total;
  return result;
}

double evaluate(Model& model, RecognitionHead& head, const Dataset& split, std::size_t frames,
                std::size_t batch_size, std::vector<int>* predictions) {
  if (split.size() == 0) throw ArgumentError("evaluate: empty split");
  if (batch_size == 0) throw ArgumentError("evaluate: batch_size must be positive");
  for (const auto& seq : split.sequences) {
    if (!seq.label) throw DataError("evaluate: every sequence of the split needs a label");
  }
  check_labels(split, head.num_classes(), "evaluate");
  std::vector<int> predicted;
  predicted.reserve(split.size());
  const auto pool = all_indices(split.size());
  for (std::size_t start = 0; start < pool.size(); start += batch_size) {
    const auto chunk = std::span(pool).subspan(start, std::min(batch_size, pool.size() - start));
    auto batch = make_batch(split, chunk, frames);
    const auto p = argmax_rows(head.logits(model.pooled_features(batch, Mode::eval).detach()));
    predicted.insert(predicted.end(), p.begin(), p.end());
  }
  const double acc = accuracy(predicted, split);
  if (predictions) *predictions = std::move(predicted);
  return acc;
}

void calibrate_batch_norm(Model& model, const Dataset& data, std::size_t frames, std::size_t batch_size) {
  if (data.size() == 0) throw ArgumentError("calibrate_batch_norm: empty dataset");
  const auto pool = all_indices(data.size());
  const std::size_t step = std::max<std::size_t>(2, batch_size);
  // Several passes so the momentum-averaged statistics forget their initial values.
  for (int pass = 0; pass < 3; ++pass) {
    for (std::size_t start = 0; start < pool.size(); start += step) {
      const auto chunk = std::span(pool).subspan(start, std::min(step, pool.size() - start));
      model.encode(make_batch(data, chunk, frames), Mode::train);
    }
  }
}

std::uint64_t head_seed(std::uint64_t seed) { return seed * 0x9E3779B97F4A7C15ULL + 0x5D5C1ULL; }

namespace {

std::vector<std::size_t> labeled_training_pool(const Dataset& train, int num_classes, const char* what) {
  check_labels(train, num_classes, what);
  auto pool = train.labeled_indices();
  if (pool.empty()) throw DataError(std::string(what) + ": no labeled sequences to train on");
  return pool;
}

void write_classifier_row(std::ostream* metrics, std::size_t epoch, std::size_t step, double loss, double lr) {
  if (metrics) *metrics << fmt::format("{},{},{},{}\n", epoch, step, loss, lr);
}

}  // namespace

void FinetuneOptions::validate() const {
  if (!(encoder_lr_scale >= 0.0) || !std::isfinite(encoder_lr_scale)) {
    throw ConfigError("encoder_lr_scale must be a finite non-negative number");
  }
}

ClassifierResult finetune(const Dataset& train, const Dataset& test, Model& model, RecognitionHead& head,
                          const SgdConfig& config, std::size_t frames, const FinetuneOptions& options,
                          std::ostream* metrics) {
  config.validate();
  options.validate();
  const auto pool = labeled_training_pool(train, head.num_classes(), "finetune");
  if (options.freeze_statistics) {
    if (!encoder_has_statistics(model)) calibrate_batch_norm(model, train, frames, config.batch_size);
    const Dataset labeled = train.labeled_subset();
    head.fit_standardization(
        model.pooled_features(make_batch(labeled, all_indices(labeled.size()), frames, true), Mode::eval).detach());
  }
  const Mode encoder_mode = options.freeze_statistics ? Mode::eval : Mode::train;
  Sgd encoder_optimizer(model.encoder_parameters(), config);
  Sgd head_optimizer(prefixed("head", head.parameters()), config);
  TrainState state;
  state.rng.seed(config.seed);
  ClassifierResult result;
  if (metrics) *metrics << "epoch,step,loss,lr\n";
  for (; state.epoch < config.total_epochs; ++state.epoch) {
    const double lr = lr_at(state.epoch, config);
    for (const auto& indices : epoch_batches(pool, config.batch_size, state.rng, true)) {
      // Batch norm needs more than one sample per batch.
      if (indices.size() < 2 && pool.size() >= 2) continue;
      auto batch = make_batch(train, indices, frames, true);
      encoder_optimizer.zero_grad();
      head_optimizer.zero_grad();
      Tensor loss = cross_entropy(head.logits(model.pooled_features(batch, encoder_mode)), *batch.labels);
      result.final_loss = loss.item();
      require_finite(result.final_loss, "finetune");
      backward(loss);
      if (options.encoder_lr_scale > 0.0) encoder_optimizer.step(lr * options.encoder_lr_scale);
      head_optimizer.step(lr);
      write_classifier_row(metrics, state.epoch, state.step++, result.final_loss, lr);
    }
  }
  result.train_accuracy = evaluate(model, head, train.labeled_subset(), frames);
  result.test_accuracy = evaluate(model, head, test, frames, 32, &result.predictions);
  return result;
}

ClassifierResult linear_probe(const Dataset& train, const Dataset& test, Model& model, RecognitionHead& head,
                              const SgdConfig& config, std::size_t frames, std::ostream* metrics) {
  config.validate();
  const auto pool = labeled_training_pool(train, head.num_classes(), "linear_probe");
  if (!encoder_has_statistics(model)) calibrate_batch_norm(model, train, frames, config.batch_size);

  const Dataset labeled = train.labeled_subset();
  const auto rows = all_indices(labeled.size());
  Tensor features = model.pooled_features(make_batch(labeled, rows, frames, true), Mode::eval).detach();
  std::vector<int> labels;
  for (const auto& seq : labeled.sequences) labels.push_back(*seq.label);

  head.fit_standardization(features);
  Sgd optimizer(prefixed("head", head.parameters()), config);
  TrainState state;
  state.rng.seed(config.seed);
  ClassifierResult result;
  if (metrics) *metrics << "epoch,step,loss,lr\n";
  for (; state.epoch < config.total_epochs; ++state.epoch) {
    const double lr = lr_at(state.epoch, config);
    for (const auto& indices : epoch_batches(rows, config.batch_size, state.rng, true)) {
      std::vector<int> batch_labels;
      for (auto i : indices) batch_labels.push_back(labels[i]);
      optimizer.zero_grad();
      Tensor loss = cross_entropy(head.logits(gather_rows(features, indices)), batch_labels);
      result.final_loss = loss.item();
      require_finite(result.final_loss, "linear_probe");
      backward(loss);
      optimizer.step(lr);
      write_classifier_row(metrics, state.epoch, state.step++, result.final_loss, lr);
    }
  }
  result.train_accuracy = evaluate(model, head, labeled, frames);
  result.test_accuracy = evaluate(model, head, test, frames, 32, &result.predictions);
  return result;
}

}  // namespace sdscl
