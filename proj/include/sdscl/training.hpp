#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sdscl/contrast.hpp"
#include "sdscl/encoder.hpp"
#include "sdscl/siia.hpp"
#include "sdscl/skeleton_data.hpp"

namespace sdscl {

struct SgdConfig {
  double base_lr = 0.01;
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 5e-4;
  std::size_t warmup_epochs = 0;
  std::vector<std::size_t> decay_milestones;
  double decay_factor = 0.1;
  std::size_t total_epochs = 20;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Linear warmup base*(e+1)/warmup for e < warmup, then base * factor^(milestones <= e).
double lr_at(std::size_t epoch, const SgdConfig& config);

/// SGD with optional Nesterov momentum and L2 weight decay.
///
/// Parameters with requires_grad off are never touched. A parameter the
/// backward pass did not reach is treated as having a zero loss gradient.
class Sgd {
 public:
  Sgd(std::vector<NamedTensor> params, const SgdConfig& config);

  void step(double lr);
  void zero_grad();

  const std::vector<NamedTensor>& params() const { return params_; }
  /// Momentum buffers, named `momentum.<param>`.
  std::vector<NamedTensor> buffers() const;

 private:
  std::vector<NamedTensor> params_;
  std::vector<Tensor> velocity_;
  double momentum_;
  bool nesterov_;
  double weight_decay_;
};

struct ModelConfig {
  EncoderKind encoder = EncoderKind::mixing;
  std::size_t channels = 16;
  std::size_t encoder_blocks = 2;
  /// Independent encoder weights for the motion modality.
  bool separate_encoders = false;
  SiiaConfig siia;
  ContrastConfig contrast;
  LossToggles losses;
};

/// Encoder(s), SIIA block and contrastive heads.
class Model {
 public:
  Model(const ModelConfig& config, std::size_t joints, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  Encoder& encoder(Modality m);
  SiiaParams& siia() { return siia_; }
  ContrastHeads& heads() { return heads_; }

  struct Features {
    Tensor f_j, f_m;
  };
  Features encode(const BatchPair& batch, Mode mode);
  SiiaPair attend(const BatchPair& batch, Mode mode);
  TotalLoss pretrain_loss(const BatchPair& batch, Mode mode);
  /// Encoder outputs mean-pooled over T and N, joint then motion: [B,2C].
  Tensor pooled_features(const BatchPair& batch, Mode mode);

  std::vector<NamedTensor> parameters() const;
  std::vector<NamedTensor> buffers() const;
  std::vector<NamedTensor> encoder_parameters() const;
  std::vector<NamedTensor> encoder_buffers() const;
  /// Every parameter and buffer, for checkpoints.
  std::vector<NamedTensor> state() const;

 private:
  Model(const ModelConfig& config, std::size_t joints, Initializer&& init);

  ModelConfig config_;
  std::unique_ptr<Encoder> joint_encoder_;
  std::unique_ptr<Encoder> motion_encoder_;
  SiiaParams siia_;
  ContrastHeads heads_;
};

/// MLP (or a single linear layer when hidden == 0) from pooled features to class logits.
class RecognitionHead {
 public:
  RecognitionHead(std::size_t in, std::size_t hidden, int num_classes, Initializer& init);

  /// Standardizes inputs with the per-column mean and deviation of `features` ([R,D]).
  void fit_standardization(const Tensor& features);

  /// [B,D] -> [B,K]
  Tensor logits(const Tensor& features) const;
  int num_classes() const { return num_classes_; }
  std::vector<NamedTensor> parameters() const;
  /// Standardization constants, if fitted.
  std::vector<NamedTensor> buffers() const;

 private:
  int num_classes_;
  Tensor w1_, b1_, w2_, b2_;
  Tensor shift_, factor_;  ///< [1,D]
};

/// Mean softmax cross-entropy of [B,K] logits. Labels outside [0,K) are a DataError.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

struct TrainState {
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::mt19937_64 rng;
  std::optional<double> best_metric;
};

/// Shuffled batch order for one epoch; the tail shorter than batch_size is dropped
/// unless `keep_tail`.
std::vector<std::vector<std::size_t>> epoch_batches(std::span<const std::size_t> pool, std::size_t batch_size,
                                                     std::mt19937_64& rng, bool keep_tail = false);

struct PretrainResult {
  std::vector<LossReport> steps;
  double initial_total = 0.0;
  /// Mean total loss over the last epoch.
  double final_total = 0.0;
};

/// Contrastive pretraining on every sequence of `data` (labels ignored).
/// Writes a metrics row per step to `metrics` when given.
PretrainResult pretrain(const Dataset& data, Model& model, const SgdConfig& config, std::size_t frames,
                        std::ostream* metrics = nullptr);

void write_metrics_header(std::ostream& os);

struct ClassifierResult {
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double final_loss = 0.0;
  std::vector<int> predictions;  ///< on the test split, in order
};

struct FinetuneOptions {
  /// Run the encoder with its batch-norm statistics fixed (estimated first if absent)
  /// and standardize head inputs on the labeled features before training.
  bool freeze_statistics = false;
  /// Encoder learning rate relative to the head's; 0 leaves the encoder untouched.
  double encoder_lr_scale = 1.0;

  void validate() const;
};

/// Supervised training of encoder and head on the labeled sequences of `train`,
/// scored on `test`. `model` is trained in place.
ClassifierResult finetune(const Dataset& train, const Dataset& test, Model& model, RecognitionHead& head,
                          const SgdConfig& config, std::size_t frames, const FinetuneOptions& options = {},
                          std::ostream* metrics = nullptr);

/// Frozen-encoder linear classifier on standardized pooled features. Encoder
/// tensors are read, never written, except batch-norm statistics which are
/// estimated first if absent.
ClassifierResult linear_probe(const Dataset& train, const Dataset& test, Model& model, RecognitionHead& head,
                              const SgdConfig& config, std::size_t frames, std::ostream* metrics = nullptr);

/// Top-1 accuracy of head(pooled_features) on labeled `split`; an empty split is an ArgumentError.
double evaluate(Model& model, RecognitionHead& head, const Dataset& split, std::size_t frames,
                std::size_t batch_size = 32, std::vector<int>* predictions = nullptr);

/// Runs train-mode forward passes to fill batch-norm statistics of the encoder(s).
void calibrate_batch_norm(Model& model, const Dataset& data, std::size_t frames, std::size_t batch_size);

/// Deterministic seed for the recognition head, independent of the model seed stream.
std::uint64_t head_seed(std::uint64_t seed);

}  // namespace sdscl
