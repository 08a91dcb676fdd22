#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "sdscl/tensor.hpp"

namespace sdscl {

/// One action sample: coordinates laid out [frames, joints, 3].
struct SkeletonSequence {
  std::size_t frames = 0;
  std::size_t joints = 0;
  std::vector<double> coords;
  std::optional<int> label;
  std::optional<int> subject;

  double& at(std::size_t t, std::size_t n, std::size_t d) { return coords[(t * joints + n) * 3 + d]; }
  double at(std::size_t t, std::size_t n, std::size_t d) const { return coords[(t * joints + n) * 3 + d]; }
};

struct Dataset {
  std::vector<SkeletonSequence> sequences;
  int num_classes = 0;
  /// True where the sequence's label may be used for supervision.
  std::vector<bool> labeled_mask;

  std::size_t size() const { return sequences.size(); }
  std::size_t joints() const { return sequences.empty() ? 0 : sequences.front().joints; }
  std::size_t labeled_count() const;
  /// Indices of sequences whose label is usable.
  std::vector<std::size_t> labeled_indices() const;
  /// A new dataset holding only the labeled sequences.
  Dataset labeled_subset() const;
};

/// Joint and motion tensors in [B,3,T,N] layout.
struct BatchPair {
  Tensor joints;
  Tensor motion;
  std::optional<std::vector<int>> labels;
};

/// Throws if a sequence breaks the shape/finiteness invariants.
void validate_sequence(const SkeletonSequence& seq);

/// Reads the JSON Lines format `{"label":int|null,"subject":int|null,"frames":[[[x,y,z]...]...]}`.
Dataset load_jsonl(const std::filesystem::path& path);
void save_jsonl(const std::filesystem::path& path, const Dataset& dataset);

/// Frame i of the output is raw frame floor(i * T_raw / T).
SkeletonSequence temporal_resample(const SkeletonSequence& seq, std::size_t frames);

/// Forward temporal difference with a zero final frame. `coords` is [T,N,3].
std::vector<double> derive_motion(std::span<const double> coords, std::size_t frames, std::size_t joints);

/// Translates every frame so the first frame's joint centroid is at the origin.
SkeletonSequence center_sequence(const SkeletonSequence& seq);

/// Resamples, centers and stacks sequences into a BatchPair.
///
/// Labels are attached when every selected sequence is labeled. With
/// `require_labels`, an unlabeled selection is a SelectionError.
BatchPair make_batch(const Dataset& dataset, std::span<const std::size_t> indices, std::size_t frames,
                     bool require_labels = false);

struct SyntheticConfig {
  int num_classes = 4;
  std::size_t per_class = 100;
  std::size_t joints = 8;
  std::size_t frames = 32;
  double noise_sd = 0.1;
  std::uint64_t seed = 0;
  /// Per-sample scale of the movement amplitude, drawn from [1 - a, 1 + a].
  double amplitude_jitter = 0.5;
  /// Per-sample, per-joint Gaussian offset of the static pose.
  double pose_jitter = 0.5;
  /// Size of the pose change that separates the two classes of a spatial pair.
  double pose_offset = 0.6;
};

enum class PairKind { spatial, temporal };

/// Class-pair template shared by both members of a pair.
struct PairTemplate {
  PairKind kind = PairKind::spatial;
  std::vector<double> pose;          ///< [N,3] rest pose of the first member
  std::vector<double> second_pose;   ///< [N,3] rest pose of the second member
  std::vector<double> displacement;  ///< [N,3] per-joint movement direction
  std::vector<std::size_t> differing_joints;  ///< joints whose pose differs (spatial pairs)
};

struct SampleLatent {
  double amplitude = 1.0;
  std::vector<double> pose_offset;  ///< [N,3]
};

/// Templates for every class pair; pairs alternate spatial, temporal, spatial, ...
std::vector<PairTemplate> synthetic_templates(const SyntheticConfig& config);

/// Noise-free sequence for member 0 or 1 of a pair.
SkeletonSequence render_synthetic(const PairTemplate& pair, int member, const SampleLatent& latent,
                                  std::size_t frames);

/// Movement profile in [0,1], zero at both ends; asymmetric in time so reversal is observable
/// only through frame order.
double movement_profile(std::size_t t, std::size_t frames);

/// Deterministic paired dataset: classes 2p and 2p+1 form pair p.
Dataset generate_synthetic(const SyntheticConfig& config);

/// Marks a per-class stratified subset as labeled. The total is
/// round(fraction * labeled sequences), spread over classes by largest
/// remainder with at least one per class.
Dataset split_semi_supervised(Dataset dataset, double labeled_fraction, std::uint64_t seed);

/// Stratified split into (train, test) with about `test_fraction` of each class in test.
std::pair<Dataset, Dataset> stratified_split(const Dataset& dataset, double test_fraction, std::uint64_t seed);

}  // namespace sdscl
