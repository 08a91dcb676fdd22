#include "sdscl/skeleton_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <string>

#include "json.hpp"
#include <spdlog/spdlog.h>

#include "sdscl/errors.hpp"

namespace sdscl {

using json = nlohmann::json;

std::size_t Dataset::labeled_count() const {
  return static_cast<std::size_t>(std::count(labeled_mask.begin(), labeled_mask.end(), true));
}

std::vector<std::size_t> Dataset::labeled_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    if (labeled_mask[i] && sequences[i].label) out.push_back(i);
  }
  return out;
}

Dataset Dataset::labeled_subset() const {
  Dataset out;
  out.num_classes = num_classes;
  for (auto i : labeled_indices()) {
    out.sequences.push_back(sequences[i]);
    out.labeled_mask.push_back(true);
  }
  return out;
}

void validate_sequence(const SkeletonSequence& seq) {
  if (seq.frames < 2) throw SchemaError("sequence needs at least 2 frames, got " + std::to_string(seq.frames));
  if (seq.joints < 2) throw SchemaError("sequence needs at least 2 joints, got " + std::to_string(seq.joints));
  if (seq.coords.size() != seq.frames * seq.joints * 3) throw SchemaError("sequence coordinate count mismatch");
  for (double v : seq.coords) {
    if (!std::isfinite(v)) throw SchemaError("sequence has non-finite coordinates");
  }
}

namespace {

SkeletonSequence parse_record(const std::string& line, std::size_t line_no) {
  auto fail = [line_no](const std::string& what) {
    return ParseError("line " + std::to_string(line_no) + ": " + what);
  };
  json rec;
  try {
    rec = json::parse(line);
  } catch (const json::parse_error& e) {
    throw fail(e.what());
  }
  if (!rec.is_object() || !rec.contains("frames")) throw fail("record must be an object with 'frames'");
  for (const auto& [key, _] : rec.items()) {
    if (key != "label" && key != "subject" && key != "frames") throw fail("unknown field '" + key + "'");
  }
  SkeletonSequence seq;
  auto read_opt_int = [&](const char* key) -> std::optional<int> {
    if (!rec.contains(key) || rec[key].is_null()) return std::nullopt;
    if (!rec[key].is_number_integer()) throw fail(std::string("'") + key + "' must be an integer or null");
    return rec[key].get<int>();
  };
  seq.label = read_opt_int("label");
  seq.subject = read_opt_int("subject");
  const auto& frames = rec["frames"];
  if (!frames.is_array() || frames.empty()) throw fail("'frames' must be a non-empty array");
  seq.frames = frames.size();
  for (const auto& frame : frames) {
    if (!frame.is_array() || frame.empty()) throw fail("each frame must be a non-empty array of joints");
    if (seq.joints == 0) seq.joints = frame.size();
    if (frame.size() != seq.joints) throw fail("frames disagree on joint count");
    for (const auto& joint : frame) {
      if (!joint.is_array() || joint.size() != 3) throw fail("each joint must be [x,y,z]");
      for (const auto& c : joint) {
        if (!c.is_number()) throw fail("coordinates must be numbers");
        seq.coords.push_back(c.get<double>());
      }
    }
  }
  if (seq.label && *seq.label < 0) throw fail("negative label");
  try {
    validate_sequence(seq);
  } catch (const SchemaError& e) {
    throw fail(e.what());
  }
  return seq;
}

}  // namespace

Dataset load_jsonl(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open dataset " + path.string());
  Dataset ds;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto seq = parse_record(line, line_no);
    if (!ds.sequences.empty() && seq.joints != ds.joints()) {
      throw SchemaError("line " + std::to_string(line_no) + ": " + std::to_string(seq.joints) +
                        " joints, dataset has " + std::to_string(ds.joints()));
    }
    if (seq.label) ds.num_classes = std::max(ds.num_classes, *seq.label + 1);
    ds.labeled_mask.push_back(seq.label.has_value());
    ds.sequences.push_back(std::move(seq));
  }
  if (ds.sequences.empty()) spdlog::warn("dataset {} is empty", path.string());
  return ds;
}

void save_jsonl(const std::filesystem::path& path, const Dataset& dataset) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write dataset " + path.string());
  for (const auto& seq : dataset.sequences) {
    json frames = json::array();
    for (std::size_t t = 0; t < seq.frames; ++t) {
      json frame = json::array();
      for (std::size_t n = 0; n < seq.joints; ++n) frame.push_back({seq.at(t, n, 0), seq.at(t, n, 1), seq.at(t, n, 2)});
      frames.push_back(std::move(frame));
    }
    json rec;
    rec["label"] = seq.label ? json(*seq.label) : json(nullptr);
    rec["subject"] = seq.subject ? json(*seq.subject) : json(nullptr);
    rec["frames"] = std::move(frames);
    os << rec.dump() << '\n';
  }
  if (!os) throw IoError("write failed for " + path.string());
}

SkeletonSequence temporal_resample(const SkeletonSequence& seq, std::size_t frames) {
  if (seq.frames == 0 || frames == 0) throw ArgumentError("temporal_resample: frame counts must be positive");
  SkeletonSequence out = seq;
  out.frames = frames;
  out.coords.assign(frames * seq.joints * 3, 0.0);
  const std::size_t width = seq.joints * 3;
  for (std::size_t i = 0; i < frames; ++i) {
    const std::size_t src = i * seq.frames / frames;
    std::copy_n(seq.coords.begin() + static_cast<std::ptrdiff_t>(src * width), width,
                out.coords.begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  return out;
}

std::vector<double> derive_motion(std::span<const double> coords, std::size_t frames, std::size_t joints) {
  if (frames < 2) throw ArgumentError("derive_motion: needs at least 2 frames");
  if (coords.size() != frames * joints * 3) throw DimensionError("derive_motion: coordinate count mismatch");
  const std::size_t width = joints * 3;
  std::vector<double> motion(coords.size(), 0.0);
  for (std::size_t t = 0; t + 1 < frames; ++t)
    for (std::size_t k = 0; k < width; ++k) motion[t * width + k] = coords[(t + 1) * width + k] - coords[t * width + k];
  return motion;
}

SkeletonSequence center_sequence(const SkeletonSequence& seq) {
  SkeletonSequence out = seq;
  for (std::size_t d = 0; d < 3; ++d) {
    double c = 0.0;
    for (std::size_t n = 0; n < seq.joints; ++n) c += seq.at(0, n, d);
    c /= static_cast<double>(seq.joints);
    for (std::size_t t = 0; t < seq.frames; ++t)
      for (std::size_t n = 0; n < seq.joints; ++n) out.at(t, n, d) -= c;
  }
  return out;
}

BatchPair make_batch(const Dataset& dataset, std::span<const std::size_t> indices, std::size_t frames,
                     bool require_labels) {
  if (indices.empty()) throw ArgumentError("make_batch: empty selection");
  const std::size_t B = indices.size(), N = dataset.joints();
  std::vector<double> xj(B * 3 * frames * N), xm(B * 3 * frames * N);
  std::vector<int> labels;
  bool all_labeled = true;
  for (std::size_t b = 0; b < B; ++b) {
    const auto idx = indices[b];
    if (idx >= dataset.size()) throw ArgumentError("make_batch: index " + std::to_string(idx) + " out of range");
    const auto& raw = dataset.sequences[idx];
    const bool labeled = dataset.labeled_mask[idx] && raw.label.has_value();
    if (labeled) labels.push_back(*raw.label);
    all_labeled = all_labeled && labeled;
    auto seq = center_sequence(temporal_resample(raw, frames));
    auto motion = derive_motion(seq.coords, frames, N);
    for (std::size_t d = 0; d < 3; ++d)
      for (std::size_t t = 0; t < frames; ++t)
        for (std::size_t n = 0; n < N; ++n) {
          const std::size_t dst = ((b * 3 + d) * frames + t) * N + n;
          xj[dst] = seq.at(t, n, d);
          xm[dst] = motion[(t * N + n) * 3 + d];
        }
  }
  if (require_labels && !all_labeled) throw SelectionError("make_batch: selection mixes labeled and unlabeled sequences");
  BatchPair out{Tensor::from_values({B, 3, frames, N}, std::move(xj)),
                Tensor::from_values({B, 3, frames, N}, std::move(xm)), std::nullopt};
  if (all_labeled) out.labels = std::move(labels);
  return out;
}

double movement_profile(std::size_t t, std::size_t frames) {
  const double x = frames > 1 ? static_cast<double>(t) / static_cast<double>(frames - 1) : 0.0;
  // Slow rise, fast return to the rest pose; zero net displacement.
  return std::sin(M_PI * x * x);
}

std::vector<PairTemplate> synthetic_templates(const SyntheticConfig& config) {
  if (config.num_classes < 4 || config.num_classes % 2 != 0) {
    throw ArgumentError("generate_synthetic: num_classes must be even and >= 4 (classes come in spatial/temporal pairs), got " +
                        std::to_string(config.num_classes));
  }
  if (config.joints < 2) throw ArgumentError("generate_synthetic: need at least 2 joints");
  if (config.frames < 2) throw ArgumentError("generate_synthetic: need at least 2 frames");
  if (config.per_class == 0) throw ArgumentError("generate_synthetic: per_class must be positive");
  if (!(config.noise_sd >= 0.0)) throw ArgumentError("generate_synthetic: noise_sd must be >= 0");

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t N = config.joints;
  std::vector<PairTemplate> pairs;
  for (int p = 0; p < config.num_classes / 2; ++p) {
    PairTemplate pair;
    pair.kind = p % 2 == 0 ? PairKind::spatial : PairKind::temporal;
    pair.pose.resize(N * 3);
    pair.displacement.resize(N * 3);
    for (auto& v : pair.pose) v = gauss(rng);
    for (auto& v : pair.displacement) v = 0.5 * gauss(rng);
    pair.second_pose = pair.pose;
    if (pair.kind == PairKind::spatial) {
      std::vector<std::size_t> order(N);
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      const std::size_t changed = std::max<std::size_t>(1, N / 4);
      pair.differing_joints.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(changed));
      std::sort(pair.differing_joints.begin(), pair.differing_joints.end());
      for (auto n : pair.differing_joints) {
        double dir[3] = {gauss(rng), gauss(rng), gauss(rng)};
        const double norm = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]) + 1e-12;
        for (std::size_t d = 0; d < 3; ++d) pair.second_pose[n * 3 + d] += config.pose_offset * dir[d] / norm;
      }
    }
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

SkeletonSequence render_synthetic(const PairTemplate& pair, int member, const SampleLatent& latent,
                                  std::size_t frames) {
  const std::size_t N = pair.pose.size() / 3;
  SkeletonSequence seq;
  seq.frames = frames;
  seq.joints = N;
  seq.coords.resize(frames * N * 3);
  const auto& pose = member == 1 ? pair.second_pose : pair.pose;
  const bool reversed = pair.kind == PairKind::temporal && member == 1;
  for (std::size_t t = 0; t < frames; ++t) {
    const std::size_t src_t = reversed ? frames - 1 - t : t;
    const double s = latent.amplitude * movement_profile(src_t, frames);
    for (std::size_t k = 0; k < N * 3; ++k) {
      const double offset = latent.pose_offset.empty() ? 0.0 : latent.pose_offset[k];
      seq.coords[t * N * 3 + k] = pose[k] + offset + s * pair.displacement[k];
    }
  }
  return seq;
}

Dataset generate_synthetic(const SyntheticConfig& config) {
  const auto pairs = synthetic_templates(config);
  // Sample draws use a stream separate from the templates.
  std::mt19937_64 rng(config.seed ^ 0x9E3779B97F4A7C15ULL);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> amp(1.0 - config.amplitude_jitter, 1.0 + config.amplitude_jitter);
  const std::size_t N = config.joints;
  Dataset ds;
  ds.num_classes = config.num_classes;
  for (int c = 0; c < config.num_classes; ++c) {
    const auto& pair = pairs[static_cast<std::size_t>(c / 2)];
    for (std::size_t i = 0; i < config.per_class; ++i) {
      SampleLatent latent;
      latent.amplitude = amp(rng);
      latent.pose_offset.resize(N * 3);
      for (auto& v : latent.pose_offset) v = config.pose_jitter * gauss(rng);
      auto seq = render_synthetic(pair, c % 2, latent, config.frames);
      if (config.noise_sd > 0.0) {
        for (auto& v : seq.coords) v += config.noise_sd * gauss(rng);
      }
      seq.label = c;
      seq.subject = static_cast<int>(i);
      ds.sequences.push_back(std::move(seq));
      ds.labeled_mask.push_back(true);
    }
  }
  return ds;
}

Dataset split_semi_supervised(Dataset dataset, double labeled_fraction, std::uint64_t seed) {
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0)) {
    throw ArgumentError("split_semi_supervised: fraction must be in (0, 1], got " + std::to_string(labeled_fraction));
  }
  const int K = dataset.num_classes;
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(std::max(K, 0)));
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& label = dataset.sequences[i].label;
    if (label && *label < K) by_class[static_cast<std::size_t>(*label)].push_back(i);
  }
  std::size_t pool = 0;
  for (const auto& members : by_class) pool += members.size();

  // Largest-remainder apportionment of round(fraction * pool) across classes.
  const auto total = static_cast<std::size_t>(std::llround(labeled_fraction * static_cast<double>(pool)));
  std::vector<std::size_t> quota(by_class.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    const double exact = labeled_fraction * static_cast<double>(by_class[c].size());
    quota[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[c];
    remainders.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](auto a, auto b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < total && r < remainders.size(); ++r) {
    const auto c = remainders[r].second;
    if (quota[c] < by_class[c].size()) {
      ++quota[c];
      ++assigned;
    }
  }

  std::fill(dataset.labeled_mask.begin(), dataset.labeled_mask.end(), false);
  std::mt19937_64 rng(seed);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto members = by_class[c];
    if (members.empty()) continue;
    if (quota[c] == 0) {
      spdlog::warn("labeled fraction {} yields no labels for class {}; labeling one sequence", labeled_fraction, c);
      quota[c] = 1;
    }
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t k = 0; k < quota[c]; ++k) dataset.labeled_mask[members[k]] = true;
  }
  return dataset;
}

std::pair<Dataset, Dataset> stratified_split(const Dataset& dataset, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ArgumentError("stratified_split: test fraction must be in (0, 1)");
  }
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& label = dataset.sequences[i].label;
    groups[label ? *label : -1].push_back(i);
  }
  std::mt19937_64 rng(seed);
  std::vector<bool> in_test(dataset.size(), false);
  for (auto& [label, members] : groups) {
    std::shuffle(members.begin(), members.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(members.size())));
    for (std::size_t k = 0; k < n_test; ++k) in_test[members[k]] = true;
  }
  Dataset train, test;
  train.num_classes = test.num_classes = dataset.num_classes;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    auto& dst = in_test[i] ? test : train;
    dst.sequences.push_back(dataset.sequences[i]);
    dst.labeled_mask.push_back(dataset.labeled_mask[i]);
  }
  return {std::move(train), std::move(test)};
}

}  // namespace sdscl
