#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sdscl/training.hpp"

namespace sdscl {

/// Everything a pretrain, finetune or probe run needs besides its data.
struct RunConfig {
  ModelConfig model;
  SgdConfig sgd;
  std::size_t frames = 16;
  /// Fraction of the training split whose labels are used.
  double labeled_fraction = 1.0;
  /// Held-out share of each class; 0 trains and scores on the whole dataset.
  double test_fraction = 0.2;
  std::uint64_t split_seed = 0;
  /// Hidden width of the recognition head; 0 is a single linear layer.
  std::size_t head_hidden = 0;
  FinetuneOptions finetune;

  /// Throws ConfigError naming the offending key.
  void validate() const;
};

/// Every key the config file accepts, in canonical order.
const std::vector<std::string>& config_keys();
/// Keys without a default.
const std::vector<std::string>& required_config_keys();

/// Parses a flat JSON object. Unknown keys, missing required keys, wrong
/// types and out-of-range values are ConfigErrors naming the key; malformed
/// JSON is a ParseError.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Canonical JSON: every key, sorted, fixed formatting. parse(dump(c)) == c.
std::string dump_run_config(const RunConfig& config);

}  // namespace sdscl
