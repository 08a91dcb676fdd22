#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "sdscl/tensor.hpp"

namespace sdscl {

/// Text dump: a `shape: d0 d1 ... dk` header, then one value per line with
/// 17 significant digits, row-major. Round-trips doubles exactly.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Checkpoint directory: `manifest.txt` maps each name to its shape, and
/// every tensor is stored as `<name>.tensor` in the dump format above.
void save_checkpoint(const std::filesystem::path& dir, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& dir);

/// Copies checkpoint values into `targets` by name. Every target must be present
/// with the same shape; throws SchemaError otherwise.
void restore_checkpoint(const std::filesystem::path& dir, std::vector<NamedTensor>& targets);

}  // namespace sdscl
