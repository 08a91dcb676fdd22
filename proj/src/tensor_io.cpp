#include "sdscl/tensor_io.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "sdscl/errors.hpp"

namespace sdscl {

void write_tensor(std::ostream& os, const Tensor& t) {
  os << "shape:";
  for (auto d : t.shape()) os << ' ' << d;
  os << '\n';
  char buf[64];
  for (double v : t.values()) {
    const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
    os.write(buf, n);
    os.put('\n');
  }
}

Tensor read_tensor(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("shape:", 0) != 0) {
    throw ParseError("tensor dump: missing 'shape:' header");
  }
  std::istringstream header(line.substr(6));
  Shape shape;
  std::size_t d = 0;
  while (header >> d) shape.push_back(d);
  if (shape.empty()) throw ParseError("tensor dump: empty shape header");
  const std::size_t n = shape_numel(shape);
  std::vector<double> values;
  values.reserve(n);
  std::size_t line_no = 1;
  while (values.size() < n && std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      std::size_t used = 0;
      values.push_back(std::stod(line, &used));
    } catch (const std::exception&) {
      throw ParseError("tensor dump: bad value on line " + std::to_string(line_no));
    }
  }
  if (values.size() != n) {
    throw ParseError("tensor dump: expected " + std::to_string(n) + " values, found " + std::to_string(values.size()));
  }
  return Tensor::from_values(std::move(shape), std::move(values));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  write_tensor(os, t);
  if (!os) throw IoError("write failed for " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  return read_tensor(is);
}

void save_checkpoint(const std::filesystem::path& dir, const std::vector<NamedTensor>& tensors) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw IoError("cannot write manifest in " + dir.string());
  for (const auto& nt : tensors) {
    manifest << nt.name;
    for (auto d : nt.tensor.shape()) manifest << ' ' << d;
    manifest << '\n';
    save_tensor(dir / (nt.name + ".tensor"), nt.tensor);
  }
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw IoError("no checkpoint manifest in " + dir.string());
  std::vector<NamedTensor> out;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name;
    ls >> name;
    Shape shape;
    std::size_t d = 0;
    while (ls >> d) shape.push_back(d);
    auto t = load_tensor(dir / (name + ".tensor"));
    if (t.shape() != shape) {
      throw SchemaError("checkpoint tensor '" + name + "' has shape " + shape_to_string(t.shape()) +
                        " but manifest says " + shape_to_string(shape));
    }
    out.push_back({name, std::move(t)});
  }
  return out;
}

void restore_checkpoint(const std::filesystem::path& dir, std::vector<NamedTensor>& targets) {
  std::map<std::string, Tensor> stored;
  for (auto& nt : load_checkpoint(dir)) stored.emplace(nt.name, nt.tensor);
  for (auto& target : targets) {
    auto it = stored.find(target.name);
    if (it == stored.end()) throw SchemaError("checkpoint is missing tensor '" + target.name + "'");
    if (it->second.shape() != target.tensor.shape()) {
      throw SchemaError("checkpoint tensor '" + target.name + "' has shape " + shape_to_string(it->second.shape()) +
                        ", expected " + shape_to_string(target.tensor.shape()));
    }
    auto src = it->second.values();
    auto dst = target.tensor.mutable_values();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

}  // namespace sdscl
