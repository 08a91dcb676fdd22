#include "sdscl/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "sdscl/errors.hpp"

namespace sdscl {

using json = nlohmann::json;

namespace {

// One row per key: how to read it from JSON and how to write it back.
struct Field {
  const char* key;
  bool required;
  void (*read)(RunConfig&, const json&);
  json (*write)(const RunConfig&);
};

[[noreturn]] void bad_type(const char* key, const char* expected) {
  throw ConfigError(std::string("config key '") + key + "' must be " + expected);
}

double as_number(const json& v, const char* key) {
  if (!v.is_number()) bad_type(key, "a number");
  return v.get<double>();
}

std::size_t as_count(const json& v, const char* key) {
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) bad_type(key, "a non-negative integer");
  return v.get<std::size_t>();
}

std::uint64_t as_seed(const json& v, const char* key) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) bad_type(key, "a non-negative integer");
  return static_cast<std::uint64_t>(v.get<std::int64_t>());
}

bool as_bool(const json& v, const char* key) {
  if (!v.is_boolean()) bad_type(key, "true or false");
  return v.get<bool>();
}

std::string as_string(const json& v, const char* key) {
  if (!v.is_string()) bad_type(key, "a string");
  return v.get<std::string>();
}

#define SDSCL_NUMBER(name, member) \
  {name, false, [](RunConfig& c, const json& v) { c.member = as_number(v, name); }, \
   [](const RunConfig& c) { return json(c.member); }}
#define SDSCL_COUNT(name, member) \
  {name, false, [](RunConfig& c, const json& v) { c.member = as_count(v, name); }, \
   [](const RunConfig& c) { return json(c.member); }}
#define SDSCL_BOOL(name, member) \
  {name, false, [](RunConfig& c, const json& v) { c.member = as_bool(v, name); }, \
   [](const RunConfig& c) { return json(c.member); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      // model
      {"encoder", false,
       [](RunConfig& c, const json& v) {
         try {
           c.model.encoder = encoder_kind_from_string(as_string(v, "encoder"));
         } catch (const ArgumentError& e) {
           throw ConfigError(std::string("config key 'encoder': ") + e.what());
         }
       },
       [](const RunConfig& c) { return json(to_string(c.model.encoder)); }},
      SDSCL_COUNT("channels", model.channels),
      SDSCL_COUNT("encoder_blocks", model.encoder_blocks),
      SDSCL_BOOL("separate_encoders", model.separate_encoders),
      SDSCL_COUNT("heads", model.siia.heads),
      SDSCL_BOOL("separate_decoupling_projections", model.siia.separate_decoupling_projections),
      SDSCL_BOOL("tie_ffn", model.siia.tie_ffn),
      SDSCL_BOOL("stop_grad_inter", model.siia.stop_grad_inter),
      SDSCL_COUNT("embed_channels", model.contrast.embed_channels),
      SDSCL_NUMBER("temperature", model.contrast.temperature),
      {"pooling", false,
       [](RunConfig& c, const json& v) {
         try {
           c.model.contrast.pooling = pooling_from_string(as_string(v, "pooling"));
         } catch (const ArgumentError& e) {
           throw ConfigError(std::string("config key 'pooling': ") + e.what());
         }
       },
       [](const RunConfig& c) { return json(to_string(c.model.contrast.pooling)); }},
      SDSCL_BOOL("share_squeeze_heads", model.contrast.share_squeeze_heads),
      SDSCL_BOOL("head_batch_norm", model.contrast.head_batch_norm),
      SDSCL_BOOL("stl", model.losses.stl),
      SDSCL_BOOL("tsl", model.losses.tsl),
      SDSCL_BOOL("gl", model.losses.gl),
      // optimization
      {"base_lr", true, [](RunConfig& c, const json& v) { c.sgd.base_lr = as_number(v, "base_lr"); },
       [](const RunConfig& c) { return json(c.sgd.base_lr); }},
      SDSCL_NUMBER("momentum", sgd.momentum),
      SDSCL_BOOL("nesterov", sgd.nesterov),
      SDSCL_NUMBER("weight_decay", sgd.weight_decay),
      SDSCL_COUNT("warmup_epochs", sgd.warmup_epochs),
      {"decay_milestones", false,
       [](RunConfig& c, const json& v) {
         if (!v.is_array()) bad_type("decay_milestones", "an array of epoch numbers");
         c.sgd.decay_milestones.clear();
         for (const auto& e : v) c.sgd.decay_milestones.push_back(as_count(e, "decay_milestones"));
       },
       [](const RunConfig& c) { return json(c.sgd.decay_milestones); }},
      SDSCL_NUMBER("decay_factor", sgd.decay_factor),
      {"total_epochs", true, [](RunConfig& c, const json& v) { c.sgd.total_epochs = as_count(v, "total_epochs"); },
       [](const RunConfig& c) { return json(c.sgd.total_epochs); }},
      {"batch_size", true, [](RunConfig& c, const json& v) { c.sgd.batch_size = as_count(v, "batch_size"); },
       [](const RunConfig& c) { return json(c.sgd.batch_size); }},
      {"seed", false, [](RunConfig& c, const json& v) { c.sgd.seed = as_seed(v, "seed"); },
       [](const RunConfig& c) { return json(c.sgd.seed); }},
      // protocol
      SDSCL_COUNT("frames", frames),
      SDSCL_NUMBER("labeled_fraction", labeled_fraction),
      SDSCL_NUMBER("test_fraction", test_fraction),
      {"split_seed", false, [](RunConfig& c, const json& v) { c.split_seed = as_seed(v, "split_seed"); },
       [](const RunConfig& c) { return json(c.split_seed); }},
      SDSCL_COUNT("head_hidden", head_hidden),
      SDSCL_BOOL("freeze_statistics", finetune.freeze_statistics),
      SDSCL_NUMBER("encoder_lr_scale", finetune.encoder_lr_scale),
  };
  return table;
}

#undef SDSCL_NUMBER
#undef SDSCL_COUNT
#undef SDSCL_BOOL

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.emplace_back(f.key);
    return k;
  }();
  return keys;
}

const std::vector<std::string>& required_config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields())
      if (f.required) k.emplace_back(f.key);
    return k;
  }();
  return keys;
}

void RunConfig::validate() const {
  sgd.validate();
  finetune.validate();
  if (model.channels == 0) throw ConfigError("channels must be >= 1");
  if (model.siia.heads == 0 || model.channels % model.siia.heads != 0) {
    throw ConfigError("heads must divide channels");
  }
  if (!(model.contrast.temperature > 0.0)) throw ConfigError("temperature must be > 0");
  if (!model.losses.any()) throw ConfigError("at least one of stl, tsl, gl must be true");
  if (frames < 2) throw ConfigError("frames must be >= 2");
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0)) throw ConfigError("labeled_fraction must be in (0, 1]");
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw ConfigError("test_fraction must be in [0, 1)");
}

RunConfig parse_run_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config: malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config: top level must be a JSON object");
  for (const auto& [key, value] : doc.items()) {
    const auto& keys = config_keys();
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) throw ConfigError("config: unknown key '" + key + "'");
  }
  RunConfig c;
  for (const auto& f : fields()) {
    auto it = doc.find(f.key);
    if (it == doc.end()) {
      if (f.required) throw ConfigError(std::string("config: missing required key '") + f.key + "'");
      continue;
    }
    f.read(c, *it);
  }
  c.model.siia.channels = c.model.channels;
  c.model.contrast.channels = c.model.channels;
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string dump_run_config(const RunConfig& config) {
  json doc = json::object();
  for (const auto& f : fields()) doc[f.key] = f.write(config);
  return doc.dump(2) + "\n";
}

}  // namespace sdscl
