// sdscl: data generation, pretraining, finetuning, probing, gradient checks and
// attention export, each run leaving a manifest that `sdscl replay` re-executes.

#include <openssl/evp.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "sdscl/config.hpp"
#include "sdscl/errors.hpp"
#include "sdscl/grad_suite.hpp"
#include "sdscl/skeleton_data.hpp"
#include "sdscl/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace sdscl;

namespace {

enum ExitCode : int { ok = 0, failure = 1, config_error = 2, data_error = 3, numeric_error = 4 };

/// Raised when a numerical check (gradients, replay comparison) does not hold.
class CheckFailed : public Error {
 public:
  using Error::Error;
};

std::string hex(const unsigned char* bytes, unsigned n) {
  std::ostringstream os;
  for (unsigned i = 0; i < n; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(bytes[i]);
  return os.str();
}

std::string sha1(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned n = 0;
  if (EVP_Digest(data.data(), data.size(), md, &n, EVP_sha1(), nullptr) != 1) throw Error("sha1 failed");
  return hex(md, n);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out || !(out << text)) throw IoError("cannot write " + p.string());
}

/// Digest of a file, or of every file under a directory (relative path + content).
std::string digest(const fs::path& p) {
  if (!fs::is_directory(p)) return sha1(read_file(p));
  std::map<std::string, std::string> parts;
  for (const auto& e : fs::recursive_directory_iterator(p))
    if (e.is_regular_file()) parts[fs::relative(e.path(), p).generic_string()] = sha1(read_file(e.path()));
  std::string all;
  for (const auto& [name, h] : parts) all += name + ' ' + h + '\n';
  return sha1(all);
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

std::uint64_t parse_seed(const std::string& text, const char* what) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(std::string(what) + ": '" + text + "' is not a non-negative integer");
  }
}

/// What a command produced: artifact name -> path. Digests go into the manifest.
using Artifacts = std::map<std::string, fs::path>;

struct Outcome {
  Artifacts artifacts;
  json summary = json::object();
};

void write_manifest(const fs::path& path, const std::string& command, const json& args, const Outcome& outcome,
                    const std::string& started, const json& extra) {
  json m;
  m["command"] = command;
  m["args"] = args;
  m["started"] = started;
  m["finished"] = utc_now();
  m["summary"] = outcome.summary;
  for (const auto& [name, p] : outcome.artifacts) {
    m["artifacts"][name] = fs::relative(fs::absolute(p), fs::absolute(path).parent_path()).generic_string();
    m["digests"][name] = digest(p);
  }
  for (const auto& [k, v] : extra.items()) m[k] = v;
  write_file(path, m.dump(2) + "\n");
}

fs::path prepare_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) throw IoError(dir.string() + " already exists and is not empty (use --force to replace it)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
  return dir;
}

// ---------------------------------------------------------------- gen-data

Outcome gen_data(const json& a, const fs::path& out) {
  SyntheticConfig c;
  c.num_classes = a.at("classes");
  c.per_class = a.at("per_class");
  c.joints = a.at("joints");
  c.frames = a.at("frames");
  c.noise_sd = a.at("noise");
  c.pose_jitter = a.at("pose_jitter");
  c.amplitude_jitter = a.at("amplitude_jitter");
  c.pose_offset = a.at("pose_offset");
  c.seed = a.at("seed");
  if (c.num_classes <= 0 || c.num_classes % 2 != 0) {
    throw ConfigError("--classes must be a positive even number: classes come in pairs, one differing in "
                      "pose (spatial) and one in frame order (temporal)");
  }
  const Dataset ds = generate_synthetic(c);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_jsonl(out, ds);
  Outcome o;
  o.artifacts["data"] = out;
  std::vector<std::size_t> counts(static_cast<std::size_t>(ds.num_classes), 0);
  for (const auto& s : ds.sequences) ++counts[static_cast<std::size_t>(*s.label)];
  o.summary["sequences"] = ds.size();
  o.summary["per_class"] = counts;
  std::cout << "wrote " << ds.size() << " sequences to " << out.string() << '\n';
  for (std::size_t k = 0; k < counts.size(); ++k) std::cout << "  class " << k << ": " << counts[k] << '\n';
  return o;
}

// ---------------------------------------------------------------- training runs

struct Split {
  Dataset train, test;
};

Split split_for(const Dataset& data, const RunConfig& c, bool need_labels) {
  const bool all_labeled = data.labeled_count() == data.size();
  if (!all_labeled && need_labels) throw DataError("dataset has unlabeled sequences; finetune and probe need labels");
  if (data.size() == 0) throw DataError("dataset is empty");
  if (c.test_fraction == 0.0 || !all_labeled) return {data, data};
  auto [train, test] = stratified_split(data, c.test_fraction, c.split_seed);
  return {std::move(train), std::move(test)};
}

RunConfig effective_config(const json& a) {
  RunConfig c = parse_run_config(a.at("config_text").get<std::string>());
  if (a.contains("seed_override")) c.sgd.seed = a.at("seed_override");
  return c;
}

std::string run_name(const RunConfig& c) { return sha1(dump_run_config(c)).substr(0, 12) + "-seed" + std::to_string(c.sgd.seed); }

void save_config_copy(const fs::path& dir, const RunConfig& c) { write_file(dir / "config.json", dump_run_config(c)); }

Outcome pretrain_cmd(const json& a, const fs::path& dir) {
  const RunConfig c = effective_config(a);
  const Dataset data = load_jsonl(a.at("data").get<std::string>());
  const auto split = split_for(data, c, false);
  Model model(c.model, data.joints(), c.sgd.seed);
  save_config_copy(dir, c);
  std::ofstream metrics(dir / "metrics.csv");
  write_metrics_header(metrics);
  const auto r = pretrain(split.train, model, c.sgd, c.frames, &metrics);
  metrics.close();
  save_checkpoint(dir / "checkpoint", model.state());
  save_config_copy(dir / "checkpoint", c);
  Outcome o;
  o.summary["initial_total"] = r.initial_total;
  o.summary["final_total"] = r.final_total;
  o.summary["steps"] = r.steps.size();
  write_file(dir / "result.json", o.summary.dump(2) + "\n");
  o.artifacts = {{"metrics", dir / "metrics.csv"}, {"checkpoint", dir / "checkpoint"}, {"result", dir / "result.json"}};
  spdlog::info("pretrain: total loss {:.4f} -> {:.4f} over {} steps", r.initial_total, r.final_total, r.steps.size());
  return o;
}

void restore_model(Model& model, const fs::path& checkpoint) {
  auto targets = model.state();
  restore_checkpoint(checkpoint, targets);
}

Outcome classifier_cmd(const json& a, const fs::path& dir, bool probe) {
  const RunConfig c = effective_config(a);
  const Dataset data = load_jsonl(a.at("data").get<std::string>());
  auto split = split_for(data, c, true);
  const Dataset train = split_semi_supervised(std::move(split.train), c.labeled_fraction, c.split_seed);
  Model model(c.model, data.joints(), c.sgd.seed);
  const std::string checkpoint = a.value("checkpoint", "");
  if (!checkpoint.empty()) restore_model(model, checkpoint);
  Initializer head_init(head_seed(c.sgd.seed));
  RecognitionHead head(2 * c.model.channels, probe ? 0 : c.head_hidden, data.num_classes, head_init);
  save_config_copy(dir, c);
  std::ofstream metrics(dir / "metrics.csv");
  const auto r = probe ? linear_probe(train, split.test, model, head, c.sgd, c.frames, &metrics)
                       : finetune(train, split.test, model, head, c.sgd, c.frames, c.finetune, &metrics);
  metrics.close();
  std::ofstream pred(dir / "predictions.csv");
  pred << "index,label,prediction\n";
  for (std::size_t i = 0; i < r.predictions.size(); ++i)
    pred << i << ',' << *split.test.sequences[i].label << ',' << r.predictions[i] << '\n';
  pred.close();
  auto state = model.state();
  for (auto& t : prefixed("head", head.parameters())) state.push_back(t);
  for (auto& t : prefixed("head", head.buffers())) state.push_back(t);
  save_checkpoint(dir / "checkpoint", state);
  save_config_copy(dir / "checkpoint", c);
  Outcome o;
  o.summary["train_accuracy"] = r.train_accuracy;
  o.summary["test_accuracy"] = r.test_accuracy;
  o.summary["final_loss"] = r.final_loss;
  o.summary["labeled"] = train.labeled_count();
  write_file(dir / "result.json", o.summary.dump(2) + "\n");
  o.artifacts = {{"metrics", dir / "metrics.csv"},
                 {"predictions", dir / "predictions.csv"},
                 {"checkpoint", dir / "checkpoint"},
                 {"result", dir / "result.json"}};
  std::cout << (probe ? "probe" : "finetune") << ": train accuracy " << r.train_accuracy << ", test accuracy "
            << r.test_accuracy << " (" << train.labeled_count() << " labels)\n";
  return o;
}

// ---------------------------------------------------------------- gradcheck

Outcome gradcheck_cmd(const json& a, const fs::path& out) {
  std::vector<CheckScope> scopes;
  for (const auto& s : a.at("scopes")) scopes.push_back(check_scope_from_string(s.get<std::string>()));
  const std::uint64_t first = a.at("seed");
  const std::size_t seeds = a.at("seeds");
  const double corrupt = a.at("corrupt");
  std::ostringstream table;
  table << "scope,case,seed,checked,skipped,max_rel_error,status\n";
  bool all = true;
  for (auto scope : scopes) {
    auto options = suite_options(scope);
    options.corrupt_factor = corrupt;
    double worst = 0.0;
    bool scope_ok = true;
    for (std::uint64_t seed = first; seed < first + seeds; ++seed) {
      for (const auto& r : run_gradient_cases(scope, seed, options)) {
        table << to_string(scope) << ',' << r.name << ',' << seed << ',' << r.checked << ',' << r.skipped << ','
              << fmt::format("{}", r.max_rel_error) << ',' << (r.passed ? "pass" : "FAIL") << '\n';
        worst = std::max(worst, r.max_rel_error);
        scope_ok = scope_ok && r.passed;
      }
    }
    std::cout << std::left << std::setw(8) << to_string(scope) << " max rel. error " << std::setw(12) << worst
              << (scope_ok ? "pass" : "FAIL") << '\n';
    all = all && scope_ok;
  }
  Outcome o;
  o.summary["passed"] = all;
  if (!out.empty()) {
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    write_file(out, table.str());
    o.artifacts["table"] = out;
  } else if (a.value("verbose", false)) {
    std::cout << table.str();
  }
  return o;
}

// ---------------------------------------------------------------- export-attn

Outcome export_attn_cmd(const json& a, const fs::path& out) {
  const fs::path checkpoint = a.at("checkpoint").get<std::string>();
  const RunConfig c = load_run_config(checkpoint / "config.json");
  const Dataset data = load_jsonl(a.at("data").get<std::string>());
  const std::size_t index = a.at("index");
  if (index >= data.size()) {
    throw ArgumentError("--index " + std::to_string(index) + " out of range for " + std::to_string(data.size()) +
                        " sequences");
  }
  Model model(c.model, data.joints(), c.sgd.seed);
  restore_model(model, checkpoint);
  const std::size_t one[] = {index};
  const auto batch = make_batch(data, one, c.frames);
  // A checkpoint saved before any training step has no running statistics.
  bool has_stats = true;
  for (const auto& b : model.buffers())
    if (b.name.ends_with(".tracked") && b.tensor.item() == 0.0) has_stats = false;
  const auto pair = model.attend(batch, has_stats ? Mode::eval : Mode::train);
  auto rows = export_attention(pair.joint.maps, Modality::joint);
  auto motion_rows = export_attention(pair.motion.maps, Modality::motion);
  rows.insert(rows.end(), motion_rows.begin(), motion_rows.end());
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream os(out);
  if (!os) throw IoError("cannot write " + out.string());
  write_saliency_csv(os, rows);
  os.close();
  Outcome o;
  o.artifacts["attention"] = out;
  o.summary["rows"] = rows.size();
  std::cout << "wrote " << rows.size() << " saliency rows to " << out.string() << '\n';
  return o;
}

// ---------------------------------------------------------------- dispatch

/// Commands writing a run directory vs a single output file (with a sidecar manifest).
bool uses_run_dir(const std::string& command) {
  return command == "pretrain" || command == "finetune" || command == "probe";
}

Outcome execute(const std::string& command, const json& args, const fs::path& target) {
  if (command == "gen-data") return gen_data(args, target);
  if (command == "pretrain") return pretrain_cmd(args, target);
  if (command == "finetune") return classifier_cmd(args, target, false);
  if (command == "probe") return classifier_cmd(args, target, true);
  if (command == "gradcheck") return gradcheck_cmd(args, target);
  if (command == "export-attn") return export_attn_cmd(args, target);
  throw ConfigError("unknown command '" + command + "'");
}

fs::path sidecar(const fs::path& file) { return fs::path(file.string() + ".manifest.json"); }

/// Runs a command and records its manifest. Returns the manifest path.
fs::path run_recorded(const std::string& command, json args, const fs::path& out, bool force, Outcome* outcome) {
  const std::string started = utc_now();
  json extra = json::object();
  fs::path target = out, manifest;
  if (uses_run_dir(command)) {
    const RunConfig c = effective_config(args);
    target = prepare_dir(out / run_name(c), force);
    manifest = target / "manifest.json";
    extra["config"] = json::parse(dump_run_config(c));
    extra["config_hash"] = sha1(dump_run_config(c));
    extra["seed"] = c.sgd.seed;
  } else if (!out.empty()) {
    manifest = sidecar(out);
  }
  Outcome o;
  try {
    o = execute(command, args, target);
  } catch (...) {
    // Leave no half-written run directory behind; it would block a rerun.
    if (uses_run_dir(command)) fs::remove_all(target);
    throw;
  }
  if (!manifest.empty()) {
    write_manifest(manifest, command, args, o, started, extra);
    std::cout << "manifest: " << manifest.string() << '\n';
  }
  if (outcome) *outcome = std::move(o);
  return manifest;
}

json training_args(const std::string& config, const std::string& data, const std::string& checkpoint) {
  json a;
  try {
    a["config_text"] = read_file(config);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  a["config_path"] = fs::absolute(config).string();
  a["data"] = fs::absolute(data).string();
  if (!checkpoint.empty()) a["checkpoint"] = fs::absolute(checkpoint).string();
  // Validate now so schema errors surface before any work.
  try {
    parse_run_config(a["config_text"].get<std::string>());
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
  if (const char* s = std::getenv("SDS_SEED")) a["seed_override"] = parse_seed(s, "SDS_SEED");
  return a;
}

int replay(const fs::path& manifest_path, const fs::path& out, bool force) {
  const json m = json::parse(read_file(manifest_path));
  const std::string command = m.at("command");
  fs::path target;
  if (uses_run_dir(command)) {
    target = out;
  } else {
    fs::create_directories(out);
    const auto artifacts = m.value("artifacts", json::object());
    const std::string first = artifacts.empty() ? "output" : artifacts.begin().value().get<std::string>();
    target = out / fs::path(first).filename();
  }
  Outcome o;
  const fs::path replayed = run_recorded(command, m.at("args"), target, force, &o);
  const json r = json::parse(read_file(replayed));
  bool same = true;
  const json wanted = m.value("digests", json::object()), produced = r.value("digests", json::object());
  for (const auto& [name, want] : wanted.items()) {
    const auto got = produced.value(name, std::string());
    const bool match = got == want.get<std::string>();
    std::cout << (match ? "  identical  " : "  DIFFERENT  ") << name << '\n';
    same = same && match;
  }
  std::cout << (same ? "replay reproduced every artifact of " : "replay diverged from ") << manifest_path.string() << '\n';
  if (!same) throw CheckFailed("replay: artifacts differ");
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatiotemporal decouple-and-squeeze contrastive learning on skeleton sequences"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_help_all_flag("--help-all");
  bool force = false;
  bool quiet = false;
  app.add_flag("--force", force, "Replace an existing output directory");
  app.add_flag("-q,--quiet", quiet, "Only print warnings and errors");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Write the paired synthetic dataset as JSON Lines");
  int classes = 4;
  std::size_t per_class = 100, joints = 8, frames = 32;
  SyntheticConfig gen_defaults;
  double noise = gen_defaults.noise_sd, pose_jitter = gen_defaults.pose_jitter,
         amplitude_jitter = gen_defaults.amplitude_jitter, pose_offset = gen_defaults.pose_offset;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  gen->add_option("--classes", classes, "Number of classes (even)")->capture_default_str();
  gen->add_option("--per-class", per_class, "Sequences per class")->capture_default_str();
  gen->add_option("--joints", joints, "Joints per skeleton")->capture_default_str();
  gen->add_option("--frames", frames, "Raw frames per sequence")->capture_default_str();
  gen->add_option("--noise", noise, "Coordinate noise standard deviation")->capture_default_str();
  gen->add_option("--pose-jitter", pose_jitter, "Per-sample pose offset deviation")->capture_default_str();
  gen->add_option("--amplitude-jitter", amplitude_jitter, "Movement amplitude jitter")->capture_default_str();
  gen->add_option("--pose-offset", pose_offset, "Pose change within a spatial pair")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Generator seed")->capture_default_str();
  gen->add_option("--out", gen_out, "Output .jsonl path")->required();

  // pretrain / finetune / probe
  std::string config, data, checkpoint, run_out;
  auto* pre = app.add_subcommand("pretrain", "Contrastive pretraining (labels ignored)");
  auto* fine = app.add_subcommand("finetune", "Supervised training of encoder and recognition head");
  auto* probe = app.add_subcommand("probe", "Linear classifier on frozen encoder features");
  for (auto* sub : {pre, fine, probe}) {
    sub->add_option("--config", config, "JSON run configuration")->required();
    sub->add_option("--data", data, "JSON Lines dataset")->required();
    sub->add_option("--out", run_out, "Root directory; the run goes into <config-hash>-seed<seed>")->required();
  }
  fine->add_option("--checkpoint", checkpoint, "Pretrained checkpoint directory (omit to train from scratch)");
  probe->add_option("--checkpoint", checkpoint, "Pretrained checkpoint directory (omit for a random encoder)");

  // gradcheck
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  std::vector<std::string> scopes{"ops", "siia", "losses", "end2end"};
  std::uint64_t grad_seed = 0;
  std::size_t grad_seeds = 1;
  double corrupt = 1.0;
  std::string grad_out;
  bool verbose = false;
  grad->add_option("--scope", scopes, "ops|siia|losses|end2end (repeatable)")
      ->check(CLI::IsMember({"ops", "siia", "losses", "end2end"}))
      ->capture_default_str();
  grad->add_option("--seed", grad_seed, "First seed")->capture_default_str();
  grad->add_option("--seeds", grad_seeds, "Number of consecutive seeds")->capture_default_str();
  grad->add_option("--corrupt", corrupt, "Scale analytic gradients by this factor (negative control)")
      ->capture_default_str();
  grad->add_option("--out", grad_out, "Write the per-case table as CSV");
  grad->add_flag("-v,--verbose", verbose, "Print the per-case table");

  // export-attn
  auto* exp = app.add_subcommand("export-attn", "Per-joint and per-frame attention saliency of one sample");
  std::size_t index = 0;
  std::string exp_checkpoint, exp_data, exp_out;
  exp->add_option("--checkpoint", exp_checkpoint, "Checkpoint directory")->required();
  exp->add_option("--data", exp_data, "JSON Lines dataset")->required();
  exp->add_option("--index", index, "Sequence index")->required();
  exp->add_option("--out", exp_out, "Output CSV")->required();

  // replay
  auto* rep = app.add_subcommand("replay", "Re-run a command from its manifest and compare artifacts");
  std::string manifest, rep_out;
  rep->add_option("--manifest", manifest, "manifest.json of the run")->required();
  rep->add_option("--out", rep_out, "Directory for the replayed outputs")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : config_error;
  }
  // Diagnostics go to stderr so stdout carries only command output.
  spdlog::set_default_logger(spdlog::stderr_color_mt("sdscl"));
  spdlog::set_level(quiet ? spdlog::level::warn : spdlog::level::info);

  try {
    if (*gen) {
      json a{{"classes", classes},         {"per_class", per_class},     {"joints", joints},
             {"frames", frames},           {"noise", noise},             {"pose_jitter", pose_jitter},
             {"amplitude_jitter", amplitude_jitter}, {"pose_offset", pose_offset}, {"seed", gen_seed}};
      if (const char* s = std::getenv("SDS_SEED")) a["seed"] = parse_seed(s, "SDS_SEED");
      run_recorded("gen-data", a, gen_out, force, nullptr);
      return ok;
    }
    for (auto* sub : {pre, fine, probe}) {
      if (!*sub) continue;
      run_recorded(sub->get_name(), training_args(config, data, checkpoint), run_out, force, nullptr);
      return ok;
    }
    if (*grad) {
      json a{{"scopes", scopes}, {"seed", grad_seed}, {"seeds", grad_seeds}, {"corrupt", corrupt}, {"verbose", verbose}};
      Outcome o;
      run_recorded("gradcheck", a, grad_out, force, &o);
      return o.summary.at("passed").get<bool>() ? ok : numeric_error;
    }
    if (*exp) {
      json a{{"checkpoint", fs::absolute(exp_checkpoint).string()}, {"data", fs::absolute(exp_data).string()},
             {"index", index}};
      run_recorded("export-attn", a, exp_out, force, nullptr);
      return ok;
    }
    if (*rep) return replay(manifest, rep_out, force);
  } catch (const CheckFailed& e) {
    spdlog::error("{}", e.what());
    return numeric_error;
  } catch (const ConfigError& e) {
    spdlog::error("configuration: {}", e.what());
    return config_error;
  } catch (const ArgumentError& e) {
    spdlog::error("argument: {}", e.what());
    return config_error;
  } catch (const ParseError& e) {
    spdlog::error("parse: {}", e.what());
    return data_error;
  } catch (const DataError& e) {
    spdlog::error("data: {}", e.what());
    return data_error;
  } catch (const SchemaError& e) {
    spdlog::error("schema: {}", e.what());
    return data_error;
  } catch (const SelectionError& e) {
    spdlog::error("data: {}", e.what());
    return data_error;
  } catch (const IoError& e) {
    spdlog::error("i/o: {}", e.what());
    return data_error;
  } catch (const fs::filesystem_error& e) {
    spdlog::error("i/o: {}", e.what());
    return data_error;
  } catch (const EvaluationError& e) {
    spdlog::error("numerical: {}", e.what());
    return numeric_error;
  } catch (const DegenerateInputError& e) {
    spdlog::error("numerical: {}", e.what());
    return numeric_error;
  } catch (const DomainError& e) {
    spdlog::error("numerical: {}", e.what());
    return numeric_error;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return failure;
  }
  return failure;
}
