#include <gtest/gtest.h>
#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Outcome {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct SaliencyLine {
  std::string kind, modality, line;
  double value = 0.0;
  double bound = 0.0;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / "sdscl_cli_tests" / info->name();
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }

  Outcome run(const std::string& args, const std::string& env = "") {
    const auto out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd =
        env + " \"" SDSCL_CLI "\" " + args + " >\"" + out.string() + "\" 2>\"" + err.string() + "\"";
    const int status = std::system(cmd.c_str());
    Outcome r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

  fs::path gen(int per_class = 10, int seed = 0, const std::string& name = "data.jsonl") {
    auto p = dir_ / name;
    auto r = run("gen-data --classes 4 --per-class " + std::to_string(per_class) +
                 " --joints 5 --frames 12 --seed " + std::to_string(seed) + " --out \"" + p.string() + "\"");
    EXPECT_EQ(r.code, 0) << r.err;
    return p;
  }

  fs::path config(json extra = json::object()) {
    json c = {{"base_lr", 0.01}, {"total_epochs", 2}, {"batch_size", 4}, {"channels", 8}, {"heads", 2},
              {"frames", 8}};
    for (auto& [k, v] : extra.items()) c[k] = v;
    auto p = dir_ / "config.json";
    std::ofstream(p) << c.dump(2);
    return p;
  }

  // Runs export-attn on sample 3 of `data` (5 joints, 8 frames) and parses the CSV.
  std::vector<SaliencyLine> export_rows(const fs::path& ckpt, const fs::path& data, const std::string& name) {
    auto csv = dir_ / name;
    auto e = run("export-attn --checkpoint \"" + ckpt.string() + "\" --data \"" + data.string() +
                 "\" --index 3 --out \"" + csv.string() + "\"");
    EXPECT_EQ(e.code, 0) << e.err;
    std::istringstream rows(slurp(csv));
    std::string line;
    std::getline(rows, line);
    EXPECT_EQ(line, "kind,modality,index,saliency");
    std::vector<SaliencyLine> out;
    while (std::getline(rows, line)) {
      std::istringstream fields(line);
      SaliencyLine r;
      std::string index, value;
      std::getline(fields, r.kind, ',');
      std::getline(fields, r.modality, ',');
      std::getline(fields, index, ',');
      std::getline(fields, value, ',');
      r.value = std::stod(value);
      r.bound = r.kind.rfind("spa", 0) == 0 ? 5.0 : 8.0;
      r.line = line;
      out.push_back(r);
    }
    return out;
  }

  static void expect_row_counts(const std::vector<SaliencyLine>& rows) {
    std::map<std::string, int> per_kind;
    for (const auto& r : rows) ++per_kind[r.kind + "/" + r.modality];
    for (auto kind : {"spa_tra", "spa_ter", "tem_tra", "tem_ter"})
      for (auto modality : {"joint", "motion"})
        EXPECT_EQ(per_kind[std::string(kind) + "/" + modality], kind[0] == 's' ? 5 : 8) << kind << modality;
  }

  static fs::path only_subdir(const fs::path& root) {
    fs::path found;
    for (const auto& e : fs::directory_iterator(root))
      if (e.is_directory()) found = e.path();
    return found;
  }

  fs::path dir_;
};

std::size_t count_lines(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

}  // namespace

TEST_F(Cli, GenDataWritesOneLinePerSequence) {
  auto p = dir_ / "d.jsonl";
  auto r = run("gen-data --classes 4 --per-class 100 --out \"" + p.string() + "\"");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(slurp(p)), 400u);
  EXPECT_NE(r.out.find("class 3: 100"), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(p.string() + ".manifest.json"));
}

TEST_F(Cli, GenDataIsByteIdenticalPerSeed) {
  auto a = gen(10, 7, "a.jsonl");
  auto b = gen(10, 7, "b.jsonl");
  auto c = gen(10, 8, "c.jsonl");
  EXPECT_EQ(slurp(a), slurp(b));
  EXPECT_NE(slurp(a), slurp(c));
}

TEST_F(Cli, OddClassCountIsRejected) {
  auto r = run("gen-data --classes 3 --out \"" + (dir_ / "x.jsonl").string() + "\"");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("pairs"), std::string::npos) << r.err;
}

TEST_F(Cli, UnwritablePathIsDataError) {
  auto r = run("gen-data --out /proc/nonexistent/x.jsonl");
  EXPECT_EQ(r.code, 3) << r.err;
}

TEST_F(Cli, MissingRequiredKeyIsNamed) {
  auto data = gen();
  auto cfg = dir_ / "bad.json";
  std::ofstream(cfg) << R"({"base_lr": 0.01, "batch_size": 4})";
  auto r = run("pretrain --config \"" + cfg.string() + "\" --data \"" + data.string() + "\" --out \"" +
               (dir_ / "runs").string() + "\"");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("total_epochs"), std::string::npos) << r.err;
}

TEST_F(Cli, PretrainBatchGuard) {
  auto data = gen();
  auto r = run("pretrain --config \"" + config({{"batch_size", 1}}).string() + "\" --data \"" + data.string() +
               "\" --out \"" + (dir_ / "runs").string() + "\"");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("batch_size"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir_ / "runs") && !fs::is_empty(dir_ / "runs"));
}

TEST_F(Cli, MalformedDataIsDataError) {
  auto bad = dir_ / "bad.jsonl";
  std::ofstream(bad) << "{oops\n";
  auto r = run("pretrain --config \"" + config().string() + "\" --data \"" + bad.string() + "\" --out \"" +
               (dir_ / "runs").string() + "\"");
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_NE(r.err.find("line 1"), std::string::npos) << r.err;
}

TEST_F(Cli, PretrainRunDirectoryAndReplay) {
  auto data = gen();
  auto runs = dir_ / "runs";
  auto r = run("pretrain --config \"" + config().string() + "\" --data \"" + data.string() + "\" --out \"" +
               runs.string() + "\"");
  ASSERT_EQ(r.code, 0) << r.err;
  auto run_dir = only_subdir(runs);
  EXPECT_NE(run_dir.filename().string().find("-seed0"), std::string::npos);
  for (auto name : {"manifest.json", "metrics.csv", "config.json", "result.json", "checkpoint"}) {
    EXPECT_TRUE(fs::exists(run_dir / name)) << name;
  }
  auto m = json::parse(slurp(run_dir / "manifest.json"));
  EXPECT_EQ(m["command"], "pretrain");
  EXPECT_EQ(m["seed"], 0);
  EXPECT_TRUE(m.contains("config_hash"));
  EXPECT_TRUE(m["digests"].contains("metrics"));

  auto again = run("pretrain --config \"" + config().string() + "\" --data \"" + data.string() + "\" --out \"" +
                   runs.string() + "\"");
  EXPECT_NE(again.code, 0) << "existing run directory must need --force";

  auto rep = run("replay --manifest \"" + (run_dir / "manifest.json").string() + "\" --out \"" +
                 (dir_ / "replayed").string() + "\"");
  EXPECT_EQ(rep.code, 0) << rep.out << rep.err;
  EXPECT_NE(rep.out.find("identical  metrics"), std::string::npos) << rep.out;
  EXPECT_EQ(rep.out.find("DIFFERENT"), std::string::npos) << rep.out;
  EXPECT_EQ(slurp(run_dir / "metrics.csv"), slurp(only_subdir(dir_ / "replayed") / "metrics.csv"));
}

TEST_F(Cli, SeedOverrideFromEnvironment) {
  auto data = gen();
  auto runs = dir_ / "runs";
  auto r = run("pretrain --config \"" + config().string() + "\" --data \"" + data.string() + "\" --out \"" +
                   runs.string() + "\"",
               "SDS_SEED=5");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(only_subdir(runs).filename().string().find("-seed5"), std::string::npos);
}

TEST_F(Cli, FinetuneFromCheckpointAndExportAttention) {
  auto data = gen();
  auto r = run("pretrain --config \"" + config().string() + "\" --data \"" + data.string() + "\" --out \"" +
               (dir_ / "pre").string() + "\"");
  ASSERT_EQ(r.code, 0) << r.err;
  auto ckpt = only_subdir(dir_ / "pre") / "checkpoint";

  auto f = run("finetune --config \"" + config({{"labeled_fraction", 0.5}}).string() + "\" --data \"" +
               data.string() + "\" --checkpoint \"" + ckpt.string() + "\" --out \"" + (dir_ / "fine").string() + "\"");
  ASSERT_EQ(f.code, 0) << f.err;
  auto fine_dir = only_subdir(dir_ / "fine");
  auto result = json::parse(slurp(fine_dir / "result.json"));
  EXPECT_EQ(result["labeled"], 16);
  EXPECT_EQ(count_lines(slurp(fine_dir / "predictions.csv")), 1u + 8u);

  // Entries of a trained map may round to exactly +-1, so only the closed bound holds there.
  auto trained = export_rows(ckpt, data, "trained.csv");
  for (const auto& row : trained) EXPECT_LE(std::abs(row.value), row.bound) << row.line;
  expect_row_counts(trained);

  auto bad = run("export-attn --checkpoint \"" + ckpt.string() + "\" --data \"" + data.string() +
                 "\" --index 999 --out \"" + (dir_ / "attn2.csv").string() + "\"");
  EXPECT_EQ(bad.code, 2) << bad.err;
}

TEST_F(Cli, ProbeWithoutCheckpoint) {
  auto data = gen();
  auto r = run("probe --config \"" + config().string() + "\" --data \"" + data.string() + "\" --out \"" +
               (dir_ / "probe").string() + "\"");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("test accuracy"), std::string::npos);

  // The probe never trains the encoder or SIIA, so its checkpoint is an untrained model.
  auto rows = export_rows(only_subdir(dir_ / "probe") / "checkpoint", data, "untrained.csv");
  for (const auto& row : rows) {
    EXPECT_TRUE(std::isfinite(row.value)) << row.line;
    EXPECT_LT(std::abs(row.value), row.bound) << row.line;
  }
  expect_row_counts(rows);
}

TEST_F(Cli, GradcheckPassesAndNegativeControlFails) {
  auto ok = run("gradcheck --scope ops --seed 0");
  EXPECT_EQ(ok.code, 0) << ok.out << ok.err;
  auto bad = run("gradcheck --scope ops --corrupt 1.01");
  EXPECT_EQ(bad.code, 4) << bad.out;
  auto unknown = run("gradcheck --scope everything");
  EXPECT_EQ(unknown.code, 2);
}

TEST_F(Cli, GradcheckEndToEndReplays) {
  auto csv = dir_ / "grad.csv";
  auto r = run("gradcheck --scope end2end --seed 3 --out \"" + csv.string() + "\"");
  ASSERT_EQ(r.code, 0) << r.out << r.err;
  auto rep = run("replay --manifest \"" + csv.string() + ".manifest.json\" --out \"" + (dir_ / "rep").string() + "\"");
  EXPECT_EQ(rep.code, 0) << rep.out << rep.err;
  EXPECT_EQ(slurp(csv), slurp(dir_ / "rep" / "grad.csv"));
}

TEST_F(Cli, UnknownSubcommandIsUsageError) {
  EXPECT_EQ(run("train").code, 2);
}
