#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

#include <gtest/gtest.h>

#include "biasscope/pipeline.hpp"
#include "../support/fixtures.hpp"

using namespace biasscope;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json small_config() {
  return json::parse(R"({
    "synth": {"authors_per_gender": 5, "posts_per_author": 6, "comments_per_post": 3},
    "model": {"embedding_dim": 8, "hidden_dim": 8, "classifier_hidden": 8, "adversary_hidden": 8},
    "propensity": {"model": {"embedding_dim": 8, "hidden_dim": 8, "classifier_hidden": 8}, "epochs": 2,
                   "learning_rate": 0.01},
    "schedule": {"learning_rate": 0.01, "batch_size": 16, "base_epochs": 2, "classifier_epochs": 1,
                 "adversary_epochs": 2, "cycles": 2},
    "confound": {"min_count": 2},
    "analysis": {"language_filter": false, "threshold": 0.5, "top_n": 20},
    "synth_tagged": {"n": 200}
  })");
}

PipelineConfig config_at(const fs::path& out) {
  json j = small_config();
  j["paths"]["output"] = out.string();
  return make_pipeline_config(j);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Config, DefaultsValidate) {
  const auto c = make_pipeline_config(json::object());
  EXPECT_EQ(c.preset, "base");
  EXPECT_EQ(c.confound.min_count, 5u);
  EXPECT_FALSE(c.match.caliper.has_value());
  EXPECT_DOUBLE_EQ(c.match.auto_caliper_sd_multiple, 0.2);
  EXPECT_EQ(c.output, fs::path("biasscope_out"));
}

TEST(Config, ReportsEveryViolation) {
  const json bad = json::parse(R"({"schedule": {"learning_rate": "fast", "epochs": 3}, "nonsense": 1,
                                   "model": {"hidden_dim": 2.5}})");
  try {
    make_pipeline_config(bad);
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("schedule.learning_rate"), std::string::npos);
    EXPECT_NE(msg.find("schedule.epochs"), std::string::npos);
    EXPECT_NE(msg.find("'nonsense'"), std::string::npos);
    EXPECT_NE(msg.find("model.hidden_dim"), std::string::npos);
  }
  EXPECT_THROW(make_pipeline_config(json::parse(R"({"split": {"train": 0.9}})")), ConfigError);
  EXPECT_THROW(make_pipeline_config(json::parse(R"({"match": {"order": "best"}})")), ConfigError);
  EXPECT_NO_THROW(make_pipeline_config(json::parse(R"({"reference": {"anything": [1]}, "description": "x"})")));
  EXPECT_NO_THROW(make_pipeline_config(default_config_json()));
}

TEST(Config, FilesMergeInOrderThenOverridesThenOutputPrecedence) {
  fixture::TempDir tmp;
  std::ofstream(tmp.path() / "a.json") << R"({"schedule": {"learning_rate": 0.5, "batch_size": 8}})";
  std::ofstream(tmp.path() / "b.json") << R"({"schedule": {"learning_rate": 0.25}, "paths": {"output": "from_file"}})";
  ConfigSources src;
  src.files = {tmp.path() / "a.json", tmp.path() / "b.json"};
  src.overrides = {"schedule.batch_size=4", "train.preset=match", "match.caliper=0.05"};
  ::unsetenv("BIASSCOPE_OUT");
  auto c = load_pipeline_config(src);
  EXPECT_DOUBLE_EQ(c.schedule.learning_rate, 0.25);
  EXPECT_EQ(c.schedule.batch_size, 4);
  EXPECT_EQ(c.preset, "match");
  EXPECT_DOUBLE_EQ(*c.match.caliper, 0.05);
  EXPECT_EQ(c.output, fs::path("from_file"));

  ::setenv("BIASSCOPE_OUT", "from_env", 1);
  EXPECT_EQ(load_pipeline_config(src).output, fs::path("from_env"));
  src.output_flag = "from_flag";
  const auto flagged = load_pipeline_config(src);
  EXPECT_EQ(flagged.output, fs::path("from_flag"));
  ::unsetenv("BIASSCOPE_OUT");
  EXPECT_EQ(flagged.hash(), c.hash());  // output root is not part of the experiment

  src.overrides = {"no_equals_sign"};
  EXPECT_THROW(load_pipeline_config(src), ConfigError);
  src.overrides = {"schedule.batch_size=\"many\""};
  EXPECT_THROW(load_pipeline_config(src), ConfigError);
}

TEST(Config, PresetsParse) {
  for (const auto& name : {"base", "demotion", "match", "match_demotion"}) {
    ConfigSources src;
    src.files = {fs::path(BIASSCOPE_DATA_DIR) / "presets" / (std::string(name) + ".json")};
    const auto c = load_pipeline_config(src);
    EXPECT_EQ(c.preset, name);
    std::ifstream in(src.files.front());
    EXPECT_TRUE(json::parse(in).contains("reference"));
  }
  EXPECT_THROW(find_preset("fancy"), ConfigError);
}

TEST(Files, AtomicWriteAndLock) {
  fixture::TempDir tmp;
  const auto p = tmp.path() / "sub" / "x.txt";
  write_atomic(p, std::string("hello"));
  EXPECT_EQ(slurp(p), "hello");
  EXPECT_FALSE(fs::exists(p.string() + ".tmp"));
  EXPECT_EQ(file_sha256(p), sha256_hex("hello"));
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  {
    DirLock lock(tmp.path());
    EXPECT_TRUE(fs::exists(tmp.path() / ".lock"));
    EXPECT_THROW(DirLock second(tmp.path()), Error);
  }
  EXPECT_FALSE(fs::exists(tmp.path() / ".lock"));
}

TEST(PipelineStages, PrerequisitesAreNamed) {
  fixture::TempDir tmp;
  Pipeline p(config_at(tmp.path()));
  try {
    p.run("split");
    FAIL();
  } catch (const PrerequisiteError& e) {
    EXPECT_EQ(e.stage, "ingest");
  }
  try {
    p.run("ingest");
    FAIL();
  } catch (const PrerequisiteError& e) {
    EXPECT_EQ(e.stage, "synth");
  }
  EXPECT_THROW(p.run("report"), PrerequisiteError);
  EXPECT_THROW(p.run("dance"), ConfigError);
  EXPECT_FALSE(fs::exists(tmp.path() / ".lock"));
}

TEST(PipelineStages, EndToEndIsReproducible) {
  fixture::TempDir a, b;
  const std::vector<std::string> stages{"synth", "ingest", "split", "preprocess", "match"};
  for (const auto* dir : {&a, &b}) {
    Pipeline p(config_at(dir->path()));
    for (const auto& s : stages) p.run(s);
    for (const auto& preset : {"base", "match_demotion"}) {
      StageOptions o;
      o.preset = preset;
      for (const auto& s : {"train", "predict", "eval", "transfer-eval", "analyze"}) p.run(s, o);
    }
    p.run("report");
  }
  for (const auto& rel : {"models/base/metrics_test.json", "models/match_demotion/metrics_test.json",
                          "models/base/transfer_metrics.json", "analysis/base/masking.tsv", "match/summary.json",
                          "models/match_demotion/provenance_train.json", "report/tables.md"}) {
    ASSERT_TRUE(fs::exists(a.path() / rel)) << rel;
    EXPECT_EQ(slurp(a.path() / rel), slurp(b.path() / rel)) << rel;
  }
  const auto prov = json::parse(slurp(a.path() / "models/match_demotion/provenance_train.json"));
  EXPECT_EQ(prov["stage"], "train");
  EXPECT_FALSE(prov["config"]["paths"].contains("output"));
  EXPECT_TRUE(prov["inputs"].contains("match/comments.txt"));
  EXPECT_TRUE(prov["outputs"].contains("models/match_demotion/confound_vectors.txt"));
  const auto summary = json::parse(slurp(a.path() / "match/summary.json"));
  EXPECT_TRUE(summary["audit_problems"].empty());
  EXPECT_EQ(summary["comments_F"], summary["comments_M"]);
}

#ifdef BIASSCOPE_CLI_PATH
namespace {
int cli(const std::string& args) {
  const int rc = std::system((std::string(BIASSCOPE_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}
}  // namespace

TEST(Cli, ExitCodes) {
  fixture::TempDir tmp;
  const std::string out = "-o " + tmp.path().string();
  EXPECT_EQ(cli("show-config " + out), 0);
  EXPECT_EQ(cli("show-config --set schedule.learning_rate=fast " + out), 2);
  EXPECT_EQ(cli("train -p nope " + out), 2);
  EXPECT_EQ(cli("split " + out), 3);
  std::ofstream(tmp.path() / "bad.tsv") << "only\tthree\tfields\n";
  EXPECT_EQ(cli("ingest --set paths.corpus=" + (tmp.path() / "bad.tsv").string() + " " + out), 4);
  EXPECT_NE(cli("no-such-command"), 0);
}
#endif
