#pragma once

// Stage orchestration behind the command-line tool. One JSON config drives
// every stage; each stage reads artifacts from the output root, writes its own
// atomically, and leaves a provenance record next to them.
//
//   synth       synth/{corpus.tsv, manifest.json, tagged.tsv}
//   ingest      corpus/{authors,posts,comments}.jsonl, corpus/ingest_report.json
//   split       split/assignment.tsv, split/summary.json
//   preprocess  preprocessed/{train,dev,test}/*.jsonl, preprocessed/post_polarity.tsv
//   match       match/{propensity.ckpt, scores.tsv, pairs.tsv, comments.txt,
//               summary.json, post_polarity_after.tsv}
//   train       models/<preset>/{model.ckpt, train_log.json[, confound_vectors.txt,
//               author_log_odds.tsv]}
//   predict     models/<preset>/predictions_test.tsv
//   eval        models/<preset>/{metrics_test.json, metrics_test.txt}
//   transfer-eval  models/<preset>/transfer_metrics.json
//   analyze     analysis/<preset>/{top_confident.tsv, masking.tsv,
//               lexicon_differential.json, surfaced.tsv}
//   report      report/{tables.md, post_polarity.svg, lexicon_<preset>.svg}

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "biasscope/analysis.hpp"
#include "biasscope/biasmodel.hpp"
#include "biasscope/common.hpp"
#include "biasscope/corpus.hpp"
#include "biasscope/corpus_io.hpp"
#include "biasscope/evalharness.hpp"
#include "biasscope/fsutil.hpp"
#include "biasscope/lexstats.hpp"
#include "biasscope/plot.hpp"
#include "biasscope/propensity.hpp"
#include "biasscope/synthgen.hpp"

#ifndef BIASSCOPE_DATA_DIR
#define BIASSCOPE_DATA_DIR "data"
#endif

namespace biasscope {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

struct Preset {
  std::string name;
  std::string row;  // table row label
  bool matched = false;
  bool demotion = false;
};

inline const std::vector<Preset>& presets() {
  static const std::vector<Preset> all{{"base", "base", false, false},
                                       {"demotion", "+demotion", false, true},
                                       {"match", "+match", true, false},
                                       {"match_demotion", "+match+demotion", true, true}};
  return all;
}

inline const Preset& find_preset(const std::string& name) {
  for (const auto& p : presets())
    if (p.name == name) return p;
  throw ConfigError("unknown preset '" + name + "' (expected base, demotion, match or match_demotion)");
}

inline const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> all{"synth", "ingest",        "split",   "preprocess", "match", "train",
                                            "predict", "eval", "transfer-eval", "analyze", "report"};
  return all;
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

inline json default_config_json() {
  const std::string data = BIASSCOPE_DATA_DIR;
  TrainSchedule sched;
  json schedule = to_json(sched);
  schedule.erase("demotion");
  json pmodel = to_json(ModelConfig{});
  pmodel.erase("confound_dim");
  json model = pmodel;
  SynthTaggedSpec tagged;
  return {
      {"paths",
       {{"corpus", ""},
        {"substitutions", data + "/substitutions.tsv"},
        {"lexicons", data + "/lexicons"},
        {"english_words", data + "/english_words.txt"},
        {"tagged_posts", ""},
        {"output", "biasscope_out"}}},
      {"ingest", {{"female_labels", {"F", "W"}}, {"male_labels", {"M"}}, {"min_tokens", 4}}},
      {"split", {{"train", 0.8}, {"dev", 0.1}, {"test", 0.1}, {"seed", 1}}},
      {"confound", {{"min_count", 5}, {"prior_alpha", nullptr}}},
      {"polarity", {{"prior_alpha", nullptr}, {"scale", "z"}, {"top_k", 15}}},
      {"propensity", {{"model", pmodel}, {"epochs", 5}, {"learning_rate", 1e-3}, {"batch_size", 64}, {"seed", 1}}},
      {"match", {{"caliper", nullptr}, {"sd_multiple", 0.2}, {"seed", 1}, {"order", "hardest_first"}, {"balance_seed", 1}}},
      {"model", model},
      {"schedule", schedule},
      {"train", {{"preset", "base"}}},
      {"eval", {{"positive_class", "F"}}},
      {"transfer", {{"baseline_seed", 1}, {"baseline_n", 10000}}},
      {"analysis",
       {{"top_n", 500},
        {"threshold", 0.99},
        {"samples", 2},
        {"seed", 1},
        {"post_threshold", 0.6},
        {"comment_threshold", 0.9},
        {"language_filter", true},
        {"language_min_fraction", 0.5}}},
      {"synth", to_json(SynthSpec{})},
      {"synth_tagged",
       {{"n", tagged.n},
        {"gender_rate", tagged.gender_rate},
        {"marker_prob", tagged.marker_prob},
        {"noise_prob", tagged.noise_prob},
        {"length", tagged.length},
        {"base_vocab", tagged.base_vocab},
        {"marker", tagged.marker},
        {"seed", tagged.seed}}},
  };
}

// Keys accepted at the top level but ignored by every stage.
inline bool is_annotation_key(const std::string& k) { return k == "reference" || k == "description"; }

namespace detail {

inline void check_schema(const json& defaults, const json& given, const std::string& prefix,
                         std::vector<std::string>& problems) {
  for (const auto& [key, value] : given.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (prefix.empty() && is_annotation_key(key)) continue;
    if (!defaults.contains(key)) {
      problems.push_back("unknown key '" + path + "'");
      continue;
    }
    const json& d = defaults.at(key);
    const auto kind_ok = [&]() {
      if (d.is_null()) return value.is_null() || value.is_number();
      if (d.is_boolean()) return value.is_boolean();
      if (d.is_number_float()) return value.is_number();
      if (d.is_number()) return value.is_number_integer() || value.is_number_unsigned();
      if (d.is_string()) return value.is_string();
      if (d.is_array()) return value.is_array();
      if (d.is_object()) return value.is_object();
      return true;
    }();
    if (!kind_ok) {
      problems.push_back("'" + path + "' has the wrong type (expected " + std::string(d.is_null() ? "number or null" : d.type_name()) +
                         ", got " + value.type_name() + ")");
      continue;
    }
    if (d.is_object()) check_schema(d, value, path, problems);
  }
}

// Parses "a.b.c=value". The value is read as JSON when it parses, otherwise
// as a plain string.
inline void apply_override(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &cfg;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->is_object()) throw ConfigError("override path crosses a non-object: " + key);
    node = &(*node)[parts[i]];
  }
  (*node)[parts.back()] = value;
}

inline MatchOrder parse_match_order(const std::string& s) {
  if (s == "hardest_first") return MatchOrder::HardestFirst;
  if (s == "input") return MatchOrder::InputOrder;
  if (s == "random") return MatchOrder::Random;
  throw ConfigError("match.order must be hardest_first, input or random (got '" + s + "')");
}

}  // namespace detail

struct AnalysisOptions {
  std::size_t top_n = 500;
  double threshold = 0.99;
  int samples = 2;
  std::uint64_t seed = 1;
  double post_threshold = 0.6;
  double comment_threshold = 0.9;
  bool language_filter = true;
  double language_min_fraction = 0.5;
};

struct PipelineConfig {
  json raw;  // merged configuration, after overrides

  std::filesystem::path corpus, substitutions, lexicons, english_words, tagged_posts, output;
  IngestOptions ingest;
  std::size_t min_tokens = kDefaultMinTokens;
  SplitRatios ratios;
  std::uint64_t split_seed = 1;
  ConfoundOptions confound;
  std::optional<double> polarity_prior;
  PolarityScale polarity_scale = PolarityScale::ZScore;
  std::size_t polarity_top_k = 15;
  PropensityOptions propensity;
  MatchConfig match;
  std::uint64_t balance_seed = 1;
  ModelConfig model;
  TrainSchedule schedule;
  std::string preset = "base";
  Gender positive_class = Gender::F;
  std::uint64_t baseline_seed = 1;
  std::size_t baseline_n = 10000;
  AnalysisOptions analysis;
  SynthSpec synth;
  SynthTaggedSpec synth_tagged;

  // SHA-256 of the merged config without the output root, so the same
  // experiment written to two places hashes identically.
  std::string hash() const {
    json j = raw;
    j["paths"].erase("output");
    return sha256_hex(j.dump());
  }
};

// Validates the merged config and builds the typed view. Every violation is
// collected before throwing.
inline PipelineConfig make_pipeline_config(json raw) {
  std::vector<std::string> problems;
  const json defaults = default_config_json();
  detail::check_schema(defaults, raw, "", problems);
  if (!problems.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ConfigError(msg);
  }
  // Like merge_patch, but an explicit null keeps the key (null means "auto").
  const std::function<void(json&, const json&)> overlay = [&](json& dst, const json& src) {
    if (!dst.is_object() || !src.is_object()) {
      dst = src;
      return;
    }
    for (const auto& [k, v] : src.items()) overlay(dst[k], v);
  };
  json merged = defaults;
  for (const auto& [k, v] : raw.items())
    if (!is_annotation_key(k)) overlay(merged[k], v);

  PipelineConfig c;
  c.raw = merged;
  const auto attempt = [&](auto&& fn) {
    try {
      fn();
    } catch (const ConfigError& e) {
      problems.push_back(e.what());
    } catch (const json::exception& e) {
      problems.push_back(e.what());
    }
  };
  const json& paths = merged["paths"];
  c.corpus = paths["corpus"].get<std::string>();
  c.substitutions = paths["substitutions"].get<std::string>();
  c.lexicons = paths["lexicons"].get<std::string>();
  c.english_words = paths["english_words"].get<std::string>();
  c.tagged_posts = paths["tagged_posts"].get<std::string>();
  c.output = paths["output"].get<std::string>();

  const json& ing = merged["ingest"];
  c.ingest.female_labels = ing["female_labels"].get<std::set<std::string>>();
  c.ingest.male_labels = ing["male_labels"].get<std::set<std::string>>();
  for (const auto& l : c.ingest.female_labels)
    if (c.ingest.male_labels.count(l)) problems.push_back("label '" + l + "' is listed for both genders");
  if (c.ingest.female_labels.empty() || c.ingest.male_labels.empty())
    problems.push_back("ingest needs at least one label per gender");
  const auto min_tokens = ing["min_tokens"].get<long long>();
  if (min_tokens < 1) problems.push_back("ingest.min_tokens must be >= 1");
  c.min_tokens = static_cast<std::size_t>(std::max(1LL, min_tokens));

  const json& sp = merged["split"];
  c.ratios = {sp["train"].get<double>(), sp["dev"].get<double>(), sp["test"].get<double>()};
  attempt([&] { validate_ratios(c.ratios); });
  c.split_seed = sp["seed"].get<std::uint64_t>();

  const json& cf = merged["confound"];
  const auto min_count = cf["min_count"].get<long long>();
  if (min_count < 1) problems.push_back("confound.min_count must be >= 1");
  c.confound.min_count = static_cast<std::size_t>(std::max(1LL, min_count));
  if (!cf["prior_alpha"].is_null()) {
    c.confound.prior_alpha = cf["prior_alpha"].get<double>();
    if (!(*c.confound.prior_alpha > 0.0)) problems.push_back("confound.prior_alpha must be positive");
  }
  const json& pol = merged["polarity"];
  if (!pol["prior_alpha"].is_null()) {
    c.polarity_prior = pol["prior_alpha"].get<double>();
    if (!(*c.polarity_prior > 0.0)) problems.push_back("polarity.prior_alpha must be positive");
  }
  attempt([&] { c.polarity_scale = parse_polarity_scale(pol["scale"].get<std::string>()); });
  c.polarity_top_k = static_cast<std::size_t>(std::max(1LL, pol["top_k"].get<long long>()));

  const json& pr = merged["propensity"];
  attempt([&] { c.propensity.model = model_config_from_json(pr["model"]); });
  c.propensity.epochs = pr["epochs"].get<int>();
  c.propensity.learning_rate = pr["learning_rate"].get<double>();
  c.propensity.batch_size = pr["batch_size"].get<int>();
  c.propensity.seed = pr["seed"].get<std::uint64_t>();
  if (c.propensity.epochs < 1) problems.push_back("propensity.epochs must be >= 1");
  if (!(c.propensity.learning_rate > 0.0)) problems.push_back("propensity.learning_rate must be positive");
  if (c.propensity.batch_size < 1) problems.push_back("propensity.batch_size must be >= 1");

  const json& m = merged["match"];
  if (!m["caliper"].is_null()) {
    c.match.caliper = m["caliper"].get<double>();
    if (!(*c.match.caliper > 0.0)) problems.push_back("match.caliper must be positive (or null for auto)");
  }
  c.match.auto_caliper_sd_multiple = m["sd_multiple"].get<double>();
  if (!(c.match.auto_caliper_sd_multiple > 0.0)) problems.push_back("match.sd_multiple must be positive");
  c.match.seed = m["seed"].get<std::uint64_t>();
  attempt([&] { c.match.order = detail::parse_match_order(m["order"].get<std::string>()); });
  c.balance_seed = m["balance_seed"].get<std::uint64_t>();

  attempt([&] { c.model = model_config_from_json(merged["model"]); });
  for (const ModelConfig* mc : {&c.model, &c.propensity.model}) {
    const auto& e = mc->net.encoder;
    if (e.embedding_dim < 1 || e.hidden_dim < 1) problems.push_back("model dimensions must be >= 1");
    if (e.kind == nn::EncoderKind::BiLstm && e.hidden_dim % 2 != 0)
      problems.push_back("bilstm hidden_dim must be even (it is split across directions)");
    if (mc->net.classifier_hidden < 1 || mc->net.adversary_hidden < 1) problems.push_back("head sizes must be >= 1");
    if (mc->net.num_adversaries < 1) problems.push_back("num_adversaries must be >= 1");
  }
  attempt([&] {
    c.schedule = schedule_from_json(merged["schedule"]);
    c.schedule.validate();
  });

  c.preset = merged["train"]["preset"].get<std::string>();
  attempt([&] { find_preset(c.preset); });
  const auto pc = merged["eval"]["positive_class"].get<std::string>();
  if (!parse_gender(pc, c.positive_class)) problems.push_back("eval.positive_class must be F or M");

  c.baseline_seed = merged["transfer"]["baseline_seed"].get<std::uint64_t>();
  const auto bn = merged["transfer"]["baseline_n"].get<long long>();
  if (bn < 1) problems.push_back("transfer.baseline_n must be >= 1");
  c.baseline_n = static_cast<std::size_t>(std::max(1LL, bn));

  const json& an = merged["analysis"];
  const auto top_n = an["top_n"].get<long long>();
  if (top_n < 1) problems.push_back("analysis.top_n must be >= 1");
  c.analysis.top_n = static_cast<std::size_t>(std::max(1LL, top_n));
  c.analysis.threshold = an["threshold"].get<double>();
  c.analysis.samples = an["samples"].get<int>();
  c.analysis.seed = an["seed"].get<std::uint64_t>();
  c.analysis.post_threshold = an["post_threshold"].get<double>();
  c.analysis.comment_threshold = an["comment_threshold"].get<double>();
  c.analysis.language_filter = an["language_filter"].get<bool>();
  c.analysis.language_min_fraction = an["language_min_fraction"].get<double>();
  for (const auto& [name, v] : {std::pair{"analysis.threshold", c.analysis.threshold},
                                {"analysis.post_threshold", c.analysis.post_threshold},
                                {"analysis.comment_threshold", c.analysis.comment_threshold},
                                {"analysis.language_min_fraction", c.analysis.language_min_fraction}})
    if (!(v >= 0.0 && v <= 1.0)) problems.push_back(std::string(name) + " must be in [0,1]");
  if (c.analysis.samples < 1) problems.push_back("analysis.samples must be >= 1");

  attempt([&] {
    c.synth = synth_spec_from_json(merged["synth"]);
    c.synth.validate();
  });
  const json& st = merged["synth_tagged"];
  c.synth_tagged.n = st["n"].get<std::size_t>();
  c.synth_tagged.gender_rate = st["gender_rate"].get<double>();
  c.synth_tagged.marker_prob = st["marker_prob"].get<double>();
  c.synth_tagged.noise_prob = st["noise_prob"].get<double>();
  c.synth_tagged.length = st["length"].get<int>();
  c.synth_tagged.base_vocab = st["base_vocab"].get<int>();
  c.synth_tagged.marker = st["marker"].get<std::string>();
  c.synth_tagged.seed = st["seed"].get<std::uint64_t>();
  for (double p : {c.synth_tagged.gender_rate, c.synth_tagged.marker_prob, c.synth_tagged.noise_prob})
    if (!(p >= 0.0 && p <= 1.0)) problems.push_back("synth_tagged probabilities must be in [0,1]");
  if (c.synth_tagged.n < 1 || c.synth_tagged.length < 1 || c.synth_tagged.base_vocab < 1)
    problems.push_back("synth_tagged counts must be >= 1");

  if (!problems.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw ConfigError(msg);
  }
  return c;
}

struct ConfigSources {
  std::vector<std::filesystem::path> files;  // merged in order
  std::vector<std::string> overrides;        // key.path=value, applied last
  std::optional<std::filesystem::path> output_flag;
};

// Output root precedence: explicit flag, then BIASSCOPE_OUT, then the config.
inline PipelineConfig load_pipeline_config(const ConfigSources& src) {
  json raw = json::object();
  for (const auto& f : src.files) {
    std::ifstream in(f);
    if (!in) throw ConfigError("cannot open config file " + f.string());
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw ConfigError("config file is not a JSON object: " + f.string());
    raw.merge_patch(j);
  }
  for (const auto& o : src.overrides) detail::apply_override(raw, o);
  if (src.output_flag) {
    raw["paths"]["output"] = src.output_flag->string();
  } else if (const char* env = std::getenv("BIASSCOPE_OUT"); env && *env) {
    raw["paths"]["output"] = std::string(env);
  }
  return make_pipeline_config(std::move(raw));
}

// ---------------------------------------------------------------------------
// Provenance
// ---------------------------------------------------------------------------

// Collects inputs, outputs and seeds of one stage run and writes them as
// <dir>/provenance_<stage>.json. No timestamps, so reruns are byte-identical.
class StageRecord {
 public:
  StageRecord(const PipelineConfig& cfg, std::string stage, std::filesystem::path root, std::filesystem::path dir)
      : cfg_(cfg), stage_(std::move(stage)), root_(std::move(root)), dir_(std::move(dir)) {}

  void input(const std::filesystem::path& p) { inputs_[display(p)] = file_sha256(p); }
  void seed(const std::string& name, std::uint64_t v) { seeds_[name] = v; }
  void note(const std::string& key, json v) { notes_[key] = std::move(v); }

  void output(const std::filesystem::path& p, const std::string& content) {
    write_atomic(p, content);
    outputs_[display(p)] = sha256_hex(content);
  }
  void output(const std::filesystem::path& p, const json& j) { output(p, j.dump(2) + "\n"); }

  void finish() {
    std::string tag = stage_;
    std::replace(tag.begin(), tag.end(), '-', '_');
    json j{{"stage", stage_},
           {"config_sha256", cfg_.hash()},
           {"config", cfg_.raw},
           {"seeds", seeds_},
           {"inputs", inputs_},
           {"outputs", outputs_}};
    if (!notes_.empty()) j["notes"] = notes_;
    j["config"]["paths"].erase("output");
    write_atomic(dir_ / ("provenance_" + tag + ".json"), j.dump(2) + "\n");
  }

 private:
  std::string display(const std::filesystem::path& p) const {
    const auto rel = std::filesystem::relative(p, root_);
    if (!rel.empty() && rel.native().rfind("..", 0) != 0) return rel.generic_string();
    return p.generic_string();
  }

  const PipelineConfig& cfg_;
  std::string stage_;
  std::filesystem::path root_, dir_;
  json seeds_ = json::object(), inputs_ = json::object(), outputs_ = json::object(), notes_ = json::object();
};

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

struct StageOptions {
  std::optional<std::string> preset;          // overrides train.preset
  std::optional<Gender> positive_class;       // overrides eval.positive_class
};

class Pipeline {
 public:
  explicit Pipeline(PipelineConfig cfg) : cfg_(std::move(cfg)), root_(cfg_.output) {}

  const PipelineConfig& config() const { return cfg_; }
  const std::filesystem::path& root() const { return root_; }

  // Runs one stage under the output-directory lock.
  void run(const std::string& stage, const StageOptions& opts = {}) {
    if (std::find(stage_names().begin(), stage_names().end(), stage) == stage_names().end())
      throw ConfigError("unknown subcommand '" + stage + "'");
    const Preset& preset = find_preset(opts.preset.value_or(cfg_.preset));
    const Gender positive = opts.positive_class.value_or(cfg_.positive_class);
    DirLock lock(root_);
    if (stage == "synth") synth();
    else if (stage == "ingest") ingest();
    else if (stage == "split") split();
    else if (stage == "preprocess") preprocess();
    else if (stage == "match") match();
    else if (stage == "train") train(preset);
    else if (stage == "predict") predict(preset);
    else if (stage == "eval") eval(preset, positive);
    else if (stage == "transfer-eval") transfer_eval_stage(preset);
    else if (stage == "analyze") analyze(preset);
    else report();
  }

  // ----- artifact locations -------------------------------------------------

  std::filesystem::path dir(const std::string& name) const { return root_ / name; }
  std::filesystem::path model_dir(const Preset& p) const { return root_ / "models" / p.name; }
  std::filesystem::path analysis_dir(const Preset& p) const { return root_ / "analysis" / p.name; }

 private:
  // Throws a PrerequisiteError naming the stage that produces `p`.
  void require(const std::filesystem::path& p, const std::string& stage) const {
    if (!std::filesystem::exists(p))
      throw PrerequisiteError(stage, "missing " + p.string() + "; run the '" + stage + "' subcommand first");
  }

  Corpus load_corpus_dir(const std::filesystem::path& d, const std::string& stage, StageRecord* rec) const {
    for (const char* f : {"authors.jsonl", "posts.jsonl", "comments.jsonl"}) {
      require(d / f, stage);
      if (rec) rec->input(d / f);
    }
    return read_corpus_dir(d);
  }

  static void corpus_files(const Corpus& c, const std::filesystem::path& d, StageRecord& rec) {
    std::ostringstream a, p, m;
    write_corpus_jsonl(c, a, p, m);
    rec.output(d / "authors.jsonl", a.str());
    rec.output(d / "posts.jsonl", p.str());
    rec.output(d / "comments.jsonl", m.str());
  }

  static std::string polarity_tsv(const std::vector<PolarWord>& ranked) {
    std::ostringstream o;
    o << "word\tscore_F\tlog_odds_F\tcount\n" << std::setprecision(17);
    for (const auto& w : ranked) o << w.word << '\t' << w.score << '\t' << w.log_odds << '\t' << w.count << '\n';
    return o.str();
  }

  SubstitutionLexicon lexicon() const { return SubstitutionLexicon::load(cfg_.substitutions.string()); }

  // ----- stages ---------------------------------------------------------------

  void synth() {
    const auto d = dir("synth");
    StageRecord rec(cfg_, "synth", root_, d);
    rec.seed("synth.seed", cfg_.synth.seed);
    rec.seed("synth_tagged.seed", cfg_.synth_tagged.seed);
    const auto corpus = generate(cfg_.synth);
    std::ostringstream rows;
    corpus.write_rows(rows);
    rec.output(d / "corpus.tsv", rows.str());
    rec.output(d / "manifest.json", json{{"spec", to_json(cfg_.synth)}, {"truth", corpus.truth.to_json()}});
    std::ostringstream tagged;
    tagged << "post_id\ttag\ttext\n";
    for (const auto& p : generate_tagged(cfg_.synth_tagged)) {
      tagged << p.post_id << '\t' << (p.tag == PostTag::Gender ? "gender" : "other") << '\t';
      for (std::size_t i = 0; i < p.tokens.size(); ++i) tagged << (i ? " " : "") << p.tokens[i];
      tagged << '\n';
    }
    rec.output(d / "tagged.tsv", tagged.str());
    rec.finish();
  }

  void ingest() {
    const auto d = dir("corpus");
    StageRecord rec(cfg_, "ingest", root_, d);
    std::filesystem::path input = cfg_.corpus;
    if (input.empty()) {
      input = dir("synth") / "corpus.tsv";
      require(input, "synth");
    } else if (!std::filesystem::exists(input)) {
      throw DataError("corpus file not found: " + input.string());
    }
    rec.input(input);
    auto result = ingest_corpus_file(input.string(), cfg_.ingest);
    if (result.corpus.comments().empty()) throw DataError("ingest kept no rows from " + input.string());
    corpus_files(result.corpus, d, rec);
    rec.output(d / "ingest_report.json", result.report.to_json());
    rec.finish();
  }

  void split() {
    const auto d = dir("split");
    StageRecord rec(cfg_, "split", root_, d);
    rec.seed("split.seed", cfg_.split_seed);
    const Corpus corpus = load_corpus_dir(dir("corpus"), "ingest", &rec);
    const auto assignment = assign_authors(corpus, cfg_.ratios, cfg_.split_seed);
    std::ostringstream o;
    o << "author_id\tsplit\n";
    for (const auto& a : corpus.authors()) {
      const auto s = std::string(to_string(assignment.at(a.id)));
      o << a.id << '\t' << s << '\n';
    }
    const auto sp = materialize_split(corpus, assignment);
    json summary;
    for (const auto& [name, part] : {std::pair<const char*, const Corpus*>{"train", &sp.train}, {"dev", &sp.dev},
                                     {"test", &sp.test}}) {
      std::size_t f = 0;
      for (const auto& c : part->comments()) f += part->gender_of(c) == Gender::F;
      summary[name] = {{"authors", part->authors().size()},
                       {"posts", part->posts().size()},
                       {"comments", part->comments().size()},
                       {"comments_F", f}};
    }
    summary["authors_disjoint"] = authors_disjoint(sp);
    rec.output(d / "assignment.tsv", o.str());
    rec.output(d / "summary.json", summary);
    rec.finish();
  }

  std::map<std::string, SplitName> read_assignment(StageRecord* rec) const {
    const auto p = dir("split") / "assignment.tsv";
    require(p, "split");
    if (rec) rec->input(p);
    std::ifstream in(p);
    std::string line;
    std::getline(in, line);  // header
    std::map<std::string, SplitName> out;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      const auto s = line.substr(tab + 1);
      out[line.substr(0, tab)] = s == "train" ? SplitName::Train : s == "dev" ? SplitName::Dev : SplitName::Test;
    }
    return out;
  }

  void preprocess() {
    const auto d = dir("preprocessed");
    StageRecord rec(cfg_, "preprocess", root_, d);
    Corpus corpus = load_corpus_dir(dir("corpus"), "ingest", &rec);
    const auto assignment = read_assignment(&rec);
    rec.input(cfg_.substitutions);
    substitute_corpus(corpus, lexicon());
    const std::size_t before = corpus.comments().size();
    filter_short(corpus, cfg_.min_tokens);
    const auto sp = materialize_split(corpus, assignment);
    corpus_files(sp.train, d / "train", rec);
    corpus_files(sp.dev, d / "dev", rec);
    corpus_files(sp.test, d / "test", rec);
    rec.output(d / "post_polarity.tsv", polarity_tsv(diagnose_post_polarity(sp.train, nullptr, cfg_.polarity_prior, cfg_.polarity_scale)));
    rec.note("comments_before_filter", before);
    rec.note("comments_after_filter", corpus.comments().size());
    rec.finish();
  }

  void match() {
    const auto d = dir("match");
    StageRecord rec(cfg_, "match", root_, d);
    rec.seed("propensity.seed", cfg_.propensity.seed);
    rec.seed("propensity.model.seed", cfg_.propensity.model.net.seed);
    rec.seed("match.seed", cfg_.match.seed);
    rec.seed("match.balance_seed", cfg_.balance_seed);
    const Corpus train = load_corpus_dir(dir("preprocessed") / "train", "preprocess", &rec);
    const Corpus dev = load_corpus_dir(dir("preprocessed") / "dev", "preprocess", &rec);

    const auto model = train_propensity_model(train, dev, cfg_.propensity);
    std::ostringstream ck;
    model.save(ck);
    rec.output(d / "propensity.ckpt", ck.str());

    const auto scores = score_posts(model, train);
    std::ostringstream so;
    write_scores(so, scores);
    rec.output(d / "scores.tsv", so.str());

    const auto result = match_posts(train, scores, cfg_.match);
    const auto set = balance_comments(result.pairs, train, cfg_.balance_seed);
    std::ostringstream po, co;
    write_pairs(po, set.pairs);
    for (const auto& id : set.comment_ids) co << id << '\n';
    rec.output(d / "pairs.tsv", po.str());
    rec.output(d / "comments.txt", co.str());

    std::vector<std::string> matched_posts;
    for (const auto& p : set.pairs) {
      matched_posts.push_back(p.post_f);
      matched_posts.push_back(p.post_m);
    }
    const auto before = diagnose_post_polarity(train, nullptr, cfg_.polarity_prior, cfg_.polarity_scale);
    json summary{{"caliper", result.caliper},
                 {"query_posts_discarded", result.discarded.size()},
                 {"pairs_matched", result.pairs.size()},
                 {"pairs_kept", set.pairs.size()},
                 {"comments_F", set.f_comments},
                 {"comments_M", set.m_comments},
                 {"train_comments_before", train.comments().size()},
                 {"propensity_best_dev_accuracy", model.best_dev_accuracy()},
                 {"max_abs_post_polarity_before", max_abs_polarity(before)},
                 {"empty", set.pairs.empty()}};
    if (!set.pairs.empty()) {
      const auto after = diagnose_post_polarity(train, &matched_posts, cfg_.polarity_prior, cfg_.polarity_scale);
      summary["max_abs_post_polarity_after"] = max_abs_polarity(after);
      rec.output(d / "post_polarity_after.tsv", polarity_tsv(after));
    } else {
      summary["max_abs_post_polarity_after"] = nullptr;
      rec.output(d / "post_polarity_after.tsv", std::string("word\tscore_F\tlog_odds_F\tcount\n"));
    }
    summary["audit_problems"] = audit_matching(set, train, result.caliper);
    rec.output(d / "summary.json", summary);
    rec.finish();
  }

  // Training corpus for a preset: all training comments, or the matched ones.
  Corpus training_corpus(const Preset& preset, StageRecord* rec) const {
    Corpus train = load_corpus_dir(dir("preprocessed") / "train", "preprocess", rec);
    if (!preset.matched) return train;
    const auto list = dir("match") / "comments.txt";
    require(list, "match");
    if (rec) rec->input(list);
    std::ifstream in(list);
    std::unordered_set<std::string> keep;
    for (std::string id; std::getline(in, id);)
      if (!id.empty()) keep.insert(id);
    if (keep.empty()) throw DataError("the matched training set is empty; relax the caliper and rerun 'match'");
    train.retain_comments([&](const Comment& c) { return keep.count(c.id) > 0; });
    return train;
  }

  void train(const Preset& preset) {
    const auto d = model_dir(preset);
    StageRecord rec(cfg_, "train", root_, d);
    rec.note("preset", preset.name);
    const Corpus train = training_corpus(preset, &rec);
    const Corpus dev = load_corpus_dir(dir("preprocessed") / "dev", "preprocess", &rec);
    TrainSchedule sched = cfg_.schedule;
    sched.demotion = preset.demotion;
    rec.seed("schedule.seed", sched.seed);
    rec.seed("model.seed", cfg_.model.net.seed);

    std::optional<ConfoundModel> confounds;
    std::vector<ConfoundVector> vectors;
    if (preset.demotion) {
      confounds = fit_confound_model(train, cfg_.confound);
      vectors = build_confound_vectors(train, *confounds);
      std::ostringstream vo, lo;
      write_confound_vectors(vo, confounds->authors(), vectors);
      confounds->table().write(lo);
      rec.output(d / "confound_vectors.txt", vo.str());
      rec.output(d / "author_log_odds.tsv", lo.str());
      rec.note("confound_dim", confounds->dim());
    }
    const auto model = train_bias_model(train, preset.demotion ? &vectors : nullptr,
                                        confounds ? confounds->authors() : std::vector<std::string>{}, dev,
                                        cfg_.model, sched);
    std::ostringstream ck;
    model.save(ck);
    rec.output(d / "model.ckpt", ck.str());
    json log = json::array();
    for (const auto& e : model.log().epochs)
      log.push_back({{"phase", e.phase},
                     {"cycle", e.cycle},
                     {"epoch", e.epoch},
                     {"loss", e.loss},
                     {"dev_accuracy", std::isnan(e.dev_accuracy) ? json(nullptr) : json(e.dev_accuracy)}});
    rec.output(d / "train_log.json", json{{"preset", preset.name},
                                          {"train_comments", train.comments().size()},
                                          {"best_epoch_index", model.log().best_epoch_index},
                                          {"best_dev_accuracy", model.log().best_dev_accuracy},
                                          {"epochs", log}});
    rec.finish();
  }

  BiasModel load_model(const Preset& preset, StageRecord* rec) const {
    const auto p = model_dir(preset) / "model.ckpt";
    require(p, "train");
    if (rec) rec->input(p);
    return BiasModel::load(p.string());
  }

  void predict(const Preset& preset) {
    const auto d = model_dir(preset);
    StageRecord rec(cfg_, "predict", root_, d);
    rec.note("preset", preset.name);
    const auto model = load_model(preset, &rec);
    const Corpus test = load_corpus_dir(dir("preprocessed") / "test", "preprocess", &rec);
    std::ostringstream o;
    o << "comment_id\tscore\n" << std::setprecision(17);
    for (const auto& c : test.comments()) o << c.id << '\t' << model.predict(c.subst_tokens).score << '\n';
    rec.output(d / "predictions_test.tsv", o.str());
    rec.finish();
  }

  void eval(const Preset& preset, Gender positive) {
    const auto d = model_dir(preset);
    StageRecord rec(cfg_, "eval", root_, d);
    rec.note("preset", preset.name);
    const auto preds_path = d / "predictions_test.tsv";
    require(preds_path, "predict");
    rec.input(preds_path);
    const Corpus test = load_corpus_dir(dir("preprocessed") / "test", "preprocess", &rec);
    std::unordered_map<std::string, Gender> gold;
    for (const auto& c : test.comments()) gold[c.id] = test.gender_of(c);
    std::vector<Gender> p, g;
    std::ifstream in(preds_path);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      const auto it = gold.find(line.substr(0, tab));
      if (it == gold.end()) throw DataError("prediction for unknown test comment " + line.substr(0, tab));
      p.push_back(Prediction{{}, {}, std::stod(line.substr(tab + 1))}.label());
      g.push_back(it->second);
    }
    const auto report = evaluate(p, g, positive);
    json j = report.to_json();
    j["preset"] = preset.name;
    rec.output(d / "metrics_test.json", j);
    std::ostringstream t;
    const std::vector<NamedReport> rows{{preset.row, report}};
    write_report_table(t, rows, "Held-out test (positive class " + std::string(to_string(positive)) + ")");
    rec.output(d / "metrics_test.txt", t.str());
    rec.finish();
  }

  void transfer_eval_stage(const Preset& preset) {
    const auto d = model_dir(preset);
    StageRecord rec(cfg_, "transfer-eval", root_, d);
    rec.note("preset", preset.name);
    rec.seed("transfer.baseline_seed", cfg_.baseline_seed);
    const auto model = load_model(preset, &rec);
    std::filesystem::path tagged_path = cfg_.tagged_posts;
    if (tagged_path.empty()) {
      tagged_path = dir("synth") / "tagged.tsv";
      require(tagged_path, "synth");
    } else if (!std::filesystem::exists(tagged_path)) {
      throw DataError("tagged post file not found: " + tagged_path.string());
    }
    rec.input(tagged_path);
    rec.input(cfg_.substitutions);
    std::ifstream in(tagged_path);
    const auto lex = lexicon();
    const auto posts = read_tagged_posts(in, &lex);
    if (posts.empty()) throw DataError("no tagged posts in " + tagged_path.string());
    const auto report = transfer_eval(model, std::span<const TaggedPost>(posts));
    std::size_t tagged = 0;
    for (const auto& p : posts) tagged += p.tag == PostTag::Gender;
    const double rate = static_cast<double>(tagged) / static_cast<double>(posts.size());
    json baselines;
    for (const auto& [name, kind] :
         {std::pair{"uniform", BaselineKind::Uniform}, std::pair{"class_prior", BaselineKind::ClassPrior}}) {
      const auto b = random_baseline(kind, rate, cfg_.baseline_n, cfg_.baseline_seed);
      json bj = b.to_json();
      bj["expected_accuracy"] = expected_baseline_accuracy(kind, rate);
      bj["n"] = cfg_.baseline_n;
      baselines[name] = bj;
    }
    rec.output(d / "transfer_metrics.json",
               json{{"preset", preset.name}, {"posts", posts.size()}, {"gender_tagged_rate", rate},
                    {"model", report.to_json()}, {"baselines", baselines}});
    rec.finish();
  }

  void analyze(const Preset& preset) {
    const auto d = analysis_dir(preset);
    StageRecord rec(cfg_, "analyze", root_, d);
    rec.note("preset", preset.name);
    rec.seed("analysis.seed", cfg_.analysis.seed);
    const auto model = load_model(preset, &rec);
    const auto prop_path = dir("match") / "propensity.ckpt";
    require(prop_path, "match");
    rec.input(prop_path);
    const auto propensity = PropensityModel::load(prop_path.string());
    const Corpus test = load_corpus_dir(dir("preprocessed") / "test", "preprocess", &rec);

    const auto items = comment_items(test);
    const auto top = top_confident(model, std::span<const TextItem>(items), cfg_.analysis.top_n, Gender::F);
    std::ostringstream to;
    to << "comment_id\tscore\ttext\n" << std::setprecision(17);
    std::unordered_map<std::string, const Comment*> by_id;
    for (const auto& c : test.comments()) by_id[c.id] = &c;
    std::vector<TextItem> top_items;
    for (const auto& s : top.items) {
      const auto& toks = by_id.at(s.id)->subst_tokens;
      to << s.id << '\t' << s.score << '\t';
      for (std::size_t i = 0; i < toks.size(); ++i) to << (i ? " " : "") << toks[i];
      to << '\n';
      top_items.push_back({s.id, toks});
    }
    rec.output(d / "top_confident.tsv", to.str());
    rec.note("top_confident_truncated", top.truncated_input);

    const auto masking = masking_influence(model, std::span<const TextItem>(top_items), "top_confident_test");
    std::ostringstream mo;
    mo << "word\tmean_delta\tcount\n" << std::setprecision(17);
    for (const auto& w : masking.words) mo << w.word << '\t' << w.mean_delta << '\t' << w.count << '\n';
    rec.output(d / "masking.tsv", mo.str());

    json diff_json;
    std::optional<LanguageFilter> filter;
    if (cfg_.analysis.language_filter) {
      rec.input(cfg_.english_words);
      filter = LanguageFilter::load(cfg_.english_words.string(), cfg_.analysis.language_min_fraction);
    }
    try {
      const auto lexicons = CategoryLexicon::load_dir(cfg_.lexicons);
      const auto labeled = labeled_comments(test);
      DifferentialOptions dopt{cfg_.analysis.threshold, cfg_.analysis.samples, cfg_.analysis.seed,
                               filter ? &*filter : nullptr};
      const auto diff = lexicon_differential(model, std::span<const LabeledText>(labeled),
                                             std::span<const CategoryLexicon>(lexicons), dopt);
      diff_json = {{"threshold", cfg_.analysis.threshold}, {"high", diff.high}, {"comparison", diff.comparison},
                   {"diff", diff.diff}, {"high_size", diff.high_size}, {"comparison_size", diff.comparison_size},
                   {"top_category", diff.top_category()}};
    } catch (const DataError& e) {
      diff_json = {{"threshold", cfg_.analysis.threshold}, {"error", e.what()}};
    }
    rec.output(d / "lexicon_differential.json", diff_json);

    const auto surfaced = surface_examples(propensity, model, test, cfg_.analysis.post_threshold,
                                           cfg_.analysis.comment_threshold);
    std::ostringstream so;
    so << "post_id\tcomment_id\tpost_score\tcomment_score\n" << std::setprecision(17);
    for (const auto& s : surfaced)
      so << s.post_id << '\t' << s.comment_id << '\t' << s.post_score << '\t' << s.comment_score << '\n';
    rec.output(d / "surfaced.tsv", so.str());
    rec.finish();
  }

  static std::vector<Bar> read_polarity_bars(const std::filesystem::path& p, std::size_t k) {
    std::vector<Bar> bars;
    std::ifstream in(p);
    std::string line;
    std::getline(in, line);
    while (bars.size() < k && std::getline(in, line)) {
      const auto tab = line.find('\t');
      if (tab == std::string::npos) continue;
      bars.push_back({line.substr(0, tab), std::stod(line.substr(tab + 1))});
    }
    return bars;
  }

  void report() {
    const auto d = dir("report");
    StageRecord rec(cfg_, "report", root_, d);
    std::ostringstream md;
    md << "# Results\n\n";
    std::vector<NamedReport> rows;
    for (const auto& p : presets()) {
      const auto f = model_dir(p) / "metrics_test.json";
      if (!std::filesystem::exists(f)) continue;
      rec.input(f);
      const json j = json::parse(read_file(f));
      EvalReport r;
      r.precision = j["precision"];
      r.recall = j["recall"];
      r.f1 = j["f1"];
      r.accuracy = j["accuracy"];
      r.precision_undefined = j["precision_undefined"];
      r.recall_undefined = j["recall_undefined"];
      rows.push_back({p.row, r});
    }
    if (rows.empty())
      throw PrerequisiteError("eval", "no evaluated models under " + (root_ / "models").string() +
                                          "; run 'train', 'predict' and 'eval' first");
    md << "## Held-out test\n\n```\n";
    write_report_table(md, rows);
    md << "```\n\n";

    std::vector<NamedReport> transfer;
    for (const auto& p : presets()) {
      const auto f = model_dir(p) / "transfer_metrics.json";
      if (!std::filesystem::exists(f)) continue;
      rec.input(f);
      const json j = json::parse(read_file(f));
      const auto to_report = [](const json& m) {
        EvalReport r;
        r.precision = m["precision"];
        r.recall = m["recall"];
        r.f1 = m["f1"];
        r.accuracy = m["accuracy"];
        return r;
      };
      if (transfer.empty()) {
        transfer.push_back({"random (uniform)", to_report(j["baselines"]["uniform"])});
        transfer.push_back({"random (class prior)", to_report(j["baselines"]["class_prior"])});
      }
      transfer.push_back({p.row, to_report(j["model"])});
    }
    if (!transfer.empty()) {
      md << "## Transfer to gender-tagged posts\n\n```\n";
      write_report_table(md, transfer);
      md << "```\n\n";
    }

    const auto before = dir("preprocessed") / "post_polarity.tsv";
    const auto after = dir("match") / "post_polarity_after.tsv";
    if (std::filesystem::exists(before) && std::filesystem::exists(after)) {
      rec.input(before);
      rec.input(after);
      std::ostringstream svg;
      write_bar_chart_svg(svg, "Post-text log-odds (F positive)",
                          {{"all training posts", read_polarity_bars(before, cfg_.polarity_top_k)},
                           {"matched posts", read_polarity_bars(after, cfg_.polarity_top_k)}});
      rec.output(d / "post_polarity.svg", svg.str());
      md << "## Post polarity\n\n![post polarity](post_polarity.svg)\n\n";
    }
    for (const auto& p : presets()) {
      const auto f = analysis_dir(p) / "lexicon_differential.json";
      if (!std::filesystem::exists(f)) continue;
      rec.input(f);
      const json j = json::parse(read_file(f));
      if (!j.contains("diff")) {
        md << "## Lexicon differential (" << p.row << ")\n\n" << j.value("error", std::string("unavailable")) << "\n\n";
        continue;
      }
      std::vector<Bar> bars;
      for (const auto& [k, v] : j["diff"].items()) bars.push_back({k, v.get<double>()});
      std::ostringstream svg;
      write_bar_chart_svg(svg, "Lexicon differential, " + p.row, {{"high-confidence minus random F", bars}});
      const std::string name = "lexicon_" + p.name + ".svg";
      rec.output(d / name, svg.str());
      md << "## Lexicon differential (" << p.row << ")\n\n![lexicon](" << name << ")\n\n";
    }
    rec.output(d / "tables.md", md.str());
    rec.finish();
  }

  PipelineConfig cfg_;
  std::filesystem::path root_;
};

}  // namespace biasscope
