// biasscope: command-line front end for the detection pipeline.
//
//   biasscope <subcommand> [--config FILE]... [--set key.path=value]...
//             [--out DIR] [--preset NAME] [--positive-class F|M]
//
// Exit codes: 0 ok, 1 other failure, 2 configuration error, 3 missing
// prerequisite stage, 4 data error.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "biasscope/pipeline.hpp"

namespace {

struct Args {
  std::vector<std::string> configs;
  std::vector<std::string> overrides;
  std::string out;
  std::string preset;
  std::string positive;
};

void add_common(CLI::App* sub, Args& a) {
  sub->add_option("-c,--config", a.configs, "JSON config file; repeat to merge in order")->check(CLI::ExistingFile);
  sub->add_option("--set", a.overrides, "override a config field, e.g. --set schedule.learning_rate=0.001");
  sub->add_option("-o,--out", a.out, "output root (beats BIASSCOPE_OUT and paths.output)");
}

biasscope::ConfigSources sources(const Args& a) {
  biasscope::ConfigSources src;
  for (const auto& c : a.configs) src.files.emplace_back(c);
  src.overrides = a.overrides;
  if (!a.out.empty()) src.output_flag = a.out;
  return src;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised detection of gender-directed comment bias"};
  app.require_subcommand(1);
  Args args;

  const std::map<std::string, std::string> help{
      {"synth", "generate a synthetic corpus, manifest and tagged posts"},
      {"ingest", "read the raw corpus into canonical files"},
      {"split", "assign authors to train/dev/test"},
      {"preprocess", "substitute overt terms, drop short comments, materialize splits"},
      {"match", "train the propensity model and match training posts"},
      {"train", "train a bias model for a preset"},
      {"predict", "score held-out test comments"},
      {"eval", "precision/recall/F1/accuracy on the test split"},
      {"transfer-eval", "zero-shot evaluation on gender-tagged posts"},
      {"analyze", "top comments, masking influence, lexicon differential, surfaced examples"},
      {"report", "tables and SVG figures from stored artifacts"}};

  std::string chosen;
  for (const auto& name : biasscope::stage_names()) {
    auto* sub = app.add_subcommand(name, help.at(name));
    add_common(sub, args);
    sub->add_option("-p,--preset", args.preset, "base | demotion | match | match_demotion");
    sub->add_option("--positive-class", args.positive, "class treated as positive in metrics (F or M)");
    sub->callback([&chosen, name] { chosen = name; });
  }
  auto* show = app.add_subcommand("show-config", "print the merged, validated configuration");
  add_common(show, args);
  show->callback([&chosen] { chosen = "show-config"; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const auto cfg = biasscope::load_pipeline_config(sources(args));
    if (chosen == "show-config") {
      std::cout << cfg.raw.dump(2) << '\n';
      return 0;
    }
    biasscope::StageOptions opts;
    if (!args.preset.empty()) {
      biasscope::find_preset(args.preset);
      opts.preset = args.preset;
    }
    if (!args.positive.empty()) {
      biasscope::Gender g;
      if (!biasscope::parse_gender(args.positive, g)) throw biasscope::ConfigError("--positive-class must be F or M");
      opts.positive_class = g;
    }
    biasscope::Pipeline pipeline(cfg);
    pipeline.run(chosen, opts);
    std::cerr << chosen << ": done (" << pipeline.root().string() << ")\n";
    return 0;
  } catch (const biasscope::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const biasscope::PrerequisiteError& e) {
    std::cerr << "missing prerequisite (" << e.stage << "): " << e.what() << '\n';
    return 3;
  } catch (const biasscope::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
