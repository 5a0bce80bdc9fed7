#pragma once

// The gender-of-addressee classifier trained with latent-confound demotion.
//
// Training alternates two phases per cycle:
//   classifier phase: minimize CE + KL(adv(h) || U) over encoder+classifier,
//                     adversaries frozen;
//   adversary phase:  minimize CE(t, adv(h)) over the adversaries, encoder
//                     frozen.
// Without demotion the model is trained with plain CE for base_epochs.
// The kept checkpoint is the one with the best dev gender accuracy.

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "biasscope/common.hpp"
#include "biasscope/corpus.hpp"
#include "biasscope/lexstats.hpp"
#include "biasscope/nn/checkpoint.hpp"
#include "biasscope/nn/classifier.hpp"
#include "biasscope/nn/tensor.hpp"
#include "biasscope/nn/vocab.hpp"

namespace biasscope {

struct ModelConfig {
  nn::ClassifierConfig net;
  std::size_t vocab_min_count = 1;
};

struct TrainSchedule {
  bool demotion = true;
  int base_epochs = 5;
  int classifier_epochs = 3;
  int adversary_epochs = 10;
  int cycles = 3;
  double learning_rate = 1e-4;
  double adversary_learning_rate = 0.0;  // 0: same as learning_rate
  int batch_size = 64;
  std::uint64_t seed = 1;

  void validate() const {
    std::vector<std::string> bad;
    if (base_epochs < 1) bad.push_back("base_epochs must be >= 1");
    if (classifier_epochs < 1) bad.push_back("classifier_epochs must be >= 1");
    if (adversary_epochs < 1) bad.push_back("adversary_epochs must be >= 1");
    if (cycles < 1) bad.push_back("cycles must be >= 1");
    if (batch_size < 1) bad.push_back("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) bad.push_back("learning_rate must be positive");
    if (!(adversary_learning_rate >= 0.0)) bad.push_back("adversary_learning_rate must be >= 0");
    if (!bad.empty()) {
      std::string msg = "invalid training schedule:";
      for (const auto& b : bad) msg += " " + b + ";";
      throw ConfigError(msg);
    }
  }
};

struct EpochRecord {
  std::string phase;  // "base", "classifier", "adversary"
  int cycle = 0;
  int epoch = 0;
  double loss = 0.0;
  double dev_accuracy = std::numeric_limits<double>::quiet_NaN();
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  double best_dev_accuracy = std::numeric_limits<double>::quiet_NaN();
  std::size_t best_epoch_index = 0;  // index into epochs
};

struct Prediction {
  std::string comment_id;
  std::array<double, 2> distribution{0.5, 0.5};  // [M, F]
  double score = 0.5;                            // P(F)
  Gender label() const { return score > 0.5 ? Gender::F : Gender::M; }  // ties -> M
};

// ---------------------------------------------------------------------------
// JSON helpers for configs
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"encoder", nn::to_string(c.net.encoder.kind)},
          {"embedding_dim", c.net.encoder.embedding_dim},
          {"hidden_dim", c.net.encoder.hidden_dim},
          {"classifier_hidden", c.net.classifier_hidden},
          {"adversary_hidden", c.net.adversary_hidden},
          {"num_adversaries", c.net.num_adversaries},
          {"confound_dim", c.net.confound_dim},
          {"init_scale", c.net.init_scale},
          {"seed", c.net.seed},
          {"vocab_min_count", c.vocab_min_count}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c = {}) {
  if (j.contains("encoder")) c.net.encoder.kind = nn::parse_encoder_kind(j["encoder"].get<std::string>());
  c.net.encoder.embedding_dim = j.value("embedding_dim", c.net.encoder.embedding_dim);
  c.net.encoder.hidden_dim = j.value("hidden_dim", c.net.encoder.hidden_dim);
  c.net.classifier_hidden = j.value("classifier_hidden", c.net.classifier_hidden);
  c.net.adversary_hidden = j.value("adversary_hidden", c.net.adversary_hidden);
  c.net.num_adversaries = j.value("num_adversaries", c.net.num_adversaries);
  c.net.confound_dim = j.value("confound_dim", c.net.confound_dim);
  c.net.init_scale = j.value("init_scale", c.net.init_scale);
  c.net.seed = j.value("seed", c.net.seed);
  c.vocab_min_count = j.value("vocab_min_count", c.vocab_min_count);
  return c;
}

inline nlohmann::json to_json(const TrainSchedule& s) {
  return {{"demotion", s.demotion},   {"base_epochs", s.base_epochs},         {"classifier_epochs", s.classifier_epochs},
          {"adversary_epochs", s.adversary_epochs}, {"cycles", s.cycles}, {"learning_rate", s.learning_rate},
          {"adversary_learning_rate", s.adversary_learning_rate}, {"batch_size", s.batch_size}, {"seed", s.seed}};
}

inline TrainSchedule schedule_from_json(const nlohmann::json& j, TrainSchedule s = {}) {
  s.demotion = j.value("demotion", s.demotion);
  s.base_epochs = j.value("base_epochs", s.base_epochs);
  s.classifier_epochs = j.value("classifier_epochs", s.classifier_epochs);
  s.adversary_epochs = j.value("adversary_epochs", s.adversary_epochs);
  s.cycles = j.value("cycles", s.cycles);
  s.learning_rate = j.value("learning_rate", s.learning_rate);
  s.adversary_learning_rate = j.value("adversary_learning_rate", s.adversary_learning_rate);
  s.batch_size = j.value("batch_size", s.batch_size);
  s.seed = j.value("seed", s.seed);
  return s;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

class BiasModel {
 public:
  BiasModel() = default;
  BiasModel(nn::TextClassifier net, ModelConfig cfg, std::vector<std::string> confound_labels = {})
      : net_(std::move(net)), cfg_(std::move(cfg)), confound_labels_(std::move(confound_labels)) {}

  const nn::TextClassifier& net() const { return net_; }
  nn::TextClassifier& net() { return net_; }
  const ModelConfig& config() const { return cfg_; }
  const std::vector<std::string>& confound_labels() const { return confound_labels_; }
  const TrainSchedule& schedule() const { return schedule_; }
  const TrainLog& log() const { return log_; }
  void set_provenance(TrainSchedule s, TrainLog l) {
    schedule_ = s;
    log_ = std::move(l);
  }

  nn::Vec encode(std::span<const std::string> tokens) const {
    if (tokens.empty()) throw DataError("cannot encode an empty comment");
    return net_.encode(tokens);
  }

  Prediction predict(std::span<const std::string> tokens, std::string comment_id = {}) const {
    if (tokens.empty()) throw DataError("cannot predict on an empty comment");
    const nn::Vec p = net_.gender_probs(tokens);
    Prediction out;
    out.comment_id = std::move(comment_id);
    out.distribution = {p(index_of(Gender::M)), p(index_of(Gender::F))};
    out.score = out.distribution[1];
    return out;
  }

  // Prediction score for class F.
  double score(std::span<const std::string> tokens) const { return predict(tokens).score; }

  void save(std::ostream& out) const {
    nlohmann::json meta{{"kind", "bias_model"},
                        {"config", to_json(cfg_)},
                        {"confound_labels", confound_labels_},
                        {"schedule", to_json(schedule_)},
                        {"best_dev_accuracy", std::isnan(log_.best_dev_accuracy) ? nlohmann::json(nullptr)
                                                                                  : nlohmann::json(log_.best_dev_accuracy)}};
    nn::write_checkpoint(out, meta, net_.vocab().tokens(), net_.named_params());
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write model: " + path);
    save(out);
  }

  static BiasModel load(std::istream& in) {
    auto ck = nn::read_checkpoint(in);
    const auto cfg = model_config_from_json(ck.metadata.at("config"));
    nn::TextClassifier net(nn::Vocab::from_tokens(ck.vocabulary), cfg.net);
    nn::load_tensors(ck, net.all_params());
    BiasModel m(std::move(net), cfg, ck.metadata.value("confound_labels", std::vector<std::string>{}));
    if (ck.metadata.contains("schedule")) m.schedule_ = schedule_from_json(ck.metadata["schedule"]);
    if (ck.metadata.contains("best_dev_accuracy") && !ck.metadata["best_dev_accuracy"].is_null())
      m.log_.best_dev_accuracy = ck.metadata["best_dev_accuracy"].get<double>();
    return m;
  }

  static BiasModel load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open model: " + path);
    return load(in);
  }

 private:
  nn::TextClassifier net_;
  ModelConfig cfg_;
  std::vector<std::string> confound_labels_;
  TrainSchedule schedule_;
  TrainLog log_;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace detail {

inline double accuracy_on(const nn::TextClassifier& net, std::span<const nn::Example> data) {
  if (data.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::size_t correct = 0;
  for (const auto& ex : data) {
    const nn::Vec p = net.gender_probs(ex.ids);
    const int pred = p(index_of(Gender::F)) > 0.5 ? index_of(Gender::F) : index_of(Gender::M);
    correct += pred == ex.label;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

template <typename Fn>
double run_epoch(std::size_t n, int batch_size, std::mt19937_64& rng, Fn&& on_batch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  double loss = 0.0;
  std::size_t batches = 0;
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(n, start + static_cast<std::size_t>(batch_size));
    loss += on_batch(std::span<const std::size_t>(order.data() + start, end - start));
    ++batches;
  }
  return batches ? loss / static_cast<double>(batches) : 0.0;
}

}  // namespace detail

// Trains net in place on pre-encoded examples. Demotion requires every
// training example to carry a confound target and net to have adversaries.
inline TrainLog train_classifier(nn::TextClassifier& net, std::span<const nn::Example> train,
                                 std::span<const nn::Example> dev, const TrainSchedule& sched) {
  sched.validate();
  if (train.empty()) throw DataError("empty training set");
  if (sched.demotion) {
    if (!net.has_adversaries()) throw ConfigError("demotion requires adversary heads (confound_dim > 0)");
    for (const auto& ex : train)
      if (!ex.target) throw DataError("demotion requires a confound vector for every training example");
  }

  std::mt19937_64 rng(sched.seed);
  TrainLog log;
  std::optional<nn::TextClassifier> best;
  auto consider = [&](EpochRecord rec) {
    rec.dev_accuracy = detail::accuracy_on(net, dev);
    log.epochs.push_back(rec);
    const bool no_dev = std::isnan(rec.dev_accuracy);
    if (no_dev || std::isnan(log.best_dev_accuracy) || rec.dev_accuracy >= log.best_dev_accuracy) {
      if (!no_dev) log.best_dev_accuracy = rec.dev_accuracy;
      log.best_epoch_index = log.epochs.size() - 1;
      best = net;
    }
  };

  nn::Adam main_opt({sched.learning_rate});
  const auto main_params = net.main_params();
  std::vector<nn::Example> batch;
  auto main_epoch = [&](bool with_kl) {
    return detail::run_epoch(train.size(), sched.batch_size, rng, [&](std::span<const std::size_t> idx) {
      batch.clear();
      for (auto i : idx) batch.push_back(train[i]);
      auto params = net.all_params();
      nn::zero_grads(params);
      const double l = net.main_loss(batch, with_kl, true);
      main_opt.step(main_params);
      return l;
    });
  };

  if (!sched.demotion) {
    for (int e = 0; e < sched.base_epochs; ++e) consider({"base", 0, e, main_epoch(false)});
  } else {
    nn::Adam adv_opt({sched.adversary_learning_rate > 0.0 ? sched.adversary_learning_rate : sched.learning_rate});
    const auto adv_params = net.adversary_params();
    for (int c = 0; c < sched.cycles; ++c) {
      for (int e = 0; e < sched.classifier_epochs; ++e) consider({"classifier", c, e, main_epoch(true)});

      std::vector<nn::Vec> hidden;
      std::vector<const std::vector<double>*> targets;
      hidden.reserve(train.size());
      for (const auto& ex : train) {
        hidden.push_back(net.encode(ex.ids));
        targets.push_back(ex.target);
      }
      std::vector<nn::Vec> hb;
      std::vector<const std::vector<double>*> tb;
      for (int e = 0; e < sched.adversary_epochs; ++e) {
        const double l = detail::run_epoch(train.size(), sched.batch_size, rng, [&](std::span<const std::size_t> idx) {
          hb.clear();
          tb.clear();
          for (auto i : idx) {
            hb.push_back(hidden[i]);
            tb.push_back(targets[i]);
          }
          nn::zero_grads(adv_params);
          const double bl = net.adversary_loss_hidden(hb, tb, true);
          adv_opt.step(adv_params);
          return bl;
        });
        log.epochs.push_back({"adversary", c, e, l});
      }
    }
  }
  if (best) net = std::move(*best);
  return log;
}

// Builds examples for comments of a corpus (substituted tokens). Comments
// without a confound vector get a null target.
inline std::vector<nn::Example> make_comment_examples(
    const nn::Vocab& vocab, const Corpus& corpus,
    const std::unordered_map<std::string, const std::vector<double>*>* targets = nullptr) {
  std::vector<nn::Example> out;
  out.reserve(corpus.comments().size());
  for (const auto& c : corpus.comments()) {
    if (c.subst_tokens.empty()) continue;
    nn::Example ex{vocab.encode(c.subst_tokens), index_of(corpus.gender_of(c)), nullptr};
    if (targets) {
      auto it = targets->find(c.id);
      if (it != targets->end()) ex.target = it->second;
    }
    out.push_back(std::move(ex));
  }
  return out;
}

// End-to-end training of a bias model on a (possibly matched) training corpus.
// confounds may be null when schedule.demotion is false.
inline BiasModel train_bias_model(const Corpus& train, const std::vector<ConfoundVector>* confounds,
                                  const std::vector<std::string>& confound_labels, const Corpus& dev,
                                  ModelConfig cfg, const TrainSchedule& sched) {
  if (train.comments().empty()) throw DataError("empty training set");
  std::vector<Tokens> texts;
  for (const auto& c : train.comments()) texts.push_back(c.subst_tokens);
  auto vocab = nn::Vocab::build(texts, cfg.vocab_min_count);

  std::unordered_map<std::string, const std::vector<double>*> target_map;
  if (sched.demotion) {
    if (!confounds) throw ConfigError("demotion requires confound vectors");
    for (const auto& v : *confounds) target_map[v.comment_id] = &v.probs;
    cfg.net.confound_dim = static_cast<int>(confound_labels.size());
    if (!confounds->empty() && confounds->front().probs.size() != confound_labels.size())
      throw DataError("confound vectors do not match the confound label count");
  } else {
    cfg.net.confound_dim = 0;
  }
  nn::TextClassifier net(vocab, cfg.net);
  const auto train_ex = make_comment_examples(net.vocab(), train, sched.demotion ? &target_map : nullptr);
  const auto dev_ex = make_comment_examples(net.vocab(), dev);
  auto log = train_classifier(net, train_ex, dev_ex, sched);
  BiasModel model(std::move(net), cfg, sched.demotion ? confound_labels : std::vector<std::string>{});
  model.set_provenance(sched, std::move(log));
  return model;
}

// Appendix-style schedules.
inline TrainSchedule base_schedule() {
  TrainSchedule s;
  s.demotion = false;
  s.base_epochs = 5;
  s.learning_rate = 1e-4;
  return s;
}

inline TrainSchedule demotion_schedule() {
  TrainSchedule s;
  s.demotion = true;
  s.classifier_epochs = 3;
  s.adversary_epochs = 10;
  s.cycles = 3;
  s.learning_rate = 1e-4;
  return s;
}

}  // namespace biasscope
