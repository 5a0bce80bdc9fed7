#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "biasscope/biasmodel.hpp"
#include "biasscope/propensity.hpp"
#include "biasscope/synthgen.hpp"
#include "../support/oracles.hpp"

using namespace biasscope;
using nn::Example;

namespace {

nn::ClassifierConfig tiny_config(nn::EncoderKind kind) {
  nn::ClassifierConfig c;
  c.encoder.kind = kind;
  c.encoder.embedding_dim = 3;
  c.encoder.hidden_dim = 4;
  c.classifier_hidden = 3;
  c.adversary_hidden = 3;
  c.num_adversaries = 2;
  c.confound_dim = 3;
  c.seed = 4;
  return c;
}

nn::Vocab tiny_vocab() {
  nn::Vocab v;
  for (const char* t : {"a", "b", "c", "d", "e"}) v.add(t);
  return v;
}

struct Batch {
  std::vector<std::vector<double>> targets;
  std::vector<Example> examples;
};

Batch tiny_batch() {
  Batch b;
  b.targets = {{0.7, 0.2, 0.1}, {0.1, 0.1, 0.8}, {0.3, 0.3, 0.4}, {0.05, 0.9, 0.05}, {1.0, 0.0, 0.0}};
  const std::vector<std::vector<int>> ids{{1, 2, 3}, {4, 5}, {2, 2, 1, 0}, {5}, {3, 1, 4, 2, 5}};
  for (std::size_t i = 0; i < ids.size(); ++i) b.examples.push_back({ids[i], static_cast<int>(i % 2), nullptr});
  for (std::size_t i = 0; i < ids.size(); ++i) b.examples[i].target = &b.targets[i];
  return b;
}

}  // namespace

class GradientCheck : public testing::TestWithParam<nn::EncoderKind> {};

TEST_P(GradientCheck, MainLossWithKl) {
  nn::TextClassifier net(tiny_vocab(), tiny_config(GetParam()));
  const auto b = tiny_batch();
  const auto params = net.all_params();
  ASSERT_LE(nn::count_params(params), 500u);
  const auto r = oracle::grad_check(
      params, [&] { net.main_loss(b.examples, true, true); }, [&] { return net.main_loss(b.examples, true, false); });
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst;
}

TEST_P(GradientCheck, MainLossPlainCrossEntropy) {
  nn::TextClassifier net(tiny_vocab(), tiny_config(GetParam()));
  const auto b = tiny_batch();
  const auto params = net.main_params();
  const auto r = oracle::grad_check(
      params, [&] { net.main_loss(b.examples, false, true); }, [&] { return net.main_loss(b.examples, false, false); });
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst;
}

TEST_P(GradientCheck, AdversaryLossThroughEncoder) {
  nn::TextClassifier net(tiny_vocab(), tiny_config(GetParam()));
  const auto b = tiny_batch();
  auto params = net.encoder_params();
  for (auto* p : net.adversary_params()) params.push_back(p);
  const auto r = oracle::grad_check(
      params, [&] { net.adversary_loss(b.examples, true); }, [&] { return net.adversary_loss(b.examples, false); });
  EXPECT_LE(r.max_rel_error, 1e-4) << r.worst;
}

INSTANTIATE_TEST_SUITE_P(Encoders, GradientCheck, testing::Values(nn::EncoderKind::BiLstm, nn::EncoderKind::Bag),
                         [](const auto& info) { return nn::to_string(info.param); });

TEST(Objectives, KlIsZeroForUniformAdversaries) {
  nn::TextClassifier net(tiny_vocab(), tiny_config(nn::EncoderKind::Bag));
  for (auto* p : net.adversary_params()) p->value.setZero();
  const auto b = tiny_batch();
  EXPECT_NEAR(net.main_loss(b.examples, true, false), net.main_loss(b.examples, false, false), 1e-12);
  // uniform q: CE(t, q) = log K for any normalized target
  EXPECT_NEAR(net.adversary_loss(b.examples, false), std::log(3.0), 1e-12);
}

TEST(Alternation, EachPhaseMovesOnlyItsParameters) {
  nn::TextClassifier net(tiny_vocab(), tiny_config(nn::EncoderKind::BiLstm));
  const auto b = tiny_batch();
  auto snapshot = [](const nn::ParamRefs& ps) {
    std::vector<nn::Mat> out;
    for (auto* p : ps) out.push_back(p->value);
    return out;
  };
  auto same = [](const nn::ParamRefs& ps, const std::vector<nn::Mat>& s) {
    for (std::size_t i = 0; i < ps.size(); ++i)
      if (ps[i]->value != s[i]) return false;
    return true;
  };

  // classifier phase
  const auto adv_before = snapshot(net.adversary_params());
  const auto main_before = snapshot(net.main_params());
  nn::Adam main_opt({0.01});
  nn::zero_grads(net.all_params());
  net.main_loss(b.examples, true, true);
  main_opt.step(net.main_params());
  EXPECT_TRUE(same(net.adversary_params(), adv_before));
  EXPECT_FALSE(same(net.main_params(), main_before));

  // adversary phase on cached encodings
  const auto main_mid = snapshot(net.main_params());
  std::vector<nn::Vec> hidden;
  std::vector<const std::vector<double>*> targets;
  for (const auto& ex : b.examples) {
    hidden.push_back(net.encode(ex.ids));
    targets.push_back(ex.target);
  }
  nn::zero_grads(net.all_params());
  net.adversary_loss_hidden(hidden, targets, true);
  for (auto* p : net.main_params()) EXPECT_EQ(p->grad.norm(), 0.0) << p->name;
  nn::Adam adv_opt({0.01});
  adv_opt.step(net.adversary_params());
  EXPECT_TRUE(same(net.main_params(), main_mid));
  EXPECT_FALSE(same(net.adversary_params(), adv_before));

  // frozen-encoder variant of the example-level loss
  nn::zero_grads(net.all_params());
  net.adversary_loss(b.examples, true, false);
  for (auto* p : net.encoder_params()) EXPECT_EQ(p->grad.norm(), 0.0) << p->name;
}

TEST(Alternation, CachedAndRecomputedAdversaryLossAgree) {
  nn::TextClassifier net(tiny_vocab(), tiny_config(nn::EncoderKind::BiLstm));
  const auto b = tiny_batch();
  std::vector<nn::Vec> hidden;
  std::vector<const std::vector<double>*> targets;
  for (const auto& ex : b.examples) {
    hidden.push_back(net.encode(ex.ids));
    targets.push_back(ex.target);
  }
  EXPECT_NEAR(net.adversary_loss_hidden(hidden, targets, false), net.adversary_loss(b.examples, false), 1e-12);
}

TEST(Adversaries, StartFromDifferentWeights) {
  nn::TextClassifier net(tiny_vocab(), tiny_config(nn::EncoderKind::Bag));
  const nn::Vec h = nn::Vec::Constant(4, 0.3);
  EXPECT_GT((net.adversary_probs(0, h) - net.adversary_probs(1, h)).norm(), 1e-6);
}

namespace {

struct SmallRun {
  Corpus train, dev;
  std::vector<ConfoundVector> vecs;
  std::vector<std::string> labels;
};

SmallRun small_run() {
  SynthSpec spec;
  spec.authors_per_gender = 4;
  spec.posts_per_author = 3;
  spec.comments_per_post = 3;
  const auto split = split_by_author(to_corpus(generate(spec)), {}, 1);
  SmallRun r{split.train, split.dev, {}, {}};
  const auto m = fit_confound_model(r.train, {2, std::nullopt});
  r.vecs = build_confound_vectors(r.train, m);
  r.labels = m.authors();
  return r;
}

ModelConfig small_model() {
  ModelConfig c;
  c.net.encoder.embedding_dim = 8;
  c.net.encoder.hidden_dim = 8;
  c.net.classifier_hidden = 8;
  c.net.adversary_hidden = 8;
  return c;
}

TrainSchedule quick(bool demotion) {
  TrainSchedule s;
  s.demotion = demotion;
  s.base_epochs = 2;
  s.classifier_epochs = 1;
  s.adversary_epochs = 2;
  s.cycles = 2;
  s.learning_rate = 0.01;
  s.batch_size = 8;
  return s;
}

}  // namespace

TEST(Training, SeededRunsAreIdentical) {
  const auto r = small_run();
  for (bool demotion : {false, true}) {
    const auto a = train_bias_model(r.train, &r.vecs, r.labels, r.dev, small_model(), quick(demotion));
    const auto b = train_bias_model(r.train, &r.vecs, r.labels, r.dev, small_model(), quick(demotion));
    for (const auto& c : r.dev.comments()) EXPECT_EQ(a.score(c.subst_tokens), b.score(c.subst_tokens));
    EXPECT_EQ(a.log().epochs.size(), b.log().epochs.size());
  }
}

TEST(Training, LogShapeAndBestCheckpoint) {
  const auto r = small_run();
  const auto m = train_bias_model(r.train, &r.vecs, r.labels, r.dev, small_model(), quick(true));
  const auto& log = m.log();
  ASSERT_EQ(log.epochs.size(), 2u * (1 + 2));
  EXPECT_EQ(log.epochs[0].phase, "classifier");
  EXPECT_EQ(log.epochs[1].phase, "adversary");
  EXPECT_TRUE(std::isnan(log.epochs[1].dev_accuracy));
  double best = 0;
  for (const auto& e : log.epochs)
    if (!std::isnan(e.dev_accuracy)) best = std::max(best, e.dev_accuracy);
  EXPECT_DOUBLE_EQ(log.best_dev_accuracy, best);
  // ties resolve to the later epoch
  for (std::size_t i = log.best_epoch_index + 1; i < log.epochs.size(); ++i)
    if (!std::isnan(log.epochs[i].dev_accuracy)) EXPECT_LT(log.epochs[i].dev_accuracy, best);
}

TEST(Training, DemotionNeedsConfounds) {
  const auto r = small_run();
  EXPECT_THROW(train_bias_model(r.train, nullptr, {}, r.dev, small_model(), quick(true)), ConfigError);
  TrainSchedule bad = quick(false);
  bad.learning_rate = 0;
  EXPECT_THROW(train_bias_model(r.train, nullptr, {}, r.dev, small_model(), bad), ConfigError);
}

TEST(Checkpoint, BiasModelRoundTrip) {
  const auto r = small_run();
  const auto m = train_bias_model(r.train, &r.vecs, r.labels, r.dev, small_model(), quick(true));
  std::stringstream ss;
  m.save(ss);
  const auto back = BiasModel::load(ss);
  EXPECT_EQ(back.confound_labels(), m.confound_labels());
  EXPECT_EQ(back.schedule().cycles, 2);
  for (const auto& c : r.dev.comments()) EXPECT_EQ(back.score(c.subst_tokens), m.score(c.subst_tokens));
}

TEST(Checkpoint, PropensityRoundTripAndBadFiles) {
  const auto r = small_run();
  PropensityOptions o;
  o.model = small_model();
  o.epochs = 2;
  o.learning_rate = 0.01;
  o.batch_size = 8;
  const auto p = train_propensity_model(r.train, r.dev, o);
  std::stringstream ss;
  p.save(ss);
  const auto back = PropensityModel::load(ss);
  for (const auto& post : r.dev.posts()) EXPECT_EQ(back.score(post.tokens), p.score(post.tokens));

  std::stringstream wrong;
  train_bias_model(r.train, nullptr, {}, r.dev, small_model(), quick(false)).save(wrong);
  EXPECT_THROW(PropensityModel::load(wrong), DataError);
  std::istringstream junk("not a checkpoint at all");
  EXPECT_THROW(BiasModel::load(junk), DataError);
}

TEST(Prediction, ThresholdTieGoesToM) {
  Prediction p;
  p.score = 0.5;
  EXPECT_EQ(p.label(), Gender::M);
  p.score = 0.5000001;
  EXPECT_EQ(p.label(), Gender::F);
}
