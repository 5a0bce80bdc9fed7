#pragma once

// Encoder + gender classifier head + optional adversary heads, with the two
// training objectives:
//
//   main loss      mean_i [ CE(c(h_i), y_i) + mean_a KL(adv_a(h_i) || U_K) ]
//   adversary loss mean_i mean_a CE(t_i, adv_a(h_i))
//
// Gradients of both losses are computed for every parameter that takes part
// in the forward pass; which parameters actually move is decided by the
// optimizer phase that consumes them.

#include <cmath>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "biasscope/common.hpp"
#include "biasscope/nn/encoder.hpp"
#include "biasscope/nn/layers.hpp"
#include "biasscope/nn/vocab.hpp"

namespace biasscope::nn {

struct ClassifierConfig {
  EncoderConfig encoder;
  int classifier_hidden = 64;
  int adversary_hidden = 64;
  int num_adversaries = 2;
  int confound_dim = 0;  // adversary output size; 0 disables the adversaries
  double init_scale = 1.0;
  std::uint64_t seed = 1;
};

struct Example {
  std::vector<int> ids;
  int label = 0;                          // index_of(Gender)
  const std::vector<double>* target = nullptr;  // confound vector t_i
};

class TextClassifier {
 public:
  TextClassifier() = default;
  TextClassifier(Vocab vocab, const ClassifierConfig& cfg) : vocab_(std::move(vocab)), cfg_(cfg) {
    std::mt19937_64 rng(cfg.seed);
    encoder_ = Encoder("encoder", static_cast<int>(vocab_.size()), cfg.encoder, rng, cfg.init_scale);
    const int h = encoder_.output_dim();
    classifier_ = FeedForwardHead("classifier", h, cfg.classifier_hidden, kNumGenders, rng, cfg.init_scale);
    if (cfg.confound_dim > 0) {
      if (cfg.confound_dim < 2) throw ConfigError("confound dimensionality must be at least 2");
      for (int a = 0; a < cfg.num_adversaries; ++a) {
        // Each adversary draws from its own stream so members start apart.
        std::mt19937_64 arng(cfg.seed * 1000003ULL + 7919ULL * static_cast<std::uint64_t>(a + 1));
        adversaries_.emplace_back("adversary" + std::to_string(a), h, cfg.adversary_hidden, cfg.confound_dim, arng,
                                  cfg.init_scale);
      }
    }
  }

  const Vocab& vocab() const { return vocab_; }
  const ClassifierConfig& config() const { return cfg_; }
  bool has_adversaries() const { return !adversaries_.empty(); }
  int confound_dim() const { return adversaries_.empty() ? 0 : adversaries_.front().out_dim(); }
  int hidden_dim() const { return encoder_.output_dim(); }

  std::vector<int> encode_tokens(std::span<const std::string> tokens) const { return vocab_.encode(tokens); }

  Vec encode(std::span<const int> ids) const { return encoder_.forward(ids); }
  Vec encode(std::span<const std::string> tokens) const { return encode(encode_tokens(tokens)); }

  // Class distribution (index 0 = M, 1 = F).
  Vec gender_probs(std::span<const int> ids) const { return classifier_.probs(encode(ids)); }
  Vec gender_probs(std::span<const std::string> tokens) const { return gender_probs(encode_tokens(tokens)); }

  Vec adversary_probs(std::size_t member, const Vec& h) const { return adversaries_.at(member).probs(h); }

  // ----- objectives --------------------------------------------------------

  // with_kl=false gives plain cross-entropy (no demotion). When backprop is
  // set, gradients are accumulated into every participating parameter.
  double main_loss(std::span<const Example> batch, bool with_kl, bool backprop) {
    if (batch.empty()) return 0.0;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    const bool kl_on = with_kl && !adversaries_.empty();
    const double inv_a = kl_on ? 1.0 / static_cast<double>(adversaries_.size()) : 0.0;
    double total = 0.0;
    for (const auto& ex : batch) {
      Encoder::Cache ecache;
      const Vec h = encoder_.forward(ex.ids, ecache);
      FeedForwardHead::Cache ccache;
      const Vec logp = log_softmax(classifier_.logits(h, ccache));
      total += -logp(ex.label);
      Vec dh = Vec::Zero(h.size());
      if (backprop) {
        Vec ds = logp.array().exp();
        ds(ex.label) -= 1.0;
        dh += classifier_.backward(ccache, ds * inv_b);
      }
      if (kl_on) {
        for (auto& adv : adversaries_) {
          FeedForwardHead::Cache acache;
          const Vec logq = log_softmax(adv.logits(h, acache));
          const Vec q = logq.array().exp();
          const double neg_entropy = q.dot(logq);
          total += inv_a * (neg_entropy + std::log(static_cast<double>(q.size())));
          if (backprop) {
            Vec ds = q.array() * (logq.array() - neg_entropy);
            dh += adv.backward(acache, ds * (inv_a * inv_b));
          }
        }
      }
      if (backprop) encoder_.backward(ecache, dh);
    }
    return total * inv_b;
  }

  // Cross-entropy of every adversary against the confound targets. With
  // through_encoder=false the encoder is treated as frozen (no encoder grads).
  double adversary_loss(std::span<const Example> batch, bool backprop, bool through_encoder = true) {
    if (adversaries_.empty()) throw ConfigError("model has no adversaries");
    if (batch.empty()) return 0.0;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    double total = 0.0;
    for (const auto& ex : batch) {
      Encoder::Cache ecache;
      const Vec h = encoder_.forward(ex.ids, ecache);
      Vec dh;
      total += adversary_loss_at(h, target_of(ex), backprop, inv_b, backprop && through_encoder ? &dh : nullptr);
      if (backprop && through_encoder) encoder_.backward(ecache, dh);
    }
    return total * inv_b;
  }

  // Adversary loss on precomputed encodings (the encoder is frozen during the
  // adversary phase, so h_x can be cached for the whole phase).
  double adversary_loss_hidden(std::span<const Vec> hidden, std::span<const std::vector<double>* const> targets,
                               bool backprop) {
    if (hidden.size() != targets.size()) throw DataError("hidden/target batch size mismatch");
    if (hidden.empty()) return 0.0;
    const double inv_b = 1.0 / static_cast<double>(hidden.size());
    double total = 0.0;
    for (std::size_t i = 0; i < hidden.size(); ++i) {
      if (!targets[i]) throw DataError("missing confound target");
      total += adversary_loss_at(hidden[i], *targets[i], backprop, inv_b, nullptr);
    }
    return total * inv_b;
  }

  // ----- parameters --------------------------------------------------------

  ParamRefs encoder_params() {
    ParamRefs out;
    encoder_.params(out);
    return out;
  }
  ParamRefs main_params() {
    ParamRefs out;
    encoder_.params(out);
    classifier_.params(out);
    return out;
  }
  ParamRefs adversary_params() {
    ParamRefs out;
    for (auto& a : adversaries_) a.params(out);
    return out;
  }
  ParamRefs all_params() {
    ParamRefs out = main_params();
    for (auto& a : adversaries_) a.params(out);
    return out;
  }

  std::map<std::string, const Param*> named_params() const {
    auto* self = const_cast<TextClassifier*>(this);
    std::map<std::string, const Param*> out;
    for (auto* p : self->all_params()) out.emplace(p->name, p);
    return out;
  }

 private:
  const std::vector<double>& target_of(const Example& ex) const {
    if (!ex.target) throw DataError("example lacks a confound vector");
    if (static_cast<int>(ex.target->size()) != confound_dim())
      throw DataError("confound vector dimensionality " + std::to_string(ex.target->size()) +
                      " does not match adversary output " + std::to_string(confound_dim()));
    return *ex.target;
  }

  double adversary_loss_at(const Vec& h, const std::vector<double>& t, bool backprop, double inv_b, Vec* dh) {
    if (static_cast<int>(t.size()) != confound_dim())
      throw DataError("confound vector dimensionality does not match adversary output");
    const Eigen::Map<const Vec> target(t.data(), static_cast<Eigen::Index>(t.size()));
    const double inv_a = 1.0 / static_cast<double>(adversaries_.size());
    double loss = 0.0;
    if (dh) *dh = Vec::Zero(h.size());
    for (auto& adv : adversaries_) {
      FeedForwardHead::Cache acache;
      const Vec logq = log_softmax(adv.logits(h, acache));
      loss += -inv_a * target.dot(logq);
      if (backprop) {
        // d/dlogits of -sum t log softmax = q * sum(t) - t
        Vec ds = logq.array().exp() * target.sum() - target.array();
        Vec g = adv.backward(acache, ds * (inv_a * inv_b));
        if (dh) *dh += g;
      }
    }
    return loss;
  }

  Vocab vocab_;
  ClassifierConfig cfg_;
  Encoder encoder_;
  FeedForwardHead classifier_;
  std::vector<FeedForwardHead> adversaries_;
};

}  // namespace biasscope::nn
