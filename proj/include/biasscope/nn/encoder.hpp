#pragma once

// Text encoders mapping a token id sequence to a fixed-size vector h_x.
//   bilstm: bidirectional LSTM, output = [mean_t h_fwd ; mean_t h_bwd]
//   bag:    tanh(P * mean_t E[x_t] + b)

#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "biasscope/common.hpp"
#include "biasscope/nn/layers.hpp"

namespace biasscope::nn {

enum class EncoderKind { BiLstm, Bag };

inline std::string to_string(EncoderKind k) { return k == EncoderKind::BiLstm ? "bilstm" : "bag"; }

inline EncoderKind parse_encoder_kind(const std::string& s) {
  if (s == "bilstm") return EncoderKind::BiLstm;
  if (s == "bag") return EncoderKind::Bag;
  throw ConfigError("unknown encoder kind: " + s);
}

struct EncoderConfig {
  EncoderKind kind = EncoderKind::BiLstm;
  int embedding_dim = 100;
  int hidden_dim = 128;  // size of h_x; split evenly between LSTM directions
};

class BiLstmEncoder {
 public:
  struct Cache {
    std::vector<int> ids;
    LstmDirection::Cache fwd, bwd;
  };

  BiLstmEncoder() = default;
  BiLstmEncoder(const std::string& name, int vocab, const EncoderConfig& cfg, std::mt19937_64& rng, double scale = 1.0)
      : embed_(name + ".embed", vocab, cfg.embedding_dim, rng),
        fwd_(name + ".lstm_fwd", cfg.embedding_dim, cfg.hidden_dim / 2, rng, scale),
        bwd_(name + ".lstm_bwd", cfg.embedding_dim, cfg.hidden_dim / 2, rng, scale) {
    if (cfg.hidden_dim <= 0 || cfg.hidden_dim % 2 != 0) throw ConfigError("bilstm hidden_dim must be positive and even");
  }

  Vec forward(std::span<const int> ids, Cache& cache) const {
    cache.ids.assign(ids.begin(), ids.end());
    const Mat x = embed_.forward(ids);
    fwd_.forward(x, cache.fwd);
    bwd_.forward(x.rowwise().reverse(), cache.bwd);
    const Eigen::Index H = fwd_.hidden_dim(), T = x.cols();
    Vec out(2 * H);
    out.head(H) = cache.fwd.hidden.rightCols(T).rowwise().mean();
    out.tail(H) = cache.bwd.hidden.rightCols(T).rowwise().mean();
    return out;
  }

  void backward(const Cache& cache, const Vec& dout) {
    const Eigen::Index H = fwd_.hidden_dim(), T = static_cast<Eigen::Index>(cache.ids.size());
    const double inv_t = 1.0 / static_cast<double>(T);
    Mat dh_f = (dout.head(H) * inv_t).replicate(1, T);
    Mat dh_b = (dout.tail(H) * inv_t).replicate(1, T);
    Mat dx = fwd_.backward(cache.fwd, dh_f);
    dx += bwd_.backward(cache.bwd, dh_b).rowwise().reverse();
    embed_.backward(cache.ids, dx);
  }

  void params(ParamRefs& out) {
    embed_.params(out);
    fwd_.params(out);
    bwd_.params(out);
  }

  int output_dim() const { return 2 * fwd_.hidden_dim(); }

 private:
  Embedding embed_;
  LstmDirection fwd_, bwd_;
};

class BagEncoder {
 public:
  struct Cache {
    std::vector<int> ids;
    Vec mean;
    Vec out;
  };

  BagEncoder() = default;
  BagEncoder(const std::string& name, int vocab, const EncoderConfig& cfg, std::mt19937_64& rng, double scale = 1.0)
      : embed_(name + ".embed", vocab, cfg.embedding_dim, rng),
        proj_(name + ".proj", cfg.embedding_dim, cfg.hidden_dim, rng, scale) {}

  Vec forward(std::span<const int> ids, Cache& cache) const {
    cache.ids.assign(ids.begin(), ids.end());
    cache.mean = embed_.forward(ids).rowwise().mean();
    cache.out = proj_.forward(cache.mean).array().tanh();
    return cache.out;
  }

  void backward(const Cache& cache, const Vec& dout) {
    Vec dpre = dout.array() * (1.0 - cache.out.array().square());
    Vec dmean = proj_.backward(cache.mean, dpre);
    const Eigen::Index T = static_cast<Eigen::Index>(cache.ids.size());
    embed_.backward(cache.ids, (dmean / static_cast<double>(T)).replicate(1, T));
  }

  void params(ParamRefs& out) {
    embed_.params(out);
    proj_.params(out);
  }

  int output_dim() const { return proj_.out_dim(); }

 private:
  Embedding embed_;
  Linear proj_;
};

// Value-semantic wrapper over the encoder kinds.
class Encoder {
 public:
  using Cache = std::variant<BiLstmEncoder::Cache, BagEncoder::Cache>;

  Encoder() = default;
  Encoder(const std::string& name, int vocab, const EncoderConfig& cfg, std::mt19937_64& rng, double scale = 1.0)
      : cfg_(cfg) {
    if (cfg.embedding_dim <= 0 || cfg.hidden_dim <= 0) throw ConfigError("encoder dimensions must be positive");
    if (cfg.kind == EncoderKind::BiLstm)
      impl_ = BiLstmEncoder(name, vocab, cfg, rng, scale);
    else
      impl_ = BagEncoder(name, vocab, cfg, rng, scale);
  }

  Vec forward(std::span<const int> ids, Cache& cache) const {
    if (ids.empty()) throw DataError("cannot encode an empty token sequence");
    return std::visit(
        [&](const auto& enc) -> Vec {
          using C = typename std::decay_t<decltype(enc)>::Cache;
          cache = C{};
          return enc.forward(ids, std::get<C>(cache));
        },
        impl_);
  }

  Vec forward(std::span<const int> ids) const {
    Cache c;
    return forward(ids, c);
  }

  void backward(const Cache& cache, const Vec& dout) {
    std::visit(
        [&](auto& enc) {
          using C = typename std::decay_t<decltype(enc)>::Cache;
          enc.backward(std::get<C>(cache), dout);
        },
        impl_);
  }

  void params(ParamRefs& out) {
    std::visit([&](auto& enc) { enc.params(out); }, impl_);
  }

  int output_dim() const {
    return std::visit([](const auto& enc) { return enc.output_dim(); }, impl_);
  }

  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  std::variant<BiLstmEncoder, BagEncoder> impl_;
};

}  // namespace biasscope::nn
