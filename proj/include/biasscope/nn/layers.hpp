#pragma once

// Layers with hand-written backward passes. Backward calls accumulate into
// Param::grad; callers zero gradients between steps.

#include <random>
#include <span>
#include <string>
#include <vector>

#include "biasscope/nn/tensor.hpp"

namespace biasscope::nn {

struct Linear {
  Param weight;  // out x in
  Param bias;    // out x 1

  Linear() = default;
  Linear(const std::string& name, int in, int out, std::mt19937_64& rng, double scale = 1.0)
      : weight(name + ".weight", out, in), bias(name + ".bias", out, 1) {
    init_uniform(weight, rng, scale);
  }

  Vec forward(const Vec& x) const { return weight.value * x + bias.value.col(0); }

  // Returns dL/dx.
  Vec backward(const Vec& x, const Vec& dy) {
    weight.grad.noalias() += dy * x.transpose();
    bias.grad.col(0) += dy;
    return weight.value.transpose() * dy;
  }

  void params(ParamRefs& out) { out.insert(out.end(), {&weight, &bias}); }
  int in_dim() const { return static_cast<int>(weight.value.cols()); }
  int out_dim() const { return static_cast<int>(weight.value.rows()); }
};

// Columns are token embeddings (dim x vocab).
struct Embedding {
  Param table;

  Embedding() = default;
  Embedding(const std::string& name, int vocab, int dim, std::mt19937_64& rng)
      : table(name + ".table", dim, vocab) {
    std::normal_distribution<double> n(0.0, 0.1);
    for (Eigen::Index i = 0; i < table.value.size(); ++i) table.value.data()[i] = n(rng);
  }

  Mat forward(std::span<const int> ids) const {
    Mat x(table.value.rows(), static_cast<Eigen::Index>(ids.size()));
    for (std::size_t t = 0; t < ids.size(); ++t) x.col(static_cast<Eigen::Index>(t)) = table.value.col(ids[t]);
    return x;
  }

  void backward(std::span<const int> ids, const Mat& dx) {
    for (std::size_t t = 0; t < ids.size(); ++t) table.grad.col(ids[t]) += dx.col(static_cast<Eigen::Index>(t));
  }

  void params(ParamRefs& out) { out.push_back(&table); }
  int dim() const { return static_cast<int>(table.value.rows()); }
  int vocab_size() const { return static_cast<int>(table.value.cols()); }
};

inline double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// One direction of an LSTM over a D x T input matrix. Gate order in the
// stacked 4H rows: input, forget, cell, output.
struct LstmDirection {
  Param w_in;   // 4H x D
  Param w_rec;  // 4H x H
  Param bias;   // 4H x 1

  struct Cache {
    Mat x;       // D x T
    Mat gates;   // 4H x T, post-activation
    Mat cells;   // H x (T+1), column 0 is the initial state
    Mat hidden;  // H x (T+1)
  };

  LstmDirection() = default;
  LstmDirection(const std::string& name, int in, int hidden, std::mt19937_64& rng, double scale = 1.0)
      : w_in(name + ".w_in", 4 * hidden, in), w_rec(name + ".w_rec", 4 * hidden, hidden), bias(name + ".bias", 4 * hidden, 1) {
    init_uniform(w_in, rng, scale);
    init_uniform(w_rec, rng, scale);
    bias.value.block(hidden, 0, hidden, 1).setOnes();  // forget gate
  }

  int hidden_dim() const { return static_cast<int>(w_rec.value.cols()); }

  // Fills cache; hidden states h_1..h_T are cache.hidden columns 1..T.
  void forward(const Mat& x, Cache& cache) const {
    const Eigen::Index H = hidden_dim(), T = x.cols();
    cache.x = x;
    cache.gates.resize(4 * H, T);
    cache.cells = Mat::Zero(H, T + 1);
    cache.hidden = Mat::Zero(H, T + 1);
    Mat pre = w_in.value * x;
    pre.colwise() += bias.value.col(0);
    for (Eigen::Index t = 0; t < T; ++t) {
      Vec a = pre.col(t) + w_rec.value * cache.hidden.col(t);
      for (Eigen::Index j = 0; j < H; ++j) {
        a(j) = sigm(a(j));
        a(H + j) = sigm(a(H + j));
        a(2 * H + j) = std::tanh(a(2 * H + j));
        a(3 * H + j) = sigm(a(3 * H + j));
      }
      cache.gates.col(t) = a;
      cache.cells.col(t + 1) = a.segment(H, H).cwiseProduct(cache.cells.col(t)) +
                               a.segment(0, H).cwiseProduct(a.segment(2 * H, H));
      cache.hidden.col(t + 1) = a.segment(3 * H, H).cwiseProduct(cache.cells.col(t + 1).array().tanh().matrix());
    }
  }

  // dh: H x T gradient w.r.t. h_1..h_T. Returns dL/dx (D x T).
  Mat backward(const Cache& cache, const Mat& dh) {
    const Eigen::Index H = hidden_dim(), T = cache.x.cols();
    Mat da(4 * H, T);
    Vec dh_next = Vec::Zero(H), dc_next = Vec::Zero(H);
    for (Eigen::Index t = T - 1; t >= 0; --t) {
      const auto g = cache.gates.col(t);
      const Vec c = cache.cells.col(t + 1);
      const Vec tc = c.array().tanh();
      const Vec dht = dh.col(t) + dh_next;
      for (Eigen::Index j = 0; j < H; ++j) {
        const double i = g(j), f = g(H + j), cc = g(2 * H + j), o = g(3 * H + j);
        const double dc = dc_next(j) + dht(j) * o * (1.0 - tc(j) * tc(j));
        da(j, t) = dc * cc * i * (1.0 - i);
        da(H + j, t) = dc * cache.cells(j, t) * f * (1.0 - f);
        da(2 * H + j, t) = dc * i * (1.0 - cc * cc);
        da(3 * H + j, t) = dht(j) * tc(j) * o * (1.0 - o);
        dc_next(j) = dc * f;
      }
      dh_next = w_rec.value.transpose() * da.col(t);
    }
    w_in.grad.noalias() += da * cache.x.transpose();
    w_rec.grad.noalias() += da * cache.hidden.leftCols(T).transpose();
    bias.grad.col(0) += da.rowwise().sum();
    return w_in.value.transpose() * da;
  }

  void params(ParamRefs& out) { out.insert(out.end(), {&w_in, &w_rec, &bias}); }
};

// Linear -> tanh -> Linear -> softmax. Used for the gender classifier, the
// propensity head and the adversaries.
struct FeedForwardHead {
  Linear hidden;
  Linear output;

  struct Cache {
    Vec input;
    Vec act;     // tanh activations
    Vec logits;
  };

  FeedForwardHead() = default;
  FeedForwardHead(const std::string& name, int in, int mid, int out, std::mt19937_64& rng, double scale = 1.0)
      : hidden(name + ".hidden", in, mid, rng, scale), output(name + ".output", mid, out, rng, scale) {}

  Vec logits(const Vec& x, Cache& cache) const {
    cache.input = x;
    cache.act = hidden.forward(x).array().tanh();
    cache.logits = output.forward(cache.act);
    return cache.logits;
  }

  Vec probs(const Vec& x) const {
    Cache c;
    return softmax(logits(x, c));
  }

  // dlogits -> dL/dinput.
  Vec backward(const Cache& cache, const Vec& dlogits) {
    Vec dact = output.backward(cache.act, dlogits);
    Vec dpre = dact.array() * (1.0 - cache.act.array().square());
    return hidden.backward(cache.input, dpre);
  }

  void params(ParamRefs& out) {
    hidden.params(out);
    output.params(out);
  }
  int out_dim() const { return output.out_dim(); }
};

}  // namespace biasscope::nn
