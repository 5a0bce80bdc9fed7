#pragma once

// Named parameter tensors, initialization, and the Adam optimizer. All math
// is double precision and single-threaded so seeded runs are reproducible.

#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "biasscope/common.hpp"

namespace biasscope::nn {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct Param {
  std::string name;
  Mat value;
  Mat grad;

  Param() = default;
  Param(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Mat::Zero(rows, cols)), grad(Mat::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
  Eigen::Index size() const { return value.size(); }
};

using ParamRefs = std::vector<Param*>;

inline void zero_grads(const ParamRefs& ps) {
  for (auto* p : ps) p->zero_grad();
}

inline std::size_t count_params(const ParamRefs& ps) {
  std::size_t n = 0;
  for (auto* p : ps) n += static_cast<std::size_t>(p->size());
  return n;
}

// Glorot-uniform in [-r, r], r = scale * sqrt(6 / (fan_in + fan_out)).
inline void init_uniform(Param& p, std::mt19937_64& rng, double scale = 1.0) {
  const double fan = static_cast<double>(p.value.rows() + p.value.cols());
  const double r = scale * std::sqrt(6.0 / fan);
  std::uniform_real_distribution<double> u(-r, r);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = u(rng);
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam state is positional: step() must always receive the same parameter
// list in the same order.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(const ParamRefs& params) {
    if (m_.empty()) {
      for (auto* p : params) {
        m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
        v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
      }
    }
    if (m_.size() != params.size()) throw Error("Adam: parameter list changed between steps");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const double step = cfg_.lr * std::sqrt(c2) / c1;
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& g = params[i]->grad;
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      params[i]->value.array() -= step * m_[i].array() / (v_[i].array().sqrt() + cfg_.eps);
    }
  }

  long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<Mat> m_, v_;
  long t_ = 0;
};

// Numerically stable softmax and log-softmax.
inline Vec softmax(const Vec& s) {
  Vec e = (s.array() - s.maxCoeff()).exp();
  return e / e.sum();
}

inline Vec log_softmax(const Vec& s) {
  const double m = s.maxCoeff();
  const double lse = m + std::log((s.array() - m).exp().sum());
  return s.array() - lse;
}

}  // namespace biasscope::nn
