#pragma once

// Brute-force reference implementations used by unit and acceptance tests.
// They recompute everything from raw token lists with plain loops and share
// no code with the library beyond its data types.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "biasscope/corpus.hpp"
#include "biasscope/nn/tensor.hpp"
#include "biasscope/propensity.hpp"

namespace oracle {

struct Doc {
  std::string label;
  std::vector<std::string> tokens;
};

// lo[word][label], one label against all others, prior a_w = alpha0 * y_w / n.
inline std::map<std::string, std::map<std::string, double>> log_odds(const std::vector<Doc>& docs, double alpha0 = -1) {
  std::set<std::string> labels, words;
  for (const auto& d : docs) {
    labels.insert(d.label);
    for (const auto& t : d.tokens) words.insert(t);
  }
  double n = 0;
  for (const auto& d : docs) n += static_cast<double>(d.tokens.size());
  if (alpha0 <= 0) alpha0 = 0.01 * n;

  std::map<std::string, std::map<std::string, double>> out;
  for (const auto& w : words) {
    double yw = 0;
    for (const auto& d : docs)
      for (const auto& t : d.tokens) yw += (t == w);
    const double aw = alpha0 * yw / n;
    for (const auto& k : labels) {
      double ykw = 0, nk = 0;
      for (const auto& d : docs) {
        if (d.label != k) continue;
        nk += static_cast<double>(d.tokens.size());
        for (const auto& t : d.tokens) ykw += (t == w);
      }
      const double yrw = yw - ykw, nr = n - nk;
      const double odds_k = (ykw + aw) / (nk + alpha0 - ykw - aw);
      const double odds_r = (yrw + aw) / (nr + alpha0 - yrw - aw);
      out[w][k] = std::log(odds_k) - std::log(odds_r);
    }
  }
  return out;
}

// Confound vectors p(k | comment) by direct product of probabilities.
// Authors are those with at least one comment, in corpus order.
inline std::map<std::string, std::vector<double>> confound_vectors(const biasscope::Corpus& c, double min_count) {
  std::map<std::string, double> freq;
  for (const auto& cm : c.comments())
    for (const auto& t : cm.subst_tokens) freq[t] += 1;

  std::vector<std::string> authors;
  std::map<std::string, double> n_comments;
  for (const auto& cm : c.comments()) n_comments[c.addressee(cm).id] += 1;
  for (const auto& a : c.authors())
    if (n_comments.count(a.id)) authors.push_back(a.id);

  std::vector<Doc> docs;
  for (const auto& cm : c.comments()) {
    Doc d{c.addressee(cm).id, {}};
    for (const auto& t : cm.subst_tokens)
      if (freq[t] >= min_count) d.tokens.push_back(t);
    docs.push_back(d);
  }
  const auto lo = log_odds(docs);

  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  std::map<std::string, std::map<std::string, double>> pw;  // author -> word -> p
  for (const auto& a : authors) {
    double z = 0;
    for (const auto& [w, row] : lo) z += sig(row.at(a));
    for (const auto& [w, row] : lo) pw[a][w] = sig(row.at(a)) / z;
  }
  const double total = static_cast<double>(c.comments().size());

  std::map<std::string, std::vector<double>> out;
  for (const auto& cm : c.comments()) {
    std::vector<double> p;
    for (const auto& a : authors) {
      double v = n_comments[a] / total;
      for (const auto& t : cm.subst_tokens)
        if (lo.count(t)) v *= pw[a][t];
      p.push_back(v);
    }
    double s = 0;
    for (double v : p) s += v;
    for (double& v : p) v /= s;
    out[cm.id] = p;
  }
  return out;
}

// Everything a valid matching must satisfy; one message per violation.
inline std::vector<std::string> check_matching(const std::vector<biasscope::PropensityScore>& female,
                                               const std::vector<biasscope::PropensityScore>& male,
                                               const biasscope::MatchResult& res) {
  std::vector<std::string> bad;
  std::map<std::string, double> ef, em;
  for (const auto& s : female) ef[s.post_id] = s.e;
  for (const auto& s : male) em[s.post_id] = s.e;
  std::set<std::string> used;
  for (const auto& p : res.pairs) {
    if (!ef.count(p.post_f)) bad.push_back("F side not a female post: " + p.post_f);
    if (!em.count(p.post_m)) bad.push_back("M side not a male post: " + p.post_m);
    if (!ef.count(p.post_f) || !em.count(p.post_m)) continue;
    const double d = std::abs(ef[p.post_f] - em[p.post_m]);
    if (d > res.caliper) bad.push_back("pair outside caliper: " + p.post_f);
    if (std::abs(d - p.delta) > 1e-15) bad.push_back("recorded delta is wrong: " + p.post_f);
    if (!used.insert(p.post_f).second) bad.push_back("reused " + p.post_f);
    if (!used.insert(p.post_m).second) bad.push_back("reused " + p.post_m);
  }
  for (const auto& id : res.discarded) {
    if (used.count(id)) bad.push_back("discarded post was matched: " + id);
    used.insert(id);
  }
  if (used.size() < res.pairs.size() + female.size()) bad.push_back("some query posts are neither matched nor discarded");
  return bad;
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t params = 0;
  std::string worst;
};

// Central differences of loss() against the grads left in params by
// analytic(). Relative error |a - n| / max(|a|, |n|, floor).
inline GradCheck grad_check(const biasscope::nn::ParamRefs& params, const std::function<void()>& analytic,
                            const std::function<double()>& loss, double eps = 1e-5, double floor = 1e-7) {
  biasscope::nn::zero_grads(params);
  analytic();
  GradCheck out;
  for (auto* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double& v = p->value.data()[i];
      const double keep = v;
      v = keep + eps;
      const double up = loss();
      v = keep - eps;
      const double down = loss();
      v = keep;
      const double num = (up - down) / (2 * eps);
      const double ana = p->grad.data()[i];
      const double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), floor});
      if (rel > out.max_rel_error) {
        out.max_rel_error = rel;
        out.worst = p->name + "[" + std::to_string(i) + "]";
      }
      ++out.params;
    }
  }
  return out;
}

// Random token documents over a small vocabulary.
inline std::vector<Doc> random_docs(std::mt19937_64& rng, int labels, int max_words, int max_types) {
  std::uniform_int_distribution<int> types(2, max_types);
  const int V = types(rng);
  std::uniform_int_distribution<int> word(0, V - 1), len(1, 12);
  std::vector<Doc> docs;
  int words = 0;
  for (int k = 0; k < labels; ++k) {
    Doc d{"L" + std::to_string(k), {}};
    for (int i = 0, n = len(rng); i < n; ++i) d.tokens.push_back("t" + std::to_string(word(rng)));
    words += static_cast<int>(d.tokens.size());
    docs.push_back(d);
  }
  std::uniform_int_distribution<int> lab(0, labels - 1);
  while (words < max_words) {
    Doc d{"L" + std::to_string(lab(rng)), {}};
    for (int i = 0, n = std::min(len(rng), max_words - words); i < n; ++i) d.tokens.push_back("t" + std::to_string(word(rng)));
    words += static_cast<int>(d.tokens.size());
    docs.push_back(d);
    if (std::bernoulli_distribution(0.05)(rng)) break;
  }
  return docs;
}

inline biasscope::GroupedCounts group(const std::vector<Doc>& docs) {
  biasscope::GroupedCounts g;
  for (const auto& d : docs) {
    auto& c = g[d.label];
    for (const auto& t : d.tokens) c[t] += 1;
  }
  return g;
}

}  // namespace oracle
