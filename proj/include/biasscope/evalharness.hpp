#pragma once

// Binary evaluation with a configurable positive class (F by default), the
// zero-shot transfer protocol over tagged posts, and seeded random baselines.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "biasscope/common.hpp"
#include "biasscope/corpus.hpp"

namespace biasscope {

struct EvalReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
  std::string positive_class = "F";
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t support_positive = 0;  // gold positives
  std::size_t support_negative = 0;
  // Set when a ratio had a zero denominator and was reported as 0.
  bool precision_undefined = false;
  bool recall_undefined = false;

  std::size_t n() const { return tp + fp + tn + fn; }
  bool degenerate() const { return precision_undefined || recall_undefined; }

  nlohmann::json to_json() const {
    return {{"precision", precision}, {"recall", recall}, {"f1", f1},       {"accuracy", accuracy},
            {"positive_class", positive_class}, {"tp", tp}, {"fp", fp}, {"tn", tn}, {"fn", fn},
            {"support_positive", support_positive}, {"support_negative", support_negative},
            {"precision_undefined", precision_undefined}, {"recall_undefined", recall_undefined}};
  }
};

// One byte per item: nonzero = positive class.
using Flags = std::vector<std::uint8_t>;

inline EvalReport evaluate_binary(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> gold,
                                  std::string positive_class = "F") {
  if (predicted.size() != gold.size()) throw DataError("prediction and gold label counts differ");
  if (predicted.empty()) throw DataError("cannot evaluate an empty prediction set");
  EvalReport r;
  r.positive_class = std::move(positive_class);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i]) {
      ++r.support_positive;
      (predicted[i] ? r.tp : r.fn) += 1;
    } else {
      ++r.support_negative;
      (predicted[i] ? r.fp : r.tn) += 1;
    }
  }
  const auto ratio = [](std::size_t num, std::size_t den, bool& undefined) {
    undefined = den == 0;
    return undefined ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  r.precision = ratio(r.tp, r.tp + r.fp, r.precision_undefined);
  r.recall = ratio(r.tp, r.tp + r.fn, r.recall_undefined);
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  r.accuracy = static_cast<double>(r.tp + r.tn) / static_cast<double>(r.n());
  return r;
}

// Gender predictions against gold genders with the given positive class.
inline EvalReport evaluate(std::span<const Gender> predicted, std::span<const Gender> gold,
                           Gender positive = Gender::F) {
  if (predicted.size() != gold.size()) throw DataError("every prediction needs a gold label");
  Flags p(predicted.size()), g(gold.size());
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    p[i] = predicted[i] == positive;
    g[i] = gold[i] == positive;
  }
  return evaluate_binary(p, g, std::string(to_string(positive)));
}

// ---------------------------------------------------------------------------
// Transfer evaluation over tagged posts
// ---------------------------------------------------------------------------

enum class PostTag { Gender, Other };

struct TaggedPost {
  std::string post_id;
  Tokens tokens;
  PostTag tag = PostTag::Other;
};

// Tab-separated: post_id, tag, text. Tag "gender" (any case) marks a
// gender-tagged post; every other tag counts as "other". A first line
// starting with "post_id" is a header.
inline std::vector<TaggedPost> read_tagged_posts(std::istream& in, const SubstitutionLexicon* lexicon = nullptr) {
  std::vector<TaggedPost> out;
  std::string line;
  bool first = true;
  std::size_t row = 0;
  const Author nobody{};
  while (std::getline(in, line)) {
    if (first && line.rfind("post_id", 0) == 0) {
      first = false;
      continue;
    }
    first = false;
    if (line.empty()) continue;
    ++row;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos)
      throw DataError("tagged post row " + std::to_string(row) + ": expected 3 tab-separated fields");
    const std::string id = line.substr(0, t1), text = line.substr(t2 + 1);
    std::string tag = line.substr(t1 + 1, t2 - t1 - 1);
    for (auto& ch : tag) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    TaggedPost p{id, tokenize(text), tag == "gender" ? PostTag::Gender : PostTag::Other};
    if (lexicon) p.tokens = apply_substitutions(p.tokens, *lexicon, nobody);
    if (p.tokens.empty()) continue;
    out.push_back(std::move(p));
  }
  return out;
}

// Zero-shot protocol: a predicted F counts as "gender-tagged". Metrics use
// gender-tagged as the positive class.
template <typename Model>
EvalReport transfer_eval(const Model& model, std::span<const TaggedPost> posts) {
  Flags pred(posts.size()), gold(posts.size());
  for (std::size_t i = 0; i < posts.size(); ++i) {
    pred[i] = model.predict(posts[i].tokens).label() == Gender::F;
    gold[i] = posts[i].tag == PostTag::Gender;
  }
  return evaluate_binary(pred, gold, "gender-tagged");
}

// ---------------------------------------------------------------------------
// Random baselines
// ---------------------------------------------------------------------------

enum class BaselineKind { Uniform, ClassPrior };

// Gold labels: round(positive_rate * n) positives. Guesses: positive with
// probability 0.5 (Uniform) or positive_rate (ClassPrior).
inline EvalReport random_baseline(BaselineKind kind, double positive_rate, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw ConfigError("random baseline needs n >= 1");
  if (!(positive_rate >= 0.0 && positive_rate <= 1.0)) throw ConfigError("positive rate must be in [0,1]");
  const auto n_pos = static_cast<std::size_t>(std::llround(positive_rate * static_cast<double>(n)));
  Flags gold(n), pred(n);
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution guess(kind == BaselineKind::Uniform ? 0.5 : positive_rate);
  for (std::size_t i = 0; i < n; ++i) {
    gold[i] = i < n_pos;
    pred[i] = guess(rng);
  }
  return evaluate_binary(pred, gold, "gender-tagged");
}

// Closed-form expected accuracy of a baseline guessing positive with
// probability q on data with positive rate p: p*q + (1-p)*(1-q).
inline double expected_baseline_accuracy(BaselineKind kind, double p) {
  const double q = kind == BaselineKind::Uniform ? 0.5 : p;
  return p * q + (1.0 - p) * (1.0 - q);
}

// Normal-approximation 95% half-width of a binomial proportion.
inline double binomial_half_width_95(double p, std::size_t n) {
  return 1.96 * std::sqrt(p * (1.0 - p) / static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// Reporting
// ---------------------------------------------------------------------------

struct NamedReport {
  std::string name;
  EvalReport report;
};

// Rows of Prec./Rec./F1/Acc. in percent, like the result tables.
inline void write_report_table(std::ostream& out, std::span<const NamedReport> rows, const std::string& title = {}) {
  if (!title.empty()) out << title << '\n';
  out << std::left << std::setw(24) << "" << std::right << std::setw(8) << "Prec." << std::setw(8) << "Rec."
      << std::setw(8) << "F1" << std::setw(8) << "Acc." << '\n';
  out << std::fixed << std::setprecision(1);
  for (const auto& r : rows) {
    out << std::left << std::setw(24) << r.name << std::right << std::setw(8) << 100.0 * r.report.precision
        << std::setw(8) << 100.0 * r.report.recall << std::setw(8) << 100.0 * r.report.f1 << std::setw(8)
        << 100.0 * r.report.accuracy;
    if (r.report.degenerate()) out << "  (degenerate)";
    out << '\n';
  }
  out.unsetf(std::ios::fixed);
}

}  // namespace biasscope
