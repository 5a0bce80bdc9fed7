#pragma once

// Word/label association statistics. Log-odds with an informative Dirichlet
// prior (one label against the union of all others), used both for gender
// polarity diagnostics over post text and for the per-comment confound
// vectors over training authors.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "biasscope/common.hpp"
#include "biasscope/corpus.hpp"

namespace biasscope {

using WordCounts = std::map<std::string, double>;
// label -> word counts. Iteration order of the outer map fixes label order.
using GroupedCounts = std::map<std::string, WordCounts>;

class LogOddsTable {
 public:
  LogOddsTable() = default;
  LogOddsTable(std::vector<std::string> labels, std::vector<std::string> vocab, std::vector<double> scores,
               double prior_alpha, std::vector<double> variances = {})
      : labels_(std::move(labels)),
        vocab_(std::move(vocab)),
        scores_(std::move(scores)),
        variances_(std::move(variances)),
        prior_alpha_(prior_alpha) {
    if (scores_.size() != labels_.size() * vocab_.size()) throw DataError("log-odds table shape mismatch");
    if (!variances_.empty() && variances_.size() != scores_.size()) throw DataError("log-odds variance shape mismatch");
    for (std::size_t i = 0; i < vocab_.size(); ++i) word_idx_.emplace(vocab_[i], i);
    for (std::size_t k = 0; k < labels_.size(); ++k) label_idx_.emplace(labels_[k], k);
  }

  const std::vector<std::string>& labels() const { return labels_; }
  const std::vector<std::string>& vocab() const { return vocab_; }
  double prior_alpha() const { return prior_alpha_; }
  std::size_t num_labels() const { return labels_.size(); }
  std::size_t vocab_size() const { return vocab_.size(); }

  std::optional<std::size_t> word_index(const std::string& w) const {
    auto it = word_idx_.find(w);
    if (it == word_idx_.end()) return std::nullopt;
    return it->second;
  }
  std::size_t label_index(const std::string& label) const {
    auto it = label_idx_.find(label);
    if (it == label_idx_.end()) throw DataError("unknown label: " + label);
    return it->second;
  }

  double score(std::size_t word, std::size_t label) const { return scores_[word * labels_.size() + label]; }
  double score(const std::string& word, const std::string& label) const {
    auto w = word_index(word);
    if (!w) throw DataError("word not in log-odds vocabulary: " + word);
    return score(*w, label_index(label));
  }

  // Approximate sampling variance of a score and the standardized score
  // lo / sqrt(var). Only tables built by compute_log_odds carry variances.
  bool has_variances() const { return !variances_.empty(); }
  double variance(std::size_t word, std::size_t label) const {
    if (variances_.empty()) throw DataError("log-odds table has no variances");
    return variances_[word * labels_.size() + label];
  }
  double zscore(std::size_t word, std::size_t label) const {
    return score(word, label) / std::sqrt(variance(word, label));
  }

  // word \t label \t score, one line per pair.
  void write(std::ostream& out) const {
    out << std::setprecision(17);
    for (std::size_t w = 0; w < vocab_.size(); ++w)
      for (std::size_t k = 0; k < labels_.size(); ++k) out << vocab_[w] << '\t' << labels_[k] << '\t' << score(w, k) << '\n';
  }

  static LogOddsTable read(std::istream& in, double prior_alpha = 0.0) {
    std::vector<std::string> labels, vocab;
    std::unordered_map<std::string, std::size_t> li, wi;
    std::vector<std::tuple<std::size_t, std::size_t, double>> cells;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream ss(line);
      std::string w, k;
      double s;
      if (!std::getline(ss, w, '\t') || !std::getline(ss, k, '\t') || !(ss >> s))
        throw DataError("malformed log-odds line: " + line);
      if (!wi.count(w)) {
        wi[w] = vocab.size();
        vocab.push_back(w);
      }
      if (!li.count(k)) {
        li[k] = labels.size();
        labels.push_back(k);
      }
      cells.emplace_back(wi[w], li[k], s);
    }
    std::vector<double> scores(labels.size() * vocab.size(), std::numeric_limits<double>::quiet_NaN());
    for (auto [w, k, s] : cells) scores[w * labels.size() + k] = s;
    for (double s : scores)
      if (std::isnan(s)) throw DataError("log-odds file is missing (word, label) cells");
    return LogOddsTable(std::move(labels), std::move(vocab), std::move(scores), prior_alpha);
  }

 private:
  std::vector<std::string> labels_;
  std::vector<std::string> vocab_;
  std::vector<double> scores_;  // row-major: word x label
  std::vector<double> variances_;
  double prior_alpha_ = 0.0;
  std::unordered_map<std::string, std::size_t> word_idx_;
  std::unordered_map<std::string, std::size_t> label_idx_;
};

// Default prior strength: 1% of the total token count.
inline constexpr double kDefaultPriorFraction = 0.01;

// For every word w and label k:
//   a_w   = alpha0 * y_w / n                       (informative prior)
//   lo    = log((y_kw + a_w) / (n_k + alpha0 - y_kw - a_w))
//         - log((y_rw + a_w) / (n_r + alpha0 - y_rw - a_w))
// where r is the union of all labels other than k. Positive values mean the
// word is associated with k. With two labels lo(w,k1) = -lo(w,k2).
// Variances use the usual approximation 1/(y_kw + a_w) + 1/(y_rw + a_w).
inline LogOddsTable compute_log_odds(const GroupedCounts& grouped, std::optional<double> prior_alpha = std::nullopt) {
  if (grouped.size() < 2) throw DataError("log-odds needs at least 2 labels");
  std::map<std::string, double> total_w;
  std::vector<double> n_label;
  for (const auto& [label, counts] : grouped) {
    double n = 0.0;
    for (const auto& [w, c] : counts) {
      if (c < 0.0) throw DataError("negative word count");
      if (c == 0.0) continue;
      total_w[w] += c;
      n += c;
    }
    n_label.push_back(n);
  }
  if (total_w.empty()) throw DataError("log-odds over an empty vocabulary");
  if (total_w.size() < 2) throw DataError("log-odds needs at least 2 word types");
  double n_all = 0.0;
  for (double n : n_label) n_all += n;
  const double alpha0 = prior_alpha.value_or(kDefaultPriorFraction * n_all);
  if (!(alpha0 > 0.0) || !std::isfinite(alpha0)) throw ConfigError("log-odds prior must be positive");

  std::vector<std::string> labels, vocab;
  for (const auto& [label, counts] : grouped) labels.push_back(label);
  for (const auto& [w, c] : total_w) vocab.push_back(w);

  const std::size_t L = labels.size();
  std::vector<double> scores(vocab.size() * L), variances(vocab.size() * L);
  std::size_t wi = 0;
  for (const auto& [w, yw] : total_w) {
    const double aw = alpha0 * yw / n_all;
    std::size_t k = 0;
    for (const auto& [label, counts] : grouped) {
      auto it = counts.find(w);
      const double ykw = it == counts.end() ? 0.0 : it->second;
      const double yrw = yw - ykw;
      const double nk = n_label[k];
      const double nr = n_all - nk;
      const double in_k = std::log(ykw + aw) - std::log(nk + alpha0 - ykw - aw);
      const double in_r = std::log(yrw + aw) - std::log(nr + alpha0 - yrw - aw);
      scores[wi * L + k] = in_k - in_r;
      variances[wi * L + k] = 1.0 / (ykw + aw) + 1.0 / (yrw + aw);
      ++k;
    }
    ++wi;
  }
  return LogOddsTable(std::move(labels), std::move(vocab), std::move(scores), alpha0, std::move(variances));
}

// ---------------------------------------------------------------------------
// Gender polarity diagnostics
// ---------------------------------------------------------------------------

// Ranking scale for polarity lists. Under a frequency-proportional prior the
// raw score of any word seen under one label only is log(1 + n/alpha0) no
// matter how often it occurs, so raw rankings tie all label-exclusive words;
// the standardized score separates them by evidence.
enum class PolarityScale { ZScore, Raw };

inline PolarityScale parse_polarity_scale(const std::string& s) {
  if (s == "z") return PolarityScale::ZScore;
  if (s == "raw") return PolarityScale::Raw;
  throw ConfigError("polarity scale must be 'z' or 'raw' (got '" + s + "')");
}

struct PolarWord {
  std::string word;
  double score = 0.0;     // on the ranking scale; positive = F-associated
  double log_odds = 0.0;  // raw score
  double count = 0.0;     // occurrences in the texts
};

// Log-odds of each word for F versus M over the given token lists, ranked by
// |score| descending (ties by word).
inline std::vector<PolarWord> diagnose_gender_polarity(std::span<const Tokens> texts, std::span<const Gender> genders,
                                                       std::optional<double> prior_alpha = std::nullopt,
                                                       PolarityScale scale = PolarityScale::ZScore) {
  if (texts.size() != genders.size()) throw DataError("texts and genders differ in length");
  GroupedCounts grouped{{"F", {}}, {"M", {}}};
  for (std::size_t i = 0; i < texts.size(); ++i) {
    auto& counts = grouped[std::string(to_string(genders[i]))];
    for (const auto& t : texts[i]) counts[t] += 1.0;
  }
  const auto table = compute_log_odds(grouped, prior_alpha);
  const std::size_t f = table.label_index("F");
  std::vector<PolarWord> out;
  out.reserve(table.vocab_size());
  for (std::size_t w = 0; w < table.vocab_size(); ++w) {
    const auto& word = table.vocab()[w];
    double count = 0.0;
    for (const auto& [label, counts] : grouped)
      if (auto it = counts.find(word); it != counts.end()) count += it->second;
    const double lo = table.score(w, f);
    out.push_back({word, scale == PolarityScale::ZScore ? table.zscore(w, f) : lo, lo, count});
  }
  std::sort(out.begin(), out.end(), [](const PolarWord& a, const PolarWord& b) {
    const double ma = std::abs(a.score), mb = std::abs(b.score);
    if (ma != mb) return ma > mb;
    return a.word < b.word;
  });
  return out;
}

// Polarity of post text in a corpus, optionally restricted to a post subset.
inline std::vector<PolarWord> diagnose_post_polarity(const Corpus& corpus,
                                                     const std::vector<std::string>* post_ids = nullptr,
                                                     std::optional<double> prior_alpha = std::nullopt,
                                                     PolarityScale scale = PolarityScale::ZScore) {
  std::vector<Tokens> texts;
  std::vector<Gender> genders;
  auto add = [&](const Post& p) {
    texts.push_back(p.tokens);
    genders.push_back(corpus.author(p.author_id).gender);
  };
  if (post_ids) {
    for (const auto& id : *post_ids) add(corpus.post(id));
  } else {
    for (const auto& p : corpus.posts()) add(p);
  }
  return diagnose_gender_polarity(texts, genders, prior_alpha, scale);
}

inline double max_abs_polarity(const std::vector<PolarWord>& ranked) {
  return ranked.empty() ? 0.0 : std::abs(ranked.front().score);
}

// ---------------------------------------------------------------------------
// Confound vectors
// ---------------------------------------------------------------------------

struct ConfoundOptions {
  std::size_t min_count = 5;  // vocabulary cutoff over training comments
  std::optional<double> prior_alpha;
};

struct ConfoundVector {
  std::string comment_id;
  std::vector<double> probs;  // one entry per training author
};

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double log_sum_exp(std::span<const double> xs) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : xs) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

// Per-author word likelihoods p(w|k) = sigma(lo(w,k)) / sum_v sigma(lo(v,k))
// and priors p(k) = share of training comments addressed to k. Immutable once
// fitted.
class ConfoundModel {
 public:
  ConfoundModel(LogOddsTable table, std::vector<double> prior) : table_(std::move(table)) {
    const std::size_t K = table_.num_labels(), V = table_.vocab_size();
    if (prior.size() != K) throw DataError("confound prior has wrong dimensionality");
    log_prior_.resize(K);
    for (std::size_t k = 0; k < K; ++k) log_prior_[k] = std::log(prior[k]);
    log_pw_.assign(V * K, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
      double z = 0.0;
      for (std::size_t w = 0; w < V; ++w) z += sigmoid(table_.score(w, k));
      const double log_z = std::log(z);
      for (std::size_t w = 0; w < V; ++w) log_pw_[w * K + k] = std::log(sigmoid(table_.score(w, k))) - log_z;
    }
  }

  const LogOddsTable& table() const { return table_; }
  const std::vector<std::string>& authors() const { return table_.labels(); }
  std::size_t dim() const { return table_.num_labels(); }
  double log_prior(std::size_t k) const { return log_prior_[k]; }
  double log_word_prob(std::size_t w, std::size_t k) const { return log_pw_[w * dim() + k]; }

  // p(k | tokens) computed in log space. Out-of-vocabulary tokens are skipped,
  // so an all-OOV comment gets the prior.
  std::vector<double> vector_for(std::span<const std::string> tokens) const {
    const std::size_t K = dim();
    std::vector<double> logp(log_prior_);
    for (const auto& t : tokens) {
      auto w = table_.word_index(t);
      if (!w) continue;
      for (std::size_t k = 0; k < K; ++k) logp[k] += log_pw_[*w * K + k];
    }
    const double z = log_sum_exp(logp);
    std::vector<double> out(K);
    double sum = 0.0;
    for (std::size_t k = 0; k < K; ++k) sum += (out[k] = std::exp(logp[k] - z));
    for (auto& p : out) p /= sum;
    return out;
  }

 private:
  LogOddsTable table_;
  std::vector<double> log_prior_;
  std::vector<double> log_pw_;  // word x author
};

// Fits the confound model on training comments (substituted tokens). Labels
// are the authors that receive at least one comment, in corpus order.
inline ConfoundModel fit_confound_model(const Corpus& train, const ConfoundOptions& opts = {}) {
  std::unordered_map<std::string, double> freq;
  for (const auto& c : train.comments())
    for (const auto& t : c.subst_tokens) freq[t] += 1.0;

  std::vector<std::string> authors;
  std::unordered_map<std::string, double> n_comments;
  for (const auto& c : train.comments()) n_comments[train.addressee(c).id] += 1.0;
  for (const auto& a : train.authors())
    if (n_comments.count(a.id)) authors.push_back(a.id);
  if (authors.size() < 2) throw DataError("confound vectors need at least 2 training authors with comments");

  // Labels are prefixed with their position so the map order equals corpus order.
  std::map<std::string, WordCounts> grouped;
  std::vector<std::string> keys;
  for (std::size_t k = 0; k < authors.size(); ++k) {
    std::ostringstream key;
    key << std::setw(10) << std::setfill('0') << k;
    keys.push_back(key.str());
    grouped[key.str()];
  }
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t k = 0; k < authors.size(); ++k) pos[authors[k]] = k;
  for (const auto& c : train.comments()) {
    auto& counts = grouped[keys[pos.at(train.addressee(c).id)]];
    for (const auto& t : c.subst_tokens)
      if (freq[t] >= static_cast<double>(opts.min_count)) counts[t] += 1.0;
  }
  const auto keyed = compute_log_odds(grouped, opts.prior_alpha);

  std::vector<double> scores(keyed.vocab_size() * authors.size());
  for (std::size_t w = 0; w < keyed.vocab_size(); ++w)
    for (std::size_t k = 0; k < authors.size(); ++k) scores[w * authors.size() + k] = keyed.score(w, k);
  LogOddsTable table(authors, keyed.vocab(), std::move(scores), keyed.prior_alpha());

  const double total = static_cast<double>(train.comments().size());
  std::vector<double> prior;
  for (const auto& a : authors) prior.push_back(n_comments[a] / total);
  return ConfoundModel(std::move(table), std::move(prior));
}

inline std::vector<ConfoundVector> build_confound_vectors(const Corpus& train, const ConfoundModel& model) {
  std::vector<ConfoundVector> out;
  out.reserve(train.comments().size());
  for (const auto& c : train.comments()) out.push_back({c.id, model.vector_for(c.subst_tokens)});
  return out;
}

inline std::vector<ConfoundVector> build_confound_vectors(const Corpus& train, const ConfoundOptions& opts = {}) {
  return build_confound_vectors(train, fit_confound_model(train, opts));
}

// Text container: a version header naming the author dimensions, then one
// "comment_id \t p1 p2 ... pK" line per comment.
inline void write_confound_vectors(std::ostream& out, const std::vector<std::string>& authors,
                                   const std::vector<ConfoundVector>& vecs) {
  out << "#confound-vectors v1 dim=" << authors.size() << '\n' << "#authors";
  for (const auto& a : authors) out << '\t' << a;
  out << '\n' << std::setprecision(17);
  for (const auto& v : vecs) {
    out << v.comment_id << '\t';
    for (std::size_t k = 0; k < v.probs.size(); ++k) out << (k ? " " : "") << v.probs[k];
    out << '\n';
  }
}

inline std::vector<ConfoundVector> read_confound_vectors(std::istream& in, std::vector<std::string>* authors = nullptr) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("#confound-vectors v1 dim=", 0) != 0)
    throw DataError("confound vector file: missing or unsupported version header");
  const std::size_t dim = std::stoul(line.substr(std::string("#confound-vectors v1 dim=").size()));
  if (!std::getline(in, line) || line.rfind("#authors", 0) != 0) throw DataError("confound vector file: missing author line");
  if (authors) {
    authors->clear();
    std::istringstream ss(line.substr(8));
    std::string a;
    while (std::getline(ss, a, '\t'))
      if (!a.empty()) authors->push_back(a);
  }
  std::vector<ConfoundVector> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError("confound vector file: malformed record");
    ConfoundVector v{line.substr(0, tab), {}};
    std::istringstream ss(line.substr(tab + 1));
    double p;
    while (ss >> p) v.probs.push_back(p);
    if (v.probs.size() != dim) throw DataError("confound vector file: record dimensionality mismatch");
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace biasscope
