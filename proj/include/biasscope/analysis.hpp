#pragma once

// Characterizing what a trained model flags: highest-confidence comments,
// occlusion (masking) influence per word, category-lexicon frequency
// differentials, and surfacing of strongly gendered replies to weakly
// gendered posts.
//
// Every function takes its models as "scorers": any type with
//   double score(std::span<const std::string> tokens) const
// returning the prediction score for class F.

#include <algorithm>
#include <concepts>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "biasscope/common.hpp"
#include "biasscope/corpus.hpp"

namespace biasscope {

template <typename T>
concept Scorer = requires(const T& m, std::span<const std::string> toks) {
  { m.score(toks) } -> std::convertible_to<double>;
};

struct TextItem {
  std::string id;
  Tokens tokens;
};

struct ScoredItem {
  std::string id;
  double score = 0.0;  // score for the requested class
};

// ---------------------------------------------------------------------------
// Top-confidence selection
// ---------------------------------------------------------------------------

struct TopConfident {
  std::vector<ScoredItem> items;
  bool truncated_input = false;  // fewer than n items were available
};

template <Scorer M>
TopConfident top_confident(const M& model, std::span<const TextItem> items, std::size_t n = 500,
                           Gender cls = Gender::F) {
  TopConfident out;
  out.items.reserve(items.size());
  for (const auto& it : items) {
    if (it.tokens.empty()) continue;
    const double s = model.score(it.tokens);
    out.items.push_back({it.id, cls == Gender::F ? s : 1.0 - s});
  }
  std::sort(out.items.begin(), out.items.end(), [](const ScoredItem& a, const ScoredItem& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  if (out.items.size() < n) out.truncated_input = true;
  else out.items.resize(n);
  return out;
}

// ---------------------------------------------------------------------------
// Masking influence
// ---------------------------------------------------------------------------

struct WordInfluence {
  std::string word;
  double mean_delta = 0.0;  // mean of score(original) - score(occurrence omitted)
  std::size_t count = 0;    // occurrences
};

struct MaskingReport {
  std::string source;
  std::vector<WordInfluence> words;  // descending mean_delta, ties by word
  std::size_t skipped_single_token = 0;

  std::optional<WordInfluence> find(const std::string& w) const {
    for (const auto& x : words)
      if (x.word == w) return x;
    return std::nullopt;
  }
  std::size_t rank_of(const std::string& w) const {
    for (std::size_t i = 0; i < words.size(); ++i)
      if (words[i].word == w) return i;
    return words.size();
  }
};

// For every token occurrence, rescore the comment with that one occurrence
// removed and average the score drop per word over all its occurrences.
// Single-token comments are skipped.
template <Scorer M>
MaskingReport masking_influence(const M& model, std::span<const TextItem> items, std::string source = {}) {
  std::map<std::string, std::pair<double, std::size_t>> acc;
  MaskingReport rep;
  rep.source = std::move(source);
  Tokens masked;
  for (const auto& it : items) {
    if (it.tokens.size() < 2) {
      ++rep.skipped_single_token;
      continue;
    }
    const double base = model.score(it.tokens);
    for (std::size_t i = 0; i < it.tokens.size(); ++i) {
      masked.clear();
      for (std::size_t j = 0; j < it.tokens.size(); ++j)
        if (j != i) masked.push_back(it.tokens[j]);
      auto& slot = acc[it.tokens[i]];
      slot.first += base - model.score(masked);
      slot.second += 1;
    }
  }
  for (const auto& [w, s] : acc) rep.words.push_back({w, s.first / static_cast<double>(s.second), s.second});
  std::sort(rep.words.begin(), rep.words.end(), [](const WordInfluence& a, const WordInfluence& b) {
    if (a.mean_delta != b.mean_delta) return a.mean_delta > b.mean_delta;
    return a.word < b.word;
  });
  return rep;
}

// ---------------------------------------------------------------------------
// Lemmatization and language filtering
// ---------------------------------------------------------------------------

namespace detail {
inline bool ends_with(const std::string& s, std::string_view suf) {
  return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}
inline bool is_vowel(char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u'; }
inline std::string undouble(std::string s) {
  const std::size_t n = s.size();
  if (n >= 2 && s[n - 1] == s[n - 2] && !is_vowel(s[n - 1]) && s[n - 1] != 'l' && s[n - 1] != 's' && s[n - 1] != 'z')
    s.pop_back();
  return s;
}
}  // namespace detail

// Suffix-stripping lemmatizer. Rules, first match wins; words of 3 or fewer
// characters are unchanged:
//   -ies, -ied -> -y          ladies -> lady
//   -sses -> -ss              kisses -> kiss
//   -xes, -ches, -shes -> drop "es"
//   -s (not -ss, -us, -is) -> drop
//   -ing, -ed (stem >= 3) -> drop, then undouble a final consonant
inline std::string lemmatize(const std::string& w) {
  using detail::ends_with;
  if (w.size() <= 3) return w;
  if (ends_with(w, "ies") || ends_with(w, "ied")) return w.substr(0, w.size() - 3) + "y";
  if (ends_with(w, "sses")) return w.substr(0, w.size() - 2);
  if (ends_with(w, "xes") || ends_with(w, "ches") || ends_with(w, "shes")) return w.substr(0, w.size() - 2);
  if (ends_with(w, "s") && !ends_with(w, "ss") && !ends_with(w, "us") && !ends_with(w, "is"))
    return w.substr(0, w.size() - 1);
  if (ends_with(w, "ing") && w.size() >= 6) return detail::undouble(w.substr(0, w.size() - 3));
  if (ends_with(w, "ed") && w.size() >= 5) return detail::undouble(w.substr(0, w.size() - 2));
  return w;
}

inline Tokens lemmatize(std::span<const std::string> toks) {
  Tokens out;
  out.reserve(toks.size());
  for (const auto& t : toks) out.push_back(lemmatize(t));
  return out;
}

// Heuristic English detector: share of alphabetic tokens found in a word list.
class LanguageFilter {
 public:
  LanguageFilter() = default;
  LanguageFilter(std::set<std::string> words, double min_fraction = 0.5)
      : words_(std::move(words)), min_fraction_(min_fraction) {}

  static LanguageFilter load(const std::string& path, double min_fraction = 0.5) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open word list: " + path);
    std::set<std::string> words;
    std::string w;
    while (in >> w)
      if (w[0] != '#') words.insert(w);
    return LanguageFilter(std::move(words), min_fraction);
  }

  bool enabled() const { return !words_.empty(); }

  bool accepts(std::span<const std::string> toks) const {
    if (!enabled()) return true;
    std::size_t alpha = 0, known = 0;
    for (const auto& t : toks) {
      if (t.empty() || !std::isalpha(static_cast<unsigned char>(t[0]))) continue;
      ++alpha;
      known += words_.count(t);
    }
    if (alpha == 0) return true;
    return static_cast<double>(known) / static_cast<double>(alpha) >= min_fraction_;
  }

 private:
  std::set<std::string> words_;
  double min_fraction_ = 0.5;
};

// ---------------------------------------------------------------------------
// Lexicon differentials
// ---------------------------------------------------------------------------

struct CategoryLexicon {
  std::string name;
  std::set<std::string> words;  // lemmatized

  static CategoryLexicon make(std::string name, std::span<const std::string> raw_words) {
    CategoryLexicon lex{std::move(name), {}};
    for (const auto& w : raw_words) lex.words.insert(lemmatize(w));
    if (lex.words.empty()) throw ConfigError("category lexicon " + lex.name + " is empty");
    return lex;
  }

  // One word per line; the file stem is the category name.
  static CategoryLexicon load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open lexicon: " + path.string());
    Tokens words;
    std::string w;
    while (std::getline(in, w)) {
      if (w.empty() || w[0] == '#') continue;
      for (auto& ch : w) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
      words.push_back(w);
    }
    return make(path.stem().string(), words);
  }

  static std::vector<CategoryLexicon> load_dir(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir))
      if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<CategoryLexicon> out;
    for (const auto& f : files) out.push_back(load(f));
    if (out.empty()) throw ConfigError("no lexicon files (*.txt) in " + dir.string());
    return out;
  }
};

// Lexicon hits divided by total tokens, per category, for one set of
// (already lemmatized) token lists.
inline std::map<std::string, double> category_frequencies(std::span<const Tokens> set,
                                                          std::span<const CategoryLexicon> lexicons) {
  std::map<std::string, double> out;
  std::size_t total = 0;
  for (const auto& t : set) total += t.size();
  for (const auto& lex : lexicons) {
    std::size_t hits = 0;
    for (const auto& toks : set)
      for (const auto& w : toks) hits += lex.words.count(w);
    out[lex.name] = total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
  }
  return out;
}

struct LexiconDifferential {
  std::map<std::string, double> high;        // frequency in the high-confidence set
  std::map<std::string, double> comparison;  // mean frequency over comparison samples
  std::map<std::string, double> diff;        // high - comparison
  std::size_t high_size = 0;
  std::size_t comparison_size = 0;

  // Category with the largest differential (ties by name).
  std::string top_category() const {
    std::string best;
    double v = 0.0;
    for (const auto& [k, d] : diff)
      if (best.empty() || d > v) {
        best = k;
        v = d;
      }
    return best;
  }
};

// Differential between one set and the average of one or more comparison sets.
inline LexiconDifferential lexicon_differential_between(std::span<const Tokens> high,
                                                        std::span<const std::vector<Tokens>> comparisons,
                                                        std::span<const CategoryLexicon> lexicons) {
  LexiconDifferential out;
  out.high = category_frequencies(high, lexicons);
  out.high_size = high.size();
  for (const auto& lex : lexicons) out.comparison[lex.name] = 0.0;
  for (const auto& cmp : comparisons) {
    const auto f = category_frequencies(cmp, lexicons);
    for (const auto& [k, v] : f) out.comparison[k] += v / static_cast<double>(comparisons.size());
    out.comparison_size = cmp.size();
  }
  for (const auto& lex : lexicons) out.diff[lex.name] = out.high[lex.name] - out.comparison[lex.name];
  return out;
}

struct LabeledText {
  std::string id;
  Tokens tokens;
  Gender gold = Gender::M;
};

struct DifferentialOptions {
  double threshold = 0.99;
  int samples = 2;  // comparison draws, frequencies averaged
  std::uint64_t seed = 1;
  const LanguageFilter* filter = nullptr;
};

// High-confidence set: comments with score >= threshold. Comparison: random
// gold-F samples of the same size (or all gold-F comments if fewer), drawn
// `samples` times with consecutive seeds. Text and lexicons are lemmatized.
template <Scorer M>
LexiconDifferential lexicon_differential(const M& model, std::span<const LabeledText> test,
                                         std::span<const CategoryLexicon> lexicons, const DifferentialOptions& opts) {
  std::vector<Tokens> high;
  std::vector<const LabeledText*> female;
  for (const auto& c : test) {
    if (c.tokens.empty()) continue;
    if (opts.filter && !opts.filter->accepts(c.tokens)) continue;
    if (model.score(c.tokens) >= opts.threshold) high.push_back(lemmatize(c.tokens));
    if (c.gold == Gender::F) female.push_back(&c);
  }
  if (high.empty())
    throw DataError("no comments reach the confidence threshold " + std::to_string(opts.threshold) +
                    "; try a lower threshold");
  if (female.empty()) throw DataError("no gold-F comments to sample a comparison set from");
  std::vector<std::vector<Tokens>> comparisons;
  const std::size_t k = std::min(high.size(), female.size());
  for (int s = 0; s < std::max(1, opts.samples); ++s) {
    std::vector<std::size_t> idx(female.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(opts.seed + static_cast<std::uint64_t>(s));
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<Tokens> sample;
    for (std::size_t i = 0; i < k; ++i) sample.push_back(lemmatize(female[idx[i]]->tokens));
    comparisons.push_back(std::move(sample));
  }
  return lexicon_differential_between(high, comparisons, lexicons);
}

// ---------------------------------------------------------------------------
// Surfacing examples
// ---------------------------------------------------------------------------

struct SurfacedExample {
  std::string post_id;
  std::string comment_id;
  double post_score = 0.0;     // propensity model on the post
  double comment_score = 0.0;  // bias model on the comment
};

// Comments with score > comment_threshold replying to posts with propensity
// score < post_threshold, ordered by comment score (descending).
template <Scorer P, Scorer B>
std::vector<SurfacedExample> surface_examples(const P& propensity, const B& bias, const Corpus& corpus,
                                              double post_threshold = 0.6, double comment_threshold = 0.9) {
  std::unordered_map<std::string, double> post_scores;
  std::vector<SurfacedExample> out;
  for (const auto& c : corpus.comments()) {
    if (c.subst_tokens.empty()) continue;
    auto it = post_scores.find(c.post_id);
    if (it == post_scores.end()) it = post_scores.emplace(c.post_id, propensity.score(corpus.post(c.post_id).tokens)).first;
    if (!(it->second < post_threshold)) continue;
    const double cs = bias.score(c.subst_tokens);
    if (cs > comment_threshold) out.push_back({c.post_id, c.id, it->second, cs});
  }
  std::sort(out.begin(), out.end(), [](const SurfacedExample& a, const SurfacedExample& b) {
    if (a.comment_score != b.comment_score) return a.comment_score > b.comment_score;
    return a.comment_id < b.comment_id;
  });
  return out;
}

// Convenience views over a corpus.
inline std::vector<TextItem> comment_items(const Corpus& corpus) {
  std::vector<TextItem> out;
  for (const auto& c : corpus.comments()) out.push_back({c.id, c.subst_tokens});
  return out;
}

inline std::vector<LabeledText> labeled_comments(const Corpus& corpus) {
  std::vector<LabeledText> out;
  for (const auto& c : corpus.comments()) out.push_back({c.id, c.subst_tokens, corpus.gender_of(c)});
  return out;
}

}  // namespace biasscope
