#pragma once

// Corpus data model: authors (addressees), their posts, and the comments
// replying to those posts. Also the text normalization applied before any
// statistics are computed: tokenization, overt-term substitution and name
// scrubbing, the short-comment filter, and author-disjoint splitting.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "biasscope/common.hpp"

namespace biasscope {

using Tokens = std::vector<std::string>;

struct Author {
  std::string id;
  Gender gender = Gender::M;
  Tokens name_tokens;  // lowercase first + last name; may be empty
};

struct Post {
  std::string id;
  std::string author_id;
  Tokens tokens;
};

struct Comment {
  std::string id;
  std::string post_id;
  Tokens raw_tokens;
  Tokens subst_tokens;  // same length as raw_tokens
};

// Owns authors, posts and comments and keeps id -> index lookups in sync.
// Records are only added through the add_* members.
class Corpus {
 public:
  const std::vector<Author>& authors() const { return authors_; }
  const std::vector<Post>& posts() const { return posts_; }
  const std::vector<Comment>& comments() const { return comments_; }
  std::vector<Comment>& mutable_comments() { return comments_; }

  bool has_author(std::string_view id) const { return author_idx_.count(std::string(id)) > 0; }
  bool has_post(std::string_view id) const { return post_idx_.count(std::string(id)) > 0; }

  const Author& author(std::string_view id) const {
    auto it = author_idx_.find(std::string(id));
    if (it == author_idx_.end()) throw DataError("unknown author id: " + std::string(id));
    return authors_[it->second];
  }
  const Post& post(std::string_view id) const {
    auto it = post_idx_.find(std::string(id));
    if (it == post_idx_.end()) throw DataError("unknown post id: " + std::string(id));
    return posts_[it->second];
  }
  const Author& author_of_post(std::string_view post_id) const {
    return author(post(post_id).author_id);
  }
  const Author& addressee(const Comment& c) const { return author_of_post(c.post_id); }
  Gender gender_of(const Comment& c) const { return addressee(c).gender; }

  void add_author(Author a) {
    if (has_author(a.id)) throw DataError("duplicate author id: " + a.id);
    author_idx_.emplace(a.id, authors_.size());
    authors_.push_back(std::move(a));
  }
  void add_post(Post p) {
    if (!has_author(p.author_id)) throw DataError("post " + p.id + " references unknown author " + p.author_id);
    if (p.tokens.empty()) throw DataError("post " + p.id + " has no tokens");
    if (has_post(p.id)) throw DataError("duplicate post id: " + p.id);
    post_idx_.emplace(p.id, posts_.size());
    posts_.push_back(std::move(p));
  }
  void add_comment(Comment c) {
    if (!has_post(c.post_id)) throw DataError("comment " + c.id + " references unknown post " + c.post_id);
    if (c.subst_tokens.empty() && !c.raw_tokens.empty()) c.subst_tokens = c.raw_tokens;
    if (c.subst_tokens.size() != c.raw_tokens.size())
      throw DataError("comment " + c.id + ": substituted length differs from raw length");
    comments_.push_back(std::move(c));
  }

  // Keeps the comments for which keep(comment) is true. Authors and posts stay.
  template <typename Pred>
  void retain_comments(Pred keep) {
    std::erase_if(comments_, [&](const Comment& c) { return !keep(c); });
  }

  // Sub-corpus restricted to the given author ids, in original record order.
  Corpus restricted_to(const std::unordered_set<std::string>& author_ids) const {
    Corpus out;
    for (const auto& a : authors_)
      if (author_ids.count(a.id)) out.add_author(a);
    for (const auto& p : posts_)
      if (author_ids.count(p.author_id)) out.add_post(p);
    for (const auto& c : comments_)
      if (author_ids.count(post(c.post_id).author_id)) out.add_comment(c);
    return out;
  }

 private:
  std::vector<Author> authors_;
  std::vector<Post> posts_;
  std::vector<Comment> comments_;
  std::unordered_map<std::string, std::size_t> author_idx_;
  std::unordered_map<std::string, std::size_t> post_idx_;
};

// ---------------------------------------------------------------------------
// Tokenization
// ---------------------------------------------------------------------------

namespace detail {
inline bool is_word_byte(unsigned char ch) {
  return std::isalnum(ch) != 0 || ch >= 0x80 || ch == '_';
}
}  // namespace detail

// Rule-based tokenizer:
//   * ASCII letters are lowercased; bytes >= 0x80 (UTF-8) are word characters.
//   * Runs of letters, digits, '_' and non-ASCII bytes form word tokens.
//   * An apostrophe directly between word characters starts a clitic token
//     ("warren's" -> warren 's, "you're" -> you 're).
//   * Every other non-space character is a token by itself.
//   * Whitespace only separates.
inline Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  const std::size_t n = text.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto ch = static_cast<unsigned char>(text[i]);
    if (std::isspace(ch)) {
      flush();
    } else if (detail::is_word_byte(ch)) {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    } else if (ch == '\'' && !cur.empty() && i + 1 < n &&
               detail::is_word_byte(static_cast<unsigned char>(text[i + 1]))) {
      flush();
      cur.push_back('\'');
    } else {
      flush();
      out.emplace_back(1, static_cast<char>(ch));
    }
  }
  flush();
  return out;
}

// ---------------------------------------------------------------------------
// Substitution of overt gender signals
// ---------------------------------------------------------------------------

inline constexpr std::string_view kNamePlaceholder = "<name>";

class SubstitutionLexicon {
 public:
  SubstitutionLexicon() = default;

  void add(std::string term, std::string placeholder) {
    if (term.empty() || placeholder.empty()) throw ConfigError("empty substitution entry");
    if (placeholders_.count(term)) throw ConfigError("substitution term is also a placeholder: " + term);
    if (map_.count(placeholder)) throw ConfigError("placeholder is also a substitution term: " + placeholder);
    auto [it, inserted] = map_.emplace(term, placeholder);
    if (!inserted && it->second != placeholder)
      throw ConfigError("conflicting placeholders for term: " + term);
    placeholders_.insert(std::move(placeholder));
  }

  const std::string* lookup(const std::string& token) const {
    auto it = map_.find(token);
    return it == map_.end() ? nullptr : &it->second;
  }

  std::size_t size() const { return map_.size(); }
  bool empty() const { return map_.empty(); }
  const std::map<std::string, std::string>& entries() const { return map_; }
  const std::set<std::string>& placeholders() const { return placeholders_; }

  // Placeholders reached by a single term. Every gendered pair should share
  // its placeholder, so a well-formed default lexicon returns nothing here.
  std::vector<std::string> unpaired_placeholders() const {
    std::map<std::string, int> uses;
    for (const auto& [term, ph] : map_) ++uses[ph];
    std::vector<std::string> out;
    for (const auto& [ph, n] : uses)
      if (n < 2) out.push_back(ph);
    return out;
  }

  // Two columns (term, placeholder) separated by a tab or spaces. Blank lines
  // and lines starting with '#' are skipped.
  static SubstitutionLexicon parse(std::istream& in) {
    SubstitutionLexicon lex;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ss(line);
      std::string term, ph, extra;
      if (!(ss >> term >> ph) || (ss >> extra))
        throw ConfigError("substitution lexicon line " + std::to_string(lineno) + ": expected 2 columns");
      lex.add(term, ph);
    }
    return lex;
  }

  static SubstitutionLexicon load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open substitution lexicon: " + path);
    return parse(in);
  }

 private:
  std::map<std::string, std::string> map_;
  std::set<std::string> placeholders_;
};

// Replaces lexicon terms with their placeholder and the addressee's name
// tokens with <name>. Length-preserving; idempotent because placeholders are
// never lexicon terms and never tokenizer output.
inline Tokens apply_substitutions(std::span<const std::string> tokens, const SubstitutionLexicon& lexicon,
                                  const Author& author) {
  Tokens out;
  out.reserve(tokens.size());
  for (const auto& tok : tokens) {
    if (std::find(author.name_tokens.begin(), author.name_tokens.end(), tok) != author.name_tokens.end()) {
      out.emplace_back(kNamePlaceholder);
    } else if (const auto* ph = lexicon.lookup(tok)) {
      out.push_back(*ph);
    } else {
      out.push_back(tok);
    }
  }
  return out;
}

// Recomputes subst_tokens of every comment from its raw tokens.
inline void substitute_corpus(Corpus& corpus, const SubstitutionLexicon& lexicon) {
  std::vector<Tokens> fresh;
  fresh.reserve(corpus.comments().size());
  for (const auto& c : corpus.comments())
    fresh.push_back(apply_substitutions(c.raw_tokens, lexicon, corpus.addressee(c)));
  auto& comments = corpus.mutable_comments();
  for (std::size_t i = 0; i < comments.size(); ++i) comments[i].subst_tokens = std::move(fresh[i]);
}

// ---------------------------------------------------------------------------
// Filtering and splitting
// ---------------------------------------------------------------------------

inline constexpr std::size_t kDefaultMinTokens = 4;

inline std::vector<Comment> filter_short(std::vector<Comment> comments, std::size_t min_tokens = kDefaultMinTokens) {
  std::erase_if(comments, [&](const Comment& c) { return c.subst_tokens.size() < min_tokens; });
  return comments;
}

inline void filter_short(Corpus& corpus, std::size_t min_tokens = kDefaultMinTokens) {
  corpus.retain_comments([&](const Comment& c) { return c.subst_tokens.size() >= min_tokens; });
}

enum class SplitName { Train = 0, Dev = 1, Test = 2 };

inline constexpr std::string_view to_string(SplitName s) {
  switch (s) {
    case SplitName::Train: return "train";
    case SplitName::Dev: return "dev";
    case SplitName::Test: return "test";
  }
  return "?";
}

struct SplitRatios {
  double train = 0.8;
  double dev = 0.1;
  double test = 0.1;
  std::array<double, 3> as_array() const { return {train, dev, test}; }
};

struct CorpusSplit {
  Corpus train;
  Corpus dev;
  Corpus test;
  std::map<std::string, SplitName> assignment;  // author_id -> split

  const Corpus& part(SplitName s) const {
    return s == SplitName::Train ? train : s == SplitName::Dev ? dev : test;
  }
};

inline void validate_ratios(const SplitRatios& r) {
  const auto a = r.as_array();
  for (double v : a)
    if (!(v >= 0.0)) throw ConfigError("split ratios must be non-negative");
  const double sum = a[0] + a[1] + a[2];
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1 (got " + std::to_string(sum) + ")");
}

// Assigns whole authors to train/dev/test. Authors are shuffled per gender
// with the seed and interleaved (F, M, F, M, ...) so that genders spread
// across splits; each author then goes to the split whose comment count is
// furthest below its target share. Splits with a positive ratio first receive
// one author each.
inline std::map<std::string, SplitName> assign_authors(const Corpus& corpus, const SplitRatios& ratios,
                                                       std::uint64_t seed) {
  validate_ratios(ratios);
  if (corpus.authors().size() < 3) throw DataError("split_by_author needs at least 3 authors");

  std::unordered_map<std::string, double> weight;
  for (const auto& a : corpus.authors()) weight[a.id] = 0.0;
  for (const auto& c : corpus.comments()) weight[corpus.addressee(c).id] += 1.0;

  std::vector<std::string> fem, mal;
  for (const auto& a : corpus.authors()) (a.gender == Gender::F ? fem : mal).push_back(a.id);
  std::mt19937_64 rng(seed);
  std::shuffle(fem.begin(), fem.end(), rng);
  std::shuffle(mal.begin(), mal.end(), rng);
  std::vector<std::string> order;
  for (std::size_t i = 0; i < std::max(fem.size(), mal.size()); ++i) {
    if (i < fem.size()) order.push_back(fem[i]);
    if (i < mal.size()) order.push_back(mal[i]);
  }

  const auto target_frac = ratios.as_array();
  double total = 0.0;
  for (const auto& [id, w] : weight) total += w;
  std::array<double, 3> filled{0.0, 0.0, 0.0};
  std::map<std::string, SplitName> out;

  std::size_t next = 0;
  for (int s = 0; s < 3 && next < order.size(); ++s) {
    if (target_frac[s] <= 0.0) continue;
    out[order[next]] = static_cast<SplitName>(s);
    filled[s] += weight[order[next]];
    ++next;
  }
  for (; next < order.size(); ++next) {
    int best = -1;
    double best_deficit = 0.0;
    for (int s = 0; s < 3; ++s) {
      if (target_frac[s] <= 0.0) continue;
      const double deficit = target_frac[s] * total - filled[s];
      if (best < 0 || deficit > best_deficit) {
        best = s;
        best_deficit = deficit;
      }
    }
    out[order[next]] = static_cast<SplitName>(best);
    filled[best] += weight[order[next]];
  }
  return out;
}

inline CorpusSplit materialize_split(const Corpus& corpus, const std::map<std::string, SplitName>& assignment) {
  std::array<std::unordered_set<std::string>, 3> ids;
  for (const auto& [id, s] : assignment) ids[static_cast<int>(s)].insert(id);
  CorpusSplit out;
  out.train = corpus.restricted_to(ids[0]);
  out.dev = corpus.restricted_to(ids[1]);
  out.test = corpus.restricted_to(ids[2]);
  out.assignment = assignment;
  return out;
}

inline CorpusSplit split_by_author(const Corpus& corpus, const SplitRatios& ratios, std::uint64_t seed) {
  return materialize_split(corpus, assign_authors(corpus, ratios, seed));
}

// True when no author id appears in more than one split.
inline bool authors_disjoint(const CorpusSplit& split) {
  std::unordered_set<std::string> seen;
  for (const Corpus* part : {&split.train, &split.dev, &split.test})
    for (const auto& a : part->authors())
      if (!seen.insert(a.id).second) return false;
  return true;
}

}  // namespace biasscope
