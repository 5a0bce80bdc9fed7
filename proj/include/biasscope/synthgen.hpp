#pragma once

// Synthetic post/comment corpora with known confound and bias signals.
//
// Every comment is Zipfian background text plus optional injected tokens:
//   confound  author-specific tokens ("place<author>", "place<author>_1", ...),
//             all injected together with probability confound_prob
//   bias      gender-wide marker, probability bias_prob_f / bias_prob_m
//   echo      the bias marker again, replying to a post carrying the F topic
//             token (solicited), probability echo_prob
//   name      one of the addressee's name tokens, probability name_prob
//   overt     an overt gendered term (she/he ...), probability overt_prob
// Posts carry a gendered topic token with probability topic_strength, which
// makes post text an observed confound of the addressee's gender.

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "biasscope/common.hpp"
#include "biasscope/corpus.hpp"
#include "biasscope/evalharness.hpp"

namespace biasscope {

struct SynthSpec {
  int authors_per_gender = 20;
  int posts_per_author = 20;
  int comments_per_post = 3;
  int base_vocab = 300;
  double zipf_exponent = 1.0;
  int post_length = 8;
  int comment_length = 8;  // background tokens per comment

  int confound_tokens = 1;  // distinct confound tokens per author
  double confound_prob = 0.5;
  double bias_prob_f = 0.35;
  double bias_prob_m = 0.05;
  double topic_strength = 0.3;
  double echo_prob = 0.8;
  double name_prob = 0.2;
  double overt_prob = 0.2;

  std::string bias_token = "beautiful";
  std::string topic_token_f = "lookok";
  std::string topic_token_m = "budget";
  std::uint64_t seed = 7;

  void validate() const {
    std::vector<std::string> bad;
    if (authors_per_gender < 1) bad.push_back("authors_per_gender must be >= 1");
    if (posts_per_author < 1) bad.push_back("posts_per_author must be >= 1");
    if (comments_per_post < 1) bad.push_back("comments_per_post must be >= 1");
    if (base_vocab < 1) bad.push_back("base_vocab must be >= 1");
    if (post_length < 1 || comment_length < 1) bad.push_back("lengths must be >= 1");
    if (confound_tokens < 1) bad.push_back("confound_tokens must be >= 1");
    for (double p : {confound_prob, bias_prob_f, bias_prob_m, topic_strength, echo_prob, name_prob, overt_prob})
      if (!(p >= 0.0 && p <= 1.0)) bad.push_back("probabilities must be in [0,1]");
    if (!bad.empty()) {
      std::string msg = "invalid synthetic spec:";
      for (const auto& b : bad) msg += " " + b + ";";
      throw ConfigError(msg);
    }
  }

  std::size_t comments_per_author() const {
    return static_cast<std::size_t>(posts_per_author) * static_cast<std::size_t>(comments_per_post);
  }
};

inline nlohmann::json to_json(const SynthSpec& s) {
  return {{"authors_per_gender", s.authors_per_gender}, {"posts_per_author", s.posts_per_author},
          {"comments_per_post", s.comments_per_post},   {"base_vocab", s.base_vocab},
          {"zipf_exponent", s.zipf_exponent},           {"post_length", s.post_length},
          {"comment_length", s.comment_length},         {"confound_tokens", s.confound_tokens},
          {"confound_prob", s.confound_prob},
          {"bias_prob_f", s.bias_prob_f},               {"bias_prob_m", s.bias_prob_m},
          {"topic_strength", s.topic_strength},         {"echo_prob", s.echo_prob},
          {"name_prob", s.name_prob},                   {"overt_prob", s.overt_prob},
          {"bias_token", s.bias_token},                 {"topic_token_f", s.topic_token_f},
          {"topic_token_m", s.topic_token_m},           {"seed", s.seed}};
}

inline SynthSpec synth_spec_from_json(const nlohmann::json& j, SynthSpec s = {}) {
  s.authors_per_gender = j.value("authors_per_gender", s.authors_per_gender);
  s.posts_per_author = j.value("posts_per_author", s.posts_per_author);
  s.comments_per_post = j.value("comments_per_post", s.comments_per_post);
  s.base_vocab = j.value("base_vocab", s.base_vocab);
  s.zipf_exponent = j.value("zipf_exponent", s.zipf_exponent);
  s.post_length = j.value("post_length", s.post_length);
  s.comment_length = j.value("comment_length", s.comment_length);
  s.confound_tokens = j.value("confound_tokens", s.confound_tokens);
  s.confound_prob = j.value("confound_prob", s.confound_prob);
  s.bias_prob_f = j.value("bias_prob_f", s.bias_prob_f);
  s.bias_prob_m = j.value("bias_prob_m", s.bias_prob_m);
  s.topic_strength = j.value("topic_strength", s.topic_strength);
  s.echo_prob = j.value("echo_prob", s.echo_prob);
  s.name_prob = j.value("name_prob", s.name_prob);
  s.overt_prob = j.value("overt_prob", s.overt_prob);
  s.bias_token = j.value("bias_token", s.bias_token);
  s.topic_token_f = j.value("topic_token_f", s.topic_token_f);
  s.topic_token_m = j.value("topic_token_m", s.topic_token_m);
  s.seed = j.value("seed", s.seed);
  return s;
}

struct SynthRow {
  std::string author_id;
  Gender gender;
  std::string author_name;
  std::string post_id;
  std::string post_text;
  std::string comment_text;
  std::string comment_id;
};

struct CommentTruth {
  std::string comment_id;
  std::string post_id;
  std::string author_id;
  Gender gender;
  bool confound = false;
  bool bias = false;       // unsolicited marker
  bool echo = false;       // solicited marker (post has the F topic token)
  bool name = false;
  bool overt = false;
  bool topic_post = false;  // parent post carries a topic token
};

struct GroundTruth {
  std::map<std::string, std::vector<std::string>> confound_tokens;  // author -> tokens
  std::string bias_token;
  std::string topic_token_f;
  std::string topic_token_m;
  std::map<std::string, bool> post_has_topic;
  std::vector<CommentTruth> comments;

  nlohmann::json to_json() const {
    nlohmann::json cs = nlohmann::json::array();
    for (const auto& c : comments)
      cs.push_back({{"comment_id", c.comment_id}, {"post_id", c.post_id}, {"author_id", c.author_id},
                    {"gender", to_string(c.gender)}, {"confound", c.confound}, {"bias", c.bias},
                    {"echo", c.echo}, {"name", c.name}, {"overt", c.overt}, {"topic_post", c.topic_post}});
    return {{"confound_tokens", confound_tokens}, {"bias_tokens", {bias_token}},
            {"topic_tokens", {{"F", topic_token_f}, {"M", topic_token_m}}}, {"post_has_topic", post_has_topic},
            {"comments", cs}};
  }
};

struct SynthCorpus {
  std::vector<SynthRow> rows;
  GroundTruth truth;

  // Rows in the ingest format (tab-separated, header, comment_id column).
  void write_rows(std::ostream& out) const {
    out << "author_id\tgender\tauthor_name\tpost_id\tpost_text\tcomment_text\tcomment_id\n";
    for (const auto& r : rows)
      out << r.author_id << '\t' << to_string(r.gender) << '\t' << r.author_name << '\t' << r.post_id << '\t'
          << r.post_text << '\t' << r.comment_text << '\t' << r.comment_id << '\n';
  }
};

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::string join(const std::vector<std::string>& toks) {
  std::string s;
  for (const auto& t : toks) {
    if (!s.empty()) s.push_back(' ');
    s += t;
  }
  return s;
}

// Inserts tok at a uniformly random position.
inline void insert_random(std::vector<std::string>& toks, const std::string& tok, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pos(0, toks.size());
  toks.insert(toks.begin() + static_cast<std::ptrdiff_t>(pos(rng)), tok);
}
}  // namespace detail

inline std::string synth_author_id(Gender g, int i) {
  std::ostringstream s;
  s << (g == Gender::F ? 'f' : 'm') << std::setw(3) << std::setfill('0') << i;
  return s.str();
}

// Deterministic for a fixed spec; each author draws from its own stream.
inline SynthCorpus generate(const SynthSpec& spec) {
  spec.validate();
  std::vector<double> weights(static_cast<std::size_t>(spec.base_vocab));
  for (std::size_t r = 0; r < weights.size(); ++r) weights[r] = 1.0 / std::pow(static_cast<double>(r + 1), spec.zipf_exponent);
  std::discrete_distribution<int> zipf(weights.begin(), weights.end());
  auto background = [&](int n, std::mt19937_64& rng) {
    std::vector<std::string> toks;
    for (int i = 0; i < n; ++i) toks.push_back("w" + std::to_string(zipf(rng)));
    return toks;
  };
  static const std::vector<std::string> overt_f{"she", "her", "woman", "lady", "girl"};
  static const std::vector<std::string> overt_m{"he", "his", "man", "gentleman", "boy"};

  SynthCorpus out;
  out.truth.bias_token = spec.bias_token;
  out.truth.topic_token_f = spec.topic_token_f;
  out.truth.topic_token_m = spec.topic_token_m;

  int author_index = 0;
  for (Gender g : {Gender::F, Gender::M}) {
    for (int a = 0; a < spec.authors_per_gender; ++a, ++author_index) {
      const std::string aid = synth_author_id(g, a);
      std::mt19937_64 rng(detail::splitmix64(spec.seed ^ detail::splitmix64(static_cast<std::uint64_t>(author_index))));
      std::bernoulli_distribution coin;
      auto flip = [&](double p) { return std::bernoulli_distribution(p)(rng); };
      const std::string first = "first" + aid, last = "last" + aid;
      auto& confound = out.truth.confound_tokens[aid];
      for (int k = 0; k < spec.confound_tokens; ++k)
        confound.push_back("place" + aid + (k ? "_" + std::to_string(k) : std::string()));
      const double bias_p = g == Gender::F ? spec.bias_prob_f : spec.bias_prob_m;
      const auto& overt = g == Gender::F ? overt_f : overt_m;
      std::uniform_int_distribution<std::size_t> pick_overt(0, overt.size() - 1);

      for (int p = 0; p < spec.posts_per_author; ++p) {
        const std::string pid = aid + "_p" + std::to_string(p);
        auto post = background(spec.post_length, rng);
        const bool topic = flip(spec.topic_strength);
        if (topic) detail::insert_random(post, g == Gender::F ? spec.topic_token_f : spec.topic_token_m, rng);
        out.truth.post_has_topic[pid] = topic;
        const std::string post_text = detail::join(post);

        for (int c = 0; c < spec.comments_per_post; ++c) {
          CommentTruth t;
          t.comment_id = pid + "_c" + std::to_string(c);
          t.post_id = pid;
          t.author_id = aid;
          t.gender = g;
          t.topic_post = topic;
          auto text = background(spec.comment_length, rng);
          if ((t.confound = flip(spec.confound_prob)))
            for (const auto& tok : confound) detail::insert_random(text, tok, rng);
          if ((t.bias = flip(bias_p))) detail::insert_random(text, spec.bias_token, rng);
          if (topic && g == Gender::F && (t.echo = flip(spec.echo_prob))) detail::insert_random(text, spec.bias_token, rng);
          if ((t.name = flip(spec.name_prob))) detail::insert_random(text, coin(rng) ? first : last, rng);
          if ((t.overt = flip(spec.overt_prob))) detail::insert_random(text, overt[pick_overt(rng)], rng);
          out.rows.push_back({aid, g, first + " " + last, pid, post_text, detail::join(text), t.comment_id});
          out.truth.comments.push_back(std::move(t));
        }
      }
    }
  }
  return out;
}

// Builds a corpus directly from synthetic rows (same result as ingesting the
// written rows).
inline Corpus to_corpus(const SynthCorpus& synth) {
  Corpus corpus;
  for (const auto& r : synth.rows) {
    if (!corpus.has_author(r.author_id)) corpus.add_author({r.author_id, r.gender, tokenize(r.author_name)});
    if (!corpus.has_post(r.post_id)) corpus.add_post({r.post_id, r.author_id, tokenize(r.post_text)});
    auto toks = tokenize(r.comment_text);
    corpus.add_comment({r.comment_id, r.post_id, toks, toks});
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Tagged posts for the transfer protocol
// ---------------------------------------------------------------------------

struct SynthTaggedSpec {
  std::size_t n = 1000;
  double gender_rate = 0.561;  // share of gender-tagged posts
  double marker_prob = 0.7;    // gender-tagged posts carrying the bias marker
  double noise_prob = 0.05;    // other posts carrying it
  int length = 8;
  int base_vocab = 300;
  std::string marker = "beautiful";
  std::uint64_t seed = 11;
};

inline std::vector<TaggedPost> generate_tagged(const SynthTaggedSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::vector<double> weights(static_cast<std::size_t>(spec.base_vocab));
  for (std::size_t r = 0; r < weights.size(); ++r) weights[r] = 1.0 / static_cast<double>(r + 1);
  std::discrete_distribution<int> zipf(weights.begin(), weights.end());
  const auto n_gender = static_cast<std::size_t>(std::llround(spec.gender_rate * static_cast<double>(spec.n)));
  std::vector<TaggedPost> out;
  for (std::size_t i = 0; i < spec.n; ++i) {
    TaggedPost p;
    p.post_id = "t" + std::to_string(i);
    p.tag = i < n_gender ? PostTag::Gender : PostTag::Other;
    for (int k = 0; k < spec.length; ++k) p.tokens.push_back("w" + std::to_string(zipf(rng)));
    const double pm = p.tag == PostTag::Gender ? spec.marker_prob : spec.noise_prob;
    if (std::bernoulli_distribution(pm)(rng)) detail::insert_random(p.tokens, spec.marker, rng);
    out.push_back(std::move(p));
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

}  // namespace biasscope
