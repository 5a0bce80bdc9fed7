#pragma once

// Observed-confound control over post text: a propensity model estimating
// e = P(author is F | post text), greedy nearest-neighbour matching of F and
// M posts under a caliper, and per-pair comment downsampling.

#include <algorithm>
#include <cmath>
#include <istream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "biasscope/biasmodel.hpp"
#include "biasscope/common.hpp"
#include "biasscope/corpus.hpp"

namespace biasscope {

// ---------------------------------------------------------------------------
// Propensity model
// ---------------------------------------------------------------------------

struct PropensityOptions {
  ModelConfig model;
  int epochs = 5;
  double learning_rate = 1e-3;
  int batch_size = 64;
  std::uint64_t seed = 1;
};

class PropensityModel {
 public:
  PropensityModel() = default;
  explicit PropensityModel(nn::TextClassifier net, ModelConfig cfg) : net_(std::move(net)), cfg_(std::move(cfg)) {}

  // e = P(F | post tokens).
  double score(std::span<const std::string> tokens) const {
    if (tokens.empty()) throw DataError("cannot score an empty post");
    return net_.gender_probs(tokens)(index_of(Gender::F));
  }

  const nn::TextClassifier& net() const { return net_; }
  double best_dev_accuracy() const { return best_dev_accuracy_; }

  void save(std::ostream& out) const {
    nlohmann::json meta{{"kind", "propensity_model"}, {"config", to_json(cfg_)}};
    nn::write_checkpoint(out, meta, net_.vocab().tokens(), net_.named_params());
  }
  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write model: " + path);
    save(out);
  }
  static PropensityModel load(std::istream& in) {
    auto ck = nn::read_checkpoint(in);
    if (ck.metadata.value("kind", "") != "propensity_model") throw DataError("checkpoint is not a propensity model");
    const auto cfg = model_config_from_json(ck.metadata.at("config"));
    nn::TextClassifier net(nn::Vocab::from_tokens(ck.vocabulary), cfg.net);
    nn::load_tensors(ck, net.all_params());
    return PropensityModel(std::move(net), cfg);
  }
  static PropensityModel load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open model: " + path);
    return load(in);
  }

 private:
  friend PropensityModel train_propensity_model(const Corpus&, const Corpus&, const PropensityOptions&);
  nn::TextClassifier net_;
  ModelConfig cfg_;
  double best_dev_accuracy_ = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {
inline std::vector<nn::Example> post_examples(const nn::Vocab& vocab, const Corpus& corpus) {
  std::vector<nn::Example> out;
  out.reserve(corpus.posts().size());
  for (const auto& p : corpus.posts())
    out.push_back({vocab.encode(p.tokens), index_of(corpus.author(p.author_id).gender), nullptr});
  return out;
}
}  // namespace detail

// Cross-entropy training of gender given post text; the kept checkpoint is
// the best one by accuracy on dev posts.
inline PropensityModel train_propensity_model(const Corpus& train, const Corpus& dev, const PropensityOptions& opts) {
  bool has_f = false, has_m = false;
  for (const auto& p : train.posts()) (train.author(p.author_id).gender == Gender::F ? has_f : has_m) = true;
  if (!has_f || !has_m) throw DataError("propensity training needs posts from both genders");

  std::vector<Tokens> texts;
  for (const auto& p : train.posts()) texts.push_back(p.tokens);
  ModelConfig cfg = opts.model;
  cfg.net.confound_dim = 0;
  nn::TextClassifier net(nn::Vocab::build(texts, cfg.vocab_min_count), cfg.net);

  TrainSchedule sched;
  sched.demotion = false;
  sched.base_epochs = opts.epochs;
  sched.learning_rate = opts.learning_rate;
  sched.batch_size = opts.batch_size;
  sched.seed = opts.seed;
  const auto tr = detail::post_examples(net.vocab(), train);
  const auto dv = detail::post_examples(net.vocab(), dev);
  const auto log = train_classifier(net, tr, dv, sched);

  PropensityModel m(std::move(net), cfg);
  m.best_dev_accuracy_ = log.best_dev_accuracy;
  return m;
}

struct PropensityScore {
  std::string post_id;
  double e = 0.5;
};

template <typename Scorer>
std::vector<PropensityScore> score_posts(const Scorer& model, const Corpus& corpus) {
  std::vector<PropensityScore> out;
  out.reserve(corpus.posts().size());
  for (const auto& p : corpus.posts()) {
    if (p.tokens.empty()) throw DataError("post " + p.id + " is empty");
    out.push_back({p.id, model.score(p.tokens)});
  }
  return out;
}

inline void write_scores(std::ostream& out, const std::vector<PropensityScore>& scores) {
  out << std::setprecision(17);
  for (const auto& s : scores) out << s.post_id << '\t' << s.e << '\n';
}

inline std::vector<PropensityScore> read_scores(std::istream& in) {
  std::vector<PropensityScore> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError("malformed score line: " + line);
    out.push_back({line.substr(0, tab), std::stod(line.substr(tab + 1))});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Greedy matching
// ---------------------------------------------------------------------------

enum class MatchOrder {
  HardestFirst,  // queries by descending |e - 0.5|, seeded random tie-break
  InputOrder,
  Random,
};

struct MatchConfig {
  std::optional<double> caliper;  // absolute |e_q - e_p| bound; nullopt = auto
  double auto_caliper_sd_multiple = 0.2;
  std::uint64_t seed = 1;
  MatchOrder order = MatchOrder::HardestFirst;
  Gender query_gender = Gender::F;
};

struct MatchedPair {
  std::string post_f;
  std::string post_m;
  double delta = 0.0;  // |e_F - e_M|
};

struct MatchResult {
  std::vector<MatchedPair> pairs;
  std::vector<std::string> discarded;  // query posts with no candidate within the caliper
  double caliper = 0.0;
  bool empty_warning = false;
};

// Auto caliper: a fixed multiple of the standard deviation of the scores.
inline double auto_caliper(std::span<const PropensityScore> all, double sd_multiple = 0.2) {
  if (all.size() < 2) return sd_multiple;
  double mean = 0.0;
  for (const auto& s : all) mean += s.e;
  mean /= static_cast<double>(all.size());
  double var = 0.0;
  for (const auto& s : all) var += (s.e - mean) * (s.e - mean);
  var /= static_cast<double>(all.size() - 1);
  const double c = sd_multiple * std::sqrt(var);
  return c > 0.0 ? c : 1e-12;
}

// Without-replacement greedy nearest-neighbour matching. Each query post (F
// by default) in policy order takes the closest unused pool post; ties in
// distance go to the pool post listed first. Queries with no pool post within
// the caliper are discarded.
inline MatchResult greedy_match(std::span<const PropensityScore> female, std::span<const PropensityScore> male,
                                const MatchConfig& cfg = {}) {
  const bool f_query = cfg.query_gender == Gender::F;
  const auto queries = f_query ? female : male;
  const auto pool = f_query ? male : female;

  MatchResult res;
  if (cfg.caliper) {
    if (!(*cfg.caliper > 0.0)) throw ConfigError("caliper must be positive");
    res.caliper = *cfg.caliper;
  } else {
    std::vector<PropensityScore> all(female.begin(), female.end());
    all.insert(all.end(), male.begin(), male.end());
    res.caliper = auto_caliper(all, cfg.auto_caliper_sd_multiple);
  }
  for (const auto& s : queries)
    if (!(s.e >= 0.0 && s.e <= 1.0)) throw DataError("propensity score outside [0,1] for post " + s.post_id);
  for (const auto& s : pool)
    if (!(s.e >= 0.0 && s.e <= 1.0)) throw DataError("propensity score outside [0,1] for post " + s.post_id);

  std::vector<std::size_t> order(queries.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(cfg.seed);
  if (cfg.order != MatchOrder::InputOrder) std::shuffle(order.begin(), order.end(), rng);
  if (cfg.order == MatchOrder::HardestFirst)
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return std::abs(queries[a].e - 0.5) > std::abs(queries[b].e - 0.5);
    });

  std::set<std::pair<double, std::size_t>> available;
  for (std::size_t j = 0; j < pool.size(); ++j) available.emplace(pool[j].e, j);

  for (std::size_t qi : order) {
    const double e = queries[qi].e;
    std::optional<std::pair<double, std::size_t>> best;
    double best_d = 0.0;
    auto consider = [&](std::set<std::pair<double, std::size_t>>::iterator it) {
      const double d = std::abs(it->first - e);
      if (!best || d < best_d || (d == best_d && it->second < best->second)) {
        best = *it;
        best_d = d;
      }
    };
    if (!available.empty()) {
      auto hi = available.lower_bound({e, 0});
      // Scan equal-distance neighbours on both sides so ties resolve by index.
      for (auto it = hi; it != available.end(); ++it) {
        if (best && std::abs(it->first - e) > best_d) break;
        consider(it);
      }
      for (auto it = hi; it != available.begin();) {
        --it;
        if (best && std::abs(it->first - e) > best_d) break;
        consider(it);
      }
    }
    if (!best || best_d > res.caliper) {
      res.discarded.push_back(queries[qi].post_id);
      continue;
    }
    available.erase(*best);
    const auto& p = pool[best->second];
    if (f_query)
      res.pairs.push_back({queries[qi].post_id, p.post_id, best_d});
    else
      res.pairs.push_back({p.post_id, queries[qi].post_id, best_d});
  }
  res.empty_warning = res.pairs.empty();
  return res;
}

// Splits corpus post scores by author gender and matches them.
inline MatchResult match_posts(const Corpus& corpus, std::span<const PropensityScore> scores, const MatchConfig& cfg = {}) {
  std::vector<PropensityScore> fem, mal;
  for (const auto& s : scores) (corpus.author_of_post(s.post_id).gender == Gender::F ? fem : mal).push_back(s);
  return greedy_match(fem, mal, cfg);
}

// ---------------------------------------------------------------------------
// Comment balancing
// ---------------------------------------------------------------------------

struct MatchedTrainingSet {
  std::vector<MatchedPair> pairs;
  std::vector<std::string> comment_ids;  // grouped by pair: F side then M side
  std::size_t f_comments = 0;
  std::size_t m_comments = 0;

  // Training corpus restricted to the retained comments.
  Corpus apply_to(const Corpus& corpus) const {
    std::unordered_set<std::string> keep(comment_ids.begin(), comment_ids.end());
    Corpus out = corpus;
    out.retain_comments([&](const Comment& c) { return keep.count(c.id) > 0; });
    return out;
  }
};

// Per pair, downsamples the side with more comments (seeded, uniform without
// replacement) to the other side's count. Pairs with an empty side are dropped.
inline MatchedTrainingSet balance_comments(const std::vector<MatchedPair>& pairs, const Corpus& corpus,
                                           std::uint64_t seed) {
  std::unordered_map<std::string, std::vector<std::string>> by_post;
  for (const auto& c : corpus.comments()) by_post[c.post_id].push_back(c.id);
  std::mt19937_64 rng(seed);
  MatchedTrainingSet out;
  auto take = [&](const std::vector<std::string>& ids, std::size_t n) {
    std::vector<std::string> chosen;
    if (ids.size() == n) {
      chosen = ids;
    } else {
      std::vector<std::size_t> idx(ids.size());
      std::iota(idx.begin(), idx.end(), 0);
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(n);
      std::sort(idx.begin(), idx.end());
      for (auto i : idx) chosen.push_back(ids[i]);
    }
    return chosen;
  };
  for (const auto& pr : pairs) {
    const auto& fc = by_post[pr.post_f];
    const auto& mc = by_post[pr.post_m];
    const std::size_t n = std::min(fc.size(), mc.size());
    if (n == 0) continue;
    auto fs = take(fc, n);
    auto ms = take(mc, n);
    out.comment_ids.insert(out.comment_ids.end(), fs.begin(), fs.end());
    out.comment_ids.insert(out.comment_ids.end(), ms.begin(), ms.end());
    out.f_comments += n;
    out.m_comments += n;
    out.pairs.push_back(pr);
  }
  return out;
}

// Post-hoc check of the matched set. Returns one message per violation.
inline std::vector<std::string> audit_matching(const MatchedTrainingSet& set, const Corpus& corpus, double caliper) {
  std::vector<std::string> problems;
  std::unordered_set<std::string> posts;
  for (const auto& p : set.pairs) {
    if (p.delta > caliper) problems.push_back("pair (" + p.post_f + ", " + p.post_m + ") exceeds the caliper");
    if (!posts.insert(p.post_f).second) problems.push_back("post reused: " + p.post_f);
    if (!posts.insert(p.post_m).second) problems.push_back("post reused: " + p.post_m);
    if (corpus.author_of_post(p.post_f).gender != Gender::F) problems.push_back("F side is not F: " + p.post_f);
    if (corpus.author_of_post(p.post_m).gender != Gender::M) problems.push_back("M side is not M: " + p.post_m);
  }
  std::unordered_map<std::string, const Comment*> by_id;
  for (const auto& c : corpus.comments()) by_id[c.id] = &c;
  std::map<std::string, std::size_t> per_post;
  std::size_t f = 0, m = 0;
  for (const auto& id : set.comment_ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) {
      problems.push_back("unknown comment " + id);
      continue;
    }
    ++per_post[it->second->post_id];
    (corpus.gender_of(*it->second) == Gender::F ? f : m) += 1;
  }
  if (f != m) problems.push_back("matched comments are not gender balanced");
  for (const auto& p : set.pairs)
    if (per_post[p.post_f] != per_post[p.post_m]) problems.push_back("unequal comment counts in pair " + p.post_f);
  return problems;
}

inline void write_pairs(std::ostream& out, const std::vector<MatchedPair>& pairs) {
  out << std::setprecision(17);
  for (const auto& p : pairs) out << p.post_f << '\t' << p.post_m << '\t' << p.delta << '\n';
}

inline std::vector<MatchedPair> read_pairs(std::istream& in) {
  std::vector<MatchedPair> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    MatchedPair p;
    std::string d;
    if (!std::getline(ss, p.post_f, '\t') || !std::getline(ss, p.post_m, '\t') || !std::getline(ss, d))
      throw DataError("malformed pair line: " + line);
    p.delta = std::stod(d);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace biasscope
