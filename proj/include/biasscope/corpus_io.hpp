#pragma once

// Reading delimiter-separated comment rows into a Corpus, and the canonical
// JSON-lines corpus files (authors.jsonl, posts.jsonl, comments.jsonl).

#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "biasscope/corpus.hpp"

namespace biasscope {

struct IngestOptions {
  char delimiter = '\t';
  // Raw label strings accepted for each class. Anything else is rejected.
  std::set<std::string> female_labels{"F", "W"};
  std::set<std::string> male_labels{"M"};
};

struct RowError {
  std::size_t row = 0;  // 0-based data row index (header excluded)
  std::string message;
};

struct IngestReport {
  std::size_t rows_total = 0;
  std::size_t rows_kept = 0;
  std::size_t rows_rejected = 0;
  std::size_t rejected_unknown_gender = 0;
  std::size_t rejected_malformed = 0;
  std::vector<RowError> errors;

  nlohmann::json to_json() const {
    nlohmann::json errs = nlohmann::json::array();
    for (const auto& e : errors) errs.push_back({{"row", e.row}, {"message", e.message}});
    return {{"rows_total", rows_total},          {"rows_kept", rows_kept},
            {"rows_rejected", rows_rejected},    {"rejected_unknown_gender", rejected_unknown_gender},
            {"rejected_malformed", rejected_malformed}, {"errors", errs}};
  }
};

struct IngestResult {
  Corpus corpus;
  IngestReport report;
};

namespace detail {
inline std::vector<std::string> split_fields(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == delim) {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(std::move(cur));
  return out;
}
}  // namespace detail

// One comment per row: author_id, gender, author_name, post_id, post_text,
// comment_text [, comment_id]. A first row starting with "author_id" is a
// header. Without a comment_id column, ids are "c<row>".
inline IngestResult ingest_corpus(std::istream& in, const IngestOptions& opts = {}) {
  IngestResult res;
  auto& rep = res.report;
  std::string line;
  std::size_t row = 0;
  bool first = true;
  std::set<std::string> comment_ids;

  auto reject = [&](std::size_t r, std::string msg, bool gender) {
    ++rep.rows_rejected;
    (gender ? rep.rejected_unknown_gender : rep.rejected_malformed) += 1;
    rep.errors.push_back({r, std::move(msg)});
  };

  while (std::getline(in, line)) {
    if (first) {
      first = false;
      if (line.rfind("author_id", 0) == 0) continue;
    }
    if (line.empty() || line == "\r") continue;
    const std::size_t r = row++;
    ++rep.rows_total;
    auto f = detail::split_fields(line, opts.delimiter);
    if (f.size() != 6 && f.size() != 7) {
      reject(r, "expected 6 or 7 fields, got " + std::to_string(f.size()), false);
      continue;
    }
    const std::string& author_id = f[0];
    const std::string& post_id = f[3];
    if (author_id.empty() || post_id.empty()) {
      reject(r, "empty author_id or post_id", false);
      continue;
    }
    Gender g;
    if (opts.female_labels.count(f[1])) {
      g = Gender::F;
    } else if (opts.male_labels.count(f[1])) {
      g = Gender::M;
    } else {
      reject(r, "unknown gender label '" + f[1] + "'", true);
      continue;
    }
    std::string comment_id = f.size() == 7 && !f[6].empty() ? f[6] : "c" + std::to_string(r);
    if (comment_ids.count(comment_id)) {
      reject(r, "duplicate comment id " + comment_id, false);
      continue;
    }

    auto& corpus = res.corpus;
    if (corpus.has_author(author_id)) {
      if (corpus.author(author_id).gender != g) {
        reject(r, "author " + author_id + " has conflicting gender labels", false);
        continue;
      }
    }
    if (corpus.has_post(post_id) && corpus.post(post_id).author_id != author_id) {
      reject(r, "post " + post_id + " appears under two authors", false);
      continue;
    }
    Tokens post_tokens;
    if (!corpus.has_post(post_id)) {
      post_tokens = tokenize(f[4]);
      if (post_tokens.empty()) {
        reject(r, "empty post text", false);
        continue;
      }
    }
    if (!corpus.has_author(author_id)) corpus.add_author({author_id, g, tokenize(f[2])});
    if (!corpus.has_post(post_id)) corpus.add_post({post_id, author_id, std::move(post_tokens)});
    Tokens raw = tokenize(f[5]);
    corpus.add_comment({comment_id, post_id, raw, raw});
    comment_ids.insert(std::move(comment_id));
    ++rep.rows_kept;
  }
  return res;
}

inline IngestResult ingest_corpus_file(const std::string& path, const IngestOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus input: " + path);
  return ingest_corpus(in, opts);
}

// ---------------------------------------------------------------------------
// Canonical JSON-lines files
// ---------------------------------------------------------------------------

inline void write_corpus_jsonl(const Corpus& corpus, std::ostream& authors, std::ostream& posts,
                               std::ostream& comments) {
  for (const auto& a : corpus.authors())
    authors << nlohmann::json{{"author_id", a.id}, {"gender", to_string(a.gender)}, {"name_tokens", a.name_tokens}}
                   .dump()
            << '\n';
  for (const auto& p : corpus.posts())
    posts << nlohmann::json{{"post_id", p.id}, {"author_id", p.author_id}, {"tokens", p.tokens}}.dump() << '\n';
  for (const auto& c : corpus.comments())
    comments << nlohmann::json{{"comment_id", c.id},
                               {"post_id", c.post_id},
                               {"raw_tokens", c.raw_tokens},
                               {"subst_tokens", c.subst_tokens}}
                    .dump()
             << '\n';
}

inline Corpus read_corpus_jsonl(std::istream& authors, std::istream& posts, std::istream& comments) {
  Corpus corpus;
  std::string line;
  while (std::getline(authors, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    Gender g;
    if (!parse_gender(j.at("gender").get<std::string>(), g)) throw DataError("bad gender in authors file");
    corpus.add_author({j.at("author_id").get<std::string>(), g, j.at("name_tokens").get<Tokens>()});
  }
  while (std::getline(posts, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    corpus.add_post({j.at("post_id").get<std::string>(), j.at("author_id").get<std::string>(),
                     j.at("tokens").get<Tokens>()});
  }
  while (std::getline(comments, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    corpus.add_comment({j.at("comment_id").get<std::string>(), j.at("post_id").get<std::string>(),
                        j.at("raw_tokens").get<Tokens>(), j.at("subst_tokens").get<Tokens>()});
  }
  return corpus;
}

inline Corpus read_corpus_dir(const std::filesystem::path& dir) {
  std::ifstream a(dir / "authors.jsonl"), p(dir / "posts.jsonl"), c(dir / "comments.jsonl");
  if (!a || !p || !c) throw DataError("corpus directory incomplete: " + dir.string());
  return read_corpus_jsonl(a, p, c);
}

}  // namespace biasscope
