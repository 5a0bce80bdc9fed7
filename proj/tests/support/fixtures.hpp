#pragma once

// Small hand-built corpora and scratch directories for tests.

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "biasscope/corpus.hpp"

namespace fixture {

struct Row {
  std::string author;
  biasscope::Gender gender;
  std::string post;
  std::string post_text;
  std::string comment;
  std::string comment_text;
};

inline biasscope::Corpus corpus(const std::vector<Row>& rows) {
  biasscope::Corpus c;
  for (const auto& r : rows) {
    if (!c.has_author(r.author)) c.add_author({r.author, r.gender, {}});
    if (!c.has_post(r.post)) c.add_post({r.post, r.author, biasscope::tokenize(r.post_text)});
    if (!r.comment.empty()) {
      auto t = biasscope::tokenize(r.comment_text);
      c.add_comment({r.comment, r.post, t, t});
    }
  }
  return c;
}

// Authors a0..a{n-1}, alternating F/M, each with `posts` posts and random
// comment counts in [0, max_comments].
inline biasscope::Corpus random_corpus(std::mt19937_64& rng, int authors, int posts, int max_comments) {
  biasscope::Corpus c;
  std::uniform_int_distribution<int> nc(0, max_comments), w(0, 9);
  int cid = 0;
  for (int a = 0; a < authors; ++a) {
    const std::string aid = "a" + std::to_string(a);
    c.add_author({aid, a % 2 ? biasscope::Gender::M : biasscope::Gender::F, {}});
    for (int p = 0; p < posts; ++p) {
      const std::string pid = aid + "p" + std::to_string(p);
      c.add_post({pid, aid, {"w" + std::to_string(w(rng))}});
      for (int k = 0, n = nc(rng); k < n; ++k) {
        biasscope::Tokens t{"x" + std::to_string(w(rng)), "y" + std::to_string(w(rng))};
        c.add_comment({"c" + std::to_string(cid++), pid, t, t});
      }
    }
  }
  return c;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "bs") {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / (tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace fixture
