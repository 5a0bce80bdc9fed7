#pragma once

#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "biasscope/common.hpp"

namespace biasscope::nn {

// Token <-> id mapping. Id 0 is reserved for unknown tokens.
class Vocab {
 public:
  static constexpr int kUnk = 0;
  static constexpr const char* kUnkToken = "<unk>";

  Vocab() : tokens_{kUnkToken} { ids_.emplace(kUnkToken, kUnk); }

  // Tokens with count >= min_count, in lexicographic order for stability.
  template <typename Range>
  static Vocab build(const Range& token_lists, std::size_t min_count = 1) {
    std::map<std::string, std::size_t> counts;
    for (const auto& toks : token_lists)
      for (const auto& t : toks) ++counts[t];
    Vocab v;
    for (const auto& [t, n] : counts)
      if (n >= min_count && t != kUnkToken) v.add(t);
    return v;
  }

  static Vocab from_tokens(const std::vector<std::string>& tokens) {
    if (tokens.empty() || tokens[0] != kUnkToken) throw DataError("vocabulary must start with <unk>");
    Vocab v;
    for (std::size_t i = 1; i < tokens.size(); ++i) v.add(tokens[i]);
    return v;
  }

  int add(const std::string& t) {
    auto [it, inserted] = ids_.emplace(t, static_cast<int>(tokens_.size()));
    if (inserted) tokens_.push_back(t);
    return it->second;
  }

  int id(const std::string& t) const {
    auto it = ids_.find(t);
    return it == ids_.end() ? kUnk : it->second;
  }

  std::vector<int> encode(std::span<const std::string> toks) const {
    std::vector<int> out;
    out.reserve(toks.size());
    for (const auto& t : toks) out.push_back(id(t));
    return out;
  }

  const std::vector<std::string>& tokens() const { return tokens_; }
  std::size_t size() const { return tokens_.size(); }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

}  // namespace biasscope::nn
