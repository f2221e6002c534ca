#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "spatialops/autodiff.hpp"

namespace spatialops {

// Lowercases, splits on whitespace, splits punctuation into separate tokens
// and separates clitics the way the Penn Treebank does ("don't" -> do n't).
std::vector<std::string> tokenize(std::string_view text);

class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnknown = 1;

  Vocabulary();
  // Reserved entries first, then the distinct tokens in sorted order.
  static Vocabulary build(const std::vector<std::vector<std::string>>& corpus);
  // Entries must start with the two reserved tokens.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  std::size_t index(const std::string& token) const;
  std::vector<std::size_t> encode(const std::vector<std::string>& tokens) const;
  const std::string& token(std::size_t index) const { return tokens_.at(index); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::size_t size() const { return tokens_.size(); }

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

// Weights of one LSTM direction, gates ordered input, forget, cell, output.
template <typename T>
struct LstmWeights {
  ad::Var<T> w_x;   // [E, 4H]
  ad::Var<T> w_h;   // [H, 4H]
  ad::Var<T> bias;  // [4H]
};

// Runs a bidirectional LSTM over a padded batch of embedded sequences and
// returns concat(final forward state, final backward state) as [B, 2H].
// steps[t] is [B, E]; lengths[b] counts the real tokens of row b.
template <typename T>
ad::Var<T> bilstm_final_states(const std::vector<ad::Var<T>>& steps, const std::vector<std::size_t>& lengths,
                               const LstmWeights<T>& forward, const LstmWeights<T>& backward);

}  // namespace spatialops
