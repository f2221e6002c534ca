#include "spatialops/language.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <stdexcept>

namespace spatialops {

namespace {

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '\'' || c == '-';
}

// Treebank clitic split of one lowercase word.
void split_clitics(std::string word, std::vector<std::string>& out) {
  std::vector<std::string> tail;
  // Irregular negations keep the treebank stems.
  if (word == "can't") {
    out.insert(out.end(), {"ca", "n't"});
    return;
  }
  if (word == "won't") {
    out.insert(out.end(), {"wo", "n't"});
    return;
  }
  if (word.size() > 3 && word.ends_with("n't")) {
    tail.push_back("n't");
    word.resize(word.size() - 3);
  } else {
    static constexpr std::array<std::string_view, 6> kClitics = {"'ll", "'re", "'ve", "'s", "'m", "'d"};
    for (auto c : kClitics) {
      if (word.size() > c.size() && word.ends_with(c)) {
        tail.emplace_back(c);
        word.resize(word.size() - c.size());
        break;
      }
    }
  }
  // Quotes hugging a word become their own tokens.
  std::size_t lead = 0;
  while (lead < word.size() && word[lead] == '\'') ++lead;
  for (std::size_t i = 0; i < lead; ++i) out.emplace_back("'");
  word.erase(0, lead);
  std::size_t trail = 0;
  while (trail < word.size() && word[word.size() - 1 - trail] == '\'') ++trail;
  word.resize(word.size() - trail);
  if (!word.empty()) out.push_back(word);
  for (std::size_t i = 0; i < trail; ++i) out.emplace_back("'");
  out.insert(out.end(), tail.begin(), tail.end());
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) split_clitics(std::move(word), out);
    word.clear();
  };
  for (char raw : text) {
    const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (is_word_char(c) || (c == '.' && !word.empty() && std::isdigit(static_cast<unsigned char>(word.back())))) {
      word.push_back(c);
    } else {
      flush();
      out.emplace_back(1, c);
    }
  }
  flush();
  // A decimal point swallowed at the end of a word is sentence punctuation.
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto& t = out[i];
    if (t.size() > 1 && t.back() == '.') {
      t.pop_back();
      out.insert(out.begin() + static_cast<std::ptrdiff_t>(i) + 1, ".");
    }
  }
  return out;
}

Vocabulary::Vocabulary() : tokens_{"<pad>", "<unk>"} {
  index_.emplace("<pad>", kPad);
  index_.emplace("<unk>", kUnknown);
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& corpus) {
  std::vector<std::string> words;
  for (const auto& sentence : corpus) words.insert(words.end(), sentence.begin(), sentence.end());
  std::sort(words.begin(), words.end());
  words.erase(std::unique(words.begin(), words.end()), words.end());
  std::erase_if(words, [](const std::string& w) { return w == "<pad>" || w == "<unk>"; });
  words.insert(words.begin(), {"<pad>", "<unk>"});
  return from_tokens(std::move(words));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < 2 || tokens[kPad] != "<pad>" || tokens[kUnknown] != "<unk>") {
    throw std::invalid_argument("vocabulary must start with <pad> and <unk>");
  }
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  v.index_.clear();
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    if (!v.index_.emplace(v.tokens_[i], i).second) throw std::invalid_argument("duplicate token " + v.tokens_[i]);
  }
  return v;
}

std::size_t Vocabulary::index(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnknown : it->second;
}

std::vector<std::size_t> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<std::size_t> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(index(t));
  return out;
}

namespace {

template <typename T>
struct LstmState {
  ad::Var<T> h;
  ad::Var<T> c;
};

template <typename T>
LstmState<T> lstm_step(ad::Var<T> x, const LstmState<T>& prev, const LstmWeights<T>& w, std::size_t hidden) {
  auto gates = ad::add_bias(ad::add(ad::matmul(x, w.w_x), ad::matmul(prev.h, w.w_h)), w.bias);
  auto i = ad::sigmoid(ad::slice_last(gates, 0, hidden));
  auto f = ad::sigmoid(ad::slice_last(gates, hidden, 2 * hidden));
  auto g = ad::tanh(ad::slice_last(gates, 2 * hidden, 3 * hidden));
  auto o = ad::sigmoid(ad::slice_last(gates, 3 * hidden, 4 * hidden));
  auto c = ad::add(ad::mul(f, prev.c), ad::mul(i, g));
  auto h = ad::mul(o, ad::tanh(c));
  return {h, c};
}

// Rows whose mask is 0 keep their previous state.
template <typename T>
LstmState<T> masked(const LstmState<T>& next, const LstmState<T>& prev, ad::Var<T> keep_new, ad::Var<T> keep_old) {
  return {ad::add(ad::mul(keep_new, next.h), ad::mul(keep_old, prev.h)),
          ad::add(ad::mul(keep_new, next.c), ad::mul(keep_old, prev.c))};
}

}  // namespace

template <typename T>
ad::Var<T> bilstm_final_states(const std::vector<ad::Var<T>>& steps, const std::vector<std::size_t>& lengths,
                               const LstmWeights<T>& forward, const LstmWeights<T>& backward) {
  if (steps.empty()) throw std::invalid_argument("cannot encode an empty sequence");
  auto& tape = steps.front().tape();
  const std::size_t batch = steps.front().value().dim(0);
  const std::size_t hidden = forward.w_h.value().dim(0);
  if (lengths.size() != batch) throw std::invalid_argument("bilstm: lengths do not match the batch");
  for (auto n : lengths) {
    if (n == 0) throw std::invalid_argument("cannot encode an empty sequence");
    if (n > steps.size()) throw std::invalid_argument("bilstm: length exceeds padded sequence");
  }
  const bool ragged = std::any_of(lengths.begin(), lengths.end(), [&](auto n) { return n != steps.size(); });

  auto zeros = tape.constant(Tensor<T>({batch, hidden}));
  std::vector<ad::Var<T>> keep_new(steps.size()), keep_old(steps.size());
  if (ragged) {
    for (std::size_t t = 0; t < steps.size(); ++t) {
      Tensor<T> on({batch, hidden}), off({batch, hidden});
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t j = 0; j < hidden; ++j) (t < lengths[b] ? on : off)[b * hidden + j] = T{1};
      keep_new[t] = tape.constant(std::move(on));
      keep_old[t] = tape.constant(std::move(off));
    }
  }

  LstmState<T> fwd{zeros, zeros};
  for (std::size_t t = 0; t < steps.size(); ++t) {
    auto next = lstm_step(steps[t], fwd, forward, hidden);
    fwd = ragged ? masked(next, fwd, keep_new[t], keep_old[t]) : next;
  }
  // Padding sits at the end, so the reverse pass idles until it meets real tokens.
  LstmState<T> bwd{zeros, zeros};
  for (std::size_t t = steps.size(); t-- > 0;) {
    auto next = lstm_step(steps[t], bwd, backward, hidden);
    bwd = ragged ? masked(next, bwd, keep_new[t], keep_old[t]) : next;
  }
  return ad::concat_last(fwd.h, bwd.h);
}

template ad::Var<float> bilstm_final_states(const std::vector<ad::Var<float>>&, const std::vector<std::size_t>&,
                                            const LstmWeights<float>&, const LstmWeights<float>&);
template ad::Var<double> bilstm_final_states(const std::vector<ad::Var<double>>&, const std::vector<std::size_t>&,
                                             const LstmWeights<double>&, const LstmWeights<double>&);

}  // namespace spatialops
