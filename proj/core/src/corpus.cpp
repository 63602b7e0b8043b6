// Copyright 2026 the modlm authors
// SPDX-License-Identifier: Apache-2.0
#include "modlm/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>

#include "modlm/error.hpp"
#include "modlm/model.hpp"
#include "modlm/random.hpp"

namespace modlm {

namespace {

struct WeightedWord {
  const char* text;
  std::uint64_t weight;
};

// Zipf-flavored lexicon; heavy function words dominate like natural text.
constexpr WeightedWord kLexicon[] = {
    {"the", 12}, {"of", 6},      {"and", 6},    {"to", 5},      {"a", 4},
    {"in", 4},   {"that", 3},    {"is", 3},     {"was", 3},     {"for", 2},
    {"with", 2}, {"on", 2},      {"as", 2},     {"at", 2},      {"by", 2},
    {"from", 2}, {"stone", 1},   {"river", 1},  {"garden", 1},  {"light", 1},
    {"morning", 1}, {"winter", 1}, {"letter", 1}, {"window", 1}, {"small", 1},
    {"old", 1},  {"quiet", 1},   {"green", 1},  {"long", 1},    {"walked", 1},
    {"turned", 1}, {"waited", 1}, {"found", 1}, {"carried", 1}, {"spoke", 1},
    {"remained", 1}, {"house", 1}, {"road", 1}, {"voice", 1},   {"evening", 1},
};

const char* pick_word(Rng& rng) {
  static const std::uint64_t total = [] {
    std::uint64_t t = 0;
    for (const WeightedWord& w : kLexicon) t += w.weight;
    return t;
  }();
  std::uint64_t r = rng.below(total);
  for (const WeightedWord& w : kLexicon) {
    if (r < w.weight) return w.text;
    r -= w.weight;
  }
  return kLexicon[0].text;
}

void append_sentence(std::string& out, Rng& rng) {
  const std::size_t n_words = 4 + rng.below(8);
  for (std::size_t i = 0; i < n_words; ++i) {
    std::string word = pick_word(rng);
    if (i == 0) word[0] = static_cast<char>(word[0] - 'a' + 'A');
    out += word;
    if (i + 1 == n_words) {
      out += ". ";
    } else if (i >= 1 && i + 2 < n_words && rng.below(5) == 0) {
      out += ", ";
    } else {
      out += ' ';
    }
  }
}

struct ExprNode {
  std::string text;
  long long value = 0;
};

// Fully parenthesized below the top level, so the printed form has exactly
// one reading and the '=' side is unambiguous.
ExprNode gen_node(Rng& rng, std::size_t depth) {
  if (depth == 0 || rng.below(2) == 0) {
    const long long v = static_cast<long long>(rng.below(50));
    return {std::to_string(v), v};
  }
  const ExprNode lhs = gen_node(rng, depth - 1);
  const ExprNode rhs = gen_node(rng, depth - 1);
  const char op = "+-*"[rng.below(3)];
  long long v = 0;
  switch (op) {
    case '+': v = lhs.value + rhs.value; break;
    case '-': v = lhs.value - rhs.value; break;
    default: v = lhs.value * rhs.value; break;
  }
  return {"(" + lhs.text + op + rhs.text + ")", v};
}

void append_statement(std::string& out, Rng& rng) {
  const ExprNode lhs = gen_node(rng, 2);
  const ExprNode rhs = gen_node(rng, 2);
  const char op = "+-*"[rng.below(3)];
  long long v = 0;
  switch (op) {
    case '+': v = lhs.value + rhs.value; break;
    case '-': v = lhs.value - rhs.value; break;
    default: v = lhs.value * rhs.value; break;
  }
  out += lhs.text;
  out += op;
  out += rhs.text;
  out += '=';
  out += std::to_string(v);
  out += ';';
}

template <typename AppendFn>
std::string fill_bytes(std::size_t n_bytes, std::uint64_t seed, AppendFn append) {
  Rng rng(seed);
  std::string out;
  out.reserve(n_bytes + 64);
  while (out.size() < n_bytes) append(out, rng);
  out.resize(n_bytes);
  return out;
}

} // namespace

std::string synthetic_prose(std::size_t n_bytes, std::uint64_t seed) {
  return fill_bytes(n_bytes, seed, append_sentence);
}

std::string synthetic_arithmetic(std::size_t n_bytes, std::uint64_t seed) {
  return fill_bytes(n_bytes, seed, append_statement);
}

std::vector<std::uint32_t> load_corpus_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("load_corpus_file: cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  if (f.bad()) throw IoError("load_corpus_file: read failed for " + path);
  return byte_tokenize(ss.str());
}

CorpusSplit split_corpus(const std::vector<std::uint32_t>& tokens, double heldout_fraction) {
  if (!(heldout_fraction > 0.0) || !(heldout_fraction < 1.0)) {
    throw ConfigError("split_corpus: fraction must lie in (0, 1)");
  }
  const std::size_t n = tokens.size();
  const auto heldout = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(heldout_fraction * static_cast<double>(n))));
  if (heldout >= n) throw ConfigError("split_corpus: split leaves no training tokens");
  CorpusSplit s;
  s.train.assign(tokens.begin(), tokens.end() - static_cast<std::ptrdiff_t>(heldout));
  s.heldout.assign(tokens.end() - static_cast<std::ptrdiff_t>(heldout), tokens.end());
  return s;
}

double unigram_entropy(const std::vector<std::uint32_t>& tokens) {
  if (tokens.empty()) throw ConfigError("unigram_entropy: empty corpus");
  std::map<std::uint32_t, std::uint64_t> counts;
  for (std::uint32_t t : tokens) ++counts[t];
  const double n = static_cast<double>(tokens.size());
  double h = 0.0;
  for (const auto& [sym, c] : counts) {
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h;
}

double unigram_cross_entropy(const std::vector<std::uint32_t>& model_tokens,
                             const std::vector<std::uint32_t>& tokens) {
  if (model_tokens.empty() || tokens.empty()) {
    throw ConfigError("unigram_cross_entropy: empty corpus");
  }
  std::vector<std::uint64_t> counts(kByteVocab, 0);
  for (std::uint32_t t : model_tokens) {
    if (t >= kByteVocab) throw ContractError("unigram_cross_entropy: token out of range");
    ++counts[t];
  }
  const double denom =
      static_cast<double>(model_tokens.size()) + 0.5 * static_cast<double>(kByteVocab);
  double ce = 0.0;
  for (std::uint32_t t : tokens) {
    if (t >= kByteVocab) throw ContractError("unigram_cross_entropy: token out of range");
    const double p = (static_cast<double>(counts[t]) + 0.5) / denom;
    ce -= std::log(p);
  }
  return ce / static_cast<double>(tokens.size());
}

CorpusStream::CorpusStream(std::vector<std::uint32_t> tokens, std::size_t segment_length)
    : tokens_(std::move(tokens)), t_(segment_length) {
  if (t_ == 0) throw ConfigError("CorpusStream: segment length must be positive");
  if (tokens_.size() < 2) throw ConfigError("CorpusStream: corpus needs at least 2 tokens");
}

CorpusStream::Segment CorpusStream::next() {
  Segment s;
  s.inputs.resize(t_);
  s.targets.resize(t_);
  const std::size_t n = tokens_.size();
  for (std::size_t i = 0; i < t_; ++i) {
    s.inputs[i] = tokens_[(pos_ + i) % n];
    s.targets[i] = tokens_[(pos_ + i + 1) % n];
  }
  pos_ = (pos_ + t_) % n;
  return s;
}

} // namespace modlm
