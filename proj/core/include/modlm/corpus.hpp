// Copyright 2026 the modlm authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace modlm {

/// Deterministic word-salad prose: weighted-lexicon sentences with commas and
/// periods. The "natural text" half of the two-domain benchmark. Exactly
/// n_bytes long.
std::string synthetic_prose(std::size_t n_bytes, std::uint64_t seed);

/// Deterministic fully parenthesized arithmetic statements such as
/// `(3+14)*2=34;`. The formal-grammar half of the two-domain benchmark, with
/// a byte alphabet disjoint from the prose domain. Exactly n_bytes long.
std::string synthetic_arithmetic(std::size_t n_bytes, std::uint64_t seed);

/// Whole file as byte tokens. IoError when unreadable.
std::vector<std::uint32_t> load_corpus_file(const std::string& path);

/// Head/tail split; the held-out span is the corpus tail. ConfigError when
/// the fraction is outside (0, 1) or either side would be empty.
struct CorpusSplit {
  std::vector<std::uint32_t> train;
  std::vector<std::uint32_t> heldout;
};
CorpusSplit split_corpus(const std::vector<std::uint32_t>& tokens, double heldout_fraction);

/// Entropy in nats of the empirical symbol distribution; exp of this is the
/// perplexity of the best context-free predictor of the same text.
double unigram_entropy(const std::vector<std::uint32_t>& tokens);

/// Cross-entropy in nats of tokens under the add-half-smoothed unigram
/// distribution fitted on model_tokens; finite even for unseen symbols.
double unigram_cross_entropy(const std::vector<std::uint32_t>& model_tokens,
                             const std::vector<std::uint32_t>& tokens);

/// Cyclic segment reader over one continuous token stream. Segment i covers
/// positions [i*T, i*T + T) modulo the corpus; targets are the same window
/// shifted by one, so consecutive segments chain for cache reuse.
class CorpusStream {
public:
  CorpusStream(std::vector<std::uint32_t> tokens, std::size_t segment_length);

  struct Segment {
    std::vector<std::uint32_t> inputs;   // length T
    std::vector<std::uint32_t> targets;  // length T, inputs shifted by one
  };
  Segment next();
  void reset() { pos_ = 0; }
  std::size_t segment_length() const { return t_; }
  std::size_t size() const { return tokens_.size(); }

private:
  std::vector<std::uint32_t> tokens_;
  std::size_t t_;
  std::size_t pos_ = 0;
};

} // namespace modlm
