// Copyright 2026 the modlm authors
// SPDX-License-Identifier: Apache-2.0
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "modlm/corpus.hpp"
#include "modlm/error.hpp"
#include "modlm/model.hpp"

using namespace modlm;

namespace {

// Recursive-descent oracle for the fully parenthesized statement grammar:
// node := digits | '(' node op node ')', statement := node op node '=' value.
struct ExprParser {
  const std::string& s;
  std::size_t pos = 0;

  explicit ExprParser(const std::string& text) : s(text) {}

  long long parse_node() {
    if (s.at(pos) == '(') {
      ++pos;
      const long long lhs = parse_node();
      const char op = s.at(pos++);
      const long long rhs = parse_node();
      REQUIRE(s.at(pos) == ')');
      ++pos;
      return apply(lhs, op, rhs);
    }
    return parse_int();
  }

  long long parse_int() {
    bool neg = false;
    if (s.at(pos) == '-') {
      neg = true;
      ++pos;
    }
    REQUIRE(std::isdigit(static_cast<unsigned char>(s.at(pos))));
    long long v = 0;
    while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
      v = v * 10 + (s[pos] - '0');
      ++pos;
    }
    return neg ? -v : v;
  }

  static long long apply(long long a, char op, long long b) {
    switch (op) {
      case '+': return a + b;
      case '-': return a - b;
      case '*': return a * b;
      default: REQUIRE(false);
    }
    return 0;
  }
};

} // namespace

TEST_CASE("prose generator is deterministic textual bytes") {
  const std::string a = synthetic_prose(2000, 7);
  CHECK(a == synthetic_prose(2000, 7));
  CHECK(a != synthetic_prose(2000, 8));
  CHECK(a.size() == 2000);
  CHECK(std::isupper(static_cast<unsigned char>(a[0])));
  bool sentence_break = false;
  for (char c : a) {
    const bool legal = std::isalpha(static_cast<unsigned char>(c)) || c == ' ' ||
                       c == ',' || c == '.';
    REQUIRE(legal);
    if (c == '.') sentence_break = true;
  }
  CHECK(sentence_break);
}

TEST_CASE("arithmetic generator emits only true statements") {
  const std::string a = synthetic_arithmetic(3000, 5);
  CHECK(a == synthetic_arithmetic(3000, 5));
  CHECK(a != synthetic_arithmetic(3000, 6));
  CHECK(a.size() == 3000);
  for (char c : a) {
    const bool legal = std::isdigit(static_cast<unsigned char>(c)) || c == '(' ||
                       c == ')' || c == '+' || c == '-' || c == '*' || c == '=' ||
                       c == ';';
    REQUIRE(legal);
  }

  // Every complete statement (the trailing fragment is cut mid-statement)
  // must evaluate to its printed right-hand side.
  std::size_t start = 0;
  std::size_t checked = 0;
  while (true) {
    const std::size_t end = a.find(';', start);
    if (end == std::string::npos) break;
    const std::string stmt = a.substr(start, end - start);
    ExprParser p(stmt);
    const long long lhs = p.parse_node();
    const char op = stmt.at(p.pos++);
    const long long rhs = p.parse_node();
    REQUIRE(stmt.at(p.pos) == '=');
    ++p.pos;
    const long long printed = p.parse_int();
    CHECK(ExprParser::apply(lhs, op, rhs) == printed);
    ++checked;
    start = end + 1;
  }
  CHECK(checked > 20);
}

TEST_CASE("prose and arithmetic alphabets are disjoint") {
  const std::string p = synthetic_prose(1000, 1);
  const std::string q = synthetic_arithmetic(1000, 1);
  bool seen[256] = {};
  for (char c : p) seen[static_cast<unsigned char>(c)] = true;
  for (char c : q) CHECK_FALSE(seen[static_cast<unsigned char>(c)]);
}

TEST_CASE("unigram entropy matches hand counts") {
  CHECK(unigram_entropy({5, 5, 5, 5}) == 0.0);
  const double h = unigram_entropy({1, 1, 2});
  const double expect = -(2.0 / 3.0) * std::log(2.0 / 3.0) - (1.0 / 3.0) * std::log(1.0 / 3.0);
  CHECK(std::abs(h - expect) < 1e-15);
  std::vector<std::uint32_t> all;
  for (std::uint32_t b = 0; b < 256; ++b) all.push_back(b);
  CHECK(std::abs(unigram_entropy(all) - std::log(256.0)) < 1e-12);
  CHECK_THROWS_AS(unigram_entropy({}), ConfigError);
}

TEST_CASE("unigram cross entropy is finite and dominates entropy") {
  const std::vector<std::uint32_t> text = byte_tokenize(synthetic_prose(4096, 3));
  // Smoothing spreads a little mass off the observed symbols, so the model
  // can only lose to its own entropy.
  CHECK(unigram_cross_entropy(text, text) >= unigram_entropy(text));
  const double unseen = unigram_cross_entropy({97, 97, 97, 97}, {122});
  CHECK(std::isfinite(unseen));
  CHECK(unseen > 5.0);
  CHECK_THROWS_AS(unigram_cross_entropy({}, {1}), ConfigError);
  CHECK_THROWS_AS(unigram_cross_entropy({1}, {}), ConfigError);
  CHECK_THROWS_AS(unigram_cross_entropy({999}, {1}), ContractError);
}

TEST_CASE("split keeps the corpus tail as held-out") {
  std::vector<std::uint32_t> tokens;
  for (std::uint32_t i = 0; i < 100; ++i) tokens.push_back(i);
  const CorpusSplit s = split_corpus(tokens, 0.25);
  REQUIRE(s.train.size() == 75);
  REQUIRE(s.heldout.size() == 25);
  CHECK(s.train.front() == 0);
  CHECK(s.train.back() == 74);
  CHECK(s.heldout.front() == 75);
  CHECK(s.heldout.back() == 99);
  CHECK_THROWS_AS(split_corpus(tokens, 0.0), ConfigError);
  CHECK_THROWS_AS(split_corpus(tokens, 1.0), ConfigError);
  CHECK_THROWS_AS(split_corpus({1, 2}, 0.9), ConfigError);
}

TEST_CASE("stream wraps cyclically with shifted targets") {
  std::vector<std::uint32_t> tokens;
  for (std::uint32_t i = 0; i < 10; ++i) tokens.push_back(i);
  CorpusStream stream(tokens, 4);
  auto s0 = stream.next();
  CHECK(s0.inputs == std::vector<std::uint32_t>{0, 1, 2, 3});
  CHECK(s0.targets == std::vector<std::uint32_t>{1, 2, 3, 4});
  auto s1 = stream.next();
  CHECK(s1.inputs == std::vector<std::uint32_t>{4, 5, 6, 7});
  CHECK(s1.targets == std::vector<std::uint32_t>{5, 6, 7, 8});
  auto s2 = stream.next();
  CHECK(s2.inputs == std::vector<std::uint32_t>{8, 9, 0, 1});
  CHECK(s2.targets == std::vector<std::uint32_t>{9, 0, 1, 2});
  stream.reset();
  CHECK(stream.next().inputs == s0.inputs);
  CHECK_THROWS_AS(CorpusStream(tokens, 0), ConfigError);
  CHECK_THROWS_AS(CorpusStream({1}, 4), ConfigError);
}

TEST_CASE("corpus files load as raw bytes") {
  const std::string path = "corpus_blob.bin";
  std::string blob = "hello";
  blob.push_back('\0');
  blob.push_back(static_cast<char>(255));
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  }
  const std::vector<std::uint32_t> tokens = load_corpus_file(path);
  CHECK(tokens == byte_tokenize(blob));
  CHECK(tokens.size() == 7);
  CHECK(tokens[5] == 0);
  CHECK(tokens[6] == 255);
  CHECK_THROWS_AS(load_corpus_file("no_such_corpus.bin"), IoError);
  std::remove(path.c_str());
}
