#include "doctest.h"

#include <cmath>
#include <json.hpp>

#include "fixtures.hpp"
#include "latentdemo/common.hpp"
#include "latentdemo/tiny_lm.hpp"

using namespace latentdemo;

namespace {

std::unique_ptr<StubBackend> hundred_pieces() {
  nlohmann::json cfg;
  for (int i = 0; i < 100; ++i) cfg["vocab"].push_back("<" + std::to_string(i) + ">");
  cfg["embedding_dim"] = 3;
  cfg["context_budget"] = 64;
  return fixtures::stub(cfg.dump());
}

TinyLmConfig tiny_cfg() {
  TinyLmConfig c;
  c.alphabet = "abcdefghij xyz=+()";
  c.d_model = 8;
  c.d_ff = 16;
  c.context = 64;
  c.seed = 3;
  return c;
}

TokenSequence io(const ModelBackend& b, const std::string& x, const std::string& y) {
  TokenSequence s = b.tokenize(x, Segment::input);
  s.append(b.tokenize(y, Segment::output));
  return s;
}

}  // namespace

TEST_CASE("tokenize contracts") {
  auto b = fixtures::uniform4();
  CHECK(b->tokenize("").empty());
  CHECK(b->tokenize("abcd").token_ids == b->tokenize("abcd").token_ids);
  CHECK(b->detokenize(b->tokenize("dcba").token_ids) == "dcba");
  auto big = fixtures::stub(R"({"vocab": ["a"], "context_budget": 2048})");
  CHECK_THROWS_AS(big->tokenize(std::string(1000000, 'a')), OverflowError);
}

TEST_CASE("uniform stub gives ln(1/4) everywhere") {
  auto b = fixtures::uniform4();
  const auto lp = b->sequence_logprobs(b->tokenize("abcdabcd"));
  REQUIRE(lp.size() == 7);
  for (double v : lp) CHECK(v == doctest::Approx(std::log(0.25)).epsilon(1e-15));
  CHECK(b->sequence_logprobs(b->tokenize("a")).empty());
}

TEST_CASE("greedy decoding repeats a dominant token") {
  auto b = fixtures::stub(R"({"vocab": ["a", "b"], "default": [{"piece": "a", "p": 0.9}]})");
  SamplingConfig cfg;
  cfg.greedy = true;
  cfg.max_new_tokens = 6;
  const auto out = b->sample_continuation(b->tokenize("b"), cfg, 0);
  CHECK(out.text == "aaaaaa");
  CHECK(out.reason == StopReason::max_new_tokens);
}

TEST_CASE("sampling is seed deterministic") {
  auto b = fixtures::uniform4();
  SamplingConfig cfg;
  cfg.temperature = 1.0;
  cfg.top_p = 1.0;
  cfg.max_new_tokens = 32;
  const auto p = b->tokenize("a");
  CHECK(b->sample_continuation(p, cfg, 42).text == b->sample_continuation(p, cfg, 42).text);
  CHECK(b->sample_continuation(p, cfg, 42).text != b->sample_continuation(p, cfg, 43).text);
}

TEST_CASE("stop sequence equal to the first emission yields an empty body") {
  auto b = fixtures::stub(R"({"vocab": ["a", "b"], "default": [{"piece": "a", "p": 0.9}]})");
  SamplingConfig cfg;
  cfg.greedy = true;
  cfg.max_new_tokens = 6;
  cfg.stop_sequences = {"a"};
  const auto out = b->sample_continuation(b->tokenize("b"), cfg, 0);
  CHECK(out.text.empty());
  CHECK(out.tokens.empty());
  CHECK(out.reason == StopReason::stop_sequence);
}

TEST_CASE("end-of-text terminates decoding") {
  auto b = fixtures::stub(R"({"vocab": ["a", "<eot>"], "eot": "<eot>", "default": [{"piece": "<eot>", "p": 1.0}]})");
  SamplingConfig cfg;
  cfg.greedy = true;
  const auto out = b->sample_continuation(b->tokenize("a"), cfg, 0);
  CHECK(out.text.empty());
  CHECK(out.reason == StopReason::end_of_text);
}

TEST_CASE("extend_embeddings hands out contiguous disjoint ranges") {
  auto b = hundred_pieces();
  const auto first = b->extend_embeddings("t1", 10, InitRule::copy_vocab_row, 1);
  const auto second = b->extend_embeddings("t2", 10, InitRule::copy_vocab_row, 1);
  REQUIRE(first.size() == 10);
  REQUIRE(second.size() == 10);
  for (TokenId i = 0; i < 10; ++i) {
    CHECK(first[i] == 100 + i);
    CHECK(second[i] == 110 + i);
  }
  CHECK(b->vocab_size() == 120);
  CHECK_THROWS_AS(b->extend_embeddings("t1", 2, InitRule::zeros, 1), ConfigError);
  CHECK_THROWS_AS(b->extend_embeddings("t3", 0, InitRule::zeros, 1), ConfigError);
}

TEST_CASE("same seed and rule give identical initial rows") {
  auto a = hundred_pieces();
  auto b = hundred_pieces();
  a->extend_embeddings("t", 4, InitRule::copy_vocab_row, 9);
  b->extend_embeddings("t", 4, InitRule::copy_vocab_row, 9);
  CHECK(a->rows_of("t") == b->rows_of("t"));
  auto z = hundred_pieces();
  z->extend_embeddings("t", 4, InitRule::zeros, 9);
  for (double v : z->rows_of("t")) CHECK(v == 0.0);
}

TEST_CASE("stub loss is analytic and additive") {
  auto b = fixtures::uniform4();
  const auto seq = io(*b, "a", "bcd");
  const auto mask = seq.positions(Segment::output);
  CHECK(mask.size() == 3);
  CHECK(b->concept_loss_and_gradient(seq, mask).loss == doctest::Approx(3 * std::log(4.0)).epsilon(1e-15));

  auto skew = fixtures::stub(R"({"vocab": ["a", "b", "c"], "default": [{"piece": "a", "p": 0.5}, {"piece": "b", "p": 0.3}]})");
  auto once = io(*skew, "a", "abcab");
  auto twice = once;
  twice.append(io(*skew, "a", "abcab"));
  const double l1 = skew->concept_loss_and_gradient(once, once.positions(Segment::output)).loss;
  const double l2 = skew->concept_loss_and_gradient(twice, twice.positions(Segment::output)).loss;
  CHECK(l2 == doctest::Approx(2 * l1).epsilon(1e-15));
}

TEST_CASE("empty or invalid masks are rejected") {
  auto b = fixtures::uniform4();
  const auto seq = io(*b, "a", "bcd");
  CHECK_THROWS_AS(b->concept_loss_and_gradient(seq, {}), RuntimeError);
  const std::vector<std::size_t> on_input = {0};
  CHECK_THROWS_AS(b->concept_loss_and_gradient(seq, on_input), RuntimeError);
}

TEST_CASE("concept tokens reach the loss through the input side only when they precede the mask") {
  TinyCausalLM lm(tiny_cfg());
  const auto ids = lm.extend_embeddings("t", 2, InitRule::copy_vocab_row, 4);

  TokenSequence before;
  for (auto id : ids) before.append(id, Segment::concept_token);
  before.append(io(lm, "abc", "xyz"));
  const auto g1 = lm.concept_loss_and_gradient(before, before.positions(Segment::output)).gradient;
  double norm1 = 0.0;
  for (double v : g1) norm1 += v * v;
  CHECK(norm1 > 0.0);

  // Appended after the target span, concept tokens cannot influence it as
  // inputs. The output layer is tied, so their rows still carry the softmax
  // normalizer gradient, which must match the sequence without them.
  const TokenSequence plain = io(lm, "abc", "xyz");
  TokenSequence after = plain;
  for (auto id : ids) after.append(id, Segment::concept_token);
  const auto r_plain = lm.concept_loss_and_gradient(plain, plain.positions(Segment::output));
  const auto r_after = lm.concept_loss_and_gradient(after, after.positions(Segment::output));
  CHECK(r_after.loss == r_plain.loss);
  CHECK(r_after.gradient == r_plain.gradient);
}

TEST_CASE("stub gradients are zero") {
  auto b = fixtures::uniform4();
  const auto ids = b->extend_embeddings("t", 2, InitRule::copy_vocab_row, 1);
  TokenSequence seq;
  for (auto id : ids) seq.append(id, Segment::concept_token);
  seq.append(io(*b, "a", "bcd"));
  for (double v : b->concept_loss_and_gradient(seq, seq.positions(Segment::output)).gradient) CHECK(v == 0.0);
}

TEST_CASE("tiny model is causal") {
  TinyCausalLM lm(tiny_cfg());
  const auto a = lm.sequence_logprobs(lm.tokenize("abc xyz"));
  const auto b = lm.sequence_logprobs(lm.tokenize("abc xzz"));
  // Token 5 differs; every earlier conditional must be bit-identical.
  for (std::size_t i = 0; i < 4; ++i) CHECK(a[i] == b[i]);
  CHECK(a[4] != b[4]);
}

TEST_CASE("greedy decoding ignores the seed") {
  TinyCausalLM lm(tiny_cfg());
  SamplingConfig cfg;
  cfg.greedy = true;
  cfg.max_new_tokens = 8;
  const auto prefix = lm.tokenize("abc=");
  const auto out = lm.sample_continuation(prefix, cfg, 0);
  CHECK(out.tokens.size() <= 8);
  CHECK(lm.sample_continuation(prefix, cfg, 99).text == out.text);
  TokenSequence full = prefix;
  full.append(out.tokens);
  for (double v : lm.sequence_logprobs(full)) CHECK(std::isfinite(v));
}

TEST_CASE("fingerprints identify the frozen model") {
  TinyCausalLM a(tiny_cfg()), b(tiny_cfg());
  auto other_cfg = tiny_cfg();
  other_cfg.seed = 4;
  TinyCausalLM c(other_cfg);
  CHECK(a.fingerprint() == b.fingerprint());
  CHECK(a.fingerprint() != c.fingerprint());
  const auto digest = a.base_digest();
  a.extend_embeddings("t", 3, InitRule::copy_vocab_row, 1);
  CHECK(a.base_digest() == digest);
  CHECK(a.fingerprint() == b.fingerprint());
  CHECK(a.descriptor().model_fingerprint == a.fingerprint());
}

TEST_CASE("sampling config validation") {
  SamplingConfig cfg;
  cfg.temperature = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.greedy = true;
  CHECK_NOTHROW(cfg.validate());
  cfg.top_p = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
