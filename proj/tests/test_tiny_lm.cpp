#include "doctest.h"

#include <cmath>

#include "latentdemo/tiny_lm.hpp"

using namespace latentdemo;

namespace {

TinyLmConfig small_config() {
  TinyLmConfig cfg;
  cfg.alphabet = "abcdefghij xyz=+()";
  cfg.layers = 2;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.d_ff = 16;
  cfg.context = 64;
  cfg.seed = 11;
  return cfg;
}

}  // namespace

TEST_CASE("concept-row gradient matches central finite differences") {
  TinyCausalLM lm(small_config());
  CHECK(lm.base_vocab_size() <= 64);
  auto ids = lm.extend_embeddings("t", 3, InitRule::copy_vocab_row, 5);

  TokenSequence seq;
  for (auto id : ids) seq.append(id, Segment::concept_token);
  seq.append(lm.tokenize("abc (x)", Segment::input));
  seq.append(lm.tokenize("y=a+b", Segment::output));
  const auto mask = seq.positions(Segment::output);

  const auto analytic = lm.concept_loss_and_gradient(seq, mask);
  auto rows = lm.rows_of("t");
  const double h = 1e-3;
  const std::size_t d = lm.embedding_dim();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      auto plus = rows, minus = rows;
      plus[r * d + j] += h;
      minus[r * d + j] -= h;
      lm.set_rows("t", plus);
      const double lp = lm.concept_loss_and_gradient(seq, mask).loss;
      lm.set_rows("t", minus);
      const double lm_ = lm.concept_loss_and_gradient(seq, mask).loss;
      lm.set_rows("t", rows);
      const double fd = (lp - lm_) / (2 * h);
      const double a = analytic.gradient[r * d + j];
      num += (a - fd) * (a - fd);
      den += fd * fd;
    }
    MESSAGE("row " << r << " rel err " << std::sqrt(num / den));
    CHECK(std::sqrt(num / den) <= 1e-4);
  }
}
