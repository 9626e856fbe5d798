#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "latentdemo/backend.hpp"

namespace latentdemo {

struct TinyLmConfig {
  std::string alphabet;  // empty: printable ASCII plus '\n' and '\t'
  std::size_t layers = 2;
  std::size_t d_model = 32;
  std::size_t heads = 2;
  std::size_t d_ff = 64;
  std::size_t context = 1024;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Small pre-norm causal transformer in double precision with a
/// character-level tokenizer and tied input/output embeddings.
///
/// Base weights are generated from the seed and never change; the output
/// layer scores the extended vocabulary through the same embedding rows, so
/// concept tokens are both conditioning inputs and predictable outputs.
/// Unknown bytes map to an <unk> token (detokenized as '?').
class TinyCausalLM final : public ModelBackend {
 public:
  explicit TinyCausalLM(const TinyLmConfig& cfg);

  std::string name() const override { return "tiny"; }
  std::optional<TokenId> end_of_text() const override { return eot_; }
  const TinyLmConfig& config() const noexcept { return cfg_; }
  std::size_t num_base_parameters() const noexcept { return params_.size(); }

  /// Full-gradient variant used by tests: gradient w.r.t. every base
  /// parameter as well as the extension rows. Never applied to the model.
  struct FullGradient {
    double loss = 0.0;
    std::vector<double> base;
    std::vector<double> extension;
  };
  FullGradient full_gradient(std::span<const TokenId> ids, std::span<const std::size_t> mask) const;

 protected:
  std::vector<TokenId> encode(std::string_view text) const override;
  std::string base_token_text(TokenId id) const override;
  void hash_tokenizer(Hasher& h) const override;
  void hash_base_parameters(Hasher& h) const override;
  std::span<const double> base_embedding_row(TokenId id) const override;

  std::vector<double> logprobs_impl(std::span<const TokenId> ids) const override;
  std::unique_ptr<DecodeSession> start_decode(std::span<const TokenId> prefix) const override;
  LossAndGradient loss_and_gradient_impl(std::span<const TokenId> ids,
                                         std::span<const std::size_t> mask) const override;

 private:
  friend class TinyDecodeSession;
  struct Activations;

  const double* embedding(TokenId id) const;
  void forward(std::span<const TokenId> ids, Activations& act) const;
  // Logits over the extended vocabulary for hidden row `row` of the final norm.
  void logits_row(const double* f, std::vector<double>& out) const;
  void backward(std::span<const TokenId> ids, const Activations& act, const std::vector<std::vector<double>>& dlogits,
                const std::vector<std::size_t>& rows, double* dbase, double* dext) const;

  TinyLmConfig cfg_;
  std::string alphabet_;
  int byte_to_id_[256];
  TokenId unk_ = 0;
  TokenId eot_ = 0;
  std::vector<double> params_;
  std::size_t off_pos_ = 0;
  struct LayerOffsets {
    std::size_t wq, wk, wv, wo, w1, b1, w2, b2;
  };
  std::vector<LayerOffsets> layer_off_;
};

}  // namespace latentdemo
