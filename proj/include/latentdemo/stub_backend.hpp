#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "latentdemo/backend.hpp"

namespace latentdemo {

/// Test backend whose next-token distributions come from a declared table.
///
/// Config (JSON):
///   {
///     "vocab": ["a", "b", ...],        // pieces; id = index; greedy longest match
///     "unk": "?",                      // optional piece for unmatched bytes
///     "eot": "<eot>",                  // optional piece acting as end-of-text
///     "embedding_dim": 4, "context_budget": 2048, "seed": 0,
///     "rules": [ {"when": {...}, "dist": [...]}, ... ],   // first match wins
///     "default": [...]                 // distribution when no rule matches
///   }
/// Conditions in "when" (all must hold): "last" / "contains" (piece),
/// "last_id" / "contains_id" (id), "last_added" (bool).
/// Distribution entries: {"piece": s, "p": x}, {"id": n, "p": x}, or
/// {"added": true, "p": x} (x for every extension token). Leftover mass is
/// spread uniformly over the remaining tokens of the extended vocabulary.
class StubBackend final : public ModelBackend {
 public:
  struct Entry {
    enum class Kind { id, added } kind = Kind::id;
    TokenId id = 0;
    double p = 0.0;
  };
  struct Condition {
    std::optional<TokenId> last;
    std::optional<TokenId> contains;
    std::optional<bool> last_added;
  };
  struct Rule {
    Condition when;
    std::vector<Entry> dist;
  };

  static std::unique_ptr<StubBackend> from_json(const std::string& json_text);
  static std::unique_ptr<StubBackend> from_file(const std::filesystem::path& path);

  std::string name() const override { return "stub"; }
  std::optional<TokenId> end_of_text() const override { return eot_; }

  /// Next-token distribution (probabilities) for a context, over the
  /// current extended vocabulary.
  std::vector<double> distribution(std::span<const TokenId> context) const;

 protected:
  std::vector<TokenId> encode(std::string_view text) const override;
  std::string base_token_text(TokenId id) const override { return pieces_.at(id); }
  void hash_tokenizer(Hasher& h) const override;
  void hash_base_parameters(Hasher& h) const override;
  std::span<const double> base_embedding_row(TokenId id) const override;

  std::vector<double> logprobs_impl(std::span<const TokenId> ids) const override;
  std::unique_ptr<DecodeSession> start_decode(std::span<const TokenId> prefix) const override;
  LossAndGradient loss_and_gradient_impl(std::span<const TokenId> ids,
                                         std::span<const std::size_t> mask) const override;

 private:
  StubBackend(std::vector<std::string> pieces, std::size_t dim, std::size_t budget, std::uint64_t seed);

  std::vector<double> distribution_locked(std::span<const TokenId> context) const;
  bool matches(const Condition& c, std::span<const TokenId> context) const;

  std::vector<std::string> pieces_;
  std::optional<TokenId> unk_;
  std::optional<TokenId> eot_;
  std::vector<Rule> rules_;
  std::vector<Entry> default_;
  std::vector<double> embeddings_;  // base_vocab x dim
  std::string table_json_;          // canonical dump, part of the base digest
};

}  // namespace latentdemo
