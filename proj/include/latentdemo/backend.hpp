#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace latentdemo {

class Hasher;

using TokenId = std::uint32_t;

enum class Segment : std::uint8_t { concept_token, input, output };

/// Token ids plus a per-token segment label (concept token / input / output).
struct TokenSequence {
  std::vector<TokenId> token_ids;
  std::vector<Segment> segment_labels;

  std::size_t size() const noexcept { return token_ids.size(); }
  bool empty() const noexcept { return token_ids.empty(); }
  void append(TokenId id, Segment label) {
    token_ids.push_back(id);
    segment_labels.push_back(label);
  }
  void append(const TokenSequence& other) {
    token_ids.insert(token_ids.end(), other.token_ids.begin(), other.token_ids.end());
    segment_labels.insert(segment_labels.end(), other.segment_labels.begin(), other.segment_labels.end());
  }
  /// Positions labelled `output`; the default loss mask.
  std::vector<std::size_t> positions(Segment label) const;
};

/// Trainable rows appended after the frozen base vocabulary.
struct EmbeddingExtension {
  std::size_t base_vocab_size = 0;
  std::size_t embedding_dim = 0;
  std::vector<double> rows;  // num_added x embedding_dim, row-major
  std::map<TokenId, std::string> row_owner;

  std::size_t num_added() const noexcept { return embedding_dim == 0 ? 0 : rows.size() / embedding_dim; }
  bool is_added(TokenId id) const noexcept { return id >= base_vocab_size && id < base_vocab_size + num_added(); }
  std::span<const double> row(TokenId id) const;
  std::span<double> row(TokenId id);
  std::vector<TokenId> ids_of(std::string_view task_id) const;
};

struct BackendDescriptor {
  std::string name;
  std::string model_fingerprint;
  std::size_t embedding_dim = 0;
  std::size_t base_vocab_size = 0;
  std::size_t context_budget = 0;
  std::uint64_t determinism_seed = 0;
};

struct SamplingConfig {
  double temperature = 0.8;
  bool greedy = false;
  double top_p = 0.95;
  std::size_t max_new_tokens = 512;
  std::vector<std::string> stop_sequences;

  void validate() const;
};

enum class StopReason : std::uint8_t { stop_sequence, max_new_tokens, end_of_text };

struct Continuation {
  TokenSequence tokens;  // emitted tokens, excluding stop text and end-of-text
  std::string text;
  StopReason reason = StopReason::max_new_tokens;
};

enum class InitRule : std::uint8_t {
  copy_vocab_row,  // copy a uniformly sampled base-vocabulary row
  zeros,
};

struct LossAndGradient {
  double loss = 0.0;
  std::vector<double> gradient;  // num_added x embedding_dim, row-major
};

/// Incremental decoding state for sampling.
class DecodeSession {
 public:
  virtual ~DecodeSession() = default;
  /// Log-probabilities of the next token over the extended vocabulary.
  virtual std::vector<double> next_logprobs() = 0;
  virtual void push(TokenId id) = 0;
};

/// Frozen autoregressive model with a trainable vocabulary extension.
///
/// Reads (tokenize, log-probs, sampling, loss/gradient) take a shared lock
/// and may run concurrently; extension mutations take an exclusive lock.
class ModelBackend {
 public:
  virtual ~ModelBackend() = default;
  ModelBackend(const ModelBackend&) = delete;
  ModelBackend& operator=(const ModelBackend&) = delete;

  BackendDescriptor descriptor() const;
  virtual std::string name() const = 0;

  std::size_t base_vocab_size() const noexcept { return base_vocab_; }
  std::size_t embedding_dim() const noexcept { return dim_; }
  std::size_t context_budget() const noexcept { return budget_; }
  std::size_t vocab_size() const;
  virtual std::optional<TokenId> end_of_text() const { return std::nullopt; }

  /// Throws OverflowError when the encoding exceeds the context budget.
  TokenSequence tokenize(std::string_view text, Segment label = Segment::input) const;
  std::string detokenize(std::span<const TokenId> ids) const;
  std::string token_text(TokenId id) const;

  /// log P(token_i | tokens_<i) for i = 1..n-1.
  std::vector<double> sequence_logprobs(const TokenSequence& seq) const;

  Continuation sample_continuation(const TokenSequence& prefix, const SamplingConfig& cfg, std::uint64_t seed) const;

  /// Appends `count` rows owned by `task_id`; returns their contiguous ids.
  std::vector<TokenId> extend_embeddings(const std::string& task_id, std::size_t count, InitRule init,
                                         std::uint64_t seed);
  /// Appends rows with given values (checkpoint restore).
  std::vector<TokenId> attach_rows(const std::string& task_id, std::span<const double> rows);
  void set_rows(const std::string& task_id, std::span<const double> rows);
  std::vector<double> rows_of(const std::string& task_id) const;
  std::vector<TokenId> ids_of(const std::string& task_id) const;
  bool has_task(const std::string& task_id) const;

  /// loss = -sum_{i in mask} log P(token_i | tokens_<i), gradient over added rows.
  LossAndGradient concept_loss_and_gradient(const TokenSequence& seq, std::span<const std::size_t> mask) const;

  /// Digest over every frozen parameter (excludes the extension).
  std::string base_digest() const;
  /// Digest over base parameters and tokenizer.
  std::string fingerprint() const;

  EmbeddingExtension extension_snapshot() const;

 protected:
  ModelBackend(std::size_t base_vocab, std::size_t dim, std::size_t budget, std::uint64_t seed);

  virtual std::vector<TokenId> encode(std::string_view text) const = 0;
  virtual std::string base_token_text(TokenId id) const = 0;
  virtual void hash_tokenizer(Hasher& h) const = 0;
  virtual void hash_base_parameters(Hasher& h) const = 0;
  virtual std::span<const double> base_embedding_row(TokenId id) const = 0;

  // Called with the shared lock held; `ext_` is safe to read.
  virtual std::vector<double> logprobs_impl(std::span<const TokenId> ids) const = 0;
  virtual std::unique_ptr<DecodeSession> start_decode(std::span<const TokenId> prefix) const = 0;
  virtual LossAndGradient loss_and_gradient_impl(std::span<const TokenId> ids,
                                                 std::span<const std::size_t> mask) const = 0;

  void check_budget(std::size_t length, std::string_view what) const;
  void check_ids(std::span<const TokenId> ids) const;

  EmbeddingExtension ext_;
  mutable std::shared_mutex mutex_;

 private:
  std::size_t base_vocab_;
  std::size_t dim_;
  std::size_t budget_;
  std::uint64_t seed_;
};

/// Numerically stable log-softmax of a logit row.
std::vector<double> log_softmax(std::span<const double> logits);

}  // namespace latentdemo
