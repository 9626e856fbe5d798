#include "latentdemo/backend.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>

#include "latentdemo/common.hpp"

namespace latentdemo {

std::vector<std::size_t> TokenSequence::positions(Segment label) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < segment_labels.size(); ++i) {
    if (segment_labels[i] == label) out.push_back(i);
  }
  return out;
}

std::span<const double> EmbeddingExtension::row(TokenId id) const {
  return {rows.data() + (id - base_vocab_size) * embedding_dim, embedding_dim};
}

std::span<double> EmbeddingExtension::row(TokenId id) {
  return {rows.data() + (id - base_vocab_size) * embedding_dim, embedding_dim};
}

std::vector<TokenId> EmbeddingExtension::ids_of(std::string_view task_id) const {
  std::vector<TokenId> ids;
  for (const auto& [id, owner] : row_owner) {
    if (owner == task_id) ids.push_back(id);
  }
  return ids;
}

void SamplingConfig::validate() const {
  if (!greedy && !(temperature > 0.0)) throw ConfigError("sampling: temperature must be > 0 unless greedy");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("sampling: top_p must be in (0, 1]");
  if (max_new_tokens < 1) throw ConfigError("sampling: max_new_tokens must be >= 1");
}

std::vector<double> log_softmax(std::span<const double> logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

ModelBackend::ModelBackend(std::size_t base_vocab, std::size_t dim, std::size_t budget, std::uint64_t seed)
    : base_vocab_(base_vocab), dim_(dim), budget_(budget), seed_(seed) {
  ext_.base_vocab_size = base_vocab;
  ext_.embedding_dim = dim;
}

BackendDescriptor ModelBackend::descriptor() const {
  return {name(), fingerprint(), dim_, base_vocab_, budget_, seed_};
}

std::size_t ModelBackend::vocab_size() const {
  std::shared_lock lock(mutex_);
  return base_vocab_ + ext_.num_added();
}

void ModelBackend::check_budget(std::size_t length, std::string_view what) const {
  if (length > budget_) {
    throw OverflowError(std::string(what) + ": " + std::to_string(length) + " tokens exceed the context budget of " +
                        std::to_string(budget_));
  }
}

void ModelBackend::check_ids(std::span<const TokenId> ids) const {
  const std::size_t v = base_vocab_ + ext_.num_added();
  for (TokenId id : ids) {
    if (id >= v) throw RuntimeError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(v));
  }
}

TokenSequence ModelBackend::tokenize(std::string_view text, Segment label) const {
  TokenSequence seq;
  seq.token_ids = encode(text);
  check_budget(seq.token_ids.size(), "tokenize");
  seq.segment_labels.assign(seq.token_ids.size(), label);
  return seq;
}

std::string ModelBackend::token_text(TokenId id) const {
  if (id < base_vocab_) return base_token_text(id);
  std::shared_lock lock(mutex_);
  auto it = ext_.row_owner.find(id);
  if (it == ext_.row_owner.end()) return "<unk>";
  return "<concept:" + it->second + ":" + std::to_string(id) + ">";
}

std::string ModelBackend::detokenize(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) out += token_text(id);
  return out;
}

std::vector<double> ModelBackend::sequence_logprobs(const TokenSequence& seq) const {
  check_budget(seq.size(), "sequence_logprobs");
  std::shared_lock lock(mutex_);
  check_ids(seq.token_ids);
  if (seq.size() < 2) return {};
  return logprobs_impl(seq.token_ids);
}

LossAndGradient ModelBackend::concept_loss_and_gradient(const TokenSequence& seq,
                                                        std::span<const std::size_t> mask) const {
  if (mask.empty()) throw RuntimeError("concept_loss_and_gradient: empty loss mask");
  check_budget(seq.size(), "concept_loss_and_gradient");
  for (std::size_t p : mask) {
    if (p == 0 || p >= seq.size()) throw RuntimeError("loss mask position " + std::to_string(p) + " out of range");
    if (!seq.segment_labels.empty() && seq.segment_labels[p] != Segment::output) {
      throw RuntimeError("loss mask position " + std::to_string(p) + " is not an output token");
    }
  }
  std::shared_lock lock(mutex_);
  check_ids(seq.token_ids);
  return loss_and_gradient_impl(seq.token_ids, mask);
}

namespace {

double canonical_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

Continuation ModelBackend::sample_continuation(const TokenSequence& prefix, const SamplingConfig& cfg,
                                               std::uint64_t seed) const {
  cfg.validate();
  check_budget(prefix.size(), "sample_continuation");
  std::shared_lock lock(mutex_);
  check_ids(prefix.token_ids);

  std::mt19937_64 rng(seed);
  auto session = start_decode(prefix.token_ids);
  const auto eot = end_of_text();

  Continuation out;
  std::vector<std::size_t> offsets;  // text offset where each emitted token starts
  for (std::size_t step = 0; step < cfg.max_new_tokens; ++step) {
    if (prefix.size() + step >= budget_) throw OverflowError("sample_continuation: context budget exhausted");
    std::vector<double> lp = session->next_logprobs();
    // Concept rows are conditioning devices, never emitted as text.
    lp.resize(base_vocab_);

    TokenId chosen = 0;
    if (cfg.greedy) {
      chosen = static_cast<TokenId>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    } else {
      std::vector<double> scaled(lp.size());
      for (std::size_t i = 0; i < lp.size(); ++i) scaled[i] = lp[i] / cfg.temperature;
      std::vector<double> probs = log_softmax(scaled);
      for (double& p : probs) p = std::exp(p);
      std::vector<TokenId> order(probs.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](TokenId a, TokenId b) { return probs[a] > probs[b]; });
      double cum = 0.0;
      std::size_t keep = 0;
      while (keep < order.size()) {
        cum += probs[order[keep++]];
        if (cum >= cfg.top_p) break;
      }
      double u = canonical_uniform(rng) * cum;
      chosen = order[keep - 1];
      for (std::size_t i = 0; i < keep; ++i) {
        u -= probs[order[i]];
        if (u < 0.0) {
          chosen = order[i];
          break;
        }
      }
    }

    if (eot && chosen == *eot) {
      out.reason = StopReason::end_of_text;
      return out;
    }
    offsets.push_back(out.text.size());
    out.tokens.append(chosen, Segment::output);
    out.text += base_token_text(chosen);

    for (const auto& stop : cfg.stop_sequences) {
      if (stop.empty()) continue;
      const auto at = out.text.find(stop);
      if (at == std::string::npos) continue;
      out.text.resize(at);
      std::size_t kept = 0;
      while (kept < offsets.size() && offsets[kept] < at) ++kept;
      out.tokens.token_ids.resize(kept);
      out.tokens.segment_labels.resize(kept);
      out.reason = StopReason::stop_sequence;
      return out;
    }
    session->push(chosen);
  }
  out.reason = StopReason::max_new_tokens;
  return out;
}

std::vector<TokenId> ModelBackend::extend_embeddings(const std::string& task_id, std::size_t count, InitRule init,
                                                     std::uint64_t seed) {
  if (count < 1) throw ConfigError("extend_embeddings: count must be >= 1");
  std::vector<double> rows(count * dim_, 0.0);
  if (init == InitRule::copy_vocab_row) {
    std::mt19937_64 rng(seed);
    for (std::size_t r = 0; r < count; ++r) {
      const auto src = static_cast<TokenId>(rng() % base_vocab_);
      auto base = base_embedding_row(src);
      std::copy(base.begin(), base.end(), rows.begin() + static_cast<std::ptrdiff_t>(r * dim_));
    }
  }
  return attach_rows(task_id, rows);
}

std::vector<TokenId> ModelBackend::attach_rows(const std::string& task_id, std::span<const double> rows) {
  if (rows.empty() || rows.size() % dim_ != 0) {
    throw ConfigError("attach_rows: row data must be a positive multiple of embedding_dim");
  }
  std::unique_lock lock(mutex_);
  for (const auto& [id, owner] : ext_.row_owner) {
    if (owner == task_id) throw ConfigError("task '" + task_id + "' already has concept tokens");
  }
  const std::size_t count = rows.size() / dim_;
  std::vector<TokenId> ids;
  const auto first = static_cast<TokenId>(base_vocab_ + ext_.num_added());
  ext_.rows.insert(ext_.rows.end(), rows.begin(), rows.end());
  for (std::size_t r = 0; r < count; ++r) {
    ids.push_back(first + static_cast<TokenId>(r));
    ext_.row_owner[ids.back()] = task_id;
  }
  return ids;
}

void ModelBackend::set_rows(const std::string& task_id, std::span<const double> rows) {
  std::unique_lock lock(mutex_);
  const auto ids = ext_.ids_of(task_id);
  if (ids.empty()) throw RuntimeError("set_rows: unknown task '" + task_id + "'");
  if (rows.size() != ids.size() * dim_) throw RuntimeError("set_rows: row data has wrong size");
  for (std::size_t r = 0; r < ids.size(); ++r) {
    auto dst = ext_.row(ids[r]);
    std::copy_n(rows.begin() + static_cast<std::ptrdiff_t>(r * dim_), dim_, dst.begin());
  }
}

std::vector<double> ModelBackend::rows_of(const std::string& task_id) const {
  std::shared_lock lock(mutex_);
  std::vector<double> out;
  for (TokenId id : ext_.ids_of(task_id)) {
    auto r = ext_.row(id);
    out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}

std::vector<TokenId> ModelBackend::ids_of(const std::string& task_id) const {
  std::shared_lock lock(mutex_);
  return ext_.ids_of(task_id);
}

bool ModelBackend::has_task(const std::string& task_id) const { return !ids_of(task_id).empty(); }

std::string ModelBackend::base_digest() const {
  Hasher h;
  hash_base_parameters(h);
  return h.hex();
}

std::string ModelBackend::fingerprint() const {
  Hasher h;
  h.field(name());
  hash_tokenizer(h);
  h.field(static_cast<std::uint64_t>(budget_));
  h.field(base_digest());
  return h.hex();
}

EmbeddingExtension ModelBackend::extension_snapshot() const {
  std::shared_lock lock(mutex_);
  return ext_;
}

}  // namespace latentdemo
