#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "latentdemo/backend.hpp"
#include "latentdemo/corpus.hpp"

namespace latentdemo {

/// The c added vocabulary rows that stand for one task's concept.
struct ConceptTokenSet {
  std::string task_id;
  std::vector<TokenId> token_ids;
  std::size_t c = 0;
  std::string checkpoint_ref;  // path of the saved rows, empty until saved
};

struct TrainingConfig {
  std::size_t c = 10;
  std::size_t epochs = 30;  // 0 keeps the initial rows
  double learning_rate = 0.3;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  std::optional<std::size_t> early_stop_patience;  // epochs without improvement
  InitRule init = InitRule::copy_vocab_row;

  void validate() const;
};

struct TrainingTrace {
  /// Step 0 is the mean loss over all pairs before any update; step s > 0 is
  /// the mean loss of the s-th minibatch, measured before its update.
  std::vector<std::pair<std::size_t, double>> steps;
  double final_loss = 0.0;  // mean over all pairs with the returned rows
  double wall_time_s = 0.0;
};

/// Sequence [theta][X][Y] with labels concept/input/output. X and Y are the
/// problem and solution parts of the few-shot block. Throws OverflowError
/// naming the pair when it does not fit the context.
TokenSequence assemble_training_sequence(const ModelBackend& backend, const ConceptTokenSet& theta,
                                         const DemonstrationPair& pair);

/// Adds c rows for `task_id` to the backend and fits them with Adam while
/// every base parameter stays frozen. Rows are rounded to float32 at the
/// end, so a checkpoint round-trip reproduces them exactly.
std::pair<ConceptTokenSet, TrainingTrace> train_task_concept(ModelBackend& backend, const std::string& task_id,
                                                             const std::vector<DemonstrationPair>& task_pairs,
                                                             const TrainingConfig& cfg);

/// Mean per-pair loss of `pairs` under the current rows of `theta`.
double mean_concept_loss(const ModelBackend& backend, const ConceptTokenSet& theta,
                         const std::vector<DemonstrationPair>& pairs);

/// Writes the binary "DCPT" checkpoint (via a temporary file and rename) and
/// sets theta.checkpoint_ref.
void save_checkpoint(const ModelBackend& backend, ConceptTokenSet& theta, const std::filesystem::path& path);

struct CheckpointData {
  std::string task_id;
  std::size_t c = 0;
  std::size_t embedding_dim = 0;
  std::size_t base_vocab_size = 0;
  std::string model_fingerprint;  // lowercase hex
  std::vector<float> rows;
};

/// Parses a checkpoint without touching any backend. Throws ParseError on
/// truncation, trailing bytes, bad magic or unsupported version.
CheckpointData read_checkpoint(const std::filesystem::path& path);

/// Validates the checkpoint against `backend` (fingerprint and shapes) and
/// attaches its rows. Throws ConfigError on a mismatch; nothing is attached
/// unless every check passes.
ConceptTokenSet load_checkpoint(ModelBackend& backend, const std::filesystem::path& path);

/// Digest of a concept's identity and current row values.
std::string concept_digest(const ModelBackend& backend, const ConceptTokenSet& theta);

}  // namespace latentdemo
