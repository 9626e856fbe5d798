#include "latentdemo/concept_learning.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>

#include "latentdemo/common.hpp"
#include "latentdemo/generation.hpp"

namespace latentdemo {

namespace fs = std::filesystem;

void TrainingConfig::validate() const {
  if (c < 1) throw ConfigError("training: c must be >= 1");
  if (batch_size < 1) throw ConfigError("training: batch_size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("training: learning_rate must be > 0");
  if (early_stop_patience && *early_stop_patience < 1) throw ConfigError("training: patience must be >= 1");
}

namespace {

struct PairTokens {
  TokenSequence x;
  TokenSequence y;
};

PairTokens tokenize_pair(const ModelBackend& backend, const DemonstrationPair& pair) {
  try {
    return {backend.tokenize(render_problem_part(pair), Segment::input),
            backend.tokenize(render_solution_part(pair), Segment::output)};
  } catch (const OverflowError& e) {
    throw OverflowError(fmt::format("pair {} does not fit the context: {}", pair.task_id, e.what()));
  }
}

TokenSequence build_sequence(const ConceptTokenSet& theta, const PairTokens& parts) {
  TokenSequence seq;
  for (TokenId id : theta.token_ids) seq.append(id, Segment::concept_token);
  seq.append(parts.x);
  seq.append(parts.y);
  return seq;
}

// Gradient rows of `theta` inside the full extension gradient.
void accumulate_rows(const LossAndGradient& lg, const ConceptTokenSet& theta, std::size_t base_vocab,
                     std::size_t dim, double weight, std::vector<double>& out) {
  for (std::size_t r = 0; r < theta.token_ids.size(); ++r) {
    const std::size_t src = (theta.token_ids[r] - base_vocab) * dim;
    for (std::size_t d = 0; d < dim; ++d) out[r * dim + d] += weight * lg.gradient[src + d];
  }
}

// Fisher-Yates with an explicit bounded draw; std::shuffle differs across
// standard libraries.
void portable_shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::uint64_t n = i;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t draw = 0;
    do {
      draw = rng();
    } while (draw >= limit);
    std::swap(v[i - 1], v[static_cast<std::size_t>(draw % n)]);
  }
}

double mean_loss(const ModelBackend& backend, const ConceptTokenSet& theta, const std::vector<PairTokens>& parts) {
  double sum = 0.0;
  for (const auto& p : parts) {
    const auto seq = build_sequence(theta, p);
    const auto mask = seq.positions(Segment::output);
    sum += backend.concept_loss_and_gradient(seq, mask).loss;
  }
  return sum / static_cast<double>(parts.size());
}

}  // namespace

TokenSequence assemble_training_sequence(const ModelBackend& backend, const ConceptTokenSet& theta,
                                         const DemonstrationPair& pair) {
  if (theta.token_ids.empty()) throw ConfigError("concept for " + theta.task_id + " has no tokens");
  const auto parts = tokenize_pair(backend, pair);
  if (parts.y.empty()) throw ConfigError("pair " + pair.task_id + " has an empty solution after tokenization");
  const std::size_t length = theta.token_ids.size() + parts.x.size() + parts.y.size();
  if (length > backend.context_budget()) {
    throw OverflowError(fmt::format("pair {} needs {} tokens with its concept; context budget is {}", pair.task_id,
                                    length, backend.context_budget()));
  }
  return build_sequence(theta, parts);
}

double mean_concept_loss(const ModelBackend& backend, const ConceptTokenSet& theta,
                         const std::vector<DemonstrationPair>& pairs) {
  if (pairs.empty()) throw ConfigError("mean_concept_loss: no pairs");
  std::vector<PairTokens> parts;
  for (const auto& p : pairs) {
    assemble_training_sequence(backend, theta, p);
    parts.push_back(tokenize_pair(backend, p));
  }
  return mean_loss(backend, theta, parts);
}

std::pair<ConceptTokenSet, TrainingTrace> train_task_concept(ModelBackend& backend, const std::string& task_id,
                                                             const std::vector<DemonstrationPair>& task_pairs,
                                                             const TrainingConfig& cfg) {
  cfg.validate();
  if (task_pairs.empty()) throw ConfigError("training " + task_id + ": no demonstrations");
  const auto started = std::chrono::steady_clock::now();

  // Fit check before any rows exist, so a fatal error leaves the backend untouched.
  std::vector<PairTokens> parts;
  for (const auto& pair : task_pairs) {
    try {
      auto p = tokenize_pair(backend, pair);
      if (p.y.empty()) throw ConfigError("pair " + pair.task_id + " has an empty solution after tokenization");
      const std::size_t length = cfg.c + p.x.size() + p.y.size();
      if (length > backend.context_budget()) {
        throw OverflowError(fmt::format("pair {} needs {} tokens with its concept; context budget is {}",
                                        pair.task_id, length, backend.context_budget()));
      }
      parts.push_back(std::move(p));
    } catch (const OverflowError& e) {
      spdlog::warn("training {}: skipping {}", task_id, e.what());
    }
  }
  if (parts.empty()) throw RuntimeError("training " + task_id + ": every demonstration overflows the context");

  const std::string digest_before = backend.base_digest();
  ConceptTokenSet theta;
  theta.task_id = task_id;
  theta.c = cfg.c;
  theta.token_ids = backend.extend_embeddings(task_id, cfg.c, cfg.init, derive_seed(cfg.seed, "concept-init", task_id));

  const std::size_t dim = backend.embedding_dim();
  const std::size_t base_vocab = backend.base_vocab_size();
  std::vector<double> params = backend.rows_of(task_id);
  std::vector<double> m(params.size(), 0.0);
  std::vector<double> v(params.size(), 0.0);
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;

  TrainingTrace trace;
  const double initial = mean_loss(backend, theta, parts);
  if (!std::isfinite(initial)) throw RuntimeError(fmt::format("training {}: initial loss is not finite", task_id));
  trace.steps.emplace_back(0, initial);

  std::mt19937_64 rng(derive_seed(cfg.seed, "concept-shuffle", task_id));
  std::vector<std::size_t> order(parts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t step = 0;
  double best_epoch = initial;
  std::size_t stale = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    portable_shuffle(order, rng);
    double epoch_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double weight = 1.0 / static_cast<double>(end - start);
      std::vector<double> grad(params.size(), 0.0);
      double loss = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        const auto seq = build_sequence(theta, parts[order[b]]);
        const auto mask = seq.positions(Segment::output);
        const auto lg = backend.concept_loss_and_gradient(seq, mask);
        loss += weight * lg.loss;
        accumulate_rows(lg, theta, base_vocab, dim, weight, grad);
      }
      ++step;
      if (!std::isfinite(loss)) {
        throw RuntimeError(fmt::format("training {}: loss became non-finite at step {} (epoch {})", task_id, step,
                                       epoch));
      }
      trace.steps.emplace_back(step, loss);
      epoch_sum += loss * static_cast<double>(end - start);

      const double t = static_cast<double>(step);
      const double corr1 = 1.0 - std::pow(kBeta1, t);
      const double corr2 = 1.0 - std::pow(kBeta2, t);
      for (std::size_t i = 0; i < params.size(); ++i) {
        m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * grad[i];
        v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * grad[i] * grad[i];
        params[i] -= cfg.learning_rate * (m[i] / corr1) / (std::sqrt(v[i] / corr2) + kEps);
      }
      backend.set_rows(task_id, params);
    }
    const double epoch_mean = epoch_sum / static_cast<double>(parts.size());
    if (cfg.early_stop_patience) {
      if (epoch_mean < best_epoch) {
        best_epoch = epoch_mean;
        stale = 0;
      } else if (++stale >= *cfg.early_stop_patience) {
        spdlog::info("training {}: loss plateaued, stopping after epoch {}", task_id, epoch + 1);
        break;
      }
    }
  }

  for (double& p : params) p = static_cast<double>(static_cast<float>(p));
  backend.set_rows(task_id, params);
  trace.final_loss = mean_loss(backend, theta, parts);

  if (backend.base_digest() != digest_before) {
    throw RuntimeError("training " + task_id + ": base parameters changed; frozen-base contract violated");
  }
  trace.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  spdlog::debug("training {}: {} steps, loss {:.4f} -> {:.4f}", task_id, step, initial, trace.final_loss);
  return {std::move(theta), std::move(trace)};
}

namespace {

constexpr char kMagic[4] = {'D', 'C', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}
  const char* take(std::size_t n, std::string_view what) {
    if (data_.size() - pos_ < n) throw ParseError(fmt::format("checkpoint truncated while reading {}", what));
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32(std::string_view what) {
    const auto* p = reinterpret_cast<const unsigned char*>(take(4, what));
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::string data_;
  std::size_t pos_ = 0;
};

std::string hex_to_bytes(const std::string& hex) {
  if (hex.size() != 64) throw RuntimeError("model fingerprint is not a SHA-256 hex digest");
  std::string out;
  for (std::size_t i = 0; i < hex.size(); i += 2) {
    out.push_back(static_cast<char>(std::stoi(hex.substr(i, 2), nullptr, 16)));
  }
  return out;
}

std::string bytes_to_hex(const char* p, std::size_t n) {
  std::string out;
  for (std::size_t i = 0; i < n; ++i) out += fmt::format("{:02x}", static_cast<unsigned char>(p[i]));
  return out;
}

}  // namespace

void save_checkpoint(const ModelBackend& backend, ConceptTokenSet& theta, const fs::path& path) {
  const auto rows = backend.rows_of(theta.task_id);
  if (rows.empty()) throw RuntimeError("save_checkpoint: no rows for task " + theta.task_id);
  std::string out(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(theta.task_id.size()));
  out += theta.task_id;
  put_u32(out, static_cast<std::uint32_t>(theta.c));
  put_u32(out, static_cast<std::uint32_t>(backend.embedding_dim()));
  put_u32(out, static_cast<std::uint32_t>(backend.base_vocab_size()));
  out += hex_to_bytes(backend.fingerprint());
  for (double r : rows) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(r)));

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f || !f.write(out.data(), static_cast<std::streamsize>(out.size()))) {
      throw RuntimeError("cannot write checkpoint " + tmp.string());
    }
  }
  fs::rename(tmp, path);
  theta.checkpoint_ref = path.string();
}

CheckpointData read_checkpoint(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open checkpoint " + path.string());
  Reader r(std::string(std::istreambuf_iterator<char>(f), {}));
  if (std::memcmp(r.take(4, "magic"), kMagic, 4) != 0) throw ParseError("not a concept checkpoint: " + path.string());
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) throw ParseError(fmt::format("unsupported checkpoint version {}", version));
  CheckpointData out;
  const auto id_len = r.u32("task id length");
  out.task_id.assign(r.take(id_len, "task id"), id_len);
  out.c = r.u32("c");
  out.embedding_dim = r.u32("embedding dim");
  out.base_vocab_size = r.u32("base vocab size");
  out.model_fingerprint = bytes_to_hex(r.take(32, "fingerprint"), 32);
  if (out.c < 1 || out.embedding_dim < 1) throw ParseError("checkpoint declares an empty concept");
  out.rows.resize(out.c * out.embedding_dim);
  for (float& v : out.rows) v = std::bit_cast<float>(r.u32("rows"));
  if (!r.done()) throw ParseError("checkpoint has trailing bytes: " + path.string());
  return out;
}

ConceptTokenSet load_checkpoint(ModelBackend& backend, const fs::path& path) {
  const auto data = read_checkpoint(path);
  if (data.model_fingerprint != backend.fingerprint()) {
    throw ConfigError(fmt::format("checkpoint {} was trained against model {}, refusing to load into {}",
                                  path.string(), data.model_fingerprint.substr(0, 12),
                                  backend.fingerprint().substr(0, 12)));
  }
  if (data.embedding_dim != backend.embedding_dim() || data.base_vocab_size != backend.base_vocab_size()) {
    throw ConfigError("checkpoint " + path.string() + " has shapes that do not match the backend");
  }
  std::vector<double> rows(data.rows.begin(), data.rows.end());
  ConceptTokenSet theta;
  theta.task_id = data.task_id;
  theta.c = data.c;
  theta.token_ids = backend.attach_rows(data.task_id, rows);
  theta.checkpoint_ref = path.string();
  return theta;
}

std::string concept_digest(const ModelBackend& backend, const ConceptTokenSet& theta) {
  Hasher h;
  h.field(theta.task_id);
  h.field(static_cast<std::uint64_t>(theta.c));
  for (double r : backend.rows_of(theta.task_id)) h.field(std::bit_cast<std::uint64_t>(r));
  return h.hex();
}

}  // namespace latentdemo
