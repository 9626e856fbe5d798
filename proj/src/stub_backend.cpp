#include "latentdemo/stub_backend.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <fstream>
#include <mutex>
#include <random>
#include <sstream>

#include "json.hpp"
#include "latentdemo/common.hpp"

namespace latentdemo {

using nlohmann::json;

namespace {

class StubSession final : public DecodeSession {
 public:
  using DistFn = std::function<std::vector<double>(std::span<const TokenId>)>;
  StubSession(std::span<const TokenId> prefix, DistFn dist)
      : context_(prefix.begin(), prefix.end()), dist_(std::move(dist)) {}

  std::vector<double> next_logprobs() override {
    std::vector<double> p = dist_(context_);
    for (double& v : p) v = std::log(v);
    return p;
  }
  void push(TokenId id) override { context_.push_back(id); }

 private:
  std::vector<TokenId> context_;
  DistFn dist_;
};

}  // namespace

StubBackend::StubBackend(std::vector<std::string> pieces, std::size_t dim, std::size_t budget, std::uint64_t seed)
    : ModelBackend(pieces.size(), dim, budget, seed), pieces_(std::move(pieces)) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.1);
  embeddings_.resize(pieces_.size() * dim);
  for (double& v : embeddings_) v = normal(rng);
}

std::unique_ptr<StubBackend> StubBackend::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("stub backend config not found: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

std::unique_ptr<StubBackend> StubBackend::from_json(const std::string& json_text) {
  json cfg;
  try {
    cfg = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("stub backend config: ") + e.what());
  }
  try {
    auto pieces = cfg.at("vocab").get<std::vector<std::string>>();
    if (pieces.empty()) throw ConfigError("stub backend config: empty vocab");
    const auto dim = cfg.value("embedding_dim", std::size_t{4});
    const auto budget = cfg.value("context_budget", std::size_t{2048});
    const auto seed = cfg.value("seed", std::uint64_t{0});
    if (dim == 0 || budget == 0) throw ConfigError("stub backend config: embedding_dim and context_budget must be >= 1");
    std::unique_ptr<StubBackend> b(new StubBackend(pieces, dim, budget, seed));

    auto piece_id = [&](const std::string& piece) -> TokenId {
      for (std::size_t i = 0; i < b->pieces_.size(); ++i) {
        if (b->pieces_[i] == piece) return static_cast<TokenId>(i);
      }
      throw ConfigError("stub backend config: unknown piece '" + piece + "'");
    };
    if (cfg.contains("unk")) b->unk_ = piece_id(cfg["unk"].get<std::string>());
    if (cfg.contains("eot")) b->eot_ = piece_id(cfg["eot"].get<std::string>());

    auto parse_dist = [&](const json& arr) {
      std::vector<Entry> dist;
      double total = 0.0;
      for (const auto& e : arr) {
        Entry entry;
        entry.p = e.at("p").get<double>();
        if (!(entry.p >= 0.0 && entry.p <= 1.0)) throw ConfigError("stub backend config: probability outside [0,1]");
        if (e.contains("piece")) {
          entry.id = piece_id(e["piece"].get<std::string>());
        } else if (e.contains("id")) {
          entry.id = e["id"].get<TokenId>();
        } else if (e.value("added", false)) {
          entry.kind = Entry::Kind::added;
        } else {
          throw ConfigError("stub backend config: distribution entry needs piece, id or added");
        }
        if (entry.kind == Entry::Kind::id) total += entry.p;
        dist.push_back(entry);
      }
      if (total > 1.0 + 1e-12) throw ConfigError("stub backend config: explicit probabilities exceed 1");
      return dist;
    };

    for (const auto& r : cfg.value("rules", json::array())) {
      Rule rule;
      const json when = r.value("when", json::object());
      if (when.contains("last")) rule.when.last = piece_id(when["last"].get<std::string>());
      if (when.contains("last_id")) rule.when.last = when["last_id"].get<TokenId>();
      if (when.contains("contains")) rule.when.contains = piece_id(when["contains"].get<std::string>());
      if (when.contains("contains_id")) rule.when.contains = when["contains_id"].get<TokenId>();
      if (when.contains("last_added")) rule.when.last_added = when["last_added"].get<bool>();
      rule.dist = parse_dist(r.at("dist"));
      b->rules_.push_back(std::move(rule));
    }
    if (cfg.contains("default")) b->default_ = parse_dist(cfg["default"]);
    b->table_json_ = cfg.dump();
    return b;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("stub backend config: ") + e.what());
  }
}

std::vector<TokenId> StubBackend::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t best_len = 0;
    TokenId best = 0;
    for (std::size_t i = 0; i < pieces_.size(); ++i) {
      const auto& p = pieces_[i];
      if (p.size() > best_len && text.compare(pos, p.size(), p) == 0) {
        best_len = p.size();
        best = static_cast<TokenId>(i);
      }
    }
    if (best_len == 0) {
      if (!unk_) throw RuntimeError("stub tokenizer: no piece matches at byte " + std::to_string(pos));
      best = *unk_;
      best_len = 1;
    }
    ids.push_back(best);
    pos += best_len;
  }
  return ids;
}

void StubBackend::hash_tokenizer(Hasher& h) const {
  h.field(static_cast<std::uint64_t>(pieces_.size()));
  for (const auto& p : pieces_) h.field(p);
}

void StubBackend::hash_base_parameters(Hasher& h) const {
  h.field(table_json_);
  h.update(std::as_bytes(std::span<const double>(embeddings_)));
}

std::span<const double> StubBackend::base_embedding_row(TokenId id) const {
  return {embeddings_.data() + id * embedding_dim(), embedding_dim()};
}

bool StubBackend::matches(const Condition& c, std::span<const TokenId> context) const {
  if (c.last && (context.empty() || context.back() != *c.last)) return false;
  if (c.contains && std::find(context.begin(), context.end(), *c.contains) == context.end()) return false;
  if (c.last_added) {
    const bool is_added = !context.empty() && ext_.is_added(context.back());
    if (is_added != *c.last_added) return false;
  }
  return true;
}

std::vector<double> StubBackend::distribution_locked(std::span<const TokenId> context) const {
  const std::size_t v = base_vocab_size() + ext_.num_added();
  const std::vector<Entry>* dist = &default_;
  for (const auto& r : rules_) {
    if (matches(r.when, context)) {
      dist = &r.dist;
      break;
    }
  }
  std::vector<double> p(v, 0.0);
  std::vector<bool> fixed(v, false);
  double mass = 0.0;
  for (const auto& e : *dist) {
    if (e.kind == Entry::Kind::added) {
      for (std::size_t id = base_vocab_size(); id < v; ++id) {
        p[id] = e.p;
        fixed[id] = true;
        mass += e.p;
      }
    } else if (e.id < v) {
      p[e.id] = e.p;
      fixed[e.id] = true;
      mass += e.p;
    }
  }
  if (mass > 1.0 + 1e-12) throw RuntimeError("stub backend: declared probabilities exceed 1 for this vocabulary");
  std::size_t free = 0;
  for (bool f : fixed) free += f ? 0 : 1;
  if (free > 0) {
    const double share = std::max(0.0, 1.0 - mass) / static_cast<double>(free);
    for (std::size_t id = 0; id < v; ++id) {
      if (!fixed[id]) p[id] = share;
    }
  }
  return p;
}

std::vector<double> StubBackend::distribution(std::span<const TokenId> context) const {
  std::shared_lock lock(mutex_);
  return distribution_locked(context);
}

std::vector<double> StubBackend::logprobs_impl(std::span<const TokenId> ids) const {
  std::vector<double> out;
  out.reserve(ids.size() - 1);
  for (std::size_t i = 1; i < ids.size(); ++i) {
    out.push_back(std::log(distribution_locked(ids.first(i))[ids[i]]));
  }
  return out;
}

std::unique_ptr<DecodeSession> StubBackend::start_decode(std::span<const TokenId> prefix) const {
  return std::make_unique<StubSession>(prefix, [this](std::span<const TokenId> ctx) { return distribution_locked(ctx); });
}

// The table ignores embeddings, so the gradient is identically zero.
LossAndGradient StubBackend::loss_and_gradient_impl(std::span<const TokenId> ids,
                                                    std::span<const std::size_t> mask) const {
  LossAndGradient out;
  for (std::size_t pos : mask) out.loss -= std::log(distribution_locked(ids.first(pos))[ids[pos]]);
  out.gradient.assign(ext_.rows.size(), 0.0);
  return out;
}

}  // namespace latentdemo
