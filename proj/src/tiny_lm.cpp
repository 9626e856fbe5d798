#include "latentdemo/tiny_lm.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <random>

#include "latentdemo/common.hpp"

namespace latentdemo {

namespace {

constexpr double kRmsEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

// y[n x m] = x[n x k] * w[k x m]
void matmul(const double* x, const double* w, double* y, std::size_t n, std::size_t k, std::size_t m) {
  std::fill(y, y + n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double* yr = y + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x[i * k + p];
      const double* wr = w + p * m;
      for (std::size_t j = 0; j < m; ++j) yr[j] += xv * wr[j];
    }
  }
}

// dx[n x k] += dy[n x m] * w^T
void matmul_bt_acc(const double* dy, const double* w, double* dx, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* dyr = dy + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double* wr = w + p * m;
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += dyr[j] * wr[j];
      dx[i * k + p] += s;
    }
  }
}

// dw[k x m] += x^T * dy
void matmul_at_acc(const double* x, const double* dy, double* dw, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* dyr = dy + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x[i * k + p];
      double* dwr = dw + p * m;
      for (std::size_t j = 0; j < m; ++j) dwr[j] += xv * dyr[j];
    }
  }
}

void rms_forward(const double* x, double* y, double* r, std::size_t n, std::size_t d) {
  for (std::size_t i = 0; i < n; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += x[i * d + j] * x[i * d + j];
    r[i] = std::sqrt(ss / static_cast<double>(d) + kRmsEps);
    for (std::size_t j = 0; j < d; ++j) y[i * d + j] = x[i * d + j] / r[i];
  }
}

// dx += d(y = x / rms(x)) given y, rms and dy.
void rms_backward_acc(const double* y, const double* r, const double* dy, double* dx, std::size_t n, std::size_t d) {
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < d; ++j) dot += dy[i * d + j] * y[i * d + j];
    dot /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) dx[i * d + j] += (dy[i * d + j] - y[i * d + j] * dot) / r[i];
  }
}

double gelu(double u) { return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + 0.044715 * u * u * u))); }

double gelu_grad(double u) {
  const double t = std::tanh(kGeluC * (u + 0.044715 * u * u * u));
  return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * u * u);
}

std::string default_alphabet() {
  std::string a;
  for (char c = 32; c < 127; ++c) a.push_back(c);
  a.push_back('\n');
  a.push_back('\t');
  return a;
}

}  // namespace

void TinyLmConfig::validate() const {
  if (layers < 1 || d_model < 1 || heads < 1 || d_ff < 1 || context < 2) {
    throw ConfigError("tiny backend: layers, d_model, heads, d_ff must be >= 1 and context >= 2");
  }
  if (d_model % heads != 0) throw ConfigError("tiny backend: d_model must be divisible by heads");
}

struct TinyCausalLM::Activations {
  struct Layer {
    std::vector<double> xin, a, ra, q, k, v, att, o, xmid, b, rb, u, g;
  };
  std::size_t T = 0;
  std::vector<Layer> layers;
  std::vector<double> xf, f, rf;
};

TinyCausalLM::TinyCausalLM(const TinyLmConfig& cfg)
    : ModelBackend((cfg.alphabet.empty() ? default_alphabet() : cfg.alphabet).size() + 2, cfg.d_model, cfg.context,
                   cfg.seed),
      cfg_(cfg),
      alphabet_(cfg.alphabet.empty() ? default_alphabet() : cfg.alphabet) {
  cfg_.validate();
  std::fill(std::begin(byte_to_id_), std::end(byte_to_id_), -1);
  for (std::size_t i = 0; i < alphabet_.size(); ++i) {
    auto& slot = byte_to_id_[static_cast<unsigned char>(alphabet_[i])];
    if (slot != -1) throw ConfigError("tiny backend: alphabet contains a duplicate character");
    slot = static_cast<int>(i);
  }
  unk_ = static_cast<TokenId>(alphabet_.size());
  eot_ = unk_ + 1;

  const std::size_t d = cfg_.d_model;
  const std::size_t f = cfg_.d_ff;
  std::size_t off = base_vocab_size() * d;
  off_pos_ = off;
  off += cfg_.context * d;
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    LayerOffsets lo{};
    lo.wq = off, off += d * d;
    lo.wk = off, off += d * d;
    lo.wv = off, off += d * d;
    lo.wo = off, off += d * d;
    lo.w1 = off, off += d * f;
    lo.b1 = off, off += f;
    lo.w2 = off, off += f * d;
    lo.b2 = off, off += d;
    layer_off_.push_back(lo);
  }
  params_.assign(off, 0.0);

  std::mt19937_64 rng(cfg_.seed);
  auto fill = [&](std::size_t at, std::size_t count, double stddev) {
    std::normal_distribution<double> normal(0.0, stddev);
    for (std::size_t i = 0; i < count; ++i) params_[at + i] = normal(rng);
  };
  fill(0, base_vocab_size() * d, 1.0);
  fill(off_pos_, cfg_.context * d, 0.5);
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  const double sf = 1.0 / std::sqrt(static_cast<double>(f));
  for (const auto& lo : layer_off_) {
    fill(lo.wq, d * d, sd);
    fill(lo.wk, d * d, sd);
    fill(lo.wv, d * d, sd);
    fill(lo.wo, d * d, sd);
    fill(lo.w1, d * f, sd);
    fill(lo.w2, f * d, sf);
  }
}

std::vector<TokenId> TinyCausalLM::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  ids.reserve(text.size());
  for (char c : text) {
    const int id = byte_to_id_[static_cast<unsigned char>(c)];
    ids.push_back(id < 0 ? unk_ : static_cast<TokenId>(id));
  }
  return ids;
}

std::string TinyCausalLM::base_token_text(TokenId id) const {
  if (id < alphabet_.size()) return std::string(1, alphabet_[id]);
  if (id == unk_) return "?";
  return {};  // end-of-text renders as nothing
}

void TinyCausalLM::hash_tokenizer(Hasher& h) const { h.field(alphabet_); }

void TinyCausalLM::hash_base_parameters(Hasher& h) const {
  h.field(static_cast<std::uint64_t>(cfg_.layers))
      .field(static_cast<std::uint64_t>(cfg_.d_model))
      .field(static_cast<std::uint64_t>(cfg_.heads))
      .field(static_cast<std::uint64_t>(cfg_.d_ff))
      .field(static_cast<std::uint64_t>(cfg_.context));
  h.update(std::as_bytes(std::span<const double>(params_)));
}

std::span<const double> TinyCausalLM::base_embedding_row(TokenId id) const {
  return {params_.data() + static_cast<std::size_t>(id) * cfg_.d_model, cfg_.d_model};
}

const double* TinyCausalLM::embedding(TokenId id) const {
  if (id < base_vocab_size()) return params_.data() + static_cast<std::size_t>(id) * cfg_.d_model;
  return ext_.row(id).data();
}

void TinyCausalLM::logits_row(const double* f, std::vector<double>& out) const {
  const std::size_t d = cfg_.d_model;
  const std::size_t v = base_vocab_size() + ext_.num_added();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  out.assign(v, 0.0);
  for (std::size_t t = 0; t < v; ++t) {
    const double* e = embedding(static_cast<TokenId>(t));
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += f[j] * e[j];
    out[t] = s * scale;
  }
}

void TinyCausalLM::forward(std::span<const TokenId> ids, Activations& act) const {
  const std::size_t T = ids.size();
  const std::size_t d = cfg_.d_model;
  const std::size_t F = cfg_.d_ff;
  const std::size_t H = cfg_.heads;
  const std::size_t dh = d / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double* P = params_.data() + off_pos_;

  act.T = T;
  std::vector<double> x(T * d);
  for (std::size_t t = 0; t < T; ++t) {
    const double* e = embedding(ids[t]);
    for (std::size_t j = 0; j < d; ++j) x[t * d + j] = e[j] + P[t * d + j];
  }

  act.layers.assign(cfg_.layers, {});
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    auto& L = act.layers[l];
    const auto& lo = layer_off_[l];
    const double* W = params_.data();
    L.xin = x;
    L.a.resize(T * d);
    L.ra.resize(T);
    rms_forward(L.xin.data(), L.a.data(), L.ra.data(), T, d);
    L.q.resize(T * d);
    L.k.resize(T * d);
    L.v.resize(T * d);
    matmul(L.a.data(), W + lo.wq, L.q.data(), T, d, d);
    matmul(L.a.data(), W + lo.wk, L.k.data(), T, d, d);
    matmul(L.a.data(), W + lo.wv, L.v.data(), T, d, d);

    L.att.assign(H * T * T, 0.0);
    L.o.assign(T * d, 0.0);
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < T; ++i) {
        double* row = L.att.data() + (h * T + i) * T;
        double mx = -1e300;
        for (std::size_t j = 0; j <= i; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += L.q[i * d + h * dh + c] * L.k[j * d + h * dh + c];
          row[j] = s * scale;
          mx = std::max(mx, row[j]);
        }
        double sum = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          row[j] = std::exp(row[j] - mx);
          sum += row[j];
        }
        for (std::size_t j = 0; j <= i; ++j) {
          row[j] /= sum;
          for (std::size_t c = 0; c < dh; ++c) L.o[i * d + h * dh + c] += row[j] * L.v[j * d + h * dh + c];
        }
      }
    }
    std::vector<double> proj(T * d);
    matmul(L.o.data(), W + lo.wo, proj.data(), T, d, d);
    L.xmid.resize(T * d);
    for (std::size_t i = 0; i < T * d; ++i) L.xmid[i] = L.xin[i] + proj[i];

    L.b.resize(T * d);
    L.rb.resize(T);
    rms_forward(L.xmid.data(), L.b.data(), L.rb.data(), T, d);
    L.u.resize(T * F);
    matmul(L.b.data(), W + lo.w1, L.u.data(), T, d, F);
    L.g.resize(T * F);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t j = 0; j < F; ++j) {
        L.u[t * F + j] += W[lo.b1 + j];
        L.g[t * F + j] = gelu(L.u[t * F + j]);
      }
    }
    std::vector<double> m(T * d);
    matmul(L.g.data(), W + lo.w2, m.data(), T, F, d);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t j = 0; j < d; ++j) x[t * d + j] = L.xmid[t * d + j] + m[t * d + j] + W[lo.b2 + j];
    }
  }
  act.xf = x;
  act.f.resize(T * d);
  act.rf.resize(T);
  rms_forward(act.xf.data(), act.f.data(), act.rf.data(), T, d);
}

void TinyCausalLM::backward(std::span<const TokenId> ids, const Activations& act,
                            const std::vector<std::vector<double>>& dlogits, const std::vector<std::size_t>& rows,
                            double* dbase, double* dext) const {
  const std::size_t T = act.T;
  const std::size_t d = cfg_.d_model;
  const std::size_t F = cfg_.d_ff;
  const std::size_t H = cfg_.heads;
  const std::size_t dh = d / H;
  const std::size_t vb = base_vocab_size();
  const std::size_t v = vb + ext_.num_added();
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double out_scale = 1.0 / std::sqrt(static_cast<double>(d));
  const double* W = params_.data();

  auto emb_grad = [&](TokenId id) -> double* {
    if (id < vb) return dbase != nullptr ? dbase + static_cast<std::size_t>(id) * d : nullptr;
    return dext + (static_cast<std::size_t>(id) - vb) * d;
  };

  // Output layer (tied embeddings).
  std::vector<double> df(T * d, 0.0);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const std::size_t s = rows[r];
    const double* f = act.f.data() + s * d;
    for (std::size_t t = 0; t < v; ++t) {
      const double g = dlogits[r][t] * out_scale;
      if (g == 0.0) continue;
      const double* e = embedding(static_cast<TokenId>(t));
      for (std::size_t j = 0; j < d; ++j) df[s * d + j] += g * e[j];
      if (double* de = emb_grad(static_cast<TokenId>(t)); de != nullptr) {
        for (std::size_t j = 0; j < d; ++j) de[j] += g * f[j];
      }
    }
  }
  std::vector<double> dx(T * d, 0.0);
  rms_backward_acc(act.f.data(), act.rf.data(), df.data(), dx.data(), T, d);

  for (std::size_t li = cfg_.layers; li-- > 0;) {
    const auto& L = act.layers[li];
    const auto& lo = layer_off_[li];

    // MLP block: x_out = x_mid + gelu(b W1 + b1) W2 + b2, b = rms(x_mid)
    std::vector<double> dxmid = dx;
    std::vector<double> dg(T * F, 0.0);
    matmul_bt_acc(dx.data(), W + lo.w2, dg.data(), T, F, d);
    if (dbase != nullptr) {
      matmul_at_acc(L.g.data(), dx.data(), dbase + lo.w2, T, F, d);
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t j = 0; j < d; ++j) dbase[lo.b2 + j] += dx[t * d + j];
      }
    }
    std::vector<double> du(T * F);
    for (std::size_t i = 0; i < T * F; ++i) du[i] = dg[i] * gelu_grad(L.u[i]);
    if (dbase != nullptr) {
      matmul_at_acc(L.b.data(), du.data(), dbase + lo.w1, T, d, F);
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t j = 0; j < F; ++j) dbase[lo.b1 + j] += du[t * F + j];
      }
    }
    std::vector<double> db(T * d, 0.0);
    matmul_bt_acc(du.data(), W + lo.w1, db.data(), T, d, F);
    rms_backward_acc(L.b.data(), L.rb.data(), db.data(), dxmid.data(), T, d);

    // Attention block: x_mid = x_in + attn(rms(x_in)) Wo
    std::vector<double> dxin = dxmid;
    std::vector<double> dout(T * d, 0.0);
    matmul_bt_acc(dxmid.data(), W + lo.wo, dout.data(), T, d, d);
    if (dbase != nullptr) matmul_at_acc(L.o.data(), dxmid.data(), dbase + lo.wo, T, d, d);

    std::vector<double> dq(T * d, 0.0), dk(T * d, 0.0), dv(T * d, 0.0);
    std::vector<double> dA(T);
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < T; ++i) {
        const double* A = L.att.data() + (h * T + i) * T;
        double dot = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) {
            s += dout[i * d + h * dh + c] * L.v[j * d + h * dh + c];
            dv[j * d + h * dh + c] += A[j] * dout[i * d + h * dh + c];
          }
          dA[j] = s;
          dot += A[j] * s;
        }
        for (std::size_t j = 0; j <= i; ++j) {
          const double ds = A[j] * (dA[j] - dot) * att_scale;
          if (ds == 0.0) continue;
          for (std::size_t c = 0; c < dh; ++c) {
            dq[i * d + h * dh + c] += ds * L.k[j * d + h * dh + c];
            dk[j * d + h * dh + c] += ds * L.q[i * d + h * dh + c];
          }
        }
      }
    }
    if (dbase != nullptr) {
      matmul_at_acc(L.a.data(), dq.data(), dbase + lo.wq, T, d, d);
      matmul_at_acc(L.a.data(), dk.data(), dbase + lo.wk, T, d, d);
      matmul_at_acc(L.a.data(), dv.data(), dbase + lo.wv, T, d, d);
    }
    std::vector<double> da(T * d, 0.0);
    matmul_bt_acc(dq.data(), W + lo.wq, da.data(), T, d, d);
    matmul_bt_acc(dk.data(), W + lo.wk, da.data(), T, d, d);
    matmul_bt_acc(dv.data(), W + lo.wv, da.data(), T, d, d);
    rms_backward_acc(L.a.data(), L.ra.data(), da.data(), dxin.data(), T, d);
    dx = std::move(dxin);
  }

  // Input embeddings and positions.
  for (std::size_t t = 0; t < T; ++t) {
    if (double* de = emb_grad(ids[t]); de != nullptr) {
      for (std::size_t j = 0; j < d; ++j) de[j] += dx[t * d + j];
    }
    if (dbase != nullptr) {
      for (std::size_t j = 0; j < d; ++j) dbase[off_pos_ + t * d + j] += dx[t * d + j];
    }
  }
}

std::vector<double> TinyCausalLM::logprobs_impl(std::span<const TokenId> ids) const {
  Activations act;
  forward(ids, act);
  std::vector<double> out;
  std::vector<double> logits;
  out.reserve(ids.size() - 1);
  for (std::size_t t = 0; t + 1 < ids.size(); ++t) {
    logits_row(act.f.data() + t * cfg_.d_model, logits);
    out.push_back(log_softmax(logits)[ids[t + 1]]);
  }
  return out;
}

namespace {

// Loss rows and dL/dlogits for each masked position (predicted from pos - 1).
template <class LogitsFn>
double loss_rows(std::span<const TokenId> ids, std::span<const std::size_t> mask, LogitsFn&& logits_at,
                 std::vector<std::vector<double>>& dlogits, std::vector<std::size_t>& rows) {
  double loss = 0.0;
  for (std::size_t pos : mask) {
    std::vector<double> lp = log_softmax(logits_at(pos - 1));
    loss -= lp[ids[pos]];
    for (double& v : lp) v = std::exp(v);
    lp[ids[pos]] -= 1.0;
    dlogits.push_back(std::move(lp));
    rows.push_back(pos - 1);
  }
  return loss;
}

}  // namespace

LossAndGradient TinyCausalLM::loss_and_gradient_impl(std::span<const TokenId> ids,
                                                     std::span<const std::size_t> mask) const {
  Activations act;
  forward(ids, act);
  std::vector<std::vector<double>> dlogits;
  std::vector<std::size_t> rows;
  std::vector<double> logits;
  LossAndGradient out;
  out.loss = loss_rows(ids, mask, [&](std::size_t r) {
    logits_row(act.f.data() + r * cfg_.d_model, logits);
    return logits;
  }, dlogits, rows);
  out.gradient.assign(ext_.rows.size(), 0.0);
  backward(ids, act, dlogits, rows, nullptr, out.gradient.data());
  return out;
}

TinyCausalLM::FullGradient TinyCausalLM::full_gradient(std::span<const TokenId> ids,
                                                       std::span<const std::size_t> mask) const {
  std::shared_lock lock(mutex_);
  check_budget(ids.size(), "full_gradient");
  check_ids(ids);
  Activations act;
  forward(ids, act);
  std::vector<std::vector<double>> dlogits;
  std::vector<std::size_t> rows;
  std::vector<double> logits;
  FullGradient out;
  out.loss = loss_rows(ids, mask, [&](std::size_t r) {
    logits_row(act.f.data() + r * cfg_.d_model, logits);
    return logits;
  }, dlogits, rows);
  out.base.assign(params_.size(), 0.0);
  out.extension.assign(ext_.rows.size(), 0.0);
  backward(ids, act, dlogits, rows, out.base.data(), out.extension.data());
  return out;
}

// Key/value cache decoder; one position per push.
class TinyDecodeSession final : public DecodeSession {
 public:
  TinyDecodeSession(const TinyCausalLM& m, std::span<const TokenId> prefix) : m_(m) {
    if (prefix.empty()) throw RuntimeError("tiny backend: sampling needs a non-empty prefix");
    keys_.resize(m_.cfg_.layers);
    values_.resize(m_.cfg_.layers);
    for (TokenId id : prefix) push(id);
  }

  std::vector<double> next_logprobs() override {
    std::vector<double> logits;
    m_.logits_row(last_f_.data(), logits);
    return log_softmax(logits);
  }

  void push(TokenId id) override {
    const auto& cfg = m_.cfg_;
    const std::size_t d = cfg.d_model;
    const std::size_t F = cfg.d_ff;
    const std::size_t H = cfg.heads;
    const std::size_t dh = d / H;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const double* W = m_.params_.data();
    if (pos_ >= cfg.context) throw OverflowError("tiny backend: decode position exceeds context");

    std::vector<double> x(d);
    const double* e = m_.embedding(id);
    const double* P = W + m_.off_pos_ + pos_ * d;
    for (std::size_t j = 0; j < d; ++j) x[j] = e[j] + P[j];

    std::vector<double> a(d), q(d), k(d), v(d), o(d), proj(d), b(d), u(F), m(d);
    double r = 0.0;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const auto& lo = m_.layer_off_[l];
      rms_forward(x.data(), a.data(), &r, 1, d);
      matmul(a.data(), W + lo.wq, q.data(), 1, d, d);
      matmul(a.data(), W + lo.wk, k.data(), 1, d, d);
      matmul(a.data(), W + lo.wv, v.data(), 1, d, d);
      keys_[l].insert(keys_[l].end(), k.begin(), k.end());
      values_[l].insert(values_[l].end(), v.begin(), v.end());
      const std::size_t n = pos_ + 1;
      std::fill(o.begin(), o.end(), 0.0);
      std::vector<double> w(n);
      for (std::size_t h = 0; h < H; ++h) {
        double mx = -1e300;
        for (std::size_t j = 0; j < n; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += q[h * dh + c] * keys_[l][j * d + h * dh + c];
          w[j] = s * scale;
          mx = std::max(mx, w[j]);
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          w[j] = std::exp(w[j] - mx);
          sum += w[j];
        }
        for (std::size_t j = 0; j < n; ++j) {
          for (std::size_t c = 0; c < dh; ++c) o[h * dh + c] += (w[j] / sum) * values_[l][j * d + h * dh + c];
        }
      }
      matmul(o.data(), W + lo.wo, proj.data(), 1, d, d);
      for (std::size_t j = 0; j < d; ++j) x[j] += proj[j];
      rms_forward(x.data(), b.data(), &r, 1, d);
      matmul(b.data(), W + lo.w1, u.data(), 1, d, F);
      for (std::size_t j = 0; j < F; ++j) u[j] = gelu(u[j] + W[lo.b1 + j]);
      matmul(u.data(), W + lo.w2, m.data(), 1, F, d);
      for (std::size_t j = 0; j < d; ++j) x[j] += m[j] + W[lo.b2 + j];
    }
    last_f_.resize(d);
    rms_forward(x.data(), last_f_.data(), &r, 1, d);
    ++pos_;
  }

 private:
  const TinyCausalLM& m_;
  std::vector<std::vector<double>> keys_, values_;
  std::vector<double> last_f_;
  std::size_t pos_ = 0;
};

std::unique_ptr<DecodeSession> TinyCausalLM::start_decode(std::span<const TokenId> prefix) const {
  return std::make_unique<TinyDecodeSession>(*this, prefix);
}

}  // namespace latentdemo
