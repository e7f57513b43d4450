#include "onedse/neural.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "onedse/error.hpp"
#include "onedse/text.hpp"

namespace onedse {

Tensor::Tensor(std::vector<std::size_t> dims, double fill) : shape(std::move(dims)) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  data.assign(n, fill);
}

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw ArgumentError(what);
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise and dense ops

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t n = x.rows(), in = x.cols(), out = w.cols();
  require(w.rows() == in && b.size() == out, "linear: shape mismatch");
  Tensor y = Tensor::matrix(n, out);
  for (std::size_t r = 0; r < n; ++r) {
    double* yr = y.row(r);
    std::copy(b.data.begin(), b.data.end(), yr);
    const double* xr = x.row(r);
    for (std::size_t i = 0; i < in; ++i) {
      const double xv = xr[i];
      const double* wr = w.row(i);
      for (std::size_t o = 0; o < out; ++o) yr[o] += xv * wr[o];
    }
  }
  return y;
}

void linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor* dx, Tensor& dw, Tensor& db) {
  const std::size_t n = x.rows(), in = x.cols(), out = w.cols();
  require(dy.rows() == n && dy.cols() == out, "linear_backward: shape mismatch");
  for (std::size_t r = 0; r < n; ++r) {
    const double* g = dy.row(r);
    const double* xr = x.row(r);
    for (std::size_t o = 0; o < out; ++o) db.data[o] += g[o];
    for (std::size_t i = 0; i < in; ++i) {
      const double* wr = w.row(i);
      double* dwr = dw.row(i);
      const double xv = xr[i];
      double acc = 0;
      for (std::size_t o = 0; o < out; ++o) {
        dwr[o] += xv * g[o];
        acc += g[o] * wr[o];
      }
      if (dx) dx->row(r)[i] += acc;
    }
  }
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.data) v = v > 0 ? v : 0;
  return y;
}

void relu_backward(const Tensor& x, const Tensor& dy, Tensor& dx) {
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x.data[i] > 0) dx.data[i] += dy.data[i];
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, LayerNormCache* cache) {
  const std::size_t n = x.rows(), d = x.cols();
  require(gamma.size() == d && beta.size() == d, "layer_norm: shape mismatch");
  Tensor y(x.shape);
  if (cache) {
    cache->xhat = Tensor(x.shape);
    cache->rstd.assign(n, 0);
  }
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = x.row(r);
    double mean = 0;
    for (std::size_t c = 0; c < d; ++c) mean += xr[c];
    mean /= static_cast<double>(d);
    double var = 0;
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    double* yr = y.row(r);
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (xr[c] - mean) * rstd;
      if (cache) cache->xhat.row(r)[c] = h;
      yr[c] = gamma.data[c] * h + beta.data[c];
    }
    if (cache) cache->rstd[r] = rstd;
  }
  return y;
}

void layer_norm_backward(const Tensor& gamma, const LayerNormCache& cache, const Tensor& dy, Tensor& dx,
                         Tensor& dgamma, Tensor& dbeta) {
  const std::size_t n = dy.rows(), d = dy.cols();
  std::vector<double> dh(d);
  for (std::size_t r = 0; r < n; ++r) {
    const double* g = dy.row(r);
    const double* h = cache.xhat.row(r);
    double mean_dh = 0, mean_dh_h = 0;
    for (std::size_t c = 0; c < d; ++c) {
      dgamma.data[c] += g[c] * h[c];
      dbeta.data[c] += g[c];
      dh[c] = g[c] * gamma.data[c];
      mean_dh += dh[c];
      mean_dh_h += dh[c] * h[c];
    }
    mean_dh /= static_cast<double>(d);
    mean_dh_h /= static_cast<double>(d);
    double* out = dx.row(r);
    for (std::size_t c = 0; c < d; ++c) out[c] += cache.rstd[r] * (dh[c] - mean_dh - h[c] * mean_dh_h);
  }
}

Tensor embed(std::span<const TokenId> tokens, const Tensor& table, TokenId pad) {
  const std::size_t d = table.cols();
  Tensor y = Tensor::matrix(tokens.size(), d);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const TokenId id = tokens[t];
    if (id < 0 || static_cast<std::size_t>(id) >= table.rows())
      throw ArgumentError("token id " + std::to_string(id) + " out of range");
    if (id == pad) continue;
    std::copy(table.row(static_cast<std::size_t>(id)), table.row(static_cast<std::size_t>(id)) + d, y.row(t));
  }
  return y;
}

void embed_backward(std::span<const TokenId> tokens, const Tensor& dy, Tensor& dtable, TokenId pad) {
  const std::size_t d = dtable.cols();
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] == pad) continue;
    double* row = dtable.row(static_cast<std::size_t>(tokens[t]));
    const double* g = dy.row(t);
    for (std::size_t c = 0; c < d; ++c) row[c] += g[c];
  }
}

Tensor positional_encoding(std::size_t s, std::size_t d) {
  require(d % 2 == 0, "positional_encoding: d must be even");
  Tensor pe = Tensor::matrix(s, d);
  for (std::size_t i = 0; i < d / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d));
    for (std::size_t t = 0; t < s; ++t) {
      pe(t, 2 * i) = std::sin(static_cast<double>(t) * freq);
      pe(t, 2 * i + 1) = std::cos(static_cast<double>(t) * freq);
    }
  }
  return pe;
}

// ---------------------------------------------------------------------------
// Attention

void windowed_attention_cols(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t col, std::size_t dh,
                             std::size_t w, std::span<const std::uint8_t> valid, Tensor& out,
                             AttentionCache* cache) {
  const std::size_t s = q.rows();
  require(k.rows() == s && v.rows() == s && out.rows() == s, "attention: row mismatch");
  require(col + dh <= q.cols() && col + dh <= k.cols() && col + dh <= v.cols(), "attention: column range");
  require(valid.empty() || valid.size() == s, "attention: mask length");
  const std::size_t wp = s == 0 ? 0 : std::min(w, s - 1);
  const std::size_t span = 2 * wp + 1;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  if (cache) {
    cache->w = wp;
    cache->probs.assign(s * span, 0.0);
  }
  std::vector<double> p(span);
  for (std::size_t t = 0; t < s; ++t) {
    const std::size_t lo = t >= wp ? t - wp : 0;
    const std::size_t hi = std::min(s - 1, t + wp);
    const double* qr = q.row(t) + col;
    double mx = -INFINITY;
    bool any = false;
    for (std::size_t j = lo; j <= hi; ++j) {
      double& slot = p[j + wp - t];
      if (!valid.empty() && !valid[j]) {
        slot = -INFINITY;
        continue;
      }
      const double* kr = k.row(j) + col;
      double dot = 0;
      for (std::size_t c = 0; c < dh; ++c) dot += qr[c] * kr[c];
      slot = dot * scale;
      mx = std::max(mx, slot);
      any = true;
    }
    double* o = out.row(t) + col;
    std::fill(o, o + dh, 0.0);
    if (!any) continue;
    double z = 0;
    for (std::size_t j = lo; j <= hi; ++j) {
      double& slot = p[j + wp - t];
      slot = std::isinf(slot) ? 0.0 : std::exp(slot - mx);
      z += slot;
    }
    for (std::size_t j = lo; j <= hi; ++j) {
      const double pj = p[j + wp - t] / z;
      if (cache) cache->probs[t * span + (j + wp - t)] = pj;
      if (pj == 0.0) continue;
      const double* vr = v.row(j) + col;
      for (std::size_t c = 0; c < dh; ++c) o[c] += pj * vr[c];
    }
  }
}

void windowed_attention_cols_backward(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t col,
                                      std::size_t dh, const AttentionCache& cache, const Tensor& dout, Tensor& dq,
                                      Tensor& dk, Tensor& dv) {
  const std::size_t s = q.rows();
  const std::size_t wp = cache.w;
  const std::size_t span = 2 * wp + 1;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> dp(span);
  for (std::size_t t = 0; t < s; ++t) {
    const std::size_t lo = t >= wp ? t - wp : 0;
    const std::size_t hi = std::min(s - 1, t + wp);
    const double* probs = cache.probs.data() + t * span;
    const double* g = dout.row(t) + col;
    double weighted = 0;
    for (std::size_t j = lo; j <= hi; ++j) {
      const double pj = probs[j + wp - t];
      if (pj == 0.0) continue;
      const double* vr = v.row(j) + col;
      double* dvr = dv.row(j) + col;
      double acc = 0;
      for (std::size_t c = 0; c < dh; ++c) {
        acc += g[c] * vr[c];
        dvr[c] += pj * g[c];
      }
      dp[j + wp - t] = acc;
      weighted += pj * acc;
    }
    const double* qr = q.row(t) + col;
    double* dqr = dq.row(t) + col;
    for (std::size_t j = lo; j <= hi; ++j) {
      const double pj = probs[j + wp - t];
      if (pj == 0.0) continue;
      const double ds = pj * (dp[j + wp - t] - weighted) * scale;
      const double* kr = k.row(j) + col;
      double* dkr = dk.row(j) + col;
      for (std::size_t c = 0; c < dh; ++c) {
        dqr[c] += ds * kr[c];
        dkr[c] += ds * qr[c];
      }
    }
  }
}

Tensor windowed_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t w,
                          std::span<const std::uint8_t> valid, AttentionCache* cache) {
  require(q.cols() == k.cols() && k.cols() == v.cols(), "attention: width mismatch");
  Tensor out = Tensor::matrix(q.rows(), v.cols());
  windowed_attention_cols(q, k, v, 0, q.cols(), w, valid, out, cache);
  return out;
}

void windowed_attention_backward(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionCache& cache,
                                 const Tensor& dout, Tensor& dq, Tensor& dk, Tensor& dv) {
  windowed_attention_cols_backward(q, k, v, 0, q.cols(), cache, dout, dq, dk, dv);
}

Tensor full_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::span<const std::uint8_t> valid) {
  const std::size_t s = q.rows(), dh = q.cols();
  Tensor scores = Tensor::matrix(s, s);
  for (std::size_t t = 0; t < s; ++t)
    for (std::size_t j = 0; j < s; ++j) {
      double dot = 0;
      for (std::size_t c = 0; c < dh; ++c) dot += q(t, c) * k(j, c);
      scores(t, j) = dot / std::sqrt(static_cast<double>(dh));
    }
  Tensor out = Tensor::matrix(s, v.cols());
  for (std::size_t t = 0; t < s; ++t) {
    double mx = -INFINITY;
    for (std::size_t j = 0; j < s; ++j)
      if (valid.empty() || valid[j]) mx = std::max(mx, scores(t, j));
    if (std::isinf(mx)) continue;
    double z = 0;
    for (std::size_t j = 0; j < s; ++j)
      if (valid.empty() || valid[j]) z += std::exp(scores(t, j) - mx);
    for (std::size_t j = 0; j < s; ++j) {
      if (!valid.empty() && !valid[j]) continue;
      const double p = std::exp(scores(t, j) - mx) / z;
      for (std::size_t c = 0; c < v.cols(); ++c) out(t, c) += p * v(j, c);
    }
  }
  return out;
}

Tensor mean_pool(const Tensor& x, std::span<const std::uint8_t> valid) {
  require(valid.size() == x.rows(), "mean_pool: mask length");
  const std::size_t d = x.cols();
  Tensor out = Tensor::vector(d);
  std::size_t n = 0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    if (!valid[r]) continue;
    ++n;
    for (std::size_t c = 0; c < d; ++c) out.data[c] += x(r, c);
  }
  if (n == 0) throw ArgumentError("mean_pool: every position is masked");
  for (auto& v : out.data) v /= static_cast<double>(n);
  return out;
}

void mean_pool_backward(std::span<const std::uint8_t> valid, const Tensor& dpooled, Tensor& dx) {
  std::size_t n = 0;
  for (auto v : valid) n += v ? 1 : 0;
  if (n == 0) return;
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < valid.size(); ++r) {
    if (!valid[r]) continue;
    for (std::size_t c = 0; c < dx.cols(); ++c) dx(r, c) += dpooled.data[c] * inv;
  }
}

double mse_loss(std::span<const double> pred, std::span<const double> target) {
  require(pred.size() == target.size(), "mse_loss: length mismatch");
  if (pred.empty()) return 0.0;
  double sum = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) sum += (pred[i] - target[i]) * (pred[i] - target[i]);
  return sum / static_cast<double>(pred.size());
}

std::vector<double> mse_grad(std::span<const double> pred, std::span<const double> target) {
  require(pred.size() == target.size(), "mse_grad: length mismatch");
  std::vector<double> g(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i)
    g[i] = 2.0 * (pred[i] - target[i]) / static_cast<double>(pred.size());
  return g;
}

// ---------------------------------------------------------------------------
// Encoder layer

Tensor encoder_layer(const Tensor& x, const EncoderWeights& p, std::size_t heads, std::size_t w,
                     std::span<const std::uint8_t> valid, EncoderCache* cache) {
  EncoderCache local;
  EncoderCache& c = cache ? *cache : local;
  const std::size_t s = x.rows(), d = x.cols();
  require(heads > 0 && d % heads == 0, "encoder_layer: d must be divisible by heads");
  const std::size_t dh = d / heads;
  c.x = x;
  c.h1 = layer_norm(x, *p.ln1_g, *p.ln1_b, &c.ln1);
  c.q = linear(c.h1, *p.wq, *p.bq);
  c.k = linear(c.h1, *p.wk, *p.bk);
  c.v = linear(c.h1, *p.wv, *p.bv);
  c.attn = Tensor::matrix(s, d);
  c.heads.resize(heads);
  for (std::size_t h = 0; h < heads; ++h)
    windowed_attention_cols(c.q, c.k, c.v, h * dh, dh, w, valid, c.attn, &c.heads[h]);
  c.x2 = linear(c.attn, *p.wo, *p.bo);
  for (std::size_t i = 0; i < c.x2.size(); ++i) c.x2.data[i] += x.data[i];
  c.h2 = layer_norm(c.x2, *p.ln2_g, *p.ln2_b, &c.ln2);
  c.u = linear(c.h2, *p.w1, *p.b1);
  c.f = relu(c.u);
  Tensor y = linear(c.f, *p.w2, *p.b2);
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += c.x2.data[i];
  return y;
}

Tensor encoder_layer_backward(const EncoderWeights& p, const EncoderCache& c, std::size_t heads, const Tensor& dy,
                              const EncoderGrads& g) {
  const std::size_t s = c.x.rows(), d = c.x.cols(), dh = d / heads;
  Tensor dx2 = dy;
  Tensor df(c.f.shape);
  linear_backward(c.f, *p.w2, dy, &df, *g.w2, *g.b2);
  Tensor du(c.u.shape);
  relu_backward(c.u, df, du);
  Tensor dh2(c.h2.shape);
  linear_backward(c.h2, *p.w1, du, &dh2, *g.w1, *g.b1);
  layer_norm_backward(*p.ln2_g, c.ln2, dh2, dx2, *g.ln2_g, *g.ln2_b);

  Tensor dattn = Tensor::matrix(s, d);
  linear_backward(c.attn, *p.wo, dx2, &dattn, *g.wo, *g.bo);
  Tensor dq = Tensor::matrix(s, d), dk = Tensor::matrix(s, d), dv = Tensor::matrix(s, d);
  for (std::size_t h = 0; h < heads; ++h)
    windowed_attention_cols_backward(c.q, c.k, c.v, h * dh, dh, c.heads[h], dattn, dq, dk, dv);
  Tensor dh1 = Tensor::matrix(s, d);
  linear_backward(c.h1, *p.wq, dq, &dh1, *g.wq, *g.bq);
  linear_backward(c.h1, *p.wk, dk, &dh1, *g.wk, *g.bk);
  linear_backward(c.h1, *p.wv, dv, &dh1, *g.wv, *g.bv);
  Tensor dx = dx2;
  layer_norm_backward(*p.ln1_g, c.ln1, dh1, dx, *g.ln1_g, *g.ln1_b);
  return dx;
}

// ---------------------------------------------------------------------------
// Model

void ModelConfig::validate() const {
  if (trunk) {
    if (s == 0 || d == 0 || heads == 0 || en == 0 || vocab < 2 || ff_hidden == 0)
      throw ValidationError("model config: sizes must be positive (vocab >= 2)");
    if (d % heads != 0) throw ValidationError("model config: d must be divisible by heads");
    if (d % 2 != 0) throw ValidationError("model config: d must be even");
    if (w > s) throw ValidationError("model config: window must not exceed s");
  }
  if (out == 0 || head_input() == 0) throw ValidationError("model config: head needs inputs and outputs");
  if (fn > 0 && head_hidden == 0) throw ValidationError("model config: head_hidden must be positive");
}

namespace {

constexpr const char* kEncoderNames[16] = {"ln1.gamma", "ln1.beta", "attn.wq", "attn.bq", "attn.wk", "attn.bk",
                                           "attn.wv",   "attn.bv",  "attn.wo", "attn.bo", "ln2.gamma", "ln2.beta",
                                           "ff.w1",     "ff.b1",    "ff.w2",   "ff.b2"};

template <class T, class V>
EncoderTensors<T> view(V& t, std::size_t b) {
  return {&t[b],      &t[b + 1],  &t[b + 2],  &t[b + 3],  &t[b + 4],  &t[b + 5],  &t[b + 6],  &t[b + 7],
          &t[b + 8],  &t[b + 9],  &t[b + 10], &t[b + 11], &t[b + 12], &t[b + 13], &t[b + 14], &t[b + 15]};
}

}  // namespace

EncoderWeights Model::encoder(std::size_t layer) const {
  return view<const Tensor>(params_, encoder_base(layer));
}
EncoderGrads Model::encoder(std::vector<Tensor>& grads, std::size_t layer) const {
  return view<Tensor>(grads, encoder_base(layer));
}

void Model::build_layout() {
  const auto& c = config_;
  names_.clear();
  params_.clear();
  auto add = [&](std::string name, std::vector<std::size_t> shape) {
    names_.push_back(std::move(name));
    params_.emplace_back(std::move(shape));
  };
  if (c.trunk) {
    add("embedding", {c.vocab, c.d});
    for (std::size_t l = 0; l < c.en; ++l) {
      const std::string p = "enc" + std::to_string(l) + ".";
      const std::vector<std::vector<std::size_t>> shapes = {
          {c.d}, {c.d}, {c.d, c.d}, {c.d}, {c.d, c.d}, {c.d}, {c.d, c.d}, {c.d},
          {c.d, c.d}, {c.d}, {c.d}, {c.d}, {c.d, c.ff_hidden}, {c.ff_hidden}, {c.ff_hidden, c.d}, {c.d}};
      for (std::size_t i = 0; i < 16; ++i) add(p + kEncoderNames[i], shapes[i]);
    }
    add("final_ln.gamma", {c.d});
    add("final_ln.beta", {c.d});
    pe_ = positional_encoding(c.s, c.d);
  } else {
    pe_ = Tensor();
  }
  std::size_t in = c.head_input();
  for (std::size_t j = 0; j <= c.fn; ++j) {
    const std::size_t out = j == c.fn ? c.out : c.head_hidden;
    add("head" + std::to_string(j) + ".w", {in, out});
    add("head" + std::to_string(j) + ".b", {out});
    in = out;
  }
}

Model Model::create(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config_ = config;
  m.build_layout();
  Rng rng(seed);
  const std::size_t final_w = m.head_index(config.fn);
  for (std::size_t i = 0; i < m.params_.size(); ++i) {
    Tensor& t = m.params_[i];
    const std::string& name = m.names_[i];
    if (name == "embedding") {
      for (std::size_t r = 0; r + 1 < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c) t(r, c) = 0.5 * rng.normal();
    } else if (name.ends_with("gamma")) {
      std::fill(t.data.begin(), t.data.end(), 1.0);
    } else if (t.shape.size() == 2 && i != final_w) {
      const double a = std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
      for (auto& v : t.data) v = (2.0 * rng.uniform() - 1.0) * a;
    }
  }
  return m;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : params_) n += t.size();
  return n;
}

std::vector<Tensor> Model::zeros_like() const {
  std::vector<Tensor> z;
  z.reserve(params_.size());
  for (const auto& t : params_) z.emplace_back(t.shape);
  return z;
}

// Checkpoint: little-endian, "ONEDSEMD" magic, u32 version, config, metadata, tensors.
namespace {

constexpr char kMagic[8] = {'O', 'N', 'E', 'D', 'S', 'E', 'M', 'D'};
constexpr std::uint32_t kCheckpointVersion = 1;
static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  template <class T>
  void pod(T v) {
    out_.append(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void str(std::string_view s) {
    pod<std::uint64_t>(s.size());
    out_.append(s);
  }
  void doubles(const std::vector<double>& d) { out_.append(reinterpret_cast<const char*>(d.data()), d.size() * 8); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  template <class T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  void doubles(std::vector<double>& d) {
    need(d.size() * 8);
    std::memcpy(d.data(), in_.data() + pos_, d.size() * 8);
    pos_ += d.size() * 8;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw ValidationError("checkpoint truncated");
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string Model::serialize() const {
  Writer w;
  for (char ch : kMagic) w.pod(ch);
  w.pod(kCheckpointVersion);
  const auto& c = config_;
  for (std::uint64_t v : {c.s, c.d, c.heads, c.en, c.fn, c.w, c.vocab, c.extra, c.out, c.ff_hidden, c.head_hidden})
    w.pod(v);
  w.pod<std::uint8_t>(c.trunk ? 1 : 0);
  w.pod<std::uint64_t>(metadata.size());
  for (const auto& [k, v] : metadata) {
    w.str(k);
    w.str(v);
  }
  w.pod<std::uint64_t>(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    w.str(names_[i]);
    w.pod<std::uint64_t>(params_[i].shape.size());
    for (auto d : params_[i].shape) w.pod<std::uint64_t>(d);
    w.doubles(params_[i].data);
  }
  return w.take();
}

Model Model::deserialize(std::string_view bytes) {
  Reader r(bytes);
  for (char ch : kMagic)
    if (r.pod<char>() != ch) throw ValidationError("not a model checkpoint (bad magic)");
  const auto version = r.pod<std::uint32_t>();
  if (version == 0 || version > kCheckpointVersion)
    throw ValidationError("unsupported checkpoint version " + std::to_string(version));
  ModelConfig c;
  for (std::size_t* f : {&c.s, &c.d, &c.heads, &c.en, &c.fn, &c.w, &c.vocab, &c.extra, &c.out, &c.ff_hidden,
                         &c.head_hidden})
    *f = r.pod<std::uint64_t>();
  c.trunk = r.pod<std::uint8_t>() != 0;
  c.validate();
  Model m;
  m.config_ = c;
  m.build_layout();
  const auto nmeta = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < nmeta; ++i) {
    std::string k = r.str();
    m.metadata[k] = r.str();
  }
  const auto count = r.pod<std::uint64_t>();
  if (count != m.params_.size()) throw ValidationError("checkpoint tensor count does not match its config");
  for (std::size_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    if (name != m.names_[i]) throw ValidationError("checkpoint tensor '" + name + "' out of order");
    std::vector<std::size_t> shape(r.pod<std::uint64_t>());
    for (auto& d : shape) d = r.pod<std::uint64_t>();
    if (shape != m.params_[i].shape) throw ValidationError("checkpoint tensor '" + name + "' has the wrong shape");
    r.doubles(m.params_[i].data);
  }
  if (!r.done()) throw ValidationError("trailing bytes after checkpoint");
  return m;
}

void Model::save(const std::string& path) const { text::write_file(path, serialize()); }

Model Model::load(const std::string& path) { return deserialize(text::read_file(path)); }

// ---------------------------------------------------------------------------
// Forward / backward through the whole model

std::vector<double> trunk_forward(const Model& model, std::span<const TokenId> tokens, TrunkCache* cache) {
  const auto& c = model.config();
  if (!c.trunk) throw ArgumentError("model has no trace trunk");
  if (tokens.size() != c.s)
    throw ArgumentError("token sequence length " + std::to_string(tokens.size()) + " != s=" + std::to_string(c.s));
  TrunkCache local;
  TrunkCache& tc = cache ? *cache : local;
  const auto& P = model.params();
  tc.tokens.assign(tokens.begin(), tokens.end());
  tc.valid.assign(c.s, 0);
  for (std::size_t t = 0; t < c.s; ++t) tc.valid[t] = tokens[t] != c.pad_id();
  tc.x0 = embed(tokens, P[model.embedding_index()], c.pad_id());
  for (std::size_t i = 0; i < tc.x0.size(); ++i) tc.x0.data[i] += model.positional().data[i];
  tc.layers.resize(c.en);
  Tensor x = tc.x0;
  for (std::size_t l = 0; l < c.en; ++l) x = encoder_layer(x, model.encoder(l), c.heads, c.w, tc.valid, &tc.layers[l]);
  tc.xl = std::move(x);
  const std::size_t f = model.final_ln_index();
  tc.xf = layer_norm(tc.xl, P[f], P[f + 1], &tc.final_ln);
  return mean_pool(tc.xf, tc.valid).data;
}

void trunk_backward(const Model& model, const TrunkCache& tc, std::span<const double> dpooled,
                    std::vector<Tensor>& grads) {
  const auto& c = model.config();
  const auto& P = model.params();
  Tensor dp = Tensor::vector(c.d);
  std::copy(dpooled.begin(), dpooled.end(), dp.data.begin());
  Tensor dxf = Tensor::matrix(c.s, c.d);
  mean_pool_backward(tc.valid, dp, dxf);
  Tensor dx = Tensor::matrix(c.s, c.d);
  const std::size_t f = model.final_ln_index();
  layer_norm_backward(P[f], tc.final_ln, dxf, dx, grads[f], grads[f + 1]);
  for (std::size_t l = c.en; l-- > 0;)
    dx = encoder_layer_backward(model.encoder(l), tc.layers[l], c.heads, dx, model.encoder(grads, l));
  embed_backward(tc.tokens, dx, grads[model.embedding_index()], c.pad_id());
}

std::vector<double> head_forward(const Model& model, std::span<const double> pooled, std::span<const double> extra,
                                 HeadCache* cache) {
  const auto& c = model.config();
  if (extra.size() != c.extra)
    throw ArgumentError("constraint width " + std::to_string(extra.size()) + " != " + std::to_string(c.extra));
  if (c.trunk && pooled.size() != c.d) throw ArgumentError("pooled width mismatch");
  HeadCache local;
  HeadCache& hc = cache ? *cache : local;
  hc.inputs.clear();
  hc.pre.clear();
  Tensor in = Tensor::matrix(1, c.head_input());
  std::size_t k = 0;
  if (c.trunk)
    for (double v : pooled) in.data[k++] = v;
  for (double v : extra) in.data[k++] = v;
  const auto& P = model.params();
  for (std::size_t j = 0; j < c.fn; ++j) {
    const std::size_t i = model.head_index(j);
    Tensor pre = linear(in, P[i], P[i + 1]);
    hc.inputs.push_back(std::move(in));
    in = relu(pre);
    hc.pre.push_back(std::move(pre));
  }
  const std::size_t i = model.head_index(c.fn);
  Tensor out = linear(in, P[i], P[i + 1]);
  hc.inputs.push_back(std::move(in));
  return out.data;
}

void head_backward(const Model& model, const HeadCache& hc, std::span<const double> dout, std::vector<Tensor>& grads,
                   std::vector<double>* dpooled) {
  const auto& c = model.config();
  const auto& P = model.params();
  Tensor d = Tensor::matrix(1, c.out);
  std::copy(dout.begin(), dout.end(), d.data.begin());
  for (std::size_t j = c.fn + 1; j-- > 0;) {
    const std::size_t i = model.head_index(j);
    Tensor din = Tensor::matrix(1, hc.inputs[j].cols());
    linear_backward(hc.inputs[j], P[i], d, &din, grads[i], grads[i + 1]);
    if (j == 0) {
      d = std::move(din);
      break;
    }
    Tensor dpre = Tensor::matrix(1, din.cols());
    relu_backward(hc.pre[j - 1], din, dpre);
    d = std::move(dpre);
  }
  if (dpooled && c.trunk) {
    dpooled->resize(c.d, 0.0);
    for (std::size_t k = 0; k < c.d; ++k) (*dpooled)[k] += d.data[k];
  }
}

std::vector<double> model_forward(const Model& model, std::span<const TokenId> tokens, std::span<const double> extra) {
  std::vector<double> pooled;
  if (model.config().trunk) pooled = trunk_forward(model, tokens, nullptr);
  return head_forward(model, pooled, extra, nullptr);
}

AdamState make_adam(const std::vector<Tensor>& params, double lr) {
  AdamState s;
  s.lr = lr;
  for (const auto& p : params) {
    s.m.emplace_back(p.shape);
    s.v.emplace_back(p.shape);
  }
  return s;
}

void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& st) {
  if (grads.size() != params.size() || st.m.size() != params.size())
    throw ArgumentError("adam_step: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (grads[i].shape != params[i].shape || st.m[i].shape != params[i].shape)
      throw ArgumentError("adam_step: shape mismatch");
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].data;
    const auto& g = grads[i].data;
    auto& m = st.m[i].data;
    auto& v = st.v[i].data;
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = st.beta1 * m[k] + (1.0 - st.beta1) * g[k];
      v[k] = st.beta2 * v[k] + (1.0 - st.beta2) * g[k] * g[k];
      p[k] -= st.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + st.eps);
    }
  }
}

}  // namespace onedse
