#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "onedse/rng.hpp"
#include "onedse/trace.hpp"

namespace onedse {

/// Dense row-major array of doubles.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims, double fill = 0.0);
  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) { return Tensor({rows, cols}, fill); }
  static Tensor vector(std::size_t n, double fill = 0.0) { return Tensor({n}, fill); }

  std::size_t size() const { return data.size(); }
  std::size_t rows() const { return shape.size() == 1 ? 1 : shape[0]; }
  std::size_t cols() const { return shape.empty() ? 0 : shape.back(); }
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
  double* row(std::size_t r) { return data.data() + r * cols(); }
  const double* row(std::size_t r) const { return data.data() + r * cols(); }
  void zero() { std::fill(data.begin(), data.end(), 0.0); }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

// ---------------------------------------------------------------------------
// Differentiable operations. Every *_backward accumulates (+=) into its
// gradient outputs so callers can sum contributions from several paths.

/// y = x·w + b for x[n,in], w[in,out], b[out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
void linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor* dx, Tensor& dw, Tensor& db);

Tensor relu(const Tensor& x);
void relu_backward(const Tensor& x, const Tensor& dy, Tensor& dx);

struct LayerNormCache {
  Tensor xhat;
  std::vector<double> rstd;
};
inline constexpr double kLayerNormEps = 1e-5;
/// Per-row normalisation with learned gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, LayerNormCache* cache);
void layer_norm_backward(const Tensor& gamma, const LayerNormCache& cache, const Tensor& dy, Tensor& dx,
                         Tensor& dgamma, Tensor& dbeta);

/// Row t = table[token_t]; rows for `pad` are zero.
Tensor embed(std::span<const TokenId> tokens, const Tensor& table, TokenId pad);
void embed_backward(std::span<const TokenId> tokens, const Tensor& dy, Tensor& dtable, TokenId pad);

/// PE[t,2i] = sin(t / 10000^(2i/d)), PE[t,2i+1] = cos(...). d must be even.
Tensor positional_encoding(std::size_t s, std::size_t d);

/// Attention probabilities kept for backward, one row of 2w'+1 slots per query
/// (w' = min(w, s-1)); slot j-t+w' holds key j.
struct AttentionCache {
  std::size_t w = 0;
  std::vector<double> probs;
};

/// Row t attends to keys [t-w, t+w] ∩ [0,s) that are valid, with scale 1/sqrt(d_h).
/// Rows whose window holds no valid key produce zeros. `valid` may be empty (all valid).
/// Operates on columns [col, col+dh) of q, k, v and writes the same columns of `out`.
void windowed_attention_cols(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t col, std::size_t dh,
                             std::size_t w, std::span<const std::uint8_t> valid, Tensor& out,
                             AttentionCache* cache);
void windowed_attention_cols_backward(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t col,
                                      std::size_t dh, const AttentionCache& cache, const Tensor& dout, Tensor& dq,
                                      Tensor& dk, Tensor& dv);

Tensor windowed_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t w,
                          std::span<const std::uint8_t> valid = {}, AttentionCache* cache = nullptr);
void windowed_attention_backward(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionCache& cache,
                                 const Tensor& dout, Tensor& dq, Tensor& dk, Tensor& dv);
/// Dense reference: every row attends to every valid key.
Tensor full_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::span<const std::uint8_t> valid = {});

/// Mean over valid rows; throws ArgumentError when no row is valid.
Tensor mean_pool(const Tensor& x, std::span<const std::uint8_t> valid);
void mean_pool_backward(std::span<const std::uint8_t> valid, const Tensor& dpooled, Tensor& dx);

double mse_loss(std::span<const double> pred, std::span<const double> target);
/// d(mse)/d(pred).
std::vector<double> mse_grad(std::span<const double> pred, std::span<const double> target);

// ---------------------------------------------------------------------------
// Encoder layer

/// Views of one pre-norm encoder layer's parameters (T = const Tensor) or gradients (T = Tensor).
template <class T>
struct EncoderTensors {
  T *ln1_g, *ln1_b, *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo, *ln2_g, *ln2_b, *w1, *b1, *w2, *b2;
};
using EncoderWeights = EncoderTensors<const Tensor>;
using EncoderGrads = EncoderTensors<Tensor>;

struct EncoderCache {
  Tensor x, h1, q, k, v, attn, x2, h2, u, f;
  LayerNormCache ln1, ln2;
  std::vector<AttentionCache> heads;
};

/// x + MHA(LN(x)), then + FF(LN(.)).
Tensor encoder_layer(const Tensor& x, const EncoderWeights& p, std::size_t heads, std::size_t w,
                     std::span<const std::uint8_t> valid, EncoderCache* cache);
/// Returns dx given dy; parameter gradients accumulate into g.
Tensor encoder_layer_backward(const EncoderWeights& p, const EncoderCache& cache, std::size_t heads,
                              const Tensor& dy, const EncoderGrads& g);

// ---------------------------------------------------------------------------
// Model

struct ModelConfig {
  std::size_t s = 256;
  std::size_t d = 32;
  std::size_t heads = 4;
  std::size_t en = 2;
  std::size_t fn = 3;
  std::size_t w = 64;
  std::size_t vocab = 0;        // dictionary size + pad; pad id = vocab - 1
  std::size_t extra = 0;        // constraint width concatenated after the pooled vector
  std::size_t out = 1;
  std::size_t ff_hidden = 64;   // encoder feed-forward width
  std::size_t head_hidden = 64; // MLP head width
  bool trunk = true;            // false: the head sees only the constraint vector

  void validate() const;
  std::size_t head_input() const { return (trunk ? d : 0) + extra; }
  TokenId pad_id() const { return static_cast<TokenId>(vocab - 1); }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Named parameters in a fixed order derived from the config.
class Model {
 public:
  Model() = default;
  /// Xavier-uniform weights, unit LayerNorm gains, zero biases and a zero output layer.
  static Model create(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t parameter_count() const;
  /// Zero tensors with the parameters' shapes.
  std::vector<Tensor> zeros_like() const;

  std::map<std::string, std::string> metadata;

  // Layout
  std::size_t embedding_index() const { return 0; }
  std::size_t encoder_base(std::size_t layer) const { return 1 + 16 * layer; }
  std::size_t final_ln_index() const { return 1 + 16 * config_.en; }
  std::size_t head_index(std::size_t layer) const { return (config_.trunk ? final_ln_index() + 2 : 0) + 2 * layer; }
  EncoderWeights encoder(std::size_t layer) const;
  EncoderGrads encoder(std::vector<Tensor>& grads, std::size_t layer) const;
  const Tensor& positional() const { return pe_; }

  void save(const std::string& path) const;
  static Model load(const std::string& path);
  std::string serialize() const;
  static Model deserialize(std::string_view bytes);

  friend bool operator==(const Model& a, const Model& b) {
    return a.config_ == b.config_ && a.names_ == b.names_ && a.params_ == b.params_ && a.metadata == b.metadata;
  }

 private:
  void build_layout();

  ModelConfig config_;
  std::vector<std::string> names_;
  std::vector<Tensor> params_;
  Tensor pe_;
};

struct TrunkCache {
  std::vector<TokenId> tokens;
  std::vector<std::uint8_t> valid;
  Tensor x0;
  std::vector<EncoderCache> layers;
  Tensor xl;  // input to the final norm
  LayerNormCache final_ln;
  Tensor xf;
};

struct HeadCache {
  std::vector<Tensor> inputs;  // per layer, as 1-row matrices
  std::vector<Tensor> pre;     // pre-activation per hidden layer
};

/// Encoder stack + final norm + masked mean pool; tokens must have length s.
std::vector<double> trunk_forward(const Model& model, std::span<const TokenId> tokens, TrunkCache* cache);
void trunk_backward(const Model& model, const TrunkCache& cache, std::span<const double> dpooled,
                    std::vector<Tensor>& grads);

/// MLP head on concat(pooled, extra); pooled is ignored for trunk-less models.
std::vector<double> head_forward(const Model& model, std::span<const double> pooled, std::span<const double> extra,
                                 HeadCache* cache);
/// Accumulates parameter gradients; adds d(pooled) into dpooled when non-null.
void head_backward(const Model& model, const HeadCache& cache, std::span<const double> dout,
                   std::vector<Tensor>& grads, std::vector<double>* dpooled);

std::vector<double> model_forward(const Model& model, std::span<const TokenId> tokens, std::span<const double> extra);

struct AdamState {
  std::uint64_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<Tensor> m, v;
};

AdamState make_adam(const std::vector<Tensor>& params, double lr = 1e-3);
/// Standard Adam with bias correction; throws ArgumentError on shape mismatch.
void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, AdamState& state);

}  // namespace onedse
