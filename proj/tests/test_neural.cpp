#include <doctest.h>

#include <chrono>
#include <cmath>
#include <filesystem>

#include "onedse/error.hpp"
#include "onedse/neural.hpp"
#include "support/gradcheck.hpp"

using namespace onedse;
using testsupport::dot;
using testsupport::numeric_grad;
using testsupport::random_like;
using testsupport::rel_error;

namespace {

constexpr double kTol = 1e-4;

Tensor rand_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = scale * (2 * rng.uniform() - 1);
  return t;
}

std::vector<std::uint8_t> rand_mask(std::size_t s, Rng& rng) {
  std::vector<std::uint8_t> m(s);
  for (auto& v : m) v = rng.bernoulli(0.75);
  m[rng.below(s)] = 1;
  return m;
}

}  // namespace

TEST_CASE("linear gradients match central differences on random shapes") {
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(100 + trial);
    const std::size_t n = 1 + rng.below(4), in = 1 + rng.below(6), out = 1 + rng.below(5);
    Tensor x = rand_tensor({n, in}, rng), w = rand_tensor({in, out}, rng), b = rand_tensor({out}, rng);
    const Tensor r = random_like(Tensor::matrix(n, out), rng);
    auto loss = [&] { return dot(linear(x, w, b), r); };
    Tensor dx(x.shape), dw(w.shape), db(b.shape);
    linear_backward(x, w, r, &dx, dw, db);
    CHECK(rel_error(dx.data, numeric_grad(x, loss)) < kTol);
    CHECK(rel_error(dw.data, numeric_grad(w, loss)) < kTol);
    CHECK(rel_error(db.data, numeric_grad(b, loss)) < kTol);
  }
}

TEST_CASE("relu and layer norm gradients") {
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(200 + trial);
    const std::size_t n = 1 + rng.below(4), d = 2 + rng.below(7);
    Tensor x = rand_tensor({n, d}, rng, 2.0), g = rand_tensor({d}, rng), b = rand_tensor({d}, rng);
    const Tensor r = random_like(x, rng);

    auto relu_loss = [&] { return dot(relu(x), r); };
    Tensor drelu(x.shape);
    relu_backward(x, r, drelu);
    CHECK(rel_error(drelu.data, numeric_grad(x, relu_loss)) < kTol);

    auto ln_loss = [&] { return dot(layer_norm(x, g, b, nullptr), r); };
    LayerNormCache cache;
    layer_norm(x, g, b, &cache);
    Tensor dx(x.shape), dg(g.shape), dbeta(b.shape);
    layer_norm_backward(g, cache, r, dx, dg, dbeta);
    CHECK(rel_error(dx.data, numeric_grad(x, ln_loss)) < kTol);
    CHECK(rel_error(dg.data, numeric_grad(g, ln_loss)) < kTol);
    CHECK(rel_error(dbeta.data, numeric_grad(b, ln_loss)) < kTol);
  }
}

TEST_CASE("embedding gradient and pad rows") {
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(300 + trial);
    const std::size_t vocab = 2 + rng.below(6), d = 1 + rng.below(5), s = 1 + rng.below(8);
    Tensor table = rand_tensor({vocab, d}, rng);
    const TokenId pad = static_cast<TokenId>(vocab - 1);
    std::vector<TokenId> tokens(s);
    for (auto& t : tokens) t = static_cast<TokenId>(rng.below(vocab));
    const Tensor r = random_like(Tensor::matrix(s, d), rng);
    auto loss = [&] { return dot(embed(tokens, table, pad), r); };
    Tensor dt(table.shape);
    embed_backward(tokens, r, dt, pad);
    CHECK(rel_error(dt.data, numeric_grad(table, loss)) < kTol);
    for (std::size_t c = 0; c < d; ++c) CHECK(dt(vocab - 1, c) == 0.0);
  }
  Rng rng(1);
  Tensor table = rand_tensor({3, 4}, rng);
  const std::vector<TokenId> pads(5, 2);
  for (double v : embed(pads, table, 2).data) CHECK(v == 0.0);
  CHECK_THROWS_AS(embed(std::vector<TokenId>{3}, table, 2), ArgumentError);
}

TEST_CASE("one-hot embedding table selects rows exactly") {
  Tensor eye = Tensor::matrix(4, 4);
  for (std::size_t i = 0; i < 4; ++i) eye(i, i) = 1.0;
  const std::vector<TokenId> tokens = {2, 0, 1};
  const Tensor y = embed(tokens, eye, 3);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t c = 0; c < 4; ++c) CHECK(y(t, c) == (static_cast<int>(c) == tokens[t] ? 1.0 : 0.0));
}

TEST_CASE("positional encoding values") {
  const Tensor pe = positional_encoding(10000, 32);
  for (std::size_t c = 0; c < 32; c += 2) {
    CHECK(pe(0, c) == 0.0);
    CHECK(pe(0, c + 1) == 1.0);
  }
  for (double v : pe.data) CHECK((v >= -1.0 && v <= 1.0));
  // sin(t*f0) and cos(t*f0) with f0 = 1 pin the first pair exactly.
  CHECK(pe(3, 0) == doctest::Approx(std::sin(3.0)).epsilon(1e-12));
  CHECK(pe(3, 1) == doctest::Approx(std::cos(3.0)).epsilon(1e-12));
  // Rows are pairwise distinct for the first 10 000 positions.
  std::vector<std::vector<double>> rows;
  for (std::size_t t = 0; t < 10000; ++t) rows.emplace_back(pe.row(t), pe.row(t) + 32);
  std::sort(rows.begin(), rows.end());
  CHECK(std::adjacent_find(rows.begin(), rows.end()) == rows.end());
  CHECK_THROWS_AS(positional_encoding(4, 3), ArgumentError);
}

TEST_CASE("windowed attention gradients with padding masks") {
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(400 + trial);
    const std::size_t s = 2 + rng.below(8), dh = 1 + rng.below(4), w = rng.below(s + 1);
    Tensor q = rand_tensor({s, dh}, rng), k = rand_tensor({s, dh}, rng), v = rand_tensor({s, dh}, rng);
    const auto mask = rand_mask(s, rng);
    const Tensor r = random_like(q, rng);
    auto loss = [&] { return dot(windowed_attention(q, k, v, w, mask), r); };
    AttentionCache cache;
    windowed_attention(q, k, v, w, mask, &cache);
    Tensor dq(q.shape), dk(k.shape), dv(v.shape);
    windowed_attention_backward(q, k, v, cache, r, dq, dk, dv);
    CHECK(rel_error(dq.data, numeric_grad(q, loss)) < kTol);
    CHECK(rel_error(dk.data, numeric_grad(k, loss)) < kTol);
    CHECK(rel_error(dv.data, numeric_grad(v, loss)) < kTol);
  }
}

TEST_CASE("attention window semantics") {
  Rng rng(7);
  const std::size_t s = 12, dh = 4;
  const Tensor q = rand_tensor({s, dh}, rng), k = rand_tensor({s, dh}, rng), v = rand_tensor({s, dh}, rng);
  SUBCASE("window covering the sequence equals full attention") {
    for (std::size_t w : {s - 1, s}) {
      const Tensor a = windowed_attention(q, k, v, w), b = full_attention(q, k, v);
      for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a.data[i] - b.data[i]) < 1e-6);
    }
    const auto mask = rand_mask(s, rng);
    const Tensor a = windowed_attention(q, k, v, s - 1, mask), b = full_attention(q, k, v, mask);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a.data[i] - b.data[i]) < 1e-6);
  }
  SUBCASE("w = 0 copies the value row") {
    const Tensor a = windowed_attention(q, k, v, 0);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.data[i] == doctest::Approx(v.data[i]).epsilon(1e-15));
  }
  SUBCASE("weights sum to one over unmasked keys and ignore masked ones") {
    const auto mask = rand_mask(s, rng);
    AttentionCache cache;
    windowed_attention(q, k, v, 3, mask, &cache);
    const std::size_t span = 2 * cache.w + 1;
    for (std::size_t t = 0; t < s; ++t) {
      double sum = 0;
      bool any_valid = false;
      for (std::size_t slot = 0; slot < span; ++slot) {
        const long j = static_cast<long>(t + slot) - static_cast<long>(cache.w);
        const double p = cache.probs[t * span + slot];
        if (j < 0 || j >= static_cast<long>(s) || !mask[static_cast<std::size_t>(j)]) {
          CHECK(p == 0.0);
        } else {
          any_valid = true;
        }
        sum += p;
      }
      if (any_valid) CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("mean pool") {
  Rng rng(9);
  SUBCASE("gradient") {
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t s = 1 + rng.below(8), d = 1 + rng.below(5);
      Tensor x = rand_tensor({s, d}, rng);
      const auto mask = rand_mask(s, rng);
      const Tensor r = random_like(Tensor::vector(d), rng);
      auto loss = [&] { return dot(mean_pool(x, mask), r); };
      Tensor dx(x.shape);
      mean_pool_backward(mask, r, dx);
      CHECK(rel_error(dx.data, numeric_grad(x, loss)) < kTol);
    }
  }
  SUBCASE("identical rows and half padding") {
    Tensor x = Tensor::matrix(4, 2);
    for (std::size_t t = 0; t < 4; ++t) {
      x(t, 0) = 1.5;
      x(t, 1) = -2;
    }
    const std::vector<std::uint8_t> all(4, 1);
    CHECK(mean_pool(x, all).data == std::vector<double>{1.5, -2});
    x(2, 0) = 100;
    x(3, 1) = 100;
    CHECK(mean_pool(x, std::vector<std::uint8_t>{1, 1, 0, 0}).data == std::vector<double>{1.5, -2});
    CHECK_THROWS_AS(mean_pool(x, std::vector<std::uint8_t>(4, 0)), ArgumentError);
  }
  SUBCASE("row permutation with its mask leaves the mean unchanged") {
    Tensor x = rand_tensor({5, 3}, rng);
    std::vector<std::uint8_t> m = {1, 0, 1, 1, 0};
    const Tensor before = mean_pool(x, m);
    Tensor y = Tensor::matrix(5, 3);
    const std::size_t perm[5] = {3, 0, 4, 1, 2};
    std::vector<std::uint8_t> pm(5);
    for (std::size_t t = 0; t < 5; ++t) {
      for (std::size_t c = 0; c < 3; ++c) y(t, c) = x(perm[t], c);
      pm[t] = m[perm[t]];
    }
    const Tensor after = mean_pool(y, pm);
    for (std::size_t c = 0; c < 3; ++c) CHECK(after.data[c] == doctest::Approx(before.data[c]).epsilon(1e-14));
  }
}

TEST_CASE("mse loss") {
  CHECK(mse_loss(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2, 3}) == 0.0);
  CHECK(mse_loss(std::vector<double>{1.5, 2.5}, std::vector<double>{1, 2}) == doctest::Approx(0.25));
  CHECK(mse_loss(std::vector<double>{0, 2}, std::vector<double>{0, 0}) == 2.0);  // MAE would be 1
  CHECK_THROWS_AS(mse_loss(std::vector<double>{1}, std::vector<double>{1, 2}), ArgumentError);
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(500 + trial);
    const std::size_t n = 1 + rng.below(6);
    Tensor p = rand_tensor({n}, rng), t = rand_tensor({n}, rng);
    auto loss = [&] { return mse_loss(p.data, t.data); };
    CHECK(rel_error(mse_grad(p.data, t.data), numeric_grad(p, loss)) < kTol);
  }
}

namespace {

struct LayerParams {
  std::vector<Tensor> t;
  explicit LayerParams(std::size_t d, std::size_t f, Rng& rng, double scale = 0.5) {
    const std::vector<std::vector<std::size_t>> shapes = {{d}, {d}, {d, d}, {d}, {d, d}, {d}, {d, d}, {d},
                                                          {d, d}, {d}, {d}, {d}, {d, f}, {f}, {f, d}, {d}};
    for (const auto& s : shapes) t.push_back(rand_tensor(s, rng, scale));
    for (std::size_t i : {0u, 10u})
      for (auto& v : t[i].data) v += 1.0;
  }
  EncoderWeights view() const {
    return {&t[0], &t[1], &t[2], &t[3], &t[4], &t[5], &t[6], &t[7],
            &t[8], &t[9], &t[10], &t[11], &t[12], &t[13], &t[14], &t[15]};
  }
  static EncoderGrads grads(std::vector<Tensor>& g) {
    return {&g[0], &g[1], &g[2], &g[3], &g[4], &g[5], &g[6], &g[7],
            &g[8], &g[9], &g[10], &g[11], &g[12], &g[13], &g[14], &g[15]};
  }
};

}  // namespace

TEST_CASE("encoder layer gradients on random shapes") {
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(600 + trial);
    const std::size_t heads = 1 + rng.below(2), d = heads * 2 * (1 + rng.below(2)), s = 2 + rng.below(5);
    const std::size_t f = 2 + rng.below(4), w = rng.below(s);
    LayerParams p(d, f, rng);
    Tensor x = rand_tensor({s, d}, rng);
    const auto mask = rand_mask(s, rng);
    const Tensor r = random_like(x, rng);
    auto loss = [&] { return dot(encoder_layer(x, p.view(), heads, w, mask, nullptr), r); };
    EncoderCache cache;
    encoder_layer(x, p.view(), heads, w, mask, &cache);
    std::vector<Tensor> g;
    for (const auto& t : p.t) g.emplace_back(t.shape);
    const Tensor dx = encoder_layer_backward(p.view(), cache, heads, r, LayerParams::grads(g));
    CHECK(rel_error(dx.data, numeric_grad(x, loss)) < kTol);
    for (std::size_t i = 0; i < 16; ++i) {
      INFO("parameter " << i);
      CHECK(rel_error(g[i].data, numeric_grad(p.t[i], loss)) < kTol);
    }
  }
}

TEST_CASE("encoder layer with zero weights is the identity") {
  Rng rng(3);
  LayerParams p(8, 6, rng);
  for (auto& t : p.t) t.zero();
  const Tensor x = rand_tensor({5, 8}, rng);
  const Tensor y = encoder_layer(x, p.view(), 2, 2, std::vector<std::uint8_t>(5, 1), nullptr);
  CHECK(y == x);
}

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.s = 6;
  c.d = 4;
  c.heads = 2;
  c.en = 2;
  c.fn = 2;
  c.w = 2;
  c.vocab = 5;
  c.extra = 3;
  c.out = 2;
  c.ff_hidden = 5;
  c.head_hidden = 4;
  return c;
}

void randomize(Model& m, Rng& rng) {
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    if (m.names()[i] == "embedding") {
      Tensor& t = m.params()[i];
      for (std::size_t r = 0; r + 1 < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c) t(r, c) = 2 * rng.uniform() - 1;
    } else {
      for (auto& v : m.params()[i].data) v += 0.5 * (2 * rng.uniform() - 1);
    }
  }
}

}  // namespace

TEST_CASE("full model gradients (trunk and head)") {
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(700 + trial);
    ModelConfig c = small_config();
    c.fn = rng.below(3);
    Model m = Model::create(c, trial);
    randomize(m, rng);
    std::vector<TokenId> tokens(c.s);
    for (auto& t : tokens) t = static_cast<TokenId>(rng.below(c.vocab));
    tokens[0] = 1;
    std::vector<double> extra = {rng.uniform(), rng.uniform(), rng.uniform()};
    const std::vector<double> target = {0.3, -0.2};
    auto loss = [&] { return mse_loss(model_forward(m, tokens, extra), target); };

    TrunkCache tc;
    HeadCache hc;
    const auto pooled = trunk_forward(m, tokens, &tc);
    const auto out = head_forward(m, pooled, extra, &hc);
    auto grads = m.zeros_like();
    std::vector<double> dpooled;
    head_backward(m, hc, mse_grad(out, target), grads, &dpooled);
    trunk_backward(m, tc, dpooled, grads);
    for (std::size_t i = 0; i < grads.size(); ++i) {
      INFO(m.names()[i]);
      CHECK(rel_error(grads[i].data, numeric_grad(m.params()[i], loss)) < kTol);
    }
  }
}

TEST_CASE("stacked encoder with a covering window equals full attention") {
  ModelConfig c = small_config();
  c.s = 10;
  c.w = 9;
  Model windowed = Model::create(c, 5);
  Rng rng(11);
  randomize(windowed, rng);
  // A window >= s-1 must reproduce the dense computation; compare with a
  // hand-rolled dense layer stack built from full_attention.
  std::vector<TokenId> tokens = {0, 1, 2, 3, 0, 1, 4, 4, 2, 4};
  TrunkCache tc;
  const auto pooled = trunk_forward(windowed, tokens, &tc);

  const auto& P = windowed.params();
  Tensor x = embed(tokens, P[0], c.pad_id());
  for (std::size_t i = 0; i < x.size(); ++i) x.data[i] += windowed.positional().data[i];
  const std::size_t dh = c.d / c.heads;
  for (std::size_t l = 0; l < c.en; ++l) {
    const auto e = windowed.encoder(l);
    const Tensor h1 = layer_norm(x, *e.ln1_g, *e.ln1_b, nullptr);
    const Tensor q = linear(h1, *e.wq, *e.bq), k = linear(h1, *e.wk, *e.bk), v = linear(h1, *e.wv, *e.bv);
    Tensor attn = Tensor::matrix(c.s, c.d);
    for (std::size_t h = 0; h < c.heads; ++h) {
      Tensor qh = Tensor::matrix(c.s, dh), kh = Tensor::matrix(c.s, dh), vh = Tensor::matrix(c.s, dh);
      for (std::size_t t = 0; t < c.s; ++t)
        for (std::size_t j = 0; j < dh; ++j) {
          qh(t, j) = q(t, h * dh + j);
          kh(t, j) = k(t, h * dh + j);
          vh(t, j) = v(t, h * dh + j);
        }
      const Tensor o = full_attention(qh, kh, vh, tc.valid);
      for (std::size_t t = 0; t < c.s; ++t)
        for (std::size_t j = 0; j < dh; ++j) attn(t, h * dh + j) = o(t, j);
    }
    Tensor x2 = linear(attn, *e.wo, *e.bo);
    for (std::size_t i = 0; i < x2.size(); ++i) x2.data[i] += x.data[i];
    const Tensor ff = linear(relu(linear(layer_norm(x2, *e.ln2_g, *e.ln2_b, nullptr), *e.w1, *e.b1)), *e.w2, *e.b2);
    for (std::size_t i = 0; i < x2.size(); ++i) x2.data[i] += ff.data[i];
    x = x2;
  }
  const std::size_t f = windowed.final_ln_index();
  const Tensor ref = mean_pool(layer_norm(x, P[f], P[f + 1], nullptr), tc.valid);
  for (std::size_t i = 0; i < pooled.size(); ++i) CHECK(std::abs(pooled[i] - ref.data[i]) < 1e-6);
}

TEST_CASE("mlp head") {
  ModelConfig c;
  c.trunk = false;
  c.extra = 3;
  c.fn = 1;
  c.head_hidden = 3;
  c.out = 3;
  Model m = Model::create(c, 1);
  SUBCASE("untrained model has a zero output layer") {
    CHECK(head_forward(m, {}, std::vector<double>{0.4, -2, 7}, nullptr) == std::vector<double>{0, 0, 0});
  }
  SUBCASE("identity weights recover the input up to relu clipping") {
    for (auto& t : m.params()) t.zero();
    for (std::size_t i = 0; i < 3; ++i) {
      m.params()[m.head_index(0)](i, i) = 1;
      m.params()[m.head_index(1)](i, i) = 1;
    }
    CHECK(head_forward(m, {}, std::vector<double>{0.4, -2, 7}, nullptr) == std::vector<double>{0.4, 0, 7});
  }
  CHECK_THROWS_AS(head_forward(m, {}, std::vector<double>{1}, nullptr), ArgumentError);
}

TEST_CASE("adam") {
  SUBCASE("first step with unit gradient moves by lr") {
    std::vector<Tensor> p = {Tensor::vector(1, 0.0)};
    std::vector<Tensor> g = {Tensor::vector(1, 1.0)};
    AdamState st = make_adam(p, 1e-3);
    adam_step(p, g, st);
    // m̂ = 1, v̂ = 1 after bias correction: Δ = -lr / (1 + ε).
    CHECK(p[0].data[0] == doctest::Approx(-1e-3 / (1 + 1e-8)).epsilon(1e-12));
    CHECK(st.step == 1);
    adam_step(p, g, st);
    CHECK(st.step == 2);
  }
  SUBCASE("zero gradients leave parameters unchanged") {
    std::vector<Tensor> p = {Tensor::vector(3, 0.7)};
    const auto before = p;
    std::vector<Tensor> g = {Tensor::vector(3)};
    AdamState st = make_adam(p);
    for (int i = 0; i < 100; ++i) adam_step(p, g, st);
    CHECK(p == before);
  }
  SUBCASE("shape mismatch") {
    std::vector<Tensor> p = {Tensor::vector(3)};
    std::vector<Tensor> g = {Tensor::vector(2)};
    AdamState st = make_adam(p);
    CHECK_THROWS_AS(adam_step(p, g, st), ArgumentError);
  }
}

TEST_CASE("checkpoint round trip and corruption") {
  ModelConfig c = small_config();
  Model m = Model::create(c, 3);
  m.metadata["metric"] = "objective";
  const auto path = (std::filesystem::temp_directory_path() / "onedse_ckpt_test.bin").string();
  m.save(path);
  const Model back = Model::load(path);
  CHECK(back == m);
  std::string bytes = m.serialize();
  bytes[0] = 'X';
  CHECK_THROWS_AS(Model::deserialize(bytes), ValidationError);
  CHECK_THROWS_AS(Model::deserialize(m.serialize().substr(0, 100)), ValidationError);
  std::filesystem::remove(path);
}

TEST_CASE("forward is deterministic and padding is ignored") {
  ModelConfig c = small_config();
  Model m = Model::create(c, 4);
  Rng rng(2);
  randomize(m, rng);
  const std::vector<TokenId> tokens = {0, 1, 2, 4, 4, 4};
  const std::vector<double> extra = {0.1, 0.2, 0.3};
  CHECK(model_forward(m, tokens, extra) == model_forward(m, tokens, extra));
  CHECK_THROWS_AS(trunk_forward(m, std::vector<TokenId>(6, 4), nullptr), ArgumentError);
}

TEST_CASE("forward/backward at s=256, d=32 stays under one second") {
  ModelConfig c;
  c.vocab = 151;
  c.extra = 68;
  Model m = Model::create(c, 1);
  std::vector<TokenId> tokens(256);
  for (std::size_t t = 0; t < 256; ++t) tokens[t] = static_cast<TokenId>(t % 150);
  const std::vector<double> extra(68, 0.5);
  const auto start = std::chrono::steady_clock::now();
  TrunkCache tc;
  HeadCache hc;
  const auto pooled = trunk_forward(m, tokens, &tc);
  const auto out = head_forward(m, pooled, extra, &hc);
  auto grads = m.zeros_like();
  std::vector<double> dpooled;
  head_backward(m, hc, std::vector<double>{1.0}, grads, &dpooled);
  trunk_backward(m, tc, dpooled, grads);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  MESSAGE("forward+backward seconds: " << secs);
  CHECK(secs < 1.0);
  CHECK(out.size() == 1);
}
