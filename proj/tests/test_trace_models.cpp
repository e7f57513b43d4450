#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "onedse/error.hpp"
#include "onedse/trace_models.hpp"

using namespace onedse;

namespace {

ModelConfig tiny_shape() {
  ModelConfig c;
  c.s = 16;
  c.d = 8;
  c.heads = 2;
  c.en = 1;
  c.fn = 2;
  c.w = 8;
  c.ff_hidden = 16;
  c.head_hidden = 16;
  return c;
}

const DesignSpace& toy_space() {
  static const DesignSpace s = select_params(
      DesignSpace::builtin(), std::vector<std::string>{"icache line size", "icache size (kb)", "icache associativity"});
  return s;
}

void perturb(Model& m, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = 0; i < m.params().size(); ++i)
    if (m.names()[i] != "embedding")
      for (auto& v : m.params()[i].data) v += 0.3 * (2 * rng.uniform() - 1);
}

TokenSequence random_tokens(std::size_t n, TokenId vocab, Rng& rng) {
  TokenSequence t(n);
  for (auto& v : t) v = static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(vocab)));
  return t;
}

}  // namespace

TEST_CASE("round_ranks") {
  const DesignSpace s = DesignSpace::parse("a | core | 1,2,3,4\nb | core | 1,2\nc | core | 1,2,3\n");
  CHECK(round_ranks(std::vector<double>{1.5, -0.3, 9.0}, s).ranks == std::vector<int>{2, 0, 2});
  CHECK(round_ranks(std::vector<double>{0.5, 0.49, 2.5}, s).ranks == std::vector<int>{1, 0, 2});
  CHECK(round_ranks(std::vector<double>{NAN, 1.0, 1.0}, s).ranks == std::vector<int>{0, 1, 1});
  CHECK_THROWS_AS(round_ranks(std::vector<double>{1.0}, s), ArgumentError);
}

TEST_CASE("workload_metric") {
  const std::vector<double> v = {1.0, 3.0};
  const std::vector<std::size_t> n = {100, 300};
  CHECK(workload_metric(v, n) == doctest::Approx(2.5));
  CHECK_THROWS_AS(workload_metric(v, std::vector<std::size_t>{1}), ArgumentError);
  CHECK_THROWS_AS(workload_metric(v, std::vector<std::size_t>{0, 0}), ArgumentError);
}

TEST_CASE("fresh models predict the scaling offset") {
  const TokenDict dict({"addi", "ld", "beq"});
  PredictorModel p = PredictorModel::create(Mode::P, Metric::Ipc, toy_space(), dict, tiny_shape(), 3);
  p.metric_mean = 1.7;
  p.metric_scale = 0.4;
  const TokenSequence t(16, 0);
  const std::vector<double> params = {0.0, 0.5, 1.0};
  CHECK(forward_p(p, t, params) == doctest::Approx(1.7));
  CHECK_THROWS_AS(forward_p(p, t, std::vector<double>{0.0}), ArgumentError);
  CHECK_THROWS_AS(forward_m(p, t, 1.0), ArgumentError);

  const PredictorModel m = PredictorModel::create(Mode::M, Metric::Objective, toy_space(), dict, tiny_shape(), 3);
  CHECK(m.net.config().out == 3);
  CHECK(m.net.config().extra == 1);
  CHECK(m.net.config().vocab == 4);
  for (double r : forward_m(m, t, 5.0)) CHECK(r == 0.0);
}

TEST_CASE("batched inference matches per-chunk forward passes") {
  const TokenDict dict({"addi", "ld", "beq", "sd"});
  PredictorModel m = PredictorModel::create(Mode::M, Metric::Objective, toy_space(), dict, tiny_shape(), 5);
  perturb(m.net, 8);
  m.metric_mean = 0.2;
  m.metric_scale = 0.05;
  Rng rng(1);
  std::vector<TokenSequence> chunks;
  for (int i = 0; i < 5; ++i) chunks.push_back(random_tokens(16, 5, rng));
  const auto pooled = pool_chunks(m, chunks);
  for (double c : {0.1, 0.2, 0.35}) {
    const auto a = batched_inference(m, chunks, c);
    const auto b = batched_inference_pooled(m, pooled, c);
    REQUIRE(a.size() == chunks.size());
    for (std::size_t i = 0; i < chunks.size(); ++i) {
      const auto direct = forward_m(m, chunks[i], c);
      for (std::size_t j = 0; j < direct.size(); ++j) {
        CHECK(a[i][j] == doctest::Approx(direct[j]).epsilon(1e-12));
        CHECK(b[i][j] == doctest::Approx(direct[j]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("checkpoint round trip") {
  const TokenDict dict({"addi", "ld"});
  PredictorModel m = PredictorModel::create(Mode::M, Metric::Power, toy_space(), dict, tiny_shape(), 2);
  perturb(m.net, 4);
  m.metric_mean = 3.25;
  m.metric_scale = 0.5;
  const auto path = (std::filesystem::temp_directory_path() / "onedse_test_model.ckpt").string();
  m.save(path);
  const PredictorModel back = PredictorModel::load(path);
  CHECK(back.mode == Mode::M);
  CHECK(back.metric == Metric::Power);
  CHECK(back.space == m.space);
  CHECK(back.dict == m.dict);
  CHECK(back.metric_mean == 3.25);
  CHECK(back.metric_scale == 0.5);
  const TokenSequence t = {0, 1, 1, 0, 2, 2, 0, 0, 1, 1, 2, 2, 0, 1, 2, 0};
  CHECK(forward_m(back, t, 3.0) == forward_m(m, t, 3.0));
  std::filesystem::remove(path);
}

TEST_CASE("fit") {
  // the target depends only on the constraint inputs
  ModelConfig shape = tiny_shape();
  shape.vocab = 3;
  shape.extra = 2;
  shape.out = 1;
  Rng rng(12);
  TrainSet set;
  set.chunks.push_back(random_tokens(16, 2, rng));
  for (int i = 0; i < 96; ++i) {
    Sample s;
    s.input = {rng.uniform(), rng.uniform()};
    s.target = {s.input[0] - s.input[1]};
    set.samples.push_back(s);
  }
  TrainSpec spec;
  spec.epochs = 30;
  spec.batch = 16;
  spec.lr = 3e-3;
  spec.keep_best = false;

  Model a = Model::create(shape, 1);
  const double before = evaluate(a, set);
  const TrainHistory h = fit(a, set, &set, spec);
  REQUIRE(h.train_loss.size() == 30);
  CHECK(h.val_loss.size() == 30);
  CHECK(h.train_loss.back() < 0.25 * h.train_loss.front());
  CHECK(evaluate(a, set) < 0.25 * before);
  CHECK(evaluate(a, set) == doctest::Approx(h.val_loss.back()));

  Model b = Model::create(shape, 1);
  fit(b, set, &set, spec);
  for (std::size_t i = 0; i < a.params().size(); ++i) CHECK(a.params()[i].data == b.params()[i].data);

  SUBCASE("keep_best restores the best validation epoch") {
    Model c = Model::create(shape, 1);
    TrainSpec best = spec;
    best.keep_best = true;
    const TrainHistory hc = fit(c, set, &set, best);
    CHECK(evaluate(c, set) == doctest::Approx(hc.val_loss[hc.best_epoch]));
    for (double v : hc.val_loss) CHECK(hc.val_loss[hc.best_epoch] <= v);
  }
}
