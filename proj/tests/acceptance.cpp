// Acceptance run: one PASS/FAIL line per criterion.
//   acceptance            run all eight
//   acceptance 4 5        run a selection
// Exit status is 0 only when every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "onedse/cli.hpp"
#include "onedse/datagen.hpp"
#include "onedse/mast.hpp"
#include "onedse/metaheuristics.hpp"
#include "onedse/smart.hpp"
#include "onedse/text.hpp"
#include "support/gradcheck.hpp"

using namespace onedse;
namespace fs = std::filesystem;
using testsupport::dot;
using testsupport::numeric_grad;
using testsupport::random_like;
using testsupport::rel_error;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

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

void randomize(Model& m, Rng& rng) {
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    Tensor& t = m.params()[i];
    if (m.names()[i] == "embedding") {
      for (std::size_t r = 0; r + 1 < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c) t(r, c) = 2 * rng.uniform() - 1;
    } else {
      for (auto& v : t.data) v += 0.5 * (2 * rng.uniform() - 1);
    }
  }
}

// ---------------------------------------------------------------------------
// 1. gradient checks

Verdict numerical_kernel() {
  constexpr int kShapes = 24;
  double worst = 0;
  std::size_t checks = 0;
  auto note = [&](const std::vector<double>& analytic, Tensor& t, const std::function<double()>& loss) {
    worst = std::max(worst, rel_error(analytic, numeric_grad(t, loss)));
    ++checks;
  };

  for (int trial = 0; trial < kShapes; ++trial) {
    Rng rng(9000 + trial);
    const std::size_t n = 1 + rng.below(4), in = 1 + rng.below(6), out = 1 + rng.below(5);

    Tensor x = rand_tensor({n, in}, rng), w = rand_tensor({in, out}, rng), b = rand_tensor({out}, rng);
    const Tensor r = random_like(Tensor::matrix(n, out), rng);
    auto lin = [&] { return dot(linear(x, w, b), r); };
    Tensor dx(x.shape), dw(w.shape), db(b.shape);
    linear_backward(x, w, r, &dx, dw, db);
    note(dx.data, x, lin);
    note(dw.data, w, lin);
    note(db.data, b, lin);

    Tensor xr = rand_tensor({n, in}, rng, 2.0);
    const Tensor rr = random_like(xr, rng);
    Tensor dxr(xr.shape);
    relu_backward(xr, rr, dxr);
    note(dxr.data, xr, [&] { return dot(relu(xr), rr); });

    const std::size_t d = 2 + rng.below(7);
    Tensor xl = rand_tensor({n, d}, rng, 2.0), g = rand_tensor({d}, rng), be = rand_tensor({d}, rng);
    const Tensor rl = random_like(xl, rng);
    auto ln = [&] { return dot(layer_norm(xl, g, be, nullptr), rl); };
    LayerNormCache lc;
    layer_norm(xl, g, be, &lc);
    Tensor dxl(xl.shape), dg(g.shape), dbe(be.shape);
    layer_norm_backward(g, lc, rl, dxl, dg, dbe);
    note(dxl.data, xl, ln);
    note(dg.data, g, ln);
    note(dbe.data, be, ln);

    const std::size_t vocab = 2 + rng.below(5), s = 2 + rng.below(8);
    Tensor table = rand_tensor({vocab + 1, d}, rng);
    std::vector<TokenId> tokens(s);
    for (auto& t : tokens) t = static_cast<TokenId>(rng.below(vocab + 1));
    const Tensor re = random_like(Tensor::matrix(s, d), rng);
    Tensor dtable(table.shape);
    embed_backward(tokens, re, dtable, static_cast<TokenId>(vocab));
    note(dtable.data, table, [&] { return dot(embed(tokens, table, static_cast<TokenId>(vocab)), re); });

    const std::size_t dh = 1 + rng.below(4), win = rng.below(s + 1);
    Tensor q = rand_tensor({s, dh}, rng), k = rand_tensor({s, dh}, rng), v = rand_tensor({s, dh}, rng);
    const auto mask = rand_mask(s, rng);
    const Tensor ra = random_like(q, rng);
    auto att = [&] { return dot(windowed_attention(q, k, v, win, mask), ra); };
    AttentionCache ac;
    windowed_attention(q, k, v, win, mask, &ac);
    Tensor dq(q.shape), dk(k.shape), dv(v.shape);
    windowed_attention_backward(q, k, v, ac, ra, dq, dk, dv);
    note(dq.data, q, att);
    note(dk.data, k, att);
    note(dv.data, v, att);

    Tensor xp = rand_tensor({s, d}, rng);
    const Tensor rp = random_like(Tensor::vector(d), rng);
    Tensor dxp(xp.shape);
    mean_pool_backward(mask, rp, dxp);
    note(dxp.data, xp, [&] { return dot(mean_pool(xp, mask), rp); });

    Tensor pred = rand_tensor({out}, rng);
    const std::vector<double> target = rand_tensor({out}, rng).data;
    const auto dm = mse_grad(pred.data, target);
    note(dm, pred, [&] { return mse_loss(pred.data, target); });

    // whole model: encoder layers, final norm, pooling, head and loss together
    ModelConfig c;
    c.heads = 1 + rng.below(2);
    c.d = c.heads * 2 * (1 + rng.below(2));
    c.s = 3 + rng.below(6);
    c.en = 1 + rng.below(2);
    c.fn = rng.below(3);
    c.w = rng.below(c.s + 1);
    c.vocab = 3 + rng.below(4);
    c.extra = 1 + rng.below(3);
    c.out = 1 + rng.below(3);
    c.ff_hidden = 2 + rng.below(4);
    c.head_hidden = 2 + rng.below(4);
    c.trunk = trial % 6 != 5;
    Model m = Model::create(c, static_cast<std::uint64_t>(trial));
    randomize(m, rng);
    std::vector<TokenId> toks(c.s);
    for (auto& t : toks) t = static_cast<TokenId>(rng.below(c.vocab));
    toks[0] = 0;
    std::vector<double> extra(c.extra), tgt(c.out);
    for (auto& e : extra) e = rng.uniform();
    for (auto& t : tgt) t = 2 * rng.uniform() - 1;
    TrunkCache tc;
    HeadCache hc;
    const auto pooled = c.trunk ? trunk_forward(m, toks, &tc) : std::vector<double>{};
    const auto y = head_forward(m, pooled, extra, &hc);
    auto grads = m.zeros_like();
    std::vector<double> dpooled;
    head_backward(m, hc, mse_grad(y, tgt), grads, c.trunk ? &dpooled : nullptr);
    if (c.trunk) trunk_backward(m, tc, dpooled, grads);
    for (std::size_t i = 0; i < grads.size(); ++i)
      note(grads[i].data, m.params()[i], [&] { return mse_loss(model_forward(m, toks, extra), tgt); });
  }

  double window_gap = 0;
  for (int trial = 0; trial < kShapes; ++trial) {
    Rng rng(9500 + trial);
    const std::size_t s = 2 + rng.below(14), dh = 1 + rng.below(5);
    const Tensor q = rand_tensor({s, dh}, rng), k = rand_tensor({s, dh}, rng), v = rand_tensor({s, dh}, rng);
    const auto mask = trial % 2 ? rand_mask(s, rng) : std::vector<std::uint8_t>(s, 1);
    for (std::size_t w : {s - 1, s, s + 3}) {
      const Tensor a = windowed_attention(q, k, v, w, mask), b = full_attention(q, k, v, mask);
      for (std::size_t i = 0; i < a.size(); ++i) window_gap = std::max(window_gap, std::abs(a.data[i] - b.data[i]));
    }
  }
  Verdict out;
  out.pass = worst < 1e-4 && window_gap < 1e-6;
  out.detail = std::to_string(checks) + " gradient checks over " + std::to_string(kShapes) +
               " shapes per op, max rel err " + fmt("%.2e", worst) + " (< 1e-4); windowed vs full attention max gap " +
               fmt("%.2e", window_gap) + " (< 1e-6)";
  return out;
}

// ---------------------------------------------------------------------------
// 2. simulator invariants

Corpus four_workloads(std::size_t s, std::size_t per_workload, std::uint64_t seed_base) {
  std::vector<std::vector<TraceRecord>> traces;
  for (unsigned i = 0; i < 4; ++i) {
    WorkloadProfile p;
    p.seed = seed_base + i;
    p.code_bytes = 4096u << (2 * i);
    p.working_set_bytes = 16384u << (2 * i);
    traces.push_back(generate_synthetic_trace(p, kDefaultWarmup + s * per_workload));
  }
  return make_corpus(traces, s);
}

Verdict simulator_invariants() {
  const auto& space = DesignSpace::builtin();
  const Corpus corpus = four_workloads(256, 4, 300);
  const auto picked = sample_chunks(corpus, 16, 2);
  Rng rng(41);
  std::size_t runs = 0, bad_ipc = 0, bad_cycles = 0, bad_counts = 0, bad_repro = 0;
  double max_ipc_ratio = 0;
  for (int t = 0; t < 48; ++t) {
    const Configuration cfg = sample_config(space, rng);
    const auto m = MicroarchParams::from(cfg, space);
    const Chunk& c = corpus.chunks[picked[static_cast<std::size_t>(t) % picked.size()]];
    const std::uint64_t seed = static_cast<std::uint64_t>(t);
    const SimStats s = simulate(c, cfg, space, seed);
    ++runs;
    const std::uint64_t n = c.records.size();
    const std::uint64_t width =
        std::min({m.fetch_width, m.decode_width, m.rename_width, m.dispatch_width, m.dispatch_count, m.issue_width,
                  m.retire_width});
    const double ipc = compute_ipc(s);
    max_ipc_ratio = std::max(max_ipc_ratio, ipc / static_cast<double>(m.issue_width));
    bad_ipc += ipc > static_cast<double>(m.issue_width);
    bad_cycles += s[Counter::Cycles] < (n + width - 1) / width;
    std::uint64_t mem = 0, br = 0;
    for (const auto& r : c.records) {
      mem += r.flags.load || r.flags.store;
      br += r.flags.branch;
    }
    bad_counts += s[Counter::DcacheHits] + s[Counter::DcacheMisses] != mem;
    bad_counts += s[Counter::BrCorrect] + s[Counter::BrMispredict] != br;
    bad_counts += s[Counter::Instructions] != n;
    bad_repro += !(simulate(c, cfg, space, seed) == s);
  }

  // Tag stores on their own: every access is a hit or a miss.
  std::size_t cache_runs = 0, bad_total = 0, inclusion_violations = 0;
  const Replacement policies[] = {Replacement::PLRU, Replacement::LRU, Replacement::RANDOM};
  for (int t = 0; t < 100; ++t) {
    Rng r(7000 + t);
    CacheGeometry g;
    g.line_bytes = 16u << r.below(3);
    g.associativity = 1u << r.below(4);
    g.size_bytes = g.line_bytes * g.associativity * (1u << r.below(5));
    g.replacement = policies[t % 3];
    Cache c(g, static_cast<std::uint64_t>(t));
    const std::uint64_t k = 1 + r.below(std::uint64_t{16});
    CacheGeometry small;
    small.line_bytes = 64;
    small.associativity = static_cast<std::uint32_t>(k);
    small.size_bytes = 64 * k;
    CacheGeometry big = small;
    big.associativity *= 2;
    big.size_bytes *= 2;
    Cache a(small), b(big);
    const std::uint64_t lines = 1 + r.below(4 * k);
    std::uint64_t calls = 0;
    for (int i = 0; i < 500; ++i) {
      const std::uint64_t addr = r.below(lines) * 64 + r.below(std::uint64_t{64});
      const bool write = r.bernoulli(0.3);
      c.access(addr * 3, write);
      a.access(addr, write);
      b.access(addr, write);
      ++calls;
    }
    ++cache_runs;
    bad_total += c.hits() + c.misses() != calls || c.accesses() != calls || a.hits() + a.misses() != calls;
    inclusion_violations += b.misses() > a.misses();
  }

  Verdict v;
  v.pass = bad_ipc == 0 && bad_cycles == 0 && bad_counts == 0 && bad_repro == 0 && bad_total == 0 &&
           inclusion_violations == 0;
  v.detail = std::to_string(runs) + " random configs: IPC <= issue width violations " + std::to_string(bad_ipc) +
             " (max IPC/issue " + fmt("%.3f", max_ipc_ratio) + "), cycle lower bound violations " +
             std::to_string(bad_cycles) + ", counter mismatches " + std::to_string(bad_counts) +
             ", non-reproducible " + std::to_string(bad_repro) + "; " + std::to_string(cache_runs) +
             " cache traces: hits+misses != accesses " + std::to_string(bad_total) +
             ", LRU inclusion (2k vs k) violations " + std::to_string(inclusion_violations);
  return v;
}

// ---------------------------------------------------------------------------
// 3. encodings

Verdict encodings() {
  const auto& space = DesignSpace::builtin();
  std::size_t values = 0, bad = 0;
  const auto mid = rank_decode(middle_config(space), space);
  for (std::size_t i = 0; i < space.size(); ++i)
    for (std::size_t k = 0; k < space[i].size(); ++k) {
      auto v = mid;
      v[i] = space[i].labels[k];
      const Configuration c = rank_encode(v, space);
      bad += c.ranks[i] != static_cast<int>(k) || rank_decode(c, space) != v;
      ++values;
    }
  Rng rng(3);
  std::size_t norm_bad = 0;
  for (int t = 0; t < 1000; ++t) {
    const Configuration c = sample_config(space, rng);
    bad += !(rank_encode(rank_decode(c, space), space) == c);
    for (double x : normalize(c, space)) norm_bad += !(x >= 0.0 && x <= 1.0);
  }
  Configuration top{std::vector<int>(space.size())};
  for (std::size_t i = 0; i < space.size(); ++i) top.ranks[i] = static_cast<int>(space[i].size()) - 1;
  for (double x : normalize(top, space)) norm_bad += x != 1.0;
  for (double x : normalize(Configuration{std::vector<int>(space.size(), 0)}, space)) norm_bad += x != 0.0;

  const Corpus corpus = four_workloads(64, 3, 500);
  BuildOptions opt;
  opt.chunks = sample_chunks(corpus, 6, 4);
  const Dataset d = build_dataset(corpus, sample_configs(space, 8, 6), space, Weights{}, opt);
  const auto dir = fs::temp_directory_path() / "onedse_acceptance_roundtrip";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string a = (dir / "a.csv").string(), b = (dir / "b.csv").string();
  save_dataset(d, a);
  const Dataset back = load_dataset(a, &space, &corpus.dict);
  save_dataset(back, b);
  const bool same_bytes = text::read_file(a) == text::read_file(b) &&
                          text::read_file(a + ".manifest.json") == text::read_file(b + ".manifest.json");
  const bool same_rows = back == d;
  fs::remove_all(dir);

  Verdict v;
  v.pass = bad == 0 && norm_bad == 0 && same_bytes && same_rows && d.rows.size() == 48;
  v.detail = "encode/decode mismatches " + std::to_string(bad) + " over " + std::to_string(values) +
             " catalog values + 1000 random configs; normalize out of bounds " + std::to_string(norm_bad) +
             "; dataset (" + std::to_string(d.rows.size()) + " rows) reload " + (same_rows ? "equal" : "DIFFERENT") +
             ", re-save " + (same_bytes ? "byte-identical" : "NOT byte-identical");
  return v;
}

// ---------------------------------------------------------------------------
// Toy space shared by 4 and 5: three icache parameters, area weighted on those only.

const std::vector<std::string> kToyParams = {"icache line size", "icache size (kb)", "icache associativity"};

struct Toy {
  const DesignSpace& full = DesignSpace::builtin();
  DesignSpace sub = select_params(DesignSpace::builtin(), kToyParams);
  Corpus corpus = four_workloads(256, 4, 100);
  std::vector<std::size_t> picked = sample_chunks(corpus, 16, 1);
  std::vector<Chunk> chunks;
  Weights weights;
  Configuration base = middle_config(DesignSpace::builtin());

  Toy() {
    for (auto i : picked) chunks.push_back(corpus.chunks[i]);
    for (const auto& p : full.params())
      if (std::find(kToyParams.begin(), kToyParams.end(), p.name) == kToyParams.end()) weights.area.w[p.name] = 0.0;
  }

  Evaluator oracle(std::vector<Chunk> eval) const {
    OracleSetup o;
    o.chunks = std::move(eval);
    o.space = full;
    o.subset = sub;
    o.base = base;
    o.weights = weights;
    o.memoize = true;
    return objective_evaluator(o);
  }
};

// 4. MAST against the exhaustive optimum

Verdict mast_vs_exhaustive() {
  const auto t0 = Clock::now();
  const Toy toy;
  std::vector<Configuration> cfgs;
  for (const auto& part : enumerate_configs(toy.sub)) cfgs.push_back(embed(toy.base, toy.full, toy.sub, part));
  BuildOptions bo;
  bo.chunks = toy.picked;
  const Dataset data = build_dataset(toy.corpus, cfgs, toy.full, toy.weights, bo);

  ModelConfig shape;
  shape.s = 256;
  shape.w = 16;
  PredictorModel model = PredictorModel::create(Mode::M, Metric::Objective, toy.sub, toy.corpus.dict, shape, 7);
  TrainSpec ts;
  ts.epochs = 30;
  ts.seed = 3;
  ts.lr = 3e-3;
  train(model, data, toy.corpus, ts);

  double lo = INFINITY, hi = -INFINITY;
  for (const auto& r : data.rows) {
    lo = std::min(lo, r.metrics.ipc_per_area);
    hi = std::max(hi, r.metrics.ipc_per_area);
  }
  MastSpec spec;
  spec.c_i = lo;
  spec.c_s = (hi - lo) / 50.0;
  std::vector<TokenSequence> tokens;
  for (const auto& c : toy.chunks) tokens.push_back(tokenize_chunk(c, toy.corpus.dict, 256, UnknownPolicy::Lenient));

  const std::uint64_t sims_before = simulation_count();
  const auto ts0 = Clock::now();
  MastResult r = mast_search(model, tokens, spec);
  const double sweep_s = since(ts0);
  const std::uint64_t sweep_sims = simulation_count() - sims_before;

  const Evaluator oracle = toy.oracle(toy.chunks);
  const ExhaustiveResult ex = exhaustive_search(toy.sub, oracle);
  annotate(r, oracle, toy.sub, spec.delta);
  const double got = r.trajectory.back().objective;
  const double ratio = got / ex.best_fitness;
  const double total = since(t0);

  Verdict v;
  v.pass = r.converged && ratio >= 0.95 && sweep_sims == 0 && total < 300;
  v.detail = std::string("converged ") + (r.converged ? "yes" : "no") + " at step " +
             std::to_string(r.convergence_step) + ", objective " + fmt("%.4f", got) + " vs exhaustive " +
             fmt("%.4f", ex.best_fitness) + " = " + fmt("%.1f%%", 100 * ratio) + " (>= 95%); simulator calls in sweep " +
             std::to_string(sweep_sims) + " (sweep " + fmt("%.3fs", sweep_s) + "); total " + fmt("%.0fs", total) +
             " (< 300s)";
  return v;
}

// 5. GA and ABC on the toy space

Verdict metaheuristics() {
  const Toy toy;
  const Evaluator oracle = toy.oracle(evaluation_chunks(toy.chunks, 8));
  const ExhaustiveResult ex = exhaustive_search(toy.sub, oracle);
  constexpr int kSeeds = 10;
  constexpr std::size_t kIters = 30;
  bool ok = true;
  std::string detail;
  for (int alg = 0; alg < 2; ++alg) {
    double conv_opt = 0, conv_van = 0, worst_reach = INFINITY;
    bool monotone = true;
    for (int seed = 1; seed <= kSeeds; ++seed) {
      SearchSpec sp;
      sp.population = 6;
      sp.iterations = kIters;
      sp.seed = static_cast<std::uint64_t>(seed);
      auto run = [&](const SearchSpec& s) {
        return alg == 0 ? ga_search(toy.sub, oracle, s) : abc_search(toy.sub, oracle, s);
      };
      const SearchResult a = run(sp), b = run(sp.vanilla());
      for (const auto* h : {&a.history, &b.history})
        for (std::size_t i = 1; i < h->size(); ++i) monotone = monotone && (*h)[i] >= (*h)[i - 1];
      worst_reach = std::min(worst_reach, a.history[kIters] / ex.best_fitness);
      conv_opt += static_cast<double>(convergence_iteration(a.history)) / kSeeds;
      conv_van += static_cast<double>(convergence_iteration(b.history)) / kSeeds;
    }
    const bool pass = worst_reach >= 0.9 && monotone && conv_opt < conv_van;
    ok = ok && pass;
    detail += std::string(alg ? "; ABC" : "GA") + ": worst best-at-30 " + fmt("%.1f%%", 100 * worst_reach) +
              " of optimum (>= 90%), monotone " + (monotone ? "yes" : "no") + ", mean convergence iteration " +
              fmt("%.2f", conv_opt) + " optimized vs " + fmt("%.2f", conv_van) + " vanilla";
  }
  return {ok, detail + " (" + std::to_string(kSeeds) + " paired seeds, population 6)"};
}

// ---------------------------------------------------------------------------
// 6. trace encoder vs parameters-only baseline

Verdict workload_awareness() {
  const auto t0 = Clock::now();
  const std::size_t s = 256;
  const auto profiles = profile_family(6, 10);
  std::vector<std::vector<TraceRecord>> traces;
  for (const auto& p : profiles) traces.push_back(generate_synthetic_trace(p, kDefaultWarmup + s * 16));
  const Corpus corpus = make_corpus(traces, s);
  const auto& space = DesignSpace::builtin();
  BuildOptions bo;
  bo.chunks = sample_chunks(corpus, 96, 1);
  const Dataset data = build_dataset(corpus, sample_configs(space, 16, 5), space, Weights{}, bo);
  auto [rest, test] = split(data, 0.75, 9);
  auto [train_part, val] = split(rest, 0.8, 10);

  ModelConfig shape;
  shape.s = s;
  shape.w = 16;
  TrainSpec spec;
  spec.epochs = 20;
  spec.seed = 3;
  double mse[2];
  for (int trunk = 1; trunk >= 0; --trunk) {
    ModelConfig sh = shape;
    sh.trunk = trunk == 1;
    PredictorModel m = PredictorModel::create(Mode::P, Metric::Ipc, space, corpus.dict, sh, 7);
    const TrainSet tr = make_train_set(m, train_part, corpus, true);
    const TrainSet va = make_train_set(m, val, corpus);
    const TrainSet te = make_train_set(m, test, corpus);
    fit(m.net, tr, &va, spec);
    mse[trunk] = evaluate(m.net, te);
  }
  const double ratio = mse[1] / mse[0];
  const double total = since(t0);
  Verdict v;
  v.pass = ratio <= 0.5 && total < 900;
  v.detail = std::to_string(profiles.size()) + " workloads, " + std::to_string(data.rows.size()) +
             " rows; held-out MSE (standardized IPC) with trace encoder " + fmt("%.4f", mse[1]) +
             " vs parameters-only " + fmt("%.4f", mse[0]) + ", ratio " + fmt("%.3f", ratio) + " (<= 0.5); " +
             fmt("%.0fs", total) + " (< 900s)";
  return v;
}

// ---------------------------------------------------------------------------
// 7. joint fine-tuning

Verdict finetune() {
  const auto t0 = Clock::now();
  const std::size_t s = 128;
  std::vector<std::vector<TraceRecord>> traces;
  for (unsigned i = 0; i < 4; ++i) {
    WorkloadProfile p;
    p.seed = 200 + i;
    p.code_bytes = 4096u << (2 * i);
    p.working_set_bytes = 16384u << (2 * i);
    p.dep_chain_len = 2 + 3 * i;
    traces.push_back(generate_synthetic_trace(p, kDefaultWarmup + s * 16));
  }
  const Corpus corpus = make_corpus(traces, s);
  const auto& space = DesignSpace::builtin();
  BuildOptions bo;
  bo.chunks = sample_chunks(corpus, 1000, 1);
  const Weights weights;
  const Dataset data = build_dataset(corpus, sample_configs(space, 16, 5), space, weights, bo);
  auto [tr, te] = split(data, 0.75, 11);

  ModelConfig shape;
  shape.s = s;
  shape.w = 16;
  TrainSpec pre;
  pre.epochs = 1;
  pre.seed = 3;
  pre.lr = 2e-3;
  pre.keep_best = false;
  AgentEnsemble pretrained = AgentEnsemble::create(space, corpus.dict, Metric::Objective, shape, 9, 0.1);
  train_agents(pretrained, tr, corpus, pre);

  FinetuneSpec fs;
  fs.epochs = 5;
  fs.seed = 4;
  fs.lr = 2e-3;
  fs.weights = weights;

  // lambda = 0 must reduce to independent supervised training
  AgentEnsemble zero = pretrained;
  zero.lambda = 0.0;
  smart_finetune(zero, tr, corpus, fs);
  TrainSpec same;
  same.epochs = fs.epochs;
  same.batch = fs.batch;
  same.lr = fs.lr;
  same.seed = fs.seed;
  same.keep_best = false;
  std::size_t differing = 0, tensors = 0;
  for (std::size_t a = 0; a < 4; ++a) {
    Model net = pretrained.agents[a].net;
    fit(net, make_train_set(pretrained.agents[a], tr, corpus), nullptr, same);
    for (std::size_t t = 0; t < net.params().size(); ++t, ++tensors)
      differing += net.params()[t].data != zero.agents[a].net.params()[t].data;
  }

  const double before = ensemble_rank_mse(pretrained, te, corpus);
  const double zero_after = ensemble_rank_mse(zero, te, corpus);
  AgentEnsemble joint = pretrained;
  const FinetuneHistory h = smart_finetune(joint, tr, corpus, fs);
  const double after = ensemble_rank_mse(joint, te, corpus);
  const double ratio = after / before;
  const double total = since(t0);

  Verdict v;
  v.pass = differing == 0 && ratio <= 0.98 && total < 1200;
  v.detail = "lambda=0: " + std::to_string(differing) + "/" + std::to_string(tensors) +
             " tensors differ from per-agent fit(); lambda=0.1: held-out rank MSE " + fmt("%.5f", before) + " -> " +
             fmt("%.5f", after) + ", ratio " + fmt("%.4f", ratio) + " (<= 0.98; lambda=0 control " +
             fmt("%.4f", zero_after / before) + "), mean reward " + fmt("%.4f", h.reward.front()) + " -> " +
             fmt("%.4f", h.reward.back()) + "; " + fmt("%.0fs", total) + " (< 1200s)";
  return v;
}

// ---------------------------------------------------------------------------
// 8. CLI pipeline

int run_cli(std::vector<std::string> args, std::string& err) {
  args.insert(args.begin(), "onedse");
  std::ostringstream out, e;
  const int rc = cli::run(args, out, e);
  err = e.str();
  return rc;
}

Verdict cli_smoke() {
  const auto t0 = Clock::now();
  const auto dir = fs::temp_directory_path() / "onedse_acceptance_smoke";
  fs::remove_all(dir);
  const std::string d = dir.string();
  const std::string params = "icache line size,icache size (kb),icache associativity";
  struct Step {
    const char* name;
    std::vector<std::string> args;
  };
  const std::vector<Step> steps = {
      {"gen-traces", {"gen-traces", "--workloads", "4", "--out", d + "/traces"}},
      {"build-dataset",
       {"build-dataset", "--traces", d + "/traces", "--param", params, "--out", d + "/dataset"}},
      {"train-m",
       {"train-m", "--traces", d + "/traces", "--dataset", d + "/dataset/dataset.csv", "--param", params, "--epochs",
        "10", "--window", "16", "--out", d + "/model"}},
      {"mast",
       {"mast", "--traces", d + "/traces", "--checkpoint", d + "/model/model.ckpt", "--dataset",
        d + "/dataset/dataset.csv", "--steps", "50", "--out", d + "/mast"}},
      {"report", {"report", d}},
  };
  std::string failed;
  for (const auto& st : steps) {
    std::string err;
    if (run_cli(st.args, err) != 0) {
      failed = std::string(st.name) + ": " + err;
      break;
    }
  }
  bool csv_ok = false, manifest_ok = false;
  std::size_t traj_rows = 0;
  if (failed.empty()) {
    const std::string body = text::read_file(d + "/mast/trajectory.csv");
    const auto lines = text::split(body, '\n');
    const auto header = text::split(lines.at(0), ',');
    csv_ok = header.size() == 3 + kToyParams.size() && header[0] == "step" && header[1] == "constraint" &&
             header[2] == "objective";
    for (std::size_t i = 1; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      const auto cells = text::split(lines[i], ',');
      csv_ok = csv_ok && cells.size() == header.size() && std::to_string(traj_rows) == cells[0];
      double obj = 0;
      csv_ok = csv_ok && text::parse_double(cells[2], obj) && obj > 0;
      ++traj_rows;
    }
    csv_ok = csv_ok && traj_rows > 0;
    const auto m = nlohmann::json::parse(text::read_file(d + "/mast/manifest.json"));
    manifest_ok = m.at("command") == "mast" && m.contains("seed") && m.at("inputs").size() >= 2 &&
                  m.at("params").at("sweep_oracle_calls") == 0;
    for (const auto& o : m.at("outputs")) manifest_ok = manifest_ok && fs::exists(d + "/mast/" + o.get<std::string>());
    manifest_ok = manifest_ok && fs::exists(d + "/report/mast_trajectories.csv");
  }
  const double total = since(t0);
  fs::remove_all(dir);
  Verdict v;
  v.pass = failed.empty() && csv_ok && manifest_ok && total < 600;
  v.detail = failed.empty() ? "gen-traces -> build-dataset -> train-m -> mast -> report in " + fmt("%.0fs", total) +
                                  " (< 600s); trajectory.csv " + (csv_ok ? "valid" : "INVALID") + " (" +
                                  std::to_string(traj_rows) + " steps), manifest " + (manifest_ok ? "valid" : "INVALID")
                            : "step failed: " + failed;
  return v;
}

struct Criterion {
  int id;
  const char* name;
  Verdict (*run)();
};

}  // namespace

int main(int argc, char** argv) {
  const Criterion all[] = {
      {1, "numerical kernel", numerical_kernel},
      {2, "simulator invariants", simulator_invariants},
      {3, "encoding round trips", encodings},
      {4, "MAST vs exhaustive", mast_vs_exhaustive},
      {5, "GA/ABC baseline", metaheuristics},
      {6, "workload awareness", workload_awareness},
      {7, "joint fine-tuning", finetune},
      {8, "CLI smoke", cli_smoke},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& c : all) {
    if (!wanted.empty() && !wanted.count(c.id)) continue;
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failures += !v.pass;
    std::printf("%s [%d] %s: %s [%.1fs]\n", v.pass ? "PASS" : "FAIL", c.id, c.name, v.detail.c_str(), since(t0));
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
