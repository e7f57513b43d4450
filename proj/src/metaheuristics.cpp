#include "onedse/metaheuristics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>

#include "onedse/error.hpp"
#include "onedse/parallel.hpp"
#include "onedse/rng.hpp"
#include "onedse/text.hpp"

namespace onedse {

Evaluator::Evaluator(Fn fn) : fn_(std::move(fn)), calls_(std::make_shared<std::atomic<std::size_t>>(0)) {
  if (!fn_) throw ArgumentError("evaluator needs a function");
}

double Evaluator::operator()(const Configuration& config) const {
  ++*calls_;
  return fn_(config);
}

std::vector<double> Evaluator::evaluate_all(const std::vector<Configuration>& configs) const {
  std::vector<double> out(configs.size());
  parallel_for(configs.size(), [&](std::size_t i) { out[i] = (*this)(configs[i]); });
  return out;
}

std::vector<Chunk> evaluation_chunks(const std::vector<Chunk>& chunks, std::size_t n) {
  return std::vector<Chunk>(chunks.begin(), chunks.begin() + static_cast<std::ptrdiff_t>(std::min(n, chunks.size())));
}

Evaluator objective_evaluator(OracleSetup setup) {
  if (setup.chunks.empty()) throw ArgumentError("oracle needs at least one chunk");
  setup.space.check(setup.base);
  subset_indices(setup.space, setup.subset);  // throws when not a subset
  setup.latency.validate();
  struct State {
    OracleSetup setup;
    std::mutex mu;
    std::map<Configuration, double> memo;
  };
  auto st = std::make_shared<State>();
  st->setup = std::move(setup);
  return Evaluator([st](const Configuration& part) {
    const OracleSetup& s = st->setup;
    if (s.memoize) {
      std::lock_guard lock(st->mu);
      if (auto it = st->memo.find(part); it != st->memo.end()) return it->second;
    }
    s.subset.check(part);
    const Configuration full = embed(s.base, s.space, s.subset, part);
    const MicroarchParams params = MicroarchParams::from(full, s.space);
    double sum = 0;
    for (const Chunk& c : s.chunks) sum += objective(simulate(c, params, s.seed, s.latency), full, s.space, s.weights.area);
    const double v = sum / static_cast<double>(s.chunks.size());
    if (s.memoize) {
      std::lock_guard lock(st->mu);
      st->memo.emplace(part, v);
    }
    return v;
  });
}

void SearchSpec::validate() const {
  if (population < 2) throw ArgumentError("population must be at least 2");
  if (iterations < 1) throw ArgumentError("iterations must be at least 1");
  if (tournament < 1) throw ArgumentError("tournament size must be at least 1");
  auto rate = [](double v, const char* what) {
    if (!(v >= 0.0 && v <= 1.0)) throw ArgumentError(std::string(what) + " must lie in [0, 1]");
  };
  rate(crossover, "crossover rate");
  rate(mutation, "mutation rate");
  if (!(anneal > 0.0 && anneal < 1.0)) throw ArgumentError("anneal factor must lie in (0, 1)");
  if (stagnation_limit < 1) throw ArgumentError("stagnation limit must be at least 1");
}

double SearchSpec::mutation_at(std::size_t k) const {
  return use_anneal ? mutation * std::pow(anneal, static_cast<double>(k)) : mutation;
}

SearchSpec SearchSpec::vanilla() const {
  SearchSpec v = *this;
  v.use_anneal = false;
  v.use_stagnation = false;
  return v;
}

namespace {

using Clock = std::chrono::steady_clock;

struct Individual {
  Configuration config;
  double fitness = 0;
};

class Recorder {
 public:
  Recorder(const Evaluator& e) : eval_(e), start_calls_(e.calls()), t0_(Clock::now()) {}

  void record(SearchResult& r, const Individual& best) {
    if (r.history.empty() || best.fitness > r.best_fitness) {
      r.best = best.config;
      r.best_fitness = best.fitness;
    }
    r.history.push_back(r.best_fitness);
    r.calls.push_back(eval_.calls() - start_calls_);
    r.seconds.push_back(std::chrono::duration<double>(Clock::now() - t0_).count());
  }

 private:
  const Evaluator& eval_;
  std::size_t start_calls_;
  Clock::time_point t0_;
};

int random_rank(const DesignSpace& space, std::size_t i, Rng& rng) {
  return rng.below(static_cast<int>(space[i].size()));
}

void mutate(Configuration& c, const DesignSpace& space, double rate, Rng& rng) {
  for (std::size_t i = 0; i < c.size(); ++i)
    if (rng.bernoulli(rate)) c.ranks[i] = random_rank(space, i, rng);
}

// A candidate that repeats a configuration already held would only spend an
// evaluation; nudge random genes until it is new (bounded attempts).
void make_distinct(Configuration& c, std::set<Configuration>& held, const DesignSpace& space, Rng& rng) {
  for (int attempt = 0; attempt < 16 && held.count(c); ++attempt) {
    const std::size_t j = rng.below(c.size());
    const int n = static_cast<int>(space[j].size());
    if (n > 1) c.ranks[j] = (c.ranks[j] + 1 + rng.below(n - 1)) % n;
  }
  held.insert(c);
}

std::vector<Individual> evaluate(const Evaluator& eval, std::vector<Configuration> configs) {
  const auto f = eval.evaluate_all(configs);
  std::vector<Individual> out(configs.size());
  for (std::size_t i = 0; i < configs.size(); ++i) out[i] = {std::move(configs[i]), f[i]};
  return out;
}

const Individual& fittest(const std::vector<Individual>& pop) {
  return *std::max_element(pop.begin(), pop.end(),
                           [](const Individual& a, const Individual& b) { return a.fitness < b.fitness; });
}

std::vector<Individual> initial_population(const DesignSpace& space, const Evaluator& eval, std::size_t n, Rng& rng) {
  std::vector<Configuration> configs(n);
  for (auto& c : configs) c = sample_config(space, rng);
  return evaluate(eval, std::move(configs));
}

}  // namespace

SearchResult ga_search(const DesignSpace& subset, const Evaluator& eval, const SearchSpec& spec) {
  spec.validate();
  if (subset.size() == 0) throw ArgumentError("search space is empty");
  Rng rng(derive_seed(spec.seed, 0x6761));
  Recorder rec(eval);
  SearchResult result;
  auto pop = initial_population(subset, eval, spec.population, rng);
  rec.record(result, fittest(pop));
  std::size_t stagnant = 0;

  auto tournament = [&]() -> const Individual& {
    const Individual* best = &pop[rng.below(pop.size())];
    for (std::size_t t = 1; t < spec.tournament; ++t) {
      const Individual& c = pop[rng.below(pop.size())];
      if (c.fitness > best->fitness) best = &c;
    }
    return *best;
  };

  for (std::size_t k = 1; k <= spec.iterations; ++k) {
    const double m = spec.mutation_at(k);
    // Generational replacement; the elite survives unchanged.
    std::vector<Configuration> children(spec.population - 1);
    for (auto& child : children) {
      const Individual& a = tournament();
      const Individual& b = tournament();
      child = a.config;
      if (rng.bernoulli(spec.crossover))
        for (std::size_t i = 0; i < child.size(); ++i)
          if (rng.bernoulli(0.5)) child.ranks[i] = b.config.ranks[i];
      mutate(child, subset, m, rng);
    }
    if (spec.use_stagnation) {
      std::set<Configuration> held;
      for (const auto& p : pop) held.insert(p.config);
      for (auto& child : children) make_distinct(child, held, subset, rng);
    }
    auto offspring = evaluate(eval, std::move(children));
    Individual elite = fittest(pop);
    pop.clear();
    pop.push_back(std::move(elite));
    pop.insert(pop.end(), std::make_move_iterator(offspring.begin()), std::make_move_iterator(offspring.end()));

    const double before = result.best_fitness;
    rec.record(result, fittest(pop));
    stagnant = result.best_fitness > before ? 0 : stagnant + 1;
    if (spec.use_stagnation && stagnant >= spec.stagnation_limit) {
      // Stuck: keep the elite, rebuild the rest as heavy mutations of survivors.
      std::swap(pop.front(), *std::max_element(pop.begin(), pop.end(), [](const Individual& a, const Individual& b) {
        return a.fitness < b.fitness;
      }));
      std::vector<Configuration> fresh;
      for (std::size_t i = 1; i < pop.size(); ++i) {
        Configuration c = pop[rng.below(pop.size())].config;
        mutate(c, subset, 0.5, rng);
        fresh.push_back(std::move(c));
      }
      auto evaluated = evaluate(eval, std::move(fresh));
      for (std::size_t i = 1; i < pop.size(); ++i) pop[i] = std::move(evaluated[i - 1]);
      stagnant = 0;
    }
  }
  return result;
}

SearchResult abc_search(const DesignSpace& subset, const Evaluator& eval, const SearchSpec& spec) {
  spec.validate();
  if (subset.size() == 0) throw ArgumentError("search space is empty");
  Rng rng(derive_seed(spec.seed, 0x616263));
  Recorder rec(eval);
  SearchResult result;
  auto food = initial_population(subset, eval, spec.population, rng);
  std::vector<std::size_t> trials(food.size(), 0);
  rec.record(result, fittest(food));

  // One-parameter move toward or away from a partner source, plus an
  // occasional random reset of that parameter at the current mutation rate.
  auto neighbour = [&](std::size_t i, double m) {
    Configuration c = food[i].config;
    const std::size_t j = rng.below(c.size());
    std::size_t partner = rng.below(food.size() - 1);
    if (partner >= i) ++partner;
    const double phi = 2.0 * rng.uniform() - 1.0;
    const int hi = static_cast<int>(subset[j].size()) - 1;
    int v = c.ranks[j] + static_cast<int>(std::lround(phi * (c.ranks[j] - food[partner].config.ranks[j])));
    if (v == c.ranks[j] && hi > 0) v += rng.bernoulli(0.5) ? 1 : -1;
    if (rng.bernoulli(m)) v = random_rank(subset, j, rng);
    c.ranks[j] = std::clamp(v, 0, hi);
    return c;
  };
  auto distinct = [&](std::vector<Configuration>& cand) {
    std::set<Configuration> held;
    for (const auto& f : food) held.insert(f.config);
    for (auto& c : cand) make_distinct(c, held, subset, rng);
  };
  auto greedy = [&](const std::vector<std::size_t>& who, std::vector<Individual> cand) {
    for (std::size_t n = 0; n < who.size(); ++n) {
      const std::size_t i = who[n];
      if (cand[n].fitness > food[i].fitness) {
        food[i] = std::move(cand[n]);
        trials[i] = 0;
      } else {
        ++trials[i];
      }
    }
  };

  for (std::size_t k = 1; k <= spec.iterations; ++k) {
    const double m = spec.mutation_at(k);

    // Employed bees: one candidate per source.
    std::vector<std::size_t> who(food.size());
    std::iota(who.begin(), who.end(), 0);
    std::vector<Configuration> cand;
    for (auto i : who) cand.push_back(neighbour(i, m));
    if (spec.use_stagnation) distinct(cand);
    greedy(who, evaluate(eval, std::move(cand)));

    // Onlookers: sources drawn in proportion to fitness.
    double lo = INFINITY;
    for (const auto& f : food) lo = std::min(lo, f.fitness);
    std::vector<double> cum(food.size());
    double acc = 0;
    for (std::size_t i = 0; i < food.size(); ++i) cum[i] = acc += food[i].fitness - lo + 1e-12;
    who.clear();
    cand.clear();
    for (std::size_t n = 0; n < food.size(); ++n) {
      const double u = rng.uniform() * acc;
      const std::size_t i = std::min<std::size_t>(food.size() - 1, std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
      who.push_back(i);
      cand.push_back(neighbour(i, m));
    }
    if (spec.use_stagnation) distinct(cand);
    // Candidates for the same source are judged in draw order.
    greedy(who, evaluate(eval, std::move(cand)));

    const Individual best_now = fittest(food);
    rec.record(result, best_now);

    // Scouts replace sources that failed L times in a row.
    std::vector<std::size_t> stuck;
    for (std::size_t i = 0; i < food.size(); ++i)
      if (trials[i] >= spec.stagnation_limit) stuck.push_back(i);
    if (!stuck.empty()) {
      std::vector<Configuration> fresh;
      for (std::size_t n = 0; n < stuck.size(); ++n) {
        if (spec.use_stagnation) {
          // Mutate the best-so-far instead of restarting blind.
          Configuration c = result.best;
          mutate(c, subset, 0.5, rng);
          fresh.push_back(std::move(c));
        } else {
          fresh.push_back(sample_config(subset, rng));
        }
      }
      auto evaluated = evaluate(eval, std::move(fresh));
      for (std::size_t n = 0; n < stuck.size(); ++n) {
        food[stuck[n]] = std::move(evaluated[n]);
        trials[stuck[n]] = 0;
      }
    }
  }
  return result;
}

std::vector<Configuration> enumerate_configs(const DesignSpace& subset, std::size_t cap) {
  if (subset.size() == 0) throw ArgumentError("search space is empty");
  double total = 1;
  for (std::size_t i = 0; i < subset.size(); ++i) total *= static_cast<double>(subset[i].size());
  if (total > static_cast<double>(cap))
    throw ArgumentError("space has " + text::format_double(total) + " configurations, over the exhaustive cap of " +
                        std::to_string(cap));
  std::vector<Configuration> out;
  out.reserve(static_cast<std::size_t>(total));
  Configuration c;
  c.ranks.assign(subset.size(), 0);
  while (true) {
    out.push_back(c);
    std::size_t i = subset.size();
    while (i > 0) {
      --i;
      if (++c.ranks[i] < static_cast<int>(subset[i].size())) break;
      c.ranks[i] = 0;
      if (i == 0) return out;
    }
  }
}

ExhaustiveResult exhaustive_search(const DesignSpace& subset, const Evaluator& eval, std::size_t cap) {
  ExhaustiveResult r;
  r.configs = enumerate_configs(subset, cap);
  r.fitness = eval.evaluate_all(r.configs);
  r.evaluated = r.configs.size();
  std::size_t best = 0;
  for (std::size_t i = 1; i < r.fitness.size(); ++i)
    if (r.fitness[i] > r.fitness[best]) best = i;
  r.best = r.configs[best];
  r.best_fitness = r.fitness[best];
  return r;
}

std::size_t convergence_iteration(const std::vector<double>& history, double frac) {
  if (history.empty()) throw ArgumentError("convergence_iteration: empty history");
  const double target = frac * history.back();
  for (std::size_t i = 0; i < history.size(); ++i)
    if (history[i] >= target) return i;
  return history.size() - 1;
}

std::string history_csv(const SearchResult& r) {
  std::ostringstream os;
  os << "iteration,best_fitness,evaluator_calls,wall_seconds\n";
  for (std::size_t i = 0; i < r.history.size(); ++i)
    os << i << ',' << text::format_double(r.history[i]) << ',' << r.calls[i] << ',' << text::format_double(r.seconds[i])
       << '\n';
  return os.str();
}

}  // namespace onedse
