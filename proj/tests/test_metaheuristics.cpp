#include <doctest.h>

#include <cmath>

#include "onedse/error.hpp"
#include "onedse/metaheuristics.hpp"

using namespace onedse;

namespace {

// Separable bowl with its peak at ranks (2, 5, 1, 3).
double bowl(const Configuration& c) {
  static const int peak[] = {2, 5, 1, 3};
  double d = 0;
  for (std::size_t i = 0; i < c.ranks.size(); ++i) d += std::abs(c.ranks[i] - peak[i]);
  return 1.0 / (1.0 + d);
}

const DesignSpace& bowl_space() {
  static const DesignSpace s =
      DesignSpace::parse("a | core | 1,2,3,4\nb | core | 1,2,3,4,5,6,7,8\nc | core | 1,2,3\nd | core | 1,2,3,4,5\n");
  return s;
}

void check_monotone(const SearchResult& r, std::size_t iterations) {
  REQUIRE(r.history.size() == iterations + 1);
  CHECK(r.calls.size() == r.history.size());
  CHECK(r.seconds.size() == r.history.size());
  for (std::size_t i = 1; i < r.history.size(); ++i) {
    CHECK(r.history[i] >= r.history[i - 1]);
    CHECK(r.calls[i] >= r.calls[i - 1]);
  }
  CHECK(r.best_fitness == r.history.back());
  CHECK(bowl(r.best) == r.best_fitness);
}

}  // namespace

TEST_CASE("exhaustive search") {
  const DesignSpace s = DesignSpace::parse("a | core | 1,2\nb | core | 1,2\n");
  const Evaluator eval([](const Configuration& c) { return c.ranks[0] == 1 && c.ranks[1] == 0 ? 2.0 : 1.0; });
  const ExhaustiveResult r = exhaustive_search(s, eval);
  CHECK(r.evaluated == 4);
  CHECK(eval.calls() == 4);
  CHECK(r.best.ranks == std::vector<int>{1, 0});
  CHECK(r.configs[1].ranks == std::vector<int>{0, 1});  // lexicographic

  const DesignSpace toy = select_params(
      DesignSpace::builtin(), std::vector<std::string>{"icache line size", "icache size (kb)", "icache associativity"});
  CHECK(enumerate_configs(toy).size() == 48);

  SUBCASE("ties go to the smallest rank vector") {
    const Evaluator flat([](const Configuration&) { return 1.0; });
    CHECK(exhaustive_search(s, flat).best.ranks == std::vector<int>{0, 0});
  }
  SUBCASE("cap") {
    CHECK_THROWS_AS(enumerate_configs(DesignSpace::builtin()), ArgumentError);
    CHECK_THROWS_AS(exhaustive_search(toy, eval, 47), ArgumentError);
    CHECK(eval.calls() == 4);
  }
}

TEST_CASE("convergence_iteration") {
  CHECK(convergence_iteration({1, 5, 9, 10}) == 2);
  CHECK(convergence_iteration({10, 10}) == 0);
  CHECK(convergence_iteration({1, 2, 3, 4}, 1.0) == 3);
  CHECK_THROWS_AS(convergence_iteration({}), ArgumentError);
}

TEST_CASE("search spec") {
  SearchSpec s;
  CHECK_NOTHROW(s.validate());
  CHECK(s.mutation_at(0) == doctest::Approx(0.3));
  CHECK(s.mutation_at(10) == doctest::Approx(0.3 * std::pow(0.93, 10)));
  const SearchSpec v = s.vanilla();
  CHECK_FALSE(v.use_anneal);
  CHECK_FALSE(v.use_stagnation);
  CHECK(v.mutation_at(10) == 0.3);
  SearchSpec bad = s;
  bad.population = 1;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  bad = s;
  bad.anneal = 1.0;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  bad = s;
  bad.crossover = 1.5;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
}

TEST_CASE("GA and ABC") {
  SearchSpec spec;
  spec.iterations = 40;
  spec.seed = 3;
  for (bool vanilla : {false, true}) {
    const SearchSpec sp = vanilla ? spec.vanilla() : spec;
    const Evaluator eval(bowl);
    const SearchResult ga = ga_search(bowl_space(), eval, sp);
    check_monotone(ga, sp.iterations);
    CHECK(ga.calls.back() == eval.calls());
    CHECK(ga.best_fitness == 1.0);

    const Evaluator eval2(bowl);
    const SearchResult abc = abc_search(bowl_space(), eval2, sp);
    check_monotone(abc, sp.iterations);
    CHECK(abc.best_fitness == 1.0);

    // a fixed seed reproduces the whole run
    CHECK(ga_search(bowl_space(), Evaluator(bowl), sp).history == ga.history);
    CHECK(abc_search(bowl_space(), Evaluator(bowl), sp).best == abc.best);
  }

  SUBCASE("one-parameter space") {
    const DesignSpace one = DesignSpace::parse("x | core | 1,2,3,4,5\n");
    const Evaluator eval([](const Configuration& c) { return c.ranks[0] == 3 ? 5.0 : 1.0; });
    SearchSpec small;
    small.population = 6;
    small.iterations = 10;
    CHECK(ga_search(one, eval, small).best.ranks == std::vector<int>{3});
    CHECK(abc_search(one, eval, small).best.ranks == std::vector<int>{3});
  }
  SUBCASE("history csv") {
    const SearchResult r = ga_search(bowl_space(), Evaluator(bowl), spec);
    const std::string csv = history_csv(r);
    CHECK(csv.rfind("iteration,best_fitness,evaluator_calls,wall_seconds\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 42);
  }
}

TEST_CASE("simulation oracle") {
  const auto& space = DesignSpace::builtin();
  WorkloadProfile p;
  p.seed = 8;
  const auto chunks = chunk_trace(generate_synthetic_trace(p, 1024), 128, 0, 512);
  const auto eval_set = evaluation_chunks(chunks, 3);
  REQUIRE(eval_set.size() == 3);
  CHECK(eval_set[2].id == 2);

  OracleSetup setup;
  setup.chunks = eval_set;
  setup.space = space;
  setup.subset = select_params(space, std::vector<std::string>{"icache size (kb)"});
  setup.base = middle_config(space);
  setup.memoize = true;
  const Evaluator eval = objective_evaluator(setup);
  const Configuration part{{2}};
  const double v = eval(part);
  CHECK(eval(part) == v);
  CHECK(eval.calls() == 2);

  double expect = 0;
  const Configuration full = embed(setup.base, space, setup.subset, part);
  for (const auto& c : eval_set) expect += objective(simulate(c, full, space), full, space, setup.weights.area);
  CHECK(v == doctest::Approx(expect / 3));
}
