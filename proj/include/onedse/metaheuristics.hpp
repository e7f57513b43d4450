#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "onedse/design_space.hpp"
#include "onedse/metrics.hpp"
#include "onedse/simulator.hpp"
#include "onedse/trace.hpp"

namespace onedse {

/// Fitness over a (sub)space. Every call is counted; copies share the counter.
class Evaluator {
 public:
  using Fn = std::function<double(const Configuration&)>;

  explicit Evaluator(Fn fn);

  double operator()(const Configuration& config) const;
  std::vector<double> evaluate_all(const std::vector<Configuration>& configs) const;  // parallel
  std::size_t calls() const { return calls_->load(); }
  void reset_calls() const { calls_->store(0); }

 private:
  Fn fn_;
  std::shared_ptr<std::atomic<std::size_t>> calls_;
};

struct OracleSetup {
  std::vector<Chunk> chunks;  // the fixed evaluation set
  DesignSpace space;          // full space the simulator reads
  DesignSpace subset;         // parameters being searched
  Configuration base;         // values for everything outside the subset
  Weights weights;
  LatencyTable latency;
  std::uint64_t seed = 0;
  bool memoize = false;       // serve repeated configurations from a table (still counted)
};

/// Mean simulated objective (IPC / area) of base-with-part over the chunk set.
Evaluator objective_evaluator(OracleSetup setup);
/// The first n chunks of `chunks`; the default evaluation set is 8 chunks.
std::vector<Chunk> evaluation_chunks(const std::vector<Chunk>& chunks, std::size_t n = 8);

struct SearchSpec {
  std::size_t population = 24;
  std::size_t iterations = 50;
  std::size_t tournament = 3;
  double crossover = 0.9;
  double mutation = 0.3;   // m0
  double anneal = 0.93;    // alpha
  std::size_t stagnation_limit = 6;
  bool use_anneal = true;
  bool use_stagnation = true;
  std::uint64_t seed = 1;

  void validate() const;
  /// Mutation rate at iteration k (1-based).
  double mutation_at(std::size_t k) const;
  /// Anneal and stagnation handling both off.
  SearchSpec vanilla() const;
};

struct SearchResult {
  Configuration best;
  double best_fitness = 0;
  /// Entry 0 is the initial population; entry k follows iteration k.
  std::vector<double> history;
  std::vector<std::size_t> calls;  // cumulative evaluator calls per entry
  std::vector<double> seconds;     // cumulative wall time per entry
};

SearchResult ga_search(const DesignSpace& subset, const Evaluator& evaluator, const SearchSpec& spec);
SearchResult abc_search(const DesignSpace& subset, const Evaluator& evaluator, const SearchSpec& spec);

struct ExhaustiveResult {
  Configuration best;
  double best_fitness = 0;
  std::size_t evaluated = 0;
  std::vector<Configuration> configs;  // lexicographic order
  std::vector<double> fitness;
};

inline constexpr std::size_t kExhaustiveCap = 10000;

/// Exact argmax; ties go to the lexicographically smallest rank vector.
ExhaustiveResult exhaustive_search(const DesignSpace& subset, const Evaluator& evaluator,
                                   std::size_t cap = kExhaustiveCap);
/// Every configuration of a small space in lexicographic rank order.
std::vector<Configuration> enumerate_configs(const DesignSpace& subset, std::size_t cap = kExhaustiveCap);

/// First index whose value reaches frac x the final value.
std::size_t convergence_iteration(const std::vector<double>& history, double frac = 0.9);

/// iteration,best_fitness,evaluator_calls,wall_seconds
std::string history_csv(const SearchResult& result);

}  // namespace onedse
