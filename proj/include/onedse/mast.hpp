#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "onedse/metaheuristics.hpp"
#include "onedse/trace_models.hpp"

namespace onedse {

struct MastSpec {
  double c_i = 0.0;            // first constraint
  double c_s = 0.0;            // step, > 0
  std::size_t patience = 10;   // K
  std::size_t max_iter = 500;
  double delta = 0.01;         // relative objective change counted as significant

  void validate() const;
  /// c_s = (hi - lo) / 500, starting at lo.
  static MastSpec for_range(double lo, double hi);
};

struct MastStep {
  std::size_t step = 0;
  double constraint = 0;
  Configuration config;            // aggregated and rounded, over the model's subset
  double objective = std::numeric_limits<double>::quiet_NaN();  // filled by annotate()
};

struct MastResult {
  bool converged = false;
  std::size_t convergence_step = 0;  // n
  Configuration converged_config;
  std::vector<MastStep> trajectory;
  // Filled by annotate():
  std::size_t critical_step = 0;     // p
  std::vector<Configuration> near_optimal_set;
  std::vector<std::string> critical;
  std::vector<std::string> flexible;
};

/// Sweeps c_k = c_i + k c_s through an M-mode model. The trunk runs once per chunk;
/// each step only re-runs the head. No oracle is consulted.
MastResult mast_search(const PredictorModel& model, const std::vector<TokenSequence>& chunks, const MastSpec& spec);

struct CriticalReport {
  std::size_t p = 0;
  std::vector<std::string> critical;
  std::vector<std::string> flexible;
};

/// Latest step p whose objective moved by more than delta (relative) from step p-1;
/// critical parameters changed rank at p, flexible ones vary within p..end without
/// being critical. Fewer than two steps gives an empty report.
CriticalReport critical_parameters(const std::vector<MastStep>& trajectory, const DesignSpace& subset, double delta);

/// Scores each distinct trajectory configuration with the oracle, then fills p,
/// the near-optimal set and the critical / flexible lists.
void annotate(MastResult& result, const Evaluator& oracle, const DesignSpace& subset, double delta);

/// step,constraint,objective,<one column per parameter with decoded values>
std::string trajectory_csv(const MastResult& result, const DesignSpace& subset);
/// Key/value summary: convergence, converged configuration, critical and flexible lists.
std::string mast_summary(const MastResult& result, const DesignSpace& subset);

}  // namespace onedse
