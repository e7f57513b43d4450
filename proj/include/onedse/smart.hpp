#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "onedse/datagen.hpp"
#include "onedse/trace_models.hpp"

namespace onedse {

/// Four M-mode agents, one per subsystem, whose subsets partition the space.
struct AgentEnsemble {
  DesignSpace space;
  std::array<PredictorModel, 4> agents;  // kSubsystems order
  double lambda = 0.1;
  double baseline = 0.0;                 // running mean of Perf
  std::uint64_t baseline_count = 0;

  static AgentEnsemble create(const DesignSpace& space, const TokenDict& dict, Metric metric, const ModelConfig& shape,
                              std::uint64_t seed, double lambda = 0.1);
  /// Throws ValidationError unless the agents' subsets are disjoint and cover the space.
  void check_partition() const;

  /// Writes <dir>/<subsystem>.ckpt and <dir>/ensemble.json.
  void save(const std::string& dir) const;
  static AgentEnsemble load(const std::string& dir);
};

/// Each agent predicts its subset from the chunks alone (mean raw rank, then rounded);
/// the parts are assembled in catalog order.
Configuration joint_predict(const AgentEnsemble& ensemble, const std::vector<TokenSequence>& chunks,
                            double metric_constraint);

/// Supervised pre-training of every agent on its own subset (train() per agent).
std::array<TrainHistory, 4> train_agents(AgentEnsemble& ensemble, const Dataset& data, const Corpus& corpus,
                                         const TrainSpec& spec);

struct FinetuneSpec {
  std::size_t epochs = 5;
  std::size_t batch = 32;
  double lr = 1e-3;
  double sigma = 0.25;  // exploration std in raw-rank units
  std::uint64_t seed = 1;
  Weights weights;
  LatencyTable latency;
};

struct FinetuneHistory {
  std::vector<double> loss;    // per batch: mean of sum_i L_i
  std::vector<double> reward;  // per batch: mean Perf (0 when lambda = 0)
  std::size_t skipped = 0;     // batches dropped after a simulator failure
};

/// Minimises sum_i L_i - lambda * Perf with one Adam step per batch and agent.
/// The Perf gradient is a score-function estimate with the running-mean baseline.
/// With lambda = 0 no sampling happens and each agent's updates equal fit() on its
/// own samples with the same seed, batch size and learning rate.
FinetuneHistory smart_finetune(AgentEnsemble& ensemble, const Dataset& data, const Corpus& corpus,
                               const FinetuneSpec& spec);

/// Mean per-sample rank MSE over all agents (normalized ranks), on `data`.
double ensemble_rank_mse(const AgentEnsemble& ensemble, const Dataset& data, const Corpus& corpus);

}  // namespace onedse
