#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "onedse/datagen.hpp"
#include "onedse/design_space.hpp"
#include "onedse/metrics.hpp"
#include "onedse/neural.hpp"
#include "onedse/trace.hpp"

namespace onedse {

/// P: (trace, normalized parameters) -> metric. M: (trace, metric) -> parameter ranks.
enum class Mode { P, M };

std::string_view to_string(Mode m);

struct PredictorModel {
  Mode mode = Mode::P;
  Metric metric = Metric::Objective;
  /// P: the parameters fed in. M: the parameters predicted, in output order.
  DesignSpace space;
  TokenDict dict;
  Model net;
  /// Metric standardisation: P targets and M inputs are (value - mean) / scale.
  double metric_mean = 0.0;
  double metric_scale = 1.0;

  /// Builds the network; `shape` supplies s, d, heads, En, Fn, w and the hidden widths.
  /// A shape with trunk = false gives the parameters-only baseline.
  static PredictorModel create(Mode mode, Metric metric, const DesignSpace& space, const TokenDict& dict,
                               ModelConfig shape, std::uint64_t seed);

  std::size_t s() const { return net.config().s; }
  double to_model_units(double metric_value) const { return (metric_value - metric_mean) / metric_scale; }
  double from_model_units(double v) const { return v * metric_scale + metric_mean; }

  void save(const std::string& path) const;
  static PredictorModel load(const std::string& path);
};

/// Predicted metric in original units.
double forward_p(const PredictorModel& model, std::span<const TokenId> tokens, std::span<const double> norm_params);
/// Raw (unrounded) ranks, one per parameter of model.space.
std::vector<double> forward_m(const PredictorModel& model, std::span<const TokenId> tokens, double metric_value);

/// Clamp to [0, n-1], then round half away from zero.
Configuration round_ranks(std::span<const double> raw, const DesignSpace& subset);

/// Trunk outputs per chunk; the constraint never reaches the trunk, so sweeps reuse these.
std::vector<std::vector<double>> pool_chunks(const PredictorModel& model, const std::vector<TokenSequence>& chunks);

/// forward_m for every chunk at one constraint, in chunk order.
std::vector<std::vector<double>> batched_inference(const PredictorModel& model,
                                                   const std::vector<TokenSequence>& chunks, double metric_value);
std::vector<std::vector<double>> batched_inference_pooled(const PredictorModel& model,
                                                          const std::vector<std::vector<double>>& pooled,
                                                          double metric_value);

/// Instruction-weighted mean of per-chunk values.
double workload_metric(std::span<const double> chunk_values, std::span<const std::size_t> instructions);

// ---------------------------------------------------------------------------
// Training

struct Sample {
  std::size_t chunk = 0;          // index into TrainSet::chunks
  std::vector<double> input;      // constraint vector in model units
  std::vector<double> target;     // in model units
};

struct TrainSet {
  std::vector<TokenSequence> chunks;
  std::vector<Sample> samples;
};

struct TrainSpec {
  std::size_t epochs = 10;
  std::size_t batch = 32;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  double split = 0.8;      // train share when train() splits a dataset
  bool keep_best = true;   // restore the best-validation parameters at the end
};

struct TrainHistory {
  std::vector<double> train_loss;  // mean per-sample MSE, one entry per epoch
  std::vector<double> val_loss;
  std::size_t best_epoch = 0;
};

/// Gradient of the batch's mean MSE, accumulated in a thread-count independent order.
/// Returns the summed per-sample loss.
double batch_gradient(const Model& net, const TrainSet& set, std::span<const std::size_t> batch,
                      std::vector<Tensor>& grads);

/// Minibatch Adam on MSE. Deterministic in spec.seed.
TrainHistory fit(Model& net, const TrainSet& train, const TrainSet* validation, const TrainSpec& spec);
/// Mean per-sample MSE.
double evaluate(const Model& net, const TrainSet& set);
std::vector<std::vector<double>> predict_samples(const Model& net, const TrainSet& set);

/// Rows -> samples for the model's mode. Fits the metric standardisation first when `fit_scaling`.
TrainSet make_train_set(PredictorModel& model, const Dataset& data, const Corpus& corpus, bool fit_scaling);
TrainSet make_train_set(const PredictorModel& model, const Dataset& data, const Corpus& corpus);

/// Chunk-stratified split by spec.split, scaling fit on the training half, then fit().
TrainHistory train(PredictorModel& model, const Dataset& data, const Corpus& corpus, const TrainSpec& spec);

}  // namespace onedse
