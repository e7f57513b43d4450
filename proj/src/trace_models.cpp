#include "onedse/trace_models.hpp"

#include <cmath>
#include <map>
#include <numeric>

#include "onedse/error.hpp"
#include "onedse/parallel.hpp"
#include "onedse/text.hpp"

namespace onedse {

std::string_view to_string(Mode m) { return m == Mode::P ? "P" : "M"; }

PredictorModel PredictorModel::create(Mode mode, Metric metric, const DesignSpace& space, const TokenDict& dict,
                                      ModelConfig shape, std::uint64_t seed) {
  if (space.size() == 0) throw ArgumentError("model needs at least one parameter");
  PredictorModel m;
  m.mode = mode;
  m.metric = metric;
  m.space = space;
  m.dict = dict;
  shape.vocab = dict.size() + 1;
  shape.extra = mode == Mode::P ? space.size() : 1;
  shape.out = mode == Mode::P ? 1 : space.size();
  m.net = Model::create(shape, seed);
  return m;
}

void PredictorModel::save(const std::string& path) const {
  Model copy = net;
  copy.metadata["mode"] = std::string(to_string(mode));
  copy.metadata["metric"] = std::string(to_string(metric));
  copy.metadata["space"] = space.serialize();
  copy.metadata["dictionary"] = dict.serialize();
  copy.metadata["metric_mean"] = text::format_double(metric_mean);
  copy.metadata["metric_scale"] = text::format_double(metric_scale);
  copy.save(path);
}

PredictorModel PredictorModel::load(const std::string& path) {
  PredictorModel m;
  m.net = Model::load(path);
  auto get = [&](const char* key) -> const std::string& {
    auto it = m.net.metadata.find(key);
    if (it == m.net.metadata.end()) throw ValidationError(path + ": checkpoint lacks '" + key + "' metadata");
    return it->second;
  };
  const std::string& mode = get("mode");
  if (mode != "P" && mode != "M") throw ValidationError(path + ": bad mode '" + mode + "'");
  m.mode = mode == "P" ? Mode::P : Mode::M;
  m.metric = parse_metric(get("metric"));
  m.space = DesignSpace::parse(get("space"));
  m.dict = TokenDict::parse(get("dictionary"));
  if (!text::parse_double(get("metric_mean"), m.metric_mean) || !text::parse_double(get("metric_scale"), m.metric_scale))
    throw ValidationError(path + ": bad metric scaling metadata");
  const auto& c = m.net.config();
  const std::size_t want_extra = m.mode == Mode::P ? m.space.size() : 1;
  const std::size_t want_out = m.mode == Mode::P ? 1 : m.space.size();
  if (c.extra != want_extra || c.out != want_out || (c.trunk && c.vocab != m.dict.size() + 1))
    throw ValidationError(path + ": checkpoint shapes disagree with its metadata");
  return m;
}

double forward_p(const PredictorModel& model, std::span<const TokenId> tokens, std::span<const double> norm_params) {
  if (model.mode != Mode::P) throw ArgumentError("forward_p needs a P-mode model");
  if (norm_params.size() != model.space.size())
    throw ArgumentError("expected " + std::to_string(model.space.size()) + " normalized parameters");
  return model.from_model_units(model_forward(model.net, tokens, norm_params)[0]);
}

namespace {

std::vector<double> unscale_ranks(const PredictorModel& model, const std::vector<double>& out) {
  std::vector<double> raw(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) raw[i] = out[i] * static_cast<double>(model.space[i].size() - 1);
  return raw;
}

}  // namespace

std::vector<double> forward_m(const PredictorModel& model, std::span<const TokenId> tokens, double metric_value) {
  if (model.mode != Mode::M) throw ArgumentError("forward_m needs an M-mode model");
  const double in = model.to_model_units(metric_value);
  return unscale_ranks(model, model_forward(model.net, tokens, std::span<const double>(&in, 1)));
}

Configuration round_ranks(std::span<const double> raw, const DesignSpace& subset) {
  if (raw.size() != subset.size()) throw ArgumentError("round_ranks: length mismatch");
  Configuration c;
  c.ranks.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double hi = static_cast<double>(subset[i].size() - 1);
    const double v = std::isnan(raw[i]) ? 0.0 : std::clamp(raw[i], 0.0, hi);
    c.ranks[i] = static_cast<int>(std::round(v));
  }
  return c;
}

std::vector<std::vector<double>> pool_chunks(const PredictorModel& model, const std::vector<TokenSequence>& chunks) {
  std::vector<std::vector<double>> pooled(chunks.size());
  if (!model.net.config().trunk) return pooled;
  parallel_for(chunks.size(), [&](std::size_t i) { pooled[i] = trunk_forward(model.net, chunks[i], nullptr); });
  return pooled;
}

std::vector<std::vector<double>> batched_inference_pooled(const PredictorModel& model,
                                                          const std::vector<std::vector<double>>& pooled,
                                                          double metric_value) {
  if (model.mode != Mode::M) throw ArgumentError("batched inference needs an M-mode model");
  const double in = model.to_model_units(metric_value);
  std::vector<std::vector<double>> out(pooled.size());
  for (std::size_t i = 0; i < pooled.size(); ++i)
    out[i] = unscale_ranks(model, head_forward(model.net, pooled[i], std::span<const double>(&in, 1), nullptr));
  return out;
}

std::vector<std::vector<double>> batched_inference(const PredictorModel& model,
                                                   const std::vector<TokenSequence>& chunks, double metric_value) {
  return batched_inference_pooled(model, pool_chunks(model, chunks), metric_value);
}

double workload_metric(std::span<const double> values, std::span<const std::size_t> instructions) {
  if (values.size() != instructions.size()) throw ArgumentError("workload_metric: length mismatch");
  double num = 0, den = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    num += values[i] * static_cast<double>(instructions[i]);
    den += static_cast<double>(instructions[i]);
  }
  if (den == 0) throw ArgumentError("workload_metric: no instructions");
  return num / den;
}

// ---------------------------------------------------------------------------
// Training

namespace {

/// Batch positions grouped by chunk, groups in order of first appearance.
std::vector<std::vector<std::size_t>> group_by_chunk(const TrainSet& set, std::span<const std::size_t> batch) {
  std::vector<std::vector<std::size_t>> groups;
  std::map<std::size_t, std::size_t> where;
  for (std::size_t idx : batch) {
    const std::size_t chunk = set.samples[idx].chunk;
    auto [it, fresh] = where.emplace(chunk, groups.size());
    if (fresh) groups.emplace_back();
    groups[it->second].push_back(idx);
  }
  return groups;
}

}  // namespace

double batch_gradient(const Model& net, const TrainSet& set, std::span<const std::size_t> batch,
                      std::vector<Tensor>& grads) {
  const auto groups = group_by_chunk(set, batch);
  std::vector<std::vector<Tensor>> partial(groups.size());
  std::vector<double> losses(groups.size(), 0.0);
  const bool trunk = net.config().trunk;
  parallel_for(groups.size(), [&](std::size_t g) {
    auto local = net.zeros_like();
    TrunkCache tc;
    std::vector<double> pooled;
    if (trunk) pooled = trunk_forward(net, set.chunks[set.samples[groups[g].front()].chunk], &tc);
    std::vector<double> dpooled(trunk ? net.config().d : 0, 0.0);
    for (std::size_t idx : groups[g]) {
      const Sample& s = set.samples[idx];
      HeadCache hc;
      const auto out = head_forward(net, pooled, s.input, &hc);
      losses[g] += mse_loss(out, s.target);
      head_backward(net, hc, mse_grad(out, s.target), local, trunk ? &dpooled : nullptr);
    }
    if (trunk) trunk_backward(net, tc, dpooled, local);
    partial[g] = std::move(local);
  });
  double loss = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    loss += losses[g];
    for (std::size_t i = 0; i < grads.size(); ++i)
      for (std::size_t k = 0; k < grads[i].size(); ++k) grads[i].data[k] += partial[g][i].data[k];
  }
  return loss;
}

std::vector<std::vector<double>> predict_samples(const Model& net, const TrainSet& set) {
  std::vector<std::vector<double>> pooled(set.chunks.size());
  std::vector<std::uint8_t> used(set.chunks.size(), 0);
  for (const auto& s : set.samples) used[s.chunk] = 1;
  if (net.config().trunk)
    parallel_for(set.chunks.size(), [&](std::size_t i) {
      if (used[i]) pooled[i] = trunk_forward(net, set.chunks[i], nullptr);
    });
  std::vector<std::vector<double>> out(set.samples.size());
  parallel_for(set.samples.size(), [&](std::size_t i) {
    const Sample& s = set.samples[i];
    out[i] = head_forward(net, pooled[s.chunk], s.input, nullptr);
  });
  return out;
}

double evaluate(const Model& net, const TrainSet& set) {
  if (set.samples.empty()) throw ArgumentError("evaluate: empty set");
  const auto pred = predict_samples(net, set);
  double sum = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) sum += mse_loss(pred[i], set.samples[i].target);
  return sum / static_cast<double>(pred.size());
}

TrainHistory fit(Model& net, const TrainSet& train, const TrainSet* validation, const TrainSpec& spec) {
  if (train.samples.empty()) throw ArgumentError("cannot train on an empty dataset");
  if (spec.batch == 0) throw ArgumentError("batch size must be >= 1");
  if (validation && validation->samples.empty()) validation = nullptr;
  AdamState adam = make_adam(net.params(), spec.lr);
  TrainHistory h;
  std::vector<std::size_t> order(train.samples.size());
  std::iota(order.begin(), order.end(), 0);
  double best = INFINITY;
  std::vector<Tensor> best_params = net.params();
  for (std::size_t epoch = 0; epoch < spec.epochs; ++epoch) {
    Rng rng(derive_seed(spec.seed, epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double sum = 0;
    for (std::size_t b = 0; b < order.size(); b += spec.batch) {
      const std::size_t e = std::min(order.size(), b + spec.batch);
      const std::span<const std::size_t> batch(order.data() + b, e - b);
      auto grads = net.zeros_like();
      sum += batch_gradient(net, train, batch, grads);
      const double inv = 1.0 / static_cast<double>(batch.size());
      for (auto& g : grads)
        for (auto& v : g.data) v *= inv;
      adam_step(net.params(), grads, adam);
    }
    h.train_loss.push_back(sum / static_cast<double>(order.size()));
    const double val = validation ? evaluate(net, *validation) : evaluate(net, train);
    h.val_loss.push_back(val);
    if (val < best) {
      best = val;
      h.best_epoch = epoch;
      if (spec.keep_best) best_params = net.params();
    }
  }
  if (spec.keep_best && spec.epochs > 0) net.params() = std::move(best_params);
  return h;
}

TrainSet make_train_set(const PredictorModel& model, const Dataset& data, const Corpus& corpus) {
  if (data.rows.empty()) throw ArgumentError("dataset has no rows");
  const DesignSpace data_space = data.space();
  const auto idx = subset_indices(data_space, model.space);
  TrainSet set;
  std::map<std::int64_t, std::size_t> local;
  const bool trunk = model.net.config().trunk;
  for (const auto& row : data.rows) {
    auto [it, fresh] = local.emplace(row.chunk_id, set.chunks.size());
    if (fresh) {
      const Chunk& ch = corpus.chunks[corpus.index_of(row.chunk_id)];
      set.chunks.push_back(trunk ? tokenize_chunk(ch, model.dict, model.s(), UnknownPolicy::Lenient)
                                 : TokenSequence{});
    }
    Configuration part;
    for (auto i : idx) part.ranks.push_back(row.config.ranks[i]);
    Sample s;
    s.chunk = it->second;
    const double metric = model.to_model_units(row.metrics.get(model.metric));
    if (model.mode == Mode::P) {
      s.input = normalize(part, model.space);
      s.target = {metric};
    } else {
      s.input = {metric};
      s.target = normalize(part, model.space);
    }
    set.samples.push_back(std::move(s));
  }
  return set;
}

TrainSet make_train_set(PredictorModel& model, const Dataset& data, const Corpus& corpus, bool fit_scaling) {
  if (fit_scaling && !data.rows.empty()) {
    double mean = 0;
    for (const auto& r : data.rows) mean += r.metrics.get(model.metric);
    mean /= static_cast<double>(data.rows.size());
    double var = 0;
    for (const auto& r : data.rows) {
      const double d = r.metrics.get(model.metric) - mean;
      var += d * d;
    }
    const double sd = std::sqrt(var / static_cast<double>(data.rows.size()));
    model.metric_mean = mean;
    model.metric_scale = sd > 0 ? sd : 1.0;
  }
  return make_train_set(static_cast<const PredictorModel&>(model), data, corpus);
}

TrainHistory train(PredictorModel& model, const Dataset& data, const Corpus& corpus, const TrainSpec& spec) {
  if (data.rows.empty()) throw ArgumentError("dataset has no rows");
  if (data.header.dict_fingerprint != model.dict.fingerprint())
    throw ValidationError("dataset and model use different token dictionaries");
  if (data.chunk_ids().size() < 2) {
    const TrainSet all = make_train_set(model, data, corpus, true);
    return fit(model.net, all, nullptr, spec);
  }
  auto [tr, va] = split(data, spec.split, spec.seed);
  const TrainSet train_set = make_train_set(model, tr, corpus, true);
  const TrainSet val_set = make_train_set(model, va, corpus);
  return fit(model.net, train_set, &val_set, spec);
}

}  // namespace onedse
