#include "onedse/smart.hpp"

#include <cmath>
#include <filesystem>
#include <json.hpp>
#include <map>
#include <numeric>

#include "onedse/error.hpp"
#include "onedse/parallel.hpp"
#include "onedse/text.hpp"

namespace onedse {

namespace fs = std::filesystem;
using nlohmann::json;

AgentEnsemble AgentEnsemble::create(const DesignSpace& space, const TokenDict& dict, Metric metric,
                                    const ModelConfig& shape, std::uint64_t seed, double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ArgumentError("lambda must be finite and non-negative");
  AgentEnsemble e;
  e.space = space;
  e.lambda = lambda;
  for (std::size_t a = 0; a < 4; ++a)
    e.agents[a] = PredictorModel::create(Mode::M, metric, subsystem_subset(space, kSubsystems[a]), dict, shape,
                                         derive_seed(seed, a));
  e.check_partition();
  return e;
}

void AgentEnsemble::check_partition() const {
  std::vector<int> owner(space.size(), -1);
  for (std::size_t a = 0; a < 4; ++a) {
    if (agents[a].mode != Mode::M) throw ValidationError("ensemble agents must be M-mode models");
    for (auto i : subset_indices(space, agents[a].space)) {
      if (owner[i] >= 0)
        throw ValidationError("parameter '" + space[i].name + "' is owned by two agents");
      owner[i] = static_cast<int>(a);
    }
  }
  for (std::size_t i = 0; i < space.size(); ++i)
    if (owner[i] < 0) throw ValidationError("parameter '" + space[i].name + "' is not owned by any agent");
}

void AgentEnsemble::save(const std::string& dir) const {
  fs::create_directories(dir);
  json m;
  m["format"] = "onedse-ensemble";
  m["version"] = 1;
  m["lambda"] = lambda;
  m["baseline"] = baseline;
  m["baseline_count"] = baseline_count;
  m["space_fingerprint"] = text::hex64(space.fingerprint());
  m["space"] = space.serialize();
  for (std::size_t a = 0; a < 4; ++a) {
    const std::string name = std::string(to_string(kSubsystems[a]));
    agents[a].save((fs::path(dir) / (name + ".ckpt")).string());
    m["agents"][name] = name + ".ckpt";
  }
  text::write_file((fs::path(dir) / "ensemble.json").string(), m.dump(2) + "\n");
}

AgentEnsemble AgentEnsemble::load(const std::string& dir) {
  AgentEnsemble e;
  json m;
  try {
    m = json::parse(text::read_file((fs::path(dir) / "ensemble.json").string()));
    if (m.at("format") != "onedse-ensemble" || m.at("version") != 1)
      throw ValidationError(dir + ": not a version 1 ensemble manifest");
    e.lambda = m.at("lambda").get<double>();
    e.baseline = m.at("baseline").get<double>();
    e.baseline_count = m.at("baseline_count").get<std::uint64_t>();
    e.space = DesignSpace::parse(m.at("space").get<std::string>());
    for (std::size_t a = 0; a < 4; ++a) {
      const std::string name = std::string(to_string(kSubsystems[a]));
      e.agents[a] = PredictorModel::load((fs::path(dir) / m.at("agents").at(name).get<std::string>()).string());
    }
  } catch (const json::exception& ex) {
    throw ValidationError(dir + ": bad ensemble manifest: " + ex.what());
  }
  e.check_partition();
  return e;
}

Configuration joint_predict(const AgentEnsemble& e, const std::vector<TokenSequence>& chunks, double constraint) {
  e.check_partition();
  if (chunks.empty()) throw ArgumentError("joint_predict needs at least one chunk");
  Configuration full;
  full.ranks.assign(e.space.size(), 0);
  for (const auto& agent : e.agents) {
    const auto raw = batched_inference(agent, chunks, constraint);
    std::vector<double> mean(agent.space.size(), 0.0);
    for (const auto& v : raw)
      for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += v[i] / static_cast<double>(raw.size());
    full = embed(full, e.space, agent.space, round_ranks(mean, agent.space));
  }
  return full;
}

std::array<TrainHistory, 4> train_agents(AgentEnsemble& e, const Dataset& data, const Corpus& corpus,
                                         const TrainSpec& spec) {
  std::array<TrainHistory, 4> out;
  for (std::size_t a = 0; a < 4; ++a) out[a] = train(e.agents[a], data, corpus, spec);
  return out;
}

namespace {

struct Group {
  std::size_t chunk = 0;                 // TrainSet chunk index
  std::vector<std::size_t> positions;    // positions within the batch
};

std::vector<Group> groups_of(const TrainSet& set, std::span<const std::size_t> batch) {
  std::vector<Group> groups;
  std::map<std::size_t, std::size_t> where;
  for (std::size_t p = 0; p < batch.size(); ++p) {
    const std::size_t chunk = set.samples[batch[p]].chunk;
    auto [it, fresh] = where.emplace(chunk, groups.size());
    if (fresh) groups.push_back({chunk, {}});
    groups[it->second].positions.push_back(p);
  }
  return groups;
}

}  // namespace

FinetuneHistory smart_finetune(AgentEnsemble& e, const Dataset& data, const Corpus& corpus, const FinetuneSpec& spec) {
  e.check_partition();
  if (data.rows.empty()) throw ArgumentError("cannot fine-tune on an empty dataset");
  if (spec.batch == 0) throw ArgumentError("batch size must be >= 1");
  if (!(spec.sigma > 0.0)) throw ArgumentError("sigma must be positive");
  if (!(e.lambda >= 0.0) || !std::isfinite(e.lambda)) throw ArgumentError("lambda must be finite and non-negative");
  const DesignSpace data_space = data.space();
  if (data_space.fingerprint() != e.space.fingerprint())
    throw ValidationError("dataset and ensemble use different design spaces");

  std::array<TrainSet, 4> sets;
  std::array<AdamState, 4> adam;
  for (std::size_t a = 0; a < 4; ++a) {
    sets[a] = make_train_set(e.agents[a], data, corpus);
    adam[a] = make_adam(e.agents[a].net.params(), spec.lr);
  }
  // Row r's chunk, for Perf.
  std::vector<const Chunk*> row_chunk(data.rows.size());
  for (std::size_t r = 0; r < data.rows.size(); ++r) row_chunk[r] = &corpus.chunks[corpus.index_of(data.rows[r].chunk_id)];

  FinetuneHistory h;
  // Perf differs far more between chunks than between nearby configurations, so the
  // running mean is kept per chunk; the ensemble-wide mean is tracked for reporting.
  std::vector<double> chunk_base(sets[0].chunks.size(), 0.0);
  std::vector<std::uint64_t> chunk_seen(sets[0].chunks.size(), 0);
  std::vector<std::size_t> order(data.rows.size());
  std::iota(order.begin(), order.end(), 0);
  const bool rl = e.lambda > 0.0;
  for (std::size_t epoch = 0; epoch < spec.epochs; ++epoch) {
    Rng shuffle(derive_seed(spec.seed, epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);
    for (std::size_t b = 0, batch_no = 0; b < order.size(); b += spec.batch, ++batch_no) {
      const std::size_t end = std::min(order.size(), b + spec.batch);
      const std::span<const std::size_t> batch(order.data() + b, end - b);
      const double inv = 1.0 / static_cast<double>(batch.size());

      std::array<std::vector<Tensor>, 4> grads;
      double loss = 0;
      for (std::size_t a = 0; a < 4; ++a) {
        grads[a] = e.agents[a].net.zeros_like();
        loss += batch_gradient(e.agents[a].net, sets[a], batch, grads[a]);
      }

      double mean_perf = 0;
      if (rl) {
        const auto groups = groups_of(sets[0], batch);
        // Exploration noise, drawn up front so results do not depend on scheduling.
        Rng noise(derive_seed(derive_seed(spec.seed, 0x736d617274), epoch * 1000003 + batch_no));
        std::vector<std::array<std::vector<double>, 4>> eps(batch.size());
        for (auto& per : eps)
          for (std::size_t a = 0; a < 4; ++a) {
            per[a].resize(e.agents[a].space.size());
            for (auto& v : per[a]) v = spec.sigma * noise.normal();
          }

        // Raw means, sampled joint configurations and their Perf.
        std::vector<std::array<std::vector<double>, 4>> mu(batch.size());
        std::vector<double> perf(batch.size(), 0.0);
        std::vector<std::uint8_t> failed(batch.size(), 0);
        parallel_for(groups.size(), [&](std::size_t g) {
          std::array<std::vector<double>, 4> pooled;
          for (std::size_t a = 0; a < 4; ++a)
            pooled[a] = trunk_forward(e.agents[a].net, sets[a].chunks[groups[g].chunk], nullptr);
          for (std::size_t p : groups[g].positions) {
            Configuration joint;
            joint.ranks.assign(e.space.size(), 0);
            for (std::size_t a = 0; a < 4; ++a) {
              const auto& agent = e.agents[a];
              const auto out = head_forward(agent.net, pooled[a], sets[a].samples[batch[p]].input, nullptr);
              mu[p][a].resize(out.size());
              std::vector<double> x(out.size());
              for (std::size_t k = 0; k < out.size(); ++k) {
                mu[p][a][k] = out[k] * static_cast<double>(agent.space[k].size() - 1);
                x[k] = mu[p][a][k] + eps[p][a][k];
              }
              joint = embed(joint, e.space, agent.space, round_ranks(x, agent.space));
            }
            try {
              const auto stats = simulate(*row_chunk[batch[p]], joint, e.space, 0, spec.latency);
              perf[p] = objective(stats, joint, e.space, spec.weights.area);
            } catch (const Error&) {
              failed[p] = 1;
            }
          }
        });
        if (std::any_of(failed.begin(), failed.end(), [](std::uint8_t f) { return f != 0; })) {
          ++h.skipped;
          continue;
        }
        for (double v : perf) mean_perf += v * inv;

        // d(-lambda * Perf)/d(output) via the score function of N(mu, sigma^2).
        std::vector<std::array<std::vector<Tensor>, 4>> partial(groups.size());
        parallel_for(groups.size(), [&](std::size_t g) {
          for (std::size_t a = 0; a < 4; ++a) {
            const auto& agent = e.agents[a];
            auto local = agent.net.zeros_like();
            TrunkCache tc;
            const auto pooled = trunk_forward(agent.net, sets[a].chunks[groups[g].chunk], &tc);
            std::vector<double> dpooled(pooled.size(), 0.0);
            for (std::size_t p : groups[g].positions) {
              HeadCache hc;
              head_forward(agent.net, pooled, sets[a].samples[batch[p]].input, &hc);
              const std::size_t c = groups[g].chunk;
              const double adv = chunk_seen[c] ? perf[p] - chunk_base[c] : 0.0;
              std::vector<double> dout(agent.space.size());
              for (std::size_t k = 0; k < dout.size(); ++k)
                dout[k] = -e.lambda * adv * eps[p][a][k] / (spec.sigma * spec.sigma) *
                          static_cast<double>(agent.space[k].size() - 1);
              head_backward(agent.net, hc, dout, local, &dpooled);
            }
            trunk_backward(agent.net, tc, dpooled, local);
            partial[g][a] = std::move(local);
          }
        });
        // The 1/batch scale below covers both terms.
        for (std::size_t g = 0; g < groups.size(); ++g)
          for (std::size_t a = 0; a < 4; ++a)
            for (std::size_t t = 0; t < grads[a].size(); ++t)
              for (std::size_t k = 0; k < grads[a][t].size(); ++k) grads[a][t].data[k] += partial[g][a][t].data[k];
        for (std::size_t p = 0; p < batch.size(); ++p) {
          const double v = perf[p];
          ++e.baseline_count;
          e.baseline += (v - e.baseline) / static_cast<double>(e.baseline_count);
          const std::size_t c = sets[0].samples[batch[p]].chunk;
          ++chunk_seen[c];
          chunk_base[c] += (v - chunk_base[c]) / static_cast<double>(chunk_seen[c]);
        }
      }

      for (std::size_t a = 0; a < 4; ++a) {
        for (auto& g : grads[a])
          for (auto& v : g.data) v *= inv;
        adam_step(e.agents[a].net.params(), grads[a], adam[a]);
      }
      h.loss.push_back(loss * inv);
      h.reward.push_back(mean_perf);
    }
  }
  return h;
}

double ensemble_rank_mse(const AgentEnsemble& e, const Dataset& data, const Corpus& corpus) {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& agent : e.agents) {
    const TrainSet set = make_train_set(agent, data, corpus);
    const auto pred = predict_samples(agent.net, set);
    for (std::size_t i = 0; i < pred.size(); ++i)
      for (std::size_t k = 0; k < pred[i].size(); ++k) {
        const double d = pred[i][k] - set.samples[i].target[k];
        sum += d * d;
        ++n;
      }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

}  // namespace onedse
