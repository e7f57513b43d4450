#include "onedse/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <map>
#include <sstream>

#include "onedse/datagen.hpp"
#include "onedse/error.hpp"
#include "onedse/mast.hpp"
#include "onedse/metaheuristics.hpp"
#include "onedse/parallel.hpp"
#include "onedse/smart.hpp"
#include "onedse/text.hpp"
#include "onedse/trace_models.hpp"

namespace onedse::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "onedse 1.0";

/// Every option any subcommand may take; each subcommand registers the ones it reads.
struct Options {
  std::string space, weights, dataset, checkpoint, out, config, base, results;
  std::vector<std::string> traces, profiles, params;
  std::string metric = "objective";
  std::string subsystem;
  std::uint64_t seed = 1;

  std::size_t s = 256;
  std::size_t warmup = kDefaultWarmup;
  std::size_t chunks = 16;
  std::size_t configs = 16;
  std::size_t workloads = 4;
  std::size_t records = kDefaultWarmup + 256 * 16;
  std::size_t eval_chunks = 8;

  // training
  std::size_t epochs = 10, batch = 32;
  double lr = 1e-3, split = 0.8;
  std::size_t d = 32, heads = 4, layers = 2, head_layers = 3, window = 64;
  bool no_trunk = false;

  // predict / mast
  double constraint = std::nan("");
  double c_i = std::nan(""), c_s = std::nan("");
  double steps = 500;
  std::size_t patience = 10, max_iter = 500;
  double delta = 0.01;
  bool no_annotate = false;

  // search
  std::size_t population = 24, iterations = 50, tournament = 3, stagnation = 6;
  double crossover = 0.9, mutation = 0.3, anneal = 0.93;
  bool vanilla = false, paired = false;
  std::size_t cap = kExhaustiveCap;

  // smart
  double lambda = 0.1, sigma = 0.25;
};

/// Run manifest: what ran, with which seeds, on which inputs.
class Manifest {
 public:
  Manifest(std::string command, const std::vector<std::string>& args, std::uint64_t seed)
      : command_(std::move(command)) {
    doc_["tool"] = kVersion;
    doc_["command"] = command_;
    doc_["argv"] = args;
    doc_["seed"] = seed;
    doc_["threads"] = thread_count();
    doc_["inputs"] = ordered_json::object();
    doc_["params"] = ordered_json::object();
    doc_["outputs"] = ordered_json::array();
  }

  void input(const std::string& path) { doc_["inputs"][path] = text::hex64(fingerprint_path(path)); }
  void output(const std::string& name) { doc_["outputs"].push_back(name); }
  template <class T>
  void param(const std::string& key, const T& v) {
    doc_["params"][key] = v;
  }
  void write(const std::string& dir) const {
    text::write_file((fs::path(dir) / "manifest.json").string(), doc_.dump(2) + "\n");
  }

 private:
  static std::uint64_t fingerprint_path(const std::string& path) {
    if (!fs::is_directory(path)) return text::fnv1a(text::read_file(path));
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(path))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::uint64_t h = text::fnv1a("");
    for (const auto& f : files) {
      h = text::fnv1a(fs::relative(f, path).generic_string(), h);
      h = text::fnv1a(text::read_file(f.string()), h);
    }
    return h;
  }

  std::string command_;
  ordered_json doc_;
};

struct Context {
  Options o;
  std::vector<std::string> args;
  std::ostream* out;
  std::ostream* err;
};

void require_input(const std::string& path, const char* flag) {
  if (path.empty()) throw ArgumentError(std::string(flag) + " is required");
  if (!fs::exists(path)) throw ValidationError(std::string(flag) + ": no such file or directory: " + path);
}

void require_inputs(const std::vector<std::string>& paths, const char* flag) {
  if (paths.empty()) throw ArgumentError(std::string(flag) + " is required");
  for (const auto& p : paths) require_input(p, flag);
}

std::string prepare_out(const std::string& dir) {
  if (dir.empty()) throw ArgumentError("--out is required");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw ValidationError("cannot create output directory " + dir);
  return dir;
}

std::string out_path(const Options& o, const std::string& name) { return (fs::path(o.out) / name).string(); }

DesignSpace load_space(const Options& o) {
  if (o.space.empty()) return DesignSpace::builtin();
  require_input(o.space, "--space");
  return load_design_space(o.space);
}

Weights load_weights_opt(const Options& o, const DesignSpace& space) {
  if (o.weights.empty()) return {};
  require_input(o.weights, "--weights");
  return load_weights(o.weights, &space);
}

/// --param names win over --subsystem; neither (or "all") selects the whole space.
DesignSpace resolve_subset(const Options& o, const DesignSpace& space) {
  if (!o.params.empty()) return select_params(space, o.params);
  if (o.subsystem.empty() || text::lower(o.subsystem) == "all") return space;
  return subsystem_subset(space, o.subsystem);
}

/// `name = value` lines; parameters not mentioned keep the middle value.
Configuration read_config(const std::string& path, const DesignSpace& space) {
  Configuration c = middle_config(space);
  const std::string body = text::read_file(path);
  std::size_t line_no = 0;
  for (auto line : text::split(body, '\n')) {
    ++line_no;
    line = text::trim(text::strip_comment(line));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(line_no, "expected 'name = value'");
    const std::string name(text::trim(line.substr(0, eq)));
    const auto value = text::trim(line.substr(eq + 1));
    const std::size_t i = space.require_index(name);
    const auto r = space[i].rank_of(value);
    if (!r) throw ParseError(line_no, name + ": value '" + std::string(value) + "' is not in the catalog");
    c.ranks[i] = *r;
  }
  return c;
}

std::string format_config(const Configuration& c, const DesignSpace& space) {
  std::ostringstream os;
  const auto values = rank_decode(c, space);
  for (std::size_t i = 0; i < space.size(); ++i) os << space[i].name << " = " << values[i] << '\n';
  return os.str();
}

Configuration base_config(const Options& o, const DesignSpace& space) {
  if (o.base.empty()) return middle_config(space);
  require_input(o.base, "--base");
  return read_config(o.base, space);
}

std::vector<Chunk> pick_chunks(const Corpus& corpus, std::size_t n, std::uint64_t seed) {
  const auto idx = sample_chunks(corpus, n, seed);
  if (idx.empty()) throw ValidationError("traces too short: no chunk has a full warm-up context");
  std::vector<Chunk> out;
  for (auto i : idx) out.push_back(corpus.chunks[i]);
  return out;
}

std::vector<TokenSequence> tokenize_all(const std::vector<Chunk>& chunks, const PredictorModel& model) {
  std::vector<TokenSequence> out;
  for (const auto& c : chunks) out.push_back(tokenize_chunk(c, model.dict, model.s(), UnknownPolicy::Lenient));
  return out;
}

ModelConfig model_shape(const Options& o, std::size_t s) {
  ModelConfig m;
  m.s = s;
  m.d = o.d;
  m.heads = o.heads;
  m.en = o.layers;
  m.fn = o.head_layers;
  m.w = o.window;
  m.trunk = !o.no_trunk;
  return m;
}

TrainSpec train_spec(const Options& o) {
  TrainSpec t;
  t.epochs = o.epochs;
  t.batch = o.batch;
  t.lr = o.lr;
  t.seed = o.seed;
  t.split = o.split;
  return t;
}

std::string history_table(const std::vector<std::pair<std::string, TrainHistory>>& runs) {
  std::ostringstream os;
  os << "agent,epoch,train_loss,val_loss\n";
  for (const auto& [name, h] : runs)
    for (std::size_t e = 0; e < h.train_loss.size(); ++e)
      os << name << ',' << e << ',' << text::format_double(h.train_loss[e]) << ','
         << (e < h.val_loss.size() ? text::format_double(h.val_loss[e]) : std::string()) << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_gen_traces(Context& cx) {
  const Options& o = cx.o;
  prepare_out(o.out);
  Manifest man("gen-traces", cx.args, o.seed);
  std::vector<WorkloadProfile> profiles;
  if (!o.profiles.empty()) {
    require_inputs(o.profiles, "--profile");
    for (const auto& p : o.profiles) {
      profiles.push_back(parse_profile(text::read_file(p)));
      man.input(p);
    }
  } else {
    if (o.workloads == 0) throw ArgumentError("--workloads must be positive");
    profiles = profile_family(o.workloads, o.seed);
  }
  if (o.records == 0) throw ArgumentError("--records must be positive");
  for (const auto& p : profiles) validate_profile(p);
  std::vector<std::string> bodies(profiles.size());
  parallel_for(profiles.size(), [&](std::size_t i) {
    bodies[i] = format_trace(generate_synthetic_trace(profiles[i], o.records));
  });
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    std::ostringstream name;
    name << "wl" << std::setw(2) << std::setfill('0') << i;
    text::write_file(out_path(o, name.str() + ".trace"), bodies[i]);
    text::write_file(out_path(o, name.str() + ".profile"), format_profile(profiles[i]));
    man.output(name.str() + ".trace");
    man.output(name.str() + ".profile");
  }
  man.param("records", o.records);
  man.write(o.out);
  *cx.out << "wrote " << profiles.size() << " traces of " << o.records << " records to " << o.out << '\n';
  return 0;
}

int cmd_simulate(Context& cx) {
  const Options& o = cx.o;
  require_inputs(o.traces, "--traces");
  const DesignSpace space = load_space(o);
  const Weights weights = load_weights_opt(o, space);
  Configuration config = middle_config(space);
  if (!o.config.empty()) {
    require_input(o.config, "--config");
    config = read_config(o.config, space);
  }
  const Corpus corpus = load_corpus(o.traces, o.s, o.warmup);
  std::vector<SimStats> stats(corpus.chunks.size());
  parallel_for(corpus.chunks.size(), [&](std::size_t i) { stats[i] = simulate(corpus.chunks[i], config, space, o.seed); });

  std::ostringstream csv;
  csv << "chunk_id,source,instructions,cycles,ipc,power,area,objective\n";
  SimStats total;
  for (std::size_t i = 0; i < stats.size(); ++i) {
    const MetricVector m = compute_metrics(stats[i], config, space, weights);
    csv << corpus.chunks[i].id << ',' << fs::path(corpus.sources[corpus.source_of[i]]).filename().string() << ','
        << stats[i][Counter::Instructions] << ',' << stats[i][Counter::Cycles] << ',' << text::format_double(m.ipc)
        << ',' << text::format_double(m.power) << ',' << text::format_double(m.area) << ','
        << text::format_double(m.ipc_per_area) << '\n';
    total += stats[i];
  }
  const MetricVector m = compute_metrics(total, config, space, weights);
  *cx.out << "chunks = " << stats.size() << "\ninstructions = " << total[Counter::Instructions]
          << "\ncycles = " << total[Counter::Cycles] << "\nipc = " << text::format_double(m.ipc)
          << "\npower = " << text::format_double(m.power) << "\narea = " << text::format_double(m.area)
          << "\nobjective = " << text::format_double(m.ipc_per_area) << '\n';
  if (!o.out.empty()) {
    prepare_out(o.out);
    Manifest man("simulate", cx.args, o.seed);
    for (const auto& t : o.traces) man.input(t);
    if (!o.config.empty()) man.input(o.config);
    text::write_file(out_path(o, "simulate.csv"), csv.str());
    text::write_file(out_path(o, "stats.txt"), total.dump());
    man.output("simulate.csv");
    man.output("stats.txt");
    man.write(o.out);
  }
  return 0;
}

int cmd_build_dataset(Context& cx) {
  const Options& o = cx.o;
  require_inputs(o.traces, "--traces");
  prepare_out(o.out);
  const DesignSpace space = load_space(o);
  const Weights weights = load_weights_opt(o, space);
  const DesignSpace subset = resolve_subset(o, space);
  const Configuration base = base_config(o, space);
  if (o.configs == 0 || o.chunks == 0) throw ArgumentError("--chunks and --configs must be positive");

  // A small varied subset is enumerated outright; otherwise configurations are sampled.
  std::vector<Configuration> configs;
  if (subset.size() == space.size()) {
    configs = sample_configs(space, o.configs, o.seed);
  } else if (subset.cardinality() <= o.configs) {
    for (const auto& part : enumerate_configs(subset, o.configs)) configs.push_back(embed(base, space, subset, part));
  } else {
    for (const auto& part : sample_configs(subset, o.configs, o.seed)) configs.push_back(embed(base, space, subset, part));
  }

  const Corpus corpus = load_corpus(o.traces, o.s, o.warmup);
  BuildOptions bo;
  bo.seed = o.seed;
  bo.chunks = sample_chunks(corpus, o.chunks, o.seed);
  if (bo.chunks.empty()) throw ValidationError("traces too short: no chunk has a full warm-up context");
  const Dataset data = build_dataset(corpus, configs, space, weights, bo);
  save_dataset(data, out_path(o, "dataset.csv"));

  Manifest man("build-dataset", cx.args, o.seed);
  for (const auto& t : o.traces) man.input(t);
  if (!o.weights.empty()) man.input(o.weights);
  if (!o.space.empty()) man.input(o.space);
  man.param("s", o.s);
  man.param("warmup", o.warmup);
  man.param("chunks", bo.chunks.size());
  man.param("configs", configs.size());
  man.param("rows", data.rows.size());
  man.param("failures", data.header.failures);
  man.output("dataset.csv");
  man.output("dataset.csv.manifest.json");
  man.write(o.out);
  *cx.out << "rows = " << data.rows.size() << " (" << bo.chunks.size() << " chunks x " << configs.size()
          << " configs, " << data.header.failures << " failures)\n";
  return data.header.failures == 0 ? 0 : kExitFailure;
}

struct Loaded {
  Dataset data;
  Corpus corpus;
};

Loaded load_training_inputs(const Options& o) {
  require_input(o.dataset, "--dataset");
  require_inputs(o.traces, "--traces");
  Loaded l;
  const Dataset probe = load_dataset(o.dataset);
  l.corpus = load_corpus(o.traces, probe.header.s, probe.header.warmup);
  std::optional<DesignSpace> expect;
  if (!o.space.empty()) expect = load_space(o);
  l.data = load_dataset(o.dataset, expect ? &*expect : nullptr, &l.corpus.dict);
  return l;
}

int cmd_train(Context& cx, Mode mode) {
  const Options& o = cx.o;
  prepare_out(o.out);
  Loaded in = load_training_inputs(o);
  const DesignSpace space = in.data.space();
  const Metric metric = parse_metric(o.metric);
  const ModelConfig shape = model_shape(o, in.data.header.s);
  const TrainSpec spec = train_spec(o);
  const char* name = mode == Mode::P ? "train-p" : "train-m";
  Manifest man(name, cx.args, o.seed);
  man.input(o.dataset);
  for (const auto& t : o.traces) man.input(t);
  man.param("metric", std::string(to_string(metric)));
  man.param("epochs", o.epochs);
  man.param("lr", o.lr);
  man.param("batch", o.batch);
  man.param("split", o.split);

  std::vector<std::pair<std::string, TrainHistory>> runs;
  const bool ensemble = mode == Mode::M && o.params.empty() && text::lower(o.subsystem) == "all";
  if (ensemble) {
    AgentEnsemble e = AgentEnsemble::create(space, in.corpus.dict, metric, shape, o.seed, o.lambda);
    const auto hs = train_agents(e, in.data, in.corpus, spec);
    for (std::size_t a = 0; a < 4; ++a) runs.emplace_back(std::string(to_string(kSubsystems[a])), hs[a]);
    e.save(out_path(o, "ensemble"));
    man.output("ensemble");
  } else {
    const DesignSpace subset = resolve_subset(o, space);
    PredictorModel m = PredictorModel::create(mode, metric, subset, in.corpus.dict, shape, o.seed);
    runs.emplace_back("model", train(m, in.data, in.corpus, spec));
    m.save(out_path(o, "model.ckpt"));
    man.output("model.ckpt");
  }
  text::write_file(out_path(o, "train_history.csv"), history_table(runs));
  man.output("train_history.csv");
  man.write(o.out);
  for (const auto& [agent, h] : runs) {
    *cx.out << agent << ": epochs " << h.train_loss.size() << ", final train loss "
            << text::format_double(h.train_loss.back());
    if (!h.val_loss.empty())
      *cx.out << ", best val loss " << text::format_double(h.val_loss[h.best_epoch]) << " (epoch " << h.best_epoch
              << ")";
    *cx.out << '\n';
  }
  return 0;
}

int cmd_predict(Context& cx) {
  const Options& o = cx.o;
  require_input(o.checkpoint, "--checkpoint");
  require_inputs(o.traces, "--traces");
  const PredictorModel model = PredictorModel::load(o.checkpoint);
  const Corpus corpus = load_corpus(o.traces, model.s(), o.warmup);
  const auto chunks = pick_chunks(corpus, o.chunks, o.seed);
  const auto tokens = tokenize_all(chunks, model);
  std::ostringstream res;
  if (model.mode == Mode::P) {
    Configuration full = middle_config(model.space);
    if (!o.config.empty()) {
      require_input(o.config, "--config");
      full = read_config(o.config, model.space);
    }
    const auto norm = normalize(full, model.space);
    std::vector<double> values(chunks.size());
    std::vector<std::size_t> instr(chunks.size());
    parallel_for(chunks.size(), [&](std::size_t i) { values[i] = forward_p(model, tokens[i], norm); });
    res << "chunk_id," << to_string(model.metric) << '\n';
    for (std::size_t i = 0; i < chunks.size(); ++i) {
      instr[i] = chunks[i].records.size();
      res << chunks[i].id << ',' << text::format_double(values[i]) << '\n';
    }
    *cx.out << to_string(model.metric) << " = " << text::format_double(workload_metric(values, instr)) << '\n';
  } else {
    if (std::isnan(o.constraint)) throw ArgumentError("--constraint is required for an M-mode model");
    const auto raw = batched_inference(model, tokens, o.constraint);
    std::vector<double> mean(model.space.size(), 0.0);
    for (const auto& v : raw)
      for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += v[i] / static_cast<double>(raw.size());
    const Configuration c = round_ranks(mean, model.space);
    res << format_config(c, model.space);
    *cx.out << res.str();
  }
  if (!o.out.empty()) {
    prepare_out(o.out);
    Manifest man("predict", cx.args, o.seed);
    man.input(o.checkpoint);
    for (const auto& t : o.traces) man.input(t);
    const std::string file = model.mode == Mode::P ? "prediction.csv" : "prediction.txt";
    text::write_file(out_path(o, file), res.str());
    man.output(file);
    man.write(o.out);
  }
  return 0;
}

int cmd_mast(Context& cx) {
  const Options& o = cx.o;
  prepare_out(o.out);
  require_input(o.checkpoint, "--checkpoint");
  require_inputs(o.traces, "--traces");
  const PredictorModel model = PredictorModel::load(o.checkpoint);
  if (model.mode != Mode::M) throw ValidationError("mast needs an M-mode checkpoint");
  Manifest man("mast", cx.args, o.seed);
  man.input(o.checkpoint);
  for (const auto& t : o.traces) man.input(t);

  MastSpec spec;
  if (!std::isnan(o.c_i) && !std::isnan(o.c_s)) {
    spec.c_i = o.c_i;
    spec.c_s = o.c_s;
  } else {
    if (o.dataset.empty()) throw ArgumentError("give --c-i and --c-s, or --dataset to derive them");
    require_input(o.dataset, "--dataset");
    man.input(o.dataset);
    const Dataset data = load_dataset(o.dataset);
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& r : data.rows) {
      lo = std::min(lo, r.metrics.get(model.metric));
      hi = std::max(hi, r.metrics.get(model.metric));
    }
    if (data.rows.empty()) throw ValidationError("dataset has no rows");
    if (!(o.steps > 0)) throw ArgumentError("--steps must be positive");
    spec = MastSpec::for_range(lo, hi);
    if (hi > lo) spec.c_s = (hi - lo) / o.steps;
    if (!std::isnan(o.c_i)) spec.c_i = o.c_i;
    if (!std::isnan(o.c_s)) spec.c_s = o.c_s;
  }
  spec.patience = o.patience;
  spec.max_iter = o.max_iter;
  spec.delta = o.delta;
  spec.validate();

  const Corpus corpus = load_corpus(o.traces, model.s(), o.warmup);
  const auto chunks = pick_chunks(corpus, o.chunks, o.seed);
  const auto t0 = std::chrono::steady_clock::now();
  const std::uint64_t sims_before = simulation_count();
  MastResult r = mast_search(model, tokenize_all(chunks, model), spec);
  const std::uint64_t sweep_sims = simulation_count() - sims_before;
  const double sweep_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::size_t oracle_calls = 0;
  if (!o.no_annotate) {
    const DesignSpace space = load_space(o);
    OracleSetup setup;
    setup.chunks = evaluation_chunks(chunks, o.eval_chunks);
    setup.space = space;
    setup.subset = model.space;
    setup.base = base_config(o, space);
    setup.weights = load_weights_opt(o, space);
    setup.seed = o.seed;
    setup.memoize = true;
    if (!o.weights.empty()) man.input(o.weights);
    const Evaluator oracle = objective_evaluator(setup);
    annotate(r, oracle, model.space, spec.delta);
    oracle_calls = oracle.calls();
  }
  text::write_file(out_path(o, "trajectory.csv"), trajectory_csv(r, model.space));
  text::write_file(out_path(o, "mast_summary.txt"), mast_summary(r, model.space));
  man.param("c_i", spec.c_i);
  man.param("c_s", spec.c_s);
  man.param("patience", spec.patience);
  man.param("delta", spec.delta);
  man.param("chunks", chunks.size());
  man.param("sweep_seconds", sweep_seconds);
  man.param("sweep_oracle_calls", sweep_sims);
  man.param("annotation_oracle_calls", oracle_calls);
  man.output("trajectory.csv");
  man.output("mast_summary.txt");
  man.write(o.out);
  *cx.out << mast_summary(r, model.space);
  return 0;
}

struct SearchInputs {
  DesignSpace space, subset;
  Evaluator oracle;
};

SearchInputs search_inputs(const Options& o, Manifest& man) {
  require_inputs(o.traces, "--traces");
  DesignSpace space = load_space(o);
  DesignSpace subset = resolve_subset(o, space);
  OracleSetup setup;
  setup.space = space;
  setup.subset = subset;
  setup.base = base_config(o, space);
  setup.weights = load_weights_opt(o, space);
  setup.seed = o.seed;
  setup.memoize = true;
  const Corpus corpus = load_corpus(o.traces, o.s, o.warmup);
  setup.chunks = pick_chunks(corpus, o.eval_chunks, o.seed);
  for (const auto& t : o.traces) man.input(t);
  if (!o.weights.empty()) man.input(o.weights);
  if (!o.space.empty()) man.input(o.space);
  man.param("eval_chunks", setup.chunks.size());
  man.param("parameters", subset.size());
  return {std::move(space), std::move(subset), objective_evaluator(std::move(setup))};
}

SearchSpec search_spec(const Options& o) {
  SearchSpec s;
  s.population = o.population;
  s.iterations = o.iterations;
  s.tournament = o.tournament;
  s.crossover = o.crossover;
  s.mutation = o.mutation;
  s.anneal = o.anneal;
  s.stagnation_limit = o.stagnation;
  s.seed = o.seed;
  if (o.vanilla) s = s.vanilla();
  s.validate();
  return s;
}

int cmd_search(Context& cx, bool ga) {
  const Options& o = cx.o;
  prepare_out(o.out);
  const char* name = ga ? "search-ga" : "search-abc";
  Manifest man(name, cx.args, o.seed);
  const SearchSpec spec = search_spec(o);
  SearchInputs in = search_inputs(o, man);
  auto run_one = [&](const SearchSpec& s) {
    in.oracle.reset_calls();
    return ga ? ga_search(in.subset, in.oracle, s) : abc_search(in.subset, in.oracle, s);
  };
  const SearchResult r = run_one(spec);
  text::write_file(out_path(o, "history.csv"), history_csv(r));
  text::write_file(out_path(o, "best.txt"), format_config(r.best, in.subset));
  man.output("history.csv");
  man.output("best.txt");
  man.param("algorithm", std::string(ga ? "ga" : "abc"));
  man.param("variant", std::string(o.vanilla ? "vanilla" : "optimized"));
  man.param("population", spec.population);
  man.param("iterations", spec.iterations);
  man.param("best_fitness", r.best_fitness);
  man.param("convergence_iteration", convergence_iteration(r.history));
  *cx.out << "best fitness = " << text::format_double(r.best_fitness) << "\nconvergence iteration = "
          << convergence_iteration(r.history) << "\nevaluator calls = " << r.calls.back() << '\n';
  if (o.paired) {
    if (o.vanilla) throw ArgumentError("--paired already runs the vanilla variant; drop --vanilla");
    const SearchResult v = run_one(spec.vanilla());
    text::write_file(out_path(o, "history_vanilla.csv"), history_csv(v));
    std::ostringstream conv;
    conv << "iteration,optimized,vanilla\n";
    for (std::size_t i = 0; i < r.history.size(); ++i)
      conv << i << ',' << text::format_double(r.history[i]) << ',' << text::format_double(v.history[i]) << '\n';
    text::write_file(out_path(o, "convergence.csv"), conv.str());
    man.output("history_vanilla.csv");
    man.output("convergence.csv");
    man.param("vanilla_best_fitness", v.best_fitness);
    man.param("vanilla_convergence_iteration", convergence_iteration(v.history));
    *cx.out << "vanilla best fitness = " << text::format_double(v.best_fitness)
            << "\nvanilla convergence iteration = " << convergence_iteration(v.history) << '\n';
  }
  man.write(o.out);
  return 0;
}

int cmd_exhaustive(Context& cx) {
  const Options& o = cx.o;
  prepare_out(o.out);
  Manifest man("search-exhaustive", cx.args, o.seed);
  {
    // Fail on the cap before any trace is read.
    const DesignSpace space = load_space(o);
    enumerate_configs(resolve_subset(o, space), o.cap);
  }
  SearchInputs in = search_inputs(o, man);
  const ExhaustiveResult r = exhaustive_search(in.subset, in.oracle, o.cap);
  std::ostringstream csv;
  csv << "index,fitness";
  for (std::size_t i = 0; i < in.subset.size(); ++i) csv << ",\"" << in.subset[i].name << '"';
  csv << '\n';
  for (std::size_t k = 0; k < r.configs.size(); ++k) {
    csv << k << ',' << text::format_double(r.fitness[k]);
    for (const auto& v : rank_decode(r.configs[k], in.subset)) csv << ',' << v;
    csv << '\n';
  }
  text::write_file(out_path(o, "exhaustive.csv"), csv.str());
  text::write_file(out_path(o, "best.txt"), format_config(r.best, in.subset));
  man.output("exhaustive.csv");
  man.output("best.txt");
  man.param("evaluated", r.evaluated);
  man.param("best_fitness", r.best_fitness);
  man.write(o.out);
  *cx.out << "evaluated = " << r.evaluated << "\nbest fitness = " << text::format_double(r.best_fitness) << '\n'
          << format_config(r.best, in.subset);
  return 0;
}

int cmd_smart(Context& cx) {
  const Options& o = cx.o;
  prepare_out(o.out);
  require_input(o.checkpoint, "--checkpoint");
  Loaded in = load_training_inputs(o);
  AgentEnsemble e = AgentEnsemble::load(o.checkpoint);
  e.lambda = o.lambda;
  if (!(e.lambda >= 0.0) || !std::isfinite(e.lambda)) throw ArgumentError("--lambda must be finite and non-negative");
  if (!(e.space == in.data.space())) throw ValidationError("ensemble and dataset use different design spaces");
  auto [train_part, held_out] = split(in.data, o.split, o.seed);

  FinetuneSpec spec;
  spec.epochs = o.epochs;
  spec.batch = o.batch;
  spec.lr = o.lr;
  spec.sigma = o.sigma;
  spec.seed = o.seed;
  spec.weights = load_weights_opt(o, e.space);
  const double before = ensemble_rank_mse(e, held_out, in.corpus);
  const FinetuneHistory h = smart_finetune(e, train_part, in.corpus, spec);
  const double after = ensemble_rank_mse(e, held_out, in.corpus);
  e.save(out_path(o, "ensemble"));

  std::ostringstream csv;
  csv << "batch,loss,reward\n";
  for (std::size_t i = 0; i < h.loss.size(); ++i)
    csv << i << ',' << text::format_double(h.loss[i]) << ','
        << (i < h.reward.size() ? text::format_double(h.reward[i]) : std::string()) << '\n';
  text::write_file(out_path(o, "smart_history.csv"), csv.str());
  std::ostringstream sum;
  sum << "lambda = " << text::format_double(e.lambda) << "\nrank_mse_before = " << text::format_double(before)
      << "\nrank_mse_after = " << text::format_double(after)
      << "\nratio = " << text::format_double(before > 0 ? after / before : 1.0) << "\nskipped_batches = " << h.skipped
      << '\n';
  text::write_file(out_path(o, "smart_summary.txt"), sum.str());

  Manifest man("smart-finetune", cx.args, o.seed);
  man.input(o.checkpoint);
  man.input(o.dataset);
  for (const auto& t : o.traces) man.input(t);
  man.param("lambda", e.lambda);
  man.param("sigma", spec.sigma);
  man.param("epochs", spec.epochs);
  man.param("rank_mse_before", before);
  man.param("rank_mse_after", after);
  man.output("ensemble");
  man.output("smart_history.csv");
  man.output("smart_summary.txt");
  man.write(o.out);
  *cx.out << sum.str();
  return 0;
}

// ---------------------------------------------------------------------------
// report

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::vector<std::vector<std::string>> rows;
  const std::string body = text::read_file(path);
  for (auto line : text::split(body, '\n')) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char c = line[i];
      if (quoted) {
        if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') cur += '"', ++i;
        else if (c == '"') quoted = false;
        else cur += c;
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        fields.push_back(std::move(cur));
        cur.clear();
      } else {
        cur += c;
      }
    }
    fields.push_back(std::move(cur));
    rows.push_back(std::move(fields));
  }
  return rows;
}

std::map<std::string, std::string> read_kv(const std::string& path) {
  std::map<std::string, std::string> kv;
  const std::string body = text::read_file(path);
  for (auto line : text::split(body, '\n')) {
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) continue;
    kv[std::string(text::trim(line.substr(0, eq)))] = std::string(text::trim(line.substr(eq + 1)));
  }
  return kv;
}

int cmd_report(Context& cx) {
  const Options& o = cx.o;
  require_input(o.results, "results directory");
  if (!fs::is_directory(o.results)) throw ValidationError("not a directory: " + o.results);
  const fs::path report_dir = o.out.empty() ? fs::path(o.results) / "report" : fs::path(o.out);

  std::vector<fs::path> runs;
  for (const auto& e : fs::recursive_directory_iterator(o.results)) {
    if (!e.is_regular_file() || e.path().filename() != "manifest.json") continue;
    if (fs::exists(report_dir) && fs::equivalent(e.path().parent_path(), report_dir)) continue;
    runs.push_back(e.path().parent_path());
  }
  std::sort(runs.begin(), runs.end());

  std::vector<std::string> missing;
  std::ostringstream mast_csv, conv_csv, mse_csv, smart_csv, table;
  mast_csv << "run,step,constraint,objective\n";
  conv_csv << "run,algorithm,variant,iteration,best_fitness\n";
  mse_csv << "run,command,agent,epoch,train_loss,val_loss\n";
  smart_csv << "run,lambda,rank_mse_before,rank_mse_after,ratio\n";
  std::size_t reported = 0;
  for (const auto& dir : runs) {
    const std::string run = fs::relative(dir, o.results).generic_string();
    const auto man = nlohmann::json::parse(text::read_file((dir / "manifest.json").string()), nullptr, false);
    if (man.is_discarded() || !man.contains("command")) {
      missing.push_back(run + "/manifest.json (unreadable)");
      continue;
    }
    const std::string cmd = man["command"].get<std::string>();
    bool complete = true;
    for (const auto& out : man.value("outputs", nlohmann::json::array()))
      if (!fs::exists(dir / out.get<std::string>())) {
        missing.push_back(run + "/" + out.get<std::string>());
        complete = false;
      }
    if (!complete) continue;
    const auto params = man.value("params", nlohmann::json::object());
    if (cmd == "mast") {
      const auto rows = read_csv((dir / "trajectory.csv").string());
      for (std::size_t i = 1; i < rows.size(); ++i)
        mast_csv << run << ',' << rows[i][0] << ',' << rows[i][1] << ',' << rows[i][2] << '\n';
      auto kv = read_kv((dir / "mast_summary.txt").string());
      table << run << ": mast converged=" << kv["converged"] << " at step " << kv["convergence_step"]
            << ", critical step " << kv["critical_step"] << '\n';
      ++reported;
    } else if (cmd == "search-ga" || cmd == "search-abc") {
      const std::string algo = cmd == "search-ga" ? "ga" : "abc";
      auto add = [&](const std::string& file, const std::string& variant) {
        const auto rows = read_csv((dir / file).string());
        for (std::size_t i = 1; i < rows.size(); ++i)
          conv_csv << run << ',' << algo << ',' << variant << ',' << rows[i][0] << ',' << rows[i][1] << '\n';
      };
      add("history.csv", params.value("variant", "optimized"));
      if (fs::exists(dir / "history_vanilla.csv")) add("history_vanilla.csv", "vanilla");
      table << run << ": " << algo << " best " << params.value("best_fitness", 0.0) << ", converges at iteration "
            << params.value("convergence_iteration", 0);
      if (params.contains("vanilla_convergence_iteration"))
        table << " (vanilla " << params["vanilla_convergence_iteration"].get<std::size_t>() << ")";
      table << '\n';
      ++reported;
    } else if (cmd == "train-p" || cmd == "train-m") {
      const auto rows = read_csv((dir / "train_history.csv").string());
      for (std::size_t i = 1; i < rows.size(); ++i)
        mse_csv << run << ',' << cmd << ',' << rows[i][0] << ',' << rows[i][1] << ',' << rows[i][2] << ','
                << rows[i][3] << '\n';
      table << run << ": " << cmd << ' ' << (rows.size() > 1 ? rows.size() - 1 : 0) << " epoch records\n";
      ++reported;
    } else if (cmd == "smart-finetune") {
      auto kv = read_kv((dir / "smart_summary.txt").string());
      smart_csv << run << ',' << kv["lambda"] << ',' << kv["rank_mse_before"] << ',' << kv["rank_mse_after"] << ','
                << kv["ratio"] << '\n';
      table << run << ": smart rank-MSE ratio " << kv["ratio"] << '\n';
      ++reported;
    } else if (cmd == "search-exhaustive") {
      table << run << ": exhaustive best " << params.value("best_fitness", 0.0) << " over "
            << params.value("evaluated", 0) << " configurations\n";
      ++reported;
    }
  }
  if (!missing.empty()) {
    *cx.err << "missing artifacts:\n";
    for (const auto& m : missing) *cx.err << "  " << m << '\n';
    return kExitFailure;
  }
  if (reported == 0) {
    *cx.err << "nothing to report in " << o.results << '\n';
    return kExitFailure;
  }
  fs::create_directories(report_dir);
  Manifest man("report", cx.args, o.seed);
  auto emit = [&](const std::string& name, const std::string& body) {
    if (std::count(body.begin(), body.end(), '\n') <= 1) return;
    text::write_file((report_dir / name).string(), body);
    man.output(name);
  };
  emit("mast_trajectories.csv", mast_csv.str());
  emit("convergence.csv", conv_csv.str());
  emit("training_mse.csv", mse_csv.str());
  emit("smart.csv", smart_csv.str());
  text::write_file((report_dir / "summary.txt").string(), table.str());
  man.output("summary.txt");
  man.param("runs", reported);
  man.write(report_dir.string());
  *cx.out << table.str();
  return 0;
}

int cmd_dump_space(Context& cx) {
  const Options& o = cx.o;
  const DesignSpace space = load_space(o);
  std::ostringstream os;
  os << std::left << std::setw(4) << "#" << std::setw(42) << "parameter" << std::setw(8) << "subsys" << "values\n";
  for (std::size_t i = 0; i < space.size(); ++i) {
    const auto& p = space[i];
    std::string values;
    for (std::size_t k = 0; k < p.labels.size(); ++k) values += (k ? "," : "") + p.labels[k];
    os << std::setw(4) << i << std::setw(42) << p.name << std::setw(8) << to_string(p.subsystem) << values << '\n';
  }
  *cx.out << os.str();
  if (!o.out.empty()) {
    prepare_out(o.out);
    Manifest man("dump-space", cx.args, o.seed);
    if (!o.space.empty()) man.input(o.space);
    text::write_file(out_path(o, "space.txt"), space.serialize());
    man.output("space.txt");
    man.param("parameters", space.size());
    man.param("fingerprint", text::hex64(space.fingerprint()));
    man.write(o.out);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Option wiring

void opt_common(CLI::App* c, Options& o) {
  c->add_option("--space", o.space, "Design-space catalog file (default: built-in 68 parameters)");
  c->add_option("--weights", o.weights, "Power/area weight overrides");
  c->add_option("--seed", o.seed, "Root seed");
  c->add_option("--out", o.out, "Output directory");
}

void opt_traces(CLI::App* c, Options& o, bool chunk_size) {
  c->add_option("--traces", o.traces, "Trace files or directories of *.trace files");
  if (chunk_size) c->add_option("-s,--chunk-size", o.s, "Instructions per chunk");
  c->add_option("--warmup", o.warmup, "Records replayed before each chunk");
}

void opt_subset(CLI::App* c, Options& o) {
  c->add_option("--subsystem", o.subsystem, "imem, dmem, core, branch or all")
      ->check(CLI::IsMember({"imem", "dmem", "core", "branch", "all"}, CLI::ignore_case));
  c->add_option("--param", o.params, "Parameter name (repeatable; comma separated)")->delimiter(',');
  c->add_option("--base", o.base, "Values for parameters outside the subset (name = value lines)");
}

void opt_metric(CLI::App* c, Options& o) {
  c->add_option("--metric", o.metric, "ipc, power or objective")
      ->check(CLI::IsMember({"ipc", "power", "objective"}, CLI::ignore_case));
}

void opt_train(CLI::App* c, Options& o) {
  c->add_option("--dataset", o.dataset, "Dataset CSV");
  c->add_option("--epochs", o.epochs);
  c->add_option("--batch", o.batch);
  c->add_option("--lr", o.lr);
  c->add_option("--split", o.split, "Training share of the chunk-stratified split");
}

void opt_search(CLI::App* c, Options& o) {
  opt_common(c, o);
  opt_traces(c, o, true);
  opt_subset(c, o);
  c->add_option("--eval-chunks", o.eval_chunks, "Chunks averaged per fitness evaluation");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Context cx;
  cx.args = args;
  cx.out = &out;
  cx.err = &err;
  Options& o = cx.o;

  CLI::App app{"Trace-driven CPU design space exploration", "onedse"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  auto* gen = app.add_subcommand("gen-traces", "Write synthetic workload traces");
  opt_common(gen, o);
  gen->add_option("--workloads", o.workloads, "Number of built-in workload profiles");
  gen->add_option("--profile", o.profiles, "Profile files (key = value); replaces the built-in family");
  gen->add_option("--records", o.records, "Records per trace");

  auto* sim = app.add_subcommand("simulate", "Simulate every chunk of the traces under one configuration");
  opt_common(sim, o);
  opt_traces(sim, o, true);
  sim->add_option("--config", o.config, "Configuration file (name = value lines)");

  auto* build = app.add_subcommand("build-dataset", "Simulate a chunk x configuration grid");
  opt_common(build, o);
  opt_traces(build, o, true);
  opt_subset(build, o);
  build->add_option("--chunks", o.chunks, "Chunks sampled from the traces");
  build->add_option("--configs", o.configs, "Configurations (a smaller subset is enumerated)");

  CLI::App* train_cmds[2];
  for (int m = 0; m < 2; ++m) {
    auto* t = app.add_subcommand(m == 0 ? "train-p" : "train-m",
                                 m == 0 ? "Train a metric predictor" : "Train a parameter predictor");
    opt_common(t, o);
    opt_traces(t, o, false);
    opt_subset(t, o);
    opt_metric(t, o);
    opt_train(t, o);
    t->add_option("--d", o.d, "Model width");
    t->add_option("--heads", o.heads);
    t->add_option("--layers", o.layers, "Encoder layers");
    t->add_option("--head-layers", o.head_layers, "MLP head layers");
    t->add_option("--window", o.window, "Attention window");
    t->add_flag("--no-trunk", o.no_trunk, "Parameters-only baseline without the trace encoder");
    if (m == 1) t->add_option("--lambda", o.lambda, "Reward weight stored in an ensemble (--subsystem all)");
    train_cmds[m] = t;
  }

  auto* pred = app.add_subcommand("predict", "Run a trained model on trace chunks");
  opt_common(pred, o);
  opt_traces(pred, o, false);
  pred->add_option("--checkpoint", o.checkpoint, "Model checkpoint");
  pred->add_option("--config", o.config, "Configuration for a P-mode model");
  pred->add_option("--constraint", o.constraint, "Metric value for an M-mode model");
  pred->add_option("--chunks", o.chunks);

  auto* mast = app.add_subcommand("mast", "Sweep the metric constraint through an M-mode model");
  opt_common(mast, o);
  opt_traces(mast, o, false);
  mast->add_option("--checkpoint", o.checkpoint, "M-mode model checkpoint");
  mast->add_option("--dataset", o.dataset, "Dataset whose metric range sets the sweep");
  mast->add_option("--c-i", o.c_i, "First constraint");
  mast->add_option("--c-s", o.c_s, "Constraint step");
  mast->add_option("--steps", o.steps, "Metric range divided by this gives the step");
  mast->add_option("--patience", o.patience, "Unchanged steps before stopping");
  mast->add_option("--max-iter", o.max_iter);
  mast->add_option("--delta", o.delta, "Relative objective change counted as significant");
  mast->add_option("--chunks", o.chunks);
  mast->add_option("--eval-chunks", o.eval_chunks, "Chunks the oracle averages when annotating");
  mast->add_option("--base", o.base, "Values for parameters outside the model's subset");
  mast->add_flag("--no-annotate", o.no_annotate, "Skip oracle scoring of the trajectory");

  CLI::App* search_cmds[2];
  for (int g = 0; g < 2; ++g) {
    auto* s = app.add_subcommand(g == 0 ? "search-ga" : "search-abc",
                                 g == 0 ? "Genetic algorithm search" : "Artificial bee colony search");
    opt_search(s, o);
    s->add_option("--population", o.population);
    s->add_option("--iterations", o.iterations);
    if (g == 0) {
      s->add_option("--tournament", o.tournament);
      s->add_option("--crossover", o.crossover);
    }
    s->add_option("--mutation", o.mutation, "Initial mutation rate");
    s->add_option("--anneal", o.anneal, "Mutation decay per iteration");
    s->add_option("--stagnation", o.stagnation, "Non-improving iterations before intervention");
    s->add_flag("--vanilla", o.vanilla, "Disable annealing and stagnation handling");
    s->add_flag("--paired", o.paired, "Also run the vanilla variant with the same seed");
    search_cmds[g] = s;
  }

  auto* exh = app.add_subcommand("search-exhaustive", "Evaluate every configuration of a small subset");
  opt_search(exh, o);
  exh->add_option("--cap", o.cap, "Largest number of configurations allowed");

  auto* smart = app.add_subcommand("smart-finetune", "Jointly fine-tune a four-agent ensemble");
  opt_common(smart, o);
  opt_traces(smart, o, false);
  opt_train(smart, o);
  smart->add_option("--checkpoint", o.checkpoint, "Ensemble directory");
  smart->add_option("--lambda", o.lambda, "Reward weight");
  smart->add_option("--sigma", o.sigma, "Exploration std in rank units");

  auto* rep = app.add_subcommand("report", "Collect run outputs into plot-ready CSV");
  rep->add_option("results", o.results, "Results directory")->required();
  rep->add_option("--out", o.out, "Report directory (default: <results>/report)");

  auto* dump = app.add_subcommand("dump-space", "Print the parameter table");
  opt_common(dump, o);

  std::vector<std::string> rev(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
  std::reverse(rev.begin(), rev.end());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    err << "error: " << e.what() << '\n';
    auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help("", CLI::AppFormatMode::Normal);
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_traces(cx);
    if (sim->parsed()) return cmd_simulate(cx);
    if (build->parsed()) return cmd_build_dataset(cx);
    if (train_cmds[0]->parsed()) return cmd_train(cx, Mode::P);
    if (train_cmds[1]->parsed()) return cmd_train(cx, Mode::M);
    if (pred->parsed()) return cmd_predict(cx);
    if (mast->parsed()) return cmd_mast(cx);
    if (search_cmds[0]->parsed()) return cmd_search(cx, true);
    if (search_cmds[1]->parsed()) return cmd_search(cx, false);
    if (exh->parsed()) return cmd_exhaustive(cx);
    if (smart->parsed()) return cmd_smart(cx);
    if (rep->parsed()) return cmd_report(cx);
    if (dump->parsed()) return cmd_dump_space(cx);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  err << app.help();
  return kExitUsage;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args(argv, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace onedse::cli
