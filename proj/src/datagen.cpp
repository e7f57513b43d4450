#include "onedse/datagen.hpp"

#include <algorithm>
#include <filesystem>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "onedse/error.hpp"
#include "onedse/parallel.hpp"
#include "onedse/text.hpp"

namespace onedse {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Corpus

std::vector<TokenSequence> Corpus::tokens(UnknownPolicy policy) const {
  std::vector<TokenSequence> out(chunks.size());
  for (std::size_t i = 0; i < chunks.size(); ++i) out[i] = tokenize_chunk(chunks[i], dict, s, policy);
  return out;
}

std::size_t Corpus::index_of(std::int64_t chunk_id) const {
  // Ids are dense from chunks.front().id.
  if (!chunks.empty()) {
    const std::int64_t i = chunk_id - chunks.front().id;
    if (i >= 0 && static_cast<std::size_t>(i) < chunks.size() && chunks[static_cast<std::size_t>(i)].id == chunk_id)
      return static_cast<std::size_t>(i);
  }
  throw ValidationError("chunk id " + std::to_string(chunk_id) + " is not in the corpus");
}

Corpus make_corpus(const std::vector<std::vector<TraceRecord>>& traces, std::size_t s,
                   std::vector<std::string> names, std::size_t warmup) {
  if (s == 0) throw ArgumentError("chunk length s must be positive");
  Corpus c;
  c.s = s;
  c.warmup = warmup;
  std::vector<TraceRecord> all;
  for (std::size_t f = 0; f < traces.size(); ++f) {
    c.sources.push_back(f < names.size() ? names[f] : "trace" + std::to_string(f));
    for (auto& ch : chunk_trace(traces[f], s, static_cast<std::int64_t>(c.chunks.size()), warmup)) {
      c.chunks.push_back(std::move(ch));
      c.source_of.push_back(f);
    }
    all.insert(all.end(), traces[f].begin(), traces[f].end());
  }
  c.dict = build_dictionary(all).with_unknown();
  return c;
}

Corpus load_corpus(const std::vector<std::string>& paths, std::size_t s, std::size_t warmup) {
  std::vector<std::string> files;
  for (const auto& p : paths) {
    if (fs::is_directory(p)) {
      std::vector<std::string> found;
      for (const auto& e : fs::directory_iterator(p))
        if (e.is_regular_file() && e.path().extension() == ".trace") found.push_back(e.path().string());
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else if (fs::exists(p)) {
      files.push_back(p);
    } else {
      throw ValidationError("trace path not found: " + p);
    }
  }
  if (files.empty()) throw ValidationError("no .trace files found");
  std::vector<std::vector<TraceRecord>> traces;
  std::vector<std::string> names;
  for (const auto& f : files) {
    try {
      traces.push_back(parse_trace(text::read_file(f)));
    } catch (const ParseError& e) {
      throw ValidationError(f + ": " + e.what());
    }
    names.push_back(fs::path(f).filename().string());
  }
  return make_corpus(traces, s, names, warmup);
}

// ---------------------------------------------------------------------------
// Building

std::vector<std::int64_t> Dataset::chunk_ids() const {
  std::vector<std::int64_t> ids;
  for (const auto& r : rows) ids.push_back(r.chunk_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

std::vector<Configuration> sample_configs(const DesignSpace& space, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Configuration> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_config(space, rng));
  return out;
}

Dataset build_dataset(const Corpus& corpus, const std::vector<Configuration>& configs, const DesignSpace& space,
                      const Weights& weights, const BuildOptions& options) {
  for (const auto& c : configs) space.check(c);
  options.latency.validate();
  std::vector<std::size_t> picked = options.chunks;
  if (picked.empty()) {
    picked.resize(corpus.chunks.size());
    std::iota(picked.begin(), picked.end(), 0);
  }
  for (auto i : picked)
    if (i >= corpus.chunks.size()) throw ArgumentError("chunk index out of range");
  const std::size_t nc = configs.size();
  const std::size_t total = picked.size() * nc;
  std::vector<DatasetRow> rows(total);
  std::vector<std::uint8_t> ok(total, 0);
  std::vector<MicroarchParams> params(nc);
  for (std::size_t j = 0; j < nc; ++j) params[j] = MicroarchParams::from(configs[j], space);

  parallel_for(total, [&](std::size_t task) {
    const std::size_t i = task / nc, j = task % nc;
    const Chunk& chunk = corpus.chunks[picked[i]];
    DatasetRow& row = rows[task];
    row.chunk_id = chunk.id;
    row.config_id = static_cast<std::uint32_t>(j);
    row.config = configs[j];
    try {
      const std::uint64_t seed = derive_seed(derive_seed(options.seed, static_cast<std::uint64_t>(chunk.id)), j);
      row.stats = simulate(chunk, params[j], seed, options.latency);
      row.metrics = compute_metrics(row.stats, configs[j], space, weights);
      ok[task] = std::isfinite(row.metrics.ipc) && std::isfinite(row.metrics.power) ? 1 : 0;
    } catch (const Error&) {
      ok[task] = 0;
    }
  });

  Dataset d;
  d.header.space_text = space.serialize();
  d.header.space_fingerprint = space.fingerprint();
  d.header.dict_fingerprint = corpus.dict.fingerprint();
  d.header.weights_fingerprint = fingerprint(weights);
  d.header.s = corpus.s;
  d.header.warmup = corpus.warmup;
  d.header.seed = options.seed;
  for (std::size_t t = 0; t < total; ++t) {
    if (ok[t])
      d.rows.push_back(std::move(rows[t]));
    else
      ++d.header.failures;
  }
  return d;
}

std::vector<std::size_t> sample_chunks(const Corpus& corpus, std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < corpus.chunks.size(); ++i)
    if (corpus.chunks[i].warmup().size() >= corpus.warmup && corpus.chunks[i].records.size() == corpus.s)
      pool.push_back(i);
  Rng rng(seed);
  for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[rng.below(i)]);
  pool.resize(std::min(n, pool.size()));
  std::sort(pool.begin(), pool.end());
  return pool;
}

std::pair<Dataset, Dataset> split(const Dataset& dataset, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ArgumentError("split fraction must lie in (0, 1)");
  std::vector<std::int64_t> ids = dataset.chunk_ids();
  Rng rng(seed);
  for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.below(i)]);
  std::size_t n_first = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ids.size())));
  if (ids.size() >= 2) n_first = std::clamp<std::size_t>(n_first, 1, ids.size() - 1);
  std::vector<std::int64_t> first(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_first));
  std::sort(first.begin(), first.end());
  std::pair<Dataset, Dataset> out;
  out.first.header = dataset.header;
  out.second.header = dataset.header;
  for (const auto& r : dataset.rows) {
    const bool in_first = std::binary_search(first.begin(), first.end(), r.chunk_id);
    (in_first ? out.first : out.second).rows.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

constexpr const char* kMetricColumns[] = {"ipc", "power", "area", "objective"};
constexpr int kVersionMajor = 1;
constexpr int kVersionMinor = 1;

std::string manifest_path(const std::string& path) { return path + ".manifest.json"; }

}  // namespace

std::string dataset_csv(const Dataset& d) {
  const std::size_t n = d.rows.empty() ? d.space().size() : d.rows.front().config.size();
  std::ostringstream os;
  os << "chunk_id,config_id";
  for (std::size_t i = 0; i < n; ++i) os << ",rank_" << i;
  for (const char* m : kMetricColumns) os << ',' << m;
  for (auto c : kCounterNames) os << ',' << c;
  os << '\n';
  for (const auto& r : d.rows) {
    os << r.chunk_id << ',' << r.config_id;
    for (int v : r.config.ranks) os << ',' << v;
    os << ',' << text::format_double(r.metrics.ipc) << ',' << text::format_double(r.metrics.power) << ','
       << text::format_double(r.metrics.area) << ',' << text::format_double(r.metrics.ipc_per_area);
    for (auto v : r.stats.counts) os << ',' << v;
    os << '\n';
  }
  return os.str();
}

void save_dataset(const Dataset& d, const std::string& path) {
  const std::string csv = dataset_csv(d);
  json m;
  m["format"] = "onedse-dataset";
  m["version"] = d.header.version;
  m["space_fingerprint"] = text::hex64(d.header.space_fingerprint);
  m["dictionary_fingerprint"] = text::hex64(d.header.dict_fingerprint);
  m["weights_fingerprint"] = text::hex64(d.header.weights_fingerprint);
  m["s"] = d.header.s;
  m["warmup"] = d.header.warmup;
  m["seed"] = d.header.seed;
  m["failures"] = d.header.failures;
  m["rows"] = d.rows.size();
  m["metrics"] = std::vector<std::string>(std::begin(kMetricColumns), std::end(kMetricColumns));
  m["counters"] = std::vector<std::string>(kCounterNames.begin(), kCounterNames.end());
  m["csv_fnv1a"] = text::hex64(text::fnv1a(csv));
  m["space"] = d.header.space_text;
  text::write_file(path, csv);
  text::write_file(manifest_path(path), m.dump(2) + "\n");
}

namespace {

std::uint64_t parse_hex(const json& m, const char* key) {
  std::uint64_t v = 0;
  if (!m.contains(key) || !m[key].is_string() || !text::parse_u64(m[key].get<std::string>(), v, 16))
    throw ValidationError(std::string("dataset manifest: missing or bad '") + key + "'");
  return v;
}

}  // namespace

Dataset load_dataset(const std::string& path, const DesignSpace* expect_space, const TokenDict* expect_dict) {
  json m;
  try {
    m = json::parse(text::read_file(manifest_path(path)));
  } catch (const json::exception& e) {
    throw ValidationError("dataset manifest unreadable: " + std::string(e.what()));
  }
  Dataset d;
  auto& h = d.header;
  try {
    if (m.at("format") != "onedse-dataset") throw ValidationError("not a dataset manifest");
    h.version = m.at("version").get<std::string>();
    int major = 0, minor = 0;
    if (std::sscanf(h.version.c_str(), "%d.%d", &major, &minor) != 2 || major != kVersionMajor)
      throw ValidationError("unsupported dataset version " + h.version);
    if (minor > kVersionMinor) {
      // Newer minor versions only add columns; unknown ones are ignored below.
    }
    h.space_text = m.at("space").get<std::string>();
    h.space_fingerprint = parse_hex(m, "space_fingerprint");
    h.dict_fingerprint = parse_hex(m, "dictionary_fingerprint");
    h.weights_fingerprint = parse_hex(m, "weights_fingerprint");
    h.s = m.at("s").get<std::size_t>();
    h.warmup = m.value("warmup", std::size_t{0});  // absent before 1.1
    h.seed = m.at("seed").get<std::uint64_t>();
    h.failures = m.at("failures").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ValidationError("dataset manifest: " + std::string(e.what()));
  }
  const DesignSpace space = DesignSpace::parse(h.space_text);
  if (space.fingerprint() != h.space_fingerprint)
    throw ValidationError("dataset manifest: space fingerprint does not match the embedded space");
  if (expect_space && expect_space->fingerprint() != h.space_fingerprint)
    throw ValidationError("dataset was built for a different design space (fingerprint " +
                          text::hex64(h.space_fingerprint) + ", expected " +
                          text::hex64(expect_space->fingerprint()) + ")");
  if (expect_dict && expect_dict->fingerprint() != h.dict_fingerprint)
    throw ValidationError("dataset was built against a different token dictionary");

  const std::string csv = text::read_file(path);
  if (text::fnv1a(csv) != parse_hex(m, "csv_fnv1a")) throw ValidationError("dataset CSV checksum mismatch");

  auto lines = text::split(csv, '\n');
  if (lines.empty()) throw ValidationError("dataset CSV is empty");
  const auto header = text::split(lines[0], ',');
  // Column lookup by name keeps older files (fewer counters) loadable.
  std::vector<int> rank_col(space.size(), -1);
  int chunk_col = -1, config_col = -1;
  int metric_col[4] = {-1, -1, -1, -1};
  std::vector<int> counter_col(kCounterCount, -1);
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto name = text::trim(header[c]);
    const int ci = static_cast<int>(c);
    if (name == "chunk_id") chunk_col = ci;
    else if (name == "config_id") config_col = ci;
    else if (name.starts_with("rank_")) {
      std::uint64_t k = 0;
      if (!text::parse_u64(name.substr(5), k, 10) || k >= space.size())
        throw ValidationError("dataset CSV: unexpected column " + std::string(name));
      rank_col[k] = ci;
    } else {
      for (int i = 0; i < 4; ++i)
        if (name == kMetricColumns[i]) metric_col[i] = ci;
      if (auto counter = counter_from_name(name)) counter_col[static_cast<std::size_t>(*counter)] = ci;
    }
  }
  if (chunk_col < 0 || config_col < 0 || std::count(rank_col.begin(), rank_col.end(), -1) > 0 ||
      std::count(std::begin(metric_col), std::end(metric_col), -1) > 0)
    throw ValidationError("dataset CSV: missing required columns");

  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (text::trim(lines[li]).empty()) continue;
    const auto cells = text::split(lines[li], ',');
    if (cells.size() != header.size())
      throw ValidationError("dataset CSV line " + std::to_string(li + 1) + ": wrong column count");
    auto u = [&](int col) {
      std::uint64_t v = 0;
      if (!text::parse_u64(cells[static_cast<std::size_t>(col)], v, 10))
        throw ValidationError("dataset CSV line " + std::to_string(li + 1) + ": bad integer");
      return v;
    };
    auto f = [&](int col) {
      double v = 0;
      if (!text::parse_double(cells[static_cast<std::size_t>(col)], v))
        throw ValidationError("dataset CSV line " + std::to_string(li + 1) + ": bad number");
      return v;
    };
    DatasetRow r;
    r.chunk_id = static_cast<std::int64_t>(u(chunk_col));
    r.config_id = static_cast<std::uint32_t>(u(config_col));
    r.config.ranks.resize(space.size());
    for (std::size_t k = 0; k < space.size(); ++k) r.config.ranks[k] = static_cast<int>(u(rank_col[k]));
    space.check(r.config);
    r.metrics.ipc = f(metric_col[0]);
    r.metrics.power = f(metric_col[1]);
    r.metrics.area = f(metric_col[2]);
    r.metrics.ipc_per_area = f(metric_col[3]);
    for (std::size_t k = 0; k < kCounterCount; ++k)
      if (counter_col[k] >= 0) r.stats.counts[k] = u(counter_col[k]);
    d.rows.push_back(std::move(r));
  }
  if (m.contains("rows") && m["rows"].get<std::size_t>() != d.rows.size())
    throw ValidationError("dataset row count does not match its manifest");
  return d;
}

std::vector<WorkloadProfile> profile_family(std::size_t n, std::uint64_t seed) {
  std::vector<WorkloadProfile> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    WorkloadProfile& p = out[i];
    switch (i % 6) {
      case 0:
        p.alu_frac = 0.7, p.mul_frac = 0.05, p.div_frac = 0, p.load_frac = 0.1, p.store_frac = 0.05, p.branch_frac = 0.1;
        p.working_set_bytes = 4096, p.code_bytes = 2048, p.dep_chain_len = 8;
        break;
      case 1:
        p.alu_frac = 0.3, p.mul_frac = 0, p.div_frac = 0, p.load_frac = 0.4, p.store_frac = 0.2, p.branch_frac = 0.1;
        p.working_set_bytes = 8 << 20, p.dep_chain_len = 2;
        break;
      case 2:
        p.alu_frac = 0.5, p.mul_frac = 0, p.div_frac = 0, p.load_frac = 0.15, p.store_frac = 0.05, p.branch_frac = 0.3;
        p.taken_prob = 0.5, p.code_bytes = 64 * 1024;
        break;
      case 3:
        p.alu_frac = 0.4, p.mul_frac = 0.25, p.div_frac = 0.1, p.load_frac = 0.1, p.store_frac = 0.05, p.branch_frac = 0.1;
        p.dep_chain_len = 1.5;
        break;
      case 4:
        p.code_bytes = 1024, p.working_set_bytes = 1 << 20;
        break;
      case 5:
        p.alu_frac = 0.6, p.mul_frac = 0, p.div_frac = 0, p.load_frac = 0.2, p.store_frac = 0.1, p.branch_frac = 0.1;
        p.code_bytes = 256 * 1024, p.dep_chain_len = 16;
        break;
    }
    p.seed = derive_seed(seed, i);
  }
  return out;
}

}  // namespace onedse
