#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "onedse/design_space.hpp"
#include "onedse/metrics.hpp"
#include "onedse/simulator.hpp"
#include "onedse/trace.hpp"

namespace onedse {

/// Records of preceding execution replayed before each chunk is timed.
inline constexpr std::size_t kDefaultWarmup = 8192;

/// Chunks from one or more trace files plus the dictionary they tokenize against.
struct Corpus {
  std::vector<std::string> sources;  // file names, in load order
  std::vector<Chunk> chunks;         // ids are global and dense, in file order
  std::vector<std::size_t> source_of; // chunk index -> sources index
  TokenDict dict;                    // first-appearance order over all files, plus "<unk>"
  std::size_t s = 0;
  std::size_t warmup = 0;

  std::vector<TokenSequence> tokens(UnknownPolicy policy = UnknownPolicy::Strict) const;
  /// Index of a chunk id, throwing ValidationError when absent.
  std::size_t index_of(std::int64_t chunk_id) const;
};

/// Chunks every file in order; a directory expands to its *.trace files sorted by name.
Corpus load_corpus(const std::vector<std::string>& paths, std::size_t s, std::size_t warmup = kDefaultWarmup);
Corpus make_corpus(const std::vector<std::vector<TraceRecord>>& traces, std::size_t s,
                   std::vector<std::string> names = {}, std::size_t warmup = kDefaultWarmup);

struct DatasetRow {
  std::int64_t chunk_id = 0;
  std::uint32_t config_id = 0;
  Configuration config;
  MetricVector metrics;
  SimStats stats;

  friend bool operator==(const DatasetRow&, const DatasetRow&) = default;
};

struct DatasetHeader {
  std::string version = "1.1";
  std::string space_text;  // serialized DesignSpace the ranks refer to
  std::uint64_t space_fingerprint = 0;
  std::uint64_t dict_fingerprint = 0;
  std::uint64_t weights_fingerprint = 0;
  std::size_t s = 0;
  std::size_t warmup = 0;
  std::uint64_t seed = 0;
  std::size_t failures = 0;

  friend bool operator==(const DatasetHeader&, const DatasetHeader&) = default;
};

struct Dataset {
  DatasetHeader header;
  std::vector<DatasetRow> rows;

  DesignSpace space() const { return DesignSpace::parse(header.space_text); }
  std::vector<std::int64_t> chunk_ids() const;  // distinct, ascending
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct BuildOptions {
  std::uint64_t seed = 1;
  LatencyTable latency;
  /// Corpus chunk indices to simulate; empty means every chunk.
  std::vector<std::size_t> chunks;
};

/// Up to n chunk indices, ascending, drawn without replacement from the chunks whose
/// warm-up context is complete (all chunks when the corpus has no warm-up).
std::vector<std::size_t> sample_chunks(const Corpus& corpus, std::size_t n, std::uint64_t seed);

/// One row per (chunk, config) pair, simulated in parallel; rows are ordered by
/// (chunk_id, config index). Pairs whose simulation throws are dropped and counted.
Dataset build_dataset(const Corpus& corpus, const std::vector<Configuration>& configs, const DesignSpace& space,
                      const Weights& weights, const BuildOptions& options = {});

/// Chunk-stratified split: a `fraction` share of distinct chunk ids goes to the first half.
std::pair<Dataset, Dataset> split(const Dataset& dataset, double fraction, std::uint64_t seed);

/// Writes `path` (CSV) and `path.manifest.json`.
void save_dataset(const Dataset& dataset, const std::string& path);
std::string dataset_csv(const Dataset& dataset);
/// Verifies the manifest, the CSV checksum and, when given, the expected space and dictionary.
Dataset load_dataset(const std::string& path, const DesignSpace* expect_space = nullptr,
                     const TokenDict* expect_dict = nullptr);

/// n workload profiles cycling through six archetypes (compute bound, memory bound,
/// branchy, multiply heavy, default, large code footprint). Seeds derive from `seed`.
std::vector<WorkloadProfile> profile_family(std::size_t n, std::uint64_t seed);

/// Uniformly sampled configurations, deterministic in seed.
std::vector<Configuration> sample_configs(const DesignSpace& space, std::size_t n, std::uint64_t seed);

}  // namespace onedse
