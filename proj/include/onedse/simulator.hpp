#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "onedse/branch_predictor.hpp"
#include "onedse/cache.hpp"
#include "onedse/design_space.hpp"
#include "onedse/trace.hpp"

namespace onedse {

enum class Counter : std::size_t {
  Instructions,
  Cycles,
  IcacheHits,
  IcacheMisses,
  DcacheHits,
  DcacheMisses,
  L2Hits,
  L2Misses,
  L3Hits,
  L3Misses,
  ItlbHits,
  ItlbMisses,
  DtlbHits,
  DtlbMisses,
  BrCorrect,
  BrMispredict,
  StallFrontend,
  StallRobFull,
  StallLsuFull,
};

inline constexpr std::size_t kCounterCount = 19;

/// Column / weight-file names, indexed by Counter.
inline constexpr std::array<std::string_view, kCounterCount> kCounterNames = {
    "instructions",  "cycles",        "icache_hits",   "icache_misses",
    "dcache_hits",   "dcache_misses", "l2_hits",       "l2_misses",
    "l3_hits",       "l3_misses",     "itlb_hits",     "itlb_misses",
    "dtlb_hits",     "dtlb_misses",   "br_correct",    "br_mispredict",
    "stall_cycles_frontend", "stall_cycles_rob_full", "stall_cycles_lsu_full",
};

std::optional<Counter> counter_from_name(std::string_view name);

/// Raw activity counters from one simulation.
struct SimStats {
  std::array<std::uint64_t, kCounterCount> counts{};

  std::uint64_t& operator[](Counter c) { return counts[static_cast<std::size_t>(c)]; }
  std::uint64_t operator[](Counter c) const { return counts[static_cast<std::size_t>(c)]; }

  SimStats& operator+=(const SimStats& o) {
    for (std::size_t i = 0; i < kCounterCount; ++i) counts[i] += o.counts[i];
    return *this;
  }
  friend bool operator==(const SimStats&, const SimStats&) = default;

  /// Flat `name=value` lines.
  std::string dump() const;
};

/// Execution latencies and fixed memory-system timings, in cycles.
struct LatencyTable {
  std::uint32_t alu = 1;
  std::uint32_t mul = 3;
  std::uint32_t div = 12;
  std::uint32_t fp = 4;
  std::uint32_t store = 1;
  std::uint32_t branch = 1;
  std::uint32_t l1i_hit = 2;
  std::uint32_t l1d_hit = 3;
  std::uint32_t l2_hit = 12;
  std::uint32_t l3_hit = 40;
  std::uint32_t memory = 200;
  std::uint32_t tlb_walk = 20;
  std::uint32_t mispredict_flush_penalty = 12;

  void validate() const;
};

/// Every catalog parameter resolved to the number the timing model uses.
/// Parameters absent from a custom space take the built-in catalog's middle value.
struct MicroarchParams {
  // instruction memory
  std::uint64_t itlb_page_bytes, itlb_entries, itlb_assoc;
  std::uint64_t icache_line, icache_bytes, icache_assoc, fetch_queue_bytes;
  // data memory
  std::uint64_t l2_line, l2_bytes, l2_assoc;
  Replacement l2_repl;
  std::uint64_t l2_icache_req_q, l2_icache_resp_q;
  std::uint64_t l3_line, l3_bytes, l3_assoc;
  Replacement l3_repl;
  std::uint64_t dcache_line, dcache_bytes, dcache_assoc;
  Replacement dcache_repl;
  std::uint64_t dtlb_page_bytes, dtlb_entries, dtlb_assoc;
  std::uint64_t lsu_bank_q, load_buffer, store_buffer, tlb_miss_q, mem_req_q, data_miss_q, eviction_q;
  std::uint64_t l2_lsu_read_req_q, l2_lsu_write_req_q, l2_lsu_read_resp_q, l2_l1_read_req_q;
  std::uint64_t l2_banks, l2_rows_per_bank;
  // core
  std::uint64_t issue_width, dispatch_width, prf_write_ports, prf_read_ports;
  std::uint64_t fetch_width, decode_width, decode_queue, rename_width, int_renames, float_renames;
  std::uint64_t dispatch_count, dispatch_queue_depth, biu_req_q, retire_width, rob_depth;
  // branch
  BranchPredictorConfig predictor;

  static MicroarchParams from(const Configuration& config, const DesignSpace& space);
};

/// Runs the trace-driven out-of-order timing model over one chunk.
/// Deterministic in (chunk, config, space, seed); seed only feeds RANDOM replacement.
SimStats simulate(const Chunk& chunk, const Configuration& config, const DesignSpace& space,
                  std::uint64_t seed = 0, const LatencyTable& latency = {});
SimStats simulate(const Chunk& chunk, const MicroarchParams& params, std::uint64_t seed = 0,
                  const LatencyTable& latency = {});

/// Number of simulate() calls made by this process so far.
std::uint64_t simulation_count();

}  // namespace onedse
