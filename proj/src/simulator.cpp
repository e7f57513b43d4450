#include "onedse/simulator.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <functional>
#include <queue>
#include <sstream>

#include "onedse/error.hpp"

namespace onedse {

std::optional<Counter> counter_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kCounterCount; ++i)
    if (kCounterNames[i] == name) return static_cast<Counter>(i);
  return std::nullopt;
}

std::string SimStats::dump() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < kCounterCount; ++i) os << kCounterNames[i] << '=' << counts[i] << '\n';
  return os.str();
}

void LatencyTable::validate() const {
  for (auto v : {alu, mul, div, fp, store, branch, l1i_hit, l1d_hit, l2_hit, l3_hit, memory, tlb_walk,
                 mispredict_flush_penalty})
    if (v < 1) throw ValidationError("latencies must be >= 1");
}

// ---------------------------------------------------------------------------
// Parameter resolution

namespace {

class ParamReader {
 public:
  ParamReader(const Configuration& config, const DesignSpace& space) : config_(config), space_(space) {}

  double num(std::string_view name) const {
    if (auto i = space_.index_of(name)) return space_[*i].numeric(config_.ranks[*i]);
    const auto& b = DesignSpace::builtin();
    const std::size_t j = b.require_index(name);
    return b[j].numeric(static_cast<int>((b[j].size() - 1) / 2));
  }
  std::uint64_t u(std::string_view name) const { return static_cast<std::uint64_t>(num(name)); }
  Replacement repl(std::string_view name) const {
    const ParamSpec* spec;
    int rank;
    if (auto i = space_.index_of(name)) {
      spec = &space_[*i];
      rank = config_.ranks[*i];
    } else {
      const auto& b = DesignSpace::builtin();
      spec = &b[b.require_index(name)];
      rank = static_cast<int>((spec->size() - 1) / 2);
    }
    return parse_replacement(spec->labels[static_cast<std::size_t>(rank)]);
  }

 private:
  const Configuration& config_;
  const DesignSpace& space_;
};

constexpr std::uint64_t kKiB = 1024;

}  // namespace

MicroarchParams MicroarchParams::from(const Configuration& config, const DesignSpace& space) {
  space.check(config);
  const ParamReader r(config, space);
  MicroarchParams p{};
  p.itlb_page_bytes = r.u("immu/il2mmu tlb page size (kb)") * kKiB;
  p.itlb_entries = r.u("immu/il2mmu tlb num entries");
  p.itlb_assoc = r.u("immu/il2mmu tlb associativity");
  p.icache_line = r.u("icache line size");
  p.icache_bytes = r.u("icache size (kb)") * kKiB;
  p.icache_assoc = r.u("icache associativity");
  p.fetch_queue_bytes = r.u("fetch-icache queue size (bytes)");

  p.l2_line = r.u("l2 cache line size");
  p.l2_bytes = r.u("l2 cache size (kb)") * kKiB;
  p.l2_assoc = r.u("l2 cache associativity");
  p.l2_repl = r.repl("l2 cache replacement policy");
  p.l2_icache_req_q = r.u("l2-icache request queue size");
  p.l2_icache_resp_q = r.u("l2-icache response queue size");
  p.l3_line = r.u("l3 cache line size");
  p.l3_bytes = r.u("l3 cache size (kb)") * kKiB;
  p.l3_assoc = r.u("l3 cache associativity");
  p.l3_repl = r.repl("l3 cache replacement policy");
  p.dcache_line = r.u("dcache line size");
  p.dcache_bytes = r.u("dcache size (kb)") * kKiB;
  p.dcache_assoc = r.u("dcache associativity");
  p.dcache_repl = r.repl("dcache replacement policy");
  p.dtlb_page_bytes = r.u("dmmu/dl2mmu tlb page size (kb)") * kKiB;
  p.dtlb_entries = r.u("dmmu/dl2mmu tlb num entries");
  p.dtlb_assoc = r.u("dmmu/dl2mmu tlb associativity");
  p.lsu_bank_q = r.u("lsu data bank queue size");
  p.load_buffer = r.u("lsu load buffer queue size");
  p.store_buffer = r.u("lsu store buffer queue size");
  p.tlb_miss_q = r.u("lsu tlb miss queue size");
  p.mem_req_q = r.u("lsu memory request queue size");
  p.data_miss_q = r.u("lsu data miss queue size");
  p.eviction_q = r.u("lsu data eviction queue size");
  p.l2_lsu_read_req_q = r.u("l2-lsu read request queue size");
  p.l2_lsu_write_req_q = r.u("l2-lsu write request queue size");
  p.l2_lsu_read_resp_q = r.u("l2-lsu read response queue size");
  p.l2_l1_read_req_q = r.u("l2-l1 pipe read request queue size");
  p.l2_banks = r.u("l2 no. of banks");
  p.l2_rows_per_bank = r.u("l2 no. of rows per bank");

  p.issue_width = r.u("issue width");
  p.dispatch_width = r.u("dispatch width");
  p.prf_write_ports = r.u("physical register file write ports");
  p.prf_read_ports = r.u("physical register file read ports");
  p.fetch_width = r.u("no. to fetch");
  p.decode_width = r.u("no. to decode");
  p.decode_queue = r.u("decode: scalar instruction queue size");
  p.rename_width = r.u("no. to rename");
  p.int_renames = r.u("no. of integer renames");
  p.float_renames = r.u("no. of float renames");
  p.dispatch_count = r.u("no. to dispatch");
  p.dispatch_queue_depth = r.u("dispatch queue depth");
  p.biu_req_q = r.u("bus interface unit request queue size");
  p.retire_width = r.u("reorder buffer no. to retire");
  p.rob_depth = r.u("reorder buffer retire queue depth");

  auto& bp = p.predictor;
  bp.history_buffer_size = static_cast<std::uint32_t>(r.u("tage history buffer size"));
  bp.instruction_shift = static_cast<std::uint32_t>(r.u("tage instruction shift amount"));
  bp.direction_tag_bits = static_cast<std::uint32_t>(r.u("tage table tag widths x16"));
  bp.direction_reset_period = r.u("tage initial reset timer value") >> 10;
  bp.loop_entries = static_cast<std::uint32_t>(r.u("loop predictor (lpred) no. of entries"));
  bp.loop_associativity = static_cast<std::uint32_t>(r.u("lpred associativity"));
  bp.loop_max_age = static_cast<std::uint32_t>(r.u("lpred max age"));
  bp.loop_max_iterations = static_cast<std::uint32_t>(r.u("lpred no. of loop iterations max"));
  bp.btb_entries = static_cast<std::uint32_t>(r.u("btb total entries"));
  bp.btb_associativity = static_cast<std::uint32_t>(r.u("btb associativity"));
  bp.btb_granularity = static_cast<std::uint32_t>(r.u("branch target buffer (btb) granularity"));
  bp.ras_entries = static_cast<std::uint32_t>(r.u("btb raas size"));
  bp.indirect_short_history = static_cast<std::uint32_t>(r.u("tage path history bits") / 16);
  bp.indirect_long_history = static_cast<std::uint32_t>(r.u("ittage path history bits") / 8);
  bp.indirect_tag_bits = static_cast<std::uint32_t>(r.u("ittage table tag widths x16"));
  bp.indirect_reset_period = r.u("ittage initial reset timer value") >> 10;
  return p;
}

// ---------------------------------------------------------------------------
// Timing model

namespace {

/// Bounds the number of in-flight transactions of one class. acquire()
/// returns the earliest start time at or after t; release_at() books the slot.
class Limiter {
 public:
  explicit Limiter(std::uint64_t capacity) : capacity_(std::max<std::uint64_t>(1, capacity)) {}

  std::uint64_t acquire(std::uint64_t t) {
    while (!busy_.empty() && busy_.top() <= t) busy_.pop();
    if (busy_.size() < capacity_) return t;
    const std::uint64_t start = busy_.top();
    busy_.pop();
    return start;
  }
  void release_at(std::uint64_t done) { busy_.push(done); }

 private:
  std::uint64_t capacity_;
  std::priority_queue<std::uint64_t, std::vector<std::uint64_t>, std::greater<>> busy_;
};

/// Extra hit cycles for larger arrays: +1 per 4x capacity over the smallest catalog size.
std::uint32_t size_penalty(std::uint64_t bytes, std::uint64_t smallest) {
  if (bytes <= smallest) return 0;
  return static_cast<std::uint32_t>(std::floor(std::log2(static_cast<double>(bytes) / static_cast<double>(smallest)) / 2.0));
}

CacheGeometry geometry(std::uint64_t bytes, std::uint64_t line, std::uint64_t assoc, Replacement repl,
                       std::uint32_t latency) {
  CacheGeometry g;
  g.size_bytes = bytes;
  g.line_bytes = line;
  g.associativity = static_cast<std::uint32_t>(std::min(assoc, bytes / line));
  g.replacement = repl;
  g.hit_latency = latency;
  return g;
}

class MemorySystem {
 public:
  MemorySystem(const MicroarchParams& p, const LatencyTable& lat, std::uint64_t seed)
      : lat_(lat),
        l1i_lat_(lat.l1i_hit + size_penalty(p.icache_bytes, 32 * kKiB) + (p.icache_assoc >= 16 ? 1 : 0)),
        l1d_lat_(lat.l1d_hit + size_penalty(p.dcache_bytes, 32 * kKiB) + (p.dcache_assoc >= 16 ? 1 : 0)),
        l2_lat_(lat.l2_hit + size_penalty(p.l2_bytes, 512 * kKiB)),
        l3_lat_(lat.l3_hit + size_penalty(p.l3_bytes, 16384 * kKiB)),
        itlb_(geometry(p.itlb_entries * p.itlb_page_bytes, p.itlb_page_bytes, p.itlb_assoc, Replacement::LRU, 1)),
        dtlb_(geometry(p.dtlb_entries * p.dtlb_page_bytes, p.dtlb_page_bytes, p.dtlb_assoc, Replacement::LRU, 1)),
        icache_(geometry(p.icache_bytes, p.icache_line, p.icache_assoc, Replacement::LRU, l1i_lat_)),
        dcache_(geometry(p.dcache_bytes, p.dcache_line, p.dcache_assoc, p.dcache_repl, l1d_lat_), seed ^ 0xd),
        l2_(geometry(p.l2_bytes, p.l2_line, p.l2_assoc, p.l2_repl, l2_lat_), seed ^ 0x2),
        l3_(geometry(p.l3_bytes, p.l3_line, p.l3_assoc, p.l3_repl, l3_lat_), seed ^ 0x3),
        icache_fills_(std::min(p.l2_icache_req_q, p.l2_icache_resp_q)),
        prefetch_depth_(std::min(p.l2_icache_req_q, p.l2_icache_resp_q) / 8 - 1),
        tlb_walks_(p.tlb_miss_q),
        data_misses_(std::min({p.data_miss_q, p.l2_lsu_read_req_q, p.l2_lsu_read_resp_q, p.l2_l1_read_req_q})),
        writebacks_(std::min(p.eviction_q, p.l2_lsu_write_req_q)),
        memory_requests_(std::min(p.mem_req_q, p.biu_req_q)),
        bank_free_(std::max<std::uint64_t>(1, p.l2_banks), 0),
        bank_busy_(std::max<std::uint64_t>(1, 4 / std::max<std::uint64_t>(1, p.l2_rows_per_bank))) {}

  std::uint32_t l1i_latency() const { return l1i_lat_; }

  /// Returns when the line holding pc is available to the fetch buffer.
  std::uint64_t fetch(std::uint64_t pc, std::uint64_t t) {
    if (!itlb_.access(pc, false).hit) t += lat_.tlb_walk;
    if (icache_.access(pc, false).hit) return t + l1i_lat_;
    const std::uint64_t start = icache_fills_.acquire(t);
    const std::uint64_t done = l2_access(pc, start + l1i_lat_, false);
    icache_fills_.release_at(done);
    const std::uint64_t line = icache_.geometry().line_bytes;
    for (std::uint64_t k = 1; k <= prefetch_depth_; ++k) {
      const std::uint64_t next = (pc / line + k) * line;
      if (icache_.probe(next)) continue;
      icache_.install(next);
      l2_access(next, start + l1i_lat_, false);
    }
    return done;
  }

  /// Returns the cycle the data is available (loads) or accepted (stores).
  std::uint64_t data(std::uint64_t addr, std::uint64_t t, bool is_write) {
    if (!dtlb_.access(addr, false).hit) {
      const std::uint64_t s = tlb_walks_.acquire(t);
      tlb_walks_.release_at(s + lat_.tlb_walk);
      t = s + lat_.tlb_walk;
    }
    const CacheAccess a = dcache_.access(addr, is_write);
    if (a.hit) return t + l1d_lat_;
    if (a.evicted_dirty) {
      const std::uint64_t s = writebacks_.acquire(t);
      const std::uint64_t wb_done = l2_access(a.evicted_line * dcache_.geometry().line_bytes, s, true);
      writebacks_.release_at(wb_done);
      t = s;
    }
    const std::uint64_t start = data_misses_.acquire(t);
    const std::uint64_t done = l2_access(addr, start + l1d_lat_, false);
    data_misses_.release_at(done);
    return done;
  }

  /// Untimed versions of fetch() and data() for warm-up.
  void warm_fetch(std::uint64_t pc) {
    itlb_.access(pc, false);
    if (!icache_.access(pc, false).hit) warm_l2(pc, false);
  }
  void warm_data(std::uint64_t addr, bool is_write) {
    dtlb_.access(addr, false);
    const CacheAccess a = dcache_.access(addr, is_write);
    if (a.hit) return;
    if (a.evicted_dirty) warm_l2(a.evicted_line * dcache_.geometry().line_bytes, true);
    warm_l2(addr, false);
  }
  void reset_stats() {
    for (Cache* c : {&itlb_, &dtlb_, &icache_, &dcache_, &l2_, &l3_}) c->reset_stats();
  }

  const Cache& itlb() const { return itlb_; }
  const Cache& dtlb() const { return dtlb_; }
  const Cache& icache() const { return icache_; }
  const Cache& dcache() const { return dcache_; }
  const Cache& l2() const { return l2_; }
  const Cache& l3() const { return l3_; }

 private:
  void warm_l2(std::uint64_t addr, bool is_write) {
    if (!l2_.access(addr, is_write).hit) l3_.access(addr, false);
  }

  std::uint64_t l2_access(std::uint64_t addr, std::uint64_t t, bool is_write) {
    auto& bank = bank_free_[(addr / l2_.geometry().line_bytes) % bank_free_.size()];
    const std::uint64_t start = std::max(t, bank);
    bank = start + bank_busy_;
    if (l2_.access(addr, is_write).hit) return start + l2_lat_;
    const std::uint64_t s = memory_requests_.acquire(start + l2_lat_);
    const std::uint64_t done = s + (l3_.access(addr, false).hit ? l3_lat_ : l3_lat_ + lat_.memory);
    memory_requests_.release_at(done);
    return done;
  }

  LatencyTable lat_;
  std::uint32_t l1i_lat_, l1d_lat_, l2_lat_, l3_lat_;
  Cache itlb_, dtlb_, icache_, dcache_, l2_, l3_;
  Limiter icache_fills_;
  std::uint64_t prefetch_depth_;
  Limiter tlb_walks_, data_misses_, writebacks_, memory_requests_;
  std::vector<std::uint64_t> bank_free_;
  std::uint64_t bank_busy_;
};

struct Decoded {
  OpClass op = OpClass::Alu;
  BranchKind kind = BranchKind::None;
  bool float_dest = false;
  std::uint8_t rd = 0, rs1 = 0, rs2 = 0;  // 0 = none / x0
  std::uint32_t length = 4;
};

Decoded decode(const TraceRecord& r) {
  Decoded d;
  d.op = classify(r);
  d.kind = branch_kind(r);
  if (const auto* info = lookup_mnemonic(r.mnemonic)) d.float_dest = info->float_dest;
  d.rd = r.rd.value_or(0);
  d.rs1 = r.rs1.value_or(0);
  d.rs2 = r.rs2.value_or(0);
  d.length = r.flags.compressed ? 2 : 4;
  return d;
}

/// Register-file write slots per future cycle.
class WritePorts {
 public:
  explicit WritePorts(std::uint64_t ports) : ports_(ports) {}
  bool available(std::uint64_t cycle) const {
    const auto& s = slots_[cycle % slots_.size()];
    return s.cycle != cycle || s.used < ports_;
  }
  void take(std::uint64_t cycle) {
    auto& s = slots_[cycle % slots_.size()];
    if (s.cycle != cycle) s = {cycle, 0};
    ++s.used;
  }

 private:
  struct Slot {
    std::uint64_t cycle = ~0ull;
    std::uint64_t used = 0;
  };
  std::uint64_t ports_;
  std::array<Slot, 256> slots_{};
};

constexpr std::uint64_t kArchRegs = 32;

}  // namespace

SimStats simulate(const Chunk& chunk, const Configuration& config, const DesignSpace& space,
                  std::uint64_t seed, const LatencyTable& latency) {
  return simulate(chunk, MicroarchParams::from(config, space), seed, latency);
}

namespace {
std::atomic<std::uint64_t> g_simulations{0};
}  // namespace

std::uint64_t simulation_count() { return g_simulations.load(); }

SimStats simulate(const Chunk& chunk, const MicroarchParams& p, std::uint64_t seed, const LatencyTable& lat) {
  g_simulations.fetch_add(1, std::memory_order_relaxed);
  lat.validate();
  const std::size_t n = chunk.records.size();
  if (n == 0) throw ArgumentError("cannot simulate an empty chunk");

  std::vector<Decoded> ops(n);
  for (std::size_t i = 0; i < n; ++i) ops[i] = decode(chunk.records[i]);

  MemorySystem mem(p, lat, seed);
  BranchPredictor predictor(p.predictor);
  WritePorts write_ports(p.prf_write_ports);
  SimStats stats;

  std::uint64_t warm_line = ~0ull;
  for (const TraceRecord& r : chunk.warmup()) {
    if (r.pc / p.icache_line != warm_line) {
      mem.warm_fetch(r.pc);
      warm_line = r.pc / p.icache_line;
    }
    if (r.mem_addr) mem.warm_data(*r.mem_addr, r.flags.store);
    if (r.flags.branch) {
      const BranchQuery q{r.pc, branch_kind(r), r.pc + (r.flags.compressed ? 2u : 4u), *r.target};
      predictor.predict(q);
      predictor.update(q, *r.taken, *r.target);
      if (*r.taken) warm_line = ~0ull;
    }
  }
  mem.reset_stats();

  constexpr std::uint64_t kNever = ~0ull;
  std::vector<std::uint64_t> fetch_ready(n, kNever), decode_ready(n, kNever), dispatched_at(n, kNever),
      done(n, kNever);
  std::vector<std::int64_t> src1(n, -1), src2(n, -1);
  std::vector<std::uint8_t> issued(n, 0), mispredicted(n, 0);
  std::vector<std::size_t> scheduler;
  std::array<std::int64_t, kArchRegs> last_writer;
  last_writer.fill(-1);

  const std::uint64_t fetch_buffer = std::max<std::uint64_t>(1, p.fetch_queue_bytes / 4);
  const std::uint64_t dispatch_limit = std::min({p.rename_width, p.dispatch_count, p.dispatch_width});
  const std::uint64_t scheduler_cap = 4 * p.dispatch_queue_depth;
  const std::uint64_t int_regs = p.int_renames > kArchRegs ? p.int_renames - kArchRegs : 1;
  const std::uint64_t fp_regs = p.float_renames > kArchRegs ? p.float_renames - kArchRegs : 1;
  const std::uint64_t mem_ports = std::max<std::uint64_t>(1, p.lsu_bank_q / 4);

  std::size_t fetch_ptr = 0, decode_ptr = 0, dispatch_ptr = 0, retire_ptr = 0;
  std::uint64_t fetch_stall_until = 0;
  bool fetch_blocked = false;  // waiting on a mispredicted branch
  std::uint64_t current_line = kNever;
  std::uint64_t loads = 0, stores = 0, int_writers = 0, fp_writers = 0;
  std::uint64_t last_retire = 0;
  const std::uint64_t line_bytes = p.icache_line;
  const std::uint64_t cycle_limit = 1'000'000 + 20'000 * static_cast<std::uint64_t>(n);

  auto ready = [&](std::int64_t producer, std::uint64_t cycle) {
    return producer < 0 || (issued[static_cast<std::size_t>(producer)] && done[static_cast<std::size_t>(producer)] <= cycle);
  };

  for (std::uint64_t cycle = 0; retire_ptr < n; ++cycle) {
    if (cycle > cycle_limit) throw Error("simulation failed to drain the pipeline");

    // Retire, in order.
    for (std::uint64_t k = 0; k < p.retire_width && retire_ptr < dispatch_ptr; ++k) {
      const std::size_t i = retire_ptr;
      if (!issued[i] || done[i] > cycle) break;
      const Decoded& d = ops[i];
      if (d.op == OpClass::Load) --loads;
      if (d.op == OpClass::Store) --stores;
      if (d.rd) (d.float_dest ? fp_writers : int_writers)--;
      ++retire_ptr;
      last_retire = cycle;
    }

    // Issue, oldest first.
    std::uint64_t issued_now = 0, reads = 0, mem_now = 0;
    for (auto it = scheduler.begin(); it != scheduler.end() && issued_now < p.issue_width;) {
      const std::size_t i = *it;
      const Decoded& d = ops[i];
      if (dispatched_at[i] >= cycle || !ready(src1[i], cycle) || !ready(src2[i], cycle)) {
        ++it;
        continue;
      }
      const std::uint64_t operands = (d.rs1 ? 1 : 0) + (d.rs2 ? 1 : 0);
      const bool is_mem = d.op == OpClass::Load || d.op == OpClass::Store;
      if (reads + operands > p.prf_read_ports || (is_mem && mem_now >= mem_ports)) {
        ++it;
        continue;
      }
      std::uint64_t finish = cycle;
      switch (d.op) {
        case OpClass::Alu: finish += lat.alu; break;
        case OpClass::Mul: finish += lat.mul; break;
        case OpClass::Div: finish += lat.div; break;
        case OpClass::Fp: finish += lat.fp; break;
        case OpClass::Store: finish += lat.store; break;
        case OpClass::Branch: finish += lat.branch; break;
        case OpClass::Load: break;
      }
      const bool needs_port = d.rd && d.op != OpClass::Load;
      if (needs_port && !write_ports.available(finish)) {
        ++it;
        continue;
      }
      if (needs_port) write_ports.take(finish);
      const auto& rec = chunk.records[i];
      if (d.op == OpClass::Load) finish = mem.data(*rec.mem_addr, cycle, false);
      if (d.op == OpClass::Store) mem.data(*rec.mem_addr, cycle, true);
      if (d.op == OpClass::Branch) {
        const BranchQuery q{rec.pc, d.kind, rec.pc + d.length, *rec.target};
        predictor.update(q, *rec.taken, *rec.target);
        if (mispredicted[i]) {
          fetch_blocked = false;
          fetch_stall_until = std::max(fetch_stall_until, finish + lat.mispredict_flush_penalty);
          current_line = kNever;
        }
      }
      issued[i] = 1;
      done[i] = finish;
      reads += operands;
      if (is_mem) ++mem_now;
      ++issued_now;
      it = scheduler.erase(it);
    }

    // Rename + dispatch into the ROB and scheduler, in order.
    bool rob_stall = false, lsu_stall = false;
    for (std::uint64_t k = 0; k < dispatch_limit && dispatch_ptr < decode_ptr; ++k) {
      const std::size_t i = dispatch_ptr;
      const Decoded& d = ops[i];
      if (decode_ready[i] > cycle) break;
      if (dispatch_ptr - retire_ptr >= p.rob_depth) {
        rob_stall = true;
        break;
      }
      if (scheduler.size() >= scheduler_cap) break;
      if ((d.op == OpClass::Load && loads >= p.load_buffer) || (d.op == OpClass::Store && stores >= p.store_buffer)) {
        lsu_stall = true;
        break;
      }
      if (d.rd && (d.float_dest ? fp_writers >= fp_regs : int_writers >= int_regs)) break;
      if (d.rs1) src1[i] = last_writer[d.rs1];
      if (d.rs2) src2[i] = last_writer[d.rs2];
      if (d.rd) {
        last_writer[d.rd] = static_cast<std::int64_t>(i);
        (d.float_dest ? fp_writers : int_writers)++;
      }
      if (d.op == OpClass::Load) ++loads;
      if (d.op == OpClass::Store) ++stores;
      dispatched_at[i] = cycle;
      scheduler.push_back(i);
      ++dispatch_ptr;
    }
    if (rob_stall) ++stats[Counter::StallRobFull];
    if (lsu_stall) ++stats[Counter::StallLsuFull];

    // Decode from the fetch buffer into the decode queue.
    std::uint64_t decoded = 0;
    for (; decoded < p.decode_width && decode_ptr < fetch_ptr; ++decoded) {
      const std::size_t i = decode_ptr;
      if (fetch_ready[i] > cycle || decode_ptr - dispatch_ptr >= p.decode_queue) break;
      decode_ready[i] = cycle + 1;
      ++decode_ptr;
    }
    if (decoded == 0 && decode_ptr < n && (decode_ptr == fetch_ptr || fetch_ready[decode_ptr] > cycle))
      ++stats[Counter::StallFrontend];

    // Fetch sequential records; a group ends at a taken or mispredicted branch.
    if (!fetch_blocked && cycle >= fetch_stall_until) {
      for (std::uint64_t k = 0; k < p.fetch_width && fetch_ptr < n && fetch_ptr - decode_ptr < fetch_buffer; ++k) {
        const std::size_t i = fetch_ptr;
        const auto& rec = chunk.records[i];
        const std::uint64_t line = rec.pc / line_bytes;
        if (line != current_line) {
          const std::uint64_t avail = mem.fetch(rec.pc, cycle);
          current_line = line;
          if (avail > cycle + mem.l1i_latency()) {
            fetch_stall_until = avail - mem.l1i_latency();
            break;
          }
        }
        fetch_ready[i] = cycle + mem.l1i_latency();
        ++fetch_ptr;
        const Decoded& d = ops[i];
        if (d.op != OpClass::Branch) continue;
        const BranchQuery q{rec.pc, d.kind, rec.pc + d.length, *rec.target};
        const BranchPrediction pred = predictor.predict(q);
        const bool taken = *rec.taken;
        const bool correct = pred.taken == taken && (!taken || pred.target == rec.target);
        ++stats[correct ? Counter::BrCorrect : Counter::BrMispredict];
        if (!correct) {
          mispredicted[i] = 1;
          fetch_blocked = true;
          break;
        }
        if (taken) {
          current_line = kNever;
          break;
        }
      }
    }
  }

  stats[Counter::Instructions] = n;
  stats[Counter::Cycles] = last_retire + 1;
  stats[Counter::IcacheHits] = mem.icache().hits();
  stats[Counter::IcacheMisses] = mem.icache().misses();
  stats[Counter::DcacheHits] = mem.dcache().hits();
  stats[Counter::DcacheMisses] = mem.dcache().misses();
  stats[Counter::L2Hits] = mem.l2().hits();
  stats[Counter::L2Misses] = mem.l2().misses();
  stats[Counter::L3Hits] = mem.l3().hits();
  stats[Counter::L3Misses] = mem.l3().misses();
  stats[Counter::ItlbHits] = mem.itlb().hits();
  stats[Counter::ItlbMisses] = mem.itlb().misses();
  stats[Counter::DtlbHits] = mem.dtlb().hits();
  stats[Counter::DtlbMisses] = mem.dtlb().misses();
  return stats;
}

}  // namespace onedse
