#include "onedse/metrics.hpp"

#include <cmath>
#include <sstream>

#include "onedse/error.hpp"
#include "onedse/text.hpp"

namespace onedse {

std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::Ipc: return "ipc";
    case Metric::Power: return "power";
    case Metric::Objective: return "objective";
  }
  return "?";
}

Metric parse_metric(std::string_view name) {
  const std::string n = text::lower(text::trim(name));
  if (n == "ipc") return Metric::Ipc;
  if (n == "power") return Metric::Power;
  if (n == "objective" || n == "ipc_per_area") return Metric::Objective;
  throw ArgumentError("unknown metric '" + std::string(name) + "' (expected ipc, power or objective)");
}

PowerWeights PowerWeights::defaults() {
  PowerWeights p;
  p[Counter::Instructions] = 1.0;
  p[Counter::Cycles] = 0.3;
  p[Counter::IcacheHits] = 0.5;
  p[Counter::IcacheMisses] = 5.0;
  p[Counter::DcacheHits] = 0.6;
  p[Counter::DcacheMisses] = 6.0;
  p[Counter::L2Hits] = 2.0;
  p[Counter::L2Misses] = 20.0;
  p[Counter::L3Hits] = 5.0;
  p[Counter::L3Misses] = 50.0;
  p[Counter::ItlbHits] = 0.1;
  p[Counter::ItlbMisses] = 1.0;
  p[Counter::DtlbHits] = 0.1;
  p[Counter::DtlbMisses] = 1.0;
  p[Counter::BrCorrect] = 0.2;
  p[Counter::BrMispredict] = 2.0;
  p[Counter::StallFrontend] = 0.05;
  p[Counter::StallRobFull] = 0.05;
  p[Counter::StallLsuFull] = 0.05;
  return p;
}

void PowerWeights::validate() const {
  bool any = false;
  for (double v : w) {
    if (!(v >= 0) || !std::isfinite(v)) throw ValidationError("power weights must be finite and >= 0");
    any = any || v > 0;
  }
  if (!any) throw ValidationError("at least one power weight must be positive");
}

double AreaWeights::weight(std::string_view name) const {
  auto it = w.find(name);
  return it == w.end() ? 0.0 : it->second;
}

namespace {

// Largest contribution of each parameter to the area proxy (at its top value).
// Storage arrays dominate, then datapath width, then queues and predictor knobs.
constexpr std::pair<std::string_view, double> kAreaShare[] = {
    {"immu/il2mmu tlb page size (kb)", 0.002},
    {"immu/il2mmu tlb num entries", 0.02},
    {"immu/il2mmu tlb associativity", 0.01},
    {"icache line size", 0.01},
    {"icache size (kb)", 0.3},
    {"icache associativity", 0.04},
    {"fetch-icache queue size (bytes)", 0.05},
    {"l2 cache line size", 0.01},
    {"l2 cache size (kb)", 0.4},
    {"l2 cache associativity", 0.04},
    {"l2 cache replacement policy", 0.01},
    {"l2-icache request queue size", 0.02},
    {"l2-icache response queue size", 0.02},
    {"l3 cache line size", 0.01},
    {"l3 cache size (kb)", 0.6},
    {"l3 cache associativity", 0.04},
    {"l3 cache replacement policy", 0.01},
    {"dcache line size", 0.01},
    {"dcache size (kb)", 0.3},
    {"dcache associativity", 0.04},
    {"dcache replacement policy", 0.01},
    {"dmmu/dl2mmu tlb page size (kb)", 0.002},
    {"dmmu/dl2mmu tlb num entries", 0.02},
    {"dmmu/dl2mmu tlb associativity", 0.01},
    {"lsu data bank queue size", 0.02},
    {"lsu load buffer queue size", 0.04},
    {"lsu store buffer queue size", 0.04},
    {"lsu tlb miss queue size", 0.02},
    {"lsu memory request queue size", 0.02},
    {"lsu data miss queue size", 0.03},
    {"lsu data eviction queue size", 0.01},
    {"l2-lsu read request queue size", 0.02},
    {"l2-lsu write request queue size", 0.02},
    {"l2-lsu read response queue size", 0.02},
    {"l2-l1 pipe read request queue size", 0.02},
    {"l2 no. of banks", 0.03},
    {"l2 no. of rows per bank", 0.01},
    {"issue width", 0.12},
    {"dispatch width", 0.08},
    {"physical register file write ports", 0.06},
    {"physical register file read ports", 0.08},
    {"no. to fetch", 0.04},
    {"no. to decode", 0.04},
    {"decode: scalar instruction queue size", 0.03},
    {"no. to rename", 0.04},
    {"no. of integer renames", 0.1},
    {"no. of float renames", 0.08},
    {"no. to dispatch", 0.04},
    {"dispatch queue depth", 0.03},
    {"bus interface unit request queue size", 0.02},
    {"reorder buffer no. to retire", 0.04},
    {"reorder buffer retire queue depth", 0.12},
    {"loop predictor (lpred) no. of entries", 0.03},
    {"lpred associativity", 0.005},
    {"lpred max age", 0.003},
    {"lpred no. of loop iterations max", 0.005},
    {"tage instruction shift amount", 0.002},
    {"tage history buffer size", 0.04},
    {"tage initial reset timer value", 0.002},
    {"tage path history bits", 0.005},
    {"tage table tag widths x16", 0.02},
    {"ittage path history bits", 0.005},
    {"ittage initial reset timer value", 0.002},
    {"ittage table tag widths x16", 0.015},
    {"branch target buffer (btb) granularity", 0.003},
    {"btb total entries", 0.08},
    {"btb associativity", 0.01},
    {"btb raas size", 0.01},
};

}  // namespace

AreaWeights AreaWeights::defaults() {
  AreaWeights a;
  const auto& space = DesignSpace::builtin();
  for (const auto& [name, share] : kAreaShare) {
    const auto& p = space[space.require_index(name)];
    a.w.emplace(std::string(name), share / p.numeric(static_cast<int>(p.size() - 1)));
  }
  return a;
}

void AreaWeights::validate() const {
  if (!(base > 0) || !std::isfinite(base)) throw ValidationError("area base term must be finite and > 0");
  for (const auto& [name, v] : w)
    if (!(v >= 0) || !std::isfinite(v)) throw ValidationError("area weight for '" + name + "' must be >= 0");
}

Weights parse_weights(std::string_view content, const DesignSpace* space) {
  Weights out;
  int line_no = 0;
  for (auto line : text::split(content, '\n')) {
    ++line_no;
    line = text::trim(text::strip_comment(line));
    if (line.empty()) continue;
    const auto eq = line.rfind('=');
    if (eq == std::string_view::npos) throw ParseError(line_no, "expected 'name = weight'");
    const std::string name(text::trim(line.substr(0, eq)));
    double v = 0;
    if (!text::parse_double(text::trim(line.substr(eq + 1)), v)) throw ParseError(line_no, "bad weight value");
    if (name == "area_base") {
      out.area.base = v;
    } else if (auto c = counter_from_name(name)) {
      out.power[*c] = v;
    } else if (!space || space->index_of(name) || DesignSpace::builtin().index_of(name)) {
      out.area.w[name] = v;
    } else {
      throw ParseError(line_no, "unknown counter or parameter '" + name + "'");
    }
  }
  out.power.validate();
  out.area.validate();
  return out;
}

Weights load_weights(const std::string& path, const DesignSpace* space) {
  return parse_weights(text::read_file(path), space);
}

std::string format_weights(const Weights& weights) {
  std::ostringstream os;
  os << "# power: per-event weights, summed then divided by instructions\n";
  for (std::size_t i = 0; i < kCounterCount; ++i)
    os << kCounterNames[i] << " = " << text::format_double(weights.power.w[i]) << '\n';
  os << "# area: base + sum of weight * parameter value (symbolic parameters use their rank)\n";
  os << "area_base = " << text::format_double(weights.area.base) << '\n';
  for (const auto& [name, v] : weights.area.w) os << name << " = " << text::format_double(v) << '\n';
  return os.str();
}

std::uint64_t fingerprint(const Weights& weights) { return text::fnv1a(format_weights(weights)); }

double MetricVector::get(Metric m) const {
  switch (m) {
    case Metric::Ipc: return ipc;
    case Metric::Power: return power;
    case Metric::Objective: return ipc_per_area;
  }
  return 0;
}

double compute_ipc(const SimStats& stats) {
  if (stats[Counter::Instructions] == 0) return 0.0;
  if (stats[Counter::Cycles] == 0) throw ValidationError("IPC undefined: zero cycles");
  return static_cast<double>(stats[Counter::Instructions]) / static_cast<double>(stats[Counter::Cycles]);
}

double weighted_activity(const SimStats& stats, const PowerWeights& weights) {
  double sum = 0;
  for (std::size_t i = 0; i < kCounterCount; ++i) sum += weights.w[i] * static_cast<double>(stats.counts[i]);
  return sum;
}

double estimate_power(const SimStats& stats, const PowerWeights& weights) {
  const auto n = stats[Counter::Instructions];
  return n == 0 ? 0.0 : weighted_activity(stats, weights) / static_cast<double>(n);
}

double estimate_area(const Configuration& config, const DesignSpace& space, const AreaWeights& weights) {
  space.check(config);
  double area = weights.base;
  for (std::size_t i = 0; i < space.size(); ++i)
    area += weights.weight(space[i].name) * space[i].numeric(config.ranks[i]);
  return area;
}

double objective(const SimStats& stats, const Configuration& config, const DesignSpace& space,
                 const AreaWeights& weights) {
  const double area = estimate_area(config, space, weights);
  if (!(area > 0)) throw ValidationError("area must be positive");
  return compute_ipc(stats) / area;
}

MetricVector compute_metrics(const SimStats& stats, const Configuration& config, const DesignSpace& space,
                             const Weights& weights) {
  MetricVector m;
  m.ipc = compute_ipc(stats);
  m.power = estimate_power(stats, weights.power);
  m.area = estimate_area(config, space, weights.area);
  m.ipc_per_area = m.ipc / m.area;
  return m;
}

}  // namespace onedse
