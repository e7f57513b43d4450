#include "onedse/design_space.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

#include "onedse/error.hpp"
#include "onedse/text.hpp"

namespace onedse {

namespace {

// Dual-listed L2/L3 rows (instruction and data side) are owned by Dmem so the
// four subsystem subsets stay disjoint.
constexpr std::string_view kBuiltinCatalog = R"(
[Imem]
immu/il2mmu tlb page size (kb)          | imem   | 4,8,16,1024,1048576
immu/il2mmu tlb num entries             | imem   | 8,16,32,64
immu/il2mmu tlb associativity           | imem   | 1,2,4,8
icache line size                        | imem   | 32,64
icache size (kb)                        | imem   | 32,64,128,256,512,1024
icache associativity                    | imem   | 2,4,8,16
fetch-icache queue size (bytes)         | imem   | 64,128,256,512,1024

[Dmem]
l2 cache line size                      | dmem   | 32,64,128,256,512
l2 cache size (kb)                      | dmem   | 512,1024,2048,4096,8192
l2 cache associativity                  | dmem   | 1,2,4,8,16,32
l2 cache replacement policy             | dmem   | PLRU,LRU,RANDOM
l2-icache request queue size            | dmem   | 8,16,32,64
l2-icache response queue size           | dmem   | 8,16,32,64
l3 cache line size                      | dmem   | 32,64,128,256,512
l3 cache size (kb)                      | dmem   | 16384,32768,65536,131072
l3 cache associativity                  | dmem   | 1,2,4,8,16,32,64
l3 cache replacement policy             | dmem   | PLRU,LRU,RANDOM
dcache line size                        | dmem   | 16,32,64,128,256
dcache size (kb)                        | dmem   | 32,64,128,256,512,1024
dcache associativity                    | dmem   | 2,4,8,16
dcache replacement policy               | dmem   | PLRU,LRU,RANDOM
dmmu/dl2mmu tlb page size (kb)          | dmem   | 4,8,16,1024,1048576
dmmu/dl2mmu tlb num entries             | dmem   | 8,16,32,64
dmmu/dl2mmu tlb associativity           | dmem   | 1,2,4,8
lsu data bank queue size                | dmem   | 4,8,16,32,64
lsu load buffer queue size              | dmem   | 32,64,128
lsu store buffer queue size             | dmem   | 32,64,128
lsu tlb miss queue size                 | dmem   | 2,4,8,16,32,64,128,256
lsu memory request queue size           | dmem   | 4,8,16,32,64,128
lsu data miss queue size                | dmem   | 4,8,16,32,64,128
lsu data eviction queue size            | dmem   | 2,4,8,16
l2-lsu read request queue size          | dmem   | 8,16,32,64
l2-lsu write request queue size         | dmem   | 8,16,32,64
l2-lsu read response queue size         | dmem   | 8,16,32,64
l2-l1 pipe read request queue size      | dmem   | 8,16,32,64
l2 no. of banks                         | dmem   | 8,16,32,64
l2 no. of rows per bank                 | dmem   | 1,2,4

[Core]
issue width                             | core   | 4,8,12,16
dispatch width                          | core   | 4,8,12,16
physical register file write ports      | core   | 8,12,16
physical register file read ports       | core   | 16,32,64,128
no. to fetch                            | core   | 8,16,32,64
no. to decode                           | core   | 8,16,32,64
decode: scalar instruction queue size   | core   | 8,16,32,64,128
no. to rename                           | core   | 8,16,32,64
no. of integer renames                  | core   | 128,160,192,224,256
no. of float renames                    | core   | 128,160,192,224,256
no. to dispatch                         | core   | 8,16,32,64
dispatch queue depth                    | core   | 4,8,10,16,32
bus interface unit request queue size   | core   | 4,8,16,32,64,128
reorder buffer no. to retire            | core   | 8,16,32,64,128
reorder buffer retire queue depth       | core   | 128,192,256,384,512

[Branch]
loop predictor (lpred) no. of entries   | branch | 64,128,256,512,1024,2048
lpred associativity                     | branch | 2,4
lpred max age                           | branch | 15,31,63,127
lpred no. of loop iterations max        | branch | 32,64,128,256,512,1024
tage instruction shift amount           | branch | 0,1,2,3,4,5,6,7
tage history buffer size                | branch | 128,256,512,768,1024,2048
tage initial reset timer value          | branch | 0x10000,0x100000,0x1000000
tage path history bits                  | branch | 32,48,64
tage table tag widths x16               | branch | 9,10,11,12,13,14,15,16,17
ittage path history bits                | branch | 32,48,64
ittage initial reset timer value        | branch | 0x10000,0x100000,0x1000000
ittage table tag widths x16             | branch | 8,9,10,11,12,13,14,15
branch target buffer (btb) granularity  | branch | 2,4
btb total entries                       | branch | 4096,8192,16384,32768
btb associativity                       | branch | 2,4,8
btb raas size                           | branch | 32,64,128,256
)";

}  // namespace

std::string_view to_string(Subsystem s) {
  switch (s) {
    case Subsystem::Imem: return "imem";
    case Subsystem::Dmem: return "dmem";
    case Subsystem::Core: return "core";
    case Subsystem::Branch: return "branch";
  }
  return "?";
}

Subsystem parse_subsystem(std::string_view tag) {
  const auto t = text::lower(text::trim(tag));
  if (t == "imem") return Subsystem::Imem;
  if (t == "dmem") return Subsystem::Dmem;
  if (t == "core") return Subsystem::Core;
  if (t == "branch") return Subsystem::Branch;
  throw ArgumentError("unknown subsystem tag '" + std::string(tag) + "'");
}

double ParamSpec::numeric(int rank) const {
  if (rank < 0 || static_cast<std::size_t>(rank) >= labels.size())
    throw ValidationError(name + ": rank " + std::to_string(rank) + " out of bounds");
  if (symbolic) return rank;
  double v = 0;
  text::parse_double(labels[static_cast<std::size_t>(rank)], v);
  return v;
}

std::optional<int> ParamSpec::rank_of(std::string_view label) const {
  const auto t = text::trim(label);
  double want = 0;
  const bool want_numeric = !symbolic && text::parse_double(t, want);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == t) return static_cast<int>(i);
    if (want_numeric && numeric(static_cast<int>(i)) == want) return static_cast<int>(i);
  }
  return std::nullopt;
}

DesignSpace::DesignSpace(std::vector<ParamSpec> params) : params_(std::move(params)) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (p.name.empty()) throw ValidationError("parameter with empty name");
    if (p.labels.empty()) throw ValidationError(p.name + ": empty value list");
    if (!index_.emplace(p.name, i).second) throw ValidationError("duplicate parameter '" + p.name + "'");
    std::vector<double> nums;
    bool all_numeric = true;
    for (const auto& l : p.labels) {
      double v = 0;
      if (!text::parse_double(l, v)) {
        all_numeric = false;
        break;
      }
      nums.push_back(v);
    }
    p.symbolic = !all_numeric;
    if (all_numeric) {
      for (std::size_t k = 1; k < nums.size(); ++k)
        if (!(nums[k] > nums[k - 1]))
          throw ValidationError(p.name + ": numeric values must be strictly increasing");
    } else {
      auto sorted = p.labels;
      std::sort(sorted.begin(), sorted.end());
      if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw ValidationError(p.name + ": duplicate symbolic value");
    }
  }
}

const DesignSpace& DesignSpace::builtin() {
  static const DesignSpace space = parse(kBuiltinCatalog);
  return space;
}

DesignSpace DesignSpace::parse(std::string_view text_in) {
  std::vector<ParamSpec> params;
  std::size_t lineno = 0;
  for (auto raw : text::split(text_in, '\n')) {
    ++lineno;
    const auto line = text::trim(text::strip_comment(raw));
    if (line.empty() || line.front() == '[') continue;
    const auto fields = text::split(line, '|');
    if (fields.size() != 3) throw ParseError(lineno, "expected 'name | subsystem | v1,v2,...'");
    ParamSpec p;
    p.name = std::string(text::trim(fields[0]));
    try {
      p.subsystem = parse_subsystem(fields[1]);
    } catch (const ArgumentError& e) {
      throw ValidationError("line " + std::to_string(lineno) + ": " + e.what());
    }
    const auto values = text::trim(fields[2]);
    if (!values.empty())
      for (auto v : text::split(values, ',')) {
        const auto t = text::trim(v);
        if (t.empty()) throw ParseError(lineno, p.name + ": empty value in list");
        p.labels.emplace_back(t);
      }
    params.push_back(std::move(p));
  }
  return DesignSpace(std::move(params));
}

std::string DesignSpace::serialize() const {
  std::ostringstream os;
  for (Subsystem s : kSubsystems) {
    bool header = false;
    for (const auto& p : params_) {
      if (p.subsystem != s) continue;
      if (!header) {
        os << '[' << to_string(s) << "]\n";
        header = true;
      }
      os << p.name << " | " << to_string(p.subsystem) << " | ";
      for (std::size_t i = 0; i < p.labels.size(); ++i) os << (i ? "," : "") << p.labels[i];
      os << '\n';
    }
  }
  return os.str();
}

std::optional<std::size_t> DesignSpace::index_of(std::string_view name) const {
  const auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t DesignSpace::require_index(std::string_view name) const {
  if (auto i = index_of(name)) return *i;
  throw ArgumentError("unknown parameter '" + std::string(name) + "'");
}

std::uint64_t DesignSpace::cardinality() const {
  std::uint64_t n = 1;
  for (const auto& p : params_) {
    if (n > std::numeric_limits<std::uint64_t>::max() / p.size()) return std::numeric_limits<std::uint64_t>::max();
    n *= p.size();
  }
  return n;
}

std::uint64_t DesignSpace::fingerprint() const {
  // Parameter order matters, so hash the canonical per-line form in order.
  std::string canon;
  for (const auto& p : params_) {
    canon += p.name + "|" + std::string(to_string(p.subsystem)) + "|";
    for (const auto& l : p.labels) canon += l + ",";
    canon += "\n";
  }
  return text::fnv1a(canon);
}

bool DesignSpace::valid(const Configuration& config) const {
  if (config.size() != params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (config.ranks[i] < 0 || static_cast<std::size_t>(config.ranks[i]) >= params_[i].size()) return false;
  return true;
}

void DesignSpace::check(const Configuration& config) const {
  if (config.size() != params_.size())
    throw ValidationError("configuration has " + std::to_string(config.size()) + " ranks, space has " +
                          std::to_string(params_.size()) + " parameters");
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (config.ranks[i] < 0 || static_cast<std::size_t>(config.ranks[i]) >= params_[i].size())
      throw ValidationError(params_[i].name + ": rank " + std::to_string(config.ranks[i]) +
                            " out of bounds [0, " + std::to_string(params_[i].size()) + ")");
}

DesignSpace load_design_space(const std::string& path) { return DesignSpace::parse(text::read_file(path)); }

Configuration rank_encode(std::span<const std::string> values, const DesignSpace& space) {
  if (values.size() != space.size())
    throw ValidationError("expected " + std::to_string(space.size()) + " values, got " +
                          std::to_string(values.size()));
  Configuration c;
  c.ranks.reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto r = space[i].rank_of(values[i]);
    if (!r) throw ValidationError(space[i].name + ": value '" + values[i] + "' not in value list");
    c.ranks.push_back(*r);
  }
  return c;
}

std::vector<std::string> rank_decode(const Configuration& config, const DesignSpace& space) {
  space.check(config);
  std::vector<std::string> out;
  out.reserve(config.size());
  for (std::size_t i = 0; i < config.size(); ++i) out.push_back(space[i].labels[static_cast<std::size_t>(config.ranks[i])]);
  return out;
}

std::vector<double> normalize(const Configuration& config, const DesignSpace& space) {
  space.check(config);
  std::vector<double> out(config.size(), 0.0);
  for (std::size_t i = 0; i < config.size(); ++i) {
    const std::size_t n = space[i].size();
    if (n > 1) out[i] = static_cast<double>(config.ranks[i]) / static_cast<double>(n - 1);
  }
  return out;
}

Configuration sample_config(const DesignSpace& space, Rng& rng) {
  Configuration c;
  c.ranks.reserve(space.size());
  for (const auto& p : space.params()) c.ranks.push_back(rng.below(static_cast<int>(p.size())));
  return c;
}

DesignSpace subsystem_subset(const DesignSpace& space, Subsystem tag) {
  std::vector<ParamSpec> out;
  for (const auto& p : space.params())
    if (p.subsystem == tag) out.push_back(p);
  return DesignSpace(std::move(out));
}

DesignSpace subsystem_subset(const DesignSpace& space, std::string_view tag) {
  return subsystem_subset(space, parse_subsystem(tag));
}

DesignSpace select_params(const DesignSpace& space, std::span<const std::string> names) {
  std::vector<bool> keep(space.size(), false);
  for (const auto& n : names) keep[space.require_index(n)] = true;
  std::vector<ParamSpec> out;
  for (std::size_t i = 0; i < space.size(); ++i)
    if (keep[i]) out.push_back(space[i]);
  return DesignSpace(std::move(out));
}

std::vector<std::size_t> subset_indices(const DesignSpace& space, const DesignSpace& subset) {
  std::vector<std::size_t> idx;
  idx.reserve(subset.size());
  for (const auto& p : subset.params()) {
    const auto i = space.require_index(p.name);
    if (!(space[i] == p)) throw ValidationError(p.name + ": subset definition differs from space");
    idx.push_back(i);
  }
  return idx;
}

Configuration project(const Configuration& full, const DesignSpace& space, const DesignSpace& subset) {
  space.check(full);
  Configuration out;
  for (auto i : subset_indices(space, subset)) out.ranks.push_back(full.ranks[i]);
  return out;
}

Configuration embed(const Configuration& base, const DesignSpace& space, const DesignSpace& subset,
                    const Configuration& part) {
  space.check(base);
  subset.check(part);
  Configuration out = base;
  const auto idx = subset_indices(space, subset);
  for (std::size_t k = 0; k < idx.size(); ++k) out.ranks[idx[k]] = part.ranks[k];
  return out;
}

Configuration middle_config(const DesignSpace& space) {
  Configuration c;
  for (const auto& p : space.params()) c.ranks.push_back(static_cast<int>((p.size() - 1) / 2));
  return c;
}

}  // namespace onedse
