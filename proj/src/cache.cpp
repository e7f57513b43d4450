#include "onedse/cache.hpp"

#include <bit>
#include <string>

#include "onedse/error.hpp"
#include "onedse/text.hpp"

namespace onedse {

Replacement parse_replacement(std::string_view name) {
  const auto n = text::lower(text::trim(name));
  if (n == "plru") return Replacement::PLRU;
  if (n == "lru") return Replacement::LRU;
  if (n == "random") return Replacement::RANDOM;
  throw ArgumentError("unknown replacement policy '" + std::string(name) + "'");
}

std::string_view to_string(Replacement r) {
  switch (r) {
    case Replacement::PLRU: return "PLRU";
    case Replacement::LRU: return "LRU";
    case Replacement::RANDOM: return "RANDOM";
  }
  return "?";
}

void CacheGeometry::validate() const {
  if (size_bytes == 0 || line_bytes == 0 || associativity == 0 || hit_latency == 0)
    throw ValidationError("cache geometry fields must be positive");
  if (size_bytes % (line_bytes * associativity) != 0)
    throw ValidationError("cache size must be divisible by line size x associativity");
  if (replacement == Replacement::PLRU && !std::has_single_bit(associativity))
    throw ValidationError("PLRU requires a power-of-two associativity");
}

Cache::Cache(const CacheGeometry& geometry, std::uint64_t seed)
    : geometry_(geometry), num_sets_(0), rng_(seed) {
  geometry_.validate();
  num_sets_ = geometry_.sets();
}

Cache::Set& Cache::set_for(std::uint64_t line) {
  auto [it, inserted] = sets_.try_emplace(line % num_sets_);
  if (inserted) {
    const auto ways = geometry_.associativity;
    it->second.tags.assign(ways, 0);
    it->second.stamps.assign(ways, 0);
    it->second.valid.assign(ways, 0);
    it->second.dirty.assign(ways, 0);
  }
  return it->second;
}

bool Cache::probe(std::uint64_t addr) const {
  const std::uint64_t line = addr / geometry_.line_bytes;
  const auto it = sets_.find(line % num_sets_);
  if (it == sets_.end()) return false;
  const std::uint64_t tag = line / num_sets_;
  for (std::size_t w = 0; w < it->second.tags.size(); ++w)
    if (it->second.valid[w] && it->second.tags[w] == tag) return true;
  return false;
}

void Cache::touch(Set& set, int way) {
  set.stamps[static_cast<std::size_t>(way)] = ++clock_;
  if (geometry_.replacement == Replacement::PLRU && geometry_.associativity > 1) {
    // Walk root to leaf, pointing each node away from the touched way.
    const unsigned levels = std::countr_zero(geometry_.associativity);
    unsigned node = 0;
    for (unsigned l = 0; l < levels; ++l) {
      const unsigned bit = (static_cast<unsigned>(way) >> (levels - 1 - l)) & 1u;
      if (bit) set.plru &= ~(std::uint64_t{1} << node);
      else set.plru |= (std::uint64_t{1} << node);
      node = 2 * node + 1 + bit;
    }
  }
}

int Cache::victim(Set& set) {
  const int ways = static_cast<int>(geometry_.associativity);
  for (int w = 0; w < ways; ++w)
    if (!set.valid[static_cast<std::size_t>(w)]) return w;
  switch (geometry_.replacement) {
    case Replacement::LRU: {
      int best = 0;
      for (int w = 1; w < ways; ++w)
        if (set.stamps[static_cast<std::size_t>(w)] < set.stamps[static_cast<std::size_t>(best)]) best = w;
      return best;
    }
    case Replacement::PLRU: {
      if (ways == 1) return 0;
      const unsigned levels = std::countr_zero(geometry_.associativity);
      unsigned node = 0, way = 0;
      for (unsigned l = 0; l < levels; ++l) {
        const unsigned bit = (set.plru >> node) & 1u;  // 1 = go right
        way = (way << 1) | bit;
        node = 2 * node + 1 + bit;
      }
      return static_cast<int>(way);
    }
    case Replacement::RANDOM:
      return rng_.below(ways);
  }
  return 0;
}

CacheAccess Cache::fill(Set& set, std::uint64_t line, bool is_write) {
  CacheAccess result;
  const int w = victim(set);
  const auto uw = static_cast<std::size_t>(w);
  if (set.valid[uw] && set.dirty[uw]) {
    result.evicted_dirty = true;
    result.evicted_line = set.tags[uw] * num_sets_ + (line % num_sets_);
  }
  set.tags[uw] = line / num_sets_;
  set.valid[uw] = 1;
  set.dirty[uw] = is_write ? 1 : 0;
  touch(set, w);
  return result;
}

CacheAccess Cache::access(std::uint64_t addr, bool is_write) {
  const std::uint64_t line = addr / geometry_.line_bytes;
  Set& set = set_for(line);
  const std::uint64_t tag = line / num_sets_;
  for (std::size_t w = 0; w < set.tags.size(); ++w) {
    if (set.valid[w] && set.tags[w] == tag) {
      ++hits_;
      if (is_write) set.dirty[w] = 1;
      touch(set, static_cast<int>(w));
      return CacheAccess{true, false, 0};
    }
  }
  ++misses_;
  return fill(set, line, is_write);
}

void Cache::install(std::uint64_t addr) {
  if (probe(addr)) return;
  const std::uint64_t line = addr / geometry_.line_bytes;
  fill(set_for(line), line, false);
}

}  // namespace onedse
