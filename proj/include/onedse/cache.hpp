#pragma once

#include <cstdint>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "onedse/rng.hpp"

namespace onedse {

enum class Replacement { PLRU, LRU, RANDOM };

Replacement parse_replacement(std::string_view name);
std::string_view to_string(Replacement r);

struct CacheGeometry {
  std::uint64_t size_bytes = 32 * 1024;
  std::uint64_t line_bytes = 64;
  std::uint32_t associativity = 4;
  Replacement replacement = Replacement::LRU;
  std::uint32_t hit_latency = 1;
  std::uint32_t miss_penalty_next_level = 0;

  std::uint64_t sets() const { return size_bytes / (line_bytes * associativity); }
  /// Throws ValidationError unless all fields are positive and size divides evenly.
  void validate() const;
};

struct CacheAccess {
  bool hit = false;
  bool evicted_dirty = false;
  std::uint64_t evicted_line = 0;
};

/// Set-associative tag store. Sets are materialised on first touch so very
/// large caches cost memory only for the lines a run actually uses.
class Cache {
 public:
  explicit Cache(const CacheGeometry& geometry, std::uint64_t seed = 0);

  /// Looks up addr, allocating on miss (reads and writes alike).
  CacheAccess access(std::uint64_t addr, bool is_write);
  /// Tag check without any state change.
  bool probe(std::uint64_t addr) const;
  /// Installs a line without counting an access (used for prefetches).
  void install(std::uint64_t addr);

  const CacheGeometry& geometry() const { return geometry_; }
  std::uint64_t hits() const { return hits_; }
  std::uint64_t misses() const { return misses_; }
  std::uint64_t accesses() const { return hits_ + misses_; }
  void reset_stats() { hits_ = misses_ = 0; }

 private:
  struct Set {
    std::vector<std::uint64_t> tags;
    std::vector<std::uint64_t> stamps;
    std::vector<std::uint8_t> valid;
    std::vector<std::uint8_t> dirty;
    std::uint64_t plru = 0;  // tree bits; bit k is node k of a heap-ordered tree
  };

  Set& set_for(std::uint64_t line);
  CacheAccess fill(Set& set, std::uint64_t line, bool is_write);
  int victim(Set& set);
  void touch(Set& set, int way);

  CacheGeometry geometry_;
  std::uint64_t num_sets_;
  std::unordered_map<std::uint64_t, Set> sets_;
  std::uint64_t clock_ = 0;
  std::uint64_t hits_ = 0;
  std::uint64_t misses_ = 0;
  Rng rng_;
};

}  // namespace onedse
