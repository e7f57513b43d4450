#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "onedse/rng.hpp"

namespace onedse {

enum class Subsystem { Imem, Dmem, Core, Branch };

inline constexpr Subsystem kSubsystems[] = {Subsystem::Imem, Subsystem::Dmem, Subsystem::Core,
                                            Subsystem::Branch};

std::string_view to_string(Subsystem s);
/// Case-insensitive; throws ArgumentError on an unknown tag.
Subsystem parse_subsystem(std::string_view tag);

/// One discrete CPU parameter. Values are kept as their source labels
/// ("32", "0x10000", "PLRU"); numeric lists are strictly increasing.
struct ParamSpec {
  std::string name;
  Subsystem subsystem = Subsystem::Core;
  std::vector<std::string> labels;
  bool symbolic = false;

  std::size_t size() const { return labels.size(); }
  /// Numeric value of a rank; symbolic parameters return the rank itself.
  double numeric(int rank) const;
  /// Rank of a label, matching numerically for numeric parameters.
  std::optional<int> rank_of(std::string_view label) const;

  friend bool operator==(const ParamSpec&, const ParamSpec&) = default;
};

/// A point in a design space, stored as one rank per parameter.
struct Configuration {
  std::vector<int> ranks;

  std::size_t size() const { return ranks.size(); }
  friend bool operator==(const Configuration&, const Configuration&) = default;
  friend auto operator<=>(const Configuration&, const Configuration&) = default;
};

class DesignSpace {
 public:
  DesignSpace() = default;
  /// Validates names, value lists and ordering.
  explicit DesignSpace(std::vector<ParamSpec> params);

  /// The built-in 68-parameter catalog.
  static const DesignSpace& builtin();
  /// Parses `name | subsystem | v1,v2,...` lines; `[section]` and `#` lines are ignored.
  static DesignSpace parse(std::string_view text);
  std::string serialize() const;

  std::size_t size() const { return params_.size(); }
  const ParamSpec& operator[](std::size_t i) const { return params_[i]; }
  std::span<const ParamSpec> params() const { return params_; }
  std::optional<std::size_t> index_of(std::string_view name) const;
  std::size_t require_index(std::string_view name) const;

  /// Number of configurations, saturating at UINT64_MAX.
  std::uint64_t cardinality() const;
  std::uint64_t fingerprint() const;

  bool valid(const Configuration& config) const;
  /// Throws ValidationError naming the first offending parameter.
  void check(const Configuration& config) const;

  friend bool operator==(const DesignSpace& a, const DesignSpace& b) { return a.params_ == b.params_; }

 private:
  std::vector<ParamSpec> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

DesignSpace load_design_space(const std::string& path);

Configuration rank_encode(std::span<const std::string> values, const DesignSpace& space);
std::vector<std::string> rank_decode(const Configuration& config, const DesignSpace& space);

/// rank_i / (|values_i| - 1); single-valued parameters map to 0.
std::vector<double> normalize(const Configuration& config, const DesignSpace& space);

/// Each rank uniform over its value list, independent across parameters.
Configuration sample_config(const DesignSpace& space, Rng& rng);

/// Parameters owned by one subsystem, in catalog order.
DesignSpace subsystem_subset(const DesignSpace& space, Subsystem tag);
DesignSpace subsystem_subset(const DesignSpace& space, std::string_view tag);

/// Subset by parameter names, in catalog order.
DesignSpace select_params(const DesignSpace& space, std::span<const std::string> names);

/// Indices of the subset's parameters inside `space`.
std::vector<std::size_t> subset_indices(const DesignSpace& space, const DesignSpace& subset);

/// Projects a full configuration onto a subset.
Configuration project(const Configuration& full, const DesignSpace& space, const DesignSpace& subset);
/// Writes the subset's ranks into a copy of `base`.
Configuration embed(const Configuration& base, const DesignSpace& space, const DesignSpace& subset,
                    const Configuration& part);

/// Mid-list rank ((n-1)/2) for every parameter.
Configuration middle_config(const DesignSpace& space);

}  // namespace onedse
