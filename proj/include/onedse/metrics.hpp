#pragma once

#include <array>
#include <map>
#include <string>
#include <string_view>

#include "onedse/design_space.hpp"
#include "onedse/simulator.hpp"

namespace onedse {

enum class Metric { Ipc, Power, Objective };

std::string_view to_string(Metric m);
Metric parse_metric(std::string_view name);

/// Per-event energy proxies, indexed by Counter.
struct PowerWeights {
  std::array<double, kCounterCount> w{};

  double& operator[](Counter c) { return w[static_cast<std::size_t>(c)]; }
  double operator[](Counter c) const { return w[static_cast<std::size_t>(c)]; }
  static PowerWeights defaults();
  void validate() const;
};

/// Relative size per parameter name plus a constant base term.
struct AreaWeights {
  std::map<std::string, double, std::less<>> w;
  double base = 0.05;

  double weight(std::string_view name) const;
  static AreaWeights defaults();
  void validate() const;
};

struct Weights {
  PowerWeights power = PowerWeights::defaults();
  AreaWeights area = AreaWeights::defaults();
};

/// `counter_or_param = weight` lines (`area_base = x` sets the constant).
/// Entries override the defaults; unknown names are an error when `space` is given.
Weights parse_weights(std::string_view text, const DesignSpace* space = nullptr);
Weights load_weights(const std::string& path, const DesignSpace* space = nullptr);
std::string format_weights(const Weights& weights);
std::uint64_t fingerprint(const Weights& weights);

struct MetricVector {
  double ipc = 0;
  double power = 0;
  double area = 0;
  double ipc_per_area = 0;

  double get(Metric m) const;
  friend bool operator==(const MetricVector&, const MetricVector&) = default;
};

double compute_ipc(const SimStats& stats);
/// Unnormalised Σ w_c · stats_c.
double weighted_activity(const SimStats& stats, const PowerWeights& weights);
/// weighted_activity / instructions (0 for an empty run).
double estimate_power(const SimStats& stats, const PowerWeights& weights);
double estimate_area(const Configuration& config, const DesignSpace& space, const AreaWeights& weights);
double objective(const SimStats& stats, const Configuration& config, const DesignSpace& space,
                 const AreaWeights& weights);
MetricVector compute_metrics(const SimStats& stats, const Configuration& config, const DesignSpace& space,
                             const Weights& weights);

}  // namespace onedse
