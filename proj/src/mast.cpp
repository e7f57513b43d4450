#include "onedse/mast.hpp"

#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "onedse/error.hpp"
#include "onedse/text.hpp"

namespace onedse {

void MastSpec::validate() const {
  if (!(c_s > 0.0) || !std::isfinite(c_s)) throw ArgumentError("MAST step c_s must be positive");
  if (!std::isfinite(c_i)) throw ArgumentError("MAST start c_i must be finite");
  if (patience < 1) throw ArgumentError("MAST patience K must be at least 1");
  if (max_iter < patience) throw ArgumentError("MAST max_iter must be at least K");
  if (!(delta >= 0.0)) throw ArgumentError("significance threshold must be non-negative");
}

MastSpec MastSpec::for_range(double lo, double hi) {
  MastSpec s;
  s.c_i = lo;
  s.c_s = hi > lo ? (hi - lo) / 500.0 : 1e-3;
  return s;
}

MastResult mast_search(const PredictorModel& model, const std::vector<TokenSequence>& chunks, const MastSpec& spec) {
  spec.validate();
  if (model.mode != Mode::M) throw ArgumentError("MAST needs an M-mode model");
  if (chunks.empty()) throw ArgumentError("MAST needs at least one chunk");
  const auto pooled = pool_chunks(model, chunks);
  const std::size_t n_params = model.space.size();
  MastResult r;
  std::size_t same = 0;
  for (std::size_t k = 0; k < spec.max_iter; ++k) {
    MastStep st;
    st.step = k;
    st.constraint = spec.c_i + static_cast<double>(k) * spec.c_s;
    const auto raw = batched_inference_pooled(model, pooled, st.constraint);
    std::vector<double> mean(n_params, 0.0);
    for (const auto& v : raw)
      for (std::size_t i = 0; i < n_params; ++i) mean[i] += v[i];
    for (auto& m : mean) m /= static_cast<double>(raw.size());
    st.config = round_ranks(mean, model.space);
    same = (!r.trajectory.empty() && r.trajectory.back().config == st.config) ? same + 1 : 1;
    r.trajectory.push_back(std::move(st));
    if (same >= spec.patience) {
      r.converged = true;
      break;
    }
  }
  r.convergence_step = r.trajectory.back().step;
  r.converged_config = r.trajectory.back().config;
  return r;
}

CriticalReport critical_parameters(const std::vector<MastStep>& t, const DesignSpace& subset, double delta) {
  CriticalReport rep;
  if (t.size() < 2) return rep;
  for (std::size_t k = t.size() - 1; k >= 1; --k) {
    const double prev = t[k - 1].objective, cur = t[k].objective;
    const double scale = std::abs(prev) > 0 ? std::abs(prev) : 1.0;
    if (std::abs(cur - prev) / scale > delta) {
      rep.p = k;
      break;
    }
  }
  std::set<std::size_t> critical;
  if (rep.p > 0)
    for (std::size_t i = 0; i < subset.size(); ++i)
      if (t[rep.p].config.ranks[i] != t[rep.p - 1].config.ranks[i]) critical.insert(i);
  for (std::size_t i = 0; i < subset.size(); ++i) {
    if (critical.count(i)) {
      rep.critical.push_back(subset[i].name);
      continue;
    }
    for (std::size_t k = rep.p + 1; k < t.size(); ++k)
      if (t[k].config.ranks[i] != t[rep.p].config.ranks[i]) {
        rep.flexible.push_back(subset[i].name);
        break;
      }
  }
  return rep;
}

void annotate(MastResult& r, const Evaluator& oracle, const DesignSpace& subset, double delta) {
  std::map<Configuration, double> seen;
  for (auto& st : r.trajectory) {
    auto it = seen.find(st.config);
    if (it == seen.end()) it = seen.emplace(st.config, oracle(st.config)).first;
    st.objective = it->second;
  }
  const CriticalReport rep = critical_parameters(r.trajectory, subset, delta);
  r.critical_step = rep.p;
  r.critical = rep.critical;
  r.flexible = rep.flexible;
  r.near_optimal_set.clear();
  for (std::size_t k = rep.p; k < r.trajectory.size(); ++k) {
    const auto& c = r.trajectory[k].config;
    if (std::find(r.near_optimal_set.begin(), r.near_optimal_set.end(), c) == r.near_optimal_set.end())
      r.near_optimal_set.push_back(c);
  }
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ";" : "") + v[i];
  return out;
}

}  // namespace

std::string trajectory_csv(const MastResult& r, const DesignSpace& subset) {
  std::ostringstream os;
  os << "step,constraint,objective";
  for (std::size_t i = 0; i < subset.size(); ++i) os << ',' << csv_field(subset[i].name);
  os << '\n';
  for (const auto& st : r.trajectory) {
    os << st.step << ',' << text::format_double(st.constraint) << ','
       << (std::isnan(st.objective) ? std::string() : text::format_double(st.objective));
    for (const auto& v : rank_decode(st.config, subset)) os << ',' << csv_field(v);
    os << '\n';
  }
  return os.str();
}

std::string mast_summary(const MastResult& r, const DesignSpace& subset) {
  std::ostringstream os;
  os << "converged = " << (r.converged ? "true" : "false") << '\n';
  os << "convergence_step = " << r.convergence_step << '\n';
  os << "critical_step = " << r.critical_step << '\n';
  const auto values = rank_decode(r.converged_config, subset);
  for (std::size_t i = 0; i < subset.size(); ++i) os << "config." << subset[i].name << " = " << values[i] << '\n';
  os << "critical = " << join(r.critical) << '\n';
  os << "flexible = " << join(r.flexible) << '\n';
  os << "near_optimal_count = " << r.near_optimal_set.size() << '\n';
  return os.str();
}

}  // namespace onedse
