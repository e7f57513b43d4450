#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "onedse/trace.hpp"

namespace onedse {

struct BranchPredictorConfig {
  // Direction: tagged 2-bit counters indexed by pc.
  std::uint32_t history_buffer_size = 1024;  // table holds 2^ceil(log2(this)) counters
  std::uint32_t instruction_shift = 0;
  std::uint32_t direction_tag_bits = 12;
  std::uint64_t direction_reset_period = 0;  // predictions between counter decays; 0 = never
  // Loop predictor for backward conditional branches.
  std::uint32_t loop_entries = 256;
  std::uint32_t loop_associativity = 4;
  std::uint32_t loop_max_age = 31;
  std::uint32_t loop_max_iterations = 256;
  // Targets.
  std::uint32_t btb_entries = 8192;
  std::uint32_t btb_associativity = 4;
  std::uint32_t btb_granularity = 2;  // bytes per BTB slot
  std::uint32_t ras_entries = 64;
  // Indirect target tables; history lengths count recent taken-branch targets.
  std::uint32_t indirect_short_history = 3;
  std::uint32_t indirect_long_history = 6;
  std::uint32_t indirect_tag_bits = 12;
  std::uint64_t indirect_reset_period = 0;
};

struct BranchQuery {
  std::uint64_t pc = 0;
  BranchKind kind = BranchKind::Conditional;
  std::uint64_t fallthrough = 0;  // pc of the next sequential instruction
  std::uint64_t target_hint = 0;  // static target, used only to detect backward branches
};

struct BranchPrediction {
  bool taken = false;
  std::optional<std::uint64_t> target;
};

/// Direction + target prediction. predict() may push/pop the return stack;
/// all other state changes happen in update(), after the branch resolves.
class BranchPredictor {
 public:
  explicit BranchPredictor(const BranchPredictorConfig& config);

  BranchPrediction predict(const BranchQuery& query);
  /// Conditional-branch shorthand.
  BranchPrediction predict(std::uint64_t pc) { return predict(BranchQuery{pc, BranchKind::Conditional, pc + 4, pc}); }

  void update(const BranchQuery& query, bool taken, std::uint64_t target);
  void update(std::uint64_t pc, bool taken, std::uint64_t target) {
    update(BranchQuery{pc, BranchKind::Conditional, pc + 4, target}, taken, target);
  }

  const BranchPredictorConfig& config() const { return config_; }

 private:
  struct DirEntry {
    std::uint32_t tag = ~0u;
    std::uint8_t counter = 1;
  };
  struct LoopEntry {
    bool valid = false;
    std::uint64_t tag = 0;
    std::uint32_t trip = 0;
    std::uint32_t iter = 0;
    std::uint8_t confidence = 0;
    std::uint32_t age = 0;
  };
  struct BtbEntry {
    bool valid = false;
    std::uint64_t tag = 0;
    std::uint64_t target = 0;
    std::uint64_t stamp = 0;
  };
  struct IndirectEntry {
    std::uint32_t tag = ~0u;
    std::uint64_t target = 0;
    std::uint8_t confidence = 0;
  };

  std::size_t dir_index(std::uint64_t pc) const;
  std::uint32_t dir_tag(std::uint64_t pc) const;
  LoopEntry* loop_lookup(std::uint64_t pc);
  std::optional<std::uint64_t> btb_lookup(std::uint64_t pc);
  void btb_insert(std::uint64_t pc, std::uint64_t target);
  std::uint64_t path_hash(std::uint32_t length) const;
  std::size_t ind_index(std::uint64_t pc, std::uint32_t length) const;
  std::uint32_t ind_tag(std::uint64_t pc, std::uint32_t length) const;

  BranchPredictorConfig config_;
  std::vector<DirEntry> direction_;
  std::uint32_t dir_bits_;
  std::vector<LoopEntry> loop_;
  std::uint32_t loop_sets_;
  std::vector<BtbEntry> btb_;
  std::uint32_t btb_sets_;
  std::uint64_t btb_clock_ = 0;
  std::vector<std::uint64_t> ras_;
  std::size_t ras_top_ = 0;
  std::size_t ras_depth_ = 0;
  std::vector<IndirectEntry> ind_short_, ind_long_;
  std::vector<std::uint64_t> path_;  // most recent taken targets, newest last
  std::uint64_t dir_updates_ = 0;
  std::uint64_t ind_updates_ = 0;
};

}  // namespace onedse
