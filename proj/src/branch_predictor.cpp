#include "onedse/branch_predictor.hpp"

#include <algorithm>
#include <bit>

#include "onedse/rng.hpp"

namespace onedse {

namespace {
constexpr std::size_t kIndirectEntries = 512;
constexpr std::size_t kPathKeep = 16;
}  // namespace

BranchPredictor::BranchPredictor(const BranchPredictorConfig& c) : config_(c) {
  const std::uint32_t entries = std::bit_ceil(std::max<std::uint32_t>(1, c.history_buffer_size));
  dir_bits_ = static_cast<std::uint32_t>(std::countr_zero(entries));
  direction_.assign(entries, DirEntry{});
  const std::uint32_t lassoc = std::max<std::uint32_t>(1, c.loop_associativity);
  loop_sets_ = std::max<std::uint32_t>(1, c.loop_entries / lassoc);
  loop_.assign(static_cast<std::size_t>(loop_sets_) * lassoc, LoopEntry{});
  const std::uint32_t bassoc = std::max<std::uint32_t>(1, c.btb_associativity);
  btb_sets_ = std::max<std::uint32_t>(1, c.btb_entries / bassoc);
  btb_.assign(static_cast<std::size_t>(btb_sets_) * bassoc, BtbEntry{});
  ras_.assign(std::max<std::uint32_t>(1, c.ras_entries), 0);
  ind_short_.assign(kIndirectEntries, IndirectEntry{});
  ind_long_.assign(kIndirectEntries, IndirectEntry{});
}

std::size_t BranchPredictor::dir_index(std::uint64_t pc) const {
  return static_cast<std::size_t>((pc >> (1 + config_.instruction_shift)) & ((1ull << dir_bits_) - 1));
}

std::uint32_t BranchPredictor::dir_tag(std::uint64_t pc) const {
  const std::uint64_t mask = (1ull << std::min<std::uint32_t>(config_.direction_tag_bits, 31)) - 1;
  return static_cast<std::uint32_t>(((pc >> (1 + config_.instruction_shift)) >> dir_bits_) & mask);
}

BranchPredictor::LoopEntry* BranchPredictor::loop_lookup(std::uint64_t pc) {
  const std::uint32_t assoc = std::max<std::uint32_t>(1, config_.loop_associativity);
  const std::uint64_t key = pc >> 1;
  const std::size_t base = static_cast<std::size_t>(key % loop_sets_) * assoc;
  for (std::size_t w = 0; w < assoc; ++w) {
    auto& e = loop_[base + w];
    if (e.valid && e.tag == key / loop_sets_) return &e;
  }
  return nullptr;
}

std::optional<std::uint64_t> BranchPredictor::btb_lookup(std::uint64_t pc) {
  const std::uint32_t assoc = std::max<std::uint32_t>(1, config_.btb_associativity);
  const std::uint64_t slot = pc / std::max<std::uint32_t>(1, config_.btb_granularity);
  const std::size_t base = static_cast<std::size_t>(slot % btb_sets_) * assoc;
  for (std::size_t w = 0; w < assoc; ++w) {
    auto& e = btb_[base + w];
    if (e.valid && e.tag == slot / btb_sets_) return e.target;
  }
  return std::nullopt;
}

void BranchPredictor::btb_insert(std::uint64_t pc, std::uint64_t target) {
  const std::uint32_t assoc = std::max<std::uint32_t>(1, config_.btb_associativity);
  const std::uint64_t slot = pc / std::max<std::uint32_t>(1, config_.btb_granularity);
  const std::size_t base = static_cast<std::size_t>(slot % btb_sets_) * assoc;
  BtbEntry* victim = &btb_[base];
  for (std::size_t w = 0; w < assoc; ++w) {
    auto& e = btb_[base + w];
    if (e.valid && e.tag == slot / btb_sets_) {
      victim = &e;
      break;
    }
    if (!e.valid) {
      if (victim->valid) victim = &e;
    } else if (victim->valid && e.stamp < victim->stamp) {
      victim = &e;
    }
  }
  victim->valid = true;
  victim->tag = slot / btb_sets_;
  victim->target = target;
  victim->stamp = ++btb_clock_;
}

std::uint64_t BranchPredictor::path_hash(std::uint32_t length) const {
  std::uint64_t h = 0;
  const std::size_t n = std::min<std::size_t>(length, path_.size());
  for (std::size_t i = 0; i < n; ++i) h = mix64(h ^ path_[path_.size() - 1 - i]);
  return h;
}

std::size_t BranchPredictor::ind_index(std::uint64_t pc, std::uint32_t length) const {
  return static_cast<std::size_t>(mix64((pc >> 1) ^ path_hash(length)) % kIndirectEntries);
}

std::uint32_t BranchPredictor::ind_tag(std::uint64_t pc, std::uint32_t length) const {
  const std::uint64_t mask = (1ull << std::min<std::uint32_t>(config_.indirect_tag_bits, 31)) - 1;
  return static_cast<std::uint32_t>((mix64(pc ^ (path_hash(length) << 1)) >> 20) & mask);
}

BranchPrediction BranchPredictor::predict(const BranchQuery& q) {
  BranchPrediction p;
  switch (q.kind) {
    case BranchKind::None:
      return p;
    case BranchKind::Conditional: {
      const auto& d = direction_[dir_index(q.pc)];
      p.taken = d.tag == dir_tag(q.pc) && d.counter >= 2;
      if (q.target_hint < q.pc) {
        if (const LoopEntry* l = loop_lookup(q.pc); l && l->confidence >= 2 && l->trip > 0)
          p.taken = l->iter + 1 < l->trip;
      }
      if (p.taken) p.target = btb_lookup(q.pc);
      return p;
    }
    case BranchKind::Jump:
    case BranchKind::Call:
      p.taken = true;
      p.target = btb_lookup(q.pc);
      if (q.kind == BranchKind::Call) {
        ras_top_ = (ras_top_ + 1) % ras_.size();
        ras_[ras_top_] = q.fallthrough;
        ras_depth_ = std::min(ras_depth_ + 1, ras_.size());
      }
      return p;
    case BranchKind::Return:
      p.taken = true;
      if (ras_depth_ > 0) {
        p.target = ras_[ras_top_];
        ras_top_ = (ras_top_ + ras_.size() - 1) % ras_.size();
        --ras_depth_;
      } else {
        p.target = btb_lookup(q.pc);
      }
      return p;
    case BranchKind::Indirect: {
      p.taken = true;
      const auto& lng = ind_long_[ind_index(q.pc, config_.indirect_long_history)];
      const auto& sht = ind_short_[ind_index(q.pc, config_.indirect_short_history)];
      if (lng.tag == ind_tag(q.pc, config_.indirect_long_history) && lng.confidence > 0) p.target = lng.target;
      else if (sht.tag == ind_tag(q.pc, config_.indirect_short_history) && sht.confidence > 0) p.target = sht.target;
      else p.target = btb_lookup(q.pc);
      return p;
    }
  }
  return p;
}

void BranchPredictor::update(const BranchQuery& q, bool taken, std::uint64_t target) {
  if (q.kind == BranchKind::None) return;
  if (q.kind == BranchKind::Conditional) {
    auto& d = direction_[dir_index(q.pc)];
    const std::uint32_t tag = dir_tag(q.pc);
    const bool bimodal_taken = d.tag == tag && d.counter >= 2;
    if (d.tag != tag) {
      d.tag = tag;
      d.counter = taken ? 2 : 1;
    } else if (taken) {
      d.counter = static_cast<std::uint8_t>(std::min(3, d.counter + 1));
    } else {
      d.counter = static_cast<std::uint8_t>(std::max(0, d.counter - 1));
    }
    if (config_.direction_reset_period && ++dir_updates_ % config_.direction_reset_period == 0) {
      for (auto& e : direction_) {
        if (e.counter == 3) e.counter = 2;
        if (e.counter == 0) e.counter = 1;
      }
    }
    if (target < q.pc) {
      // Loop predictor: learn trip counts of backward branches.
      if (LoopEntry* l = loop_lookup(q.pc)) {
        const bool used = l->confidence >= 2 && l->trip > 0;
        const bool loop_taken = l->iter + 1 < l->trip;
        if (taken) {
          if (++l->iter >= config_.loop_max_iterations) l->valid = false;
        } else {
          if (l->iter + 1 == l->trip) {
            l->confidence = static_cast<std::uint8_t>(std::min(3, l->confidence + 1));
          } else {
            l->trip = l->iter + 1;
            l->confidence = 0;
          }
          l->iter = 0;
        }
        if (used) {
          if (loop_taken == taken) l->age = std::min(config_.loop_max_age, l->age + 1);
          else if (l->age > 0) --l->age;
        }
      } else if (bimodal_taken != taken) {
        const std::uint32_t assoc = std::max<std::uint32_t>(1, config_.loop_associativity);
        const std::uint64_t key = q.pc >> 1;
        const std::size_t base = static_cast<std::size_t>(key % loop_sets_) * assoc;
        LoopEntry* slot = nullptr;
        for (std::size_t w = 0; w < assoc && !slot; ++w)
          if (!loop_[base + w].valid || loop_[base + w].age == 0) slot = &loop_[base + w];
        if (slot) {
          *slot = LoopEntry{true, key / loop_sets_, 0, taken ? 1u : 0u, 0, config_.loop_max_age};
        } else {
          for (std::size_t w = 0; w < assoc; ++w) --loop_[base + w].age;
        }
      }
    }
  }
  if (taken) {
    btb_insert(q.pc, target);
    path_.push_back(target);
    if (path_.size() > kPathKeep) path_.erase(path_.begin());
  }
  if (q.kind == BranchKind::Indirect) {
    // History is read before this branch's own target joins the path.
    path_.pop_back();
    for (auto [table, length] : {std::pair{&ind_long_, config_.indirect_long_history},
                                 std::pair{&ind_short_, config_.indirect_short_history}}) {
      auto& e = (*table)[ind_index(q.pc, length)];
      const std::uint32_t tag = ind_tag(q.pc, length);
      if (e.tag == tag && e.target == target) {
        e.confidence = static_cast<std::uint8_t>(std::min(3, e.confidence + 1));
      } else if (e.tag == tag && e.confidence > 1) {
        --e.confidence;
      } else {
        e = IndirectEntry{tag, target, 1};
      }
    }
    path_.push_back(target);
    if (config_.indirect_reset_period && ++ind_updates_ % config_.indirect_reset_period == 0)
      for (auto* table : {&ind_short_, &ind_long_})
        for (auto& e : *table) e.confidence = std::min<std::uint8_t>(e.confidence, 1);
  }
}

}  // namespace onedse
