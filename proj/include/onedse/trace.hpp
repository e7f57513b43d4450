#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace onedse {

struct TraceFlags {
  bool compressed = false;
  bool load = false;
  bool store = false;
  bool branch = false;

  friend bool operator==(const TraceFlags&, const TraceFlags&) = default;
};

/// One executed instruction.
struct TraceRecord {
  std::uint64_t pc = 0;
  std::string mnemonic;
  TraceFlags flags;
  std::optional<std::uint64_t> target;  // branches only
  std::optional<bool> taken;            // branches only
  std::optional<std::uint8_t> rd, rs1, rs2;
  std::optional<std::uint64_t> mem_addr;  // loads and stores only

  friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

/// Throws ValidationError when the record breaks a field invariant.
void validate_record(const TraceRecord& record);

/// Parses the line-oriented trace format:
///   <pc-hex> <mnemonic> <flagcsv|-> [tgt=<hex>] [rd=<n>] [rs1=<n>] [rs2=<n>] [addr=<hex>]
/// Flags are drawn from {C, LD, ST, BR, T}; '#' starts a comment.
std::vector<TraceRecord> parse_trace(std::string_view text);
std::string format_record(const TraceRecord& record);
std::string format_trace(std::span<const TraceRecord> records);

struct Chunk {
  std::int64_t id = 0;
  std::vector<TraceRecord> records;
  /// Records executed just before this chunk, shared with sibling chunks.
  /// The simulator replays them untimed to warm caches and predictors.
  std::shared_ptr<const std::vector<TraceRecord>> context;
  std::size_t warmup_begin = 0, warmup_end = 0;

  std::span<const TraceRecord> warmup() const {
    if (!context) return {};
    return std::span<const TraceRecord>(*context).subspan(warmup_begin, warmup_end - warmup_begin);
  }
};

/// Splits records into ceil(N/s) chunks in order; the last one may be short.
/// Chunk ids are first_id, first_id + 1, ... Each chunk keeps up to `warmup`
/// preceding records as simulator warm-up context.
std::vector<Chunk> chunk_trace(std::span<const TraceRecord> records, std::size_t s,
                               std::int64_t first_id = 0, std::size_t warmup = 0);

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

enum class UnknownPolicy { Strict, Lenient };

/// Dense mnemonic -> id mapping. The pad token id equals size(). A dictionary
/// built with an unknown-token entry carries "<unk>" as its last id, so the
/// unknown id is always pad_id() - 1.
class TokenDict {
 public:
  static constexpr std::string_view kUnknown = "<unk>";

  TokenDict() = default;
  explicit TokenDict(std::vector<std::string> names);

  std::size_t size() const { return names_.size(); }
  TokenId pad_id() const { return static_cast<TokenId>(names_.size()); }
  bool has_unknown() const { return !names_.empty() && names_.back() == kUnknown; }
  std::optional<TokenId> find(std::string_view mnemonic) const;
  const std::string& name(TokenId id) const;
  const std::vector<std::string>& names() const { return names_; }

  /// Returns a copy with "<unk>" appended (no-op if already present).
  TokenDict with_unknown() const;

  std::uint64_t fingerprint() const;
  std::string serialize() const;
  static TokenDict parse(std::string_view text);

  friend bool operator==(const TokenDict& a, const TokenDict& b) { return a.names_ == b.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Distinct mnemonics in order of first appearance.
TokenDict build_dictionary(std::span<const TraceRecord> records);

/// Token ids in record order, padded with pad_id() up to length s.
TokenSequence tokenize_chunk(const Chunk& chunk, const TokenDict& dict, std::size_t s,
                             UnknownPolicy policy = UnknownPolicy::Strict);
std::vector<std::string> detokenize(std::span<const TokenId> tokens, const TokenDict& dict);

// Instruction classification shared by the generator and the simulator.

enum class OpClass { Alu, Mul, Div, Fp, Load, Store, Branch };
enum class BranchKind { None, Conditional, Jump, Call, Return, Indirect };

struct MnemonicInfo {
  std::string_view name;
  OpClass op;
  bool compressed;
  bool float_dest;  // writes the floating-point register file
};

/// The built-in RV64GC + bit-manipulation mnemonic catalog (150 entries).
std::span<const MnemonicInfo> mnemonic_catalog();
const MnemonicInfo* lookup_mnemonic(std::string_view name);

/// Execution class from flags first, then the mnemonic catalog; unknown
/// non-memory, non-branch mnemonics are ALU ops.
OpClass classify(const TraceRecord& record);
BranchKind branch_kind(const TraceRecord& record);

/// Parameters of a synthetic workload. The class fractions sum to 1.
struct WorkloadProfile {
  double alu_frac = 0.5;
  double mul_frac = 0.05;
  double div_frac = 0.01;
  double load_frac = 0.22;
  double store_frac = 0.1;
  double branch_frac = 0.12;
  double taken_prob = 0.6;
  double dep_chain_len = 4.0;
  std::uint64_t working_set_bytes = 64 * 1024;
  std::uint64_t seed = 1;
  // Optional extensions.
  std::uint64_t code_bytes = 16 * 1024;
  double compressed_frac = 0.2;

  friend bool operator==(const WorkloadProfile&, const WorkloadProfile&) = default;
};

void validate_profile(const WorkloadProfile& profile);
/// Flat key=value text; unknown keys are errors, missing keys keep defaults.
WorkloadProfile parse_profile(std::string_view text);
std::string format_profile(const WorkloadProfile& profile);

/// Deterministic trace of n instructions for the profile.
std::vector<TraceRecord> generate_synthetic_trace(const WorkloadProfile& profile, std::size_t n);

}  // namespace onedse
