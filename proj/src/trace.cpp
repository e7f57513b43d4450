#include "onedse/trace.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <sstream>

#include "onedse/error.hpp"
#include "onedse/rng.hpp"
#include "onedse/text.hpp"

namespace onedse {

// ---------------------------------------------------------------------------
// Records and the text format

void validate_record(const TraceRecord& r) {
  if (r.mnemonic.empty()) throw ValidationError("empty mnemonic");
  if (r.flags.branch != r.taken.has_value() || r.flags.branch != r.target.has_value())
    throw ValidationError("branch " + r.mnemonic +
                          ": taken and target must be present exactly when BR is set");
  if ((r.flags.load || r.flags.store) != r.mem_addr.has_value())
    throw ValidationError(r.mnemonic + ": addr must be present exactly when LD or ST is set");
  if (r.flags.load && r.flags.store) throw ValidationError(r.mnemonic + ": both LD and ST set");
  for (const auto& reg : {r.rd, r.rs1, r.rs2})
    if (reg && *reg > 31) throw ValidationError(r.mnemonic + ": register index out of range");
}

namespace {

std::optional<std::uint8_t> parse_reg(std::string_view v, std::size_t line) {
  std::uint64_t n = 0;
  if (!text::parse_u64(v, n, 10)) throw ParseError(line, "bad register index '" + std::string(v) + "'");
  if (n > 31) throw ValidationError("line " + std::to_string(line) + ": register index out of range");
  return static_cast<std::uint8_t>(n);
}

TraceRecord parse_line(std::string_view line, std::size_t lineno) {
  const auto fields = text::split_ws(line);
  if (fields.size() < 3) throw ParseError(lineno, "expected '<pc> <mnemonic> <flags>'");
  TraceRecord r;
  if (!text::parse_u64(fields[0], r.pc, 16))
    throw ParseError(lineno, "bad pc '" + std::string(fields[0]) + "'");
  r.mnemonic = std::string(fields[1]);
  bool taken_flag = false;
  if (fields[2] != "-") {
    for (auto flag : text::split(fields[2], ',')) {
      if (flag == "C") r.flags.compressed = true;
      else if (flag == "LD") r.flags.load = true;
      else if (flag == "ST") r.flags.store = true;
      else if (flag == "BR") r.flags.branch = true;
      else if (flag == "T") taken_flag = true;
      else throw ParseError(lineno, "unknown flag '" + std::string(flag) + "'");
    }
  }
  if (taken_flag && !r.flags.branch) throw ValidationError("line " + std::to_string(lineno) + ": T flag without BR");
  if (r.flags.branch) r.taken = taken_flag;
  for (std::size_t i = 3; i < fields.size(); ++i) {
    const auto eq = fields[i].find('=');
    if (eq == std::string_view::npos) throw ParseError(lineno, "expected key=value, got '" + std::string(fields[i]) + "'");
    const auto key = fields[i].substr(0, eq);
    const auto val = fields[i].substr(eq + 1);
    std::uint64_t n = 0;
    if (key == "tgt") {
      if (!text::parse_u64(val, n, 16)) throw ParseError(lineno, "bad target");
      r.target = n;
    } else if (key == "addr") {
      if (!text::parse_u64(val, n, 16)) throw ParseError(lineno, "bad address");
      r.mem_addr = n;
    } else if (key == "rd") {
      r.rd = parse_reg(val, lineno);
    } else if (key == "rs1") {
      r.rs1 = parse_reg(val, lineno);
    } else if (key == "rs2") {
      r.rs2 = parse_reg(val, lineno);
    } else {
      throw ParseError(lineno, "unknown field '" + std::string(key) + "'");
    }
  }
  try {
    validate_record(r);
  } catch (const ValidationError& e) {
    throw ValidationError("line " + std::to_string(lineno) + ": " + e.what());
  }
  return r;
}

}  // namespace

std::vector<TraceRecord> parse_trace(std::string_view text_in) {
  std::vector<TraceRecord> out;
  std::size_t lineno = 0;
  for (auto raw : text::split(text_in, '\n')) {
    ++lineno;
    const auto line = text::trim(text::strip_comment(raw));
    if (line.empty()) continue;
    out.push_back(parse_line(line, lineno));
  }
  return out;
}

std::string format_record(const TraceRecord& r) {
  std::ostringstream os;
  os << "0x" << std::hex << r.pc << ' ' << r.mnemonic << ' ';
  std::string flags;
  auto add = [&](const char* f) {
    if (!flags.empty()) flags += ',';
    flags += f;
  };
  if (r.flags.compressed) add("C");
  if (r.flags.load) add("LD");
  if (r.flags.store) add("ST");
  if (r.flags.branch) add("BR");
  if (r.taken.value_or(false)) add("T");
  os << (flags.empty() ? "-" : flags);
  if (r.target) os << " tgt=0x" << *r.target;
  os << std::dec;
  if (r.rd) os << " rd=" << int(*r.rd);
  if (r.rs1) os << " rs1=" << int(*r.rs1);
  if (r.rs2) os << " rs2=" << int(*r.rs2);
  if (r.mem_addr) os << " addr=0x" << std::hex << *r.mem_addr;
  return os.str();
}

std::string format_trace(std::span<const TraceRecord> records) {
  std::string out;
  for (const auto& r : records) {
    out += format_record(r);
    out += '\n';
  }
  return out;
}

std::vector<Chunk> chunk_trace(std::span<const TraceRecord> records, std::size_t s,
                               std::int64_t first_id, std::size_t warmup) {
  if (s == 0) throw ArgumentError("chunk length must be at least 1");
  std::vector<Chunk> chunks;
  chunks.reserve((records.size() + s - 1) / s);
  std::shared_ptr<const std::vector<TraceRecord>> context;
  if (warmup > 0 && records.size() > s)
    context = std::make_shared<const std::vector<TraceRecord>>(records.begin(), records.end());
  for (std::size_t begin = 0; begin < records.size(); begin += s) {
    const std::size_t end = std::min(records.size(), begin + s);
    Chunk c;
    c.id = first_id + static_cast<std::int64_t>(chunks.size());
    c.records.assign(records.begin() + static_cast<std::ptrdiff_t>(begin),
                     records.begin() + static_cast<std::ptrdiff_t>(end));
    if (context && begin > 0) {
      c.context = context;
      c.warmup_begin = begin > warmup ? begin - warmup : 0;
      c.warmup_end = begin;
    }
    chunks.push_back(std::move(c));
  }
  return chunks;
}

// ---------------------------------------------------------------------------
// Dictionary and tokenization

TokenDict::TokenDict(std::vector<std::string> names) : names_(std::move(names)) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (!index_.emplace(names_[i], static_cast<TokenId>(i)).second)
      throw ValidationError("duplicate dictionary entry '" + names_[i] + "'");
  }
}

std::optional<TokenId> TokenDict::find(std::string_view mnemonic) const {
  const auto it = index_.find(std::string(mnemonic));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& TokenDict::name(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= names_.size())
    throw ArgumentError("token id " + std::to_string(id) + " outside dictionary");
  return names_[static_cast<std::size_t>(id)];
}

TokenDict TokenDict::with_unknown() const {
  if (has_unknown()) return *this;
  auto names = names_;
  names.emplace_back(kUnknown);
  return TokenDict(std::move(names));
}

std::uint64_t TokenDict::fingerprint() const { return text::fnv1a(serialize()); }

std::string TokenDict::serialize() const {
  std::string out;
  for (const auto& n : names_) {
    out += n;
    out += '\n';
  }
  return out;
}

TokenDict TokenDict::parse(std::string_view text_in) {
  std::vector<std::string> names;
  for (auto line : text::split(text_in, '\n')) {
    const auto t = text::trim(line);
    if (!t.empty()) names.emplace_back(t);
  }
  return TokenDict(std::move(names));
}

TokenDict build_dictionary(std::span<const TraceRecord> records) {
  std::vector<std::string> names;
  std::unordered_map<std::string_view, bool> seen;
  for (const auto& r : records)
    if (seen.emplace(r.mnemonic, true).second) names.push_back(r.mnemonic);
  return TokenDict(std::move(names));
}

TokenSequence tokenize_chunk(const Chunk& chunk, const TokenDict& dict, std::size_t s,
                             UnknownPolicy policy) {
  if (chunk.records.size() > s)
    throw ArgumentError("chunk of " + std::to_string(chunk.records.size()) +
                        " records exceeds sequence length " + std::to_string(s));
  TokenSequence out(s, dict.pad_id());
  for (std::size_t i = 0; i < chunk.records.size(); ++i) {
    const auto& m = chunk.records[i].mnemonic;
    if (auto id = dict.find(m)) {
      out[i] = *id;
    } else if (policy == UnknownPolicy::Lenient && dict.has_unknown()) {
      out[i] = dict.pad_id() - 1;
    } else {
      throw ValidationError("unknown mnemonic '" + m + "' in chunk " + std::to_string(chunk.id));
    }
  }
  return out;
}

std::vector<std::string> detokenize(std::span<const TokenId> tokens, const TokenDict& dict) {
  std::vector<std::string> out;
  for (auto t : tokens) {
    if (t == dict.pad_id()) continue;
    out.push_back(dict.name(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mnemonic catalog

namespace {

constexpr MnemonicInfo A(std::string_view n) { return {n, OpClass::Alu, n.starts_with("c."), false}; }
constexpr MnemonicInfo F(std::string_view n, bool fdest = true) { return {n, OpClass::Fp, false, fdest}; }

constexpr std::array kCatalog = std::to_array<MnemonicInfo>({
    // integer ALU
    A("add"), A("addi"), A("addw"), A("addiw"), A("sub"), A("subw"), A("and"), A("andi"),
    A("or"), A("ori"), A("xor"), A("xori"), A("sll"), A("slli"), A("sllw"), A("srl"),
    A("srli"), A("srlw"), A("sra"), A("srai"), A("sraw"), A("slt"), A("slti"), A("sltu"),
    A("sltiu"), A("lui"), A("auipc"),
    // Zba
    A("sh1add"), A("sh2add"), A("sh3add"), A("add.uw"), A("sh1add.uw"), A("sh2add.uw"),
    A("sh3add.uw"), A("slli.uw"),
    // Zbb
    A("andn"), A("orn"), A("xnor"), A("clz"), A("clzw"), A("ctz"), A("ctzw"), A("cpop"),
    A("cpopw"), A("max"), A("maxu"), A("min"), A("minu"), A("sext.b"), A("sext.h"),
    A("zext.h"), A("rol"), A("rolw"), A("ror"), A("rori"), A("roriw"), A("rorw"), A("orc.b"),
    // Zbs
    A("bclr"), A("bext"), A("binv"), A("bset"),
    // compressed ALU
    A("c.addi"), A("c.addiw"), A("c.li"), A("c.lui"), A("c.mv"), A("c.add"), A("c.sub"),
    A("c.and"), A("c.or"), A("c.xor"), A("c.slli"), A("c.srli"), A("c.srai"), A("c.andi"),
    A("c.addw"), A("c.subw"),
    // floating-point, ALU pool
    F("fadd.s"), F("fsub.s"), F("fadd.d"), F("fsub.d"), F("fmin.d"), F("fmax.d"),
    F("fsgnj.d"), F("feq.d", false), F("flt.d", false), F("fle.d", false), F("fcvt.d.l"),
    F("fcvt.l.d", false), F("fmv.x.d", false), F("fmv.d.x"), F("fclass.d", false),
    // multiply pool
    {"mul", OpClass::Mul, false, false}, {"mulh", OpClass::Mul, false, false},
    {"mulhsu", OpClass::Mul, false, false}, {"mulhu", OpClass::Mul, false, false},
    {"mulw", OpClass::Mul, false, false}, {"clmul", OpClass::Mul, false, false},
    {"clmulh", OpClass::Mul, false, false}, {"fmul.s", OpClass::Mul, false, true},
    {"fmul.d", OpClass::Mul, false, true}, {"fmadd.d", OpClass::Mul, false, true},
    {"fmsub.d", OpClass::Mul, false, true}, {"fnmadd.d", OpClass::Mul, false, true},
    // divide pool
    {"div", OpClass::Div, false, false}, {"divu", OpClass::Div, false, false},
    {"divw", OpClass::Div, false, false}, {"rem", OpClass::Div, false, false},
    {"remu", OpClass::Div, false, false}, {"remw", OpClass::Div, false, false},
    {"fdiv.s", OpClass::Div, false, true}, {"fdiv.d", OpClass::Div, false, true},
    {"fsqrt.d", OpClass::Div, false, true},
    // loads
    {"lb", OpClass::Load, false, false}, {"lbu", OpClass::Load, false, false},
    {"lh", OpClass::Load, false, false}, {"lhu", OpClass::Load, false, false},
    {"lw", OpClass::Load, false, false}, {"lwu", OpClass::Load, false, false},
    {"ld", OpClass::Load, false, false}, {"flw", OpClass::Load, false, true},
    {"fld", OpClass::Load, false, true}, {"c.lw", OpClass::Load, true, false},
    {"c.ld", OpClass::Load, true, false}, {"c.lwsp", OpClass::Load, true, false},
    {"c.ldsp", OpClass::Load, true, false},
    // stores
    {"sb", OpClass::Store, false, false}, {"sh", OpClass::Store, false, false},
    {"sw", OpClass::Store, false, false}, {"sd", OpClass::Store, false, false},
    {"fsw", OpClass::Store, false, false}, {"fsd", OpClass::Store, false, false},
    {"c.sw", OpClass::Store, true, false}, {"c.sd", OpClass::Store, true, false},
    {"c.swsp", OpClass::Store, true, false}, {"c.sdsp", OpClass::Store, true, false},
    // control transfer
    {"beq", OpClass::Branch, false, false}, {"bne", OpClass::Branch, false, false},
    {"blt", OpClass::Branch, false, false}, {"bge", OpClass::Branch, false, false},
    {"bltu", OpClass::Branch, false, false}, {"bgeu", OpClass::Branch, false, false},
    {"jal", OpClass::Branch, false, false}, {"jalr", OpClass::Branch, false, false},
    {"c.beqz", OpClass::Branch, true, false}, {"c.bnez", OpClass::Branch, true, false},
    {"c.j", OpClass::Branch, true, false}, {"c.jr", OpClass::Branch, true, false},
    {"c.jalr", OpClass::Branch, true, false},
});
static_assert(kCatalog.size() == 150);

const std::unordered_map<std::string_view, const MnemonicInfo*>& catalog_index() {
  static const auto index = [] {
    std::unordered_map<std::string_view, const MnemonicInfo*> m;
    for (const auto& info : kCatalog) m.emplace(info.name, &info);
    return m;
  }();
  return index;
}

bool is_link_reg(std::optional<std::uint8_t> r) { return r && (*r == 1 || *r == 5); }

}  // namespace

std::span<const MnemonicInfo> mnemonic_catalog() { return kCatalog; }

const MnemonicInfo* lookup_mnemonic(std::string_view name) {
  const auto& idx = catalog_index();
  const auto it = idx.find(name);
  return it == idx.end() ? nullptr : it->second;
}

OpClass classify(const TraceRecord& r) {
  if (r.flags.branch) return OpClass::Branch;
  if (r.flags.load) return OpClass::Load;
  if (r.flags.store) return OpClass::Store;
  if (const auto* info = lookup_mnemonic(r.mnemonic)) {
    switch (info->op) {
      case OpClass::Mul:
        return info->float_dest ? OpClass::Fp : OpClass::Mul;
      case OpClass::Load:
      case OpClass::Store:
      case OpClass::Branch:
        return OpClass::Alu;  // flags disagree with the catalog; trust the flags
      default:
        return info->op;
    }
  }
  return OpClass::Alu;
}

BranchKind branch_kind(const TraceRecord& r) {
  if (!r.flags.branch) return BranchKind::None;
  const std::string_view m = r.mnemonic;
  if (m == "c.jalr") return BranchKind::Call;
  if (m == "jal" || m == "c.j" || m == "c.jal")
    return is_link_reg(r.rd) || m == "c.jal" ? BranchKind::Call : BranchKind::Jump;
  if (m == "jalr" || m == "c.jr") {
    if (is_link_reg(r.rd)) return BranchKind::Call;
    if (is_link_reg(r.rs1)) return BranchKind::Return;
    return BranchKind::Indirect;
  }
  return BranchKind::Conditional;
}

// ---------------------------------------------------------------------------
// Workload profiles

void validate_profile(const WorkloadProfile& p) {
  const double fracs[] = {p.alu_frac, p.mul_frac, p.div_frac, p.load_frac, p.store_frac, p.branch_frac};
  double sum = 0;
  for (double f : fracs) {
    if (!(f >= 0.0)) throw ArgumentError("profile fractions must be non-negative");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ArgumentError("profile fractions must sum to 1");
  if (!(p.taken_prob >= 0.0 && p.taken_prob <= 1.0)) throw ArgumentError("taken_prob must lie in [0,1]");
  if (!(p.dep_chain_len >= 1.0)) throw ArgumentError("dep_chain_len must be >= 1");
  if (p.working_set_bytes == 0) throw ArgumentError("working_set_bytes must be positive");
  if (p.code_bytes < 64) throw ArgumentError("code_bytes must be at least 64");
  if (!(p.compressed_frac >= 0.0 && p.compressed_frac <= 1.0))
    throw ArgumentError("compressed_frac must lie in [0,1]");
}

WorkloadProfile parse_profile(std::string_view text_in) {
  WorkloadProfile p;
  std::size_t lineno = 0;
  for (auto raw : text::split(text_in, '\n')) {
    ++lineno;
    const auto line = text::trim(text::strip_comment(raw));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(lineno, "expected key=value");
    const auto key = text::trim(line.substr(0, eq));
    const auto val = text::trim(line.substr(eq + 1));
    double d = 0;
    std::uint64_t u = 0;
    auto need_double = [&](double& field) {
      if (!text::parse_double(val, d)) throw ParseError(lineno, "bad number for " + std::string(key));
      field = d;
    };
    auto need_u64 = [&](std::uint64_t& field) {
      if (!text::parse_u64(val, u)) throw ParseError(lineno, "bad integer for " + std::string(key));
      field = u;
    };
    if (key == "alu_frac") need_double(p.alu_frac);
    else if (key == "mul_frac") need_double(p.mul_frac);
    else if (key == "div_frac") need_double(p.div_frac);
    else if (key == "load_frac") need_double(p.load_frac);
    else if (key == "store_frac") need_double(p.store_frac);
    else if (key == "branch_frac") need_double(p.branch_frac);
    else if (key == "taken_prob") need_double(p.taken_prob);
    else if (key == "dep_chain_len") need_double(p.dep_chain_len);
    else if (key == "compressed_frac") need_double(p.compressed_frac);
    else if (key == "working_set_bytes") need_u64(p.working_set_bytes);
    else if (key == "code_bytes") need_u64(p.code_bytes);
    else if (key == "seed") need_u64(p.seed);
    else throw ParseError(lineno, "unknown profile key '" + std::string(key) + "'");
  }
  validate_profile(p);
  return p;
}

std::string format_profile(const WorkloadProfile& p) {
  std::ostringstream os;
  os << "alu_frac=" << text::format_double(p.alu_frac) << '\n'
     << "mul_frac=" << text::format_double(p.mul_frac) << '\n'
     << "div_frac=" << text::format_double(p.div_frac) << '\n'
     << "load_frac=" << text::format_double(p.load_frac) << '\n'
     << "store_frac=" << text::format_double(p.store_frac) << '\n'
     << "branch_frac=" << text::format_double(p.branch_frac) << '\n'
     << "taken_prob=" << text::format_double(p.taken_prob) << '\n'
     << "dep_chain_len=" << text::format_double(p.dep_chain_len) << '\n'
     << "working_set_bytes=" << p.working_set_bytes << '\n'
     << "seed=" << p.seed << '\n'
     << "code_bytes=" << p.code_bytes << '\n'
     << "compressed_frac=" << text::format_double(p.compressed_frac) << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Synthetic trace generation
//
// Instruction classes are drawn i.i.d. from the profile fractions, so class
// frequencies converge to the profile. Control flow is shaped per branch site:
// each pc hashes to a fixed bias, target and kind, so predictors and caches
// see recurring behaviour at recurring addresses.

namespace {

constexpr std::uint64_t kCodeBase = 0x10000;
constexpr std::uint64_t kDataBase = 0x10000000;
constexpr std::size_t kMaxCallDepth = 64;

struct Pools {
  std::vector<const MnemonicInfo*> normal[6];
  std::vector<const MnemonicInfo*> compressed[6];
};

enum Pool { kAlu, kMul, kDiv, kLoad, kStore, kBranch };

const Pools& pools() {
  static const Pools p = [] {
    Pools out;
    for (const auto& info : kCatalog) {
      int pool = kAlu;
      switch (info.op) {
        case OpClass::Alu:
        case OpClass::Fp: pool = kAlu; break;
        case OpClass::Mul: pool = kMul; break;
        case OpClass::Div: pool = kDiv; break;
        case OpClass::Load: pool = kLoad; break;
        case OpClass::Store: pool = kStore; break;
        case OpClass::Branch: pool = kBranch; break;
      }
      if (pool == kBranch) continue;  // branch mnemonics follow the branch kind
      (info.compressed ? out.compressed : out.normal)[pool].push_back(&info);
    }
    return out;
  }();
  return p;
}

class Generator {
 public:
  Generator(const WorkloadProfile& p) : p_(p), rng_(derive_seed(p.seed, 0x7472616365)) {
    code_lines_ = std::max<std::uint64_t>(1, p.code_bytes / 64);
    pc_ = kCodeBase;
    stream_addr_ = kDataBase;
    // Each program favours its own few opcodes per class: Zipf weights over a
    // seed-dependent ordering of the class's mnemonics.
    for (int pool = 0; pool < 5; ++pool) {
      for (int c = 0; c < 2; ++c) {
        const auto& list = c ? pools().compressed[pool] : pools().normal[pool];
        auto& cum = mix_[pool][c];
        std::vector<std::size_t> order(list.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng perm(derive_seed(p.seed, 0x6d6978 + 2 * pool + c));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[perm.below(i)]);
        cum.assign(list.size(), 0.0);
        for (std::size_t r = 0; r < order.size(); ++r) cum[order[r]] = 1.0 / std::pow(r + 1.0, 1.5);
        for (std::size_t i = 1; i < cum.size(); ++i) cum[i] += cum[i - 1];
      }
    }
  }

  TraceRecord next() {
    TraceRecord r;
    r.pc = pc_;
    const int pool = draw_pool();
    const bool want_c = rng_.bernoulli(p_.compressed_frac);
    if (pool == kBranch) {
      make_branch(r, want_c);
    } else {
      const auto& normal = pools().normal[pool];
      const auto& comp = pools().compressed[pool];
      const bool use_c = want_c && !comp.empty();
      const auto& from = use_c ? comp : normal;
      const auto& cum = mix_[pool][use_c ? 1 : 0];
      const double u = rng_.uniform() * cum.back();
      const std::size_t k = std::min<std::size_t>(
          from.size() - 1, std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
      const auto* info = from[k];
      r.mnemonic = std::string(info->name);
      r.flags.compressed = info->compressed;
      if (pool == kLoad) {
        r.flags.load = true;
        r.rd = dest_reg();
        r.rs1 = source_reg();
        r.mem_addr = data_address();
      } else if (pool == kStore) {
        r.flags.store = true;
        r.rs1 = source_reg();
        r.rs2 = source_reg();
        r.mem_addr = data_address();
      } else {
        r.rs1 = source_reg();
        if (pool != kAlu || rng_.bernoulli(0.5)) r.rs2 = source_reg();
        r.rd = dest_reg();
      }
    }
    const std::uint64_t len = r.flags.compressed ? 2 : 4;
    if (r.flags.branch && *r.taken) {
      pc_ = *r.target;
    } else {
      pc_ = wrap(pc_ + len);
    }
    if (r.rd) push_writer(*r.rd);
    return r;
  }

 private:
  int draw_pool() {
    const double u = rng_.uniform();
    const double cum[] = {p_.alu_frac, p_.mul_frac, p_.div_frac, p_.load_frac, p_.store_frac};
    double acc = 0;
    for (int i = 0; i < 5; ++i) {
      acc += cum[i];
      if (u < acc) return i;
    }
    // Guard against rounding when branch_frac is zero.
    if (p_.branch_frac <= 0.0) {
      for (int i = 4; i >= 0; --i)
        if (cum[i] > 0) return i;
    }
    return kBranch;
  }

  std::uint64_t wrap(std::uint64_t pc) const {
    const std::uint64_t span = code_lines_ * 64;
    return kCodeBase + ((pc - kCodeBase) % span);
  }

  std::uint64_t site_hash(std::uint64_t pc, std::uint64_t salt) const {
    return mix64(pc ^ derive_seed(p_.seed, salt));
  }

  std::uint64_t site_target(std::uint64_t pc, std::uint64_t salt) const {
    const std::uint64_t h = site_hash(pc, salt);
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    std::uint64_t dist = 4 * (4 + (h % 61));
    if (u < 0.6) return wrap(pc + code_lines_ * 64 - (dist % (code_lines_ * 64)));  // backward, loop-like
    if (u < 0.9) return wrap(pc + 4 * (2 + (h >> 20) % 31));                       // forward skip
    return wrap(kCodeBase + 4 * ((h >> 24) % (code_lines_ * 16)));                 // far jump
  }

  void make_branch(TraceRecord& r, bool want_c) {
    r.flags.branch = true;
    const std::uint64_t h = site_hash(r.pc, 1);
    const double kind_u = static_cast<double>(h >> 11) * 0x1.0p-53;
    BranchKind kind = BranchKind::Conditional;
    if (kind_u >= 0.75) {
      if (kind_u < 0.80) kind = BranchKind::Jump;
      else if (kind_u < 0.88) kind = BranchKind::Call;
      else if (kind_u < 0.96) kind = BranchKind::Return;
      else kind = BranchKind::Indirect;
    }
    if (kind == BranchKind::Return && call_stack_.empty()) kind = BranchKind::Conditional;
    if (kind == BranchKind::Call && call_stack_.size() >= kMaxCallDepth) kind = BranchKind::Jump;
    const std::uint64_t len = want_c ? 2 : 4;
    switch (kind) {
      case BranchKind::Conditional: {
        static constexpr std::string_view names[] = {"beq", "bne", "blt", "bge", "bltu", "bgeu"};
        r.mnemonic = want_c ? (rng_.bernoulli(0.5) ? "c.beqz" : "c.bnez")
                            : std::string(names[rng_.below(6)]);
        r.rs1 = source_reg();
        if (!want_c) r.rs2 = source_reg();
        // Sites are strongly biased; the mix of biases matches taken_prob.
        const double hi = 0.97, lo = 0.03;
        const double p_hi = std::clamp((p_.taken_prob - lo) / (hi - lo), 0.0, 1.0);
        const double site_u = static_cast<double>(site_hash(r.pc, 2) >> 11) * 0x1.0p-53;
        const double bias = p_.taken_prob <= 0.0 ? 0.0
                            : p_.taken_prob >= 1.0 ? 1.0
                            : (site_u < p_hi ? hi : lo);
        r.taken = rng_.bernoulli(bias);
        r.target = site_target(r.pc, 3);
        break;
      }
      case BranchKind::Jump:
        r.mnemonic = want_c ? "c.j" : "jal";
        if (!want_c) r.rd = 0;
        r.taken = true;
        r.target = site_target(r.pc, 4);
        break;
      case BranchKind::Call: {
        const std::uint64_t fn = wrap(kCodeBase + 64 * (site_hash(r.pc, 5) % code_lines_));
        if (want_c) {
          r.mnemonic = "c.jalr";
          r.rs1 = 6;
        } else if (site_hash(r.pc, 6) % 4 == 0) {
          r.mnemonic = "jalr";
          r.rd = 1;
          r.rs1 = 6;
        } else {
          r.mnemonic = "jal";
          r.rd = 1;
        }
        r.taken = true;
        r.target = fn;
        call_stack_.push_back(wrap(r.pc + len));
        break;
      }
      case BranchKind::Return:
        r.mnemonic = want_c ? "c.jr" : "jalr";
        if (!want_c) r.rd = 0;
        r.rs1 = 1;
        r.taken = true;
        r.target = call_stack_.back();
        call_stack_.pop_back();
        break;
      default: {
        r.mnemonic = want_c ? "c.jr" : "jalr";
        if (!want_c) r.rd = 0;
        r.rs1 = 7;
        r.taken = true;
        r.target = site_target(r.pc ^ (0x40 * rng_.below(4)), 7);
        break;
      }
    }
    r.flags.compressed = want_c;
  }

  std::uint8_t dest_reg() {
    return static_cast<std::uint8_t>(8 + rng_.below(24));  // x8..x31
  }

  std::uint8_t source_reg() {
    // Producer distance is 1 + Geometric(1/L), mean L.
    const std::uint64_t back = 1 + rng_.geometric(1.0 / p_.dep_chain_len);
    if (back <= writers_.size()) return writers_[writers_.size() - back];
    return static_cast<std::uint8_t>(8 + rng_.below(24));
  }

  void push_writer(std::uint8_t rd) {
    if (rd == 0) return;
    writers_.push_back(rd);
    if (writers_.size() > 256) writers_.pop_front();
  }

  std::uint64_t data_address() {
    const std::uint64_t ws = std::max<std::uint64_t>(8, p_.working_set_bytes);
    // Half the accesses continue a stream; the rest favour a hot eighth of the set.
    const double u = rng_.uniform();
    if (u < 0.5) {
      stream_addr_ = kDataBase + ((stream_addr_ - kDataBase + 8) % ws);
    } else if (u < 0.8) {
      stream_addr_ = kDataBase + 8 * rng_.below(std::max<std::uint64_t>(1, ws / 64));
    } else {
      stream_addr_ = kDataBase + 8 * rng_.below((ws + 7) / 8);
    }
    return stream_addr_ & ~std::uint64_t{7};
  }

  WorkloadProfile p_;
  Rng rng_;
  std::uint64_t code_lines_;
  std::uint64_t pc_;
  std::uint64_t stream_addr_;
  std::deque<std::uint8_t> writers_;
  std::vector<std::uint64_t> call_stack_;
  std::vector<double> mix_[5][2];
};

}  // namespace

std::vector<TraceRecord> generate_synthetic_trace(const WorkloadProfile& profile, std::size_t n) {
  validate_profile(profile);
  std::vector<TraceRecord> out;
  out.reserve(n);
  Generator gen(profile);
  for (std::size_t i = 0; i < n; ++i) out.push_back(gen.next());
  return out;
}

}  // namespace onedse
