#include <doctest.h>

#include <algorithm>
#include <set>

#include "onedse/error.hpp"
#include "onedse/simulator.hpp"
#include "onedse/trace.hpp"

using namespace onedse;

namespace {

TraceRecord alu(std::uint64_t pc, std::string m = "addi") {
  TraceRecord r;
  r.pc = pc;
  r.mnemonic = std::move(m);
  return r;
}

std::vector<TraceRecord> numbered(std::size_t n) {
  std::vector<TraceRecord> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back(alu(0x1000 + 4 * i));
  return v;
}

}  // namespace

TEST_CASE("parse_trace field mapping") {
  const auto recs = parse_trace(
      "# header comment\n"
      "0x1000 addi - rd=5 rs1=5\n"
      "0x1004 beq BR,T tgt=0x0ff0 rs1=5 rs2=6\n"
      "0x1008 ld LD rd=3 rs1=2 addr=0x8000   # trailing comment\n"
      "\n"
      "0x100c c.sw C,ST rs1=2 rs2=3 addr=0x8008\n"
      "0x1010 bne BR tgt=0x2000 rs1=1\n");
  REQUIRE(recs.size() == 5);

  CHECK(recs[0].pc == 0x1000);
  CHECK(recs[0].mnemonic == "addi");
  CHECK(recs[0].flags == TraceFlags{});
  CHECK(recs[0].rd == 5);
  CHECK(recs[0].rs1 == 5);
  CHECK_FALSE(recs[0].rs2.has_value());
  CHECK_FALSE(recs[0].taken.has_value());

  CHECK(recs[1].flags.branch);
  CHECK(recs[1].taken == true);
  CHECK(recs[1].target == 0x0ff0);

  CHECK(recs[2].flags.load);
  CHECK(recs[2].mem_addr == 0x8000);

  CHECK(recs[3].flags.compressed);
  CHECK(recs[3].flags.store);

  CHECK(recs[4].taken == false);
}

TEST_CASE("parse_trace errors") {
  SUBCASE("load without an address") { CHECK_THROWS_AS(parse_trace("0x1000 ld LD rd=1 rs1=2\n"), ValidationError); }
  SUBCASE("branch without a target") { CHECK_THROWS_AS(parse_trace("0x1000 beq BR,T rs1=1\n"), ValidationError); }
  SUBCASE("malformed line carries its line number") {
    try {
      parse_trace("0x1000 addi -\n\nnot-a-pc addi -\n");
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 3);
    }
  }
  SUBCASE("unknown flag") { CHECK_THROWS_AS(parse_trace("0x1000 addi XX\n"), ParseError); }
  SUBCASE("register out of range") { CHECK_THROWS_AS(parse_trace("0x1000 addi - rd=32\n"), ValidationError); }
}

TEST_CASE("format and parse round trip") {
  WorkloadProfile p;
  p.seed = 3;
  const auto recs = generate_synthetic_trace(p, 2000);
  CHECK(parse_trace(format_trace(recs)) == recs);
}

TEST_CASE("chunk_trace") {
  SUBCASE("25 records, s = 10") {
    const auto recs = numbered(25);
    const auto chunks = chunk_trace(recs, 10);
    REQUIRE(chunks.size() == 3);
    CHECK(chunks[0].records.size() == 10);
    CHECK(chunks[1].records.size() == 10);
    CHECK(chunks[2].records.size() == 5);
    std::vector<TraceRecord> joined;
    for (const auto& c : chunks) joined.insert(joined.end(), c.records.begin(), c.records.end());
    CHECK(joined == recs);
    CHECK(chunks[2].id == 2);
  }
  SUBCASE("empty input") { CHECK(chunk_trace({}, 10).empty()); }
  SUBCASE("one full chunk") { CHECK(chunk_trace(numbered(10000), 10000).size() == 1); }
  SUBCASE("s = 0") { CHECK_THROWS_AS(chunk_trace(numbered(3), 0), ArgumentError); }
  SUBCASE("ids start at first_id and warm-up context precedes the chunk") {
    const auto recs = numbered(40);
    const auto chunks = chunk_trace(recs, 10, 100, 15);
    CHECK(chunks[0].id == 100);
    CHECK(chunks[0].warmup().empty());
    CHECK(chunks[1].warmup().size() == 10);
    REQUIRE(chunks[3].warmup().size() == 15);
    CHECK(chunks[3].warmup().front() == recs[15]);
    CHECK(chunks[3].warmup().back() == recs[29]);
  }
}

TEST_CASE("dictionary") {
  std::vector<TraceRecord> recs = {alu(0, "addi"), alu(4, "ld"), alu(8, "addi"), alu(12, "j")};
  const TokenDict dict = build_dictionary(recs);
  REQUIRE(dict.size() == 3);
  CHECK(dict.find("addi") == 0);
  CHECK(dict.find("ld") == 1);
  CHECK(dict.find("j") == 2);
  CHECK(dict.pad_id() == 3);
  CHECK(build_dictionary({}).size() == 0);
  CHECK(TokenDict::parse(dict.serialize()) == dict);

  SUBCASE("a long generated trace uses the whole 150-mnemonic catalog") {
    WorkloadProfile p;
    p.mul_frac = p.div_frac = 0.05;
    p.alu_frac = 0.46;
    p.seed = 11;
    const TokenDict big = build_dictionary(generate_synthetic_trace(p, 400000));
    CHECK(mnemonic_catalog().size() == 150);
    CHECK(big.size() == 150);
  }
}

TEST_CASE("tokenize_chunk") {
  const TokenDict dict({"addi", "ld", "j"});
  Chunk c;
  c.records = {alu(0, "addi"), alu(4, "ld")};
  const auto t = tokenize_chunk(c, dict, 4);
  CHECK(t == TokenSequence{0, 1, 3, 3});

  Chunk full;
  full.records = {alu(0, "j"), alu(4, "addi"), alu(8, "ld"), alu(12, "j")};
  const auto tf = tokenize_chunk(full, dict, 4);
  CHECK(std::count(tf.begin(), tf.end(), dict.pad_id()) == 0);
  const std::vector<std::string> names = {"j", "addi", "ld", "j"};
  CHECK(detokenize(tf, dict) == names);

  Chunk odd;
  odd.records = {alu(0, "mystery")};
  CHECK_THROWS_AS(tokenize_chunk(odd, dict, 4), ValidationError);
  const TokenDict lenient = dict.with_unknown();
  const auto tl = tokenize_chunk(odd, lenient, 2, UnknownPolicy::Lenient);
  CHECK(tl[0] == lenient.pad_id() - 1);
  CHECK(tl[1] == lenient.pad_id());
}

TEST_CASE("synthetic generator") {
  SUBCASE("empty and deterministic") {
    WorkloadProfile p;
    CHECK(generate_synthetic_trace(p, 0).empty());
    CHECK(generate_synthetic_trace(p, 5000) == generate_synthetic_trace(p, 5000));
    WorkloadProfile q = p;
    q.seed = 2;
    CHECK_FALSE(generate_synthetic_trace(q, 5000) == generate_synthetic_trace(p, 5000));
  }
  SUBCASE("every record satisfies the field invariants") {
    WorkloadProfile p;
    p.seed = 5;
    for (const auto& r : generate_synthetic_trace(p, 20000)) validate_record(r);
  }
  SUBCASE("branch fraction concentrates") {
    WorkloadProfile p;
    p.alu_frac = 0.43;
    p.branch_frac = 0.2;
    p.load_frac = 0.2;
    p.store_frac = 0.1;
    p.mul_frac = 0.05;
    p.div_frac = 0.02;
    p.seed = 42;
    const auto recs = generate_synthetic_trace(p, 100000);
    const auto branches = std::count_if(recs.begin(), recs.end(), [](const TraceRecord& r) { return r.flags.branch; });
    CHECK(branches >= 19000);
    CHECK(branches <= 21000);
  }
  SUBCASE("data addresses stay in the working set") {
    WorkloadProfile p;
    p.working_set_bytes = 8192;
    p.seed = 9;
    std::uint64_t lo = ~0ULL, hi = 0;
    for (const auto& r : generate_synthetic_trace(p, 20000))
      if (r.mem_addr) lo = std::min(lo, *r.mem_addr), hi = std::max(hi, *r.mem_addr);
    CHECK(hi - lo < 8192);
  }
  SUBCASE("invalid profile") {
    WorkloadProfile p;
    p.alu_frac = 0.9;
    CHECK_THROWS_AS(generate_synthetic_trace(p, 10), ArgumentError);
  }
  SUBCASE("load-heavy and load-light workloads differ in IPC") {
    WorkloadProfile light;
    light.alu_frac = 0.67;
    light.load_frac = 0.05;
    light.working_set_bytes = 4 << 20;
    light.seed = 21;
    WorkloadProfile heavy = light;
    heavy.alu_frac = 0.37;
    heavy.load_frac = 0.35;
    const auto& space = DesignSpace::builtin();
    const Configuration cfg = middle_config(space);
    auto ipc = [&](const WorkloadProfile& p) {
      const auto recs = generate_synthetic_trace(p, 4096);
      SimStats total;
      for (const auto& c : chunk_trace(recs, 256, 0, 2048)) total += simulate(c, cfg, space);
      return static_cast<double>(total[Counter::Instructions]) / static_cast<double>(total[Counter::Cycles]);
    };
    const double a = ipc(light), b = ipc(heavy);
    CHECK(std::abs(a - b) / std::max(a, b) > 0.01);
  }
}

TEST_CASE("profile text round trip") {
  WorkloadProfile p;
  p.seed = 77;
  p.taken_prob = 0.25;
  p.working_set_bytes = 1 << 20;
  CHECK(parse_profile(format_profile(p)) == p);
  CHECK_THROWS_AS(parse_profile("bogus = 1\n"), ParseError);
}

TEST_CASE("classification") {
  TraceRecord r = alu(0, "mul");
  CHECK(classify(r) == OpClass::Mul);
  r.mnemonic = "unheard_of";
  CHECK(classify(r) == OpClass::Alu);
  r.flags.load = true;
  r.mem_addr = 0x10;
  CHECK(classify(r) == OpClass::Load);
  std::set<std::string_view> names;
  for (const auto& m : mnemonic_catalog()) names.insert(m.name);
  CHECK(names.size() == mnemonic_catalog().size());
}
