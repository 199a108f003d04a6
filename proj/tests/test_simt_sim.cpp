#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <tuple>

#include "warpthermo/warpthermo.hpp"

using namespace warpthermo;
using nlohmann::json;

namespace {

Scenario load(const std::string& name) {
  std::ifstream f(std::string(WARPTHERMO_SCENARIO_DIR) + "/" + name);
  if (!f) throw std::runtime_error("missing scenario " + name);
  return parse_scenario(json::parse(f));
}

std::string serialize_all(const std::vector<TraceEvent>& events) {
  std::string out;
  for (const auto& e : events) out += serialize_event(e) + '\n';
  return out;
}

std::set<std::string> findings_of(const std::string& scenario) {
  const auto events = simulate(load(scenario));
  std::set<std::string> out;
  for (const auto& r : analyze(events)) {
    for (const auto& f : r.findings) {
      std::string s = f.region_label + ":" + std::string(to_string(f.kind));
      if (f.subtype) s += "(" + std::string(to_string(*f.subtype)) + ")";
      out.insert(s);
    }
  }
  return out;
}

std::vector<MemAccessRecord> accesses(const std::vector<TraceEvent>& events) {
  std::vector<MemAccessRecord> out;
  for (const auto& e : events) {
    if (const auto* a = std::get_if<AccessEvent>(&e)) out.push_back(a->rec);
  }
  return out;
}

}  // namespace

TEST(Threads, FlattenIsXFastest) {
  const Dim3 block{16, 16, 1};
  EXPECT_EQ(flatten_tid({0, 0, 0}, block), (ThreadCoord{0, 0, 0}));
  EXPECT_EQ(flatten_tid({15, 1, 0}, block), (ThreadCoord{31, 0, 31}));
  EXPECT_EQ(flatten_tid({0, 2, 0}, block), (ThreadCoord{32, 1, 0}));
  const Dim3 cube{4, 4, 4};
  EXPECT_EQ(flatten_tid({1, 2, 3}, cube).tid, 1u + 2 * 4 + 3 * 16);
  for (std::uint64_t tid = 0; tid < 64; ++tid) EXPECT_EQ(flatten_tid(unflatten_tid(tid, cube), cube).tid, tid);
}

TEST(Launch, ValidateRejectsBadShapes) {
  EXPECT_NO_THROW((LaunchConfig{{1, 1, 1}, {1024, 1, 1}}.validate()));
  EXPECT_THROW((LaunchConfig{{1, 1, 1}, {1025, 1, 1}}.validate()), SpecError);
  EXPECT_THROW((LaunchConfig{{0, 1, 1}, {32, 1, 1}}.validate()), SpecError);
  EXPECT_THROW((LaunchConfig{{1, 1, 1}, {32, 0, 1}}.validate()), SpecError);
}

TEST(Allocation, PackingAndAlignment) {
  const AllocationPlan plan({{"A", Space::global, 4, 10, {}},
                             {"s", Space::shared, 4, 3, {}},
                             {"B", Space::global, 8, 1, {}},
                             {"t", Space::shared, 2, 1, {}},
                             {"C", Space::global, 4, 1, Address{0x90000}}});
  EXPECT_EQ(plan.at("A").base, kGlobalHeapBase);
  EXPECT_EQ(plan.at("A").id, 1u);
  EXPECT_EQ(plan.at("B").base, kGlobalHeapBase + 256);
  EXPECT_EQ(plan.at("s").base, 0u);
  EXPECT_EQ(plan.at("t").base, 128u);
  EXPECT_EQ(plan.at("C").base, 0x90000u);
  EXPECT_EQ(plan.at("C").id, 5u);
  EXPECT_THROW(plan.at("missing"), SpecError);
  const auto events = plan.alloc_events();
  ASSERT_EQ(events.size(), 5u);
  const auto& b = std::get<AllocEvent>(events[2]);
  EXPECT_EQ(b.label, "B");
  EXPECT_EQ(b.length, 8u);
}

TEST(Allocation, RejectsEmptyAndRepeated) {
  EXPECT_THROW(AllocationPlan({{"A", Space::global, 4, 0, {}}}), SpecError);
  EXPECT_THROW(AllocationPlan({{"A", Space::global, 4, 1, {}}, {"A", Space::global, 4, 1, {}}}), SpecError);
}

TEST(Terms, ParseAndEvaluate) {
  const SymbolTable s{{"lda", 64}, {"bdx", 16}, {"NJ", 256}};
  EXPECT_EQ(eval_term(parse_term(json(7)), s), 7);
  EXPECT_EQ(eval_term(parse_term(json("lda*bdx")), s), 1024);
  EXPECT_EQ(eval_term(parse_term(json("-NJ")), s), -256);
  EXPECT_EQ(eval_term(parse_term(json("2*lda*-1")), s), -128);
  EXPECT_THROW(parse_term(json("a**b")), SpecError);
  EXPECT_THROW(parse_term(json(1.5)), SpecError);
  EXPECT_THROW(eval_term(parse_term(json("nope")), s), SpecError);
}

TEST(Terms, Affine) {
  const auto e = parse_affine(json{{"c0", 4}, {"tx", 1}, {"ty", "lda"}, {"i", 2}});
  const auto r = resolve(e, {{"lda", 64}});
  EXPECT_EQ(r.c0, 4);
  EXPECT_EQ(r.tx, 1);
  EXPECT_EQ(r.ty, 64);
  EXPECT_EQ(r.tz, 0);
  EXPECT_EQ(r.i, 2);
  EXPECT_EQ(resolve(parse_affine(json("lda")), {{"lda", 3}}).c0, 3);
  EXPECT_THROW(parse_affine(json{{"tw", 1}}), SpecError);
}

TEST(Declarative, GuardsAndLoops) {
  const auto s = parse_scenario(json::parse(R"({
    "allocs": [{"label": "v", "count": 256}],
    "kernel": {"name": "k", "instructions": [
      {"region": "v", "index": {"tx": 1, "i": 32}, "loop": {"count": "n"},
       "guard": [{"lhs": {"tx": 1}, "op": ">=", "rhs": 4}, {"lhs": {"tx": 1, "i": 1}, "op": "!=", "rhs": 6}]}
    ]},
    "params": {"n": 3},
    "grid": [1, 1, 1], "block": [32, 1, 1]})"));
  const auto recs = accesses(simulate(s));
  ASSERT_EQ(recs.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(recs[i].pc, 16u);
    for (std::uint32_t lane = 0; lane < 32; ++lane) {
      const bool on = lane >= 4 && lane + i != 6;
      ASSERT_EQ(recs[i].lane_addrs[lane].has_value(), on) << i << " " << lane;
      if (on) {
        EXPECT_EQ(*recs[i].lane_addrs[lane], kGlobalHeapBase + 4 * (lane + 32 * i));
      }
    }
  }
}

TEST(Declarative, LoopBlocksInterleave) {
  const auto s = parse_scenario(json::parse(R"({
    "allocs": [{"label": "a", "count": 64}, {"label": "b", "count": 64}],
    "kernel": {"name": "k", "instructions": [
      {"loop": {"count": 2}, "body": [{"region": "a", "index": {"i": 1}}, {"region": "b", "kind": "store", "index": {"i": 1}}]}
    ]},
    "grid": [1, 1, 1], "block": [32, 1, 1]})"));
  const auto recs = accesses(simulate(s));
  ASSERT_EQ(recs.size(), 4u);
  EXPECT_EQ(recs[0].pc, 16u);
  EXPECT_EQ(recs[1].pc, 32u);
  EXPECT_EQ(recs[1].kind, AccessKind::store);
  EXPECT_EQ(recs[2].pc, 16u);
  EXPECT_EQ(*recs[2].lane_addrs[0], kGlobalHeapBase + 4);
}

TEST(Declarative, Gather) {
  const auto s = parse_scenario(json::parse(R"({
    "allocs": [{"label": "x", "count": 16}],
    "inputs": {"perm": [5, 3, 9, 0]},
    "kernel": {"name": "k", "instructions": [
      {"region": "x", "gather": "perm", "index": {"tx": 1}, "guard": [{"lhs": {"tx": 1}, "op": "<", "rhs": 4}]}
    ]},
    "grid": [1, 1, 1], "block": [32, 1, 1]})"));
  const auto recs = accesses(simulate(s));
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].active_mask, 0xFu);
  EXPECT_EQ(*recs[0].lane_addrs[2], kGlobalHeapBase + 36);
}

TEST(Declarative, ErrorsAreSpecErrors) {
  const std::string base = R"("grid": [1, 1, 1], "block": [32, 1, 1], "allocs": [{"label": "v", "count": 8}])";
  auto run = [&](const std::string& kernel) { return simulate(parse_scenario(json::parse("{" + kernel + "," + base + "}"))); };
  EXPECT_THROW(run(R"("kernel": {"instructions": [{"region": "v", "index": {"tx": 1}}]})"), SpecError);  // lane 8 overruns
  EXPECT_THROW(run(R"("kernel": {"instructions": [{"region": "w"}]})"), SpecError);
  EXPECT_THROW(run(R"("kernel": {"instructions": [{"region": "v", "gather": "g"}]})"), SpecError);
  EXPECT_THROW(run(R"("kernel": {"instructions": [{"region": "v", "size": 3}]})"), SpecError);
  EXPECT_THROW(run(R"("kernel": {"instructions": [{"region": "v", "space": "shared"}]})"), SpecError);
  EXPECT_THROW(run(R"("kernel": {"instructions": [{"region": "v", "index": "q"}]})"), SpecError);
  EXPECT_THROW(run(R"("kernel": "no_such_builtin")"), SpecError);
  EXPECT_THROW(run(R"("kernel": "gemm_v00")"), SpecError);  // missing params
  EXPECT_THROW(parse_scenario(json::parse(R"({"kernel": "gemm_v00", "grid": [1, 1], "block": [1, 1, 1]})")), SpecError);
  EXPECT_THROW(parse_scenario(json::parse(R"({"kernel": "gemm_v00", "block": [1, 1, 1]})")), SpecError);
}

TEST(Builtins, MatchDeclarativeDescriptions) {
  for (const std::string name : {"gemm_v00", "gramschmidt_k3"}) {
    const auto builtin = serialize_all(simulate(load(name + ".json")));
    const auto declarative = serialize_all(simulate(load(name + "_declarative.json")));
    EXPECT_EQ(builtin, declarative) << name;
  }
}

TEST(Builtins, GemmMatchesPerThreadReference) {
  const auto s = load("gemm_v00.json");
  const auto events = simulate(s);
  const AllocationPlan plan(s.allocs);
  const auto& p = s.launches[0].spec.params;
  const auto cfg = s.launches[0].config;
  using Key = std::tuple<std::uint32_t, std::uint32_t, std::uint32_t, std::uint64_t, Address>;  // block x,y / warp / pc / addr
  std::multiset<Key> expected;
  for (std::uint32_t bx = 0; bx < cfg.grid_dim.x; ++bx) {
    for (std::uint32_t by = 0; by < cfg.grid_dim.y; ++by) {
      for (std::uint32_t ty = 0; ty < cfg.block_dim.y; ++ty) {
        for (std::uint32_t tx = 0; tx < cfg.block_dim.x; ++tx) {
          const std::int64_t row = bx * cfg.block_dim.x + tx;
          const std::int64_t col = by * cfg.block_dim.y + ty;
          const std::uint32_t warp = (ty * cfg.block_dim.x + tx) / 32;
          for (std::int64_t kk = 0; kk < p.at("k"); ++kk) {
            expected.emplace(bx, by, warp, 16, plan.at("A").base + 4 * (row * p.at("lda") + kk));
            expected.emplace(bx, by, warp, 32, plan.at("B").base + 4 * (kk * p.at("ldb") + col));
          }
          expected.emplace(bx, by, warp, 48, plan.at("C").base + 4 * (row * p.at("ldc") + col));
          expected.emplace(bx, by, warp, 64, plan.at("C").base + 4 * (row * p.at("ldc") + col));
        }
      }
    }
  }
  std::multiset<Key> actual;
  for (const auto& rec : accesses(events)) {
    rec.for_each_active([&](std::uint32_t, Address a) { actual.emplace(rec.block_id.x, rec.block_id.y, rec.warp_id, rec.pc, a); });
  }
  EXPECT_EQ(actual, expected);
}

TEST(Builtins, SpmvDivergenceShrinksMask) {
  const auto s = parse_scenario(json::parse(R"({
    "kernel": "spmv_csr", "params": {"numRows": 4},
    "inputs": {"rowOffsets": [0, 3, 3, 4, 5], "colIndices": [0, 1, 2, 7, 3]},
    "allocs": [{"label": "rowOffsets", "count": 5}, {"label": "colIndices", "count": 5}, {"label": "values", "count": 5},
               {"label": "x", "count": 8}, {"label": "y", "count": 4}],
    "grid": [1, 1, 1], "block": [32, 1, 1]})"));
  std::vector<std::uint32_t> x_masks;
  const auto& x = AllocationPlan(s.allocs).at("x");
  for (const auto& r : accesses(simulate(s))) {
    if (r.pc == builtin::pc_of(4)) {
      x_masks.push_back(r.active_mask);
      r.for_each_active([&](std::uint32_t, Address a) { EXPECT_TRUE(x.base <= a && a < x.base + x.length()); });
    }
  }
  EXPECT_EQ(x_masks, (std::vector<std::uint32_t>{0b1101, 0b0001, 0b0001}));
}

TEST(Simulation, Deterministic) {
  for (const auto* name : {"spmv_csr.json", "ttm_smem.json", "misalignment_offset.json"}) {
    EXPECT_EQ(serialize_all(simulate(load(name))), serialize_all(simulate(load(name)))) << name;
  }
}

TEST(Simulation, EventOrder) {
  const auto events = simulate(load("misalignment_offset.json"));
  ASSERT_GE(events.size(), 5u);
  EXPECT_TRUE(std::holds_alternative<AllocEvent>(events[0]));
  EXPECT_EQ(std::get<KernelBeginEvent>(events[1]).kernel_name, "load_offset16");
  EXPECT_TRUE(std::holds_alternative<AccessEvent>(events[2]));
  EXPECT_EQ(std::get<KernelEndEvent>(events[3]).kernel_name, "load_offset16");
  EXPECT_EQ(std::get<KernelBeginEvent>(events[4]).kernel_name, "load_offset0");
}

TEST(Classification, ReferenceKernels) {
  using S = std::set<std::string>;
  EXPECT_EQ(findings_of("gemm_v00.json"), (S{"A:Hot", "B:FalseSharing", "C:FalseSharing"}));
  EXPECT_EQ(findings_of("gemm_v01.json"), (S{"B:Hot"}));
  EXPECT_EQ(findings_of("spmv_csr.json"), (S{"rowOffsets:Misalignment", "x:RandomHot"}));
  EXPECT_EQ(findings_of("gramschmidt_k2.json"), (S{"a:Strided", "r:Hot", "q:Strided"}));
  EXPECT_EQ(findings_of("gramschmidt_k3.json"), (S{"q:Hot", "q:Strided"}));
  EXPECT_EQ(findings_of("ttm_smem.json"), (S{"Y_shr:SmemAbuse(thread_local)"}));
  EXPECT_EQ(findings_of("warp_broadcast_smem.json"),
            (S{"exel_sum:SmemAbuse(warp_private)", "base_idx:SmemAbuse(warp_private)"}));
  EXPECT_EQ(findings_of("pair_false_sharing.json"), (S{"data:FalseSharing"}));
  EXPECT_EQ(findings_of("pair_coalesced.json"), S{});
  EXPECT_EQ(findings_of("strided.json"), (S{"m:Strided"}));
}

TEST(Classification, OnlyTheOffsetLaunchIsMisaligned) {
  const auto results = analyze(simulate(load("misalignment_offset.json")));
  ASSERT_EQ(results.size(), 2u);
  ASSERT_EQ(results[0].findings.size(), 1u);
  EXPECT_EQ(results[0].findings[0].kind, PatternKind::misalignment);
  EXPECT_TRUE(results[1].findings.empty());
}
