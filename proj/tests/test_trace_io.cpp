#include <gtest/gtest.h>

#include <sstream>

#include "support/generators.hpp"

using namespace warpthermo;

TEST(WireFormat, ParsesAlloc) {
  const auto e = parse_event(R"({"ev":"alloc","id":1,"label":"A","space":"global","base":4096,"len":16384})");
  const auto& a = std::get<AllocEvent>(e);
  EXPECT_EQ(a.id, 1u);
  EXPECT_EQ(a.label, "A");
  const auto r = make_region(a);
  EXPECT_EQ(r.start_tag, 128u);
  EXPECT_EQ(r.end_tag, 639u);
}

TEST(WireFormat, ParsesSingleLaneAccess) {
  const auto e = parse_event(
      R"({"ev":"mem","pc":16,"warp":0,"block":[0,0,0],"kind":"load","space":"global","size":4,"mask":"0x1","addrs":[64]})");
  const auto& rec = std::get<AccessEvent>(e).rec;
  EXPECT_EQ(rec.active_mask, 1u);
  EXPECT_EQ(rec.lane_addrs[0], Address{64});
  EXPECT_FALSE(rec.lane_addrs[1].has_value());
  EXPECT_EQ(rec.pc, 16u);
}

TEST(WireFormat, AddressesFollowAscendingLaneOrder) {
  const auto e = parse_event(
      R"({"ev":"mem","pc":16,"warp":2,"block":[1,0,0],"kind":"store","space":"shared","size":8,"mask":"0x80000005","addrs":[0,8,248]})");
  const auto& rec = std::get<AccessEvent>(e).rec;
  EXPECT_EQ(rec.lane_addrs[0], Address{0});
  EXPECT_EQ(rec.lane_addrs[2], Address{8});
  EXPECT_EQ(rec.lane_addrs[31], Address{248});
  EXPECT_EQ(rec.kind, AccessKind::store);
  EXPECT_EQ(rec.space, Space::shared);
}

TEST(WireFormat, MaskAddressMismatchIsMalformed) {
  EXPECT_THROW(parse_event(R"({"ev":"mem","mask":"0x3","addrs":[64]})"), MalformedLine);
  EXPECT_THROW(parse_event(
                   R"({"ev":"mem","pc":16,"warp":0,"block":[0,0,0],"kind":"load","space":"global","size":4,"mask":"0x3","addrs":[64]})"),
               MalformedLine);
}

TEST(WireFormat, RejectsMalformedLines) {
  EXPECT_THROW(parse_event("not json"), MalformedLine);
  EXPECT_THROW(parse_event(R"({"ev":"launch"})"), MalformedLine);
  EXPECT_THROW(parse_event(R"({"ev":"free"})"), MalformedLine);
  EXPECT_THROW(parse_event(R"({"ev":"free","id":"x"})"), MalformedLine);
  EXPECT_THROW(parse_event(R"({"ev":"free","id":1,"extra":2})"), MalformedLine);
  EXPECT_THROW(parse_event(
                   R"({"ev":"mem","pc":16,"warp":0,"block":[0,0],"kind":"load","space":"global","size":4,"mask":"0x1","addrs":[64]})"),
               MalformedLine);
  EXPECT_THROW(parse_event(
                   R"({"ev":"mem","pc":16,"warp":0,"block":[0,0,0],"kind":"read","space":"global","size":4,"mask":"0x1","addrs":[64]})"),
               MalformedLine);
  EXPECT_THROW(parse_event(
                   R"({"ev":"mem","pc":16,"warp":0,"block":[0,0,0],"kind":"load","space":"global","size":4,"mask":"1","addrs":[64]})"),
               MalformedLine);
  EXPECT_THROW(parse_event(
                   R"({"ev":"mem","pc":16,"warp":0,"block":[0,0,0],"kind":"load","space":"global","size":4,"mask":"0x1","addrs":[-4]})"),
               MalformedLine);
}

TEST(WireFormat, RejectsInvariantViolations) {
  const std::string head = R"({"ev":"mem","pc":16,"block":[0,0,0],"kind":"load","space":"global",)";
  EXPECT_NO_THROW(parse_event(head + R"("warp":63,"size":4,"mask":"0x1","addrs":[64]})"));
  EXPECT_THROW(parse_event(head + R"("warp":64,"size":4,"mask":"0x1","addrs":[64]})"), InvariantViolation);
  EXPECT_THROW(parse_event(head + R"("warp":0,"size":3,"mask":"0x1","addrs":[64]})"), InvariantViolation);
  EXPECT_THROW(parse_event(head + R"("warp":0,"size":4,"mask":"0x1","addrs":[9223372036854775807]})"), InvariantViolation);
  EXPECT_THROW(parse_event(R"({"ev":"alloc","id":1,"label":"A","space":"global","base":0,"len":0})"), InvariantViolation);
}

TEST(WireFormat, SerializeIsCanonical) {
  MemAccessRecord rec;
  rec.pc = 32;
  rec.warp_id = 3;
  rec.block_id = {1, 2, 3};
  rec.set_lane(0, 64);
  rec.set_lane(4, 80);
  EXPECT_EQ(serialize_event(AccessEvent{rec}),
            R"({"ev":"mem","pc":32,"warp":3,"block":[1,2,3],"kind":"load","space":"global","size":4,"mask":"0x11","addrs":[64,80]})");
  EXPECT_EQ(serialize_event(KernelBeginEvent{"k", {2, 1, 1}, {32, 1, 1}}),
            R"({"ev":"kernel_begin","name":"k","grid":[2,1,1],"block":[32,1,1]})");
}

TEST(WireFormat, RoundTripRandomEvents) {
  gen::Rng rng(21);
  for (int i = 0; i < 5000; ++i) {
    const auto e = gen::random_event(rng);
    const auto line = serialize_event(e);
    const auto back = parse_event(line);
    ASSERT_EQ(back, e) << line;
    ASSERT_EQ(serialize_event(back), line);
  }
}

TEST(TraceReader, ReportsLineNumbers) {
  std::istringstream in("{\"ev\":\"free\",\"id\":1}\n\n{\"ev\":\"bogus\"}\n");
  TraceReader r(in);
  TraceEvent e;
  EXPECT_TRUE(r.next(e));
  try {
    r.next(e);
    FAIL() << "expected a parse error";
  } catch (const TraceParseError& err) {
    EXPECT_EQ(err.line, 3u);
    EXPECT_FALSE(err.is_invariant);
    EXPECT_NE(std::string(err.what()).find("line 3"), std::string::npos);
  }
}

TEST(TraceWriter, WritesOneEventPerLine) {
  std::ostringstream out;
  TraceWriter w(out);
  w.write(FreeEvent{4});
  w.write(KernelEndEvent{"k"});
  EXPECT_EQ(out.str(), "{\"ev\":\"free\",\"id\":4}\n{\"ev\":\"kernel_end\",\"name\":\"k\"}\n");
  std::istringstream in(out.str());
  EXPECT_EQ(read_all(in).size(), 2u);
}

TEST(Registry, LookupAndBoundaries) {
  RegionRegistry reg;
  reg.register_alloc(AllocEvent{1, "A", Space::global, 4096, 16384});
  ASSERT_NE(reg.lookup(Space::global, 4100), nullptr);
  EXPECT_EQ(reg.lookup(Space::global, 4100)->label, "A");
  EXPECT_EQ(reg.lookup(Space::global, 20480), nullptr);
  EXPECT_EQ(reg.lookup(Space::global, 4095), nullptr);
  EXPECT_EQ(reg.lookup(Space::shared, 4100), nullptr);
}

TEST(Registry, RejectsOverlapReuseAndDoubleFree) {
  RegionRegistry reg;
  reg.register_alloc(AllocEvent{1, "A", Space::global, 4096, 16384});
  EXPECT_THROW(reg.register_alloc(AllocEvent{2, "B", Space::global, 8192, 16}), InvariantViolation);
  EXPECT_THROW(reg.register_alloc(AllocEvent{3, "C", Space::global, 0, 4097}), InvariantViolation);
  EXPECT_THROW(reg.register_alloc(AllocEvent{1, "D", Space::global, 1 << 20, 16}), InvariantViolation);
  EXPECT_NO_THROW(reg.register_alloc(AllocEvent{4, "E", Space::shared, 4096, 16}));
  EXPECT_NO_THROW(reg.register_alloc(AllocEvent{5, "F", Space::global, 20480, 16}));
  reg.release(1);
  EXPECT_THROW(reg.release(1), InvariantViolation);
  EXPECT_THROW(reg.release(99), InvariantViolation);
  EXPECT_EQ(reg.lookup(Space::global, 4100), nullptr);
  EXPECT_NO_THROW(reg.register_alloc(AllocEvent{6, "G", Space::global, 8192, 16}));
}

TEST(Registry, FindOverlappingSector) {
  RegionRegistry reg;
  reg.register_alloc(AllocEvent{1, "A", Space::global, 40, 8});   // inside sector 1
  reg.register_alloc(AllocEvent{2, "B", Space::global, 100, 60});  // sectors 3..4
  EXPECT_EQ(reg.find_overlapping(Space::global, 0), nullptr);
  EXPECT_EQ(reg.find_overlapping(Space::global, 1)->id, 1u);
  EXPECT_EQ(reg.find_overlapping(Space::global, 2), nullptr);
  EXPECT_EQ(reg.find_overlapping(Space::global, 3)->id, 2u);
  EXPECT_EQ(reg.find_overlapping(Space::global, 4)->id, 2u);
  EXPECT_EQ(reg.find_overlapping(Space::global, 5), nullptr);
}

namespace {

std::vector<TraceEvent> two_block_trace() {
  std::vector<TraceEvent> t;
  t.push_back(AllocEvent{1, "A", Space::global, 0, 1024});
  t.push_back(KernelBeginEvent{"gemm_v00", {2, 1, 1}, {32, 1, 1}});
  for (std::uint32_t b = 0; b < 2; ++b) {
    MemAccessRecord rec;
    rec.block_id = {b, 0, 0};
    rec.set_lane(0, 4 * b);
    t.push_back(AccessEvent{rec});
  }
  t.push_back(KernelEndEvent{"gemm_v00"});
  t.push_back(KernelBeginEvent{"gemm_v01", {1, 1, 1}, {32, 1, 1}});
  MemAccessRecord rec;
  rec.set_lane(0, 0);
  t.push_back(AccessEvent{rec});
  t.push_back(KernelEndEvent{"gemm_v01"});
  t.push_back(FreeEvent{1});
  return t;
}

std::size_t accesses(const std::vector<TraceEvent>& t) {
  return static_cast<std::size_t>(std::count_if(t.begin(), t.end(), [](const TraceEvent& e) { return std::holds_alternative<AccessEvent>(e); }));
}

}  // namespace

TEST(Sampling, FilterBlockKeepsOnlyTargetAccesses) {
  const auto t = two_block_trace();
  SamplingPolicy p;
  const auto f = filter_block(t, p);
  EXPECT_EQ(accesses(f), 2u);
  EXPECT_EQ(f.size(), t.size() - 1);
  p.target_block = {1, 0, 0};
  EXPECT_EQ(accesses(filter_block(t, p)), 1u);
  p.target_block = {5, 0, 0};
  const auto none = filter_block(t, p);
  EXPECT_EQ(accesses(none), 0u);
  EXPECT_EQ(none.size(), t.size() - 3);
}

TEST(Sampling, KernelWhitelist) {
  const auto t = two_block_trace();
  SamplingPolicy p;
  EXPECT_EQ(filter_kernels(t, p), t);
  p.kernel_whitelist = std::vector<std::string>{"gemm_v00"};
  auto f = filter_kernels(t, p);
  EXPECT_EQ(accesses(f), 2u);
  EXPECT_TRUE(std::none_of(f.begin(), f.end(), [](const TraceEvent& e) {
    const auto* b = std::get_if<KernelBeginEvent>(&e);
    return b && b->kernel_name == "gemm_v01";
  }));
  EXPECT_TRUE(std::holds_alternative<FreeEvent>(f.back()));
  p.kernel_whitelist = std::vector<std::string>{"gemm_*"};
  EXPECT_EQ(filter_kernels(t, p), t);
  p.kernel_whitelist = std::vector<std::string>{};
  EXPECT_EQ(accesses(filter_kernels(t, p)), 0u);
}

TEST(Sampling, FiltersCommute) {
  gen::Rng rng(22);
  for (int i = 0; i < 100; ++i) {
    auto t = gen::random_trace(rng, 40);
    auto more = gen::random_trace(rng, 40);
    for (auto& e : more) {
      if (auto* b = std::get_if<KernelBeginEvent>(&e)) b->kernel_name = "other";
      if (auto* k = std::get_if<KernelEndEvent>(&e)) k->kernel_name = "other";
      if (std::holds_alternative<AccessEvent>(e) || std::holds_alternative<KernelBeginEvent>(e) ||
          std::holds_alternative<KernelEndEvent>(e)) {
        t.push_back(e);
      }
    }
    SamplingPolicy p;
    p.target_block = {static_cast<std::uint32_t>(rng.uniform(0, 1)), static_cast<std::uint32_t>(rng.uniform(0, 1)), 0};
    p.kernel_whitelist = std::vector<std::string>{rng.chance(0.5) ? "k" : "oth*"};
    ASSERT_EQ(filter_kernels(filter_block(t, p), p), filter_block(filter_kernels(t, p), p));
  }
}
