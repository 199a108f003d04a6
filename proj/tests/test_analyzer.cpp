#include <gtest/gtest.h>

#include <random>

#include "oracle/oracle.hpp"
#include "support/generators.hpp"

using namespace warpthermo;

namespace {

// One warp, lanes 0..7 load the eight words of sector 0.
std::vector<MemAccessRecord> coalesced_pair() {
  MemAccessRecord rec;
  for (std::uint32_t l = 0; l < 8; ++l) rec.set_lane(l, l * 4);
  return {rec};
}

// Eight warps, lane 0 of warp w loads word w of sector 0.
std::vector<MemAccessRecord> false_sharing_pair() {
  std::vector<MemAccessRecord> out;
  for (std::uint32_t w = 0; w < 8; ++w) {
    MemAccessRecord rec;
    rec.warp_id = w;
    rec.set_lane(0, w * 4);
    out.push_back(rec);
  }
  return out;
}

HeatTable heat_of(const std::vector<MemAccessRecord>& records, const RegionRegistry& reg = {}) {
  HistoryMap m;
  for (const auto& r : records) ingest(m, r);
  return flush(m, reg, KernelMeta{});
}

void expect_matches_oracle(const HeatTable& table, const std::vector<MemAccessRecord>& records) {
  oracle::WarpSetHeat o;
  for (const auto& r : records) o.add(r);
  const auto expected = o.temps();
  ASSERT_EQ(table.rows.size(), expected.size());
  for (const auto& row : table.rows) {
    auto it = expected.find({row.space, row.sector_tag});
    ASSERT_NE(it, expected.end());
    EXPECT_EQ(row.word_temps, it->second.words) << "tag " << row.sector_tag;
    EXPECT_EQ(row.sector_temp, it->second.sector) << "tag " << row.sector_tag;
  }
}

}  // namespace

TEST(History, TouchKeepsSectorMaskEqualToUnion) {
  SectorHistory h;
  h.touch(0b1011, 1, kind_bit(AccessKind::load));
  h.touch(0b0100, 4, kind_bit(AccessKind::store));
  WarpMask u = 0;
  for (auto m : h.word_masks) u |= m;
  EXPECT_EQ(h.sector_mask, u);
  EXPECT_EQ(h.kinds, kind_bit(AccessKind::load) | kind_bit(AccessKind::store));
}

TEST(Flush, PopcountExample) {
  HistoryMap m;
  auto& h = m.space(Space::global)[0];
  h.word_masks[0] = 0b1011;
  h.sector_mask = 0b1011;
  const auto t = flush(m, {}, KernelMeta{});
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(t.rows[0].word_temps, (std::array<std::uint32_t, 8>{3, 0, 0, 0, 0, 0, 0, 0}));
  EXPECT_EQ(t.rows[0].sector_temp, 3u);
  EXPECT_TRUE(flush(HistoryMap{}, {}, KernelMeta{}).rows.empty());
}

TEST(Flush, CoalescedAndFalseSharingPairs) {
  const auto a = heat_of(coalesced_pair());
  const auto b = heat_of(false_sharing_pair());
  ASSERT_EQ(a.rows.size(), 1u);
  ASSERT_EQ(b.rows.size(), 1u);
  const std::array<std::uint32_t, 8> ones{1, 1, 1, 1, 1, 1, 1, 1};
  EXPECT_EQ(a.rows[0].word_temps, ones);
  EXPECT_EQ(b.rows[0].word_temps, ones);
  EXPECT_EQ(a.rows[0].sector_temp, 1u);
  EXPECT_EQ(b.rows[0].sector_temp, 8u);
}

TEST(AccessCounts, PairsAreIndistinguishable) {
  AccessCountTable a, b;
  for (const auto& r : coalesced_pair()) a.add(r);
  for (const auto& r : false_sharing_pair()) b.add(r);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.sector_totals.at(SectorKey{Space::global, 0}), 8u);
  for (std::uint32_t w = 0; w < 8; ++w) EXPECT_EQ(a.word_counts.at({Space::global, 0, w}), 1u);
  EXPECT_TRUE(access_counts(std::vector<TraceEvent>{}).empty());
}

TEST(AccessCounts, MatchesNaiveOracle) {
  gen::Rng rng(31);
  const auto records = gen::random_records(rng, 2000);
  AccessCountTable t;
  for (const auto& r : records) t.add(r);
  const auto expected = oracle::naive_counts(records);
  ASSERT_EQ(t.word_counts.size(), expected.size());
  std::map<SectorKey, std::uint64_t> totals;
  for (const auto& [k, v] : t.word_counts) {
    EXPECT_EQ(v, expected.at({k.space, k.tag, k.word}));
    totals[SectorKey{k.space, k.tag}] += v;
  }
  EXPECT_EQ(totals, t.sector_totals);
}

TEST(Flush, MatchesExplicitSetOracle) {
  gen::Rng rng(32);
  for (int round = 0; round < 5; ++round) {
    const auto records = gen::random_records(rng, 2000);
    expect_matches_oracle(heat_of(records), records);
  }
}

TEST(Flush, SectorTempIsPopcountOfWordUnion) {
  gen::Rng rng(33);
  HistoryMap m;
  for (const auto& r : gen::random_records(rng, 3000, 63)) ingest(m, r);
  for (Space s : kAllSpaces) {
    for (const auto& [tag, h] : m.space(s)) {
      WarpMask u = 0;
      for (auto w : h.word_masks) u |= w;
      ASSERT_EQ(u, h.sector_mask);
    }
  }
}

TEST(Flush, RowsSortedAndBoundToRegions) {
  RegionRegistry reg;
  reg.register_alloc(AllocEvent{1, "A", Space::global, 0, 64});
  reg.register_alloc(AllocEvent{2, "S", Space::shared, 0, 64});
  std::vector<MemAccessRecord> recs;
  for (Address a : {Address{200}, Address{0}, Address{40}}) {
    MemAccessRecord r;
    r.set_lane(0, a);
    recs.push_back(r);
  }
  MemAccessRecord s;
  s.space = Space::shared;
  s.set_lane(0, 8);
  recs.push_back(s);
  const auto t = heat_of(recs, reg);
  ASSERT_EQ(t.rows.size(), 4u);
  EXPECT_EQ(t.rows[0].sector_tag, 0u);
  EXPECT_EQ(t.rows[0].region_id, 1u);
  EXPECT_EQ(t.rows[1].sector_tag, 1u);
  EXPECT_EQ(t.rows[2].sector_tag, 6u);
  EXPECT_EQ(t.rows[2].region_id, kUnknownRegion);
  EXPECT_EQ(t.rows[3].space, Space::shared);
  EXPECT_EQ(t.rows[3].region_id, 2u);
  EXPECT_EQ(t.rows_in(Space::global).size(), 3u);
  EXPECT_EQ(t.rows_in(Space::local).size(), 0u);
}

TEST(Ingest, RejectsWarpIdsBeyondMaskWidth) {
  HistoryMap m;
  MemAccessRecord r;
  r.set_lane(0, 0);
  r.warp_id = 63;
  EXPECT_NO_THROW(ingest(m, r));
  r.warp_id = 64;
  EXPECT_THROW(ingest(m, r), WarpIdOverflow);
}

TEST(Ingest, MonotoneInRecords) {
  gen::Rng rng(34);
  const auto records = gen::random_records(rng, 500);
  HistoryMap m;
  HeatTable prev = flush(m, {}, KernelMeta{});
  for (const auto& r : records) {
    ingest(m, r);
    const auto next = flush(m, {}, KernelMeta{});
    std::size_t j = 0;
    for (const auto& row : prev.rows) {
      while (next.rows[j].space != row.space || next.rows[j].sector_tag != row.sector_tag) ++j;
      for (std::size_t w = 0; w < 8; ++w) ASSERT_GE(next.rows[j].word_temps[w], row.word_temps[w]);
      ASSERT_GE(next.rows[j].sector_temp, row.sector_temp);
    }
    prev = next;
  }
}

TEST(Merge, CommutativeAssociativeAndShardable) {
  gen::Rng rng(35);
  for (int i = 0; i < 100; ++i) {
    const auto records = gen::random_records(rng, 60);
    const std::size_t cut1 = rng.uniform(0, records.size());
    const std::size_t cut2 = rng.uniform(cut1, records.size());
    HistoryMap a, b, c, all;
    for (std::size_t k = 0; k < records.size(); ++k) {
      ingest(k < cut1 ? a : k < cut2 ? b : c, records[k]);
      ingest(all, records[k]);
    }
    ASSERT_EQ(merge(a, b), merge(b, a));
    ASSERT_EQ(merge(merge(a, b), c), merge(a, merge(b, c)));
    ASSERT_EQ(merge(merge(a, b), c), all);
  }
}

TEST(Flush, PermutationInvariant) {
  gen::Rng rng(36);
  for (int i = 0; i < 100; ++i) {
    auto records = gen::random_records(rng, 80);
    const auto before = heat_of(records);
    std::shuffle(records.begin(), records.end(), rng.engine());
    ASSERT_EQ(heat_of(records), before);
  }
}
