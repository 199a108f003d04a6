#pragma once

// Distinct-warp heat map construction. Every touched sector keeps nine warp
// bitmasks (eight words plus the whole sector); flushing turns each mask into
// its popcount, the sector's temperature.

#include <map>
#include <span>
#include <unordered_map>
#include <vector>

#include "warpthermo/core.hpp"
#include "warpthermo/trace_io.hpp"

namespace warpthermo {

inline constexpr std::uint8_t kind_bit(AccessKind k) { return static_cast<std::uint8_t>(1u << static_cast<unsigned>(k)); }

struct SectorHistory {
  std::array<WarpMask, kWordsPerSector> word_masks{};
  WarpMask sector_mask = 0;
  std::uint8_t kinds = 0;  // bitset of AccessKind seen on this sector

  // The sector mask is only ever written together with a word mask, which keeps
  // sector_mask == OR(word_masks).
  void touch(std::uint8_t words, WarpMask warp_bit, std::uint8_t kind_bits) {
    for (std::uint32_t m = words; m != 0; m &= m - 1) word_masks[std::countr_zero(m)] |= warp_bit;
    sector_mask |= warp_bit;
    kinds |= kind_bits;
  }

  void merge(const SectorHistory& other) {
    for (std::size_t w = 0; w < kWordsPerSector; ++w) word_masks[w] |= other.word_masks[w];
    sector_mask |= other.sector_mask;
    kinds |= other.kinds;
  }

  friend bool operator==(const SectorHistory&, const SectorHistory&) = default;
};

class HistoryMap {
 public:
  using SpaceMap = std::unordered_map<SectorTag, SectorHistory>;

  SpaceMap& space(Space s) { return maps_[static_cast<std::size_t>(s)]; }
  const SpaceMap& space(Space s) const { return maps_[static_cast<std::size_t>(s)]; }

  const SectorHistory* find(const SectorKey& key) const {
    const auto& m = space(key.space);
    auto it = m.find(key.tag);
    return it == m.end() ? nullptr : &it->second;
  }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& m : maps_) n += m.size();
    return n;
  }

  bool empty() const { return size() == 0; }
  void clear() {
    for (auto& m : maps_) m.clear();
  }

  friend bool operator==(const HistoryMap&, const HistoryMap&) = default;

 private:
  std::array<SpaceMap, 3> maps_;
};

// ORs (1 << warp_id) into every word the record's active lanes touch and into
// each touched sector's whole-sector mask. Throws WarpIdOverflow for warp_id >= 64.
inline void ingest(HistoryMap& map, const MemAccessRecord& rec) {
  if (rec.warp_id >= kMaxTrackedWarps) {
    throw WarpIdOverflow("warp_id " + std::to_string(rec.warp_id) + " does not fit a 64-bit history mask");
  }
  const WarpMask warp_bit = WarpMask{1} << rec.warp_id;
  const std::uint8_t kinds = kind_bit(rec.kind);
  auto& m = map.space(rec.space);
  SectorTag cached_tag = 0;
  SectorHistory* cached = nullptr;
  rec.for_each_active([&](std::uint32_t, Address addr) {
    for (const auto& span : expand_access(addr, rec.size, rec.space)) {
      if (cached == nullptr || cached_tag != span.sector.tag) {
        cached = &m[span.sector.tag];
        cached_tag = span.sector.tag;
      }
      cached->touch(span.words, warp_bit, kinds);
    }
  });
}

inline void merge_into(HistoryMap& dst, const HistoryMap& src) {
  for (Space s : kAllSpaces) {
    auto& d = dst.space(s);
    for (const auto& [tag, h] : src.space(s)) d[tag].merge(h);
  }
}

inline HistoryMap merge(const HistoryMap& a, const HistoryMap& b) {
  HistoryMap out = a;
  merge_into(out, b);
  return out;
}

// ---------------------------------------------------------------------------
// Flushed heat table

struct KernelMeta {
  std::string kernel_name;
  Dim3 grid_dim{1, 1, 1};
  Dim3 block_dim{1, 1, 1};
  Dim3 sampled_block{0, 0, 0};

  std::uint32_t warps() const { return warps_in_block(block_dim); }
  friend bool operator==(const KernelMeta&, const KernelMeta&) = default;
};

struct HeatRow {
  Space space = Space::global;
  RegionId region_id = kUnknownRegion;
  SectorTag sector_tag = 0;
  std::array<std::uint32_t, kWordsPerSector> word_temps{};
  std::uint32_t sector_temp = 0;
  std::uint8_t kinds = 0;  // not carried by the CSV format

  std::uint32_t max_word_temp() const { return *std::max_element(word_temps.begin(), word_temps.end()); }
  std::uint32_t touched_words() const {
    return static_cast<std::uint32_t>(std::count_if(word_temps.begin(), word_temps.end(), [](auto t) { return t > 0; }));
  }

  friend bool operator==(const HeatRow&, const HeatRow&) = default;
};

struct HeatTable {
  KernelMeta meta;
  std::vector<HeatRow> rows;  // sorted by (space, sector_tag)

  std::span<const HeatRow> rows_in(Space s) const {
    auto lo = std::partition_point(rows.begin(), rows.end(), [s](const HeatRow& r) { return r.space < s; });
    auto hi = std::partition_point(lo, rows.end(), [s](const HeatRow& r) { return r.space <= s; });
    return {lo, hi};
  }

  friend bool operator==(const HeatTable&, const HeatTable&) = default;
};

inline HeatRow to_row(Space space, SectorTag tag, const SectorHistory& h, RegionId region) {
  HeatRow row;
  row.space = space;
  row.region_id = region;
  row.sector_tag = tag;
  for (std::size_t w = 0; w < kWordsPerSector; ++w) row.word_temps[w] = static_cast<std::uint32_t>(std::popcount(h.word_masks[w]));
  row.sector_temp = static_cast<std::uint32_t>(std::popcount(h.sector_mask));
  row.kinds = h.kinds;
  return row;
}

// Each history becomes nine popcounts; rows are bound to the live region that
// overlaps the sector (or the unknown region) and sorted by (space, tag).
inline HeatTable flush(const HistoryMap& map, const RegionRegistry& regions, const KernelMeta& meta) {
  HeatTable table;
  table.meta = meta;
  table.rows.reserve(map.size());
  for (Space s : kAllSpaces) {
    const auto first = table.rows.size();
    for (const auto& [tag, h] : map.space(s)) {
      const auto* r = regions.find_overlapping(s, tag);
      table.rows.push_back(to_row(s, tag, h, r ? r->id : kUnknownRegion));
    }
    std::sort(table.rows.begin() + static_cast<std::ptrdiff_t>(first), table.rows.end(),
              [](const HeatRow& a, const HeatRow& b) { return a.sector_tag < b.sector_tag; });
  }
  return table;
}

// ---------------------------------------------------------------------------
// Access-count baseline: how many active lanes touched each word.

struct AccessCountTable {
  struct WordKey {
    Space space;
    SectorTag tag;
    std::uint32_t word;
    friend constexpr auto operator<=>(const WordKey&, const WordKey&) = default;
  };

  std::map<WordKey, std::uint64_t> word_counts;
  std::map<SectorKey, std::uint64_t> sector_totals;

  void add(const MemAccessRecord& rec) {
    rec.for_each_active([&](std::uint32_t, Address addr) {
      for (const auto& span : expand_access(addr, rec.size, rec.space)) {
        for (std::uint32_t m = span.words; m != 0; m &= m - 1) {
          ++word_counts[WordKey{rec.space, span.sector.tag, static_cast<std::uint32_t>(std::countr_zero(m))}];
          ++sector_totals[span.sector];
        }
      }
    });
  }

  bool empty() const { return word_counts.empty(); }
  friend bool operator==(const AccessCountTable&, const AccessCountTable&) = default;
};

inline AccessCountTable access_counts(std::span<const TraceEvent> events) {
  AccessCountTable table;
  for (const auto& e : events) {
    if (const auto* a = std::get_if<AccessEvent>(&e)) table.add(a->rec);
  }
  return table;
}

}  // namespace warpthermo
