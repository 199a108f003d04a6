#pragma once

// Hardware constants, canonical record types, and per-instruction sector
// arithmetic shared by every other part of the library.

#include <algorithm>
#include <array>
#include <bit>
#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace warpthermo {

using Address = std::uint64_t;
using SectorTag = std::uint64_t;
using WarpMask = std::uint64_t;
using RegionId = std::uint64_t;

inline constexpr std::uint32_t kWarpSize = 32;
inline constexpr std::uint32_t kWordBytes = 4;
inline constexpr std::uint32_t kSectorBytes = 32;
inline constexpr std::uint32_t kSectorsPerLine = 4;
inline constexpr std::uint32_t kWordsPerSector = 8;
inline constexpr std::uint32_t kMaxWarpsPerBlock = 32;
// Width of the history bitmasks; warp ids up to 63 can be represented.
inline constexpr std::uint32_t kMaxTrackedWarps = 64;
inline constexpr Address kMaxAddress = (Address{1} << 63) - 1;

static_assert(kSectorBytes == kWordsPerSector * kWordBytes);
static_assert(kSectorsPerLine * kSectorBytes == 128);
static_assert(kMaxWarpsPerBlock * kWarpSize == 1024);
static_assert(kMaxTrackedWarps == 8 * sizeof(WarpMask));

// ---------------------------------------------------------------------------
// Errors

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A trace line that cannot be decoded (bad tag, missing field, wrong type).
struct MalformedLine : Error {
  using Error::Error;
};

// A decoded value that breaks a domain invariant.
struct InvariantViolation : Error {
  using Error::Error;
};

struct WarpIdOverflow : InvariantViolation {
  using InvariantViolation::InvariantViolation;
};

// Simulator input that cannot be executed.
struct SpecError : Error {
  using Error::Error;
};

// Bad user configuration (flags, params, paths).
struct ConfigError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Enumerations

enum class Space : std::uint8_t { global = 0, shared = 1, local = 2 };
enum class AccessKind : std::uint8_t { load = 0, store = 1, atomic = 2 };

inline constexpr std::array<Space, 3> kAllSpaces{Space::global, Space::shared, Space::local};

constexpr std::string_view to_string(Space s) {
  switch (s) {
    case Space::global: return "global";
    case Space::shared: return "shared";
    case Space::local: return "local";
  }
  return "?";
}

constexpr std::string_view to_string(AccessKind k) {
  switch (k) {
    case AccessKind::load: return "load";
    case AccessKind::store: return "store";
    case AccessKind::atomic: return "atomic";
  }
  return "?";
}

inline std::optional<Space> parse_space(std::string_view s) {
  if (s == "global") return Space::global;
  if (s == "shared") return Space::shared;
  if (s == "local") return Space::local;
  return std::nullopt;
}

inline std::optional<AccessKind> parse_access_kind(std::string_view s) {
  if (s == "load") return AccessKind::load;
  if (s == "store") return AccessKind::store;
  if (s == "atomic") return AccessKind::atomic;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Value types

struct Dim3 {
  std::uint32_t x = 0;
  std::uint32_t y = 0;
  std::uint32_t z = 0;

  constexpr std::uint64_t volume() const { return std::uint64_t{x} * y * z; }
  friend constexpr auto operator<=>(const Dim3&, const Dim3&) = default;
};

inline std::string to_string(const Dim3& d) {
  return std::to_string(d.x) + "," + std::to_string(d.y) + "," + std::to_string(d.z);
}

constexpr std::uint32_t warps_in_block(const Dim3& block_dim) {
  return static_cast<std::uint32_t>((block_dim.volume() + kWarpSize - 1) / kWarpSize);
}

constexpr bool is_valid_access_size(std::uint32_t size) {
  return size == 1 || size == 2 || size == 4 || size == 8 || size == 16;
}

// One issued warp-level memory instruction. A lane carries an address iff its
// bit is set in active_mask; inactive lanes are empty, never zero.
struct MemAccessRecord {
  std::uint64_t pc = 0;
  std::array<std::optional<Address>, kWarpSize> lane_addrs{};
  std::uint32_t size = 4;
  std::uint32_t active_mask = 0;
  AccessKind kind = AccessKind::load;
  Space space = Space::global;
  std::uint32_t warp_id = 0;
  Dim3 block_id{};

  void set_lane(std::uint32_t lane, Address addr) {
    lane_addrs[lane] = addr;
    active_mask |= (1u << lane);
  }

  void clear_lane(std::uint32_t lane) {
    lane_addrs[lane].reset();
    active_mask &= ~(1u << lane);
  }

  std::uint32_t active_lanes() const { return static_cast<std::uint32_t>(std::popcount(active_mask)); }

  template <typename F>
  void for_each_active(F&& f) const {
    for (std::uint32_t m = active_mask; m != 0; m &= m - 1) {
      const auto lane = static_cast<std::uint32_t>(std::countr_zero(m));
      f(lane, *lane_addrs[lane]);
    }
  }

  friend bool operator==(const MemAccessRecord&, const MemAccessRecord&) = default;
};

// Throws InvariantViolation (WarpIdOverflow for the warp id) when the record
// breaks a structural invariant. warp_limit is exclusive; the default admits
// warps 0..31 (a 1024-thread block), the wire format admits up to 63.
inline void validate(const MemAccessRecord& rec, std::uint32_t warp_limit = kMaxWarpsPerBlock) {
  if (rec.warp_id >= warp_limit) {
    throw WarpIdOverflow("warp_id " + std::to_string(rec.warp_id) + " exceeds limit " +
                         std::to_string(warp_limit - 1));
  }
  if (!is_valid_access_size(rec.size)) {
    throw InvariantViolation("access size " + std::to_string(rec.size) + " not in {1,2,4,8,16}");
  }
  for (std::uint32_t lane = 0; lane < kWarpSize; ++lane) {
    const bool active = (rec.active_mask >> lane) & 1u;
    if (active != rec.lane_addrs[lane].has_value()) {
      throw InvariantViolation("lane " + std::to_string(lane) + " address presence disagrees with active mask");
    }
    if (active && *rec.lane_addrs[lane] > kMaxAddress - rec.size) {
      throw InvariantViolation("lane " + std::to_string(lane) + " address out of range");
    }
  }
}

struct SectorKey {
  Space space = Space::global;
  SectorTag tag = 0;

  friend constexpr auto operator<=>(const SectorKey&, const SectorKey&) = default;
};

struct WordSpan {
  SectorKey sector;
  std::uint8_t words = 0;  // bit w set => word w of the sector is touched

  friend constexpr bool operator==(const WordSpan&, const WordSpan&) = default;
};

// At most two spans: a 16-byte access can straddle one sector boundary.
class WordSpans {
 public:
  static constexpr std::size_t kCapacity = 2;

  const WordSpan* begin() const { return items_.data(); }
  const WordSpan* end() const { return items_.data() + count_; }
  std::size_t size() const { return count_; }
  bool empty() const { return count_ == 0; }
  const WordSpan& operator[](std::size_t i) const { return items_[i]; }

  void push_back(const WordSpan& s) { items_[count_++] = s; }

  std::vector<WordSpan> to_vector() const { return {begin(), end()}; }

 private:
  std::array<WordSpan, kCapacity> items_{};
  std::size_t count_ = 0;
};

// ---------------------------------------------------------------------------
// Sector arithmetic

constexpr SectorTag sector_tag_of(Address addr) { return addr / kSectorBytes; }

constexpr std::uint32_t word_index_of(Address addr) {
  return static_cast<std::uint32_t>((addr % kSectorBytes) / kWordBytes);
}

constexpr Address sector_base(SectorTag tag) { return tag * kSectorBytes; }

constexpr std::uint8_t word_range_mask(std::uint32_t first, std::uint32_t last) {
  // bits first..last inclusive
  return static_cast<std::uint8_t>(((1u << (last + 1)) - 1u) & ~((1u << first) - 1u));
}

// Covers bytes [addr, addr + size) with (sector, word-mask) pairs sorted by tag.
// Every overlapped word is marked, so sub-word accesses mark their containing word.
inline WordSpans expand_access(Address addr, std::uint32_t size, Space space = Space::global) {
  WordSpans out;
  if (size == 0) return out;
  const Address last = addr + size - 1;
  const SectorTag first_tag = sector_tag_of(addr);
  const SectorTag last_tag = sector_tag_of(last);
  for (SectorTag tag = first_tag; tag <= last_tag && out.size() < WordSpans::kCapacity; ++tag) {
    const std::uint32_t lo = tag == first_tag ? word_index_of(addr) : 0;
    const std::uint32_t hi = tag == last_tag ? word_index_of(last) : kWordsPerSector - 1;
    out.push_back(WordSpan{SectorKey{space, tag}, word_range_mask(lo, hi)});
  }
  return out;
}

// Distinct sectors an instruction touches, ascending; one per sector transaction.
inline std::vector<SectorKey> coalesce(const MemAccessRecord& rec) {
  std::array<SectorTag, kWarpSize * WordSpans::kCapacity> tags{};
  std::size_t n = 0;
  rec.for_each_active([&](std::uint32_t, Address addr) {
    for (const auto& span : expand_access(addr, rec.size, rec.space)) tags[n++] = span.sector.tag;
  });
  std::sort(tags.begin(), tags.begin() + static_cast<std::ptrdiff_t>(n));
  const auto last = std::unique(tags.begin(), tags.begin() + static_cast<std::ptrdiff_t>(n));
  std::vector<SectorKey> out;
  out.reserve(static_cast<std::size_t>(last - tags.begin()));
  for (auto it = tags.begin(); it != last; ++it) out.push_back(SectorKey{rec.space, *it});
  return out;
}

}  // namespace warpthermo
