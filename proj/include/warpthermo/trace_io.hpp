#pragma once

// Line-delimited JSON trace format, the live-allocation registry, and the
// block / kernel sampling filters.

#include <fnmatch.h>

#include <charconv>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <rapidjson/document.h>
#include <rapidjson/stringbuffer.h>
#include <rapidjson/writer.h>

#include "warpthermo/core.hpp"

namespace warpthermo {

struct AllocEvent {
  RegionId id = 0;
  std::string label;
  Space space = Space::global;
  Address base = 0;
  std::uint64_t length = 0;
  friend bool operator==(const AllocEvent&, const AllocEvent&) = default;
};

struct FreeEvent {
  RegionId id = 0;
  friend bool operator==(const FreeEvent&, const FreeEvent&) = default;
};

struct KernelBeginEvent {
  std::string kernel_name;
  Dim3 grid_dim{1, 1, 1};
  Dim3 block_dim{1, 1, 1};
  friend bool operator==(const KernelBeginEvent&, const KernelBeginEvent&) = default;
};

struct KernelEndEvent {
  std::string kernel_name;
  friend bool operator==(const KernelEndEvent&, const KernelEndEvent&) = default;
};

struct AccessEvent {
  MemAccessRecord rec;
  friend bool operator==(const AccessEvent&, const AccessEvent&) = default;
};

using TraceEvent = std::variant<AllocEvent, FreeEvent, KernelBeginEvent, KernelEndEvent, AccessEvent>;

// ---------------------------------------------------------------------------
// Wire format

namespace detail {

using JsonValue = rapidjson::Value;

inline const JsonValue& member(const JsonValue& obj, const char* key) {
  auto it = obj.FindMember(key);
  if (it == obj.MemberEnd()) throw MalformedLine(std::string("missing field '") + key + "'");
  return it->value;
}

inline std::uint64_t as_u64(const JsonValue& obj, const char* key) {
  const auto& v = member(obj, key);
  if (!v.IsUint64()) throw MalformedLine(std::string("field '") + key + "' is not a non-negative integer");
  return v.GetUint64();
}

inline std::uint32_t as_u32(const JsonValue& obj, const char* key) {
  const auto& v = member(obj, key);
  if (!v.IsUint()) throw MalformedLine(std::string("field '") + key + "' is not a 32-bit non-negative integer");
  return v.GetUint();
}

inline std::string_view as_str(const JsonValue& obj, const char* key) {
  const auto& v = member(obj, key);
  if (!v.IsString()) throw MalformedLine(std::string("field '") + key + "' is not a string");
  return {v.GetString(), v.GetStringLength()};
}

inline Dim3 as_dim3(const JsonValue& obj, const char* key) {
  const auto& v = member(obj, key);
  if (!v.IsArray() || v.Size() != 3 || !v[0].IsUint() || !v[1].IsUint() || !v[2].IsUint()) {
    throw MalformedLine(std::string("field '") + key + "' is not a [int,int,int] triple");
  }
  return Dim3{v[0].GetUint(), v[1].GetUint(), v[2].GetUint()};
}

inline Space as_space(const JsonValue& obj) {
  const auto s = as_str(obj, "space");
  const auto space = parse_space(s);
  if (!space) throw MalformedLine("unknown space '" + std::string(s) + "'");
  return *space;
}

inline void expect_fields(const JsonValue& obj, rapidjson::SizeType n) {
  if (obj.MemberCount() != n) {
    throw MalformedLine("expected " + std::to_string(n) + " fields, found " + std::to_string(obj.MemberCount()));
  }
}

inline std::uint32_t parse_mask(std::string_view s) {
  if (s.size() < 3 || s.size() > 10 || s[0] != '0' || (s[1] != 'x' && s[1] != 'X')) {
    throw MalformedLine("mask '" + std::string(s) + "' is not a 32-bit hex string");
  }
  std::uint32_t mask = 0;
  const auto* first = s.data() + 2;
  const auto* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, mask, 16);
  if (ec != std::errc{} || ptr != last) throw MalformedLine("mask '" + std::string(s) + "' is not hex");
  return mask;
}

inline MemAccessRecord decode_access(const JsonValue& obj) {
  expect_fields(obj, 9);
  MemAccessRecord rec;
  rec.pc = as_u64(obj, "pc");
  rec.warp_id = as_u32(obj, "warp");
  rec.block_id = as_dim3(obj, "block");
  const auto kind_str = as_str(obj, "kind");
  const auto kind = parse_access_kind(kind_str);
  if (!kind) throw MalformedLine("unknown kind '" + std::string(kind_str) + "'");
  rec.kind = *kind;
  rec.space = as_space(obj);
  rec.size = as_u32(obj, "size");
  const std::uint32_t mask = parse_mask(as_str(obj, "mask"));
  const auto& addrs = member(obj, "addrs");
  if (!addrs.IsArray()) throw MalformedLine("field 'addrs' is not an array");
  if (addrs.Size() != static_cast<rapidjson::SizeType>(std::popcount(mask))) {
    throw MalformedLine("mask has " + std::to_string(std::popcount(mask)) + " active lanes but " +
                        std::to_string(addrs.Size()) + " addresses");
  }
  rapidjson::SizeType next = 0;
  for (std::uint32_t m = mask; m != 0; m &= m - 1) {
    const auto& a = addrs[next++];
    if (!a.IsUint64()) throw MalformedLine("address is not a non-negative integer");
    rec.set_lane(static_cast<std::uint32_t>(std::countr_zero(m)), a.GetUint64());
  }
  validate(rec, kMaxTrackedWarps);
  return rec;
}

inline TraceEvent decode_event(const JsonValue& obj) {
  if (!obj.IsObject()) throw MalformedLine("record is not a JSON object");
  const auto ev = as_str(obj, "ev");
  if (ev == "mem") return AccessEvent{decode_access(obj)};
  if (ev == "alloc") {
    expect_fields(obj, 6);
    AllocEvent a;
    a.id = as_u64(obj, "id");
    a.label = std::string(as_str(obj, "label"));
    a.space = as_space(obj);
    a.base = as_u64(obj, "base");
    a.length = as_u64(obj, "len");
    if (a.length == 0) throw InvariantViolation("alloc length must be positive");
    if (a.base > kMaxAddress || a.length > kMaxAddress - a.base) throw InvariantViolation("alloc range exceeds 2^63-1");
    return a;
  }
  if (ev == "free") {
    expect_fields(obj, 2);
    return FreeEvent{as_u64(obj, "id")};
  }
  if (ev == "kernel_begin") {
    expect_fields(obj, 4);
    KernelBeginEvent k;
    k.kernel_name = std::string(as_str(obj, "name"));
    k.grid_dim = as_dim3(obj, "grid");
    k.block_dim = as_dim3(obj, "block");
    if (k.grid_dim.volume() == 0 || k.block_dim.volume() == 0) {
      throw InvariantViolation("launch dimensions must be >= 1");
    }
    return k;
  }
  if (ev == "kernel_end") {
    expect_fields(obj, 2);
    return KernelEndEvent{std::string(as_str(obj, "name"))};
  }
  throw MalformedLine("unknown event tag '" + std::string(ev) + "'");
}

template <typename Writer>
void write_dim3(Writer& w, const char* key, const Dim3& d) {
  w.Key(key);
  w.StartArray();
  w.Uint(d.x);
  w.Uint(d.y);
  w.Uint(d.z);
  w.EndArray();
}

template <typename Writer>
void write_str(Writer& w, std::string_view s) {
  w.String(s.data(), static_cast<rapidjson::SizeType>(s.size()));
}

inline std::string hex_mask(std::uint32_t mask) {
  char buf[16] = {'0', 'x'};
  auto [ptr, ec] = std::to_chars(buf + 2, buf + sizeof buf, mask, 16);
  return std::string(buf, ptr);
}

}  // namespace detail

// Decodes one trace line. Throws MalformedLine or InvariantViolation.
inline TraceEvent parse_event(std::string_view line) {
  rapidjson::Document doc;
  doc.Parse(line.data(), line.size());
  if (doc.HasParseError()) throw MalformedLine("invalid JSON");
  return detail::decode_event(doc);
}

// Destructive variant for the streaming reader: parses the buffer in place.
inline TraceEvent parse_event_insitu(std::string& line) {
  rapidjson::Document doc;
  doc.ParseInsitu(line.data());
  if (doc.HasParseError()) throw MalformedLine("invalid JSON");
  return detail::decode_event(doc);
}

inline void serialize_event(const TraceEvent& event, std::string& out) {
  rapidjson::StringBuffer buf;
  rapidjson::Writer<rapidjson::StringBuffer> w(buf);
  w.StartObject();
  std::visit(
      [&](const auto& e) {
        using T = std::decay_t<decltype(e)>;
        if constexpr (std::is_same_v<T, AllocEvent>) {
          w.Key("ev"); w.String("alloc");
          w.Key("id"); w.Uint64(e.id);
          w.Key("label"); detail::write_str(w, e.label);
          w.Key("space"); detail::write_str(w, to_string(e.space));
          w.Key("base"); w.Uint64(e.base);
          w.Key("len"); w.Uint64(e.length);
        } else if constexpr (std::is_same_v<T, FreeEvent>) {
          w.Key("ev"); w.String("free");
          w.Key("id"); w.Uint64(e.id);
        } else if constexpr (std::is_same_v<T, KernelBeginEvent>) {
          w.Key("ev"); w.String("kernel_begin");
          w.Key("name"); detail::write_str(w, e.kernel_name);
          detail::write_dim3(w, "grid", e.grid_dim);
          detail::write_dim3(w, "block", e.block_dim);
        } else if constexpr (std::is_same_v<T, KernelEndEvent>) {
          w.Key("ev"); w.String("kernel_end");
          w.Key("name"); detail::write_str(w, e.kernel_name);
        } else {
          const auto& r = e.rec;
          w.Key("ev"); w.String("mem");
          w.Key("pc"); w.Uint64(r.pc);
          w.Key("warp"); w.Uint(r.warp_id);
          detail::write_dim3(w, "block", r.block_id);
          w.Key("kind"); detail::write_str(w, to_string(r.kind));
          w.Key("space"); detail::write_str(w, to_string(r.space));
          w.Key("size"); w.Uint(r.size);
          w.Key("mask"); detail::write_str(w, detail::hex_mask(r.active_mask));
          w.Key("addrs");
          w.StartArray();
          r.for_each_active([&](std::uint32_t, Address a) { w.Uint64(a); });
          w.EndArray();
        }
      },
      event);
  w.EndObject();
  out.assign(buf.GetString(), buf.GetSize());
}

inline std::string serialize_event(const TraceEvent& event) {
  std::string out;
  serialize_event(event, out);
  return out;
}

// Error raised while reading a stream, tagged with the 1-based line number.
struct TraceParseError : Error {
  TraceParseError(std::size_t line_no, const std::string& what, bool invariant)
      : Error("line " + std::to_string(line_no) + ": " + what), line(line_no), is_invariant(invariant) {}
  std::size_t line;
  bool is_invariant;
};

class TraceReader {
 public:
  explicit TraceReader(std::istream& in) : in_(in) {}

  // False at end of stream. Blank lines are skipped.
  bool next(TraceEvent& event) {
    while (std::getline(in_, line_)) {
      ++line_no_;
      if (line_.empty() || line_.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        event = parse_event_insitu(line_);
      } catch (const MalformedLine& e) {
        throw TraceParseError(line_no_, std::string("malformed line: ") + e.what(), false);
      } catch (const InvariantViolation& e) {
        throw TraceParseError(line_no_, std::string("invariant violation: ") + e.what(), true);
      }
      return true;
    }
    return false;
  }

  std::size_t line_number() const { return line_no_; }

 private:
  std::istream& in_;
  std::string line_;
  std::size_t line_no_ = 0;
};

class TraceWriter {
 public:
  explicit TraceWriter(std::ostream& out) : out_(out) {}

  void write(const TraceEvent& event) {
    serialize_event(event, buf_);
    out_.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    out_.put('\n');
  }

 private:
  std::ostream& out_;
  std::string buf_;
};

inline std::vector<TraceEvent> read_all(std::istream& in) {
  std::vector<TraceEvent> events;
  TraceReader reader(in);
  TraceEvent ev;
  while (reader.next(ev)) events.push_back(std::move(ev));
  return events;
}

// ---------------------------------------------------------------------------
// Region registry

struct MemoryRegion {
  RegionId id = 0;
  std::string label;
  Space space = Space::global;
  Address base = 0;
  std::uint64_t length = 0;
  SectorTag start_tag = 0;
  SectorTag end_tag = 0;

  bool contains(Address addr) const { return addr >= base && addr - base < length; }
  std::uint64_t sector_span() const { return end_tag - start_tag + 1; }

  friend bool operator==(const MemoryRegion&, const MemoryRegion&) = default;
};

inline MemoryRegion make_region(const AllocEvent& a) {
  return MemoryRegion{a.id, a.label, a.space, a.base, a.length, sector_tag_of(a.base),
                      sector_tag_of(a.base + a.length - 1)};
}

// Id reserved for the synthetic per-space region that collects unregistered traffic.
inline constexpr RegionId kUnknownRegion = 0;

inline MemoryRegion unknown_region(Space space) {
  return MemoryRegion{kUnknownRegion, "unknown", space, 0, 0, 0, 0};
}

class RegionRegistry {
 public:
  // Throws InvariantViolation on a zero length, a reused id, or an overlap
  // with a live region of the same space.
  void register_alloc(const AllocEvent& a) {
    if (a.length == 0) throw InvariantViolation("alloc '" + a.label + "' has zero length");
    if (a.id == kUnknownRegion) throw InvariantViolation("alloc id 0 is reserved");
    if (by_id_.contains(a.id)) throw InvariantViolation("alloc id " + std::to_string(a.id) + " reused");
    auto& live = live_[index(a.space)];
    auto next = live.lower_bound(a.base);
    if (next != live.end() && next->first < a.base + a.length) {
      throw InvariantViolation("alloc '" + a.label + "' overlaps live region id " + std::to_string(next->second));
    }
    if (next != live.begin()) {
      const auto& prev = regions_[by_id_.at(std::prev(next)->second)];
      if (prev.base + prev.length > a.base) {
        throw InvariantViolation("alloc '" + a.label + "' overlaps live region '" + prev.label + "'");
      }
    }
    by_id_.emplace(a.id, regions_.size());
    regions_.push_back(make_region(a));
    live.emplace(a.base, a.id);
  }

  void release(RegionId id) {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) throw InvariantViolation("free of unknown alloc id " + std::to_string(id));
    const auto& r = regions_[it->second];
    auto& live = live_[index(r.space)];
    auto lit = live.find(r.base);
    if (lit == live.end() || lit->second != id) throw InvariantViolation("double free of alloc id " + std::to_string(id));
    live.erase(lit);
  }

  // Live region containing addr, or nullptr.
  const MemoryRegion* lookup(Space space, Address addr) const {
    const auto& live = live_[index(space)];
    auto it = live.upper_bound(addr);
    if (it == live.begin()) return nullptr;
    --it;
    const auto& r = regions_[by_id_.at(it->second)];
    return r.contains(addr) ? &r : nullptr;
  }

  // Lowest-addressed live region that overlaps the sector, or nullptr.
  const MemoryRegion* find_overlapping(Space space, SectorTag tag) const {
    const Address lo = sector_base(tag);
    const Address hi = lo + kSectorBytes;
    const auto& live = live_[index(space)];
    auto it = live.upper_bound(lo);
    if (it != live.begin()) {
      const auto& r = regions_[by_id_.at(std::prev(it)->second)];
      if (r.base + r.length > lo) return &r;
    }
    if (it != live.end() && it->first < hi) return &regions_[by_id_.at(it->second)];
    return nullptr;
  }

  const MemoryRegion* find(RegionId id) const {
    auto it = by_id_.find(id);
    return it == by_id_.end() ? nullptr : &regions_[it->second];
  }

  // Every region ever registered, in registration order.
  const std::vector<MemoryRegion>& all() const { return regions_; }

  void apply(const TraceEvent& event) {
    if (const auto* a = std::get_if<AllocEvent>(&event)) register_alloc(*a);
    else if (const auto* f = std::get_if<FreeEvent>(&event)) release(f->id);
  }

 private:
  static std::size_t index(Space s) { return static_cast<std::size_t>(s); }

  std::vector<MemoryRegion> regions_;
  std::map<RegionId, std::size_t> by_id_;
  std::array<std::map<Address, RegionId>, 3> live_;
};

// ---------------------------------------------------------------------------
// Sampling

struct SamplingPolicy {
  Dim3 target_block{0, 0, 0};
  // Shell-style patterns; absent admits every kernel, empty admits none.
  std::optional<std::vector<std::string>> kernel_whitelist;

  bool kernel_selected(const std::string& name) const {
    if (!kernel_whitelist) return true;
    return std::any_of(kernel_whitelist->begin(), kernel_whitelist->end(), [&](const std::string& pat) {
      return ::fnmatch(pat.c_str(), name.c_str(), 0) == 0;
    });
  }
};

inline std::vector<TraceEvent> filter_block(std::span<const TraceEvent> events, const SamplingPolicy& policy) {
  std::vector<TraceEvent> out;
  out.reserve(events.size());
  for (const auto& e : events) {
    if (const auto* a = std::get_if<AccessEvent>(&e); a && a->rec.block_id != policy.target_block) continue;
    out.push_back(e);
  }
  return out;
}

// Streaming form of filter_kernels: tracks whether the stream is inside a
// rejected KernelBegin..KernelEnd span.
class KernelSpanFilter {
 public:
  explicit KernelSpanFilter(const SamplingPolicy& policy) : policy_(policy) {}

  bool admit(const TraceEvent& e) {
    if (const auto* b = std::get_if<KernelBeginEvent>(&e)) {
      dropping_ = !policy_.kernel_selected(b->kernel_name);
      return !dropping_;
    }
    if (std::holds_alternative<KernelEndEvent>(e)) {
      const bool keep = !dropping_;
      dropping_ = false;
      return keep;
    }
    if (std::holds_alternative<AccessEvent>(e)) return !dropping_;
    return true;  // allocation bookkeeping is never dropped
  }

 private:
  const SamplingPolicy& policy_;
  bool dropping_ = false;
};

inline std::vector<TraceEvent> filter_kernels(std::span<const TraceEvent> events, const SamplingPolicy& policy) {
  std::vector<TraceEvent> out;
  out.reserve(events.size());
  KernelSpanFilter filter(policy);
  for (const auto& e : events) {
    if (filter.admit(e)) out.push_back(e);
  }
  return out;
}

}  // namespace warpthermo
