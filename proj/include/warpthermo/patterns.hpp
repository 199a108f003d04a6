#pragma once

// Rule-based classification of a region's heat signature into the five
// inefficiency patterns. Thresholds live in PatternParams.

#include <cmath>
#include <map>
#include <set>
#include <span>

#include "warpthermo/analyzer.hpp"
#include "warpthermo/core.hpp"
#include "warpthermo/trace_io.hpp"

namespace warpthermo {

struct PatternParams {
  std::optional<std::uint32_t> hot_threshold;  // default max(2, warps_in_block / 2)
  double hot_closeness = 1.25;
  double false_share_ratio = 4.0;
  std::uint32_t false_share_min = 4;
  std::uint32_t smem_word_temp_cap = 1;
  double smem_coverage = 0.9;
  double strided_util_max = 0.5;
  std::uint32_t strided_min_sectors = 4;
  double random_hot_cv = 0.5;

  std::uint32_t hot_threshold_for(std::uint32_t warps) const {
    return hot_threshold.value_or(std::max<std::uint32_t>(2, warps / 2));
  }

  // Copy with the block-dependent default filled in.
  PatternParams resolved(std::uint32_t warps) const {
    PatternParams p = *this;
    p.hot_threshold = hot_threshold_for(warps);
    return p;
  }

  void validate() const {
    auto fraction = [](double v, const char* name) {
      if (!(v > 0.0 && v <= 1.0)) throw ConfigError(std::string(name) + " must be in (0, 1]");
    };
    if (!(hot_closeness >= 1.0)) throw ConfigError("hot_closeness must be >= 1");
    if (!(false_share_ratio >= 1.0)) throw ConfigError("false_share_ratio must be >= 1");
    if (!(random_hot_cv >= 0.0)) throw ConfigError("random_hot_cv must be >= 0");
    fraction(smem_coverage, "smem_coverage");
    fraction(strided_util_max, "strided_util_max");
  }

  friend bool operator==(const PatternParams&, const PatternParams&) = default;
};

// Region-level fractions fixed by the detection rules.
inline constexpr double kHotRegionFraction = 0.5;
inline constexpr double kFalseSharingRegionFraction = 0.25;
inline constexpr double kMisalignedInstructionFraction = 0.10;
inline constexpr double kDominantStrideFraction = 0.75;
inline constexpr std::size_t kEvidenceCap = 16;

enum class PatternKind : std::uint8_t { hot, random_hot, smem_abuse, false_sharing, misalignment, strided };
enum class SmemSubtype : std::uint8_t { thread_local_use, warp_private };

constexpr std::string_view to_string(PatternKind k) {
  switch (k) {
    case PatternKind::hot: return "Hot";
    case PatternKind::random_hot: return "RandomHot";
    case PatternKind::smem_abuse: return "SmemAbuse";
    case PatternKind::false_sharing: return "FalseSharing";
    case PatternKind::misalignment: return "Misalignment";
    case PatternKind::strided: return "Strided";
  }
  return "?";
}

constexpr std::string_view to_string(SmemSubtype s) {
  return s == SmemSubtype::thread_local_use ? "thread_local" : "warp_private";
}

inline std::optional<PatternKind> parse_pattern_kind(std::string_view s) {
  for (auto k : {PatternKind::hot, PatternKind::random_hot, PatternKind::smem_abuse, PatternKind::false_sharing,
                 PatternKind::misalignment, PatternKind::strided}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

inline std::optional<SmemSubtype> parse_smem_subtype(std::string_view s) {
  if (s == "thread_local") return SmemSubtype::thread_local_use;
  if (s == "warp_private") return SmemSubtype::warp_private;
  return std::nullopt;
}

struct PatternReport {
  RegionId region_id = kUnknownRegion;
  Space space = Space::global;
  std::string region_label;
  std::string kernel_name;
  PatternKind kind = PatternKind::hot;
  std::optional<SmemSubtype> subtype;
  std::vector<SectorTag> evidence;       // capped sample, ascending
  std::map<std::string, double> stats;   // always includes "flagged_sectors"
  PatternParams params_used;

  std::uint64_t evidence_total() const {
    auto it = stats.find("flagged_sectors");
    return it == stats.end() ? evidence.size() : static_cast<std::uint64_t>(it->second);
  }

  friend bool operator==(const PatternReport&, const PatternReport&) = default;
};

using Finding = std::optional<PatternReport>;

namespace detail {

inline PatternReport make_finding(PatternKind kind, const PatternParams& p, std::vector<SectorTag> flagged) {
  PatternReport r;
  r.kind = kind;
  r.params_used = p;
  r.stats["flagged_sectors"] = static_cast<double>(flagged.size());
  if (flagged.size() > kEvidenceCap) flagged.resize(kEvidenceCap);
  r.evidence = std::move(flagged);
  return r;
}

inline double coefficient_of_variation(std::span<const HeatRow> rows) {
  double sum = 0.0;
  double sum_sq = 0.0;
  std::size_t n = 0;
  for (const auto& row : rows) {
    for (auto t : row.word_temps) {
      if (t == 0) continue;
      sum += t;
      sum_sq += static_cast<double>(t) * t;
      ++n;
    }
  }
  if (n == 0) return 0.0;
  const double mean = sum / static_cast<double>(n);
  const double var = std::max(0.0, sum_sq / static_cast<double>(n) - mean * mean);
  return std::sqrt(var) / mean;
}

}  // namespace detail

// Hot: sector_temp >= theta and sector_temp <= alpha * max word temp, in at
// least half the touched sectors. Reported as RandomHot when the nonzero word
// temperatures across the region vary by more than random_hot_cv.
inline Finding detect_hot(std::span<const HeatRow> rows, const PatternParams& p, std::uint32_t warps) {
  if (rows.empty()) return std::nullopt;
  const auto params = p.resolved(warps);
  const std::uint32_t theta = *params.hot_threshold;
  std::vector<SectorTag> hot;
  std::uint32_t max_sector = 0;
  for (const auto& row : rows) {
    max_sector = std::max(max_sector, row.sector_temp);
    if (row.sector_temp >= theta && row.sector_temp <= p.hot_closeness * row.max_word_temp()) hot.push_back(row.sector_tag);
  }
  if (hot.empty() || static_cast<double>(hot.size()) < kHotRegionFraction * static_cast<double>(rows.size())) {
    return std::nullopt;
  }
  const double cv = detail::coefficient_of_variation(rows);
  const auto kind = cv > p.random_hot_cv ? PatternKind::random_hot : PatternKind::hot;
  auto r = detail::make_finding(kind, params, std::move(hot));
  r.stats["touched_sectors"] = static_cast<double>(rows.size());
  r.stats["max_sector_temp"] = max_sector;
  r.stats["word_temp_cv"] = cv;
  return r;
}

// Sector temperature far above every word's: distinct warps each take a few
// words of the same sector.
inline Finding detect_false_sharing(std::span<const HeatRow> rows, const PatternParams& p) {
  std::vector<SectorTag> flagged;
  for (const auto& row : rows) {
    if (row.sector_temp >= p.false_share_min && row.sector_temp >= p.false_share_ratio * row.max_word_temp()) {
      flagged.push_back(row.sector_tag);
    }
  }
  if (flagged.empty() ||
      static_cast<double>(flagged.size()) < kFalseSharingRegionFraction * static_cast<double>(rows.size())) {
    return std::nullopt;
  }
  auto r = detail::make_finding(PatternKind::false_sharing, p, std::move(flagged));
  r.stats["touched_sectors"] = static_cast<double>(rows.size());
  return r;
}

inline Finding detect_smem_abuse(std::span<const HeatRow> rows, const PatternParams& p) {
  std::uint64_t touched = 0;
  std::uint64_t capped = 0;
  std::vector<SectorTag> flagged;
  bool all_single_warp = true;
  for (const auto& row : rows) {
    bool sector_capped = true;
    for (auto t : row.word_temps) {
      if (t == 0) continue;
      ++touched;
      if (t <= p.smem_word_temp_cap) ++capped;
      else sector_capped = false;
    }
    if (sector_capped && row.sector_temp > 0) {
      flagged.push_back(row.sector_tag);
      if (row.sector_temp != 1) all_single_warp = false;
    }
  }
  if (touched == 0 || flagged.empty()) return std::nullopt;
  const double coverage = static_cast<double>(capped) / static_cast<double>(touched);
  if (coverage < p.smem_coverage) return std::nullopt;
  auto r = detail::make_finding(PatternKind::smem_abuse, p, std::move(flagged));
  r.subtype = all_single_warp ? SmemSubtype::thread_local_use : SmemSubtype::warp_private;
  r.stats["low_reuse_word_fraction"] = coverage;
  r.stats["touched_words"] = static_cast<double>(touched);
  return r;
}

// ---------------------------------------------------------------------------
// Misalignment (instruction granularity)

// True when consecutive active lanes are exactly `size` bytes apart per lane
// index step, i.e. the warp walks one contiguous unit-stride footprint.
inline bool is_unit_stride(const MemAccessRecord& rec) {
  std::optional<std::pair<std::uint32_t, Address>> prev;
  bool ok = true;
  rec.for_each_active([&](std::uint32_t lane, Address addr) {
    if (prev && addr != prev->second + std::uint64_t{lane - prev->first} * rec.size) ok = false;
    prev = {lane, addr};
  });
  return ok && prev.has_value();
}

struct FootprintCheck {
  bool unit_stride = false;
  bool misaligned = false;
  std::size_t sectors = 0;
  std::size_t aligned_sectors = 0;  // ceil(span_bytes / 32)
  SectorTag first_tag = 0;
  SectorTag last_tag = 0;
};

inline FootprintCheck check_footprint(const MemAccessRecord& rec) {
  FootprintCheck c;
  if (rec.active_mask == 0) return c;
  c.unit_stride = is_unit_stride(rec);
  Address lo = kMaxAddress;
  Address hi = 0;
  rec.for_each_active([&](std::uint32_t, Address a) {
    lo = std::min(lo, a);
    hi = std::max(hi, a + rec.size - 1);
  });
  const auto sectors = coalesce(rec);
  c.sectors = sectors.size();
  c.aligned_sectors = static_cast<std::size_t>((hi - lo + 1 + kSectorBytes - 1) / kSectorBytes);
  c.first_tag = sectors.front().tag;
  c.last_tag = sectors.back().tag;
  c.misaligned = c.unit_stride && c.sectors > c.aligned_sectors;
  return c;
}

// Running per-region instruction counts; bounded in size.
struct MisalignmentTally {
  std::uint64_t instructions = 0;
  std::uint64_t misaligned = 0;
  std::set<SectorTag> boundary_sectors;  // capped at kEvidenceCap
  std::set<std::uint64_t> misaligned_pcs;  // capped at kEvidenceCap

  void add(const MemAccessRecord& rec) {
    if (rec.active_mask == 0) return;
    ++instructions;
    const auto c = check_footprint(rec);
    if (!c.misaligned) return;
    ++misaligned;
    if (boundary_sectors.size() < kEvidenceCap) boundary_sectors.insert(c.first_tag);
    if (boundary_sectors.size() < kEvidenceCap) boundary_sectors.insert(c.last_tag);
    if (misaligned_pcs.size() < kEvidenceCap) misaligned_pcs.insert(rec.pc);
  }

  void merge(const MisalignmentTally& o) {
    instructions += o.instructions;
    misaligned += o.misaligned;
    for (auto t : o.boundary_sectors) {
      if (boundary_sectors.size() < kEvidenceCap) boundary_sectors.insert(t);
    }
    for (auto pc : o.misaligned_pcs) {
      if (misaligned_pcs.size() < kEvidenceCap) misaligned_pcs.insert(pc);
    }
  }
};

inline Finding decide_misalignment(const MisalignmentTally& tally, std::span<const HeatRow> rows,
                                   const PatternParams& p) {
  if (tally.misaligned == 0 ||
      static_cast<double>(tally.misaligned) < kMisalignedInstructionFraction * static_cast<double>(tally.instructions)) {
    return std::nullopt;
  }
  std::vector<SectorTag> evidence(tally.boundary_sectors.begin(), tally.boundary_sectors.end());
  // Corroboration from the heat map: boundary sectors whose sector temperature
  // exceeds every word's, i.e. split between different warps.
  std::uint64_t split = 0;
  for (auto tag : evidence) {
    auto it = std::lower_bound(rows.begin(), rows.end(), tag,
                               [](const HeatRow& r, SectorTag t) { return r.sector_tag < t; });
    if (it != rows.end() && it->sector_tag == tag && it->sector_temp > it->max_word_temp()) ++split;
  }
  auto r = detail::make_finding(PatternKind::misalignment, p, std::move(evidence));
  r.stats["flagged_sectors"] = static_cast<double>(tally.boundary_sectors.size());
  r.stats["instructions"] = static_cast<double>(tally.instructions);
  r.stats["misaligned_instructions"] = static_cast<double>(tally.misaligned);
  r.stats["split_boundary_sectors"] = static_cast<double>(split);
  if (!tally.misaligned_pcs.empty()) r.stats["first_misaligned_pc"] = static_cast<double>(*tally.misaligned_pcs.begin());
  return r;
}

inline Finding detect_misalignment(std::span<const MemAccessRecord> records, std::span<const HeatRow> rows,
                                   const PatternParams& p) {
  MisalignmentTally tally;
  for (const auto& rec : records) tally.add(rec);
  return decide_misalignment(tally, rows, p);
}

// ---------------------------------------------------------------------------

// Sparse, regularly spaced touched words: low word utilization and one
// dominant gap between consecutive touched word positions.
inline Finding detect_strided(std::span<const HeatRow> rows, const PatternParams& p) {
  std::vector<std::uint64_t> positions;
  std::size_t touched_sectors = 0;
  for (const auto& row : rows) {
    bool any = false;
    for (std::uint32_t w = 0; w < kWordsPerSector; ++w) {
      if (row.word_temps[w] == 0) continue;
      positions.push_back(row.sector_tag * kWordsPerSector + w);
      any = true;
    }
    if (any) ++touched_sectors;
  }
  if (touched_sectors < p.strided_min_sectors || positions.size() < 2) return std::nullopt;
  const double utilization = static_cast<double>(positions.size()) / (kWordsPerSector * static_cast<double>(touched_sectors));
  if (utilization > p.strided_util_max) return std::nullopt;
  std::map<std::uint64_t, std::uint64_t> gaps;
  for (std::size_t i = 1; i < positions.size(); ++i) ++gaps[positions[i] - positions[i - 1]];
  const auto dominant = std::max_element(gaps.begin(), gaps.end(),
                                         [](const auto& a, const auto& b) { return a.second < b.second; });
  const double share = static_cast<double>(dominant->second) / static_cast<double>(positions.size() - 1);
  if (share < kDominantStrideFraction) return std::nullopt;
  std::vector<SectorTag> tags;
  for (const auto& row : rows) {
    if (row.touched_words() > 0) tags.push_back(row.sector_tag);
  }
  auto r = detail::make_finding(PatternKind::strided, p, std::move(tags));
  r.stats["utilization"] = utilization;
  r.stats["stride_words"] = static_cast<double>(dominant->first);
  r.stats["stride_share"] = share;
  return r;
}

// Runs every detector that applies to the region's space. Local space gets none.
inline std::vector<PatternReport> classify_region(const MemoryRegion& region, std::string_view kernel_name,
                                                  std::span<const HeatRow> rows, const MisalignmentTally& tally,
                                                  const PatternParams& p, std::uint32_t warps) {
  std::vector<Finding> found;
  if (rows.empty()) return {};
  const auto params = p.resolved(warps);
  if (region.space == Space::global) {
    found.push_back(detect_hot(rows, params, warps));
    found.push_back(detect_false_sharing(rows, params));
    found.push_back(decide_misalignment(tally, rows, params));
    found.push_back(detect_strided(rows, params));
  } else if (region.space == Space::shared) {
    found.push_back(detect_hot(rows, params, warps));
    found.push_back(detect_smem_abuse(rows, params));
  }
  std::vector<PatternReport> out;
  for (auto& f : found) {
    if (!f) continue;
    f->region_id = region.id;
    f->space = region.space;
    f->region_label = region.label;
    f->kernel_name = std::string(kernel_name);
    out.push_back(std::move(*f));
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.kind < b.kind; });
  return out;
}

inline std::string_view remedy_hint(const PatternReport& r) {
  switch (r.kind) {
    case PatternKind::hot:
      return "data shared by many warps of the block; stage it in shared memory or registers";
    case PatternKind::random_hot:
      return "irregularly shared data; consider staging the frequently shared entries in shared memory";
    case PatternKind::smem_abuse:
      return r.subtype == SmemSubtype::warp_private
                 ? "shared memory only exchanges data within a warp; use warp shuffle intrinsics instead"
                 : "shared memory holds per-thread values; consider register accumulation instead of shared memory";
    case PatternKind::false_sharing:
      return "distinct warps split each sector; remap thread indices so a warp covers contiguous words";
    case PatternKind::misalignment:
      return "warp footprint straddles a sector boundary; align the per-warp base to 32 bytes or use vector loads "
             "on padded storage";
    case PatternKind::strided:
      return "only a few words per fetched sector are used; transpose the layout so adjacent lanes touch adjacent "
             "words";
  }
  return "";
}

// `kernel:region: PATTERN (evidence: N sectors, e.g. tag T) hint: ...`
inline std::string format_diagnostic(const PatternReport& r) {
  std::string s = r.kernel_name + ":" + r.region_label + ": " + std::string(to_string(r.kind));
  if (r.subtype) s += "(" + std::string(to_string(*r.subtype)) + ")";
  s += " (evidence: " + std::to_string(r.evidence_total()) + " sectors";
  if (!r.evidence.empty()) s += ", e.g. tag " + std::to_string(r.evidence.front());
  s += ") hint: " + std::string(remedy_hint(r));
  return s;
}

}  // namespace warpthermo
