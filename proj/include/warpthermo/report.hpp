#pragma once

// Heat-map artifacts: run compression, the CSV and region-config files, the
// report JSON consumed by the viewer, and static SVG / terminal renderings.

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "warpthermo/analyzer.hpp"
#include "warpthermo/patterns.hpp"

namespace warpthermo {

inline constexpr std::string_view kReportVersion = "1.0";
inline constexpr std::string_view kToolName = "warpthermo";
inline constexpr std::string_view kToolVersion = "0.1.0";
// Regions spanning more sectors than this are emitted as compressed runs.
inline constexpr std::uint64_t kRunCompressionThreshold = 256;

using TempTuple = std::array<std::uint32_t, kWordsPerSector + 1>;  // w0..w7, sector

inline TempTuple temps_of(const HeatRow& r) {
  TempTuple t{};
  std::copy(r.word_temps.begin(), r.word_temps.end(), t.begin());
  t[kWordsPerSector] = r.sector_temp;
  return t;
}

struct CompressedRun {
  TempTuple temps{};
  SectorTag start_tag = 0;
  std::uint64_t count = 1;

  SectorTag end_tag() const { return start_tag + count - 1; }
  friend bool operator==(const CompressedRun&, const CompressedRun&) = default;
};

// Adds all-zero rows for untouched sectors inside the region's span. The
// unknown region has no span, so its rows are returned unchanged.
inline std::vector<HeatRow> materialize_region(std::span<const HeatRow> rows, const MemoryRegion& region) {
  if (region.id == kUnknownRegion) return {rows.begin(), rows.end()};
  std::vector<HeatRow> out;
  out.reserve(region.sector_span());
  auto it = rows.begin();
  for (SectorTag tag = region.start_tag; tag <= region.end_tag; ++tag) {
    while (it != rows.end() && it->sector_tag < tag) ++it;
    if (it != rows.end() && it->sector_tag == tag) {
      out.push_back(*it);
    } else {
      HeatRow z;
      z.space = region.space;
      z.region_id = region.id;
      z.sector_tag = tag;
      out.push_back(z);
    }
  }
  return out;
}

// Maximal runs of consecutive tags with identical temperatures. A gap in the
// tags always ends a run.
inline std::vector<CompressedRun> compress_runs(std::span<const HeatRow> rows) {
  std::vector<CompressedRun> runs;
  for (const auto& row : rows) {
    const auto t = temps_of(row);
    if (!runs.empty() && runs.back().temps == t && runs.back().end_tag() + 1 == row.sector_tag) {
      ++runs.back().count;
    } else {
      runs.push_back(CompressedRun{t, row.sector_tag, 1});
    }
  }
  return runs;
}

// compress_runs(materialize_region(rows, region)) without building the zero rows.
inline std::vector<CompressedRun> compress_region(std::span<const HeatRow> rows, const MemoryRegion& region) {
  if (region.id == kUnknownRegion) return compress_runs(rows);
  std::vector<CompressedRun> runs;
  auto push = [&runs](const TempTuple& t, SectorTag tag, std::uint64_t n) {
    if (n == 0) return;
    if (!runs.empty() && runs.back().temps == t && runs.back().end_tag() + 1 == tag) runs.back().count += n;
    else runs.push_back(CompressedRun{t, tag, n});
  };
  SectorTag next = region.start_tag;
  for (const auto& row : rows) {
    if (row.sector_tag < region.start_tag || row.sector_tag > region.end_tag) continue;
    push(TempTuple{}, next, row.sector_tag - next);
    push(temps_of(row), row.sector_tag, 1);
    next = row.sector_tag + 1;
  }
  push(TempTuple{}, next, region.end_tag + 1 - next);
  return runs;
}

inline std::vector<CompressedRun> uncompressed_runs(std::span<const HeatRow> rows) {
  std::vector<CompressedRun> runs;
  runs.reserve(rows.size());
  for (const auto& row : rows) runs.push_back(CompressedRun{temps_of(row), row.sector_tag, 1});
  return runs;
}

inline std::vector<HeatRow> expand_runs(std::span<const CompressedRun> runs, Space space, RegionId region) {
  std::vector<HeatRow> rows;
  for (const auto& run : runs) {
    for (std::uint64_t i = 0; i < run.count; ++i) {
      HeatRow r;
      r.space = space;
      r.region_id = region;
      r.sector_tag = run.start_tag + i;
      std::copy_n(run.temps.begin(), kWordsPerSector, r.word_temps.begin());
      r.sector_temp = run.temps[kWordsPerSector];
      rows.push_back(r);
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// CSV files

inline constexpr std::string_view kHeatCsvHeader = "space,region_id,sector_tag,w0,w1,w2,w3,w4,w5,w6,w7,sector";
inline constexpr std::string_view kConfigCsvHeader = "region_id,label,space,base,length,start_tag,end_tag";

inline std::string emit_csv(const HeatTable& table) {
  std::string out(kHeatCsvHeader);
  out += '\n';
  for (const auto& r : table.rows) {
    out += to_string(r.space);
    out += ',' + std::to_string(r.region_id) + ',' + std::to_string(r.sector_tag);
    for (auto t : r.word_temps) out += ',' + std::to_string(t);
    out += ',' + std::to_string(r.sector_temp) + '\n';
  }
  return out;
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  return fields;
}

inline std::string quote_csv(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + '"';
}

inline std::uint64_t csv_u64(const std::string& s, std::size_t line_no) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw MalformedLine("csv line " + std::to_string(line_no) + ": bad integer '" + s + "'");
  }
  return v;
}

inline Space csv_space(const std::string& s, std::size_t line_no) {
  auto sp = parse_space(s);
  if (!sp) throw MalformedLine("csv line " + std::to_string(line_no) + ": unknown space '" + s + "'");
  return *sp;
}

template <typename RowFn>
void read_csv(std::string_view text, std::string_view header, std::size_t fields, RowFn&& on_row) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line) || line != header) throw MalformedLine("csv header mismatch");
  ++line_no;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto f = split_csv(line);
    if (f.size() != fields) throw MalformedLine("csv line " + std::to_string(line_no) + ": wrong field count");
    on_row(f, line_no);
  }
}

}  // namespace detail

inline std::vector<HeatRow> parse_heat_csv(std::string_view text) {
  std::vector<HeatRow> rows;
  detail::read_csv(text, kHeatCsvHeader, 12, [&](const std::vector<std::string>& f, std::size_t n) {
    HeatRow r;
    r.space = detail::csv_space(f[0], n);
    r.region_id = detail::csv_u64(f[1], n);
    r.sector_tag = detail::csv_u64(f[2], n);
    for (std::size_t w = 0; w < kWordsPerSector; ++w) r.word_temps[w] = static_cast<std::uint32_t>(detail::csv_u64(f[3 + w], n));
    r.sector_temp = static_cast<std::uint32_t>(detail::csv_u64(f[11], n));
    rows.push_back(r);
  });
  return rows;
}

inline std::string emit_config(std::span<const MemoryRegion> regions) {
  std::string out(kConfigCsvHeader);
  out += '\n';
  for (const auto& r : regions) {
    out += std::to_string(r.id) + ',' + detail::quote_csv(r.label) + ',' + std::string(to_string(r.space)) + ',' +
           std::to_string(r.base) + ',' + std::to_string(r.length) + ',' + std::to_string(r.start_tag) + ',' +
           std::to_string(r.end_tag) + '\n';
  }
  return out;
}

inline std::vector<MemoryRegion> parse_config(std::string_view text) {
  std::vector<MemoryRegion> regions;
  detail::read_csv(text, kConfigCsvHeader, 7, [&](const std::vector<std::string>& f, std::size_t n) {
    regions.push_back(MemoryRegion{detail::csv_u64(f[0], n), f[1], detail::csv_space(f[2], n), detail::csv_u64(f[3], n),
                                   detail::csv_u64(f[4], n), detail::csv_u64(f[5], n), detail::csv_u64(f[6], n)});
  });
  return regions;
}

// Access-count baseline: per-word lane counts and per-sector totals.
inline constexpr std::string_view kCountsCsvHeader = "space,sector_tag,w0,w1,w2,w3,w4,w5,w6,w7,sector_total";

inline std::string emit_counts_csv(const AccessCountTable& counts) {
  std::string out(kCountsCsvHeader);
  out += '\n';
  for (const auto& [key, total] : counts.sector_totals) {
    out += std::string(to_string(key.space)) + ',' + std::to_string(key.tag);
    for (std::uint32_t w = 0; w < kWordsPerSector; ++w) {
      auto it = counts.word_counts.find(AccessCountTable::WordKey{key.space, key.tag, w});
      out += ',' + std::to_string(it == counts.word_counts.end() ? 0 : it->second);
    }
    out += ',' + std::to_string(total) + '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Color scale: linear over [0, max_temp]; 0 gets the null color.

struct ColorScale {
  std::uint32_t max_temp = 1;
  std::string null_color = "#eeeeee";
  std::vector<std::string> ramp{"#313695", "#4575b4", "#74add1", "#fee090", "#fdae61", "#f46d43", "#d73027", "#a50026"};

  // Position on the ramp in (0, 1] for temp >= 1; -1 for the null color.
  double position(std::uint32_t temp) const {
    if (temp == 0) return -1.0;
    return std::min(1.0, static_cast<double>(temp) / static_cast<double>(std::max<std::uint32_t>(1, max_temp)));
  }

  // 8-step quantization for the terminal; -1 for the null color.
  int step(std::uint32_t temp) const {
    const double pos = position(temp);
    if (pos < 0) return -1;
    return std::clamp(static_cast<int>(std::ceil(pos * 8.0)) - 1, 0, 7);
  }

  std::string color(std::uint32_t temp) const {
    const double pos = position(temp);
    if (pos < 0) return null_color;
    const double x = pos * static_cast<double>(ramp.size() - 1);
    const auto i = std::min(static_cast<std::size_t>(x), ramp.size() - 2);
    return mix(ramp[i], ramp[i + 1], x - static_cast<double>(i));
  }

  friend bool operator==(const ColorScale&, const ColorScale&) = default;

 private:
  static std::string mix(const std::string& a, const std::string& b, double t) {
    auto channel = [](const std::string& c, int k) { return std::stoi(c.substr(1 + 2 * k, 2), nullptr, 16); };
    char buf[8];
    int rgb[3];
    for (int k = 0; k < 3; ++k) {
      rgb[k] = static_cast<int>(std::lround(channel(a, k) + (channel(b, k) - channel(a, k)) * t));
    }
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", rgb[0], rgb[1], rgb[2]);
    return buf;
  }
};

// ---------------------------------------------------------------------------
// Report document

struct RegionReport {
  MemoryRegion region;
  std::vector<CompressedRun> runs;
  std::vector<PatternReport> findings;
  friend bool operator==(const RegionReport&, const RegionReport&) = default;
};

struct SpaceReport {
  Space space = Space::global;
  std::vector<RegionReport> regions;
  friend bool operator==(const SpaceReport&, const SpaceReport&) = default;
};

struct KernelReport {
  KernelMeta meta;
  std::uint64_t launch_index = 0;
  ColorScale scale;
  std::vector<SpaceReport> spaces;
  friend bool operator==(const KernelReport&, const KernelReport&) = default;
};

struct HeatReport {
  std::vector<KernelReport> kernels;
  friend bool operator==(const HeatReport&, const HeatReport&) = default;
};

// Runs for one region: per-sector below the compression threshold, maximal
// runs (with zero rows for untouched sectors) above it.
inline std::vector<CompressedRun> region_runs(std::span<const HeatRow> rows, const MemoryRegion& region) {
  const std::uint64_t span = region.id == kUnknownRegion ? rows.size() : region.sector_span();
  if (span > kRunCompressionThreshold) return compress_region(rows, region);
  return uncompressed_runs(region.id == kUnknownRegion ? std::vector<HeatRow>(rows.begin(), rows.end())
                                                       : materialize_region(rows, region));
}

// One KernelReport from a flushed table; regions must cover every region id in
// the table (the unknown region may be omitted, it is synthesized).
inline KernelReport build_kernel_report(const HeatTable& table, std::span<const MemoryRegion> regions,
                                        std::span<const PatternReport> findings, std::uint64_t launch_index) {
  KernelReport k;
  k.meta = table.meta;
  k.launch_index = launch_index;
  k.scale.max_temp = std::max<std::uint32_t>(1, table.meta.warps());
  for (Space s : kAllSpaces) {
    const auto rows = table.rows_in(s);
    if (rows.empty()) continue;
    std::map<RegionId, std::vector<HeatRow>> by_region;
    for (const auto& r : rows) by_region[r.region_id].push_back(r);
    SpaceReport sr{s, {}};
    for (auto& [id, region_rows] : by_region) {
      MemoryRegion region = unknown_region(s);
      if (id != kUnknownRegion) {
        auto it = std::find_if(regions.begin(), regions.end(), [&](const MemoryRegion& m) { return m.id == id; });
        if (it == regions.end()) throw InvariantViolation("heat row refers to unlisted region " + std::to_string(id));
        region = *it;
      } else {
        region.start_tag = region_rows.front().sector_tag;
        region.end_tag = region_rows.back().sector_tag;
      }
      RegionReport rr{region, region_runs(region_rows, region), {}};
      for (const auto& f : findings) {
        if (f.region_id == id && f.space == s) rr.findings.push_back(f);
      }
      sr.regions.push_back(std::move(rr));
    }
    k.spaces.push_back(std::move(sr));
  }
  return k;
}

namespace detail {

using ojson = nlohmann::ordered_json;

inline ojson dim3_json(const Dim3& d) { return ojson::array({d.x, d.y, d.z}); }

inline Dim3 dim3_from(const ojson& j) { return Dim3{j.at(0).get<std::uint32_t>(), j.at(1).get<std::uint32_t>(), j.at(2).get<std::uint32_t>()}; }

inline ojson params_json(const PatternParams& p) {
  ojson j;
  if (p.hot_threshold) j["hot_threshold"] = *p.hot_threshold;
  else j["hot_threshold"] = nullptr;
  j["hot_closeness"] = p.hot_closeness;
  j["false_share_ratio"] = p.false_share_ratio;
  j["false_share_min"] = p.false_share_min;
  j["smem_word_temp_cap"] = p.smem_word_temp_cap;
  j["smem_coverage"] = p.smem_coverage;
  j["strided_util_max"] = p.strided_util_max;
  j["strided_min_sectors"] = p.strided_min_sectors;
  j["random_hot_cv"] = p.random_hot_cv;
  return j;
}

inline PatternParams params_from(const ojson& j) {
  PatternParams p;
  if (!j.at("hot_threshold").is_null()) p.hot_threshold = j.at("hot_threshold").get<std::uint32_t>();
  p.hot_closeness = j.at("hot_closeness").get<double>();
  p.false_share_ratio = j.at("false_share_ratio").get<double>();
  p.false_share_min = j.at("false_share_min").get<std::uint32_t>();
  p.smem_word_temp_cap = j.at("smem_word_temp_cap").get<std::uint32_t>();
  p.smem_coverage = j.at("smem_coverage").get<double>();
  p.strided_util_max = j.at("strided_util_max").get<double>();
  p.strided_min_sectors = j.at("strided_min_sectors").get<std::uint32_t>();
  p.random_hot_cv = j.at("random_hot_cv").get<double>();
  return p;
}

}  // namespace detail

inline nlohmann::ordered_json finding_to_json(const PatternReport& f, std::uint64_t touched_sectors) {
  detail::ojson j;
  j["kind"] = to_string(f.kind);
  if (f.subtype) j["subtype"] = to_string(*f.subtype);
  j["evidence"] = f.evidence;
  j["evidence_total"] = f.evidence_total();
  j["severity"] = touched_sectors == 0 ? 0.0 : std::min(1.0, static_cast<double>(f.evidence_total()) / static_cast<double>(touched_sectors));
  j["stats"] = detail::ojson(f.stats);
  j["params"] = detail::params_json(f.params_used);
  j["diagnostic"] = format_diagnostic(f);
  return j;
}

inline nlohmann::ordered_json to_json(const HeatReport& report) {
  detail::ojson doc;
  doc["version"] = kReportVersion;
  doc["tool"] = {{"name", kToolName}, {"version", kToolVersion}};
  doc["kernels"] = detail::ojson::array();
  for (const auto& k : report.kernels) {
    detail::ojson kj;
    kj["name"] = k.meta.kernel_name;
    kj["launch_index"] = k.launch_index;
    kj["grid"] = detail::dim3_json(k.meta.grid_dim);
    kj["block"] = detail::dim3_json(k.meta.block_dim);
    kj["sampled_block"] = detail::dim3_json(k.meta.sampled_block);
    kj["warps_in_block"] = k.meta.warps();
    kj["color_scale"] = {{"kind", "linear"}, {"min", 0}, {"max", k.scale.max_temp}, {"null_color", k.scale.null_color}, {"ramp", k.scale.ramp}};
    kj["spaces"] = detail::ojson::array();
    for (const auto& s : k.spaces) {
      detail::ojson sj;
      sj["space"] = to_string(s.space);
      sj["regions"] = detail::ojson::array();
      for (const auto& r : s.regions) {
        detail::ojson rj;
        rj["id"] = r.region.id;
        rj["label"] = r.region.label;
        rj["base"] = r.region.base;
        rj["length"] = r.region.length;
        rj["start_tag"] = r.region.start_tag;
        rj["end_tag"] = r.region.end_tag;
        rj["runs"] = detail::ojson::array();
        std::uint64_t touched = 0;
        for (const auto& run : r.runs) {
          rj["runs"].push_back({{"start_tag", run.start_tag},
                                {"count", run.count},
                                {"w", std::vector<std::uint32_t>(run.temps.begin(), run.temps.begin() + kWordsPerSector)},
                                {"s", run.temps[kWordsPerSector]}});
          if (run.temps[kWordsPerSector] > 0) touched += run.count;
        }
        rj["findings"] = detail::ojson::array();
        for (const auto& f : r.findings) rj["findings"].push_back(finding_to_json(f, touched));
        sj["regions"].push_back(std::move(rj));
      }
      kj["spaces"].push_back(std::move(sj));
    }
    doc["kernels"].push_back(std::move(kj));
  }
  return doc;
}

// Inverse of to_json; throws ConfigError on documents that do not match.
inline HeatReport report_from_json(const nlohmann::ordered_json& doc) {
  try {
    if (doc.at("version").get<std::string>() != kReportVersion) throw ConfigError("unsupported report version");
    HeatReport report;
    for (const auto& kj : doc.at("kernels")) {
      KernelReport k;
      k.meta.kernel_name = kj.at("name").get<std::string>();
      k.launch_index = kj.at("launch_index").get<std::uint64_t>();
      k.meta.grid_dim = detail::dim3_from(kj.at("grid"));
      k.meta.block_dim = detail::dim3_from(kj.at("block"));
      k.meta.sampled_block = detail::dim3_from(kj.at("sampled_block"));
      const auto& cs = kj.at("color_scale");
      k.scale.max_temp = cs.at("max").get<std::uint32_t>();
      k.scale.null_color = cs.at("null_color").get<std::string>();
      k.scale.ramp = cs.at("ramp").get<std::vector<std::string>>();
      for (const auto& sj : kj.at("spaces")) {
        const auto space = parse_space(sj.at("space").get<std::string>());
        if (!space) throw ConfigError("report has an unknown space");
        SpaceReport s{*space, {}};
        for (const auto& rj : sj.at("regions")) {
          RegionReport r;
          r.region = MemoryRegion{rj.at("id").get<RegionId>(), rj.at("label").get<std::string>(), *space,
                                  rj.at("base").get<Address>(), rj.at("length").get<std::uint64_t>(),
                                  rj.at("start_tag").get<SectorTag>(), rj.at("end_tag").get<SectorTag>()};
          for (const auto& run : rj.at("runs")) {
            CompressedRun c;
            c.start_tag = run.at("start_tag").get<SectorTag>();
            c.count = run.at("count").get<std::uint64_t>();
            const auto w = run.at("w").get<std::vector<std::uint32_t>>();
            if (w.size() != kWordsPerSector || c.count == 0) throw ConfigError("malformed run in report");
            std::copy(w.begin(), w.end(), c.temps.begin());
            c.temps[kWordsPerSector] = run.at("s").get<std::uint32_t>();
            r.runs.push_back(c);
          }
          for (const auto& fj : rj.at("findings")) {
            PatternReport f;
            const auto kind = parse_pattern_kind(fj.at("kind").get<std::string>());
            if (!kind) throw ConfigError("report has an unknown pattern kind");
            f.kind = *kind;
            if (fj.contains("subtype")) f.subtype = parse_smem_subtype(fj.at("subtype").get<std::string>());
            f.region_id = r.region.id;
            f.space = *space;
            f.region_label = r.region.label;
            f.kernel_name = k.meta.kernel_name;
            f.evidence = fj.at("evidence").get<std::vector<SectorTag>>();
            f.stats = fj.at("stats").get<std::map<std::string, double>>();
            f.params_used = detail::params_from(fj.at("params"));
            r.findings.push_back(std::move(f));
          }
          s.regions.push_back(std::move(r));
        }
        k.spaces.push_back(std::move(s));
      }
      report.kernels.push_back(std::move(k));
    }
    return report;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("report: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Static renderings

namespace detail {

inline std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

// One panel per region, one column per run (sector tags run
// left to right), the sector cell on top of the eight word cells.
inline std::string render_svg(const HeatReport& report) {
  constexpr int cell = 14, gap = 3, margin = 20, label_w = 34, panel_gap = 30;
  constexpr int column_h = cell + gap + 8 * cell;
  struct Panel {
    const KernelReport* kernel;
    const SpaceReport* space;
    const RegionReport* region;
  };
  std::vector<Panel> panels;
  std::size_t widest = 0;
  for (const auto& k : report.kernels) {
    for (const auto& s : k.spaces) {
      for (const auto& r : s.regions) {
        panels.push_back({&k, &s, &r});
        widest = std::max(widest, r.runs.size());
      }
    }
  }
  const int panel_h = 36 + column_h + 22;
  const int width = 2 * margin + label_w + static_cast<int>(std::max<std::size_t>(widest, 8)) * cell;
  const int height = 2 * margin + std::max(1, static_cast<int>(panels.size())) * (panel_h + panel_gap) + 30;
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\" viewBox=\"0 0 "
    << width << ' ' << height << "\" font-family=\"monospace\" font-size=\"10\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  if (panels.empty()) o << "<text x=\"" << margin << "\" y=\"" << margin + 10 << "\">no data</text>\n";
  int y = margin;
  for (const auto& p : panels) {
    const auto& reg = p.region->region;
    o << "<g class=\"panel\" data-kernel=\"" << detail::xml_escape(p.kernel->meta.kernel_name) << "\" data-region=\"" << reg.id << "\">\n";
    o << "<text x=\"" << margin << "\" y=\"" << y + 10 << "\" font-weight=\"bold\">" << detail::xml_escape(p.kernel->meta.kernel_name)
      << " / " << to_string(p.space->space) << " / " << detail::xml_escape(reg.label) << " (region " << reg.id << ", tags "
      << reg.start_tag << ".." << reg.end_tag << ")</text>\n";
    std::string labels;
    for (const auto& f : p.region->findings) {
      labels += (labels.empty() ? "" : ", ") + std::string(to_string(f.kind));
      if (f.subtype) labels += "(" + std::string(to_string(*f.subtype)) + ")";
    }
    o << "<text x=\"" << margin << "\" y=\"" << y + 22 << "\">findings: " << (labels.empty() ? "none" : detail::xml_escape(labels)) << "</text>\n";
    const int top = y + 36;
    o << "<text x=\"" << margin << "\" y=\"" << top + cell - 3 << "\">S</text>\n";
    for (int w = 0; w < 8; ++w) o << "<text x=\"" << margin << "\" y=\"" << top + cell + gap + (w + 1) * cell - 3 << "\">w" << w << "</text>\n";
    int x = margin + label_w;
    for (const auto& run : p.region->runs) {
      auto rect = [&](int ry, std::uint32_t t, const std::string& what) {
        o << "<rect x=\"" << x << "\" y=\"" << ry << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\""
          << p.kernel->scale.color(t) << "\" stroke=\"#ffffff\" stroke-width=\"0.5\"><title>tag " << run.start_tag;
        if (run.count > 1) o << "+" << run.count - 1;
        o << ' ' << what << " temp " << t << "</title></rect>\n";
      };
      rect(top, run.temps[kWordsPerSector], "sector");
      for (std::uint32_t w = 0; w < kWordsPerSector; ++w) rect(top + cell + gap + static_cast<int>(w) * cell, run.temps[w], "w" + std::to_string(w));
      if (run.count > 1) {
        o << "<text x=\"" << x + 1 << "\" y=\"" << top + column_h + 10 << "\" font-size=\"7\">x" << run.count << "</text>\n";
      }
      x += cell;
    }
    o << "</g>\n";
    y += panel_h + panel_gap;
  }
  if (!report.kernels.empty()) {
    const auto& scale = report.kernels.front().scale;
    int x = margin;
    o << "<g class=\"legend\">\n<text x=\"" << x << "\" y=\"" << y + 10 << "\">0</text>\n";
    x += 10;
    o << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"" << scale.null_color << "\"/>\n";
    x += cell + 6;
    for (std::uint32_t t = 1; t <= scale.max_temp; ++t) {
      o << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"6\" height=\"" << cell << "\" fill=\"" << scale.color(t) << "\"/>\n";
      x += 6;
    }
    o << "<text x=\"" << x + 4 << "\" y=\"" << y + 10 << "\">" << scale.max_temp << " warps</text>\n</g>\n";
  }
  o << "</svg>\n";
  return o.str();
}

inline constexpr std::array<std::string_view, 8> kTerminalRamp{"▁", "▂", "▃", "▄",
                                                               "▅", "▆", "▇", "█"};
inline constexpr std::string_view kTerminalNull = "·";

// Vertical layout: one line per run, sector cell first, then w0..w7.
inline std::string render_terminal(const HeatReport& report) {
  std::ostringstream o;
  if (report.kernels.empty()) return "no data\n";
  for (const auto& k : report.kernels) {
    o << "kernel " << k.meta.kernel_name << " grid " << to_string(k.meta.grid_dim) << " block " << to_string(k.meta.block_dim)
      << " sampled " << to_string(k.meta.sampled_block) << " (scale 0.." << k.scale.max_temp << ")\n";
    auto glyph = [&](std::uint32_t t) {
      const int s = k.scale.step(t);
      return s < 0 ? kTerminalNull : kTerminalRamp[static_cast<std::size_t>(s)];
    };
    for (const auto& s : k.spaces) {
      for (const auto& r : s.regions) {
        o << "  [" << to_string(s.space) << "] " << r.region.label << " (region " << r.region.id << ")\n";
        for (const auto& f : r.findings) o << "    ! " << format_diagnostic(f) << '\n';
        o << "    tag          S  w0-w7\n";
        for (const auto& run : r.runs) {
          std::string tag = std::to_string(run.start_tag);
          o << "    " << tag << std::string(tag.size() < 12 ? 12 - tag.size() : 1, ' ') << ' ' << glyph(run.temps[kWordsPerSector]) << "  ";
          for (std::uint32_t w = 0; w < kWordsPerSector; ++w) o << glyph(run.temps[w]);
          if (run.count > 1) o << "  x" << run.count;
          o << '\n';
        }
      }
    }
  }
  return o.str();
}

}  // namespace warpthermo
