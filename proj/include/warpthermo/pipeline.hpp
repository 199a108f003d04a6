#pragma once

// Single-pass analysis of an event stream: registry upkeep, block and kernel
// sampling, heat-map ingestion, per-region misalignment tallies, and
// classification at every KernelEnd. Memory grows with touched sectors only.

#include <istream>

#include "warpthermo/analyzer.hpp"
#include "warpthermo/patterns.hpp"
#include "warpthermo/report.hpp"
#include "warpthermo/trace_io.hpp"

namespace warpthermo {

struct AnalysisOptions {
  SamplingPolicy sampling;
  PatternParams params;
  bool baseline_counts = false;
};

struct KernelResult {
  std::uint64_t launch_index = 0;  // ordinal among all launches in the trace
  HeatTable table;
  std::vector<MemoryRegion> regions;  // regions touched by the sampled block
  std::vector<PatternReport> findings;
  std::optional<AccessCountTable> counts;
};

class StreamingAnalyzer {
 public:
  explicit StreamingAnalyzer(AnalysisOptions options = {}) : options_(std::move(options)), span_filter_(options_.sampling) {
    options_.params.validate();
  }

  StreamingAnalyzer(const StreamingAnalyzer&) = delete;
  StreamingAnalyzer& operator=(const StreamingAnalyzer&) = delete;

  void consume(const TraceEvent& event) {
    if (const auto* b = std::get_if<KernelBeginEvent>(&event)) {
      if (open_) throw InvariantViolation("kernel_begin '" + b->kernel_name + "' while '" + meta_.kernel_name + "' is open");
      ++launches_;
    }
    if (!span_filter_.admit(event)) {
      if (std::holds_alternative<AccessEvent>(event)) ++records_seen_;
      return;
    }
    std::visit([this](const auto& e) { on(e); }, event);
  }

  // Throws if a kernel is still open.
  void finish() const {
    if (open_) throw InvariantViolation("trace ended inside kernel '" + meta_.kernel_name + "'");
  }

  const std::vector<KernelResult>& results() const { return results_; }
  std::vector<KernelResult> take_results() { return std::move(results_); }

  std::uint64_t records_seen() const { return records_seen_; }
  std::uint64_t records_sampled() const { return records_sampled_; }

 private:
  void on(const AllocEvent& a) { registry_.register_alloc(a); }
  void on(const FreeEvent& f) { registry_.release(f.id); }

  void on(const KernelBeginEvent& b) {
    open_ = true;
    meta_ = KernelMeta{b.kernel_name, b.grid_dim, b.block_dim, options_.sampling.target_block};
    history_.clear();
    tallies_.clear();
    counts_ = AccessCountTable{};
  }

  void on(const KernelEndEvent& e) {
    if (!open_) throw InvariantViolation("kernel_end '" + e.kernel_name + "' without kernel_begin");
    if (e.kernel_name != meta_.kernel_name) {
      throw InvariantViolation("kernel_end '" + e.kernel_name + "' does not match '" + meta_.kernel_name + "'");
    }
    open_ = false;
    KernelResult r;
    r.launch_index = launches_ - 1;
    r.table = flush(history_, registry_, meta_);
    std::map<std::pair<Space, RegionId>, std::vector<HeatRow>> rows;
    for (const auto& row : r.table.rows) rows[{row.space, row.region_id}].push_back(row);
    for (const auto& [key, region_rows] : rows) {
      const auto [space, id] = key;
      const MemoryRegion region = id == kUnknownRegion ? unknown_region(space) : *registry_.find(id);
      if (id != kUnknownRegion) r.regions.push_back(region);
      static const MisalignmentTally kEmpty;
      auto t = tallies_.find(key);
      auto found = classify_region(region, meta_.kernel_name, region_rows, t == tallies_.end() ? kEmpty : t->second,
                                   options_.params, meta_.warps());
      r.findings.insert(r.findings.end(), found.begin(), found.end());
    }
    std::sort(r.regions.begin(), r.regions.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    if (options_.baseline_counts) r.counts = std::move(counts_);
    results_.push_back(std::move(r));
    history_.clear();
    tallies_.clear();
  }

  void on(const AccessEvent& a) {
    ++records_seen_;
    if (!open_) throw InvariantViolation("memory access outside any kernel");
    if (a.rec.block_id != options_.sampling.target_block) return;
    ++records_sampled_;
    ingest(history_, a.rec);
    if (options_.baseline_counts) counts_.add(a.rec);
    tally(a.rec);
  }

  // Splits the record's lanes by owning region so each region's tally sees
  // only its own part of the footprint.
  void tally(const MemAccessRecord& rec) {
    const MemoryRegion* cached = nullptr;
    RegionId first = kUnknownRegion;
    bool single = true;
    bool any = false;
    rec.for_each_active([&](std::uint32_t, Address addr) {
      if (cached == nullptr || !cached->contains(addr)) cached = registry_.lookup(rec.space, addr);
      const RegionId id = cached ? cached->id : kUnknownRegion;
      if (!any) first = id;
      else if (id != first) single = false;
      any = true;
    });
    if (!any) return;
    if (single) {
      tallies_[{rec.space, first}].add(rec);
      return;
    }
    std::map<RegionId, MemAccessRecord> parts;
    cached = nullptr;
    rec.for_each_active([&](std::uint32_t lane, Address addr) {
      if (cached == nullptr || !cached->contains(addr)) cached = registry_.lookup(rec.space, addr);
      auto [it, fresh] = parts.try_emplace(cached ? cached->id : kUnknownRegion);
      if (fresh) {
        it->second = rec;
        it->second.active_mask = 0;
        it->second.lane_addrs.fill(std::nullopt);
      }
      it->second.set_lane(lane, addr);
    });
    for (const auto& [id, part] : parts) tallies_[{rec.space, id}].add(part);
  }

  AnalysisOptions options_;
  KernelSpanFilter span_filter_;
  RegionRegistry registry_;
  HistoryMap history_;
  std::map<std::pair<Space, RegionId>, MisalignmentTally> tallies_;
  AccessCountTable counts_;
  KernelMeta meta_;
  bool open_ = false;
  std::uint64_t launches_ = 0;
  std::uint64_t records_seen_ = 0;
  std::uint64_t records_sampled_ = 0;
  std::vector<KernelResult> results_;
};

inline std::vector<KernelResult> analyze(std::span<const TraceEvent> events, const AnalysisOptions& options = {}) {
  StreamingAnalyzer a(options);
  for (const auto& e : events) a.consume(e);
  a.finish();
  return a.take_results();
}

// Reads line by line; parse errors surface as TraceParseError with the line number.
inline std::vector<KernelResult> analyze_stream(std::istream& in, const AnalysisOptions& options = {}) {
  StreamingAnalyzer a(options);
  TraceReader reader(in);
  TraceEvent e;
  while (reader.next(e)) {
    try {
      a.consume(e);
    } catch (const TraceParseError&) {
      throw;
    } catch (const InvariantViolation& err) {
      throw TraceParseError(reader.line_number(), err.what(), true);
    }
  }
  a.finish();
  return a.take_results();
}

inline HeatReport build_report(std::span<const KernelResult> results) {
  HeatReport report;
  for (const auto& r : results) report.kernels.push_back(build_kernel_report(r.table, r.regions, r.findings, r.launch_index));
  return report;
}

inline std::string findings_text(std::span<const KernelResult> results) {
  std::string out;
  for (const auto& r : results) {
    for (const auto& f : r.findings) out += format_diagnostic(f) + '\n';
  }
  return out;
}

}  // namespace warpthermo
