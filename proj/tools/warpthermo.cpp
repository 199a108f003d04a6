// warpthermo command-line driver: simulate | analyze | report | run.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "warpthermo/warpthermo.hpp"

namespace fs = std::filesystem;
using namespace warpthermo;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitParse = 3;
constexpr int kExitSpec = 4;

struct Emit {
  bool csv = false;
  bool json = false;
  bool svg = false;
  bool terminal = false;

  bool any() const { return csv || json || svg || terminal; }
};

struct Options {
  std::string scenario;
  std::string trace;
  std::string report;
  std::string out;
  std::string block = "0,0,0";
  std::vector<std::string> kernels;
  bool baseline_counts = false;
  Emit emit;
  PatternParams params;
  std::optional<std::uint32_t> hot_threshold;
};

Dim3 parse_block(const std::string& s) {
  Dim3 d;
  std::uint32_t* parts[] = {&d.x, &d.y, &d.z};
  std::size_t pos = 0;
  for (int i = 0; i < 3; ++i) {
    const auto comma = s.find(',', pos);
    if ((i < 2) != (comma != std::string::npos)) throw ConfigError("--block expects x,y,z");
    const auto field = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), *parts[i]);
    if (ec != std::errc{} || ptr != field.data() + field.size() || field.empty()) throw ConfigError("--block expects x,y,z");
    pos = comma + 1;
  }
  return d;
}

fs::path output_dir(const Options& o) {
  if (!o.out.empty()) return o.out;
  if (const char* env = std::getenv("WARP_THERMO_OUT"); env != nullptr && *env != '\0') return env;
  return "warpthermo-out";
}

fs::path ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) throw ConfigError("cannot create output directory " + p.string());
  return p;
}

void write_file(const fs::path& p, std::string_view content) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + p.string());
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!f) throw ConfigError("cannot write " + p.string());
}

std::string safe_name(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.') ? c : '_';
  return out;
}

std::string file_stem(const KernelResult& r) {
  char idx[16];
  std::snprintf(idx, sizeof idx, "%03llu", static_cast<unsigned long long>(r.launch_index));
  return std::string(idx) + "_" + safe_name(r.table.meta.kernel_name);
}

Scenario load_scenario(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open scenario " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw SpecError("scenario " + path + ": " + e.what());
  }
  return parse_scenario(j);
}

void simulate_to(const Scenario& s, std::ostream& out) {
  TraceWriter w(out);
  simulate(s, [&](const TraceEvent& e) { w.write(e); });
  out.flush();
}

AnalysisOptions analysis_options(const Options& o) {
  AnalysisOptions a;
  a.sampling.target_block = parse_block(o.block);
  if (!o.kernels.empty()) a.sampling.kernel_whitelist = o.kernels;
  a.params = o.params;
  a.params.hot_threshold = o.hot_threshold;
  a.params.validate();
  a.baseline_counts = o.baseline_counts;
  return a;
}

void write_analysis(const Options& o, std::istream& trace, const fs::path& dir) {
  const auto results = analyze_stream(trace, analysis_options(o));
  Emit emit = o.emit;
  if (!emit.any()) emit.csv = emit.json = true;

  std::map<RegionId, MemoryRegion> regions;
  for (const auto& r : results) {
    for (const auto& m : r.regions) regions.emplace(m.id, m);
  }
  std::vector<MemoryRegion> region_list;
  for (const auto& [id, m] : regions) region_list.push_back(m);

  if (emit.csv) {
    ensure_dir(dir / "heat");
    for (const auto& r : results) write_file(dir / "heat" / (file_stem(r) + ".csv"), emit_csv(r.table));
    write_file(dir / "regions.csv", emit_config(region_list));
  }
  if (o.baseline_counts) {
    ensure_dir(dir / "counts");
    for (const auto& r : results) {
      if (r.counts) write_file(dir / "counts" / (file_stem(r) + ".csv"), emit_counts_csv(*r.counts));
    }
  }
  const auto report = build_report(results);
  if (emit.json) write_file(dir / "report.json", to_json(report).dump(2) + "\n");
  if (emit.svg) write_file(dir / "report.svg", render_svg(report));
  write_file(dir / "findings.txt", findings_text(results));
  if (emit.terminal) std::cout << render_terminal(report);
  std::cerr << findings_text(results);
}

void cmd_simulate(const Options& o) {
  const auto scenario = load_scenario(o.scenario);
  if (o.trace == "-") {
    simulate_to(scenario, std::cout);
    return;
  }
  const fs::path path = o.trace.empty() ? ensure_dir(output_dir(o)) / "trace.jsonl" : fs::path(o.trace);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + path.string());
  simulate_to(scenario, f);
}

void cmd_analyze(const Options& o) {
  const auto dir = ensure_dir(output_dir(o));
  if (o.trace.empty() || o.trace == "-") {
    write_analysis(o, std::cin, dir);
    return;
  }
  std::ifstream f(o.trace, std::ios::binary);
  if (!f) throw ConfigError("cannot open trace " + o.trace);
  write_analysis(o, f, dir);
}

void cmd_run(const Options& o) {
  const auto dir = ensure_dir(output_dir(o));
  const auto scenario = load_scenario(o.scenario);
  const auto trace_path = dir / "trace.jsonl";
  {
    std::ofstream f(trace_path, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + trace_path.string());
    simulate_to(scenario, f);
  }
  std::ifstream f(trace_path, std::ios::binary);
  write_analysis(o, f, dir);
}

void cmd_report(const Options& o) {
  std::ifstream f(o.report);
  if (!f) throw ConfigError("cannot open report " + o.report);
  nlohmann::ordered_json doc;
  try {
    doc = nlohmann::ordered_json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("report " + o.report + ": " + e.what());
  }
  const auto report = report_from_json(doc);
  Emit emit = o.emit;
  if (!emit.svg && !emit.terminal) emit.terminal = true;
  if (emit.svg) write_file(ensure_dir(output_dir(o)) / "report.svg", render_svg(report));
  if (emit.terminal) std::cout << render_terminal(report);
}

void add_output(CLI::App* c, Options& o) {
  c->add_option("--out,-o", o.out, "Output directory (default: $WARP_THERMO_OUT or ./warpthermo-out)");
}

void add_analysis(CLI::App* c, Options& o) {
  c->add_option("--block", o.block, "Sampled thread block x,y,z")->capture_default_str();
  c->add_option("--kernels", o.kernels, "Kernel name globs to analyze")->delimiter(',');
  c->add_flag("--csv", o.emit.csv, "Write heat/*.csv and regions.csv");
  c->add_flag("--json", o.emit.json, "Write report.json");
  c->add_flag("--svg", o.emit.svg, "Write report.svg");
  c->add_flag("--terminal", o.emit.terminal, "Print the heat map to stdout");
  c->add_flag("--baseline-counts", o.baseline_counts, "Also write per-word access counts");
  c->add_option("--hot-threshold", o.hot_threshold, "Hot sector temperature (default max(2, warps/2))");
  c->add_option("--hot-closeness", o.params.hot_closeness)->capture_default_str();
  c->add_option("--false-share-ratio", o.params.false_share_ratio)->capture_default_str();
  c->add_option("--false-share-min", o.params.false_share_min)->capture_default_str();
  c->add_option("--smem-word-temp-cap", o.params.smem_word_temp_cap)->capture_default_str();
  c->add_option("--smem-coverage", o.params.smem_coverage)->capture_default_str();
  c->add_option("--strided-util-max", o.params.strided_util_max)->capture_default_str();
  c->add_option("--strided-min-sectors", o.params.strided_min_sectors)->capture_default_str();
  c->add_option("--random-hot-cv", o.params.random_hot_cv)->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  std::ios::sync_with_stdio(false);
  CLI::App app{"Distinct-warp memory heat maps from warp-level traces"};
  app.require_subcommand(1);
  Options o;

  auto* sim = app.add_subcommand("simulate", "Run a scenario through the SIMT simulator and write its trace");
  sim->add_option("--scenario", o.scenario, "Scenario JSON")->required();
  sim->add_option("--trace", o.trace, "Trace output file ('-' for stdout; default <out>/trace.jsonl)");
  add_output(sim, o);

  auto* ana = app.add_subcommand("analyze", "Build heat maps and findings from a trace");
  ana->add_option("--trace", o.trace, "Trace file ('-' or omitted for stdin)");
  add_output(ana, o);
  add_analysis(ana, o);

  auto* rep = app.add_subcommand("report", "Re-render an existing report.json");
  rep->add_option("--report", o.report, "report.json")->required();
  rep->add_flag("--svg", o.emit.svg, "Write report.svg");
  rep->add_flag("--terminal", o.emit.terminal, "Print the heat map to stdout");
  add_output(rep, o);

  auto* run = app.add_subcommand("run", "simulate followed by analyze");
  run->add_option("--scenario", o.scenario, "Scenario JSON")->required();
  add_output(run, o);
  add_analysis(run, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (sim->parsed()) cmd_simulate(o);
    else if (ana->parsed()) cmd_analyze(o);
    else if (rep->parsed()) cmd_report(o);
    else if (run->parsed()) cmd_run(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const TraceParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kExitParse;
  } catch (const SpecError& e) {
    std::cerr << "scenario error: " << e.what() << '\n';
    return kExitSpec;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitParse;
  }
  return 0;
}
