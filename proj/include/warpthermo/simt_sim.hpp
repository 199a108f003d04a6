#pragma once

// Deterministic lockstep SIMT simulator. Kernels only compute addresses; each
// executed memory instruction of a warp becomes one AccessEvent.

#include <charconv>
#include <functional>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "warpthermo/core.hpp"
#include "warpthermo/trace_io.hpp"

namespace warpthermo {

struct LaunchConfig {
  Dim3 grid_dim{1, 1, 1};
  Dim3 block_dim{1, 1, 1};

  void validate() const {
    if (grid_dim.x == 0 || grid_dim.y == 0 || grid_dim.z == 0) throw SpecError("grid dimensions must be >= 1");
    if (block_dim.x == 0 || block_dim.y == 0 || block_dim.z == 0) throw SpecError("block dimensions must be >= 1");
    if (block_dim.volume() > kMaxWarpsPerBlock * kWarpSize) throw SpecError("block exceeds 1024 threads");
  }
};

struct ThreadCoord {
  std::uint64_t tid = 0;
  std::uint32_t warp_id = 0;
  std::uint32_t lane = 0;
  friend constexpr bool operator==(const ThreadCoord&, const ThreadCoord&) = default;
};

// Row-major linearization: x fastest.
constexpr ThreadCoord flatten_tid(const Dim3& t, const Dim3& block_dim) {
  const std::uint64_t tid = t.x + std::uint64_t{t.y} * block_dim.x + std::uint64_t{t.z} * block_dim.x * block_dim.y;
  return {tid, static_cast<std::uint32_t>(tid / kWarpSize), static_cast<std::uint32_t>(tid % kWarpSize)};
}

constexpr Dim3 unflatten_tid(std::uint64_t tid, const Dim3& block_dim) {
  const std::uint64_t plane = std::uint64_t{block_dim.x} * block_dim.y;
  return Dim3{static_cast<std::uint32_t>(tid % block_dim.x), static_cast<std::uint32_t>((tid / block_dim.x) % block_dim.y),
              static_cast<std::uint32_t>(tid / plane)};
}

using Params = std::map<std::string, std::int64_t>;
using SimInputs = std::map<std::string, std::vector<std::int64_t>>;

// ---------------------------------------------------------------------------
// Allocation plan

struct AllocRequest {
  std::string label;
  Space space = Space::global;
  std::uint32_t elem_size = 4;
  std::uint64_t count = 0;
  std::optional<Address> base;  // explicit placement; otherwise packed
};

struct PlacedRegion {
  RegionId id = 0;
  std::string label;
  Space space = Space::global;
  Address base = 0;
  std::uint32_t elem_size = 4;
  std::uint64_t count = 0;

  std::uint64_t length() const { return std::uint64_t{elem_size} * count; }
};

inline constexpr Address kGlobalHeapBase = 0x10000;
inline constexpr Address kGlobalAlignment = 256;
inline constexpr Address kSharedAlignment = 128;

inline Address align_up(Address v, Address a) { return (v + a - 1) / a * a; }

class AllocationPlan {
 public:
  AllocationPlan() = default;

  // Global regions are packed upward from kGlobalHeapBase; shared and local
  // regions start at 0 in their own per-block space.
  explicit AllocationPlan(const std::vector<AllocRequest>& requests) {
    std::array<Address, 3> cursor{kGlobalHeapBase, 0, 0};
    RegionId next_id = 1;
    for (const auto& req : requests) {
      if (req.count == 0 || req.elem_size == 0) throw SpecError("allocation '" + req.label + "' is empty");
      if (index_.contains(req.label)) throw SpecError("allocation label '" + req.label + "' repeated");
      auto& cur = cursor[static_cast<std::size_t>(req.space)];
      const Address align = req.space == Space::global ? kGlobalAlignment : kSharedAlignment;
      PlacedRegion r{next_id++, req.label, req.space, req.base.value_or(align_up(cur, align)), req.elem_size, req.count};
      cur = std::max(cur, r.base + r.length());
      index_.emplace(r.label, regions_.size());
      regions_.push_back(std::move(r));
    }
  }

  const PlacedRegion& at(const std::string& label) const {
    auto it = index_.find(label);
    if (it == index_.end()) throw SpecError("kernel references unallocated region '" + label + "'");
    return regions_[it->second];
  }

  const std::vector<PlacedRegion>& regions() const { return regions_; }

  std::vector<TraceEvent> alloc_events() const {
    std::vector<TraceEvent> out;
    for (const auto& r : regions_) out.push_back(AllocEvent{r.id, r.label, r.space, r.base, r.length()});
    return out;
  }

 private:
  std::vector<PlacedRegion> regions_;
  std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Declarative access specs

// Product of integer literals and symbol names, e.g. "lda*bdx" or "-NJ".
struct Term {
  std::int64_t factor = 0;
  std::vector<std::string> symbols;

  static Term constant(std::int64_t v) { return Term{v, {}}; }
  friend bool operator==(const Term&, const Term&) = default;
};

using SymbolTable = std::map<std::string, std::int64_t>;

inline std::int64_t eval_term(const Term& t, const SymbolTable& symbols) {
  std::int64_t v = t.factor;
  for (const auto& s : t.symbols) {
    auto it = symbols.find(s);
    if (it == symbols.end()) throw SpecError("unresolved parameter '" + s + "'");
    v *= it->second;
  }
  return v;
}

inline Term parse_term(const nlohmann::json& j) {
  if (j.is_number_integer()) return Term::constant(j.get<std::int64_t>());
  if (!j.is_string()) throw SpecError("term must be an integer or a '*'-separated product string");
  Term t{1, {}};
  const auto s = j.get<std::string>();
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const auto star = s.find('*', pos);
    std::string factor = s.substr(pos, star == std::string::npos ? std::string::npos : star - pos);
    factor.erase(0, factor.find_first_not_of(' '));
    factor.erase(factor.find_last_not_of(' ') + 1);
    if (factor.empty()) throw SpecError("empty factor in term '" + s + "'");
    if (factor[0] == '-') {
      t.factor = -t.factor;
      factor.erase(0, 1);
    }
    std::int64_t lit = 0;
    auto [ptr, ec] = std::from_chars(factor.data(), factor.data() + factor.size(), lit);
    if (ec == std::errc{} && ptr == factor.data() + factor.size()) t.factor *= lit;
    else t.symbols.push_back(factor);
    if (star == std::string::npos) break;
    pos = star + 1;
  }
  return t;
}

// c0 + tx*cx + ty*cy + tz*cz + bx*cbx + by*cby + bz*cbz + i*ci, in elements.
struct AffineExpr {
  Term c0, tx, ty, tz, bx, by, bz, i;
  friend bool operator==(const AffineExpr&, const AffineExpr&) = default;
};

struct ResolvedAffine {
  std::int64_t c0 = 0, tx = 0, ty = 0, tz = 0, bx = 0, by = 0, bz = 0, i = 0;
};

inline ResolvedAffine resolve(const AffineExpr& e, const SymbolTable& s) {
  return {eval_term(e.c0, s), eval_term(e.tx, s), eval_term(e.ty, s), eval_term(e.tz, s),
          eval_term(e.bx, s), eval_term(e.by, s), eval_term(e.bz, s), eval_term(e.i, s)};
}

inline AffineExpr parse_affine(const nlohmann::json& j) {
  AffineExpr e;
  if (j.is_number_integer() || j.is_string()) {
    e.c0 = parse_term(j);
    return e;
  }
  if (!j.is_object()) throw SpecError("index expression must be an object of coefficients");
  for (const auto& [key, value] : j.items()) {
    Term t = parse_term(value);
    if (key == "c0") e.c0 = t;
    else if (key == "tx") e.tx = t;
    else if (key == "ty") e.ty = t;
    else if (key == "tz") e.tz = t;
    else if (key == "bx") e.bx = t;
    else if (key == "by") e.by = t;
    else if (key == "bz") e.bz = t;
    else if (key == "i") e.i = t;
    else throw SpecError("unknown index coefficient '" + key + "'");
  }
  return e;
}

enum class CmpOp : std::uint8_t { lt, le, gt, ge, eq, ne };

struct GuardClause {
  AffineExpr lhs;
  CmpOp op = CmpOp::lt;
  Term rhs;
};

struct LoopSpec {
  std::string var = "i";
  Term count;
};

struct AccessSpec {
  std::optional<std::uint64_t> pc;
  std::optional<Space> space;  // must match the region's space when given
  AccessKind kind = AccessKind::load;
  std::optional<std::uint32_t> size;  // defaults to the region's element size
  std::string region;
  AffineExpr index;
  std::optional<std::string> gather;  // element = inputs[gather][index]
  std::optional<LoopSpec> loop;
  std::vector<GuardClause> guard;  // conjunction
};

struct LoopBlock {
  LoopSpec loop;
  std::vector<AccessSpec> body;
};

using Statement = std::variant<AccessSpec, LoopBlock>;

struct DeclarativeKernel {
  std::vector<Statement> program;
};

enum class BuiltinKernel : std::uint8_t {
  gemm_v00,
  gemm_v01,
  spmv_csr,
  gramschmidt_k2,
  gramschmidt_k3,
  ttm_smem,
  warp_broadcast_smem,
};

inline std::optional<BuiltinKernel> parse_builtin(std::string_view s) {
  if (s == "gemm_v00") return BuiltinKernel::gemm_v00;
  if (s == "gemm_v01") return BuiltinKernel::gemm_v01;
  if (s == "spmv_csr") return BuiltinKernel::spmv_csr;
  if (s == "gramschmidt_k2") return BuiltinKernel::gramschmidt_k2;
  if (s == "gramschmidt_k3") return BuiltinKernel::gramschmidt_k3;
  if (s == "ttm_smem") return BuiltinKernel::ttm_smem;
  if (s == "warp_broadcast_smem") return BuiltinKernel::warp_broadcast_smem;
  return std::nullopt;
}

struct KernelSpec {
  std::string name;
  Params params;
  std::variant<BuiltinKernel, DeclarativeKernel> body;
};

// ---------------------------------------------------------------------------
// Lockstep execution

struct ThreadCtx {
  Dim3 thread;
  Dim3 block;
  Dim3 block_dim;
  Dim3 grid_dim;
  std::uint32_t warp_id = 0;
  std::uint32_t lane = 0;
};

using EventSink = std::function<void(const TraceEvent&)>;

// One warp of one block. issue() evaluates an element index per existing lane
// (nullopt = predicated off) and emits a single record unless no lane is active.
class WarpIssuer {
 public:
  WarpIssuer(const LaunchConfig& launch, const Dim3& block, std::uint32_t warp_id, const EventSink& sink)
      : sink_(sink), block_(block), warp_id_(warp_id) {
    const std::uint64_t threads = launch.block_dim.volume();
    for (std::uint32_t lane = 0; lane < kWarpSize; ++lane) {
      const std::uint64_t tid = std::uint64_t{warp_id} * kWarpSize + lane;
      if (tid >= threads) break;
      lanes_[lane] = ThreadCtx{unflatten_tid(tid, launch.block_dim), block, launch.block_dim, launch.grid_dim, warp_id, lane};
    }
  }

  const std::array<std::optional<ThreadCtx>, kWarpSize>& lanes() const { return lanes_; }

  template <typename ElementFn>
  void issue(std::uint64_t pc, AccessKind kind, const PlacedRegion& region, std::uint32_t size, ElementFn&& element_of) {
    MemAccessRecord rec;
    rec.pc = pc;
    rec.kind = kind;
    rec.space = region.space;
    rec.size = size;
    rec.warp_id = warp_id_;
    rec.block_id = block_;
    for (std::uint32_t lane = 0; lane < kWarpSize; ++lane) {
      if (!lanes_[lane]) continue;
      const std::optional<std::int64_t> element = element_of(*lanes_[lane]);
      if (!element) continue;
      rec.set_lane(lane, address_of(region, *element, size));
    }
    if (rec.active_mask != 0) sink_(AccessEvent{std::move(rec)});
  }

  static Address address_of(const PlacedRegion& region, std::int64_t element, std::uint32_t size) {
    if (element < 0 || std::uint64_t(element + 1) * size > region.length()) {
      throw SpecError("address outside region '" + region.label + "' (element " + std::to_string(element) + ")");
    }
    return region.base + std::uint64_t(element) * size;
  }

 private:
  const EventSink& sink_;
  Dim3 block_;
  std::uint32_t warp_id_;
  std::array<std::optional<ThreadCtx>, kWarpSize> lanes_{};
};

struct KernelEnv {
  const KernelSpec& spec;
  const LaunchConfig& launch;
  const SimInputs& inputs;
  const AllocationPlan& plan;

  std::int64_t param(const std::string& name) const {
    auto it = spec.params.find(name);
    if (it == spec.params.end()) throw SpecError("kernel '" + spec.name + "' missing parameter '" + name + "'");
    return it->second;
  }

  const std::vector<std::int64_t>& input(const std::string& name) const {
    auto it = inputs.find(name);
    if (it == inputs.end()) throw SpecError("kernel '" + spec.name + "' missing input array '" + name + "'");
    return it->second;
  }

  static std::int64_t gather(const std::vector<std::int64_t>& arr, const std::string& name, std::int64_t idx) {
    if (idx < 0 || static_cast<std::uint64_t>(idx) >= arr.size()) {
      throw SpecError("gather index " + std::to_string(idx) + " out of range for '" + name + "'");
    }
    return arr[static_cast<std::size_t>(idx)];
  }

  SymbolTable symbols() const {
    SymbolTable s(spec.params.begin(), spec.params.end());
    s["bdx"] = launch.block_dim.x;
    s["bdy"] = launch.block_dim.y;
    s["bdz"] = launch.block_dim.z;
    s["gdx"] = launch.grid_dim.x;
    s["gdy"] = launch.grid_dim.y;
    s["gdz"] = launch.grid_dim.z;
    return s;
  }
};

using Element = std::optional<std::int64_t>;

namespace builtin {

constexpr std::uint64_t pc_of(std::uint32_t ordinal) { return 16u * (ordinal + 1u); }

inline std::int64_t gx(const ThreadCtx& t) { return std::int64_t{t.block.x} * t.block_dim.x + t.thread.x; }
inline std::int64_t gy(const ThreadCtx& t) { return std::int64_t{t.block.y} * t.block_dim.y + t.thread.y; }

// One output element per thread; v01 swaps the row/column thread mapping.
inline void gemm(const KernelEnv& env, WarpIssuer& w, bool swapped) {
  const auto m = env.param("m"), n = env.param("n"), k = env.param("k");
  const auto lda = env.param("lda"), ldb = env.param("ldb"), ldc = env.param("ldc");
  const auto& A = env.plan.at("A");
  const auto& B = env.plan.at("B");
  const auto& C = env.plan.at("C");
  auto row = [&](const ThreadCtx& t) { return swapped ? gy(t) : gx(t); };
  auto col = [&](const ThreadCtx& t) { return swapped ? gx(t) : gy(t); };
  auto active = [&](const ThreadCtx& t) { return row(t) < m && col(t) < n; };
  for (std::int64_t kk = 0; kk < k; ++kk) {
    w.issue(pc_of(0), AccessKind::load, A, A.elem_size,
            [&](const ThreadCtx& t) -> Element { return active(t) ? Element{row(t) * lda + kk} : std::nullopt; });
    w.issue(pc_of(1), AccessKind::load, B, B.elem_size,
            [&](const ThreadCtx& t) -> Element { return active(t) ? Element{kk * ldb + col(t)} : std::nullopt; });
  }
  auto c_elem = [&](const ThreadCtx& t) -> Element { return active(t) ? Element{row(t) * ldc + col(t)} : std::nullopt; };
  w.issue(pc_of(2), AccessKind::load, C, C.elem_size, c_elem);
  w.issue(pc_of(3), AccessKind::store, C, C.elem_size, c_elem);
}

// CSR SpMV, one row per thread. The nonzero loop runs in lockstep until the
// longest row of the warp is done; finished lanes drop out of the mask.
inline void spmv_csr(const KernelEnv& env, WarpIssuer& w) {
  const auto num_rows = env.param("numRows");
  const auto& row_offsets = env.input("rowOffsets");
  const auto& col_indices = env.input("colIndices");
  const auto& R = env.plan.at("rowOffsets");
  const auto& CI = env.plan.at("colIndices");
  const auto& V = env.plan.at("values");
  const auto& X = env.plan.at("x");
  const auto& Y = env.plan.at("y");
  auto active = [&](const ThreadCtx& t) { return gx(t) < num_rows; };
  w.issue(pc_of(0), AccessKind::load, R, R.elem_size,
          [&](const ThreadCtx& t) -> Element { return active(t) ? Element{gx(t)} : std::nullopt; });
  w.issue(pc_of(1), AccessKind::load, R, R.elem_size,
          [&](const ThreadCtx& t) -> Element { return active(t) ? Element{gx(t) + 1} : std::nullopt; });
  auto nz = [&](const ThreadCtx& t, std::int64_t j) -> Element {
    if (!active(t)) return std::nullopt;
    const auto begin = KernelEnv::gather(row_offsets, "rowOffsets", gx(t));
    const auto end = KernelEnv::gather(row_offsets, "rowOffsets", gx(t) + 1);
    return begin + j < end ? Element{begin + j} : std::nullopt;
  };
  std::int64_t longest = 0;
  for (const auto& lane : w.lanes()) {
    if (lane && active(*lane)) {
      longest = std::max(longest, KernelEnv::gather(row_offsets, "rowOffsets", gx(*lane) + 1) -
                                      KernelEnv::gather(row_offsets, "rowOffsets", gx(*lane)));
    }
  }
  for (std::int64_t j = 0; j < longest; ++j) {
    w.issue(pc_of(2), AccessKind::load, CI, CI.elem_size, [&](const ThreadCtx& t) { return nz(t, j); });
    w.issue(pc_of(3), AccessKind::load, V, V.elem_size, [&](const ThreadCtx& t) { return nz(t, j); });
    w.issue(pc_of(4), AccessKind::load, X, X.elem_size, [&](const ThreadCtx& t) -> Element {
      const auto i = nz(t, j);
      if (!i) return std::nullopt;
      return KernelEnv::gather(col_indices, "colIndices", *i);
    });
  }
  w.issue(pc_of(5), AccessKind::store, Y, Y.elem_size,
          [&](const ThreadCtx& t) -> Element { return active(t) ? Element{gx(t)} : std::nullopt; });
}

inline void gramschmidt_k2(const KernelEnv& env, WarpIssuer& w) {
  const auto ni = env.param("NI"), nj = env.param("NJ"), k = env.param("k");
  const auto& a = env.plan.at("a");
  const auto& r = env.plan.at("r");
  const auto& q = env.plan.at("q");
  auto guarded = [&](auto f) {
    return [&, f](const ThreadCtx& t) -> Element { return gx(t) < ni ? Element{f(gx(t))} : std::nullopt; };
  };
  w.issue(pc_of(0), AccessKind::load, a, a.elem_size, guarded([&](std::int64_t i) { return i * nj + k; }));
  w.issue(pc_of(1), AccessKind::load, r, r.elem_size, guarded([&](std::int64_t) { return k * nj + k; }));
  w.issue(pc_of(2), AccessKind::store, q, q.elem_size, guarded([&](std::int64_t i) { return i * nj + k; }));
}

inline void gramschmidt_k3(const KernelEnv& env, WarpIssuer& w) {
  const auto ni = env.param("NI"), nj = env.param("NJ"), k = env.param("k");
  const auto& a = env.plan.at("a");
  const auto& r = env.plan.at("r");
  const auto& q = env.plan.at("q");
  auto on = [&](const ThreadCtx& t) { return gx(t) > k && gx(t) < nj; };
  auto r_elem = [&](const ThreadCtx& t) -> Element { return on(t) ? Element{k * nj + gx(t)} : std::nullopt; };
  w.issue(pc_of(0), AccessKind::store, r, r.elem_size, r_elem);
  for (std::int64_t i = 0; i < ni; ++i) {
    auto q_elem = [&](const ThreadCtx& t) -> Element { return on(t) ? Element{i * nj + k} : std::nullopt; };
    auto a_elem = [&](const ThreadCtx& t) -> Element { return on(t) ? Element{i * nj + gx(t)} : std::nullopt; };
    w.issue(pc_of(1), AccessKind::load, r, r.elem_size, r_elem);
    w.issue(pc_of(2), AccessKind::load, q, q.elem_size, q_elem);
    w.issue(pc_of(3), AccessKind::load, a, a.elem_size, a_elem);
    w.issue(pc_of(4), AccessKind::store, r, r.elem_size, r_elem);
  }
  for (std::int64_t i = 0; i < ni; ++i) {
    auto q_elem = [&](const ThreadCtx& t) -> Element { return on(t) ? Element{i * nj + k} : std::nullopt; };
    auto a_elem = [&](const ThreadCtx& t) -> Element { return on(t) ? Element{i * nj + gx(t)} : std::nullopt; };
    w.issue(pc_of(5), AccessKind::load, a, a.elem_size, a_elem);
    w.issue(pc_of(6), AccessKind::load, q, q.elem_size, q_elem);
    w.issue(pc_of(7), AccessKind::load, r, r.elem_size, r_elem);
    w.issue(pc_of(8), AccessKind::store, a, a.elem_size, a_elem);
  }
}

// Shared-memory traffic of a TTM kernel that keeps per-thread partial sums in
// shared memory at y_id = ty * Y_stride + tx.
inline void ttm_smem(const KernelEnv& env, WarpIssuer& w) {
  const auto y_stride = env.param("Y_stride");
  const auto loops_r = env.param("num_loops_r");
  const auto loops_nnz = env.param("num_loops_nnz");
  const auto inner = env.param("nnz_per_row");
  const auto& Y = env.plan.at("Y_shr");
  auto y_id = [&](const ThreadCtx& t) -> Element { return std::int64_t{t.thread.y} * y_stride + t.thread.x; };
  for (std::int64_t l = 0; l < loops_r; ++l) {
    for (std::int64_t nl = 0; nl < loops_nnz; ++nl) {
      w.issue(pc_of(0), AccessKind::store, Y, Y.elem_size, y_id);
      for (std::int64_t i = 0; i < inner; ++i) {
        w.issue(pc_of(1), AccessKind::load, Y, Y.elem_size, y_id);
        w.issue(pc_of(2), AccessKind::store, Y, Y.elem_size, y_id);
      }
      w.issue(pc_of(3), AccessKind::load, Y, Y.elem_size, y_id);
    }
  }
}

// Lane 0 publishes one word per warp; every lane of that warp reads it back.
inline void warp_broadcast_smem(const KernelEnv& env, WarpIssuer& w) {
  const auto& sum = env.plan.at("exel_sum");
  const auto& idx = env.plan.at("base_idx");
  auto leader = [](const ThreadCtx& t) -> Element { return t.lane == 0 ? Element{t.warp_id} : std::nullopt; };
  auto all = [](const ThreadCtx& t) -> Element { return Element{t.warp_id}; };
  w.issue(pc_of(0), AccessKind::store, sum, sum.elem_size, leader);
  w.issue(pc_of(1), AccessKind::store, idx, idx.elem_size, leader);
  w.issue(pc_of(2), AccessKind::load, sum, sum.elem_size, all);
  w.issue(pc_of(3), AccessKind::load, idx, idx.elem_size, all);
}

}  // namespace builtin

namespace detail {

inline bool compare(std::int64_t a, CmpOp op, std::int64_t b) {
  switch (op) {
    case CmpOp::lt: return a < b;
    case CmpOp::le: return a <= b;
    case CmpOp::gt: return a > b;
    case CmpOp::ge: return a >= b;
    case CmpOp::eq: return a == b;
    case CmpOp::ne: return a != b;
  }
  return false;
}

inline std::int64_t apply(const ResolvedAffine& e, const ThreadCtx& t, std::int64_t i) {
  return e.c0 + e.tx * t.thread.x + e.ty * t.thread.y + e.tz * t.thread.z + e.bx * t.block.x + e.by * t.block.y +
         e.bz * t.block.z + e.i * i;
}

// AccessSpec with everything symbol-dependent evaluated once per launch.
struct CompiledAccess {
  std::uint64_t pc = 0;
  AccessKind kind = AccessKind::load;
  std::uint32_t size = 4;
  const PlacedRegion* region = nullptr;
  ResolvedAffine index;
  const std::vector<std::int64_t>* gather = nullptr;
  std::string gather_name;
  std::vector<std::pair<ResolvedAffine, std::pair<CmpOp, std::int64_t>>> guard;
};

inline CompiledAccess compile(const AccessSpec& spec, std::uint32_t ordinal, const KernelEnv& env,
                              const SymbolTable& symbols) {
  CompiledAccess c;
  c.pc = spec.pc.value_or(builtin::pc_of(ordinal));
  c.kind = spec.kind;
  c.region = &env.plan.at(spec.region);
  if (spec.space && *spec.space != c.region->space) {
    throw SpecError("access space does not match region '" + spec.region + "'");
  }
  c.size = spec.size.value_or(c.region->elem_size);
  if (!is_valid_access_size(c.size)) throw SpecError("access size must be one of 1,2,4,8,16");
  c.index = resolve(spec.index, symbols);
  if (spec.gather) {
    c.gather = &env.input(*spec.gather);
    c.gather_name = *spec.gather;
  }
  for (const auto& g : spec.guard) c.guard.push_back({resolve(g.lhs, symbols), {g.op, eval_term(g.rhs, symbols)}});
  return c;
}

inline Element eval_compiled(const CompiledAccess& c, const ThreadCtx& t, std::int64_t i) {
  for (const auto& [lhs, rhs] : c.guard) {
    if (!compare(apply(lhs, t, i), rhs.first, rhs.second)) return std::nullopt;
  }
  const std::int64_t idx = apply(c.index, t, i);
  return c.gather ? KernelEnv::gather(*c.gather, c.gather_name, idx) : idx;
}

}  // namespace detail

// Byte address one lane's access resolves to, or nullopt when the guard
// rejects the lane. Throws SpecError for out-of-region results.
inline std::optional<Address> eval_access(const AccessSpec& spec, const ThreadCtx& lane, std::int64_t loop_value,
                                          const KernelEnv& env) {
  const auto c = detail::compile(spec, 0, env, env.symbols());
  const auto element = detail::eval_compiled(c, lane, loop_value);
  if (!element) return std::nullopt;
  return WarpIssuer::address_of(*c.region, *element, c.size);
}

inline void run_declarative(const DeclarativeKernel& kernel, const KernelEnv& env, WarpIssuer& w) {
  // Compiled once per warp; cheap relative to issuing the records.
  const auto symbols = env.symbols();
  std::uint32_t ordinal = 0;
  for (const auto& stmt : kernel.program) {
    if (const auto* a = std::get_if<AccessSpec>(&stmt)) {
      const auto c = detail::compile(*a, ordinal++, env, symbols);
      const std::int64_t n = a->loop ? eval_term(a->loop->count, symbols) : 1;
      for (std::int64_t i = 0; i < n; ++i) {
        w.issue(c.pc, c.kind, *c.region, c.size, [&](const ThreadCtx& t) { return detail::eval_compiled(c, t, i); });
      }
    } else {
      const auto& block = std::get<LoopBlock>(stmt);
      std::vector<detail::CompiledAccess> body;
      for (const auto& a : block.body) body.push_back(detail::compile(a, ordinal++, env, symbols));
      const std::int64_t n = eval_term(block.loop.count, symbols);
      for (std::int64_t i = 0; i < n; ++i) {
        for (const auto& c : body) {
          w.issue(c.pc, c.kind, *c.region, c.size, [&](const ThreadCtx& t) { return detail::eval_compiled(c, t, i); });
        }
      }
    }
  }
}

// Emits KernelBegin, then every warp of every block (blocks in (x, y, z)
// lexicographic order, warps ascending), then KernelEnd.
inline void emit_launch(const KernelSpec& spec, const LaunchConfig& launch, const SimInputs& inputs,
                        const AllocationPlan& plan, const EventSink& sink) {
  launch.validate();
  const KernelEnv env{spec, launch, inputs, plan};
  sink(KernelBeginEvent{spec.name, launch.grid_dim, launch.block_dim});
  const std::uint32_t warps = warps_in_block(launch.block_dim);
  for (std::uint32_t bx = 0; bx < launch.grid_dim.x; ++bx) {
    for (std::uint32_t by = 0; by < launch.grid_dim.y; ++by) {
      for (std::uint32_t bz = 0; bz < launch.grid_dim.z; ++bz) {
        for (std::uint32_t warp = 0; warp < warps; ++warp) {
          WarpIssuer w(launch, Dim3{bx, by, bz}, warp, sink);
          if (const auto* b = std::get_if<BuiltinKernel>(&spec.body)) {
            switch (*b) {
              case BuiltinKernel::gemm_v00: builtin::gemm(env, w, false); break;
              case BuiltinKernel::gemm_v01: builtin::gemm(env, w, true); break;
              case BuiltinKernel::spmv_csr: builtin::spmv_csr(env, w); break;
              case BuiltinKernel::gramschmidt_k2: builtin::gramschmidt_k2(env, w); break;
              case BuiltinKernel::gramschmidt_k3: builtin::gramschmidt_k3(env, w); break;
              case BuiltinKernel::ttm_smem: builtin::ttm_smem(env, w); break;
              case BuiltinKernel::warp_broadcast_smem: builtin::warp_broadcast_smem(env, w); break;
            }
          } else {
            run_declarative(std::get<DeclarativeKernel>(spec.body), env, w);
          }
        }
      }
    }
  }
  sink(KernelEndEvent{spec.name});
}

inline std::vector<TraceEvent> run_kernel(const KernelSpec& spec, const LaunchConfig& launch, const SimInputs& inputs,
                                          const AllocationPlan& plan) {
  std::vector<TraceEvent> events = plan.alloc_events();
  emit_launch(spec, launch, inputs, plan, [&](const TraceEvent& e) { events.push_back(e); });
  return events;
}

// ---------------------------------------------------------------------------
// Scenario files

struct Launch {
  KernelSpec spec;
  LaunchConfig config;
};

struct Scenario {
  std::vector<AllocRequest> allocs;
  SimInputs inputs;
  std::vector<Launch> launches;
};

namespace detail {

inline Dim3 parse_dim3(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw SpecError(std::string(what) + " must be a [x,y,z] array");
  for (const auto& v : j) {
    if (!v.is_number_integer() || v.get<std::int64_t>() < 1) throw SpecError(std::string(what) + " components must be >= 1");
  }
  return Dim3{j[0].get<std::uint32_t>(), j[1].get<std::uint32_t>(), j[2].get<std::uint32_t>()};
}

inline CmpOp parse_cmp(const std::string& s) {
  if (s == "<") return CmpOp::lt;
  if (s == "<=") return CmpOp::le;
  if (s == ">") return CmpOp::gt;
  if (s == ">=") return CmpOp::ge;
  if (s == "==") return CmpOp::eq;
  if (s == "!=") return CmpOp::ne;
  throw SpecError("unknown guard operator '" + s + "'");
}

inline LoopSpec parse_loop(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("count")) throw SpecError("loop needs a count");
  LoopSpec l;
  l.var = j.value("var", std::string("i"));
  l.count = parse_term(j.at("count"));
  return l;
}

inline AccessSpec parse_access(const nlohmann::json& j) {
  AccessSpec a;
  if (!j.contains("region") || !j.at("region").is_string()) throw SpecError("instruction needs a region label");
  a.region = j.at("region").get<std::string>();
  if (j.contains("pc")) a.pc = j.at("pc").get<std::uint64_t>();
  if (j.contains("space")) {
    auto s = parse_space(j.at("space").get<std::string>());
    if (!s) throw SpecError("unknown space in instruction");
    a.space = *s;
  }
  const auto kind = parse_access_kind(j.value("kind", std::string("load")));
  if (!kind) throw SpecError("unknown access kind in instruction");
  a.kind = *kind;
  if (j.contains("size")) a.size = j.at("size").get<std::uint32_t>();
  a.index = parse_affine(j.value("index", nlohmann::json::object()));
  if (j.contains("gather")) a.gather = j.at("gather").get<std::string>();
  if (j.contains("loop")) a.loop = parse_loop(j.at("loop"));
  if (j.contains("guard")) {
    for (const auto& g : j.at("guard")) {
      a.guard.push_back(GuardClause{parse_affine(g.at("lhs")), parse_cmp(g.at("op").get<std::string>()), parse_term(g.at("rhs"))});
    }
  }
  return a;
}

inline KernelSpec parse_kernel(const nlohmann::json& launch, const Params& defaults) {
  KernelSpec spec;
  spec.params = defaults;
  if (launch.contains("params")) {
    for (const auto& [k, v] : launch.at("params").items()) {
      if (!v.is_number_integer()) throw SpecError("parameter '" + k + "' must be an integer");
      spec.params[k] = v.get<std::int64_t>();
    }
  }
  const auto& kernel = launch.at("kernel");
  if (kernel.is_string()) {
    const auto name = kernel.get<std::string>();
    const auto which = parse_builtin(name);
    if (!which) throw SpecError("unknown builtin kernel '" + name + "'");
    spec.name = launch.value("name", name);
    spec.body = *which;
  } else if (kernel.is_object()) {
    spec.name = kernel.value("name", launch.value("name", std::string("declarative")));
    DeclarativeKernel d;
    for (const auto& ins : kernel.at("instructions")) {
      if (ins.contains("body")) {
        LoopBlock block{parse_loop(ins.at("loop")), {}};
        for (const auto& b : ins.at("body")) block.body.push_back(parse_access(b));
        d.program.emplace_back(std::move(block));
      } else {
        d.program.emplace_back(parse_access(ins));
      }
    }
    spec.body = std::move(d);
  } else {
    throw SpecError("'kernel' must be a builtin name or a declarative object");
  }
  return spec;
}

}  // namespace detail

inline Scenario parse_scenario(const nlohmann::json& j) {
  try {
    Scenario s;
    for (const auto& a : j.value("allocs", nlohmann::json::array())) {
      AllocRequest r;
      r.label = a.at("label").get<std::string>();
      const auto space = parse_space(a.value("space", std::string("global")));
      if (!space) throw SpecError("unknown space for allocation '" + r.label + "'");
      r.space = *space;
      r.elem_size = a.value("elem_size", 4u);
      r.count = a.at("count").get<std::uint64_t>();
      if (a.contains("base")) r.base = a.at("base").get<Address>();
      s.allocs.push_back(std::move(r));
    }
    const auto inputs = j.value("inputs", nlohmann::json::object());
    for (const auto& [name, arr] : inputs.items()) {
      s.inputs[name] = arr.get<std::vector<std::int64_t>>();
    }
    Params defaults;
    if (j.contains("launches")) {
      const auto shared = j.value("params", nlohmann::json::object());
      for (const auto& [k, v] : shared.items()) defaults[k] = v.get<std::int64_t>();
      for (const auto& l : j.at("launches")) {
        s.launches.push_back(Launch{detail::parse_kernel(l, defaults),
                                    LaunchConfig{detail::parse_dim3(l.at("grid"), "grid"), detail::parse_dim3(l.at("block"), "block")}});
      }
    } else {
      s.launches.push_back(Launch{detail::parse_kernel(j, defaults),
                                  LaunchConfig{detail::parse_dim3(j.at("grid"), "grid"), detail::parse_dim3(j.at("block"), "block")}});
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw SpecError(std::string("scenario: ") + e.what());
  }
}

// Allocations first, then every launch in order.
inline void simulate(const Scenario& s, const EventSink& sink) {
  const AllocationPlan plan(s.allocs);
  for (const auto& e : plan.alloc_events()) sink(e);
  for (const auto& l : s.launches) emit_launch(l.spec, l.config, s.inputs, plan, sink);
}

inline std::vector<TraceEvent> simulate(const Scenario& s) {
  std::vector<TraceEvent> events;
  simulate(s, [&](const TraceEvent& e) { events.push_back(e); });
  return events;
}

}  // namespace warpthermo
