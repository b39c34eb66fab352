#include "fedstill/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include <nlohmann/json.hpp>

#include "fedstill/error.hpp"

namespace fedstill::metrics {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kFar = std::numeric_limits<double>::infinity();

void require_same_grid(const Mask& a, const Mask& b) {
  if (!(a.dims == b.dims) || a.bits.size() != b.bits.size() || a.bits.size() != a.dims.voxels()) {
    fail(ErrorCode::kShapeMismatch, "masks live on different grids");
  }
}

// Exact squared distance transform of one line (lower envelope of parabolas).
// Only finite sites take part, so every output is an exact integer or +inf.
void edt_line(std::vector<double>& f, std::size_t n, std::vector<double>& out, std::vector<std::size_t>& v,
              std::vector<double>& z) {
  std::size_t k = 0;
  bool any = false;
  for (std::size_t q = 0; q < n; ++q) {
    if (f[q] == kFar) continue;
    const double fq = f[q] + static_cast<double>(q * q);
    if (!any) {
      v[0] = q;
      z[0] = -kFar;
      z[1] = kFar;
      any = true;
      continue;
    }
    double s;
    while (true) {
      const double vk = static_cast<double>(v[k]);
      s = (fq - (f[v[k]] + vk * vk)) / (2.0 * (static_cast<double>(q) - vk));
      if (s > z[k]) break;
      --k;  // z[0] is -inf, so this stops at the first site
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kFar;
  }
  if (!any) {
    for (std::size_t q = 0; q < n; ++q) out[q] = kFar;
    return;
  }
  std::size_t j = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[j + 1] < static_cast<double>(q)) ++j;
    const double d = static_cast<double>(q) - static_cast<double>(v[j]);
    out[q] = d * d + f[v[j]];
  }
}

// First pass, where every value is 0 or +inf: squared distance to the
// nearest site by a forward and a backward sweep.
void scan_line(const std::vector<double>& f, std::size_t n, std::vector<double>& out) {
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::size_t last = kNone;
  for (std::size_t q = 0; q < n; ++q) {
    if (f[q] == 0.0) last = q;
    out[q] = last == kNone ? kFar : static_cast<double>((q - last) * (q - last));
  }
  last = kNone;
  for (std::size_t q = n; q-- > 0;) {
    if (f[q] == 0.0) last = q;
    if (last != kNone) out[q] = std::min(out[q], static_cast<double>((last - q) * (last - q)));
  }
}

// Reused between calls; ASSD is evaluated per class and sample, often on small
// grids where allocation would dominate.
struct EdtScratch {
  std::vector<double> f, out, z;
  std::vector<std::size_t> v;
};

// Squared Euclidean distance from every voxel to the nearest site, into grid.
void squared_edt(const GridDims& dims, const std::vector<std::size_t>& sites, std::vector<double>& grid,
                 EdtScratch& s) {
  grid.assign(dims.voxels(), kFar);
  for (auto site : sites) grid[site] = 0.0;
  const std::size_t extent[3] = {dims.depth, dims.height, dims.width};
  const std::size_t stride[3] = {dims.height * dims.width, dims.width, 1};
  const std::size_t longest = std::max({dims.depth, dims.height, dims.width});
  s.f.resize(longest);
  s.out.resize(longest);
  s.z.resize(longest + 1);
  s.v.resize(longest);
  bool first = true;
  for (int axis = 2; axis >= 0; --axis) {
    const std::size_t n = extent[axis], step = stride[axis], block = n * step;
    if (n == 1) continue;
    // Lines along `axis` start at o*block + i for i < step.
    for (std::size_t o = 0; o < grid.size(); o += block) {
      for (std::size_t i = 0; i < step; ++i) {
        const std::size_t base = o + i;
        for (std::size_t q = 0; q < n; ++q) s.f[q] = grid[base + q * step];
        if (first) {
          scan_line(s.f, n, s.out);
        } else {
          edt_line(s.f, n, s.out, s.v, s.z);
        }
        for (std::size_t q = 0; q < n; ++q) grid[base + q * step] = s.out[q];
      }
    }
    first = false;
  }
}

// Mask voxels with an out-of-mask face neighbour. Off-grid neighbours count
// as outside only along axes longer than one voxel.
void boundary_into(const Mask& mask, std::vector<std::size_t>& out) {
  out.clear();
  const auto& d = mask.dims;
  const auto& bits = mask.bits;
  const std::size_t ext[3] = {d.depth, d.height, d.width};
  const std::size_t stride[3] = {d.height * d.width, d.width, 1};
  std::size_t i = 0;
  for (std::size_t z = 0; z < d.depth; ++z) {
    for (std::size_t y = 0; y < d.height; ++y) {
      for (std::size_t x = 0; x < d.width; ++x, ++i) {
        if (!bits[i]) continue;
        const std::size_t pos[3] = {z, y, x};
        bool edge = false;
        for (int a = 0; a < 3 && !edge; ++a) {
          if (ext[a] == 1) continue;
          edge = pos[a] == 0 || pos[a] + 1 == ext[a] || !bits[i - stride[a]] || !bits[i + stride[a]];
        }
        if (edge) out.push_back(i);
      }
    }
  }
  // A mask with no out-of-mask neighbour anywhere (a single voxel on a 1x1x1
  // grid) still has a surface: itself.
  if (out.empty()) {
    for (std::size_t k = 0; k < bits.size(); ++k) {
      if (bits[k]) out.push_back(k);
    }
  }
}

double sum_distances(const std::vector<std::size_t>& from, const std::vector<double>& sq) {
  double s = 0.0;
  for (auto p : from) s += std::sqrt(sq[p]);
  return s;
}

std::string fmt(double v) { return format_number(v); }

nlohmann::ordered_json num(double v) {
  return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}

}  // namespace

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

Mask binarize(std::span<const double> probs, GridDims dims, double threshold) {
  if (probs.size() != dims.voxels()) fail(ErrorCode::kShapeMismatch, "probability map size differs from grid");
  Mask m = Mask::empty(dims);
  for (std::size_t i = 0; i < probs.size(); ++i) m.bits[i] = probs[i] > threshold ? 1 : 0;
  return m;
}

double dice_score(const Mask& pred, const Mask& gt) {
  require_same_grid(pred, gt);
  std::size_t p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < pred.bits.size(); ++i) {
    const bool a = pred.bits[i] != 0, b = gt.bits[i] != 0;
    p += a;
    g += b;
    both += a && b;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

std::vector<std::size_t> boundary_voxels(const Mask& mask) {
  std::vector<std::size_t> out;
  boundary_into(mask, out);
  return out;
}

double assd(const Mask& pred, const Mask& gt) {
  require_same_grid(pred, gt);
  thread_local std::vector<std::size_t> bp, bg;
  thread_local EdtScratch scratch;
  thread_local std::vector<double> to_g, to_p;
  // a non-empty mask always has a boundary
  boundary_into(pred, bp);
  if (bp.empty()) fail(ErrorCode::kEmptyMask, "pred");
  boundary_into(gt, bg);
  if (bg.empty()) fail(ErrorCode::kEmptyMask, "gt");
  squared_edt(gt.dims, bg, to_g, scratch);
  squared_edt(pred.dims, bp, to_p, scratch);
  const double total = sum_distances(bp, to_g) + sum_distances(bg, to_p);
  return total / static_cast<double>(bp.size() + bg.size());
}

double ClassMetrics::dice() const { return n ? dice_sum / static_cast<double>(n) : kNaN; }
double ClassMetrics::assd() const { return assd_n ? assd_sum / static_cast<double>(assd_n) : kNaN; }

void MetricReport::add(ClassId cls, const std::string& name, const Mask& pred, const Mask& gt) {
  const double d = dice_score(pred, gt);
  std::optional<double> a;
  if (pred.count() != 0 && gt.count() != 0) a = metrics::assd(pred, gt);
  add_values(cls, name, d, a);
}

void MetricReport::add_values(ClassId cls, const std::string& name, double dice, std::optional<double> assd) {
  auto& m = classes_[cls];
  m.name = name;
  m.dice_sum += dice;
  ++m.n;
  if (assd) {
    m.assd_sum += *assd;
    ++m.assd_n;
  } else {
    ++m.assd_empty;
  }
}

double MetricReport::dice(ClassId cls) const {
  const auto it = classes_.find(cls);
  return it == classes_.end() ? kNaN : it->second.dice();
}

double MetricReport::assd(ClassId cls) const {
  const auto it = classes_.find(cls);
  return it == classes_.end() ? kNaN : it->second.assd();
}

double MetricReport::macro_dice() const {
  double s = 0.0;
  std::size_t k = 0;
  for (const auto& [id, m] : classes_) {
    if (m.n == 0) continue;
    s += m.dice();
    ++k;
  }
  return k ? s / static_cast<double>(k) : kNaN;
}

double MetricReport::macro_dice(const ClassSet& subset) const {
  double s = 0.0;
  std::size_t k = 0;
  for (const auto& [id, m] : classes_) {
    if (m.n == 0 || !subset.count(id)) continue;
    s += m.dice();
    ++k;
  }
  return k ? s / static_cast<double>(k) : kNaN;
}

double MetricReport::macro_assd() const {
  double s = 0.0;
  std::size_t k = 0;
  for (const auto& [id, m] : classes_) {
    if (m.assd_n == 0) continue;
    s += m.assd();
    ++k;
  }
  return k ? s / static_cast<double>(k) : kNaN;
}

std::string MetricReport::csv() const {
  std::string out = "class,dice,assd,n\n";
  for (const auto& [id, m] : classes_) {
    out += m.name + "," + fmt(m.dice()) + "," + fmt(m.assd()) + "," + std::to_string(m.n) + "\n";
  }
  out += "macro," + fmt(macro_dice()) + "," + fmt(macro_assd()) + ",\n";
  return out;
}

std::string MetricReport::json() const {
  nlohmann::ordered_json j;
  auto& arr = j["classes"] = nlohmann::ordered_json::array();
  for (const auto& [id, m] : classes_) {
    arr.push_back({{"class", m.name},
                   {"id", id},
                   {"dice", num(m.dice())},
                   {"assd", num(m.assd())},
                   {"n", m.n},
                   {"assd_n", m.assd_n},
                   {"assd_empty", m.assd_empty}});
  }
  j["macro_dice"] = num(macro_dice());
  j["macro_assd"] = num(macro_assd());
  return j.dump(2) + "\n";
}

}  // namespace fedstill::metrics
