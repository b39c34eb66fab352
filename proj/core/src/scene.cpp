#include "fedstill/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <nlohmann/json.hpp>

#include "fedstill/binary_io.hpp"
#include "fedstill/error.hpp"
#include "fedstill/random.hpp"

namespace fedstill::scene {

namespace {

constexpr int kPlacementRetries = 100;
constexpr std::string_view kSampleMagic = "FSTS";
constexpr std::uint32_t kSampleVersion = 1;

}  // namespace

std::string_view shape_name(ShapeFamily shape) {
  switch (shape) {
    case ShapeFamily::kEllipsoid: return "ellipsoid";
    case ShapeFamily::kBox: return "box";
    case ShapeFamily::kTube: return "tube";
  }
  return "?";
}

std::string_view kind_name(ClassKind kind) {
  switch (kind) {
    case ClassKind::kOrgan: return "organ";
    case ClassKind::kLesion: return "lesion";
    case ClassKind::kDistractor: return "distractor";
  }
  return "?";
}

std::vector<std::string> SceneSpec::class_names() const {
  std::vector<std::string> out;
  for (const auto& s : structures) out.push_back(s.name);
  return out;
}

ClassSet SceneSpec::all_classes() const {
  ClassSet out;
  for (ClassId i = 0; i < structures.size(); ++i) out.insert(i);
  return out;
}

ClassSet SceneSpec::classes_of_kind(ClassKind kind) const {
  ClassSet out;
  for (ClassId i = 0; i < structures.size(); ++i)
    if (structures[i].kind == kind) out.insert(i);
  return out;
}

ClassId SceneSpec::id_of(std::string_view name) const {
  for (ClassId i = 0; i < structures.size(); ++i)
    if (structures[i].name == name) return i;
  fail(ErrorCode::kUnknownClass, "class '" + std::string(name) + "' is not in the scene spec");
}

SceneSpec SceneSpec::with_shift(const DomainShift& s) const {
  SceneSpec out = *this;
  out.shift = s;
  return out;
}

SceneSpec default_scene_spec() {
  SceneSpec spec;
  spec.dims = {1, 32, 32};
  spec.background = 0.1;
  spec.noise_sigma = 0.03;
  using K = ClassKind;
  using S = ShapeFamily;
  auto organ = [](std::string name, K kind, S shape, std::array<double, 2> smin, std::array<double, 2> smax,
                  std::array<double, 2> clo, std::array<double, 2> chi, double intensity) {
    StructureSpec s;
    s.name = std::move(name);
    s.kind = kind;
    s.shape = shape;
    s.size_min = smin;
    s.size_max = smax;
    s.center_lo = clo;
    s.center_hi = chi;
    s.intensity = intensity;
    return s;
  };
  auto lesion = [](std::string name, std::string parent, std::uint32_t bmin, std::uint32_t bmax, double rmin,
                   double rmax, double occurrence, double intensity) {
    StructureSpec s;
    s.name = std::move(name);
    s.kind = K::kLesion;
    s.parent = std::move(parent);
    s.blob_min = bmin;
    s.blob_max = bmax;
    s.size_min = {rmin, rmin};
    s.size_max = {rmax, rmax};
    s.occurrence = occurrence;
    s.intensity = intensity;
    return s;
  };
  spec.structures = {
      organ("liver", K::kOrgan, S::kEllipsoid, {5.0, 4.0}, {6.0, 5.0}, {0.28, 0.24}, {0.34, 0.30}, 0.6),
      organ("kidney", K::kOrgan, S::kEllipsoid, {3.5, 2.5}, {4.5, 3.5}, {0.70, 0.72}, {0.78, 0.80}, 0.8),
      organ("spleen", K::kOrgan, S::kEllipsoid, {3.5, 3.0}, {4.5, 3.5}, {0.22, 0.76}, {0.30, 0.82}, 0.7),
      organ("pancreas", K::kOrgan, S::kTube, {3.5, 1.4}, {4.5, 1.8}, {0.56, 0.40}, {0.62, 0.48}, 0.5),
      lesion("liver_tumor", "liver", 1, 2, 1.5, 2.5, 0.9, 0.3),
      lesion("kidney_tumor", "kidney", 1, 1, 1.2, 1.8, 0.9, 0.3),
      organ("stomach", K::kDistractor, S::kBox, {2.0, 2.0}, {2.5, 3.0}, {0.86, 0.12}, {0.90, 0.18}, 0.2),
      organ("vein", K::kDistractor, S::kTube, {3.0, 1.0}, {4.0, 1.2}, {0.22, 0.52}, {0.34, 0.56}, 0.4),
  };
  return spec;
}

void validate(const SceneSpec& spec) {
  const auto bad = [](const std::string& msg) { fail(ErrorCode::kValidationError, msg); };
  if (spec.dims.voxels() == 0) bad("scene dims must be positive");
  if (spec.structures.empty()) bad("scene has no structures");
  if (spec.noise_sigma < 0) bad("noise sigma must be non-negative");
  for (std::size_t i = 0; i < spec.structures.size(); ++i) {
    const auto& s = spec.structures[i];
    const std::string where = "structure '" + s.name + "': ";
    if (s.name.empty()) bad("structure " + std::to_string(i) + " has no name");
    for (std::size_t j = 0; j < i; ++j)
      if (spec.structures[j].name == s.name) bad("duplicate structure name '" + s.name + "'");
    if (s.intensity < 0 || s.intensity > 1) bad(where + "intensity outside [0,1]");
    for (int a = 0; a < 2; ++a) {
      if (s.size_min[a] <= 0 || s.size_max[a] < s.size_min[a]) bad(where + "size range must be positive");
    }
    if (s.kind == ClassKind::kLesion) {
      if (s.occurrence < 0 || s.occurrence > 1) bad(where + "occurrence probability outside [0,1]");
      if (s.blob_min == 0 || s.blob_max < s.blob_min) bad(where + "blob count range invalid");
      const auto parent = std::find_if(spec.structures.begin(), spec.structures.end(),
                                       [&](const auto& p) { return p.name == s.parent; });
      if (parent == spec.structures.end() || parent->kind == ClassKind::kLesion) {
        bad(where + "parent '" + s.parent + "' must be a non-lesion structure");
      }
    } else {
      for (int a = 0; a < 2; ++a) {
        if (s.center_lo[a] < 0 || s.center_hi[a] > 1 || s.center_hi[a] < s.center_lo[a]) {
          bad(where + "centre range must lie in [0,1]");
        }
      }
      const double extent = s.shape == ShapeFamily::kTube ? s.size_min[0] + s.size_min[1]
                                                          : std::max(s.size_min[0], s.size_min[1]);
      if (2 * extent >= static_cast<double>(std::min(spec.dims.height, spec.dims.width))) {
        bad(where + "size range exceeds the volume bounds");
      }
    }
  }
}

LabelVolume LabelVolume::restricted_to(const ClassSet& classes) const {
  LabelVolume out;
  for (auto c : classes) {
    const auto it = masks.find(c);
    if (it == masks.end()) continue;
    out.annotated.insert(c);
    out.masks.emplace(c, it->second);
  }
  return out;
}

namespace {

struct Placement {
  double cy, cx, a, b, angle;
};

double z_term(const GridDims& d, std::size_t z) {
  if (d.depth == 1) return 0.0;
  const double cz = 0.5 * static_cast<double>(d.depth - 1);
  const double rz = std::max(0.5, 0.4 * static_cast<double>(d.depth));
  const double t = (static_cast<double>(z) - cz) / rz;
  return t * t;
}

bool inside(const StructureSpec& s, const Placement& p, double y, double x, double zt) {
  switch (s.shape) {
    case ShapeFamily::kEllipsoid: {
      const double u = (y - p.cy) / p.a, v = (x - p.cx) / p.b;
      return u * u + v * v + zt <= 1.0;
    }
    case ShapeFamily::kBox:
      return zt <= 1.0 && std::abs(y - p.cy) <= p.a && std::abs(x - p.cx) <= p.b;
    case ShapeFamily::kTube: {
      const double dy = std::cos(p.angle), dx = std::sin(p.angle);
      const double t = std::clamp((y - p.cy) * dy + (x - p.cx) * dx, -p.a, p.a);
      const double ey = y - (p.cy + t * dy), ex = x - (p.cx + t * dx);
      return zt <= 1.0 && ey * ey + ex * ex <= p.b * p.b;
    }
  }
  return false;
}

// Half extents along (y, x).
std::array<double, 2> extent(const StructureSpec& s, const Placement& p) {
  if (s.shape != ShapeFamily::kTube) return {p.a, p.b};
  return {std::abs(std::cos(p.angle)) * p.a + p.b, std::abs(std::sin(p.angle)) * p.a + p.b};
}

Mask rasterize(const StructureSpec& s, const Placement& p, const GridDims& d) {
  Mask m = Mask::empty(d);
  for (std::size_t z = 0; z < d.depth; ++z) {
    const double zt = z_term(d, z);
    for (std::size_t y = 0; y < d.height; ++y)
      for (std::size_t x = 0; x < d.width; ++x)
        if (inside(s, p, static_cast<double>(y), static_cast<double>(x), zt)) m.bits[d.index(z, y, x)] = 1;
  }
  return m;
}

Mask place_structure(Rng& rng, const StructureSpec& s, const GridDims& d, const Mask& occupied) {
  const double hmax = static_cast<double>(d.height - 1), wmax = static_cast<double>(d.width - 1);
  for (int attempt = 0; attempt < kPlacementRetries; ++attempt) {
    Placement p{};
    p.a = rng.uniform(s.size_min[0], s.size_max[0]);
    p.b = rng.uniform(s.size_min[1], s.size_max[1]);
    p.cy = rng.uniform(s.center_lo[0], s.center_hi[0]) * hmax;
    p.cx = rng.uniform(s.center_lo[1], s.center_hi[1]) * wmax;
    p.angle = rng.uniform(0.0, std::numbers::pi);
    const auto e = extent(s, p);
    if (p.cy - e[0] < 0 || p.cy + e[0] > hmax || p.cx - e[1] < 0 || p.cx + e[1] > wmax) continue;
    Mask m = rasterize(s, p, d);
    if (m.count() == 0) continue;
    bool overlap = false;
    for (std::size_t i = 0; i < m.bits.size() && !overlap; ++i) overlap = m.bits[i] && occupied.bits[i];
    if (!overlap) return m;
  }
  fail(ErrorCode::kPlacementFailure,
       "could not place '" + s.name + "' after " + std::to_string(kPlacementRetries) + " attempts");
}

// Parent voxels whose face neighbours (along non-degenerate axes) are all in the parent.
std::vector<std::size_t> interior_voxels(const Mask& parent) {
  const auto& d = parent.dims;
  std::vector<std::size_t> out;
  const auto in = [&](std::ptrdiff_t z, std::ptrdiff_t y, std::ptrdiff_t x) {
    if (z < 0 || y < 0 || x < 0 || z >= static_cast<std::ptrdiff_t>(d.depth) ||
        y >= static_cast<std::ptrdiff_t>(d.height) || x >= static_cast<std::ptrdiff_t>(d.width))
      return false;
    return parent.bits[d.index(static_cast<std::size_t>(z), static_cast<std::size_t>(y), static_cast<std::size_t>(x))] != 0;
  };
  for (std::size_t z = 0; z < d.depth; ++z)
    for (std::size_t y = 0; y < d.height; ++y)
      for (std::size_t x = 0; x < d.width; ++x) {
        const auto zz = static_cast<std::ptrdiff_t>(z), yy = static_cast<std::ptrdiff_t>(y),
                   xx = static_cast<std::ptrdiff_t>(x);
        if (!in(zz, yy, xx)) continue;
        if (!in(zz, yy - 1, xx) || !in(zz, yy + 1, xx) || !in(zz, yy, xx - 1) || !in(zz, yy, xx + 1)) continue;
        if (d.depth > 1 && (!in(zz - 1, yy, xx) || !in(zz + 1, yy, xx))) continue;
        out.push_back(d.index(z, y, x));
      }
  return out;
}

Mask place_lesion(Rng& rng, const StructureSpec& s, const Mask& parent) {
  const auto& d = parent.dims;
  Mask m = Mask::empty(d);
  if (!rng.bernoulli(s.occurrence)) return m;
  const auto interior = interior_voxels(parent);
  if (interior.empty()) fail(ErrorCode::kPlacementFailure, "parent of '" + s.name + "' has no interior");
  Mask interior_mask = Mask::empty(d);
  for (auto i : interior) interior_mask.bits[i] = 1;

  const auto blobs = rng.uniform_int(s.blob_min, s.blob_max);
  for (std::int64_t b = 0; b < blobs; ++b) {
    const auto centre = interior[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(interior.size()) - 1))];
    const double r = rng.uniform(s.size_min[0], s.size_max[0]);
    const std::size_t cz = centre / (d.height * d.width);
    const std::size_t cy = (centre / d.width) % d.height;
    const std::size_t cx = centre % d.width;
    for (std::size_t z = 0; z < d.depth; ++z)
      for (std::size_t y = 0; y < d.height; ++y)
        for (std::size_t x = 0; x < d.width; ++x) {
          const double dz = static_cast<double>(z) - static_cast<double>(cz);
          const double dy = static_cast<double>(y) - static_cast<double>(cy);
          const double dx = static_cast<double>(x) - static_cast<double>(cx);
          const auto idx = d.index(z, y, x);
          if (dz * dz + dy * dy + dx * dx <= r * r && interior_mask.bits[idx]) m.bits[idx] = 1;
        }
  }
  return m;
}

Sample render(std::uint64_t seed, const SceneSpec& spec, const ClassSet& include) {
  const auto& d = spec.dims;
  Rng rng(seed);
  std::map<ClassId, Mask> masks;
  Mask occupied = Mask::empty(d);
  for (ClassId c = 0; c < spec.structures.size(); ++c) {
    const auto& s = spec.structures[c];
    if (s.kind == ClassKind::kLesion || !include.contains(c)) continue;
    Mask m = place_structure(rng, s, d, occupied);
    for (std::size_t i = 0; i < m.bits.size(); ++i) occupied.bits[i] |= m.bits[i];
    masks.emplace(c, std::move(m));
  }
  for (ClassId c = 0; c < spec.structures.size(); ++c) {
    const auto& s = spec.structures[c];
    if (s.kind != ClassKind::kLesion || !include.contains(c)) continue;
    const auto parent = spec.id_of(s.parent);
    const auto pit = masks.find(parent);
    if (pit == masks.end()) {
      fail(ErrorCode::kValidationError, "lesion '" + s.name + "' requires its parent '" + s.parent + "'");
    }
    masks.emplace(c, place_lesion(rng, s, pit->second));
  }

  std::vector<double> base(d.voxels(), spec.background);
  for (int pass = 0; pass < 2; ++pass) {
    for (const auto& [c, m] : masks) {
      const bool lesion = spec.structures[c].kind == ClassKind::kLesion;
      if (lesion != (pass == 1)) continue;
      for (std::size_t i = 0; i < base.size(); ++i)
        if (m.bits[i]) base[i] = spec.structures[c].intensity;
    }
  }
  const double sigma = spec.shift.noise_sigma.value_or(spec.noise_sigma);
  Sample sample;
  sample.volume.dims = d;
  sample.volume.intensity.resize(d.voxels());
  for (std::size_t i = 0; i < base.size(); ++i) {
    double v = spec.shift.gain * base[i] + spec.shift.bias;
    if (sigma > 0) v += sigma * rng.normal();
    sample.volume.intensity[i] = std::clamp(v, 0.0, 1.0);
  }
  for (auto& [c, m] : masks) sample.labels.annotated.insert(c);
  sample.labels.masks = std::move(masks);
  return sample;
}

void check_subset(const SceneSpec& spec, const ClassSet& classes) {
  for (auto c : classes) {
    if (c >= spec.structures.size()) fail(ErrorCode::kUnknownClass, "class id " + std::to_string(c));
  }
}

}  // namespace

Sample generate_scene(std::uint64_t seed, const SceneSpec& spec) {
  validate(spec);
  return render(seed, spec, spec.all_classes());
}

ClientDataset make_client_dataset(const SceneSpec& spec, const ClassSet& class_subset, std::size_t n,
                                  std::uint64_t seed, std::string client_id) {
  validate(spec);
  check_subset(spec, class_subset);
  ClientDataset ds;
  ds.client_id = std::move(client_id);
  ds.annotated = class_subset;
  ds.samples.reserve(n);
  const auto all = spec.all_classes();
  for (std::size_t i = 0; i < n; ++i) {
    Sample s = render(derive_seed(seed, "scene", i), spec, all);
    s.labels = s.labels.restricted_to(class_subset);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

DistillationSet make_distillation_set(const SceneSpec& spec, std::size_t n, const ClassSet& include_classes,
                                      std::uint64_t seed) {
  validate(spec);
  check_subset(spec, include_classes);
  DistillationSet set;
  set.coverage = include_classes;
  for (std::size_t i = 0; i < n; ++i) {
    set.volumes.push_back(render(derive_seed(seed, "distill-scene", i), spec, include_classes).volume);
  }
  return set;
}

namespace {

io::Bytes encode_sample(const Volume& v, const LabelVolume* labels, const SceneSpec& spec) {
  io::ByteWriter w;
  w.raw(kSampleMagic);
  w.u32(kSampleVersion);
  w.u32(static_cast<std::uint32_t>(v.dims.depth));
  w.u32(static_cast<std::uint32_t>(v.dims.height));
  w.u32(static_cast<std::uint32_t>(v.dims.width));
  for (double x : v.intensity) w.f64(x);
  w.u32(labels ? static_cast<std::uint32_t>(labels->masks.size()) : 0);
  if (labels) {
    for (const auto& [c, m] : labels->masks) {
      w.u32(c);
      w.str(spec.structures.at(c).name);
      for (auto b : m.bits) w.u8(b);
    }
  }
  return std::move(w).finish_with_crc();
}

Sample decode_sample(std::span<const std::uint8_t> bytes, const SceneSpec& spec) {
  constexpr auto kErr = ErrorCode::kCorruptModel;
  io::ByteReader r(io::verify_crc(bytes, kErr), kErr);
  if (r.raw(kSampleMagic.size()) != kSampleMagic) fail(kErr, "bad sample magic");
  const auto version = r.u32();
  if (version != kSampleVersion) fail(ErrorCode::kVersionMismatch, "sample version " + std::to_string(version));
  Sample s;
  s.volume.dims.depth = r.u32();
  s.volume.dims.height = r.u32();
  s.volume.dims.width = r.u32();
  const auto n = s.volume.dims.voxels();
  if (n > (1u << 26)) fail(kErr, "implausible sample size");
  s.volume.intensity.resize(n);
  for (double& x : s.volume.intensity) x = r.f64();
  const auto masks = r.u32();
  for (std::uint32_t i = 0; i < masks; ++i) {
    const ClassId c = r.u32();
    const auto name = r.str();
    if (c >= spec.structures.size() || spec.structures[c].name != name) {
      fail(ErrorCode::kValidationError, "sample class '" + name + "' does not match the scene spec");
    }
    Mask m = Mask::empty(s.volume.dims);
    for (auto& b : m.bits) b = r.u8();
    s.labels.annotated.insert(c);
    s.labels.masks.emplace(c, std::move(m));
  }
  if (r.remaining() != 0) fail(kErr, "trailing bytes in sample");
  return s;
}

std::string sample_file(std::size_t i) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "sample_%04zu.fsts", i);
  return buf;
}

std::vector<std::string> names_of(const SceneSpec& spec, const ClassSet& ids) {
  std::vector<std::string> out;
  for (auto c : ids) out.push_back(spec.structures.at(c).name);
  return out;
}

ClassSet ids_of(const SceneSpec& spec, const std::vector<std::string>& names) {
  ClassSet out;
  for (const auto& n : names) out.insert(spec.id_of(n));
  return out;
}

}  // namespace

void save_dataset(const ClientDataset& dataset, const SceneSpec& spec, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["client_id"] = dataset.client_id;
  j["annotated"] = names_of(spec, dataset.annotated);
  j["samples"] = dataset.samples.size();
  j["data_available"] = dataset.data_available;
  j["sample_format"] = {{"magic", kSampleMagic}, {"version", kSampleVersion}};
  io::write_text(dir / "dataset.json", j.dump(2) + "\n");
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto& s = dataset.samples[i];
    io::write_file(dir / sample_file(i), encode_sample(s.volume, &s.labels, spec));
  }
}

ClientDataset load_dataset(const SceneSpec& spec, const std::filesystem::path& dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(dir / "dataset.json"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParseError, (dir / "dataset.json").string() + ": " + e.what());
  }
  ClientDataset ds;
  ds.client_id = j.at("client_id").get<std::string>();
  ds.annotated = ids_of(spec, j.at("annotated").get<std::vector<std::string>>());
  ds.data_available = j.value("data_available", true);
  const auto n = j.at("samples").get<std::size_t>();
  for (std::size_t i = 0; i < n; ++i) {
    ds.samples.push_back(decode_sample(io::read_file(dir / sample_file(i)), spec));
  }
  return ds;
}

void save_distillation_set(const DistillationSet& set, const SceneSpec& spec, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json cov;
  cov["coverage"] = names_of(spec, set.coverage);
  io::write_text(dir / "coverage.json", cov.dump(2) + "\n");
  nlohmann::json j;
  j["samples"] = set.volumes.size();
  j["sample_format"] = {{"magic", kSampleMagic}, {"version", kSampleVersion}};
  io::write_text(dir / "distillation.json", j.dump(2) + "\n");
  for (std::size_t i = 0; i < set.volumes.size(); ++i) {
    io::write_file(dir / sample_file(i), encode_sample(set.volumes[i], nullptr, spec));
  }
}

DistillationSet load_distillation_set(const SceneSpec& spec, const std::filesystem::path& dir) {
  nlohmann::json j, cov;
  try {
    j = nlohmann::json::parse(io::read_text(dir / "distillation.json"));
    cov = nlohmann::json::parse(io::read_text(dir / "coverage.json"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParseError, dir.string() + ": " + e.what());
  }
  DistillationSet set;
  set.coverage = ids_of(spec, cov.at("coverage").get<std::vector<std::string>>());
  const auto n = j.at("samples").get<std::size_t>();
  for (std::size_t i = 0; i < n; ++i) {
    set.volumes.push_back(decode_sample(io::read_file(dir / sample_file(i)), spec).volume);
  }
  return set;
}

}  // namespace fedstill::scene
