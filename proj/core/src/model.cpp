#include "fedstill/model.hpp"

#include <algorithm>
#include <cmath>

#include "fedstill/error.hpp"
#include "fedstill/random.hpp"

namespace fedstill::models {

using tensor::NodeId;
using tensor::Shape;
using tensor::Tape;
using tensor::Tensor;

std::string_view architecture_name(Architecture arch) {
  switch (arch) {
    case Architecture::kPixelMLP: return "pixel_mlp";
    case Architecture::kPatchConvNet: return "patch_conv";
  }
  return "?";
}

Architecture parse_architecture(std::string_view name) {
  if (name == "pixel_mlp") return Architecture::kPixelMLP;
  if (name == "patch_conv") return Architecture::kPatchConvNet;
  fail(ErrorCode::kValidationError, "unknown architecture '" + std::string(name) + "'");
}

namespace {

struct ParamShape {
  std::string name;
  Shape shape;
  std::size_t fan_in;
  bool feeds_relu;
};

std::string layer_name(std::string_view prefix, std::size_t i, std::string_view what) {
  return std::string(prefix) + "." + std::to_string(i) + "." + std::string(what);
}

std::vector<ParamShape> manifest(const SegModelSpec& spec) {
  if (spec.hidden == 0 || spec.layers == 0 || spec.feature_dim == 0) {
    fail(ErrorCode::kValidationError, "model spec needs hidden, layers and feature_dim > 0");
  }
  const std::size_t h = spec.hidden;
  const std::size_t f = spec.feature_dim;
  std::vector<ParamShape> out;
  if (spec.arch == Architecture::kPixelMLP) {
    for (std::size_t i = 0; i < spec.layers; ++i) {
      const std::size_t in = i == 0 ? kMlpInputs : h;
      out.push_back({layer_name("mlp", i, "weight"), {h, in}, in, true});
      out.push_back({layer_name("mlp", i, "bias"), {h}, in, true});
    }
    out.push_back({"head.weight", {f, h}, h, false});
    out.push_back({"head.bias", {f}, h, false});
  } else {
    for (std::size_t i = 0; i < spec.layers; ++i) {
      const std::size_t in = i == 0 ? kConvInputs : h;
      out.push_back({layer_name("conv", i, "weight"), {h, in, 3, 3}, in * 9, true});
      out.push_back({layer_name("conv", i, "bias"), {h}, in * 9, true});
    }
    out.push_back({"head.weight", {f, h, 1, 1}, h, false});
    out.push_back({"head.bias", {f}, h, false});
  }
  return out;
}

double coord(std::size_t i, std::size_t n) {
  return n > 1 ? 2.0 * static_cast<double>(i) / static_cast<double>(n - 1) - 1.0 : 0.0;
}

// [12, voxels]: 3x3 in-slice patch (zero padded) then z, y, x.
Tensor mlp_inputs(const Volume& v) {
  const auto& d = v.dims;
  const std::size_t n = d.voxels();
  Tensor out = Tensor::zeros({kMlpInputs, n});
  auto o = out.values();
  for (std::size_t z = 0; z < d.depth; ++z)
    for (std::size_t y = 0; y < d.height; ++y)
      for (std::size_t x = 0; x < d.width; ++x) {
        const std::size_t idx = d.index(z, y, x);
        std::size_t ch = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx, ++ch) {
            const auto yy = static_cast<std::ptrdiff_t>(y) + dy;
            const auto xx = static_cast<std::ptrdiff_t>(x) + dx;
            if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(d.height) ||
                xx >= static_cast<std::ptrdiff_t>(d.width))
              continue;
            o[ch * n + idx] = v.intensity[d.index(z, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx))];
          }
        o[9 * n + idx] = coord(z, d.depth);
        o[10 * n + idx] = coord(y, d.height);
        o[11 * n + idx] = coord(x, d.width);
      }
  return out;
}

// [depth, 4, H, W]: intensity, z, y, x.
Tensor conv_inputs(const Volume& v) {
  const auto& d = v.dims;
  const std::size_t plane = d.height * d.width;
  Tensor out = Tensor::zeros({d.depth, kConvInputs, d.height, d.width});
  auto o = out.values();
  for (std::size_t z = 0; z < d.depth; ++z) {
    double* base = o.data() + z * kConvInputs * plane;
    for (std::size_t y = 0; y < d.height; ++y)
      for (std::size_t x = 0; x < d.width; ++x) {
        const std::size_t p = y * d.width + x;
        base[p] = v.intensity[d.index(z, y, x)];
        base[plane + p] = coord(z, d.depth);
        base[2 * plane + p] = coord(y, d.height);
        base[3 * plane + p] = coord(x, d.width);
      }
  }
  return out;
}

// Backbone features as [F, voxels].
NodeId mlp_features(Tape& tape, const SegModelSpec& spec, const ParamNodes& p, const Volume& v) {
  NodeId h = tape.constant(mlp_inputs(v));
  for (std::size_t i = 0; i < spec.layers; ++i) {
    h = tape.matmul(p.at(layer_name("mlp", i, "weight")), h);
    h = tape.relu(tape.add(h, p.at(layer_name("mlp", i, "bias"))));
  }
  return tape.add(tape.matmul(p.at("head.weight"), h), p.at("head.bias"));
}

NodeId conv_features(Tape& tape, const SegModelSpec& spec, const ParamNodes& p, const Volume& v) {
  const auto& d = v.dims;
  NodeId h = tape.constant(conv_inputs(v));
  for (std::size_t i = 0; i < spec.layers; ++i) {
    h = tape.relu(tape.conv2d(h, p.at(layer_name("conv", i, "weight")), p.at(layer_name("conv", i, "bias"))));
  }
  h = tape.conv2d(h, p.at("head.weight"), p.at("head.bias"));  // [D, F, H, W]
  const std::size_t f = spec.feature_dim;
  const std::size_t plane = d.height * d.width;
  if (d.depth == 1) return tape.reshape(h, {f, plane});
  std::vector<NodeId> slices;
  for (std::size_t z = 0; z < d.depth; ++z) {
    slices.push_back(tape.reshape(tape.embed_lookup(h, {z}), {f, plane}));
  }
  return tape.concat(slices, 1);
}

}  // namespace

std::size_t parameter_count(const SegModelSpec& spec) {
  const std::size_t h = spec.hidden, l = spec.layers, f = spec.feature_dim;
  if (spec.arch == Architecture::kPixelMLP) {
    return (kMlpInputs * h + h) + (l - 1) * (h * h + h) + (h * f + f);
  }
  return (9 * kConvInputs * h + h) + (l - 1) * (9 * h * h + h) + (h * f + f);
}

std::size_t ModelParams::count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params) n += t.size();
  return n;
}

ModelParams build_model(const SegModelSpec& spec) {
  ModelParams model{spec, {}};
  Rng rng(derive_seed(spec.init_seed, "model-init"));
  for (const auto& ps : manifest(spec)) {
    const double fan = static_cast<double>(ps.fan_in);
    const bool is_bias = ps.shape.size() == 1;
    const double bound = (ps.feeds_relu && !is_bias) ? std::sqrt(6.0 / fan) : 1.0 / std::sqrt(fan);
    Tensor t = Tensor::zeros(ps.shape);
    for (double& v : t.values()) v = rng.uniform(-bound, bound);
    model.params.emplace(ps.name, std::move(t));
  }
  return model;
}

bool PredictionVolume::covers(ClassId id) const {
  return std::find(classes.begin(), classes.end(), id) != classes.end();
}

std::span<const double> PredictionVolume::channel(ClassId id) const {
  const auto it = std::find(classes.begin(), classes.end(), id);
  if (it == classes.end()) fail(ErrorCode::kUnknownClass, "prediction has no channel for class " + std::to_string(id));
  const auto row = static_cast<std::size_t>(it - classes.begin());
  return probs.values().subspan(row * dims.voxels(), dims.voxels());
}

ParamNodes register_params(Tape& tape, const ModelParams& model, bool requires_grad) {
  ParamNodes nodes;
  for (const auto& [name, t] : model.params) {
    Tensor copy = t;
    copy.set_requires_grad(requires_grad);
    nodes.emplace(name, tape.leaf(std::move(copy)));
  }
  return nodes;
}

NodeId forward_on_tape(Tape& tape, const ModelParams& model, const ParamNodes& nodes, const Volume& volume,
                       std::span<const ClassId> class_ids, const ClassRegistry& registry) {
  std::vector<std::size_t> rows;
  for (auto c : class_ids) {
    if (!registry.contains(c)) fail(ErrorCode::kUnknownClass, "class id " + std::to_string(c));
    rows.push_back(c);
  }
  if (model.spec.feature_dim != ClassRegistry::kEmbeddingDim) {
    fail(ErrorCode::kShapeMismatch, "feature_dim " + std::to_string(model.spec.feature_dim) +
                                        " differs from the class embedding dimension");
  }
  const NodeId features = model.spec.arch == Architecture::kPixelMLP
                              ? mlp_features(tape, model.spec, nodes, volume)
                              : conv_features(tape, model.spec, nodes, volume);
  const NodeId table = tape.constant(registry.embeddings());
  const NodeId heads = tape.embed_lookup(table, std::move(rows));  // [K, F]
  const NodeId logits = tape.matmul(heads, features);             // [K, voxels]
  return tape.clamp(tape.sigmoid(logits), kProbFloor, kProbCeil);
}

PredictionVolume forward(const ModelParams& model, const Volume& volume, std::span<const ClassId> class_ids,
                         const ClassRegistry& registry) {
  Tape tape;
  const auto nodes = register_params(tape, model, false);
  const auto out = forward_on_tape(tape, model, nodes, volume, class_ids, registry);
  return PredictionVolume{volume.dims, std::vector<ClassId>(class_ids.begin(), class_ids.end()), tape.value(out)};
}

PredictionVolume forward(const ModelParams& model, const Volume& volume, const ClassSet& class_ids,
                         const ClassRegistry& registry) {
  const std::vector<ClassId> ids(class_ids.begin(), class_ids.end());
  return forward(model, volume, std::span<const ClassId>(ids), registry);
}

namespace {
constexpr std::string_view kMagic = "FSTL";
}

io::Bytes serialize(const ModelParams& model) {
  io::ByteWriter w;
  w.raw(kMagic);
  w.u32(kModelFormatVersion);
  w.u32(static_cast<std::uint32_t>(model.spec.arch));
  w.u32(model.spec.hidden);
  w.u32(model.spec.layers);
  w.u32(model.spec.feature_dim);
  w.u64(model.spec.init_seed);
  w.u32(static_cast<std::uint32_t>(model.params.size()));
  for (const auto& [name, t] : model.params) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u64(d);
    for (double v : t.values()) w.f64(v);
  }
  return std::move(w).finish_with_crc();
}

ModelParams deserialize(std::span<const std::uint8_t> bytes) {
  constexpr auto kCorrupt = ErrorCode::kCorruptModel;
  {
    io::ByteReader head(bytes, kCorrupt);
    if (head.raw(kMagic.size()) != kMagic) fail(kCorrupt, "bad magic");
    const auto version = head.u32();
    if (version != kModelFormatVersion) {
      fail(ErrorCode::kVersionMismatch, "model format version " + std::to_string(version) + ", expected " +
                                            std::to_string(kModelFormatVersion));
    }
  }
  io::ByteReader r(io::verify_crc(bytes, kCorrupt), kCorrupt);
  r.raw(kMagic.size());
  r.u32();
  ModelParams model;
  const auto arch = r.u32();
  if (arch > 1) fail(kCorrupt, "unknown architecture tag " + std::to_string(arch));
  model.spec.arch = static_cast<Architecture>(arch);
  model.spec.hidden = r.u32();
  model.spec.layers = r.u32();
  model.spec.feature_dim = r.u32();
  model.spec.init_seed = r.u64();
  if (model.spec.hidden == 0 || model.spec.layers == 0 || model.spec.feature_dim == 0 ||
      model.spec.hidden > 4096 || model.spec.layers > 64 || model.spec.feature_dim > 4096) {
    fail(kCorrupt, "implausible model spec");
  }
  const auto expected = manifest(model.spec);
  const auto count = r.u32();
  if (count != expected.size()) fail(kCorrupt, "parameter count does not match the model header");
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = r.str();
    const auto rank = r.u32();
    if (rank > 8) fail(kCorrupt, "implausible rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.u64());
    const auto want = std::find_if(expected.begin(), expected.end(), [&](const auto& p) { return p.name == name; });
    if (want == expected.end() || want->shape != shape) fail(kCorrupt, "unexpected parameter '" + name + "'");
    std::vector<double> values(tensor::shape_size(shape));
    for (double& v : values) v = r.f64();
    model.params.emplace(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (model.params.size() != expected.size()) fail(kCorrupt, "duplicate parameter names");
  if (r.remaining() != 0) fail(kCorrupt, "trailing bytes");
  return model;
}

}  // namespace fedstill::models
