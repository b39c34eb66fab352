#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedstill/binary_io.hpp"
#include "fedstill/optim.hpp"
#include "fedstill/registry.hpp"
#include "fedstill/tensor.hpp"
#include "fedstill/volume.hpp"

namespace fedstill::models {

// Probabilities are kept inside this band so that log terms stay finite.
inline constexpr double kProbFloor = 1e-7;
inline constexpr double kProbCeil = 1.0 - 1e-7;

inline constexpr std::uint32_t kModelFormatVersion = 1;

enum class Architecture : std::uint32_t {
  kPixelMLP = 0,      // per-voxel MLP over a 3x3 intensity patch plus coordinates
  kPatchConvNet = 1,  // stacked 3x3 convolutions, then a 1x1 projection
};

std::string_view architecture_name(Architecture arch);
Architecture parse_architecture(std::string_view name);  // ValidationError

struct SegModelSpec {
  Architecture arch = Architecture::kPatchConvNet;
  std::uint32_t hidden = 12;
  std::uint32_t layers = 2;
  std::uint32_t feature_dim = static_cast<std::uint32_t>(ClassRegistry::kEmbeddingDim);
  std::uint64_t init_seed = 0;

  friend bool operator==(const SegModelSpec&, const SegModelSpec&) = default;
};

// Input channels shared by both architectures: a 3x3 intensity patch for the
// MLP, or intensity alone for the conv net, plus normalized (z, y, x).
inline constexpr std::size_t kMlpInputs = 9 + 3;
inline constexpr std::size_t kConvInputs = 1 + 3;

// Closed-form parameter count. With h = hidden, L = layers, F = feature_dim:
//   PixelMLP      (12h + h) + (L-1)(h^2 + h) + (hF + F)
//   PatchConvNet  (36h + h) + (L-1)(9h^2 + h) + (hF + F)
std::size_t parameter_count(const SegModelSpec& spec);

struct ModelParams {
  SegModelSpec spec;
  tensor::ParamMap params;

  std::size_t count() const;
  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

// Scaled uniform fan-in initialization seeded by spec.init_seed.
ModelParams build_model(const SegModelSpec& spec);

// Per-class sigmoid probabilities, one row per requested class.
struct PredictionVolume {
  GridDims dims;
  std::vector<ClassId> classes;
  tensor::Tensor probs;  // [classes.size(), dims.voxels()]

  bool covers(ClassId id) const;
  std::span<const double> channel(ClassId id) const;
  friend bool operator==(const PredictionVolume&, const PredictionVolume&) = default;
};

using ParamNodes = std::map<std::string, tensor::NodeId>;

ParamNodes register_params(tensor::Tape& tape, const ModelParams& model, bool requires_grad);

// Records the forward pass; returns the clamped probability node [K, voxels].
tensor::NodeId forward_on_tape(tensor::Tape& tape, const ModelParams& model, const ParamNodes& nodes,
                               const Volume& volume, std::span<const ClassId> class_ids,
                               const ClassRegistry& registry);

PredictionVolume forward(const ModelParams& model, const Volume& volume,
                         std::span<const ClassId> class_ids, const ClassRegistry& registry);
PredictionVolume forward(const ModelParams& model, const Volume& volume, const ClassSet& class_ids,
                         const ClassRegistry& registry);

// "FSTL" model file: magic, version, spec block, parameter table, CRC32.
io::Bytes serialize(const ModelParams& model);
ModelParams deserialize(std::span<const std::uint8_t> bytes);  // CorruptModel, VersionMismatch

}  // namespace fedstill::models
