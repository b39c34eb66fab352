#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedstill/registry.hpp"
#include "fedstill/volume.hpp"

namespace fedstill::scene {

enum class ShapeFamily { kEllipsoid, kBox, kTube };
enum class ClassKind { kOrgan, kLesion, kDistractor };

std::string_view shape_name(ShapeFamily shape);
std::string_view kind_name(ClassKind kind);

// One renderable structure. Organs and distractors are placed without mutual
// overlap; lesions are blobs strictly inside their parent.
//
// size_min/size_max are (y, x) semi-axes for ellipsoids and boxes, and
// (half length, radius) for tubes. center_lo/center_hi bound the centre as
// fractions of (height, width). Lesions use size as the blob radius range.
struct StructureSpec {
  std::string name;
  ClassKind kind = ClassKind::kOrgan;
  ShapeFamily shape = ShapeFamily::kEllipsoid;
  std::array<double, 2> size_min{3.0, 3.0};
  std::array<double, 2> size_max{4.0, 4.0};
  std::array<double, 2> center_lo{0.2, 0.2};
  std::array<double, 2> center_hi{0.8, 0.8};
  double intensity = 0.5;
  // Lesion-only fields.
  std::string parent;
  std::uint32_t blob_min = 1;
  std::uint32_t blob_max = 1;
  double occurrence = 1.0;
};

// Affine intensity transform plus optional noise override for one site.
struct DomainShift {
  double gain = 1.0;
  double bias = 0.0;
  std::optional<double> noise_sigma;

  friend bool operator==(const DomainShift&, const DomainShift&) = default;
};

struct SceneSpec {
  GridDims dims;
  double background = 0.1;
  double noise_sigma = 0.03;
  std::vector<StructureSpec> structures;  // class id == index
  DomainShift shift;

  std::vector<std::string> class_names() const;
  ClassSet all_classes() const;
  ClassSet classes_of_kind(ClassKind kind) const;
  ClassId id_of(std::string_view name) const;  // UnknownClass
  SceneSpec with_shift(const DomainShift& s) const;
};

// The 8-class default scene on a 1x32x32 canvas: four organs, two lesions and
// two distractor structures.
SceneSpec default_scene_spec();

// Throws ValidationError describing the first problem found.
void validate(const SceneSpec& spec);

struct LabelVolume {
  ClassSet annotated;
  std::map<ClassId, Mask> masks;  // exactly one per annotated class

  LabelVolume restricted_to(const ClassSet& classes) const;
  friend bool operator==(const LabelVolume&, const LabelVolume&) = default;
};

struct Sample {
  Volume volume;
  LabelVolume labels;
  friend bool operator==(const Sample&, const Sample&) = default;
};

// PlacementFailure when a structure cannot be placed within the retry budget.
Sample generate_scene(std::uint64_t seed, const SceneSpec& spec);

struct ClientDataset {
  std::string client_id;
  std::vector<Sample> samples;
  ClassSet annotated;
  bool data_available = true;

  friend bool operator==(const ClientDataset&, const ClientDataset&) = default;
};

// Scene i is generated from derive_seed(seed, "scene", i), so growing n keeps
// the earlier samples unchanged.
ClientDataset make_client_dataset(const SceneSpec& spec, const ClassSet& class_subset, std::size_t n,
                                  std::uint64_t seed, std::string client_id = {});

struct DistillationSet {
  std::vector<Volume> volumes;
  ClassSet coverage;  // structures rendered into the scenes

  bool empty() const noexcept { return volumes.empty(); }
  friend bool operator==(const DistillationSet&, const DistillationSet&) = default;
};

// Unlabeled scenes drawn with only the included structures.
DistillationSet make_distillation_set(const SceneSpec& spec, std::size_t n, const ClassSet& include_classes,
                                      std::uint64_t seed);

// On-disk form: a directory with a JSON descriptor plus one CRC-checked
// little-endian "FSTS" file per sample.
void save_dataset(const ClientDataset& dataset, const SceneSpec& spec, const std::filesystem::path& dir);
ClientDataset load_dataset(const SceneSpec& spec, const std::filesystem::path& dir);
void save_distillation_set(const DistillationSet& set, const SceneSpec& spec, const std::filesystem::path& dir);
DistillationSet load_distillation_set(const SceneSpec& spec, const std::filesystem::path& dir);

}  // namespace fedstill::scene
